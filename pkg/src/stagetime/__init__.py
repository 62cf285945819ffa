"""Time-aware generative model of event sequences with a latent class and monotone stages."""
from ._backend import BACKEND
from .model import (
    END_LABEL,
    ActionVocab,
    EventSequence,
    ModelError,
    ModelParams,
    StageRange,
    log_joint,
    validate_model,
)
from .timedist import TimeDist
from .inference import (
    PosteriorTables,
    ZeroLikelihoodError,
    backward,
    brute_force_posteriors,
    forward,
    posteriors,
    sequence_log_likelihood,
)

__version__ = "0.1.0"
