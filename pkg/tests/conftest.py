import numpy as np
import pytest

from stagetime import _backend
from stagetime.generator import sample_model
from stagetime.model import ActionVocab, EventSequence, StageRange
from stagetime.timedist import FAMILIES


def _backends():
    names = ["python"]
    try:
        _backend.get("cython")
        names.insert(0, "cython")
    except ImportError:
        pass
    return names


BACKENDS = _backends()


@pytest.fixture(params=BACKENDS)
def backend(request):
    return request.param


def make_vocab(n: int) -> ActionVocab:
    return ActionVocab.from_labels([f"a{i}" for i in range(n)])


def random_sequence(rng, vocab: ActionVocab, m: int, family: str = "exponential", complete=False):
    """Uniformly random actions (END last) and family-appropriate intervals."""
    actions = np.append(rng.integers(0, vocab.end_id, m - 1), vocab.end_id)
    if family == "geometric":
        times = rng.integers(0, 6, m).astype(float)
    else:
        times = rng.exponential(1.5, m)
    times[0] = 0.0
    times[-1] = 0.0
    return EventSequence(actions, times, complete=complete)


def random_instance(rng, *, max_m=6, max_r=3, max_k=3, n_actions=None, family=None,
                    time_weight="survival"):
    """A random (model, sequence) pair with a feasible stage window."""
    family = family or FAMILIES[rng.integers(len(FAMILIES))]
    vocab = make_vocab(n_actions or int(rng.integers(1, 4)))
    r_plus = int(rng.integers(1, max_r + 1))
    r_minus = int(rng.integers(1, r_plus + 1))
    k = int(rng.integers(1, max_k + 1))
    params = sample_model(vocab, StageRange(r_minus, r_plus), k, family, rng=rng)
    params = params.replace(time_weight=time_weight)
    complete = bool(rng.integers(2))
    m = int(rng.integers(max(2, r_plus if complete else r_minus), max_m + 1))
    seq = random_sequence(rng, vocab, m, family, complete=complete)
    return params, seq
