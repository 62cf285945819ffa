"""Random models from Dirichlet/Beta/Gamma/uniform hyper-priors and sequence sampling."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ActionVocab, EventSequence, ModelParams, StageRange
from .timedist import FAMILIES, TimeDist, sample_time

MAX_LEN = 500
MAX_ATTEMPTS = 10_000
MAX_REJECT_RATE = 0.99


class UnreachableEndError(RuntimeError):
    pass


@dataclass(frozen=True)
class ModelHyperPrior:
    alpha_C: float = 1.0
    alpha_A: float = 1.0
    alpha_S_stay: float = 0.7
    alpha_S_advance: float = 0.3
    geometric_beta: tuple[float, float] = (5.0, 2.0)
    exponential_gamma: tuple[float, float] = (2.0, 1.0)  # (shape, scale)
    weibull_shape: tuple[float, float] = (2.0, 5.0)
    weibull_scale: tuple[float, float] = (1.0, 1.5)

    def __post_init__(self):
        values = [
            self.alpha_C, self.alpha_A, self.alpha_S_stay, self.alpha_S_advance,
            *self.geometric_beta, *self.exponential_gamma,
            *self.weibull_shape, *self.weibull_scale,
        ]
        if min(values) <= 0:
            raise ValueError("hyper-parameters must be positive")


def sample_time_params(family: str, hyper: ModelHyperPrior, rng, size) -> np.ndarray:
    """Draw time parameters of shape ``size + (2,)`` from the family's hyper-law."""
    out = np.ones(tuple(size) + (2,))
    if family == "geometric":
        out[..., 0] = rng.beta(*hyper.geometric_beta, size=size)
    elif family == "exponential":
        out[..., 0] = rng.gamma(hyper.exponential_gamma[0], hyper.exponential_gamma[1], size=size)
    elif family == "weibull":
        out[..., 0] = rng.uniform(*hyper.weibull_shape, size=size)
        out[..., 1] = rng.uniform(*hyper.weibull_scale, size=size)
    else:
        raise ValueError(f"unknown family {family!r}")
    return out


def stage_rows(r: int, alpha_stay: float, alpha_adv: float, rng, size) -> np.ndarray:
    """Stage-transition rows ``size + (r, r)`` with mass only on stay/advance."""
    out = np.zeros(tuple(size) + (r, r))
    for s in range(r):
        if s + 1 < r:
            stay = rng.beta(alpha_stay, alpha_adv, size=size)
            out[..., s, s] = stay
            out[..., s, s + 1] = 1.0 - stay
        else:
            out[..., s, s] = 1.0
    return out


def sample_model(
    vocab: ActionVocab,
    stages: StageRange,
    k: int,
    family: str,
    hyper: ModelHyperPrior | None = None,
    rng: np.random.Generator | None = None,
) -> ModelParams:
    hyper = hyper or ModelHyperPrior()
    rng = rng if rng is not None else np.random.default_rng()
    if family not in FAMILIES:
        raise ValueError(f"unknown family {family!r}")
    A, r, end = vocab.size, stages.r_plus, vocab.end_id
    theta_C = rng.dirichlet(np.full(k, hyper.alpha_C))
    starts = [a for a in range(A) if a != end]
    pi_A = np.zeros((k, A))
    pi_A[:, starts] = rng.dirichlet(np.full(len(starts), hyper.alpha_A), size=k)
    pi_S = np.zeros((A, k, r))
    pi_S[..., 0] = 1.0
    theta_A = rng.dirichlet(np.full(A, hyper.alpha_A), size=(A, r, k))
    theta_A[end] = 0.0
    theta_A[end, :, :, end] = 1.0
    # (A, k, r, r) drawn row-wise then moved to (A, r, k, r)
    theta_S = stage_rows(r, hyper.alpha_S_stay, hyper.alpha_S_advance, rng, (A, k)).transpose(0, 2, 1, 3)
    time_params = sample_time_params(family, hyper, rng, (A, A, k))
    return ModelParams(
        vocab=vocab, stages=stages, family=family, theta_C=theta_C, pi_A=pi_A, pi_S=pi_S,
        theta_A=theta_A, theta_S=np.ascontiguousarray(theta_S), time_params=time_params,
    )


def _categorical(rng, p) -> int:
    # inverse CDF on one uniform; robust to rows summing to 1 - 1e-16
    cdf = np.cumsum(p)
    return int(min(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"), len(p) - 1))


def _draw_once(params: ModelParams, rng, max_len: int):
    end = params.vocab.end_id
    c = _categorical(rng, params.theta_C)
    a = [_categorical(rng, params.pi_A[c])]
    s = [0]
    tau = [0.0]
    while a[-1] != end:
        if len(a) >= max_len:
            return None
        a_prev, s_prev = a[-1], s[-1]
        a_next = _categorical(rng, params.theta_A[a_prev, s_prev, c])
        s_next = _categorical(rng, params.theta_S[a_next, s_prev, c])
        if a_next == end:
            t = 0.0  # END is a terminal marker, not an observed event
        else:
            t = float(sample_time(params.time_dist(a_prev, a_next, c), rng))
        a.append(a_next)
        s.append(s_next)
        tau.append(t)
    return a, tau, s, c


def _sample_with_count(params, rng, max_len, complete):
    lo, hi = params.stages.window(complete)
    for attempt in range(1, MAX_ATTEMPTS + 1):
        draw = _draw_once(params, rng, max_len)
        if draw is None:
            continue
        a, tau, s, c = draw
        if lo <= s[-1] + 1 <= hi:
            seq = EventSequence(np.array(a), np.array(tau), complete=complete)
            return (seq, np.array(s) + 1, c), attempt
    raise UnreachableEndError(f"no admissible sequence in {MAX_ATTEMPTS} attempts")


def sample_sequence(
    params: ModelParams,
    rng: np.random.Generator,
    max_len: int = MAX_LEN,
    complete: bool = False,
):
    """Draw ``(sequence, stages, class)``, rejecting draws that do not reach END
    within ``max_len`` or end outside the admissible stage window.

    Stages are returned 1-based.
    """
    return _sample_with_count(params, rng, max_len, complete)[0]


def sample_dataset(params: ModelParams, n: int, rng, max_len: int = MAX_LEN, complete: bool = False):
    """``n`` sequences with ids ``s0..s{n-1}`` and their latent truth.

    Raises :class:`UnreachableEndError` once more than 99% of at least 10^4
    draws have been rejected.
    """
    seqs, stages, classes = [], [], []
    attempts = 0
    for i in range(n):
        (seq, st, c), used = _sample_with_count(params, rng, max_len, complete)
        attempts += used
        if attempts >= MAX_ATTEMPTS and (i + 1) / attempts < 1 - MAX_REJECT_RATE:
            raise UnreachableEndError(
                f"rejection rate above {MAX_REJECT_RATE:.0%} over {attempts} attempts"
            )
        seqs.append(EventSequence(seq.actions, seq.times, complete=complete, id=f"s{i}"))
        stages.append(st)
        classes.append(c)
    return seqs, stages, np.array(classes, dtype=np.int64)
