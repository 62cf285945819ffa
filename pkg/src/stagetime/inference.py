"""Exact posterior inference over stages and classes for a single sequence.

The forward table ``f[c, i, s]`` holds the log of the total probability of
every stage prefix ending in stage ``s`` at position ``i`` for class ``c``;
the backward table ``g[c, i, s]`` holds the log probability of the remaining
suffix given stage ``s`` at position ``i``. Both are computed by the active
kernel backend (compiled or numpy).
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from . import _backend
from .model import EventSequence, ModelParams, log_joint
from .timedist import log_weight_array

NEG_INF = -np.inf
BRUTE_FORCE_MAX_LEN = 12
BRUTE_FORCE_MAX_STAGES = 4


class ZeroLikelihoodError(ValueError):
    """The sequence has zero probability under every class."""


class InstanceTooLargeError(ValueError):
    pass


def _log(x):
    with np.errstate(divide="ignore"):
        return np.log(x)


class LogParams:
    """Log-space views of a model in the layout the kernels expect."""

    def __init__(self, params: ModelParams):
        self.params = params
        r = params.n_stages
        idx = np.arange(r)
        self.lthC = _log(params.theta_C)
        self.lpiA = np.ascontiguousarray(_log(params.pi_A))
        self.lA = np.ascontiguousarray(_log(params.theta_A))
        S = params.theta_S
        self.lSstay = np.ascontiguousarray(_log(S[:, idx, :, idx].transpose(1, 0, 2)))
        adv = np.zeros(S.shape[:3])
        adv[:, :-1, :] = S[:, idx[:-1], :, idx[:-1] + 1].transpose(1, 0, 2)
        self.lSadv = np.ascontiguousarray(_log(adv))


@dataclass
class Packed:
    """A dataset flattened into contiguous arrays for the batched kernels."""

    actions: np.ndarray
    times: np.ndarray
    offsets: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    end_id: int

    @property
    def n_sequences(self) -> int:
        return len(self.offsets) - 1

    @cached_property
    def lengths(self) -> np.ndarray:
        return np.diff(self.offsets)

    @cached_property
    def timed(self) -> np.ndarray:
        """Positions carrying a time factor: not a sequence start, not into END."""
        mask = np.ones(len(self.actions), dtype=bool)
        mask[self.offsets[:-1]] = False
        mask &= self.actions != self.end_id
        return mask

    @cached_property
    def prev_actions(self) -> np.ndarray:
        prev = np.empty_like(self.actions)
        prev[1:] = self.actions[:-1]
        prev[self.offsets[:-1]] = -1
        return prev

    @cached_property
    def seq_index(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_sequences), self.lengths)


def pack(params_or_stages, seqs: Sequence[EventSequence], vocab=None) -> Packed:
    """Flatten ``seqs``; windows follow each sequence's completeness flag."""
    if isinstance(params_or_stages, ModelParams):
        stages, vocab = params_or_stages.stages, params_or_stages.vocab
    else:
        stages = params_or_stages
    if vocab is not None:
        for seq in seqs:
            seq.check_vocab(vocab)
    lengths = np.array([len(s) for s in seqs], dtype=np.int64)
    offsets = np.zeros(len(seqs) + 1, dtype=np.int64)
    np.cumsum(lengths, out=offsets[1:])
    actions = np.concatenate([s.actions for s in seqs]) if seqs else np.zeros(0, np.int64)
    times = np.concatenate([s.times for s in seqs]) if seqs else np.zeros(0)
    windows = np.array([stages.window(s.complete) for s in seqs], dtype=np.int64).reshape(-1, 2)
    end_id = vocab.end_id if vocab is not None else -1
    return Packed(actions, times, offsets, windows[:, 0] - 1, windows[:, 1] - 1, end_id)


def time_log_weights(params: ModelParams, actions, times, first_positions=(0,), use_time=True):
    """Per-position, per-class time log-factors, shape ``(len(actions), k)``."""
    actions = np.asarray(actions, dtype=np.int64)
    times = np.asarray(times, dtype=np.float64)
    k = params.n_classes
    out = np.zeros((len(actions), k))
    if not use_time or len(actions) == 0:
        return out
    mask = np.ones(len(actions), dtype=bool)
    mask[np.asarray(first_positions, dtype=np.int64)] = False
    mask &= actions != params.vocab.end_id
    pos = np.flatnonzero(mask)
    tp = params.time_params[actions[pos - 1], actions[pos]]  # (n, k, 2)
    with np.errstate(divide="ignore", over="ignore"):
        out[pos] = log_weight_array(
            params.family, tp[..., 0], tp[..., 1], times[pos][:, None], params.time_weight
        )
    return out


def packed_time_log_weights(params: ModelParams, packed: Packed, use_time=True):
    return time_log_weights(params, packed.actions, packed.times, packed.offsets[:-1], use_time)


@dataclass
class PosteriorTables:
    f: np.ndarray              # (k, m, r) log forward values
    g: np.ndarray              # (k, m, r) log backward values
    stage_marginal: np.ndarray  # (k, m, r)
    stage_pair: np.ndarray     # (k, m, r, 2): [stay, advance] from stage s at i-1; row 0 unused
    class_post: np.ndarray     # (k,)
    class_loglik: np.ndarray   # (k,) log p(a, tau | c)
    loglik: float


def _window(params: ModelParams, seq: EventSequence):
    lo, hi = params.stages.window(seq.complete)
    return lo - 1, hi - 1


def _fb(params, seq, lp=None, use_time=True, window=None, backend=None):
    lp = lp or LogParams(params)
    seq.check_vocab(params.vocab)
    logw = time_log_weights(params, seq.actions, seq.times, use_time=use_time)
    lo, hi = window if window is not None else _window(params, seq)
    kern = _backend.get(backend)
    f, g, logp = kern.forward_backward(lp.lpiA, lp.lA, lp.lSstay, lp.lSadv, logw, seq.actions, lo, hi)
    return lp, logw, f, g, logp


def forward(params: ModelParams, c: int, seq: EventSequence, backend=None) -> np.ndarray:
    """Log forward matrix ``(m, r)`` of class ``c``."""
    return _fb(params, seq, backend=backend)[2][c]


def backward(params: ModelParams, c: int, seq: EventSequence, backend=None) -> np.ndarray:
    """Log backward matrix ``(m, r)`` of class ``c``."""
    return _fb(params, seq, backend=backend)[3][c]


def posteriors(params: ModelParams, seq: EventSequence, *, use_time=True, backend=None) -> PosteriorTables:
    lp, logw, f, g, logp = _fb(params, seq, use_time=use_time, backend=backend)
    joint = lp.lthC + logp
    total = np.logaddexp.reduce(joint)
    if total == NEG_INF:
        raise ZeroLikelihoodError("sequence has zero likelihood under every class")
    class_post = np.exp(joint - total)
    k, m, r = f.shape
    live = np.isfinite(logp)
    # Normalize each position by its own total, which equals the class
    # log-likelihood in exact arithmetic but stays accurate when that value is
    # huge in magnitude (e.g. -1e27 from a steep Weibull survival term).
    with np.errstate(invalid="ignore", divide="ignore"):
        fg = f + g
        norm = np.logaddexp.reduce(fg, axis=2, keepdims=True)
        marg = np.where(live[:, None, None], np.exp(fg - np.where(np.isfinite(norm), norm, 0.0)), 0.0)
    pair = np.zeros((k, m, r, 2))
    a = seq.actions
    for i in range(1, m):
        base = lp.lA[a[i - 1], :, :, a[i]].T + f[:, i - 1, :] + logw[i][:, None]
        stay = base + lp.lSstay[a[i]].T + g[:, i, :]
        adv = np.full((k, r), NEG_INF)
        adv[:, :-1] = base[:, :-1] + lp.lSadv[a[i]].T[:, :-1] + g[:, i, 1:]
        z = np.logaddexp(np.logaddexp.reduce(stay, axis=1), np.logaddexp.reduce(adv, axis=1))
        z = np.where(np.isfinite(z), z, 0.0)[:, None]
        pair[:, i, :, 0] = np.exp(stay - z)
        pair[:, i, :, 1] = np.exp(adv - z)
    pair[~live] = 0.0
    return PosteriorTables(f, g, marg, pair, class_post, logp, float(total))


def sequence_log_likelihood(params: ModelParams, seq: EventSequence, **kw) -> float:
    return posteriors(params, seq, **kw).loglik


def class_log_likelihoods(params: ModelParams, seq: EventSequence, **kw) -> np.ndarray:
    """``log p(a, tau | c)`` for every class."""
    return _fb(params, seq, **kw)[4]


def prefix_class_posteriors(params: ModelParams, actions, times, backend=None) -> np.ndarray:
    """``q_t(c) = p(c | a_1..a_t, tau_1..tau_t)`` for every prefix length ``t``.

    Prefixes are not complete treatments, so every final stage is admissible
    and no END is required; the forward table alone gives all prefixes.
    Returns shape ``(len(actions), k)``; rows of impossible prefixes are NaN.
    """
    actions = np.asarray(actions, dtype=np.int64)
    times = np.asarray(times, dtype=np.float64)
    lp = LogParams(params)
    logw = time_log_weights(params, actions, times)
    kern = _backend.get(backend)
    f, _, _ = kern.forward_backward(
        lp.lpiA, lp.lA, lp.lSstay, lp.lSadv, logw, actions, 0, params.n_stages - 1
    )
    prefix = np.logaddexp.reduce(f, axis=2).T + lp.lthC  # (m, k)
    total = np.logaddexp.reduce(prefix, axis=1, keepdims=True)
    with np.errstate(invalid="ignore"):
        return np.exp(prefix - total)


# --- brute-force oracle -------------------------------------------------

def stage_paths(m: int, lo: int, hi: int):
    """Every monotone unit-step 1-based stage path of length ``m`` ending in ``[lo, hi]``."""
    for steps in itertools.product((0, 1), repeat=m - 1):
        path = np.concatenate([[1], 1 + np.cumsum(steps)]).astype(np.int64)
        if lo <= path[-1] <= hi:
            yield path


def brute_force_posteriors(params: ModelParams, seq: EventSequence, *, use_time=True) -> PosteriorTables:
    """Posteriors by explicit enumeration of every (stage path, class) pair.

    Independent of the recursions: each configuration is scored with
    :func:`~stagetime.model.log_joint`. ``f``/``g`` are filled by direct
    enumeration of prefixes and suffixes as well.
    """
    m, r, k = len(seq), params.n_stages, params.n_classes
    if m > BRUTE_FORCE_MAX_LEN or r > BRUTE_FORCE_MAX_STAGES:
        raise InstanceTooLargeError(
            f"brute force limited to m <= {BRUTE_FORCE_MAX_LEN}, r <= {BRUTE_FORCE_MAX_STAGES}"
        )
    lo, hi = params.stages.window(seq.complete)
    paths = list(stage_paths(m, lo, hi))
    if not paths:
        raise ZeroLikelihoodError("no admissible stage path")
    scores = np.array([[log_joint(params, seq, p, c, use_time) for c in range(k)] for p in paths])
    lthC = _log(params.theta_C)
    with np.errstate(invalid="ignore"):
        cond = scores - lthC  # log p(a, tau, s | c)
    class_ll = np.array([np.logaddexp.reduce(cond[:, c]) for c in range(k)])
    total = np.logaddexp.reduce(scores.ravel())
    if total == NEG_INF:
        raise ZeroLikelihoodError("sequence has zero likelihood under every class")
    with np.errstate(invalid="ignore"):
        class_post = np.exp(class_ll + lthC - total)
    class_post = np.nan_to_num(class_post)
    marg = np.zeros((k, m, r))
    pair = np.zeros((k, m, r, 2))
    for c in range(k):
        if class_ll[c] == NEG_INF:
            continue
        weights = np.exp(cond[:, c] - class_ll[c])
        for p, w in zip(paths, weights):
            marg[c, np.arange(m), p - 1] += w
            for i in range(1, m):
                pair[c, i, p[i - 1] - 1, p[i] - p[i - 1]] += w
    f, g = _brute_force_fg(params, seq, lo, hi, use_time)
    return PosteriorTables(f, g, marg, pair, class_post, class_ll, float(total))


def _brute_force_fg(params, seq, lo, hi, use_time=True):
    """Prefix/suffix sums by enumeration, for checking the recursions themselves."""
    from .model import transition_time_log_weight

    m, r, k = len(seq), params.n_stages, params.n_classes
    a = seq.actions
    f = np.full((k, m, r), NEG_INF)
    g = np.full((k, m, r), NEG_INF)

    def step(c, i, s_prev, s_next):
        with np.errstate(divide="ignore"):
            return (
                np.log(params.theta_A[a[i - 1], s_prev, c, a[i]])
                + np.log(params.theta_S[a[i], s_prev, c, s_next])
                + (transition_time_log_weight(params, a[i - 1], a[i], c, seq.times[i]) if use_time else 0.0)
            )

    for c in range(k):
        with np.errstate(divide="ignore"):
            start = np.log(params.pi_A[c, a[0]]) + np.log(params.pi_S[a[0], c, 0])
        for i in range(m):
            for path in stage_paths(i + 1, 1, r):
                s = path - 1
                val = start + sum(step(c, j, s[j - 1], s[j]) for j in range(1, i + 1))
                f[c, i, s[-1]] = np.logaddexp(f[c, i, s[-1]], val)
            for s0 in range(r):
                n = m - 1 - i
                for steps in itertools.product((0, 1), repeat=n):
                    s = np.concatenate([[s0], s0 + np.cumsum(steps)]).astype(int)
                    if s[-1] >= r or not (lo - 1 <= s[-1] <= hi - 1):
                        continue
                    val = sum(step(c, i + j, s[j - 1], s[j]) for j in range(1, n + 1))
                    g[c, i, s0] = np.logaddexp(g[c, i, s0], val)
    return f, g
