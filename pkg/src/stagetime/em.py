"""Expectation-maximization for the latent class / monotone stage model."""
from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import _backend
from .inference import LogParams, Packed, pack, packed_time_log_weights
from .model import ActionVocab, EventSequence, ModelParams, StageRange, format_real
from .timedist import (
    FAMILIES,
    TIME_WEIGHTS,
    DegenerateDataError,
    fit as fit_time,
    fit_weibull,
    log_weight_array,
)

log = logging.getLogger(__name__)

INIT_MODES = ("uniform_eps", "provided_labels", "frequency_seeded")


class InitializationError(ValueError):
    pass


@dataclass
class FitConfig:
    n_classes: int = 1
    stages: StageRange = field(default_factory=lambda: StageRange(1, 1))
    family: str = "exponential"
    max_iters: int = 200
    loglik_rel_tol: float = 1e-6
    min_iters: int = 5
    seed: int = 0
    init_mode: str = "uniform_eps"
    epsilon: float = 0.1
    alpha0: float = 1e-3
    time_in_em: bool = True
    time_weight: str = "survival"

    def __post_init__(self):
        if self.n_classes < 1:
            raise ValueError("n_classes must be >= 1")
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        if self.time_weight not in TIME_WEIGHTS:
            raise ValueError(f"time_weight must be one of {TIME_WEIGHTS}")
        if self.init_mode not in INIT_MODES:
            raise ValueError(f"init_mode must be one of {INIT_MODES}")
        if not 0 <= self.epsilon < 1:
            raise ValueError("epsilon must lie in [0, 1)")
        if self.loglik_rel_tol <= 0 or self.alpha0 < 0:
            raise ValueError("tolerances must be positive and alpha0 non-negative")
        if self.max_iters < 1 or self.min_iters < 0:
            raise ValueError("iteration limits must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stages"] = f"{self.stages.r_minus}:{self.stages.r_plus}"
        return d


@dataclass
class SufficientStats:
    """Posterior-weighted counts accumulated over a dataset.

    ``NA[a, s, c, a']`` -- expected transitions from (action a, stage s) to a' in class c.
    ``MS[a', s, c, j]`` -- expected stage moves out of s on entering a' (j=0 stay, j=1 advance).
    ``I[c, a]`` / ``R[c]`` -- initial-action and class responsibilities.
    Time samples are the dataset intervals weighted by ``class_post`` of their sequence.
    """

    NA: np.ndarray
    MS: np.ndarray
    I: np.ndarray
    R: np.ndarray
    class_post: np.ndarray
    loglik: np.ndarray
    ok: np.ndarray
    packed: Packed
    previous: ModelParams

    @property
    def n_skipped(self) -> int:
        return int(len(self.ok) - self.ok.sum())

    def time_cells(self):
        """``(prev_action, action, tau, seq_index)`` of every timed transition."""
        p = self.packed
        pos = np.flatnonzero(p.timed)
        return p.prev_actions[pos], p.actions[pos], p.times[pos], p.seq_index[pos]

    def time_samples(self, a: int, a_next: int, c: int):
        prev, act, tau, seq = self.time_cells()
        sel = (prev == a) & (act == a_next)
        return tau[sel], self.class_post[seq[sel], c]

    def __add__(self, other: "SufficientStats") -> "SufficientStats":
        packed = _concat_packed(self.packed, other.packed)
        return SufficientStats(
            self.NA + other.NA, self.MS + other.MS, self.I + other.I, self.R + other.R,
            np.vstack([self.class_post, other.class_post]),
            np.concatenate([self.loglik, other.loglik]),
            np.concatenate([self.ok, other.ok]),
            packed, self.previous,
        )


def _concat_packed(a: Packed, b: Packed) -> Packed:
    return Packed(
        np.concatenate([a.actions, b.actions]),
        np.concatenate([a.times, b.times]),
        np.concatenate([a.offsets, b.offsets[1:] + a.offsets[-1]]),
        np.concatenate([a.lo, b.lo]),
        np.concatenate([a.hi, b.hi]),
        a.end_id,
    )


@dataclass
class FitTrace:
    total_loglik: list = field(default_factory=list)
    mean_loglik: list = field(default_factory=list)
    objective: list = field(default_factory=list)
    max_param_delta: list = field(default_factory=list)
    seconds: list = field(default_factory=list)
    skipped: list = field(default_factory=list)
    converged: bool = False

    @property
    def n_iters(self) -> int:
        return len(self.total_loglik)

    def to_csv(self, timing: bool = False) -> str:
        """CSV rendering; wall time only with ``timing=True`` so reruns stay byte-identical."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        header = ["iteration", "total_loglik", "mean_loglik", "max_param_delta"]
        if timing:
            header.append("seconds")
        header += ["objective", "skipped"]
        w.writerow(header)
        for i in range(self.n_iters):
            row = [i, format_real(self.total_loglik[i]), format_real(self.mean_loglik[i]),
                   format_real(self.max_param_delta[i])]
            if timing:
                row.append(format_real(self.seconds[i]))
            row += [format_real(self.objective[i]), self.skipped[i]]
            w.writerow(row)
        return buf.getvalue()


# --- initialization -------------------------------------------------------

def equal_block_stages(m: int, r_plus: int) -> np.ndarray:
    """0-based hard stages splitting positions into ``min(r_plus, m)`` equal blocks."""
    r = min(r_plus, m)
    return (np.arange(m) * r) // m


def epsilon_responsibilities(labels, k: int, epsilon: float) -> np.ndarray:
    """Uniform class distribution shrunk by ``1 - epsilon`` with ``epsilon`` moved to the
    hinted class, so k = 2 and epsilon = 0.1 give (0.55, 0.45)."""
    labels = np.asarray(labels, dtype=np.int64)
    resp = np.full((len(labels), k), (1.0 - epsilon) / k)
    resp[np.arange(len(labels)), labels] += epsilon
    return resp


def frequency_seeded_labels(data: Sequence[EventSequence], k: int, n_actions: int, rng,
                            max_points: int = 4000, n_rounds: int = 20) -> np.ndarray:
    """Cluster sequences by cosine distance of their action-frequency vectors.

    Farthest-point medoid seeding followed by alternating assignment / medoid
    update. Deterministic given ``rng``.
    """
    X = np.zeros((len(data), n_actions))
    for n, seq in enumerate(data):
        np.add.at(X[n], seq.actions, 1.0)
    X /= np.linalg.norm(X, axis=1, keepdims=True)
    N = len(data)
    if k == 1:
        return np.zeros(N, dtype=np.int64)
    idx = np.arange(N) if N <= max_points else np.sort(rng.choice(N, max_points, replace=False))
    Y = X[idx]
    D = np.clip(1.0 - Y @ Y.T, 0.0, None)
    medoids = [int(np.argmin(D.sum(axis=1)))]
    while len(medoids) < min(k, len(idx)):
        medoids.append(int(np.argmax(D[:, medoids].min(axis=1))))
    for _ in range(n_rounds):
        assign = np.argmin(D[:, medoids], axis=1)
        updated = []
        for j, med in enumerate(medoids):
            members = np.flatnonzero(assign == j)
            if len(members) == 0:
                updated.append(med)
                continue
            within = D[np.ix_(members, members)].sum(axis=1)
            updated.append(int(members[np.argmin(within)]))
        if updated == medoids:
            break
        medoids = updated
    centers = Y[medoids]
    return np.argmin(1.0 - X @ centers.T, axis=1).astype(np.int64)


def initialize(
    data: Sequence[EventSequence],
    cfg: FitConfig,
    vocab: ActionVocab,
    labels=None,
) -> ModelParams:
    """Initial model from hard equal-block stages and class responsibilities.

    Time parameters are fit per action pair on intervals pooled over classes
    and shared by every class; pairs never observed get the family-level fit.
    """
    if not data:
        raise InitializationError("cannot initialize from an empty dataset")
    k, r, A = cfg.n_classes, cfg.stages.r_plus, vocab.size
    rng = np.random.default_rng(cfg.seed)
    resp = initial_responsibilities(data, cfg, vocab, labels, rng)

    NA = np.zeros((A, r, k, A))
    MS = np.zeros((A, r, k, 2))
    I = np.zeros((k, A))
    R = resp.sum(axis=0)
    for seq, q in zip(data, resp):
        seq.check_vocab(vocab)
        a = seq.actions
        s = equal_block_stages(len(a), r)
        I[:, a[0]] += q
        for i in range(1, len(a)):
            NA[a[i - 1], s[i - 1], :, a[i]] += q
            MS[a[i], s[i - 1], :, s[i] - s[i - 1]] += q
    prev = uniform_model(vocab, cfg.stages, k, cfg.family).replace(time_weight=cfg.time_weight)
    params = _categoricals_from_counts(NA, MS, I, R, cfg.alpha0, prev)

    packed = pack(cfg.stages, list(data), vocab)
    pos = np.flatnonzero(packed.timed)
    prev_a, act, tau = packed.prev_actions[pos], packed.actions[pos], packed.times[pos]
    time_params = np.array(prev.time_params)
    observed = np.zeros((A, A, k), dtype=bool)
    if len(tau):
        pooled = fit_time(cfg.family, tau).as_array()
        time_params[:] = pooled
        cells = prev_a * A + act
        for cell in np.unique(cells):
            sel = cells == cell
            a0, a1 = divmod(int(cell), A)
            time_params[a0, a1, :] = fit_time(cfg.family, tau[sel]).as_array()
            observed[a0, a1, :] = True
    return params.replace(time_params=time_params, time_observed=observed)


def initial_responsibilities(data, cfg: FitConfig, vocab: ActionVocab, labels, rng) -> np.ndarray:
    k, N = cfg.n_classes, len(data)
    if k == 1:
        return np.ones((N, 1))
    if labels is not None:
        labels = np.asarray(labels, dtype=np.int64)
        if labels.shape != (N,):
            raise InitializationError("one label per sequence is required")
        if labels.min() < 0 or labels.max() >= k:
            raise InitializationError(f"labels must lie in 0..{k - 1}")
    if cfg.init_mode == "provided_labels":
        if labels is None:
            raise InitializationError("init_mode provided_labels needs labels")
        return np.eye(k)[labels]
    if cfg.init_mode == "frequency_seeded":
        labels = frequency_seeded_labels(data, k, vocab.size, rng)
    elif labels is None:
        # no hints: random hinted classes so the classes are not exactly symmetric
        labels = rng.integers(0, k, size=N)
    return epsilon_responsibilities(labels, k, cfg.epsilon)


def uniform_model(vocab: ActionVocab, stages: StageRange, k: int, family: str) -> ModelParams:
    """Uniform categoricals, stay/advance 1/2 and unit time parameters."""
    A, r, end = vocab.size, stages.r_plus, vocab.end_id
    pi_A = np.zeros((k, A))
    pi_A[:, [a for a in range(A) if a != end]] = 1.0 / (A - 1)
    pi_S = np.zeros((A, k, r))
    pi_S[..., 0] = 1.0
    theta_A = np.full((A, r, k, A), 1.0 / A)
    theta_A[end] = 0.0
    theta_A[end, :, :, end] = 1.0
    theta_S = np.zeros((A, r, k, r))
    for s in range(r):
        if s + 1 < r:
            theta_S[:, s, :, s] = 0.5
            theta_S[:, s, :, s + 1] = 0.5
        else:
            theta_S[:, s, :, s] = 1.0
    time_params = np.ones((A, A, k, 2))
    if family == "geometric":
        time_params[..., 0] = 0.5
    return ModelParams(
        vocab=vocab, stages=stages, family=family, theta_C=np.full(k, 1.0 / k), pi_A=pi_A,
        pi_S=pi_S, theta_A=theta_A, theta_S=theta_S, time_params=time_params,
        time_observed=np.zeros((A, A, k), dtype=bool),
    )


# --- E and M steps ---------------------------------------------------------

def e_step(params: ModelParams, data, *, use_time: bool = True, packed: Packed | None = None,
           backend: str | None = None):
    """Accumulate posterior-weighted statistics; returns ``(stats, total_loglik)``.

    Sequences with zero likelihood under every class are skipped and counted.
    """
    packed = packed if packed is not None else pack(params, list(data))
    lp = LogParams(params)
    logw = packed_time_log_weights(params, packed, use_time)
    kern = _backend.get(backend)
    NA, MS, I, R, post, ll, ok = kern.estep_batch(
        lp.lthC, lp.lpiA, lp.lA, lp.lSstay, lp.lSadv, logw,
        packed.actions, packed.offsets, packed.lo, packed.hi,
    )
    ok = ok.astype(bool)
    stats = SufficientStats(NA, MS, I, R, post, ll, ok, packed, params)
    if stats.n_skipped:
        log.warning("skipped %d zero-likelihood sequences", stats.n_skipped)
    return stats, float(ll[ok].sum())


def _normalize_rows(counts, alpha0, previous):
    """Smoothed row normalization; rows with no mass keep ``previous``."""
    smoothed = counts + alpha0
    total = smoothed.sum(axis=-1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = smoothed / total
    return np.where(total > 0, out, previous)


def _categoricals_from_counts(NA, MS, I, R, alpha0, prev: ModelParams) -> ModelParams:
    A, r, k = prev.n_actions, prev.n_stages, prev.n_classes
    end = prev.vocab.end_id
    theta_A = _normalize_rows(NA, alpha0, prev.theta_A)
    theta_A[end] = prev.theta_A[end]

    stay_adv = np.zeros((A, r, k, 2))
    prev_sa = np.zeros((A, r, k, 2))
    idx = np.arange(r)
    prev_sa[..., 0] = prev.theta_S[:, idx, :, idx].transpose(1, 0, 2)
    prev_sa[:, :-1, :, 1] = prev.theta_S[:, idx[:-1], :, idx[:-1] + 1].transpose(1, 0, 2)
    stay_adv[:, :-1] = _normalize_rows(MS[:, :-1], alpha0, prev_sa[:, :-1])
    stay_adv[:, -1, :, 0] = 1.0
    theta_S = np.zeros((A, r, k, r))
    for s in range(r):
        theta_S[:, s, :, s] = stay_adv[:, s, :, 0]
        if s + 1 < r:
            theta_S[:, s, :, s + 1] = stay_adv[:, s, :, 1]

    # END never starts a sequence, so the smoothing mass skips it
    start_prior = np.full(A, alpha0)
    start_prior[end] = 0.0
    pi_A = _normalize_rows(I + start_prior, 0.0, prev.pi_A)
    theta_C = R / R.sum() if R.sum() > 0 else prev.theta_C
    return prev.replace(theta_C=theta_C, pi_A=pi_A, theta_A=theta_A, theta_S=theta_S)


def _fit_cell(family: str, tau, w, previous, time_weight: str) -> np.ndarray:
    """Weighted MLE of one time cell.

    Weibull cells whose positively weighted intervals are all equal have no
    MLE; the shape-1 fallback is used only when it scores at least as well
    as ``previous`` under the model's time weight, so such cells never lower
    the EM objective.
    """
    if family != "weibull":
        return fit_time(family, tau, w).as_array()
    try:
        return fit_weibull(tau, w, initial_shape=previous[0]).as_array()
    except DegenerateDataError as exc:
        candidate = exc.fallback.as_array()
    def score(p):
        return float(np.dot(w, log_weight_array(family, p[0], p[1], tau, time_weight)))
    return candidate if score(candidate) >= score(previous) else np.array(previous)


def fit_time_params(stats: SufficientStats, family: str, prev: ModelParams):
    """Weighted per-(a, a', c) time fits; cells without weight keep ``prev``."""
    A, k = prev.n_actions, prev.n_classes
    time_params = np.array(prev.time_params)
    observed = np.array(prev.time_observed)
    prev_a, act, tau, seq = stats.time_cells()
    if len(tau) == 0:
        return time_params, observed
    cells = prev_a * A + act
    order = np.argsort(cells, kind="stable")
    cells, tau, seq = cells[order], tau[order], seq[order]
    uniq, starts = np.unique(cells, return_index=True)
    bounds = np.append(starts, len(cells))
    for j, cell in enumerate(uniq):
        a0, a1 = divmod(int(cell), A)
        t = tau[bounds[j]:bounds[j + 1]]
        rows = seq[bounds[j]:bounds[j + 1]]
        for c in range(k):
            w = stats.class_post[rows, c]
            if w.sum() <= 0:
                continue
            time_params[a0, a1, c] = _fit_cell(family, t, w, time_params[a0, a1, c], prev.time_weight)
            observed[a0, a1, c] = True
    return time_params, observed


def m_step(stats: SufficientStats, cfg: FitConfig, *, fit_times: bool = True) -> ModelParams:
    """Closed-form categorical updates plus weighted time-distribution MLEs."""
    prev = stats.previous
    params = _categoricals_from_counts(stats.NA, stats.MS, stats.I, stats.R, cfg.alpha0, prev)
    if fit_times:
        time_params, observed = fit_time_params(stats, cfg.family, prev)
        params = params.replace(time_params=time_params, time_observed=observed)
    return params


def log_prior(params: ModelParams, alpha0: float) -> float:
    """``alpha0 * sum(log theta)`` over smoothed entries (the MAP penalty EM increases)."""
    if alpha0 == 0:
        return 0.0
    end = params.vocab.end_id
    mask = np.ones(params.n_actions, dtype=bool)
    mask[end] = False
    with np.errstate(divide="ignore"):
        total = np.log(params.theta_A[mask]).sum() + np.log(params.pi_A[:, mask]).sum()
        r = params.n_stages
        for s in range(r - 1):
            total += np.log(params.theta_S[:, s, :, s]).sum()
            total += np.log(params.theta_S[:, s, :, s + 1]).sum()
    return float(alpha0 * total)


def _max_delta(a: ModelParams, b: ModelParams) -> float:
    return float(max(
        np.max(np.abs(a.theta_C - b.theta_C)),
        np.max(np.abs(a.pi_A - b.pi_A)),
        np.max(np.abs(a.theta_A - b.theta_A)),
        np.max(np.abs(a.theta_S - b.theta_S)),
        np.max(np.abs(a.time_params - b.time_params)),
    ))


def fit(
    data: Sequence[EventSequence],
    cfg: FitConfig,
    vocab: ActionVocab,
    labels=None,
    *,
    init: ModelParams | None = None,
    backend: str | None = None,
) -> tuple[ModelParams, FitTrace]:
    """Run EM from :func:`initialize` (or ``init``) until the relative log-likelihood
    improvement drops below ``cfg.loglik_rel_tol`` after ``cfg.min_iters`` iterations."""
    data = list(data)
    params = init if init is not None else initialize(data, cfg, vocab, labels)
    packed = pack(params, data)
    trace = FitTrace()
    use_time = cfg.time_in_em
    prev_ll = None
    delta = float("nan")
    for it in range(cfg.max_iters):
        t0 = time.perf_counter()
        stats, ll = e_step(params, data, use_time=use_time, packed=packed, backend=backend)
        n_ok = max(int(stats.ok.sum()), 1)
        trace.total_loglik.append(ll)
        trace.mean_loglik.append(ll / n_ok)
        trace.objective.append(ll + log_prior(params, cfg.alpha0))
        trace.skipped.append(stats.n_skipped)
        trace.max_param_delta.append(delta)
        done = False
        if prev_ll is not None and it >= cfg.min_iters:
            rel = (ll - prev_ll) / max(abs(prev_ll), 1e-300)
            done = rel < cfg.loglik_rel_tol
        if done or it == cfg.max_iters - 1:
            trace.converged = done
            trace.seconds.append(time.perf_counter() - t0)
            break
        new = m_step(stats, cfg, fit_times=use_time)
        delta = _max_delta(params, new)
        params = new
        prev_ll = ll
        trace.seconds.append(time.perf_counter() - t0)
    if not use_time:
        # untimed baseline: time laws fit once from the final responsibilities
        stats, _ = e_step(params, data, use_time=False, packed=packed, backend=backend)
        time_params, observed = fit_time_params(stats, cfg.family, params)
        params = params.replace(time_params=time_params, time_observed=observed)
    return params, trace
