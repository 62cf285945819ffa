"""Next-interval prediction, MAE evaluation, classification and representative sequences."""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .inference import ZeroLikelihoodError, class_log_likelihoods, posteriors, prefix_class_posteriors
from .model import EventSequence, ModelParams, format_real
from .timedist import TimeDist, fit as fit_time, quantile

log = logging.getLogger(__name__)

MODES = ("mixture", "argmax", "empirical_parametric", "nonparametric_median")
MODE_ALIASES = {"empirical": "empirical_parametric", "median": "nonparametric_median"}
TOP_PAIRS = 15
TIE_RTOL = 1e-12


class EmptyClassError(ValueError):
    pass


@dataclass(frozen=True)
class PredictionMode:
    tag: str = "mixture"
    n_samples: int = 501

    def __post_init__(self):
        tag = MODE_ALIASES.get(self.tag, self.tag)
        object.__setattr__(self, "tag", tag)
        if tag not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.n_samples < 3 or self.n_samples % 2 == 0:
            raise ValueError("n_samples must be odd and >= 3")


def _as_mode(mode) -> PredictionMode:
    return mode if isinstance(mode, PredictionMode) else PredictionMode(mode)


def sample_median(dists: Sequence[TimeDist], q, rng, n_samples: int, argmax: bool) -> float:
    """Median of ``n_samples`` draws from the ``q``-mixture of ``dists`` (or its top class).

    Both modes consume the same uniforms, so a degenerate mixture reproduces
    the argmax draws exactly.
    """
    v = rng.random(n_samples)
    u = rng.random(n_samples)
    q = np.asarray(q, dtype=np.float64)
    if argmax or len(dists) == 1:
        draws = quantile(dists[int(np.argmax(q))], v)
    else:
        cdf = np.cumsum(q)
        cls = np.minimum(np.searchsorted(cdf, u * cdf[-1], side="right"), len(q) - 1)
        draws = np.empty(n_samples)
        for c in np.unique(cls):
            sel = cls == c
            draws[sel] = quantile(dists[c], v[sel])
    return float(np.median(draws))


def _model_prediction(params, q, a, a_next, mode, rng, counter=None):
    k = params.n_classes
    if counter is not None and not params.time_observed[a, a_next].all():
        counter["fallback"] += 1
    dists = [params.time_dist(a, a_next, c) for c in range(k)]
    return sample_median(dists, q, rng, mode.n_samples, argmax=mode.tag == "argmax")


def predict_next_time(params: ModelParams, prefix_actions, prefix_times, mode="mixture", rng=None) -> float:
    """Median-of-samples prediction of the interval before ``prefix_actions[-1]``.

    ``prefix_actions`` holds ``a_1..a_{t+1}`` (the next action is observed) and
    ``prefix_times`` holds ``tau_1..tau_t``; the class distribution is the
    posterior given the first ``t`` events.
    """
    mode = _as_mode(mode)
    if mode.tag not in ("mixture", "argmax"):
        raise ValueError("predict_next_time needs a model mode; use EmpiricalTimeModel/MedianTimeModel")
    rng = rng if rng is not None else np.random.default_rng(0)
    actions = np.asarray(prefix_actions, dtype=np.int64)
    times = np.asarray(prefix_times, dtype=np.float64)
    t = len(times)
    if t < 1 or len(actions) != t + 1:
        raise ValueError("need t >= 1 intervals and t + 1 actions")
    q = prefix_class_posteriors(params, actions[:t], times)[t - 1]
    if not np.all(np.isfinite(q)):
        raise ZeroLikelihoodError("prefix has zero likelihood under every class")
    a, a_next = int(actions[t - 1]), int(actions[t])
    if not params.time_observed[a, a_next].all():
        log.warning("time law for (%d, %d) was never fit; using the pooled fit", a, a_next)
    return _model_prediction(params, q, a, a_next, mode, rng)


def _transitions(seq: EventSequence, end_id: int):
    """``(prev, next, tau)`` of the timed transitions of ``seq`` (END excluded)."""
    a = seq.actions
    idx = np.arange(1, len(a))
    idx = idx[a[idx] != end_id]
    return a[idx - 1], a[idx], seq.times[idx], idx


class EmpiricalTimeModel:
    """One time law per action pair fit on training data, ignoring classes and stages."""

    def __init__(self, family: str, end_id: int):
        self.family = family
        self.end_id = end_id
        self.dists: dict[tuple[int, int], TimeDist] = {}
        self.pooled: TimeDist | None = None

    @classmethod
    def fit(cls, train: Sequence[EventSequence], family: str, end_id: int) -> "EmpiricalTimeModel":
        self = cls(family, end_id)
        prev, nxt, tau = _pool(train, end_id)
        self.pooled = fit_time(family, tau)
        for key in sorted(set(zip(prev.tolist(), nxt.tolist()))):
            sel = (prev == key[0]) & (nxt == key[1])
            self.dists[key] = fit_time(family, tau[sel])
        return self

    def predict(self, a, a_next, rng, n_samples, counter=None) -> float:
        d = self.dists.get((int(a), int(a_next)))
        if d is None:
            if counter is not None:
                counter["fallback"] += 1
            d = self.pooled
        return sample_median([d], [1.0], rng, n_samples, argmax=True)


class MedianTimeModel:
    """Training median of the intervals of each action pair."""

    def __init__(self, end_id: int):
        self.end_id = end_id
        self.medians: dict[tuple[int, int], float] = {}
        self.pooled = 0.0

    @classmethod
    def fit(cls, train: Sequence[EventSequence], end_id: int) -> "MedianTimeModel":
        self = cls(end_id)
        prev, nxt, tau = _pool(train, end_id)
        self.pooled = float(np.median(tau)) if len(tau) else 0.0
        for key in sorted(set(zip(prev.tolist(), nxt.tolist()))):
            sel = (prev == key[0]) & (nxt == key[1])
            self.medians[key] = float(np.median(tau[sel]))
        return self

    def predict(self, a, a_next, rng=None, n_samples=None, counter=None) -> float:
        key = (int(a), int(a_next))
        if key not in self.medians:
            if counter is not None:
                counter["fallback"] += 1
            return self.pooled
        return self.medians[key]


def _pool(train, end_id):
    parts = [_transitions(s, end_id)[:3] for s in train]
    if not parts:
        return np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0)
    return tuple(np.concatenate(x) for x in zip(*parts))


@dataclass
class MaeReport:
    overall: float
    mae: np.ndarray      # (A, A) mean absolute error per pair, NaN where unseen
    counts: np.ndarray   # (A, A) number of predicted transitions
    n_fallbacks: int = 0
    labels: tuple = field(default=())

    def top_pairs(self, n: int = TOP_PAIRS):
        """The ``n`` most frequent pairs as ``(a, a_next, count, mae)``, ties by index."""
        flat = np.argsort(-self.counts.ravel(), kind="stable")
        A = self.counts.shape[1]
        out = []
        for idx in flat[:n]:
            a, b = divmod(int(idx), A)
            if self.counts[a, b] == 0:
                break
            out.append((a, b, int(self.counts[a, b]), float(self.mae[a, b])))
        return out

    def to_csv(self, top: int | None = None) -> str:
        """Overall row followed by per-pair rows (all pairs, or the ``top`` most frequent)."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["from", "to", "count", "mae"])
        w.writerow(["*", "*", int(self.counts.sum()), format_real(self.overall)])
        name = (lambda i: self.labels[i]) if self.labels else str
        for a, b, n, err in self.top_pairs(top if top is not None else self.counts.size):
            w.writerow([name(a), name(b), n, format_real(err)])
        return buf.getvalue()


def evaluate_mae(
    params: ModelParams | None,
    testset: Sequence[EventSequence],
    mode="mixture",
    *,
    train: Sequence[EventSequence] | None = None,
    family: str | None = None,
    n_samples: int | None = None,
    seed: int = 0,
    start_t: int = 1,
    n_actions: int | None = None,
    end_id: int | None = None,
) -> MaeReport:
    """Mean absolute error of next-interval predictions over every timed transition.

    For each test sequence the intervals ``tau_{t+1}`` with ``t >= start_t``
    are predicted (transitions into END carry no observed interval and are
    skipped). ``empirical_parametric`` and ``nonparametric_median`` fit their
    baselines on ``train``.
    """
    if not testset:
        raise ValueError("empty test set")
    mode = _as_mode(mode) if n_samples is None else PredictionMode(
        _as_mode(mode).tag, n_samples)
    if params is not None:
        n_actions, end_id = params.n_actions, params.vocab.end_id
    if n_actions is None or end_id is None:
        raise ValueError("n_actions and end_id are required without a model")
    rng = np.random.default_rng(seed)
    baseline = None
    if mode.tag == "empirical_parametric":
        if train is None:
            raise ValueError("empirical_parametric needs the training set")
        baseline = EmpiricalTimeModel.fit(train, family or (params.family if params else "exponential"), end_id)
    elif mode.tag == "nonparametric_median":
        if train is None:
            raise ValueError("nonparametric_median needs the training set")
        baseline = MedianTimeModel.fit(train, end_id)
    elif params is None:
        raise ValueError(f"mode {mode.tag} needs a model")

    err_sum = np.zeros((n_actions, n_actions))
    counts = np.zeros((n_actions, n_actions), dtype=np.int64)
    counter = {"fallback": 0}
    for seq in testset:
        prev, nxt, tau, idx = _transitions(seq, end_id)
        keep = idx >= start_t
        prev, nxt, tau, idx = prev[keep], nxt[keep], tau[keep], idx[keep]
        if len(idx) == 0:
            continue
        if baseline is None:
            q_all = prefix_class_posteriors(params, seq.actions[:-1], seq.times[:-1])
        for a, b, t, i in zip(prev, nxt, tau, idx):
            if baseline is not None:
                pred = baseline.predict(a, b, rng, mode.n_samples, counter)
            else:
                q = q_all[i - 1]
                if not np.all(np.isfinite(q)):
                    raise ZeroLikelihoodError(f"prefix of sequence {seq.id} has zero likelihood")
                pred = _model_prediction(params, q, a, b, mode, rng, counter)
            err_sum[a, b] += abs(t - pred)
            counts[a, b] += 1
    if counter["fallback"]:
        log.warning("%d predictions used a pooled fallback time law", counter["fallback"])
    with np.errstate(invalid="ignore", divide="ignore"):
        mae = err_sum / counts
    total = counts.sum()
    overall = float(err_sum.sum() / total) if total else float("nan")
    labels = tuple(params.vocab.names) if params is not None else ()
    return MaeReport(overall, mae, counts, counter["fallback"], labels)


# --- classification -----------------------------------------------------

def classify(params: ModelParams, seq: EventSequence) -> int:
    """Most probable class; ties go to the lowest class index."""
    return int(np.argmax(posteriors(params, seq).class_post))


def classify_dataset(params: ModelParams, data: Sequence[EventSequence]):
    """``(labels, class_posteriors)`` for every sequence."""
    post = np.array([posteriors(params, s).class_post for s in data]).reshape(len(data), -1)
    return np.argmax(post, axis=1), post


def representative(params: ModelParams, dataset: Sequence[EventSequence], c: int) -> EventSequence:
    """Sequence of class ``c`` maximizing ``log p(a, tau | c) / len(a)``.

    Scores within a relative ``TIE_RTOL`` of each other are ties, and ties keep
    dataset order.
    """
    return dataset[representative_index(params, dataset, c)[0]]


def representative_index(params: ModelParams, dataset: Sequence[EventSequence], c: int):
    """``(index, normalized_score)`` of the class-``c`` representative."""
    if not dataset:
        raise EmptyClassError("empty dataset")
    best, best_score = None, -np.inf
    for n, seq in enumerate(dataset):
        if classify(params, seq) != c:
            continue
        score = class_log_likelihoods(params, seq)[c] / len(seq)
        # scores equal up to rounding count as ties, which keep the earlier sequence
        if best is None or score > best_score + TIE_RTOL * abs(best_score):
            best, best_score = n, score
    if best is None:
        raise EmptyClassError(f"no sequence is classified into class {c}")
    return best, float(best_score)
