"""Inter-event time families: time weights, sampling and weighted MLE.

Inside the joint model the continuous families contribute their survival
value ``1 - F(tau)`` and the geometric family its pmf on ``{1, 2, ...}``.
Sampling draws from the ordinary distribution of each family.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

FAMILIES = ("geometric", "exponential", "weibull")
# "survival": continuous families weigh an interval by 1 - F(tau) (default);
# "density": by their pdf (zero intervals replaced by EPS_TAU), which makes EM an exact EM.
TIME_WEIGHTS = ("survival", "density")

EPS_P = 1e-6
EPS_TAU = 0.5
RATE_BOUNDS = (1e-6, 1e6)
SHAPE_BRACKET = (1e-2, 1e2)
SCORE_TOL = 1e-10
MAX_ITER = 200


class InvalidTimeParameters(ValueError):
    pass


class EmptyDataError(ValueError):
    pass


class DegenerateDataError(ValueError):
    """All positively weighted intervals are identical; no Weibull MLE exists.

    ``fallback`` carries the documented exponential-equivalent (shape 1) fit.
    """

    def __init__(self, msg, fallback: "TimeDist"):
        super().__init__(msg)
        self.fallback = fallback


@dataclass(frozen=True)
class TimeDist:
    family: str
    a: float
    b: float = 1.0

    @classmethod
    def geometric(cls, p: float) -> "TimeDist":
        return cls("geometric", float(p))

    @classmethod
    def exponential(cls, rate: float) -> "TimeDist":
        return cls("exponential", float(rate))

    @classmethod
    def weibull(cls, shape: float, scale: float) -> "TimeDist":
        return cls("weibull", float(shape), float(scale))

    @classmethod
    def from_array(cls, family: str, p) -> "TimeDist":
        return cls(family, float(p[0]), float(p[1]))

    def as_array(self) -> np.ndarray:
        return np.array([self.a, self.b])

    def check(self) -> "TimeDist":
        if self.family == "geometric":
            if not 0 < self.a <= 1:
                raise InvalidTimeParameters(f"geometric p must lie in (0, 1], got {self.a}")
        elif self.family == "exponential":
            if not (self.a > 0 and math.isfinite(self.a)):
                raise InvalidTimeParameters(f"exponential rate must be > 0, got {self.a}")
        elif self.family == "weibull":
            if not (self.a > 0 and self.b > 0 and math.isfinite(self.a) and math.isfinite(self.b)):
                raise InvalidTimeParameters(
                    f"weibull shape and scale must be > 0, got ({self.a}, {self.b})"
                )
        else:
            raise InvalidTimeParameters(f"unknown family {self.family!r}")
        return self

    @property
    def median(self) -> float:
        return float(quantile(self, 0.5))


def geometric_support(tau):
    """Map observed intervals onto the geometric support ``{1, 2, ...}``."""
    return np.maximum(1.0, np.round(tau))


def time_log_weight(d: TimeDist, tau, weight: str = "survival"):
    """Log time factor used by the joint model (survival for continuous families)."""
    d.check()
    tau = np.asarray(tau, dtype=np.float64)
    if np.any(tau < 0):
        raise ValueError("tau must be non-negative")
    out = log_weight_array(d.family, np.full(tau.shape, d.a), np.full(tau.shape, d.b), tau, weight)
    return float(out) if out.ndim == 0 else out


def log_weight_array(family: str, a, b, tau, weight: str = "survival") -> np.ndarray:
    """Vectorized time log-weights; ``a``, ``b`` broadcast against ``tau``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    tau = np.asarray(tau, dtype=np.float64)
    if weight not in TIME_WEIGHTS:
        raise ValueError(f"time weight must be one of {TIME_WEIGHTS}")
    if family == "geometric":
        t = geometric_support(tau)
        with np.errstate(divide="ignore", invalid="ignore"):
            tail = np.where(t > 1, (t - 1) * np.log1p(-np.minimum(a, 1.0)), 0.0)
        return np.log(a) + tail
    if weight == "density":
        tau = clamp_intervals(tau)
    if family == "exponential":
        return -a * tau + (np.log(a) if weight == "density" else 0.0)
    if family == "weibull":
        z = tau / b
        out = -np.power(z, a)
        if weight == "density":
            out = out + np.log(a / b) + (a - 1) * np.log(z)
        return out
    raise InvalidTimeParameters(f"unknown family {family!r}")


def quantile(d: TimeDist, u):
    """Inverse CDF of the family's standard distribution at ``u`` in [0, 1)."""
    u = np.asarray(u, dtype=np.float64)
    surv = -np.log1p(-u)
    if d.family == "geometric":
        if d.a >= 1.0:
            out = np.ones_like(u)
        else:
            out = np.maximum(1.0, np.ceil(surv / -math.log1p(-d.a)))
    elif d.family == "exponential":
        out = surv / d.a
    elif d.family == "weibull":
        out = d.b * np.power(surv, 1.0 / d.a)
    else:
        raise InvalidTimeParameters(f"unknown family {d.family!r}")
    return float(out) if out.ndim == 0 else out


def sample_time(d: TimeDist, rng: np.random.Generator, size=None):
    """Draw intervals by inverse-CDF sampling from one uniform per draw."""
    d.check()
    return quantile(d, rng.random(size))


def clamp_intervals(tau) -> np.ndarray:
    """Replace zero-length intervals by ``EPS_TAU`` for the continuous families.

    Same-day events (``tau = 0``) would make the exponential and Weibull
    likelihoods degenerate. On integer-day data this equals
    ``max(tau, EPS_TAU)``; genuinely positive sub-day intervals are kept.
    """
    tau = np.asarray(tau, dtype=np.float64)
    return np.where(tau > 0, tau, EPS_TAU)


def _prepare(tau, weight):
    tau = np.asarray(tau, dtype=np.float64).ravel()
    w = np.ones_like(tau) if weight is None else np.asarray(weight, dtype=np.float64).ravel()
    if tau.shape != w.shape:
        raise ValueError("tau and weight must have the same length")
    if np.any(w < 0) or np.any(tau < 0):
        raise ValueError("weights and intervals must be non-negative")
    keep = w > 0
    tau, w = tau[keep], w[keep]
    if w.sum() <= 0:
        raise EmptyDataError("total weight must be positive")
    return tau, w


def fit_geometric(tau, weight=None) -> TimeDist:
    """Weighted MLE of a geometric law on ``{1, 2, ...}``: ``sum(w) / sum(w * tau)``."""
    tau, w = _prepare(tau, weight)
    t = geometric_support(tau)
    p = w.sum() / np.dot(w, t)
    return TimeDist.geometric(min(1.0, max(EPS_P, p)))


def fit_exponential(tau, weight=None) -> TimeDist:
    tau, w = _prepare(tau, weight)
    rate = w.sum() / np.dot(w, clamp_intervals(tau))
    return TimeDist.exponential(min(RATE_BOUNDS[1], max(RATE_BOUNDS[0], rate)))


def weibull_loglik(shape: float, scale: float, tau, weight=None) -> float:
    """Weighted Weibull log-density summed over the sample (intervals clamped)."""
    t = clamp_intervals(tau)
    w = np.ones_like(t) if weight is None else np.asarray(weight, dtype=np.float64)
    z = t / scale
    logpdf = math.log(shape / scale) + (shape - 1) * np.log(z) - np.power(z, shape)
    return float(np.dot(w, logpdf))


def weibull_gradient(shape: float, scale: float, tau, weight=None) -> tuple[float, float]:
    """Analytic gradient of :func:`weibull_loglik` in ``(shape, scale)``."""
    t = clamp_intervals(tau)
    w = np.ones_like(t) if weight is None else np.asarray(weight, dtype=np.float64)
    lz = np.log(t / scale)
    zk = np.exp(shape * lz)
    W = w.sum()
    d_shape = W / shape + np.dot(w, lz) - np.dot(w, zk * lz)
    d_scale = (shape / scale) * (np.dot(w, zk) - W)
    return float(d_shape), float(d_scale)


def fit_weibull(tau, weight=None, *, initial_shape: float | None = None) -> TimeDist:
    """Weighted Weibull MLE via the one-dimensional profile equation in the shape.

    The shape solves ``sum(w t^k log t) / sum(w t^k) - 1/k - mean_w(log t) = 0``,
    which is strictly increasing in ``k``; the scale follows in closed form.
    Bisection on ``[1e-2, 1e2]`` with Newton polishing.
    """
    tau, w = _prepare(tau, weight)
    t = clamp_intervals(tau)
    W = w.sum()
    tmax = t.max()
    if t.min() == tmax:
        raise DegenerateDataError(
            "all weighted intervals are identical; the Weibull profile equation has no root",
            TimeDist.weibull(1.0, float(tmax)),
        )
    lt = np.log(t / tmax)
    mean_lt = np.dot(w, lt) / W

    def score(k):
        e = np.exp(k * lt)
        s0 = np.dot(w, e)
        s1 = np.dot(w, e * lt)
        s2 = np.dot(w, e * lt * lt)
        g = s1 / s0 - 1.0 / k - mean_lt
        dg = s2 / s0 - (s1 / s0) ** 2 + 1.0 / (k * k)
        return g, dg

    lo, hi = SHAPE_BRACKET
    g_lo, _ = score(lo)
    g_hi, _ = score(hi)
    if g_lo >= 0:
        k = lo
    elif g_hi <= 0:
        k = hi
    else:
        k = initial_shape if initial_shape is not None and lo < initial_shape < hi else 1.0
        for _ in range(MAX_ITER):
            g, dg = score(k)
            if abs(g) < SCORE_TOL:
                break
            if g < 0:
                lo = k
            else:
                hi = k
            step = k - g / dg if dg > 0 else None
            # Newton step when it stays inside the bracket, bisection otherwise
            k = step if step is not None and lo < step < hi else 0.5 * (lo + hi)
    scale = tmax * (np.dot(w, np.exp(k * lt)) / W) ** (1.0 / k)
    return TimeDist.weibull(float(k), float(scale))


def weibull_profile_score(shape: float, tau, weight=None) -> float:
    """Profile score in the shape (zero at the MLE), unclamped-weight form."""
    tau, w = _prepare(tau, weight)
    t = clamp_intervals(tau)
    lt = np.log(t / t.max())
    e = np.exp(shape * lt)
    return float(np.dot(w, e * lt) / np.dot(w, e) - 1.0 / shape - np.dot(w, lt) / w.sum())


def fit(family: str, tau, weight=None, **kw) -> TimeDist:
    """Dispatch to the family's fitter; degenerate Weibull data yields the shape-1 fallback."""
    if family == "geometric":
        return fit_geometric(tau, weight)
    if family == "exponential":
        return fit_exponential(tau, weight)
    if family == "weibull":
        try:
            return fit_weibull(tau, weight, **kw)
        except DegenerateDataError as exc:
            return exc.fallback
    raise InvalidTimeParameters(f"unknown family {family!r}")
