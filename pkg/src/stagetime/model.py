"""Parameter containers, sequences and the complete-data log-probability.

Array conventions (all 0-based internally):

* ``theta_C``  -- ``(k,)``
* ``pi_A``     -- ``(k, A)``, zero mass on END
* ``pi_S``     -- ``(A, k, r)``, point mass on the first stage
* ``theta_A``  -- ``(A, r, k, A)``, ``theta_A[a, s, c, a_next]``
* ``theta_S``  -- ``(A, r, k, r)``, ``theta_S[a_next, s_prev, c, s_next]``
* ``time_params`` -- ``(A, A, k, 2)``; column 0 holds ``p`` / ``rate`` / ``shape``,
  column 1 holds the Weibull scale (unused otherwise).

Stage sequences at the public API are 1-based, matching the usual notation
where every sequence starts in stage 1.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .timedist import FAMILIES, TIME_WEIGHTS, TimeDist, InvalidTimeParameters, time_log_weight

END_LABEL = "__END__"
SIMPLEX_TOL = 1e-9


class ModelError(ValueError):
    """Raised for structurally invalid models, sequences or stage paths."""


@dataclass(frozen=True)
class ActionVocab:
    names: tuple[str, ...]
    end_id: int

    def __post_init__(self):
        names = tuple(self.names)
        object.__setattr__(self, "names", names)
        if len(set(names)) != len(names):
            raise ModelError("action labels must be unique")
        if any(not n for n in names):
            raise ModelError("action labels must be non-empty")
        if not 0 <= self.end_id < len(names):
            raise ModelError(f"end_id {self.end_id} out of range")

    @classmethod
    def from_labels(cls, labels: Sequence[str]) -> "ActionVocab":
        """Vocabulary of ``labels`` followed by the reserved END action."""
        labels = list(labels)
        if END_LABEL in labels:
            raise ModelError(f"{END_LABEL!r} is reserved")
        return cls(tuple(labels) + (END_LABEL,), len(labels))

    @property
    def size(self) -> int:
        return len(self.names)

    def index(self, label: str) -> int:
        return self.names.index(label)


@dataclass(frozen=True)
class StageRange:
    r_minus: int
    r_plus: int

    def __post_init__(self):
        if not 1 <= self.r_minus <= self.r_plus:
            raise ModelError(
                f"stage range requires 1 <= r_minus <= r_plus, got {self.r_minus}:{self.r_plus}"
            )

    @classmethod
    def parse(cls, text: str) -> "StageRange":
        """Parse ``"MIN:MAX"`` or a single integer."""
        if ":" in text:
            lo, hi = text.split(":", 1)
            return cls(int(lo), int(hi))
        return cls(int(text), int(text))

    def window(self, complete: bool) -> tuple[int, int]:
        """Admissible 1-based final-stage window for a sequence."""
        if complete:
            return self.r_plus, self.r_plus
        return self.r_minus, self.r_plus


@dataclass(frozen=True, eq=False)
class EventSequence:
    """One record: action ids terminated by END and the matching intervals."""

    actions: np.ndarray
    times: np.ndarray
    complete: bool = False
    id: str | None = None

    def __post_init__(self):
        actions = np.asarray(self.actions, dtype=np.int64)
        times = np.asarray(self.times, dtype=np.float64)
        actions.setflags(write=False)
        times.setflags(write=False)
        object.__setattr__(self, "actions", actions)
        object.__setattr__(self, "times", times)
        if actions.ndim != 1 or times.shape != actions.shape:
            raise ModelError("actions and times must be 1-d and of equal length")
        if len(actions) < 2:
            raise ModelError("a sequence needs at least one action followed by END")
        if times[0] != 0:
            raise ModelError("first interval must be 0")
        if np.any(times < 0) or not np.all(np.isfinite(times)):
            raise ModelError("intervals must be finite and non-negative")

    def __len__(self) -> int:
        return len(self.actions)

    def check_vocab(self, vocab: ActionVocab) -> None:
        a = self.actions
        if a.min() < 0 or a.max() >= vocab.size:
            raise ModelError("action id outside vocabulary")
        end_positions = np.flatnonzero(a == vocab.end_id)
        if len(end_positions) != 1 or end_positions[0] != len(a) - 1:
            raise ModelError("END must occur exactly once, as the final action")

    def __eq__(self, other):
        if not isinstance(other, EventSequence):
            return NotImplemented
        return (
            self.id == other.id
            and self.complete == other.complete
            and np.array_equal(self.actions, other.actions)
            and np.array_equal(self.times, other.times)
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class ModelParams:
    vocab: ActionVocab
    stages: StageRange
    family: str
    theta_C: np.ndarray
    pi_A: np.ndarray
    pi_S: np.ndarray
    theta_A: np.ndarray
    theta_S: np.ndarray
    time_params: np.ndarray
    # cells whose time distribution was estimated from data (False = pooled fallback)
    time_observed: np.ndarray | None = field(default=None)
    time_weight: str = "survival"

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ModelError(f"unknown time family {self.family!r}")
        if self.time_weight not in TIME_WEIGHTS:
            raise ModelError(f"unknown time weight {self.time_weight!r}")
        A, r, k = self.vocab.size, self.stages.r_plus, len(np.asarray(self.theta_C))
        shapes = {
            "theta_C": (k,),
            "pi_A": (k, A),
            "pi_S": (A, k, r),
            "theta_A": (A, r, k, A),
            "theta_S": (A, r, k, r),
            "time_params": (A, A, k, 2),
        }
        for name, shape in shapes.items():
            arr = np.array(getattr(self, name), dtype=np.float64)
            if arr.shape != shape:
                raise ModelError(f"{name} has shape {arr.shape}, expected {shape}")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        obs = self.time_observed
        obs = np.ones((A, A, k), dtype=bool) if obs is None else np.array(obs, dtype=bool)
        if obs.shape != (A, A, k):
            raise ModelError("time_observed has the wrong shape")
        obs.setflags(write=False)
        object.__setattr__(self, "time_observed", obs)

    @property
    def n_classes(self) -> int:
        return len(self.theta_C)

    @property
    def n_stages(self) -> int:
        return self.stages.r_plus

    @property
    def n_actions(self) -> int:
        return self.vocab.size

    def time_dist(self, a: int, a_next: int, c: int) -> TimeDist:
        p = self.time_params[a, a_next, c]
        return TimeDist.from_array(self.family, p)

    def replace(self, **changes) -> "ModelParams":
        fields = {
            name: getattr(self, name)
            for name in (
                "vocab", "stages", "family", "theta_C", "pi_A", "pi_S",
                "theta_A", "theta_S", "time_params", "time_observed", "time_weight",
            )
        }
        fields.update(changes)
        return ModelParams(**fields)

    def permute_classes(self, perm: Sequence[int]) -> "ModelParams":
        """Model whose class ``j`` is this model's class ``perm[j]``."""
        perm = np.asarray(perm)
        return self.replace(
            theta_C=self.theta_C[perm],
            pi_A=self.pi_A[perm],
            pi_S=self.pi_S[:, perm],
            theta_A=self.theta_A[:, :, perm],
            theta_S=self.theta_S[:, :, perm],
            time_params=self.time_params[:, :, perm],
            time_observed=self.time_observed[:, :, perm],
        )

    # --- serialization -------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "format": "stagetime-model/1",
            "vocab": list(self.vocab.names),
            "end_id": self.vocab.end_id,
            "stages": [self.stages.r_minus, self.stages.r_plus],
            "family": self.family,
            "time_weight": self.time_weight,
            "theta_C": self.theta_C.tolist(),
            "pi_A": self.pi_A.tolist(),
            "pi_S": self.pi_S.tolist(),
            "theta_A": self.theta_A.tolist(),
            "theta_S": self.theta_S.tolist(),
            "time_params": self.time_params.tolist(),
            "time_observed": self.time_observed.astype(int).tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelParams":
        vocab = ActionVocab(tuple(d["vocab"]), int(d["end_id"]))
        return cls(
            vocab=vocab,
            stages=StageRange(*d["stages"]),
            family=d["family"],
            theta_C=d["theta_C"],
            pi_A=d["pi_A"],
            pi_S=d["pi_S"],
            theta_A=d["theta_A"],
            theta_S=d["theta_S"],
            time_params=d["time_params"],
            time_observed=d.get("time_observed"),
            time_weight=d.get("time_weight", "survival"),
        )

    def to_json(self) -> str:
        return dumps_json(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "ModelParams":
        return cls.from_dict(json.loads(text))

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "ModelParams":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def format_real(x: float) -> str:
    """Render a real with 17 significant digits (exact binary round-trip)."""
    return format(float(x), ".17g")


def dumps_json(obj, indent: int = 0) -> str:
    """``json.dumps`` with reals rendered by :func:`format_real`.

    Nested numeric lists are kept on one line so tensors stay compact.
    """
    pad = " " * indent
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [
            f'{pad}  {json.dumps(str(key))}: {dumps_json(value, indent + 2)}'
            for key, value in obj.items()
        ]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ",".join(dumps_json(v, indent) for v in obj) + "]"
    if isinstance(obj, bool) or obj is None or isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        if not np.isfinite(obj):
            raise ValueError("non-finite real cannot be serialized")
        return format_real(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


# --- validation ----------------------------------------------------------

def validate_model(params: ModelParams) -> list[str]:
    """List every violated invariant; an empty list means the model is well-formed."""
    report: list[str] = []
    A, r, k = params.n_actions, params.n_stages, params.n_classes
    end = params.vocab.end_id

    def check_simplex(name, vec, where=""):
        if np.any(vec < 0):
            report.append(f"negative mass in {name}{where}")
        total = float(vec.sum())
        if abs(total - 1.0) > SIMPLEX_TOL:
            report.append(f"{name}{where} not normalized (sum={total:.12g})")

    check_simplex("theta_C", params.theta_C)
    for c in range(k):
        check_simplex("pi_A", params.pi_A[c], f" at class {c}")
        if params.pi_A[c, end] > 0:
            report.append(f"pi_A puts mass on END at class {c}")
        for a in range(A):
            pis = params.pi_S[a, c]
            check_simplex("pi_S", pis, f" at ({a},{c})")
            if np.any(pis[1:] != 0):
                report.append(f"pi_S not a point mass on stage 1 at ({a},{c})")
    for a in range(A):
        if a == end:
            continue
        for s in range(r):
            for c in range(k):
                check_simplex("theta_A", params.theta_A[a, s, c], f" at ({a},{s + 1},{c})")
    for a in range(A):
        for s in range(r):
            for c in range(k):
                row = params.theta_S[a, s, c]
                check_simplex("theta_S", row, f" at ({a},{s + 1},{c})")
                allowed = np.zeros(r, dtype=bool)
                allowed[s] = True
                if s + 1 < r:
                    allowed[s + 1] = True
                if np.any(row[~allowed] != 0):
                    report.append(f"stage-skip mass at ({a},{s + 1},{c})")
    for a in range(A):
        if a == end:
            continue
        for b in range(A):
            if b == end:
                continue
            for c in range(k):
                try:
                    params.time_dist(a, b, c).check()
                except InvalidTimeParameters as exc:
                    report.append(f"invalid time parameters at ({a},{b},{c}): {exc}")
    return report


# --- complete-data log-probability --------------------------------------

def _log(x: float) -> float:
    return float(np.log(x)) if x > 0 else -np.inf


def check_stage_path(stages: Sequence[int], m: int, r_plus: int) -> np.ndarray:
    s = np.asarray(stages, dtype=np.int64)
    if s.shape != (m,):
        raise ModelError(f"stage path length {len(s)} does not match sequence length {m}")
    if s[0] != 1:
        raise ModelError("stage path must start at stage 1")
    steps = np.diff(s)
    if np.any((steps != 0) & (steps != 1)):
        raise ModelError("stage path must be non-decreasing with unit steps")
    if s[-1] > r_plus:
        raise ModelError("stage path exceeds r_plus")
    return s


def transition_time_log_weight(params: ModelParams, a_prev: int, a: int, c: int, tau: float) -> float:
    """Log time factor of one transition; transitions into END carry weight 1."""
    if a == params.vocab.end_id:
        return 0.0
    return time_log_weight(params.time_dist(a_prev, a, c), tau, params.time_weight)


def log_joint(
    params: ModelParams, seq: EventSequence, stages: Sequence[int], c: int, use_time: bool = True
) -> float:
    """Log-probability of the fully observed configuration ``(a, tau, s, c)``.

    ``stages`` is 1-based. The first interval contributes no factor; with
    ``use_time=False`` no interval does.
    """
    seq.check_vocab(params.vocab)
    m = len(seq)
    s = check_stage_path(stages, m, params.n_stages) - 1
    a = seq.actions
    total = _log(params.theta_C[c]) + _log(params.pi_A[c, a[0]]) + _log(params.pi_S[a[0], c, s[0]])
    for i in range(1, m):
        total += _log(params.theta_A[a[i - 1], s[i - 1], c, a[i]])
        total += _log(params.theta_S[a[i], s[i - 1], c, s[i]])
        if use_time:
            total += transition_time_log_weight(params, a[i - 1], a[i], c, seq.times[i])
    return float(total)
