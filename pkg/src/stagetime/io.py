"""JSON Lines datasets and CSV output.

Each line of a dataset file is one JSON object::

    {"id": "p1", "actions": ["SURG", "RTER"], "times": [0, 12], "complete": false}

Records never contain the reserved END label; ingest appends ``(__END__, 0)``.
Synthetic files may also carry ``class_hint`` (an integer) and ``stage_truth``
(1-based stages of every event, the appended END included).
"""
from __future__ import annotations

import csv
import io as _stdio
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .model import END_LABEL, ActionVocab, EventSequence, ModelError, format_real


class DataError(ValueError):
    """Malformed or inconsistent input data."""


@dataclass
class Dataset:
    vocab: ActionVocab
    sequences: list[EventSequence]
    class_hint: list[int | None]
    stage_truth: list[np.ndarray | None]

    def __len__(self) -> int:
        return len(self.sequences)

    @property
    def labels(self) -> np.ndarray | None:
        """Class hints as an array, or ``None`` unless every record has one."""
        if any(c is None for c in self.class_hint):
            return None
        return np.asarray(self.class_hint, dtype=np.int64)

    def subset(self, idx: Iterable[int]) -> "Dataset":
        idx = list(idx)
        return Dataset(
            self.vocab,
            [self.sequences[i] for i in idx],
            [self.class_hint[i] for i in idx],
            [self.stage_truth[i] for i in idx],
        )


def _record(obj, lineno: int):
    if not isinstance(obj, dict):
        raise DataError(f"line {lineno}: expected a JSON object")
    try:
        actions = obj["actions"]
        times = obj["times"]
    except KeyError as exc:
        raise DataError(f"line {lineno}: missing field {exc.args[0]!r}") from None
    if not isinstance(actions, list) or not all(isinstance(a, str) for a in actions):
        raise DataError(f"line {lineno}: actions must be a list of strings")
    if not isinstance(times, list) or not all(
        isinstance(t, (int, float)) and not isinstance(t, bool) for t in times
    ):
        raise DataError(f"line {lineno}: times must be a list of numbers")
    if len(actions) != len(times):
        raise DataError(f"line {lineno}: {len(actions)} actions but {len(times)} times")
    if not actions:
        raise DataError(f"line {lineno}: a record needs at least one action")
    if END_LABEL in actions:
        raise DataError(f"line {lineno}: {END_LABEL!r} is reserved and appended on ingest")
    if any(t < 0 for t in times):
        raise DataError(f"line {lineno}: negative time interval")
    if times[0] != 0:
        raise DataError(f"line {lineno}: first interval must be 0")
    complete = obj.get("complete", False)
    if not isinstance(complete, bool):
        raise DataError(f"line {lineno}: complete must be a boolean")
    return actions, times, complete


def parse_lines(lines: Iterable[str], vocab: ActionVocab | None = None, extend_vocab: bool = False) -> Dataset:
    """Parse JSON Lines text. See :func:`parse_dataset`."""
    raw = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"line {lineno}: invalid JSON ({exc.msg})") from None
        raw.append((lineno, obj, *_record(obj, lineno)))
    if not raw:
        raise DataError("empty dataset")

    if vocab is None or extend_vocab:
        labels = list(vocab.names[: vocab.end_id]) if vocab is not None else []
        seen = set(labels)
        for _, _, actions, _, _ in raw:
            for a in actions:
                if a not in seen:
                    seen.add(a)
                    labels.append(a)
        vocab = ActionVocab.from_labels(labels)
    ids = {name: i for i, name in enumerate(vocab.names)}

    seqs, hints, truth = [], [], []
    for n, (lineno, obj, actions, times, complete) in enumerate(raw):
        unknown = [a for a in actions if a not in ids]
        if unknown:
            raise DataError(f"line {lineno}: unknown action label {unknown[0]!r}")
        a = np.array([ids[x] for x in actions] + [vocab.end_id], dtype=np.int64)
        t = np.array(list(times) + [0.0], dtype=np.float64)
        try:
            seqs.append(EventSequence(a, t, complete=complete, id=str(obj.get("id", n))))
        except ModelError as exc:
            raise DataError(f"line {lineno}: {exc}") from None
        hint = obj.get("class_hint")
        if hint is not None and (not isinstance(hint, int) or isinstance(hint, bool) or hint < 0):
            raise DataError(f"line {lineno}: class_hint must be a non-negative integer")
        hints.append(hint)
        st = obj.get("stage_truth")
        if st is not None:
            st = np.asarray(st, dtype=np.int64)
            if st.shape != a.shape:
                raise DataError(f"line {lineno}: stage_truth must cover every event including END")
        truth.append(st)
    return Dataset(vocab, seqs, hints, truth)


def parse_dataset(path, vocab: ActionVocab | None = None, extend_vocab: bool = False) -> Dataset:
    """Read a JSON Lines dataset.

    Labels map to ids by first occurrence and the reserved END action comes
    last. With ``vocab`` given, unknown labels are rejected unless
    ``extend_vocab`` is set, in which case they are appended before END.

    Raises
    ------
    DataError
        On malformed lines (with the line number), negative or non-zero first
        intervals, mismatched lengths and empty files.
    """
    with open(path, encoding="utf-8") as fh:
        return parse_lines(fh, vocab, extend_vocab)


def _num(x: float):
    x = float(x)
    return int(x) if x.is_integer() and abs(x) < 2**53 else x


def record_dict(vocab: ActionVocab, seq: EventSequence, class_hint=None, stage_truth=None) -> dict:
    body = seq.actions[:-1] if seq.actions[-1] == vocab.end_id else seq.actions
    rec = {
        "id": seq.id,
        "actions": [vocab.names[i] for i in body],
        "times": [_num(t) for t in seq.times[: len(body)]],
        "complete": bool(seq.complete),
    }
    if class_hint is not None:
        rec["class_hint"] = int(class_hint)
    if stage_truth is not None:
        rec["stage_truth"] = [int(s) for s in stage_truth]
    return rec


def dump_lines(vocab: ActionVocab, seqs: Sequence[EventSequence], classes=None, stages=None) -> str:
    out = []
    for n, seq in enumerate(seqs):
        rec = record_dict(
            vocab, seq,
            None if classes is None else classes[n],
            None if stages is None else stages[n],
        )
        out.append(json.dumps(rec, separators=(",", ":")))
    return "\n".join(out) + "\n"


def write_dataset(path, vocab: ActionVocab, seqs: Sequence[EventSequence], classes=None, stages=None) -> None:
    """Write ``seqs`` as JSON Lines (the trailing END is dropped, as on ingest)."""
    Path(path).write_text(dump_lines(vocab, seqs, classes, stages), encoding="utf-8")


def _cell(x):
    if isinstance(x, (float, np.floating)):
        return format_real(float(x))
    if isinstance(x, np.integer):
        return int(x)
    return x


def csv_text(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    """CSV with a header row; reals rendered with 17 significant digits."""
    buf = _stdio.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_cell(x) for x in row])
    return buf.getvalue()


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    Path(path).write_text(csv_text(header, rows), encoding="utf-8")
