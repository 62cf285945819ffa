"""Synthetic-recovery and prediction experiments producing plot-ready CSV tables."""
from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import em
from .applications import evaluate_mae
from .generator import ModelHyperPrior, sample_dataset, sample_model
from .inference import ZeroLikelihoodError, sequence_log_likelihood
from .io import Dataset, csv_text
from .model import ActionVocab, EventSequence, ModelParams, StageRange
from .timedist import FAMILIES

log = logging.getLogger(__name__)

N_GRID = (300, 500, 800, 1000, 1200, 1500, 2000, 3000)
SYNTHETIC_COLUMNS = ("family", "seed", "N", "fitted_train", "fitted_test", "true_train", "true_test")
TABLE_ROWS = ("empirical", "untimed_mixture", "untimed_argmax", "proposed_mixture", "proposed_argmax")
TABLE_COLUMNS = ("method",) + FAMILIES + ("median",)


@dataclass
class SyntheticConfig:
    families: tuple[str, ...] = FAMILIES
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    n_grid: tuple[int, ...] = N_GRID
    n_test: int = 4000
    n_actions: int = 10
    n_classes: int = 2
    stages: StageRange = field(default_factory=lambda: StageRange(3, 4))
    complete: bool = False
    epsilon: float = 0.1
    alpha0: float = 1e-3
    max_iters: int = 200
    loglik_rel_tol: float = 1e-6
    time_weight: str = "survival"
    n_jobs: int = 1

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stages"] = f"{self.stages.r_minus}:{self.stages.r_plus}"
        for key in ("families", "seeds", "n_grid"):
            d[key] = list(d[key])
        return d


def mean_loglik(params: ModelParams, seqs: Sequence[EventSequence]) -> float:
    """Per-sequence mean log-likelihood; zero-likelihood sequences count as ``-inf``."""
    total = 0.0
    for s in seqs:
        try:
            total += sequence_log_likelihood(params, s)
        except ZeroLikelihoodError:
            return float("-inf")
    return total / len(seqs)


def synthetic_cell(cfg: SyntheticConfig, family: str, seed: int) -> list[tuple]:
    """All rows for one (family, seed): nested training prefixes of one large draw."""
    rng = np.random.default_rng([seed, FAMILIES.index(family)])
    vocab = ActionVocab.from_labels([f"a{i}" for i in range(cfg.n_actions)])
    truth = sample_model(vocab, cfg.stages, cfg.n_classes, family, ModelHyperPrior(), rng)
    n_max = max(cfg.n_grid)
    train, _, classes = sample_dataset(truth, n_max, rng, complete=cfg.complete)
    test, _, _ = sample_dataset(truth, cfg.n_test, rng, complete=cfg.complete)
    true_test = mean_loglik(truth, test)
    rows = []
    for n in cfg.n_grid:
        fc = em.FitConfig(
            n_classes=cfg.n_classes, stages=cfg.stages, family=family,
            max_iters=cfg.max_iters, loglik_rel_tol=cfg.loglik_rel_tol, seed=seed,
            init_mode="uniform_eps", epsilon=cfg.epsilon, alpha0=cfg.alpha0,
            time_weight=cfg.time_weight,
        )
        fitted, trace = em.fit(train[:n], fc, vocab, labels=classes[:n])
        log.info("%s seed=%d N=%d: %d iterations", family, seed, n, trace.n_iters)
        rows.append((
            family, seed, n,
            mean_loglik(fitted, train[:n]), mean_loglik(fitted, test),
            mean_loglik(truth, train[:n]), true_test,
        ))
    return rows


def _cell_star(args):
    return synthetic_cell(*args)


def run_synthetic_experiment(cfg: SyntheticConfig) -> list[tuple]:
    """Rows ``(family, seed, N, fitted_train, fitted_test, true_train, true_test)``.

    Cells (family, seed) are independent and seeded on their own, so running
    them in parallel with ``cfg.n_jobs > 1`` gives the same table.
    """
    jobs = [(cfg, f, s) for f in cfg.families for s in cfg.seeds]
    if cfg.n_jobs > 1:
        with ProcessPoolExecutor(cfg.n_jobs) as pool:
            results = list(pool.map(_cell_star, jobs))
    else:
        results = [_cell_star(j) for j in jobs]
    return [row for rows in results for row in rows]


def synthetic_csv(rows) -> str:
    return csv_text(SYNTHETIC_COLUMNS, rows)


def recovery_ratios(rows) -> dict[tuple[str, int], float]:
    """``|fitted_test - true_test|`` at the largest N over the same gap at the smallest N."""
    by_cell: dict[tuple[str, int], dict[int, float]] = {}
    for family, seed, n, _, fitted_test, _, true_test in rows:
        by_cell.setdefault((family, seed), {})[n] = abs(fitted_test - true_test)
    out = {}
    for key, gaps in by_cell.items():
        lo, hi = min(gaps), max(gaps)
        out[key] = gaps[hi] / gaps[lo] if gaps[lo] > 0 else float("inf")
    return out


def train_test_split(n: int, train_frac: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Random split of ``range(n)``; both parts are returned in dataset order."""
    if not 0 < train_frac < 1:
        raise ValueError("train_frac must lie in (0, 1)")
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(round(train_frac * n))
    if n_train == 0 or n_train == n:
        raise ValueError("split leaves an empty train or test set")
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


@dataclass
class PredictionConfig:
    n_classes: int = 5
    stages: StageRange = field(default_factory=lambda: StageRange(3, 4))
    families: tuple[str, ...] = FAMILIES
    train_frac: float = 0.9
    seed: int = 0
    init_mode: str = "frequency_seeded"
    epsilon: float = 0.1
    alpha0: float = 1e-3
    max_iters: int = 200
    n_samples: int = 501
    start_t: int = 1
    time_weight: str = "survival"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stages"] = f"{self.stages.r_minus}:{self.stages.r_plus}"
        d["families"] = list(self.families)
        return d


def run_prediction_experiment(data: Dataset, cfg: PredictionConfig) -> dict[str, dict[str, float]]:
    """MAE table with the row/column layout of the paper's comparison.

    Rows are the empirical baselines, the model fit without time followed by
    a one-off time fit (untimed), and the model fit with time inside EM
    (proposed), each with mixture and argmax prediction. The median column is
    only defined for the empirical row.
    """
    tr_idx, te_idx = train_test_split(len(data), cfg.train_frac, cfg.seed)
    train = [data.sequences[i] for i in tr_idx]
    test = [data.sequences[i] for i in te_idx]
    labels = data.labels[tr_idx] if data.labels is not None else None
    A, end = data.vocab.size, data.vocab.end_id
    table: dict[str, dict[str, float]] = {row: {} for row in TABLE_ROWS}
    kw = dict(n_samples=cfg.n_samples, seed=cfg.seed, start_t=cfg.start_t)
    for family in cfg.families:
        table["empirical"][family] = evaluate_mae(
            None, test, "empirical_parametric", train=train, family=family,
            n_actions=A, end_id=end, **kw).overall
        for prefix, timed in (("untimed", False), ("proposed", True)):
            fc = em.FitConfig(
                n_classes=cfg.n_classes, stages=cfg.stages, family=family,
                max_iters=cfg.max_iters, seed=cfg.seed, init_mode=cfg.init_mode,
                epsilon=cfg.epsilon, alpha0=cfg.alpha0, time_in_em=timed,
                time_weight=cfg.time_weight,
            )
            params, _ = em.fit(train, fc, data.vocab, labels=labels)
            for mode in ("mixture", "argmax"):
                table[f"{prefix}_{mode}"][family] = evaluate_mae(params, test, mode, **kw).overall
    table["empirical"]["median"] = evaluate_mae(
        None, test, "nonparametric_median", train=train, n_actions=A, end_id=end, **kw).overall
    return table


def prediction_csv(table: dict[str, dict[str, float]]) -> str:
    rows = []
    for name in TABLE_ROWS:
        cells = table.get(name, {})
        rows.append([name] + [cells[c] if c in cells else "" for c in TABLE_COLUMNS[1:]])
    return csv_text(TABLE_COLUMNS, rows)
