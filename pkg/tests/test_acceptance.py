"""Acceptance criteria, one test each.

Every test prints a single ``CRITERION n: PASS|FAIL ...`` line (shown even
under output capture) and then asserts the same condition.
"""
import math
import time

import numpy as np
import pytest
from click.testing import CliRunner

from stagetime.applications import classify_dataset, evaluate_mae, PredictionMode
from stagetime.cli import main as cli
from stagetime.em import FitConfig, fit
from stagetime.experiments import (
    TABLE_COLUMNS,
    TABLE_ROWS,
    PredictionConfig,
    SyntheticConfig,
    prediction_csv,
    recovery_ratios,
    run_prediction_experiment,
    run_synthetic_experiment,
)
from stagetime.generator import ModelHyperPrior, sample_dataset, sample_model, sample_time_params
from stagetime.inference import brute_force_posteriors, posteriors
from stagetime.io import Dataset
from stagetime.model import StageRange
from stagetime.timedist import (
    FAMILIES,
    TimeDist,
    fit_exponential,
    fit_geometric,
    fit_weibull,
    sample_time,
    weibull_gradient,
    weibull_loglik,
)

from conftest import make_vocab, random_instance, random_sequence
from test_applications import constant_dataset, separated_model


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\nCRITERION {n}: {'PASS' if ok else 'FAIL'} {detail}")
    return emit


def rel_close(x, y, rtol, atol=0.0):
    x, y = np.asarray(x, float), np.asarray(y, float)
    same_inf = np.array_equal(np.isinf(x), np.isinf(y)) and np.array_equal(x[np.isinf(x)], y[np.isinf(y)])
    fin = np.isfinite(x) & np.isfinite(y)
    return same_inf and bool(np.all(np.abs(x[fin] - y[fin]) <= atol + rtol * np.abs(y[fin])))


def test_criterion_1_oracle_equivalence(report):
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    bad = 0
    for n in range(200):
        params, seq = random_instance(rng, max_m=6, max_r=3, max_k=3, family=FAMILIES[n % 3])
        dp, bf = posteriors(params, seq), brute_force_posteriors(params, seq)
        ok = (rel_close(dp.stage_marginal, bf.stage_marginal, 1e-9, 1e-15)
              and rel_close(dp.stage_pair, bf.stage_pair, 1e-9, 1e-15)
              and rel_close(dp.class_post, bf.class_post, 1e-9, 1e-15)
              and rel_close(dp.loglik, bf.loglik, 1e-9))
        bad += not ok
    secs = time.perf_counter() - t0
    ok = bad == 0 and secs < 10
    report(1, ok, f"{200 - bad}/200 instances match brute force at 1e-9 relative in {secs:.2f}s (limit 10s)")
    assert ok


def test_criterion_2_flat_identity(report):
    rng = np.random.default_rng(202)
    t0 = time.perf_counter()
    worst = 0.0
    for n in range(50):
        params, _ = random_instance(rng, max_r=4, n_actions=4, family=FAMILIES[n % 3])
        seq = random_sequence(rng, params.vocab, int(rng.integers(max(2, params.stages.r_minus), 201)),
                              params.family)
        tables = posteriors(params, seq)
        for c in range(params.n_classes):
            if not np.isfinite(tables.class_loglik[c]):
                continue
            per_i = np.logaddexp.reduce(tables.f[c] + tables.g[c], axis=1)
            worst = max(worst, float(np.max(np.abs(per_i - per_i[0]) / abs(per_i[0]))))
    secs = time.perf_counter() - t0
    ok = worst <= 1e-9 and secs < 5
    report(2, ok, f"max relative spread {worst:.2e} (limit 1e-9) over 50 instances, m <= 200, in {secs:.2f}s")
    assert ok


def test_criterion_3_em_monotonicity(report):
    t0 = time.perf_counter()
    worst = {}
    for n in range(20):
        family = FAMILIES[n % 3]
        rng = np.random.default_rng(300 + n)
        vocab = make_vocab(5)
        truth = sample_model(vocab, StageRange(2, 3), 2, family, rng=rng)
        data, _, classes = sample_dataset(truth, 200, rng)
        cfg = FitConfig(n_classes=2, stages=StageRange(2, 3), family=family, alpha0=0.0, seed=n)
        _, trace = fit(data, cfg, vocab, classes)
        d = float(np.min(np.diff(trace.total_loglik))) if trace.n_iters > 1 else 0.0
        worst[family] = min(worst.get(family, np.inf), d)
    secs = time.perf_counter() - t0
    ok = all(v >= -1e-8 for v in worst.values()) and secs < 120
    detail = ", ".join(f"{f} worst step {v:.2e}" for f, v in worst.items())
    report(3, ok, f"20 fits, N=200, alpha0=0, survival time weights: {detail} (limit -1e-8) in {secs:.1f}s")
    assert ok


def test_monotonicity_under_density_weights(capsys):
    """Supplement to criterion 3: with density time weights EM is exact and monotone."""
    worst = {}
    for n in range(20):
        family = FAMILIES[n % 3]
        rng = np.random.default_rng(300 + n)
        vocab = make_vocab(5)
        truth = sample_model(vocab, StageRange(2, 3), 2, family, rng=rng)
        data, _, classes = sample_dataset(truth, 200, rng)
        cfg = FitConfig(n_classes=2, stages=StageRange(2, 3), family=family, alpha0=0.0, seed=n,
                        time_weight="density")
        _, trace = fit(data, cfg, vocab, classes)
        d = float(np.min(np.diff(trace.total_loglik))) if trace.n_iters > 1 else 0.0
        worst[family] = min(worst.get(family, np.inf), d)
    with capsys.disabled():
        print("\nNOTE criterion 3 with density time weights: "
              + ", ".join(f"{f} worst step {v:.2e}" for f, v in worst.items()))
    assert all(v >= -1e-8 for v in worst.values())


@pytest.mark.slow
def test_criterion_4_synthetic_recovery(report):
    t0 = time.perf_counter()
    rows = run_synthetic_experiment(SyntheticConfig())
    ratios = recovery_ratios(rows)
    per_family = {}
    for (family, seed), r in sorted(ratios.items()):
        per_family.setdefault(family, []).append(r)
    passed = {f: sum(r < 0.4 for r in rs) for f, rs in per_family.items()}
    ok = all(n >= 4 for n in passed.values())
    detail = "; ".join(
        f"{f} {passed[f]}/5 seeds below 0.4 (ratios {', '.join(f'{r:.3f}' for r in per_family[f])})"
        for f in FAMILIES)
    report(4, ok, f"{detail}; {time.perf_counter() - t0:.0f}s")
    assert ok


def test_criterion_5_time_mle_consistency(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(505)
    hyper = ModelHyperPrior()
    worst = 0.0
    for family, fitter in (("geometric", fit_geometric), ("exponential", fit_exponential),
                           ("weibull", fit_weibull)):
        for p in sample_time_params(family, hyper, rng, (5,)):
            truth = TimeDist(family, float(p[0]), float(p[1]))
            est = fitter(sample_time(truth, rng, 100_000))
            worst = max(worst, abs(est.a / truth.a - 1))
            if family == "weibull":
                worst = max(worst, abs(est.b / truth.b - 1))
    # analytic Weibull gradient against central differences at the fitted solution;
    # the gradient vanishes there, so the error is measured relative to the sample size
    x = sample_time(TimeDist.weibull(3.2, 1.3), rng, 100_000)
    d = fit_weibull(x)
    h = 1e-6
    fd = ((weibull_loglik(d.a + h, d.b, x) - weibull_loglik(d.a - h, d.b, x)) / (2 * h),
          (weibull_loglik(d.a, d.b + h, x) - weibull_loglik(d.a, d.b - h, x)) / (2 * h))
    an = weibull_gradient(d.a, d.b, x)
    grad_err = max(abs(a - f) for a, f in zip(an, fd)) / len(x)
    secs = time.perf_counter() - t0
    ok = worst < 0.03 and grad_err < 1e-5 and secs < 30
    report(5, ok, f"max relative parameter error {worst:.4f} (limit 0.03); Weibull score vs finite "
                  f"differences {grad_err:.1e} per sample (limit 1e-5); {secs:.1f}s")
    assert ok


def test_criterion_6_classification_recovery(report):
    t0 = time.perf_counter()
    params = separated_model()
    data, _, classes = sample_dataset(params, 1000, np.random.default_rng(606))
    labels, _ = classify_dataset(params, data)
    acc = float(np.mean(labels == classes))
    secs = time.perf_counter() - t0
    ok = acc >= 0.95 and secs < 30
    report(6, ok, f"accuracy {acc:.3f} on 1000 held-out sequences (limit 0.95) in {secs:.1f}s")
    assert ok


def test_criterion_7_prediction_harness(report):
    rng = np.random.default_rng(707)
    vocab = make_vocab(4)
    truth = sample_model(vocab, StageRange(1, 2), 2, "weibull", rng=rng)
    seqs, _, _ = sample_dataset(truth, 80, rng, max_len=40)
    data = Dataset(vocab, seqs, [None] * len(seqs), [None] * len(seqs))
    table = run_prediction_experiment(data, PredictionConfig(n_classes=2, stages=StageRange(1, 2),
                                                             max_iters=10, n_samples=101))
    lines = prediction_csv(table).splitlines()
    shape_ok = (lines[0] == ",".join(TABLE_COLUMNS)
                and [ln.split(",")[0] for ln in lines[1:]] == list(TABLE_ROWS)
                and all(len(ln.split(",")) == len(TABLE_COLUMNS) for ln in lines))

    train, test = constant_dataset(60, 5.0), constant_dataset(40, 5.0, seed=1)
    params, _ = fit(train, FitConfig(stages=StageRange(1, 1), max_iters=5), make_vocab(3))
    mae = evaluate_mae(params, test, PredictionMode("mixture", 5001)).overall
    target = 5 - 5 * math.log(2)
    ok = shape_ok and abs(mae - target) <= 0.05
    report(7, ok, f"table {len(lines) - 1}x{len(TABLE_COLUMNS)} shape {'ok' if shape_ok else 'wrong'}; "
                  f"constant-interval MAE {mae:.4f} vs {target:.4f} (limit 0.05)")
    assert ok


def test_criterion_8_determinism(report, tmp_path):
    runner = CliRunner()

    def run_all(root):
        steps = [
            ["sample-model", "--actions", "3", "--classes", "2", "--stages", "1:2", "--family",
             "weibull", "--seed", "8", "--out", root / "m"],
            ["sample-data", root / "m" / "model.json", "--n", "60", "--seed", "8", "--max-len", "30",
             "--out", root / "d"],
            ["fit", root / "d" / "data.jsonl", "--family", "weibull", "--classes", "2", "--stages", "1:2",
             "--max-iters", "8", "--out", root / "f"],
            ["predict", root / "f" / "model.json", root / "d" / "data.jsonl", "--out", root / "p"],
            ["classify", root / "f" / "model.json", root / "d" / "data.jsonl", "--out", root / "c"],
            ["representative", root / "f" / "model.json", root / "d" / "data.jsonl", "--class", "0",
             "--out", root / "r"],
            ["eval-mae", root / "d" / "data.jsonl", "--mode", "mixture", "--classes", "2", "--stages",
             "1:2", "--max-iters", "5", "--out", root / "e"],
            ["synthetic", "--families", "exponential", "--seeds", "1", "--n-grid", "30,60",
             "--n-test", "40", "--actions", "3", "--out", root / "s"],
            ["prediction-experiment", root / "d" / "data.jsonl", "--classes", "2", "--stages", "1:2",
             "--n-samples", "101", "--out", root / "x"],
        ]
        for args in steps:
            res = runner.invoke(cli, [str(a) for a in args])
            assert res.exit_code == 0, res.output
        return {p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}

    a = run_all(tmp_path / "one")
    b = run_all(tmp_path / "one")
    n_csv = sum(1 for p in a if p.suffix == ".csv")
    ok = a == b and n_csv >= 8
    report(8, ok, f"{len(a)} output files ({n_csv} CSV) byte-identical across two runs of 9 commands")
    assert ok
