import math

import numpy as np
import pytest

from stagetime.applications import (
    EmptyClassError,
    MaeReport,
    MedianTimeModel,
    PredictionMode,
    classify,
    classify_dataset,
    evaluate_mae,
    predict_next_time,
    representative,
    representative_index,
    sample_median,
)
from stagetime.em import FitConfig, fit, uniform_model
from stagetime.generator import sample_dataset
from stagetime.inference import class_log_likelihoods
from stagetime.model import EventSequence, StageRange
from stagetime.timedist import TimeDist

from conftest import make_vocab


def separated_model(n_actions=4, end_prob=0.05, noise=0.01):
    """Two classes that walk the actions in opposite cyclic orders."""
    vocab = make_vocab(n_actions)
    params = uniform_model(vocab, StageRange(1, 2), 2, "exponential")
    A, end = vocab.size, vocab.end_id
    theta_A = np.array(params.theta_A)
    for a in range(n_actions):
        for c, step in ((0, 1), (1, -1)):
            row = np.full(A, noise)
            row[end] = end_prob
            row[(a + step) % n_actions] = 0.0
            row[(a + step) % n_actions] = 1.0 - row.sum()
            theta_A[a, :, c] = row
    tp = np.array(params.time_params)
    tp[..., 0, 0] = 1.0
    tp[..., 1, 0] = 0.5
    return params.replace(theta_A=theta_A, time_params=tp)


def constant_dataset(n, tau, n_actions=3, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        m = int(rng.integers(3, 8))
        a = np.append(rng.integers(0, n_actions, m - 1), n_actions)
        t = np.full(m, float(tau))
        t[0] = t[-1] = 0.0
        out.append(EventSequence(a, t, id=f"s{i}"))
    return out


# --- prediction modes ------------------------------------------------------

def test_prediction_mode_validation():
    assert PredictionMode("median").tag == "nonparametric_median"
    assert PredictionMode("empirical").tag == "empirical_parametric"
    for bad in (dict(tag="mean"), dict(n_samples=4), dict(n_samples=1)):
        with pytest.raises(ValueError):
            PredictionMode(**bad)


def test_degenerate_mixture_equals_argmax_draws():
    dists = [TimeDist.exponential(0.5), TimeDist.weibull(3.0, 1.2)]
    a = sample_median(dists, [1.0, 0.0], np.random.default_rng(5), 501, argmax=False)
    b = sample_median(dists, [1.0, 0.0], np.random.default_rng(5), 501, argmax=True)
    assert a == b


def test_single_class_mixture_equals_argmax():
    params = fit(constant_dataset(30, 4.0), FitConfig(stages=StageRange(1, 2), max_iters=5),
                 make_vocab(3))[0]
    seq = constant_dataset(1, 4.0, seed=9)[0]
    for mode_seed in range(3):
        x = predict_next_time(params, seq.actions[:3], seq.times[:2], "mixture", np.random.default_rng(mode_seed))
        y = predict_next_time(params, seq.actions[:3], seq.times[:2], "argmax", np.random.default_rng(mode_seed))
        assert x == y


def test_geometric_prediction_median():
    vocab = make_vocab(1)
    params = uniform_model(vocab, StageRange(1, 1), 1, "geometric")
    assert params.time_dist(0, 0, 0).median == 1.0
    mode = PredictionMode("mixture", 2001)
    # F(1) = 1/2 exactly, so the sample median sits on the 1/2 boundary and lands on 1 or 2
    preds = {predict_next_time(params, [0, 0], [0.0], mode, np.random.default_rng(s)) for s in range(20)}
    assert preds == {1.0, 2.0}
    tp = np.array(params.time_params)
    tp[..., 0] = 0.6
    params = params.replace(time_params=tp)
    assert all(predict_next_time(params, [0, 0], [0.0], mode, np.random.default_rng(s)) == 1.0
               for s in range(20))


def test_prediction_is_deterministic_per_seed():
    params = separated_model()
    seq = EventSequence([0, 1, 2, 3, 4], [0, 1, 2, 0.5, 0])
    x = [predict_next_time(params, seq.actions[:4], seq.times[:3], "mixture", np.random.default_rng(3))
         for _ in range(2)]
    assert x[0] == x[1]


def test_prediction_rejects_bad_prefix():
    params = separated_model()
    with pytest.raises(ValueError):
        predict_next_time(params, [0, 1], [0.0, 1.0])
    with pytest.raises(ValueError):
        predict_next_time(params, [0, 1], [0.0], "median")


# --- MAE ---------------------------------------------------------------------

def test_constant_interval_model_mae_matches_exponential_median():
    train = constant_dataset(60, 5.0)
    test = constant_dataset(40, 5.0, seed=1)
    params, _ = fit(train, FitConfig(stages=StageRange(1, 1), max_iters=5), make_vocab(3))
    assert params.time_params[0, 1, 0, 0] == pytest.approx(0.2)
    report = evaluate_mae(params, test, PredictionMode("mixture", 5001))
    assert report.overall == pytest.approx(5 - 5 * math.log(2), abs=0.05)


def test_median_baseline_is_exact_on_constant_pairs():
    train = constant_dataset(30, 3.0)
    test = constant_dataset(10, 3.0, seed=2)
    report = evaluate_mae(None, test, "median", train=train, n_actions=4, end_id=3)
    assert report.overall == 0.0
    assert report.n_fallbacks == 0


def test_empirical_baseline_ignores_classes():
    train = constant_dataset(30, 2.0)
    test = constant_dataset(10, 2.0, seed=3)
    report = evaluate_mae(None, test, "empirical", train=train, family="exponential",
                          n_actions=4, end_id=3, n_samples=5001)
    assert report.overall == pytest.approx(2 - 2 * math.log(2), abs=0.05)


def test_median_baseline_falls_back_on_unseen_pairs():
    train = [EventSequence([0, 1, 3], [0, 4, 0])]
    test = [EventSequence([2, 1, 3], [0, 4, 0])]
    model = MedianTimeModel.fit(train, 3)
    assert model.predict(2, 1) == 4.0
    report = evaluate_mae(None, test, "median", train=train, n_actions=4, end_id=3)
    assert report.n_fallbacks == 1 and report.overall == 0.0


def test_mae_report_invariants():
    rng = np.random.default_rng(4)
    params = separated_model()
    data, _, _ = sample_dataset(params, 40, rng)
    report = evaluate_mae(params, data, "argmax", seed=1)
    seen = report.counts > 0
    weighted = np.nansum(report.mae[seen] * report.counts[seen]) / report.counts.sum()
    assert report.overall == pytest.approx(weighted, abs=1e-9)
    n_timed = sum(int(np.sum(s.actions[1:] != params.vocab.end_id)) for s in data)
    assert report.counts.sum() == n_timed
    assert np.all(report.mae[seen] >= 0) and np.all(np.isnan(report.mae[~seen]))
    assert report.counts[:, params.vocab.end_id].sum() == 0


def test_mae_csv_and_top_pairs():
    counts = np.array([[0, 5, 1], [2, 0, 0], [0, 0, 0]])
    mae = np.where(counts > 0, 1.5, np.nan)
    report = MaeReport(1.5, mae, counts, labels=("x", "y", "__END__"))
    assert report.top_pairs(2) == [(0, 1, 5, 1.5), (1, 0, 2, 1.5)]
    lines = report.to_csv(top=2).splitlines()
    assert lines[0] == "from,to,count,mae"
    assert lines[1] == "*,*,8,1.5"
    assert lines[2] == "x,y,5,1.5"
    assert len(report.to_csv().splitlines()) == 2 + 3


def test_start_at_second_prediction():
    params = separated_model()
    data, _, _ = sample_dataset(params, 20, np.random.default_rng(5))
    r1 = evaluate_mae(params, data, "argmax", start_t=1)
    r2 = evaluate_mae(params, data, "argmax", start_t=2)
    assert r2.counts.sum() < r1.counts.sum()


# --- classification --------------------------------------------------------

def test_single_class_always_zero():
    params = uniform_model(make_vocab(2), StageRange(1, 1), 1, "exponential")
    assert classify(params, EventSequence([0, 1, 2], [0, 1, 0])) == 0


def test_symmetric_model_breaks_ties_toward_class_zero():
    params = uniform_model(make_vocab(2), StageRange(1, 2), 3, "weibull")
    assert classify(params, EventSequence([0, 1, 1, 2], [0, 1, 2, 0])) == 0


def test_separated_model_classification_accuracy():
    params = separated_model()
    data, _, classes = sample_dataset(params, 1000, np.random.default_rng(6))
    labels, post = classify_dataset(params, data)
    assert np.mean(labels == classes) >= 0.95
    np.testing.assert_allclose(post.sum(axis=1), 1.0)


def test_classification_invariant_to_class_prior_scaling():
    params = separated_model().replace(theta_C=np.array([0.3, 0.7]))
    data, _, _ = sample_dataset(params, 50, np.random.default_rng(7))
    weights = params.theta_C * 7.5
    scaled = params.replace(theta_C=weights / weights.sum())
    assert np.array_equal(classify_dataset(params, data)[0], classify_dataset(scaled, data)[0])


# --- representative ----------------------------------------------------------

def memoryless_model(q=0.4):
    """Every factor on the (x y)* END paths equals ``q`` and zero intervals weigh 1."""
    vocab = make_vocab(2)
    params = uniform_model(vocab, StageRange(1, 1), 1, "exponential")
    theta_A = np.array(params.theta_A)
    theta_A[0, 0, 0] = [1 - 2 * q, q, q]
    theta_A[1, 0, 0] = [q, 1 - 2 * q, q]
    return params.replace(theta_A=theta_A, pi_A=np.array([[q, 1 - q, 0.0]]))


def test_single_sequence_is_its_own_representative():
    params = uniform_model(make_vocab(2), StageRange(1, 1), 1, "exponential")
    seq = EventSequence([0, 2], [0, 0])
    assert representative(params, [seq], 0) is seq


def test_doubled_sequence_ties_and_first_wins():
    params = memoryless_model()
    short = EventSequence([0, 1, 2], [0, 0, 0], id="short")
    doubled = EventSequence([0, 1, 0, 1, 2], [0, 0, 0, 0, 0], id="doubled")
    s1 = class_log_likelihoods(params, short)[0] / 3
    s2 = class_log_likelihoods(params, doubled)[0] / 5
    assert s1 == pytest.approx(math.log(0.4), rel=1e-12)
    assert s2 == pytest.approx(math.log(0.4), rel=1e-12)
    assert representative(params, [short, doubled], 0).id == "short"
    assert representative(params, [doubled, short], 0).id == "doubled"


def test_representative_maximizes_normalized_score():
    params = separated_model()
    data, _, _ = sample_dataset(params, 60, np.random.default_rng(8))
    labels, _ = classify_dataset(params, data)
    for c in (0, 1):
        idx, score = representative_index(params, data, c)
        assert labels[idx] == c
        for n in np.flatnonzero(labels == c):
            assert score >= class_log_likelihoods(params, data[n])[c] / len(data[n])


def test_representative_empty_class():
    params = separated_model()
    with pytest.raises(EmptyClassError):
        representative(params, [], 0)
    seq = EventSequence([0, 1, 2, 3, 0, 4], [0, 1, 1, 1, 1, 0])
    assert classify(params, seq) == 0
    with pytest.raises(EmptyClassError):
        representative(params, [seq], 1)
