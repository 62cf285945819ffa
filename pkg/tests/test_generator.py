from itertools import product

import numpy as np
import pytest

from stagetime.em import e_step, uniform_model
from stagetime.generator import (
    ModelHyperPrior,
    UnreachableEndError,
    sample_dataset,
    sample_model,
    sample_sequence,
    sample_time_params,
    stage_rows,
)
from stagetime.inference import brute_force_posteriors, sequence_log_likelihood
from stagetime.model import EventSequence, StageRange, check_stage_path

from conftest import make_vocab


def test_hyper_prior_rejects_non_positive():
    with pytest.raises(ValueError):
        ModelHyperPrior(alpha_A=0.0)


def test_stay_probability_means():
    rng = np.random.default_rng(0)
    rows = stage_rows(2, 0.7, 0.3, rng, (10_000,))
    assert rows[:, 0, 0].mean() == pytest.approx(0.7, abs=0.02)
    assert np.all(rows[:, 1, 1] == 1.0)
    rows = stage_rows(2, 1.0, 1.0, rng, (10_000,))
    assert rows[:, 0, 0].mean() == pytest.approx(0.5, abs=0.02)


def test_geometric_hyper_law_mean():
    p = sample_time_params("geometric", ModelHyperPrior(), np.random.default_rng(1), (10_000,))[:, 0]
    assert p.mean() == pytest.approx(5 / 7, abs=0.01)


def test_other_hyper_laws():
    rng = np.random.default_rng(2)
    lam = sample_time_params("exponential", ModelHyperPrior(), rng, (20_000,))[:, 0]
    assert lam.mean() == pytest.approx(2.0, abs=0.05)
    w = sample_time_params("weibull", ModelHyperPrior(), rng, (20_000,))
    assert 2 <= w[:, 0].min() and w[:, 0].max() <= 5
    assert 1 <= w[:, 1].min() and w[:, 1].max() <= 1.5


def test_end_only_model_gives_length_two():
    vocab = make_vocab(3)
    params = uniform_model(vocab, StageRange(1, 1), 1, "exponential")
    theta_A = np.zeros_like(params.theta_A)
    theta_A[..., vocab.end_id] = 1.0
    params = params.replace(theta_A=theta_A)
    data, _, _ = sample_dataset(params, 100, np.random.default_rng(3))
    assert all(len(s) == 2 and s.actions[1] == vocab.end_id for s in data)
    assert all(s.times.tolist() == [0.0, 0.0] for s in data)


def test_single_stage_gives_all_ones():
    rng = np.random.default_rng(4)
    params = sample_model(make_vocab(3), StageRange(1, 1), 2, "weibull", rng=rng)
    _, stages, _ = sample_dataset(params, 50, rng)
    assert all(np.all(s == 1) for s in stages)


def test_sampled_sequences_respect_invariants():
    rng = np.random.default_rng(5)
    params = sample_model(make_vocab(4), StageRange(2, 3), 2, "geometric", rng=rng)
    data, stages, classes = sample_dataset(params, 200, rng)
    for seq, st in zip(data, stages):
        seq.check_vocab(params.vocab)
        check_stage_path(st, len(seq), 3)
        assert 2 <= st[-1] <= 3
        assert seq.times[0] == 0 and seq.times[-1] == 0
        assert np.all(seq.times[1:-1] >= 1)
    assert set(classes.tolist()) <= {0, 1}


def test_complete_window_ends_in_last_stage():
    rng = np.random.default_rng(6)
    params = sample_model(make_vocab(3), StageRange(1, 3), 1, "exponential", rng=rng)
    data, stages, _ = sample_dataset(params, 50, rng, complete=True)
    assert all(st[-1] == 3 for st in stages)
    assert all(s.complete for s in data)


def test_bigram_frequencies_of_random_model():
    rng = np.random.default_rng(8)
    vocab = make_vocab(2)
    params = sample_model(vocab, StageRange(1, 2), 2, "geometric", rng=rng)
    theta_A = np.array(params.theta_A)
    theta_A[: vocab.end_id, :, :, vocab.end_id] += 1.0  # short sequences keep the oracle exact
    theta_A /= theta_A.sum(axis=-1, keepdims=True)
    params = params.replace(theta_A=theta_A)
    A = vocab.size
    # oracle: enumerate every action string up to length L; the sequence likelihood
    # already sums over the admissible stage paths, matching window rejection
    L = 9
    oracle = np.zeros((A, A))
    mass = 0.0
    for m in range(2, L + 1):
        for body in product(range(vocab.end_id), repeat=m - 1):
            a = np.array(body + (vocab.end_id,))
            p = np.exp(sequence_log_likelihood(params, EventSequence(a, np.zeros(m)), use_time=False))
            mass += p
            np.add.at(oracle, (a[:-1], a[1:]), p)
    assert mass > 0.99
    oracle /= oracle.sum()
    data, _, _ = sample_dataset(params, 100_000, np.random.default_rng(9))
    emp = np.zeros((A, A))
    for s in data:
        np.add.at(emp, (s.actions[:-1], s.actions[1:]), 1.0)
    emp /= emp.sum()
    assert 0.5 * np.abs(emp - oracle).sum() < 1e-2


def test_seed_determinism():
    params = sample_model(make_vocab(3), StageRange(1, 3), 2, "weibull", rng=np.random.default_rng(10))
    a, sa, ca = sample_dataset(params, 30, np.random.default_rng(11))
    b, sb, cb = sample_dataset(params, 30, np.random.default_rng(11))
    assert a == b and np.array_equal(ca, cb)
    assert all(np.array_equal(x, y) for x, y in zip(sa, sb))


def test_true_model_beats_random_models():
    rng = np.random.default_rng(12)
    vocab = make_vocab(4)
    truth = sample_model(vocab, StageRange(2, 3), 2, "exponential", rng=rng)
    data, _, _ = sample_dataset(truth, 10_000, rng)
    ll_true = e_step(truth, data)[1] / len(data)
    for _ in range(5):
        other = sample_model(vocab, StageRange(2, 3), 2, "exponential", rng=rng)
        stats, total = e_step(other, data)
        assert stats.n_skipped == 0
        assert ll_true > total / len(data)


def test_unreachable_end_raises():
    vocab = make_vocab(2)
    params = uniform_model(vocab, StageRange(1, 1), 1, "exponential")
    theta_A = np.array(params.theta_A)
    theta_A[: vocab.end_id, :, :, :] = [0.5, 0.5, 0.0]
    params = params.replace(theta_A=theta_A)
    with pytest.raises(UnreachableEndError):
        sample_sequence(params, np.random.default_rng(13), max_len=20)


def test_latent_truth_has_highest_posterior_mass_on_average():
    rng = np.random.default_rng(14)
    params = sample_model(make_vocab(2), StageRange(1, 3), 1, "exponential", rng=rng)
    data, stages, _ = sample_dataset(params, 200, rng, max_len=7)
    hits = []
    for seq, st in zip(data, stages):
        post = brute_force_posteriors(params, seq).stage_marginal[0]
        hits.append(np.mean(post[np.arange(len(seq)), st - 1]))
    # the marginal probability of the sampled stage beats the uniform guess of 1/3
    assert np.mean(hits) > 1 / 3
