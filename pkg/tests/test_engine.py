import dataclasses
import importlib
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from medrdf.classifier import SmallNet
from medrdf.engine import (ABSTAIN, NOTATION, MedRdfConfig, binomial_two_sided_log_pvalue,
                           binomial_two_sided_pvalue, diagnose_counts, min_top_probability, predict,
                           robust_metric, vote_counts)
from medrdf.errors import ConfigError, InvalidInputError
from medrdf.noise import Denoiser, DenoiserKind, NoiseKind, NoiseModel

from conftest import AlternatingClassifier, ConstantClassifier, StochasticClassifier

SILENT = NoiseModel(NoiseKind.GAUSSIAN, 0.0)
RAW = Denoiser(DenoiserKind.NONE)


def sequence_counts(m):
    """Number of length-m coin sequences with k heads, by walking every sequence position."""
    counts = [1]
    for _ in range(m):
        counts = [a + b for a, b in zip(counts + [0], [0] + counts)]
    return counts


def exact_pvalue(n_a, n_b):
    m = n_a + n_b
    counts = sequence_counts(m)
    return min(Fraction(1), 2 * Fraction(sum(counts[: n_b + 1]), 2 ** m))


def test_sequence_counts_match_literal_enumeration():
    for m in range(1, 15):
        ones = np.array([bin(s).count("1") for s in range(2 ** m)])
        assert np.bincount(ones, minlength=m + 1).tolist() == sequence_counts(m)


def test_pvalue_matches_exhaustive_oracle():
    for m in range(1, 31):
        for n_b in range(0, m // 2 + 1):
            n_a = m - n_b
            assert abs(binomial_two_sided_pvalue(n_a, n_b) - float(exact_pvalue(n_a, n_b))) < 1e-12


def test_pvalue_closed_forms():
    assert binomial_two_sided_pvalue(11, 0) == pytest.approx(2 * 0.5 ** 11, rel=1e-12)
    assert binomial_two_sided_pvalue(11, 0) <= 0.001
    assert binomial_two_sided_pvalue(10, 0) == pytest.approx(2 * 0.5 ** 10, rel=1e-12)
    assert binomial_two_sided_pvalue(10, 0) > 0.001
    assert binomial_two_sided_pvalue(5, 5) == 1.0
    assert binomial_two_sided_pvalue(1, 0) == 1.0


def test_pvalue_far_tail_stays_in_log_space():
    log_p = binomial_two_sided_log_pvalue(10_000, 0)
    assert log_p == pytest.approx((1 - 10_000) * math.log(2), rel=1e-12)
    assert binomial_two_sided_pvalue(10_000, 0) == 0.0


@given(st.integers(1, 400), st.data())
def test_pvalue_monotone_in_gap(m, data):
    n_b = data.draw(st.integers(0, m // 2))
    if n_b == 0:
        return
    assert binomial_two_sided_pvalue(m - n_b + 1, n_b - 1) <= binomial_two_sided_pvalue(m - n_b, n_b)


def test_pvalue_rejects_bad_ordering():
    for args in [(2, 3), (0, 0), (3, -1)]:
        with pytest.raises(InvalidInputError):
            binomial_two_sided_pvalue(*args)


def test_robust_metric_examples():
    assert robust_metric(4, 4, 3, 10) == 0
    assert robust_metric(10_000, 0, 3, 10_000) == 3.0
    assert robust_metric(7000, 2000, 3, 10_000) == 1.5
    with pytest.raises(InvalidInputError):
        robust_metric(3, 4, 3, 10)
    with pytest.raises(InvalidInputError):
        robust_metric(3, 1, 1, 10)


def test_min_top_probability_examples():
    assert abs(min_top_probability(3, 1) - 5 / 9) < 1e-12
    assert abs(min_top_probability(7, 3) - 25 / 49) < 1e-12
    assert round(min_top_probability(7, 3), 2) == 0.51
    assert min_top_probability(4, 0) == 0.25
    with pytest.raises(InvalidInputError):
        min_top_probability(3, 3.5)


@given(st.lists(st.integers(0, 500), min_size=2, max_size=8))
def test_rm_and_count_bounds(counts):
    if sum(counts) == 0:
        return
    d = diagnose_counts(counts, 0.001)
    n, k = sum(counts), len(counts)
    assert d.n_A >= d.n_B >= max([c for i, c in enumerate(counts) if i not in (d.k_A, d.k_B)],
                                 default=0)
    assert 0 <= d.rm <= k
    assert d.rm == k * (d.n_A - d.n_B) / n
    assert d.n_A / n >= (d.n_A - d.n_B) / n
    if d.n_A + d.n_B == n:
        assert d.n_A / n >= min_top_probability(k, d.rm) - 1e-12
    assert (d.result == d.k_A) == (d.p_value <= 0.001)
    assert d.result in (d.k_A, ABSTAIN)


def test_diagnose_ties_go_to_lowest_index():
    d = diagnose_counts([0, 40, 10, 40], 0.001)
    assert (d.k_A, d.k_B) == (1, 3)
    assert d.result == ABSTAIN


def test_unanimous_stub_vote():
    d = predict(ConstantClassifier(3, 2), np.zeros((1, 4, 4)), MedRdfConfig(n=10_000))
    assert d.counts == [0, 0, 10_000]
    assert d.result == 2 and d.rm == 3.0
    assert d.p_value == pytest.approx(2 * 0.5 ** 10_000, abs=1e-300)
    assert d.elapsed > 0


def test_perfect_split_abstains():
    d = predict(AlternatingClassifier(), np.zeros((1, 2, 2)), MedRdfConfig(n=1000, batch_size=100))
    assert d.counts == [500, 500]
    assert d.p_value == 1.0 and d.result == ABSTAIN and d.abstained


def test_stochastic_stub_majority_matches_multinomial_oracle():
    probs = (0.7, 0.2, 0.1)
    results = [predict(StochasticClassifier(probs, seed), np.zeros((1, 1, 1)),
                       MedRdfConfig(n=10_000, noise=SILENT, denoiser=RAW)).result
               for seed in range(200)]
    assert np.mean(np.array(results) == 0) >= 0.999


def test_single_copy_always_abstains():
    d = predict(ConstantClassifier(3, 1), np.zeros((1, 4, 4)), MedRdfConfig(n=1))
    assert d.p_value == 1.0 and d.result == ABSTAIN


@pytest.fixture(scope="module")
def noisy_setup():
    net = SmallNet((1, 10, 10), 3, (), (16,), seed=3, init_gain=3.0)
    x = np.random.default_rng(0).random((1, 10, 10))
    return net, x


def test_schedule_invariance(noisy_setup):
    net, x = noisy_setup
    base = dict(n=2000, master_seed=42, noise=NoiseModel(NoiseKind.SALT_AND_PEPPER, 0.3))
    outs = []
    for batch_size in (1, 37, 1024):
        for workers in (1, 3):
            d = predict(net, x, MedRdfConfig(batch_size=batch_size, workers=workers, **base))
            outs.append({k: v for k, v in d.to_dict().items() if k != "elapsed"})
    assert all(o == outs[0] for o in outs)
    assert len(set(outs[0]["counts"])) > 1  # the noise actually splits the vote


@pytest.mark.parametrize("kind", list(NoiseKind))
def test_counts_sum_to_n(noisy_setup, kind):
    net, x = noisy_setup
    counts = vote_counts(net, x, MedRdfConfig(n=333, batch_size=100, noise=NoiseModel(kind, 0.2)))
    assert counts.sum() == 333


def test_config_validation(noisy_setup):
    net, x = noisy_setup
    for bad in ({"n": 0}, {"alpha": 0.0}, {"alpha": 1.0}, {"batch_size": 0}, {"workers": 0}):
        with pytest.raises(ConfigError):
            MedRdfConfig(**bad)
    small = SmallNet((1, 10, 10), 3, (), (4,), max_batch=10)
    with pytest.raises(ConfigError):
        predict(small, x, MedRdfConfig(n=100, batch_size=50))
    with pytest.raises(InvalidInputError):
        predict(net, np.zeros((1, 9, 9)), MedRdfConfig(n=10))
    cfg = MedRdfConfig()
    assert (cfg.n, cfg.alpha) == (10_000, 0.001)


def _resolve(path):
    module, *attrs = path.split(".")
    obj = importlib.import_module(f"medrdf.{module}")
    for name in attrs:
        if dataclasses.is_dataclass(obj) and name in {f.name for f in dataclasses.fields(obj)}:
            return True
        if isinstance(obj, type) and name in getattr(obj, "__annotations__", {}):
            return True
        obj = getattr(obj, name)
    return obj is not None


def test_notation_entries_resolve():
    assert len(NOTATION) == len(set(NOTATION))
    for symbol, path in NOTATION.items():
        assert _resolve(path), symbol
