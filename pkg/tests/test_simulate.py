import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats
from statsmodels.stats.proportion import proportion_confint

from perpetuity.dist import Discrete, Uniform, atom, p_delta, validate_model
from perpetuity.errors import DegenerateModel, InvalidArgument, TruncationFailure
from perpetuity.simulate import (GeometricSampler, SimConfig, TailCounter, abs_m_path,
                                 abs_m_paths, decompose_path, estimate_tail, residual_bound,
                                 sample_dominating_batch, sample_dominating_series,
                                 sample_geometric_batch, sample_perpetuity,
                                 sample_perpetuity_batch, simulate_tail, wilson_interval)


def batched(fn, n, size=1 << 16):
    return np.concatenate([fn(np.arange(lo, min(n, lo + size))) for lo in range(0, n, size)])


class TestSamplePerpetuity:
    def test_zero_multiplier(self):
        m = validate_model(atom(0.0), atom(3.5))
        cfg = SimConfig(n_samples=100, seed=1)
        assert all(sample_perpetuity(m, cfg, i) == 3.5 for i in range(100))

    def test_deterministic_geometric_series(self):
        m = validate_model(atom(0.5), atom(1.0))
        cfg = SimConfig(n_samples=10, seed=1)
        for i in range(10):
            assert abs(sample_perpetuity(m, cfg, i) - 2.0) <= 2 * cfg.truncation_eps

    def test_uniform_mean(self, uniform_model):
        # E R = sum_k (E M)^(k-1) E Q = 2
        n = 10**6
        cfg = SimConfig(n_samples=n, seed=11)
        vals = batched(lambda idx: sample_perpetuity_batch(uniform_model, cfg, idx)[0], n)
        se = vals.std(ddof=1) / math.sqrt(n)
        assert abs(vals.mean() - 2.0) <= 4 * se

    def test_scalar_matches_batch(self):
        models = [validate_model(Uniform(-1, 1), Uniform(-2, 1)),
                  validate_model(Discrete(((-0.9, 0.3), (0.5, 0.7))), Discrete(((1, 0.5), (-1, 0.5))))]
        for model in models:
            cfg = SimConfig(n_samples=300, seed=77)
            batch, failures = sample_perpetuity_batch(model, cfg, np.arange(300))
            assert failures == 0
            assert batch.tolist() == [sample_perpetuity(model, cfg, i) for i in range(300)]

    def test_fixed_steps_matches_batch(self):
        model = validate_model(Discrete(((0.0, 0.5), (0.5, 0.5))), atom(1.0))
        cfg = SimConfig(n_samples=200, seed=4)
        batch, _ = sample_perpetuity_batch(model, cfg, np.arange(200), n_terms=3)
        assert batch.tolist() == [sample_perpetuity(model, cfg, i, n_terms=3) for i in range(200)]
        assert set(batch.tolist()) <= {1.0, 1.5, 1.75}

    def test_truncation_failure(self):
        model = validate_model(atom(0.9999), atom(1.0))
        cfg = SimConfig(n_samples=5, seed=0, max_terms=50)
        with pytest.raises(TruncationFailure):
            sample_perpetuity(model, cfg, 0)
        _, failures = sample_perpetuity_batch(model, cfg, np.arange(5))
        assert failures == 5

    def test_index_range(self, uniform_model):
        with pytest.raises(InvalidArgument):
            sample_perpetuity(uniform_model, SimConfig(n_samples=3), 3)

    def test_residual_bound(self, uniform_model):
        cfg = SimConfig(n_samples=1, truncation_eps=1e-10)
        assert residual_bound(uniform_model, cfg) == pytest.approx(2e-10)

    @pytest.mark.parametrize("kw", [dict(n_samples=0), dict(n_samples=1, truncation_eps=0.0),
                                    dict(n_samples=1, truncation_eps=1.0),
                                    dict(n_samples=1, worker_hint=0)])
    def test_bad_config(self, kw):
        with pytest.raises(InvalidArgument):
            SimConfig(**kw)


class TestDecomposePath:
    def test_example(self):
        d = decompose_path([0.95, 0.5, 0.99, 0.3], 0.2)
        assert d.t_values == (2, 2)
        assert d.epoch_products[0] == pytest.approx(0.475)
        assert d.epoch_products[1] == pytest.approx(0.475 * 0.99 * 0.3)
        assert d.epoch_products[0] <= 0.8 and d.epoch_products[1] <= 0.64
        assert d.lhs == pytest.approx(1 + 0.95 + 0.475 + 0.475 * 0.99)
        assert d.rhs == pytest.approx(2 + 0.8 * 2)
        assert d.dominated()

    def test_single_epoch(self):
        d = decompose_path([0.1], 0.5)
        assert d.t_values == (1,)
        assert d.lhs == 1.0 and d.rhs == 1.0

    @pytest.mark.parametrize("path,delta", [([1.2, 0.1], 0.5), ([-0.1], 0.5), ([], 0.5),
                                            ([0.9], 0.5), ([0.1], 0.0), ([0.1], 1.0)])
    def test_invalid(self, path, delta):
        with pytest.raises(InvalidArgument):
            decompose_path(path, delta)

    @given(st.lists(st.floats(0.0, 1.0), max_size=60), st.floats(0.01, 0.99), st.floats(0, 1))
    @settings(max_examples=300, deadline=None)
    def test_pathwise_domination(self, head, delta, last):
        path = head + [last * (1 - delta)]
        d = decompose_path(path, delta)
        assert sum(d.t_values) == len(path)
        assert d.dominated()

    def test_random_uniform_paths(self, uniform_model):
        cfg = SimConfig(n_samples=10**5, seed=5)
        paths = abs_m_paths(uniform_model, 0.3, cfg, np.arange(10**5))
        assert all(decompose_path(p, 0.3).dominated() for p in paths)

    def test_path_shape(self, uniform_model):
        cfg = SimConfig(n_samples=100, seed=5, truncation_eps=1e-6)
        for i in range(100):
            p = abs_m_path(uniform_model, 0.2, cfg, i)
            assert p[-1] <= 0.8
            assert np.prod(p) <= 1e-6

    def test_path_coupled_with_perpetuity(self, uniform_model):
        # the same stream feeds the series and the path: with Q == 1 the series is lhs
        cfg = SimConfig(n_samples=50, seed=8)
        for i in range(50):
            path = abs_m_path(uniform_model, 0.5, cfg, i)
            r = sample_perpetuity(uniform_model, cfg, i)
            assert decompose_path(path, 0.5).lhs == pytest.approx(r, abs=1e-11)

    def test_epochs_are_geometric(self, uniform_model):
        # first epoch of each path is geometric(1 - p_delta); later epochs are
        # selected by the stopping rule and so left out
        delta = 0.3
        p = p_delta(uniform_model, delta)
        cfg = SimConfig(n_samples=10**5, seed=21)
        paths = abs_m_paths(uniform_model, delta, cfg, np.arange(10**5))
        first = np.array([decompose_path(x, delta).t_values[0] for x in paths])
        kmax = 8
        observed = np.array([np.sum(first == j) for j in range(1, kmax)] + [np.sum(first >= kmax)])
        probs = np.array([p ** (j - 1) * (1 - p) for j in range(1, kmax)] + [p ** (kmax - 1)])
        _, pval = stats.chisquare(observed, probs * first.size)
        assert pval > 1e-3


class TestGeometric:
    @pytest.mark.parametrize("p", [0.0, 0.1, 0.5, 0.9])
    def test_law(self, p):
        n = 200_000
        t = sample_geometric_batch(p, 3, np.arange(n))
        assert t.min() >= 1
        assert abs(t.mean() - 1 / (1 - p)) <= 4 * math.sqrt(p) / (1 - p) / math.sqrt(n) + 1e-12
        for j in (1, 2, 3):
            q = p ** j
            assert abs(np.mean(t > j) - q) <= 4 * math.sqrt(q * (1 - q) / n) + 1e-12

    def test_scalar_matches_vector(self):
        g = GeometricSampler(0.37)
        raw = np.array([0, 1, 2**63, 2**64 - 1, 123456789123456789], dtype=np.uint64)
        assert g.from_raw_array(raw).tolist() == [g.from_raw(int(r)) for r in raw]

    def test_bad_p(self):
        with pytest.raises(InvalidArgument):
            GeometricSampler(1.0)


class TestDominatingSeries:
    def test_degenerate_p_zero(self):
        model = validate_model(atom(0.5), atom(1.0))
        cfg = SimConfig(n_samples=10, seed=1)
        for i in range(10):
            assert abs(sample_dominating_series(model, 0.2, cfg, i) - 5.0) <= cfg.truncation_eps

    def test_p_one_rejected(self):
        model = validate_model(Discrete(((0.95, 0.5), (-0.99, 0.5))), atom(1.0))
        with pytest.raises(DegenerateModel):
            sample_dominating_series(model, 0.1, SimConfig(n_samples=1), 0)

    def test_scalar_matches_batch(self, uniform_model):
        cfg = SimConfig(n_samples=50, seed=2)
        batch = sample_dominating_batch(uniform_model, 0.3, cfg, np.arange(50))
        assert batch.tolist() == [sample_dominating_series(uniform_model, 0.3, cfg, i)
                                  for i in range(50)]

    def test_mean(self, uniform_model):
        # E sum = E T / delta with E T = 1 / (1 - p)
        n, delta = 10**6, 0.1
        p = p_delta(uniform_model, delta)
        cfg = SimConfig(n_samples=n, seed=13)
        vals = batched(lambda idx: sample_dominating_batch(uniform_model, delta, cfg, idx), n)
        se = vals.std(ddof=1) / math.sqrt(n)
        assert abs(vals.mean() - 1 / ((1 - p) * delta)) <= 4 * se

    def test_coupled_quantile(self, uniform_model):
        delta, n = 0.3, 20_000
        cfg = SimConfig(n_samples=n, seed=17)
        decs = [decompose_path(x, delta) for x in abs_m_paths(uniform_model, delta, cfg, np.arange(n))]
        lhs = np.array([d.lhs for d in decs])
        rhs = np.array([d.rhs for d in decs])
        assert np.quantile(rhs, 0.99) >= np.quantile(lhs, 0.99)


class TestTailEstimation:
    def test_wilson_zero(self):
        lo, hi = wilson_interval(0, 100, 1.96)
        assert lo == 0.0
        assert hi == pytest.approx(1.96**2 / (100 + 1.96**2))
        assert hi == pytest.approx(0.0370, abs=5e-5)

    def test_wilson_half(self):
        lo, hi = wilson_interval(50, 100, 1.96)
        assert lo == pytest.approx(0.4038, abs=5e-5)
        assert hi == pytest.approx(0.5962, abs=5e-5)

    @pytest.mark.parametrize("k,n", [(0, 10), (3, 10), (10, 10), (1, 10**7), (500, 10**6)])
    def test_wilson_matches_statsmodels(self, k, n):
        assert wilson_interval(k, n) == pytest.approx(
            proportion_confint(k, n, alpha=0.05, method="wilson"), abs=1e-12)

    def test_counts_and_estimates(self):
        samples = np.array([-3.0, 0.5, 1.0, 2.0, 2.5])
        curve = estimate_tail(samples, [-10.0, 1.0, 2.0, 3.0], use_abs=True)
        assert curve.exceed_counts == (5, 3, 2, 0)
        assert curve.estimates[0] == 1.0
        signed = estimate_tail(samples, [-10.0, 1.0, 2.0, 3.0], use_abs=False)
        assert signed.exceed_counts == (5, 2, 1, 0)

    def test_chunked_source(self):
        rs = np.random.default_rng(0).normal(size=1000)
        xs = [-1.0, 0.0, 1.0]
        a = estimate_tail(rs, xs)
        b = estimate_tail(iter(np.array_split(rs, 7)), xs)
        assert a == b

    def test_merge_order(self):
        rs = np.random.default_rng(1).normal(size=3000)
        xs = np.array([0.1, 0.5, 2.0])
        parts = [TailCounter(xs).update(c) for c in np.array_split(rs, 3)]
        ab_c = parts[0].merge(parts[1]).merge(parts[2])
        a_bc = parts[0].merge(parts[1].merge(parts[2]))
        c_ab = parts[2].merge(parts[0].merge(parts[1]))
        assert ab_c.curve() == a_bc.curve() == c_ab.curve()

    @pytest.mark.parametrize("xs", [[], [1.0, 1.0], [2.0, 1.0]])
    def test_bad_grid(self, xs):
        with pytest.raises(InvalidArgument):
            estimate_tail(np.ones(3), xs)

    @given(st.lists(st.floats(-50, 50), min_size=1, max_size=200),
           st.lists(st.floats(-60, 60), min_size=1, max_size=20, unique=True))
    @settings(max_examples=200, deadline=None)
    def test_curve_invariants(self, samples, xs):
        curve = estimate_tail(np.array(samples), sorted(xs))
        assert all(b <= a for a, b in zip(curve.exceed_counts, curve.exceed_counts[1:]))
        for k, est, lo, hi in zip(curve.exceed_counts, curve.estimates, curve.ci_low, curve.ci_high):
            assert est == k / curve.n
            assert 0.0 <= lo <= est <= hi <= 1.0

    def test_ci_width_scaling(self):
        for p in (0.5, 0.05):
            w1 = np.diff(wilson_interval(round(p * 10**4), 10**4))[0]
            w2 = np.diff(wilson_interval(round(p * 10**5), 10**5))[0]
            ratio = w1 / w2
            assert math.sqrt(10) / 2 <= ratio <= 2 * math.sqrt(10)


class TestSimulateTail:
    def test_workers_do_not_change_counts(self, uniform_model):
        cfg = SimConfig(n_samples=150_000, seed=42)
        xs = [1.5, 2.0, 3.0, 4.0]
        runs = [simulate_tail(uniform_model, cfg, xs, workers=w, chunk_size=10_000)
                for w in (1, 4, 8)]
        assert runs[0].curve == runs[1].curve == runs[2].curve
        assert runs[0].meta["sample_mean"] == runs[1].meta["sample_mean"]

    def test_x_below_samples(self, uniform_model):
        res = simulate_tail(uniform_model, SimConfig(n_samples=1000, seed=1), [0.5, 1.5])
        assert res.curve.estimates[0] == 1.0
        assert res.meta["truncation_failures"] == 0
        assert res.meta["residual_bound"] == pytest.approx(2e-12)

    def test_sample_index_reproducible(self, uniform_model):
        cfg = SimConfig(n_samples=1000, seed=9)
        full, _ = sample_perpetuity_batch(uniform_model, cfg, np.arange(1000))
        assert sample_perpetuity(uniform_model, cfg, 637) == full[637]
