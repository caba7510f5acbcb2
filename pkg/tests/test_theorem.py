import math

import numpy as np
import pytest
from scipy.special import betainc

from langfree.errors import ConfigError
from langfree.pseudo import (
    BoundQuery,
    calibrate_density_exponent,
    pseudo_fixed_batch,
    sphere_inner_cdf,
    theorem1_bound,
    theorem1_mc_check,
)


class TestSphereInnerCdf:
    def test_matches_incomplete_beta_oracle(self):
        # independent closed form: P(a.b <= z) = I_{(1+z)/2}((d-1)/2, (d-1)/2)
        for d in (2, 3, 4, 8, 64, 512):
            for z in (-0.95, -0.5, -0.1, 0.0, 0.2, 0.7, 0.99):
                ours = sphere_inner_cdf(z, d)
                oracle = float(betainc((d - 1) / 2, (d - 1) / 2, (1 + z) / 2))
                assert ours == pytest.approx(oracle, abs=1e-8)

    def test_d2_is_arcsine(self):
        for z in (-0.9, -0.3, 0.0, 0.5):
            assert sphere_inner_cdf(z, 2) == pytest.approx(
                0.5 + math.asin(z) / math.pi, abs=1e-10
            )

    def test_d3_is_uniform(self):
        for z in (-0.8, 0.0, 0.4):
            assert sphere_inner_cdf(z, 3) == pytest.approx((1 + z) / 2, abs=1e-10)

    def test_edges(self):
        assert sphere_inner_cdf(-1.0, 8) == 0.0
        assert sphere_inner_cdf(1.0, 8) == 1.0

    def test_symmetry(self):
        for d in (2, 5, 16):
            assert sphere_inner_cdf(0.3, d) == pytest.approx(
                1.0 - sphere_inner_cdf(-0.3, d), abs=1e-9
            )

    def test_alternative_exponent_differs(self):
        for d in (2, 8, 64):
            assert sphere_inner_cdf(0.3, d, paper_exact=True) != pytest.approx(
                sphere_inner_cdf(0.3, d), abs=1e-4
            )


class TestCalibration:
    def test_selects_matched_exponent(self):
        cal = calibrate_density_exponent(np.random.default_rng(123), trials=100_000)
        assert cal.selected == "matched"
        for d, (dev_matched, dev_alt) in cal.deviations.items():
            assert dev_matched < dev_alt, f"d={d}"
            assert dev_matched < 0.01, f"d={d}: matched deviation {dev_matched}"


class TestBound:
    def test_degenerate_full_probability(self):
        # threshold maps below -1: every direction satisfies the inequality
        assert theorem1_bound(BoundQuery(c=1 / 3, xi=0.5, d=8)) == 1.0

    def test_degenerate_zero_probability(self):
        # threshold maps above +1: the bound collapses to zero
        assert theorem1_bound(BoundQuery(c=1.0, xi=0.5, d=8)) == 0.0

    def test_decreasing_in_threshold(self):
        values = [theorem1_bound(BoundQuery(c=c, xi=0.5, d=16)) for c in
                  (0.3, 0.5, 0.7, 0.9)]
        assert values == sorted(values, reverse=True)

    def test_within_unit_interval(self):
        for d in (2, 8, 64):
            for xi in (0.1, 1.0, 3.0):
                for c in (0.1, 0.5, 0.999):
                    b = theorem1_bound(BoundQuery(c=c, xi=xi, d=d))
                    assert 0.0 <= b <= 1.0

    def test_query_validation(self):
        with pytest.raises(ConfigError):
            BoundQuery(c=0.0, xi=0.5, d=8)
        with pytest.raises(ConfigError):
            BoundQuery(c=1.2, xi=0.5, d=8)
        with pytest.raises(ConfigError):
            BoundQuery(c=0.5, xi=0.0, d=8)
        with pytest.raises(ConfigError):
            BoundQuery(c=0.5, xi=0.5, d=1)


class TestMcCheck:
    def test_requires_enough_trials(self):
        with pytest.raises(ConfigError):
            theorem1_mc_check(
                BoundQuery(c=0.5, xi=0.5, d=8), 100, np.random.default_rng(0)
            )

    def test_result_fields(self):
        res = theorem1_mc_check(
            BoundQuery(c=0.5, xi=0.5, d=8), 20_000, np.random.default_rng(0)
        )
        assert res.trials == 20_000
        assert 0.0 <= res.empirical_prob <= 1.0
        assert res.stderr > 0.0
        assert res.passed

    def test_empirical_against_independent_sampler(self):
        # same probability estimated without pseudo_fixed_batch
        q = BoundQuery(c=0.6, xi=0.8, d=16)
        res = theorem1_mc_check(q, 50_000, np.random.default_rng(11))
        rng = np.random.default_rng(99)
        eps = rng.standard_normal((50_000, 16))
        b = eps / np.linalg.norm(eps, axis=1, keepdims=True)
        h = b * q.xi
        h[:, 0] += 1.0
        sims = h[:, 0] / np.linalg.norm(h, axis=1)
        indep = float(np.mean(sims >= q.c))
        assert res.empirical_prob == pytest.approx(indep, abs=0.01)


class TestPointwiseBound:
    def test_no_violations(self):
        # per-sample similarity is at least (1 + xi * a.b) / (1 + xi)
        d, xi, n = 64, 0.5, 10_000
        rng = np.random.default_rng(21)
        f = np.zeros(d)
        f[0] = 1.0
        eps = rng.standard_normal((n, d))
        h = pseudo_fixed_batch(f, xi, eps)
        sims = h @ f
        ab = eps[:, 0] / np.linalg.norm(eps, axis=1)
        lower = (1.0 + xi * ab) / (1.0 + xi)
        assert np.all(sims >= lower - 1e-9)
