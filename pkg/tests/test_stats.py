import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fkfield import clusters
from fkfield.field import estimate_theta, restricted_sq_sum
from fkfield.lattice import Rectangle, build_geometry
from fkfield.sampler import ChainConfig, ModelParams, sample_ensemble
from fkfield.stats import (
    EmpiricalDistribution,
    fit_exponential,
    fit_power_law,
    kurtosis,
    survival_tail,
    truncated_two_point,
    two_point,
    wasserstein2,
)


def decs(geom, params, chain):
    for bonds, _ in sample_ensemble(geom, params, chain):
        yield clusters.decompose(geom, bonds)


class TestWasserstein:
    def test_identity(self):
        x = np.array([0.3, -1.0, 2.0])
        assert wasserstein2(x, x.copy()) == 0.0

    def test_point_masses(self):
        assert wasserstein2([0.0], [2.5]) == pytest.approx(2.5)
        assert wasserstein2([0.0], [-2.5]) == pytest.approx(2.5)

    def test_sorted_pairing(self):
        assert wasserstein2([0.0, 2.0], [1.0, 3.0]) == pytest.approx(1.0)

    def test_unequal_sizes_exact(self):
        # P = {0}, Q = {0, 1}: quantile gap is 1 on half the interval
        assert wasserstein2([0.0], [0.0, 1.0]) == pytest.approx(math.sqrt(0.5), abs=1e-15)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            wasserstein2([], [1.0])

    def test_accepts_empirical_distribution(self):
        p = EmpiricalDistribution.from_samples([1.0, 2.0, 3.0, 4.0])
        assert wasserstein2(p, p) == 0.0

    samples = st.lists(st.floats(-10, 10, allow_nan=False), min_size=1, max_size=30)

    @settings(max_examples=100, deadline=None)
    @given(samples, samples, samples)
    def test_metric_properties(self, a, b, c):
        dab = wasserstein2(a, b)
        dba = wasserstein2(b, a)
        dac = wasserstein2(a, c)
        dcb = wasserstein2(c, b)
        assert dab == pytest.approx(dba, abs=1e-12)
        assert dab <= dac + dcb + 1e-12
        assert wasserstein2(a, a) <= 1e-12


class TestFits:
    def test_power_law_exact_quarter(self):
        pts = [(x, 3.0 * x**-0.25) for x in (2, 4, 8, 16)]
        fit = fit_power_law(pts)
        assert fit.exponent == pytest.approx(-0.25, abs=1e-12)
        assert fit.amplitude == pytest.approx(3.0, rel=1e-12)
        assert fit.r_squared == pytest.approx(1.0, abs=1e-12)

    def test_power_law_theta_slope(self):
        pts = [(x, x**3.75, 0.01 * x**3.75) for x in (16, 32, 64, 128)]
        fit = fit_power_law(pts)
        assert fit.exponent == pytest.approx(3.75, abs=1e-10)

    def test_power_law_input_validation(self):
        with pytest.raises(ValueError):
            fit_power_law([(1.0, 1.0), (2.0, 2.0)])
        with pytest.raises(ValueError):
            fit_power_law([(1.0, 1.0), (2.0, -2.0), (3.0, 3.0)])

    def test_exponential_fit(self):
        pts = [(x, 2.0 * math.exp(-0.3 * x)) for x in range(1, 8)]
        fit = fit_exponential(pts)
        assert fit.rate == pytest.approx(0.3, abs=1e-12)
        assert fit.amplitude == pytest.approx(2.0, rel=1e-10)
        assert fit.r_squared == pytest.approx(1.0, abs=1e-12)


class TestSurvivalTail:
    def test_all_zero(self):
        tail = survival_tail([0, 0, 0, 0])
        assert tail.survival[0] == 1.0
        assert len(tail.survival) == 1

    def test_small_counts(self):
        tail = survival_tail([1, 1, 2])
        assert tail.survival[1] == pytest.approx(1.0)
        assert tail.survival[2] == pytest.approx(1 / 3)

    def test_geometric_recovery(self):
        rng = np.random.default_rng(0)
        lam = 0.4
        n = np.ceil(np.log(rng.random(20000)) / np.log(lam)).astype(int)
        n = np.where(rng.random(20000) < 1 - lam, 0, n)  # mix in extra zeros
        tail = survival_tail(n)
        assert tail.decay == pytest.approx(lam, abs=0.02)
        assert tail.r_squared > 0.999


class TestKurtosis:
    def test_fair_coin(self):
        rng = np.random.default_rng(1)
        x = 1.0 - 2.0 * rng.integers(0, 2, size=4000)
        val, err = kurtosis(x)
        assert val == pytest.approx(1.0, abs=4 * err + 0.05)

    def test_gaussian(self):
        rng = np.random.default_rng(2)
        val, err = kurtosis(rng.normal(size=200000))
        assert val == pytest.approx(3.0, abs=4 * err + 0.02)

    def test_undersized_rejected(self):
        with pytest.raises(ValueError):
            kurtosis(np.ones(50))


class TestTwoPoint:
    def test_r_zero_and_forced_percolation(self):
        g = build_geometry(8, "torus", 1.0)
        params = ModelParams(beta=50.0)  # p = 1: everything one cluster
        chain = ChainConfig(seed=4, thermalization_sweeps=2, decorrelation_sweeps=1, n_samples=4)
        table = two_point(g, decs(g, params, chain), r_values=[0, 1, 2, 3])
        assert np.allclose(table.value, 1.0)

    def test_free_boundary_rejected(self):
        g = build_geometry(4, "free", 1.0)
        with pytest.raises(ValueError):
            two_point(g, iter([]), r_values=[1])

    def test_matches_exact_enumeration_on_small_torus(self):
        # tau(1) on the 2x2 torus from sampling vs exhaustive enumeration
        from fkfield.sampler import exact_expectation

        g = build_geometry(2, "torus", 1.0)
        params = ModelParams.critical()

        def tau1(bonds):
            dec = clusters.decompose(g, bonds)
            lab = dec.labels.reshape(2, 2)
            return 0.5 * (
                float((lab == np.roll(lab, -1, axis=1)).mean())
                + float((lab == np.roll(lab, -1, axis=0)).mean())
            )

        exact = exact_expectation(g, params, tau1)
        chain = ChainConfig(seed=9, thermalization_sweeps=20, decorrelation_sweeps=2,
                            n_samples=6000)
        table = two_point(g, decs(g, params, chain), r_values=[1])
        assert abs(table.value[0] - exact) < 5 * table.stderr[0]

    def test_truncated_reduces_at_zero_field(self):
        g = build_geometry(6, "torus", 1.0)
        params = ModelParams.critical()
        chain = ChainConfig(seed=5, thermalization_sweeps=20, decorrelation_sweeps=1, n_samples=20)
        a = two_point(g, decs(g, params, chain), r_values=[1, 2])
        b = truncated_two_point(g, decs(g, params, chain), r_values=[1, 2])
        assert np.allclose(a.value, b.value)


class TestSumRuleIdentity:
    def test_pair_sum_equals_inv_sq_per_configuration(self):
        # sum over all site pairs of the same-cluster indicator equals
        # sum_i |C_i|^2 configuration by configuration
        g = build_geometry(8, "torus", 1.0)
        params = ModelParams.critical()
        chain = ChainConfig(seed=6, thermalization_sweeps=30, decorrelation_sweeps=2, n_samples=5)
        box = Rectangle(-0.5, -0.5, 8.0, 8.0)
        L = g.side_sites
        for dec in decs(g, params, chain):
            lab = dec.labels.reshape(L, L)
            pair_sum = 0.0
            for dx in range(L):
                for dy in range(L):
                    pair_sum += float(
                        (lab == np.roll(np.roll(lab, -dx, axis=1), -dy, axis=0)).sum()
                    )
            assert pair_sum == pytest.approx(restricted_sq_sum(dec, g, box))

    def test_binned_tau_sum_matches_theta(self):
        # the statistical version: Sigma_{x,y in box} tau-hat = estimated inv_sq
        g = build_geometry(8, "torus", 1.0)
        params = ModelParams.critical()
        chain = ChainConfig(seed=7, thermalization_sweeps=40, decorrelation_sweeps=2,
                            n_samples=400)
        box = Rectangle(-0.5, -0.5, 8.0, 8.0)
        est = estimate_theta(g, decs(g, params, chain), box)
        L = g.side_sites
        # full displacement table from an independent ensemble
        chain2 = ChainConfig(seed=8, thermalization_sweeps=40, decorrelation_sweeps=2,
                             n_samples=400)
        acc = np.zeros((L, L))
        count = 0
        for dec in decs(g, params, chain2):
            lab = dec.labels.reshape(L, L)
            for dx in range(L):
                for dy in range(L):
                    acc[dy, dx] += float(
                        (lab == np.roll(np.roll(lab, -dx, axis=1), -dy, axis=0)).mean()
                    )
            count += 1
        tau_sum = L * L * acc.sum() / count
        combined = 6 * est.stderr * math.sqrt(2)
        assert abs(tau_sum - est.inv_sq) < combined
