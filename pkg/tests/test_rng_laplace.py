import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from mmfuse.errors import DomainError
from mmfuse.laplace import (
    laplace_cdf,
    laplace_kl,
    laplace_kl_t,
    laplace_log_prob,
    laplace_log_prob_t,
    laplace_sample,
    rho_for_scale,
    sample_offset,
    scale_t,
)
from mmfuse.rng import Rng
from mmfuse.tensor import Tensor


def kl_by_quadrature(loc_q, scale_q, loc_p, scale_p):
    """Independent oracle: integrate q(x) * (log q(x) - log p(x))."""

    def integrand(x):
        lq = laplace_log_prob(loc_q, scale_q, x)
        lp = laplace_log_prob(loc_p, scale_p, x)
        return math.exp(lq) * (lq - lp)

    lo = loc_q - 60.0 * scale_q
    hi = loc_q + 60.0 * scale_q
    points = sorted(p for p in (loc_q, loc_p) if lo < p < hi)
    value, _ = integrate.quad(
        integrand, lo, hi, points=points or None, limit=400, epsabs=1e-12, epsrel=1e-12
    )
    return value


class TestRng:
    def test_same_seed_same_stream(self):
        a = Rng(7).substream("sampling").random(16)
        b = Rng(7).substream("sampling").random(16)
        assert np.array_equal(a, b)

    def test_substreams_are_independent(self):
        root = Rng(7)
        a = root.substream("sampling").random(16)
        b = root.substream("shuffle").random(16)
        assert not np.array_equal(a, b)

    def test_different_seeds_differ(self):
        assert not np.array_equal(Rng(1).random(8), Rng(2).random(8))

    def test_open_unit_strictly_inside(self):
        u = Rng(3).open_unit(200_000)
        assert np.all(np.abs(u) < 0.5)

    def test_state_roundtrip(self):
        rng = Rng(11).substream("sampling")
        rng.random(5)
        saved = rng.state()
        first = rng.random(4)
        rng.restore(saved)
        assert np.array_equal(rng.random(4), first)


class TestLaplaceSample:
    def test_median(self):
        assert laplace_sample(0.1, 0.01, 0.0) == pytest.approx(0.1, abs=1e-15)

    def test_quarter_draw_is_ln2(self):
        # -ln(1 - 0.5) with sign(u) = +1
        assert laplace_sample(0.0, 1.0, 0.25) == pytest.approx(math.log(2.0), abs=1e-12)

    def test_boundary_and_scale_errors(self):
        with pytest.raises(DomainError):
            laplace_sample(0.0, 1.0, 0.5)
        with pytest.raises(DomainError):
            laplace_sample(0.0, 1.0, -0.5)
        with pytest.raises(DomainError):
            laplace_sample(0.0, 0.0, 0.1)

    def test_monte_carlo_moments(self):
        n = 1_000_000
        u = Rng(123).substream("sampling").open_unit(n)
        draws = laplace_sample(0.1, 0.01, u)
        stderr = 0.01 * math.sqrt(2.0 / n)
        assert abs(draws.mean() - 0.1) < 3.0 * stderr
        assert draws.var() == pytest.approx(2e-4, rel=0.05)

    def test_pathwise_derivatives_match_finite_differences(self):
        # for fixed u the draw is differentiable in (loc, scale)
        h = 1e-6
        for u in (-0.43, -0.2, 0.07, 0.31):
            d_loc = (laplace_sample(0.5 + h, 0.3, u) - laplace_sample(0.5 - h, 0.3, u)) / (2 * h)
            assert d_loc == pytest.approx(1.0, abs=1e-6)
            d_scale = (laplace_sample(0.5, 0.3 + h, u) - laplace_sample(0.5, 0.3 - h, u)) / (2 * h)
            expected = -np.sign(u) * np.log1p(-2.0 * abs(u))
            assert d_scale == pytest.approx(expected, abs=1e-6)

    def test_empirical_cdf_matches_analytic(self):
        n = 100_000
        u = Rng(5).substream("sampling").open_unit(n)
        draws = np.sort(laplace_sample(0.0, 1.0, u))
        ecdf_hi = np.arange(1, n + 1) / n
        ecdf_lo = np.arange(0, n) / n
        cdf = laplace_cdf(0.0, 1.0, draws)
        ks = max(np.max(np.abs(ecdf_hi - cdf)), np.max(np.abs(cdf - ecdf_lo)))
        assert ks < 0.01


class TestLaplaceLogProb:
    def test_mode_value(self):
        assert laplace_log_prob(0.0, 1.0, 0.0) == pytest.approx(-math.log(2.0), abs=1e-12)

    def test_unit_offset(self):
        assert laplace_log_prob(0.0, 1.0, 1.0) == pytest.approx(-math.log(2.0) - 1.0, abs=1e-12)

    def test_scale_error(self):
        with pytest.raises(DomainError):
            laplace_log_prob(0.0, -1.0, 0.0)

    @pytest.mark.parametrize("scale", [0.01, 1.0])
    def test_density_integrates_to_one(self, scale):
        value, _ = integrate.quad(
            lambda x: math.exp(laplace_log_prob(0.0, scale, x)),
            -50.0,
            50.0,
            points=[0.0],
            limit=200,
            epsabs=1e-12,
        )
        assert value == pytest.approx(1.0, abs=1e-8)


class TestLaplaceKl:
    def test_identical_distributions(self):
        assert laplace_kl(0.3, 0.7, 0.3, 0.7) == 0.0

    def test_scale_doubling(self):
        expected = math.log(2.0) + 0.5 - 1.0
        assert laplace_kl(0.0, 1.0, 0.0, 2.0) == pytest.approx(expected, abs=1e-12)
        assert kl_by_quadrature(0.0, 1.0, 0.0, 2.0) == pytest.approx(expected, abs=1e-9)

    def test_unit_shift(self):
        expected = 1.0 + math.exp(-1.0) - 1.0
        assert laplace_kl(1.0, 1.0, 0.0, 1.0) == pytest.approx(expected, abs=1e-12)
        assert kl_by_quadrature(1.0, 1.0, 0.0, 1.0) == pytest.approx(expected, abs=1e-9)

    def test_closed_form_matches_quadrature_on_grid(self):
        locs = [-2.0, -0.5, 0.0, 0.5, 2.0]
        scales = [0.01, 0.1, 1.0, 3.0]
        for loc_q in locs:
            for scale_q in scales:
                for loc_p in locs:
                    for scale_p in scales:
                        closed = laplace_kl(loc_q, scale_q, loc_p, scale_p)
                        numeric = kl_by_quadrature(loc_q, scale_q, loc_p, scale_p)
                        assert closed == pytest.approx(numeric, abs=1e-6), (
                            loc_q, scale_q, loc_p, scale_p,
                        )

    def test_scale_errors(self):
        with pytest.raises(DomainError):
            laplace_kl(0.0, 0.0, 0.0, 1.0)
        with pytest.raises(DomainError):
            laplace_kl(0.0, 1.0, 0.0, -0.1)


@settings(max_examples=200, deadline=None)
@given(
    loc_q=st.floats(-2.0, 2.0),
    scale_q=st.floats(0.01, 3.0),
    loc_p=st.floats(-2.0, 2.0),
    scale_p=st.floats(0.01, 3.0),
)
def test_kl_nonnegative_and_zero_only_at_equality(loc_q, scale_q, loc_p, scale_p):
    kl = laplace_kl(loc_q, scale_q, loc_p, scale_p)
    assert kl >= -1e-12
    if loc_q == loc_p and scale_q == scale_p:
        assert kl == pytest.approx(0.0, abs=1e-12)
    elif abs(loc_q - loc_p) > 1e-6 or abs(scale_q - scale_p) / scale_p > 1e-6:
        assert kl > 0.0


class TestTensorForms:
    def test_kl_t_matches_scalar_form(self):
        locs = np.array([[0.4, -1.2], [0.0, 2.0]])
        rho = np.array([[0.3, -1.0], [0.1, -3.0]])
        scales = np.log1p(np.exp(rho))
        total = laplace_kl_t(
            Tensor(locs, dtype=np.float64), scale_t(Tensor(rho, dtype=np.float64)), 0.0, 1.0
        ).item()
        expected = sum(
            laplace_kl(locs[i, j], scales[i, j], 0.0, 1.0) for i in range(2) for j in range(2)
        )
        assert total == pytest.approx(expected, rel=1e-9)

    def test_log_prob_t_matches_scalar_form(self):
        locs = np.array([0.5, -0.3])
        rho = np.array([0.2, -0.7])
        theta = np.array([0.1, 0.9])
        scales = np.log1p(np.exp(rho))
        total = laplace_log_prob_t(
            Tensor(locs, dtype=np.float64),
            scale_t(Tensor(rho, dtype=np.float64)),
            Tensor(theta, dtype=np.float64),
        ).item()
        expected = sum(laplace_log_prob(locs[i], scales[i], theta[i]) for i in range(2))
        assert total == pytest.approx(expected, rel=1e-9)

    def test_rho_for_scale_inverts_softplus(self):
        for s in (0.01, 0.5, 2.0):
            assert math.log(1.0 + math.exp(rho_for_scale(s))) == pytest.approx(s, rel=1e-12)

    def test_sample_offset_rejects_boundary(self):
        with pytest.raises(DomainError):
            sample_offset(np.array([0.1, 0.5]))
