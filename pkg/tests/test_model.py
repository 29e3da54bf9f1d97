import math

import numpy as np
import pytest

from dcemap import (GammaVariateParams, arrival_time_t01, eval_gradient,
                    eval_model, residence_time, residence_time_quadrature)
from conftest import random_params

P = GammaVariateParams(300.0, 12.0, 3.0)

# 300 * 0.5**3 * exp(1.5), evaluated with 40-digit arithmetic
MID_VALUE = 168.06334013767744
# root of ln(u) + 1 - u = ln(0.01)/3 on (0, 1), times t_peak = 12
T01_REF = 1.0369258344208625


class TestEvalModel:
    def test_peak_value(self):
        assert eval_model(P, 12.0) == 300.0

    def test_zero_onset(self):
        assert eval_model(P, 0.0) == 0.0

    def test_midpoint_value(self):
        assert eval_model(P, 6.0) == pytest.approx(MID_VALUE, rel=1e-14)

    def test_constant_curve_alpha_zero(self):
        flat = GammaVariateParams(120.0, 10.0, 0.0)
        assert eval_model(flat, 0.0) == 120.0
        assert eval_model(flat, 37.0) == 120.0

    def test_array_input(self):
        t = np.array([0.0, 6.0, 12.0])
        out = eval_model(P, t)
        assert out.shape == (3,)
        assert out[2] == 300.0

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError, match="invalid argument"):
            eval_model(P, math.nan)

    def test_rejects_negative_time(self):
        with pytest.raises(ValueError, match="invalid argument"):
            eval_model(P, -1.0)

    def test_invalid_params(self):
        with pytest.raises(ValueError):
            GammaVariateParams(300.0, -1.0, 3.0)
        with pytest.raises(ValueError):
            GammaVariateParams(300.0, 12.0, -0.5)
        with pytest.raises(ValueError):
            GammaVariateParams(math.inf, 12.0, 3.0)

    def test_peak_identity_randomized(self):
        rng = np.random.default_rng(10)
        for _ in range(200):
            p = random_params(rng)
            assert eval_model(p, p.t_peak) == pytest.approx(p.y_max, rel=1e-12)

    def test_unimodality(self):
        rng = np.random.default_rng(11)
        for _ in range(10):
            p = random_params(rng, alpha=(0.2, 30.0))
            rising = eval_model(p, np.linspace(1e-6, p.t_peak, 1000))
            falling = eval_model(p, np.linspace(p.t_peak, 10 * p.t_peak, 1000))
            assert np.all(np.diff(rising) > 0)
            assert np.all(np.diff(falling) < 0)

    def test_amplitude_invariance(self):
        p = GammaVariateParams(100.0, 9.0, 4.0)
        q = GammaVariateParams(350.0, 9.0, 4.0)
        t = np.linspace(0.5, 40.0, 50)
        assert np.allclose(eval_model(q, t), 3.5 * eval_model(p, t), rtol=1e-13)
        assert arrival_time_t01(p) == arrival_time_t01(q)
        assert residence_time(p) == residence_time(q)

    def test_time_scale_equivariance(self):
        p = GammaVariateParams(200.0, 8.0, 2.5)
        q = GammaVariateParams(200.0, 24.0, 2.5)
        assert residence_time(q) == pytest.approx(3 * residence_time(p), rel=1e-14)
        assert arrival_time_t01(q) == pytest.approx(3 * arrival_time_t01(p), rel=1e-8)


class TestEvalGradient:
    def test_at_peak(self):
        assert eval_gradient(P, 12.0) == (1.0, 0.0, 0.0)

    def test_hand_case(self):
        # (1, 1, 1) at t=2: dm/dt_peak = m * 1 * (2-1)/1 = m = 2/e
        m = 2.0 * math.exp(-1.0)
        d_y, d_tp, d_a = eval_gradient(GammaVariateParams(1.0, 1.0, 1.0), 2.0)
        assert d_tp == pytest.approx(m, rel=1e-14)
        assert d_y == pytest.approx(m, rel=1e-14)  # y_max = 1

    def test_boundary_errors(self):
        with pytest.raises(ValueError, match="gradient undefined"):
            eval_gradient(P, 0.0)
        with pytest.raises(ValueError, match="gradient undefined"):
            eval_gradient(GammaVariateParams(300.0, 12.0, 0.0), 5.0)

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(12)
        for _ in range(100):
            p = random_params(rng)
            t = rng.uniform(0.01 * p.t_peak, 10.0 * p.t_peak)
            analytic = np.array(eval_gradient(p, t))
            fd = np.empty(3)
            base = [p.y_max, p.t_peak, p.alpha]
            for k in range(3):
                h = 1e-6 * abs(base[k])
                hi = base.copy()
                lo = base.copy()
                hi[k] += h
                lo[k] -= h
                fd[k] = (eval_model(GammaVariateParams(*hi), t)
                         - eval_model(GammaVariateParams(*lo), t)) / (2 * h)
            assert np.linalg.norm(analytic - fd) <= 1e-5 * np.linalg.norm(fd)


class TestResidenceTime:
    def test_closed_form(self):
        assert residence_time(GammaVariateParams(300.0, 10.0, 2.0)) == 15.0

    def test_large_alpha_approaches_peak_time(self):
        rt = residence_time(GammaVariateParams(10.0, 17.0, 1e6))
        assert rt == pytest.approx(17.0, rel=1e-5)
        assert rt >= 17.0

    def test_degenerate_alpha(self):
        assert residence_time(GammaVariateParams(300.0, 10.0, 0.0)) == math.inf
        assert residence_time(GammaVariateParams(300.0, 10.0, 1e-7)) == math.inf

    def test_quadrature_oracle_examples(self):
        rt = residence_time_quadrature(GammaVariateParams(300.0, 10.0, 2.0),
                                       t_upper=500.0, n_points=100_000)
        assert rt == pytest.approx(15.0, rel=1e-6)
        rt = residence_time_quadrature(GammaVariateParams(1.0, 1.0, 5.0),
                                       t_upper=50.0, n_points=100_000)
        assert rt == pytest.approx(1.2, rel=1e-6)

    def test_quadrature_truncation_error(self):
        with pytest.raises(ValueError, match="truncation too coarse"):
            residence_time_quadrature(GammaVariateParams(300.0, 10.0, 2.0),
                                      t_upper=20.0, n_points=100_000)

    def test_oracle_agreement_randomized(self):
        rng = np.random.default_rng(13)
        for _ in range(100):
            p = random_params(rng, t_peak=(1.0, 30.0), alpha=(0.2, 50.0))
            closed = residence_time(p)
            quad = residence_time_quadrature(p, t_upper=300.0 * p.t_peak,
                                             n_points=200_001)
            assert quad == pytest.approx(closed, rel=1e-6)


class TestArrivalTime:
    def test_defining_equation(self):
        rng = np.random.default_rng(14)
        for _ in range(100):
            p = random_params(rng)
            t01 = arrival_time_t01(p)
            assert 0.0 < t01 < p.t_peak
            assert abs(eval_model(p, t01) - 0.01 * p.y_max) <= 1e-8 * p.y_max

    def test_reference_value(self):
        assert arrival_time_t01(P) == pytest.approx(T01_REF, abs=1.2e-9)

    def test_monotone_limits(self):
        near_peak = arrival_time_t01(P, fraction=0.999)
        tiny = arrival_time_t01(P, fraction=1e-9)
        assert near_peak > 0.95 * P.t_peak
        assert tiny < 0.05 * P.t_peak
        assert tiny < arrival_time_t01(P, fraction=0.01) < near_peak

    def test_constant_curve_error(self):
        with pytest.raises(ValueError, match="no arrival time"):
            arrival_time_t01(GammaVariateParams(300.0, 12.0, 0.0))

    def test_bad_fraction(self):
        with pytest.raises(ValueError, match="invalid argument"):
            arrival_time_t01(P, fraction=1.5)
