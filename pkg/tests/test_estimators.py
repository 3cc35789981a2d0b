import math

import numpy as np
import pytest

from dremsim.estimators import EstimatorState, averaging_rhs, gradient_rhs, kappa_rhs
from dremsim.mixing import MixedSignals


def mixed(delta, scalY, scalW=None, delta_dot=0.0):
    scalY = np.atleast_1d(np.asarray(scalY, dtype=float))
    if scalW is None:
        scalW = np.zeros_like(scalY)
    return MixedSignals(scalY=scalY, delta=delta, scalW=scalW, delta_dot=delta_dot)


class TestGradient:
    def test_frozen_without_excitation(self):
        state = EstimatorState([0.3, -0.7], None, 1.0)
        d = gradient_rhs(state, mixed(0.0, [1.0, 2.0]), gamma=100.0)
        assert np.allclose(d.theta_hat, 0.0)

    def test_true_parameters_are_equilibrium(self):
        theta = np.array([1.0, -1.0])
        state = EstimatorState(theta, None, 5.0)
        d = gradient_rhs(state, mixed(1.0, theta), gamma=100.0)
        assert np.allclose(d.theta_hat, 0.0)

    def test_sign_of_correction(self):
        state = EstimatorState([0.0], None, 0.0)
        d = gradient_rhs(state, mixed(0.5, [0.5]), gamma=2.0)
        # -gamma d (d th - Y) = -2*0.5*(0 - 0.5) = 0.5
        assert d.theta_hat[0] == pytest.approx(0.5)

    def test_gamma_validation(self):
        state = EstimatorState([0.0], None, 0.0)
        with pytest.raises(ValueError):
            gradient_rhs(state, mixed(1.0, [0.0]), gamma=0.0)


class TestKappa:
    def test_frozen_without_excitation(self):
        assert kappa_rhs(3.0, mixed(0.0, [0.0], delta_dot=0.0), gamma=10.0) == 0.0

    def test_inverse_is_equilibrium_for_constant_delta(self):
        assert kappa_rhs(0.5, mixed(2.0, [0.0], delta_dot=0.0), gamma=1.0) == pytest.approx(0.0)

    def test_closed_form_constant_delta(self):
        # delta = 2, gamma = 1, kappa(0) = 0: kappa(t) = (1 - exp(-4 t)) / 2
        h = 1e-4
        kap = 0.0
        m = mixed(2.0, [0.0], delta_dot=0.0)
        def f(k):
            return kappa_rhs(k, m, gamma=1.0)
        for _ in range(10000):
            k1 = f(kap)
            k2 = f(kap + 0.5 * h * k1)
            k3 = f(kap + 0.5 * h * k2)
            k4 = f(kap + h * k3)
            kap += h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        assert kap == pytest.approx(0.5 * (1.0 - math.exp(-4.0)), abs=1e-6)

    def test_missing_delta_dot_rejected(self):
        m = MixedSignals(scalY=np.zeros(1), delta=1.0, scalW=np.zeros(1), delta_dot=None)
        with pytest.raises(ValueError):
            kappa_rhs(0.0, m, gamma=1.0)


class TestAveraging:
    def test_rest_state_stays_at_rest(self):
        state = EstimatorState([0.0, 0.0], 3.7, 2.0)
        d = averaging_rhs(state, mixed(1.0, [0.0, 0.0], delta_dot=0.0), gamma=1.0, k=[1e-3, 1e-3])
        assert np.allclose(d.theta_hat, 0.0)

    def test_true_parameters_fixed_point_with_exact_inverse(self):
        theta = np.array([1.0, -1.0])
        delta = 0.4
        state = EstimatorState(theta, 1.0 / delta, 7.0)
        m = mixed(delta, delta * theta, delta_dot=0.123)
        d = averaging_rhs(state, m, gamma=10.0, k=[1e-3, 1e-3])
        assert np.allclose(d.theta_hat, 0.0, atol=1e-15)

    def test_growing_window_decay_closed_form(self):
        # ideal signals delta = 1, no disturbance, kappa pinned at 1:
        # theta_tilde(t) = theta_tilde(0) * k / (t + k)
        theta = np.array([2.0])
        k = np.array([0.5])
        h = 1e-4
        state = EstimatorState([0.0], 1.0, 0.0)
        m = mixed(1.0, theta, delta_dot=0.0)

        def f(th, kap, t):
            s = EstimatorState(th, kap, t)
            d = averaging_rhs(s, m, gamma=1.0, k=k)
            return d.theta_hat, d.kappa_hat

        th, kap, t = state.theta_hat, state.kappa_hat, 0.0
        for i in range(20000):
            t = i * h
            d1, dk1 = f(th, kap, t)
            d2, dk2 = f(th + 0.5 * h * d1, kap + 0.5 * h * dk1, t + 0.5 * h)
            d3, dk3 = f(th + 0.5 * h * d2, kap + 0.5 * h * dk2, t + 0.5 * h)
            d4, dk4 = f(th + h * d3, kap + h * dk3, t + h)
            th = th + h / 6.0 * (d1 + 2 * d2 + 2 * d3 + d4)
            kap = kap + h / 6.0 * (dk1 + 2 * dk2 + 2 * dk3 + dk4)
        t_end = 2.0
        expected = theta[0] + (0.0 - theta[0]) * k[0] / (t_end + k[0])
        assert th[0] == pytest.approx(expected, abs=1e-6)
        assert kap == pytest.approx(1.0, abs=1e-12)

    def test_k_validation(self):
        state = EstimatorState([0.0], 0.0, 0.0)
        with pytest.raises(ValueError):
            averaging_rhs(state, mixed(1.0, [0.0], delta_dot=0.0), gamma=1.0, k=[0.0])

    def test_k_length_validation(self):
        state = EstimatorState([0.0, 0.0], 0.0, 0.0)
        with pytest.raises(ValueError):
            averaging_rhs(state, mixed(1.0, [0.0, 0.0], delta_dot=0.0), gamma=1.0, k=[1.0])


class TestSteadyStateBounds:
    def test_gradient_residual_error_bound(self, run_a_gradient):
        # bounded-disturbance residual level of the gradient law:
        # terminal |theta_tilde_i| <= w_max * delta_ub / delta_lb^2
        from dremsim.diagnostics import detect_activation

        sim = run_a_gradient
        _, delta_lb, delta_ub = detect_activation(sim.ts, sim.trace.column("delta"))
        for i in range(sim.spec.theta.size):
            w_max = np.abs(sim.trace.column(f"scalW_{i + 1}")).max()
            bound = w_max * delta_ub / delta_lb**2
            assert abs(sim.trace.column(f"theta_tilde_{i + 1}")[-1]) <= bound

    def test_averaging_envelope_decreases_on_averaged_channel(self, run_a_averaging):
        # channel 2 meets the bounded-weighted-integral condition, so its
        # error envelope (trailing-window maximum) must shrink over time
        sim = run_a_averaging
        ts = sim.ts
        tt2 = np.abs(sim.trace.column("theta_tilde_2"))
        # window longer than the slowest disturbance period, so the envelope
        # is not aliased by the 2*pi/0.1 s component
        window = 80.0
        starts = np.arange(60.0, ts[-1] - window + 1e-9, window)
        envelope = [tt2[(ts >= a) & (ts < a + window)].max() for a in starts]
        assert len(envelope) >= 3
        assert all(b <= a + 1e-9 for a, b in zip(envelope, envelope[1:]))
        assert envelope[-1] < 0.5 * envelope[0]
        assert tt2[-1] <= 0.05


class TestInverseTracking:
    def test_exponential_decay_in_the_active_region(self, run_a_averaging_fine):
        """The inverse-gain error decays at least as fast as the measured
        inequality level while it is numerically visible."""
        sim = run_a_averaging_fine
        ts = sim.ts
        kt = np.abs(sim.trace.column("kappa_tilde"))
        d = sim.trace.column("delta")
        lhs = sim.trace.column("ineq_lhs")
        # decay window: from |kt| <= 1e-1 down to 1e-7 (well above the
        # integration floor, well below the early blow-up of 1/delta)
        lo = int(np.argmax((kt <= 1e-1) & (ts > 0.1)))
        hi = int(np.argmax(kt[lo:] <= 1e-7)) + lo
        assert 0 < lo < hi, "decay window not found"
        window = slice(lo, hi + 1)
        eta_win = (lhs[window] / d[window]).min()
        assert eta_win > 0
        coeff = np.polyfit(ts[window], np.log(kt[window]), 1)
        assert coeff[0] <= -0.8 * eta_win

    def test_kappa_tracks_inverse_after_activation(self, run_a_averaging):
        from dremsim.diagnostics import detect_activation

        sim = run_a_averaging
        t_detect, _, _ = detect_activation(sim.ts, sim.trace.column("delta"))
        after = sim.ts >= t_detect
        kt = np.abs(sim.trace.column("kappa_tilde")[after])
        assert kt.max() <= 1e-5
