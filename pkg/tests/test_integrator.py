import dataclasses
import math

import numpy as np
import pytest

from dremsim import integrate
from dremsim.integrator import (
    SimResult,
    StateLayout,
    StepError,
    Trace,
    regression_layout,
    rk4_step,
)
from dremsim.observer import ConstantMap, PlantSpec, PlantScenario
from dremsim.signals import (
    AveragingLaw,
    Constant,
    GradientLaw,
    Kreisselmeier,
    ScenarioSpec,
    Sin,
    ZERO,
)


class TestRk4Step:
    def test_zero_derivative(self):
        s = np.array([1.0, -2.0])
        out = rk4_step(lambda t, x: np.zeros_like(x), s, 0.0, 0.1)
        assert np.array_equal(out, s)

    def test_linear_decay_polynomial(self):
        # one step of ds/dt = -s from 1 with h = 0.1 gives the degree-4
        # stability polynomial 1 - h + h^2/2 - h^3/6 + h^4/24
        h = 0.1
        expected = 1.0 - h + h**2 / 2 - h**3 / 6 + h**4 / 24
        out = rk4_step(lambda t, x: -x, np.array([1.0]), 0.0, h)
        assert out[0] == pytest.approx(expected, abs=1e-15)
        assert out[0] == pytest.approx(0.9048375, abs=1e-15)

    def test_fourth_order_convergence(self):
        def err(h):
            s = np.array([1.0])
            n = int(round(2.0 / h))
            worst = 0.0
            for i in range(n):
                s = rk4_step(lambda t, x: -x, s, i * h, h)
                worst = max(worst, abs(s[0] - math.exp(-(i + 1) * h)))
            return worst

        ratio = err(0.02) / err(0.01)
        assert 12.0 <= ratio <= 20.0

    def test_nan_raises_step_error(self):
        def bad(t, x):
            return np.array([np.nan])

        with pytest.raises(StepError):
            rk4_step(bad, np.array([1.0]), 0.5, 0.1)

    def test_step_error_names_block(self):
        layout = StateLayout([("a", (1,)), ("b", (2,))])

        def bad(t, x):
            d = np.zeros_like(x)
            d[2] = np.inf
            return d

        with pytest.raises(StepError) as exc:
            rk4_step(bad, np.zeros(3), 0.25, 0.1, layout)
        assert exc.value.block == "b"
        assert exc.value.t == 0.25


class TestLayout:
    def test_pack_unpack_roundtrip(self):
        layout = regression_layout(3)
        rng = np.random.default_rng(0)
        vec = rng.normal(size=layout.dim)
        parts = layout.unpack(vec)
        assert np.array_equal(layout.pack(parts), vec)

    def test_block_shapes(self):
        layout = regression_layout(2)
        vec = np.arange(float(layout.dim))
        parts = layout.unpack(vec)
        assert parts["Phi"].shape == (2, 2)
        assert parts["Y"].shape == (2,)
        assert parts["kappa_hat"].shape == (1,)

    def test_block_of_index(self):
        layout = regression_layout(2)
        assert layout.block_of_index(0) == "Y"
        assert layout.block_of_index(layout.dim - 1) == "delta_jacobi"


def tiny_spec(**overrides):
    base = dict(
        name="tiny",
        regressor=[Sin(1.0, 1.0), Constant(1.0)],
        theta=[1.0, -1.0],
        disturbance=Sin(1.0, 1.0),
        extension=Kreisselmeier(l=1.0),
        law=AveragingLaw(gamma=100.0, k=[1e-3, 1e-3]),
        horizon=2.0,
        step=1e-3,
        sample_every=1e-2,
    )
    base.update(overrides)
    return ScenarioSpec(**base)


class TestIntegrate:
    def test_zero_horizon_single_record(self):
        sim = integrate(tiny_spec(horizon=0.0))
        assert sim.ts.shape == (1,)
        assert sim.trace.n_samples == 1
        assert sim.ts[0] == 0.0

    def test_deterministic_reruns(self):
        a = integrate(tiny_spec())
        b = integrate(tiny_spec())
        assert np.array_equal(a.states, b.states)
        assert np.array_equal(a.trace.data, b.trace.data) or (
            np.allclose(a.trace.data, b.trace.data, equal_nan=True)
            and np.array_equal(np.isnan(a.trace.data), np.isnan(b.trace.data))
        )

    def test_kernel_matches_generic_path_regression(self):
        for law in (AveragingLaw(gamma=100.0, k=[1e-3, 1e-3]), GradientLaw(gamma=100.0)):
            spec = tiny_spec(law=law)
            fast = integrate(spec)
            slow = integrate(spec, force_generic=True)
            assert np.abs(fast.states - slow.states).max() <= 1e-9

    def test_kernel_matches_generic_path_plant(self, scenario_c):
        plan = scenario_c.select("averaging")
        plan = dataclasses.replace(plan, horizon=0.2)
        fast = integrate(plan)
        slow = integrate(plan, force_generic=True)
        assert np.abs(fast.states - slow.states).max() <= 1e-9

    def test_callable_plant_maps_fall_back_to_generic(self, scenario_c):
        plan = scenario_c.select("gradient")
        plant = plan.plant
        lam_phi = lambda y, u: np.array([0.0, 16900.0 * u[0]])  # noqa: E731
        generic_plant = PlantSpec(
            A=plant.A, C=plant.C, K=plant.K, phi_map=lam_phi,
            G_map=ConstantMap(plant.G_map.matrix), theta=plant.theta,
            delta=plant.delta, u=plant.u, x0=plant.x0, chi0=plant.chi0)
        plan_d = dataclasses.replace(plan, horizon=0.05)
        plan_g = dataclasses.replace(plan, plant=generic_plant, horizon=0.05)
        a = integrate(plan_d)
        b = integrate(plan_g)
        assert np.abs(a.states - b.states).max() <= 1e-9

    def test_step_refinement_consistency(self):
        spec = tiny_spec(horizon=5.0)
        coarse = integrate(spec)
        fine = integrate(dataclasses.replace(spec, step=5e-4))
        assert np.array_equal(coarse.ts, fine.ts)
        diff = np.abs(coarse.states - fine.states).max()
        assert diff <= 1e-5
        th = coarse.layout.slice_of("theta_hat")
        assert np.abs(coarse.states[-1, th] - fine.states[-1, th]).max() <= 1e-6

    def test_instability_aborts_with_block_name(self):
        # forgetting rate far beyond the RK4 stability limit blows the state up;
        # the overflow surfaces first through the determinant in the estimator
        spec = tiny_spec(extension=Kreisselmeier(l=1e6), law=GradientLaw(gamma=1.0))
        layout_names = set(regression_layout(2).names())
        with pytest.raises(StepError) as exc:
            integrate(spec)
        assert exc.value.block in layout_names
        assert exc.value.t < 1.0
        assert isinstance(exc.value.partial, SimResult)

    def test_sampling_must_align(self):
        with pytest.raises(ValueError):
            integrate(tiny_spec(sample_every=3e-4))

    def test_trace_column_set_averaging(self):
        sim = integrate(tiny_spec(horizon=1.0))
        assert sim.trace.columns == [
            "t", "theta_hat_1", "theta_hat_2", "theta_tilde_1", "theta_tilde_2",
            "kappa_hat", "kappa_tilde", "delta", "delta_dot", "delta_jacobi",
            "scalY_1", "scalY_2", "scalW_1", "scalW_2", "ineq_lhs",
        ]

    def test_trace_column_set_gradient(self):
        sim = integrate(tiny_spec(horizon=1.0, law=GradientLaw(gamma=10.0)))
        assert sim.trace.columns == [
            "t", "theta_hat_1", "theta_hat_2", "theta_tilde_1", "theta_tilde_2",
            "delta", "delta_dot", "delta_jacobi",
            "scalY_1", "scalY_2", "scalW_1", "scalW_2",
        ]

    def test_records_strictly_increasing_uniform(self):
        sim = integrate(tiny_spec(horizon=1.0))
        dt = np.diff(sim.ts)
        assert np.all(dt > 0)
        assert np.allclose(dt, dt[0])

    def test_stiff_plant_stays_finite_at_default_step(self, run_c_averaging):
        # the fast plant pole sits well inside the RK4 stability region at
        # the configured step, so the full trace is finite
        assert np.all(np.isfinite(run_c_averaging.states))


class TestTrace:
    def test_column_lookup(self):
        tr = Trace(["t", "a"], np.array([[0.0, 1.0], [1.0, 2.0]]))
        assert np.array_equal(tr.column("a"), [1.0, 2.0])
        with pytest.raises(KeyError):
            tr.column("missing")

    def test_with_column_inserts_after(self):
        tr = Trace(["t", "a"], np.array([[0.0, 1.0]]))
        tr2 = tr.with_column("b", [5.0], after="t")
        assert tr2.columns == ["t", "b", "a"]
        assert np.array_equal(tr2.data, [[0.0, 5.0, 1.0]])
