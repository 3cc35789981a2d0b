import math

import numpy as np
import pytest

from dremsim.signals import (
    AveragingLaw,
    Constant,
    ExpDecay,
    FeDecay,
    GradientLaw,
    Kreisselmeier,
    ScenarioSpec,
    Scale,
    Sin,
    Sum,
    ZERO,
    eval_disturbance,
    eval_output,
    eval_regressor,
)


def make_scenario_a(law=None):
    return ScenarioSpec(
        name="a",
        regressor=[Sin(1.0, 1.0), Constant(1.0)],
        theta=[1.0, -1.0],
        disturbance=Sum([Sin(1.0, 1.0), Sin(0.2, 0.1)]),
        extension=Kreisselmeier(l=1.0),
        law=law or GradientLaw(gamma=100.0),
        horizon=300.0,
        step=1e-3,
    )


def make_scenario_b():
    return ScenarioSpec(
        name="b",
        regressor=[ExpDecay(1.0), Constant(1.0)],
        theta=[1.0, -1.0],
        disturbance=Sum([Sin(1.0, 1.0), Sin(0.2, 0.1)]),
        extension=FeDecay(mu=10.0),
        law=AveragingLaw(gamma=250.0, k=[1e-3, 1e-3]),
        horizon=300.0,
        step=1e-3,
    )


class TestEval:
    def test_regressor_a_at_quarter_period(self):
        spec = make_scenario_a()
        assert eval_regressor(spec, math.pi / 2) == pytest.approx([1.0, 1.0])

    def test_regressor_b_at_zero(self):
        spec = make_scenario_b()
        assert eval_regressor(spec, 0.0) == pytest.approx([1.0, 1.0])

    def test_regressor_total_and_finite(self):
        spec = make_scenario_a()
        for t in np.linspace(0.0, 1000.0, 37):
            phi = eval_regressor(spec, t)
            assert phi.shape == (2,)
            assert np.all(np.isfinite(phi))

    def test_disturbance_a_at_zero(self):
        assert eval_disturbance(make_scenario_a(), 0.0) == 0.0

    def test_disturbance_a_pointwise(self):
        spec = make_scenario_a()
        t = math.pi / 2
        expected = math.sin(t) + 0.2 * math.sin(0.1 * t)
        assert eval_disturbance(spec, t) == pytest.approx(expected, abs=1e-15)

    def test_zero_disturbance(self):
        spec = make_scenario_a()
        spec.disturbance = ZERO
        assert eval_disturbance(spec, 12.34) == 0.0

    def test_output_a_at_zero(self):
        assert eval_output(make_scenario_a(), 0.0) == pytest.approx(-1.0)

    def test_output_b_at_zero(self):
        assert eval_output(make_scenario_b(), 0.0) == pytest.approx(0.0)

    def test_output_zero_parameters(self):
        spec = make_scenario_a()
        spec.theta = np.zeros(2)
        spec.disturbance = ZERO
        for t in (0.0, 1.0, 17.2):
            assert eval_output(spec, t) == 0.0

    def test_output_identity(self):
        spec = make_scenario_a()
        for t in np.linspace(0.0, 50.0, 23):
            lhs = eval_output(spec, t) - eval_regressor(spec, t) @ spec.theta
            assert lhs == pytest.approx(eval_disturbance(spec, t), abs=1e-12)


class TestGrammar:
    def test_flatten_matches_direct_evaluation(self):
        expr = Scale(2.0, Sum([Sin(1.5, 3.0, 0.4), ExpDecay(0.7), Constant(-0.25)]))
        terms = expr.flatten()
        for t in np.linspace(0.0, 5.0, 11):
            total = 0.0
            for kind, a, b, c in terms:
                if kind == 0.0:
                    total += a
                elif kind == 1.0:
                    total += a * math.sin(b * t + c)
                else:
                    total += a * math.exp(-b * t)
            assert total == pytest.approx(float(expr.at(t)), abs=1e-14)

    def test_sup_bound_dominates_samples(self):
        expr = Sum([Sin(1.0, 1.0), Sin(0.2, 0.1), Scale(-0.5, ExpDecay(2.0))])
        ts = np.linspace(0.0, 100.0, 5001)
        assert np.abs(expr.at(ts)).max() <= expr.sup_bound() + 1e-12

    def test_vectorized_evaluation(self):
        expr = Sum([Sin(1.0, 2.0, 0.1), Constant(0.5)])
        ts = np.linspace(0.0, 3.0, 7)
        vals = expr.at(ts)
        assert vals.shape == ts.shape
        assert vals[3] == pytest.approx(float(expr.at(ts[3])))

    def test_negative_decay_rate_rejected(self):
        with pytest.raises(ValueError):
            ExpDecay(-1.0)


class TestValidation:
    def test_nonpositive_l(self):
        with pytest.raises(ValueError):
            Kreisselmeier(l=0.0)

    def test_nonpositive_mu(self):
        with pytest.raises(ValueError):
            FeDecay(mu=-1.0)

    def test_nonpositive_gamma(self):
        with pytest.raises(ValueError):
            GradientLaw(gamma=0.0)

    def test_nonpositive_k(self):
        with pytest.raises(ValueError, match="k_i"):
            AveragingLaw(gamma=1.0, k=[1e-3, 0.0])

    def test_nonpositive_step(self):
        spec = make_scenario_a()
        with pytest.raises(ValueError):
            ScenarioSpec(
                name="bad", regressor=spec.regressor, theta=spec.theta,
                disturbance=spec.disturbance, extension=spec.extension,
                law=spec.law, horizon=1.0, step=0.0)

    def test_horizon_shorter_than_step(self):
        spec = make_scenario_a()
        with pytest.raises(ValueError):
            ScenarioSpec(
                name="bad", regressor=spec.regressor, theta=spec.theta,
                disturbance=spec.disturbance, extension=spec.extension,
                law=spec.law, horizon=1e-4, step=1e-3)

    def test_length_mismatch(self):
        spec = make_scenario_a()
        with pytest.raises(ValueError):
            ScenarioSpec(
                name="bad", regressor=spec.regressor, theta=[1.0],
                disturbance=spec.disturbance, extension=spec.extension,
                law=spec.law, horizon=1.0, step=1e-3)
