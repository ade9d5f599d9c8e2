import math

import numpy as np
import pytest

from rpmnl.data import ChoiceDataset, ModelSpec, SpecValidationError
from rpmnl.estimator import (
    EstimationResult,
    OptimizerConfig,
    StartMode,
    bfgs_maximize,
    estimate,
    hessian,
    rho_squared,
)
from rpmnl.quasirandom import HaltonConfig, make_draws
from rpmnl.simll import ProbabilityEngine

from conftest import CONSTANTS_ONLY, shares_dataset
from oracles import mnl_standard_errors, newton_mnl, random_small_problem


class TestRhoSquared:
    def test_table_four(self):
        assert rho_squared(-627.31, -113.76) == pytest.approx(0.8186, abs=5e-3)
        assert round(rho_squared(-627.31, -113.76), 2) == 0.82

    def test_table_three_swapped_rows(self):
        assert rho_squared(-778.92, -314.42) == pytest.approx(0.596, abs=5e-3)
        assert round(rho_squared(-778.92, -314.42), 2) == 0.60

    def test_equal(self):
        assert rho_squared(-50.0, -50.0) == 0.0

    def test_zero(self):
        with pytest.raises(ValueError):
            rho_squared(0.0, -1.0)


class TestBfgs:
    def test_quadratic(self):
        A = np.array([[3.0, 1.0], [1.0, 2.0]])
        c = np.array([1.0, -2.0])
        out = bfgs_maximize(lambda x: (-0.5 * (x - c) @ A @ (x - c), -A @ (x - c)), np.zeros(2))
        assert out.converged
        # a gradient below tol bounds the error by tol / smallest eigenvalue
        bound = 1e-6 / np.linalg.eigvalsh(A).min()
        assert np.max(np.abs(out.x - c)) <= bound

    def test_monotone_trace(self):
        def rosen(x):
            f = -((1 - x[0]) ** 2 + 100 * (x[1] - x[0] ** 2) ** 2)
            g = -np.array([-2 * (1 - x[0]) - 400 * x[0] * (x[1] - x[0] ** 2), 200 * (x[1] - x[0] ** 2)])
            return f, g

        out = bfgs_maximize(rosen, np.array([-1.2, 1.0]), max_iterations=2000)
        assert out.converged
        assert np.all(np.diff(out.trace) >= 0)
        assert out.x == pytest.approx([1.0, 1.0], abs=1e-4)

    def test_iteration_limit(self):
        out = bfgs_maximize(lambda x: (-float(x @ x), -2 * x), np.full(3, 10.0), max_iterations=1)
        assert not out.converged and out.iterations == 1


class TestHessian:
    def test_quadratic_exact(self):
        A = np.array([[4.0, 1.0, 0.5], [1.0, 3.0, 0.2], [0.5, 0.2, 2.0]])
        H = hessian(lambda t: -A @ t, np.array([0.3, -1.0, 2.0]))
        assert np.allclose(H, -A, atol=1e-6)
        assert np.array_equal(H, H.T)

    def test_binary_logit_analytic(self):
        # one constant on M, data only in N and M: d2LL/db2 = -N p(1-p) in the two-alternative
        # reduction with a third alternative carrying zero utility and no choices
        ds = ChoiceDataset([str(i) for i in range(10)], [0] * 6 + [1] * 4, {"d": [0, 1] * 5})
        spec = ModelSpec.from_config_text("[aM]\nvariable = constant\nalternative = M\n")
        eng = ProbabilityEngine.from_data(ds, spec, None)
        b = 0.4
        H = hessian(lambda t: eng.simulated_loglik(t).gradient, np.array([b]))
        p = math.exp(b) / (2 + math.exp(b))
        assert H[0, 0] == pytest.approx(-10 * p * (1 - p), rel=1e-4)

    def test_non_finite_names_pair(self):
        def grad(t):
            return np.array([np.nan if t[1] > 0 else 0.0, 0.0])

        with pytest.raises(FloatingPointError, match="'b'"):
            hessian(grad, np.zeros(2), names=["a", "b"])

    def test_constants_only_negative_definite(self):
        ds = shares_dataset([80, 14, 6])
        spec = ModelSpec.from_config_text(CONSTANTS_ONLY)
        eng = ProbabilityEngine.from_data(ds, spec, None)
        H = hessian(lambda t: eng.simulated_loglik(t).gradient, np.array([-1.0, -2.0]))
        assert np.all(np.linalg.eigvalsh(H) < 0)


class TestEstimate:
    def test_constants_only_closed_form(self):
        ds = shares_dataset([800, 140, 60])
        res = estimate(ds, ModelSpec.from_config_text(CONSTANTS_ONLY), None)
        assert res.converged
        assert res.estimates["asc_M"] == pytest.approx(math.log(0.14 / 0.80), abs=1e-4)
        assert res.estimates["asc_MM"] == pytest.approx(math.log(0.06 / 0.80), abs=1e-4)
        assert res.estimates["asc_M"] == pytest.approx(-1.743, abs=1e-3)
        assert res.estimates["asc_MM"] == pytest.approx(-2.590, abs=1e-3)
        assert res.ll0 == pytest.approx(-1000 * math.log(3), abs=1e-9)
        assert res.rho2 == pytest.approx(1 - res.llb / res.ll0, abs=0)

    def test_matches_newton_oracle(self):
        rng = np.random.default_rng(17)
        for _ in range(4):
            ds, spec, _ = random_small_problem(rng, n_obs=150, with_random=False)
            res = estimate(ds, spec, None)
            want = newton_mnl(ds, spec)
            assert res.converged
            for k, v in want.items():
                assert res.estimates[k] == pytest.approx(v, abs=1e-6)

    def test_standard_errors_match_exact_information(self):
        # the numerical Hessian at the optimum reproduces the analytic logit information
        rng = np.random.default_rng(23)
        for _ in range(3):
            ds, spec, _ = random_small_problem(rng, n_obs=400, with_random=False)
            res = estimate(ds, spec, None)
            want = mnl_standard_errors(ds, spec, res.estimates)
            for k, v in want.items():
                assert res.std_errors[k] == pytest.approx(v, rel=1e-6)

    def test_t_statistics(self):
        rng = np.random.default_rng(1)
        ds, spec, _ = random_small_problem(rng, n_obs=200, with_random=False)
        res = estimate(ds, spec, None)
        assert res.se_available
        for k in res.names:
            assert res.t_stats[k] == pytest.approx(res.estimates[k] / res.std_errors[k], rel=1e-15)

    def test_affine_recoding(self):
        rng = np.random.default_rng(4)
        x = rng.normal(size=300)
        y = rng.integers(0, 3, 300)
        spec = ModelSpec.from_config_text(CONSTANTS_ONLY + "[xM]\nvariable = x\nalternative = M\n")
        r1 = estimate(ChoiceDataset([str(i) for i in range(300)], y, {"x": x}), spec, None)
        r2 = estimate(ChoiceDataset([str(i) for i in range(300)], y, {"x": 2 * x}), spec, None)
        assert r2.estimates["xM"] == pytest.approx(r1.estimates["xM"] / 2, abs=1e-6)
        assert r2.llb == pytest.approx(r1.llb, abs=1e-8)

    def test_random_parameter_fit(self, hetero_sample, hetero_spec):
        draws = make_draws(HaltonConfig(50), len(hetero_sample.dataset), 1)
        res = estimate(hetero_sample.dataset, hetero_spec, draws)
        assert res.converged
        assert res.llb >= res.ll0
        assert res.estimates["sd:c_M"] >= 0
        assert res.draws["draws_per_observation"] == 50
        assert res.halton_config() == HaltonConfig(50)

    def test_deterministic(self, hetero_sample, hetero_spec):
        draws = make_draws(HaltonConfig(20), len(hetero_sample.dataset), 1)
        a = estimate(hetero_sample.dataset, hetero_spec, draws)
        b = estimate(hetero_sample.dataset, hetero_spec, draws)
        assert a.to_json() == b.to_json()

    def test_zero_start(self, hetero_sample, hetero_spec):
        draws = make_draws(HaltonConfig(20), len(hetero_sample.dataset), 1)
        staged = estimate(hetero_sample.dataset, hetero_spec, draws)
        zero = estimate(hetero_sample.dataset, hetero_spec, draws, OptimizerConfig(start=StartMode.ZERO))
        assert zero.converged
        assert zero.llb == pytest.approx(staged.llb, abs=1e-4)

    def test_user_start(self):
        ds = shares_dataset([50, 30, 20])
        cfg = OptimizerConfig(start=StartMode.USER, initial_values={"asc_M": -0.5, "asc_MM": -0.9})
        res = estimate(ds, ModelSpec.from_config_text(CONSTANTS_ONLY), None, cfg)
        assert res.estimates["asc_M"] == pytest.approx(math.log(0.6), abs=1e-5)

    def test_non_convergence_flagged(self, hetero_sample, hetero_spec):
        draws = make_draws(HaltonConfig(10), len(hetero_sample.dataset), 1)
        res = estimate(hetero_sample.dataset, hetero_spec, draws,
                       OptimizerConfig(max_iterations=2, start=StartMode.ZERO))
        assert not res.converged
        assert any("did not converge" in n for n in res.notes)

    def test_singular_hessian(self):
        ds = ChoiceDataset([str(i) for i in range(6)], [0, 1, 2, 0, 1, 2], {"x": [0, 1, 0, 1, 0, 1], "y": [0, 1, 0, 1, 0, 1]})
        spec = ModelSpec.from_config_text("[xM]\nvariable = x\nalternative = M\n[yM]\nvariable = y\nalternative = M\n")
        res = estimate(ds, spec, None)
        assert not res.se_available
        assert all(v is None for v in res.std_errors.values())
        assert math.isfinite(res.estimates["xM"])

    def test_invalid_spec(self):
        ds = shares_dataset([5, 5, 5])
        with pytest.raises(SpecValidationError):
            estimate(ds, ModelSpec.from_config_text("[b]\nvariable = nope\nalternative = M\n"), None)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            OptimizerConfig(gradient_tolerance=0)
        with pytest.raises(ValueError):
            OptimizerConfig(start="USER")

    def test_json_round_trip(self, hetero_sample, hetero_spec):
        draws = make_draws(HaltonConfig(10), len(hetero_sample.dataset), 1)
        res = estimate(hetero_sample.dataset, hetero_spec, draws)
        back = EstimationResult.from_json(res.to_json())
        assert back.to_json() == res.to_json()
        assert back.model_spec().spec_hash() == hetero_spec.spec_hash()

    def test_json_rejects_other_schema(self):
        with pytest.raises(ValueError):
            EstimationResult.from_dict({"schema_version": 99})
