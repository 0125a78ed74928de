import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from qlqg.errors import CovarianceStepError
from qlqg.gaussian import (
    GaussianState,
    covariance_derivative,
    ground_state_covariances,
    innovation_step,
    purity,
    record_increment,
    steady_state_covariances,
    step_conditioned,
    thermal_covariances,
)
from qlqg.model import PhysicalParams

UNIT = PhysicalParams.nondimensional(k=1.0)


def integrate_covariance_flow(params, cov0, t_final, rtol=1e-12, atol=1e-14):
    """Independent ODE route to the covariance fixed point (test oracle)."""

    def rhs(_, y):
        state = GaussianState(0.0, 0.0, y[0], y[1], y[2])
        return covariance_derivative(state, params)

    sol = solve_ivp(rhs, (0.0, t_final), cov0, rtol=rtol, atol=atol, method="RK45")
    assert sol.success
    return sol.y[:, -1]


class TestCovarianceDerivative:
    def test_direct_substitution(self):
        state = GaussianState(0.0, 0.0, 0.5, 0.5, 0.0)
        assert covariance_derivative(state, UNIT) == pytest.approx((-2.0, 2.0, 0.0))

    def test_steady_state_is_fixed_point(self):
        for eta in (0.25, 0.5, 1.0):
            for k in (0.05, 0.5, 5.0):
                params = PhysicalParams.nondimensional(k=k, eta=eta)
                v_x, v_p, c = steady_state_covariances(params)
                state = GaussianState(0.3, -0.2, v_x, v_p, c)
                rates = covariance_derivative(state, params)
                scale = max(v_x, v_p, abs(c))
                assert max(abs(r) for r in rates) < 1e-12 * scale

    def test_free_ground_state_stationary(self):
        params = PhysicalParams.nondimensional(k=0.0)
        cov = ground_state_covariances(params)
        state = GaussianState(0.0, 0.0, *cov)
        assert covariance_derivative(state, params) == pytest.approx((0.0, 0.0, 0.0))

    def test_independent_of_means(self):
        p = PhysicalParams.nondimensional(k=0.7, eta=0.6)
        a = GaussianState(0.0, 0.0, 0.4, 0.9, 0.1)
        b = GaussianState(3.1, -2.7, 0.4, 0.9, 0.1)
        assert covariance_derivative(a, p) == covariance_derivative(b, p)


class TestSteadyState:
    def test_weak_measurement_limit_is_ground_state(self):
        params = PhysicalParams.nondimensional(k=1e-9)
        v_x, v_p, c = steady_state_covariances(params)
        assert v_x == pytest.approx(0.5, rel=1e-6)
        assert v_p == pytest.approx(0.5, rel=1e-6)
        assert c == pytest.approx(0.0, abs=1e-4)

    def test_unit_regime_tilde_values(self):
        # r = 1, xi = sqrt(5); frozen from the closed forms
        params = PhysicalParams.nondimensional(k=0.5)
        v_x, v_p, c = steady_state_covariances(params)
        assert 2.0 * v_x == pytest.approx(0.7861513777574233, rel=1e-12)
        assert 2.0 * v_p == pytest.approx(1.7578738892551835, rel=1e-5)
        assert 2.0 * c == pytest.approx(0.6180339887498949, rel=1e-12)

    def test_matches_ode_integration(self):
        params = PhysicalParams.nondimensional(k=0.5)
        final = integrate_covariance_flow(params, list(ground_state_covariances(params)), 50.0)
        target = steady_state_covariances(params)
        assert final == pytest.approx(target, rel=1e-8)

    def test_det_identity(self):
        for eta in (0.3, 0.8, 1.0):
            for k in (0.1, 1.0, 10.0):
                params = PhysicalParams.nondimensional(k=k, eta=eta)
                v_x, v_p, c = steady_state_covariances(params)
                assert v_x * v_p - c * c == pytest.approx(0.25 / eta, rel=1e-12)

    def test_rejects_k_zero(self):
        with pytest.raises(ValueError):
            steady_state_covariances(PhysicalParams.nondimensional(k=0.0))


class TestPurity:
    def test_ground_state_pure(self):
        assert purity(0.5, 0.5, 0.0, 1.0) == pytest.approx(1.0)

    def test_half_purity(self):
        assert purity(2.0, 0.5, 0.0, 1.0) == pytest.approx(0.5)

    def test_steady_state_purity_sqrt_eta(self):
        params = PhysicalParams.nondimensional(k=3.0, eta=0.25)
        v_x, v_p, c = steady_state_covariances(params)
        assert purity(v_x, v_p, c, 1.0) == pytest.approx(0.5, rel=1e-12)

    def test_rejects_invalid_covariance(self):
        with pytest.raises(ValueError):
            purity(1.0, 1.0, 1.0, 1.0)


class TestStepConditioned:
    def test_small_dt_limit(self):
        state = GaussianState(1.0, -0.5, 0.5, 0.5, 0.0)
        dt = 1e-14
        new = step_conditioned(state, UNIT, dt, 0.0)
        assert new.mean_x == pytest.approx(state.mean_x, abs=1e-12)
        assert new.mean_p == pytest.approx(state.mean_p, abs=1e-12)
        assert new.v_x == pytest.approx(state.v_x, abs=1e-12)

    def test_one_step_arithmetic(self):
        state = GaussianState(1.0, 0.0, 0.5, 0.5, 0.0)
        new = step_conditioned(state, UNIT, dt=0.01, dw=0.1)
        assert new.mean_x == pytest.approx(1.0 + 2.0 * math.sqrt(2.0) * 0.5 * 0.1, rel=1e-12)

    def test_quarter_period_rotation(self):
        params = PhysicalParams.nondimensional(k=0.0)
        x0 = 0.8
        dt = 1e-4
        n = int(round(math.pi / 2.0 / dt))
        state = GaussianState(x0, 0.0, 0.5, 0.5, 0.0)
        for _ in range(n):
            state = step_conditioned(state, params, dt, 0.0)
        assert state.mean_x == pytest.approx(0.0, abs=5 * dt)
        assert state.mean_p == pytest.approx(-x0, abs=5 * dt)

    def test_rejects_coarse_step(self):
        state = GaussianState(0.0, 0.0, 10.0, 10.0, 0.0)
        with pytest.raises(CovarianceStepError):
            step_conditioned(state, PhysicalParams.nondimensional(k=5.0), dt=0.5, dw=0.0)


class TestInnovationStep:
    def test_zero_innovation_is_pure_drift(self):
        state = GaussianState(0.7, -0.3, 0.4, 0.7, 0.05)
        dt = 1e-3
        dq = 4.0 * UNIT.eta * UNIT.k * state.mean_x * dt
        new = innovation_step(state, UNIT, dt, dq)
        assert new.mean_x == pytest.approx(state.mean_x + state.mean_p * dt, rel=1e-12)
        assert new.mean_p == pytest.approx(state.mean_p - state.mean_x * dt, rel=1e-12)

    def test_one_step_arithmetic(self):
        state = GaussianState(0.0, 0.0, 0.5, 0.5, 0.0)
        new = innovation_step(state, UNIT, dt=0.01, dq=0.2)
        assert new.mean_x == pytest.approx(0.2, rel=1e-14)

    def test_equivalent_to_conditioned_step(self):
        rng = np.random.default_rng(11)
        params = PhysicalParams.nondimensional(k=0.8, eta=0.6)
        state_a = GaussianState(0.4, -1.1, 0.9, 1.7, -0.2)
        state_b = state_a
        dt = 2e-4
        for _ in range(500):
            dw = rng.standard_normal() * math.sqrt(dt)
            rec = record_increment(state_a, params, dt, dw)
            u = (0.3, -0.1)
            state_a = innovation_step(state_a, params, dt, rec.dq, u)
            state_b = step_conditioned(state_b, params, dt, dw, u)
            assert state_a.mean_x == pytest.approx(state_b.mean_x, abs=1e-14, rel=1e-12)
            assert state_a.mean_p == pytest.approx(state_b.mean_p, abs=1e-14, rel=1e-12)
            assert state_a.covariances() == state_b.covariances()


class TestRecordIncrement:
    def test_zero_case(self):
        state = GaussianState(0.0, 0.0, 0.5, 0.5, 0.0)
        assert record_increment(state, UNIT, 0.01, 0.0).dq == 0.0

    def test_drift_part(self):
        state = GaussianState(1.0, 0.0, 0.5, 0.5, 0.0)
        assert record_increment(state, UNIT, 0.01, 0.0).dq == pytest.approx(0.04)

    def test_noise_part(self):
        params = PhysicalParams.nondimensional(k=2.0, eta=0.5)
        state = GaussianState(0.0, 0.0, 0.5, 0.5, 0.0)
        assert record_increment(state, params, 0.3, 1.0).dq == pytest.approx(math.sqrt(2.0))


class TestFlowProperties:
    def test_covariances_noise_independent(self):
        params = PhysicalParams.nondimensional(k=0.5, eta=0.7)
        rng = np.random.default_rng(5)
        dt = 5e-4
        a = GaussianState(0.0, 0.0, *thermal_covariances(params, 4.0))
        b = a
        for _ in range(400):
            a = step_conditioned(a, params, dt, rng.standard_normal() * math.sqrt(dt))
            b = step_conditioned(b, params, dt, rng.standard_normal() * math.sqrt(dt))
        assert a.covariances() == b.covariances()

    def test_uncertainty_bound_along_flow(self):
        params = PhysicalParams.nondimensional(k=2.0, eta=1.0)
        dt = 1e-4
        state = GaussianState(0.0, 0.0, *thermal_covariances(params, 6.0))
        rng = np.random.default_rng(17)
        for _ in range(4000):
            state = step_conditioned(state, params, dt, rng.standard_normal() * math.sqrt(dt))
            rate = 8.0 * params.eta * params.k * state.v_x + params.omega
            assert state.uncertainty_product() >= 0.25 * (1.0 - 10.0 * dt * rate)

    def test_purity_monotone_and_limit(self):
        # eta = 1: purity climbs to 1; eta < 1: settles at sqrt(eta)
        dt = 2e-4
        for eta, target in ((1.0, 1.0), (0.49, 0.7)):
            params = PhysicalParams.nondimensional(k=1.0, eta=eta)
            state = GaussianState(0.0, 0.0, *thermal_covariances(params, 5.0))
            last = purity(state.v_x, state.v_p, state.c, 1.0)
            for _ in range(int(40.0 / dt)):
                state = step_conditioned(state, params, dt, 0.0)
                cur = purity(state.v_x, state.v_p, state.c, 1.0)
                if eta == 1.0:
                    assert cur >= last - 1e-12
                last = cur
            assert last == pytest.approx(target, rel=1e-6)

    def test_constant_covariance_exponential_oracle(self):
        # with covariances pinned at steady state the means are a linear SDE
        # whose solution is the matrix-exponential convolution of the noise;
        # the Euler chain must land within O(dt) of it on the same path
        from scipy.linalg import expm

        params = PhysicalParams.nondimensional(k=0.5)
        cov = steady_state_covariances(params)
        dt, n = 2e-4, 10000
        rng = np.random.default_rng(23)
        dws = rng.standard_normal(n) * math.sqrt(dt)

        state = GaussianState(1.0, -0.5, *cov)
        for i in range(n):
            state = step_conditioned(state, params, dt, dws[i])

        a = np.array([[0.0, 1.0], [-1.0, 0.0]])
        prop = expm(a * dt)
        sigma = 2.0 * math.sqrt(2.0 * params.eta * params.k) * np.array([cov[0], cov[2]])
        mean = np.array([1.0, -0.5])
        for i in range(n):
            mean = prop @ (mean + sigma * dws[i])
        assert state.mean_x == pytest.approx(mean[0], abs=6e-3)
        assert state.mean_p == pytest.approx(mean[1], abs=6e-3)

    def test_ode_and_euler_agree(self):
        params = PhysicalParams.nondimensional(k=0.8, eta=0.5)
        dt = 1e-5
        n = 20000
        state = GaussianState(0.0, 0.0, *thermal_covariances(params, 2.0))
        for _ in range(n):
            state = step_conditioned(state, params, dt, 0.0)
        oracle = integrate_covariance_flow(
            params, list(thermal_covariances(params, 2.0)), n * dt
        )
        assert state.covariances() == pytest.approx(oracle, rel=5e-4)


def test_state_validation():
    with pytest.raises(ValueError):
        GaussianState(0.0, 0.0, -1.0, 1.0, 0.0)
    with pytest.raises(ValueError):
        GaussianState(0.0, 0.0, 1.0, 0.0, 0.0)
