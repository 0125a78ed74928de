"""Conditioned Gaussian state propagation for a monitored oscillator.

The conditioned state of a harmonically trapped particle under continuous
position measurement stays Gaussian, so it is fully described by the means
(<x>, <p>) and the covariances (V_x, V_p, C).  The covariance flow is a
deterministic Riccati system independent of both the means and the noise
realization; the means obey linear stochastic equations driven either by
the Wiener increment dW or, equivalently, by the scaled measurement record

    dQ = 4 eta k <x> dt + sqrt(2 eta k) dW.

Both mean-update forms are provided (:func:`step_conditioned` and
:func:`innovation_step`); they are the same algebra written in different
variables, which is what makes the filter identical to a classical Kalman
filter driven by the innovation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import CovarianceStepError
from .model import PhysicalParams, regime_numbers

__all__ = [
    "GaussianState",
    "RecordIncrement",
    "covariance_derivative",
    "step_conditioned",
    "innovation_step",
    "record_increment",
    "steady_state_covariances",
    "ground_state_covariances",
    "thermal_covariances",
    "purity",
    "max_recommended_dt",
]


@dataclass(frozen=True)
class GaussianState:
    """Conditional means and covariances at time t.

    Units: mean_x in length, mean_p in momentum, v_x in length^2,
    v_p in momentum^2, c (symmetrized covariance) in length*momentum.
    """

    mean_x: float
    mean_p: float
    v_x: float
    v_p: float
    c: float
    t: float = 0.0

    def __post_init__(self):
        if not self.v_x > 0:
            raise ValueError(f"v_x must be positive, got {self.v_x}")
        if not self.v_p > 0:
            raise ValueError(f"v_p must be positive, got {self.v_p}")

    def covariances(self) -> tuple[float, float, float]:
        return (self.v_x, self.v_p, self.c)

    def uncertainty_product(self) -> float:
        """det of the covariance matrix, V_x V_p - C^2."""
        return self.v_x * self.v_p - self.c * self.c


@dataclass(frozen=True)
class RecordIncrement:
    """One increment of the scaled measurement record and its noise."""

    dq: float
    dw: float


def _cov_rates(v_x, v_p, c, params: PhysicalParams):
    """Right-hand side of the covariance Riccati flow (array-friendly)."""
    m, omega, hbar, k, eta = params.m, params.omega, params.hbar, params.k, params.eta
    dvx = 2.0 * c / m - 8.0 * k * eta * v_x * v_x
    dvp = -2.0 * m * omega**2 * c - 8.0 * k * eta * c * c + 2.0 * k * hbar**2
    dc = v_p / m - m * omega**2 * v_x - 8.0 * k * eta * c * v_x
    return dvx, dvp, dc


def covariance_derivative(
    state: GaussianState, params: PhysicalParams
) -> tuple[float, float, float]:
    """(dV_x/dt, dV_p/dt, dC/dt) for the harmonic covariance flow.

    The flow is closed: it does not involve the means or the record, so
    the covariance trajectory is the same for every noise realization.
    """
    return _cov_rates(state.v_x, state.v_p, state.c, params)


def _mean_rates_and_diffusion(mx, mp, v_x, c, params: PhysicalParams, u, alpha=0.0, beta=0.0):
    """Drift and diffusion of the means, array-friendly.

    u = (u_x, u_p) is additive linear feedback on the two drifts.  alpha
    and beta are direct (record) feedback gains; zero for pure filtering.
    """
    m, omega, k, eta = params.m, params.omega, params.k, params.eta
    s = math.sqrt(2.0 * eta * k)
    drift_x = mp / m + u[0] + 4.0 * eta * k * beta * mx
    drift_p = -m * omega**2 * mx + u[1] - 4.0 * eta * k * alpha * mx
    diff_x = s * (2.0 * v_x + beta)
    diff_p = s * (2.0 * c - alpha)
    return drift_x, drift_p, diff_x, diff_p


def _checked_cov_step(state: GaussianState, params: PhysicalParams, dt: float):
    """Euler-advance the covariances with positivity and uncertainty checks."""
    dvx, dvp, dc = _cov_rates(state.v_x, state.v_p, state.c, params)
    v_x = state.v_x + dvx * dt
    v_p = state.v_p + dvp * dt
    c = state.c + dc * dt
    if v_x <= 0 or v_p <= 0:
        raise CovarianceStepError(
            f"covariance turned non-positive at t={state.t + dt:g} "
            f"(v_x={v_x:g}, v_p={v_p:g}); reduce dt"
        )
    # Euler transiently violates the uncertainty bound at O(dt); only
    # violations beyond the discretization tolerance abort the run.
    rate = 8.0 * params.eta * params.k * state.v_x + params.omega
    floor = 0.25 * params.hbar**2 * (1.0 - 10.0 * dt * rate)
    if v_x * v_p - c * c < floor:
        raise CovarianceStepError(
            f"uncertainty bound violated beyond tolerance at t={state.t + dt:g}; reduce dt"
        )
    return v_x, v_p, c


def step_conditioned(
    state: GaussianState,
    params: PhysicalParams,
    dt: float,
    dw: float,
    u: tuple[float, float] = (0.0, 0.0),
) -> GaussianState:
    """One Euler-Maruyama step of the conditioned means and covariances.

    d<x> = (<p>/m + u_x) dt + 2 sqrt(2 eta k) V_x dW
    d<p> = (-m omega^2 <x> + u_p) dt + 2 sqrt(2 eta k) C dW

    and the deterministic covariance update.  Raises
    :class:`CovarianceStepError` when dt is too coarse for the covariance
    flow.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    drift_x, drift_p, diff_x, diff_p = _mean_rates_and_diffusion(
        state.mean_x, state.mean_p, state.v_x, state.c, params, u
    )
    v_x, v_p, c = _checked_cov_step(state, params, dt)
    return GaussianState(
        mean_x=state.mean_x + drift_x * dt + diff_x * dw,
        mean_p=state.mean_p + drift_p * dt + diff_p * dw,
        v_x=v_x,
        v_p=v_p,
        c=c,
        t=state.t + dt,
    )


def innovation_step(
    state: GaussianState,
    params: PhysicalParams,
    dt: float,
    dq: float,
    u: tuple[float, float] = (0.0, 0.0),
) -> GaussianState:
    """One filter step driven by the measurement record instead of dW.

    d<x> = (<p>/m + u_x) dt - 8 eta k <x> V_x dt + 2 V_x dQ
    d<p> = (-m omega^2 <x> + u_p) dt - 8 eta k <x> C dt + 2 C dQ

    Substituting dQ = 4 eta k <x> dt + sqrt(2 eta k) dW recovers
    :func:`step_conditioned` exactly.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    m, omega, k, eta = params.m, params.omega, params.k, params.eta
    common = 8.0 * eta * k * state.mean_x * dt
    dmx = (state.mean_p / m + u[0]) * dt - common * state.v_x + 2.0 * state.v_x * dq
    dmp = (-m * omega**2 * state.mean_x + u[1]) * dt - common * state.c + 2.0 * state.c * dq
    v_x, v_p, c = _checked_cov_step(state, params, dt)
    return GaussianState(
        mean_x=state.mean_x + dmx,
        mean_p=state.mean_p + dmp,
        v_x=v_x,
        v_p=v_p,
        c=c,
        t=state.t + dt,
    )


def record_increment(
    state: GaussianState, params: PhysicalParams, dt: float, dw: float
) -> RecordIncrement:
    """Scaled record increment dQ = 4 eta k <x> dt + sqrt(2 eta k) dW."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    dq = 4.0 * params.eta * params.k * state.mean_x * dt + math.sqrt(2.0 * params.eta * params.k) * dw
    return RecordIncrement(dq=dq, dw=dw)


def ground_state_covariances(params: PhysicalParams) -> tuple[float, float, float]:
    """(hbar/(2 m omega), hbar m omega / 2, 0): the trap ground state."""
    if params.omega == 0:
        raise ValueError("ground state undefined for omega = 0")
    return (
        params.hbar / (2.0 * params.m * params.omega),
        params.hbar * params.m * params.omega / 2.0,
        0.0,
    )


def thermal_covariances(params: PhysicalParams, nbar: float) -> tuple[float, float, float]:
    """Highly mixed initial covariances V_x = nbar hbar/(m omega), V_p = nbar hbar m omega.

    nbar must be at least 1/2 so the covariance matrix is physical.
    """
    if nbar < 0.5:
        raise ValueError(f"nbar must be >= 0.5 for a physical state, got {nbar}")
    if params.omega == 0:
        raise ValueError("thermal covariances undefined for omega = 0")
    return (
        nbar * params.hbar / (params.m * params.omega),
        nbar * params.hbar * params.m * params.omega,
        0.0,
    )


def steady_state_covariances(params: PhysicalParams) -> tuple[float, float, float]:
    """Closed-form fixed point of the covariance flow.

    V_x = (hbar / (sqrt(2 eta) m omega)) / sqrt(xi + 1)
    V_p = (hbar m omega / sqrt(2 eta)) * xi / sqrt(xi + 1)
    C   = (hbar / (2 sqrt(eta))) * sqrt(xi - 1) / sqrt(xi + 1)

    with xi = sqrt(1 + 4/(eta r^2)), r = m omega^2 / (2 hbar eta k).
    The returned triple always satisfies V_x V_p - C^2 = hbar^2 / (4 eta).
    """
    if params.k == 0:
        raise ValueError("no measurement steady state for k = 0; use ground_state_covariances")
    xi = regime_numbers(params).xi
    m, omega, hbar, eta = params.m, params.omega, params.hbar, params.eta
    root = math.sqrt(xi + 1.0)
    v_x = hbar / (math.sqrt(2.0 * eta) * m * omega) / root
    v_p = hbar * m * omega / math.sqrt(2.0 * eta) * xi / root
    c = hbar / (2.0 * math.sqrt(eta)) * math.sqrt(xi - 1.0) / root
    return v_x, v_p, c


def purity(v_x: float, v_p: float, c: float, hbar: float) -> float:
    """Tr[rho^2] = (hbar/2) (V_x V_p - C^2)^(-1/2) for a Gaussian state."""
    det = v_x * v_p - c * c
    if det <= 0:
        raise ValueError(f"V_x V_p - C^2 must be positive, got {det}")
    return 0.5 * hbar / math.sqrt(det)


def max_recommended_dt(
    params: PhysicalParams, v_x_max: float, gain_scale: float = 0.0
) -> float:
    """Fixed-step-size rule for the Euler-Maruyama integrator.

    dt <= 1e-3 * min(1/omega, 1/(8 eta k V_x^max), m/|gain|), dropping
    terms whose rate vanishes.
    """
    bounds = []
    if params.omega > 0:
        bounds.append(1.0 / params.omega)
    rate = 8.0 * params.eta * params.k * v_x_max
    if rate > 0:
        bounds.append(1.0 / rate)
    if gain_scale > 0:
        bounds.append(params.m / gain_scale)
    if not bounds:
        return math.inf
    return 1e-3 * min(bounds)
