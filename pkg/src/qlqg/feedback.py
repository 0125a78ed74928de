"""Closed-loop simulation: estimation feedback, direct feedback, ensembles.

Two feedback routes are supported and may be combined:

* estimation feedback, u = -K (<x>, <p>), acting through the filter's
  best estimates; synthesized by :mod:`qlqg.lqg`;
* direct feedback, a Hamiltonian proportional to the instantaneous
  measurement current, which adds drift terms proportional to <x> and
  shifts the mean diffusion to sqrt(2 eta k) (2V_x + beta, 2C - alpha).
  The choice alpha = 2C, beta = -2V_x cancels the mean diffusion exactly.

Linear feedback of either kind leaves the conditional covariance flow
untouched, so the ensemble spread of the conditional means ("excess"
covariances, on top of the conditional ones) is what distinguishes
controllers.  Closed forms for the stationary excess covariances are
provided for equal x/p damping and for position-only actuation, both in
tilde-scaled dimensionless form

    Vx~ = (2 m omega / hbar) V_x,  Vp~ = (2 / (hbar m omega)) V_p,
    C~  = (2 / hbar) C.
"""

from __future__ import annotations

import enum
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import CovarianceStepError
from .gaussian import (
    GaussianState,
    _cov_rates,
    _mean_rates_and_diffusion,
    steady_state_covariances,
)
from .lqg import ControlDesign, CostAccumulator, harmonic_design
from .model import PhysicalParams

__all__ = [
    "FeedbackMode",
    "ControllerSpec",
    "ExcessCovariances",
    "ExcessVariant",
    "TrajectoryRecord",
    "EnsembleStats",
    "ClassicalTwin",
    "simulate_trajectory",
    "run_ensemble",
    "direct_feedback_mean_terms",
    "noise_cancelling_gains",
    "excess_cov_derivative",
    "excess_cov_steady_state",
    "total_covariances",
    "tilde_covariances",
    "classical_twin_step",
    "new_classical_twin",
]


class FeedbackMode(enum.Enum):
    NONE = "none"
    ESTIMATION = "estimation"
    DIRECT = "direct"
    COMBINED = "combined"


@dataclass(frozen=True)
class ControllerSpec:
    """Feedback configuration for a run.

    ``k_gain`` is the 2x2 estimation gain (u = -K (<x>, <p>)).  As a
    convenience, diagonal damping rates ``gamma_x``/``gamma_p`` may be
    given instead of an explicit matrix.  ``alpha``/``beta`` are the
    direct-feedback gains multiplying the measurement current.
    """

    mode: FeedbackMode = FeedbackMode.NONE
    k_gain: np.ndarray | None = None
    alpha: float = 0.0
    beta: float = 0.0
    gamma_x: float = 0.0
    gamma_p: float = 0.0

    def __post_init__(self):
        if self.gamma_x < 0 or self.gamma_p < 0:
            raise ValueError("damping rates gamma_x, gamma_p must be nonnegative")
        uses_estimation = self.mode in (FeedbackMode.ESTIMATION, FeedbackMode.COMBINED)
        uses_direct = self.mode in (FeedbackMode.DIRECT, FeedbackMode.COMBINED)
        if uses_estimation and self.k_gain is None and self.gamma_x == 0 and self.gamma_p == 0:
            raise ValueError(f"{self.mode.value} mode needs k_gain or damping rates")
        if not uses_estimation and (
            self.k_gain is not None or self.gamma_x != 0 or self.gamma_p != 0
        ):
            raise ValueError(f"estimation gains set but mode is {self.mode.value}")
        if not uses_direct and (self.alpha != 0.0 or self.beta != 0.0):
            raise ValueError(f"direct gains set but mode is {self.mode.value}")
        if self.k_gain is not None:
            k = np.asarray(self.k_gain, dtype=float)
            if k.shape != (2, 2):
                raise ValueError(f"k_gain must be 2x2, got shape {k.shape}")
            object.__setattr__(self, "k_gain", k)

    @staticmethod
    def none() -> "ControllerSpec":
        return ControllerSpec(mode=FeedbackMode.NONE)

    @staticmethod
    def estimation(k_gain: np.ndarray) -> "ControllerSpec":
        return ControllerSpec(mode=FeedbackMode.ESTIMATION, k_gain=np.asarray(k_gain, float))

    @staticmethod
    def damping(gamma_x: float, gamma_p: float) -> "ControllerSpec":
        """Equal-structure estimation feedback u = (-gamma_x <x>, -gamma_p <p>)."""
        return ControllerSpec(
            mode=FeedbackMode.ESTIMATION,
            k_gain=np.diag([gamma_x, gamma_p]).astype(float),
            gamma_x=gamma_x,
            gamma_p=gamma_p,
        )

    @staticmethod
    def direct(alpha: float, beta: float) -> "ControllerSpec":
        return ControllerSpec(mode=FeedbackMode.DIRECT, alpha=alpha, beta=beta)

    @staticmethod
    def combined(k_gain: np.ndarray, alpha: float, beta: float) -> "ControllerSpec":
        return ControllerSpec(
            mode=FeedbackMode.COMBINED,
            k_gain=np.asarray(k_gain, float),
            alpha=alpha,
            beta=beta,
        )

    def gain_matrix(self) -> np.ndarray:
        """Resolved 2x2 estimation gain (zeros when estimation is off)."""
        if self.mode in (FeedbackMode.ESTIMATION, FeedbackMode.COMBINED):
            if self.k_gain is not None:
                return self.k_gain
            return np.diag([self.gamma_x, self.gamma_p]).astype(float)
        return np.zeros((2, 2))

    def direct_gains(self) -> tuple[float, float]:
        if self.mode in (FeedbackMode.DIRECT, FeedbackMode.COMBINED):
            return (self.alpha, self.beta)
        return (0.0, 0.0)


def direct_feedback_mean_terms(
    controller: ControllerSpec,
    params: PhysicalParams,
    cov: tuple[float, float, float],
) -> tuple[np.ndarray, np.ndarray]:
    """Additional mean drift matrix and total mean diffusion under direct feedback.

    Returns (D, sigma) with drift addition D @ (<x>, <p>) =
    (4 eta k beta <x>, -4 eta k alpha <x>) and total diffusion vector
    sigma = sqrt(2 eta k) (2 V_x + beta, 2 C - alpha).
    """
    if controller.mode not in (FeedbackMode.DIRECT, FeedbackMode.COMBINED):
        raise ValueError("direct feedback terms require Direct or Combined mode")
    alpha, beta = controller.alpha, controller.beta
    v_x, _, c = cov
    ek = params.eta * params.k
    s = math.sqrt(2.0 * ek)
    drift = np.array([[4.0 * ek * beta, 0.0], [-4.0 * ek * alpha, 0.0]])
    diffusion = np.array([s * (2.0 * v_x + beta), s * (2.0 * c - alpha)])
    return drift, diffusion


def noise_cancelling_gains(cov: tuple[float, float, float]) -> tuple[float, float]:
    """(alpha, beta) = (2C, -2V_x): zeros the mean diffusion identically."""
    v_x, _, c = cov
    return (2.0 * c, -2.0 * v_x)


# ---------------------------------------------------------------------------
# Excess (ensemble) covariances of the conditional means
# ---------------------------------------------------------------------------


class ExcessVariant(enum.Enum):
    FULL_DAMPING = "full_damping"
    POSITION_ONLY = "position_only"


@dataclass(frozen=True)
class ExcessCovariances:
    """Tilde-scaled ensemble covariances of the conditional means."""

    ve_x: float
    ve_p: float
    ce: float

    def __post_init__(self):
        if self.ve_x < 0 or self.ve_p < 0:
            raise ValueError("excess variances must be nonnegative")
        scale = max(self.ve_x * self.ve_p, self.ce * self.ce, 1e-300)
        if self.ve_x * self.ve_p - self.ce * self.ce < -1e-9 * scale:
            raise ValueError("excess covariances do not form a valid covariance matrix")

    def triple(self) -> tuple[float, float, float]:
        return (self.ve_x, self.ve_p, self.ce)


def tilde_covariances(
    cov: tuple[float, float, float], params: PhysicalParams
) -> tuple[float, float, float]:
    """Dimensionless scaling (2 m w/hbar) V_x, (2/(hbar m w)) V_p, (2/hbar) C."""
    v_x, v_p, c = cov
    m, omega, hbar = params.m, params.omega, params.hbar
    return (2.0 * m * omega / hbar * v_x, 2.0 / (hbar * m * omega) * v_p, 2.0 / hbar * c)


def excess_cov_derivative(
    ex,
    cond_tilde: tuple[float, float, float],
    gamma_x: float,
    gamma_p: float,
    omega: float,
    r: float,
) -> tuple[float, float, float]:
    """Time derivative of the tilde-scaled excess covariances under
    diagonal damping (u_x = -gamma_x <x>, u_p = -gamma_p <p>), with the
    conditional covariances held at their steady-state values.

    ``ex`` may be an :class:`ExcessCovariances` or a plain (ve_x, ve_p,
    ce) triple (handy when integrating through transients that ride the
    degenerate-covariance boundary).
    """
    ve_x, ve_p, ce = ex.triple() if isinstance(ex, ExcessCovariances) else ex
    vxt, _, ct = cond_tilde
    s = 2.0 * omega / r
    d_ve_x = -2.0 * gamma_x * ve_x + 2.0 * omega * ce + s * vxt * vxt
    d_ve_p = -2.0 * gamma_p * ve_p - 2.0 * omega * ce + s * ct * ct
    d_ce = -(gamma_x + gamma_p) * ce - omega * (ve_x - ve_p) + s * ct * vxt
    return (d_ve_x, d_ve_p, d_ce)


def excess_cov_steady_state(
    cond_tilde: tuple[float, float, float],
    q_factor: float,
    r: float,
    variant: ExcessVariant = ExcessVariant.FULL_DAMPING,
) -> ExcessCovariances:
    """Closed-form stationary excess covariances.

    ``q_factor`` is the quality-like ratio omega / (2 Gamma).  The
    full-damping forms are exact fixed points of
    :func:`excess_cov_derivative`; the position-only forms are the
    small-q asymptotics (q*omega << 1) for the gain K21 = m omega/q,
    K22 = 1/q and are only warranted for q_factor <= 0.1.
    """
    if not q_factor > 0:
        raise ValueError(f"q_factor must be positive, got {q_factor}")
    if not r > 0:
        raise ValueError(f"r must be positive, got {r}")
    vxt, _, ct = cond_tilde
    qf = q_factor
    if variant is ExcessVariant.FULL_DAMPING:
        pref = 2.0 * qf / (r * (1.0 + 4.0 * qf * qf))
        ve_x = pref * ((1.0 + 2.0 * qf * qf) * vxt**2 + 2.0 * qf * qf * ct**2 + 2.0 * qf * ct * vxt)
        ve_p = pref * (2.0 * qf * qf * vxt**2 + (1.0 + 2.0 * qf * qf) * ct**2 - 2.0 * qf * ct * vxt)
        ce = pref * (-qf * vxt**2 + qf * ct**2 + ct * vxt)
    else:
        if qf > 0.1:
            warnings.warn(
                f"position-only closed forms assume q*omega << 1; q_factor={qf:g} is large",
                stacklevel=2,
            )
        ve_x = (vxt**2 + 4.0 * qf * qf * ct**2 + 4.0 * qf * ct * vxt) / r
        ve_p = (vxt**2 + 2.0 * qf * ct**2) / r
        ce = -(vxt**2) / r
    return ExcessCovariances(ve_x=ve_x, ve_p=ve_p, ce=ce)


def total_covariances(
    cond_tilde: tuple[float, float, float], ex: ExcessCovariances
) -> tuple[tuple[float, float, float], float]:
    """Unconditioned covariances (conditional + excess) and their purity.

    In tilde units purity reduces to (Vx~ Vp~ - C~^2)^(-1/2).
    """
    vxt, vpt, ct = cond_tilde
    tot = (vxt + ex.ve_x, vpt + ex.ve_p, ct + ex.ce)
    det = tot[0] * tot[1] - tot[2] ** 2
    if det <= 0:
        raise ValueError("total covariance matrix is not positive definite")
    return tot, 1.0 / math.sqrt(det)


# ---------------------------------------------------------------------------
# Trajectory simulation
# ---------------------------------------------------------------------------


@dataclass
class TrajectoryRecord:
    """Time series of one closed-loop run (struct-of-arrays layout).

    Row i holds the state at times[i]; records[i] and controls[i] are the
    record increment and control active over the step ending at times[i]
    (zero in row 0).  Cost columns are cumulative.
    """

    times: np.ndarray
    mean_x: np.ndarray
    mean_p: np.ndarray
    v_x: np.ndarray
    v_p: np.ndarray
    c: np.ndarray
    records: np.ndarray
    controls: np.ndarray
    j_state: np.ndarray
    j_control: np.ndarray
    j_floor: np.ndarray
    seed: int

    @property
    def n_steps(self) -> int:
        return len(self.times) - 1

    @property
    def cost(self) -> CostAccumulator:
        return CostAccumulator(
            j_state=float(self.j_state[-1]),
            j_control=float(self.j_control[-1]),
            j_floor=float(self.j_floor[-1]),
        )

    def state_at(self, i: int) -> GaussianState:
        return GaussianState(
            mean_x=float(self.mean_x[i]),
            mean_p=float(self.mean_p[i]),
            v_x=float(self.v_x[i]),
            v_p=float(self.v_p[i]),
            c=float(self.c[i]),
            t=float(self.times[i]),
        )

    @property
    def final_state(self) -> GaussianState:
        return self.state_at(len(self.times) - 1)

    def states(self):
        for i in range(len(self.times)):
            yield self.state_at(i)


def _trajectory_rng(seed: int) -> np.random.Generator:
    """Counter-based per-trajectory stream; stable under chunked draws."""
    return np.random.Generator(np.random.Philox(key=seed))


def _covariance_path(
    cov0: tuple[float, float, float], params: PhysicalParams, dt: float, n_steps: int
):
    """Deterministic Euler covariance path shared by all trajectories."""
    v_x = np.empty(n_steps + 1)
    v_p = np.empty(n_steps + 1)
    c = np.empty(n_steps + 1)
    v_x[0], v_p[0], c[0] = cov0
    vx, vp, cc = cov0
    hbar2_4 = 0.25 * params.hbar**2
    rate_base = 8.0 * params.eta * params.k
    for i in range(n_steps):
        dvx, dvp, dc = _cov_rates(vx, vp, cc, params)
        floor = hbar2_4 * (1.0 - 10.0 * dt * (rate_base * vx + params.omega))
        vx = vx + dvx * dt
        vp = vp + dvp * dt
        cc = cc + dc * dt
        if vx <= 0 or vp <= 0 or vx * vp - cc * cc < floor:
            raise CovarianceStepError(
                f"covariance flow became unphysical at step {i + 1}; reduce dt"
            )
        v_x[i + 1], v_p[i + 1], c[i + 1] = vx, vp, cc
    return v_x, v_p, c


def _cost_rates(mx, mp, ux, up, design: ControlDesign):
    """Quadratic cost rates, array-friendly; the floor term is handled separately."""
    p = design.p_weight
    q = design.q_weight
    j_state = p[0, 0] * mx * mx + 2.0 * p[0, 1] * mx * mp + p[1, 1] * mp * mp
    j_control = design.q_scalar**2 * (
        q[0, 0] * ux * ux + 2.0 * q[0, 1] * ux * up + q[1, 1] * up * up
    )
    return j_state, j_control


def simulate_trajectory(
    params: PhysicalParams,
    controller: ControllerSpec,
    init: GaussianState,
    horizon: float,
    dt: float,
    seed: int,
    design: ControlDesign | None = None,
) -> TrajectoryRecord:
    """Run one closed-loop trajectory with a counter-based noise stream.

    Per step: draw dW, form the record increment, advance the conditioned
    state (the control entering a step is computed from the estimate
    after the previous step's measurement update), then accumulate cost.
    Deterministic given all inputs; the same seed reproduces the record
    bit for bit.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    n_steps = int(round(horizon / dt))
    if n_steps < 1:
        raise ValueError("horizon shorter than one step")
    if design is None:
        design = harmonic_design(params, q_scalar=1.0)

    k_mat = controller.gain_matrix()
    alpha, beta = controller.direct_gains()
    eta_k4 = 4.0 * params.eta * params.k
    s_noise = math.sqrt(2.0 * params.eta * params.k)
    sqrt_dt = math.sqrt(dt)

    rng = _trajectory_rng(seed)
    dws = rng.standard_normal(n_steps) * sqrt_dt
    v_x, v_p, c = _covariance_path(init.covariances(), params, dt, n_steps)

    times = init.t + dt * np.arange(n_steps + 1)
    mean_x = np.empty(n_steps + 1)
    mean_p = np.empty(n_steps + 1)
    records = np.zeros(n_steps + 1)
    controls = np.zeros((n_steps + 1, 2))
    j_state = np.zeros(n_steps + 1)
    j_control = np.zeros(n_steps + 1)
    j_floor = np.zeros(n_steps + 1)
    mean_x[0], mean_p[0] = init.mean_x, init.mean_p

    p_w = design.p_weight
    mx, mp = init.mean_x, init.mean_p
    js = jc = jf = 0.0
    for i in range(n_steps):
        dw = dws[i]
        # control for this step from the current (post-measurement) estimate
        ux = -(k_mat[0, 0] * mx + k_mat[0, 1] * mp)
        up = -(k_mat[1, 0] * mx + k_mat[1, 1] * mp)
        dq = eta_k4 * mx * dt + s_noise * dw
        drift_x, drift_p, diff_x, diff_p = _mean_rates_and_diffusion(
            mx, mp, v_x[i], c[i], params, (ux, up), alpha, beta
        )
        js_rate, jc_rate = _cost_rates(mx, mp, ux, up, design)
        jf_rate = p_w[0, 0] * v_x[i] + 2.0 * p_w[0, 1] * c[i] + p_w[1, 1] * v_p[i]
        mx = mx + drift_x * dt + diff_x * dw
        mp = mp + drift_p * dt + diff_p * dw
        js += js_rate * dt
        jc += jc_rate * dt
        jf += jf_rate * dt
        mean_x[i + 1], mean_p[i + 1] = mx, mp
        records[i + 1] = dq
        controls[i + 1, 0], controls[i + 1, 1] = ux, up
        j_state[i + 1], j_control[i + 1], j_floor[i + 1] = js, jc, jf

    return TrajectoryRecord(
        times=times,
        mean_x=mean_x,
        mean_p=mean_p,
        v_x=v_x,
        v_p=v_p,
        c=c,
        records=records,
        controls=controls,
        j_state=j_state,
        j_control=j_control,
        j_floor=j_floor,
        seed=seed,
    )


# ---------------------------------------------------------------------------
# Ensembles
# ---------------------------------------------------------------------------


@dataclass
class EnsembleStats:
    """Stationary-tail statistics of an ensemble of closed-loop runs."""

    excess_empirical: ExcessCovariances
    excess_se: tuple[float, float, float] | None
    mean_cost: CostAccumulator
    n_traj: int
    tail_start: float
    sample_times: np.ndarray
    var_x_t: np.ndarray
    var_p_t: np.ndarray
    cov_t: np.ndarray
    cond_tilde: tuple[float, float, float]
    excess_analytic: ExcessCovariances | None = None


def _closed_loop_matrix(params: PhysicalParams, controller: ControllerSpec) -> np.ndarray:
    m, omega = params.m, params.omega
    a = np.array([[0.0, 1.0 / m], [-m * omega**2, 0.0]])
    a = a - controller.gain_matrix()
    if controller.mode in (FeedbackMode.DIRECT, FeedbackMode.COMBINED):
        ek = params.eta * params.k
        a = a + np.array([[4.0 * ek * controller.beta, 0.0], [-4.0 * ek * controller.alpha, 0.0]])
    return a


def _default_tail_start(
    params: PhysicalParams,
    controller: ControllerSpec,
    horizon: float,
    cov_settle_time: float,
) -> float:
    eigs = np.linalg.eigvals(_closed_loop_matrix(params, controller))
    gamma_eff = float(-np.max(eigs.real))
    parts = [cov_settle_time]
    if params.omega > 0:
        parts.append(5.0 / params.omega)
    if gamma_eff > 1e-12:
        parts.append(5.0 / gamma_eff)
        tail = max(parts)
    else:
        # No damping: there is no stationary tail, fall back to the back half.
        tail = max(max(parts), 0.5 * horizon)
    return min(tail, 0.9 * horizon)


def _fsum(values) -> float:
    return math.fsum(values.tolist() if isinstance(values, np.ndarray) else values)


def _ensemble_block(
    params: PhysicalParams,
    controller: ControllerSpec,
    design: ControlDesign,
    init: GaussianState,
    dt: float,
    n_steps: int,
    seeds: list[int],
    cov_path,
    sample_idx: np.ndarray,
):
    """Propagate a block of trajectories; returns tail samples and final costs."""
    nb = len(seeds)
    v_x, v_p, c = cov_path
    k_mat = controller.gain_matrix()
    alpha, beta = controller.direct_gains()
    p_w = design.p_weight
    sqrt_dt = math.sqrt(dt)

    gens = [_trajectory_rng(s) for s in seeds]
    mx = np.full(nb, init.mean_x)
    mp = np.full(nb, init.mean_p)
    js = np.zeros(nb)
    jc = np.zeros(nb)
    jf = 0.0  # identical for every trajectory: Tr(P V) is deterministic
    samples_x = np.empty((len(sample_idx), nb))
    samples_p = np.empty((len(sample_idx), nb))
    sample_pos = {int(s): j for j, s in enumerate(sample_idx)}
    if 0 in sample_pos:
        samples_x[sample_pos[0]] = mx
        samples_p[sample_pos[0]] = mp

    chunk = 1024
    step = 0
    dws = np.empty((chunk, nb))
    while step < n_steps:
        ln = min(chunk, n_steps - step)
        for j, g in enumerate(gens):
            dws[:ln, j] = g.standard_normal(ln)
        for i in range(ln):
            n = step + i
            dw = dws[i, :] * sqrt_dt
            ux = -(k_mat[0, 0] * mx + k_mat[0, 1] * mp)
            up = -(k_mat[1, 0] * mx + k_mat[1, 1] * mp)
            drift_x, drift_p, diff_x, diff_p = _mean_rates_and_diffusion(
                mx, mp, v_x[n], c[n], params, (ux, up), alpha, beta
            )
            js_rate, jc_rate = _cost_rates(mx, mp, ux, up, design)
            jf_rate = p_w[0, 0] * v_x[n] + 2.0 * p_w[0, 1] * c[n] + p_w[1, 1] * v_p[n]
            mx = mx + drift_x * dt + diff_x * dw
            mp = mp + drift_p * dt + diff_p * dw
            js = js + js_rate * dt
            jc = jc + jc_rate * dt
            jf = jf + jf_rate * dt
            pos = sample_pos.get(n + 1)
            if pos is not None:
                samples_x[pos] = mx
                samples_p[pos] = mp
        step += ln
    return samples_x, samples_p, js, jc, jf


def run_ensemble(
    params: PhysicalParams,
    controller: ControllerSpec,
    init: GaussianState,
    horizon: float,
    dt: float,
    n_traj: int,
    base_seed: int,
    design: ControlDesign | None = None,
    tail_start: float | None = None,
    jobs: int = 1,
) -> EnsembleStats:
    """Monte-Carlo ensemble with per-trajectory seeds base_seed + index.

    Trajectory i is bit-identical to ``simulate_trajectory(..., seed=
    base_seed + i)``.  Empirical excess covariances are ensemble
    covariances of the conditional means, averaged over thinned times in
    the stationary tail, reported in tilde scaling with standard errors
    estimated from the scatter across sample times.  Reductions use
    exact compensated summation, so results do not depend on ``jobs``.
    """
    if n_traj < 1:
        raise ValueError("n_traj must be at least 1")
    n_steps = int(round(horizon / dt))
    if n_steps < 1:
        raise ValueError("horizon shorter than one step")
    if design is None:
        design = harmonic_design(params, q_scalar=1.0)

    cov_path = _covariance_path(init.covariances(), params, dt, n_steps)
    if params.k > 0:
        cond_ss = steady_state_covariances(params)
        diffs = (
            np.abs(cov_path[0] - cond_ss[0]) / cond_ss[0]
            + np.abs(cov_path[1] - cond_ss[1]) / cond_ss[1]
        )
        settled = np.nonzero(diffs < 1e-6)[0]
        cov_settle = float(settled[0]) * dt if len(settled) else 0.5 * horizon
        cond_final = (cov_path[0][-1], cov_path[1][-1], cov_path[2][-1])
    else:
        cov_settle = 0.0
        cond_final = init.covariances()

    if tail_start is None:
        tail_start = _default_tail_start(params, controller, horizon, cov_settle)
    first_idx = min(int(math.ceil(tail_start / dt)), n_steps)

    eigs = np.linalg.eigvals(_closed_loop_matrix(params, controller))
    gamma_eff = float(-np.max(eigs.real))
    stride_time = 2.0 / gamma_eff if gamma_eff > 1e-12 else (horizon - tail_start) / 20.0
    stride = max(1, int(round(stride_time / dt))) if stride_time > 0 else 1
    sample_idx = np.arange(first_idx, n_steps + 1, stride, dtype=int)
    if len(sample_idx) == 0 or sample_idx[-1] != n_steps:
        sample_idx = np.append(sample_idx, n_steps)

    block_size = max(64, -(-n_traj // max(1, jobs * 4)))
    blocks = [
        list(range(base_seed + lo, base_seed + min(lo + block_size, n_traj)))
        for lo in range(0, n_traj, block_size)
    ]

    def work(seeds):
        return _ensemble_block(
            params, controller, design, init, dt, n_steps, seeds, cov_path, sample_idx
        )

    if jobs > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(work, blocks))
    else:
        results = [work(b) for b in blocks]

    samples_x = np.concatenate([r[0] for r in results], axis=1)
    samples_p = np.concatenate([r[1] for r in results], axis=1)
    js_all = np.concatenate([r[2] for r in results])
    jc_all = np.concatenate([r[3] for r in results])
    jf_final = results[0][4]

    nt = n_traj
    var_x_t = np.zeros(len(sample_idx))
    var_p_t = np.zeros(len(sample_idx))
    cov_t = np.zeros(len(sample_idx))
    for j in range(len(sample_idx)):
        sx, sp = _fsum(samples_x[j]), _fsum(samples_p[j])
        sxx, spp = _fsum(samples_x[j] ** 2), _fsum(samples_p[j] ** 2)
        sxp = _fsum(samples_x[j] * samples_p[j])
        if nt > 1:
            var_x_t[j] = max((sxx - sx * sx / nt) / (nt - 1), 0.0)
            var_p_t[j] = max((spp - sp * sp / nt) / (nt - 1), 0.0)
            cov_t[j] = (sxp - sx * sp / nt) / (nt - 1)

    scale = tilde_covariances((1.0, 1.0, 1.0), params)
    var_x_t *= scale[0]
    var_p_t *= scale[1]
    cov_t *= scale[2]

    n_times = len(sample_idx)
    est = (
        _fsum(var_x_t) / n_times,
        _fsum(var_p_t) / n_times,
        _fsum(cov_t) / n_times,
    )
    if nt < 2:
        se = None
    elif n_times >= 2:
        se = tuple(float(np.std(v, ddof=1) / math.sqrt(n_times)) for v in (var_x_t, var_p_t, cov_t))
    else:
        # single sample time: Gaussian-theory estimator noise
        se = tuple(abs(v) * math.sqrt(2.0 / (nt - 1)) for v in est)

    mean_cost = CostAccumulator(
        j_state=_fsum(js_all) / nt,
        j_control=_fsum(jc_all) / nt,
        j_floor=float(jf_final),
    )
    return EnsembleStats(
        excess_empirical=ExcessCovariances(max(est[0], 0.0), max(est[1], 0.0), est[2]),
        excess_se=se,
        mean_cost=mean_cost,
        n_traj=nt,
        tail_start=float(tail_start),
        sample_times=init.t + sample_idx * dt,
        var_x_t=var_x_t,
        var_p_t=var_p_t,
        cov_t=cov_t,
        cond_tilde=tilde_covariances(cond_final, params),
    )


# ---------------------------------------------------------------------------
# Classical twin (Kalman-filter equivalence)
# ---------------------------------------------------------------------------


@dataclass
class ClassicalTwin:
    """Noisy classical oscillator plus the filter tracking it.

    The truth (x_c, p_c) is driven by momentum process noise
    sqrt(2 eta k) hbar zeta1; the observed record is
    dQ_c = 4 eta k x_c dt + sqrt(2 eta k) zeta2 dt.  The estimate is
    updated with exactly the same rule as the quantum filter, which is
    what makes the two descriptions coincide.
    """

    x_c: float
    p_c: float
    estimate: GaussianState
    zeta1: np.random.Generator
    zeta2: np.random.Generator


def new_classical_twin(
    x_c: float, p_c: float, estimate: GaussianState, seed: int
) -> ClassicalTwin:
    """Twin with two independent counter-based noise streams."""
    return ClassicalTwin(
        x_c=x_c,
        p_c=p_c,
        estimate=estimate,
        zeta1=np.random.Generator(np.random.Philox(key=(seed, 1))),
        zeta2=np.random.Generator(np.random.Philox(key=(seed, 2))),
    )


def classical_twin_step(
    twin: ClassicalTwin,
    params: PhysicalParams,
    dt: float,
    controller: ControllerSpec | None = None,
):
    """Advance truth, record and estimate by one step.

    Returns (new_twin, dq, innovation) where the innovation is the
    Wiener increment reconstructed from the record,
    dW = 2 sqrt(2 eta k) (x_c - <x_c>) dt + zeta2 dt.  Feeding the
    innovation to :func:`qlqg.gaussian.step_conditioned` reproduces the
    record-driven estimate update exactly.
    """
    from .gaussian import innovation_step  # local import avoids cycle at module load

    if not dt > 0:
        raise ValueError("dt must be positive")
    m, omega, hbar, k, eta = params.m, params.omega, params.hbar, params.k, params.eta
    s = math.sqrt(2.0 * eta * k)
    sqrt_dt = math.sqrt(dt)
    z1 = twin.zeta1.standard_normal() * sqrt_dt
    z2 = twin.zeta2.standard_normal() * sqrt_dt

    if controller is not None:
        k_mat = controller.gain_matrix()
        ux = -(k_mat[0, 0] * twin.estimate.mean_x + k_mat[0, 1] * twin.estimate.mean_p)
        up = -(k_mat[1, 0] * twin.estimate.mean_x + k_mat[1, 1] * twin.estimate.mean_p)
    else:
        ux = up = 0.0

    x_c = twin.x_c + (twin.p_c / m + ux) * dt
    p_c = twin.p_c + (-m * omega**2 * twin.x_c + up) * dt + s * hbar * z1

    dq = 4.0 * eta * k * twin.x_c * dt + s * z2
    innovation = 2.0 * s * (twin.x_c - twin.estimate.mean_x) * dt + z2
    estimate = innovation_step(twin.estimate, params, dt, dq, (ux, up))

    new_twin = ClassicalTwin(
        x_c=x_c, p_c=p_c, estimate=estimate, zeta1=twin.zeta1, zeta2=twin.zeta2
    )
    return new_twin, dq, innovation
