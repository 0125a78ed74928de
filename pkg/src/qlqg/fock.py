"""Exact density-matrix reference on a truncated number basis.

Integrates the position-measurement stochastic master equation

    d rho = -(i/hbar) [H, rho] dt + 2 k D[x] rho dt
            + sqrt(2 eta k) H[x] rho dW,

with 2 D[c] rho = 2 c rho c+ - c+ c rho - rho c+ c and
H[c] rho = c rho + rho c+ - Tr[c rho + rho c+] rho, and the
direct-feedback variant driven by the measurement current,

    d rho = -(i/hbar)[H, rho] dt + 2 k D[x] rho dt + (1/eta) D[F] rho dt
            - i sqrt(2k) [F, x rho + rho x] dt
            + H[ sqrt(2 eta k) x - (i/sqrt(eta)) F ] rho dW,

with F = sqrt(2k) eta (alpha x + beta p) / hbar.  Steps are explicit
Euler-Maruyama followed by Hermitian symmetrization and trace
renormalization.  Truncation is policed, not hidden: population leaking
into the top two levels beyond tolerance aborts the run.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from .errors import TraceError, TruncationError
from .model import PhysicalParams

__all__ = [
    "FockState",
    "OperatorSet",
    "build_operators",
    "moments",
    "sme_step",
    "direct_feedback_sme_step",
    "gaussian_density_matrix",
    "coherent_density_matrix",
]

LEAK_TOL = 1e-6
TRACE_DRIFT_TOL = 1e-6


@dataclass
class FockState:
    """Density matrix on an N-level number basis at time t."""

    rho: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        self.rho = np.asarray(self.rho, dtype=complex)
        if self.rho.ndim != 2 or self.rho.shape[0] != self.rho.shape[1]:
            raise ValueError(f"rho must be square, got shape {self.rho.shape}")
        tr = np.trace(self.rho).real
        if abs(tr - 1.0) > 1e-9:
            raise ValueError(f"rho must have unit trace, got {tr}")
        if np.max(np.abs(self.rho - self.rho.conj().T)) > 1e-10:
            raise ValueError("rho must be Hermitian")

    @property
    def dim(self) -> int:
        return self.rho.shape[0]

    def top_level_population(self) -> float:
        """Population in the top two truncation levels (leak monitor)."""
        return float(np.trace(self.rho[-2:, -2:]).real)

    def min_eigenvalue(self) -> float:
        """Smallest eigenvalue; small negatives are a discretization artifact
        that is reported, never clipped."""
        return float(np.linalg.eigvalsh(self.rho)[0])

    def purity(self) -> float:
        return float(np.vdot(self.rho, self.rho).real)


@dataclass
class OperatorSet:
    """Position, momentum and Hamiltonian matrices plus cached products."""

    x: np.ndarray
    p: np.ndarray
    hamiltonian: np.ndarray
    x2: np.ndarray = field(init=False, repr=False)
    p2: np.ndarray = field(init=False, repr=False)
    xp_sym: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.x2 = self.x @ self.x
        self.p2 = self.p @ self.p
        self.xp_sym = 0.5 * (self.x @ self.p + self.p @ self.x)

    @property
    def dim(self) -> int:
        return self.x.shape[0]


def _ladder(dim: int) -> np.ndarray:
    return np.diag(np.sqrt(np.arange(1, dim)), 1).astype(complex)


def build_operators(dim: int, params: PhysicalParams) -> OperatorSet:
    """x = sqrt(hbar/(2 m w))(a + a+), p = i sqrt(hbar m w/2)(a+ - a),
    H = p^2/2m + m w^2 x^2/2, all on the truncated basis.

    The canonical commutator [x, p] = i hbar holds exactly on the
    interior block (indices below dim-1); the last row/column carries the
    unavoidable truncation defect.
    """
    if dim < 4:
        raise ValueError(f"dim must be at least 4, got {dim}")
    a = _ladder(dim)
    ad = a.conj().T
    x = math.sqrt(params.hbar / (2.0 * params.m * params.omega)) * (a + ad)
    p = 1j * math.sqrt(params.hbar * params.m * params.omega / 2.0) * (ad - a)
    h = p @ p / (2.0 * params.m) + 0.5 * params.m * params.omega**2 * (x @ x)
    return OperatorSet(x=x, p=p, hamiltonian=h)


def _expect(op: np.ndarray, rho: np.ndarray) -> float:
    return float(np.einsum("ij,ji->", op, rho).real)


def moments(state: FockState, ops: OperatorSet):
    """(mean_x, mean_p, v_x, v_p, c, purity) from trace formulas."""
    rho = state.rho
    mx = _expect(ops.x, rho)
    mp = _expect(ops.p, rho)
    v_x = _expect(ops.x2, rho) - mx * mx
    v_p = _expect(ops.p2, rho) - mp * mp
    c = _expect(ops.xp_sym, rho) - mx * mp
    return mx, mp, v_x, v_p, c, state.purity()


def _finalize_step(rho_new: np.ndarray, t_new: float, dim: int) -> FockState:
    rho_new = 0.5 * (rho_new + rho_new.conj().T)
    tr = np.trace(rho_new).real
    if abs(tr - 1.0) > TRACE_DRIFT_TOL:
        raise TraceError(f"trace drifted to {tr} before renormalization; reduce dt")
    rho_new = rho_new / tr
    leak = np.trace(rho_new[-2:, -2:]).real
    if leak > LEAK_TOL:
        raise TruncationError(
            f"top-level population {leak:.3e} exceeds {LEAK_TOL:.1e} at dim={dim}; "
            "increase the truncation"
        )
    return FockState(rho=rho_new, t=t_new)


def sme_step(
    state: FockState,
    ops: OperatorSet,
    params: PhysicalParams,
    dt: float,
    dw: float,
) -> FockState:
    """One Euler-Maruyama step of the measurement SME, renormalized."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    rho = state.rho
    hbar, k, eta = params.hbar, params.k, params.eta

    h_rho = ops.hamiltonian @ rho
    comm = (-1j / hbar) * (h_rho - h_rho.conj().T)
    x_rho = ops.x @ rho
    x2_rho = ops.x2 @ rho
    backaction = k * (2.0 * (x_rho @ ops.x) - x2_rho - x2_rho.conj().T)
    mx = _expect(ops.x, rho)
    innovation_op = x_rho + x_rho.conj().T - 2.0 * mx * rho

    rho_new = rho + (comm + backaction) * dt + math.sqrt(2.0 * eta * k) * innovation_op * dw
    return _finalize_step(rho_new, state.t + dt, state.dim)


def feedback_operator(
    ops: OperatorSet, params: PhysicalParams, alpha: float, beta: float
) -> np.ndarray:
    """F = sqrt(2k) eta (alpha x + beta p) / hbar."""
    return math.sqrt(2.0 * params.k) * params.eta * (alpha * ops.x + beta * ops.p) / params.hbar


def direct_feedback_sme_step(
    state: FockState,
    ops: OperatorSet,
    params: PhysicalParams,
    alpha: float,
    beta: float,
    dt: float,
    dw: float,
) -> FockState:
    """One step of the current-feedback SME with H_D = I(t)(alpha x + beta p).

    With alpha = beta = 0 this is the plain measurement step.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    rho = state.rho
    hbar, k, eta = params.hbar, params.k, params.eta

    h_rho = ops.hamiltonian @ rho
    comm = (-1j / hbar) * (h_rho - h_rho.conj().T)
    x_rho = ops.x @ rho
    x2_rho = ops.x2 @ rho
    backaction = k * (2.0 * (x_rho @ ops.x) - x2_rho - x2_rho.conj().T)

    f_op = feedback_operator(ops, params, alpha, beta)
    f_rho = f_op @ rho
    f2_rho = f_op @ f_rho
    fb_diss = (1.0 / eta) * ((f_rho @ f_op) - 0.5 * (f2_rho + f2_rho.conj().T))
    sandwich = x_rho + x_rho.conj().T  # x rho + rho x, Hermitian
    f_sand = f_op @ sandwich
    fb_drift = -1j * math.sqrt(2.0 * k) * (f_sand - f_sand.conj().T)

    # H[c] rho with c = sqrt(2 eta k) x - (i/sqrt(eta)) F
    c_rho = math.sqrt(2.0 * eta * k) * x_rho - (1j / math.sqrt(eta)) * f_rho
    meas_op = c_rho + c_rho.conj().T
    meas_op = meas_op - np.trace(meas_op).real * rho

    rho_new = rho + (comm + backaction + fb_diss + fb_drift) * dt + meas_op * dw
    return _finalize_step(rho_new, state.t + dt, state.dim)


def coherent_density_matrix(
    dim: int, mean_x: float, mean_p: float, params: PhysicalParams
) -> FockState:
    """Pure coherent state with the given phase-space displacement."""
    return gaussian_density_matrix(
        dim,
        mean_x,
        mean_p,
        params.hbar / (2.0 * params.m * params.omega),
        params.hbar * params.m * params.omega / 2.0,
        0.0,
        params,
    )


def gaussian_density_matrix(
    dim: int,
    mean_x: float,
    mean_p: float,
    v_x: float,
    v_p: float,
    c: float,
    params: PhysicalParams,
) -> FockState:
    """Gaussian state with the requested moments, as displaced squeezed thermal.

    The covariance matrix is factored into a rotation, a single-mode
    squeeze and a thermal occupation; the resulting rho is verified
    against the requested moments and rejected if truncation spoiled it.
    """
    if dim < 4:
        raise ValueError(f"dim must be at least 4, got {dim}")
    m, omega, hbar = params.m, params.omega, params.hbar
    det = v_x * v_p - c * c
    if det < hbar**2 / 4.0 * (1.0 - 1e-9):
        raise ValueError("covariances violate the uncertainty bound")

    sx = math.sqrt(m * omega / hbar)
    sp = 1.0 / math.sqrt(m * omega * hbar)
    cov = np.array([[v_x * sx * sx, c * sx * sp], [c * sx * sp, v_p * sp * sp]])
    nu = math.sqrt(np.linalg.det(cov))  # symplectic eigenvalue, vacuum = 1/2
    nbar = max(nu - 0.5, 0.0)
    evals, evecs = np.linalg.eigh(cov / nu)
    squeeze = 0.5 * math.log(evals[1])
    major = evecs[:, 1]  # axis of the large eigenvalue
    theta = math.atan2(major[1], major[0])
    z = -squeeze * np.exp(2j * theta)

    a = _ladder(dim)
    ad = a.conj().T
    if nbar < 1e-14:
        rho = np.zeros((dim, dim), dtype=complex)
        rho[0, 0] = 1.0
    else:
        ratio = nbar / (1.0 + nbar)
        pops = ratio ** np.arange(dim) / (1.0 + nbar)
        rho = np.diag(pops / np.sum(pops)).astype(complex)
    squeezer = expm(0.5 * (np.conj(z) * (a @ a) - z * (ad @ ad)))
    amp = (mean_x * sx + 1j * mean_p * sp) / math.sqrt(2.0)
    displacer = expm(amp * ad - np.conj(amp) * a)
    u = displacer @ squeezer
    rho = u @ rho @ u.conj().T
    rho = 0.5 * (rho + rho.conj().T)
    rho = rho / np.trace(rho).real

    state = FockState(rho=rho)
    ops = build_operators(dim, params)
    got = moments(state, ops)
    scale = max(abs(mean_x), math.sqrt(v_x)) + math.sqrt(v_x)
    pscale = max(abs(mean_p), math.sqrt(v_p)) + math.sqrt(v_p)
    checks = (
        abs(got[0] - mean_x) / scale,
        abs(got[1] - mean_p) / pscale,
        abs(got[2] - v_x) / v_x,
        abs(got[3] - v_p) / v_p,
        abs(got[4] - c) / math.sqrt(v_x * v_p),
    )
    if max(checks) > 1e-6:
        raise TruncationError(
            f"requested Gaussian state does not fit in dim={dim} "
            f"(worst moment error {max(checks):.2e}); increase the truncation"
        )
    if state.top_level_population() > LEAK_TOL:
        raise TruncationError(
            f"initial top-level population {state.top_level_population():.3e} "
            f"exceeds {LEAK_TOL:.1e} at dim={dim}"
        )
    return state
