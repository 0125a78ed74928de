"""Optimal linear feedback synthesis and quadratic trajectory cost.

The optimal gain for a linear system with quadratic cost is K = Q^-1 B^T U
where U is the stabilizing solution of the continuous algebraic Riccati
equation

    0 = P + A^T U + U A - U B Q^-1 B^T U.

The solver diagonalizes the associated Hamiltonian matrix
[[A, -B Q^-1 B^T], [-P, -A^T]], takes the stable invariant subspace, and
polishes with Newton steps (each a Lyapunov solve) until the residual is
below tolerance.

The per-trajectory cost accumulated along a run is

    integral( <x>^T P <x> + Tr(P V) + q^2 u^T Q u ) dt,

where the Tr(P V) term is the irreducible contribution of the finite width
of the conditioned state and q is a scalar control weighting with units of
time (the effective control weight is q^2 Q throughout).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg as sla

from .errors import RiccatiError
from .gaussian import GaussianState
from .model import PhysicalParams

__all__ = [
    "ControlDesign",
    "CostAccumulator",
    "solve_care",
    "feedback_gain",
    "harmonic_design",
    "position_only_design",
    "position_only_gain",
    "cost_increment",
    "riccati_residual",
]

RESIDUAL_RTOL = 1e-9


@dataclass
class ControlDesign:
    """System matrices, cost weights and the synthesized gain.

    ``q_scalar`` multiplies the control weight as q^2 * q_weight; the raw
    section-form cost with weight Q is the q = 1 special case.
    """

    a: np.ndarray
    b: np.ndarray
    p_weight: np.ndarray
    q_weight: np.ndarray
    q_scalar: float = 1.0
    u_care: np.ndarray | None = None
    k_gain: np.ndarray | None = None
    unique_stabilizing: bool | None = field(default=None, repr=False)

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=float)
        self.b = np.asarray(self.b, dtype=float)
        self.p_weight = np.asarray(self.p_weight, dtype=float)
        self.q_weight = np.asarray(self.q_weight, dtype=float)
        if not self.q_scalar > 0:
            raise ValueError(f"q_scalar must be positive, got {self.q_scalar}")
        for name, mat in (("p_weight", self.p_weight), ("q_weight", self.q_weight)):
            if not np.allclose(mat, mat.T, atol=1e-12):
                raise ValueError(f"{name} must be symmetric")
        if np.min(np.linalg.eigvalsh(self.p_weight)) < -1e-12:
            raise ValueError("p_weight must be positive semidefinite")

    @property
    def q_effective(self) -> np.ndarray:
        return self.q_scalar**2 * self.q_weight

    def closed_loop(self) -> np.ndarray:
        if self.k_gain is None:
            raise ValueError("gain not synthesized yet")
        return self.a - self.b @ self.k_gain

    def closed_loop_eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvals(self.closed_loop())


@dataclass
class CostAccumulator:
    """Accumulated state, control and conditional-width cost."""

    j_state: float = 0.0
    j_control: float = 0.0
    j_floor: float = 0.0

    @property
    def total(self) -> float:
        return self.j_state + self.j_control + self.j_floor

    def add(self, other: "CostAccumulator") -> "CostAccumulator":
        return CostAccumulator(
            self.j_state + other.j_state,
            self.j_control + other.j_control,
            self.j_floor + other.j_floor,
        )


def riccati_residual(
    u: np.ndarray, a: np.ndarray, b: np.ndarray, p: np.ndarray, q_eff: np.ndarray
) -> float:
    """Frobenius norm of P + A^T U + U A - U B Q^-1 B^T U."""
    g = b @ np.linalg.solve(q_eff, b.T)
    res = p + a.T @ u + u @ a - u @ g @ u
    return float(np.linalg.norm(res))


def _psd_sqrt(mat: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(mat)
    vals = np.clip(vals, 0.0, None)
    return vecs @ np.diag(np.sqrt(vals)) @ vecs.T


def _check_pbh(a: np.ndarray, mat: np.ndarray, kind: str) -> None:
    """PBH test on eigenvalues of A with nonnegative real part.

    kind="stabilizable": rank [A - lam I, B] must be full;
    kind="detectable":   rank [A - lam I; P^(1/2)] must be full.
    """
    n = a.shape[0]
    for lam in np.linalg.eigvals(a):
        if lam.real < -1e-12:
            continue
        if kind == "stabilizable":
            block = np.hstack([a - lam * np.eye(n), mat.astype(complex)])
        else:
            block = np.vstack([a - lam * np.eye(n), mat.astype(complex)])
        if np.linalg.matrix_rank(block, tol=1e-10) < n:
            raise RiccatiError(
                f"({'A,B' if kind == 'stabilizable' else 'A,P'}) not {kind}: "
                f"mode at eigenvalue {lam:.6g} cannot be {'controlled' if kind == 'stabilizable' else 'observed'}"
            )


def solve_care(
    a: np.ndarray,
    b: np.ndarray,
    p_weight: np.ndarray,
    q_weight_effective: np.ndarray,
) -> np.ndarray:
    """Stabilizing symmetric PSD solution of the CARE.

    Raises :class:`RiccatiError` when the stable invariant subspace does
    not yield a solution (uncontrollable unstable mode, singular weight,
    or residual that refuses to converge).
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    p = np.asarray(p_weight, dtype=float)
    q_eff = np.asarray(q_weight_effective, dtype=float)
    n = a.shape[0]

    if np.linalg.norm(p) == 0.0:
        # Zero state cost: U = 0 solves the equation and leaves the loop open.
        return np.zeros((n, n))

    _check_pbh(a, b, "stabilizable")
    _check_pbh(a, _psd_sqrt(p), "detectable")

    try:
        g = b @ np.linalg.solve(q_eff, b.T)
    except np.linalg.LinAlgError as exc:
        raise RiccatiError(f"singular control weight: {exc}") from exc

    ham = np.block([[a, -g], [-p, -a.T]])
    eigvals, eigvecs = np.linalg.eig(ham)
    stable = eigvals.real < 0.0
    if int(np.sum(stable)) != n:
        raise RiccatiError(
            f"Hamiltonian matrix has {int(np.sum(stable))} stable eigenvalues, need {n}; "
            "no strictly stabilizing solution"
        )
    basis = eigvecs[:, stable]
    x_blk, y_blk = basis[:n, :], basis[n:, :]
    try:
        u = np.linalg.solve(x_blk.T, y_blk.T).T
    except np.linalg.LinAlgError as exc:
        raise RiccatiError(f"stable subspace is not a graph over the state space: {exc}") from exc
    if np.max(np.abs(u.imag)) > 1e-6 * max(1.0, np.max(np.abs(u.real))):
        raise RiccatiError("stable-subspace solution has a non-negligible imaginary part")
    u = u.real
    u = 0.5 * (u + u.T)

    # Newton polish: each step solves A_cl^T D + D A_cl = -residual.
    tol = RESIDUAL_RTOL * max(np.linalg.norm(p), np.finfo(float).tiny)
    for _ in range(6):
        res = p + a.T @ u + u @ a - u @ g @ u
        if np.linalg.norm(res) <= tol:
            break
        a_cl = a - g @ u
        try:
            delta = sla.solve_continuous_lyapunov(a_cl.T, -res)
        except Exception as exc:  # singular Lyapunov operator
            raise RiccatiError(f"Newton refinement failed: {exc}") from exc
        u = 0.5 * ((u + delta) + (u + delta).T)
    final = np.linalg.norm(p + a.T @ u + u @ a - u @ g @ u)
    if final > tol:
        raise RiccatiError(f"Riccati residual {final:.3e} did not reach tolerance {tol:.3e}")

    if np.min(np.linalg.eigvalsh(u)) < -1e-8 * max(1.0, np.linalg.norm(u)):
        raise RiccatiError("stabilizing solution is not positive semidefinite")
    return u


def feedback_gain(design: ControlDesign) -> np.ndarray:
    """K = Q_eff^-1 B^T U; fills design.k_gain and checks closed-loop stability."""
    if design.u_care is None:
        design.u_care = solve_care(design.a, design.b, design.p_weight, design.q_effective)
        # The stabilizing solution is unique when the Hamiltonian matrix has
        # no purely imaginary eigenvalues; record that instead of assuming it.
        g = design.b @ np.linalg.solve(design.q_effective, design.b.T)
        ham = np.block([[design.a, -g], [-design.p_weight, -design.a.T]])
        design.unique_stabilizing = bool(
            np.min(np.abs(np.linalg.eigvals(ham).real)) > 1e-10
        )
    try:
        k = np.linalg.solve(design.q_effective, design.b.T @ design.u_care)
    except np.linalg.LinAlgError as exc:
        raise RiccatiError(f"singular Q_eff on range(B^T): {exc}") from exc
    design.k_gain = k
    eigs = np.linalg.eigvals(design.a - design.b @ k)
    if np.max(eigs.real) > 1e-8 * max(1.0, np.max(np.abs(eigs))):
        raise RiccatiError(f"closed loop not stabilizing: eigenvalues {eigs}")
    return k


def harmonic_design(
    params: PhysicalParams, q_scalar: float, b: np.ndarray | None = None
) -> ControlDesign:
    """Oscillator design with the energy-like weights P = Q = diag(m w^2, 1/m).

    With B = I the optimal gain is K = (1/q) I, i.e. equal damping rates
    Gamma = 1/q on position and momentum.
    """
    m, omega = params.m, params.omega
    a = np.array([[0.0, 1.0 / m], [-m * omega**2, 0.0]])
    if b is None:
        b = np.eye(2)
    weights = np.diag([m * omega**2, 1.0 / m])
    return ControlDesign(a=a, b=b, p_weight=weights, q_weight=weights, q_scalar=q_scalar)


def position_only_design(params: PhysicalParams, q_scalar: float) -> ControlDesign:
    """Same weights but actuation restricted to the momentum equation."""
    return harmonic_design(params, q_scalar, b=np.diag([0.0, 1.0]))


def position_only_gain(params: PhysicalParams, q_scalar: float) -> np.ndarray:
    """Exact CARE gain with B = diag(0, 1); the first row is structurally zero.

    In the strong-feedback regime q*omega << 1 the nonzero row approaches
    K21 = m omega / q, K22 = 1/q.
    """
    if not q_scalar > 0:
        raise ValueError(f"q_scalar must be positive, got {q_scalar}")
    design = position_only_design(params, q_scalar)
    k = feedback_gain(design)
    k[0, :] = 0.0  # exact structural zero, not merely numerically small
    design.k_gain = k
    return k


def cost_increment(
    state: GaussianState,
    u: tuple[float, float],
    design: ControlDesign,
    dt: float,
) -> CostAccumulator:
    """One left-endpoint rectangle of the per-trajectory quadratic cost."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    mean = np.array([state.mean_x, state.mean_p])
    uvec = np.asarray(u, dtype=float)
    p = design.p_weight
    cov = np.array([[state.v_x, state.c], [state.c, state.v_p]])
    return CostAccumulator(
        j_state=float(mean @ p @ mean) * dt,
        j_control=design.q_scalar**2 * float(uvec @ design.q_weight @ uvec) * dt,
        j_floor=float(np.trace(p @ cov)) * dt,
    )
