"""Physical parameters, regime numbers and cavity-to-measurement conversion.

Everything here is a pure function on immutable values.  The default unit
system used throughout the package is nondimensional (hbar = m = omega = 1),
but nothing below assumes it: all formulas carry their units explicitly.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass


class CavityKind(enum.Enum):
    """Which physical position-measurement setup converts to k."""

    MIRROR = "mirror"
    ATOM = "atom"


@dataclass(frozen=True)
class PhysicalParams:
    """Oscillator and measurement constants.

    Attributes
    ----------
    m : float
        Oscillator mass.
    omega : float
        Trap angular frequency (may be zero for a free particle).
    hbar : float
        Action quantum in the chosen unit system.
    k : float
        Measurement constant: rate of position-information gain and of
        measurement back-action noise on the momentum, units
        1/(length^2 * time).
    eta : float
        Homodyne detection efficiency, in (0, 1].
    """

    m: float
    omega: float
    hbar: float
    k: float
    eta: float

    def __post_init__(self):
        if not self.m > 0:
            raise ValueError(f"m must be positive, got {self.m}")
        if self.omega < 0:
            raise ValueError(f"omega must be nonnegative, got {self.omega}")
        if not self.hbar > 0:
            raise ValueError(f"hbar must be positive, got {self.hbar}")
        if self.k < 0:
            raise ValueError(f"k must be nonnegative, got {self.k}")
        if not 0 < self.eta <= 1:
            raise ValueError(f"eta must lie in (0, 1], got {self.eta}")

    @staticmethod
    def nondimensional(k: float, eta: float = 1.0) -> "PhysicalParams":
        """Parameters in hbar = m = omega = 1 units."""
        return PhysicalParams(m=1.0, omega=1.0, hbar=1.0, k=k, eta=eta)


@dataclass(frozen=True)
class CavitySetup:
    """Experimental cavity parameters from which k is derived.

    A moving end-mirror needs the optomechanical coupling ``g_m``; a
    trapped atom needs the cavity-QED coupling ``g0``, the optical
    wavenumber ``k0`` and the atom-cavity detuning ``delta``.

    ``beta_homodyne`` is the homodyne gain set by the local oscillator;
    it only enters through the record rescaling in
    :func:`scaled_record_increment` and cancels from all downstream
    dynamics.
    """

    kind: CavityKind
    gamma: float
    omega0: float
    laser_power: float
    g_m: float | None = None
    g0: float | None = None
    k0: float | None = None
    delta: float | None = None
    beta_homodyne: float = 1.0

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if not self.omega0 > 0:
            raise ValueError(f"omega0 must be positive, got {self.omega0}")
        if self.laser_power < 0:
            raise ValueError(f"laser_power must be nonnegative, got {self.laser_power}")
        if self.kind is CavityKind.MIRROR:
            if self.g_m is None:
                raise ValueError("mirror setup requires g_m")
            if self.g0 is not None or self.k0 is not None or self.delta is not None:
                raise ValueError("atom fields (g0, k0, delta) not allowed for mirror setup")
        else:
            if self.g0 is None or self.k0 is None or self.delta is None:
                raise ValueError("atom setup requires g0, k0 and delta")
            if self.g_m is not None:
                raise ValueError("mirror field g_m not allowed for atom setup")
            if self.delta == 0:
                raise ValueError("atom-cavity detuning delta must be nonzero")


@dataclass(frozen=True)
class RegimeNumbers:
    """Dimensionless measurement-strength ratio r and squeezing parameter xi."""

    r: float
    xi: float


def intracavity_photon_number(setup: CavitySetup, hbar: float) -> float:
    """Steady-state intracavity photon number |alpha|^2 of the driven mode.

    The drive amplitude is E = sqrt(gamma * P / (hbar * omega0)) and the
    cavity settles into a coherent state of amplitude |alpha| = 2 E / gamma.
    """
    if not hbar > 0:
        raise ValueError(f"hbar must be positive, got {hbar}")
    e_sq = setup.gamma * setup.laser_power / (hbar * setup.omega0)
    return 4.0 * e_sq / setup.gamma**2


def measurement_constant(setup: CavitySetup, hbar: float) -> float:
    """Convert cavity parameters to the measurement constant k.

    For the moving mirror k = 2 g_m^2 |alpha|^2 / gamma; for the trapped
    atom k = 2 k0^2 g0^4 |alpha|^2 / (gamma * delta^2).  Vanishes exactly
    when the drive is off.
    """
    n_phot = intracavity_photon_number(setup, hbar)
    if setup.kind is CavityKind.MIRROR:
        return 2.0 * setup.g_m**2 * n_phot / setup.gamma
    return 2.0 * setup.k0**2 * setup.g0**4 * n_phot / (setup.gamma * setup.delta**2)


def regime_numbers(params: PhysicalParams) -> RegimeNumbers:
    """Dimensionless regime numbers r = m omega^2 / (2 hbar eta k) and
    xi = sqrt(1 + 4 / (eta r^2)).

    Requires k > 0 and omega > 0; in the k -> 0 limit r diverges and the
    caller should use the ground-state (xi = 1) formulas directly.
    """
    if params.k == 0:
        raise ValueError("r is undefined for k = 0; use the weak-measurement limit")
    if params.omega == 0:
        raise ValueError("r is undefined for omega = 0")
    r = params.m * params.omega**2 / (2.0 * params.hbar * params.eta * params.k)
    xi = math.sqrt(1.0 + 4.0 / (params.eta * r * r))
    return RegimeNumbers(r=r, xi=xi)


def scaled_record_increment(d_tilde_q: float, setup: CavitySetup, k: float) -> float:
    """Rescale a raw homodyne record increment to the k-normalized form.

    dQ = d~Q * sqrt(2 k / (beta^2 gamma)); all downstream modules consume
    only the scaled dQ, so the homodyne gain beta drops out of the theory.
    """
    if k <= 0:
        raise ValueError("record rescaling requires k > 0")
    return d_tilde_q * math.sqrt(2.0 * k / (setup.beta_homodyne**2 * setup.gamma))
