"""Cross-representation check: exact number-basis oracle vs Gaussian filter.

Both integrators are driven by the same Wiener path, so any disagreement
in the five moments (means plus covariances) is discretization or
truncation error.  Relative errors are measured against each moment's
characteristic scale over the run (its largest filter value, floored by
the ground-state scale so that moments pinned at zero do not divide by
zero).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .fock import build_operators, coherent_density_matrix, moments, sme_step
from .gaussian import GaussianState, ground_state_covariances, step_conditioned
from .model import PhysicalParams

MOMENT_NAMES = ("mean_x", "mean_p", "v_x", "v_p", "c")


@dataclass
class ComparisonResult:
    """Moment-level agreement report between oracle and filter."""

    times: np.ndarray
    fock_moments: np.ndarray
    gauss_moments: np.ndarray
    abs_errors: np.ndarray
    scales: np.ndarray
    rel_errors: np.ndarray
    max_rel_error: float
    leak_final: float
    min_eigenvalue: float
    purity_final: float

    def rel_error_by_name(self) -> dict[str, float]:
        return dict(zip(MOMENT_NAMES, self.rel_errors.tolist()))


def _moment_scales(params: PhysicalParams, gauss: np.ndarray) -> np.ndarray:
    m, omega, hbar = params.m, params.omega, params.hbar
    floors = np.array(
        [
            math.sqrt(hbar / (2.0 * m * omega)),
            math.sqrt(hbar * m * omega / 2.0),
            hbar / (2.0 * m * omega),
            hbar * m * omega / 2.0,
            hbar / 2.0,
        ]
    )
    return np.maximum(np.max(np.abs(gauss), axis=0), floors)


def run_comparison(
    params: PhysicalParams,
    dim: int = 40,
    dt: float = 1e-4,
    t_final: float = 5.0,
    mean_x0: float = 0.7,
    mean_p0: float = 0.0,
    seed: int = 2024,
) -> ComparisonResult:
    """Integrate oracle and filter on one shared noise path and compare."""
    n_steps = int(round(t_final / dt))
    if n_steps < 1:
        raise ValueError("t_final shorter than one step")
    ops = build_operators(dim, params)
    fstate = coherent_density_matrix(dim, mean_x0, mean_p0, params)
    cov0 = ground_state_covariances(params)
    gstate = GaussianState(mean_x0, mean_p0, cov0[0], cov0[1], cov0[2])

    rng = np.random.Generator(np.random.Philox(key=seed))
    sqrt_dt = math.sqrt(dt)

    fock_m = np.empty((n_steps + 1, 5))
    gauss_m = np.empty((n_steps + 1, 5))
    fock_m[0] = moments(fstate, ops)[:5]
    gauss_m[0] = (gstate.mean_x, gstate.mean_p, gstate.v_x, gstate.v_p, gstate.c)

    chunk = 4096
    done = 0
    while done < n_steps:
        ln = min(chunk, n_steps - done)
        dws = rng.standard_normal(ln) * sqrt_dt
        for i in range(ln):
            dw = dws[i]
            fstate = sme_step(fstate, ops, params, dt, dw)
            gstate = step_conditioned(gstate, params, dt, dw)
            row = done + i + 1
            fock_m[row] = moments(fstate, ops)[:5]
            gauss_m[row] = (gstate.mean_x, gstate.mean_p, gstate.v_x, gstate.v_p, gstate.c)
        done += ln

    abs_err = np.max(np.abs(fock_m - gauss_m), axis=0)
    scales = _moment_scales(params, gauss_m)
    rel = abs_err / scales
    return ComparisonResult(
        times=dt * np.arange(n_steps + 1),
        fock_moments=fock_m,
        gauss_moments=gauss_m,
        abs_errors=abs_err,
        scales=scales,
        rel_errors=rel,
        max_rel_error=float(np.max(rel)),
        leak_final=fstate.top_level_population(),
        min_eigenvalue=fstate.min_eigenvalue(),
        purity_final=fstate.purity(),
    )
