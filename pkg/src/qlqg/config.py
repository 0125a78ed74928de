"""Experiment configuration: JSON parsing, validation, resolution.

A config file is a single JSON object.  Validation is fail-fast and
field-level: the first offending field raises :class:`ConfigError` with
its dotted path, which the CLI turns into a machine-readable error object
and exit code 2.  All seeds live in the config, so every run is
deterministic given the config bytes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .feedback import ControllerSpec, FeedbackMode, noise_cancelling_gains
from .gaussian import (
    GaussianState,
    ground_state_covariances,
    max_recommended_dt,
    steady_state_covariances,
    thermal_covariances,
)
from .lqg import ControlDesign, feedback_gain, harmonic_design, position_only_design
from .model import CavityKind, CavitySetup, PhysicalParams, measurement_constant

SCHEMA_VERSION = 1
UNITS = ("nondimensional", "si")


@dataclass
class VerifyOptions:
    """Knobs for the oracle-vs-filter comparison run."""

    dim: int = 40
    dt: float = 1e-4
    t_final: float = 5.0
    tolerance: float = 1e-3
    mean_x0: float = 0.7
    mean_p0: float = 0.0
    seed: int = 2024
    check_order: bool = False


@dataclass
class ExperimentConfig:
    """Validated, resolved experiment description."""

    params: PhysicalParams
    controller: ControllerSpec
    design: ControlDesign
    init: GaussianState
    horizon: float
    dt: float
    n_traj: int
    base_seed: int
    units: str = "nondimensional"
    verify: VerifyOptions = field(default_factory=VerifyOptions)
    sweep_field: str | None = None
    sweep_values: list[float] | None = None
    outputs: list[str] = field(default_factory=list)
    raw: dict = field(default_factory=dict, repr=False)


def _require(raw: dict, key: str, kind, path: str):
    if key not in raw:
        raise ConfigError(f"{path}.{key}" if path else key, "missing required field")
    value = raw[key]
    if kind is float and isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if kind is int and isinstance(value, int) and not isinstance(value, bool):
        return value
    if not isinstance(value, kind) or isinstance(value, bool) and kind is not bool:
        raise ConfigError(
            f"{path}.{key}" if path else key,
            f"expected {getattr(kind, '__name__', kind)}, got {type(value).__name__}",
        )
    return value


def _optional(raw: dict, key: str, kind, default, path: str):
    if key not in raw:
        return default
    return _require(raw, key, kind, path)


def _parse_params(raw: dict) -> PhysicalParams:
    section = _require(raw, "params", dict, "")
    m = _require(section, "m", float, "params")
    omega = _require(section, "omega", float, "params")
    hbar = _require(section, "hbar", float, "params")
    eta = _require(section, "eta", float, "params")
    if "cavity" in section:
        cav = _require(section, "cavity", dict, "params")
        kind_name = _require(cav, "kind", str, "params.cavity")
        try:
            kind = CavityKind(kind_name)
        except ValueError:
            raise ConfigError("params.cavity.kind", f"unknown kind {kind_name!r}") from None
        kwargs = dict(
            kind=kind,
            gamma=_require(cav, "gamma", float, "params.cavity"),
            omega0=_require(cav, "omega0", float, "params.cavity"),
            laser_power=_require(cav, "laser_power", float, "params.cavity"),
            beta_homodyne=_optional(cav, "beta_homodyne", float, 1.0, "params.cavity"),
        )
        for name in ("g_m", "g0", "k0", "delta"):
            if name in cav:
                kwargs[name] = _require(cav, name, float, "params.cavity")
        try:
            setup = CavitySetup(**kwargs)
            k = measurement_constant(setup, hbar)
        except ValueError as exc:
            raise ConfigError("params.cavity", str(exc)) from exc
    else:
        k = _require(section, "k", float, "params")
    try:
        return PhysicalParams(m=m, omega=omega, hbar=hbar, k=k, eta=eta)
    except ValueError as exc:
        msg = str(exc)
        for name in ("eta", "omega", "hbar", "m", "k"):
            if msg.startswith(name):
                raise ConfigError(f"params.{name}", msg) from exc
        raise ConfigError("params", msg) from exc


def _parse_design(raw: dict, params: PhysicalParams) -> ControlDesign:
    section = _optional(raw, "design", dict, {}, "")
    q_scalar = _optional(section, "q_scalar", float, 1.0, "design")
    if not q_scalar > 0:
        raise ConfigError("design.q_scalar", f"must be positive, got {q_scalar}")
    position_only = _optional(section, "position_only", bool, False, "design")
    if position_only:
        return position_only_design(params, q_scalar)
    return harmonic_design(params, q_scalar)


def _parse_controller(
    raw: dict, params: PhysicalParams, design: ControlDesign
) -> ControllerSpec:
    section = _optional(raw, "controller", dict, {"mode": "none"}, "")
    mode_name = _optional(section, "mode", str, "none", "controller")
    try:
        mode = FeedbackMode(mode_name)
    except ValueError:
        raise ConfigError("controller.mode", f"unknown mode {mode_name!r}") from None

    k_gain = None
    gamma_x = _optional(section, "gamma_x", float, 0.0, "controller")
    gamma_p = _optional(section, "gamma_p", float, 0.0, "controller")
    if "k_gain" in section:
        k_raw = section["k_gain"]
        try:
            k_gain = np.asarray(k_raw, dtype=float)
        except (TypeError, ValueError):
            raise ConfigError("controller.k_gain", "must be a 2x2 numeric matrix") from None
        if k_gain.shape != (2, 2):
            raise ConfigError("controller.k_gain", f"must be 2x2, got shape {k_gain.shape}")
    elif _optional(section, "from_design", bool, False, "controller"):
        if mode in (FeedbackMode.ESTIMATION, FeedbackMode.COMBINED):
            k_gain = feedback_gain(design)

    alpha = _optional(section, "alpha", float, 0.0, "controller")
    beta = _optional(section, "beta", float, 0.0, "controller")
    if _optional(section, "noise_cancelling", bool, False, "controller"):
        if params.k == 0:
            raise ConfigError("controller.noise_cancelling", "requires k > 0")
        alpha, beta = noise_cancelling_gains(steady_state_covariances(params))

    try:
        return ControllerSpec(
            mode=mode,
            k_gain=k_gain,
            alpha=alpha,
            beta=beta,
            gamma_x=gamma_x,
            gamma_p=gamma_p,
        )
    except ValueError as exc:
        raise ConfigError("controller", str(exc)) from exc


def _parse_init(raw: dict, params: PhysicalParams) -> GaussianState:
    section = _optional(raw, "init", dict, {"kind": "thermal", "nbar": 10.0}, "")
    kind = _optional(section, "kind", str, "thermal", "init")
    mean_x = _optional(section, "mean_x", float, 0.0, "init")
    mean_p = _optional(section, "mean_p", float, 0.0, "init")
    pre_converge = _optional(section, "pre_converge", bool, False, "init")
    try:
        if kind == "thermal":
            nbar = _optional(section, "nbar", float, 10.0, "init")
            cov = thermal_covariances(params, nbar)
        elif kind == "ground":
            cov = ground_state_covariances(params)
        elif kind == "explicit":
            cov = (
                _require(section, "v_x", float, "init"),
                _require(section, "v_p", float, "init"),
                _require(section, "c", float, "init"),
            )
        else:
            raise ConfigError("init.kind", f"unknown kind {kind!r}")
        if pre_converge:
            if params.k == 0:
                raise ConfigError("init.pre_converge", "requires k > 0")
            cov = steady_state_covariances(params)
        return GaussianState(mean_x=mean_x, mean_p=mean_p, v_x=cov[0], v_p=cov[1], c=cov[2])
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError("init", str(exc)) from exc


def _parse_verify(raw: dict) -> VerifyOptions:
    section = _optional(raw, "verify", dict, {}, "")
    opts = VerifyOptions(
        dim=_optional(section, "dim", int, 40, "verify"),
        dt=_optional(section, "dt", float, 1e-4, "verify"),
        t_final=_optional(section, "t_final", float, 5.0, "verify"),
        tolerance=_optional(section, "tolerance", float, 1e-3, "verify"),
        mean_x0=_optional(section, "mean_x0", float, 0.7, "verify"),
        mean_p0=_optional(section, "mean_p0", float, 0.0, "verify"),
        seed=_optional(section, "seed", int, 2024, "verify"),
        check_order=_optional(section, "check_order", bool, False, "verify"),
    )
    if opts.dim < 4:
        raise ConfigError("verify.dim", f"must be at least 4, got {opts.dim}")
    if not opts.dt > 0:
        raise ConfigError("verify.dt", "must be positive")
    if not opts.t_final > 0:
        raise ConfigError("verify.t_final", "must be positive")
    return opts


def _gain_scale(controller: ControllerSpec, params: PhysicalParams) -> float:
    scale = float(np.max(np.abs(controller.gain_matrix())))
    alpha, beta = controller.direct_gains()
    scale = max(scale, 4.0 * params.eta * params.k * max(abs(alpha), abs(beta)))
    return scale


def validate_step_size(
    dt: float, params: PhysicalParams, controller: ControllerSpec, init: GaussianState
) -> None:
    """Fail-fast enforcement of the integrator step-size rule."""
    v_x_max = init.v_x
    if params.k > 0:
        v_x_max = max(v_x_max, steady_state_covariances(params)[0])
    bound = max_recommended_dt(params, v_x_max, _gain_scale(controller, params))
    if dt > bound:
        raise ConfigError(
            "dt",
            f"step size {dt:g} exceeds the stability rule bound {bound:.6g} "
            "(1e-3 * min(1/omega, 1/(8 eta k Vx_max), m/|gain|))",
        )


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError("config", f"file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError("config", f"invalid JSON: {exc}") from exc
    return resolve_config(raw)


def resolve_config(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config", "top level must be a JSON object")
    version = _optional(raw, "schema_version", int, SCHEMA_VERSION, "")
    if version != SCHEMA_VERSION:
        raise ConfigError("schema_version", f"unsupported version {version}")
    units = _optional(raw, "units", str, "nondimensional", "")
    if units not in UNITS:
        raise ConfigError("units", f"must be one of {UNITS}, got {units!r}")

    params = _parse_params(raw)
    design = _parse_design(raw, params)
    controller = _parse_controller(raw, params, design)
    init = _parse_init(raw, params)

    horizon = _optional(raw, "horizon", float, 10.0, "")
    if not horizon > 0:
        raise ConfigError("horizon", f"must be positive, got {horizon}")
    dt = _optional(raw, "dt", float, 1e-4, "")
    if not dt > 0:
        raise ConfigError("dt", f"must be positive, got {dt}")
    if int(round(horizon / dt)) < 1:
        raise ConfigError("horizon", "shorter than one step")
    validate_step_size(dt, params, controller, init)

    n_traj = _optional(raw, "n_traj", int, 1, "")
    if n_traj < 1:
        raise ConfigError("n_traj", f"must be at least 1, got {n_traj}")
    base_seed = _optional(raw, "base_seed", int, 0, "")

    sweep_field = None
    sweep_values = None
    if "sweep" in raw:
        sweep = _require(raw, "sweep", dict, "")
        sweep_field = _require(sweep, "field", str, "sweep")
        if sweep_field not in ("design.q_scalar", "params.k"):
            raise ConfigError(
                "sweep.field", f"must be 'design.q_scalar' or 'params.k', got {sweep_field!r}"
            )
        values = _require(sweep, "values", list, "sweep")
        if not values or not all(
            isinstance(v, (int, float)) and not isinstance(v, bool) for v in values
        ):
            raise ConfigError("sweep.values", "must be a non-empty list of numbers")
        sweep_values = [float(v) for v in values]

    outputs = _optional(raw, "outputs", list, [], "")
    if not all(isinstance(o, str) for o in outputs):
        raise ConfigError("outputs", "must be a list of paths")

    return ExperimentConfig(
        params=params,
        controller=controller,
        design=design,
        init=init,
        horizon=horizon,
        dt=dt,
        n_traj=n_traj,
        base_seed=base_seed,
        units=units,
        verify=_parse_verify(raw),
        sweep_field=sweep_field,
        sweep_values=sweep_values,
        outputs=outputs,
        raw=raw,
    )


def with_sweep_value(config: ExperimentConfig, value: float) -> ExperimentConfig:
    """Re-resolve the config with one sweep grid point applied."""
    raw = json.loads(json.dumps(config.raw))
    raw.pop("sweep", None)
    if config.sweep_field == "design.q_scalar":
        raw.setdefault("design", {})["q_scalar"] = value
    else:
        raw.setdefault("params", {})["k"] = value
        raw["params"].pop("cavity", None)
    return resolve_config(raw)
