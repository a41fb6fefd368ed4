"""Strict TOML configuration for campaigns.

Top-level keys mirror :class:`contactid.campaign.CampaignConfig`; every
section is checked against the keys it accepts, so a typo is an error
rather than a silently ignored setting.
"""

from __future__ import annotations

import sys
from pathlib import Path

import numpy as np

from contactid.contact import ContactConfig
from contactid.design import DesignConfig, DesignSpace
from contactid.errors import ConfigurationError
from contactid.estimation import FitOptions
from contactid.mechanics import ARM, BLOCK, ParamSpace, ParamVector, SystemModel
from contactid.sensors import MeasurementModel, measurement_dim

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

TOP_KEYS = {"system", "theta_true", "space", "sensor", "contact", "design", "fit",
            "experiment_count", "method", "seed", "output_dir"}
SYSTEM_KEYS = {"kind", "dt", "horizon", "substeps", "gravity", "link_masses", "base_height", "initial_q"}
SENSOR_KEYS = {"kind", "sigma", "damping"}
CONTACT_KEYS = {"k_n", "c_n", "eps_phi", "mu", "eps_v"}
DESIGN_KEYS = {"iterations", "step", "beta1", "beta2", "restarts", "space"}
ARM_SPACE_KEYS = {"u_max", "knot_steps"}
BLOCK_SPACE_KEYS = {"v_max", "omega_max", "z0_range"}
FIT_KEYS = {"method", "iterations", "step", "damping", "max_step", "tolerance", "patience",
            "screen_levels", "starts", "screen_chi2", "horizon_stages"}
METHODS = ("fisher", "random")


def _check_keys(section: dict, allowed: set, where: str):
    if not isinstance(section, dict):
        raise ConfigurationError(f"[{where}] must be a table")
    unknown = sorted(set(section) - allowed)
    if unknown:
        raise ConfigurationError(f"unknown key(s) in [{where}]: {', '.join(unknown)}")


def _require(section: dict, key: str, where: str):
    if key not in section:
        raise ConfigurationError(f"missing required key {where}.{key}")
    return section[key]


def _tuple(value, where: str, length: int | None = None) -> tuple:
    if not isinstance(value, (list, tuple)):
        raise ConfigurationError(f"{where} must be an array")
    if length is not None and len(value) != length:
        raise ConfigurationError(f"{where} must have {length} entries")
    return tuple(float(v) for v in value)


def _params(section, labels, where: str) -> ParamVector:
    _check_keys(section, set(labels), where)
    missing = [k for k in labels if k not in section]
    if missing:
        raise ConfigurationError(f"[{where}] is missing {', '.join(missing)}")
    return ParamVector(labels, tuple(float(section[k]) for k in labels))


def _system(sec: dict) -> SystemModel:
    _check_keys(sec, SYSTEM_KEYS, "system")
    kind = _require(sec, "kind", "system")
    kw = {}
    for key in ("dt", "gravity", "base_height"):
        if key in sec:
            kw[key] = float(sec[key])
    for key in ("horizon", "substeps"):
        if key in sec:
            kw[key] = int(sec[key])
    for key in ("link_masses", "initial_q"):
        if key in sec:
            kw[key] = _tuple(sec[key], f"system.{key}", 3)
    if kind == BLOCK and ("link_masses" in sec or "initial_q" in sec):
        raise ConfigurationError("link_masses and initial_q apply to the arm only")
    if kind == ARM:
        return SystemModel.three_link_arm(**kw)
    if kind == BLOCK:
        return SystemModel.planar_block(**kw)
    raise ConfigurationError(f"unknown system kind {kind!r}")


def _sensor(sec: dict, sys: SystemModel) -> MeasurementModel:
    _check_keys(sec, SENSOR_KEYS, "sensor")
    kind = _require(sec, "kind", "sensor")
    dim = measurement_dim(kind, sys) if kind in ("contact-force", "accelerometer") else 0
    sigma = _require(sec, "sigma", "sensor")
    sig = np.full(dim, float(sigma)) if isinstance(sigma, (int, float)) else np.asarray(_tuple(sigma, "sensor.sigma"))
    if sig.size != dim or np.any(sig <= 0):
        raise ConfigurationError(f"sensor.sigma needs {dim} positive entries for {kind} on {sys.kind}")
    kw = {"damping": float(sec["damping"])} if "damping" in sec else {}
    model = MeasurementModel.diagonal(kind, sig, **kw)
    model.check_for(sys)
    return model


def _design(sec: dict, sys: SystemModel, seed: int) -> DesignConfig:
    _check_keys(sec, DESIGN_KEYS, "design")
    space_sec = sec.get("space", {})
    if sys.is_arm:
        _check_keys(space_sec, ARM_SPACE_KEYS, "design.space")
        space = DesignSpace.arm(sys, u_max=float(space_sec.get("u_max", 5.0)),
                                knot_steps=int(space_sec.get("knot_steps", 10)))
    else:
        _check_keys(space_sec, BLOCK_SPACE_KEYS, "design.space")
        z0 = _tuple(space_sec.get("z0_range", (0.3, 1.0)), "design.space.z0_range", 2)
        space = DesignSpace.block(v_max=float(space_sec.get("v_max", 3.0)),
                                  omega_max=float(space_sec.get("omega_max", 10.0)), z0_range=z0)
    kw = {k: sec[k] for k in ("iterations", "restarts") if k in sec}
    kw.update({k: float(sec[k]) for k in ("step", "beta1", "beta2") if k in sec})
    return DesignConfig(space, seed=seed, **kw)


def _fit(sec: dict) -> FitOptions:
    _check_keys(sec, FIT_KEYS, "fit")
    ints = {"iterations", "patience", "screen_levels", "starts", "horizon_stages"}
    kw = {k: (int(v) if k in ints else v if k == "method" else float(v)) for k, v in sec.items()}
    return FitOptions(**kw)


def config_from_dict(doc: dict, seed: int | None = None, method: str | None = None,
                     output_dir: str | None = None):
    """Build a CampaignConfig; explicit arguments override the document."""
    from contactid.campaign import CampaignConfig

    _check_keys(doc, TOP_KEYS, "top level")
    try:
        sys = _system(_require(doc, "system", "top"))
        labels = sys.labels
        theta_true = _params(_require(doc, "theta_true", "top"), labels, "theta_true")
        space_sec = _require(doc, "space", "top")
        _check_keys(space_sec, {"lower", "upper"}, "space")
        space = ParamSpace(_params(_require(space_sec, "lower", "space"), labels, "space.lower"),
                           _params(_require(space_sec, "upper", "space"), labels, "space.upper"))
        seed = int(doc.get("seed", 0)) if seed is None else int(seed)
        return CampaignConfig(
            system=sys,
            theta_true=theta_true,
            space=space,
            sensor=_sensor(_require(doc, "sensor", "top"), sys),
            contact=_contact(doc.get("contact", {})),
            design=_design(doc.get("design", {}), sys, seed),
            fit=_fit(doc.get("fit", {})),
            experiment_count=int(doc.get("experiment_count", 20)),
            method=method or doc.get("method", "fisher"),
            seed=seed,
            output_dir=output_dir or doc.get("output_dir", "results"),
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigurationError):
            raise
        raise ConfigurationError(str(exc)) from exc


def _contact(sec: dict) -> ContactConfig:
    _check_keys(sec, CONTACT_KEYS, "contact")
    return ContactConfig(**{k: float(v) for k, v in sec.items()})


def load_config(path, seed: int | None = None, method: str | None = None, output_dir: str | None = None):
    """Parse a TOML file. Unreadable files raise OSError, malformed ones ConfigurationError."""
    raw = Path(path).read_bytes()
    try:
        doc = tomllib.loads(raw.decode("utf-8"))
    except (tomllib.TOMLDecodeError, UnicodeDecodeError) as exc:
        raise ConfigurationError(f"{path}: {exc}") from exc
    return config_from_dict(doc, seed=seed, method=method, output_dir=output_dir)
