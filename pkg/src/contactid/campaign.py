"""Sequential design-execute-estimate loop, method comparison and result files.

Experiment ``k`` of a campaign draws its design randomness from the
generator seeded by ``(seed, 2, k)`` and its measurement noise from
``(seed, 3, k)``, so the Fisher and random arms of one seed see identical
noise streams (common random numbers).
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import jax.numpy as jnp
import numpy as np

from contactid.contact import ContactConfig
from contactid.design import BLOCK_DESIGN_NAMES, DesignConfig, DesignVariables, design_experiment, random_design, realize
from contactid.errors import ConfigurationError, DivergenceError
from contactid.estimation import Dataset, Experiment, FitOptions, fit_mle, param_error
from contactid.experiment import predict_with_trajectory_jit
from contactid.fisher import empirical_fim, trajectory_scores
from contactid.mechanics import ParamSpace, ParamVector, State, SystemModel
from contactid.sensors import MeasurementModel, simulate_readings
from contactid.simulate import Trajectory, first_nonfinite_step

METHODS = ("fisher", "random")
# normal force above which a step counts as a contact step (N)
CONTACT_THRESHOLD = 0.1
CSV_COLUMNS = ("index", "method", "seed", "param_error", "fim_trace", "cum_fim_trace",
               "contact_steps", "max_normal_force")


@dataclass(frozen=True)
class CampaignConfig:
    system: SystemModel
    theta_true: ParamVector
    space: ParamSpace
    sensor: MeasurementModel
    contact: ContactConfig
    design: DesignConfig
    fit: FitOptions = FitOptions()
    experiment_count: int = 20
    method: str = "fisher"
    seed: int = 0
    output_dir: str = "results"

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigurationError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.experiment_count < 1:
            raise ConfigurationError("experiment_count must be >= 1")
        if self.theta_true.labels != self.system.labels:
            raise ConfigurationError(f"theta_true labels {self.theta_true.labels} do not match {self.system.kind}")
        if self.space.labels != self.system.labels:
            raise ConfigurationError("parameter space labels do not match the system")
        if not self.space.contains(self.theta_true):
            raise ConfigurationError("theta_true lies outside the parameter space")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigurationError("seed must be an unsigned 64-bit integer")
        self.sensor.check_for(self.system)
        space = self.design.space
        if self.system.is_arm == (space.names == BLOCK_DESIGN_NAMES):
            raise ConfigurationError("design space does not match the system kind")
        if self.system.is_arm and space.dim != 3 * math.ceil(self.system.horizon / space.knot_steps):
            raise ConfigurationError("arm design knots do not cover the horizon")

    def replace(self, **kw) -> "CampaignConfig":
        fields = {k: getattr(self, k) for k in self.__dataclass_fields__}
        fields.update(kw)
        return CampaignConfig(**fields)


@dataclass(frozen=True)
class ExperimentRecord:
    index: int
    method: str
    seed: int
    design: DesignVariables
    contact_steps: int
    max_normal_force: float
    fim_trace: float
    cum_fim_trace: float
    theta_hat: ParamVector
    param_error: float
    nll: float
    trajectory: dict | None = field(default=None, repr=False, compare=False)


def _execute(design: DesignVariables, cfg: CampaignConfig, noise_rng: np.random.Generator):
    """Roll the design out on the ground truth and record noisy readings."""
    q0, qd0, controls = realize(design.values, cfg.system, cfg.design.space)
    g, (qs, qds, lams, phis) = predict_with_trajectory_jit(
        q0, qd0, controls, jnp.asarray(cfg.theta_true.array), cfg.system, cfg.contact, cfg.sensor)
    qs, qds, lams, phis, g = (np.asarray(a) for a in (qs, qds, lams, phis, g))
    bad = first_nonfinite_step(qs, qds)
    if bad is not None or not np.all(np.isfinite(g)):
        step = bad - 1 if bad is not None else None
        raise DivergenceError(f"ground-truth rollout diverged (step {step})", step)
    traj = Trajectory(qs, qds, np.asarray(controls), lams[:, :, 1], lams[:, :, 0], phis)
    readings = simulate_readings(g, cfg.sensor, noise_rng)
    return traj, readings


def _trajectory_dump(traj: Trajectory, readings, design: DesignVariables, index: int, cfg: CampaignConfig) -> dict:
    lam = np.stack([traj.tangential, traj.normal], axis=-1)
    return {
        "index": index,
        "method": cfg.method,
        "seed": int(cfg.seed),
        "system": cfg.system.kind,
        "dt": cfg.system.dt,
        "design": {"names": list(design.names), "values": design.values.tolist()},
        "q": traj.q.tolist(),
        "qdot": traj.qdot.tolist(),
        "u": traj.controls.tolist(),
        "lambda": lam.tolist(),
        "y": np.asarray(readings).tolist(),
    }


def run_campaign(cfg: CampaignConfig, keep_trajectories: bool = False) -> list[ExperimentRecord]:
    """Run ``cfg.experiment_count`` design/execute/fit rounds.

    On failure the exception is re-raised with the records completed so far
    attached as ``partial_records``.
    """
    records: list[ExperimentRecord] = []
    theta_hat = cfg.space.midpoint
    data = Dataset()
    previous = None
    cumulative = 0.0
    try:
        for k in range(1, cfg.experiment_count + 1):
            design_rng = np.random.default_rng([int(cfg.seed), 2, k])
            noise_rng = np.random.default_rng([int(cfg.seed), 3, k])
            if cfg.method == "fisher":
                design = design_experiment(theta_hat, cfg.system, cfg.sensor, cfg.contact, cfg.design,
                                           rng=design_rng, warm_start=previous).design
                previous = design
            else:
                design = random_design(cfg.design, design_rng)
            traj, readings = _execute(design, cfg, noise_rng)
            data = data.add(Experiment(design, State(traj.q[0], traj.qdot[0]), traj.controls, readings))
            fit = fit_mle(data, theta_hat, cfg.space, cfg.system, cfg.sensor, cfg.contact, cfg.fit)
            theta_hat = fit.theta
            # information the realized readings carry, scored at the updated estimate
            scores = trajectory_scores(readings, traj, theta_hat, cfg.sensor, cfg.system, cfg.contact)
            fim_trace = empirical_fim(scores).trace
            cumulative += fim_trace
            records.append(ExperimentRecord(
                index=k,
                method=cfg.method,
                seed=int(cfg.seed),
                design=design,
                contact_steps=traj.contact_steps(CONTACT_THRESHOLD),
                max_normal_force=traj.max_normal_force(),
                fim_trace=fim_trace,
                cum_fim_trace=cumulative,
                theta_hat=theta_hat,
                param_error=param_error(theta_hat, cfg.theta_true),
                nll=fit.nll,
                trajectory=_trajectory_dump(traj, readings, design, k, cfg) if keep_trajectories else None,
            ))
    except Exception as exc:
        exc.partial_records = records
        raise
    return records


@dataclass(frozen=True)
class Comparison:
    error_reduction_pct: float | None  # None when the random arm's error is zero
    info_ratio: float | None  # None when the random arm collected no information
    fisher_error: float
    random_error: float

    def report(self) -> str:
        red = "undefined (random error is zero)" if self.error_reduction_pct is None else f"{self.error_reduction_pct:.2f}%"
        ratio = "undefined (random information is zero)" if self.info_ratio is None else f"{self.info_ratio:.6g}"
        return (f"final error  fisher {self.fisher_error:.6g}  random {self.random_error:.6g}\n"
                f"error reduction {red}\ninformation ratio {ratio}")


def compare_methods(fisher, random) -> Comparison:
    """Final-experiment error reduction and cumulative information ratio."""
    if len(fisher) != len(random):
        raise ConfigurationError(f"experiment counts differ: {len(fisher)} vs {len(random)}")
    if not fisher:
        raise ConfigurationError("nothing to compare")
    ef, er = float(fisher[-1].param_error), float(random[-1].param_error)
    inf_f, inf_r = float(fisher[-1].cum_fim_trace), float(random[-1].cum_fim_trace)
    reduction = None if er == 0.0 else 100.0 * (er - ef) / er
    ratio = None if inf_r == 0.0 else inf_f / inf_r
    return Comparison(reduction, ratio, ef, er)


# ------------------------------------------------------------------ files


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    return format(float(x), ".17g")


def campaign_csv(records) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for r in records:
        writer.writerow([_fmt(r.index), r.method, _fmt(r.seed), _fmt(r.param_error), _fmt(r.fim_trace),
                         _fmt(r.cum_fim_trace), _fmt(r.contact_steps), _fmt(r.max_normal_force)])
    return buf.getvalue()


@dataclass(frozen=True)
class CsvRecord:
    index: int
    method: str
    seed: int
    param_error: float
    fim_trace: float
    cum_fim_trace: float
    contact_steps: int
    max_normal_force: float


def read_campaign_csv(path) -> list[CsvRecord]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
            raise ConfigurationError(f"{path}: unexpected columns {reader.fieldnames}")
        try:
            return [CsvRecord(int(row["index"]), row["method"], int(row["seed"]), float(row["param_error"]),
                              float(row["fim_trace"]), float(row["cum_fim_trace"]), int(row["contact_steps"]),
                              float(row["max_normal_force"])) for row in reader]
        except ValueError as exc:
            raise ConfigurationError(f"{path}: {exc}") from exc


def dumps_json(obj) -> str:
    return json.dumps(obj, indent=1, allow_nan=False) + "\n"


def write_atomic(path, text: str):
    """Write via a temporary file in the same directory, then rename."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def emit_results(records, cfg: CampaignConfig, out_dir=None) -> list[Path]:
    """Write campaign.csv, estimate.json and any kept trajectories; returns the paths."""
    out = Path(out_dir if out_dir is not None else cfg.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    written = []

    def put(name, text):
        path = out / name
        try:
            write_atomic(path, text)
        except OSError as exc:
            raise OSError(f"cannot write {path}: {exc}") from exc
        written.append(path)

    put("campaign.csv", campaign_csv(records))
    theta = records[-1].theta_hat if records else cfg.space.midpoint
    put("estimate.json", dumps_json({
        "system": cfg.system.kind,
        "method": cfg.method,
        "seed": int(cfg.seed),
        "experiments": len(records),
        "labels": list(theta.labels),
        "values": list(theta.values),
        "param_error": records[-1].param_error if records else param_error(theta, cfg.theta_true),
    }))
    for r in records:
        if r.trajectory is not None:
            put(f"trajectory_{r.index}.json", dumps_json(r.trajectory))
    return written


def load_trajectory(path) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: {exc}") from exc
    for key in ("design", "q", "qdot", "u", "y"):
        if key not in doc:
            raise ConfigurationError(f"{path}: missing {key!r}")
    return doc


def experiment_from_dump(doc: dict, sys: SystemModel) -> Experiment:
    design = DesignVariables(np.asarray(doc["design"]["values"], float), tuple(doc["design"]["names"]))
    q, qd = np.asarray(doc["q"], float), np.asarray(doc["qdot"], float)
    y = np.asarray(doc["y"], float)
    try:
        u = np.asarray(doc["u"], float).reshape(y.shape[0], sys.control_dim)
    except ValueError as exc:
        raise ConfigurationError(f"trajectory controls do not match a {sys.kind}: {exc}") from exc
    return Experiment(design, State(q[0], qd[0]), u, y)

