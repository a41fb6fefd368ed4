"""Empirical and predicted Fisher information, and the trace criterion."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from contactid.contact import ContactConfig
from contactid.errors import ConfigurationError
from contactid.experiment import predicted_fim_jit, scores_jit
from contactid.mechanics import SystemModel, as_theta
from contactid.sensors import MeasurementModel
from contactid.simulate import Trajectory


@dataclass(frozen=True)
class FisherMatrix:
    entries: np.ndarray

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.entries, dtype=float))
        if a.shape[0] != a.shape[1]:
            raise ConfigurationError("Fisher matrix must be square")
        object.__setattr__(self, "entries", 0.5 * (a + a.T))

    @classmethod
    def zeros(cls, d: int) -> "FisherMatrix":
        return cls(np.zeros((d, d)))

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    @property
    def trace(self) -> float:
        return trace_objective(self)

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.entries)[0])

    def __add__(self, other: "FisherMatrix") -> "FisherMatrix":
        return accumulate(self, other)


def empirical_fim(scores: Iterable, dim: int | None = None) -> FisherMatrix:
    """Sum of score outer products; an empty sequence gives the zero matrix."""
    xs = [np.asarray(s, dtype=float).ravel() for s in scores]
    if not xs:
        if dim is None:
            raise ConfigurationError("dimension required for an empty score sequence")
        return FisherMatrix.zeros(dim)
    if len({x.shape for x in xs}) != 1:
        raise ConfigurationError("scores differ in dimension")
    s = np.stack(xs)
    return FisherMatrix(s.T @ s)


def predicted_fim(traj: Trajectory, theta, model: MeasurementModel, sys: SystemModel,
                  cfg: ContactConfig | None = None) -> FisherMatrix:
    """Expected information of replaying ``traj``'s initial state and controls under ``theta``."""
    cfg = cfg or ContactConfig()
    model.check_for(sys)
    theta = as_theta(theta)
    fim = predicted_fim_jit(np.asarray(traj.q[0]), np.asarray(traj.qdot[0]),
                            np.asarray(traj.controls, dtype=float), theta, sys, cfg, model)
    return FisherMatrix(np.asarray(fim))


def trajectory_scores(readings, traj: Trajectory, theta, model: MeasurementModel,
                      sys: SystemModel, cfg: ContactConfig | None = None) -> np.ndarray:
    """Scores (N, d) of realized readings, differentiating through the replayed rollout."""
    cfg = cfg or ContactConfig()
    theta = as_theta(theta)
    return np.asarray(scores_jit(np.asarray(readings, dtype=float), np.asarray(traj.q[0]),
                                 np.asarray(traj.qdot[0]), np.asarray(traj.controls, dtype=float),
                                 theta, sys, cfg, model))


def trace_objective(fim: FisherMatrix | np.ndarray) -> float:
    a = fim.entries if isinstance(fim, FisherMatrix) else np.asarray(fim)
    return float(np.trace(a))


def accumulate(prev: FisherMatrix, new: FisherMatrix) -> FisherMatrix:
    if prev.dim != new.dim:
        raise ConfigurationError(f"cannot add {prev.dim}x{prev.dim} and {new.dim}x{new.dim} information")
    return FisherMatrix(prev.entries + new.entries)
