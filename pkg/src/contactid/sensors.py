"""Measurement maps, Gaussian likelihood, scores and synthetic readings.

Two sensors are supported:

* ``contact-force``: damped least-squares contact force recovered from the
  equations of motion, ``(Jc Jc^T + rho I)^-1 Jc (M qdd + b - u)``, with
  ``qdd`` a backward difference of simulated velocities. Rows of contacts
  outside the activation band are zeroed, so a point that is not touching
  reads zero force.
* ``accelerometer``: planar acceleration of the sensor point,
  ``Jg_dot qdot + Jg M^-1 (Jc^T lambda - b + u)``; no gravity offset.
"""

from __future__ import annotations

from dataclasses import dataclass

import jax
import jax.numpy as jnp
import numpy as np

from contactid.contact import ContactConfig, ContactSet
from contactid.errors import ConfigurationError
from contactid.mechanics import (
    State,
    SystemModel,
    _bias,
    _check_dims,
    _contact_points,
    _mass_matrix,
    _sensor_terms,
    as_theta,
)

CONTACT_FORCE = "contact-force"
ACCELEROMETER = "accelerometer"


@dataclass(frozen=True)
class MeasurementModel:
    """Sensor kind plus Gaussian noise covariance (stored as nested tuples so it hashes)."""

    kind: str
    noise_cov: tuple[tuple[float, ...], ...]
    damping: float = 1e-6

    def __post_init__(self):
        if self.kind not in (CONTACT_FORCE, ACCELEROMETER):
            raise ConfigurationError(f"unknown sensor kind {self.kind!r}")
        cov = np.atleast_2d(np.asarray(self.noise_cov, dtype=float))
        if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
            raise ConfigurationError("noise covariance must be square")
        if not np.allclose(cov, cov.T, rtol=0, atol=1e-12 * max(1.0, np.abs(cov).max())):
            raise ConfigurationError("noise covariance must be symmetric")
        try:
            np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            raise ConfigurationError("noise covariance must be positive definite") from None
        object.__setattr__(self, "noise_cov", tuple(tuple(float(v) for v in row) for row in cov))

    @classmethod
    def isotropic(cls, kind: str, sigma: float, dim: int, **kw) -> "MeasurementModel":
        return cls(kind, tuple(tuple(sigma**2 if i == j else 0.0 for j in range(dim)) for i in range(dim)), **kw)

    @classmethod
    def diagonal(cls, kind: str, sigmas, **kw) -> "MeasurementModel":
        sig = np.asarray(sigmas, dtype=float)
        return cls(kind, tuple(map(tuple, np.diag(sig**2))), **kw)

    @property
    def dim(self) -> int:
        return len(self.noise_cov)

    @property
    def cov(self) -> np.ndarray:
        return np.array(self.noise_cov)

    @property
    def cholesky(self) -> np.ndarray:
        return np.linalg.cholesky(self.cov)

    @property
    def whitener(self) -> np.ndarray:
        """Inverse Cholesky factor; ``whitener @ r`` has identity covariance."""
        return np.linalg.inv(self.cholesky)

    @property
    def precision(self) -> np.ndarray:
        return np.linalg.inv(self.cov)

    def check_for(self, sys: SystemModel):
        expected = measurement_dim(self.kind, sys)
        if self.dim != expected:
            raise ConfigurationError(
                f"{self.kind} on {sys.kind} produces {expected} values, covariance is {self.dim}x{self.dim}"
            )


def measurement_dim(kind: str, sys: SystemModel) -> int:
    return 2 * sys.n_contacts if kind == CONTACT_FORCE else 2


@dataclass(frozen=True)
class SensorReading:
    y: np.ndarray
    index: int = 0

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        if not np.all(np.isfinite(y)):
            raise ConfigurationError("sensor readings must be finite")
        object.__setattr__(self, "y", y)


# -------------------------------------------------------------- jnp kernels


def _force_sensor(q, qdot, u, qddot_est, theta, sys, band, rho):
    pos, jac, _ = _contact_points(q, qdot, theta, sys)
    active = jax.lax.stop_gradient(pos[:, 1] < band).astype(q.dtype)
    jc = (jac * active[:, None, None]).reshape(-1, sys.n_q)
    residual = _mass_matrix(q, theta, sys) @ qddot_est + _bias(q, qdot, theta, sys) - sys.generalized_force(u)
    gram = jc @ jc.T + rho * jnp.eye(jc.shape[0])
    return jnp.linalg.solve(gram, jc @ residual)


def _accelerometer(q, qdot, u, lam, theta, sys):
    _, jac, _ = _contact_points(q, qdot, theta, sys)
    jg, jg_dot = _sensor_terms(q, qdot, theta, sys)
    force = jnp.einsum("pck,pc->k", jac, lam) - _bias(q, qdot, theta, sys) + sys.generalized_force(u)
    return jg_dot @ qdot + jg @ jnp.linalg.solve(_mass_matrix(q, theta, sys), force)


def _sequence(qs, qds, controls, lams, theta, sys, model: MeasurementModel, band):
    """Noise-free readings (N, m) for a rollout produced under ``theta``."""
    n = controls.shape[0]
    if model.kind == CONTACT_FORCE:
        qdd = (qds[1:] - qds[:-1]) / sys.dt
        fn = lambda q, qd, u, a: _force_sensor(q, qd, u, a, theta, sys, band, model.damping)
        return jax.vmap(fn)(qs[:n], qds[:n], controls, qdd)
    fn = lambda q, qd, u, lam: _accelerometer(q, qd, u, lam, theta, sys)
    return jax.vmap(fn)(qs[:n], qds[:n], controls, lams)


# -------------------------------------------------------------- public API


def contact_force_sensor(x: State, u, qddot_est, theta, sys: SystemModel,
                         cfg: ContactConfig | None = None, damping: float = 1e-6):
    cfg = cfg or ContactConfig()
    theta = as_theta(theta)
    _check_dims(theta, sys)
    u = jnp.asarray(u, dtype=float).reshape(sys.control_dim)
    return _force_sensor(jnp.asarray(x.q), jnp.asarray(x.qdot), u, jnp.asarray(qddot_est),
                         theta, sys, cfg.activation_band, damping)


def accelerometer(x: State, u, contacts: ContactSet | np.ndarray, theta, sys: SystemModel):
    theta = as_theta(theta)
    _check_dims(theta, sys)
    lam = _lambda_array(contacts, sys)
    u = jnp.asarray(u, dtype=float).reshape(sys.control_dim)
    return _accelerometer(jnp.asarray(x.q), jnp.asarray(x.qdot), u, lam, theta, sys)


def _lambda_array(contacts, sys: SystemModel):
    if isinstance(contacts, ContactSet):
        return jnp.stack([jnp.asarray(contacts.tangential), jnp.asarray(contacts.normal)], axis=-1)
    return jnp.asarray(contacts, dtype=float).reshape(sys.n_contacts, 2)


def log_likelihood(ybar, g_val, model: MeasurementModel):
    """Gaussian log density of a reading given the predicted mean."""
    y = ybar.y if isinstance(ybar, SensorReading) else ybar
    y, g_val = jnp.asarray(y, dtype=float), jnp.asarray(g_val)
    if y.shape != (model.dim,) or g_val.shape != (model.dim,):
        raise ConfigurationError(f"reading has shape {y.shape}, prediction {g_val.shape}, model expects ({model.dim},)")
    r = y - g_val
    w = jnp.asarray(model.whitener)
    z = w @ r
    _, logdet = np.linalg.slogdet(model.cov)
    return -0.5 * z @ z - 0.5 * (model.dim * np.log(2 * np.pi) + logdet)


def score(ybar, x: State, u, aux, theta, model: MeasurementModel, sys: SystemModel,
          cfg: ContactConfig | None = None):
    """Gradient of the log-likelihood of one reading w.r.t. the parameters.

    ``aux`` is the estimated acceleration for the contact-force sensor and the
    contact forces for the accelerometer; both are held fixed, so this is the
    partial derivative at a given (x, u, aux). Trajectory-level scores that
    also carry the state sensitivity live in :mod:`contactid.fisher`.
    """
    cfg = cfg or ContactConfig()
    theta = as_theta(theta)

    def g(th):
        if model.kind == CONTACT_FORCE:
            return contact_force_sensor(x, u, aux, th, sys, cfg, model.damping)
        return accelerometer(x, u, aux, th, sys)

    y = ybar.y if isinstance(ybar, SensorReading) else ybar
    g_val, jac = g(theta), jax.jacfwd(g)(theta)
    return jac.T @ jnp.asarray(model.precision) @ (jnp.asarray(y) - g_val)


def simulate_measurement(g_val, model: MeasurementModel, rng: np.random.Generator,
                         index: int = 0) -> SensorReading:
    g_val = np.asarray(g_val, dtype=float)
    noise = model.cholesky @ rng.standard_normal(model.dim)
    return SensorReading(g_val + noise, index)


def simulate_readings(g_seq, model: MeasurementModel, rng: np.random.Generator) -> np.ndarray:
    """Noisy readings for a whole (N, m) sequence of predicted means."""
    g_seq = np.asarray(g_seq, dtype=float)
    z = rng.standard_normal(g_seq.shape)
    return g_seq + z @ model.cholesky.T
