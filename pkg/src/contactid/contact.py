"""Smoothed penalty contact with regularized Coulomb friction.

Normal force per point::

    lambda_n = k_n * eps_phi * softplus(-phi / eps_phi) * D(v_n)
    D(v_n)   = s * softplus((1 - c_n * v_n) / s)          # smooth max(0, 1 - c_n v_n)

and friction ``lambda_t = -mu * lambda_n * tanh(v_t / eps_v)``. Every piece is
smooth, so the force is differentiable in the state and in the parameters
that move the contact points.
"""

from __future__ import annotations

from dataclasses import dataclass

import jax
import jax.numpy as jnp
import numpy as np

from contactid.errors import ConfigurationError
from contactid.mechanics import SystemModel, _contact_points, _check_dims, as_theta

# sharpness of the smooth clamp on the damping factor
DAMPING_CLAMP_SCALE = 0.05
# points within this many smoothing lengths of the surface count as active
ACTIVATION_BAND_LENGTHS = 10.0


@dataclass(frozen=True)
class ContactConfig:
    k_n: float = 1.0e4
    c_n: float = 0.5
    eps_phi: float = 1.0e-3
    mu: float = 0.6
    eps_v: float = 1.0e-2

    def __post_init__(self):
        for name in ("k_n", "c_n", "eps_phi", "mu", "eps_v"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ConfigurationError(f"contact {name} must be positive, got {v}")
            object.__setattr__(self, name, float(v))

    @property
    def activation_band(self) -> float:
        return ACTIVATION_BAND_LENGTHS * self.eps_phi


@dataclass(frozen=True)
class ContactSet:
    normal: np.ndarray  # (P,) N
    tangential: np.ndarray  # (P,) N
    active: np.ndarray  # (P,) bool

    @property
    def stacked(self) -> np.ndarray:
        """Forces ordered (tangential, normal) per point, matching Jacobian rows."""
        return np.stack([self.tangential, self.normal], axis=-1).reshape(-1)


def contact_law(phi, v_t, v_n, cfg: ContactConfig):
    """Normal and tangential forces from gap and contact-point velocities."""
    s = DAMPING_CLAMP_SCALE
    penetration = cfg.k_n * cfg.eps_phi * jax.nn.softplus(-phi / cfg.eps_phi)
    damping = s * jax.nn.softplus((1.0 - cfg.c_n * v_n) / s)
    lam_n = penetration * damping
    lam_t = -cfg.mu * lam_n * jnp.tanh(v_t / cfg.eps_v)
    return lam_n, lam_t


def _contact_forces(q, qdot, theta, sys: SystemModel, cfg: ContactConfig):
    """Returns (lambda (P, 2) as (t, n), Jacobian (P, 2, n_q), gap (P,))."""
    pos, jac, _ = _contact_points(q, qdot, theta, sys)
    vel = jnp.einsum("pck,k->pc", jac, qdot)
    lam_n, lam_t = contact_law(pos[:, 1], vel[:, 0], vel[:, 1], cfg)
    return jnp.stack([lam_t, lam_n], axis=-1), jac, pos[:, 1]


def solve_contact(q, qdot, theta, sys: SystemModel, cfg: ContactConfig) -> ContactSet:
    theta = as_theta(theta)
    _check_dims(theta, sys)
    lam, _, phi = _contact_forces(jnp.asarray(q), jnp.asarray(qdot), theta, sys, cfg)
    lam = np.asarray(lam)
    return ContactSet(lam[:, 1], lam[:, 0], np.asarray(phi) < cfg.activation_band)


def complementarity_residual(contacts: ContactSet, distances) -> float:
    """max over points of lambda_n * max(phi, 0)."""
    distances = np.asarray(distances, dtype=float)
    normal = np.asarray(contacts.normal, dtype=float)
    if distances.shape != normal.shape:
        raise ConfigurationError("point count mismatch between forces and distances")
    if normal.size == 0:
        return 0.0
    return float(np.max(normal * np.maximum(distances, 0.0)))
