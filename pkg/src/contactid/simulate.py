"""Semi-implicit Euler stepping and open-loop rollouts."""

from __future__ import annotations

from dataclasses import dataclass

import jax
import jax.numpy as jnp
import numpy as np

from contactid.contact import ContactConfig, ContactSet, _contact_forces
from contactid.errors import ConfigurationError, DivergenceError
from contactid.mechanics import State, SystemModel, _bias, _check_dims, _mass_matrix, as_theta


def _accel(q, qdot, u, theta, sys: SystemModel, cfg: ContactConfig):
    lam, jac, phi = _contact_forces(q, qdot, theta, sys, cfg)
    mass = _mass_matrix(q, theta, sys)
    force = sys.generalized_force(u) + jnp.einsum("pck,pc->k", jac, lam) - _bias(q, qdot, theta, sys)
    return jnp.linalg.solve(mass, force), lam, phi


def _substep(q, qdot, u, theta, sys, cfg, h):
    qddot, lam, phi = _accel(q, qdot, u, theta, sys, cfg)
    qdot_next = qdot + h * qddot
    return q + h * qdot_next, qdot_next, lam, phi


def _step(q, qdot, u, theta, sys, cfg):
    """Advance one control interval; forces are reported at the interval start."""
    h = sys.dt / sys.substeps
    q1, qd1, lam, phi = _substep(q, qdot, u, theta, sys, cfg, h)
    if sys.substeps == 1:
        return q1, qd1, lam, phi

    def body(carry, _):
        qq, qqd = carry
        qq, qqd, _, _ = _substep(qq, qqd, u, theta, sys, cfg, h)
        return (qq, qqd), None

    (q1, qd1), _ = jax.lax.scan(body, (q1, qd1), None, length=sys.substeps - 1)
    return q1, qd1, lam, phi


def _rollout(q0, qdot0, controls, theta, sys, cfg):
    """Arrays (qs, qdots, lams, phis) with lams (N, P, 2) ordered (t, n)."""

    def body(carry, u):
        q, qd = carry
        q1, qd1, lam, phi = _step(q, qd, u, theta, sys, cfg)
        return (q1, qd1), (q1, qd1, lam, phi)

    _, (qs, qds, lams, phis) = jax.lax.scan(body, (q0, qdot0), controls)
    qs = jnp.concatenate([q0[None], qs])
    qds = jnp.concatenate([qdot0[None], qds])
    return qs, qds, lams, phis


rollout_arrays = jax.jit(_rollout, static_argnames=("sys", "cfg"))


@dataclass(frozen=True)
class Trajectory:
    q: np.ndarray  # (N+1, n_q)
    qdot: np.ndarray  # (N+1, n_q)
    controls: np.ndarray  # (N, control_dim)
    normal: np.ndarray  # (N, P) normal force at step i
    tangential: np.ndarray  # (N, P)
    distances: np.ndarray  # (N, P) signed distance at state i

    @property
    def horizon(self) -> int:
        return self.controls.shape[0]

    def state(self, i: int) -> State:
        return State(self.q[i], self.qdot[i])

    def contacts(self, i: int, band: float) -> ContactSet:
        return ContactSet(self.normal[i], self.tangential[i], self.distances[i] < band)

    def contact_steps(self, threshold: float = 0.0) -> int:
        return int(np.sum(np.max(self.normal, axis=1) > threshold))

    def max_normal_force(self) -> float:
        return float(np.max(self.normal)) if self.normal.size else 0.0


def _controls_array(controls, sys: SystemModel) -> jnp.ndarray:
    u = jnp.asarray(controls, dtype=float)
    if u.ndim == 1 and sys.control_dim == 0:
        u = u.reshape(-1, 0)
    if u.ndim != 2 or u.shape[1] != sys.control_dim:
        raise ConfigurationError(
            f"controls must have shape (N, {sys.control_dim}), got {u.shape}"
        )
    return u


def step(x: State, u, theta, sys: SystemModel, cfg: ContactConfig):
    """One semi-implicit Euler step; returns (next State, ContactSet at x)."""
    theta = as_theta(theta)
    _check_dims(theta, sys)
    u = jnp.asarray(u, dtype=float).reshape(sys.control_dim)
    q1, qd1, lam, phi = jax.jit(_step, static_argnames=("sys", "cfg"))(
        jnp.asarray(x.q), jnp.asarray(x.qdot), u, theta, sys, cfg
    )
    q1, qd1 = np.asarray(q1), np.asarray(qd1)
    if not (np.all(np.isfinite(q1)) and np.all(np.isfinite(qd1))):
        raise DivergenceError("non-finite state after step 0", 0)
    lam = np.asarray(lam)
    contacts = ContactSet(lam[:, 1], lam[:, 0], np.asarray(phi) < cfg.activation_band)
    return State(q1, qd1), contacts


def first_nonfinite_step(qs, qds) -> int | None:
    bad = ~(np.all(np.isfinite(qs), axis=1) & np.all(np.isfinite(qds), axis=1))
    idx = np.flatnonzero(bad)
    return int(idx[0]) if idx.size else None


def rollout(x0: State, controls, theta, sys: SystemModel, cfg: ContactConfig) -> Trajectory:
    theta = as_theta(theta)
    _check_dims(theta, sys)
    u = _controls_array(controls, sys)
    if u.shape[0] < 1:
        raise ConfigurationError("rollout needs at least one control step")
    qs, qds, lams, phis = (
        np.asarray(a)
        for a in rollout_arrays(jnp.asarray(x0.q), jnp.asarray(x0.qdot), u, theta, sys, cfg)
    )
    bad = first_nonfinite_step(qs, qds)
    if bad is not None:
        raise DivergenceError(f"rollout diverged at step {bad - 1} -> {bad}", bad - 1)
    return Trajectory(qs, qds, np.asarray(u), lams[:, :, 1], lams[:, :, 0], phis)
