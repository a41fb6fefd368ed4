"""Rollout-to-readings pipeline shared by design, estimation and the campaign.

Everything here is a pure ``jax.numpy`` function of the initial state, the
controls and the parameters, so forward-mode tangents on the parameters
carry the state and contact sensitivity through the whole rollout.
"""

from __future__ import annotations

from functools import partial

import jax
import jax.numpy as jnp
import numpy as np

from contactid.contact import ContactConfig
from contactid.mechanics import SystemModel
from contactid.sensors import MeasurementModel, _sequence
from contactid.simulate import _rollout

_STATIC = ("sys", "cfg", "model")


def predict(q0, qd0, controls, theta, sys: SystemModel, cfg: ContactConfig, model: MeasurementModel):
    """Noise-free readings (N, m) of an open-loop experiment under ``theta``."""
    qs, qds, lams, _ = _rollout(q0, qd0, controls, theta, sys, cfg)
    return _sequence(qs, qds, controls, lams, theta, sys, model, cfg.activation_band)


def predict_with_trajectory(q0, qd0, controls, theta, sys, cfg, model):
    qs, qds, lams, phis = _rollout(q0, qd0, controls, theta, sys, cfg)
    g = _sequence(qs, qds, controls, lams, theta, sys, model, cfg.activation_band)
    return g, (qs, qds, lams, phis)


def sensitivities(q0, qd0, controls, theta, sys, cfg, model):
    """(readings (N, m), d readings / d theta (N, m, d)), forward mode."""
    fn = lambda th: predict(q0, qd0, controls, th, sys, cfg, model)
    basis = jnp.eye(theta.shape[0], dtype=theta.dtype)
    g, tangents = jax.vmap(lambda t: jax.jvp(fn, (theta,), (t,)), out_axes=(None, -1))(basis)
    return g, tangents


def fim_from_jacobian(jac, precision):
    """sum_i J_i^T W J_i for J of shape (N, m, d)."""
    return jnp.einsum("nmd,mk,nke->de", jac, precision, jac)


def predicted_fim_arrays(q0, qd0, controls, theta, sys, cfg, model):
    _, jac = sensitivities(q0, qd0, controls, theta, sys, cfg, model)
    return fim_from_jacobian(jac, jnp.asarray(model.precision))


def scores_arrays(readings, q0, qd0, controls, theta, sys, cfg, model):
    """Per-step scores (N, d) with total derivatives through the rollout."""
    g, jac = sensitivities(q0, qd0, controls, theta, sys, cfg, model)
    w = jnp.asarray(model.precision)
    return jnp.einsum("nmd,mk,nk->nd", jac, w, readings - g)


predict_jit = jax.jit(predict, static_argnames=_STATIC)
predict_with_trajectory_jit = jax.jit(predict_with_trajectory, static_argnames=_STATIC)
sensitivities_jit = jax.jit(sensitivities, static_argnames=_STATIC)
predicted_fim_jit = jax.jit(predicted_fim_arrays, static_argnames=_STATIC)
scores_jit = jax.jit(scores_arrays, static_argnames=_STATIC)


def as_arrays(x0, controls):
    return jnp.asarray(x0.q, dtype=float), jnp.asarray(x0.qdot, dtype=float), jnp.asarray(controls, dtype=float)


def to_numpy(*arrays):
    return tuple(np.asarray(a) for a in arrays)
