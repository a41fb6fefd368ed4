"""Information-maximizing experiment design and the uniform-random baseline.

Designs are optimized by single shooting: the contact law makes the forces
an explicit function of the state, so the trace of the predicted Fisher
information is a smooth function of the design variables alone. Its design
gradient differentiates the parameter sensitivities once more, using nested
forward-mode tangents.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import jax
import jax.numpy as jnp
import numpy as np

from contactid.contact import ContactConfig
from contactid.errors import ConfigurationError, EvaluationError
from contactid.experiment import fim_from_jacobian, sensitivities
from contactid.mechanics import State, SystemModel, as_theta
from contactid.sensors import MeasurementModel

BLOCK_DESIGN_NAMES = ("v_x", "v_z", "omega", "z0")


@dataclass(frozen=True)
class DesignSpace:
    """Box-bounded design variables and how they map to (x0, controls)."""

    names: tuple[str, ...]
    lower: tuple[float, ...]
    upper: tuple[float, ...]
    knot_steps: int = 10

    def __post_init__(self):
        lo, hi = np.asarray(self.lower, float), np.asarray(self.upper, float)
        if not (len(self.names) == lo.size == hi.size):
            raise ConfigurationError("design names and bounds differ in length")
        if np.any(lo >= hi):
            raise ConfigurationError("design lower bounds must be below upper bounds")
        if self.knot_steps < 1:
            raise ConfigurationError("knot_steps must be >= 1")
        object.__setattr__(self, "lower", tuple(lo))
        object.__setattr__(self, "upper", tuple(hi))

    @classmethod
    def arm(cls, sys: SystemModel, u_max: float = 5.0, knot_steps: int = 10) -> "DesignSpace":
        knots = math.ceil(sys.horizon / knot_steps)
        names = tuple(f"u{k}_{j}" for k in range(knots) for j in range(3))
        return cls(names, (-u_max,) * len(names), (u_max,) * len(names), knot_steps)

    @classmethod
    def block(cls, v_max: float = 3.0, omega_max: float = 10.0,
              z0_range: tuple[float, float] = (0.3, 1.0)) -> "DesignSpace":
        return cls(BLOCK_DESIGN_NAMES, (-v_max, -v_max, -omega_max, z0_range[0]),
                   (v_max, v_max, omega_max, z0_range[1]))

    @property
    def dim(self) -> int:
        return len(self.names)

    @property
    def lo(self) -> np.ndarray:
        return np.asarray(self.lower)

    @property
    def hi(self) -> np.ndarray:
        return np.asarray(self.upper)

    def to_unit(self, values) -> np.ndarray:
        return (np.asarray(values, float) - self.lo) / (self.hi - self.lo)

    def from_unit(self, z):
        return self.lo + z * (self.hi - self.lo)

    def contains(self, values) -> bool:
        v = np.asarray(values, float)
        return bool(np.all(v >= self.lo) and np.all(v <= self.hi))


@dataclass(frozen=True)
class DesignVariables:
    values: np.ndarray
    names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.names, self.values.tolist()))


@dataclass(frozen=True)
class DesignConfig:
    space: DesignSpace
    iterations: int = 150
    step: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    restarts: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 1:
            raise ConfigurationError("design iterations must be >= 1")
        if self.restarts < 1:
            raise ConfigurationError("design restarts must be >= 1")
        if not self.step > 0:
            raise ConfigurationError("design step must be positive")


def realize(values, sys: SystemModel, space: DesignSpace):
    """Initial generalized position, velocity and the control sequence of a design."""
    v = jnp.asarray(values)
    if sys.is_arm:
        knots = v.reshape(-1, 3)
        controls = jnp.repeat(knots, space.knot_steps, axis=0)[: sys.horizon]
        q0 = jnp.asarray(sys.initial_q)
        return q0, jnp.zeros(3), controls
    q0 = jnp.stack([jnp.zeros_like(v[3]), v[3], jnp.zeros_like(v[3])])
    qd0 = v[0:3]
    return q0, qd0, jnp.zeros((sys.horizon, 0))


def initial_state(values, sys: SystemModel, space: DesignSpace) -> State:
    q0, qd0, _ = realize(values, sys, space)
    return State(np.asarray(q0), np.asarray(qd0))


def _objective(values, theta, sys, cfg, model, space):
    q0, qd0, controls = realize(values, sys, space)
    _, jac = sensitivities(q0, qd0, controls, theta, sys, cfg, model)
    value = jnp.trace(fim_from_jacobian(jac, jnp.asarray(model.precision)))
    return jnp.where(jnp.isfinite(value), value, -jnp.inf)


def _unit_value_and_grad(z, theta, sys, cfg, model, space):
    scale = jnp.asarray(space.hi - space.lo)
    f = lambda zz: _objective(jnp.asarray(space.lo) + zz * scale, theta, sys, cfg, model, space)
    value, grad = f(z), jax.jacfwd(f)(z)
    ok = jnp.isfinite(value) & jnp.all(jnp.isfinite(grad))
    return jnp.where(ok, value, -jnp.inf), jnp.where(ok, grad, 0.0)


_STATIC = ("sys", "cfg", "model", "space")
_batched_value_and_grad = jax.jit(
    jax.vmap(_unit_value_and_grad, in_axes=(0, None, None, None, None, None)),
    static_argnames=_STATIC,
)
_batched_value = jax.jit(
    jax.vmap(lambda z, th, sys, cfg, model, space: _objective(
        jnp.asarray(space.lo) + z * jnp.asarray(space.hi - space.lo), th, sys, cfg, model, space),
        in_axes=(0, None, None, None, None, None)),
    static_argnames=_STATIC,
)


def design_objective(design, theta_hat, sys: SystemModel, model: MeasurementModel,
                     contact_cfg: ContactConfig, space: DesignSpace):
    """Trace of the predicted information and its gradient w.r.t. the design values."""
    values = design.values if isinstance(design, DesignVariables) else np.asarray(design, float)
    if values.shape != (space.dim,):
        raise ConfigurationError(f"design has shape {values.shape}, expected ({space.dim},)")
    theta = as_theta(theta_hat)
    z = space.to_unit(values)
    v, g = _batched_value_and_grad(z[None], theta, sys, contact_cfg, model, space)
    grad = np.asarray(g[0]) / (space.hi - space.lo)
    return float(v[0]), grad


def objective_values(designs, theta_hat, sys, model, contact_cfg, space) -> np.ndarray:
    """Objective (no gradient) for a batch of designs, shape (B, dim)."""
    z = space.to_unit(np.atleast_2d(designs))
    return np.asarray(_batched_value(z, as_theta(theta_hat), sys, contact_cfg, model, space))


def restart_rng(seed: int, restart: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), 1, int(restart)])


def random_design(cfg: DesignConfig, rng: np.random.Generator) -> DesignVariables:
    space = cfg.space
    return DesignVariables(rng.uniform(space.lo, space.hi), space.names)


@dataclass(frozen=True)
class DesignResult:
    design: DesignVariables
    objective: float
    initial_objectives: np.ndarray  # per restart
    history: np.ndarray  # (iterations + 1, restarts) accepted objective values


def design_experiment(theta_hat, sys: SystemModel, model: MeasurementModel,
                      contact_cfg: ContactConfig, cfg: DesignConfig,
                      rng: np.random.Generator | None = None,
                      warm_start: DesignVariables | None = None) -> DesignResult:
    """Best-of-restarts projected ascent on the information trace.

    Restart ``r`` draws its initial design from a generator seeded by
    ``(cfg.seed, r)``; if ``warm_start`` is given it replaces restart 0.
    A step is accepted only if it does not lower the objective; rejected
    steps halve that restart's step size. ``rng``, when given, supplies the
    seed instead of ``cfg.seed``.
    """
    space = cfg.space
    theta = as_theta(theta_hat)
    seed = cfg.seed if rng is None else int(rng.integers(2**63 - 1))
    inits = [restart_rng(seed, r).uniform(0.0, 1.0, space.dim) for r in range(cfg.restarts)]
    if warm_start is not None:
        inits[0] = np.clip(space.to_unit(warm_start.values), 0.0, 1.0)
    z = np.stack(inits)

    value, grad = (np.asarray(a) for a in _batched_value_and_grad(z, theta, sys, contact_cfg, model, space))
    initial = value.copy()
    m = np.zeros_like(z)
    v = np.zeros_like(z)
    step = np.full(cfg.restarts, cfg.step)
    history = [value.copy()]
    for it in range(1, cfg.iterations + 1):
        m = cfg.beta1 * m + (1 - cfg.beta1) * grad
        v = cfg.beta2 * v + (1 - cfg.beta2) * grad**2
        direction = (m / (1 - cfg.beta1**it)) / (np.sqrt(v / (1 - cfg.beta2**it)) + 1e-12)
        proposal = np.clip(z + step[:, None] * direction, 0.0, 1.0)
        new_value, new_grad = (np.asarray(a) for a in
                               _batched_value_and_grad(proposal, theta, sys, contact_cfg, model, space))
        accept = np.isfinite(new_value) & (new_value >= value)
        z = np.where(accept[:, None], proposal, z)
        value = np.where(accept, new_value, value)
        grad = np.where(accept[:, None], new_grad, grad)
        step = np.where(accept, step, 0.5 * step)
        history.append(value.copy())

    if not np.any(np.isfinite(value)):
        raise EvaluationError(f"all {cfg.restarts} design restarts diverged; initial objectives {initial}")
    best = int(np.argmax(np.where(np.isfinite(value), value, -np.inf)))
    values = space.from_unit(z[best])
    values = np.clip(values, space.lo, space.hi)
    return DesignResult(DesignVariables(values, space.names), float(value[best]), initial, np.stack(history))
