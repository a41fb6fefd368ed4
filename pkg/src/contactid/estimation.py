"""Maximum-likelihood parameter fitting by single shooting.

States and contact forces are not free unknowns: each experiment is replayed
under the candidate parameters, so the likelihood is a function of the
parameters alone. Fitting runs in box-normalized coordinates, either with a
projected Levenberg-Marquardt (Gauss-Newton) iteration on the whitened
residuals or with projected Adam on the negative log-likelihood. Both use
forward-mode parameter sensitivities.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import jax
import jax.numpy as jnp
import numpy as np

from contactid.contact import ContactConfig
from contactid.design import DesignSpace, DesignVariables, realize
from contactid.errors import ConfigurationError, EvaluationError
from contactid.experiment import predict, sensitivities
from contactid.mechanics import ParamSpace, ParamVector, State, SystemModel, as_theta
from contactid.sensors import MeasurementModel


@dataclass(frozen=True)
class Experiment:
    design: DesignVariables
    x0: State
    controls: np.ndarray  # (N, control_dim)
    readings: np.ndarray  # (N, m)

    def __post_init__(self):
        r = np.asarray(self.readings, dtype=float)
        c = np.asarray(self.controls, dtype=float)
        if r.ndim != 2 or r.shape[0] != c.shape[0]:
            raise ConfigurationError("readings count must equal the experiment horizon")
        object.__setattr__(self, "readings", r)
        object.__setattr__(self, "controls", c)

    @classmethod
    def from_design(cls, design: DesignVariables, readings, sys: SystemModel, space: DesignSpace):
        q0, qd0, controls = realize(design.values, sys, space)
        return cls(design, State(np.asarray(q0), np.asarray(qd0)), np.asarray(controls), readings)


@dataclass(frozen=True)
class Dataset:
    experiments: tuple[Experiment, ...] = ()

    def __len__(self):
        return len(self.experiments)

    def add(self, exp: Experiment) -> "Dataset":
        return Dataset(self.experiments + (exp,))

    @property
    def reading_count(self) -> int:
        return sum(e.readings.shape[0] for e in self.experiments)


@dataclass(frozen=True)
class FitOptions:
    method: str = "gauss-newton"
    iterations: int = 300
    step: float = 0.02  # Adam step in normalized coordinates
    damping: float = 1e-3  # initial Levenberg-Marquardt damping
    max_step: float = 0.05  # trust radius (inf-norm) in normalized coordinates
    tolerance: float = 1e-10  # relative NLL decrease that counts as progress
    patience: int = 5
    screen_levels: int = 0  # grid points per parameter for the multi-start screen; 0 disables it
    starts: int = 1  # local fits launched: the initial point plus the best screened candidates
    screen_chi2: float = 1.5  # screen only if the local fit's reduced chi-square exceeds this
    horizon_stages: int = 0  # refit on growing time windows when the local fit is poor; 0 disables it

    def __post_init__(self):
        if self.method not in ("gauss-newton", "adam"):
            raise ConfigurationError(f"unknown fit method {self.method!r}")
        if self.iterations < 1:
            raise ConfigurationError("fit iterations must be >= 1")
        if self.screen_levels < 0 or self.starts < 1:
            raise ConfigurationError("screen_levels must be >= 0 and starts >= 1")
        if self.horizon_stages < 0:
            raise ConfigurationError("horizon_stages must be >= 0")


@dataclass(frozen=True)
class FitResult:
    theta: ParamVector
    nll: float
    iterations: int
    history: tuple[float, ...] = field(repr=False, default=())


def _capacity(n: int) -> int:
    return 1 << max(0, (n - 1).bit_length())


def _stack(data: Dataset):
    """Pad experiments to a power-of-two batch so compiled kernels are reused."""
    k = len(data)
    cap = _capacity(k)
    exps = list(data.experiments) + [data.experiments[0]] * (cap - k)
    q0 = np.stack([e.x0.q for e in exps])
    qd0 = np.stack([e.x0.qdot for e in exps])
    controls = np.stack([e.controls for e in exps])
    readings = np.stack([e.readings for e in exps])
    weights = np.zeros(readings.shape[:2])  # (experiment, step); padding rows stay zero
    weights[:k] = 1.0
    return q0, qd0, controls, readings, weights


def _residuals(theta, q0, qd0, controls, readings, weights, whitener, sys, cfg, model):
    g = jax.vmap(predict, in_axes=(0, 0, 0, None, None, None, None))(q0, qd0, controls, theta, sys, cfg, model)
    r = jnp.einsum("mk,bnk->bnm", whitener, readings - g)
    return (r * weights[:, :, None]).reshape(-1)


def _residuals_and_jacobian(theta, q0, qd0, controls, readings, weights, whitener, sys, cfg, model):
    fn = lambda th: _residuals(th, q0, qd0, controls, readings, weights, whitener, sys, cfg, model)
    basis = jnp.eye(theta.shape[0], dtype=theta.dtype)
    r, jac = jax.vmap(lambda t: jax.jvp(fn, (theta,), (t,)), out_axes=(None, -1))(basis)
    return r, jac


def _batch_half_sq(thetas, q0, qd0, controls, readings, weights, whitener, sys, cfg, model):
    fn = lambda th: _residuals(th, q0, qd0, controls, readings, weights, whitener, sys, cfg, model)
    r = jax.vmap(fn)(thetas)
    value = 0.5 * jnp.sum(r * r, axis=1)
    return jnp.where(jnp.isfinite(value), value, jnp.inf)


_STATIC = ("sys", "cfg", "model")
_residuals_jit = jax.jit(_residuals, static_argnames=_STATIC)
_batch_half_sq_jit = jax.jit(_batch_half_sq, static_argnames=_STATIC)
_residuals_jac_jit = jax.jit(_residuals_and_jacobian, static_argnames=_STATIC)


def _nll_constant(data: Dataset, model: MeasurementModel) -> float:
    _, logdet = np.linalg.slogdet(model.cov)
    return 0.5 * data.reading_count * (model.dim * np.log(2 * np.pi) + logdet)


def _half_sq(r) -> float:
    r = np.asarray(r)
    if not np.all(np.isfinite(r)):
        return np.inf
    return 0.5 * float(r @ r)


def neg_log_likelihood(data: Dataset, theta, sys: SystemModel, model: MeasurementModel,
                       contact_cfg: ContactConfig) -> float:
    """Negative log-likelihood of all readings, replaying every experiment under ``theta``."""
    if len(data) == 0:
        return 0.0
    theta = as_theta(theta)
    arrays = _stack(data)
    r = _residuals_jit(theta, *arrays, jnp.asarray(model.whitener), sys, contact_cfg, model)
    return _half_sq(r) + _nll_constant(data, model)


def nll_gradient(data: Dataset, theta, sys, model, contact_cfg) -> np.ndarray:
    """Forward-mode gradient of :func:`neg_log_likelihood`."""
    theta = as_theta(theta)
    r, jac = _residuals_jac_jit(theta, *_stack(data), jnp.asarray(model.whitener), sys, contact_cfg, model)
    return np.asarray(jac).T @ np.asarray(r)


def fit_mle(data: Dataset, theta_init, space: ParamSpace, sys: SystemModel,
            model: MeasurementModel, contact_cfg: ContactConfig,
            opts: FitOptions | None = None) -> FitResult:
    """Projected descent on the negative log-likelihood; returns the best iterate seen."""
    opts = opts or FitOptions()
    if len(data) == 0:
        raise ConfigurationError("cannot fit an empty dataset")
    if not space.contains(theta_init):
        raise ConfigurationError("initial parameters lie outside the feasible box")
    arrays = _stack(data)
    whitener = jnp.asarray(model.whitener)
    const = _nll_constant(data, model)
    scale = space.upper.array - space.lower.array

    def objective(weights):
        def residuals(z):
            return _residuals_jit(jnp.asarray(space.from_unit(z)), *arrays[:4], weights, whitener,
                                  sys, contact_cfg, model)

        def residuals_jac(z):
            r, j = _residuals_jac_jit(jnp.asarray(space.from_unit(z)), *arrays[:4], weights, whitener,
                                      sys, contact_cfg, model)
            return np.asarray(r), np.asarray(j) * scale[None, :]
        return residuals, residuals_jac

    residuals, residuals_jac = objective(arrays[4])
    step_fn = _lm_iterations if opts.method == "gauss-newton" else _adam_iterations
    z0 = np.clip(space.to_unit(theta_init), 0.0, 1.0)
    z_best, f_best, iters, history = step_fn(z0, residuals, residuals_jac, opts)
    dof = data.reading_count * model.dim
    if opts.horizon_stages and not 2.0 * f_best <= opts.screen_chi2 * dof:
        # late readings of sensitive trajectories only match inside a narrow basin:
        # fit the early part first and lengthen the window stage by stage
        n = arrays[3].shape[1]
        z = z0
        for j in range(1, opts.horizon_stages + 1):
            window = np.arange(n) < np.ceil(j * n / opts.horizon_stages)
            z, _, used, _ = step_fn(z, *objective(arrays[4] * window[None, :]), opts)
            iters += used
        cand = step_fn(z, residuals, residuals_jac, opts)
        iters += cand[2]
        if cand[1] < f_best:
            z_best, f_best, history = cand[0], cand[1], cand[3]
    if opts.screen_levels and opts.starts > 1 and not 2.0 * f_best <= opts.screen_chi2 * dof:
        # the local fit does not explain the data: restart from the best grid candidates
        grid = screen_grid(space.lower.array.size, opts.screen_levels)
        values = np.asarray(_batch_half_sq_jit(jnp.asarray(space.from_unit(grid)), *arrays, whitener,
                                               sys, contact_cfg, model))
        order = np.argsort(values, kind="stable")[: opts.starts - 1]
        for i in order:
            if not np.isfinite(values[i]):
                continue
            cand = step_fn(grid[i], residuals, residuals_jac, opts)
            iters += cand[2]
            if cand[1] < f_best:
                z_best, f_best, history = cand[0], cand[1], cand[3]
    if not np.isfinite(f_best):
        raise EvaluationError("no finite likelihood found during the fit")
    theta = space.lower.replace_values(np.clip(space.from_unit(z_best), space.lower.array, space.upper.array))
    return FitResult(theta, f_best + const, iters, tuple(h + const for h in history))


def screen_grid(dim: int, levels: int) -> np.ndarray:
    """Cell-centred grid of ``levels**dim`` points in the unit box."""
    axis = (np.arange(levels) + 0.5) / levels
    mesh = np.meshgrid(*([axis] * dim), indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def _lm_iterations(z, residuals, residuals_jac, opts: FitOptions):
    r, jac = residuals_jac(z)
    f = _half_sq(r)
    if not np.isfinite(f):
        return z, f, 0, (f,)
    mu = opts.damping
    history = [f]
    stall = 0
    it = 0
    for it in range(1, opts.iterations + 1):
        jtj = jac.T @ jac
        grad = jac.T @ r
        diag = np.diag(jtj) + 1e-12 * (1.0 + np.trace(jtj))
        improved = False
        # inner damping loop: try progressively more conservative steps
        for _ in range(12):
            try:
                delta = np.linalg.solve(jtj + mu * np.diag(diag), -grad)
            except np.linalg.LinAlgError:
                mu *= 10.0
                continue
            size = np.max(np.abs(delta))
            if size > opts.max_step:
                delta *= opts.max_step / size
            proposal = np.clip(z + delta, 0.0, 1.0)
            f_new = _half_sq(residuals(proposal))
            if f_new < f:
                rel = (f - f_new) / max(abs(f), 1e-300)
                z = proposal
                f_prev, f = f, f_new
                mu = max(mu / 3.0, 1e-12)
                improved = True
                break
            mu *= 4.0
        history.append(f)
        if not improved:
            break
        stall = stall + 1 if rel < opts.tolerance else 0
        if stall >= opts.patience:
            break
        r, jac = residuals_jac(z)
    return z, f, it, tuple(history)


def _adam_iterations(z, residuals, residuals_jac, opts: FitOptions, beta1=0.9, beta2=0.999):
    r, jac = residuals_jac(z)
    f = _half_sq(r)
    z_best, f_best = z.copy(), f
    m = np.zeros_like(z)
    v = np.zeros_like(z)
    step = opts.step
    history = [f]
    it = 0
    for it in range(1, opts.iterations + 1):
        grad = jac.T @ r
        m = beta1 * m + (1 - beta1) * grad
        v = beta2 * v + (1 - beta2) * grad**2
        direction = (m / (1 - beta1**it)) / (np.sqrt(v / (1 - beta2**it)) + 1e-12)
        # back off on non-finite likelihoods
        for _ in range(20):
            proposal = np.clip(z - step * direction, 0.0, 1.0)
            r_new, jac_new = residuals_jac(proposal)
            f_new = _half_sq(r_new)
            if np.isfinite(f_new):
                break
            step *= 0.5
        else:
            break
        z, r, jac, f = proposal, r_new, jac_new, f_new
        if f < f_best:
            z_best, f_best = z.copy(), f
        history.append(f)
    return z_best, f_best, it, tuple(history)


def param_error(theta_hat, theta_true) -> float:
    a = theta_hat.array if isinstance(theta_hat, ParamVector) else np.asarray(theta_hat, float)
    b = theta_true.array if isinstance(theta_true, ParamVector) else np.asarray(theta_true, float)
    if isinstance(theta_hat, ParamVector) and isinstance(theta_true, ParamVector):
        if theta_hat.labels != theta_true.labels:
            raise ConfigurationError("parameter labels differ")
    if a.shape != b.shape:
        raise ConfigurationError(f"dimension mismatch {a.shape} vs {b.shape}")
    return float(np.linalg.norm(a - b) / np.linalg.norm(b))
