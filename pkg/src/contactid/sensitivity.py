"""Forward-mode sensitivities.

Two carriers live here. :class:`DualScalar` is a plain dual number with a
vector of partials, used for scalar expressions and as the reference
forward-mode implementation. Array-valued simulator code is written in
``jax.numpy`` and differentiated with :func:`forward_jacobian`, which pushes
one tangent per tagged direction through the computation (forward mode,
never reverse).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import jax
import numpy as np

from contactid.errors import ConfigurationError, EvaluationError


@dataclass(frozen=True)
class SensitivityContext:
    """Number of tagged directions and their labels."""

    direction_count: int
    tagged_names: tuple[str, ...] = ()

    def __post_init__(self):
        if int(self.direction_count) < 1:
            raise ConfigurationError("direction_count must be >= 1")
        names = tuple(self.tagged_names)
        if not names:
            names = tuple(f"d{i}" for i in range(self.direction_count))
        if len(names) != self.direction_count:
            raise ConfigurationError(
                f"{len(names)} labels given for {self.direction_count} directions"
            )
        if len(set(names)) != len(names):
            raise ConfigurationError(f"duplicate direction labels: {names}")
        object.__setattr__(self, "tagged_names", names)

    @classmethod
    def from_names(cls, names: Sequence[str]) -> "SensitivityContext":
        return cls(len(names), tuple(names))


@dataclass(frozen=True, eq=False)
class DualScalar:
    value: float
    partials: np.ndarray = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "value", float(self.value))
        object.__setattr__(self, "partials", np.asarray(self.partials, dtype=float))

    @property
    def direction_count(self) -> int:
        return self.partials.shape[0]

    def _coerce(self, other) -> "DualScalar":
        if isinstance(other, DualScalar):
            if other.direction_count != self.direction_count:
                raise ConfigurationError(
                    f"direction count mismatch: {self.direction_count} vs {other.direction_count}"
                )
            return other
        return DualScalar(other, np.zeros_like(self.partials))

    def __add__(self, other):
        o = self._coerce(other)
        return DualScalar(self.value + o.value, self.partials + o.partials)

    __radd__ = __add__

    def __sub__(self, other):
        o = self._coerce(other)
        return DualScalar(self.value - o.value, self.partials - o.partials)

    def __rsub__(self, other):
        return self._coerce(other) - self

    def __neg__(self):
        return DualScalar(-self.value, -self.partials)

    def __pos__(self):
        return self

    def __mul__(self, other):
        o = self._coerce(other)
        return DualScalar(
            self.value * o.value, self.value * o.partials + o.value * self.partials
        )

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = self._coerce(other)
        if o.value == 0.0:
            raise EvaluationError("division by zero in dual arithmetic")
        inv = 1.0 / o.value
        return DualScalar(
            self.value * inv, (self.partials - self.value * inv * o.partials) * inv
        )

    def __rtruediv__(self, other):
        return self._coerce(other) / self

    def __pow__(self, exponent):
        if isinstance(exponent, DualScalar):
            return exp(exponent * log(self))
        p = float(exponent)
        if self.value == 0.0 and p < 1.0:
            raise EvaluationError("non-differentiable power at zero")
        return DualScalar(
            self.value**p, p * self.value ** (p - 1.0) * self.partials
        )

    def __rpow__(self, base):
        return exp(self * math.log(float(base)))

    def __float__(self):
        return self.value

    def project(self, index: int) -> "DualScalar":
        """Keep only one tagged direction, as a d=1 dual."""
        return DualScalar(self.value, self.partials[index : index + 1])


def lift_variable(value: float, index: int, ctx: SensitivityContext) -> DualScalar:
    if not 0 <= index < ctx.direction_count:
        raise ConfigurationError(
            f"direction index {index} out of range for {ctx.direction_count} directions"
        )
    partials = np.zeros(ctx.direction_count)
    partials[index] = 1.0
    return DualScalar(value, partials)


def lift_constant(value: float, ctx: SensitivityContext) -> DualScalar:
    return DualScalar(value, np.zeros(ctx.direction_count))


def _unary(x, f: Callable[[float], float], df: Callable[[float], float]):
    if isinstance(x, DualScalar):
        return DualScalar(f(x.value), df(x.value) * x.partials)
    return f(float(x))


def sin(x):
    return _unary(x, math.sin, math.cos)


def cos(x):
    return _unary(x, math.cos, lambda v: -math.sin(v))


def exp(x):
    return _unary(x, math.exp, math.exp)


def _checked_log(v: float) -> float:
    if v <= 0.0:
        raise EvaluationError(f"log of non-positive value {v}")
    return math.log(v)


def log(x):
    return _unary(x, _checked_log, lambda v: 1.0 / v)


def _checked_sqrt(v: float) -> float:
    if v < 0.0:
        raise EvaluationError(f"sqrt of negative value {v}")
    return math.sqrt(v)


def _dsqrt(v: float) -> float:
    if v == 0.0:
        raise EvaluationError("sqrt is not differentiable at zero")
    return 0.5 / math.sqrt(v)


def sqrt(x):
    if isinstance(x, DualScalar):
        return _unary(x, _checked_sqrt, _dsqrt)
    return _checked_sqrt(float(x))


def _softplus(v: float) -> float:
    return max(v, 0.0) + math.log1p(math.exp(-abs(v)))


def _sigmoid(v: float) -> float:
    if v >= 0:
        return 1.0 / (1.0 + math.exp(-v))
    e = math.exp(v)
    return e / (1.0 + e)


def softplus(x):
    """log(1 + e^x), overflow-safe."""
    return _unary(x, _softplus, _sigmoid)


def tanh(x):
    return _unary(x, math.tanh, lambda v: 1.0 - math.tanh(v) ** 2)


def check_gradient(f: Callable, point: Sequence[float], step: float = 1e-6) -> float:
    """Max relative error between forward-mode partials and central differences.

    ``f`` takes ``len(point)`` positional scalars and must be written with the
    elementary functions of this module so it accepts both floats and duals.
    The error per direction is ``|fwd - fd| / max(1, |fd|)``.
    """
    if step <= 0:
        raise ConfigurationError("step must be positive")
    point = [float(p) for p in point]
    ctx = SensitivityContext(len(point))
    out = f(*(lift_variable(p, i, ctx) for i, p in enumerate(point)))
    if isinstance(out, DualScalar):
        fwd = out.partials
        value = out.value
    else:
        fwd = np.zeros(len(point))
        value = float(out)
    if not math.isfinite(value) or not np.all(np.isfinite(fwd)):
        raise EvaluationError("non-finite forward-mode evaluation")
    worst = 0.0
    for i in range(len(point)):
        hi = list(point)
        lo = list(point)
        hi[i] += step
        lo[i] -= step
        fp, fm = float(f(*hi)), float(f(*lo))
        if not (math.isfinite(fp) and math.isfinite(fm)):
            raise EvaluationError(f"non-finite value while differencing direction {i}")
        fd = (fp - fm) / (2.0 * step)
        worst = max(worst, abs(fwd[i] - fd) / max(1.0, abs(fd)))
    return worst


def forward_jacobian(fn: Callable, argnums: int | Sequence[int] = 0) -> Callable:
    """Jacobian of an array function by forward-mode tangent propagation."""
    return jax.jacfwd(fn, argnums=argnums)


def with_sensitivities(fn: Callable, x) -> tuple:
    """Evaluate ``fn(x)`` together with its forward-mode Jacobian.

    Returns ``(value, jacobian)`` where the Jacobian has the trailing axis
    indexing the tagged directions, like :attr:`DualScalar.partials`.
    """
    x = jax.numpy.asarray(x)
    basis = jax.numpy.eye(x.shape[0], dtype=x.dtype)
    push = jax.vmap(lambda t: jax.jvp(fn, (x,), (t,))[1], out_axes=-1)
    return fn(x), push(basis)


def central_difference(fn: Callable, x, step: float) -> np.ndarray:
    """Central-difference Jacobian of an array function (test oracle)."""
    x = np.asarray(x, dtype=float)
    cols = []
    for i in range(x.shape[0]):
        e = np.zeros_like(x)
        e[i] = step
        cols.append((np.asarray(fn(x + e)) - np.asarray(fn(x - e))) / (2.0 * step))
    return np.stack(cols, axis=-1)
