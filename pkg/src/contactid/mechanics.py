"""Planar mechanisms: three-link arm and free rectangular block.

Both live in the vertical x-z plane with gravity along -z and a flat surface
at z = 0. All kinematic and dynamic terms are written in ``jax.numpy`` so that
sensitivities with respect to the physical parameters (and anything upstream
of the state) propagate in forward mode.

Arm conventions: joint angles are relative, the first measured from +x. Each
link is a uniform rod of known mass with its centre of mass at mid-length;
the unknown parameters are the centroidal rotational inertias and the
lengths. Block conventions: pose (x, z, rotation); uniform density, so the
rotational inertia is m (h_x^2 + h_z^2) / 3 about the centre.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import jax
import jax.numpy as jnp
import numpy as np

from contactid.errors import ConfigurationError, DomainError

ARM = "three-link-arm"
BLOCK = "planar-block"

ARM_LABELS = ("I1", "I2", "I3", "l1", "l2", "l3")
BLOCK_LABELS = ("m", "h_x", "h_z")


@dataclass(frozen=True)
class ParamVector:
    labels: tuple[str, ...]
    values: tuple[float, ...]

    def __post_init__(self):
        labels = tuple(self.labels)
        values = tuple(float(v) for v in self.values)
        if len(labels) != len(values):
            raise ConfigurationError("labels and values differ in length")
        if not all(np.isfinite(values)) or min(values) <= 0.0:
            raise DomainError(f"parameters must be finite and positive: {values}")
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_mapping(cls, labels: Sequence[str], mapping: dict) -> "ParamVector":
        missing = [k for k in labels if k not in mapping]
        extra = [k for k in mapping if k not in labels]
        if missing or extra:
            raise ConfigurationError(
                f"parameter keys mismatch (missing {missing}, unknown {extra})"
            )
        return cls(tuple(labels), tuple(mapping[k] for k in labels))

    @property
    def array(self) -> np.ndarray:
        return np.array(self.values)

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.labels, self.values))

    def replace_values(self, values) -> "ParamVector":
        return ParamVector(self.labels, tuple(np.asarray(values, dtype=float)))

    def __len__(self):
        return len(self.values)


@dataclass(frozen=True)
class ParamSpace:
    lower: ParamVector
    upper: ParamVector

    def __post_init__(self):
        if self.lower.labels != self.upper.labels:
            raise ConfigurationError("bound labels differ")
        if np.any(self.lower.array >= self.upper.array):
            raise ConfigurationError("lower bounds must be below upper bounds")

    @property
    def labels(self) -> tuple[str, ...]:
        return self.lower.labels

    @property
    def midpoint(self) -> ParamVector:
        return self.lower.replace_values(0.5 * (self.lower.array + self.upper.array))

    def contains(self, theta) -> bool:
        t = _values(theta)
        return bool(np.all(t >= self.lower.array) and np.all(t <= self.upper.array))

    def to_unit(self, theta) -> np.ndarray:
        lo, hi = self.lower.array, self.upper.array
        return (_values(theta) - lo) / (hi - lo)

    def from_unit(self, z):
        lo, hi = self.lower.array, self.upper.array
        return lo + z * (hi - lo)

    def project(self, theta) -> np.ndarray:
        return np.clip(_values(theta), self.lower.array, self.upper.array)


def _values(theta) -> np.ndarray:
    if isinstance(theta, ParamVector):
        return theta.array
    return np.asarray(theta, dtype=float)


@dataclass(frozen=True)
class SystemModel:
    """Immutable, hashable description of one planar system.

    ``dt`` is the control and measurement interval; each interval is
    integrated with ``substeps`` semi-implicit Euler steps of ``dt / substeps``.
    ``initial_q`` is the arm's fixed starting configuration; the block's
    initial state comes from the throw design instead.
    """

    kind: str
    dt: float = 0.01
    horizon: int = 150
    substeps: int = 10
    gravity: float = 9.81
    link_masses: tuple[float, float, float] = (1.0, 1.0, 1.0)
    base_height: float = 0.55
    initial_q: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.kind not in (ARM, BLOCK):
            raise ConfigurationError(f"unknown system kind {self.kind!r}")
        if not self.dt > 0:
            raise ConfigurationError("dt must be positive")
        if int(self.substeps) < 1:
            raise ConfigurationError("substeps must be >= 1")
        if int(self.horizon) < 1:
            raise ConfigurationError("horizon must be >= 1")
        if min(self.link_masses) <= 0:
            raise ConfigurationError("link masses must be positive")
        object.__setattr__(self, "link_masses", tuple(float(m) for m in self.link_masses))
        object.__setattr__(self, "initial_q", tuple(float(m) for m in self.initial_q))

    @classmethod
    def three_link_arm(cls, **kw) -> "SystemModel":
        kw.setdefault("horizon", 150)
        return cls(ARM, **kw)

    @classmethod
    def planar_block(cls, **kw) -> "SystemModel":
        kw.setdefault("horizon", 200)
        return cls(BLOCK, **kw)

    @property
    def is_arm(self) -> bool:
        return self.kind == ARM

    @property
    def labels(self) -> tuple[str, ...]:
        return ARM_LABELS if self.is_arm else BLOCK_LABELS

    @property
    def n_q(self) -> int:
        return 3

    @property
    def n_contacts(self) -> int:
        return 1 if self.is_arm else 4

    @property
    def control_dim(self) -> int:
        return 3 if self.is_arm else 0

    def generalized_force(self, u):
        if self.is_arm:
            return jnp.asarray(u)
        return jnp.zeros(3)


@dataclass(frozen=True)
class State:
    q: np.ndarray
    qdot: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float)
        qd = np.asarray(self.qdot, dtype=float)
        if q.shape != qd.shape or q.ndim != 1:
            raise ConfigurationError("q and qdot must be vectors of equal length")
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(qd))):
            raise DomainError("state entries must be finite")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "qdot", qd)

    @property
    def x(self) -> np.ndarray:
        return np.concatenate([self.q, self.qdot])


def as_theta(theta):
    """Parameter array from a ParamVector or array-like; positivity checked when concrete."""
    if isinstance(theta, ParamVector):
        return jnp.asarray(theta.array)
    if not isinstance(theta, jax.core.Tracer):
        arr = np.asarray(theta, dtype=float)
        if np.any(arr <= 0.0):
            raise DomainError(f"parameters must be positive: {arr}")
    return jnp.asarray(theta)


def _check_dims(theta, sys: SystemModel):
    if theta.shape != (len(sys.labels),):
        raise ConfigurationError(
            f"{sys.kind} expects {len(sys.labels)} parameters, got shape {theta.shape}"
        )


# ---------------------------------------------------------------- arm terms


def _unit(a):
    return jnp.stack([jnp.cos(a), jnp.sin(a)], axis=-1)


def _unit_perp(a):
    return jnp.stack([-jnp.sin(a), jnp.cos(a)], axis=-1)


_LOWER = np.tril(np.ones((3, 3)))  # link angle rates from joint rates


def _arm_lever(theta):
    """Lever lengths L[i, j]: distance along link j contributing to the COM of link i."""
    lengths = theta[3:6]
    full = jnp.where(np.tril(np.ones((3, 3)), -1) > 0, lengths[None, :], 0.0)
    return full + jnp.diag(0.5 * lengths)


def _arm_com_jacobians(q, theta):
    alpha = jnp.cumsum(q)
    lever = _arm_lever(theta)
    ep = _unit_perp(alpha)  # (3, 2)
    # J[i] = sum_j lever[i, j] ep[j] (x) row_j(_LOWER)
    return jnp.einsum("ij,jc,jk->ick", lever, ep, _LOWER)


def _arm_mass_matrix(q, theta, sys: SystemModel):
    jv = _arm_com_jacobians(q, theta)
    masses = jnp.asarray(sys.link_masses)
    inertias = theta[0:3]
    trans = jnp.einsum("i,ick,icl->kl", masses, jv, jv)
    rot = jnp.einsum("i,ik,il->kl", inertias, _LOWER, _LOWER)
    return trans + rot


def _arm_bias(q, qdot, theta, sys: SystemModel):
    alpha = jnp.cumsum(q)
    rate = _LOWER @ qdot
    lever = _arm_lever(theta)
    jv = _arm_com_jacobians(q, theta)
    masses = jnp.asarray(sys.link_masses)
    # centripetal part of each COM acceleration
    acc = -jnp.einsum("ij,jc,j->ic", lever, _unit(alpha), rate**2)
    coriolis = jnp.einsum("i,ick,ic->k", masses, jv, acc)
    gravity = sys.gravity * jnp.einsum("i,ik->k", masses, jv[:, 1, :])
    return coriolis + gravity


def _arm_tip(q, qdot, theta, sys: SystemModel):
    alpha = jnp.cumsum(q)
    rate = _LOWER @ qdot
    lengths = theta[3:6]
    pos = jnp.array([0.0, sys.base_height]) + jnp.einsum("j,jc->c", lengths, _unit(alpha))
    jac = jnp.einsum("j,jc,jk->ck", lengths, _unit_perp(alpha), _LOWER)
    jdot = -jnp.einsum("j,jc,j,jk->ck", lengths, _unit(alpha), rate, _LOWER)
    return pos, jac, jdot


def arm_link_endpoints(q, theta, sys: SystemModel) -> np.ndarray:
    """World positions of base, elbow joints and tip, shape (4, 2)."""
    theta = as_theta(theta)
    alpha = jnp.cumsum(jnp.asarray(q))
    steps = theta[3:6, None] * _unit(alpha)
    base = jnp.array([[0.0, sys.base_height]])
    return np.asarray(jnp.concatenate([base, base + jnp.cumsum(steps, axis=0)]))


def arm_com_positions(q, theta, sys: SystemModel):
    alpha = jnp.cumsum(jnp.asarray(q))
    lever = _arm_lever(jnp.asarray(theta))
    return jnp.array([0.0, sys.base_height]) + jnp.einsum("ij,jc->ic", lever, _unit(alpha))


# -------------------------------------------------------------- block terms


def block_inertia(theta):
    m, hx, hz = theta[0], theta[1], theta[2]
    return m * (hx**2 + hz**2) / 3.0


def _block_corners_body(theta):
    hx, hz = theta[1], theta[2]
    sx = jnp.array([1.0, -1.0, -1.0, 1.0])
    sz = jnp.array([1.0, 1.0, -1.0, -1.0])
    return jnp.stack([sx * hx, sz * hz], axis=-1)  # (4, 2)


def _rot(phi):
    c, s = jnp.cos(phi), jnp.sin(phi)
    return jnp.array([[c, -s], [s, c]])


def _block_points(q, qdot, theta):
    r = _block_corners_body(theta) @ _rot(q[2]).T  # world-frame offsets
    pos = q[None, 0:2] + r
    lever = jnp.stack([-r[:, 1], r[:, 0]], axis=-1)  # d(offset)/d(rotation)
    eye = jnp.broadcast_to(jnp.eye(2), (4, 2, 2))
    jac = jnp.concatenate([eye, lever[:, :, None]], axis=2)  # (4, 2, 3)
    jdot_col = -r * qdot[2]
    jdot = jnp.concatenate([jnp.zeros((4, 2, 2)), jdot_col[:, :, None]], axis=2)
    return pos, jac, jdot


# ------------------------------------------------------------ public terms


def _mass_matrix(q, theta, sys):
    if sys.is_arm:
        return _arm_mass_matrix(q, theta, sys)
    inertia = block_inertia(theta)
    return jnp.diag(jnp.stack([theta[0], theta[0], inertia]))


def _bias(q, qdot, theta, sys):
    if sys.is_arm:
        return _arm_bias(q, qdot, theta, sys)
    return jnp.stack([0.0 * theta[0], theta[0] * sys.gravity, 0.0 * theta[0]])


def _contact_points(q, qdot, theta, sys):
    """Contact point positions (P, 2), Jacobians (P, 2, n_q), Jdot (P, 2, n_q)."""
    if sys.is_arm:
        pos, jac, jdot = _arm_tip(q, qdot, theta, sys)
        return pos[None], jac[None], jdot[None]
    return _block_points(q, qdot, theta)


def _sensor_terms(q, qdot, theta, sys):
    if sys.is_arm:
        _, jac, jdot = _arm_tip(q, qdot, theta, sys)
        return jac, jdot
    jac = jnp.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    return jac, jnp.zeros((2, 3))


def mass_matrix(q, theta, sys: SystemModel):
    theta = as_theta(theta)
    _check_dims(theta, sys)
    return _mass_matrix(jnp.asarray(q), theta, sys)


def bias(q, qdot, theta, sys: SystemModel):
    """Coriolis/centrifugal plus gravity generalized forces."""
    theta = as_theta(theta)
    _check_dims(theta, sys)
    return _bias(jnp.asarray(q), jnp.asarray(qdot), theta, sys)


def potential_energy(q, theta, sys: SystemModel):
    theta = as_theta(theta)
    if sys.is_arm:
        com = arm_com_positions(q, theta, sys)
        return sys.gravity * jnp.dot(jnp.asarray(sys.link_masses), com[:, 1])
    return theta[0] * sys.gravity * jnp.asarray(q)[1]


def kinetic_energy(q, qdot, theta, sys: SystemModel):
    qdot = jnp.asarray(qdot)
    return 0.5 * qdot @ mass_matrix(q, theta, sys) @ qdot


@dataclass(frozen=True)
class ContactKinematics:
    positions: np.ndarray  # (P, 2) world positions
    distances: np.ndarray  # (P,) signed distance to the surface
    jacobian: np.ndarray  # (2P, n_q), rows (tangential, normal) per point


def contact_kinematics(q, theta, sys: SystemModel) -> ContactKinematics:
    theta = as_theta(theta)
    _check_dims(theta, sys)
    q = jnp.asarray(q)
    pos, jac, _ = _contact_points(q, jnp.zeros_like(q), theta, sys)
    return ContactKinematics(pos, pos[:, 1], jac.reshape(-1, sys.n_q))


def sensor_jacobian(q, qdot, theta, sys: SystemModel):
    """Sensor-point Jacobian and its time derivative along (q, qdot)."""
    theta = as_theta(theta)
    _check_dims(theta, sys)
    return _sensor_terms(jnp.asarray(q), jnp.asarray(qdot), theta, sys)
