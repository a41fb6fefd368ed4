import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from contactid.errors import ConfigurationError, DomainError
from contactid.mechanics import (
    ARM_LABELS,
    BLOCK_LABELS,
    ParamSpace,
    ParamVector,
    State,
    SystemModel,
    bias,
    block_inertia,
    contact_kinematics,
    kinetic_energy,
    mass_matrix,
    potential_energy,
    sensor_jacobian,
)

from conftest import ARM_LOWER, ARM_TRUE, ARM_UPPER, BLOCK_TRUE

ARM = SystemModel.three_link_arm()
BLOCK = SystemModel.planar_block()


# independent numpy oracle for the arm: link centres and absolute angles
def _arm_frames(q, theta, base_height=0.55):
    lengths = np.asarray(theta[3:])
    alpha = np.cumsum(q)
    joint = np.array([0.0, base_height])
    coms = []
    for i in range(3):
        e = np.array([np.cos(alpha[i]), np.sin(alpha[i])])
        coms.append(joint + 0.5 * lengths[i] * e)
        joint = joint + lengths[i] * e
    return np.array(coms), alpha, joint


def _arm_kinetic(q, qd, theta, masses=(1.0, 1.0, 1.0), h=1e-6):
    c_plus, a_plus, _ = _arm_frames(q + h * qd, theta)
    c_minus, a_minus, _ = _arm_frames(q - h * qd, theta)
    v = (c_plus - c_minus) / (2 * h)
    w = (a_plus - a_minus) / (2 * h)
    return 0.5 * sum(m * vi @ vi for m, vi in zip(masses, v)) + 0.5 * sum(np.asarray(theta[:3]) * w**2)


def _arm_potential(q, theta, masses=(1.0, 1.0, 1.0), g=9.81):
    coms, _, _ = _arm_frames(q, theta)
    return g * float(np.dot(masses, coms[:, 1]))


def test_param_vector_validation():
    with pytest.raises(DomainError):
        ParamVector(BLOCK_LABELS, (1.0, -0.1, 0.1))
    with pytest.raises(DomainError):
        ParamVector(BLOCK_LABELS, (1.0, np.nan, 0.1))
    with pytest.raises(ConfigurationError):
        ParamVector(BLOCK_LABELS, (1.0, 0.1))
    p = ParamVector.from_mapping(BLOCK_LABELS, {"m": 1.0, "h_x": 0.1, "h_z": 0.2})
    assert p.as_dict()["h_z"] == 0.2
    with pytest.raises(ConfigurationError):
        ParamVector.from_mapping(BLOCK_LABELS, {"m": 1.0, "h_x": 0.1, "depth": 0.2})


def test_param_space():
    lo, hi = ParamVector(BLOCK_LABELS, (1, 1, 1)), ParamVector(BLOCK_LABELS, (3, 2, 5))
    space = ParamSpace(lo, hi)
    assert space.midpoint.values == (2.0, 1.5, 3.0)
    assert space.contains(space.midpoint) and not space.contains([0.5, 1.5, 3])
    assert np.allclose(space.from_unit(space.to_unit([1.5, 1.2, 4])), [1.5, 1.2, 4])
    assert np.allclose(space.project([0.0, 9.0, 2.0]), [1, 2, 2])
    with pytest.raises(ConfigurationError):
        ParamSpace(hi, lo)


def test_state_and_system_validation():
    with pytest.raises(ConfigurationError):
        SystemModel("four-link-arm")
    with pytest.raises(ConfigurationError):
        SystemModel.planar_block(dt=0.0)
    with pytest.raises(ConfigurationError):
        mass_matrix(np.zeros(3), BLOCK_TRUE, ARM)
    assert State(np.zeros(3), np.ones(3)).x.shape == (6,)
    assert ARM.n_contacts == 1 and BLOCK.n_contacts == 4


def test_block_mass_matrix():
    M = np.asarray(mass_matrix([0.3, 0.7, 1.1], (1.0, 0.1, 0.1), BLOCK))
    assert np.allclose(M, np.diag([1.0, 1.0, 0.02 / 3]), atol=1e-15)
    assert float(block_inertia(np.array([2.0, 0.3, 0.1]))) == pytest.approx(2.0 * 0.1 / 3)


def test_block_bias_at_rest_is_gravity():
    b = np.asarray(bias([0.0, 1.0, 0.4], np.zeros(3), BLOCK_TRUE, BLOCK))
    assert np.allclose(b, [0.0, 1.2 * 9.81, 0.0])


def test_arm_degenerate_limb():
    sys = SystemModel.three_link_arm(link_masses=(1.0, 1e-12, 1e-12))
    theta = (0.02, 0.003, 0.004, 0.5, 1e-9, 1e-9)
    M = np.asarray(mass_matrix(np.array([0.3, -0.2, 0.9]), theta, sys))
    assert M[0, 0] == pytest.approx(0.02 + 1.0 * 0.25**2 + 0.003 + 0.004, rel=1e-9)
    # distal rows/columns only carry the remaining rotor inertias
    assert M[1, 1] == pytest.approx(0.003 + 0.004, rel=1e-6)
    assert M[2, 2] == pytest.approx(0.004, rel=1e-6)


def _random_arm_theta(rng):
    return rng.uniform(ARM_LOWER, ARM_UPPER)


def test_arm_mass_matrix_matches_kinetic_energy_oracle(rng):
    for _ in range(20):
        q = rng.uniform(-np.pi, np.pi, 3)
        theta = _random_arm_theta(rng)
        M = np.asarray(mass_matrix(q, theta, ARM))
        # polarization of the quadratic form gives every entry
        oracle = np.zeros((3, 3))
        eye = np.eye(3)
        for i in range(3):
            for j in range(3):
                kp = _arm_kinetic(q, eye[i] + eye[j], theta)
                km = _arm_kinetic(q, eye[i] - eye[j], theta)
                oracle[i, j] = (kp - km) / 2.0
        assert np.allclose(M, oracle, rtol=1e-7, atol=1e-8)


def test_arm_gravity_matches_potential_gradient(rng):
    for _ in range(20):
        q = rng.uniform(-np.pi, np.pi, 3)
        theta = _random_arm_theta(rng)
        b = np.asarray(bias(q, np.zeros(3), theta, ARM))
        h = 1e-6
        grad = [(_arm_potential(q + h * e, theta) - _arm_potential(q - h * e, theta)) / (2 * h) for e in np.eye(3)]
        assert np.allclose(b, grad, rtol=1e-7, atol=1e-7)
        assert float(potential_energy(q, theta, ARM)) == pytest.approx(_arm_potential(q, theta), rel=1e-12)


def test_arm_gravity_at_horizontal_pose():
    b = np.asarray(bias(np.zeros(3), np.zeros(3), ARM_TRUE, ARM))
    g = 9.81
    # link centre moments about each joint, all links along +x
    expected = g * np.array([0.25 + 0.7 + 1.05, 0.2 + 0.55, 0.15])
    assert np.allclose(b, expected, rtol=1e-12)


def test_arm_skew_property(rng):
    for _ in range(20):
        q, qd = rng.uniform(-np.pi, np.pi, 3), rng.normal(0, 2, 3)
        theta = _random_arm_theta(rng)
        h = 1e-6
        mdot = (np.asarray(mass_matrix(q + h * qd, theta, ARM)) - np.asarray(mass_matrix(q - h * qd, theta, ARM))) / (2 * h)
        coriolis = np.asarray(bias(q, qd, theta, ARM)) - np.asarray(bias(q, np.zeros(3), theta, ARM))
        val = qd @ mdot @ qd - 2 * qd @ coriolis
        assert abs(val) <= 1e-6 * (1 + abs(qd @ mdot @ qd))


def test_kinetic_energy_matches_oracle(rng):
    q, qd = rng.uniform(-1, 1, 3), rng.normal(0, 1, 3)
    assert float(kinetic_energy(q, qd, ARM_TRUE, ARM)) == pytest.approx(_arm_kinetic(q, qd, ARM_TRUE), rel=1e-8)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-np.pi, np.pi), min_size=3, max_size=3),
       st.lists(st.floats(0.0, 1.0), min_size=6, max_size=6))
def test_arm_mass_matrix_symmetric_positive_definite(q, z):
    theta = np.asarray(ARM_LOWER) + np.asarray(z) * (np.asarray(ARM_UPPER) - np.asarray(ARM_LOWER))
    M = np.asarray(mass_matrix(np.asarray(q), theta, ARM))
    assert np.max(np.abs(M - M.T)) <= 1e-12
    np.linalg.cholesky(M)


def test_block_contact_geometry():
    ck = contact_kinematics([0.0, 1.0, 0.0], (1.0, 0.1, 0.1), BLOCK)
    assert np.all(np.asarray(ck.distances) >= 0.9 - 1e-15)
    assert float(np.min(ck.distances)) == pytest.approx(0.9)
    assert np.asarray(ck.jacobian).shape == (8, 3)


def _block_corners(q, theta):
    hx, hz = theta[1], theta[2]
    c, s = np.cos(q[2]), np.sin(q[2])
    R = np.array([[c, -s], [s, c]])
    body = np.array([[hx, hz], [-hx, hz], [-hx, -hz], [hx, -hz]])
    return q[:2] + body @ R.T


def test_block_contact_jacobian_matches_position_differences(rng):
    for _ in range(10):
        q = np.array([rng.normal(), rng.uniform(0.2, 1.0), rng.uniform(-np.pi, np.pi)])
        ck = contact_kinematics(q, BLOCK_TRUE, BLOCK)
        assert np.allclose(ck.positions, _block_corners(q, BLOCK_TRUE), atol=1e-14)
        h = 1e-6
        fd = np.stack([(_block_corners(q + h * e, BLOCK_TRUE) - _block_corners(q - h * e, BLOCK_TRUE)).reshape(-1) / (2 * h)
                       for e in np.eye(3)], axis=1)
        assert np.allclose(ck.jacobian, fd, atol=1e-8)


def test_arm_contact_jacobian_matches_tip_differences(rng):
    for _ in range(10):
        q, theta = rng.uniform(-np.pi, np.pi, 3), _random_arm_theta(rng)
        ck = contact_kinematics(q, theta, ARM)
        assert np.allclose(ck.positions[0], _arm_frames(q, theta)[2], atol=1e-14)
        h = 1e-6
        fd = np.stack([(_arm_frames(q + h * e, theta)[2] - _arm_frames(q - h * e, theta)[2]) / (2 * h) for e in np.eye(3)], axis=1)
        assert np.allclose(ck.jacobian, fd, atol=1e-8)


def test_arm_fully_extended_downward():
    q = np.array([-np.pi / 2, 0.0, 0.0])
    ck = contact_kinematics(q, ARM_TRUE, ARM)
    assert float(ck.distances[0]) == pytest.approx(0.55 - 1.2)
    assert np.linalg.norm(np.asarray(ck.jacobian)[:, 2]) == pytest.approx(0.3)


def test_block_sensor_jacobian_constant():
    J, Jd = sensor_jacobian([0.1, 0.5, 0.7], [1.0, -2.0, 3.0], BLOCK_TRUE, BLOCK)
    assert np.array_equal(np.asarray(J), [[1, 0, 0], [0, 1, 0]]) and not np.any(np.asarray(Jd))


def test_arm_sensor_jacobian(rng):
    for _ in range(10):
        q, qd, theta = rng.uniform(-np.pi, np.pi, 3), rng.normal(0, 2, 3), _random_arm_theta(rng)
        J, Jd = (np.asarray(a) for a in sensor_jacobian(q, qd, theta, ARM))
        assert np.allclose(J, contact_kinematics(q, theta, ARM).jacobian, atol=1e-15)
        h = 1e-6
        Jp = np.asarray(sensor_jacobian(q + h * qd, qd, theta, ARM)[0])
        Jm = np.asarray(sensor_jacobian(q - h * qd, qd, theta, ARM)[0])
        assert np.allclose(Jd @ qd, (Jp - Jm) @ qd / (2 * h), rtol=1e-6, atol=1e-7)
