import numpy as np
import pytest

import contactid  # noqa: F401  (enables 64-bit floats)
from contactid.contact import ContactConfig
from contactid.mechanics import ARM_LABELS, BLOCK_LABELS, ParamSpace, ParamVector, SystemModel
from contactid.sensors import MeasurementModel

ARM_TRUE = (0.025, 0.016, 0.009, 0.5, 0.4, 0.3)
BLOCK_TRUE = (1.2, 0.12, 0.08)
ARM_LOWER = (0.01, 0.006, 0.004, 0.4, 0.3, 0.2)
ARM_UPPER = (0.05, 0.03, 0.016, 0.7, 0.56, 0.42)
BLOCK_LOWER = (0.6, 0.06, 0.05)
BLOCK_UPPER = (2.0, 0.2, 0.15)
# soft, well damped floor used by the shipped campaign configs
SOFT = ContactConfig(k_n=1500.0, c_n=3.0, eps_phi=5e-3, mu=0.6, eps_v=0.5)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def arm():
    return SystemModel.three_link_arm(substeps=4, initial_q=(-1.2, 1.1, 0.0))


@pytest.fixture(scope="session")
def block():
    return SystemModel.planar_block(substeps=4, horizon=100)


@pytest.fixture(scope="session")
def arm_theta():
    return ParamVector(ARM_LABELS, ARM_TRUE)


@pytest.fixture(scope="session")
def block_theta():
    return ParamVector(BLOCK_LABELS, BLOCK_TRUE)


@pytest.fixture(scope="session")
def arm_space():
    return ParamSpace(ParamVector(ARM_LABELS, ARM_LOWER), ParamVector(ARM_LABELS, ARM_UPPER))


@pytest.fixture(scope="session")
def block_space():
    return ParamSpace(ParamVector(BLOCK_LABELS, BLOCK_LOWER), ParamVector(BLOCK_LABELS, BLOCK_UPPER))


@pytest.fixture(scope="session")
def accel_model():
    return MeasurementModel.isotropic("accelerometer", 0.2, 2)


@pytest.fixture(scope="session")
def force_model():
    return MeasurementModel.isotropic("contact-force", 0.5, 2)


def rel_err(a, b, floor=1.0):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.max(np.abs(a - b)) / max(floor, float(np.max(np.abs(b)))))


def report(request, line: str):
    """Queue a line for the end-of-session summary and echo it."""
    request.config.__dict__.setdefault("_acceptance_lines", []).append(line)
    print(line)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.__dict__.get("_acceptance_lines")
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
