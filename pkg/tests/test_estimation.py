import numpy as np
import pytest

from contactid.design import DesignSpace, DesignVariables
from contactid.errors import ConfigurationError
from contactid.estimation import (
    Dataset,
    Experiment,
    FitOptions,
    fit_mle,
    neg_log_likelihood,
    nll_gradient,
    param_error,
    screen_grid,
)
from contactid.experiment import predict_jit
from contactid.mechanics import ParamVector, SystemModel
from contactid.sensors import simulate_readings

from conftest import ARM_TRUE, BLOCK_TRUE, SOFT

SPACE = DesignSpace.block(omega_max=3.0)
THROWS = (np.array([1.0, -2.0, 1.5, 0.3]), np.array([-0.8, 1.0, -2.5, 0.7]))


def _dataset(sys, model, theta, noise_rng=None, throws=THROWS):
    data = Dataset()
    for values in throws:
        design = DesignVariables(values, SPACE.names)
        exp = Experiment.from_design(design, np.zeros((sys.horizon, model.dim)), sys, SPACE)
        g = np.asarray(predict_jit(exp.x0.q, exp.x0.qdot, exp.controls, np.asarray(theta, float), sys, SOFT, model))
        y = g if noise_rng is None else simulate_readings(g, model, noise_rng)
        data = data.add(Experiment(design, exp.x0, exp.controls, y))
    return data


def test_options_and_dataset_validation(block):
    with pytest.raises(ConfigurationError):
        FitOptions(method="newton")
    with pytest.raises(ConfigurationError):
        FitOptions(iterations=0)
    with pytest.raises(ConfigurationError):
        FitOptions(starts=0)
    with pytest.raises(ConfigurationError):
        FitOptions(horizon_stages=-1)
    design = DesignVariables(THROWS[0], SPACE.names)
    exp = Experiment.from_design(design, np.zeros((block.horizon, 2)), block, SPACE)
    with pytest.raises(ConfigurationError):
        Experiment(design, exp.x0, exp.controls, np.zeros((block.horizon - 1, 2)))


def test_empty_dataset(block, accel_model, block_space):
    assert neg_log_likelihood(Dataset(), BLOCK_TRUE, block, accel_model, SOFT) == 0.0
    with pytest.raises(ConfigurationError):
        fit_mle(Dataset(), block_space.midpoint, block_space, block, accel_model, SOFT)


def test_zero_noise_truth_is_the_minimum(block, accel_model, block_space):
    data = _dataset(block, accel_model, BLOCK_TRUE)
    at_truth = neg_log_likelihood(data, BLOCK_TRUE, block, accel_model, SOFT)
    rng = np.random.default_rng(0)
    for _ in range(10):
        other = block_space.from_unit(rng.uniform(0, 1, 3))
        assert at_truth <= neg_log_likelihood(data, other, block, accel_model, SOFT)
    for k in range(3):
        for sign in (-1, 1):
            bumped = np.array(BLOCK_TRUE)
            bumped[k] *= 1 + sign * 1e-3
            assert at_truth < neg_log_likelihood(data, bumped, block, accel_model, SOFT)


def test_nll_expectation_at_truth(block, accel_model):
    rng = np.random.default_rng(21)
    n = block.horizon * len(THROWS)
    _, logdet = np.linalg.slogdet(accel_model.cov)
    expected = n * accel_model.dim / 2 * (1 + np.log(2 * np.pi)) + n / 2 * logdet
    values = [neg_log_likelihood(_dataset(block, accel_model, BLOCK_TRUE, rng), BLOCK_TRUE, block, accel_model, SOFT)
              for _ in range(200)]
    # half a chi-square with n*m degrees of freedom has standard deviation sqrt(n*m/2)
    sd = np.sqrt(n * accel_model.dim / 2)
    assert abs(np.mean(values) - expected) <= 4 * sd / np.sqrt(200)


def test_nll_gradient_matches_fd(block, accel_model, block_space):
    data = _dataset(block, accel_model, BLOCK_TRUE, np.random.default_rng(2))
    rng = np.random.default_rng(3)
    for _ in range(5):
        theta = block_space.from_unit(rng.uniform(0.1, 0.9, 3))
        grad = nll_gradient(data, theta, block, accel_model, SOFT)
        fd = np.zeros(3)
        for k in range(3):
            h = 1e-6 * theta[k]
            e = np.zeros(3)
            e[k] = h
            fd[k] = (neg_log_likelihood(data, theta + e, block, accel_model, SOFT)
                     - neg_log_likelihood(data, theta - e, block, accel_model, SOFT)) / (2 * h)
        assert np.linalg.norm(grad - fd) <= 1e-3 * np.linalg.norm(fd)


def test_zero_noise_recovery(block, accel_model, block_space):
    data = _dataset(block, accel_model, BLOCK_TRUE)
    start = ParamVector(block_space.labels, tuple(np.array(BLOCK_TRUE) * (1.01, 0.99, 1.01)))
    fit = fit_mle(data, start, block_space, block, accel_model, SOFT, FitOptions(iterations=100))
    assert param_error(fit.theta, ParamVector(block_space.labels, BLOCK_TRUE)) <= 1e-4
    assert np.all(np.abs(fit.theta.array - BLOCK_TRUE) / BLOCK_TRUE <= 1e-4)


def test_screen_improves_distant_start(block, accel_model, block_space):
    data = _dataset(block, accel_model, BLOCK_TRUE, np.random.default_rng(4))
    local = fit_mle(data, block_space.lower, block_space, block, accel_model, SOFT, FitOptions(iterations=50))
    screened = fit_mle(data, block_space.lower, block_space, block, accel_model, SOFT,
                       FitOptions(iterations=50, screen_levels=5, starts=3))
    truth = ParamVector(block_space.labels, BLOCK_TRUE)
    assert screened.nll <= local.nll
    assert param_error(screened.theta, truth) < param_error(local.theta, truth)
    # a fit that already explains the data skips the screen
    near = fit_mle(data, truth, block_space, block, accel_model, SOFT, FitOptions(iterations=50, screen_levels=5, starts=3))
    plain = fit_mle(data, truth, block_space, block, accel_model, SOFT, FitOptions(iterations=50))
    assert near.iterations == plain.iterations and near.nll == plain.nll


def test_horizon_stages_improve_distant_start(block, accel_model, block_space):
    data = _dataset(block, accel_model, BLOCK_TRUE, np.random.default_rng(4))
    local = fit_mle(data, block_space.lower, block_space, block, accel_model, SOFT, FitOptions(iterations=50))
    staged = fit_mle(data, block_space.lower, block_space, block, accel_model, SOFT,
                     FitOptions(iterations=50, horizon_stages=4))
    assert staged.nll < local.nll and block_space.contains(staged.theta)
    assert staged.iterations > local.iterations
    # skipped when the local fit already explains the data
    truth = ParamVector(block_space.labels, BLOCK_TRUE)
    near = fit_mle(data, truth, block_space, block, accel_model, SOFT, FitOptions(iterations=50, horizon_stages=4))
    plain = fit_mle(data, truth, block_space, block, accel_model, SOFT, FitOptions(iterations=50))
    assert near.iterations == plain.iterations and near.nll == plain.nll


def test_fit_from_truth_does_not_increase_nll(block, accel_model, block_space):
    data = _dataset(block, accel_model, BLOCK_TRUE, np.random.default_rng(5))
    start = ParamVector(block_space.labels, BLOCK_TRUE)
    fit = fit_mle(data, start, block_space, block, accel_model, SOFT, FitOptions(iterations=20))
    assert fit.nll <= neg_log_likelihood(data, BLOCK_TRUE, block, accel_model, SOFT)
    assert all(b <= a for a, b in zip(fit.history, fit.history[1:]))
    again = fit_mle(data, start, block_space, block, accel_model, SOFT, FitOptions(iterations=20))
    assert np.array_equal(fit.theta.array, again.theta.array) and fit.nll == again.nll


@pytest.mark.parametrize("method", ["gauss-newton", "adam"])
def test_corner_starts_stay_in_box(block, accel_model, block_space, method):
    data = _dataset(block, accel_model, BLOCK_TRUE, np.random.default_rng(6), throws=THROWS[:1])
    lo, hi = block_space.lower.array, block_space.upper.array
    for corner in ((0, 0, 0), (1, 1, 1), (1, 0, 1)):
        start = block_space.lower.replace_values(np.where(corner, hi, lo))
        fit = fit_mle(data, start, block_space, block, accel_model, SOFT, FitOptions(method=method, iterations=10))
        assert block_space.contains(fit.theta)
        assert fit.nll <= neg_log_likelihood(data, start.array, block, accel_model, SOFT)
    with pytest.raises(ConfigurationError):
        fit_mle(data, hi * 2, block_space, block, accel_model, SOFT)


def test_screen_grid():
    g = screen_grid(2, 3)
    assert g.shape == (9, 2)
    assert np.allclose(np.unique(g[:, 0]), [1 / 6, 0.5, 5 / 6])


def test_param_error_examples():
    theta = ParamVector(("a", "b"), (3.0, 4.0))
    assert param_error(theta, theta) == 0.0
    assert param_error(np.array([6.0, 8.0]), theta.array) == pytest.approx(1.0)
    assert param_error(np.array([3.0 + 5.0, 4.0]), theta.array) == pytest.approx(1.0)
    with pytest.raises(ConfigurationError):
        param_error(np.ones(3), theta.array)
    with pytest.raises(ConfigurationError):
        param_error(ParamVector(("a", "c"), (1.0, 1.0)), theta)


def test_arm_zero_noise_fit_improves(force_model, arm_space):
    sys = SystemModel.three_link_arm(substeps=4, initial_q=(-1.2, 1.1, 0.0), horizon=100)
    space = DesignSpace.arm(sys, u_max=1.0, knot_steps=25)
    design = DesignVariables(np.random.default_rng(7).uniform(-1, 1, space.dim), space.names)
    exp = Experiment.from_design(design, np.zeros((100, 2)), sys, space)
    g = np.asarray(predict_jit(exp.x0.q, exp.x0.qdot, exp.controls, np.array(ARM_TRUE), sys, SOFT, force_model))
    data = Dataset((Experiment(design, exp.x0, exp.controls, g),))
    truth = ParamVector(arm_space.labels, ARM_TRUE)
    start = truth.replace_values(np.array(ARM_TRUE) * 1.02)
    fit = fit_mle(data, start, arm_space, sys, force_model, SOFT, FitOptions(iterations=50))
    assert param_error(fit.theta, truth) <= 1e-4
