import numpy as np
import pytest

from kernel_bounds.exceptions import NotPositiveSemidefiniteError, SingularNoiseCovarianceError
from kernel_bounds.noise_model import (SIGMA_CAP, block_noise, build_Kw_sigma, energy_noise, general_noise,
                                       noise_from_dict, pointwise_noise)


def test_pointwise_noise_covariance():
    noise = pointwise_noise([0.1, 0.2, 0.3])
    assert noise.n_con == 3 and noise.is_pointwise
    K_w, P_w = build_Kw_sigma(noise, [1.0, 2.0, 0.5])
    np.testing.assert_allclose(K_w, np.diag([1.0, 4.0, 0.25]))
    np.testing.assert_allclose(P_w, np.diag([1.0, 0.25, 4.0]))


def test_pointwise_membership():
    noise = pointwise_noise([0.1, 0.2])
    assert noise.contains([0.05, -0.19])
    assert not noise.contains([0.1, 0.0])
    np.testing.assert_allclose(noise.margins([0.05, 0.1]), [0.01 - 0.0025, 0.04 - 0.01])


def test_energy_noise_covariance():
    P1 = np.array([[2.0, 0.5], [0.5, 1.0]])
    noise = energy_noise(P1, 0.3)
    K_w, P_w = build_Kw_sigma(noise, 2.0)
    np.testing.assert_allclose(K_w, 4.0 * np.linalg.inv(P1))
    np.testing.assert_allclose(K_w @ P_w, np.eye(2), atol=1e-12)

    with pytest.raises(NotPositiveSemidefiniteError):
        energy_noise(np.diag([1.0, 0.0]), 1.0)


def test_general_noise_detects_supports():
    rng = np.random.default_rng(0)
    pair = np.zeros((4, 4))
    pair[1:3, 1:3] = [[1.0, 0.3], [0.3, 2.0]]
    noise = general_noise([(np.eye(4), 1.0), (pair, 0.5)])
    np.testing.assert_array_equal(noise.supports[1], [1, 2])
    np.testing.assert_allclose(noise.matrix(1), pair)

    sigma = rng.uniform(0.5, 2.0, size=2)
    K_w, P_w = build_Kw_sigma(noise, sigma)
    np.testing.assert_allclose(P_w, np.eye(4) / sigma[0] ** 2 + pair / sigma[1] ** 2)
    np.testing.assert_allclose(K_w @ P_w, np.eye(4), atol=1e-10)

    w = rng.standard_normal(4)
    np.testing.assert_allclose(noise.quadratic_forms(w), [w @ w, w @ pair @ w])


def test_unbounded_direction_is_rejected():
    with pytest.raises(NotPositiveSemidefiniteError):
        general_noise([(np.diag([1.0, 0.0]), 1.0)])


@pytest.mark.parametrize("gammas", [[0.1, 0.0], [0.1, -1.0], [np.inf, 1.0]])
def test_noise_bounds_must_be_positive(gammas):
    with pytest.raises(ValueError):
        block_noise(2, [[0], [1]], [[[1.0]], [[1.0]]], gammas)


def test_empty_block_noise_is_accepted():
    noise = block_noise(0, [[]], [np.zeros((0, 0))], [0.2])
    assert noise.n == 0 and noise.n_con == 1
    np.testing.assert_allclose(noise.quadratic_forms(np.zeros(0)), [0.0])
    assert noise.weighted_precision([1.0]).shape == (0, 0)


def test_sigma_at_cap_drops_constraint():
    noise = general_noise([(np.eye(2), 1.0), (np.diag([1.0, 0.0]), 0.5)])
    np.testing.assert_allclose(noise.precision([1.0, SIGMA_CAP]), np.eye(2))
    with pytest.raises(SingularNoiseCovarianceError):
        build_Kw_sigma(noise, [1.0, SIGMA_CAP])


def test_check_sigma():
    noise = pointwise_noise([0.1, 0.2])
    np.testing.assert_allclose(noise.check_sigma(0.5), [0.5, 0.5])
    with pytest.raises(ValueError):
        noise.check_sigma([0.5, -1.0])
    with pytest.raises(ValueError):
        noise.check_sigma([0.5, 0.5, 0.5])


def test_box_envelope():
    np.testing.assert_allclose(pointwise_noise([0.1, 0.3]).box_envelope(), [0.1, 0.3])
    np.testing.assert_allclose(energy_noise(np.diag([4.0, 1.0]), 1.0).box_envelope(), [0.5, 1.0])

    # Rotated ellipse with semi-axes 0.3 and 0.1 along the diagonals.
    R = np.array([[1.0, -1.0], [1.0, 1.0]]) / np.sqrt(2.0)
    block = R @ np.diag([1.0 / 0.09, 1.0 / 0.01]) @ R.T
    noise = block_noise(2, [[0, 1]], [block], [1.0])
    np.testing.assert_allclose(noise.box_envelope(), np.sqrt([0.05, 0.05]))
    assert noise.uniform_bound() == pytest.approx(np.sqrt(0.05))


def test_noise_dict_round_trip_keeps_blocks():
    noise = block_noise(4, [[0, 1], [2, 3]], [np.eye(2), 2.0 * np.eye(2)], [1.0, 0.5])
    config = noise.to_dict()
    assert "blocks" in config
    restored = noise_from_dict(config)
    assert restored.n == 4
    for j in range(2):
        np.testing.assert_allclose(restored.matrix(j), noise.matrix(j))
    np.testing.assert_allclose(restored.gammas, noise.gammas)

    with pytest.raises(ValueError):
        noise_from_dict(dict(uniform=0.1))
