import numpy as np
import pytest

from cartmech.bodies import (
    BodySpec,
    assemble_mass_matrix,
    body_point_coeffs,
    delta_matrix,
    hamiltonian_kinetic,
    kinetic_energy,
    mass_block,
    mass_block_inverse,
    momentum_to_velocity,
    velocity_to_momentum,
)
from cartmech.errors import ParameterDomainError


def test_delta_matrix():
    D = delta_matrix(3)
    assert D.shape == (4, 3)
    np.testing.assert_array_equal(D[0], [-1, -1, -1])
    np.testing.assert_array_equal(D[1:], np.eye(3))


def test_mass_block_unit_3d():
    body = BodySpec.rigid(1.0, (1.0, 1.0, 1.0))
    expected = np.array([
        [4.0, -1.0, -1.0, -1.0],
        [-1.0, 1.0, 0.0, 0.0],
        [-1.0, 0.0, 1.0, 0.0],
        [-1.0, 0.0, 0.0, 1.0],
    ])
    np.testing.assert_allclose(mass_block(body), expected)
    np.testing.assert_allclose(mass_block_inverse(body), np.ones((4, 4)) + np.diag([0, 1, 1, 1.0]))


def test_mass_block_inverse_closed_form():
    rng = np.random.default_rng(0)
    for _ in range(20):
        m = rng.uniform(0.2, 3.0)
        lam = rng.uniform(0.05, 2.0, size=3)
        body = BodySpec.rigid(m, lam)
        np.testing.assert_allclose(mass_block(body) @ mass_block_inverse(body), np.eye(4), atol=1e-12)


def test_gyroscope_default_inverse():
    # (1/m) [[1,1,1,1],[1,1+1/l1,1,1],[1,1,1+1/l2,1],[1,1,1,1+1/l3]]
    lam = (0.05, 0.05, 0.09)
    body = BodySpec.rigid(2.0, lam)
    expected = np.ones((4, 4)) + np.diag([0.0, 1 / 0.05, 1 / 0.05, 1 / 0.09])
    np.testing.assert_allclose(mass_block_inverse(body), expected / 2.0)


def test_kinetic_energy_matches_cm_plus_rotation():
    # T = Tr(Xdot M Xdot^T)/2 must equal m|v_cm|^2/2 + m Tr(Rdot S Rdot^T)/2.
    rng = np.random.default_rng(1)
    for _ in range(10):
        m = rng.uniform(0.5, 2.0)
        lam = rng.uniform(0.1, 1.5, size=3)
        body = BodySpec.rigid(m, lam)
        mass = assemble_mass_matrix([body])
        Xdot = rng.normal(size=(3, 4))
        T = kinetic_energy(Xdot, mass)
        Rdot = Xdot @ delta_matrix(3)
        T_split = 0.5 * m * Xdot[:, 0] @ Xdot[:, 0] + 0.5 * m * np.trace(Rdot @ np.diag(lam) @ Rdot.T)
        np.testing.assert_allclose(T, T_split, rtol=1e-12)


def test_point_mass_block():
    mass = assemble_mass_matrix([BodySpec.point(2.5)])
    np.testing.assert_allclose(mass.matrix, [[2.5]])
    np.testing.assert_allclose(mass.inverse, [[0.4]])


def test_mixed_assembly_blocks():
    mass = assemble_mass_matrix([BodySpec.point(1.0), BodySpec.rigid(2.0, (0.3, 0.4, 0.5))])
    assert mass.matrix.shape == (5, 5)
    np.testing.assert_allclose(mass.matrix @ mass.inverse, np.eye(5), atol=1e-12)
    assert mass.blocks == (slice(0, 1), slice(1, 5))


def test_momentum_velocity_roundtrip():
    rng = np.random.default_rng(2)
    mass = assemble_mass_matrix([BodySpec.rigid(1.3, (0.2, 0.7, 1.1)), BodySpec.point(0.8)])
    V = rng.normal(size=(3, 5))
    P = velocity_to_momentum(V, mass)
    np.testing.assert_allclose(momentum_to_velocity(P, mass), V, atol=1e-12)
    np.testing.assert_allclose(hamiltonian_kinetic(P, mass), kinetic_energy(V, mass), rtol=1e-12)


def test_body_point_coeffs():
    body = BodySpec.rigid(1.0, (1.0, 1.0, 1.0))
    np.testing.assert_allclose(body_point_coeffs(body, (0, 0, -1)), [2, 0, 0, -1])
    np.testing.assert_allclose(body_point_coeffs(BodySpec.point(), ()), [1.0])


def test_parameter_domain():
    with pytest.raises(ParameterDomainError):
        BodySpec.point(0.0)
    with pytest.raises(ParameterDomainError):
        BodySpec.rigid(1.0, (0.1, -0.2, 0.3))
