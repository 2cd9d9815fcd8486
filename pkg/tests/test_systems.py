"""Benchmark systems: samplers stay on-manifold, potentials check out against
finite differences, and the Cartesian flows agree with the generalized oracles."""
import numpy as np
import pytest

from cartmech.constraints import phi, phidot
from cartmech.dynamics import (
    DynamicsContext,
    constrained_dynamics,
    energy,
    unconstrained_dynamics,
)
from cartmech.errors import FieldSingularityError, GradientSingularityError, ParameterDomainError
from cartmech.integrators import Tolerances, integrate_adaptive
from cartmech.systems import (
    LinearGravity,
    SpringChain,
    _rigid_body_state,
    build_system,
    dipole_field,
    embed_generalized,
    generalized_coordinates,
    generalized_oracle,
    sample_initial_conditions,
    system_from_dict,
    system_names,
    system_to_dict,
)

TIGHT = Tolerances(rtol=1e-10, atol=1e-12)


def _split_velocity(system, z):
    X, P = system.context().split(z)
    return X, P @ system.mass.inverse


def _flow(system):
    ctx = system.context()
    return lambda z: constrained_dynamics(ctx, z)


# -- registry and configs --------------------------------------------------------

def test_registry_names():
    assert system_names() == ["coupled", "gyroscope", "magnet", "npendulum", "rotor"]


def test_unknown_system_and_parameter_rejected():
    with pytest.raises(ValueError, match="unknown system"):
        build_system("spinning-wheel")
    with pytest.raises(ValueError, match="unknown npendulum parameters"):
        build_system("npendulum", masse=(1.0,))


def test_config_validation():
    with pytest.raises(ParameterDomainError):
        build_system("npendulum", n=2, masses=(1.0, -1.0))
    with pytest.raises(ParameterDomainError):
        build_system("npendulum", n=0)
    with pytest.raises(ParameterDomainError):
        build_system("rotor", moments=(0.05, 0.05, 0.09))


def test_system_dict_roundtrip():
    for name in system_names():
        system = build_system(name)
        doc = system_to_dict(system)
        clone = system_from_dict(doc)
        assert clone.config == system.config
        assert system_to_dict(clone) == doc


# -- samplers ----------------------------------------------------------------------

@pytest.mark.parametrize("name", ["coupled", "gyroscope", "magnet", "npendulum", "rotor"])
def test_samplers_stay_on_manifold(name):
    system = build_system(name)
    rng = np.random.default_rng(0)
    count = 1000 if name == "npendulum" else 200
    for z in system.sample(rng, count):
        X, V = _split_velocity(system, z)
        residual = phi(system.topology, X)
        if residual.size:
            assert np.abs(residual).max() < 1e-9
            assert np.abs(phidot(system.topology, X, V)).max() < 1e-9


def test_sampler_deterministic_per_seed():
    system = build_system("magnet")
    a = sample_initial_conditions(system, np.random.default_rng(42), 3)
    b = sample_initial_conditions(system, np.random.default_rng(42), 3)
    assert np.array_equal(a, b)


# -- N-pendulum ---------------------------------------------------------------------

def test_single_pendulum_hangs_at_rest():
    system = build_system("npendulum", n=1)
    z = embed_generalized(system, [0.0], [0.0])
    assert np.allclose(z, [0.0, -1.0, 0.0, 0.0], atol=1e-15)
    assert np.abs(system.dynamics(z)).max() < 1e-14


def test_pendulum_unconstrained_force_pattern():
    # before projection every bob feels pdot = (0, -g m_i)
    system = build_system("npendulum", n=3, masses=(1.0, 2.0, 0.5), gravity=1.7)
    z = system.sample(np.random.default_rng(1))
    zdot = unconstrained_dynamics(system.context(), z)
    dn = z.size // 2
    force = zdot[dn:].reshape(-1, 2).T
    assert np.abs(force[0]).max() < 1e-15
    assert np.allclose(force[1], [-1.7, -3.4, -0.85], atol=1e-15)


def test_two_pendulum_matches_closed_form_trajectory():
    system = build_system("npendulum", n=2)
    oracle = generalized_oracle(system)
    q0, qd0 = np.array([0.8, -0.4]), np.array([0.3, 0.5])
    w0 = np.concatenate([q0, oracle.mass_matrix(q0) @ qd0])
    t_eval = np.linspace(0.0, 1.0, 21)
    cart = integrate_adaptive(_flow(system), oracle.to_cartesian(w0), 1.0,
                              t_eval=t_eval, tol=Tolerances(1e-9, 1e-11))
    gen = integrate_adaptive(oracle.dynamics, w0, 1.0, t_eval=t_eval,
                             tol=Tolerances(1e-9, 1e-11))
    dn = system.topology.dn
    dev = max(np.abs(zc[:dn] - oracle.to_cartesian(wo)[:dn]).max()
              for zc, wo in zip(cart.states, gen.states))
    assert dev < 1e-4


def test_three_pendulum_matches_generalized_oracle():
    system = build_system("npendulum", n=3)
    oracle = generalized_oracle(system)
    q0, qd0 = np.array([0.8, -0.4, 0.2]), np.array([0.3, 0.5, -0.2])
    w0 = np.concatenate([q0, oracle.mass_matrix(q0) @ qd0])
    t_eval = np.linspace(0.0, 1.0, 21)
    cart = integrate_adaptive(_flow(system), oracle.to_cartesian(w0), 1.0,
                              t_eval=t_eval, tol=Tolerances(1e-9, 1e-11))
    gen = integrate_adaptive(oracle.dynamics, w0, 1.0, t_eval=t_eval,
                             tol=Tolerances(1e-9, 1e-11))
    dn = system.topology.dn
    dev = max(np.abs(zc[:dn] - oracle.to_cartesian(wo)[:dn]).max()
              for zc, wo in zip(cart.states, gen.states))
    assert dev < 1e-4


def test_hanging_two_pendulum_embedding():
    system = build_system("npendulum", n=2)
    z = embed_generalized(system, [0.0, 0.0], [0.0, 0.0])
    X, P = system.context().split(z)
    assert np.allclose(X[:, 0], [0.0, -1.0], atol=1e-15)
    assert np.allclose(X[:, 1], [0.0, -2.0], atol=1e-15)
    assert np.abs(P).max() == 0.0


def test_generalized_coordinates_roundtrip():
    system = build_system("npendulum", n=3, lengths=(1.0, 0.5, 1.5))
    rng = np.random.default_rng(8)
    q, qdot = rng.uniform(-np.pi, np.pi, 3), rng.normal(size=3)
    q2, qd2 = generalized_coordinates(system, embed_generalized(system, q, qdot))
    assert np.abs(q - q2).max() < 1e-12
    assert np.abs(qdot - qd2).max() < 1e-12
    with pytest.raises(ValueError):
        generalized_coordinates(build_system("rotor"), np.zeros(24))


# -- coupled pendulums ----------------------------------------------------------------

def test_coupled_hanging_equilibrium():
    system = build_system("coupled")
    X = np.stack([np.arange(1.0, 4.0), -np.ones(3), np.zeros(3)])
    z = np.concatenate([X.ravel(order="F"), np.zeros(9)])
    assert np.abs(system.dynamics(z)).max() < 1e-14


def test_spring_energy_and_gradient():
    spring = SpringChain([(0, 1)], k=1.0, rest=1.0)
    assert spring.value(np.array([[0.0, 2.0], [0.0, 0.0], [0.0, 0.0]])) == 0.5
    with pytest.raises(GradientSingularityError):
        spring.grad(np.zeros((3, 2)))


def test_coupled_potential_gradient_fd():
    system = build_system("coupled")
    z = system.sample(np.random.default_rng(1))
    X = system.context().split(z)[0]
    pot = system.potential
    grad = pot.grad(X)
    h = 1e-6
    fd = np.zeros_like(X)
    for i in range(3):
        for j in range(3):
            Xp, Xm = X.copy(), X.copy()
            Xp[i, j] += h
            Xm[i, j] -= h
            fd[i, j] = (pot.value(Xp) - pot.value(Xm)) / (2.0 * h)
    assert np.abs(grad - fd).max() < 1e-6


# -- magnet pendulum --------------------------------------------------------------------

def test_dipole_field_frozen_examples():
    # on-axis doubling and equatorial half-strength with opposite sign
    assert np.allclose(dipole_field([0.0, 0.0, 2.0], [0.0, 0.0, 1.0]),
                       [0.0, 0.0, 0.25], atol=1e-15)
    assert np.allclose(dipole_field([2.0, 0.0, 0.0], [0.0, 0.0, 1.0]),
                       [0.0, 0.0, -0.125], atol=1e-15)
    with pytest.raises(FieldSingularityError):
        dipole_field([0.0, 0.0, 1e-8], [0.0, 0.0, 1.0])


def test_magnet_gradient_matches_fd():
    system = build_system("magnet")
    z = system.sample(np.random.default_rng(5))
    X = system.context().split(z)[0]
    pot = system.potential
    grad = pot.grad(X)
    h = 1e-6
    fd = np.zeros_like(X)
    for i in range(3):
        Xp, Xm = X.copy(), X.copy()
        Xp[i, 0] += h
        Xm[i, 0] -= h
        fd[i, 0] = (pot.value(Xp) - pot.value(Xm)) / (2.0 * h)
    assert np.abs(grad - fd).max() < 1e-6


def test_zero_strength_magnet_is_spherical_pendulum():
    system = build_system("magnet", strength=0.0)
    pure = DynamicsContext(system.topology, system.mass,
                           LinearGravity((1.0,), axis=2, g=1.0))
    z = system.sample(np.random.default_rng(5))
    assert np.array_equal(system.dynamics(z),
                          constrained_dynamics(pure, z))


def test_magnet_potential_singular_near_magnet():
    system = build_system("magnet")
    X = np.array([[0.3], [0.0], [-1.1]])
    with pytest.raises(FieldSingularityError):
        system.potential.value(X)


# -- gyroscope ----------------------------------------------------------------------------

def test_gyroscope_unit_mass_inverse_display():
    system = build_system("gyroscope", mass=1.0, moments=(1.0, 1.0, 1.0))
    expected = np.ones((4, 4)) + np.diag([0.0, 1.0, 1.0, 1.0])
    assert np.abs(system.mass.inverse - expected).max() < 1e-14


def test_gyroscope_matches_euler_oracle_trajectory():
    system = build_system("gyroscope")
    oracle = generalized_oracle(system)
    q0, qd0 = np.array([0.3, 0.25, 0.1]), np.array([0.2, 0.1, 18.0])
    w0 = np.concatenate([q0, oracle.mass_matrix(q0) @ qd0])
    assert abs(oracle.energy(w0) - system.energy(oracle.to_cartesian(w0))) < 1e-10
    t_eval = np.linspace(0.0, 1.0, 21)
    cart = integrate_adaptive(_flow(system), oracle.to_cartesian(w0), 1.0,
                              t_eval=t_eval, tol=Tolerances(1e-9, 1e-11))
    gen = integrate_adaptive(oracle.dynamics, w0, 1.0, t_eval=t_eval,
                             tol=Tolerances(1e-9, 1e-11))
    dn = system.topology.dn
    dev = max(np.abs(zc[:dn] - oracle.to_cartesian(wo)[:dn]).max()
              for zc, wo in zip(cart.states, gen.states))
    assert dev < 1e-3


def test_oracle_requires_default_pivot():
    tilted = build_system("gyroscope", pivot_offset=(0.0, 0.1, -1.0))
    with pytest.raises(ValueError):
        generalized_oracle(tilted)
    with pytest.raises(ValueError):
        generalized_oracle(build_system("magnet"))


# -- rotor -------------------------------------------------------------------------------

def _angular_momentum(system, z):
    X, V = _split_velocity(system, z)
    Xr = X - X[:, 0:1]
    Vr = V - V[:, 0:1]
    M = system.mass.matrix
    return Xr @ M @ Vr.T - Vr @ M @ Xr.T


def test_rotor_principal_spin_is_steady():
    system = build_system("rotor")
    z0 = _rigid_body_state(system.mass, np.eye(3), np.zeros(3), np.zeros(3),
                           np.array([0.0, 0.0, 5.0]))
    traj = integrate_adaptive(_flow(system), z0, 3.0,
                              t_eval=np.linspace(0.0, 3.0, 31), tol=TIGHT)
    E0 = system.energy(z0)
    L0 = _angular_momentum(system, z0)
    for z in traj.states:
        X = system.context().split(z)[0]
        axis = X[:, 3] - X[:, 0]
        assert np.abs(axis - [0.0, 0.0, 1.0]).max() < 1e-9
        assert abs(system.energy(z) - E0) / abs(E0) < 1e-6
        assert np.linalg.norm(_angular_momentum(system, z) - L0) / np.linalg.norm(L0) < 1e-6


def test_rotor_intermediate_axis_flip():
    # Dzhanibekov: a middle-axis spin with a tiny perturbation flips over
    system = build_system("rotor")
    z0 = _rigid_body_state(system.mass, np.eye(3), np.zeros(3), np.zeros(3),
                           np.array([1e-3, 5.0, 1e-3]))
    traj = integrate_adaptive(_flow(system), z0, 30.0,
                              t_eval=np.linspace(0.0, 30.0, 301),
                              tol=Tolerances(1e-10, 1e-12))
    L0 = _angular_momentum(system, z0)
    l_hat = np.array([L0[2, 1], L0[0, 2], L0[1, 0]])
    l_hat /= np.linalg.norm(l_hat)
    proj = []
    for z in traj.states:
        X = system.context().split(z)[0]
        proj.append((X[:, 2] - X[:, 0]) @ l_hat)
    assert min(proj) < -0.5
    assert max(proj) > 0.5
    dL = max(np.linalg.norm(_angular_momentum(system, z) - L0) for z in traj.states)
    assert dL / np.linalg.norm(L0) < 1e-6


# -- shared invariants -----------------------------------------------------------------

@pytest.mark.parametrize("name", ["coupled", "gyroscope", "magnet", "npendulum", "rotor"])
def test_energy_conserved_over_three_seconds(name):
    system = build_system(name)
    z0 = system.sample(np.random.default_rng(17))
    traj = integrate_adaptive(_flow(system), z0, 3.0,
                              t_eval=np.linspace(0.0, 3.0, 31), tol=TIGHT)
    E0 = system.energy(z0)
    drift = max(abs(system.energy(z) - E0) for z in traj.states)
    assert drift / max(abs(E0), 1e-12) < 1e-6
