"""Benchmark systems: configs, potentials, builders, and on-manifold samplers.

Five ground-truth systems share one recipe: a topology of point masses or
extended bodies, a block-diagonal mass model, a potential with value/grad,
and a seeded sampler that embeds generalized coordinates so every sampled
state satisfies Phi = 0 and Phid = 0 by construction.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, asdict, replace
from typing import Callable

import numpy as np

from . import autodiff as ad
from .bodies import (
    BodySpec,
    MassModel,
    assemble_mass_matrix,
    velocity_to_momentum,
)
from .constraints import Joint, Link, anchor, point
from .dynamics import DynamicsContext, ZeroPotential, constrained_dynamics, energy
from .errors import (
    FieldSingularityError,
    GradientSingularityError,
    ParameterDomainError,
)
from .oracles import (
    gyroscope_embed,
    gyroscope_mass_matrix,
    gyroscope_oracle_dynamics,
    gyroscope_oracle_energy,
    pendulum_angles,
    pendulum_embed,
    pendulum_mass_matrix,
    pendulum_oracle_dynamics,
    pendulum_oracle_energy,
    rotation_zxz,
    skew,
)
from .states import HAMILTONIAN, PhaseState
from .topology import SystemTopology

EPS_SPRING = 1e-9
EPS_FIELD = 1e-6


def _flat_state(X: np.ndarray, P: np.ndarray) -> np.ndarray:
    return PhaseState(X, P, HAMILTONIAN).flat()


# -- potentials ------------------------------------------------------------------

class LinearGravity:
    """V(X) = g * sum_i w_i X[axis, i]; the gradient is constant."""

    def __init__(self, weights, axis: int, g: float = 1.0):
        self.weights = np.asarray(weights, dtype=float)
        self.axis = int(axis)
        self.g = float(g)

    def value(self, X: np.ndarray) -> float:
        return float(self.g * self.weights @ X[self.axis])

    def grad(self, X: np.ndarray) -> np.ndarray:
        out = np.zeros_like(X)
        out[self.axis] = self.g * self.weights
        return out


class SpringChain:
    """Sum of 1/2 k (|x_i - x_j| - rest)^2 over the given point pairs."""

    def __init__(self, pairs, k: float = 1.0, rest: float = 1.0):
        self.pairs = tuple((int(i), int(j)) for i, j in pairs)
        self.k = float(k)
        self.rest = float(rest)

    def value(self, X: np.ndarray) -> float:
        total = 0.0
        for i, j in self.pairs:
            r = float(np.linalg.norm(X[:, i] - X[:, j]))
            total += 0.5 * self.k * (r - self.rest) ** 2
        return total

    def grad(self, X: np.ndarray) -> np.ndarray:
        out = np.zeros_like(X)
        for i, j in self.pairs:
            d = X[:, i] - X[:, j]
            r = float(np.linalg.norm(d))
            if r < EPS_SPRING:
                raise GradientSingularityError(
                    f"spring endpoints {i}, {j} coincide (separation {r:.2e})")
            f = self.k * (r - self.rest) * d / r
            out[:, i] += f
            out[:, j] -= f
        return out


def dipole_field(r, moment) -> np.ndarray:
    """B(r) = (3 r (r.m) - |r|^2 m) / |r|^5 in units with mu0/4pi = 1."""
    r = np.asarray(r, dtype=float)
    moment = np.asarray(moment, dtype=float)
    rr = float(r @ r)
    if rr < EPS_FIELD ** 2:
        raise FieldSingularityError(f"field evaluated {math.sqrt(rr):.2e} from a dipole")
    return (3.0 * r * (r @ moment) - rr * moment) / rr ** 2.5


class DipolePotential:
    """V(x) = -m0(x)^T B(x) with m0 = -q x/|x| and B the summed dipole fields.

    Only the first point column of X feels the field.  The gradient is taken
    off the autodiff tape rather than derived by hand; evaluation closer than
    EPS_FIELD to a magnet (or the origin) raises FieldSingularityError.
    """

    def __init__(self, positions, moments, strength: float = 1.0):
        self.positions = np.atleast_2d(np.asarray(positions, dtype=float))
        self.moments = np.atleast_2d(np.asarray(moments, dtype=float))
        if self.positions.shape != self.moments.shape:
            raise ParameterDomainError("magnet positions and moments must pair up")
        self.strength = float(strength)

    def _check(self, x: np.ndarray) -> None:
        if float(x @ x) < EPS_FIELD ** 2:
            raise FieldSingularityError("pendulum charge at the origin")
        for r in self.positions:
            if float(np.linalg.norm(x - r)) < EPS_FIELD:
                raise FieldSingularityError(
                    f"pendulum within {EPS_FIELD:g} of the magnet at {r}")

    def value(self, X: np.ndarray) -> float:
        x = X[:, 0]
        self._check(x)
        m0 = -self.strength * x / np.linalg.norm(x)
        B = sum(dipole_field(x - r, m) for r, m in zip(self.positions, self.moments))
        return float(-m0 @ B)

    def _tape_value(self, x: ad.Node) -> ad.Node:
        m0 = x * (-self.strength) / ad.sqrt(ad.dot(x, x))
        terms = []
        for r, m in zip(self.positions, self.moments):
            d = x - r
            dd = ad.dot(d, d)
            terms.append((d * (ad.dot(d, m) * 3.0) - dd * m) / ad.power(dd, 2.5))
        B = terms[0]
        for t in terms[1:]:
            B = B + t
        return -ad.dot(m0, B)

    def grad(self, X: np.ndarray) -> np.ndarray:
        self._check(X[:, 0])
        tape = ad.Tape()
        x = tape.leaf(X[:, 0])
        g = ad.grad(self._tape_value(x), [x])[0]
        out = np.zeros_like(X)
        out[:, 0] = g.value
        return out


class SumPotential:
    """Pointwise sum of component potentials."""

    def __init__(self, *parts):
        self.parts = tuple(parts)

    def value(self, X: np.ndarray) -> float:
        return sum(p.value(X) for p in self.parts)

    def grad(self, X: np.ndarray) -> np.ndarray:
        out = np.zeros_like(X)
        for p in self.parts:
            out += p.grad(X)
        return out


# -- configs ---------------------------------------------------------------------

def _positive(name: str, values) -> tuple[float, ...]:
    values = tuple(float(v) for v in values)
    if any(v <= 0.0 for v in values):
        raise ParameterDomainError(f"{name} must be positive, got {values}")
    return values


@dataclass(frozen=True)
class NPendulumConfig:
    """Planar chain of point masses linked anchor -> x1 -> ... -> xN."""

    n: int = 2
    masses: tuple = ()
    lengths: tuple = ()
    gravity: float = 1.0
    dt: float = 0.03
    angle_range: float = math.pi
    rate_std: float = 0.5

    def __post_init__(self):
        if self.n < 1:
            raise ParameterDomainError(f"need at least one pendulum, got n={self.n}")
        object.__setattr__(self, "masses",
                           _positive("masses", self.masses or (1.0,) * self.n))
        object.__setattr__(self, "lengths",
                           _positive("lengths", self.lengths or (1.0,) * self.n))
        if len(self.masses) != self.n or len(self.lengths) != self.n:
            raise ParameterDomainError("masses and lengths must have n entries")
        _positive("dt", (self.dt,))


@dataclass(frozen=True)
class CoupledConfig:
    """3D pendulums on pivots at k*pivot, springs between neighboring bobs."""

    n: int = 3
    masses: tuple = ()
    lengths: tuple = ()
    spring_k: float = 1.0
    pivot: tuple = (1.0, 0.0, 0.0)
    rest_length: float = 0.0  # 0 means |pivot|
    gravity: float = 1.0
    dt: float = 0.03
    angle_range: float = math.pi
    rate_std: float = 0.5

    def __post_init__(self):
        if self.n < 1:
            raise ParameterDomainError(f"need at least one pendulum, got n={self.n}")
        object.__setattr__(self, "masses",
                           _positive("masses", self.masses or (1.0,) * self.n))
        object.__setattr__(self, "lengths",
                           _positive("lengths", self.lengths or (1.0,) * self.n))
        if len(self.masses) != self.n or len(self.lengths) != self.n:
            raise ParameterDomainError("masses and lengths must have n entries")
        object.__setattr__(self, "pivot", tuple(float(v) for v in self.pivot))
        if len(self.pivot) != 3:
            raise ParameterDomainError("pivot must be a 3-vector")
        rest = self.rest_length or float(np.linalg.norm(self.pivot))
        object.__setattr__(self, "rest_length", _positive("rest_length", (rest,))[0])
        _positive("spring_k", (self.spring_k,))
        _positive("dt", (self.dt,))


@dataclass(frozen=True)
class MagnetConfig:
    """Spherical pendulum carrying charge -q x/|x| over fixed dipole magnets."""

    mass: float = 1.0
    length: float = 1.0
    strength: float = 1.0
    magnet_positions: tuple = ((0.3, 0.0, -1.1), (-0.3, 0.0, -1.1))
    magnet_moments: tuple = ((0.0, 0.0, 1.0), (0.0, 0.0, 1.0))
    gravity: float = 1.0
    dt: float = 0.03
    polar_max: float = math.pi / 3.0
    speed_std: float = 0.2

    def __post_init__(self):
        _positive("mass", (self.mass,))
        _positive("length", (self.length,))
        _positive("dt", (self.dt,))
        object.__setattr__(self, "magnet_positions",
                           tuple(tuple(float(v) for v in r) for r in self.magnet_positions))
        object.__setattr__(self, "magnet_moments",
                           tuple(tuple(float(v) for v in m) for m in self.magnet_moments))


@dataclass(frozen=True)
class GyroscopeConfig:
    """Extended body with a body-frame point pinned to the origin, under gravity."""

    mass: float = 1.0
    moments: tuple = (0.05, 0.05, 0.09)
    pivot_offset: tuple = (0.0, 0.0, -1.0)
    gravity: float = 1.0
    dt: float = 0.03
    tilt_max: float = 0.3
    spin_mean: float = 20.0
    spin_std: float = 2.0

    def __post_init__(self):
        _positive("mass", (self.mass,))
        object.__setattr__(self, "moments", _positive("moments", self.moments))
        object.__setattr__(self, "pivot_offset",
                           tuple(float(v) for v in self.pivot_offset))
        _positive("dt", (self.dt,))


@dataclass(frozen=True)
class RotorConfig:
    """Free extended body; pairwise-distinct moments give the unstable middle axis."""

    mass: float = 1.0
    moments: tuple = (0.03, 0.05, 0.09)
    dt: float = 0.03
    spin_bias: float = 3.0

    def __post_init__(self):
        _positive("mass", (self.mass,))
        moments = _positive("moments", self.moments)
        if len(set(moments)) != len(moments):
            raise ParameterDomainError(
                f"rotor moments must be pairwise distinct, got {moments}")
        object.__setattr__(self, "moments", moments)
        _positive("dt", (self.dt,))


# -- the system bundle -------------------------------------------------------------

@dataclass(frozen=True)
class System:
    """A built benchmark system: topology, mass, potential, and its sampler."""

    name: str
    config: object
    topology: SystemTopology
    mass: MassModel
    potential: object
    sampler: Callable = field(repr=False, default=None)
    n_coords: int = 0

    @property
    def dt(self) -> float:
        return self.config.dt

    def context(self, flavor: str = HAMILTONIAN) -> DynamicsContext:
        return DynamicsContext(self.topology, self.mass, self.potential, flavor)

    def sample(self, rng: np.random.Generator, count: int | None = None) -> np.ndarray:
        if count is None:
            return self.sampler(rng)
        return np.stack([self.sampler(rng) for _ in range(count)])

    def energy(self, z: np.ndarray) -> float:
        return energy(self.context(), z)

    def dynamics(self, z: np.ndarray) -> np.ndarray:
        return constrained_dynamics(self.context(), z)


def sample_initial_conditions(system: System, rng: np.random.Generator,
                              count: int | None = None) -> np.ndarray:
    return system.sample(rng, count)


def disable_system_constraints(system: System, indices) -> System:
    """Same system with some constraint rows switched off (ablation studies)."""
    return replace(system, topology=system.topology.disable_constraints(indices))


# -- builders ----------------------------------------------------------------------

def _pendulum_state(cfg: NPendulumConfig, mass: MassModel, q, qdot) -> np.ndarray:
    X, V = pendulum_embed(q, qdot, cfg.lengths)
    return _flat_state(X, velocity_to_momentum(V, mass))


def build_n_pendulum(config: NPendulumConfig | None = None, **overrides) -> System:
    cfg = config or NPendulumConfig(**overrides)
    bodies = tuple(BodySpec.point(m) for m in cfg.masses)
    links = [Link(anchor(0), point(0), cfg.lengths[0])]
    links += [Link(point(i - 1), point(i), cfg.lengths[i]) for i in range(1, cfg.n)]
    topology = SystemTopology(2, bodies, tuple(links), anchors=(np.zeros(2),))
    mass = assemble_mass_matrix(bodies)
    potential = LinearGravity(cfg.masses, axis=1, g=cfg.gravity)

    def sampler(rng: np.random.Generator) -> np.ndarray:
        q = rng.uniform(-cfg.angle_range, cfg.angle_range, cfg.n)
        qdot = rng.normal(0.0, cfg.rate_std, cfg.n)
        return _pendulum_state(cfg, mass, q, qdot)

    return System("npendulum", cfg, topology, mass, potential, sampler, n_coords=cfg.n)


def build_coupled_pendulums(config: CoupledConfig | None = None, **overrides) -> System:
    cfg = config or CoupledConfig(**overrides)
    bodies = tuple(BodySpec.point(m) for m in cfg.masses)
    pivot = np.asarray(cfg.pivot)
    anchors = tuple((k + 1.0) * pivot for k in range(cfg.n))
    links = tuple(Link(anchor(k), point(k), cfg.lengths[k]) for k in range(cfg.n))
    topology = SystemTopology(3, bodies, links, anchors=anchors)
    mass = assemble_mass_matrix(bodies)
    springs = SpringChain([(k, k + 1) for k in range(cfg.n - 1)],
                          k=cfg.spring_k, rest=cfg.rest_length)
    potential = SumPotential(LinearGravity(cfg.masses, axis=1, g=cfg.gravity), springs)

    def sampler(rng: np.random.Generator) -> np.ndarray:
        q = rng.uniform(-cfg.angle_range, cfg.angle_range, cfg.n)
        qdot = rng.normal(0.0, cfg.rate_std, cfg.n)
        azim = rng.uniform(0.0, 2.0 * math.pi, cfg.n)
        l = np.asarray(cfg.lengths)
        # each bob swings in its own vertical plane; the state stays tangent
        X = np.stack([np.sin(q) * np.cos(azim) * l,
                      -np.cos(q) * l,
                      np.sin(q) * np.sin(azim) * l]) + np.stack(anchors, axis=1)
        V = np.stack([np.cos(q) * np.cos(azim), np.sin(q),
                      np.cos(q) * np.sin(azim)]) * (l * qdot)
        return _flat_state(X, velocity_to_momentum(V, mass))

    return System("coupled", cfg, topology, mass, potential, sampler)


def build_magnet_pendulum(config: MagnetConfig | None = None, **overrides) -> System:
    cfg = config or MagnetConfig(**overrides)
    bodies = (BodySpec.point(cfg.mass),)
    topology = SystemTopology(
        3, bodies, (Link(anchor(0), point(0), cfg.length),), anchors=(np.zeros(3),))
    mass = assemble_mass_matrix(bodies)
    dipoles = DipolePotential(cfg.magnet_positions, cfg.magnet_moments, cfg.strength)
    potential = SumPotential(LinearGravity((cfg.mass,), axis=2, g=cfg.gravity), dipoles)

    def sampler(rng: np.random.Generator) -> np.ndarray:
        theta = rng.uniform(0.0, cfg.polar_max)
        phi = rng.uniform(0.0, 2.0 * math.pi)
        x = cfg.length * np.array([math.sin(theta) * math.cos(phi),
                                   math.sin(theta) * math.sin(phi),
                                   -math.cos(theta)])
        v = rng.normal(0.0, cfg.speed_std, 3)
        v -= (v @ x) * x / (cfg.length ** 2)
        return _flat_state(x[:, None], velocity_to_momentum(v[:, None], mass))

    return System("magnet", cfg, topology, mass, potential, sampler)


def _rigid_body_state(mass: MassModel, R: np.ndarray, x_cm, v_cm,
                      omega_body) -> np.ndarray:
    """Flat Hamiltonian state of one 3D extended body from its pose and rates."""
    Rdot = R @ skew(omega_body)
    X = np.concatenate([np.zeros((3, 1)), R], axis=1) + np.asarray(x_cm, dtype=float)[:, None]
    Xdot = np.concatenate([np.zeros((3, 1)), Rdot], axis=1) + np.asarray(v_cm, dtype=float)[:, None]
    return _flat_state(X, velocity_to_momentum(Xdot, mass))


def build_gyroscope(config: GyroscopeConfig | None = None, **overrides) -> System:
    cfg = config or GyroscopeConfig(**overrides)
    bodies = (BodySpec.rigid(cfg.mass, cfg.moments),)
    joint = Joint(body_a=0, c_a=cfg.pivot_offset, anchor=0)
    topology = SystemTopology(3, bodies, (joint,), anchors=(np.zeros(3),))
    mass = assemble_mass_matrix(bodies)
    potential = LinearGravity((cfg.mass, 0.0, 0.0, 0.0), axis=2, g=cfg.gravity)

    def sampler(rng: np.random.Generator) -> np.ndarray:
        tilt = rng.uniform(0.0, cfg.tilt_max)
        R = rotation_zxz(rng.uniform(0.0, 2.0 * math.pi), tilt,
                         rng.uniform(0.0, 2.0 * math.pi))
        omega_body = np.array([0.0, 0.0, rng.normal(cfg.spin_mean, cfg.spin_std)])
        x_cm = -R @ np.asarray(cfg.pivot_offset)
        v_cm = -R @ skew(omega_body) @ np.asarray(cfg.pivot_offset)
        return _rigid_body_state(mass, R, x_cm, v_cm, omega_body)

    return System("gyroscope", cfg, topology, mass, potential, sampler, n_coords=3)


def build_rotor(config: RotorConfig | None = None, **overrides) -> System:
    cfg = config or RotorConfig(**overrides)
    bodies = (BodySpec.rigid(cfg.mass, cfg.moments),)
    topology = SystemTopology(3, bodies)
    mass = assemble_mass_matrix(bodies)

    def sampler(rng: np.random.Generator) -> np.ndarray:
        R = _random_rotation(rng)
        omega_body = rng.normal(0.0, 1.0, 3)
        mid = int(np.argsort(cfg.moments)[1])
        omega_body[mid] += cfg.spin_bias * math.copysign(1.0, omega_body[mid])
        return _rigid_body_state(mass, R, np.zeros(3), np.zeros(3), omega_body)

    return System("rotor", cfg, topology, mass, ZeroPotential(), sampler)


def _random_rotation(rng: np.random.Generator) -> np.ndarray:
    Q, upper = np.linalg.qr(rng.normal(size=(3, 3)))
    Q = Q * np.sign(np.diag(upper))
    if np.linalg.det(Q) < 0.0:
        Q[:, 2] = -Q[:, 2]
    return Q


# -- generalized-coordinate oracles and embeddings -----------------------------------

@dataclass(frozen=True)
class GeneralizedOracle:
    """Reference dynamics in generalized coordinates w = (q, p)."""

    n_coords: int
    dynamics: Callable = field(repr=False, default=None)
    energy: Callable = field(repr=False, default=None)
    mass_matrix: Callable = field(repr=False, default=None)
    to_cartesian: Callable = field(repr=False, default=None)


def generalized_oracle(system: System) -> GeneralizedOracle:
    """Joint-angle oracle for pendulum chains, Euler-angle oracle for the gyroscope."""
    cfg = system.config
    if system.name == "npendulum":
        m, l, g = cfg.masses, cfg.lengths, cfg.gravity

        def to_cart(w):
            q, p = w[:cfg.n], w[cfg.n:]
            qdot = np.linalg.solve(pendulum_mass_matrix(q, m, l), p)
            return _pendulum_state(cfg, system.mass, q, qdot)

        return GeneralizedOracle(
            cfg.n,
            dynamics=lambda w: pendulum_oracle_dynamics(w[:cfg.n], w[cfg.n:], m, l, g),
            energy=lambda w: pendulum_oracle_energy(w[:cfg.n], w[cfg.n:], m, l, g),
            mass_matrix=lambda q: pendulum_mass_matrix(q, m, l),
            to_cartesian=to_cart)
    if system.name == "gyroscope":
        if tuple(cfg.pivot_offset) != (0.0, 0.0, -1.0):
            raise ValueError("the Euler-angle oracle assumes pivot offset (0, 0, -1)")

        def to_cart(w):
            q, p = w[:3], w[3:]
            qdot = np.linalg.solve(
                gyroscope_mass_matrix(q[1], q[2], cfg.mass, cfg.moments), p)
            X, Xdot = gyroscope_embed(q, qdot)
            return _flat_state(X, velocity_to_momentum(Xdot, system.mass))

        return GeneralizedOracle(
            3,
            dynamics=lambda w: gyroscope_oracle_dynamics(
                w[:3], w[3:], cfg.mass, cfg.moments, cfg.gravity),
            energy=lambda w: gyroscope_oracle_energy(
                w[:3], w[3:], cfg.mass, cfg.moments, cfg.gravity),
            mass_matrix=lambda q: gyroscope_mass_matrix(
                q[1], q[2], cfg.mass, cfg.moments),
            to_cartesian=to_cart)
    raise ValueError(f"no generalized-coordinate oracle for system {system.name!r}")


def embed_generalized(system: System, q, qdot) -> np.ndarray:
    """Generalized coordinates and rates to a flat Hamiltonian Cartesian state."""
    if system.name == "npendulum":
        return _pendulum_state(system.config, system.mass, q, qdot)
    if system.name == "gyroscope":
        X, Xdot = gyroscope_embed(q, qdot)
        return _flat_state(X, velocity_to_momentum(Xdot, system.mass))
    raise ValueError(f"no generalized-coordinate embedding for system {system.name!r}")


def generalized_coordinates(system: System, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(q, qdot) recovered from a flat Hamiltonian state (pendulum chains only)."""
    if system.name != "npendulum":
        raise ValueError(f"no angle chart for system {system.name!r}")
    X, P = system.context().split(z)
    V = P @ system.mass.inverse
    return pendulum_angles(X, V, system.config.lengths)


# -- registry -------------------------------------------------------------------------

SYSTEM_BUILDERS = {
    "npendulum": (NPendulumConfig, build_n_pendulum),
    "coupled": (CoupledConfig, build_coupled_pendulums),
    "magnet": (MagnetConfig, build_magnet_pendulum),
    "gyroscope": (GyroscopeConfig, build_gyroscope),
    "rotor": (RotorConfig, build_rotor),
}


def system_names() -> list[str]:
    return sorted(SYSTEM_BUILDERS)


def build_system(kind: str, **params) -> System:
    try:
        cfg_cls, builder = SYSTEM_BUILDERS[kind]
    except KeyError:
        raise ValueError(f"unknown system {kind!r}; choose from {system_names()}") from None
    known = {f.name for f in fields(cfg_cls)}
    bad = sorted(set(params) - known)
    if bad:
        raise ValueError(f"unknown {kind} parameters {bad}; known: {sorted(known)}")
    return builder(cfg_cls(**params))


def _jsonify(value):
    if isinstance(value, tuple):
        return [_jsonify(v) for v in value]
    return value


def system_to_dict(system: System) -> dict:
    out = {"kind": system.name}
    out.update({k: _jsonify(v) for k, v in asdict(system.config).items()})
    return out


def system_from_dict(doc: dict) -> System:
    doc = dict(doc)
    kind = doc.pop("kind", None)
    if kind is None:
        raise ValueError("system document needs a 'kind' entry")
    return build_system(kind, **doc)
