"""Rigid bodies embedded in Cartesian coordinates.

An extended body in d dimensions is represented by d+1 points: the center of
mass followed by the tips of its principal axes.  With X = [x_cm, x_1, .., x_d]
(points as columns) and Delta the difference matrix mapping X to the rotation
R = X Delta, the kinetic energy is Tr(Xdot M Xdot^T)/2 for a constant per-body
mass block M built from the total mass m and the principal second moments
lambda_i.  Point masses are the 0-dimensional special case with M = [m].
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterDomainError, ShapeError


@dataclass(frozen=True)
class BodySpec:
    """One rigid body: a point mass (ndim=0) or an extended body (ndim=d).

    moments holds the principal second moments lambda_1..lambda_ndim of the
    mass distribution about the center of mass; empty for point masses.
    """

    mass: float
    moments: tuple[float, ...] = ()

    def __post_init__(self):
        if self.mass <= 0.0:
            raise ParameterDomainError(f"mass must be positive, got {self.mass}")
        if any(lam <= 0.0 for lam in self.moments):
            raise ParameterDomainError(f"moments must be positive, got {self.moments}")
        object.__setattr__(self, "moments", tuple(float(lam) for lam in self.moments))

    @staticmethod
    def point(mass: float = 1.0) -> "BodySpec":
        return BodySpec(mass=float(mass))

    @staticmethod
    def rigid(mass: float, moments) -> "BodySpec":
        return BodySpec(mass=float(mass), moments=tuple(moments))

    @property
    def ndim(self) -> int:
        """Intrinsic dimension: 0 for a point mass, d for an extended body."""
        return len(self.moments)

    @property
    def n_points(self) -> int:
        return self.ndim + 1 if self.ndim else 1


def delta_matrix(ndim: int) -> np.ndarray:
    """Difference matrix Delta of shape (ndim+1, ndim) with R = X Delta.

    Column j of Delta selects (x_j - x_cm), so Delta = [-1; I].
    """
    if ndim < 1:
        raise ShapeError("delta_matrix needs ndim >= 1")
    return np.vstack([-np.ones((1, ndim)), np.eye(ndim)])


def body_point_coeffs(body: BodySpec, c) -> np.ndarray:
    """Coefficient vector c_tilde with world position X c_tilde for body-frame c.

    c has length body.ndim (empty for a point mass, where c_tilde = [1]).
    """
    c = np.asarray(c, dtype=float).reshape(-1)
    if c.size != body.ndim:
        raise ShapeError(f"body-frame point has {c.size} coords, body is {body.ndim}-dimensional")
    if body.ndim == 0:
        return np.ones(1)
    e0 = np.zeros(body.ndim + 1)
    e0[0] = 1.0
    return e0 + delta_matrix(body.ndim) @ c


def mass_block(body: BodySpec) -> np.ndarray:
    """Per-body mass block M of shape (n_points, n_points).

    For an extended body
        M = m [[1 + sum(lam), -lam^T], [-lam, diag(lam)]]
    which reproduces Tr(Xdot M Xdot^T)/2 = m|xdot_cm|^2/2 + m Tr(Rdot S Rdot^T)/2
    with S = diag(lam).
    """
    m = body.mass
    if body.ndim == 0:
        return np.array([[m]])
    lam = np.asarray(body.moments)
    top = np.concatenate([[1.0 + lam.sum()], -lam])
    block = np.zeros((body.ndim + 1, body.ndim + 1))
    block[0] = top
    block[1:, 0] = -lam
    block[1:, 1:] = np.diag(lam)
    return m * block


def mass_block_inverse(body: BodySpec) -> np.ndarray:
    """Closed-form inverse of mass_block: (1/m) (ones + diag(0, 1/lam))."""
    m = body.mass
    if body.ndim == 0:
        return np.array([[1.0 / m]])
    lam = np.asarray(body.moments)
    inv = np.ones((body.ndim + 1, body.ndim + 1))
    inv[1:, 1:] += np.diag(1.0 / lam)
    return inv / m


@dataclass(frozen=True)
class MassModel:
    """Assembled block-diagonal mass matrix over all points of a system."""

    matrix: np.ndarray
    inverse: np.ndarray
    blocks: tuple[slice, ...] = field(repr=False, default=())

    @property
    def n_points(self) -> int:
        return self.matrix.shape[0]


def assemble_mass_matrix(bodies) -> MassModel:
    """Block-diagonal M and its closed-form inverse for a list of BodySpec."""
    n = sum(b.n_points for b in bodies)
    M = np.zeros((n, n))
    Minv = np.zeros((n, n))
    blocks = []
    at = 0
    for body in bodies:
        k = body.n_points
        sl = slice(at, at + k)
        M[sl, sl] = mass_block(body)
        Minv[sl, sl] = mass_block_inverse(body)
        blocks.append(sl)
        at += k
    return MassModel(matrix=M, inverse=Minv, blocks=tuple(blocks))


def kinetic_energy(V: np.ndarray, mass: MassModel) -> float:
    """T = Tr(V M V^T)/2 for a velocity matrix V of shape (d, n_points)."""
    return 0.5 * float(np.trace(V @ mass.matrix @ V.T))


def hamiltonian_kinetic(P: np.ndarray, mass: MassModel) -> float:
    """T = Tr(P M^-1 P^T)/2 for a momentum matrix P of shape (d, n_points)."""
    return 0.5 * float(np.trace(P @ mass.inverse @ P.T))


def velocity_to_momentum(V: np.ndarray, mass: MassModel) -> np.ndarray:
    """P = V M (points as columns, so M acts on the point index)."""
    return V @ mass.matrix


def momentum_to_velocity(P: np.ndarray, mass: MassModel) -> np.ndarray:
    """V = P M^-1."""
    return P @ mass.inverse
