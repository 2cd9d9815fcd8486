"""Constrained dynamics in both Hamiltonian and Lagrangian form.

Hamiltonian flavor works on z = (vec(X), vec(P)) with
    zdot = J [grad H + DPsi^T lambda],   lambda = -[DPsi J DPsi^T]^-1 DPsi J grad H,
which equals the projected flow P J grad H with
    P = I - J DPsi^T [DPsi J DPsi^T]^-1 DPsi.

Lagrangian flavor works on (vec(X), vec(V)) with the acceleration
    xddot = M^-1 f - M^-1 DPhi^T [DPhi M^-1 DPhi^T]^-1 (DPhi M^-1 f + (D_x phidot) v),
    f = -grad_X V.

All solves go through a pivoted LU factorization (numpy.linalg.solve); a
condition estimate above COND_LIMIT raises DegenerateConfigurationError.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .bodies import MassModel, hamiltonian_kinetic, kinetic_energy
from .constraints import jacobian_phi, jacobian_phidot_x, jacobian_psi
from .errors import DegenerateConfigurationError
from .states import (
    HAMILTONIAN,
    LAGRANGIAN,
    flatten_matrix,
    symplectic_apply,
    symplectic_matrix,
    unflatten_matrix,
)
from .topology import SystemTopology

COND_LIMIT = 1e12


class ZeroPotential:
    def value(self, X: np.ndarray) -> float:
        return 0.0

    def grad(self, X: np.ndarray) -> np.ndarray:
        return np.zeros_like(X)


@dataclass(frozen=True)
class DynamicsContext:
    """Topology + mass model + potential + state flavor."""

    topology: SystemTopology
    mass: MassModel
    potential: object = ZeroPotential()
    flavor: str = HAMILTONIAN

    @property
    def dim(self) -> int:
        return self.topology.dim

    def with_flavor(self, flavor: str) -> "DynamicsContext":
        return replace(self, flavor=flavor)

    def split(self, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        dn = z.size // 2
        return unflatten_matrix(z[:dn], self.dim), unflatten_matrix(z[dn:], self.dim)


def checked_solve(A: np.ndarray, B: np.ndarray, what: str = "constraint system") -> np.ndarray:
    """LU solve with an SVD condition estimate guarding degenerate configurations."""
    if A.shape[0] == 0:
        return np.zeros(B.shape)
    cond = np.linalg.cond(A)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise DegenerateConfigurationError(f"{what} is numerically singular", cond=float(cond))
    return np.linalg.solve(A, B)


def grad_hamiltonian(ctx: DynamicsContext, z: np.ndarray) -> np.ndarray:
    """grad_z H = (grad_X V, vec(P M^-1)) for H = Tr(P M^-1 P^T)/2 + V(X)."""
    X, P = ctx.split(z)
    return np.concatenate([flatten_matrix(ctx.potential.grad(X)),
                           flatten_matrix(P @ ctx.mass.inverse)])


def unconstrained_dynamics(ctx: DynamicsContext, z: np.ndarray) -> np.ndarray:
    """Free symplectic flow J grad H."""
    return symplectic_apply(grad_hamiltonian(ctx, z))


def _apply_j_rows(DPsi: np.ndarray) -> np.ndarray:
    """J DPsi^T as a (2dn, 2C) matrix: J applied to each row of DPsi."""
    dn = DPsi.shape[1] // 2
    out = np.empty_like(DPsi.T)
    out[:dn] = DPsi[:, dn:].T
    out[dn:] = -DPsi[:, :dn].T
    return out


def hamiltonian_multipliers(ctx: DynamicsContext, z: np.ndarray) -> np.ndarray:
    """lambda = -[DPsi J DPsi^T]^-1 DPsi J grad H, shape (2C,)."""
    g = grad_hamiltonian(ctx, z)
    DPsi = jacobian_psi(ctx.topology, z, ctx.mass)
    A = DPsi @ _apply_j_rows(DPsi)
    return -checked_solve(A, DPsi @ symplectic_apply(g))


def constrained_hamiltonian_dynamics(ctx: DynamicsContext, z: np.ndarray) -> np.ndarray:
    """zdot = J (grad H + DPsi^T lambda); identical to P J grad H."""
    g = grad_hamiltonian(ctx, z)
    DPsi = jacobian_psi(ctx.topology, z, ctx.mass)
    if DPsi.shape[0] == 0:
        return symplectic_apply(g)
    A = DPsi @ _apply_j_rows(DPsi)
    lam = -checked_solve(A, DPsi @ symplectic_apply(g))
    return symplectic_apply(g + DPsi.T @ lam)


def projection_matrix(dpsi: np.ndarray) -> np.ndarray:
    """P = I - J DPsi^T [DPsi J DPsi^T]^-1 DPsi for a (2C, 2dn) constraint Jacobian."""
    two_dn = dpsi.shape[1]
    if dpsi.shape[0] == 0:
        return np.eye(two_dn)
    JDPsiT = _apply_j_rows(dpsi)
    A = dpsi @ JDPsiT
    return np.eye(two_dn) - JDPsiT @ checked_solve(A, dpsi)


def _apply_minv_flat(mass: MassModel, w: np.ndarray, dim: int) -> np.ndarray:
    """(M^-1 kron I_d) w in the flat point-major layout."""
    return flatten_matrix(unflatten_matrix(w, dim) @ mass.inverse)


def constrained_lagrangian_dynamics(ctx: DynamicsContext, X: np.ndarray,
                                    V: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Acceleration matrix Xddot of shape (d, n) and the multiplier lambda (C,)."""
    dim = ctx.dim
    f = -flatten_matrix(ctx.potential.grad(X))
    minv_f = _apply_minv_flat(ctx.mass, f, dim)
    G = jacobian_phi(ctx.topology, X)
    if G.shape[0] == 0:
        return unflatten_matrix(minv_f, dim), np.zeros(0)
    v = flatten_matrix(V)
    GMinvT = np.stack([_apply_minv_flat(ctx.mass, row, dim) for row in G], axis=1)
    A = G @ GMinvT
    rhs = G @ minv_f + jacobian_phidot_x(ctx.topology, X, V) @ v
    lam = checked_solve(A, rhs)
    return unflatten_matrix(minv_f - GMinvT @ lam, dim), lam


def constrained_dynamics(ctx: DynamicsContext, z: np.ndarray) -> np.ndarray:
    """Flavor dispatch z -> zdot for integrator callbacks."""
    if ctx.flavor == HAMILTONIAN:
        return constrained_hamiltonian_dynamics(ctx, z)
    X, V = ctx.split(z)
    xddot, _ = constrained_lagrangian_dynamics(ctx, X, V)
    return np.concatenate([flatten_matrix(V), flatten_matrix(xddot)])


def convert_flavor(ctx: DynamicsContext, z: np.ndarray, to: str) -> np.ndarray:
    """Map a flat state between (x, p) and (x, v) using the context's mass."""
    X, Z = ctx.split(z)
    if to == ctx.flavor:
        return np.asarray(z, dtype=float).copy()
    if to == LAGRANGIAN:
        out = Z @ ctx.mass.inverse
    elif to == HAMILTONIAN:
        out = Z @ ctx.mass.matrix
    else:
        raise ValueError(f"unknown flavor {to!r}")
    return np.concatenate([flatten_matrix(X), flatten_matrix(out)])


def energy(ctx: DynamicsContext, z: np.ndarray) -> float:
    """Total energy H = T + V of a flat state in the context's flavor."""
    X, Z = ctx.split(z)
    if ctx.flavor == HAMILTONIAN:
        T = hamiltonian_kinetic(Z, ctx.mass)
    else:
        T = kinetic_energy(Z, ctx.mass)
    return T + float(ctx.potential.value(X))


def symplectic_form(dn: int) -> np.ndarray:
    return symplectic_matrix(dn)
