"""Fixed-step RK4 and adaptive Dormand-Prince 5(4) integration.

The fixed path is the differentiable one: rk4_step and rollout_fixed only use
+, * and calls to f, so they accept either plain arrays or autodiff tape nodes.
The adaptive path is for ground truth only and rejects non-array states; it
implements the Dormand-Prince 5(4) pair with first-same-as-last stage reuse,
a PI step-size controller and quartic (4th-order) dense output.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import IntegrationError

# Dormand-Prince 5(4) tableau.
DP_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
DP_A = [
    np.array([]),
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
    np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84]),
]
DP_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
# b5 - b4: dotted with the stages this gives the embedded error estimate.
DP_E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])
# Shampine's quartic interpolant: y(t0 + u h) = y0 + h K^T P [u, u^2, u^3, u^4].
DP_P = np.array([
    [1.0, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
    [0.0, 0.0, 0.0, 0.0],
    [0.0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
    [0.0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
    [0.0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
    [0.0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
    [0.0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
])

SAFETY = 0.9
MIN_FACTOR = 0.2
MAX_FACTOR = 10.0
# PI controller exponents (integral / proportional on the previous error).
K_I = 0.7 / 5
K_P = 0.4 / 5


@dataclass(frozen=True)
class Tolerances:
    rtol: float = 1e-7
    atol: float = 1e-9


@dataclass(frozen=True)
class Trajectory:
    """Time grid and the state at each time, row per time."""

    times: np.ndarray
    states: np.ndarray
    n_accepted: int = 0
    n_rejected: int = 0

    def __len__(self):
        return len(self.times)


def rk4_step(f, z, h: float):
    """One classical Runge-Kutta step; works on arrays and on tape nodes."""
    k1 = f(z)
    k2 = f(z + (0.5 * h) * k1)
    k3 = f(z + (0.5 * h) * k2)
    k4 = f(z + h * k3)
    return z + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def rollout_fixed(f, z0, times, substeps: int = 1):
    """States of dz/dt = f(z) at the given times via fixed RK4 substeps.

    Every elementary operation is differentiable, so when z0 is a tape node
    the whole rollout can be backpropagated.  Returns a list of states (one
    per time, starting with z0); array callers usually np.stack the result.
    """
    times = np.asarray(times, dtype=float)
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    out = [z0]
    z = z0
    for a, b in zip(times[:-1], times[1:]):
        h = (b - a) / substeps
        for _ in range(substeps):
            z = rk4_step(f, z, h)
        out.append(z)
    return out


def _error_norm(err, scale):
    return float(np.sqrt(np.mean((err / scale) ** 2)))


def _initial_step(f, z0, f0, t_span, tol: Tolerances):
    """Hairer's starting-step heuristic from |z0| and |f(z0)|."""
    scale = tol.atol + tol.rtol * np.abs(z0)
    d0 = float(np.sqrt(np.mean((z0 / scale) ** 2)))
    d1 = float(np.sqrt(np.mean((f0 / scale) ** 2)))
    h0 = 1e-6 if (d0 < 1e-5 or d1 < 1e-5) else 0.01 * d0 / d1
    f1 = f(z0 + h0 * f0)
    d2 = float(np.sqrt(np.mean(((f1 - f0) / scale) ** 2))) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** 0.2
    return min(100 * h0, h1, t_span)


def integrate_adaptive(f, z0, t_span: float, t_eval=None, tol: Tolerances = Tolerances(),
                       max_steps: int = 1_000_000) -> Trajectory:
    """Integrate dz/dt = f(z) from t=0 to t=t_span with Dormand-Prince 5(4).

    t_eval requests dense output at specific times inside [0, t_span]; when
    omitted, the accepted step points are returned.  Raises IntegrationError
    on step underflow, non-finite states or step budget exhaustion.
    """
    z0 = np.asarray(z0, dtype=float)
    if not isinstance(f(z0), np.ndarray):
        raise TypeError("integrate_adaptive requires a plain-array dynamics function")
    if t_span <= 0:
        raise ValueError("t_span must be positive")
    if t_eval is not None:
        t_eval = np.asarray(t_eval, dtype=float)
        if t_eval.size and (t_eval[0] < 0 or t_eval[-1] > t_span * (1 + 1e-12) or np.any(np.diff(t_eval) < 0)):
            raise ValueError("t_eval must be increasing inside [0, t_span]")

    t = 0.0
    z = z0
    k = np.empty((7, z0.size))
    f_now = f(z0)  # refreshed only on accepted steps; rejections must not clobber it
    h = _initial_step(f, z0, f_now, t_span, tol)
    err_prev = 1.0

    times = [0.0]
    states = [z0]
    eval_idx = 0
    out_times: list[float] = []
    out_states: list[np.ndarray] = []
    if t_eval is not None:
        while eval_idx < len(t_eval) and t_eval[eval_idx] <= 0.0:
            out_times.append(float(t_eval[eval_idx]))
            out_states.append(z0)
            eval_idx += 1

    n_accepted = 0
    n_rejected = 0
    for _ in range(max_steps):
        if t >= t_span:
            break
        h = min(h, t_span - t)
        if h < 1e-14 * max(1.0, abs(t)):
            raise IntegrationError(f"step size underflow at t={t:.6g}", t=t, step=n_accepted)

        k[0] = f_now  # first-same-as-last
        for s in range(1, 7):
            zs = z + h * (DP_A[s] @ k[:s])
            k[s] = f(zs)
        z_new = z + h * (DP_B @ k)
        if not np.all(np.isfinite(z_new)):
            raise IntegrationError(f"non-finite state at t={t:.6g}", t=t, step=n_accepted)
        err = h * (DP_E @ k)
        scale = tol.atol + tol.rtol * np.maximum(np.abs(z), np.abs(z_new))
        err_norm = _error_norm(err, scale)

        if err_norm <= 1.0:
            if t_eval is not None and eval_idx < len(t_eval):
                # Quartic dense output on the accepted interval.
                Q = k.T @ DP_P
                while eval_idx < len(t_eval) and t_eval[eval_idx] <= t + h * (1 + 1e-12):
                    u = (t_eval[eval_idx] - t) / h
                    out_times.append(float(t_eval[eval_idx]))
                    out_states.append(z + h * (Q @ (u ** np.arange(1, 5))))
                    eval_idx += 1
            t += h
            z = z_new
            f_now = k[6].copy()  # k is reused by later attempts; a view would go stale
            times.append(t)
            states.append(z)
            n_accepted += 1
            if err_norm == 0.0:
                factor = MAX_FACTOR
            else:
                factor = min(MAX_FACTOR, max(MIN_FACTOR, SAFETY * err_norm ** -K_I * err_prev ** K_P))
            err_prev = max(err_norm, 1e-10)
            h *= factor
        else:
            n_rejected += 1
            h *= max(MIN_FACTOR, SAFETY * err_norm ** -0.2)
    else:
        raise IntegrationError(f"exceeded {max_steps} steps at t={t:.6g}", t=t, step=n_accepted)

    if t_eval is not None:
        return Trajectory(np.array(out_times), np.array(out_states), n_accepted, n_rejected)
    return Trajectory(np.array(times), np.stack(states), n_accepted, n_rejected)
