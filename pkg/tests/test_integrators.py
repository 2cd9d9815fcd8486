import math

import numpy as np
import pytest

from cartmech.errors import IntegrationError
from cartmech.integrators import Tolerances, integrate_adaptive, rk4_step, rollout_fixed


def test_rk4_exponential_single_step():
    # z' = z, h = 0.1: RK4 reproduces the quartic Taylor polynomial of e^h.
    z = rk4_step(lambda z: z, np.array([1.0]), 0.1)
    taylor = sum(0.1 ** k / math.factorial(k) for k in range(5))
    assert abs(z[0] - taylor) < 1e-15
    assert abs(z[0] - np.exp(0.1)) < 1e-7


def test_rollout_fixed_harmonic_oscillator():
    f = lambda z: np.array([z[1], -z[0]])
    times = np.linspace(0, 2 * np.pi, 1001)
    states = np.stack(rollout_fixed(f, np.array([1.0, 0.0]), times))
    np.testing.assert_allclose(states[-1], [1.0, 0.0], atol=1e-9)
    np.testing.assert_allclose(states[:, 0], np.cos(times), atol=1e-9)


def test_rollout_substeps_reduce_error():
    f = lambda z: np.array([z[1], -z[0]])
    times = np.linspace(0, 2 * np.pi, 11)
    err = [abs(np.stack(rollout_fixed(f, np.array([1.0, 0.0]), times, substeps=s))[-1, 0] - 1.0)
           for s in (1, 2, 4)]
    assert err[1] < err[0] / 8 and err[2] < err[1] / 8  # 4th order: ~16x per halving


def test_adaptive_exponential():
    traj = integrate_adaptive(lambda z: z, np.array([1.0]), 1.0,
                              t_eval=np.array([1.0]), tol=Tolerances(1e-7, 1e-9))
    assert abs(traj.states[-1, 0] - np.e) < 1e-6


def test_adaptive_dense_output():
    f = lambda z: np.array([z[1], -z[0]])
    t_eval = np.linspace(0, 10, 301)
    traj = integrate_adaptive(f, np.array([1.0, 0.0]), 10.0, t_eval=t_eval,
                              tol=Tolerances(1e-9, 1e-12))
    np.testing.assert_array_equal(traj.times, t_eval)
    np.testing.assert_allclose(traj.states[:, 0], np.cos(t_eval), atol=1e-7)
    np.testing.assert_allclose(traj.states[:, 1], -np.sin(t_eval), atol=1e-7)
    assert traj.n_accepted > 0


def test_adaptive_error_scales_with_rtol():
    f = lambda z: np.array([z[1], -z[0]])
    errs = []
    for rtol in (1e-5, 1e-8, 1e-11):
        traj = integrate_adaptive(f, np.array([1.0, 0.0]), 20.0, t_eval=np.array([20.0]),
                                  tol=Tolerances(rtol, rtol * 1e-2))
        errs.append(abs(traj.states[-1, 0] - np.cos(20.0)))
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] < 1e-9


def test_adaptive_matches_fixed_on_nonlinear_system():
    f = lambda z: np.array([z[1], -np.sin(z[0])])
    z0 = np.array([1.2, 0.3])
    fine = np.stack(rollout_fixed(f, z0, np.linspace(0, 3, 3001)))[-1]
    traj = integrate_adaptive(f, z0, 3.0, t_eval=np.array([3.0]), tol=Tolerances(1e-10, 1e-12))
    np.testing.assert_allclose(traj.states[-1], fine, atol=1e-8)


def test_adaptive_detects_blowup():
    # z' = z^2 from z=1 blows up at t=1; the step size must underflow.
    with pytest.raises(IntegrationError):
        integrate_adaptive(lambda z: z ** 2, np.array([1.0]), 1.5)


def test_adaptive_rejects_bad_t_eval():
    with pytest.raises(ValueError):
        integrate_adaptive(lambda z: z, np.array([1.0]), 1.0, t_eval=np.array([0.5, 2.0]))


def test_adaptive_requires_array_dynamics():
    with pytest.raises(TypeError):
        integrate_adaptive(lambda z: [float(z[0])], np.array([1.0]), 1.0)
