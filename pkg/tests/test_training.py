from types import SimpleNamespace

import numpy as np
import pytest

import cartmech.autodiff as ad
from cartmech.bodies import BodySpec, assemble_mass_matrix
from cartmech.dynamics import ZeroPotential, convert_flavor
from cartmech.errors import ParameterDomainError, TrainingError
from cartmech.integrators import Tolerances, integrate_adaptive
from cartmech.models import build_model
from cartmech.states import LAGRANGIAN
from cartmech.systems import System
from cartmech.topology import SystemTopology
from cartmech.training import (
    AdamW,
    TrainConfig,
    cosine_lr,
    train,
    trajectory_loss,
    trajectory_loss_node,
    write_history,
    read_history,
)
from test_models import linear_potential, true_mass_store

DT = 0.03


def free_particle_system(dim=1):
    """Unconstrained point mass: zdot = (v, 0) in both flavors."""
    topo = SystemTopology(dim=dim, bodies=[BodySpec.point(1.0)], constraints=[], anchors=[])
    return System("free", SimpleNamespace(dt=DT), topo,
                  assemble_mass_matrix(topo.bodies), ZeroPotential())


def free_particle_chunks(rng, count, steps=4):
    x0 = rng.uniform(-1.0, 1.0, count)
    v0 = rng.uniform(-1.0, 1.0, count)
    t = DT * np.arange(steps + 1)
    x = x0[:, None] + v0[:, None] * t[None, :]
    v = np.broadcast_to(v0[:, None], x.shape)
    return np.stack([x, v], axis=2)  # (count, steps+1, 2)


def exact_pendulum_setup(n=2, seed=0):
    from cartmech.systems import build_system

    system = build_system("npendulum", n=n)
    model = build_model("chnn", system, hidden=(8,), potential=linear_potential(system))
    store = true_mass_store(model, system, seed=seed)
    return system, model, store


def test_perfect_model_has_zero_loss():
    system, model, store = exact_pendulum_setup()
    rng = np.random.default_rng(1)
    Z = system.sample(rng, 4)
    ctx = system.context()
    W0 = np.stack([convert_flavor(ctx, z, LAGRANGIAN) for z in Z])
    chunks = model.rollout(store, W0, DT * np.arange(5))
    assert trajectory_loss(model, store, chunks) == 0.0


def test_exact_model_loss_vs_adaptive_truth_is_step_error_only():
    system, model, store = exact_pendulum_setup()
    rng = np.random.default_rng(2)
    Z = system.sample(rng, 4)
    ctx = system.context()
    chunks = []
    for z in Z:
        traj = integrate_adaptive(system.dynamics, z, 4 * DT, t_eval=DT * np.arange(5),
                                  tol=Tolerances(1e-10, 1e-12))
        chunks.append(np.stack([convert_flavor(ctx, s, LAGRANGIAN) for s in traj.states]))
    loss = trajectory_loss(model, store, np.stack(chunks))
    assert 0.0 < loss < 1e-6


def test_constant_model_loss_is_mean_l1_displacement():
    class Still:
        def __init__(self, system):
            self.system = system

        def encode(self, xv):
            return xv

        def to_state_node(self, leaves, raw):
            return raw

        def decode_node(self, leaves, w):
            return w

        def dynamics_node(self, leaves, w):
            return ad.mul(w, 0.0)

    rng = np.random.default_rng(3)
    chunks = free_particle_chunks(rng, 6, steps=3)
    model = Still(free_particle_system())
    expected = np.mean([np.sum(np.abs(chunks[:, t] - chunks[:, 0])) for t in (1, 2, 3)]) / 6
    tape = ad.Tape()
    loss = trajectory_loss_node(model, {"unused": tape.constant(0.0)}, chunks)
    np.testing.assert_allclose(float(loss.value), expected, atol=1e-14)


def test_loss_gradient_matches_finite_differences():
    system = free_particle_system()
    model = build_model("node", system, hidden=(8,))
    store = model.init_params(np.random.default_rng(4))
    chunks = free_particle_chunks(np.random.default_rng(5), 3, steps=1)
    names = store.names()
    tape = ad.Tape()
    leaves = store.leaves(tape)
    loss = trajectory_loss_node(model, leaves, chunks)
    grads = ad.grad(loss, [leaves[n] for n in names])
    for name, g in zip(names, grads):
        def f(val, name=name):
            old = store[name].copy()
            store[name] = val
            out = trajectory_loss(model, store, chunks)
            store[name] = old
            return out

        err = ad.finite_difference_check(f, lambda _: g.value, store[name], h=1e-6)
        assert err < 1e-4, (name, err)


def test_loss_is_exactly_batch_permutation_invariant():
    system, model, store = exact_pendulum_setup()
    rng = np.random.default_rng(6)
    Z = system.sample(rng, 16)
    ctx = system.context()
    W0 = np.stack([convert_flavor(ctx, z, LAGRANGIAN) for z in Z])
    chunks = model.rollout(store, W0, DT * np.arange(5))
    chunks += rng.normal(0.0, 0.01, chunks.shape)
    base = trajectory_loss(model, store, chunks)
    for seed in range(3):
        perm = np.random.default_rng(seed).permutation(len(chunks))
        assert trajectory_loss(model, store, chunks[perm]) == base


def test_cosine_schedule_endpoints():
    cfg = TrainConfig(epochs=100, lr=3e-3)
    assert cosine_lr(0, cfg) == 3e-3
    assert abs(cosine_lr(100, cfg)) < 1e-18
    assert cosine_lr(50, cfg) == pytest.approx(1.5e-3)


def test_adamw_zero_gradient_zero_decay_is_identity():
    store = ad.ParamStore({"w": np.array([1.0, -2.0])})
    opt = AdamW(store, weight_decay=0.0)
    opt.step(store, {"w": np.zeros(2)}, 0.1)
    np.testing.assert_array_equal(store["w"], [1.0, -2.0])


def test_adamw_quadratic_bowl_monotone_descent():
    store = ad.ParamStore({"w": np.array([3.0, -4.0])})
    opt = AdamW(store, weight_decay=0.0)
    cfg = TrainConfig(epochs=200, lr=0.05, weight_decay=0.0)
    losses = []
    for step in range(200):
        losses.append(float(store["w"] @ store["w"]))
        opt.step(store, {"w": 2.0 * store["w"]}, cosine_lr(step, cfg))
    assert np.all(np.diff(losses) <= 1e-12)
    assert losses[-1] < losses[0] / 50.0


def test_adamw_decoupled_weight_decay_shrinks_params():
    store = ad.ParamStore({"w": np.array([2.0])})
    opt = AdamW(store, weight_decay=0.5)
    opt.step(store, {"w": np.zeros(1)}, 0.1)
    np.testing.assert_allclose(store["w"], [2.0 * (1.0 - 0.1 * 0.5)], atol=1e-15)


def test_train_free_particle_node_converges():
    system = free_particle_system()
    model = build_model("node", system, hidden=(32,))
    chunks = free_particle_chunks(np.random.default_rng(7), 64)
    cfg = TrainConfig(epochs=50, batch_size=32, lr=1e-2, weight_decay=0.0, seed=0)
    result = train(model, chunks, cfg)
    assert result.history.shape == (50, 3)
    assert result.history[-1, 1] < 1e-3
    assert result.bad_steps == 0


def test_train_is_deterministic_per_seed(tmp_path):
    system = free_particle_system()
    chunks = free_particle_chunks(np.random.default_rng(8), 16)
    cfg = TrainConfig(epochs=5, batch_size=8, lr=1e-2, seed=3)
    runs = []
    for _ in range(2):
        model = build_model("node", system, hidden=(8,))
        runs.append(train(model, chunks, cfg))
    assert np.array_equal(runs[0].history, runs[1].history)
    for name in runs[0].store.names():
        assert np.array_equal(runs[0].store[name], runs[1].store[name])
    path = tmp_path / "history.csv"
    write_history(runs[0].history, path)
    again = read_history(path)
    np.testing.assert_allclose(again, runs[0].history, rtol=0, atol=0)


def test_train_aborts_after_consecutive_bad_steps():
    class Exploding:
        def __init__(self, system):
            self.system = system

        def init_params(self, rng):
            return ad.ParamStore({"w": np.zeros(1)})

        def encode(self, xv):
            return xv

        def to_state_node(self, leaves, raw):
            return raw

        def decode_node(self, leaves, w):
            return ad.add(ad.mul(w, np.inf), ad.mul(leaves["w"], 0.0))

        def dynamics_node(self, leaves, w):
            return ad.mul(w, 0.0)

    chunks = free_particle_chunks(np.random.default_rng(9), 8, steps=1)
    messages = []
    with pytest.raises(TrainingError):
        train(Exploding(free_particle_system()), chunks,
              TrainConfig(epochs=50, batch_size=2, lr=1e-3, max_bad_steps=10),
              log=messages.append)
    assert sum("non-finite" in m for m in messages) == 10


def test_train_config_validation():
    with pytest.raises(ParameterDomainError):
        TrainConfig(epochs=0)
    with pytest.raises(ParameterDomainError):
        TrainConfig(lr=-1.0)
    with pytest.raises(ParameterDomainError):
        TrainConfig(weight_decay=-0.1)


def test_checkpoints_written_at_cadence(tmp_path):
    system = free_particle_system()
    model = build_model("node", system, hidden=(4,))
    chunks = free_particle_chunks(np.random.default_rng(10), 8)
    cfg = TrainConfig(epochs=4, batch_size=8, lr=1e-3, checkpoint_every=2, seed=0)
    result = train(model, chunks, cfg, checkpoint_dir=tmp_path)
    names = sorted(p.name for p in tmp_path.iterdir())
    assert names == ["epoch_00002.cmk", "epoch_00004.cmk", "final.cmk"]
    final = ad.load_checkpoint(tmp_path / "final.cmk")
    for name in result.store.names():
        np.testing.assert_array_equal(final[name], result.store[name])
