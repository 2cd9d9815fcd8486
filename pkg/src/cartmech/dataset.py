"""Ground-truth datasets: adaptive integration, chunking, persistence, CSV.

Trajectories are integrated in Hamiltonian form and stored as (x, xdot)
states, since learned models must never see momenta computed with the true
mass matrix.  Each trajectory draws from its own rng stream seeded by
(seed, index), so a dataset is reproducible independently of scheduling and
the first n trajectories of a larger pool form a nested subset.
"""
from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .dynamics import convert_flavor
from .errors import FormatError, IntegrationError
from .integrators import Tolerances, integrate_adaptive
from .states import LAGRANGIAN
from .systems import System, system_from_dict, system_to_dict

FORMAT_VERSION = 1
CHUNK_STATES = 5  # 4 steps per training chunk
TRAIN, TEST = "train", "test"


@dataclass(frozen=True)
class Dataset:
    """A stack of equal-length (times, states) rows plus its provenance."""

    system_spec: dict
    dt: float
    split: str
    seed: int
    tolerances: Tolerances
    times: np.ndarray   # (N, T)
    states: np.ndarray  # (N, T, 2dn) in (x, xdot) form

    def __len__(self) -> int:
        return self.states.shape[0]

    def subset(self, n: int) -> "Dataset":
        """First n rows; nested across sizes because rng streams are per-index."""
        if not 0 < n <= len(self):
            raise ValueError(f"subset size {n} outside 1..{len(self)}")
        return replace(self, times=self.times[:n], states=self.states[:n])

    def system(self) -> System:
        return system_from_dict(self.system_spec)


def _sample_trajectory(system: System, rng: np.random.Generator, steps: int,
                       tol: Tolerances, retries: int, log=None) -> np.ndarray:
    t_eval = system.dt * np.arange(steps + 1)
    ctx = system.context()
    for attempt in range(retries + 1):
        z0 = system.sample(rng)
        try:
            traj = integrate_adaptive(system.dynamics, z0, steps * system.dt,
                                      t_eval=t_eval, tol=tol)
        except IntegrationError as err:
            if log is not None:
                log(f"integration failed (attempt {attempt + 1}): {err}")
            if attempt == retries:
                raise
            continue
        return np.stack([convert_flavor(ctx, s, LAGRANGIAN) for s in traj.states])
    raise AssertionError("unreachable")


def generate_dataset(system: System, n_traj: int, steps: int = 100,
                     tolerances: Tolerances = Tolerances(1e-7, 1e-9), seed: int = 0,
                     split: str = TRAIN, workers: int = 1, retries: int = 3,
                     log=None) -> Dataset:
    """Integrate n_traj sampled initial conditions and package them.

    Train split: each trajectory contributes one uniformly chosen chunk of
    CHUNK_STATES consecutive states from its non-overlapping partition.
    Test split: full trajectories.
    """
    if split not in (TRAIN, TEST):
        raise ValueError(f"split must be {TRAIN!r} or {TEST!r}")
    if steps < CHUNK_STATES:
        raise ValueError(f"steps must be at least {CHUNK_STATES}")
    t_eval = system.dt * np.arange(steps + 1)
    n_chunks = steps // CHUNK_STATES

    def one(index: int) -> tuple[np.ndarray, np.ndarray]:
        rng = np.random.default_rng([seed, index])
        states = _sample_trajectory(system, rng, steps, tolerances, retries, log)
        if split == TEST:
            return t_eval, states
        c = int(rng.integers(n_chunks))
        sl = slice(c * CHUNK_STATES, (c + 1) * CHUNK_STATES)
        return t_eval[sl], states[sl]

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(one, range(n_traj)))
    else:
        rows = [one(i) for i in range(n_traj)]
    times = np.stack([r[0] for r in rows])
    states = np.stack([r[1] for r in rows])
    return Dataset(system_to_dict(system), system.dt, split, seed, tolerances,
                   times, states)


# -- persistence (JSON manifest + raw little-endian payload) --------------------------

def save_dataset(dataset: Dataset, directory) -> None:
    os.makedirs(directory, exist_ok=True)
    manifest = {
        "format_version": FORMAT_VERSION,
        "system": dataset.system_spec,
        "dt": dataset.dt,
        "split": dataset.split,
        "seed": dataset.seed,
        "tolerances": {"rtol": dataset.tolerances.rtol, "atol": dataset.tolerances.atol},
        "times_shape": list(dataset.times.shape),
        "states_shape": list(dataset.states.shape),
        "dtype": "<f8",
        "order": "C",
    }
    with open(os.path.join(directory, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(directory, "payload.bin"), "wb") as fh:
        fh.write(np.ascontiguousarray(dataset.times, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(dataset.states, dtype="<f8").tobytes())


def load_dataset(directory) -> Dataset:
    path = os.path.join(directory, "manifest.json")
    with open(path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: format version {version!r}, expected {FORMAT_VERSION}")
    t_shape = tuple(manifest["times_shape"])
    s_shape = tuple(manifest["states_shape"])
    expected = 8 * (int(np.prod(t_shape)) + int(np.prod(s_shape)))
    with open(os.path.join(directory, "payload.bin"), "rb") as fh:
        raw = fh.read()
    if len(raw) != expected:
        raise FormatError(f"{directory}: payload has {len(raw)} bytes, expected {expected}")
    n_t = int(np.prod(t_shape))
    times = np.frombuffer(raw[:8 * n_t], dtype="<f8").reshape(t_shape)
    states = np.frombuffer(raw[8 * n_t:], dtype="<f8").reshape(s_shape)
    tol = Tolerances(manifest["tolerances"]["rtol"], manifest["tolerances"]["atol"])
    return Dataset(manifest["system"], float(manifest["dt"]), manifest["split"],
                   int(manifest["seed"]), tol, times, states)


# -- CSV export -----------------------------------------------------------------------

def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def trajectory_columns(dim: int, n_points: int) -> list[str]:
    """Flat state column names in point-major order: x_<coord>_<point>."""
    cols = [f"x_{c}_{p}" for p in range(n_points) for c in range(dim)]
    cols += [f"v_{c}_{p}" for p in range(n_points) for c in range(dim)]
    return cols


def export_trajectory_csv(path, times: np.ndarray, states: np.ndarray, dim: int) -> None:
    """One row per time sample: t, then the flat (x, v) state."""
    times = np.asarray(times, dtype=float)
    states = np.atleast_2d(np.asarray(states, dtype=float))
    n_points = states.shape[1] // (2 * dim)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("t," + ",".join(trajectory_columns(dim, n_points)) + "\n")
        for t, row in zip(times, states):
            fh.write(_fmt(t) + "," + ",".join(_fmt(v) for v in row) + "\n")


def export_metrics_csv(path, times: np.ndarray, rel_err: np.ndarray,
                       energy_err: np.ndarray, phi_rmse: np.ndarray) -> None:
    """Per-time metric curves plus a geometric-mean summary footer."""
    from .metrics import geometric_mean

    times = np.asarray(times, dtype=float)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("t,rel_err,energy_err,phi_rmse\n")
        for t, r, e, p in zip(times, rel_err, energy_err, phi_rmse):
            fh.write(",".join(map(_fmt, (t, r, e, p))) + "\n")
        fh.write("geometric_mean," + ",".join(
            _fmt(geometric_mean(np.asarray(c, dtype=float), times))
            for c in (rel_err, energy_err, phi_rmse)) + "\n")
