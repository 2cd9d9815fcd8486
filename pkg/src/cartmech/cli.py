"""Command-line front end.

Subcommands: generate, simulate, train, evaluate, ablate-constraints, export,
print-config.  Experiments are driven by a single JSON config with sections
system/data/model/train/eval; every value has an explicit default and unknown
keys are rejected with their dotted path.  Exit codes: 0 success, 1 user
error, 2 numeric failure.
"""
from __future__ import annotations

import argparse
import copy
import json
import os
import sys
from dataclasses import asdict, fields

import numpy as np

from . import autodiff as ad
from .dataset import (
    export_metrics_csv,
    export_trajectory_csv,
    generate_dataset,
    load_dataset,
    save_dataset,
)
from .dynamics import convert_flavor
from .errors import (
    DegenerateConfigurationError,
    FormatError,
    IntegrationError,
    SchemaError,
    TrainingError,
)
from .integrators import Tolerances, integrate_adaptive
from .metrics import constraint_rmse_curve, energy_error, evaluate_model
from .models import MODEL_KINDS, build_model
from .states import LAGRANGIAN
from .systems import (
    SYSTEM_BUILDERS,
    build_system,
    disable_system_constraints,
    system_names,
)
from .training import TrainConfig, train, write_history

DEFAULT_CONFIG = {
    "system": {"kind": "npendulum"},
    "data": {"n_traj": 200, "steps": 100, "dt": 0.03, "rtol": 1e-7, "atol": 1e-9,
             "seed": 0, "workers": 1},
    "model": {"kind": "chnn", "hidden": [256, 256, 256]},
    "train": {"epochs": 2000, "batch_size": 200, "lr": 3e-3, "weight_decay": 1e-4,
              "substeps": 1, "seed": 0, "checkpoint_every": 0, "max_bad_steps": 10},
    "eval": {"horizon": 3.0, "n_test": 20, "seed": 1000000},
}

_TRAIN_KEYS = {f.name for f in fields(TrainConfig)}


# -- config handling ------------------------------------------------------------------

def _check_value(path: str, value, default) -> None:
    if isinstance(default, bool) or isinstance(value, bool):
        raise SchemaError(f"{path}: booleans are not used in this schema")
    if isinstance(default, int) and not isinstance(value, int):
        raise SchemaError(f"{path}: expected an integer, got {value!r}")
    if isinstance(default, float) and not isinstance(value, (int, float)):
        raise SchemaError(f"{path}: expected a number, got {value!r}")
    if isinstance(default, str) and not isinstance(value, str):
        raise SchemaError(f"{path}: expected a string, got {value!r}")
    if isinstance(default, list):
        if not isinstance(value, list) or not all(isinstance(v, int) for v in value):
            raise SchemaError(f"{path}: expected a list of integers, got {value!r}")


def _resolve_system(doc: dict) -> dict:
    if not isinstance(doc, dict):
        raise SchemaError("system: expected an object")
    doc = dict(doc)
    kind = doc.pop("kind", DEFAULT_CONFIG["system"]["kind"])
    if kind not in SYSTEM_BUILDERS:
        raise SchemaError(f"system.kind: unknown system {kind!r}; choose from {system_names()}")
    cfg_cls = SYSTEM_BUILDERS[kind][0]
    known = {f.name for f in fields(cfg_cls)} - {"dt"}
    for key in doc:
        if key == "dt":
            raise SchemaError("system.dt: the time step belongs under data.dt")
        if key not in known:
            raise SchemaError(f"system.{key}: unknown parameter for {kind!r}")
    # build once so parameter domains are enforced, then re-serialize with
    # every default made explicit
    resolved = asdict(cfg_cls(**doc))
    resolved.pop("dt")
    out = {"kind": kind}
    out.update({k: _jsonable(v) for k, v in sorted(resolved.items())})
    return out


def _jsonable(value):
    if isinstance(value, tuple):
        return [_jsonable(v) for v in value]
    return value


def resolve_config(doc: dict | None) -> dict:
    """Validate a partial config against the schema and fill in all defaults."""
    doc = {} if doc is None else doc
    if not isinstance(doc, dict):
        raise SchemaError("config root must be a JSON object")
    for section in doc:
        if section not in DEFAULT_CONFIG:
            raise SchemaError(f"unknown config section {section!r}")
    merged = copy.deepcopy(DEFAULT_CONFIG)
    for section, defaults in DEFAULT_CONFIG.items():
        if section == "system":
            continue
        content = doc.get(section, {})
        if not isinstance(content, dict):
            raise SchemaError(f"{section}: expected an object")
        for key, value in content.items():
            if key not in defaults:
                raise SchemaError(f"unknown key {section}.{key}")
            _check_value(f"{section}.{key}", value, defaults[key])
            merged[section][key] = value
    merged["system"] = _resolve_system(doc.get("system", {}))
    if merged["model"]["kind"] not in MODEL_KINDS:
        raise SchemaError(
            f"model.kind: unknown model {merged['model']['kind']!r}; choose from {MODEL_KINDS}")
    return merged


def _apply_overrides(doc: dict, overrides) -> dict:
    for item in overrides or ():
        if "=" not in item:
            raise SchemaError(f"--set needs key.path=value, got {item!r}")
        path, raw = item.split("=", 1)
        keys = path.strip().split(".")
        if len(keys) < 2:
            raise SchemaError(f"--set path must be section.key, got {path!r}")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = doc
        for key in keys[:-1]:
            node = node.setdefault(key, {})
            if not isinstance(node, dict):
                raise SchemaError(f"--set {path}: {key} is not an object")
        node[keys[-1]] = value
    return doc


def load_config(args) -> dict:
    doc = {}
    path = getattr(args, "config", None)
    if path:
        with open(path, "r", encoding="utf-8") as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as err:
                raise SchemaError(f"{path}: invalid JSON ({err})") from None
    _apply_overrides(doc, getattr(args, "set", None))
    return resolve_config(doc)


def _workers(requested: int) -> int:
    cap = os.environ.get("CARTMECH_THREADS")
    if cap:
        try:
            return max(1, min(int(requested), int(cap)))
        except ValueError:
            raise SchemaError(f"CARTMECH_THREADS={cap!r} is not an integer") from None
    return int(requested)


def _system_from_config(cfg: dict):
    params = dict(cfg["system"])
    kind = params.pop("kind")
    return build_system(kind, dt=cfg["data"]["dt"], **params)


def _tolerances(cfg: dict) -> Tolerances:
    return Tolerances(cfg["data"]["rtol"], cfg["data"]["atol"])


def _model_from_config(cfg: dict, system):
    return build_model(cfg["model"]["kind"], system, hidden=tuple(cfg["model"]["hidden"]))


def _train_config(cfg: dict) -> TrainConfig:
    return TrainConfig(**{k: v for k, v in cfg["train"].items() if k in _TRAIN_KEYS})


# -- subcommands ----------------------------------------------------------------------

def cmd_print_config(args) -> int:
    print(json.dumps(load_config(args), indent=2, sort_keys=True))
    return 0


def cmd_generate(args) -> int:
    cfg = load_config(args)
    system = _system_from_config(cfg)
    tol = _tolerances(cfg)
    workers = _workers(cfg["data"]["workers"])
    train_ds = generate_dataset(system, cfg["data"]["n_traj"], steps=cfg["data"]["steps"],
                                tolerances=tol, seed=cfg["data"]["seed"], split="train",
                                workers=workers, log=_log)
    test_ds = generate_dataset(system, cfg["eval"]["n_test"], steps=cfg["data"]["steps"],
                               tolerances=tol, seed=cfg["eval"]["seed"], split="test",
                               workers=workers, log=_log)
    save_dataset(train_ds, os.path.join(args.out, "train"))
    save_dataset(test_ds, os.path.join(args.out, "test"))
    print(f"train_chunks {len(train_ds)}")
    print(f"test_trajectories {len(test_ds)}")
    return 0


def cmd_simulate(args) -> int:
    params = {"n": args.n} if args.n is not None else {}
    system = build_system(args.system, dt=args.dt, **params)
    steps = int(round(args.T / system.dt))
    if steps < 1:
        raise SchemaError("--T must cover at least one step")
    t_eval = system.dt * np.arange(steps + 1)
    rng = np.random.default_rng(args.seed)
    z0 = system.sample(rng)
    ctx = system.context()
    traj = integrate_adaptive(system.dynamics, z0, steps * system.dt, t_eval=t_eval,
                              tol=Tolerances(args.rtol, args.atol))
    truth = np.stack([convert_flavor(ctx, s, LAGRANGIAN) for s in traj.states])
    if args.checkpoint:
        store = ad.load_checkpoint(args.checkpoint)
        model = build_model(args.model, system, hidden=tuple(args.hidden))
        states = model.rollout(store, truth[0], t_eval)[0]
    else:
        states = truth
    if args.out:
        export_trajectory_csv(args.out, t_eval, states, system.topology.dim)
    e_drift = energy_error(system, states, np.broadcast_to(truth[0], states.shape))
    phi_curve = constraint_rmse_curve(system, states)
    print(f"steps {steps}")
    print(f"max_rel_energy_error {np.max(e_drift):.17g}")
    print(f"max_phi_rmse {np.max(phi_curve):.17g}")
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args)
    ds = load_dataset(args.data)
    system = ds.system()
    model = _model_from_config(cfg, system)
    os.makedirs(args.out, exist_ok=True)
    result = train(model, ds.states, _train_config(cfg), checkpoint_dir=args.out, log=_log)
    write_history(result.history, os.path.join(args.out, "history.csv"))
    print(f"final_loss {result.history[-1, 1]:.17g}")
    print(f"bad_steps {result.bad_steps}")
    return 0


def _run_evaluation(cfg: dict, model, store, dataset, out_path) -> None:
    result = evaluate_model(model, store, dataset, horizon=cfg["eval"]["horizon"])
    if out_path:
        export_metrics_csv(out_path, result.times, result.rel_err, result.energy_err,
                           result.phi_rmse)
    print(f"gm_rel_err {result.gm_rel_err:.17g}")
    print(f"gm_energy_err {result.gm_energy_err:.17g}")
    print(f"gm_phi_rmse {result.gm_phi_rmse:.17g}")


def cmd_evaluate(args) -> int:
    cfg = load_config(args)
    ds = load_dataset(args.dataset)
    model = _model_from_config(cfg, ds.system())
    store = ad.load_checkpoint(args.checkpoint)
    _run_evaluation(cfg, model, store, ds, args.out)
    return 0


def cmd_ablate(args) -> int:
    cfg = load_config(args)
    if cfg["model"]["kind"] not in ("chnn", "clnn"):
        raise SchemaError("model.kind: constraint ablation needs a constrained model "
                          "(chnn or clnn)")
    train_ds = load_dataset(args.data)
    test_ds = load_dataset(args.test)
    try:
        indices = [int(tok) for tok in args.disable.split(",") if tok.strip() != ""]
    except ValueError:
        raise SchemaError(f"--disable wants comma-separated indices, got {args.disable!r}") from None
    system = disable_system_constraints(train_ds.system(), indices)
    model = _model_from_config(cfg, system)
    result = train(model, train_ds.states, _train_config(cfg), log=_log)
    if args.checkpoint_out:
        ad.save_checkpoint(result.store, args.checkpoint_out)
    print(f"disabled_constraints {sorted(system.topology.disabled)}")
    # metrics run against the full system so the missing constraint shows up
    # as violation, not as a smaller phi vector
    _run_evaluation(cfg, model, result.store, test_ds, args.out)
    return 0


def cmd_export(args) -> int:
    ds = load_dataset(args.dataset)
    if not 0 <= args.index < len(ds):
        raise SchemaError(f"--index {args.index} outside 0..{len(ds) - 1}")
    export_trajectory_csv(args.out, ds.times[args.index], ds.states[args.index],
                          ds.system().topology.dim)
    print(f"rows {ds.times.shape[1]}")
    return 0


# -- wiring ---------------------------------------------------------------------------

def _log(message: str) -> None:
    print(message, file=sys.stderr)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        # argparse exits with status 2; here 2 means a numeric failure, so
        # remap argument problems to the user-error path
        raise SchemaError(message)


def _add_config_args(p) -> None:
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--set", action="append", metavar="KEY.PATH=VALUE",
                   help="override a config entry (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cartmech",
                     description="Constrained-mechanics simulation and learning toolkit.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser("generate", help="integrate ground truth and write datasets")
    _add_config_args(p)
    p.add_argument("--out", required=True, help="output directory (train/ and test/)")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("simulate", help="roll out ground truth or a checkpointed model")
    p.add_argument("--system", required=True, choices=system_names())
    p.add_argument("--n", type=int, help="chain length for pendulum systems")
    p.add_argument("--T", type=float, default=3.0, help="horizon in seconds")
    p.add_argument("--dt", type=float, default=0.03)
    p.add_argument("--rtol", type=float, default=1e-7)
    p.add_argument("--atol", type=float, default=1e-9)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="trajectory CSV path")
    p.add_argument("--checkpoint", help="roll a trained model instead of ground truth")
    p.add_argument("--model", choices=MODEL_KINDS, default="chnn")
    p.add_argument("--hidden", type=int, nargs="+", default=[256, 256, 256])
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="train a model on a generated dataset")
    _add_config_args(p)
    p.add_argument("--data", required=True, help="train dataset directory")
    p.add_argument("--out", required=True, help="output directory (checkpoint, history)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a checkpoint on a test dataset")
    _add_config_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True, help="test dataset directory")
    p.add_argument("--out", help="metrics CSV path")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate-constraints",
                       help="retrain with constraints disabled and evaluate")
    _add_config_args(p)
    p.add_argument("--data", required=True, help="train dataset directory")
    p.add_argument("--test", required=True, help="test dataset directory")
    p.add_argument("--disable", required=True, help="comma-separated constraint indices")
    p.add_argument("--out", help="metrics CSV path")
    p.add_argument("--checkpoint-out", help="where to save the ablated checkpoint")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("export", help="write one stored trajectory as CSV")
    p.add_argument("--dataset", required=True)
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("print-config", help="print the fully resolved configuration")
    _add_config_args(p)
    p.set_defaults(func=cmd_print_config)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except (IntegrationError, DegenerateConfigurationError, TrainingError,
            FloatingPointError, np.linalg.LinAlgError) as err:
        print(f"numeric failure: {err}", file=sys.stderr)
        return 2
    except (SchemaError, FormatError, ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
