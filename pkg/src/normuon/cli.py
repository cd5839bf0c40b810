"""Command-line interface.

Subcommands: run, distsim, analyze, audit, compare, steps-to-loss.
Configs are TOML (a manifest's echoed config re-runs identically);
`--set section.key=value` overrides individual entries. Exit codes:
0 success, 2 usage or config error, 3 divergence, 4 comparison failure.
"""

import argparse
import csv
import hashlib
import json
import math
import sys
import time
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

import numpy as np

from . import diagnostics, distsim, trainer
from .errors import (
    ComparisonError,
    ConfigError,
    DivergenceError,
    DomainError,
    NumericError,
    ShapeError,
)
from .matrix_core import load_matrix, save_matrix
from .optimizers import OPTIMIZER_NAMES, default_config, state_memory_audit
from .orthogonalize import NsConfig
from .rng import make_generator

_INT, _FLOAT, _BOOL, _STR, _INT_LIST = "int", "float", "bool", "str", "int_list"

_SCHEMA = {
    "task": {
        "kind": _STR, "input_dim": _INT, "output_dim": _INT,
        "sample_count": _INT, "noise_std": _FLOAT,
    },
    "model": {"hidden_dims": _INT_LIST, "activation": _STR},
    "optimizer": {
        "name": _STR, "lr": _FLOAT, "beta1": _FLOAT, "beta2": _FLOAT,
        "eps": _FLOAT, "weight_decay": _FLOAT, "rms_scale": _FLOAT,
        "momentum_style": _STR, "rms_match": _BOOL, "bias_correction": _BOOL,
        "ns_iterations": _INT, "ns_coeff_a": _FLOAT, "ns_coeff_b": _FLOAT,
        "ns_coeff_c": _FLOAT, "ns_zero_guard": _FLOAT,
        "aux_lr_scale": _FLOAT, "decay_hidden_only": _BOOL,
    },
    "schedule": {"kind": _STR, "warmup_steps": _INT, "decay_start_frac": _FLOAT},
    "run": {
        "steps": _INT, "seed": _INT, "generator": _STR, "batch_size": _INT,
        "probe_param": _STR, "probe_stride": _INT, "out_dir": _STR,
    },
    "distsim": {
        "world_size": _INT, "rms_mode": _STR, "elem_bytes_param": _INT,
        "elem_bytes_grad": _INT, "elem_bytes_collective": _INT,
    },
}

_REQUIRED = {
    "task": ("kind", "input_dim", "output_dim", "sample_count"),
    "model": ("hidden_dims",),
    "optimizer": ("name", "lr"),
    "run": ("steps", "seed"),
}


def _check_type(path: str, value, expected: str) -> None:
    ok = {
        _INT: lambda v: isinstance(v, int) and not isinstance(v, bool),
        _FLOAT: lambda v: isinstance(v, (int, float)) and not isinstance(v, bool),
        _BOOL: lambda v: isinstance(v, bool),
        _STR: lambda v: isinstance(v, str),
        _INT_LIST: lambda v: isinstance(v, list)
        and all(isinstance(x, int) and not isinstance(x, bool) for x in v),
    }[expected](value)
    if not ok:
        raise ConfigError(f"{path}: expected {expected}, got {value!r}")


class ExperimentConfig:
    """Validated experiment description; unknown sections or keys are errors."""

    def __init__(self, data: dict):
        self.data = data
        self._validate()

    def _validate(self) -> None:
        for section, body in self.data.items():
            if section not in _SCHEMA:
                raise ConfigError(f"{section}: unknown section")
            if not isinstance(body, dict):
                raise ConfigError(f"{section}: expected a table")
            for key, value in body.items():
                if key not in _SCHEMA[section]:
                    raise ConfigError(f"{section}.{key}: unknown key")
                _check_type(f"{section}.{key}", value, _SCHEMA[section][key])
        for section, keys in _REQUIRED.items():
            if section not in self.data:
                raise ConfigError(f"{section}: missing required section")
            for key in keys:
                if key not in self.data[section]:
                    raise ConfigError(f"{section}.{key}: missing required key")
        name = self.data["optimizer"]["name"]
        if name not in OPTIMIZER_NAMES:
            raise ConfigError(
                f"optimizer.name: unknown optimizer {name!r} "
                f"(known: {', '.join(OPTIMIZER_NAMES)})")

    @classmethod
    def load(cls, path, overrides=()) -> "ExperimentConfig":
        path = Path(path)
        if path.suffix == ".json":
            raw = json.loads(path.read_text())
            if "config" in raw and "status" in raw:  # a manifest echo
                raw = raw["config"]
        else:
            with open(path, "rb") as fh:
                raw = tomllib.load(fh)
        for item in overrides:
            _apply_override(raw, item)
        return cls(raw)

    def get(self, section: str, key: str, default=None):
        return self.data.get(section, {}).get(key, default)

    def task(self) -> trainer.SyntheticTask:
        t = self.data["task"]
        return trainer.SyntheticTask(
            kind=t["kind"], input_dim=t["input_dim"], output_dim=t["output_dim"],
            sample_count=t["sample_count"], noise_std=float(t.get("noise_std", 0.0)),
            seed=self.data["run"]["seed"])

    def build_model(self) -> trainer.MlpModel:
        t = self.data["task"]
        dims = [t["input_dim"]] + list(self.data["model"]["hidden_dims"]) + [t["output_dim"]]
        activation = self.get("model", "activation", "tanh")
        from .rng import derive_seed

        return trainer.MlpModel.build(dims, activation,
                                      derive_seed(self.data["run"]["seed"], "init"))

    def optimizer_config(self) -> tuple:
        """(optimizer name, OptimizerConfig, aux_lr_scale, decay_hidden_only)."""
        o = self.data["optimizer"]
        overrides = {}
        for key in ("beta1", "beta2", "eps", "weight_decay", "rms_scale",
                    "momentum_style", "rms_match", "bias_correction"):
            if key in o:
                overrides[key] = float(o[key]) if _SCHEMA["optimizer"][key] == _FLOAT else o[key]
        ns_map = {"ns_iterations": "iterations", "ns_coeff_a": "coeff_a",
                  "ns_coeff_b": "coeff_b", "ns_coeff_c": "coeff_c",
                  "ns_zero_guard": "zero_guard"}
        ns_kwargs = {dst: o[src] for src, dst in ns_map.items() if src in o}
        if ns_kwargs:
            overrides["ns"] = NsConfig(**ns_kwargs)
        cfg = default_config(o["name"], float(o["lr"]), **overrides)
        return (o["name"], cfg, float(o.get("aux_lr_scale", 1.0)),
                bool(o.get("decay_hidden_only", True)))

    def schedule(self) -> trainer.ScheduleSpec:
        s = self.data.get("schedule", {})
        return trainer.ScheduleSpec(
            kind=s.get("kind", "constant"),
            warmup_steps=s.get("warmup_steps", 0),
            decay_start_frac=float(s.get("decay_start_frac", 0.8)))

    def topology(self, world_override=None) -> distsim.Topology:
        d = dict(self.data.get("distsim", {}))
        if world_override is not None:
            d["world_size"] = world_override
        return distsim.Topology(
            world_size=d.get("world_size", 1),
            elem_bytes_param=d.get("elem_bytes_param", 4),
            elem_bytes_grad=d.get("elem_bytes_grad", 4),
            elem_bytes_collective=d.get("elem_bytes_collective", 2))

    def fingerprint(self) -> str:
        ident = {
            "task": self.data["task"],
            "model": self.data["model"],
            "seed": self.data["run"]["seed"],
            "steps": self.data["run"]["steps"],
        }
        blob = json.dumps(ident, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def _apply_override(raw: dict, item: str) -> None:
    if "=" not in item:
        raise ConfigError(f"--set expects section.key=value, got {item!r}")
    key, _, value = item.partition("=")
    parts = key.strip().split(".")
    if len(parts) != 2:
        raise ConfigError(f"--set key must be section.key, got {key!r}")
    try:
        parsed = tomllib.loads(f"v = {value}")["v"]
    except tomllib.TOMLDecodeError:
        parsed = value  # bare string
    raw.setdefault(parts[0], {})[parts[1]] = parsed


def _write_json(path: Path, payload: dict) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    tmp.replace(path)


def _record_outputs(out: Path, record, cfg: ExperimentConfig) -> dict:
    files = {"run_csv": "run.csv", "step_reports_csv": "step_reports.csv"}
    trainer.write_run_csv(record, out / "run.csv")
    trainer.write_step_reports_csv(record, out / "step_reports.csv")
    if record.probe_rows:
        diagnostics.write_probe_csv(record.probe_rows, out / "probes.csv")
        diagnostics.write_spectra_csv(record.probe_rows, out / "spectra.csv")
        diagnostics.write_neuron_norms_csv(record.probe_rows, out / "neuron_norms.csv")
        files.update(probes_csv="probes.csv", spectra_csv="spectra.csv",
                     neuron_norms_csv="neuron_norms.csv")
    weights_dir = out / "weights"
    weights_dir.mkdir(exist_ok=True)
    for name, arr in record.final_params.items():
        save_matrix(weights_dir / f"{name}.nmk", arr)
    files["weights_dir"] = "weights"
    return files


def _start_manifest(out: Path, cfg: ExperimentConfig, kind: str) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    path = out / "manifest.json"
    _write_json(path, {"status": "incomplete", "kind": kind, "config": cfg.data})
    return path


def cmd_run(args) -> int:
    cfg = ExperimentConfig.load(args.config, args.set or ())
    out = Path(args.out or cfg.get("run", "out_dir") or "")
    if not str(out):
        raise ConfigError("run.out_dir: missing (or pass --out)")
    manifest_path = _start_manifest(out, cfg, "run")
    make_generator(cfg.get("run", "generator", "splitmix64"), 0)
    task = cfg.task()
    model = cfg.build_model()
    name, opt_cfg, aux_scale, decay_hidden = cfg.optimizer_config()
    record = trainer.train_loop(
        model, task, name, opt_cfg, cfg.data["run"]["steps"], cfg.schedule(),
        probe_param=cfg.get("run", "probe_param", ""),
        probe_stride=cfg.get("run", "probe_stride", 0),
        batch_size=cfg.get("run", "batch_size", 0),
        aux_lr_scale=aux_scale, decay_hidden_only=decay_hidden)
    files = _record_outputs(out, record, cfg)
    _write_json(manifest_path, {
        "status": "complete", "kind": "run", "config": cfg.data,
        "optimizer": name, "generator": cfg.get("run", "generator", "splitmix64"),
        "fingerprint": cfg.fingerprint(), "checksum": record.checksum,
        "total_steps": cfg.data["run"]["steps"], "files": files,
    })
    print(f"checksum {record.checksum}")
    print(f"final_train_loss {record.rows[-1].train_loss!r}")
    return 0


def cmd_distsim(args) -> int:
    cfg = ExperimentConfig.load(args.config, args.set or ())
    if args.world is not None:
        cfg.data.setdefault("distsim", {})["world_size"] = args.world
    if args.rms_mode is not None:
        cfg.data.setdefault("distsim", {})["rms_mode"] = args.rms_mode
    cfg = ExperimentConfig(cfg.data)
    topo = cfg.topology()
    rms_mode = cfg.get("distsim", "rms_mode", "global")
    out = Path(args.out or cfg.get("run", "out_dir") or "")
    if not str(out):
        raise ConfigError("run.out_dir: missing (or pass --out)")
    manifest_path = _start_manifest(out, cfg, "distsim")
    record, ledger = _sharded_train(cfg, topo, rms_mode)
    files = _record_outputs(out, record, cfg)
    _write_json(out / "comm_ledger.json", ledger.to_json())
    files["comm_ledger"] = "comm_ledger.json"
    _write_json(manifest_path, {
        "status": "complete", "kind": "distsim", "config": cfg.data,
        "optimizer": cfg.data["optimizer"]["name"],
        "generator": cfg.get("run", "generator", "splitmix64"),
        "fingerprint": cfg.fingerprint(), "checksum": record.checksum,
        "total_steps": cfg.data["run"]["steps"], "files": files,
        "world_size": topo.world_size, "rms_mode": rms_mode,
    })
    print(f"checksum {record.checksum}")
    return 0


def _sharded_train(cfg: ExperimentConfig, topo: distsim.Topology, rms_mode: str):
    """The distsim engine: global forward/backward, sharded optimizer."""
    if rms_mode not in distsim.RMS_MODES:
        raise ConfigError(f"distsim.rms_mode: must be one of {distsim.RMS_MODES}")
    task = cfg.task()
    model = cfg.build_model()
    name, opt_cfg, aux_scale, decay_hidden = cfg.optimizer_config()
    steps = cfg.data["run"]["steps"]
    schedule = cfg.schedule()
    x_train, y_train = trainer.gen_synthetic(task, "train")
    x_val, y_val = trainer.gen_synthetic(task, "val")
    batches = trainer.BatchStream(x_train, y_train,
                                  cfg.get("run", "batch_size", 0), task.seed)
    ledger = distsim.CommLedger(topo.world_size)
    params = []
    for pname, kind, arr in model.param_items():
        params.append(distsim.shard_rowwise(pname, arr, kind, topo.world_size, algo=name))
    distsim.assign_owners(params, topo.world_size)

    rows = []
    reports = []
    for step_index in range(steps):
        t0 = time.perf_counter_ns()
        step = step_index + 1
        x_batch, y_batch = batches.next()
        for sp in params:
            model.set_param(sp.param_id, distsim.gather_full(sp))
        loss, grads = trainer.forward_backward(model, x_batch, y_batch, task.loss_kind)
        if not math.isfinite(loss):
            raise DivergenceError(step)
        eff_lr = opt_cfg.lr * schedule.multiplier(step_index, steps)
        cfg_map = {
            sp.param_id: trainer.param_step_config(
                opt_cfg, name, sp.algo, sp.param_id, eff_lr, aux_scale, decay_hidden)
            for sp in params
        }
        grad_shards = {sp.param_id: distsim.shard_grad(grads[sp.param_id], sp)
                       for sp in params}
        distsim.charge_standard_step(params, topo, ledger)
        distsim.distributed_step(params, grad_shards, cfg_map, topo, rms_mode, ledger)
        for sp in params:
            model.set_param(sp.param_id, distsim.gather_full(sp))
        val_loss = trainer.evaluate(model, x_val, y_val, task.loss_kind)
        if not math.isfinite(val_loss):
            raise DivergenceError(step)
        wall = (time.perf_counter_ns() - t0) // 1000
        rows.append(trainer.RunRow(step, loss, val_loss, eff_lr, int(wall)))

    finals = {pname: arr.copy() for pname, _k, arr in model.param_items()}
    record = trainer.RunRecord(rows=rows, checksum=trainer.weights_checksum(model),
                               final_params=finals, step_reports=reports)
    return record, ledger


def cmd_analyze(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for item in args.inputs:
        path, _, label = item.partition(":")
        label = label or Path(path).stem
        mat = load_matrix(path)
        rows.append((0, label, diagnostics.geometry_report(mat, source_label=label)))
    diagnostics.write_probe_csv(rows, out / "probes.csv")
    diagnostics.write_spectra_csv(rows, out / "spectra.csv")
    diagnostics.write_neuron_norms_csv(rows, out / "neuron_norms.csv")
    for _step, label, rep in rows:
        print(f"{label}: cond {rep.condition_number:.4g} norm_cv {rep.norm_cv:.4g}")
    return 0


def cmd_audit(args) -> int:
    cfg = ExperimentConfig.load(args.config, args.set or ())
    topo = cfg.topology(world_override=args.world)
    model = cfg.build_model()
    specs = [(pname, arr.shape, kind) for pname, kind, arr in model.param_items()]
    memory = state_memory_audit(specs)
    name = cfg.data["optimizer"]["name"]
    algo = name if name in distsim.SHARDED_ALGOS else "normuon"
    params = [distsim.shard_rowwise(pname, arr, kind, topo.world_size, algo=algo)
              for pname, kind, arr in model.param_items()]
    distsim.assign_owners(params, topo.world_size)
    ledger = distsim.CommLedger(topo.world_size)
    zero_grads = {p.param_id: [np.zeros((hi - lo, p.shape[1])) for lo, hi in p.ranges]
                  for p in params}
    _, opt_cfg = cfg.optimizer_config()[:2]
    distsim.charge_standard_step(params, topo, ledger)
    distsim.distributed_step(params, zero_grads, opt_cfg, topo,
                             cfg.get("distsim", "rms_mode", "global"), ledger)
    total_elements = sum(arr.size for _n, _k, arr in model.param_items())
    comm = distsim.comm_audit(ledger, total_elements, topo)
    payload = {"memory": memory, "comm": comm}
    text = json.dumps(payload, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return 0


def _load_manifest(run_dir: Path) -> dict:
    path = run_dir / "manifest.json"
    if not path.exists():
        raise ComparisonError(f"{run_dir}: no manifest.json")
    manifest = json.loads(path.read_text())
    if manifest.get("status") != "complete":
        raise ComparisonError(f"{run_dir}: run is marked {manifest.get('status')!r}")
    return manifest


def cmd_compare(args) -> int:
    a_dir, b_dir = Path(args.a), Path(args.b)
    ma, mb = _load_manifest(a_dir), _load_manifest(b_dir)
    if ma["fingerprint"] != mb["fingerprint"]:
        raise ComparisonError("manifests describe different tasks or seeds")
    names_a = sorted(p.name for p in (a_dir / "weights").glob("*.nmk"))
    names_b = sorted(p.name for p in (b_dir / "weights").glob("*.nmk"))
    if names_a != names_b:
        raise ComparisonError(f"parameter sets differ: {names_a} vs {names_b}")
    tol = args.tol
    worst = 0.0
    for fname in names_a:
        wa = load_matrix(a_dir / "weights" / fname)
        wb = load_matrix(b_dir / "weights" / fname)
        if wa.shape != wb.shape:
            raise ComparisonError(f"{fname}: shapes differ {wa.shape} vs {wb.shape}")
        denom = np.maximum(1.0, np.maximum(np.abs(wa), np.abs(wb)))
        diff = float(np.max(np.abs(wa - wb) / denom))
        worst = max(worst, diff)
    exact = ma["checksum"] == mb["checksum"]
    print(f"max_rel_diff {worst!r} checksums_equal {exact}")
    if worst > tol:
        print(f"comparison FAILED: {worst!r} > {tol!r}", file=sys.stderr)
        return 4
    print("comparison OK")
    return 0


def _read_losses(run_dir: Path) -> list[float]:
    with open(run_dir / "run.csv", newline="") as fh:
        reader = csv.DictReader(fh)
        return [float(row["train_loss"]) for row in reader]


def _smooth(losses: list[float], window: int = 10) -> list[float]:
    out = []
    for i in range(len(losses)):
        lo = max(0, i + 1 - window)
        seg = losses[lo:i + 1]
        out.append(sum(seg) / len(seg))
    return out


def cmd_steps_to_loss(args) -> int:
    runs = []
    fingerprint = None
    for run_dir in map(Path, args.runs):
        manifest = _load_manifest(run_dir)
        if fingerprint is None:
            fingerprint = manifest["fingerprint"]
        elif manifest["fingerprint"] != fingerprint:
            raise ComparisonError(f"{run_dir}: manifest does not match the other runs")
        runs.append((manifest["optimizer"], run_dir, _smooth(_read_losses(run_dir))))
    ref = [r for r in runs if r[0] == args.ref]
    if len(ref) != 1:
        raise ComparisonError(
            f"expected exactly one run for reference optimizer {args.ref!r}, found {len(ref)}")
    target = ref[0][2][-1]
    out_rows = []
    for optimizer, run_dir, smoothed in runs:
        total = len(smoothed)
        reached = next((i + 1 for i, v in enumerate(smoothed) if v <= target), None)
        if reached is None:
            out_rows.append([optimizer, "", total, ""])
            print(f"{optimizer}: not reached (target {target!r})")
        else:
            gain = 100.0 * (1.0 - reached / total)
            out_rows.append([optimizer, reached, total, repr(gain)])
            print(f"{optimizer}: step {reached}/{total} gain {gain:.2f}%")
    if args.out:
        with open(args.out, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["optimizer", "reached_step", "total_steps", "gain_percent"])
            writer.writerows(out_rows)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="normuon",
        description="Train, shard-simulate, and analyze matrix-aware optimizers.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config(p):
        p.add_argument("--config", required=True, help="TOML config (or manifest.json)")
        p.add_argument("--set", action="append", metavar="SEC.KEY=VAL",
                       help="override a config entry")

    p_run = sub.add_parser("run", help="train on the configured task")
    add_config(p_run)
    p_run.add_argument("--out", help="output directory (overrides run.out_dir)")
    p_run.set_defaults(func=cmd_run)

    p_dist = sub.add_parser("distsim", help="train with row-sharded optimizer state")
    add_config(p_dist)
    p_dist.add_argument("--out", help="output directory (overrides run.out_dir)")
    p_dist.add_argument("--world", type=int, help="override distsim.world_size")
    p_dist.add_argument("--rms-mode", choices=distsim.RMS_MODES, dest="rms_mode")
    p_dist.set_defaults(func=cmd_distsim)

    p_an = sub.add_parser("analyze", help="geometry reports for saved matrices")
    p_an.add_argument("--in", dest="inputs", action="append", required=True,
                      metavar="PATH[:LABEL]")
    p_an.add_argument("--out", required=True, help="output directory")
    p_an.set_defaults(func=cmd_analyze)

    p_audit = sub.add_parser("audit", help="memory and communication accounting")
    add_config(p_audit)
    p_audit.add_argument("--world", type=int, help="override distsim.world_size")
    p_audit.add_argument("--out", help="also write the JSON report here")
    p_audit.set_defaults(func=cmd_audit)

    p_cmp = sub.add_parser("compare", help="compare two runs' final weights")
    p_cmp.add_argument("--a", required=True, help="first run directory")
    p_cmp.add_argument("--b", required=True, help="second run directory")
    p_cmp.add_argument("--tol", type=float, default=1e-10,
                       help="per-element relative tolerance")
    p_cmp.set_defaults(func=cmd_compare)

    p_stl = sub.add_parser("steps-to-loss",
                           help="steps each run needs to reach the reference's final loss")
    p_stl.add_argument("--ref", required=True, help="reference optimizer name")
    p_stl.add_argument("--run", dest="runs", action="append", required=True,
                       help="run directory (repeatable)")
    p_stl.add_argument("--out", help="write the table as CSV")
    p_stl.set_defaults(func=cmd_steps_to_loss)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ShapeError, DomainError, NumericError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (FileNotFoundError, tomllib.TOMLDecodeError, json.JSONDecodeError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 2
    except DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return 3
    except ComparisonError as exc:
        print(f"comparison error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
