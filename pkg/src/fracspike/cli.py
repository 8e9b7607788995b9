"""Command-line entry point: ``fracspike <command> [--config FILE] [options]``.

Settings come from three layers, later ones winning:

1. built-in defaults (``DEFAULTS`` below),
2. a YAML config file (``--config``), one section per module,
3. command-line flags: the dedicated ones (``--alpha``, ``--epochs``, ...)
   and the generic ``--set section.key=value`` (YAML-parsed value).

Unknown sections or keys are rejected. Every run writes the merged config to
``<out>/config.yaml``; passing that file back reproduces the run.

Exit codes: 0 success, 1 usage/config error, 2 numerical failure
(divergence, gradient check above threshold), 3 I/O or file-format error.
Failures also print one JSON error record to stderr (and to
``<out>/error.json`` when the output directory exists).
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import math
import os
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
import yaml
from threadpoolctl import threadpool_limits

from . import __version__
from .data_io import (
    discard_spikes,
    encode,
    inject_gaussian_noise,
    load_checkpoint,
    load_csv_dataset,
    load_idx_dataset,
    occlude,
    save_checkpoint,
)
from .energy import EnergyModel, LayerCost, dense_flops, estimate_energy
from .exceptions import ConfigError, DivergenceError, FormatError, FracSpikeError, PrecisionError
from .fde import SolverOptions, TimeGrid, mittag_leffler, solve_caputo_forward
from .network import NetworkSpec
from .neuron import NeuronParams, relaxation_curve, simulate_neuron
from .plot import plot_csv
from .surrogate import SurrogateSpec
from .train import TrainConfig, evaluate, gradcheck, train_loop

logger = logging.getLogger("fracspike")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3

DEFAULTS: Dict[str, Dict[str, Any]] = {
    "output": {"dir": "runs/latest"},
    "data": {
        "format": "idx",
        "train_images": None,
        "train_labels": None,
        "test_images": None,
        "test_labels": None,
        "train_csv": None,
        "test_csv": None,
        "limit_train": None,
        "limit_test": None,
    },
    "network": {"hidden": [128], "checkpoint": None},
    "neuron": {
        "tau_alpha": 2.0,
        "theta": 0.25,
        "R": 1.0,
        "reset": "soft_subtract",
        "model": "lif",
        "surrogate": "sigmoid",
        "surrogate_scale": 10.0,
    },
    "solver": {"method": "abm_predictor", "memory_window": None},
    "train": {
        "alpha": 1.0,
        "epochs": 30,
        "batch_size": 64,
        "optimizer": "adam",
        "lr": 1e-3,
        "betas": [0.9, 0.999],
        "eps": 1e-8,
        "loss": "cross_entropy_on_counts",
        "target_count": None,
        "seed": 0,
        "T": 8,
        "time_interval": 1.0,
        "encoding": "bernoulli",
        "adjoint": "discrete",
        "eval_seed": 12345,
    },
    "fde": {"rhs": "decay", "alpha": 0.8, "rate": 1.0, "drive": 1.0, "y0": 1.0, "t_end": 1.0, "N": 1000},
    "simulate": {
        "alpha": 0.5,
        "drive": "constant",
        "current": 1.0,
        "step_time": 1.0,
        "noise_std": 0.1,
        "U0": 0.0,
        "t_end": 10.0,
        "N": 1000,
        "spiking": True,
        "seed": 0,
    },
    "gradcheck": {"dims": [4, 8, 2], "T": 16, "epsilon": 1e-4, "threshold": 1e-3, "label": 0, "weight_scale": 3.0},
    "robustness": {"corruption": "gaussian", "levels": [0.0, 0.2, 0.4, 0.6]},
    "energy": {"T": None, "e_mac": 4.6e-12, "e_ac": 0.9e-12, "rates": None, "metrics": None},
    "plot": {"input": None, "output": None, "x": None, "y": None, "title": ""},
}

# dedicated flags: dest -> dotted config path
FLAG_PATHS = {
    "out": "output.dir",
    "alpha": "train.alpha",
    "epochs": "train.epochs",
    "batch_size": "train.batch_size",
    "lr": "train.lr",
    "seed": "train.seed",
    "T": "train.T",
    "checkpoint": "network.checkpoint",
    "threshold": "gradcheck.threshold",
    "corruption": "robustness.corruption",
    "levels": "robustness.levels",
    "input": "plot.input",
    "output_svg": "plot.output",
}


# -- configuration ---------------------------------------------------------


def merge_config(base: Dict[str, Dict[str, Any]], override: Dict[str, Any], source: str) -> Dict[str, Dict[str, Any]]:
    """Overlay ``override`` onto ``base``; unknown sections/keys raise ``ConfigError``."""
    if not isinstance(override, dict):
        raise ConfigError(f"{source}: top level must be a mapping of sections", field="<root>")
    out = copy.deepcopy(base)
    for section, values in override.items():
        if section not in out:
            raise ConfigError(f"unknown section (from {source})", field=str(section))
        if values is None:
            continue
        if not isinstance(values, dict):
            raise ConfigError(f"section must be a mapping (from {source})", field=str(section))
        for key, value in values.items():
            if key not in out[section]:
                raise ConfigError(f"unknown key (from {source})", field=f"{section}.{key}")
            out[section][key] = value
    return out


def set_path(cfg: Dict[str, Dict[str, Any]], path: str, value, source: str = "flags") -> None:
    section, _, key = path.partition(".")
    if not key:
        raise ConfigError("expected section.key", field=path)
    merged = merge_config(cfg, {section: {key: value}}, source)
    cfg[section][key] = merged[section][key]


def load_config(path: Optional[str], sets: List[str], flags: Dict[str, Any]) -> Dict[str, Dict[str, Any]]:
    cfg = copy.deepcopy(DEFAULTS)
    if path:
        with open(path) as fh:
            doc = yaml.safe_load(fh) or {}
        cfg = merge_config(cfg, doc, str(path))
    for item in sets:
        key, eq, raw = item.partition("=")
        if not eq:
            raise ConfigError("--set expects section.key=value", field=item)
        set_path(cfg, key.strip(), yaml.safe_load(raw), "--set")
    for dest, value in flags.items():
        if value is not None and dest in FLAG_PATHS:
            set_path(cfg, FLAG_PATHS[dest], value, f"--{dest.replace('_', '-')}")
    return cfg


def _field(fn, path: str):
    """Run a constructor, turning value errors into ``ConfigError`` at ``path``."""
    try:
        return fn()
    except FracSpikeError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), field=path) from None


def train_config(cfg) -> TrainConfig:
    t = dict(cfg["train"])
    solver = _field(lambda: SolverOptions(**cfg["solver"]), "solver")
    return _field(lambda: TrainConfig(solver=solver, **t), "train")


def neuron_params(cfg, alpha: float) -> NeuronParams:
    n = dict(cfg["neuron"])
    sur = _field(lambda: SurrogateSpec(n.pop("surrogate"), n.pop("surrogate_scale")), "neuron.surrogate")
    return _field(lambda: NeuronParams(alpha=alpha, surrogate=sur, **n), "neuron")


def _limit(X, y, n):
    return (X, y) if n is None else (X[: int(n)], y[: int(n)])


def load_split(cfg, split: str):
    d = cfg["data"]
    fmt = d["format"]
    if fmt == "idx":
        img, lab = d[f"{split}_images"], d[f"{split}_labels"]
        if img is None or lab is None:
            return None
        X, y = load_idx_dataset(img, lab)
    elif fmt == "csv":
        if d[f"{split}_csv"] is None:
            return None
        X, y = load_csv_dataset(d[f"{split}_csv"])
    else:
        raise ConfigError(f"unknown data format {fmt!r} (idx or csv)", field="data.format")
    return _limit(X, y, d[f"limit_{split}"])


def _require(data, split):
    if data is None:
        raise ConfigError(f"no {split} dataset configured", field=f"data.{split}_*")
    return data


# -- outputs ---------------------------------------------------------------


def _out_dir(cfg) -> Path:
    out = Path(cfg["output"]["dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def write_effective_config(cfg, out: Path, command: str) -> None:
    with open(out / "config.yaml", "w") as fh:
        fh.write(f"# effective configuration of `fracspike {command}`\n")
        yaml.safe_dump(cfg, fh, sort_keys=True)


def write_csv(path: Path, header: List[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def confusion_matrix(y_true, y_pred, n_classes: int) -> np.ndarray:
    m = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(m, (np.asarray(y_true), np.asarray(y_pred)), 1)
    return m


def write_confusion(path: Path, m: np.ndarray) -> None:
    write_csv(path, ["true"] + [f"pred_{j}" for j in range(m.shape[1])], ([i, *row.tolist()] for i, row in enumerate(m)))


# -- commands --------------------------------------------------------------


def cmd_solve_fde(cfg, out: Path) -> int:
    f = cfg["fde"]
    grid = _field(lambda: TimeGrid(0.0, float(f["t_end"]), int(f["N"])), "fde.N")
    alpha = _field(lambda: float(f["alpha"]), "fde.alpha")
    opts = _field(lambda: SolverOptions(**cfg["solver"]), "solver")
    _field(lambda: opts.validate(alpha, grid.N), "solver")
    y0, rate, drive = float(f["y0"]), float(f["rate"]), float(f["drive"])
    t = grid.points()
    if f["rhs"] == "decay":
        traj = solve_caputo_forward(lambda _t, y: -rate * y, np.array([y0]), grid, alpha, opts)
        ref = y0 * mittag_leffler(alpha, -rate * t**alpha)
    elif f["rhs"] == "constant":
        traj = solve_caputo_forward(lambda _t, y: np.full_like(y, drive), np.array([y0]), grid, alpha, opts)
        ref = y0 + drive * t**alpha / math.gamma(alpha + 1.0)
    else:
        raise ConfigError(f"unknown rhs {f['rhs']!r} (decay or constant)", field="fde.rhs")
    y = traj.values[:, 0]
    err = np.abs(y - ref)
    write_csv(out / "solution.csv", ["t", "y", "reference", "abs_error"], zip(t, y, ref, err))
    summary = {"max_abs_error": float(err.max()), "final_abs_error": float(err[-1]), "N": grid.N, "alpha": alpha}
    write_json(out / "summary.json", summary)
    print(json.dumps(summary))
    return EXIT_OK


def _drive(s, grid: TimeGrid):
    kind, I = s["drive"], float(s["current"])
    if kind == "constant":
        return lambda t: I
    if kind == "step":
        t_on = float(s["step_time"])
        return lambda t: I if t >= t_on else 0.0
    if kind == "noisy":
        noise = np.random.default_rng(s["seed"]).normal(0.0, float(s["noise_std"]), grid.N + 1)
        return lambda t: I + noise[grid.index_of(t)]
    raise ConfigError(f"unknown drive {kind!r} (constant, step or noisy)", field="simulate.drive")


def cmd_simulate_neuron(cfg, out: Path) -> int:
    s = cfg["simulate"]
    alpha = _field(lambda: float(s["alpha"]), "simulate.alpha")
    params = neuron_params(cfg, alpha)
    grid = _field(lambda: TimeGrid(0.0, float(s["t_end"]), int(s["N"])), "simulate.N")
    opts = _field(lambda: SolverOptions(**cfg["solver"]), "solver")
    _field(lambda: opts.validate(alpha, grid.N), "solver")
    current = _drive(s, grid)
    traj, spikes = simulate_neuron(params, current, grid, opts, U0=float(s["U0"]), spiking=bool(s["spiking"]))
    t = grid.points()
    U = traj.values[:, 0]
    fired = spikes[:, 0]
    header = ["t", "U", "spike"]
    cols = [t, U, fired]
    closed_form = s["drive"] == "constant" and not s["spiking"]
    if closed_form:
        ref = relaxation_curve(params, float(s["current"]), float(s["U0"]), grid).values
        header += ["reference", "abs_error"]
        cols += [ref, np.abs(U - ref)]
    write_csv(out / "membrane.csv", header, zip(*cols))
    write_csv(out / "spikes.csv", ["t"], ([v] for v in t[fired > 0]))
    summary = {"n_spikes": int(fired.sum()), "alpha": alpha}
    if closed_form:
        summary["max_abs_error"] = float(np.max(cols[-1]))
    write_json(out / "summary.json", summary)
    print(json.dumps(summary))
    return EXIT_OK


def cmd_train(cfg, out: Path) -> int:
    tc = train_config(cfg)
    train = _require(load_split(cfg, "train"), "train")
    test = load_split(cfg, "test")
    n_classes = int(max(train[1].max(), test[1].max() if test else 0)) + 1
    dims = [train[0].shape[1], *cfg["network"]["hidden"], n_classes]
    if cfg["network"]["checkpoint"]:
        spec = load_checkpoint(cfg["network"]["checkpoint"])
        if spec.alpha != tc.alpha:
            raise ConfigError(f"checkpoint alpha {spec.alpha} differs from train.alpha {tc.alpha}", field="train.alpha")
    else:
        spec = NetworkSpec.build(dims, tc.alpha, neuron_params(cfg, tc.alpha), seed=tc.seed)
    with open(out / "metrics.jsonl", "w") as fh:

        def on_epoch(rec):
            fh.write(json.dumps(rec) + "\n")
            fh.flush()
            print(
                f"epoch {rec['epoch']:3d}  loss {rec['train_loss']:.4f}  train {rec['train_acc']:.4f}  "
                f"test {rec['test_acc'] if rec['test_acc'] is None else round(rec['test_acc'], 4)}",
                flush=True,
            )

        spec, metrics = train_loop(spec, train, tc, test_data=test, on_epoch=on_epoch)
    save_checkpoint(spec, out / "model.ckpt", extra={"epochs": tc.epochs, "seed": tc.seed})
    X, y = test if test is not None else train
    res = evaluate(spec, X, y, tc)
    write_confusion(out / "confusion.csv", confusion_matrix(y, res["pred"], spec.out_dim))
    summary = {
        "accuracy": res["accuracy"],
        "split": "test" if test is not None else "train",
        "firing_rates": res["firing_rates"],
        "final_train_loss": metrics.train_loss[-1] if metrics.train_loss else None,
    }
    write_json(out / "summary.json", summary)
    print(json.dumps(summary))
    return EXIT_OK


def _checkpoint(cfg) -> NetworkSpec:
    path = cfg["network"]["checkpoint"]
    if not path:
        raise ConfigError("this command needs a checkpoint", field="network.checkpoint")
    return load_checkpoint(path)


def _eval_config(cfg, spec: NetworkSpec) -> TrainConfig:
    set_path(cfg, "train.alpha", spec.alpha, "checkpoint")
    return train_config(cfg)


def cmd_eval(cfg, out: Path) -> int:
    spec = _checkpoint(cfg)
    tc = _eval_config(cfg, spec)
    X, y = _require(load_split(cfg, "test"), "test")
    res = evaluate(spec, X, y, tc)
    write_confusion(out / "confusion.csv", confusion_matrix(y, res["pred"], spec.out_dim))
    summary = {"accuracy": res["accuracy"], "firing_rates": res["firing_rates"], "n": int(len(X))}
    write_json(out / "eval.json", summary)
    print(json.dumps(summary))
    return EXIT_OK


def cmd_gradcheck(cfg, out: Path) -> int:
    g = cfg["gradcheck"]
    set_path(cfg, "train.T", g["T"], "gradcheck.T")
    tc = train_config(cfg)
    rng = np.random.default_rng(tc.seed)
    spec = NetworkSpec.build(g["dims"], tc.alpha, neuron_params(cfg, tc.alpha), seed=tc.seed, smooth=True)
    spec = spec.with_weights([W * float(g["weight_scale"]) for W in spec.weights()])
    sample = encode(tc.encoding, rng.random((1, spec.in_dim)), tc.T, rng)[:, 0]
    report = gradcheck(spec, sample, int(g["label"]), tc, epsilon=float(g["epsilon"]))
    rec = report.to_dict()
    rec.update(threshold=float(g["threshold"]), passed=bool(report.max_rel_error < float(g["threshold"])))
    write_json(out / "gradcheck.json", rec)
    print(json.dumps(rec))
    if not rec["passed"]:
        raise DivergenceError(
            f"gradient check failed: max relative error {report.max_rel_error:.3e} >= {g['threshold']}"
        )
    return EXIT_OK


def _corruption(kind: str, level: float):
    if kind == "gaussian":
        return lambda s, rng: inject_gaussian_noise(s, level, rng)
    if kind == "discard":
        return lambda s, rng: discard_spikes(s, level, rng)
    if kind == "occlusion":
        return lambda s, rng: occlude(s, level)
    raise ConfigError(f"unknown corruption {kind!r} (gaussian, discard or occlusion)", field="robustness.corruption")


def cmd_robustness(cfg, out: Path) -> int:
    spec = _checkpoint(cfg)
    tc = _eval_config(cfg, spec)
    X, y = _require(load_split(cfg, "test"), "test")
    r = cfg["robustness"]
    levels = r["levels"]
    if not isinstance(levels, list) or not levels:
        raise ConfigError("expected a non-empty list of levels", field="robustness.levels")
    rows = []
    for level in levels:
        corrupt = _corruption(r["corruption"], float(level))
        acc = evaluate(spec, X, y, tc, corrupt=corrupt)["accuracy"]
        rows.append((float(level), acc))
        print(f"{r['corruption']} {level}: accuracy {acc:.4f}", flush=True)
    write_csv(out / "robustness.csv", ["level", "accuracy"], rows)
    return EXIT_OK


def _rates_from_file(path) -> List[float]:
    path = Path(path)
    text = path.read_text().strip()
    if not text:
        raise FormatError(f"{path}: empty metrics file")
    if path.suffix == ".jsonl":
        rec = json.loads(text.splitlines()[-1])
    else:
        rec = json.loads(text)
    if "firing_rates" not in rec:
        raise FormatError(f"{path}: no firing_rates field")
    return [float(v) for v in rec["firing_rates"]]


def cmd_energy(cfg, out: Path) -> int:
    e = cfg["energy"]
    spec = _checkpoint(cfg)
    if e["rates"] is not None:
        rates = [float(v) for v in e["rates"]]
    elif e["metrics"] is not None:
        rates = _rates_from_file(e["metrics"])
    else:
        raise ConfigError("give firing rates directly or a metrics file", field="energy.rates")
    if len(rates) != len(spec.layers):
        raise ConfigError(f"need {len(spec.layers)} rates, got {len(rates)}", field="energy.rates")
    T = int(e["T"] if e["T"] is not None else cfg["train"]["T"])
    model = _field(lambda: EnergyModel(T=T, e_mac=float(e["e_mac"]), e_ac=float(e["e_ac"])), "energy")
    costs = _field(
        lambda: [
            LayerCost(f"fc{i + 1}", dense_flops(layer.in_dim, layer.out_dim), r)
            for i, (layer, r) in enumerate(zip(spec.layers, rates))
        ],
        "energy.rates",
    )
    report = estimate_energy(costs, model)
    write_json(out / "energy.json", report)
    print(json.dumps({"total_joules": report["total_joules"], "total_mJ": report["total_joules"] * 1e3}))
    return EXIT_OK


def cmd_plot(cfg, out: Path) -> int:
    p = cfg["plot"]
    if not p["input"]:
        raise ConfigError("need an input CSV", field="plot.input")
    target = Path(p["output"]) if p["output"] else out / (Path(p["input"]).stem + ".svg")
    y = p["y"]
    if isinstance(y, str):
        y = [y]
    written = plot_csv(p["input"], target, x=p["x"], y=y, title=p["title"] or "")
    print(str(written))
    return EXIT_OK


COMMANDS = {
    "solve-fde": (cmd_solve_fde, "integrate a built-in fractional ODE and compare with its closed form"),
    "simulate-neuron": (cmd_simulate_neuron, "simulate one fractional LIF/IF neuron"),
    "train": (cmd_train, "train a dense fractional spiking network"),
    "eval": (cmd_eval, "evaluate a checkpoint on the test split"),
    "gradcheck": (cmd_gradcheck, "compare adjoint gradients with finite differences"),
    "robustness": (cmd_robustness, "accuracy of a checkpoint under input corruption"),
    "energy": (cmd_energy, "inference energy estimate from firing rates"),
    "plot": (cmd_plot, "render a CSV as an SVG line chart"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fracspike", description="Fractional spiking network toolkit.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("-c", "--config", help="YAML config file")
        p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                       help="override one config value (repeatable)")
        p.add_argument("-o", "--out", help="output directory")
        p.add_argument("-v", "--verbose", action="store_true")
        if name in ("train", "eval", "gradcheck", "robustness", "energy"):
            p.add_argument("--alpha", type=float)
            p.add_argument("--seed", type=int)
            p.add_argument("--T", type=int)
        if name == "train":
            p.add_argument("--epochs", type=int)
            p.add_argument("--batch-size", type=int)
            p.add_argument("--lr", type=float)
        if name in ("train", "eval", "robustness", "energy"):
            p.add_argument("--checkpoint")
        if name == "gradcheck":
            p.add_argument("--threshold", type=float)
        if name == "robustness":
            p.add_argument("--corruption", choices=("gaussian", "discard", "occlusion"))
            p.add_argument("--levels", type=lambda s: [float(v) for v in s.split(",")], metavar="L1,L2,...")
        if name == "plot":
            p.add_argument("input", nargs="?")
            p.add_argument("--output-svg", metavar="FILE")
    return parser


def _error_record(exc: BaseException, code: int) -> dict:
    rec = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    for attr in ("field", "offset", "step", "layer", "epoch", "batch"):
        v = getattr(exc, attr, None)
        if v is not None:
            rec[attr] = v
    return rec


def _classify(exc: BaseException) -> int:
    if isinstance(exc, (DivergenceError, PrecisionError, FloatingPointError)):
        return EXIT_NUMERIC
    if isinstance(exc, (FormatError, OSError, yaml.YAMLError)):
        return EXIT_IO
    if isinstance(exc, (ConfigError, ValueError, TypeError, KeyError)):
        return EXIT_USAGE
    return EXIT_NUMERIC if isinstance(exc, ArithmeticError) else EXIT_USAGE


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    out: Optional[Path] = None
    try:
        cfg = load_config(args.config, args.set, vars(args))
        out = _out_dir(cfg)
        write_effective_config(cfg, out, args.command)
        threads = os.environ.get("FSPIKE_THREADS")
        limit = int(threads) if threads else None
        with threadpool_limits(limits=limit):
            code = COMMANDS[args.command][0](cfg, out)
        # the config is re-written so values resolved at run time (e.g. a checkpoint's alpha) are kept
        write_effective_config(cfg, out, args.command)
        return code
    except Exception as exc:  # every failure leaves a machine-readable record
        code = _classify(exc)
        rec = _error_record(exc, code)
        print(json.dumps(rec), file=sys.stderr)
        if out is not None:
            try:
                write_json(out / "error.json", rec)
            except OSError:
                pass
        if args.verbose:
            logger.exception("command failed")
        return code


if __name__ == "__main__":
    sys.exit(main())
