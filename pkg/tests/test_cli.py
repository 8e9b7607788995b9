import csv
import json
import xml.dom.minidom
from pathlib import Path

import numpy as np
import pytest
import yaml

from fracspike.cli import DEFAULTS, load_config, main
from fracspike.data_io import save_csv_dataset
from fracspike.exceptions import ConfigError

REPO = Path(__file__).resolve().parents[1]


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def error_record(capsys):
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


@pytest.fixture
def toy_data(tmp_path):
    rng = np.random.default_rng(0)
    y = rng.integers(0, 2, 80)
    X = np.where((np.arange(6) < 3) == (y[:, None] == 0), 0.85, 0.1)
    save_csv_dataset(tmp_path / "train.csv", X[:60], y[:60])
    save_csv_dataset(tmp_path / "test.csv", X[60:], y[60:])
    cfg = {
        "data": {"format": "csv", "train_csv": str(tmp_path / "train.csv"), "test_csv": str(tmp_path / "test.csv")},
        "network": {"hidden": [8]},
        "train": {"epochs": 4, "batch_size": 20, "lr": 0.01, "T": 6, "alpha": 0.8},
    }
    path = tmp_path / "toy.yaml"
    path.write_text(yaml.safe_dump(cfg))
    return path


def test_solve_fde_alpha_one(tmp_path):
    assert main(["solve-fde", "-o", str(tmp_path), "--set", "fde.alpha=1", "--set", "fde.N=1000"]) == 0
    table = rows(tmp_path / "solution.csv")
    assert table[0] == ["t", "y", "reference", "abs_error"]
    assert len(table) == 1002
    assert float(table[-1][3]) < 1e-3


def test_solve_fde_fractional_constant(tmp_path):
    assert main(["solve-fde", "-o", str(tmp_path), "--set", "fde.rhs=constant", "--set", "fde.alpha=0.4"]) == 0
    assert json.loads((tmp_path / "summary.json").read_text())["max_abs_error"] < 1e-12


def test_simulate_neuron_outputs(tmp_path):
    assert main(["simulate-neuron", "-o", str(tmp_path), "--set", "simulate.drive=step",
                 "--set", "simulate.current=2.0"]) == 0
    table = rows(tmp_path / "membrane.csv")
    assert table[0] == ["t", "U", "spike"]
    spikes = rows(tmp_path / "spikes.csv")
    assert spikes[0] == ["t"] and len(spikes) > 1
    assert float(spikes[1][0]) >= 1.0  # the step switches on at t = 1


def test_simulate_neuron_noisy_is_seeded(tmp_path):
    args = ["simulate-neuron", "--set", "simulate.drive=noisy", "--set", "simulate.noise_std=0.5"]
    assert main(args + ["-o", str(tmp_path / "a")]) == 0
    assert main(args + ["-o", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a" / "membrane.csv").read_bytes() == (tmp_path / "b" / "membrane.csv").read_bytes()


def test_gradcheck_toy_config(tmp_path, capsys):
    assert main(["gradcheck", "-c", str(REPO / "configs" / "toy.yaml"), "-o", str(tmp_path)]) == 0
    rec = json.loads((tmp_path / "gradcheck.json").read_text())
    assert rec["passed"] and rec["max_rel_error"] < 1e-3


def test_gradcheck_threshold_exceeded(tmp_path, capsys):
    code = main(["gradcheck", "-c", str(REPO / "configs" / "toy.yaml"), "-o", str(tmp_path), "--threshold", "1e-30"])
    assert code == 2
    assert error_record(capsys)["exit_code"] == 2
    assert (tmp_path / "error.json").exists()


def test_train_eval_robustness_energy(tmp_path, toy_data):
    run = tmp_path / "run"
    assert main(["train", "-c", str(toy_data), "-o", str(run)]) == 0
    metrics = [json.loads(l) for l in (run / "metrics.jsonl").read_text().splitlines()]
    assert [m["epoch"] for m in metrics] == [0, 1, 2, 3]
    conf = rows(run / "confusion.csv")
    assert conf[0] == ["true", "pred_0", "pred_1"]
    assert sum(int(v) for r in conf[1:] for v in r[1:]) == 20

    ev = tmp_path / "eval"
    assert main(["eval", "-c", str(toy_data), "--checkpoint", str(run / "model.ckpt"), "-o", str(ev)]) == 0
    acc = json.loads((ev / "eval.json").read_text())["accuracy"]
    assert acc == json.loads((run / "summary.json").read_text())["accuracy"]

    rb = tmp_path / "rob"
    assert main(["robustness", "-c", str(toy_data), "--checkpoint", str(run / "model.ckpt"),
                 "--levels", "0", "-o", str(rb)]) == 0
    table = rows(rb / "robustness.csv")
    assert table[0] == ["level", "accuracy"] and float(table[1][1]) == acc

    for kind, levels in (("discard", "0,0.5"), ("occlusion", "0,0.5")):
        out = tmp_path / kind
        code = main(["robustness", "-c", str(toy_data), "--checkpoint", str(run / "model.ckpt"),
                     "--corruption", kind, "--levels", levels, "-o", str(out)])
        if kind == "occlusion":
            assert code == 1  # 6 features do not form a 28 x 28 grid
        else:
            assert code == 0 and float(rows(out / "robustness.csv")[1][1]) == acc

    en = tmp_path / "energy"
    assert main(["energy", "-c", str(toy_data), "--checkpoint", str(run / "model.ckpt"),
                 "--set", f"energy.metrics={run / 'metrics.jsonl'}", "-o", str(en)]) == 0
    rep = json.loads((en / "energy.json").read_text())
    assert rep["total_joules"] == sum(l["joules"] for l in rep["layers"])
    assert [l["flops"] for l in rep["layers"]] == [2 * 6 * 8, 2 * 8 * 2]


def test_effective_config_reproduces_run(tmp_path, toy_data):
    a = tmp_path / "a"
    assert main(["train", "-c", str(toy_data), "-o", str(a), "--epochs", "2"]) == 0
    echoed = yaml.safe_load((a / "config.yaml").read_text())
    assert echoed["train"]["epochs"] == 2
    b = tmp_path / "b"
    assert main(["train", "-c", str(a / "config.yaml"), "-o", str(b)]) == 0
    assert (a / "model.ckpt").read_bytes() == (b / "model.ckpt").read_bytes()
    strip = lambda p: [{k: v for k, v in json.loads(l).items() if k not in ("seconds", "peak_memory_bytes")}
                       for l in p.read_text().splitlines()]
    assert strip(a / "metrics.jsonl") == strip(b / "metrics.jsonl")


def test_plot_writes_valid_svg(tmp_path):
    assert main(["solve-fde", "-o", str(tmp_path), "--set", "fde.N=50"]) == 0
    assert main(["plot", str(tmp_path / "solution.csv"), "-o", str(tmp_path)]) == 0
    doc = xml.dom.minidom.parse(str(tmp_path / "solution.svg"))
    assert doc.documentElement.tagName == "svg"
    assert len(doc.getElementsByTagName("polyline")) == 3


@pytest.mark.parametrize(
    "args,field",
    [
        (["--set", "train.bogus=1"], "train.bogus"),
        (["--set", "nosuch.key=1"], "nosuch"),
        (["--set", "train.lr=-1"], "train"),
        (["--set", "fde.rhs=cubic"], "fde.rhs"),
        (["--set", "noequals"], "noequals"),
    ],
)
def test_usage_errors(tmp_path, capsys, args, field):
    cmd = "solve-fde" if "fde" in args[-1] else "train"
    assert main([cmd, "-o", str(tmp_path)] + args) == 1
    rec = error_record(capsys)
    assert rec["exit_code"] == 1 and rec["field"] == field


def test_unknown_key_in_file(tmp_path, capsys):
    (tmp_path / "c.yaml").write_text("train:\n  epochz: 3\n")
    assert main(["train", "-c", str(tmp_path / "c.yaml"), "-o", str(tmp_path)]) == 1
    assert error_record(capsys)["field"] == "train.epochz"


def test_io_errors(tmp_path, capsys):
    assert main(["eval", "--checkpoint", str(tmp_path / "missing.ckpt"), "-o", str(tmp_path)]) == 3
    assert error_record(capsys)["error"] == "FileNotFoundError"
    (tmp_path / "bad.ckpt").write_bytes(b"garbage")
    assert main(["eval", "--checkpoint", str(tmp_path / "bad.ckpt"), "-o", str(tmp_path)]) == 3
    assert error_record(capsys)["error"] == "FormatError"
    assert main(["train", "-c", str(tmp_path / "none.yaml")]) == 3


def test_bad_command_line():
    assert main(["no-such-command"]) == 1
    assert main(["train", "--epochs", "many"]) == 1


def test_thread_cap(tmp_path, monkeypatch):
    monkeypatch.setenv("FSPIKE_THREADS", "1")
    assert main(["solve-fde", "-o", str(tmp_path), "--set", "fde.N=20"]) == 0
    monkeypatch.setenv("FSPIKE_THREADS", "lots")
    assert main(["solve-fde", "-o", str(tmp_path), "--set", "fde.N=20"]) == 1


def test_precedence():
    cfg = load_config(None, ["train.alpha=0.6"], {"alpha": 0.9, "epochs": None})
    assert cfg["train"]["alpha"] == 0.9
    cfg = load_config(None, ["train.alpha=0.6"], {})
    assert cfg["train"]["alpha"] == 0.6
    assert DEFAULTS["train"]["alpha"] == 1.0
    with pytest.raises(ConfigError):
        load_config(None, ["train=3"], {})
