import json
import subprocess
import sys
from pathlib import Path

import pytest

from spongelab.cli import main
from spongelab.harness import read_records_csv
from spongelab.model import load_model

FIXTURES = Path(__file__).parent / "fixtures"
SYNTH = ["--data", "synth", "--synth-per-class", "15", "--synth-classes", "3", "--synth-dim", "4", "--synth-spread", "0.5"]


@pytest.fixture
def trained(tmp_path):
    out = tmp_path / "m.json"
    code = main(["train", *SYNTH, "--hidden", "8,4", "--epochs", "3", "--lr", "1e-3", "--sponge-pct", "50",
                 "--history", str(tmp_path / "h.csv"), "--out", str(out)])
    assert code == 0
    return out


def test_train_writes_model_and_history(trained, tmp_path):
    model = load_model(trained)
    assert model.config.hidden_dims == (8, 4)
    assert model.input_scaler is not None
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines[0] == "epoch,train_loss,train_acc,test_acc,mean_density"
    assert len(lines) == 1 + 4


def test_prune_then_eval(trained, tmp_path, capsys):
    pruned = tmp_path / "p.json"
    assert main(["prune", "--model", str(trained), "--method", "neuron", "--rate", "25", "--out", str(pruned)]) == 0
    assert load_model(pruned).neuron_mask[0].sum() == 6
    report = tmp_path / "r.csv"
    assert main(["eval", "--model", str(pruned), *SYNTH, "--report", str(report), "--timing-repeats", "1"]) == 0
    assert "energy_ratio=" in capsys.readouterr().out
    assert len(report.read_text().splitlines()) == 2


def test_train_on_feature_csv(tmp_path):
    out = tmp_path / "m.json"
    code = main(["train", "--data", str(FIXTURES / "features.csv"), "--hidden", "4", "--epochs", "2",
                 "--test-split", "0.5", "--out", str(out)])
    assert code == 0 and out.exists()


def test_grid_and_plot(tmp_path):
    out_dir = tmp_path / "grid"
    code = main(["grid", *SYNTH, "--out-dir", str(out_dir), "--sponge-pcts", "0,100", "--prune-pcts", "20",
                 "--seeds", "0", "--hidden", "6", "--epochs", "2"])
    assert code == 0
    records = read_records_csv(out_dir / "records.csv")
    assert len(records) == 2 * 3
    assert json.loads((out_dir / "grid_spec.json").read_text())["sponge_pcts"] == [0, 100]
    assert (out_dir / "sponge_energy_ratio.svg").exists()

    svg = tmp_path / "c.svg"
    code = main(["plot", "--records", str(out_dir / "records.csv"), "--metric", "test_acc", "--group-by", "prune_type",
                 "--where", "prune_type=none,weight", "--out", str(svg)])
    assert code == 0
    assert svg.read_text().count("<polyline") == 2


def test_grid_spec_file(tmp_path):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"sponge_pcts": [0], "prune_types": ["none"], "seeds": [1], "hidden_dims": [4],
                                "train": {"epochs": 1}}))
    assert main(["grid", *SYNTH, "--spec", str(spec), "--out-dir", str(tmp_path / "g")]) == 0
    assert len(read_records_csv(tmp_path / "g" / "records.csv")) == 1


@pytest.mark.parametrize(
    "argv",
    [
        ["train", "--data", str(FIXTURES / "features.csv"), "--label-column", "activity", "--out", "x.json"],
        ["train", *SYNTH, "--sponge-pct", "150", "--out", "x.json"],
        ["train", *SYNTH, "--hidden", "a,b", "--out", "x.json"],
        ["grid", *SYNTH, "--out-dir", "g", "--prune-types", "filter"],
        ["plot", "--records", "r.csv", "--metric", "kwh", "--group-by", "prune_type", "--out", "c.svg"],
    ],
)
def test_validation_exit_code(tmp_path, monkeypatch, argv):
    monkeypatch.chdir(tmp_path)
    try:
        code = main(argv)
    except SystemExit as exc:  # argparse rejections
        code = exc.code
    assert code == 2


def test_missing_file_exit_code(tmp_path):
    assert main(["prune", "--model", str(tmp_path / "absent.json"), "--method", "weight", "--rate", "10",
                 "--out", str(tmp_path / "o.json")]) == 3


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_exit_code(tmp_path, capsys):
    code = main(["train", *SYNTH, "--hidden", "4", "--epochs", "2", "--lr", "1e300", "--out", str(tmp_path / "m.json")])
    assert code == 4
    assert "error" in capsys.readouterr().err


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "spongelab", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for cmd in ("train", "prune", "eval", "grid", "plot"):
        assert cmd in res.stdout
