import subprocess
import sys

from phode.cli import main
from phode.model import load_weights


def phode(*args):
    return subprocess.run([sys.executable, "-m", "phode", *args], capture_output=True, text=True)


def test_help_and_usage_errors():
    r = phode("--help")
    assert r.returncode == 0 and "benchmark" in r.stdout and "dynamics" in r.stdout
    assert phode().returncode == 2
    r = phode("run", "--config", "x.json", "--noise", "deafening")
    assert r.returncode == 2 and "invalid choice" in r.stderr


def test_train_writes_loadable_weights(tmp_path):
    assert main(["toy", "--out", str(tmp_path / "c"), "--n", "6"]) == 0
    out = tmp_path / "w.phw"
    assert main(["train", "--manifest", str(tmp_path / "c" / "manifest.csv"), "--out", str(out),
                 "--hidden", "4", "--steps", "3", "--batch-size", "2"]) == 0
    w = load_weights(out)
    assert w.hidden_size == 4 and len(w.lstm) == 5


def test_overrides_select_conditions(zero_weights, make_experiment, tmp_path):
    cfg = make_experiment(zero_weights, conditions=["NH", "CI"], noise_levels=["quiet", "low"])
    assert main(["run", "--config", str(cfg), "--condition", "CI", "--noise", "low"]) == 0
    names = sorted(p.name for p in (tmp_path / "out" / "confuse").glob("confusion_*.csv"))
    assert names == ["confusion_CI_low.csv", "confusion_CI_low_normalized.csv"]
