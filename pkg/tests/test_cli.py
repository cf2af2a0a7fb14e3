import json
import subprocess
import sys

import pytest

from pdmp_mdp import cli
from pdmp_mdp.experiment import load_config
from pdmp_mdp.errors import ValidationError


def run(*args):
    return subprocess.run([sys.executable, "-m", "pdmp_mdp.cli", *args], capture_output=True, text=True)


@pytest.fixture
def small_config(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"run": {"episodes": 20, "budget": 100, "particles": 50, "pomdp_depth": 2}}))
    return path


def test_subprocess_success_and_determinism(tmp_path, small_config):
    outs = []
    for k in (1, 2):
        out = tmp_path / f"o{k}"
        proc = run("solve", "--config", str(small_config), "--variant", "mdp_finite", "--seed", "3", "--outdir", str(out))
        assert proc.returncode == 0, proc.stderr
        outs.append({p.name: p.read_bytes() for p in out.iterdir()})
    assert outs[0] == outs[1] and "summary.json" in outs[0]


def test_different_seeds_change_simulation(tmp_path, small_config):
    files = []
    for seed in ("1", "2"):
        out = tmp_path / seed
        assert cli.main(["simulate", "--config", str(small_config), "--variant", "mdp_finite", "--seed", seed, "--outdir", str(out)]) == 0
        files.append(sorted((p.name, p.read_bytes()) for p in out.iterdir() if p.suffix == ".csv"))
    assert files[0] != files[1]


@pytest.mark.parametrize(
    "args",
    [
        ["solve", "--variant", "no_such_variant", "--seed", "0"],
        ["solve", "--variant", "pdmp_basic", "--seed", "0"],
        ["filter", "--variant", "mdp_finite", "--seed", "0"],
    ],
)
def test_validation_failures_exit_2(tmp_path, args):
    proc = run(*args, "--outdir", str(tmp_path / "o"))
    assert proc.returncode == 2 and "error:" in proc.stderr


def test_bad_config_exits_2(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"model": {"horizon": 3}}))
    assert cli.main(["solve", "--config", str(bad), "--variant", "mdp_finite", "--seed", "0", "--outdir", str(tmp_path / "o")]) == 2
    bad.write_text(json.dumps({"run": {"episodes": 0}}))
    assert cli.main(["simulate", "--config", str(bad), "--variant", "mdp_finite", "--seed", "0", "--outdir", str(tmp_path / "o")]) == 2
    assert cli.main(["solve", "--config", str(tmp_path / "missing.json"), "--variant", "mdp_finite", "--seed", "0", "--outdir", str(tmp_path / "o")]) == 2


def test_missing_arguments_exit_2():
    proc = run("solve", "--variant", "mdp_finite")
    assert proc.returncode == 2


def test_load_config_rejects_extra_sections(tmp_path):
    p = tmp_path / "c.json"
    p.write_text('{"run": {}, "extra": 1}')
    with pytest.raises(ValidationError):
        load_config(p)
    p.write_text("not json")
    with pytest.raises(ValidationError):
        load_config(p)
    assert load_config(None) == {}


def test_summary_contents(tmp_path, small_config):
    out = tmp_path / "o"
    assert cli.main(["evaluate", "--config", str(small_config), "--variant", "mdp_finite", "--seed", "5", "--outdir", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["command"] == "evaluate" and summary["variant"] == "mdp_finite" and summary["seed"] == 5
    assert set(summary["files"]) <= {p.name for p in out.iterdir()}
