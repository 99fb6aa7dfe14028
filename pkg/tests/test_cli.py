import json
import shutil
import subprocess
import sys
from pathlib import Path

import pytest
import yaml

from mflab.cli import build_parser, main, report, run

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"
CANNED = Path(__file__).resolve().parent / "configs"

FAST = [
    ("evolve-exact", "evolve_exact.yaml"),
    ("evolve-hartree", "evolve_hartree.yaml"),
    ("converge-factorized", "converge_factorized.yaml"),
    ("converge-factorized", "delta_limit.yaml"),
    ("hierarchy", "hierarchy.yaml"),
    ("scattering", "scattering.yaml"),
    ("probes", "probes.yaml"),
]
SLOW = [
    ("converge-coherent", "converge_coherent.yaml"),
    ("fluctuations", "fluctuations.yaml"),
]


def _only_dir(parent):
    dirs = [p for p in Path(parent).iterdir() if p.is_dir()]
    assert len(dirs) == 1
    return dirs[0]


@pytest.mark.parametrize("command,name", FAST)
def test_shipped_configs_pass(tmp_path, command, name, capsys):
    assert run(command, CONFIGS / name, tmp_path) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and "PASS" in out
    d = _only_dir(tmp_path)
    manifest = json.loads((d / "manifest.json").read_text())
    assert manifest["command"] == command
    assert sorted(p.name for p in d.iterdir() if p.name != "manifest.json") == manifest["files"]
    checks = json.loads((d / "summary.json").read_text())["checks"]
    assert checks and all(c["passed"] for c in checks)


@pytest.mark.slow
@pytest.mark.parametrize("command,name", SLOW)
def test_shipped_slow_configs_pass(tmp_path, command, name):
    assert run(command, CONFIGS / name, tmp_path) == 0


def test_exit_codes(tmp_path, capsys):
    assert run("converge-factorized", CANNED / "pass.yaml", tmp_path / "a") == 0
    assert run("converge-factorized", CANNED / "science_fail.yaml", tmp_path / "b") == 1
    assert run("converge-factorized", CANNED / "science_fail.yaml", tmp_path / "c", assertions=False) == 0
    assert run("converge-factorized", CANNED / "malformed.yaml", tmp_path / "d") == 2
    err = capsys.readouterr().err
    assert "grid.m" in err
    assert run("converge-factorized", CANNED / "budget.yaml", tmp_path / "e") == 3
    assert run("converge-factorized", tmp_path / "missing.yaml", tmp_path / "f") == 2
    assert run("converge-factorized", CANNED / "pass.yaml", tmp_path / "g", workers=0) == 2


def test_dense_cap_exit_code(tmp_path):
    assert run("evolve-exact", CONFIGS / "evolve_exact.yaml", tmp_path, dense_cap=3) == 3


def test_unknown_keys_are_reported(tmp_path, capsys):
    cfg = yaml.safe_load((CANNED / "pass.yaml").read_text())
    cfg["potential"]["family"] = "nope"
    path = tmp_path / "c.yaml"
    path.write_text(yaml.safe_dump(cfg))
    assert run("converge-factorized", path, tmp_path / "o") == 2
    assert "potential.family" in capsys.readouterr().err


def test_byte_identical_reruns(tmp_path):
    for sub in ("a", "b"):
        assert run("converge-factorized", CANNED / "pass.yaml", tmp_path / sub, seed=3) == 0
    da, db = _only_dir(tmp_path / "a"), _only_dir(tmp_path / "b")
    assert da.name == db.name
    for f in sorted(da.iterdir()):
        assert f.read_bytes() == (db / f.name).read_bytes(), f.name
    assert run("probes", CONFIGS / "probes.yaml", tmp_path / "p1", seed=5) == 0
    assert run("probes", CONFIGS / "probes.yaml", tmp_path / "p2", seed=5) == 0
    pa, pb = _only_dir(tmp_path / "p1"), _only_dir(tmp_path / "p2")
    assert (pa / "probes.csv").read_bytes() == (pb / "probes.csv").read_bytes()


def test_seed_changes_run_directory(tmp_path):
    run("converge-factorized", CANNED / "pass.yaml", tmp_path, seed=1)
    run("converge-factorized", CANNED / "pass.yaml", tmp_path, seed=2)
    assert len(list(tmp_path.iterdir())) == 2


def _variant(tmp_path, name, **changes):
    cfg = yaml.safe_load((CANNED / "pass.yaml").read_text())
    for key, val in changes.items():
        section, _, field = key.partition(".")
        if field:
            cfg[section][field] = val
        else:
            cfg[section] = val
    cfg.pop("assertions")
    path = tmp_path / f"{name}.yaml"
    path.write_text(yaml.safe_dump(cfg))
    return path


def test_report_merge_passthrough_and_conflict(tmp_path, capsys):
    full = _variant(tmp_path, "full", n_list=[2, 3, 4, 5, 6, 7])
    lo = _variant(tmp_path, "lo", n_list=[2, 3, 4])
    hi = _variant(tmp_path, "hi", n_list=[5, 6, 7])
    mid = _variant(tmp_path, "mid", n_list=[3, 4, 5])
    for name, path in (("full", full), ("lo", lo), ("hi", hi), ("mid", mid)):
        assert run("converge-factorized", path, tmp_path / "runs" / name) == 0
    d_full = _only_dir(tmp_path / "runs" / "full")
    d_lo, d_hi = _only_dir(tmp_path / "runs" / "lo"), _only_dir(tmp_path / "runs" / "hi")

    # disjoint N: the merge equals concatenate-and-sort, i.e. the single run over all N
    assert report([d_hi, d_lo], tmp_path / "merged", plot=False) == 0
    assert (tmp_path / "merged" / "merged.csv").read_bytes() == (d_full / "distances.csv").read_bytes()
    # overlapping rows that agree exactly are not a conflict
    assert report([d_lo, _only_dir(tmp_path / "runs" / "mid")], tmp_path / "overlap", plot=False) == 0

    assert report([d_full], tmp_path / "single") == 0
    assert (tmp_path / "single" / "merged.csv").read_bytes() == (d_full / "distances.csv").read_bytes()
    assert (tmp_path / "single" / "distances.png").stat().st_size > 0
    summary = json.loads((tmp_path / "single" / "summary.json").read_text())
    assert summary["fits"]["0.5"]["slope"] < -0.5

    other = _variant(tmp_path, "other", **{"potential.amplitude": 2.0})
    assert run("converge-factorized", other, tmp_path / "runs" / "other") == 0
    d_other = _only_dir(tmp_path / "runs" / "other")
    capsys.readouterr()
    assert report([d_lo, d_other], tmp_path / "bad", plot=False) == 2
    err = capsys.readouterr().err
    assert "conflicting rows" in err and str(d_lo) in err and str(d_other) in err


def test_report_refuses_schema_mismatch(tmp_path):
    assert run("converge-factorized", CANNED / "pass.yaml", tmp_path / "r") == 0
    d = _only_dir(tmp_path / "r")
    copy = tmp_path / "copy"
    shutil.copytree(d, copy)
    m = json.loads((copy / "manifest.json").read_text())
    m["schema_version"] = 999
    (copy / "manifest.json").write_text(json.dumps(m))
    assert report([d, copy], tmp_path / "out", plot=False) == 2
    assert report([tmp_path / "nowhere"], tmp_path / "out", plot=False) == 2


def test_parser_and_entry_point(tmp_path):
    args = build_parser().parse_args(["probes", "--config", "x.yaml", "--workers", "2", "--no-assert"])
    assert args.workers == 2 and args.assertions is False
    assert main(["converge-factorized", "--config", str(CANNED / "malformed.yaml"), "--out", str(tmp_path)]) == 2
    proc = subprocess.run([sys.executable, "-m", "mflab", "converge-factorized", "--config",
                           str(CANNED / "science_fail.yaml"), "--out", str(tmp_path)],
                          capture_output=True, text=True)
    assert proc.returncode == 1
    assert "FAIL slope" in proc.stdout
