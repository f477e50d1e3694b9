import csv
import hashlib
import json
import math
from pathlib import Path

import numpy as np
import pytest

from conftest import LN2_OVER_PI
from dirac_spectral.cli import ConfigError, ExperimentConfig, csv_text, load_config, main, write_atomic
from regenerate_golden import GOLDEN, ROOT, command_for

CONFIGS = sorted((ROOT / "configs").glob("*.toml"))


def run_cli(tmp_path, command, config, *extra):
    out = tmp_path / "out"
    code = main([command, "--config", str(config), "--out", str(out), *extra])
    return code, out


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_config(tmp_path, text, name="cfg.toml"):
    path = tmp_path / name
    path.write_text(text)
    return path


# ---------------------------------------------------------------------------
# golden files
# ---------------------------------------------------------------------------


def test_every_config_has_goldens():
    assert {c.stem for c in CONFIGS} == {p.name for p in GOLDEN.iterdir() if p.is_dir()}


@pytest.mark.parametrize("config", CONFIGS, ids=lambda p: p.stem)
def test_golden_reproduction(tmp_path, config):
    code, out = run_cli(tmp_path, command_for(config), config)
    assert code == 0
    goldens = sorted((GOLDEN / config.stem).glob("*.csv"))
    assert goldens
    for g in goldens:
        assert (out / g.name).read_bytes() == g.read_bytes(), g.name


def test_manifest_round_trip(tmp_path):
    config = ROOT / "configs" / "expansion_synthetic.toml"
    code, out = run_cli(tmp_path, "expansion-audit", config)
    assert code == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == "expansion-audit"
    assert manifest["config"]["seed"] == 7
    for name, digest in manifest["outputs"].items():
        assert hashlib.sha256((out / name).read_bytes()).hexdigest() == digest
    again = tmp_path / "again"
    assert main(["expansion-audit", "--config", str(out / "manifest.json"), "--out", str(again)]) == 0
    for name in manifest["outputs"]:
        assert (again / name).read_bytes() == (out / name).read_bytes()


def test_threads_do_not_change_output(tmp_path):
    config = ROOT / "configs" / "asymptotics_trig.toml"
    code1, out1 = run_cli(tmp_path / "a", "verify-asymptotics", config)
    code4, out4 = run_cli(tmp_path / "b", "verify-asymptotics", config, "--threads", "4")
    assert code1 == code4 == 0
    for name in ("sandwich.csv", "cross_products.csv", "checks.csv", "audit.csv"):
        assert (out1 / name).read_bytes() == (out4 / name).read_bytes()


def test_seed_flag_changes_random_probe(tmp_path):
    config = ROOT / "configs" / "expansion_synthetic.toml"
    _, a = run_cli(tmp_path / "a", "expansion-audit", config)
    _, b = run_cli(tmp_path / "b", "expansion-audit", config, "--seed", "8")
    _, c = run_cli(tmp_path / "c", "expansion-audit", config, "--seed", "7")
    assert (a / "divergence.csv").read_bytes() != (b / "divergence.csv").read_bytes()
    assert (a / "divergence.csv").read_bytes() == (c / "divergence.csv").read_bytes()
    assert json.loads((b / "manifest.json").read_text())["config"]["seed"] == 8


# ---------------------------------------------------------------------------
# command outputs
# ---------------------------------------------------------------------------


def test_eigs_demo_output(tmp_path):
    code, out = run_cli(tmp_path, "eigs", ROOT / "configs" / "eigs_demo.toml")
    assert code == 0
    rows = read_rows(out / "spectrum.csv")
    assert len(rows) == 5
    for row in rows:
        assert float(row["im_lambda"]) == pytest.approx(-LN2_OVER_PI, abs=1e-10)
        assert float(row["im_lambda"]) == pytest.approx(-0.220636, abs=1e-6)
    assert sorted(round(float(r["re_lambda"])) for r in rows) == [-4, -2, 0, 2, 4]
    report = json.loads((out / "spectrum.json").read_text())
    assert report["winding_total"] == 5


def test_lemma1_ratios(tmp_path):
    code, out = run_cli(tmp_path, "lemma1-sweep", ROOT / "configs" / "lemma1_zero.toml")
    assert code == 0
    rows = read_rows(out / "lemma1.csv")
    assert [float(r["tau"]) for r in rows] == [1.0, 2.0, 4.0]
    for r in rows:
        t = float(r["tau"])
        assert float(r["ratio"]) == pytest.approx(2 * math.pi * t / math.sinh(2 * math.pi * t), rel=1e-9)
    assert list(rows[0])[:5] == ["tau", "log_norm_y", "log_norm_z", "log_inner", "ratio"]


def test_fundamental_outputs(tmp_path):
    code, out = run_cli(tmp_path, "fundamental", ROOT / "configs" / "fundamental_constant.toml")
    assert code == 0
    report = read_rows(out / "picard_report.csv")
    assert len(report) == 3
    assert all(float(r["final_update_sup"]) <= 1e-12 or r["method"] != "picard" for r in report)
    assert read_rows(out / "fundamental.csv")


def test_sampled_potential_config(tmp_path):
    x = np.linspace(0, math.pi, 9)
    lines = ["x,re_p,im_p,re_q,im_q"] + [f"{float(v)!r},1.0,0.0,1.0,0.0" for v in x]
    (tmp_path / "v.csv").write_text("\n".join(lines) + "\n")
    cfg = write_config(
        tmp_path,
        'output_dir = "res"\n[potential]\npreset = "sampled"\nfile = "v.csv"\n[lambda]\nvalues = [[5.0, 0.0]]\n',
    )
    assert main(["fundamental", "--config", str(cfg)]) == 0
    sampled = read_rows(tmp_path / "res" / "fundamental.csv")
    const = write_config(tmp_path, '[potential]\npreset = "constant"\np = [1.0, 0.0]\nq = [1.0, 0.0]\n'
                         '[lambda]\nvalues = [[5.0, 0.0]]\n', "const.toml")
    code, out = run_cli(tmp_path, "fundamental", const)
    assert code == 0
    assert read_rows(out / "fundamental.csv") == sampled


# ---------------------------------------------------------------------------
# errors
# ---------------------------------------------------------------------------


def test_unknown_preset_exit_2(tmp_path, capsys):
    cfg = write_config(tmp_path, '[potential]\npreset = "zeero"\n[lambda]\nvalues = [[1.0, 0.0]]\n')
    code, out = run_cli(tmp_path, "fundamental", cfg)
    assert code == 2
    assert "potential.preset" in capsys.readouterr().err
    assert not out.exists()


def test_toml_syntax_error_exit_2(tmp_path, capsys):
    cfg = write_config(tmp_path, "[potential\npreset = 1\n")
    assert run_cli(tmp_path, "fundamental", cfg)[0] == 2
    assert "line 1" in capsys.readouterr().err


@pytest.mark.parametrize(
    "text, field",
    [
        ('[potential]\npreset = "zero"\n[lambda]\nrectangle = [1.0, 0.0, 0.0, 1.0]\n', "lambda.rectangle"),
        ('[potential]\npreset = "zero"\n[tolerances]\npicard = -1.0\n[lambda]\nvalues = [[1.0, 0.0]]\n', "tolerances.picard"),
        ('[potential]\npreset = "zero"\ncolour = 1\n[lambda]\nvalues = [[1.0, 0.0]]\n', "potential.colour"),
        ('[potential]\npreset = "zero"\n[grid]\npanels = 0\n[lambda]\nvalues = [[1.0, 0.0]]\n', "grid.panels"),
    ],
)
def test_config_field_errors(tmp_path, capsys, text, field):
    cfg = write_config(tmp_path, text)
    assert run_cli(tmp_path, "fundamental", cfg)[0] == 2
    assert field in capsys.readouterr().err


def test_missing_config_and_bad_flags(tmp_path):
    assert main(["eigs", "--config", str(tmp_path / "nope.toml")]) == 2
    assert main(["eigs"]) == 2
    assert main(["nonsense", "--config", "x"]) == 2
    cfg = ROOT / "configs" / "eigs_demo.toml"
    assert main(["eigs", "--config", str(cfg), "--threads", "0", "--out", str(tmp_path)]) == 2
    assert main(["eigs", "--config", str(cfg), "--seed", "-1", "--out", str(tmp_path)]) == 2


def test_malformed_sample_file_exit_2(tmp_path, capsys):
    (tmp_path / "v.csv").write_text("x,re_p,im_p,re_q,im_q\n0,1,0,1,0\n1,1,0,1,0\n")
    cfg = write_config(tmp_path, '[potential]\npreset = "sampled"\nfile = "v.csv"\n[lambda]\nvalues = [[5.0, 0.0]]\n')
    assert run_cli(tmp_path, "fundamental", cfg)[0] == 2
    assert "potential.file" in capsys.readouterr().err


def test_eigs_without_boundary_is_config_error(tmp_path):
    cfg = write_config(tmp_path, '[potential]\npreset = "zero"\n[lambda]\nrectangle = [-1.0, 1.0, -1.0, 1.0]\n')
    assert run_cli(tmp_path, "eigs", cfg)[0] == 2


def test_solver_divergence_exit_3(tmp_path, capsys):
    cfg = write_config(
        tmp_path,
        '[potential]\npreset = "constant"\np = [50.0, 0.0]\nq = [50.0, 0.0]\n'
        "[grid]\npanels = 300\n[lambda]\nvalues = [[0.0, 3.0]]\n",
    )
    assert run_cli(tmp_path, "fundamental", cfg)[0] == 3
    assert "PicardDivergenceError" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def test_csv_text_round_trips_floats():
    vals = [0.1 + 0.2, 1e-300, -math.pi, math.inf]
    text = csv_text(["v"], [[v] for v in vals])
    back = [float(r["v"]) for r in csv.DictReader(text.splitlines())]
    assert back == vals


def test_write_atomic_replaces(tmp_path):
    target = tmp_path / "sub" / "f.txt"
    write_atomic(target, "one")
    write_atomic(target, "two")
    assert target.read_text() == "two"
    assert [p.name for p in target.parent.iterdir()] == ["f.txt"]


def test_resolved_config_is_json_and_reloads(tmp_path):
    cfg = load_config(ROOT / "configs" / "eigs_constant.toml")
    echo = json.loads(json.dumps(cfg.resolved()))
    again = ExperimentConfig.from_mapping(echo, str(tmp_path))
    assert again.resolved() == cfg.resolved()


def test_config_error_is_value_error():
    err = ConfigError("grid.panels", "must be positive")
    assert isinstance(err, ValueError)
    assert "grid.panels" in str(err)
