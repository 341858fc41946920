import json

import pytest

from main import EXIT_CONFIG, EXIT_DEGENERATE, EXIT_INVARIANT, EXIT_OK, cli, exit_code_for
from app.services.gg_estimator import NoSupportDeclared
from app.services.sphere_geom import SamplingBudgetExceeded
from app.utils.validation import InvariantViolation, ValidationError


@pytest.fixture(autouse=True)
def single_threaded(monkeypatch):
    monkeypatch.setenv("GG_SINGLE_THREADED", "1")


def _braid(capsys, *argv):
    code = cli(["braid", *argv])
    return code, capsys.readouterr().out.strip()


@pytest.mark.parametrize(
    ("argv", "expected"),
    [
        (("signature", "2; 1 1 1"), "-2"),
        (("signature", "3; 1 -2 1 -2"), "0"),
        (("signature", "3;"), "0"),
        (("signature", "2; 1 1 1", "--oracle", "seifert"), "-2"),
        (("permutation", "3; 1 1"), "id"),
        (("reduce", "3; 1 -1 2"), "3; 2"),
        (("expsum", "3; 1 -2 1"), "1"),
        (("linking", "1", "2", "3; 1 1"), "1"),
    ],
)
def test_braid_tools(capsys, argv, expected):
    assert _braid(capsys, *argv) == (EXIT_OK, expected)


def test_braid_entropy(capsys):
    code, out = _braid(capsys, "entropy", "3; 1 -2", "--iters", "200")
    assert code == EXIT_OK
    assert float(out) == pytest.approx(0.9624, abs=1e-3)


def test_braid_homogenize(capsys):
    code, out = _braid(capsys, "homogenize", "signature", "2; 1 1", "--schedule", "8,16,32")
    assert code == EXIT_OK
    assert float(out) == pytest.approx(-2.0, abs=0.05)


def test_braid_parse_error(capsys):
    assert cli(["braid", "reduce", "3; 1 x"]) == EXIT_CONFIG
    assert "column 6" in capsys.readouterr().err


def test_exit_code_mapping():
    assert exit_code_for(ValidationError("sampling.N", "bad")) == EXIT_CONFIG
    assert exit_code_for(SamplingBudgetExceeded("budget")) == EXIT_DEGENERATE
    assert exit_code_for(InvariantViolation("not pure")) == EXIT_INVARIANT
    assert exit_code_for(NoSupportDeclared("truncation needs a support cap")) == EXIT_CONFIG


def _write(tmp_path, name, raw):
    path = tmp_path / name
    path.write_text(json.dumps(raw), encoding="utf-8")
    return str(path)


def test_run_phi_on_identity(tmp_path, capsys):
    out = tmp_path / "out"
    config = _write(tmp_path, "phi.json", {"experiment": "phi", "system": {"preset": "identity"}, "sampling": {"N": 30}})
    assert cli(["run", config, "--out", str(out), "--seed", "3"]) == EXIT_OK
    summary = json.loads(capsys.readouterr().out)
    assert summary["status"] == "completed"
    files = sorted(p.name for p in out.iterdir())
    assert "manifest.json" in files and "runs.db" in files
    assert any(name.endswith("_scene") for name in files)
    scene = out / next(name for name in files if name.endswith("_scene"))
    assert len(list(scene.iterdir())) == 4
    for strand in sorted(scene.iterdir()):
        header, *rows = strand.read_text().splitlines()
        assert header == "t,x,y,z,config_hash"
        assert rows and all(row.endswith("," + summary["config_hash"]) for row in rows)
    [estimates] = [p for p in out.iterdir() if p.name.endswith("_estimates.jsonl")]
    record = json.loads(estimates.read_text().splitlines()[0])
    assert record["value"] == 0.0 and record["stderr"] == 0.0
    assert record["config_hash"] == summary["config_hash"]
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 3 and manifest["config_hash"] == summary["config_hash"]


def test_run_is_deterministic(tmp_path, capsys):
    out = tmp_path / "out"
    raw = {
        "experiment": "phibar",
        "system": {"preset": "twist", "area": 0.2},
        "sampling": {"N": 40, "time_steps": 16},
        "estimator": {"quasimorphism": "exponent_sum", "p_schedule": [1]},
    }
    config = _write(tmp_path, "phibar.json", raw)
    assert cli(["run", config, "--out", str(out)]) == EXIT_OK
    [path] = list(out.glob("*_estimates.jsonl"))
    first = path.read_bytes()
    assert cli(["run", config, "--out", str(out)]) == EXIT_OK
    assert path.read_bytes() == first
    capsys.readouterr()


def test_run_scaling_writes_fit(tmp_path, capsys):
    out = tmp_path / "out"
    raw = {
        "experiment": "scaling",
        "system": {"preset": "twist", "area": 0.1},
        "sampling": {"N": 100, "stratified": True},
        "estimator": {
            "quasimorphism": "synthetic:0.5",
            "truncation": "enforce_reducible_vanishing",
            "p_schedule": [1],
            "eps_grid": [1.0, 0.8, 0.6, 0.4],
        },
    }
    assert cli(["run", _write(tmp_path, "scaling.json", raw), "--out", str(out)]) == EXIT_OK
    [fit] = list(out.glob("*_fit.csv"))
    lines = fit.read_text().splitlines()
    assert lines[0] == "epsilon,phibar,stderr,fitted_model_value,residual,config_hash"
    assert len(lines) == 5
    [report] = list(out.glob("*_report.json"))
    payload = json.loads(report.read_text())
    assert payload["A"] == pytest.approx(payload["closed_form"]["A"], rel=1e-6)
    assert payload["B"] == pytest.approx(payload["closed_form"]["B"], rel=1e-6)
    capsys.readouterr()


def test_run_scaling_with_one_epsilon_is_a_config_error(tmp_path, capsys):
    raw = {"experiment": "scaling", "estimator": {"eps_grid": [0.5], "truncation": "enforce_reducible_vanishing"}}
    assert cli(["run", _write(tmp_path, "bad.json", raw), "--out", str(tmp_path / "out")]) == EXIT_CONFIG
    assert "estimator.eps_grid" in capsys.readouterr().err


def test_run_additivity_with_stand_in(tmp_path, capsys):
    out = tmp_path / "out"
    raw = {
        "experiment": "additivity",
        "sampling": {"N": 500},
        "estimator": {"quasimorphism": "synthetic", "truncation": "enforce_reducible_vanishing", "p_schedule": [1]},
        "embedding": {"area": 0.05},
    }
    assert cli(["run", _write(tmp_path, "add.json", raw), "--out", str(out)]) == EXIT_OK
    [report] = list(out.glob("*_report.json"))
    assert json.loads(report.read_text())["passed"] is True
    capsys.readouterr()


@pytest.mark.slow
def test_run_embedding_certificates(tmp_path, capsys):
    out = tmp_path / "out"
    raw = {
        "experiment": "embedding",
        "sampling": {"N": 400, "n": 3},
        "estimator": {"quasimorphism": "exponent_sum", "p_schedule": [1]},
        "embedding": {"m": 2, "area": 0.2, "max_l1": 4},
    }
    assert cli(["run", _write(tmp_path, "emb.json", raw), "--out", str(out)]) == EXIT_OK
    [certs] = list(out.glob("*_certificates.json"))
    payload = json.loads(certs.read_text())
    assert payload["formula_grid"]["linear"] is True
    assert all(c["upper"] == sum(abs(v) for v in c["k"]) for c in payload["certificates"])
    capsys.readouterr()
