import json
import math
import shutil
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from ssm_mirfs import __version__
from ssm_mirfs.cli import EXIT_CONFIG, EXIT_NUMERIC, EXIT_OK, RunConfig, load_report, main
from ssm_mirfs.core import ObservationSeq
from ssm_mirfs.diagnostics import ContractionReport
from ssm_mirfs.inference import FitResult
from ssm_mirfs.mclab import McReport
from ssm_mirfs.models import ararch_closed_form_beta1
from ssm_mirfs.models.sv import LOG_CHI2_VAR

FIX = Path(__file__).parent / "fixtures"
GOLDEN = json.loads((FIX / "golden.json").read_text())


def write_config(tmp_path, cfg: dict, name="cfg.json") -> str:
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


LINGAUSS_SPEC = {"alpha": 0.8, "sigma_eta2": 1.0, "sigma_eps2": 1.0}


# -- simulate -------------------------------------------------------------------------------------
def test_simulate_is_deterministic(tmp_path, capsys):
    cfg = write_config(tmp_path, {"model": "lingauss", "spec": LINGAUSS_SPEC})
    for d in ("a", "b"):
        code, out, _ = run(capsys, "simulate", cfg, "--n", 100, "--seed", 1, "--out-dir", tmp_path / d)
        assert code == EXIT_OK
    a = (tmp_path / "a" / "sim_obs.csv").read_text()
    assert a == (tmp_path / "b" / "sim_obs.csv").read_text()
    assert len(a.splitlines()) == 101
    hidden = (tmp_path / "a" / "sim_hidden.csv").read_text().splitlines()
    assert hidden[0] == "x_0" and len(hidden) == 101
    doc = json.loads(out)
    assert doc["seed"] == 1 and doc["version"] == __version__ and doc["result"]["n"] == 100


def test_simulate_requires_seed(tmp_path, capsys):
    cfg = write_config(tmp_path, {"model": "lingauss", "spec": LINGAUSS_SPEC})
    code, _, err = run(capsys, "simulate", cfg, "--n", 10)
    assert code == EXIT_CONFIG and "--seed" in err


def test_invalid_model_tag_exits_2_with_usage(tmp_path, capsys):
    cfg = write_config(tmp_path, {"model": "arma", "spec": {}})
    code, _, err = run(capsys, "simulate", cfg, "--n", 10, "--seed", 0)
    assert code == EXIT_CONFIG
    assert "usage:" in err and "arma" in err


def test_sv_log_square_variance(tmp_path, capsys):
    spec = {"alpha": 0.9, "sigma_eta2": 0.1, "omega": -0.5}
    cfg = write_config(tmp_path, {"model": "sv", "spec": spec})
    code, _, _ = run(capsys, "simulate", cfg, "--n", 10_000, "--seed", 5, "--out-dir", tmp_path)
    assert code == EXIT_OK
    y = ObservationSeq.from_csv(tmp_path / "sim_obs.csv").scalar()
    target = 0.1 / (1 - 0.9**2) + LOG_CHI2_VAR
    assert abs(np.var(np.log(y**2), ddof=1) / target - 1) < 0.05


# -- loglik ---------------------------------------------------------------------------------------
def test_loglik_finite_state_golden(capsys):
    code, out, _ = run(capsys, "loglik", FIX / "msar.json")
    assert code == EXIT_OK
    assert abs(json.loads(out)["result"]["loglik"] - GOLDEN["msar_loglik"]) < 1e-12


def test_loglik_lingauss_golden(capsys):
    code, out, _ = run(capsys, "loglik", FIX / "lingauss.json", "--increments")
    assert code == EXIT_OK
    res = json.loads(out)["result"]
    assert abs(res["loglik"] / GOLDEN["lingauss_loglik"] - 1) < 1e-4
    assert len(res["increments"]) == res["n_obs"] == 300


def test_loglik_theta_override(tmp_path, capsys):
    _, base, _ = run(capsys, "loglik", FIX / "lingauss.json")
    _, moved, _ = run(capsys, "loglik", FIX / "lingauss.json", "--theta", '{"alpha": 0.5}')
    assert json.loads(moved)["result"]["theta"]["alpha"] == 0.5
    assert json.loads(moved)["result"]["loglik"] != json.loads(base)["result"]["loglik"]
    code, _, _ = run(capsys, "loglik", FIX / "lingauss.json", "--theta", '{"gamma": 0.5}')
    assert code == EXIT_CONFIG


def test_loglik_empty_data_exits_2(tmp_path, capsys):
    (tmp_path / "empty.csv").write_text("xi_0\n")
    cfg = write_config(tmp_path, {"model": "lingauss", "spec": LINGAUSS_SPEC, "data": "empty.csv"})
    code, _, _ = run(capsys, "loglik", cfg)
    assert code == EXIT_CONFIG


def test_loglik_filter_collapse_exits_3(tmp_path, capsys):
    # an observation far outside a narrow explicit grid leaves no emission mass
    (tmp_path / "far.csv").write_text("xi_0\n0.0\n1e6\n")
    cfg = write_config(
        tmp_path, {"model": "lingauss", "spec": LINGAUSS_SPEC, "grid": {"lo": -1, "hi": 1, "G": 21}, "data": "far.csv"}
    )
    code, _, err = run(capsys, "loglik", cfg)
    assert code == EXIT_NUMERIC and "numeric failure" in err


@pytest.mark.parametrize(
    "cfg",
    [
        {"model": "lingauss", "spec": LINGAUSS_SPEC, "data": "simulate:{\"n\": 0, \"seed\": 1}"},
        {"model": "lingauss", "spec": LINGAUSS_SPEC, "data": "simulate:{\"n\": 5}"},
        {"model": "lingauss", "spec": LINGAUSS_SPEC, "grid": {"lo": 0, "hi": 1}},
        {"model": "lingauss", "spec": {**LINGAUSS_SPEC, "alpha": 1.5}},
        {"model": "lingauss", "spec": LINGAUSS_SPEC, "extra": 1},
        {"model": "msar", "spec": {"p11": 0.9}},
        [],
    ],
)
def test_bad_configs_exit_2(tmp_path, capsys, cfg):
    code, _, _ = run(capsys, "loglik", write_config(tmp_path, cfg))
    assert code == EXIT_CONFIG


def test_missing_config_file_exits_2(tmp_path, capsys):
    code, _, _ = run(capsys, "loglik", tmp_path / "nope.json")
    assert code == EXIT_CONFIG


def test_finite_model_rejects_explicit_grid(tmp_path, capsys):
    cfg = json.loads((FIX / "msar.json").read_text())
    cfg["grid"] = {"lo": -1, "hi": 1, "G": 11}
    cfg["data"] = str(FIX / "msar_obs.csv")
    code, _, _ = run(capsys, "loglik", write_config(tmp_path, cfg))
    assert code == EXIT_CONFIG


# -- fit ------------------------------------------------------------------------------------------
def test_fit_ararch_reproduces_closed_form(tmp_path, capsys):
    out = tmp_path / "fit.json"
    code, _, _ = run(capsys, "fit", FIX / "ararch.json", "--out", out)
    assert code == EXIT_OK
    doc = load_report(out.read_text())
    fit = doc["result"]
    assert isinstance(fit, FitResult) and fit.converged and fit.names == ("beta1",)
    cfg = doc["config"]
    obs = ObservationSeq.from_csv(FIX / "ararch_obs.csv")
    assert abs(fit.theta_hat["beta1"] - ararch_closed_form_beta1(cfg.theta(), obs)) < 1e-6


def test_fit_flags_override_options(tmp_path, capsys):
    code, out, _ = run(capsys, "fit", FIX / "lingauss.json", "--max-iter", 1, "--tol-grad", 1e-9, "--theta", '{"alpha": 0.5}')
    assert code == EXIT_OK
    doc = json.loads(out)
    assert doc["fit_options"]["max_iter"] == 1 and doc["fit_options"]["tol_grad"] == 1e-9
    assert doc["result"]["converged"] is False


# -- diagnose -------------------------------------------------------------------------------------
def test_diagnose_reports_gaussian_constant(tmp_path, capsys):
    cfg = write_config(tmp_path, {"model": "lingauss", "spec": LINGAUSS_SPEC})
    code, out, _ = run(capsys, "diagnose", cfg, "--reps", 50, "--n-steps", 20)
    assert code == EXIT_OK
    doc = load_report(out)
    rep = doc["result"]
    assert isinstance(rep, ContractionReport)
    assert abs(rep.g_theta_sup - 0.2820948) < 1e-6
    assert doc["seed"] == 0


# -- mc -------------------------------------------------------------------------------------------
def test_mc_smoke_under_a_minute(tmp_path, capsys):
    cfg = write_config(tmp_path, {"model": "lingauss", "spec": LINGAUSS_SPEC})
    t0 = time.perf_counter()
    code, out, _ = run(capsys, "mc", cfg, "--reps", 10, "--n", 500, "--seed", 3, "--workers", 1, "--csv", tmp_path / "s.csv")
    assert time.perf_counter() - t0 < 60
    assert code == EXIT_OK
    doc = load_report(out)
    assert isinstance(doc["result"], McReport) and doc["result"].reps == 10
    assert doc["seed"] == 3 and doc["workers"] == 1
    assert len((tmp_path / "s.csv").read_text().splitlines()) == 11


def test_mc_is_deterministic_and_needs_seed(tmp_path, capsys):
    cfg = write_config(tmp_path, {"model": "ararch", "spec": {"alpha0": 0.2, "alpha1": 0.5, "beta0": 0.1, "beta1": 0.5}})
    args = ("mc", cfg, "--experiment", "mle", "--reps", 3, "--n", 300, "--workers", 1)
    _, a, _ = run(capsys, *args, "--seed", 4)
    _, b, _ = run(capsys, *args, "--seed", 4)
    assert json.loads(a)["result"] == json.loads(b)["result"]
    code, _, _ = run(capsys, *args)
    assert code == EXIT_CONFIG


def test_mc_fisher_experiment(tmp_path, capsys):
    cfg = write_config(tmp_path, {"model": "ararch", "spec": {"alpha0": 0.2, "alpha1": 0.5, "beta0": 0.1, "beta1": 0.5}})
    code, out, _ = run(capsys, "mc", cfg, "--experiment", "fisher", "--reps", 2, "--n", 600, "--seed", 1, "--workers", 1)
    assert code == EXIT_OK
    doc = load_report(out)
    fisher = doc["result"]["fisher"]
    assert np.all(np.linalg.eigvalsh(np.array(fisher["outer_product"])) > 0)


# -- documents and entry point --------------------------------------------------------------------
def test_config_round_trip():
    raw = json.loads((FIX / "ararch.json").read_text())
    cfg = RunConfig.from_dict(raw)
    assert RunConfig.from_dict(cfg.to_dict()) == cfg


def test_console_script_runs(tmp_path):
    exe = shutil.which("ssm-mirfs")
    cmd = [exe] if exe else [sys.executable, "-m", "ssm_mirfs.cli"]
    res = subprocess.run([*cmd, "loglik", str(FIX / "msar.json")], capture_output=True, text=True, timeout=120)
    assert res.returncode == 0
    assert math.isclose(json.loads(res.stdout)["result"]["loglik"], GOLDEN["msar_loglik"], rel_tol=0, abs_tol=1e-12)
    res = subprocess.run([*cmd, "--version"], capture_output=True, text=True, timeout=60)
    assert __version__ in res.stdout
