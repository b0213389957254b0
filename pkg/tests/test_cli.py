import csv
import shutil
import subprocess
import sys

import numpy as np
import pytest

from shlr.cli import main, peak_lifted_entries, read_config_file
from shlr.operators import hankel_dims
from shlr.tensor_io import read_cplx


@pytest.fixture
def pi_files(tmp_path):
    assert main(["phantom", "--kind", "pi", "--M", "32", "--N", "32", "--J", "2", "--out", str(tmp_path / "ph")]) == 0
    assert main(["mask", "--kind", "gauss", "--N", "32", "--rate", "0.5", "--acs", "8", "--seed", "1",
                 "--out", str(tmp_path / "mask")]) == 0
    return tmp_path


@pytest.fixture
def param_files(tmp_path):
    assert main(["phantom", "--kind", "t2", "--M", "4", "--N", "24", "--L", "15", "--J", "2",
                 "--out", str(tmp_path / "t2")]) == 0
    assert main(["mask", "--kind", "uniform_pep", "--N", "24", "--L", "15", "--R", "3", "--acs", "2",
                 "--out", str(tmp_path / "pm")]) == 0
    return tmp_path


def _recon_pi_args(d, *extra):
    return ["recon-pi", "--input", str(d / "ph_kspace.cplx"), "--mask", str(d / "mask.cplx"),
            "--reference", str(d / "ph_truth.cplx"), "--out", str(d / "r"), *extra]


def test_recon_pi_writes_outputs(pi_files):
    d = pi_files
    assert main(_recon_pi_args(d, "--method", "shlr-sv", "--max_outer", "5")) == 0
    for suffix in ("_recon.cplx", "_ssos.cplx", "_iterations.log", "_manifest.txt", "_metrics.csv"):
        assert (d / ("r" + suffix)).exists()
    assert read_cplx(d / "r_recon.cplx").shape == (32, 32, 2)
    rows = list(csv.DictReader(open(d / "r_metrics.csv")))
    assert rows[0]["method"] == "shlr-sv" and int(rows[0]["iters"]) == 5
    log = open(d / "r_iterations.log").read().splitlines()
    assert len(log) == 5 and log[0].startswith("iter=1 rel_change=")


def test_no_reference_no_metrics(pi_files):
    d = pi_files
    args = ["recon-pi", "--input", str(d / "ph_kspace.cplx"), "--mask", str(d / "mask.cplx"),
            "--method", "shlr", "--max_outer", "2", "--out", str(d / "n")]
    assert main(args) == 0
    assert not (d / "n_metrics.csv").exists()


def test_missing_input_exit_2(pi_files, capsys):
    d = pi_files
    assert main(["recon-pi", "--input", str(d / "nope.cplx"), "--mask", str(d / "mask.cplx")]) == 2
    assert "nope.cplx" in capsys.readouterr().err


def test_mask_mismatch_exit_3(pi_files):
    d = pi_files
    assert main(["mask", "--kind", "uniform", "--N", "30", "--R", "2", "--out", str(d / "m30")]) == 0
    assert main(["recon-pi", "--input", str(d / "ph_kspace.cplx"), "--mask", str(d / "m30.cplx")]) == 3


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_exit_4(pi_files):
    assert main(_recon_pi_args(pi_files, "--method", "shlr", "--tau", "1e12", "--tol", "1e-30")) == 4


def test_unknown_key_rejected(pi_files, tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("method=shlr\nlambda=3\n")
    assert main(["recon-pi", "--config", str(cfg)]) == 2


def test_unknown_flag_rejected():
    with pytest.raises(SystemExit) as exc:
        main(["recon-pi", "--lambda", "3"])
    assert exc.value.code == 2


def test_bad_value_rejected(pi_files):
    assert main(_recon_pi_args(pi_files, "--max_outer", "many")) == 2
    assert main(_recon_pi_args(pi_files, "--method", "sense")) == 2


def test_config_file_and_flag_override(pi_files, tmp_path):
    d = pi_files
    cfg = tmp_path / "run.cfg"
    cfg.write_text(f"# comment\ninput={d / 'ph_kspace.cplx'}\nmask={d / 'mask.cplx'}\nmethod=shlr\n"
                   f"max_outer=7\nout={d / 'c'}\n")
    assert main(["recon-pi", "--config", str(cfg), "--max-outer", "3"]) == 0
    manifest = read_config_file(str(d / "c_manifest.txt"))
    assert manifest["max_outer"] == "3" and manifest["method"] == "shlr"
    assert manifest["lam"] == "10000.0" and manifest["enable_vc"] == "False"
    assert len(open(d / "c_iterations.log").read().splitlines()) == 3


def test_manifest_rerun_is_bitwise(pi_files, tmp_path):
    d = pi_files
    assert main(_recon_pi_args(d, "--method", "shlr-sv", "--max_outer", "4")) == 0
    first = (d / "r_recon.cplx").read_bytes()
    shutil.copy(d / "r_manifest.txt", tmp_path / "again.cfg")
    (d / "r_recon.cplx").unlink()
    assert main(["recon-pi", "--config", str(tmp_path / "again.cfg")]) == 0
    assert (d / "r_recon.cplx").read_bytes() == first


def test_recon_param_with_t2_map(param_files):
    d = param_files
    args = ["recon-param", "--input", str(d / "t2_kspace.cplx"), "--tes", str(d / "t2_tes.txt"),
            "--mask", str(d / "pm.cplx"), "--reference", str(d / "t2_truth.cplx"), "--max_outer", "10",
            "--out", str(d / "p")]
    assert main(args) == 0
    assert read_cplx(d / "p_t2.cplx").shape == (4, 24)
    assert (d / "p_t2_valid.cplx").exists() and (d / "p_metrics.csv").exists()
    assert read_cplx(d / "p_ssos.cplx").shape == (4, 24, 15)


def test_recon_param_te_mismatch_exit_3(param_files):
    d = param_files
    (d / "short.txt").write_text("\n".join(str(8.8 * k) for k in range(1, 15)))
    args = ["recon-param", "--input", str(d / "t2_kspace.cplx"), "--tes", str(d / "short.txt"),
            "--mask", str(d / "pm.cplx")]
    assert main(args) == 3


def test_vp_without_vc_equals_p(param_files):
    d = param_files
    base = ["recon-param", "--input", str(d / "t2_kspace.cplx"), "--tes", str(d / "t2_tes.txt"),
            "--mask", str(d / "pm.cplx"), "--max_outer", "8", "--t2map", "false"]
    assert main(base + ["--method", "shlr-p", "--out", str(d / "a")]) == 0
    assert main(base + ["--method", "shlr-vp", "--enable_vc", "false", "--out", str(d / "b")]) == 0
    assert (d / "a_recon.cplx").read_bytes() == (d / "b_recon.cplx").read_bytes()


def test_t2fit_and_metrics(param_files, pi_files):
    d = param_files
    assert main(["t2fit", "--input", str(d / "t2_truth.cplx"), "--tes", str(d / "t2_tes.txt"),
                 "--out", str(d / "fit")]) == 0
    fitted, truth = read_cplx(d / "fit.cplx").real, read_cplx(d / "t2_t2.cplx").real
    assert np.max(np.abs(fitted - truth)[truth > 0]) < 1e-3
    p = pi_files
    assert main(["metrics", "--reference", str(p / "ph_truth.cplx"), "--input", str(p / "ph_truth.cplx"),
                 "--out", str(p / "score")]) == 0
    row = list(csv.DictReader(open(p / "score.csv")))[0]
    assert float(row["rlne"]) == 0 and float(row["mssim"]) == pytest.approx(1)


def test_bench_rows_and_determinism(tmp_path):
    args = ["bench", "--sizes", "32,64", "--methods", "shlr,shlr-sv", "--max_outer", "3"]
    assert main(args + ["--out", str(tmp_path / "b1")]) == 0
    assert main(args + ["--out", str(tmp_path / "b2")]) == 0
    r1 = list(csv.DictReader(open(tmp_path / "b1.csv")))
    r2 = list(csv.DictReader(open(tmp_path / "b2.csv")))
    assert list(r1[0]) == ["size", "method", "iters", "wall_seconds", "peak_lifted_entries"]
    assert [(r["size"], r["method"]) for r in r1] == [("32", "shlr"), ("32", "shlr-sv"), ("64", "shlr"), ("64", "shlr-sv")]
    assert [r["iters"] for r in r1] == [r["iters"] for r in r2]
    assert r1[3]["peak_lifted_entries"] == str(23 * 2 * 2 * (64 - 23 + 1))


def test_peak_lifted_entries_at_256():
    peak = peak_lifted_entries(256, 256, 4, 23, 23, True)
    assert peak == 23 * 1872 == 43056
    _, _, br, bc = hankel_dims(256, 256, 4, 23)
    assert peak / (br * bc) < 1e-3


def test_module_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "shlr", "mask", "--kind", "uniform", "--N", "16", "--R", "2",
                          "--out", str(tmp_path / "u")], capture_output=True, text=True)
    assert out.returncode == 0
    assert read_cplx(tmp_path / "u.cplx").shape == (16,)
