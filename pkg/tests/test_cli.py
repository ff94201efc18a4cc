import json
import math
import os
import subprocess
import sys

import numpy as np
import pytest

RUN = [sys.executable, "-m", "lgmm.cli"]


def run_cli(args, **kw):
    return subprocess.run(RUN + args, capture_output=True, text=True, **kw)


class TestSimulate:
    def test_s3_endpoint_csv(self, tmp_path):
        out = tmp_path / "run"
        r = run_cli(["simulate", "--manifold", "s3", "--scheme", "exp", "--paths", "50",
                     "--t", "0.5", "--dt", "0.001", "--seed", "7", "--out", str(out)])
        assert r.returncode == 0, r.stderr
        lines = (out / "endpoints.csv").read_text().splitlines()
        assert lines[0] == "path,a_re,a_im,b_re,b_im"
        assert len(lines) == 51
        row = [float(v) for v in lines[1].split(",")]
        assert sum(v * v for v in row[1:]) == pytest.approx(1.0, abs=1e-9)

    def test_rerun_bit_identical(self, tmp_path):
        args = ["simulate", "--manifold", "r3", "--scheme", "direct", "--paths", "20",
                "--t", "1.0", "--dt", "0.01", "--seed", "3"]
        r1 = run_cli(args + ["--out", str(tmp_path / "a")])
        r2 = run_cli(args + ["--out", str(tmp_path / "b")])
        assert r1.returncode == 0 and r2.returncode == 0
        a = (tmp_path / "a" / "endpoints.csv").read_bytes()
        b = (tmp_path / "b" / "endpoints.csv").read_bytes()
        assert a == b

    def test_thread_count_does_not_change_output(self, tmp_path):
        base = ["simulate", "--manifold", "h3", "--scheme", "halfspace", "--paths", "40",
                "--t", "0.2", "--dt", "0.01", "--seed", "5"]
        run_cli(base + ["--out", str(tmp_path / "a"), "--threads", "1"])
        run_cli(base + ["--out", str(tmp_path / "b"), "--threads", "4"])
        assert (tmp_path / "a" / "endpoints.csv").read_bytes() == \
            (tmp_path / "b" / "endpoints.csv").read_bytes()

    def test_manifest_checksums(self, tmp_path):
        import hashlib

        out = tmp_path / "m"
        run_cli(["simulate", "--manifold", "r3", "--scheme", "direct", "--paths", "5",
                 "--t", "0.1", "--dt", "0.01", "--seed", "1", "--out", str(out)])
        manifest = json.loads((out / "manifest.json").read_text())
        digest = hashlib.sha256((out / "endpoints.csv").read_bytes()).hexdigest()
        assert manifest["outputs"]["endpoints.csv"] == digest
        assert manifest["command"] == "simulate"
        assert sum(1 for f in os.listdir(out) if f == "manifest.json") == 1

    def test_invalid_pairing_exit_2(self, tmp_path):
        r = run_cli(["simulate", "--manifold", "s3", "--scheme", "halfspace",
                     "--paths", "5", "--t", "0.1", "--dt", "0.01",
                     "--out", str(tmp_path / "x")])
        assert r.returncode == 2

    def test_full_paths(self, tmp_path):
        out = tmp_path / "fp"
        r = run_cli(["simulate", "--manifold", "r3", "--scheme", "direct", "--paths", "3",
                     "--t", "0.1", "--n-steps", "10", "--seed", "2", "--out", str(out),
                     "--full-paths"])
        assert r.returncode == 0
        lines = (out / "paths.csv").read_text().splitlines()
        assert lines[0].startswith("path,step,t,")
        assert len(lines) == 1 + 3 * 11


class TestSde:
    def test_h3_wc_columns_and_region(self, tmp_path):
        out = tmp_path / "sde"
        r = run_cli(["sde", "--system", "h3-wc", "--paths", "100", "--t", "0.25",
                     "--dt", "0.001", "--seed", "1", "--out", str(out)])
        assert r.returncode == 0, r.stderr
        lines = (out / "endpoints.csv").read_text().splitlines()
        assert lines[0] == "path,w,c"
        data = np.loadtxt(lines[1:], delimiter=",")
        assert np.all(data[:, 1] >= 1.0)

    def test_noise_scale_zero_ode(self, tmp_path):
        out = tmp_path / "ode"
        r = run_cli(["sde", "--system", "s3-x", "--x0", "1.0", "--paths", "1",
                     "--t", "1.0", "--dt", "0.0001", "--noise-scale", "0",
                     "--out", str(out)])
        assert r.returncode == 0
        val = float((out / "endpoints.csv").read_text().splitlines()[1].split(",")[1])
        assert val == pytest.approx(math.exp(-1.5), abs=1e-3)

    def test_bad_dt_exit_2(self, tmp_path):
        r = run_cli(["sde", "--system", "bessel3", "--paths", "1", "--t", "1.0",
                     "--dt", "0.0003", "--out", str(tmp_path / "x")])
        assert r.returncode == 2


class TestFpsolve:
    def test_stationary_output(self, tmp_path):
        out = tmp_path / "fp"
        r = run_cli(["fpsolve", "--equation", "fp1-s3", "--nodes", "201",
                     "--init", "uniform", "--t", "5", "--dt", "0.005", "--out", str(out)])
        assert r.returncode == 0, r.stderr
        lines = (out / "density.csv").read_text().splitlines()
        assert lines[0] == "x,p"
        data = np.loadtxt(lines[1:], delimiter=",")
        target = (2 / math.pi) * np.sqrt(np.maximum(1 - data[:, 0] ** 2, 0))
        h = data[1, 0] - data[0, 0]
        assert np.sum(np.abs(data[:, 1] - target)) * h < 0.03
        assert "mass drift" in r.stdout

    def test_t_zero_returns_ic(self, tmp_path):
        out = tmp_path / "fp0"
        r = run_cli(["fpsolve", "--equation", "fp1-s3", "--nodes", "101",
                     "--init", "uniform", "--t", "0", "--out", str(out)])
        assert r.returncode == 0
        data = np.loadtxt((out / "density.csv").read_text().splitlines()[1:],
                          delimiter=",")
        assert np.allclose(data[:, 1], 0.5)

    def test_leakage_guard_exit_4(self, tmp_path):
        # wall close to the start: genuine mass reaches it and the run reports
        r = run_cli(["fpsolve", "--equation", "fp1-h3", "--nodes", "201",
                     "--lambda-max", "0.8", "--init", "mollified-delta",
                     "--t", "1.0", "--dt", "0.001", "--out", str(tmp_path / "leak")])
        assert r.returncode == 4
        assert "boundary leakage" in r.stdout

    def test_2d_stability_violation_exit_2(self, tmp_path):
        r = run_cli(["fpsolve", "--equation", "fp2-s3", "--nodes", "101",
                     "--init", "mollified-delta", "--t", "0.01", "--dt", "0.01",
                     "--out", str(tmp_path / "x")])
        assert r.returncode == 2
        assert "stability" in r.stderr


class TestVerifyAndDh:
    def test_dh_prints_measure(self):
        r = run_cli(["dh", "--family", "h3_class", "--parameter", str(math.log(2.0))])
        assert r.returncode == 0
        payload = json.loads(r.stdout)
        assert payload["support"] == pytest.approx([0.5, 2.0])
        assert payload["volume"] == pytest.approx(3 * math.pi)

    def test_verify_writes_report(self, tmp_path):
        out = tmp_path / "v"
        r = run_cli(["verify", "--check", "pitman", "--paths", "50000", "--t", "1.0",
                     "--dt", "0.005", "--seed", "11", "--out", str(out)])
        assert r.returncode == 0, r.stdout + r.stderr
        report = json.loads((out / "report-pitman.json").read_text())
        assert report["passed"] is True
        assert "PASS" in r.stdout

    def test_unknown_check_exit_2(self, tmp_path):
        r = run_cli(["verify", "--check", "nope", "--out", str(tmp_path / "x")])
        assert r.returncode == 2

    def test_config_file_with_flag_override(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("# pitman check\npaths = 40000\nt = 1.0\ndt = 0.005\nseed = 11\n")
        out = tmp_path / "v2"
        r = run_cli(["verify", "--check", "pitman", "--config", str(cfg),
                     "--paths", "50000", "--out", str(out)])
        assert r.returncode == 0, r.stdout + r.stderr
        report = json.loads((out / "report-pitman.json").read_text())
        prov = report["params"]["provenance"]
        assert prov["n_paths"] == 50000  # flag overrides the file
        assert prov["seed"] == 11        # unset flags come from the file

    def test_env_seed_default(self, tmp_path):
        env = dict(os.environ, LGMM_SEED="123")
        out1, out2 = tmp_path / "e1", tmp_path / "e2"
        subprocess.run(RUN + ["simulate", "--manifold", "r3", "--scheme", "direct",
                              "--paths", "5", "--t", "0.1", "--dt", "0.01",
                              "--out", str(out1)], env=env, capture_output=True)
        subprocess.run(RUN + ["simulate", "--manifold", "r3", "--scheme", "direct",
                              "--paths", "5", "--t", "0.1", "--dt", "0.01", "--seed", "123",
                              "--out", str(out2)], capture_output=True)
        assert (out1 / "endpoints.csv").read_bytes() == (out2 / "endpoints.csv").read_bytes()
