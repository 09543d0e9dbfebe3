import json
import subprocess
import sys

import pytest

RUN = [sys.executable, "-m", "medbn_lab"]


def cli(*args, env=None, timeout=600):
    import os

    full_env = dict(os.environ)
    if env:
        full_env.update(env)
    return subprocess.run(RUN + list(args), capture_output=True, text=True,
                          env=full_env, timeout=timeout)


# default task and arch (smaller ones undertrain and trip the pretrain
# accuracy contract); scenario sizes kept tiny for speed
FAST_TASK = []
FAST_RUN = ["--T", "2", "--n", "12", "--m", "2", "--steps", "5"]


class TestPretrain:
    def test_writes_checkpoint_and_reports_accuracy(self, tmp_path):
        out = tmp_path / "ckpt.json"
        r = cli("pretrain", "--out", str(out), *FAST_TASK)
        assert r.returncode == 0, r.stderr
        summary = json.loads(r.stdout)
        assert summary["source_accuracy"] >= 0.95
        doc = json.loads(out.read_text())
        assert doc["meta"]["source_accuracy"] >= 0.95

    def test_missing_out_is_usage_error(self):
        r = cli("pretrain")
        assert r.returncode == 2

    def test_same_seed_identical_bytes(self, tmp_path):
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        assert cli("pretrain", "--out", str(a), *FAST_TASK).returncode == 0
        assert cli("pretrain", "--out", str(b), *FAST_TASK).returncode == 0
        assert a.read_bytes() == b.read_bytes()


class TestRun:
    def test_csv_row_on_stdout(self):
        r = cli("run", "--estimator", "medbn", "--strategy", "tent:1e-3",
                "--attack", "targeted", "--scenario", "instant", *FAST_RUN)
        assert r.returncode == 0, r.stderr
        lines = r.stdout.strip().split("\n")
        assert lines[0].startswith("scenario,estimator,strategy,attack")
        assert len(lines) == 2
        assert lines[1].startswith("instant,medbn,tent:1e-3,targeted,2,12,2,")

    def test_attack_none_empty_asr(self):
        r = cli("run", "--attack", "none", *FAST_RUN)
        assert r.returncode == 0, r.stderr
        row = r.stdout.strip().split("\n")[1].split(",")
        assert row[7] == ""  # asr column
        assert row[9] != ""  # er_clean column

    def test_invalid_estimator_usage_error(self):
        r = cli("run", "--estimator", "groupnorm", *FAST_RUN)
        assert r.returncode == 2
        assert "estimator" in r.stderr

    def test_byte_identical_reruns(self):
        args = ["run", "--estimator", "tebn", "--attack", "indiscriminate",
                "--seeds", "3", *FAST_RUN]
        a = cli(*args)
        b = cli(*args)
        assert a.returncode == b.returncode == 0
        assert a.stdout == b.stdout

    def test_sidecar_and_out_files(self, tmp_path):
        out = tmp_path / "res.csv"
        side = tmp_path / "res.json"
        r = cli("run", "--out", str(out), "--sidecar", str(side), *FAST_RUN)
        assert r.returncode == 0, r.stderr
        assert out.read_text().startswith("scenario,")
        doc = json.loads(side.read_text())
        assert "runs" in doc and len(doc["runs"]) == 1
        assert doc["runs"][0]["stat_l1"]

    def test_seed_env_override(self):
        base = cli("run", "--seeds", "5", *FAST_RUN)
        via_env = cli("run", "--seeds", "9", *FAST_RUN,
                      env={"MEDBN_SEED": "5"})
        assert base.stdout == via_env.stdout

    def test_sweep_lists(self):
        r = cli("run", "--attack", "none", *FAST_TASK, "--T", "1",
                "--n", "8,12", "--mal-ratio", "0.25", "--steps", "2")
        assert r.returncode == 0, r.stderr
        lines = r.stdout.strip().split("\n")
        assert len(lines) == 3
        assert lines[1].split(",")[5:7] == ["8", "2"]
        assert lines[2].split(",")[5:7] == ["12", "3"]

    def test_config_file_merge(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"attack": "none", "T": 1, "n": "8",
                                   "m": "2", "steps": 2}))
        r = cli("run", "--config", str(cfg))
        assert r.returncode == 0, r.stderr
        assert r.stdout.strip().split("\n")[1].split(",")[4:7] == ["1", "8", "2"]
        # explicit flag wins over the config value
        r2 = cli("run", "--config", str(cfg), "--T", "2")
        assert r2.stdout.strip().split("\n")[1].split(",")[4] == "2"

    def test_unknown_config_key_rejected(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"preset": "fast"}))
        r = cli("run", "--config", str(cfg))
        assert r.returncode == 2
        assert "unknown config key" in r.stderr


class TestVerify:
    def test_default_clean_exit(self):
        r = cli("verify", "--trials", "2000", "--geomed-trials", "100")
        assert r.returncode == 0, r.stderr
        doc = json.loads(r.stdout)
        assert doc["violations"] == 0
        assert {p["property"] for p in doc["properties"]} >= {
            "mean_shift_linearity", "median_bounded_range",
            "geomed_shift_bound",
        }

    def test_negative_control_exits_one(self):
        r = cli("verify", "--trials", "500", "--geomed-trials", "50",
                "--faulty-median")
        assert r.returncode == 1
        assert json.loads(r.stdout)["violations"] > 0

    def test_alias_subcommand(self):
        r = cli("verify-theorems", "--trials", "500", "--geomed-trials", "50")
        assert r.returncode == 0, r.stderr

    def test_byte_identical_reruns(self):
        a = cli("verify", "--trials", "1000", "--geomed-trials", "100")
        b = cli("verify", "--trials", "1000", "--geomed-trials", "100")
        assert a.stdout == b.stdout


class TestGradcheckCmd:
    def test_default_passes(self):
        r = cli("gradcheck")
        assert r.returncode == 0, r.stderr
        doc = json.loads(r.stdout)
        assert doc["worst"] <= 1e-5

    def test_near_ties_flagged_not_failed(self):
        r = cli("gradcheck", "--estimators", "medbn", "--near-ties")
        assert r.returncode == 0, r.stderr
        doc = json.loads(r.stdout)
        assert sum(row["excluded"] for row in doc["medbn"]) > 0

    def test_unknown_layer_usage_error(self):
        r = cli("gradcheck", "--layers", "conv7")
        assert r.returncode == 2

    def test_byte_identical_reruns(self):
        a = cli("gradcheck", "--estimators", "tebn")
        b = cli("gradcheck", "--estimators", "tebn")
        assert a.stdout == b.stdout


class TestStatsDist:
    def test_emits_layer_records(self):
        r = cli("stats-dist", *FAST_TASK, "--n", "12", "--m", "3",
                "--steps", "5")
        assert r.returncode == 0, r.stderr
        doc = json.loads(r.stdout)
        assert len(doc["layers"]) == 2
        for rec in doc["layers"]:
            assert set(rec) >= {"mu_l1", "eta_l1", "sigma_l1", "rho_l1"}

    def test_requires_attack(self):
        r = cli("stats-dist", "--attack", "none", *FAST_TASK)
        assert r.returncode == 2

    def test_byte_identical_reruns(self):
        args = ["stats-dist", *FAST_TASK, "--n", "12", "--m", "3",
                "--steps", "3"]
        assert cli(*args).stdout == cli(*args).stdout
