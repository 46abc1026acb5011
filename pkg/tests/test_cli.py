import subprocess
import sys


def run_cli(*args, cwd=None):
    return subprocess.run(
        [sys.executable, "-m", "fedsim", *args],
        capture_output=True,
        text=True,
        cwd=cwd,
    )


def write_config(tmp_path, text):
    path = tmp_path / "experiment.ini"
    path.write_text(text, encoding="utf-8")
    return path


class TestRunCommand:
    def test_run_writes_a_results_store(self, tmp_path, small_config_text):
        cfg = write_config(tmp_path, small_config_text)
        out = tmp_path / "results"
        proc = run_cli("run", "--config", str(cfg), "--out", str(out))
        assert proc.returncode == 0, proc.stderr
        assert "run complete" in proc.stdout
        for name in ("manifest.json", "rounds.jsonl", "summary.json", "ledger.csv"):
            assert (out / name).exists()

    def test_seed_override_changes_results(self, tmp_path, small_config_text):
        cfg = write_config(tmp_path, small_config_text)
        a = run_cli("run", "--config", str(cfg), "--out", str(tmp_path / "a"), "--seed", "1")
        b = run_cli("run", "--config", str(cfg), "--out", str(tmp_path / "b"), "--seed", "2")
        assert a.returncode == 0 and b.returncode == 0
        assert (tmp_path / "a" / "rounds.jsonl").read_bytes() != (
            tmp_path / "b" / "rounds.jsonl"
        ).read_bytes()

    def test_invalid_config_exits_with_validation_code(self, tmp_path, small_config_text):
        cfg = write_config(tmp_path, small_config_text + "\n[mystery]\nx = 1\n")
        proc = run_cli("run", "--config", str(cfg))
        assert proc.returncode == 2
        assert "validation error" in proc.stderr

    def test_missing_config_exits_with_io_code(self, tmp_path):
        proc = run_cli("run", "--config", str(tmp_path / "nope.ini"))
        assert proc.returncode == 4
        assert "i/o error" in proc.stderr


class TestExportCommand:
    def test_export_after_run(self, tmp_path, small_config_text):
        cfg = write_config(tmp_path, small_config_text)
        out = tmp_path / "results"
        assert run_cli("run", "--config", str(cfg), "--out", str(out)).returncode == 0
        proc = run_cli("export", "--run", str(out), "--format", "csv")
        assert proc.returncode == 0, proc.stderr
        assert (out / "export" / "metrics.csv").exists()
        proc = run_cli("export", "--run", str(out), "--format", "jsonl")
        assert proc.returncode == 0
        assert (out / "export" / "metrics.jsonl").exists()

    def test_export_of_missing_run_fails_with_io_code(self, tmp_path):
        proc = run_cli("export", "--run", str(tmp_path / "ghost"), "--format", "csv")
        assert proc.returncode == 4


class TestSweepCommand:
    def test_depth_sweep(self, tmp_path, small_config_text):
        cfg = write_config(tmp_path, small_config_text.replace("rounds = 3", "rounds = 1"))
        out = tmp_path / "sweep"
        proc = run_cli(
            "sweep", "--config", str(cfg), "--axis", "L", "--values", "1,2", "--out", str(out)
        )
        assert proc.returncode == 0, proc.stderr
        assert (out / "L_1" / "rounds.jsonl").exists()
        assert (out / "L_2" / "rounds.jsonl").exists()
        assert (out / "sweep_summary.json").exists()

    def test_partial_failure_is_reported_but_not_fatal(self, tmp_path, small_config_text):
        cfg = write_config(tmp_path, small_config_text.replace("rounds = 3", "rounds = 1"))
        proc = run_cli("sweep", "--config", str(cfg), "--axis", "metric", "--values", "l2_based,bogus")
        assert proc.returncode == 0
        assert "FAILED" in proc.stdout


class TestOracleCheckCommand:
    def test_prints_one_line_per_suite(self):
        proc = run_cli("oracle-check", "--instances", "50", "--gradient-fixtures", "2")
        assert proc.returncode == 0, proc.stderr
        lines = [line for line in proc.stdout.strip().split("\n") if line]
        assert len(lines) == 3
        assert all(line.startswith("PASS") for line in lines)
