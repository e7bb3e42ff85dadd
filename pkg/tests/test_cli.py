import json
import subprocess
import sys

import numpy as np
import pytest

import encodebench as eb
from encodebench.cli import main


def _lines(capsys):
    return [json.loads(line) for line in
            capsys.readouterr().out.strip().splitlines()]


class TestSynth:
    def test_writes_dataset(self, tmp_path, capsys):
        code = main(["synth", "--preset", "pereira-exp2", "--seed", "3",
                     "--units", "10", "--output", str(tmp_path / "d")])
        assert code == 0
        line = _lines(capsys)[0]
        assert line["event"] == "synth"
        dataset = eb.load_manifest(tmp_path / "d" / "manifest.json")
        assert dataset.recording.n_samples == 216
        assert dataset.recording.n_units == 10

    def test_seed_determinism(self, tmp_path, capsys):
        for name in ("a", "b"):
            assert main(["synth", "--preset", "fedorenko", "--seed", "9",
                         "--units", "6", "--output",
                         str(tmp_path / name)]) == 0
        bytes_a = (tmp_path / "a" / "responses.bbsm").read_bytes()
        bytes_b = (tmp_path / "b" / "responses.bbsm").read_bytes()
        assert bytes_a == bytes_b

    def test_missing_output_is_data_error(self, capsys):
        assert main(["synth", "--preset", "blank"]) == 2


class TestFeatures:
    def test_oasm_from_blocks(self, tmp_path, capsys):
        out = tmp_path / "oasm.bbsm"
        code = main(["features", "--kind", "oasm", "--blocks", "0,0,1,1",
                     "--sigma", "1.0", "--output", str(out)])
        assert code == 0
        matrix = eb.load_matrix(out)
        assert matrix.shape == (4, 4)
        assert np.all(matrix[:2, 2:] == 0.0)

    def test_sp(self, tmp_path, capsys):
        out = tmp_path / "sp.bbsm"
        assert main(["features", "--kind", "sp", "--passage-lengths", "4,3",
                     "--output", str(out)]) == 0
        assert eb.load_matrix(out).shape == (7, 4)

    def test_sl(self, tmp_path, capsys):
        out = tmp_path / "sl.bbsm"
        assert main(["features", "--kind", "sl", "--word-counts", "7,12",
                     "--output", str(out)]) == 0
        np.testing.assert_array_equal(eb.load_matrix(out), [[7.0], [12.0]])

    def test_wp(self, tmp_path, capsys):
        out = tmp_path / "wp.bbsm"
        assert main(["features", "--kind", "wp", "--sentences", "2",
                     "--output", str(out)]) == 0
        assert eb.load_matrix(out).shape == (16, 9)

    def test_missing_args_exit_2(self, tmp_path, capsys):
        assert main(["features", "--kind", "oasm",
                     "--output", str(tmp_path / "x.bbsm")]) == 2


class TestSplit:
    def test_plan_emitted(self, tmp_path, capsys):
        assert main(["synth", "--preset", "pereira-exp1", "--units", "5",
                     "--output", str(tmp_path / "d")]) == 0
        out = tmp_path / "plan.json"
        code = main(["split", "--manifest", str(tmp_path / "d" / "manifest.json"),
                     "--scheme", "pereira", "--output", str(out)])
        assert code == 0
        doc = json.loads(out.read_text())
        assert len(doc["outer_folds"]) == 8
        assert len(doc["outer_folds"][0]["inner_folds"]) == 7
        plan = eb.SplitPlan.from_dict(doc)
        eb.validate_plan(plan)


class TestExitCodes:
    def test_usage_error_is_1(self, capsys):
        assert main(["fit", "--bogus"]) == 1
        assert main(["not-a-command"]) == 1

    def test_missing_manifest_is_2_without_partial_outputs(self, tmp_path,
                                                           capsys):
        out = tmp_path / "fit"
        code = main(["fit", "--manifest", str(tmp_path / "nope.json"),
                     "--scheme", "grouped", "--output", str(out)])
        assert code == 2
        assert not out.exists()


class TestFit:
    def test_fit_writes_result(self, tmp_path, capsys):
        assert main(["synth", "--preset", "pereira-exp2", "--units", "8",
                     "--output", str(tmp_path / "d")]) == 0
        out = tmp_path / "fit"
        code = main(["fit", "--manifest", str(tmp_path / "d" / "manifest.json"),
                     "--scheme", "pereira", "--max-iters", "5",
                     "--patience", "5", "--output", str(out)])
        assert code == 0
        assert (out / "fit.json").exists()
        assert (out / "test_predictions.bbsm").exists()
        line = _lines(capsys)[-1]
        assert line["event"] == "fit"
        assert set(line["bands"]) == {"spsl"}


class TestCompare:
    def test_shuffle_demo_contrast(self, tmp_path, capsys):
        assert main(["synth", "--preset", "shuffle-demo", "--seed", "7",
                     "--units", "24", "--participants", "4",
                     "--output", str(tmp_path / "d")]) == 0
        config = {
            "manifest": str(tmp_path / "d" / "manifest.json"),
            "split": {"scheme": "pereira", "mode": "both", "shuffle_seed": 7},
            "oasm_sigma": 2.0,
            "spaces": [{"name": "OASM", "members": ["OASM"], "band": "oasm"}],
            "families": [{"name": "main", "spaces": ["OASM"]}],
        }
        cfg_path = tmp_path / "config.json"
        cfg_path.write_text(json.dumps(config))
        out = tmp_path / "report"
        code = main(["compare", "--config", str(cfg_path),
                     "--output", str(out)])
        assert code == 0
        doc = json.loads((out / "report.json").read_text())
        shuffled = doc["modes"]["shuffled"]["main"]["subsets"]["OASM"]["mean_r2"]
        contiguous = doc["modes"]["contiguous"]["main"]["subsets"]["OASM"]["mean_r2"]
        assert shuffled - contiguous >= 0.25

        # report subcommand reads it back
        code = main(["report", "--input", str(out)])
        assert code == 0
        lines = _lines(capsys)
        assert any(line.get("event") == "report-family" for line in lines)

    def test_config_without_output_is_data_error(self, tmp_path, capsys):
        cfg_path = tmp_path / "c.json"
        cfg_path.write_text(json.dumps({
            "manifest": "nope.json",
            "split": {"scheme": "grouped"},
            "spaces": [], "families": [],
        }))
        assert main(["compare", "--config", str(cfg_path)]) == 2


class TestOasmSweep:
    def test_sweep_runs(self, tmp_path, capsys):
        assert main(["synth", "--preset", "pereira-exp2", "--units", "6",
                     "--autocorr-sigma", "1.0", "--signal-scale", "0.0",
                     "--output", str(tmp_path / "d")]) == 0
        out = tmp_path / "sweep"
        code = main(["oasm-sweep", "--manifest",
                     str(tmp_path / "d" / "manifest.json"),
                     "--scheme", "grouped", "--mode", "shuffled",
                     "--n-outer", "4", "--n-inner", "2",
                     "--output", str(out)])
        assert code == 0
        doc = json.loads((out / "sweep.json").read_text())
        assert len(doc["grid"]) == 50
        assert doc["grid"][0] == 0.1 and doc["grid"][-1] == 5.0


class TestThreads:
    def test_env_fallback(self, monkeypatch):
        from encodebench.cli import _resolve_threads
        monkeypatch.setenv("ENCODEBENCH_THREADS", "3")
        assert _resolve_threads(None) == 3
        assert _resolve_threads(5) == 5
        monkeypatch.delenv("ENCODEBENCH_THREADS")
        assert _resolve_threads(None) >= 1


class TestOutputContainment:
    def test_synth_writes_only_under_output(self, tmp_path, capsys,
                                            monkeypatch):
        workdir = tmp_path / "cwd"
        workdir.mkdir()
        monkeypatch.chdir(workdir)
        out = tmp_path / "out"
        assert main(["synth", "--preset", "pereira-exp2", "--units", "4",
                     "--output", str(out)]) == 0
        assert list(workdir.iterdir()) == []
        assert (out / "manifest.json").exists()


def test_module_entrypoint_runs():
    proc = subprocess.run(
        [sys.executable, "-m", "encodebench", "--help"],
        capture_output=True, text=True)
    assert proc.returncode == 0
    assert "synth" in proc.stdout
