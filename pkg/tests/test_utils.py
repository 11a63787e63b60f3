import logging
from pathlib import Path

import numpy as np
import pytest

from core.config import Settings, SolverConfig, StabilizationRule
from utils.file_manager import FileManager, RunManifest, fmt
from utils.progress_tracker import ProgressTracker


class TestFileManager:
    def test_fmt_keeps_full_precision(self):
        assert fmt(0.1) == "0.10000000000000001"
        assert fmt(np.float64(2.0)) == "2"
        assert fmt(np.int64(7)) == 7
        assert fmt("p") == "p"

    def test_csv_round_trip(self, tmp_path):
        path = str(tmp_path / "table.csv")
        FileManager.write_csv(path, ["k", "err"], [[0, 1.0 / 3.0], [1, np.float64(1e-12)]])
        rows = FileManager.read_csv(path)
        assert float(rows[0]["err"]) == 1.0 / 3.0
        assert rows[1] == {"k": "1", "err": "9.9999999999999998e-13"}

    def test_manifest_carries_version(self, tmp_path):
        FileManager.create_output_folder(str(tmp_path / "nested" / "out"))
        path = FileManager.write_manifest(str(tmp_path / "nested" / "out"),
                                          RunManifest(command="solve", p=3, timings_ms={"solve": 1.5}))
        assert path.endswith("manifest.json")
        manifest = RunManifest.model_validate_json(Path(path).read_text(encoding="utf-8"))
        assert manifest.version
        assert manifest.timings_ms == {"solve": 1.5}


class TestProgressTracker:
    def test_phase_accumulates(self):
        tracker = ProgressTracker("test")
        for _ in range(2):
            with tracker.phase("assemble"):
                pass
        assert set(tracker.timings) == {"assemble"}
        assert tracker.timings["assemble"] >= 0.0

    def test_tick_is_throttled(self, caplog):
        tracker = ProgressTracker("pcg", interval=3600.0)
        with caplog.at_level(logging.INFO):
            tracker.tick(1, 0.5)
        assert "⏳" not in caplog.text
        tracker.interval = 0.0
        with caplog.at_level(logging.INFO):
            tracker.tick(2, 0.25)
        assert "iteration 2" in caplog.text

    @pytest.mark.parametrize("seconds, text", [(12.34, "12.3s"), (125, "2m 5s"), (7380, "2h 3m")])
    def test_format_time(self, seconds, text):
        assert ProgressTracker._format_time(seconds) == text


class TestConfig:
    def test_tau(self):
        assert StabilizationRule(s=-1, c=2.0).tau(0.25) == pytest.approx(8.0)
        assert StabilizationRule().tau(0.1) == 1.0

    def test_inexact_local_solver_forces_flexible(self):
        assert SolverConfig(local_solver="cg:1e-3").flexible
        assert not SolverConfig().flexible

    def test_bad_local_solver(self):
        with pytest.raises(ValueError):
            SolverConfig(local_solver="gmres")

    def test_environment_defaults(self, monkeypatch):
        monkeypatch.setenv("HDG_TOL", "1e-6")
        monkeypatch.setenv("HDG_GRID", "4,4,1")
        config = Settings.solver_config(maxit=50, tol=None)
        assert config.tol == 1e-6
        assert config.grid == (4, 4, 1)
        assert config.maxit == 50

    def test_stabilization_advisory(self, caplog):
        assert StabilizationRule(s=-1).check_advisory([0.5, 0.01])
        with caplog.at_level(logging.WARNING):
            assert not StabilizationRule(c=20.0).check_advisory([1.0])
        assert "tau*h" in caplog.text
