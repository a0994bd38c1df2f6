import csv
import xml.etree.ElementTree as ET

import pytest

from loadsim.cli import main


@pytest.fixture(scope="module")
def sweep_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "campaign"
    assert main(["sweep", "--piles", "gravel-30,sand-30", "--limit", "6", "--out", str(out)]) == 0
    return out


class TestCli:
    def test_sweep_writes_results(self, sweep_dir):
        with (sweep_dir / "results.csv").open() as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 12
        assert {r["soil"] for r in rows} == {"gravel", "sand"}
        assert [r["run_id"] for r in rows] == sorted(r["run_id"] for r in rows)

    def test_sweep_resume_after_partial(self, tmp_path, capsys):
        out = tmp_path / "c"
        base = ["sweep", "--piles", "gravel-30", "--limit", "4", "--out", str(out)]
        assert main(base + ["--max-runs", "2"]) == 0
        assert "incomplete" in capsys.readouterr().out
        assert not (out / "results.csv").exists()
        assert main(base + ["--resume"]) == 0
        assert "2 already done" in capsys.readouterr().out
        assert (out / "results.csv").exists()

    def test_run(self, capsys, tmp_path):
        series = tmp_path / "s.csv"
        assert main(["run", "--pile", "gravel-20", "--action", "0.6,0.4,0.4,0.4,1,1,-10,45",
                     "--log-series", str(series)]) == 0
        assert "m_load=" in capsys.readouterr().out
        assert series.read_text().startswith("t,x,v,")

    def test_poi(self, sweep_dir, capsys):
        assert main(["poi", "--results", str(sweep_dir), "--pile", "gravel-30"]) == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert lines[0].startswith("poi,run_id,alpha1")
        assert len(lines) == 5

    def test_analyze(self, sweep_dir, tmp_path, capsys):
        assert main(["analyze", "--results", str(sweep_dir), "--pile", "sand-30", "--scatter",
                     "--trends", "--out", str(tmp_path)]) == 0
        assert "rho" in capsys.readouterr().out
        svgs = sorted(tmp_path.glob("*.svg"))
        assert len(svgs) == 2
        for svg in svgs:
            assert ET.parse(svg).getroot().tag.endswith("svg")

    def test_trajectory(self, sweep_dir, tmp_path):
        with (sweep_dir / "results.csv").open() as fh:
            run_id = next(csv.DictReader(fh))["run_id"]
        assert main(["trajectory", "--run", run_id, "--results", str(sweep_dir),
                     "--out", str(tmp_path)]) == 0
        assert len(list(tmp_path.glob("*.csv"))) == 2

    def test_errors_exit_2(self, tmp_path, capsys):
        assert main(["poi", "--results", str(tmp_path), "--pile", "gravel-30"]) == 2
        assert main(["sweep", "--piles", "mud-30", "--out", str(tmp_path / "x")]) == 2
        bad = tmp_path / "bad.yaml"
        bad.write_text("machine: [1, 2\n")
        assert main(["run", "--config", str(bad), "--action", "0,0,0,0,0,0,0,0"]) == 2
        assert "error" in capsys.readouterr().err
