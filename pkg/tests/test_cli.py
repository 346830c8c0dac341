"""Command-line entry points, including a full staged workflow."""

import json

import numpy as np
import pytest

from meshfusion.cli import main
from meshfusion.stl import read_stl_file

from oracles import tablet_face_count


def run(argv):
    assert main(argv) == 0


def test_tablet_writes_a_parsable_stl(tmp_path, capsys):
    out = tmp_path / "plate.stl"
    run(["tablet", "--width-mm", "40", "--height-mm", "30", "--mesh-size-mm", "10",
         "--out", str(out)])
    mesh = read_stl_file(out)
    assert mesh.n_f == tablet_face_count(0.04, 0.03, 0.01)
    report = json.loads(capsys.readouterr().out)
    assert report["n_f"] == mesh.n_f


def test_tablet_with_defect(tmp_path):
    out = tmp_path / "defective.stl"
    run(["tablet", "--width-mm", "40", "--height-mm", "30", "--mesh-size-mm", "5",
         "--defect-radius-mm", "6", "--format", "ascii", "--out", str(out)])
    mesh = read_stl_file(out)
    assert mesh.vertices[:, 2].max() == pytest.approx(0.006, abs=1e-12)


def test_staged_workflow_end_to_end(tmp_path, capsys):
    truth = tmp_path / "truth.stl"
    nominal = tmp_path / "nominal.stl"
    run(["tablet", "--width-mm", "60", "--height-mm", "40", "--mesh-size-mm", "5",
         "--defect-radius-mm", "8", "--out", str(truth)])
    run(["tablet", "--width-mm", "60", "--height-mm", "40", "--mesh-size-mm", "10",
         "--out", str(nominal)])

    clouds = tmp_path / "clouds"
    run(["simulate", "--mesh", str(truth), "--n-clouds", "3", "--seed", "5",
         "--res", "128", "72", "--out", str(clouds)])
    assert len(list(clouds.glob("*.ply"))) == 3

    work = tmp_path / "work"
    run(["estimate", "--mesh", str(nominal), "--clouds", str(clouds),
         "--out", str(work)])
    ckpts = sorted((work / "checkpoints").glob("state_*.json"))
    assert len(ckpts) == 3

    report_path = tmp_path / "report.json"
    capsys.readouterr()
    run(["evaluate", "--state", str(ckpts[-1]), "--truth-mesh", str(truth),
         "--nominal-mesh", str(nominal), "--out", str(report_path)])
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].startswith("selected faces:")
    report = json.loads(report_path.read_text())
    assert report["n_selected"] > 0
    assert np.isfinite(report["final_rmse"])


def test_pipeline_command(tmp_path, capsys):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({
        "tablet_width_mm": 60.0, "tablet_height_mm": 40.0,
        "mesh_size_mm": 10.0, "truth_mesh_size_mm": 5.0,
        "defect_radius_mm": 8.0, "resolution": [96, 54],
    }))
    out = tmp_path / "run"
    run(["pipeline", "--config", str(cfg), "--n-clouds", "3", "--seed", "2",
         "--out", str(out)])
    assert (out / "report.json").exists()
    stdout = capsys.readouterr().out
    assert "config hash:" in stdout
    assert "RMSE:" in stdout


def test_sweep_command(tmp_path):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({
        "tablet_width_mm": 60.0, "tablet_height_mm": 40.0,
        "mesh_size_mm": 10.0, "truth_mesh_size_mm": 5.0,
        "defect_radius_mm": 8.0, "resolution": [96, 54], "n_clouds": 2,
    }))
    out = tmp_path / "sweep"
    run(["sweep", "--config", str(cfg), "--axis", "heading",
         "--values", "0", "15", "--out", str(out)])
    lines = (out / "sweep.csv").read_text().splitlines()
    assert len(lines) == 3  # header + one row per heading


def test_cli_requires_a_subcommand():
    with pytest.raises(SystemExit):
        main([])
