import math
from pathlib import Path

import numpy as np
import pytest

from symplane import cli, io, pipeline
from symplane.evaluation import deviation_angle, sde
from symplane.geometry import PointCloud, SymmetryPlane
from symplane.pipeline import DetectConfig, detect, format_result, read_result
from symplane.synth import SynthSpec, make_model


@pytest.fixture(scope="module")
def model():
    return make_model(SynthSpec(n=1200, seed=11, pose=True))


@pytest.fixture(scope="module")
def result(model):
    return detect(model[0])


def test_detect_finds_plane(model, result):
    _, gt = model
    assert deviation_angle(result.plane.normal, gt.plane.normal) < 2.0
    assert abs(result.plane.offset - gt.plane.offset * np.sign(result.plane.normal @ gt.plane.normal)) < 0.02
    assert set(pipeline.STAGES) <= set(result.timing)
    assert result.n_points == 1200


def test_result_round_trip(tmp_path, result):
    path = tmp_path / "r.txt"
    pipeline.write_result(path, result)
    parsed = read_result(path)
    assert pipeline.plane_from_result(parsed).same_as(result.plane, atol=1e-15)
    assert np.array_equal(parsed["pairs"], result.correspondences.pairs)
    assert "total" not in parsed["timing"]
    assert "total" in read_result_from_text(tmp_path, format_result(result, inline_timing=True))["timing"]


def read_result_from_text(tmp_path, text):
    p = tmp_path / "inline.txt"
    p.write_text(text)
    return read_result(p)


def test_config_validation():
    for kw in ({"neighbors": 0}, {"k_eig": 1}, {"k_signs": 200}, {"q": 0}, {"sigma": -1.0}):
        with pytest.raises(ValueError):
            DetectConfig(**kw)


def test_coerce_config_values():
    assert cli.coerce_config_value("k_eig", "50") == 50
    assert cli.coerce_config_value("sigma", "0.1") == 0.1
    assert cli.coerce_config_value("anneal", "0.2,0.7,0.02") == (0.2, 0.7, 0.02)
    assert cli.coerce_config_value("anneal", "none") is None
    assert cli.coerce_config_value("refine", "false") is False
    with pytest.raises(cli.UsageError):
        cli.coerce_config_value("nope", "1")


def _synth(tmp_path, name="m", *extra):
    out = tmp_path / f"{name}.ply"
    assert cli.main(["synth", "--output", str(out), "--n", "1000", "--pose", "--seed", "3", *extra]) == 0
    return out


def test_cli_detect_deterministic_and_complete(tmp_path):
    cloud = _synth(tmp_path)
    assert (tmp_path / "m.gt.txt").exists()
    a, b = tmp_path / "a.txt", tmp_path / "b.txt"
    svg, timing = tmp_path / "d.svg", tmp_path / "t.txt"
    assert cli.main(["detect", "--input", str(cloud), "--output", str(a), "--plot", str(svg),
                     "--timing", str(timing)]) == 0
    assert cli.main(["detect", "--input", str(cloud), "--output", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert svg.read_text().startswith("<svg") and "total=" in timing.read_text()

    full = tmp_path / "full.ply"
    res = tmp_path / "c.txt"
    assert cli.main(["complete", "--input", str(cloud), "--output", str(full), "--result", str(res)]) == 0
    pts = io.read_cloud(full)
    assert len(pts) == 2000
    plane = pipeline.plane_from_result(read_result(res))
    assert sde(pts, plane) < 1e-12


def test_cli_eval(tmp_path):
    c1 = _synth(tmp_path, "one")
    manifest = tmp_path / "manifest.tsv"
    manifest.write_text(f"{c1.name}\t{c1.stem}.gt.txt\n# comment\n{c1.name}\tmissing.gt.txt\n")
    out = tmp_path / "ev"
    assert cli.main(["eval", "--input", str(manifest), "--output", str(out)]) == 0
    rows = (out / "metrics.csv").read_text().splitlines()
    assert len(rows) == 3
    assert rows[1].split(",")[3] == "true" or rows[1].split(",")[3] == "True"
    assert rows[2].split(",")[-1] != ""
    summary = io.read_keyvalue(out / "summary.txt")
    assert float(summary["tp"]) == 1 and float(summary["fn"]) == 1 and float(summary["failed_rows"]) == 1
    assert (out / "pr_curve.svg").exists()
    assert len((out / "pr_sweep.csv").read_text().splitlines()) == 21


def test_cli_eval_precomputed(tmp_path):
    c1 = _synth(tmp_path, "two")
    gt = io.read_keyvalue(tmp_path / "two.gt.txt")
    plane = io.plane_from_record(gt)
    res = tmp_path / "res.txt"
    res.write_text(f"[plane]\nnormal={io.format_value(plane.normal)}\noffset={io.format_value(plane.offset)}\n")
    manifest = tmp_path / "m.tsv"
    manifest.write_text(f"{c1}\t{tmp_path / 'two.gt.txt'}\t{res}\n")
    assert cli.main(["eval", "--input", str(manifest), "--output", str(tmp_path / "e")]) == 0
    rows = (tmp_path / "e" / "metrics.csv").read_text().splitlines()
    assert float(rows[1].split(",")[4]) < 1e-6


def test_cli_exit_codes(tmp_path):
    empty = tmp_path / "empty.xyz"
    empty.write_text("")
    out = str(tmp_path / "o.txt")
    assert cli.main(["detect", "--input", str(empty), "--output", out]) == 2
    assert cli.main(["detect", "--input", str(tmp_path / "nope.ply"), "--output", out]) == 2
    assert cli.main(["detect", "--bogus"]) == 2
    assert cli.main(["synth", "--output", out, "--gamma", "0.7"]) == 2
    (tmp_path / "blank.tsv").write_text("\n")
    assert cli.main(["eval", "--input", str(tmp_path / "blank.tsv"), "--output", str(tmp_path / "e")]) == 2
    # a flat grid has no keypoints: the pipeline fails with code 3
    g = np.stack(np.meshgrid(np.arange(30.0), np.arange(30.0)), -1).reshape(-1, 2)
    flat = tmp_path / "flat.xyz"
    io.write_cloud(flat, np.column_stack([g, np.zeros(len(g))]))
    assert cli.main(["detect", "--input", str(flat), "--output", out]) == 3


def test_cli_config_file_and_override(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("k_eig=40\nsigma=0.08\n")
    args = cli.build_parser().parse_args(["detect", "--input", "x", "--output", "y", "--config", str(cfg),
                                          "--sigma", "0.03"])
    c = cli.build_config(args)
    assert c.k_eig == 40 and c.sigma == 0.03
    cfg.write_text("k_eig=abc\n")
    args = cli.build_parser().parse_args(["detect", "--input", "x", "--output", "y", "--config", str(cfg)])
    with pytest.raises(cli.UsageError):
        cli.build_config(args)


def test_stage_timings_cover_wall_time(result):
    stages = sum(result.timing[s] for s in pipeline.STAGES)
    assert abs(stages - result.timing["total"]) <= 0.05 * result.timing["total"]
