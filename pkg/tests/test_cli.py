import json

import numpy as np
import pytest

from cpia.actionlog import ActionLog
from cpia.cli import main
from cpia.tensor import TensorArchive


@pytest.fixture(scope="module")
def toydir(tmp_path_factory):
    d = tmp_path_factory.mktemp("toy")
    assert main(["toy-net", "--out", str(d)]) == 0
    return d


def _run(toydir, tmp_path, *argv):
    return main([argv[0], "--config", str(toydir / "config.json"), "--out", str(tmp_path),
                 *argv[1:]])


def test_toy_net_files(toydir):
    for name in ("toy_transformer.json", "toy_transformer.cpia", "input.cpia", "rois.json",
                 "mask_person.png", "mask_dog.png", "config.json"):
        assert (toydir / name).exists()


def test_flush_full_channel_is_plain_forward(toydir, tmp_path):
    assert _run(toydir, tmp_path, "flush", "--layer", "2", "--tau", "16") == 0
    assert (tmp_path / "flush.ppm").read_bytes() == (tmp_path / "raw.ppm").read_bytes()


def test_flush_tau_one_coverage_sums_to_one(toydir, tmp_path):
    assert _run(toydir, tmp_path, "flush", "--tau", "1") == 0
    lines = (tmp_path / "coverage.csv").read_text().splitlines()
    assert lines[0] == "channel,coverage"
    assert sum(float(ln.split(",")[1]) for ln in lines[1:]) == pytest.approx(1.0)
    summary = json.loads((tmp_path / "run_summary.json").read_text())
    assert {"config_effective", "artifact_list", "stop_reasons", "timings"} <= set(summary)


def test_layer_out_of_range(toydir, tmp_path, capsys):
    assert _run(toydir, tmp_path, "flush", "--layer", "1") == 2
    assert "layer out of range" in capsys.readouterr().err


def test_config_and_io_errors(toydir, tmp_path):
    assert _run(toydir, tmp_path, "stroke", "--sensitivity", "1.5") == 2
    assert main(["flush", "--out", str(tmp_path), "--tau", "1"]) == 2  # no inputs at all
    assert main(["flush", "--activation", str(tmp_path / "missing.cpia"), "--tau", "1",
                 "--out", str(tmp_path)]) == 3


def test_stroke_degenerate_equals_flush(toydir, tmp_path):
    a, b = tmp_path / "flush", tmp_path / "stroke"
    assert _run(toydir, a, "flush", "--tau", "2") == 0
    assert _run(toydir, b, "stroke", "--tau", "2", "--stroke-size", "0", "--penetration", "1",
                "--channel-cost", "0", "--no-movement", "--max-strokes", "0") == 0
    # --max-strokes 0 must stop before any action
    assert len(ActionLog.read(b / "actions.ndjson")) == 0
    cfg = json.loads((toydir / "config.json").read_text())
    cfg["stop"] = {"response_ratio": None}
    (tmp_path / "exhaust.json").write_text(json.dumps(
        {**cfg, "network": str(toydir / cfg["network"]), "input": str(toydir / cfg["input"]),
         "rois": None}))
    assert main(["stroke", "--config", str(tmp_path / "exhaust.json"), "--out", str(b),
                 "--tau", "2", "--stroke-size", "0", "--penetration", "1", "--channel-cost", "0",
                 "--no-movement"]) == 0
    assert (a / "mask.cpia").read_bytes() == (b / "mask.cpia").read_bytes()


def test_stroke_max_strokes(toydir, tmp_path):
    assert _run(toydir, tmp_path, "stroke", "--max-strokes", "5", "--frame-every", "2") == 0
    log = ActionLog.read(tmp_path / "actions.ndjson")
    assert len(log) == 5 and log.stop_reason == "max_strokes"
    assert sorted(p.name for p in (tmp_path / "frames").iterdir()) == [
        "frame_000000.ppm", "frame_000001.ppm"]


def test_stroke_replay_and_tamper(toydir, tmp_path, capsys):
    assert _run(toydir, tmp_path, "stroke") == 0
    log, act = str(tmp_path / "actions.ndjson"), str(tmp_path / "activation.cpia")
    assert main(["replay", log, act]) == 0
    assert "verified" in capsys.readouterr().out
    lines = (tmp_path / "actions.ndjson").read_text().splitlines()
    doc = json.loads(lines[1])
    doc["extended"] = doc["extended"][:1]
    lines[1] = json.dumps(doc)
    (tmp_path / "tampered.ndjson").write_text("\n".join(lines) + "\n")
    assert main(["replay", str(tmp_path / "tampered.ndjson"), act]) == 4
    assert "verification failed" in capsys.readouterr().out
    other = TensorArchive({"y": np.zeros((32, 16, 16))}).write(tmp_path / "zeros.cpia")
    assert main(["replay", log, str(other)]) == 4
    assert "checksum" in capsys.readouterr().err


def test_paint_order_replay_and_rerun(toydir, tmp_path, capsys):
    a = tmp_path / "a"
    assert _run(toydir, a, "paint", "--frame-every", "50") == 0
    summary = json.loads((a / "run_summary.json").read_text())
    assert summary["step_order"] == ["person", "dog", "background"]
    assert len(summary["stop_reasons"]) == 3
    for i in range(3):
        assert main(["replay", str(a / f"step_{i:02d}.ndjson"), str(a / "step_activations.cpia"),
                     "--y-name", f"step_{i:02d}", "--mask-name", f"step_{i:02d}"]) == 0
    b = tmp_path / "b"
    assert main(["paint", "--config", str(a / "run_summary.json"), "--out", str(b)]) == 0
    for name in summary["artifact_list"]:
        assert (a / name).read_bytes() == (b / name).read_bytes(), name


def test_paint_skip_background_white(toydir, tmp_path):
    assert _run(toydir, tmp_path, "paint", "--background", "skip", "--tau", "2") == 0
    summary = json.loads((tmp_path / "run_summary.json").read_text())
    assert summary["step_order"] == ["person", "dog"]
    data = (tmp_path / "final.ppm").read_bytes()
    rgb = np.frombuffer(data[len(b"P6\n64 64\n255\n"):], np.uint8).reshape(64, 64, 3)
    assert (rgb[0, 63] == 255).all()  # the corner is far from both ROIs


def test_coverage_subcommand(toydir, tmp_path):
    assert _run(toydir, tmp_path, "flush", "--tau", "3") == 0
    out = tmp_path / "cov"
    assert main(["coverage", str(tmp_path / "mask.cpia"), "--out", str(out), "--bins", "4"]) == 0
    assert len((out / "coverage_hist.csv").read_text().splitlines()) == 5
    assert (out / "coverage.csv").read_bytes() != b""


def test_activation_only_run(tmp_path, rng):
    y = rng.normal(size=(4, 5, 5)).astype(np.float32)
    np.save(tmp_path / "y.npy", y)
    out = tmp_path / "o"
    assert main(["stroke", "--activation", str(tmp_path / "y.npy"), "--tau", "2", "--out",
                 str(out)]) == 0
    assert main(["replay", str(out / "actions.ndjson"), str(out / "activation.cpia")]) == 0
    assert not (out / "stroke.ppm").exists()
