import io
import os
import threading

import jsonschema
import numpy as np
import pytest

from fdmsense import datasets, fusion, monitor, simulator
from fdmsense.errors import InvalidArgument
from fdmsense.signal_core import FaultClass as F, Modality as M

from helpers import constant_models, random_models


@pytest.fixture(scope="module")
def scene_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("scene")
    cfg = simulator.SimConfig(seed=5, fault=F.NORMAL, duration_s=6.0, stereo_bias_db=6.0)
    simulator.write_scene(simulator.synth_scene(cfg), d, cfg)
    return d


def run(sources, preset, models, config=None):
    out = io.StringIO()
    n = monitor.run_monitor(sources, preset, models, config or fusion.default_run_config(), out)
    lines = out.getvalue().splitlines()
    assert len(lines) == n
    return monitor.read_events(lines)


def test_hybrid_events_follow_schema_and_are_monotone(scene_dir):
    events = run(monitor.Sources.from_scene_dir(scene_dir), "hybrid", random_models())
    assert [e["window_id"] for e in events] == list(range(5))
    assert [e["ts_ms"] for e in events] == [2000, 3000, 4000, 5000, 6000]
    for e in events:
        jsonschema.validate(e, monitor.EVENT_SCHEMA)
        assert set(e["scores"]) == {"acoustic", "vibration", "thermal"}
        for label, v in e["fused"].items():
            per = [e["scores"][m][label] for m in e["scores"]]
            assert min(per) - 1e-12 <= v <= max(per) + 1e-12
        assert e["error"] is None
        assert e["localization"] == "left" and 5 <= e["balance_db"] <= 7


def test_baseline_uses_acoustic_only(scene_dir):
    events = run(monitor.Sources.from_scene_dir(scene_dir), "baseline", random_models([M.ACOUSTIC]))
    assert events
    for e in events:
        assert set(e["scores"]) == {"acoustic"} and e["modalities_used"] == ["acoustic"]
        assert set(e["stale"]) == {"acoustic"}


def test_constant_fault_raises_once_at_third_window(scene_dir):
    events = run(monitor.Sources.from_scene_dir(scene_dir), "hybrid", constant_models(F.NOZZLE_CLOG))
    assert [e["flagged"] for e in events] == ["nozzle_clog"] * 5
    assert [e["alarm"] for e in events] == ["none", "none", "raised", "none", "none"]
    assert monitor.raised_faults(events) == [F.NOZZLE_CLOG]
    quiet = run(monitor.Sources.from_scene_dir(scene_dir), "hybrid", constant_models(F.NORMAL))
    assert monitor.raised_faults(quiet) == [] and all(e["flagged"] is None for e in quiet)


def test_output_is_independent_of_scheduling(scene_dir):
    src = monitor.Sources.from_scene_dir(scene_dir)
    models = random_models()
    first = run(src, "hybrid", models)
    for _ in range(3):
        assert run(src, "hybrid", models) == first


def test_malformed_csv_row_yields_error_event_and_continues(tmp_path, scene_dir):
    lines = (scene_dir / "vibration.csv").read_text().split("\n")
    lines[300] = "1495,oops,0,0"
    (tmp_path / "vibration.csv").write_text("\n".join(lines))
    src = monitor.Sources(scene_dir / "audio.wav", tmp_path / "vibration.csv", scene_dir / "thermal")
    events = run(src, "hybrid", random_models())
    errors = [e for e in events if e["error"]]
    assert len(errors) == 1
    assert errors[0]["window_id"] is None and "line 301" in errors[0]["error"]
    jsonschema.validate(errors[0], monitor.EVENT_SCHEMA)
    windows = [e for e in events if e["window_id"] is not None]
    assert len(windows) == 5 and "vibration" in windows[-1]["scores"]
    ts = [e["ts_ms"] for e in events]
    assert ts == sorted(ts)


def test_broken_thermal_frame_is_reported(tmp_path, scene_dir):
    import shutil
    th = tmp_path / "thermal"
    shutil.copytree(scene_dir / "thermal", th)
    (th / datasets.frame_name(3)).write_bytes(b"P2\n1 1\n255\n0\n")
    src = monitor.Sources(scene_dir / "audio.wav", scene_dir / "vibration.csv", th)
    events = run(src, "hybrid", random_models())
    errs = [e["error"] for e in events if e["error"]]
    assert len(errs) == 1 and "expected P5" in errs[0]


def test_stale_modality_is_dropped(tmp_path, scene_dir):
    th = tmp_path / "thermal"
    th.mkdir()
    # a single frame at t=0 is stale from the 3000 ms tick on
    (th / datasets.frame_name(0)).write_bytes((scene_dir / "thermal" / datasets.frame_name(0)).read_bytes())
    src = monitor.Sources(scene_dir / "audio.wav", scene_dir / "vibration.csv", th)
    events = run(src, "hybrid", random_models())
    assert [e["stale"]["thermal"] for e in events] == [False, True, True, True, True]
    assert "thermal" in events[0]["modalities_used"] and "thermal" not in events[1]["modalities_used"]


def test_named_pipe_input(tmp_path, scene_dir):
    fifo = tmp_path / "audio.pipe"
    os.mkfifo(fifo)
    data = (scene_dir / "audio.wav").read_bytes()

    def feed():
        with open(fifo, "wb") as f:
            for i in range(0, len(data), 7000):
                f.write(data[i:i + 7000])

    t = threading.Thread(target=feed)
    t.start()
    models = random_models([M.ACOUSTIC])
    events = run(monitor.Sources(audio=fifo), "baseline", models)
    t.join()
    assert events == run(monitor.Sources(audio=scene_dir / "audio.wav"), "baseline", models)


def test_each_event_is_a_single_write(scene_dir):
    class Recorder(io.StringIO):
        def __init__(self):
            super().__init__()
            self.writes = []

        def write(self, s):
            self.writes.append(s)
            return super().write(s)

    rec = Recorder()
    n = monitor.run_monitor(monitor.Sources.from_scene_dir(scene_dir), "hybrid", random_models(),
                            fusion.default_run_config(), rec)
    assert len(rec.writes) == n
    assert all(w.endswith("\n") and w.count("\n") == 1 for w in rec.writes)


def test_missing_model_or_input_is_rejected(scene_dir):
    with pytest.raises(InvalidArgument, match="thermal"):
        monitor.run_monitor(monitor.Sources.from_scene_dir(scene_dir), "hybrid",
                            random_models([M.ACOUSTIC, M.VIBRATION]), fusion.default_run_config(), io.StringIO())
    with pytest.raises(InvalidArgument, match="preset"):
        monitor.check_models("turbo", random_models())
    with pytest.raises(InvalidArgument, match="no input"):
        monitor.run_monitor(monitor.Sources(), "baseline", random_models([M.ACOUSTIC]),
                            fusion.default_run_config(), io.StringIO())


def test_unreadable_audio_becomes_error_event(tmp_path):
    (tmp_path / "a.wav").write_bytes(b"RIFF\x00\x00")
    events = run(monitor.Sources(audio=tmp_path / "a.wav"), "baseline", random_models([M.ACOUSTIC]))
    assert len(events) == 1 and events[0]["error"].startswith("acoustic:")
