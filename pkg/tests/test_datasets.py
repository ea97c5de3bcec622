import io
import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from fdmsense import datasets
from fdmsense.errors import FormatError, InvalidArgument, ValidationError
from fdmsense.signal_core import FaultClass as F

import fuzzcorpus

RATES = {"audio_hz": 16000, "vibration_hz": 200, "thermal_fps": 8}


def wav_bytes(fmt_tag=1, bits=16, channels=1, rate=8000, payload=b"\x00\x00" * 4, extra=b""):
    block = channels * bits // 8
    fmt = struct.pack("<HHIIHH", fmt_tag, channels, rate, rate * block, block, bits)
    body = b"WAVE" + b"fmt " + struct.pack("<I", 16) + fmt + b"data" + struct.pack("<I", len(payload)) + payload + extra
    return b"RIFF" + struct.pack("<I", len(body)) + body


# -- WAV ---------------------------------------------------------------------------

def test_wav_mono_example(tmp_path):
    datasets.write_wav(tmp_path / "a.wav", [0.0, 0.5, -0.5], 16000)
    s, rate = datasets.read_wav(tmp_path / "a.wav")
    assert rate == 16000 and s.shape == (3, 1)
    np.testing.assert_allclose(s[:, 0], [0.0, 0.5, -0.5], atol=1 / 32768)


def test_wav_stereo_keeps_channels(tmp_path):
    x = np.linspace(-1, 1, 101)
    datasets.write_wav(tmp_path / "s.wav", np.stack([x, -x], axis=1), 8000)
    s, _ = datasets.read_wav(tmp_path / "s.wav")
    assert s.shape == (101, 2)


def test_wav_written_bytes_match_hand_layout(tmp_path):
    datasets.write_wav(tmp_path / "a.wav", [0.0, 0.5], 8000)
    pcm = struct.pack("<hh", 0, 16384)
    assert (tmp_path / "a.wav").read_bytes() == wav_bytes(payload=pcm)


def test_quantization_rounds_half_up_and_clips():
    q = datasets.quantize_pcm16([1.0, -1.0, 0.5 / 32768, -0.5 / 32768])
    assert q.tolist() == [32767, -32768, 1, 0]
    with pytest.raises(InvalidArgument):
        datasets.quantize_pcm16([1.5])


@given(arrays(np.float64, st.tuples(st.integers(1, 200), st.integers(1, 3)),
              elements=st.floats(-1, 1)), st.sampled_from([8000, 16000, 44100]))
@settings(max_examples=60, deadline=None)
def test_wav_round_trip_property(tmp_path_factory, samples, rate):
    path = tmp_path_factory.mktemp("w") / "x.wav"
    datasets.write_wav(path, samples, rate)
    back, r = datasets.read_wav(path)
    assert r == rate and back.shape == samples.shape
    assert np.max(np.abs(back - samples)) <= 1 / 32768


def test_wav_float_encoding_rejected():
    with pytest.raises(FormatError, match="unsupported encoding") as e:
        datasets.parse_wav(wav_bytes(fmt_tag=3, bits=32, payload=b"\x00" * 8))
    assert e.value.chunk == "fmt "
    with pytest.raises(FormatError, match="unsupported encoding"):
        datasets.parse_wav(wav_bytes(fmt_tag=3, bits=16))  # float16


def test_wav_errors_name_the_chunk(tmp_path):
    data = wav_bytes()
    with pytest.raises(FormatError) as e:
        datasets.parse_wav(data[:-1])
    assert e.value.chunk == "RIFF"
    bad = data[:36] + b"dat\x01" + data[40:]
    with pytest.raises(FormatError) as e:
        datasets.parse_wav(bad)
    assert e.value.chunk == "dat\x01"
    p = tmp_path / "x.wav"
    p.write_bytes(b"RIFX" + data[4:])
    with pytest.raises(FormatError, match=str(p)):
        datasets.read_wav(p)


def test_wav_skips_unknown_chunks():
    list_chunk = b"LIST" + struct.pack("<I", 3) + b"abc\x00"
    data = wav_bytes()
    body = data[12:36] + list_chunk + data[36:]
    s, _ = datasets.parse_wav(b"RIFF" + struct.pack("<I", len(body) + 4) + b"WAVE" + body)
    assert s.shape == (4, 1)


def test_wav_stream_reads_in_pieces_and_unknown_size():
    pcm = np.arange(10, dtype="<i2").tobytes()
    ws = datasets.WavStream(io.BytesIO(wav_bytes(payload=pcm)))
    got = []
    while (blk := ws.read(3)) is not None:
        got.append(blk)
    assert np.concatenate(got)[:, 0].tolist() == [i / 32768 for i in range(10)]
    # pipe-style header with unknown sizes
    data = bytearray(wav_bytes(payload=pcm))
    data[4:8] = b"\xff" * 4
    data[40:44] = b"\xff" * 4
    ws = datasets.WavStream(io.BytesIO(bytes(data)))
    assert ws.info.data_size is None and len(ws.read(100)) == 10 and ws.read(100) is None
    ws = datasets.WavStream(io.BytesIO(bytes(data[:-1])))
    with pytest.raises(FormatError, match="mid-frame"):
        ws.read(100)


# -- CSV ---------------------------------------------------------------------------

def test_csv_three_row_round_trip(tmp_path):
    t = [0, 5, 10]
    x, y, z = [0.123456789, -1e-7, 3.0], [1.0, 2.0, -2.5], [9.81, 9.8, 9.79]
    datasets.write_accel_csv(tmp_path / "v.csv", t, x, y, z)
    d = datasets.read_accel_csv(tmp_path / "v.csv")
    for got, want in zip((d.t_ms, d.x, d.y, d.z), (t, x, y, z)):
        np.testing.assert_allclose(got, want, atol=1e-5)
    assert (tmp_path / "v.csv").read_text().splitlines()[0] == "t_ms,x,y,z"


@given(st.lists(st.tuples(st.integers(0, 50), *[st.floats(-100, 100)] * 3), max_size=40))
@settings(max_examples=60, deadline=None)
def test_csv_round_trip_property(tmp_path_factory, rows):
    path = tmp_path_factory.mktemp("c") / "v.csv"
    t = np.cumsum([r[0] for r in rows]) if rows else []
    cols = [[r[k] for r in rows] for k in (1, 2, 3)]
    datasets.write_accel_csv(path, t, *cols)
    d = datasets.read_accel_csv(path)
    np.testing.assert_array_equal(d.t_ms, t)
    for got, want in zip((d.x, d.y, d.z), cols):
        want = np.asarray(want, dtype=float)
        assert np.all(np.abs(got - want) <= 5e-6 * np.maximum(np.abs(want), 1e-300) + 1e-300)


def test_csv_non_numeric_cites_line_two():
    with pytest.raises(FormatError) as e:
        datasets.parse_accel_csv("t_ms,x,y,z\n0,abc,1,2\n")
    assert e.value.line == 2 and "line 2" in str(e.value)


def test_csv_header_only_is_empty():
    d = datasets.parse_accel_csv("t_ms,x,y,z\n")
    assert len(d) == 0


@pytest.mark.parametrize("text,line,needle", [
    ("t_ms,x,y\n0,1,2\n", 1, "header"),
    ("t_ms,x,y,z\n0,1,2\n", 2, "columns"),
    ("t_ms,x,y,z\n5,1,2,3\n4,1,2,3\n", 3, "decreases"),
    ("t_ms,x,y,z\n0,1,2,nan\n", 2, "non-numeric"),
    ("t_ms,x,y,z\n0,1,2,1e999\n", 2, "non-finite"),
    ("t_ms,x,y,z\n0,1,2,3\n5,1,2", 3, "unterminated"),
    ("t_ms,x,y,z\n\n", 2, "blank"),
])
def test_csv_errors(text, line, needle):
    with pytest.raises(FormatError, match=needle) as e:
        datasets.parse_accel_csv(text)
    assert e.value.line == line


def test_csv_non_strict_yields_errors_and_continues():
    lines = ["t_ms,x,y,z\n", "0,1,2,3\n", "5,x,2,3\n", "10,1,2,3\n"]
    out = list(datasets.iter_accel_lines(lines, strict=False))
    assert isinstance(out[1], FormatError) and out[1].line == 3
    assert out[0] == (0, 1, 2, 3) and out[2] == (10, 1, 2, 3)


def test_csv_writer_rejects_bad_input(tmp_path):
    with pytest.raises(InvalidArgument):
        datasets.write_accel_csv(tmp_path / "v.csv", [5, 0], [0, 0], [0, 0], [0, 0])
    with pytest.raises(InvalidArgument):
        datasets.write_accel_csv(tmp_path / "v.csv", [0], [float("inf")], [0], [0])


# -- PGM ---------------------------------------------------------------------------

def test_pgm_half_gray_is_128(tmp_path):
    datasets.write_pgm(tmp_path / "f.pgm", np.full((4, 6), 0.5))
    raw = (tmp_path / "f.pgm").read_bytes()
    assert raw == b"P5\n6 4\n255\n" + bytes([128]) * 24
    assert np.all(datasets.read_pgm(tmp_path / "f.pgm") == 128 / 255)


@given(arrays(np.float64, st.tuples(st.integers(1, 20), st.integers(1, 20)), elements=st.floats(0, 1)))
@settings(max_examples=60, deadline=None)
def test_pgm_round_trip_property(px):
    back = datasets.parse_pgm(datasets.pgm_bytes(px))
    assert back.shape == px.shape and np.max(np.abs(back - px)) <= 0.5 / 255 + 1e-12


def test_pgm_ascii_rejected():
    with pytest.raises(FormatError, match="expected P5"):
        datasets.parse_pgm(b"P2\n2 1\n255\n0 255\n")


def test_pgm_comments_allowed_and_header_strict():
    assert datasets.parse_pgm(b"P5 # c\n2 # w\n1\n255\n\x00\xff").tolist() == [[0.0, 1.0]]
    for bad in (b"P5160 1\n255\n\x00", b"P5\n2 1\n15\n\x00\x00", b"P5\n2 1\n255\n\x00\x00\x00",
                b"P5\n0 1\n255\n", b"P5\n2 1\n255\n\x00", b"P5\n2 x\n255\n\x00\x00"):
        with pytest.raises(FormatError):
            datasets.parse_pgm(bad)


def test_pgm_stream_reads_back_to_back_frames():
    frames = [np.full((2, 3), v) for v in (0.0, 0.5, 1.0)]
    stream = io.BytesIO(b"".join(datasets.pgm_bytes(f) for f in frames))
    got = list(datasets.iter_pgm_stream(stream))
    assert len(got) == 3 and got[1][0, 0] == 128 / 255


def test_thermal_dir_gap_warning(tmp_path):
    for num, v in ((0, 0.1), (1, 0.2), (3, 0.3)):
        datasets.write_pgm(tmp_path / datasets.frame_name(num), np.full((2, 2), v))
    (tmp_path / "notes.txt").write_text("ignored")
    frames, warnings = datasets.read_thermal_dir(tmp_path)
    assert [round(f[0, 0] * 255) for f in frames] == [26, 51, 77]
    assert warnings == ["gap in frame numbering: 1 -> 3"]


def test_thermal_dir_dimension_mismatch(tmp_path):
    datasets.write_pgm(tmp_path / datasets.frame_name(0), np.zeros((2, 2)))
    datasets.write_pgm(tmp_path / datasets.frame_name(1), np.zeros((3, 2)))
    with pytest.raises(FormatError, match="dimension mismatch"):
        datasets.read_thermal_dir(tmp_path)


# -- manifest ----------------------------------------------------------------------

def make_scene_files(root, name="s"):
    d = root / name
    (d / "thermal").mkdir(parents=True)
    datasets.write_wav(d / "audio.wav", np.zeros((4, 2)), 16000)
    datasets.write_accel_csv(d / "vib.csv", [0, 5], [0, 0], [0, 0], [1, 1])
    datasets.write_pgm(d / "thermal" / datasets.frame_name(0), np.full((3, 3), 0.2))
    return datasets.ManifestEntry(name, F.NOZZLE_CLOG, f"{name}/audio.wav", f"{name}/vib.csv",
                                  f"{name}/thermal", 0.25, dict(RATES))


def test_manifest_round_trip_and_determinism(tmp_path):
    entries = [make_scene_files(tmp_path, "a"), make_scene_files(tmp_path, "b")]
    m = datasets.Manifest(entries)
    datasets.write_manifest(tmp_path / "manifest.json", m)
    back = datasets.read_manifest(tmp_path / "manifest.json")
    assert back.entries == entries and back.root == tmp_path
    assert datasets.manifest_bytes(datasets.Manifest(list(entries))) == (tmp_path / "manifest.json").read_bytes()
    shuffled = datasets.ManifestEntry(**{k: getattr(entries[0], k) for k in
                                        reversed(list(entries[0].__dataclass_fields__))})
    assert datasets.manifest_bytes(datasets.Manifest([shuffled, entries[1]])) == datasets.manifest_bytes(m)


def test_manifest_collects_every_problem(tmp_path):
    good = make_scene_files(tmp_path, "a").to_json()
    bad_label = dict(good, scene_id="b", label="melted")
    missing = dict(good, scene_id="c", audio_path="nowhere/audio.wav")
    dup = dict(good)
    import json
    (tmp_path / "m.json").write_text(json.dumps({"format_version": 1, "entries": [good, bad_label, missing, dup]}))
    with pytest.raises(ValidationError) as e:
        datasets.read_manifest(tmp_path / "m.json")
    probs = e.value.problems
    assert len(probs) == 3
    assert any("unknown fault class" in p and "melted" in p for p in probs)
    assert any("missing file nowhere/audio.wav" in p for p in probs)
    assert any("duplicate scene_id" in p for p in probs)


def test_manifest_label_must_be_canonical(tmp_path):
    good = make_scene_files(tmp_path).to_json()
    import json
    (tmp_path / "m.json").write_text(json.dumps({"format_version": 1, "entries": [dict(good, label="Nozzle_Clog")]}))
    with pytest.raises(ValidationError, match="unknown fault class"):
        datasets.read_manifest(tmp_path / "m.json")


def test_load_scene(tmp_path):
    m = datasets.Manifest([make_scene_files(tmp_path)], root=tmp_path)
    sc = datasets.load_scene(m, m.entries[0])
    assert sc.label is F.NOZZLE_CLOG and len(sc.audio) == 4 and len(sc.vibration) == 2
    assert len(sc.thermal) == 1 and sc.thermal[0].width == 3


# -- robustness --------------------------------------------------------------------

@pytest.mark.parametrize("seed", [101, 202])
def test_fuzz_corpus_yields_only_format_errors(tmp_path, seed):
    cases = fuzzcorpus.build_cases(tmp_path, 200, seed)
    r = fuzzcorpus.run_cases(tmp_path, cases)
    assert r["crashes"] == [] and r["silent"] == []
    assert len(r["format_errors"]) == 200
