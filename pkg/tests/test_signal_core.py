import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fdmsense.errors import InvalidArgument
from fdmsense.signal_core import (
    AudioWindow,
    FaultClass,
    Modality,
    ThermalFrame,
    VibrationWindow,
    make_windows,
    rms,
    valid_labels,
)


def test_fault_codes_and_labels_round_trip():
    assert [int(f) for f in FaultClass] == list(range(9))
    for f in FaultClass:
        assert FaultClass.from_label(f.label) is f
    assert FaultClass.from_label(" Material_Runout ") is FaultClass.MATERIAL_RUNOUT
    with pytest.raises(InvalidArgument, match="unknown fault class"):
        FaultClass.from_label("melted")
    assert "nozzle_clog" in valid_labels()
    assert {m.value for m in Modality} == {"acoustic", "vibration", "thermal"}


def test_windows_are_immutable_copies():
    left = np.zeros(100)
    w = AudioWindow(left, np.ones(100))
    left[0] = 5.0
    assert w.left[0] == 0.0
    with pytest.raises(ValueError):
        w.left[0] = 1.0
    assert np.allclose(w.mono, 0.5)


@pytest.mark.parametrize("kwargs", [
    dict(left=np.zeros(10), right=np.zeros(11)),
    dict(left=np.zeros(0), right=np.zeros(0)),
    dict(left=np.array([np.nan]), right=np.zeros(1)),
    dict(left=np.zeros(10), right=np.zeros(10), sample_rate_hz=1000),
    dict(left=np.zeros(10), right=np.zeros(10), start_ts_ms=-1),
])
def test_audio_window_rejects_invalid(kwargs):
    with pytest.raises(InvalidArgument):
        AudioWindow(**kwargs)


def test_vibration_and_thermal_validation():
    with pytest.raises(InvalidArgument):
        VibrationWindow(np.zeros(4), np.zeros(4), np.zeros(3))
    with pytest.raises(InvalidArgument):
        VibrationWindow(np.zeros(4), np.zeros(4), np.zeros(4), sample_rate_hz=0)
    with pytest.raises(InvalidArgument, match=r"\[0, 1\]"):
        ThermalFrame(np.full(12, 1.5), 4, 3)
    with pytest.raises(InvalidArgument, match="expected 4x3"):
        ThermalFrame(np.zeros(11), 4, 3)
    f = ThermalFrame(np.arange(12) / 11, 4, 3)
    assert f.pixels.shape == (3, 4) and f.pixels[1, 0] == pytest.approx(4 / 11)


def test_make_windows_examples():
    ws = make_windows(np.arange(10), 4, 2)
    assert [w.tolist() for w in ws] == [[0, 1, 2, 3], [2, 3, 4, 5], [4, 5, 6, 7], [6, 7, 8, 9]]
    assert make_windows(np.arange(3), 4, 2) == []
    with pytest.raises(InvalidArgument):
        make_windows(np.arange(10), 4, 0)
    with pytest.raises(InvalidArgument):
        make_windows(np.arange(10), 4, 5)


@given(st.integers(1, 200), st.integers(1, 50), st.data())
@settings(max_examples=60, deadline=None)
def test_make_windows_count_and_content(n, window_len, data):
    hop = data.draw(st.integers(1, window_len))
    x = np.arange(n, dtype=float)
    ws = make_windows(x, window_len, hop)
    expected = 0 if n < window_len else (n - window_len) // hop + 1
    assert len(ws) == expected
    for i, w in enumerate(ws):
        assert w[0] == i * hop and w.size == window_len


def test_rms():
    assert rms([3.0, -3.0]) == pytest.approx(3.0)
    t = np.arange(16000) / 16000
    assert rms(np.sin(2 * np.pi * 50 * t)) == pytest.approx(np.sqrt(0.5), rel=1e-9)
    with pytest.raises(InvalidArgument):
        rms([])
