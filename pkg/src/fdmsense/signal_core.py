"""Domain types shared by every stage, plus windowing and RMS."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument

DEFAULT_AUDIO_RATE_HZ = 16000
DEFAULT_VIB_RATE_HZ = 200
DEFAULT_THERMAL_FPS = 8
DEFAULT_THERMAL_WIDTH = 160
DEFAULT_THERMAL_HEIGHT = 120
MIN_AUDIO_RATE_HZ = 2000


class FaultClass(enum.IntEnum):
    NORMAL = 0
    MATERIAL_RUNOUT = 1
    NOZZLE_CLOG = 2
    OVER_EXTRUSION = 3
    BED_ADHESION_FAILURE = 4
    LAYER_SHIFT = 5
    BELT_SLIP = 6
    HOT_END_TEMP_DRIFT = 7
    EXTRUDER_GEAR_SLIP = 8

    @property
    def label(self) -> str:
        """Snake-case name used in files, configs and events."""
        return self.name.lower()

    @classmethod
    def from_label(cls, label: str) -> "FaultClass":
        try:
            return cls[label.strip().upper()]
        except KeyError:
            raise InvalidArgument(
                f"unknown fault class {label!r}; valid: {', '.join(valid_labels())}"
            ) from None


def valid_labels() -> list[str]:
    return [f.label for f in FaultClass]


class Modality(enum.Enum):
    ACOUSTIC = "acoustic"
    VIBRATION = "vibration"
    THERMAL = "thermal"


def _finite(name: str, arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise InvalidArgument(f"{name} contains non-finite samples")


def _frozen(arr, dtype=np.float64) -> np.ndarray:
    a = np.array(arr, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class AudioWindow:
    left: np.ndarray
    right: np.ndarray
    sample_rate_hz: int = DEFAULT_AUDIO_RATE_HZ
    start_ts_ms: int = 0

    def __post_init__(self):
        left, right = _frozen(self.left), _frozen(self.right)
        if left.ndim != 1 or left.shape != right.shape or left.size == 0:
            raise InvalidArgument("audio channels must be non-empty and of equal length")
        _finite("audio", left)
        _finite("audio", right)
        if self.sample_rate_hz < MIN_AUDIO_RATE_HZ:
            raise InvalidArgument(f"audio sample rate must be >= {MIN_AUDIO_RATE_HZ} Hz")
        if self.start_ts_ms < 0:
            raise InvalidArgument("timestamp must be non-negative")
        object.__setattr__(self, "left", left)
        object.__setattr__(self, "right", right)

    def __len__(self):
        return self.left.size

    @property
    def mono(self) -> np.ndarray:
        return 0.5 * (self.left + self.right)


@dataclass(frozen=True)
class VibrationWindow:
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    sample_rate_hz: int = DEFAULT_VIB_RATE_HZ
    start_ts_ms: int = 0

    def __post_init__(self):
        axes = [_frozen(a) for a in (self.x, self.y, self.z)]
        if axes[0].ndim != 1 or axes[0].size == 0 or any(a.shape != axes[0].shape for a in axes):
            raise InvalidArgument("vibration axes must be non-empty and of equal length")
        for a in axes:
            _finite("vibration", a)
        if self.sample_rate_hz <= 0:
            raise InvalidArgument("vibration sample rate must be positive")
        if self.start_ts_ms < 0:
            raise InvalidArgument("timestamp must be non-negative")
        for name, a in zip("xyz", axes):
            object.__setattr__(self, name, a)

    def __len__(self):
        return self.x.size

    @property
    def axes(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.x, self.y, self.z


@dataclass(frozen=True)
class ThermalFrame:
    """Normalized grayscale frame; ``pixels`` is stored as a (height, width) array."""

    pixels: np.ndarray
    width: int = DEFAULT_THERMAL_WIDTH
    height: int = DEFAULT_THERMAL_HEIGHT
    ts_ms: int = 0

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise InvalidArgument("frame dimensions must be positive")
        px = _frozen(self.pixels)
        if px.size != self.width * self.height:
            raise InvalidArgument(
                f"frame has {px.size} pixels, expected {self.width}x{self.height}"
            )
        px = px.reshape(self.height, self.width)
        _finite("thermal frame", px)
        if px.min() < 0.0 or px.max() > 1.0:
            raise InvalidArgument("thermal intensities must lie in [0, 1]")
        object.__setattr__(self, "pixels", px)


def make_windows(stream, window_len: int, hop: int) -> list[np.ndarray]:
    """Slice ``stream`` into windows of ``window_len`` samples every ``hop`` samples.

    Windows are read-only views into a copy of the stream; a trailing partial
    window is dropped.
    """
    if window_len <= 0 or hop <= 0:
        raise InvalidArgument("window_len and hop must be positive")
    if hop > window_len:
        raise InvalidArgument("hop must not exceed window_len")
    data = _frozen(stream)
    _finite("stream", data)
    if data.size < window_len:
        return []
    count = (data.size - window_len) // hop + 1
    return [data[i * hop:i * hop + window_len] for i in range(count)]


def rms(signal) -> float:
    s = np.asarray(signal, dtype=np.float64)
    if s.size == 0:
        raise InvalidArgument("rms of an empty signal")
    _finite("signal", s)
    return float(np.sqrt(np.mean(s * s)))
