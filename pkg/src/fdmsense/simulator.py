"""Seeded synthetic printer scenes: stereo audio, triaxial vibration and
thermal frames for Normal and every fault class.

Each signal component draws from its own PRNG stream derived from the scene
seed, so a fault recipe only changes the components it touches. A Normal and
a MaterialRunout scene with the same seed therefore share harmonics, noise
and nozzle placement exactly.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .datasets import Manifest, ManifestEntry, write_accel_csv, write_manifest, write_thermal_dir, write_wav
from .errors import InvalidArgument
from .rng import Xoshiro256, derive_seed
from .signal_core import (
    DEFAULT_AUDIO_RATE_HZ,
    DEFAULT_THERMAL_FPS,
    DEFAULT_THERMAL_HEIGHT,
    DEFAULT_THERMAL_WIDTH,
    DEFAULT_VIB_RATE_HZ,
    AudioWindow,
    FaultClass,
    ThermalFrame,
    VibrationWindow,
)

F = FaultClass


@dataclass(frozen=True)
class SimParams:
    """Every signature constant used by the recipes."""

    # audio, amplitudes in full-scale units
    stepper_f0_hz: float = 220.0
    stepper_f0_jitter: float = 0.02
    harmonic_amps: tuple = (0.25, 0.04, 0.025, 0.015)  # 1x..4x fundamental
    harmonic_level_jitter_db: float = 1.5
    hiss_band_hz: tuple = (300.0, 900.0)
    hiss_rms: float = 0.10
    hiss_level_jitter_db: float = 1.5
    mic_noise_rms: float = 0.003
    clog_click_rate_hz: float = 2.0
    clog_click_amp: float = 0.4
    clog_click_ms: float = 4.0
    clog_hiss_db: float = -10.0
    overextrusion_hiss_db: float = 6.0
    scrape_amp: float = 0.12
    scrape_ms: tuple = (100.0, 300.0)
    scrape_count: tuple = (2, 4)  # per 2 s
    thud_hz: float = 120.0
    thud_amp: float = 0.5
    thud_tau_s: float = 0.04
    slap_rate_hz: float = 1.0
    slap_amp: float = 0.3
    slap_ms: float = 15.0
    grind_rate_hz: float = 3.0
    grind_hz: float = 600.0
    grind_amp: float = 0.2
    grind_ms: float = 60.0
    ambient_floor_hz: float = 20.0
    peak_limit: float = 0.99
    # vibration, in g with gravity removed
    vib_tones_hz: tuple = ((6.5, 13.0), (8.0, 17.0), (11.0, 23.0))
    vib_amps: tuple = (0.05, 0.03)
    vib_noise: float = 0.005
    shift_amp: float = 1.0  # 20x the baseline tone amplitude
    shift_hz: float = 25.0
    shift_tau_s: float = 0.05
    belt_burst_hz: float = 40.0
    belt_burst_amp: float = 0.3
    belt_burst_ms: float = 100.0
    gear_spike_amp: float = 0.12
    # thermal, normalized intensity
    background: float = 0.2
    background_noise: float = 0.01
    nozzle_level: float = 0.9
    clog_nozzle_level: float = 1.0
    nozzle_sigma_px: float = 4.0
    trail_level: float = 0.6
    trail_end_level: float = 0.5
    trail_half_width_px: float = 3.0
    trail_wide_half_width_px: float = 6.0
    trail_gap_px: int = 8  # from nozzle centre to trail start
    trail_length_px: int = 40
    trail_jitter_px: float = 3.0
    runout_decay_fraction: float = 0.2  # time constant as a fraction of the scene
    drift_delta: float = 0.2
    nozzle_jitter_px: tuple = (8, 6)


DEFAULT_PARAMS = SimParams()


class _Stream:
    """Component ids for ``derive_seed``; never renumber."""
    HARMONICS = 1
    HISS = 2
    MIC_LEFT = 3
    MIC_RIGHT = 4
    AMBIENT = 5
    AUDIO_FAULT = 6
    VIBRATION = 7
    VIBRATION_FAULT = 8
    THERMAL_NOISE = 9
    THERMAL_FAULT = 10
    LAYOUT = 11
    EVENT_TIME = 12


@dataclass(frozen=True)
class SimConfig:
    seed: int
    fault: FaultClass = FaultClass.NORMAL
    duration_s: float = 2.0
    audio_rate_hz: int = DEFAULT_AUDIO_RATE_HZ
    vib_rate_hz: int = DEFAULT_VIB_RATE_HZ
    thermal_fps: int = DEFAULT_THERMAL_FPS
    ambient_noise_snr_db: float | None = None
    stereo_bias_db: float = 0.0
    thermal_width: int = DEFAULT_THERMAL_WIDTH
    thermal_height: int = DEFAULT_THERMAL_HEIGHT

    def __post_init__(self):
        if not self.duration_s > 0:
            raise InvalidArgument("duration_s must be positive")
        if min(self.audio_rate_hz, self.vib_rate_hz, self.thermal_fps) <= 0:
            raise InvalidArgument("rates must be positive")
        if self.thermal_width < 32 or self.thermal_height < 32:
            raise InvalidArgument("thermal frames must be at least 32x32")
        object.__setattr__(self, "fault", FaultClass(self.fault))


@dataclass
class SimScene:
    audio: AudioWindow
    vibration: VibrationWindow
    thermal: list[ThermalFrame]
    label: FaultClass
    meta: dict = field(default_factory=dict)


def _rng(seed: int, component: int) -> Xoshiro256:
    return Xoshiro256(derive_seed(seed, component))


def _band_noise(rng: Xoshiro256, n: int, rate: float, lo: float, hi: float, rms: float) -> np.ndarray:
    spec = np.fft.rfft(rng.normal(n))
    f = np.fft.rfftfreq(n, 1.0 / rate)
    spec[(f < lo) | (f > hi)] = 0.0
    x = np.fft.irfft(spec, n)
    r = np.sqrt(np.mean(x * x))
    return x * (rms / r) if r > 0 else x


def _pink_noise(rng: Xoshiro256, n: int, rate: float, floor_hz: float) -> np.ndarray:
    spec = np.fft.rfft(rng.normal(n))
    f = np.fft.rfftfreq(n, 1.0 / rate)
    spec /= np.sqrt(np.maximum(f, floor_hz))
    spec[0] = 0.0
    x = np.fft.irfft(spec, n)
    return x / np.sqrt(np.mean(x * x))


def _db(gain_db: float) -> float:
    return 10.0 ** (gain_db / 20.0)


def _event_times(rng: Xoshiro256, duration: float, rate_hz: float) -> np.ndarray:
    """Quasi-periodic event onsets at ``rate_hz`` with a random phase and 10% jitter."""
    period = 1.0 / rate_hz
    start = rng.uniform(1, 0.0, period)[0]
    times = np.arange(start, duration, period)
    return times + rng.uniform(times.size, -0.1 * period, 0.1 * period)


def _burst(t: np.ndarray, onset: float, length_s: float) -> np.ndarray:
    """Hann envelope over [onset, onset + length)."""
    u = (t - onset) / length_s
    env = np.zeros_like(t)
    inside = (u >= 0) & (u < 1)
    env[inside] = np.sin(np.pi * u[inside]) ** 2
    return env


def _synth_audio(cfg: SimConfig, p: SimParams, t_shift: float) -> tuple[np.ndarray, np.ndarray]:
    rate = cfg.audio_rate_hz
    n = max(1, int(round(cfg.duration_s * rate)))
    t = np.arange(n) / rate
    seed, fault = cfg.seed, cfg.fault

    h = _rng(seed, _Stream.HARMONICS)
    f0 = p.stepper_f0_hz * (1.0 + h.uniform(1, -p.stepper_f0_jitter, p.stepper_f0_jitter)[0])
    level = _db(h.uniform(1, -p.harmonic_level_jitter_db, p.harmonic_level_jitter_db)[0])
    phases = h.uniform(len(p.harmonic_amps), 0.0, 2 * np.pi)
    clean = np.zeros(n)
    for k, (amp, ph) in enumerate(zip(p.harmonic_amps, phases), start=1):
        if k * f0 < rate / 2:
            clean += level * amp * np.sin(2 * np.pi * k * f0 * t + ph)

    hs = _rng(seed, _Stream.HISS)
    hiss_gain = _db(hs.uniform(1, -p.hiss_level_jitter_db, p.hiss_level_jitter_db)[0])
    lo, hi = p.hiss_band_hz
    hiss = _band_noise(hs, n, rate, lo, min(hi, rate / 2), p.hiss_rms) * hiss_gain
    if fault is F.MATERIAL_RUNOUT:
        hiss = hiss * 0.0
    elif fault is F.NOZZLE_CLOG:
        hiss = hiss * _db(p.clog_hiss_db)
    elif fault is F.OVER_EXTRUSION:
        hiss = hiss * _db(p.overextrusion_hiss_db)
    clean += hiss

    fr = _rng(seed, _Stream.AUDIO_FAULT)
    d = cfg.duration_s
    if fault is F.NOZZLE_CLOG:
        for onset in _event_times(fr, d, p.clog_click_rate_hz):
            env = np.exp(-np.clip(t - onset, 0, None) / (p.clog_click_ms / 1000.0)) * (t >= onset)
            clean += p.clog_click_amp * env * fr.normal(n)
    elif fault is F.BED_ADHESION_FAILURE:
        lo_c, hi_c = p.scrape_count
        count = max(1, int(round((lo_c + fr.integers(1, hi_c - lo_c + 1)[0]) * d / 2.0)))
        scrape = _band_noise(fr, n, rate, 100.0, rate / 2 * 0.9, 1.0)
        for _ in range(count):
            length = fr.uniform(1, *p.scrape_ms)[0] / 1000.0
            onset = fr.uniform(1, 0.0, max(d - length, 1e-3))[0]
            clean += p.scrape_amp * _burst(t, onset, length) * scrape
    elif fault is F.LAYER_SHIFT:
        env = np.exp(-np.clip(t - t_shift, 0, None) / p.thud_tau_s) * (t >= t_shift)
        clean += p.thud_amp * env * np.sin(2 * np.pi * p.thud_hz * (t - t_shift))
    elif fault is F.BELT_SLIP:
        for onset in _event_times(fr, d, p.slap_rate_hz):
            clean += p.slap_amp * _burst(t, onset, p.slap_ms / 1000.0) * fr.normal(n)
    elif fault is F.EXTRUDER_GEAR_SLIP:
        for onset in _event_times(fr, d, p.grind_rate_hz):
            env = _burst(t, onset, p.grind_ms / 1000.0)
            saw = 2.0 * ((p.grind_hz * (t - onset)) % 1.0) - 1.0
            clean += p.grind_amp * env * (0.6 * saw + 0.4 * fr.normal(n))

    if cfg.ambient_noise_snr_db is not None:
        sig_rms = np.sqrt(np.mean(clean * clean))
        noise = _pink_noise(_rng(seed, _Stream.AMBIENT), n, rate, p.ambient_floor_hz)
        clean = clean + noise * sig_rms / _db(cfg.ambient_noise_snr_db)

    left = clean + _rng(seed, _Stream.MIC_LEFT).normal(n, p.mic_noise_rms)
    right = clean + _rng(seed, _Stream.MIC_RIGHT).normal(n, p.mic_noise_rms)
    left = left * _db(cfg.stereo_bias_db)
    peak = max(np.abs(left).max(), np.abs(right).max())
    if peak > p.peak_limit:
        left, right = left * (p.peak_limit / peak), right * (p.peak_limit / peak)
    return left, right


def _synth_vibration(cfg: SimConfig, p: SimParams, t_shift: float) -> list[np.ndarray]:
    rate = cfg.vib_rate_hz
    n = max(1, int(round(cfg.duration_s * rate)))
    t = np.arange(n) / rate
    r = _rng(cfg.seed, _Stream.VIBRATION)
    axes = []
    for tones, scale in zip(p.vib_tones_hz, (1.0, 1.0, 0.5)):
        ph = r.uniform(len(tones), 0.0, 2 * np.pi)
        a = sum(scale * amp * np.sin(2 * np.pi * f * t + phi) for f, amp, phi in zip(tones, p.vib_amps, ph))
        axes.append(a + r.normal(n, p.vib_noise))

    fr = _rng(cfg.seed, _Stream.VIBRATION_FAULT)
    fault, d = cfg.fault, cfg.duration_s
    if fault is F.LAYER_SHIFT:
        env = np.exp(-np.clip(t - t_shift, 0, None) / p.shift_tau_s) * (t >= t_shift)
        wave = np.sin(2 * np.pi * p.shift_hz * (t - t_shift) + np.pi / 2)
        direction = fr.uniform(1, 0.0, 2 * np.pi)[0]
        axes[0] = axes[0] + p.shift_amp * np.cos(direction) * env * wave
        axes[1] = axes[1] + p.shift_amp * np.sin(direction) * env * wave
        axes[2] = axes[2] + 0.2 * p.shift_amp * env * wave
    elif fault is F.BELT_SLIP:
        for onset in _event_times(fr, d, 1.0):
            burst = p.belt_burst_amp * _burst(t, onset, p.belt_burst_ms / 1000.0) * \
                np.sin(2 * np.pi * p.belt_burst_hz * (t - onset))
            axes[0] = axes[0] + burst
            axes[1] = axes[1] + 0.5 * burst
    elif fault is F.EXTRUDER_GEAR_SLIP:
        for onset in _event_times(fr, d, p.grind_rate_hz):
            i = int(onset * rate)
            if 0 <= i < n:
                axes[2][i] += p.gear_spike_amp
    return axes


def _thermal_frames(cfg: SimConfig, p: SimParams) -> tuple[list[ThermalFrame], dict]:
    w, h = cfg.thermal_width, cfg.thermal_height
    lay = _rng(cfg.seed, _Stream.LAYOUT)
    jx, jy = p.nozzle_jitter_px
    cx = w / 2 + lay.uniform(1, -jx, jx)[0]
    cy = h / 3 + lay.uniform(1, -jy, jy)[0]
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    gradient = 0.02 * (yy / h - 0.5)
    blob_shape = np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * p.nozzle_sigma_px ** 2))

    fault = cfg.fault
    half = p.trail_wide_half_width_px if fault is F.OVER_EXTRUSION else p.trail_half_width_px
    y0 = cy + p.trail_gap_px
    y1 = y0 + p.trail_length_px
    along = np.clip((yy - y0) / p.trail_length_px, 0.0, 1.0)
    trail_level = p.trail_level + (p.trail_end_level - p.trail_level) * along
    in_rows = (yy >= y0) & (yy <= y1)

    noise_rng = _rng(cfg.seed, _Stream.THERMAL_NOISE)
    fault_rng = _rng(cfg.seed, _Stream.THERMAL_FAULT)
    drift_sign = 1.0 if fault_rng.random() < 0.5 else -1.0
    n_frames = max(1, int(round(cfg.duration_s * cfg.thermal_fps)))
    tau = p.runout_decay_fraction * cfg.duration_s
    frames = []
    for i in range(n_frames):
        ts = i / cfg.thermal_fps
        frac = ts / cfg.duration_s
        centre = np.full(h, cx)
        if fault is F.BED_ADHESION_FAILURE:
            # wavy, frame-varying trail path
            phase = fault_rng.uniform(1, 0.0, 2 * np.pi)[0]
            centre = cx + p.trail_jitter_px * np.sin(2 * np.pi * np.arange(h) / 12.0 + phase)
        dist = np.abs(xx - centre[:, None])
        # flat core, one-pixel soft edge
        profile = np.clip(half + 1.0 - dist, 0.0, 1.0)
        trail = (trail_level - p.background) * profile * in_rows
        if fault is F.MATERIAL_RUNOUT:
            trail = trail * np.exp(-ts / tau)
        nozzle = p.clog_nozzle_level if fault is F.NOZZLE_CLOG else p.nozzle_level
        sigma_scale = 1.0
        if fault is F.HOT_END_TEMP_DRIFT:
            nozzle += drift_sign * p.drift_delta * frac
            sigma_scale = 1.0 + 0.3 * drift_sign * frac
        blob = blob_shape ** (1.0 / sigma_scale ** 2) if sigma_scale != 1.0 else blob_shape
        img = p.background + gradient + trail
        img = np.maximum(img, p.background + (nozzle - p.background) * blob)
        img = img + noise_rng.normal(img.size, p.background_noise).reshape(h, w)
        img = np.clip(img, 0.0, 1.0)
        frames.append(ThermalFrame(img, w, h, int(round(ts * 1000))))
    core = in_rows & (np.abs(xx - cx) <= p.trail_half_width_px - 0.5)
    meta = {"nozzle_xy": (cx, cy), "trail_mask": core,
            "background_mask": (np.abs(xx - cx) > 3 * p.trail_wide_half_width_px) & (yy > cy + 2 * p.nozzle_sigma_px)}
    return frames, meta


def synth_scene(config: SimConfig, params: SimParams = DEFAULT_PARAMS) -> SimScene:
    """Generate one aligned multimodal scene; deterministic per config."""
    d = config.duration_s
    t_shift = _rng(config.seed, _Stream.EVENT_TIME).uniform(1, 0.2 * d, 0.8 * d)[0]
    left, right = _synth_audio(config, params, t_shift)
    axes = _synth_vibration(config, params, t_shift)
    frames, meta = _thermal_frames(config, params)
    meta["event_time_s"] = t_shift if config.fault is F.LAYER_SHIFT else None
    return SimScene(
        AudioWindow(left, right, config.audio_rate_hz, 0),
        VibrationWindow(*axes, config.vib_rate_hz, 0),
        frames,
        config.fault,
        meta,
    )


def scene_seed(master_seed: int, fault: FaultClass, index: int) -> int:
    return derive_seed(master_seed, int(fault), index)


def write_scene(scene: SimScene, scene_dir, config: SimConfig) -> dict[str, str]:
    """Write one scene in the on-disk formats; returns paths relative to ``scene_dir``."""
    d = Path(scene_dir)
    d.mkdir(parents=True, exist_ok=True)
    write_wav(d / "audio.wav", np.column_stack([scene.audio.left, scene.audio.right]), config.audio_rate_hz)
    v = scene.vibration
    t_ms = np.round(np.arange(len(v)) * 1000.0 / config.vib_rate_hz)
    write_accel_csv(d / "vibration.csv", t_ms, v.x, v.y, v.z)
    write_thermal_dir(d / "thermal", scene.thermal)
    return {"audio_path": "audio.wav", "vibration_path": "vibration.csv", "thermal_dir": "thermal"}


def generate_corpus(per_class_count: int, classes, seed: int, out_dir, duration_s: float = 2.0,
                    ambient_noise_snr_db: float | None = None, stereo_bias_db: float = 0.0,
                    params: SimParams = DEFAULT_PARAMS) -> Manifest:
    """Write ``per_class_count`` scenes per class under ``out_dir/scenes`` and a
    manifest at ``out_dir/manifest.json``.

    Scene ``i`` of class ``c`` uses seed ``derive_seed(seed, code(c), i)``.
    """
    if per_class_count < 1:
        raise InvalidArgument("per_class_count must be >= 1")
    classes = sorted({FaultClass(c) for c in classes})
    if not classes:
        raise InvalidArgument("classes must be non-empty")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for fault in classes:
        for i in range(per_class_count):
            cfg = SimConfig(scene_seed(seed, fault, i), fault, duration_s,
                            ambient_noise_snr_db=ambient_noise_snr_db, stereo_bias_db=stereo_bias_db)
            scene = synth_scene(cfg, params)
            sid = f"{fault.label}_{i:04d}"
            rel = write_scene(scene, out / "scenes" / sid, cfg)
            entries.append(ManifestEntry(
                sid, fault,
                f"scenes/{sid}/{rel['audio_path']}",
                f"scenes/{sid}/{rel['vibration_path']}",
                f"scenes/{sid}/{rel['thermal_dir']}",
                float(duration_s),
                {"audio_hz": cfg.audio_rate_hz, "vibration_hz": cfg.vib_rate_hz, "thermal_fps": cfg.thermal_fps},
            ))
    manifest = Manifest(entries, root=out)
    write_manifest(out / "manifest.json", manifest)
    return manifest


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
