"""Scene -> model input tensors, corpus loading and the seeded train/validation split."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import dsp
from .datasets import Manifest, SceneData, load_scene
from .errors import InvalidArgument
from .rng import Xoshiro256, derive_seed
from .signal_core import AudioWindow, FaultClass, Modality, ThermalFrame, VibrationWindow

WINDOW_S = 2.0
HOP_S = 1.0
INPUT_SHAPES = {
    Modality.ACOUSTIC: (1, dsp.TENSOR_SIZE, dsp.TENSOR_SIZE),
    Modality.VIBRATION: (3, dsp.TENSOR_SIZE, dsp.TENSOR_SIZE),
    Modality.THERMAL: (1, dsp.TENSOR_SIZE, dsp.TENSOR_SIZE),
}


def last_audio_window(audio: AudioWindow, window_s: float = WINDOW_S) -> AudioWindow:
    n = int(round(window_s * audio.sample_rate_hz))
    if len(audio) <= n:
        return audio
    start = len(audio) - n
    return AudioWindow(audio.left[start:], audio.right[start:], audio.sample_rate_hz,
                       audio.start_ts_ms + int(round(start * 1000 / audio.sample_rate_hz)))


def last_vibration_window(vib: VibrationWindow, window_s: float = WINDOW_S) -> VibrationWindow:
    n = int(round(window_s * vib.sample_rate_hz))
    if len(vib) <= n:
        return vib
    start = len(vib) - n
    return VibrationWindow(vib.x[start:], vib.y[start:], vib.z[start:], vib.sample_rate_hz,
                           vib.start_ts_ms + int(round(start * 1000 / vib.sample_rate_hz)))


def modality_tensor(modality: Modality, data) -> np.ndarray:
    """Tensor for one window of ``modality``: an AudioWindow, a VibrationWindow
    or a ThermalFrame."""
    if modality is Modality.ACOUSTIC:
        return dsp.audio_to_tensor(data)
    if modality is Modality.VIBRATION:
        return dsp.vibration_to_tensor(data)
    return dsp.thermal_to_tensor(data)


def scene_tensor(scene, modality: Modality) -> np.ndarray:
    """Tensor from the final window of a scene (the last frame for thermal)."""
    if modality is Modality.ACOUSTIC:
        return modality_tensor(modality, last_audio_window(scene.audio))
    if modality is Modality.VIBRATION:
        return modality_tensor(modality, last_vibration_window(scene.vibration))
    frames: list[ThermalFrame] = scene.thermal
    return modality_tensor(modality, frames[-1])


@dataclass
class FeatureSet:
    inputs: dict[Modality, np.ndarray]  # modality -> (n, c, h, w) float32
    labels: list[FaultClass]
    scene_ids: list[str]

    def __len__(self):
        return len(self.labels)

    def subset(self, idx) -> "FeatureSet":
        idx = np.asarray(idx, dtype=np.int64)
        return FeatureSet({m: x[idx] for m, x in self.inputs.items()},
                          [self.labels[i] for i in idx], [self.scene_ids[i] for i in idx])


def scenes_to_features(scenes, modalities, scene_ids=None) -> FeatureSet:
    modalities = list(modalities)
    inputs = {m: [] for m in modalities}
    labels = []
    for sc in scenes:
        for m in modalities:
            inputs[m].append(scene_tensor(sc, m))
        labels.append(sc.label)
    if scene_ids is None:
        scene_ids = [str(i) for i in range(len(labels))]
    return FeatureSet({m: np.stack(v) if v else np.zeros((0, *INPUT_SHAPES[m]), np.float32)
                       for m, v in inputs.items()}, labels, list(scene_ids))


def load_features(manifest: Manifest, modalities) -> FeatureSet:
    """Read every scene of ``manifest`` once and build tensors for ``modalities``."""
    modalities = list(modalities)
    inputs = {m: [] for m in modalities}
    labels, ids = [], []
    for entry in manifest.entries:
        scene: SceneData = load_scene(manifest, entry)
        for m in modalities:
            inputs[m].append(scene_tensor(scene, m))
        labels.append(entry.label)
        ids.append(entry.scene_id)
    return FeatureSet({m: np.stack(v) if v else np.zeros((0, *INPUT_SHAPES[m]), np.float32)
                       for m, v in inputs.items()}, labels, ids)


def stratified_split(labels, val_fraction: float = 0.2, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic per-class split; each class keeps at least one sample on each side.

    Class ``c`` is shuffled with ``Xoshiro256(derive_seed(seed, code(c)))`` and
    its first ``max(1, round(n * val_fraction))`` members go to validation.
    """
    if not 0 < val_fraction < 1:
        raise InvalidArgument("val_fraction must be in (0, 1)")
    labels = [FaultClass(l) for l in labels]
    train, val = [], []
    for c in sorted(set(labels)):
        members = np.array([i for i, l in enumerate(labels) if l == c], dtype=np.int64)
        if members.size < 2:
            raise InvalidArgument(f"class {c.label} has fewer than 2 samples")
        perm = members[Xoshiro256(derive_seed(seed, int(c))).permutation(members.size)]
        n_val = min(members.size - 1, max(1, int(round(members.size * val_fraction))))
        val.extend(perm[:n_val].tolist())
        train.extend(perm[n_val:].tolist())
    return np.array(sorted(train), dtype=np.int64), np.array(sorted(val), dtype=np.int64)


def class_indices(labels, classes) -> np.ndarray:
    pos = {c: i for i, c in enumerate(classes)}
    return np.array([pos[FaultClass(l)] for l in labels], dtype=np.int64)
