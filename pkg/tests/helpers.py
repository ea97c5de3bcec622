"""Shared fixtures-in-code for monitor and CLI tests."""

import numpy as np

from fdmsense import cnn
from fdmsense.features import INPUT_SHAPES
from fdmsense.signal_core import FaultClass as F, Modality as M

CLASSES4 = (F.NORMAL, F.MATERIAL_RUNOUT, F.NOZZLE_CLOG, F.LAYER_SHIFT)


def constant_model(modality: M, target: F, classes=CLASSES4, seed=0) -> cnn.Model:
    """A model whose output is (almost) one-hot on ``target`` for any input."""
    model = cnn.init_model(cnn.ModelSpec(INPUT_SHAPES[modality], len(classes)), seed, classes)
    model.params["dense2.w"][:] = 0
    model.params["dense2.b"][:] = 0
    model.params["dense2.b"][classes.index(target)] = 20.0
    return model


def constant_models(target: F, modalities=tuple(M)) -> dict:
    return {m: constant_model(m, target) for m in modalities}


def random_models(modalities=tuple(M), classes=CLASSES4) -> dict:
    return {m: cnn.init_model(cnn.ModelSpec(INPUT_SHAPES[m], len(classes)), i, classes)
            for i, m in enumerate(modalities)}


def tone(freq, seconds, rate=16000, amp=0.5):
    t = np.arange(int(seconds * rate)) / rate
    return amp * np.sin(2 * np.pi * freq * t)
