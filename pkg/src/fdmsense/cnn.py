"""Small per-modality CNN: init, forward, backprop, momentum SGD, training,
evaluation and a binary model file.

Architecture::

    Conv3x3(8) -> ReLU -> MaxPool2 -> Conv3x3(16) -> ReLU -> MaxPool2
      -> Flatten -> Dense(64) -> ReLU -> Dense(n_classes) -> Softmax

Parameters are float32 for training and inference. ``Model.astype(np.float64)``
gives a double-precision copy for gradient checking.
"""

from __future__ import annotations

import hashlib
import math
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _kernels
from .errors import FormatError, InvalidArgument
from .rng import Xoshiro256, derive_seed
from .signal_core import FaultClass, Modality

PARAM_NAMES = ("conv1.w", "conv1.b", "conv2.w", "conv2.b",
               "dense1.w", "dense1.b", "dense2.w", "dense2.b")


@dataclass(frozen=True)
class ModelSpec:
    input_shape: tuple[int, int, int]
    n_classes: int
    conv1: int = 8
    conv2: int = 16
    hidden: int = 64
    kernel: int = 3

    def validate(self) -> None:
        c, h, w = self.input_shape
        if c < 1 or h < 4 or w < 4 or h % 4 or w % 4:
            raise InvalidArgument(f"input shape {self.input_shape} must be C x H x W with H, W divisible by 4")
        if not 2 <= self.n_classes <= len(FaultClass):
            raise InvalidArgument(f"n_classes must be in 2..{len(FaultClass)}")
        if min(self.conv1, self.conv2, self.hidden) < 1 or self.kernel % 2 == 0:
            raise InvalidArgument("layer widths must be positive and the kernel odd")

    @property
    def flat_size(self) -> int:
        _, h, w = self.input_shape
        return self.conv2 * (h // 4) * (w // 4)

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        c, k = self.input_shape[0], self.kernel
        return {
            "conv1.w": (self.conv1, c, k, k),
            "conv1.b": (self.conv1,),
            "conv2.w": (self.conv2, self.conv1, k, k),
            "conv2.b": (self.conv2,),
            "dense1.w": (self.flat_size, self.hidden),
            "dense1.b": (self.hidden,),
            "dense2.w": (self.hidden, self.n_classes),
            "dense2.b": (self.n_classes,),
        }

    @staticmethod
    def fan_in(name: str, shape: tuple[int, ...]) -> int:
        return int(np.prod(shape[1:])) if name.startswith("conv") else shape[0]


@dataclass
class Model:
    spec: ModelSpec
    params: dict[str, np.ndarray]
    classes: tuple[FaultClass, ...]
    seed: int

    def astype(self, dtype) -> "Model":
        return Model(self.spec, {k: v.astype(dtype) for k, v in self.params.items()},
                     self.classes, self.seed)

    def copy(self) -> "Model":
        return Model(self.spec, {k: v.copy() for k, v in self.params.items()}, self.classes, self.seed)

    @property
    def dtype(self):
        return self.params["conv1.w"].dtype


@dataclass(frozen=True)
class ClassScores:
    probs: np.ndarray
    classes: tuple[FaultClass, ...]
    modality: Modality | None = None

    def as_dict(self) -> dict[str, float]:
        return {c.label: float(p) for c, p in zip(self.classes, self.probs)}

    def argmax(self) -> FaultClass:
        return self.classes[int(np.argmax(self.probs))]


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    momentum: float = 0.9
    batch_size: int = 16
    epochs: int = 30
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise InvalidArgument("learning_rate must be positive")
        if not 0 <= self.momentum < 1:
            raise InvalidArgument("momentum must be in [0, 1)")
        if self.batch_size < 1 or self.epochs < 1:
            raise InvalidArgument("batch_size and epochs must be >= 1")


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float


@dataclass
class EvalReport:
    classes: tuple[FaultClass, ...]
    confusion: np.ndarray  # rows: true class, cols: predicted
    accuracy: float
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    macro_f1: float

    def to_dict(self) -> dict:
        labels = [c.label for c in self.classes]
        return {
            "accuracy": self.accuracy,
            "macro_f1": self.macro_f1,
            "n": int(self.confusion.sum()),
            "classes": labels,
            "confusion": self.confusion.tolist(),
            "precision": dict(zip(labels, map(float, self.precision))),
            "recall": dict(zip(labels, map(float, self.recall))),
            "f1": dict(zip(labels, map(float, self.f1))),
        }


def _largest_f32_below(bound: float) -> float:
    b = np.float32(bound)
    if float(b) > bound:
        b = np.nextafter(b, np.float32(0))
    return float(b)


def init_model(spec: ModelSpec, seed: int, classes=None) -> Model:
    """He-uniform weights (bound sqrt(6/fan_in)) from xoshiro256**; zero biases."""
    spec.validate()
    if classes is None:
        classes = tuple(FaultClass(i) for i in range(spec.n_classes))
    classes = tuple(FaultClass(c) for c in classes)
    if len(classes) != spec.n_classes or len(set(classes)) != len(classes):
        raise InvalidArgument("classes must be n_classes distinct fault classes")
    gen = Xoshiro256(seed)
    params = {}
    for name, shape in spec.param_shapes().items():
        if name.endswith(".b"):
            params[name] = np.zeros(shape, dtype=np.float32)
            continue
        bound = _largest_f32_below(math.sqrt(6.0 / spec.fan_in(name, shape)))
        u = gen.uniform(int(np.prod(shape)), -bound, bound)
        params[name] = u.reshape(shape).astype(np.float32)
    return Model(spec, params, classes, seed & ((1 << 64) - 1))


def model_hash(model: Model) -> str:
    h = hashlib.sha256()
    h.update(bytes(int(c) for c in model.classes))
    for name in PARAM_NAMES:
        p = np.ascontiguousarray(model.params[name])
        h.update(name.encode())
        h.update(np.array(p.shape, dtype=np.int64).tobytes())
        h.update(p.tobytes())
    return h.hexdigest()


# -- forward / backward --------------------------------------------------------

def _check_inputs(model: Model, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    if x.shape[1:] != tuple(model.spec.input_shape):
        raise InvalidArgument(f"input shape {x.shape[1:]} does not match model {model.spec.input_shape}")
    return np.ascontiguousarray(x, dtype=model.dtype)


def _forward(model: Model, x: np.ndarray, keep: bool = False):
    p = model.params
    cache = {}
    z1 = _kernels.conv2d_forward(x, p["conv1.w"], p["conv1.b"])
    a1 = np.maximum(z1, 0)
    m1, i1 = _kernels.maxpool2_forward(a1)
    z2 = _kernels.conv2d_forward(m1, p["conv2.w"], p["conv2.b"])
    a2 = np.maximum(z2, 0)
    m2, i2 = _kernels.maxpool2_forward(a2)
    flat = m2.reshape(m2.shape[0], -1)
    z3 = flat @ p["dense1.w"] + p["dense1.b"]
    a3 = np.maximum(z3, 0)
    logits = a3 @ p["dense2.w"] + p["dense2.b"]
    if keep:
        cache = dict(x=x, z1=z1, i1=i1, m1=m1, z2=z2, i2=i2, m2=m2, flat=flat, z3=z3, a3=a3)
    return logits, cache


def softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def predict_proba(model: Model, inputs, batch_size: int = 64) -> np.ndarray:
    x = _check_inputs(model, inputs)
    out = [softmax(_forward(model, x[i:i + batch_size])[0]) for i in range(0, len(x), batch_size)]
    return np.concatenate(out) if out else np.zeros((0, model.spec.n_classes))


def forward(model: Model, tensor, modality: Modality | None = None) -> ClassScores:
    x = np.asarray(tensor)
    if x.shape != tuple(model.spec.input_shape):
        raise InvalidArgument(f"input shape {x.shape} does not match model {model.spec.input_shape}")
    return ClassScores(predict_proba(model, x[None])[0], model.classes, modality)


def _label_indices(labels, n_classes: int, n: int) -> np.ndarray:
    y = np.asarray(labels)
    if y.ndim == 2:
        if y.shape != (n, n_classes) or not np.all((y == 0) | (y == 1)) or not np.all(y.sum(axis=1) == 1):
            raise InvalidArgument("one-hot labels must have exactly one 1 per row over n_classes columns")
        y = y.argmax(axis=1)
    y = y.astype(np.int64)
    if y.shape != (n,):
        raise InvalidArgument("one label per input is required")
    if np.any(y < 0) or np.any(y >= n_classes):
        raise InvalidArgument(f"label index out of range for {n_classes} classes")
    return y


def loss_and_grads(model: Model, inputs, labels):
    """Mean cross-entropy over the batch and its gradient for every parameter.

    ``labels`` may be class indices (into ``model.classes``) or one-hot rows.
    """
    x = _check_inputs(model, inputs)
    if len(x) == 0:
        raise InvalidArgument("empty batch")
    y = _label_indices(labels, model.spec.n_classes, len(x))
    n = len(x)
    p = model.params
    logits, c = _forward(model, x, keep=True)
    probs = softmax(logits)
    loss = float(-np.mean(np.log(np.maximum(probs[np.arange(n), y], 1e-300))))

    d_logits = probs.copy()
    d_logits[np.arange(n), y] -= 1.0
    d_logits = (d_logits / n).astype(model.dtype)
    g = {}
    g["dense2.w"] = c["a3"].T @ d_logits
    g["dense2.b"] = d_logits.sum(axis=0)
    d_a3 = d_logits @ p["dense2.w"].T
    d_z3 = d_a3 * (c["z3"] > 0)
    g["dense1.w"] = c["flat"].T @ d_z3
    g["dense1.b"] = d_z3.sum(axis=0)
    d_m2 = np.ascontiguousarray((d_z3 @ p["dense1.w"].T).reshape(c["m2"].shape))
    d_a2 = _kernels.maxpool2_backward(d_m2, c["i2"])
    d_z2 = np.ascontiguousarray(d_a2 * (c["z2"] > 0))
    d_m1, g["conv2.w"], g["conv2.b"] = _kernels.conv2d_backward(c["m1"], p["conv2.w"], d_z2)
    d_a1 = _kernels.maxpool2_backward(np.ascontiguousarray(d_m1), c["i1"])
    d_z1 = np.ascontiguousarray(d_a1 * (c["z1"] > 0))
    _, g["conv1.w"], g["conv1.b"] = _kernels.conv2d_backward(c["x"], p["conv1.w"], d_z1)
    return loss, {k: g[k].astype(model.dtype, copy=False) for k in PARAM_NAMES}


# -- optimization ---------------------------------------------------------------

class SGD:
    """Classic momentum: v <- mu*v - lr*g; p <- p + v (velocity kept here)."""

    def __init__(self, config: TrainConfig):
        self.config = config
        self.velocity: dict[str, np.ndarray] = {}

    def step(self, model: Model, grads: dict[str, np.ndarray]) -> Model:
        lr, mu = self.config.learning_rate, self.config.momentum
        for name, param in model.params.items():
            grad = grads.get(name)
            if grad is None or grad.shape != param.shape:
                raise InvalidArgument(f"gradient for {name} missing or mis-shaped")
            v = self.velocity.get(name)
            if v is None:
                v = np.zeros_like(param)
            v = mu * v - lr * grad.astype(param.dtype, copy=False)
            self.velocity[name] = v.astype(param.dtype, copy=False)
            param += self.velocity[name]
        return model


def sgd_step(model: Model, grads, config: TrainConfig, optimizer: SGD | None = None) -> Model:
    return (optimizer or SGD(config)).step(model, grads)


def _mean_loss_acc(model: Model, x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    probs = predict_proba(model, x)
    loss = float(-np.mean(np.log(np.maximum(probs[np.arange(len(y)), y], 1e-300))))
    acc = float(np.mean(probs.argmax(axis=1) == y))
    return loss, acc


def train(model: Model, train_set, val_set, config: TrainConfig, log=None):
    """Mini-batch momentum SGD with seeded shuffling.

    ``train_set`` and ``val_set`` are (inputs, label indices) pairs. Returns
    the snapshot with the best validation accuracy (lower validation loss
    breaks ties) and the per-epoch history.
    """
    xtr, ytr = train_set
    xva, yva = val_set
    if len(xtr) == 0 or len(xva) == 0:
        raise InvalidArgument("training and validation sets must be non-empty")
    xtr = _check_inputs(model, xtr)
    xva = _check_inputs(model, xva)
    ytr = _label_indices(ytr, model.spec.n_classes, len(xtr))
    yva = _label_indices(yva, model.spec.n_classes, len(xva))

    opt = SGD(config)
    history: list[EpochStats] = []
    best, best_key = model.copy(), None
    for epoch in range(config.epochs):
        order = Xoshiro256(derive_seed(config.seed, epoch)).permutation(len(xtr))
        total, correct = 0.0, 0
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            loss, grads = loss_and_grads(model, xtr[idx], ytr[idx])
            total += loss * len(idx)
            opt.step(model, grads)
        train_loss, train_acc = total / len(xtr), _mean_loss_acc(model, xtr, ytr)[1]
        val_loss, val_acc = _mean_loss_acc(model, xva, yva)
        stats = EpochStats(epoch + 1, train_loss, train_acc, val_loss, val_acc)
        history.append(stats)
        if log:
            log(stats)
        key = (val_acc, -val_loss)
        if best_key is None or key > best_key:
            best, best_key = model.copy(), key
    return best, history


def evaluate(model: Model, inputs, labels) -> EvalReport:
    x = _check_inputs(model, inputs)
    if len(x) == 0:
        raise InvalidArgument("empty evaluation set")
    y = _label_indices(labels, model.spec.n_classes, len(x))
    return report_from_predictions(y, predict_proba(model, x).argmax(axis=1), model.classes)


def report_from_predictions(y_true, y_pred, classes) -> EvalReport:
    k = len(classes)
    cm = np.zeros((k, k), dtype=np.int64)
    np.add.at(cm, (np.asarray(y_true), np.asarray(y_pred)), 1)
    tp = np.diag(cm).astype(np.float64)
    pred_tot = cm.sum(axis=0)
    true_tot = cm.sum(axis=1)
    precision = np.divide(tp, pred_tot, out=np.zeros(k), where=pred_tot > 0)
    recall = np.divide(tp, true_tot, out=np.zeros(k), where=true_tot > 0)
    denom = precision + recall
    f1 = np.divide(2 * precision * recall, denom, out=np.zeros(k), where=denom > 0)
    seen = (true_tot + pred_tot) > 0  # macro average over classes that occur
    return EvalReport(tuple(classes), cm, float(tp.sum() / cm.sum()), precision, recall, f1,
                      float(f1[seen].mean()))


# -- model file ----------------------------------------------------------------
# little-endian: "FDMS" | u32 version | u64 seed | u32 n_classes | u32 code * n
# | u32 tensor count | per tensor: u32 rank, u32 dims..., f32 payload | u32 CRC32

MAGIC = b"FDMS"
FORMAT_VERSION = 1


def model_to_bytes(model: Model) -> bytes:
    out = bytearray(MAGIC)
    out += struct.pack("<IQI", FORMAT_VERSION, model.seed, len(model.classes))
    out += struct.pack(f"<{len(model.classes)}I", *(int(c) for c in model.classes))
    out += struct.pack("<I", len(PARAM_NAMES))
    for name in PARAM_NAMES:
        p = model.params[name]
        out += struct.pack(f"<I{p.ndim}I", p.ndim, *p.shape)
        out += np.ascontiguousarray(p, dtype="<f4").tobytes()
    out += struct.pack("<I", zlib.crc32(out))
    return bytes(out)


def save_model(model: Model, path) -> None:
    Path(path).write_bytes(model_to_bytes(model))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(f"truncated while reading {what}", offset=self.pos)
        b = self.data[self.pos:self.pos + n]
        self.pos += n
        return b

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]


def model_from_bytes(data: bytes) -> Model:
    r = _Reader(data)
    if r.take(4, "magic") != MAGIC:
        raise FormatError("bad magic, expected 'FDMS'", offset=0)
    version = r.u32("version")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported model format version {version}", offset=4)
    seed = struct.unpack("<Q", r.take(8, "seed"))[0]
    off = r.pos
    n_classes = r.u32("class count")
    if not 2 <= n_classes <= len(FaultClass):
        raise FormatError(f"class count {n_classes} out of range", offset=off)
    codes = []
    for _ in range(n_classes):
        off = r.pos
        code = r.u32("class code")
        if code >= len(FaultClass) or code in codes:
            raise FormatError(f"invalid class code {code}", offset=off)
        codes.append(code)
    off = r.pos
    n_tensors = r.u32("tensor count")
    if n_tensors != len(PARAM_NAMES):
        raise FormatError(f"expected {len(PARAM_NAMES)} parameter tensors, found {n_tensors}", offset=off)
    params = {}
    for name in PARAM_NAMES:
        off = r.pos
        rank = r.u32(f"{name} rank")
        if rank not in (1, 2, 4):
            raise FormatError(f"{name}: implausible rank {rank}", offset=off)
        dims = struct.unpack(f"<{rank}I", r.take(4 * rank, f"{name} dims"))
        count = int(np.prod(dims, dtype=np.int64))
        if count <= 0 or count > (len(data) - r.pos) // 4:
            raise FormatError(f"{name}: payload of {count} floats exceeds file", offset=r.pos)
        params[name] = np.frombuffer(r.take(4 * count, f"{name} payload"), dtype="<f4").reshape(dims).astype(np.float32)
    off = r.pos
    crc = r.u32("CRC32")
    if r.pos != len(data):
        raise FormatError("trailing bytes after CRC32", offset=r.pos)
    if crc != zlib.crc32(data[:off]):
        raise FormatError("CRC32 mismatch", offset=off)

    w1, w2, d1, d2 = params["conv1.w"], params["conv2.w"], params["dense1.w"], params["dense2.w"]
    if w1.ndim != 4 or w2.ndim != 4 or d1.ndim != 2 or d2.ndim != 2:
        raise FormatError("parameter ranks do not match the architecture", offset=off)
    side = 4 * math.isqrt(max(d1.shape[0] // max(w2.shape[0], 1), 0))
    spec = ModelSpec((w1.shape[1], side, side), d2.shape[1], conv1=w1.shape[0], conv2=w2.shape[0],
                     hidden=d1.shape[1], kernel=w1.shape[2])
    try:
        spec.validate()
    except InvalidArgument as e:
        raise FormatError(f"inconsistent architecture: {e}", offset=off) from None
    for name, shape in spec.param_shapes().items():
        if params[name].shape != shape:
            raise FormatError(f"{name} has shape {params[name].shape}, expected {shape}", offset=off)
    if d2.shape[1] != n_classes:
        raise FormatError("class count does not match output layer", offset=off)
    if not all(np.all(np.isfinite(p)) for p in params.values()):
        raise FormatError("non-finite parameter values", offset=off)
    return Model(spec, params, tuple(FaultClass(c) for c in codes), seed)


def load_model(path) -> Model:
    path = Path(path)
    try:
        return model_from_bytes(path.read_bytes())
    except FormatError as e:
        e.path = path
        raise
