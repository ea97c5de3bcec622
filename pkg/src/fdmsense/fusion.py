"""Sensitivity-weighted fusion, threshold flagging, debounced alarms and
stereo localization."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping

import numpy as np

from .cnn import ClassScores
from .errors import InvalidArgument, NoDataError, ValidationError
from .signal_core import FaultClass, Modality

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib


class Level(enum.Enum):
    HIGH = "high"
    PARTIAL = "partial"
    LOW = "low"


DEFAULT_LEVEL_WEIGHTS = {Level.HIGH: 1.0, Level.PARTIAL: 0.5, Level.LOW: 0.1}


class Localization(enum.Enum):
    LEFT = "left"
    RIGHT = "right"
    CENTER = "center"
    UNKNOWN = "unknown"


LOCALIZE_DEAD_ZONE_DB = 3.0


@dataclass(frozen=True)
class SensitivityMatrix:
    levels: Mapping[tuple[FaultClass, Modality], Level]
    level_weights: Mapping[Level, float] = field(default_factory=lambda: dict(DEFAULT_LEVEL_WEIGHTS))

    def __post_init__(self):
        missing = [(f.label, m.value) for f in FaultClass for m in Modality if (f, m) not in self.levels]
        if missing:
            raise InvalidArgument(f"sensitivity matrix is missing cells: {missing}")
        if any(self.level_weights.get(lv, 0.0) <= 0 for lv in Level):
            raise InvalidArgument("every level weight must be strictly positive")

    def level(self, fault: FaultClass, modality: Modality) -> Level:
        return self.levels[(fault, modality)]

    def weight(self, fault: FaultClass, modality: Modality) -> float:
        return float(self.level_weights[self.levels[(fault, modality)]])


@dataclass(frozen=True)
class FusionConfig:
    threshold: float = 0.8
    debounce_k: int = 3
    staleness_ms: int = 2000

    def __post_init__(self):
        if not 0 < self.threshold < 1:
            raise InvalidArgument("threshold must be in (0, 1)")
        if self.debounce_k < 1:
            raise InvalidArgument("debounce_k must be >= 1")
        if self.staleness_ms <= 0:
            raise InvalidArgument("staleness_ms must be positive")


@dataclass(frozen=True)
class TimedScores:
    """Per-modality classifier output stamped with the time it describes."""
    scores: ClassScores
    ts_ms: int


@dataclass(frozen=True)
class FusionDecision:
    fused: dict[FaultClass, float]
    flagged: FaultClass | None
    modalities_used: frozenset[Modality]
    localization: Localization = Localization.UNKNOWN


def default_sensitivity() -> SensitivityMatrix:
    F, M = FaultClass, Modality
    high = {
        M.ACOUSTIC: {F.MATERIAL_RUNOUT, F.NOZZLE_CLOG, F.OVER_EXTRUSION, F.EXTRUDER_GEAR_SLIP},
        M.VIBRATION: {F.LAYER_SHIFT, F.BELT_SLIP},
        M.THERMAL: {F.HOT_END_TEMP_DRIFT, F.MATERIAL_RUNOUT, F.NOZZLE_CLOG},
    }
    partial = {
        M.ACOUSTIC: {F.BED_ADHESION_FAILURE, F.NORMAL},
        M.VIBRATION: {F.EXTRUDER_GEAR_SLIP, F.BED_ADHESION_FAILURE, F.NORMAL},
        M.THERMAL: {F.OVER_EXTRUSION, F.NORMAL},
    }
    levels = {}
    for m in Modality:
        for f in FaultClass:
            levels[(f, m)] = Level.HIGH if f in high[m] else Level.PARTIAL if f in partial[m] else Level.LOW
    return SensitivityMatrix(levels)


def fuse(scores: Mapping[Modality, TimedScores | ClassScores], matrix: SensitivityMatrix,
         config: FusionConfig, now_ms: int | None = None) -> dict[FaultClass, float]:
    """Per-class weighted mean over the present, non-stale modalities.

    ``fused[f] = sum_m w(f, m) p_m[f] / sum_m w(f, m)``. Plain ``ClassScores``
    carry no timestamp and are never stale.
    """
    usable = usable_modalities(scores, config, now_ms)
    if not usable:
        raise NoDataError("no present, non-stale modality to fuse")
    classes = None
    for m in usable:
        cs = _scores(scores[m])
        if classes is None:
            classes = cs.classes
        elif cs.classes != classes:
            raise InvalidArgument("all modality scores must cover the same class set")
    fused = {}
    for i, f in enumerate(classes):
        num = den = 0.0
        for m in usable:
            w = matrix.weight(f, m)
            num += w * float(_scores(scores[m]).probs[i])
            den += w
        fused[f] = num / den
    return fused


def _scores(s) -> ClassScores:
    return s.scores if isinstance(s, TimedScores) else s


def usable_modalities(scores, config: FusionConfig, now_ms: int | None) -> list[Modality]:
    out = []
    for m in Modality:
        s = scores.get(m)
        if s is None:
            continue
        if isinstance(s, TimedScores) and now_ms is not None and now_ms - s.ts_ms > config.staleness_ms:
            continue
        out.append(m)
    return out


def flag(fused: Mapping[FaultClass, float], config: FusionConfig) -> FaultClass | None:
    """Highest-probability non-Normal class if it reaches the threshold.

    Ties go to the lowest class code.
    """
    best, best_p = None, -1.0
    for f in sorted(fused):
        if f is FaultClass.NORMAL:
            continue
        if fused[f] > best_p:
            best, best_p = f, fused[f]
    if best is not None and best_p >= config.threshold:
        return best
    return None


# -- debounce --------------------------------------------------------------------

class AlarmKind(enum.Enum):
    RAISED = "raised"
    CLEARED = "cleared"


@dataclass(frozen=True)
class AlarmEvent:
    kind: AlarmKind
    fault: FaultClass


@dataclass(frozen=True)
class DebounceState:
    """``run_length`` counts consecutive windows flagged with ``current_fault``.

    ``alarm_fault`` is the fault whose alarm is active (None when idle) and
    ``quiet_run`` counts consecutive windows since then without that fault.
    """
    current_fault: FaultClass | None = None
    run_length: int = 0
    alarm_active: bool = False
    alarm_fault: FaultClass | None = None
    quiet_run: int = 0


def debounce_step(state: DebounceState, flagged: FaultClass | None,
                  config: FusionConfig) -> tuple[DebounceState, AlarmEvent | None]:
    """Raise when a fault's run reaches exactly ``debounce_k``; clear an active
    alarm after ``debounce_k`` consecutive windows without its fault."""
    k = config.debounce_k
    if flagged is not None and flagged == state.current_fault:
        run = state.run_length + 1
    elif flagged is not None:
        run = 1
    else:
        run = 0
    new = replace(state, current_fault=flagged, run_length=run)

    if flagged is not None and run == k:
        return replace(new, alarm_active=True, alarm_fault=flagged, quiet_run=0), \
            AlarmEvent(AlarmKind.RAISED, flagged)
    if state.alarm_active:
        if flagged == state.alarm_fault:
            return replace(new, quiet_run=0), None
        quiet = state.quiet_run + 1
        if quiet >= k:
            return replace(new, alarm_active=False, alarm_fault=None, quiet_run=0), \
                AlarmEvent(AlarmKind.CLEARED, state.alarm_fault)
        return replace(new, quiet_run=quiet), None
    return new, None


def localize(balance_db: float) -> Localization:
    if not np.isfinite(balance_db):
        raise InvalidArgument("balance must be finite")
    if balance_db > LOCALIZE_DEAD_ZONE_DB:
        return Localization.LEFT
    if balance_db < -LOCALIZE_DEAD_ZONE_DB:
        return Localization.RIGHT
    return Localization.CENTER


# -- config file -----------------------------------------------------------------
# {
#   "fusion": {"threshold": 0.8, "debounce_k": 3, "staleness_ms": 2000},
#   "weights": {"high": 1.0, "partial": 0.5, "low": 0.1},
#   "sensitivity": {"<fault>": {"acoustic": "high", "vibration": "low", "thermal": "partial"}},
#   "rates": {"audio_hz": 16000, "vibration_hz": 200, "thermal_fps": 8}
# }
# Every section and key is optional; sensitivity cells override the defaults.

_SECTION_KEYS = {
    "fusion": {"threshold", "debounce_k", "staleness_ms"},
    "weights": {level.value for level in Level},
    "rates": {"audio_hz", "vibration_hz", "thermal_fps"},
}


@dataclass(frozen=True)
class RunConfig:
    fusion: FusionConfig
    matrix: SensitivityMatrix
    rates: dict[str, int]


def default_rates() -> dict[str, int]:
    return {"audio_hz": 16000, "vibration_hz": 200, "thermal_fps": 8}


def parse_config(doc: dict, source: str = "<config>") -> RunConfig:
    problems = []
    if not isinstance(doc, dict):
        raise ValidationError(["config root must be a table/object"], path=source)
    for key in doc:
        if key not in {"fusion", "weights", "sensitivity", "rates"}:
            problems.append(f"unknown key {key!r}")
    sections = {}
    for name, allowed in _SECTION_KEYS.items():
        sec = doc.get(name, {})
        if not isinstance(sec, dict):
            problems.append(f"{name} must be a table")
            sec = {}
        for key, value in sec.items():
            if key not in allowed:
                problems.append(f"unknown key {name}.{key}")
            elif isinstance(value, bool) or not isinstance(value, (int, float)):
                problems.append(f"{name}.{key} must be a number")
        sections[name] = {k: v for k, v in sec.items() if k in allowed and not isinstance(v, bool)
                          and isinstance(v, (int, float))}

    base = default_sensitivity()
    levels = dict(base.levels)
    sens = doc.get("sensitivity", {})
    if not isinstance(sens, dict):
        problems.append("sensitivity must be a table")
        sens = {}
    for fault_name, row in sens.items():
        try:
            fault = FaultClass.from_label(fault_name)
        except InvalidArgument:
            problems.append(f"unknown fault class {fault_name!r}")
            continue
        if not isinstance(row, dict):
            problems.append(f"sensitivity.{fault_name} must be a table")
            continue
        for mod_name, level_name in row.items():
            try:
                modality = Modality(mod_name)
            except ValueError:
                problems.append(f"unknown modality {fault_name}.{mod_name}")
                continue
            try:
                levels[(fault, modality)] = Level(str(level_name).lower())
            except ValueError:
                problems.append(f"unknown level {level_name!r} at {fault_name}.{mod_name}")

    weights = dict(DEFAULT_LEVEL_WEIGHTS)
    for key, value in sections["weights"].items():
        weights[Level(key)] = float(value)
    rates = default_rates()
    for key, value in sections["rates"].items():
        if value <= 0 or int(value) != value:
            problems.append(f"rates.{key} must be a positive integer")
        else:
            rates[key] = int(value)
    fusion = None
    try:
        fusion = FusionConfig(**{k: (int(v) if k != "threshold" else float(v))
                                 for k, v in sections["fusion"].items()})
    except InvalidArgument as e:
        problems.append(str(e))
    matrix = None
    try:
        matrix = SensitivityMatrix(levels, weights)
    except InvalidArgument as e:
        problems.append(str(e))
    if problems:
        raise ValidationError(problems, path=source)
    return RunConfig(fusion, matrix, rates)


def load_config(path) -> RunConfig:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    try:
        doc = json.loads(text) if path.suffix.lower() == ".json" else tomllib.loads(text)
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as e:
        raise ValidationError([f"cannot parse config: {e}"], path=path) from None
    return parse_config(doc, str(path))


def default_run_config() -> RunConfig:
    return RunConfig(FusionConfig(), default_sensitivity(), default_rates())
