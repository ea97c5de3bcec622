"""Streaming monitor: per-modality ingestion workers, timestamp alignment,
fusion, debounced alarms and JSONL events.

Each enabled modality runs one worker thread that reads its input (file or
named pipe), windows it, classifies each window and pushes timestamped
results into a bounded queue. A single consumer merges the queues by
timestamp and emits one event per fusion tick (every second from the first
full window on). Output therefore never depends on thread scheduling.
"""

from __future__ import annotations

import json
import queue
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import IO

import numpy as np

from . import cnn, dsp, fusion
from .datasets import FRAME_RE, WavStream, iter_accel_lines, iter_pgm_stream, read_pgm
from .errors import FormatError, InvalidArgument, NoDataError
from .features import HOP_S, WINDOW_S, modality_tensor
from .signal_core import AudioWindow, FaultClass, Modality, ThermalFrame, VibrationWindow

QUEUE_CAPACITY = 4
TICK_MS = int(HOP_S * 1000)
FIRST_TICK_MS = int(WINDOW_S * 1000)

PRESETS = {
    "baseline": (Modality.ACOUSTIC,),
    "hybrid": (Modality.ACOUSTIC, Modality.VIBRATION, Modality.THERMAL),
}

_SCORES = {"type": "object", "additionalProperties": {"type": "number", "minimum": 0, "maximum": 1}}
EVENT_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["ts_ms", "window_id", "scores", "fused", "flagged", "alarm", "alarm_fault",
                 "localization", "balance_db", "modalities_used", "stale", "error"],
    "properties": {
        "ts_ms": {"type": "integer", "minimum": 0},
        "window_id": {"type": ["integer", "null"], "minimum": 0},
        "scores": {"type": "object", "propertyNames": {"enum": [m.value for m in Modality]},
                   "additionalProperties": _SCORES},
        "fused": _SCORES,
        "flagged": {"type": ["string", "null"]},
        "alarm": {"enum": ["raised", "cleared", "none"]},
        "alarm_fault": {"type": ["string", "null"]},
        "localization": {"enum": [loc.value for loc in fusion.Localization]},
        "balance_db": {"type": ["number", "null"]},
        "modalities_used": {"type": "array", "items": {"enum": [m.value for m in Modality]}},
        "stale": {"type": "object", "additionalProperties": {"type": "boolean"}},
        "error": {"type": ["string", "null"]},
    },
}


@dataclass
class Sources:
    """Input per modality: a regular file, a named pipe, or (thermal) a frame directory."""
    audio: Path | None = None
    vibration: Path | None = None
    thermal: Path | None = None

    @classmethod
    def from_scene_dir(cls, scene_dir) -> "Sources":
        d = Path(scene_dir)
        return cls(d / "audio.wav", d / "vibration.csv", d / "thermal")

    def for_modality(self, m: Modality) -> Path | None:
        return {Modality.ACOUSTIC: self.audio, Modality.VIBRATION: self.vibration,
                Modality.THERMAL: self.thermal}[m]


@dataclass(frozen=True)
class _Result:
    ts_ms: int
    scores: cnn.ClassScores | None = None
    balance_db: float | None = None
    error: str | None = None


_END = object()


class _Worker(threading.Thread):
    def __init__(self, modality: Modality, source: Path, model: cnn.Model, rates: dict[str, int]):
        super().__init__(name=f"fdms-{modality.value}", daemon=True)
        self.modality = modality
        self.source = Path(source)
        self.model = model
        self.rates = rates
        self.out: queue.Queue = queue.Queue(maxsize=QUEUE_CAPACITY)
        self.stop = threading.Event()

    def _put(self, item) -> bool:
        # blocks while the consumer is behind; gives up only when stopping
        while not self.stop.is_set():
            try:
                self.out.put(item, timeout=0.1)
                return True
            except queue.Full:
                continue
        return False

    def _classify(self, ts_ms: int, data, balance=None) -> bool:
        scores = cnn.forward(self.model, modality_tensor(self.modality, data), self.modality)
        return self._put(_Result(ts_ms, scores, balance))

    def run(self):
        try:
            {Modality.ACOUSTIC: self._run_audio, Modality.VIBRATION: self._run_vibration,
             Modality.THERMAL: self._run_thermal}[self.modality]()
        except Exception as e:  # any failure must still reach the consumer as an error event
            self._put(_Result(-1, error=f"{self.modality.value}: {e}"))
        finally:
            self._put(_END)

    def _run_audio(self):
        with open(self.source, "rb") as f:
            stream = WavStream(f)
            rate = stream.info.sample_rate_hz
            win_n, hop_n = int(WINDOW_S * rate), int(HOP_S * rate)
            buf = np.zeros((0, stream.info.channels))
            consumed = 0  # frames dropped from the front of buf
            while not self.stop.is_set():
                block = stream.read(hop_n)
                if block is None:
                    return
                buf = np.concatenate([buf, block])
                while buf.shape[0] >= win_n:
                    w = buf[:win_n]
                    left = w[:, 0]
                    right = w[:, 1] if w.shape[1] > 1 else w[:, 0]
                    end_ms = int(round((consumed + win_n) * 1000 / rate))
                    win = AudioWindow(left, right, rate, int(round(consumed * 1000 / rate)))
                    if not self._classify(end_ms, win, dsp.filtered_balance_db(win)):
                        return
                    buf = buf[hop_n:]
                    consumed += hop_n

    def _run_vibration(self):
        rate = self.rates["vibration_hz"]
        win_n, hop_n = int(WINDOW_S * rate), int(HOP_S * rate)
        period_ms = 1000.0 / rate
        rows: list[tuple] = []
        with open(self.source, "r", encoding="ascii", errors="replace", newline="") as f:
            for item in iter_accel_lines(f, strict=False):
                if self.stop.is_set():
                    return
                if isinstance(item, FormatError):
                    ts = int(rows[-1][0]) if rows else 0
                    if not self._put(_Result(ts, error=f"vibration: {item}")):
                        return
                    continue
                rows.append(item)
                if len(rows) == win_n:
                    arr = np.array(rows)
                    end_ms = int(round(arr[-1, 0] + period_ms))
                    win = VibrationWindow(arr[:, 1], arr[:, 2], arr[:, 3], rate, int(arr[0, 0]))
                    if not self._classify(end_ms, win):
                        return
                    rows = rows[hop_n:]

    def _frames(self):
        if self.source.is_dir():
            numbered = sorted((int(m.group(1)), p) for p in self.source.iterdir()
                              if (m := FRAME_RE.match(p.name)))
            for num, p in numbered:
                try:
                    yield num, read_pgm(p), None
                except FormatError as e:
                    yield num, None, str(e)
        else:
            with open(self.source, "rb") as f:
                for i, px in enumerate(iter_pgm_stream(f)):
                    yield i, px, None

    def _run_thermal(self):
        fps = self.rates["thermal_fps"]
        for num, px, err in self._frames():
            if self.stop.is_set():
                return
            ts = int(round(num * 1000 / fps))
            if err is not None:
                if not self._put(_Result(ts, error=f"thermal: {err}")):
                    return
                continue
            frame = ThermalFrame(px, px.shape[1], px.shape[0], ts)
            if not self._classify(ts, frame):
                return


def _event(ts_ms, window_id, scores=None, fused=None, flagged=None, alarm=None,
           localization=fusion.Localization.UNKNOWN, balance=None, used=(), stale=None, error=None) -> dict:
    return {
        "ts_ms": int(ts_ms),
        "window_id": window_id,
        "scores": {m.value: s.as_dict() for m, s in (scores or {}).items()},
        "fused": {f.label: float(p) for f, p in (fused or {}).items()},
        "flagged": flagged.label if flagged is not None else None,
        "alarm": alarm.kind.value if alarm is not None else "none",
        "alarm_fault": alarm.fault.label if alarm is not None else None,
        "localization": localization.value,
        "balance_db": None if balance is None else float(balance),
        "modalities_used": [m.value for m in used],
        "stale": {m.value: bool(v) for m, v in (stale or {}).items()},
        "error": error,
    }


class _Writer:
    """One ``write`` + ``flush`` per event so an interrupt never splits a line."""

    def __init__(self, out: IO[str]):
        self.out = out
        self.count = 0
        self.last_ts = 0

    def emit(self, event: dict):
        self.last_ts = max(self.last_ts, event["ts_ms"])
        event["ts_ms"] = self.last_ts
        self.out.write(json.dumps(event, sort_keys=True) + "\n")
        self.out.flush()
        self.count += 1


def check_models(preset: str, models: dict[Modality, cnn.Model]) -> tuple[Modality, ...]:
    if preset not in PRESETS:
        raise InvalidArgument(f"unknown preset {preset!r}; valid: {', '.join(PRESETS)}")
    enabled = PRESETS[preset]
    missing = [m.value for m in enabled if m not in models]
    if missing:
        raise InvalidArgument(f"preset {preset} needs models for: {', '.join(missing)}")
    class_sets = {tuple(models[m].classes) for m in enabled}
    if len(class_sets) != 1:
        raise InvalidArgument("all models must share one class set")
    return enabled


def run_monitor(sources: Sources, preset: str, models: dict[Modality, cnn.Model],
                run_config: fusion.RunConfig, out: IO[str]) -> int:
    """Run until every input is exhausted; returns the number of events written."""
    enabled = check_models(preset, models)
    for m in enabled:
        if sources.for_modality(m) is None:
            raise InvalidArgument(f"no input given for {m.value}")
    workers = {m: _Worker(m, sources.for_modality(m), models[m], run_config.rates) for m in enabled}
    for w in workers.values():
        w.start()
    writer = _Writer(out)
    try:
        _consume(workers, run_config, writer)
    finally:
        for w in workers.values():
            w.stop.set()
        for w in workers.values():
            w.join(timeout=5)
    return writer.count


def _consume(workers: dict[Modality, _Worker], cfg: fusion.RunConfig, writer: _Writer):
    heads: dict[Modality, object] = {m: w.out.get() for m, w in workers.items()}
    latest: dict[Modality, _Result] = {}
    state = fusion.DebounceState()
    max_ts = -1
    tick, window_id = FIRST_TICK_MS, 0

    def advance(m: Modality, until: int):
        nonlocal max_ts
        while heads[m] is not _END and heads[m].ts_ms <= until:
            r = heads[m]
            if r.error is not None:
                writer.emit(_event(max(r.ts_ms, 0), None, error=r.error))
            else:
                latest[m] = r
                max_ts = max(max_ts, r.ts_ms)
            heads[m] = workers[m].out.get()

    while True:
        for m in workers:
            advance(m, tick)
        exhausted = all(h is _END for h in heads.values())
        if exhausted and tick > max_ts:
            break
        if not latest and not exhausted:
            tick += TICK_MS
            continue
        state = _emit_tick(tick, window_id, workers, latest, cfg, writer, state)
        tick += TICK_MS
        window_id += 1


def _emit_tick(tick, window_id, workers, latest, cfg: fusion.RunConfig, writer: _Writer,
               state: fusion.DebounceState) -> fusion.DebounceState:
    fcfg = cfg.fusion
    present = {m: r for m, r in latest.items() if r.ts_ms <= tick}
    stale = {m: (m not in present) or (tick - present[m].ts_ms > fcfg.staleness_ms) for m in workers}
    timed = {m: fusion.TimedScores(r.scores, r.ts_ms) for m, r in present.items()}
    error = None
    try:
        fused = fusion.fuse(timed, cfg.matrix, fcfg, tick)
        flagged = fusion.flag(fused, fcfg)
    except NoDataError as e:
        fused, flagged, error = {}, None, str(e)
    used = fusion.usable_modalities(timed, fcfg, tick)
    state, alarm = fusion.debounce_step(state, flagged, fcfg)
    loc, balance = fusion.Localization.UNKNOWN, None
    if Modality.ACOUSTIC in used:
        balance = present[Modality.ACOUSTIC].balance_db
        loc = fusion.localize(balance)
    writer.emit(_event(tick, window_id, {m: timed[m].scores for m in used}, fused, flagged, alarm,
                       loc, balance, used, stale, error))
    return state


def read_events(path_or_lines) -> list[dict]:
    if isinstance(path_or_lines, (str, Path)):
        path_or_lines = Path(path_or_lines).read_text().splitlines()
    return [json.loads(line) for line in path_or_lines if line.strip()]


def raised_faults(events) -> list[FaultClass]:
    return [FaultClass.from_label(e["alarm_fault"]) for e in events if e["alarm"] == "raised"]
