"""Time-domain residual detector evaluated over the silent parts of a schedule."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import NeedsMoreSamples, ParameterError
from .plant import StateSpaceModel, ToneRing, predict_output
from .sigcore import ChallengeSchedule, Phase, SignalTrace

REPORT_COLUMNS = ("challenge_index", "t_challenge_s", "g_max", "alarm", "truth_attacked")


@dataclass
class DetectorConfig:
    window_T: int
    alarm_threshold: float
    model: StateSpaceModel
    ring: ToneRing = field(default_factory=ToneRing)

    def __post_init__(self):
        if self.window_T < 1:
            raise ParameterError("window_T must be at least 1")
        if not self.alarm_threshold > 0:
            raise ParameterError("alarm threshold must be positive")


@dataclass
class ChallengeRecord:
    index: int
    start: int
    length: int
    t_challenge_s: float
    g_max: float
    alarm: bool
    truth_attacked: bool | None = None
    skipped: bool = False


@dataclass
class DetectionReport:
    records: list[ChallengeRecord]
    residual: SignalTrace
    threshold: float
    warnings: list[str] = field(default_factory=list)

    @property
    def evaluated(self) -> list[ChallengeRecord]:
        return [r for r in self.records if not r.skipped]

    def g_max(self) -> np.ndarray:
        return np.array([r.g_max for r in self.evaluated])

    def alarms(self) -> np.ndarray:
        return np.array([r.alarm for r in self.evaluated], dtype=bool)

    def counts(self) -> dict[str, int]:
        c = dict(tp=0, fp=0, tn=0, fn=0)
        for r in self.evaluated:
            if r.truth_attacked is None:
                continue
            key = ("t" if r.alarm == r.truth_attacked else "f") + ("p" if r.alarm else "n")
            c[key] += 1
        return c

    def any_alarm(self) -> bool:
        return bool(self.alarms().any())

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(REPORT_COLUMNS)
            for r in self.evaluated:
                truth = "" if r.truth_attacked is None else int(r.truth_attacked)
                w.writerow([r.index, repr(float(r.t_challenge_s)), repr(float(r.g_max)), int(r.alarm), truth])
        return path


def chi2_statistic(z, T: int) -> float:
    """Mean of ``z**2`` over the last ``T`` samples."""
    z = np.asarray(z, dtype=float)
    if T < 1:
        raise ParameterError("T must be at least 1")
    if z.size < T:
        raise NeedsMoreSamples(f"window holds {z.size} samples, need {T}")
    tail = z[-T:]
    return float(np.dot(tail, tail) / T)


def sliding_chi2(z, T: int) -> np.ndarray:
    """``g[j] = mean(z[j:j+T]**2)`` for every full window inside ``z``."""
    z = np.asarray(z, dtype=float)
    if z.size < T:
        raise NeedsMoreSamples(f"window holds {z.size} samples, need {T}")
    c = np.concatenate([[0.0], np.cumsum(z * z)])
    g = (c[T:] - c[:-T]) / T
    return np.maximum(g, 0.0)


def predict_silence_response(model: StateSpaceModel, state_at_challenge, horizon: int) -> SignalTrace:
    """Noise-free, input-free output starting from the state at the challenge."""
    y = model.free_response(horizon, np.asarray(state_at_challenge, dtype=float))
    return SignalTrace(y, model.sample_rate_hz)


def detect(y: SignalTrace, schedule: ChallengeSchedule, config: DetectorConfig,
           truth_active=None, prediction=None) -> DetectionReport:
    """Score every silent segment and alarm where the windowed residual energy exceeds the threshold.

    Parameters
    ----------
    y : SignalTrace
        Measured sensor output aligned with ``schedule``.
    truth_active : array_like of bool, optional
        Per-sample ground truth; a challenge is labelled attacked when any of
        its samples is active.
    prediction : array_like, optional
        Precomputed no-attack output; computed from the model when omitted.
    """
    n = schedule.total_samples
    if len(y) != n:
        raise ParameterError(f"trace has {len(y)} samples, schedule has {n}")
    y_hat = predict_output(config.model, schedule, config.ring) if prediction is None else np.asarray(prediction)
    z = y.samples - y_hat
    T = config.window_T
    records, notes = [], []
    truth = None if truth_active is None else np.asarray(truth_active, dtype=bool)
    for i, (start, length) in enumerate(schedule.segments_of(Phase.SILENT)):
        label = None if truth is None else bool(truth[start:start + length].any())
        t_c = y.time_of(start)
        if length < T:
            notes.append(f"challenge {i} at sample {start}: silent length {length} < window {T}, skipped")
            records.append(ChallengeRecord(i, start, length, t_c, float("nan"), False, label, skipped=True))
            continue
        g = sliding_chi2(z[start:start + length], T)
        g_max = float(g.max())
        records.append(ChallengeRecord(i, start, length, t_c, g_max, g_max > config.alarm_threshold, label))
    return DetectionReport(records, y.with_samples(z), config.alarm_threshold, notes)


def observer_prediction(model: StateSpaceModel, schedule: ChallengeSchedule, ring: ToneRing, y,
                        gain: float = 0.05) -> np.ndarray:
    """No-attack prediction from a state estimate corrected by the measurements.

    While the actuator is on the estimate is pulled toward ``y`` with an
    exponential-forgetting gain; during silence it runs open loop, so the
    silent-window prediction starts from a measured rather than assumed
    state. ``gain = 0`` reproduces :func:`predict_output`.
    """
    if not 0 <= gain < 1:
        raise ParameterError("observer gain must lie in [0, 1)")
    y = np.asarray(y, dtype=float)
    n = schedule.total_samples
    if y.size != n:
        raise ParameterError(f"trace has {y.size} samples, schedule has {n}")
    drive = ring.response(schedule, model.sample_rate_hz)
    on = schedule.u() > 0
    C = model.C
    L = gain * C / float(C @ C)
    x = np.zeros(model.order)
    out = np.empty(n)
    for i in range(n):
        out[i] = C @ x
        if on[i]:
            x = x + L * (y[i] - out[i])
        x = model.A @ x + model.B * drive[i]
    return out
