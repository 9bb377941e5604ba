"""Random streams, signal containers and challenge schedules.

Everything random in the package draws from an :class:`RngStream`. Streams are
backed by the counter-based Philox generator and are split by ``stream_id`` so
parallel jobs never share generator state.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DimensionError, ParameterError

SCHEDULE_HEADER = "# pycra-schedule v1"


class RngStream:
    """Deterministic, splittable random stream.

    ``RngStream(seed)`` and ``RngStream(seed).child(k)`` are independent;
    the same ``(seed, path)`` always reproduces the same samples.
    """

    def __init__(self, seed: int, _path: tuple[int, ...] = ()):
        if seed < 0 or seed >= 2**64:
            raise ParameterError(f"seed must be a 64-bit unsigned integer, got {seed}")
        self.seed = int(seed)
        self.path = tuple(_path)
        ss = np.random.SeedSequence(self.seed, spawn_key=self.path)
        self.generator = np.random.Generator(np.random.Philox(ss))

    def child(self, stream_id: int) -> "RngStream":
        return RngStream(self.seed, self.path + (int(stream_id),))

    def normal(self, size=None, loc=0.0, scale=1.0):
        return self.generator.normal(loc, scale, size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.generator.uniform(low, high, size)

    def integers(self, low, high=None, size=None):
        return self.generator.integers(low, high, size)

    def geometric(self, p, size=None):
        return self.generator.geometric(p, size)

    def __repr__(self):
        return f"RngStream(seed={self.seed}, path={self.path})"


@dataclass(frozen=True)
class SignalTrace:
    """Uniformly sampled real signal; sample ``i`` sits at ``t0 + i / sample_rate_hz``."""

    samples: np.ndarray
    sample_rate_hz: float
    t0: float = 0.0

    def __post_init__(self):
        arr = np.array(self.samples, dtype=float, copy=True).reshape(-1)
        if not self.sample_rate_hz > 0:
            raise ParameterError("sample_rate_hz must be positive")
        if not np.all(np.isfinite(arr)):
            raise ParameterError("trace samples must be finite")
        arr.setflags(write=False)
        object.__setattr__(self, "samples", arr)

    def __len__(self):
        return self.samples.size

    @property
    def dt(self) -> float:
        return 1.0 / self.sample_rate_hz

    def times(self) -> np.ndarray:
        return self.t0 + np.arange(len(self)) / self.sample_rate_hz

    def time_of(self, index: int) -> float:
        return self.t0 + index / self.sample_rate_hz

    def with_samples(self, samples) -> "SignalTrace":
        return SignalTrace(samples, self.sample_rate_hz, self.t0)

    def __add__(self, other: "SignalTrace") -> "SignalTrace":
        _check_same_length(self, other)
        return self.with_samples(self.samples + other.samples)

    def __sub__(self, other: "SignalTrace") -> "SignalTrace":
        _check_same_length(self, other)
        return self.with_samples(self.samples - other.samples)

    def scaled(self, factor: float) -> "SignalTrace":
        return self.with_samples(factor * self.samples)

    def to_csv(self, path) -> Path:
        path = Path(path)
        try:
            with path.open("w") as fh:
                fh.write("t_seconds,value\n")
                for t, v in zip(self.times(), self.samples):
                    fh.write(f"{float(t)!r},{float(v)!r}\n")
        except OSError as exc:
            raise OSError(f"cannot write trace to {path}: {exc}") from exc
        return path

    @classmethod
    def from_csv(cls, path) -> "SignalTrace":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        if data.shape[0] < 2:
            raise ParameterError(f"{path}: need at least two rows to infer the sample rate")
        t = data[:, 0]
        rate = 1.0 / (t[1] - t[0])
        return cls(data[:, 1], rate, float(t[0]))


def _check_same_length(a: SignalTrace, b: SignalTrace):
    if len(a) != len(b):
        raise DimensionError(f"trace lengths differ: {len(a)} vs {len(b)}")


class Phase(enum.Enum):
    STEADY = "steady"
    SILENT = "silent"
    CONFUSION = "confusion"


@dataclass(frozen=True)
class Segment:
    phase: Phase
    amplitude: float
    duration_samples: int

    @property
    def u(self) -> int:
        return 0 if self.phase is Phase.SILENT else 1


@dataclass(frozen=True)
class ChallengeSchedule:
    """Piecewise-constant actuation plan made of contiguous segments."""

    segments: tuple[Segment, ...]
    amplitude_ref: float = 1.0
    beta_amp: float | None = None
    _starts: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        segs = tuple(self.segments)
        object.__setattr__(self, "segments", segs)
        for s in segs:
            if s.duration_samples < 1:
                raise ParameterError("segment durations must be positive")
            if s.amplitude < 0:
                raise ParameterError("segment amplitudes must be non-negative")
            if s.phase is Phase.SILENT and s.amplitude != 0:
                raise ParameterError("silent segments must have zero amplitude")
        durations = np.array([s.duration_samples for s in segs], dtype=np.int64)
        starts = np.concatenate([[0], np.cumsum(durations)[:-1]]) if segs else np.zeros(0, np.int64)
        starts.setflags(write=False)
        object.__setattr__(self, "_starts", starts)

    @property
    def total_samples(self) -> int:
        return int(sum(s.duration_samples for s in self.segments))

    def __len__(self):
        return self.total_samples

    def starts(self) -> np.ndarray:
        return self._starts

    def u(self) -> np.ndarray:
        return np.repeat([s.u for s in self.segments], [s.duration_samples for s in self.segments]).astype(float)

    def amplitude(self) -> np.ndarray:
        return np.repeat([s.amplitude for s in self.segments], [s.duration_samples for s in self.segments]).astype(float)

    def actuation(self) -> np.ndarray:
        """``amplitude(i) * u(i)`` per sample."""
        return self.amplitude() * self.u()

    def phase_index(self) -> np.ndarray:
        """Segment index that applies at every sample."""
        return np.repeat(np.arange(len(self.segments)), [s.duration_samples for s in self.segments])

    def segments_of(self, phase: Phase) -> list[tuple[int, int]]:
        """``(start, length)`` of every segment with the given phase."""
        return [(int(st), s.duration_samples) for st, s in zip(self._starts, self.segments) if s.phase is phase]

    def challenge_starts(self) -> list[int]:
        return [st for st, _ in self.segments_of(Phase.SILENT)]

    def to_text(self) -> str:
        lines = [SCHEDULE_HEADER]
        lines += [f"{s.phase.value},{float(s.amplitude)!r},{s.duration_samples}" for s in self.segments]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ChallengeSchedule":
        lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
        if not lines or lines[0] != SCHEDULE_HEADER:
            raise ParameterError(f"schedule text must start with '{SCHEDULE_HEADER}'")
        segs = []
        for ln in lines[1:]:
            phase, amp, dur = ln.split(",")
            segs.append(Segment(Phase(phase), float(amp), int(dur)))
        return cls(tuple(segs))


def gen_awgn(rng: RngStream, n: int, sigma: float, sample_rate_hz: float = 1.0) -> SignalTrace:
    if n < 0:
        raise ParameterError("n must be non-negative")
    if sigma < 0:
        raise ParameterError("sigma must be non-negative")
    if sigma == 0:
        return SignalTrace(np.zeros(n), sample_rate_hz)
    return SignalTrace(rng.normal(n, scale=sigma), sample_rate_hz)


def draw_silence_lengths(rng: RngStream, rho: float, grid: int, size=None):
    """Silent lengths ``n * grid`` with ``Pr(n) = (1 - rho)**(n - 1) * rho``."""
    if not 0 < rho < 1:
        raise ParameterError(f"silence ratio rho must lie in (0, 1), got {rho}")
    if grid < 1:
        raise ParameterError("grid period must be at least one sample")
    return rng.geometric(rho, size) * grid


def _steady_length(rng: RngStream, mean_period: int) -> int:
    # challenge instant uniform over [mean/2, 3*mean/2)
    lo = max(1, mean_period // 2)
    hi = max(lo + 1, mean_period + mean_period // 2)
    return int(rng.integers(lo, hi))


def _truncate(segments: list[Segment], horizon: int) -> tuple[Segment, ...]:
    out, used = [], 0
    for s in segments:
        if used >= horizon:
            break
        d = min(s.duration_samples, horizon - used)
        out.append(Segment(s.phase, s.amplitude, d))
        used += d
    return tuple(out)


def gen_random_challenge_schedule(
    rng: RngStream,
    horizon_samples: int,
    mean_period: int,
    silence_ratio: float,
    grid: int = 1,
    amplitude: float = 1.0,
) -> ChallengeSchedule:
    """Alternating Steady/Silent plan covering exactly ``horizon_samples``."""
    if horizon_samples <= 0:
        raise ParameterError("horizon_samples must be positive")
    if mean_period < 1:
        raise ParameterError("mean_period must be at least one sample")
    if not 0 < silence_ratio < 1:
        raise ParameterError(f"silence ratio rho must lie in (0, 1), got {silence_ratio}")
    segs: list[Segment] = []
    used = 0
    while used < horizon_samples:
        steady = _steady_length(rng, mean_period)
        silent = int(draw_silence_lengths(rng, silence_ratio, grid))
        segs.append(Segment(Phase.STEADY, amplitude, steady))
        segs.append(Segment(Phase.SILENT, 0.0, silent))
        used += steady + silent
    return ChallengeSchedule(_truncate(segs, horizon_samples), amplitude_ref=amplitude)


def gen_fixed_silence_schedule(rng: RngStream, horizon_samples: int, mean_period: int,
                               silent_length: int, amplitude: float = 1.0) -> ChallengeSchedule:
    """Random steady lengths, every silent window exactly ``silent_length`` samples.

    ``silent_length = 0`` gives an all-steady plan with no challenges.
    """
    if horizon_samples <= 0 or mean_period < 1:
        raise ParameterError("horizon_samples and mean_period must be positive")
    if silent_length < 0:
        raise ParameterError("silent_length must be non-negative")
    if silent_length == 0:
        return constant_schedule(horizon_samples, amplitude)
    segs: list[Segment] = []
    used = 0
    while used < horizon_samples:
        steady = _steady_length(rng, mean_period)
        segs += [Segment(Phase.STEADY, amplitude, steady), Segment(Phase.SILENT, 0.0, silent_length)]
        used += steady + silent_length
    return ChallengeSchedule(_truncate(segs, horizon_samples), amplitude_ref=amplitude)


def gen_confusion_schedule(
    rng: RngStream,
    amplitude: float,
    beta_amp: float,
    rho: float,
    horizon_samples: int,
    grid: int = 1,
    mean_period: int | None = None,
    confusion_range: tuple[int, int] | None = None,
) -> ChallengeSchedule:
    """Cyclic Steady(A) -> Silent -> Confusion(A / beta_amp) plan.

    Confusion lengths are uniform over ``confusion_range`` (default
    ``[grid, 50 * grid]``).
    """
    if not beta_amp > 1:
        raise ParameterError(f"beta_amp must exceed 1 for a confusion phase, got {beta_amp}")
    if not amplitude > 0:
        raise ParameterError("amplitude must be positive")
    if horizon_samples <= 0:
        raise ParameterError("horizon_samples must be positive")
    mean_period = mean_period or 50 * grid
    lo, hi = confusion_range or (grid, 50 * grid)
    if not 1 <= lo <= hi:
        raise ParameterError("confusion_range must satisfy 1 <= lo <= hi")
    segs: list[Segment] = []
    used = 0
    while used < horizon_samples:
        steady = _steady_length(rng, mean_period)
        silent = int(draw_silence_lengths(rng, rho, grid))
        conf = int(rng.integers(lo, hi + 1))
        segs += [
            Segment(Phase.STEADY, amplitude, steady),
            Segment(Phase.SILENT, 0.0, silent),
            Segment(Phase.CONFUSION, amplitude / beta_amp, conf),
        ]
        used += steady + silent + conf
    return ChallengeSchedule(_truncate(segs, horizon_samples), amplitude_ref=amplitude, beta_amp=beta_amp)


def modulate(schedule: ChallengeSchedule, carrier: SignalTrace) -> SignalTrace:
    """Actuator output ``amplitude(i) * u(i) * carrier[i]`` over the schedule span."""
    n = schedule.total_samples
    if len(carrier) < n:
        raise DimensionError(f"carrier has {len(carrier)} samples, schedule needs {n}")
    return carrier.with_samples(schedule.actuation() * carrier.samples[:n])


def constant_schedule(n: int, amplitude: float = 1.0, phase: Phase = Phase.STEADY) -> ChallengeSchedule:
    amp = 0.0 if phase is Phase.SILENT else amplitude
    return ChallengeSchedule((Segment(phase, amp, n),), amplitude_ref=amplitude)


def schedule_from_u(u: Sequence[int] | Iterable[int], amplitude: float = 1.0) -> ChallengeSchedule:
    """Build a Steady/Silent schedule from a 0/1 sequence."""
    u = np.asarray(list(u), dtype=int)
    if u.size == 0:
        raise ParameterError("empty modulation sequence")
    edges = np.flatnonzero(np.diff(u)) + 1
    bounds = np.concatenate([[0], edges, [u.size]])
    segs = []
    for a, b in zip(bounds[:-1], bounds[1:]):
        on = bool(u[a])
        segs.append(Segment(Phase.STEADY if on else Phase.SILENT, amplitude if on else 0.0, int(b - a)))
    return ChallengeSchedule(tuple(segs), amplitude_ref=amplitude)
