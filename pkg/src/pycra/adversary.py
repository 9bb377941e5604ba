"""Spoofing attackers with a physical actuator lag and a challenge-detection strategy."""

from __future__ import annotations

import enum
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy import signal

from .errors import ParameterError
from .sigcore import ChallengeSchedule, RngStream, SignalTrace

# envelope level below which the attack counts as gone
ACTIVE_LEVEL = 0.05


class AttackKind(enum.Enum):
    T1_EAVESDROP = "t1"
    T2_SIMPLE = "t2"
    T3_ADVANCED = "t3"


@dataclass(frozen=True)
class Waveform:
    """Linear chirp from ``f_start_hz`` to ``f_end_hz`` over ``duration_s``; a fixed tone when they match.

    ``duration_s=None`` stretches the sweep over whatever length is requested.
    """

    f_start_hz: float
    f_end_hz: float | None = None
    duration_s: float | None = None

    @property
    def f_end(self) -> float:
        return self.f_start_hz if self.f_end_hz is None else self.f_end_hz

    def instantaneous_frequency(self, t, duration_s: float) -> np.ndarray:
        dur = self.duration_s or duration_s
        return self.f_start_hz + (self.f_end - self.f_start_hz) * np.clip(t / dur, 0, 1)

    def render(self, n: int, sample_rate_hz: float) -> np.ndarray:
        dur = self.duration_s or n / sample_rate_hz
        return gen_swept_attack(self.f_start_hz, self.f_end, dur, sample_rate_hz, n=n).samples


@dataclass(frozen=True)
class OracleDetector:
    """Attacker that reads the actuation directly and reacts ``delay_samples`` later."""

    delay_samples: int = 0

    def __post_init__(self):
        if self.delay_samples < 0:
            raise ParameterError("oracle delay must be non-negative")


@dataclass(frozen=True)
class QcdDetector:
    """Attacker that watches the noisy actuation with a two-sided Shiryaev test.

    Parameters
    ----------
    alpha : float
        Target false-alarm probability; the posterior threshold is ``1 - alpha``.
    hazard : float
        Per-sample prior probability that the actuation toggles.
    sigma_obs : float
        Standard deviation of the attacker's own observation noise.
    """

    alpha: float = 0.01
    hazard: float = 0.01
    sigma_obs: float = 0.5

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ParameterError("alpha must lie in (0, 1)")
        if not 0 < self.hazard < 1:
            raise ParameterError("hazard must lie in (0, 1)")
        if not self.sigma_obs > 0:
            raise ParameterError("attacker observation noise must be positive")


@dataclass(frozen=True)
class AttackerModel:
    kind: AttackKind = AttackKind.T2_SIMPLE
    waveform: Waveform = Waveform(120.0)
    amplitude: float = 1.0
    tau_attack_s: float = 0.002
    detector: OracleDetector | QcdDetector = OracleDetector()
    cancel_gain: float = 0.0

    def __post_init__(self):
        if not self.tau_attack_s > 0:
            raise ParameterError("actuator lag tau_attack_s must be positive")
        if not self.amplitude > 0:
            raise ParameterError("attack amplitude must be positive")
        if not 0 <= self.cancel_gain <= 1:
            raise ParameterError("cancel_gain must lie in [0, 1]")
        if self.kind is AttackKind.T2_SIMPLE and self.cancel_gain != 0:
            raise ParameterError("a simple (T2) attacker cannot cancel the ring")
        if self.waveform.f_start_hz <= 0 or self.waveform.f_end < self.waveform.f_start_hz:
            raise ParameterError("waveform frequencies must satisfy 0 < f_start <= f_end")


@dataclass
class AttackTrace:
    """Attack signal plus the quantities that produced it."""

    a: SignalTrace
    belief: np.ndarray
    envelope: np.ndarray
    intent: np.ndarray
    active: np.ndarray = field(init=False)

    def __post_init__(self):
        self.active = self.envelope > ACTIVE_LEVEL


def gen_swept_attack(f_start: float, f_end: float, duration: float, sample_rate_hz: float,
                     n: int | None = None) -> SignalTrace:
    """Linear chirp with instantaneous frequency ``f_start + (f_end - f_start) * t / duration``."""
    nyq = sample_rate_hz / 2
    if not (0 < f_start <= f_end < nyq):
        raise ParameterError(f"need 0 < f_start <= f_end < {nyq} Hz, got {f_start}..{f_end}")
    if not duration > 0:
        raise ParameterError("duration must be positive")
    n = int(round(duration * sample_rate_hz)) if n is None else n
    t = np.arange(n) / sample_rate_hz
    slope = (f_end - f_start) / duration
    tc = np.minimum(t, duration)
    phase = 2 * np.pi * (f_start * tc + 0.5 * slope * tc**2 + f_end * (t - tc))
    return SignalTrace(np.sin(phase), sample_rate_hz)


def advanced_cancel(ring_signal, cancel_gain: float) -> SignalTrace:
    """Phase-inverted copy of the ring contribution, scaled by ``cancel_gain``."""
    if not 0 <= cancel_gain <= 1:
        raise ParameterError("cancel_gain must lie in [0, 1]")
    if isinstance(ring_signal, SignalTrace):
        return ring_signal.with_samples(-cancel_gain * ring_signal.samples)
    return SignalTrace(-cancel_gain * np.asarray(ring_signal, float), 1.0)


def lag_factor(tau_s: float, sample_rate_hz: float) -> float:
    return 0.0 if tau_s == 0 else math.exp(-1.0 / (tau_s * sample_rate_hz))


def lag_envelope(belief, tau_s: float, sample_rate_hz: float, initial: float | None = None) -> np.ndarray:
    """First-order lag of an on/off belief.

    Sample ``i`` is the level at the end of its sampling interval:
    ``env[i] = lam * env[i-1] + (1 - lam) * belief[i]`` with
    ``lam = exp(-dt / tau)``. ``tau_s = 0`` is the ideal lag-free limit
    ``env = belief``.
    """
    b = np.asarray(belief, dtype=float)
    if tau_s < 0:
        raise ParameterError("tau must be non-negative")
    if b.size == 0 or tau_s == 0:
        return b.copy()
    lam = lag_factor(tau_s, sample_rate_hz)
    env0 = b[0] if initial is None else initial
    out, _ = signal.lfilter([1 - lam], [1, -lam], b, zi=[lam * env0])
    return out


def oracle_belief(actuation, delay_samples: int) -> np.ndarray:
    on = (np.asarray(actuation, float) > 0).astype(float)
    if delay_samples == 0 or on.size == 0:
        return on
    return np.concatenate([np.full(min(delay_samples, on.size), on[0]), on[:-delay_samples]])[: on.size]


class _ShiryaevToggle:
    """Two-sided posterior tracker; flips its belief each time the posterior crosses ``1 - alpha``."""

    def __init__(self, det: QcdDetector, level: float, on: bool):
        self.det = det
        self.level = level
        self.on = on
        self.log_odds = -math.inf
        self.log_rho = math.log(det.hazard)
        self.log_stay = math.log1p(-det.hazard)
        p = 1 - det.alpha
        self.stop = math.log(p) - math.log1p(-p)

    def update(self, x: float) -> bool:
        mu0, mu1 = (self.level, 0.0) if self.on else (0.0, self.level)
        s2 = self.det.sigma_obs**2
        llr = (mu1 - mu0) / s2 * (x - 0.5 * (mu0 + mu1))
        self.log_odds = np.logaddexp(self.log_odds, self.log_rho) - self.log_stay + llr
        if self.log_odds >= self.stop:
            self.on = not self.on
            self.log_odds = -math.inf
        return self.on


def qcd_belief(actuation, det: QcdDetector, level: float, rng: RngStream) -> np.ndarray:
    act = np.asarray(actuation, float)
    obs = act + rng.normal(act.size, scale=det.sigma_obs)
    tracker = _ShiryaevToggle(det, level, on=bool(act.size and act[0] > 0))
    return np.array([tracker.update(x) for x in obs], dtype=float)


def _intent_waveform(attacker: AttackerModel, n: int, fs: float, ring_y) -> np.ndarray:
    if attacker.kind is AttackKind.T1_EAVESDROP:
        return np.zeros(n)
    wave = attacker.amplitude * attacker.waveform.render(n, fs)
    if attacker.kind is AttackKind.T3_ADVANCED:
        if ring_y is None:
            raise ParameterError("an advanced (T3) attacker needs the ring signal")
        ring_y = np.asarray(ring_y, float)
        if ring_y.size != n:
            raise ParameterError("ring signal length does not match the schedule")
        wave = wave + advanced_cancel(ring_y, attacker.cancel_gain).samples
    return wave


def generate_attack(attacker: AttackerModel, schedule: ChallengeSchedule, sample_rate_hz: float,
                    ring_y=None, rng: RngStream | None = None) -> AttackTrace:
    """Attack over a whole schedule: ``a = lagged_belief * intent_waveform``."""
    n = schedule.total_samples
    act = schedule.actuation()
    det = attacker.detector
    if isinstance(det, OracleDetector):
        belief = oracle_belief(act, det.delay_samples)
    else:
        if rng is None:
            raise ParameterError("a detecting attacker needs an rng for its observation noise")
        belief = qcd_belief(act, det, schedule.amplitude_ref, rng)
    if attacker.kind is AttackKind.T1_EAVESDROP:
        belief = np.zeros(n)
    env = lag_envelope(belief, attacker.tau_attack_s, sample_rate_hz)
    wave = _intent_waveform(attacker, n, sample_rate_hz, ring_y)
    return AttackTrace(SignalTrace(env * wave, sample_rate_hz), belief, env, belief * wave)


class AttackerRuntime:
    """Sample-by-sample attacker; matches :func:`generate_attack` for oracle detectors."""

    def __init__(self, attacker: AttackerModel, sample_rate_hz: float, level: float = 1.0,
                 rng: RngStream | None = None, initially_on: bool = True):
        self.attacker = attacker
        self.fs = sample_rate_hz
        self.lam = lag_factor(attacker.tau_attack_s, sample_rate_hz)
        self.env = float(initially_on)
        self.rng = rng
        det = attacker.detector
        if isinstance(det, OracleDetector):
            self._history = deque([float(initially_on)] * det.delay_samples, maxlen=det.delay_samples or 1)
            self._tracker = None
        else:
            if rng is None:
                raise ParameterError("a detecting attacker needs an rng")
            self._tracker = _ShiryaevToggle(det, level, initially_on)

    def _belief(self, observed_actuation: float) -> float:
        det = self.attacker.detector
        if self._tracker is not None:
            x = observed_actuation + self.rng.normal(scale=det.sigma_obs)
            return float(self._tracker.update(x))
        on = float(observed_actuation > 0)
        if det.delay_samples == 0:
            return on
        old = self._history[0]
        self._history.append(on)
        return old

    def step(self, observed_actuation: float, ring_signal: float, t: float) -> float:
        belief = self._belief(observed_actuation)
        self.env = self.lam * self.env + (1 - self.lam) * belief
        a = self.attacker
        if a.kind is AttackKind.T1_EAVESDROP:
            return 0.0
        wf = a.waveform
        if wf.f_end == wf.f_start_hz:
            wave = a.amplitude * math.sin(2 * math.pi * wf.f_start_hz * t)
        else:
            if wf.duration_s is None:
                raise ParameterError("streaming chirps need an explicit duration")
            tc = min(t, wf.duration_s)
            slope = (wf.f_end - wf.f_start_hz) / wf.duration_s
            wave = a.amplitude * math.sin(2 * math.pi * (wf.f_start_hz * tc + 0.5 * slope * tc**2 + wf.f_end * (t - tc)))
        if a.kind is AttackKind.T3_ADVANCED:
            wave -= a.cancel_gain * ring_signal
        return self.env * wave


def attacker_step(runtime: AttackerRuntime, observed_actuation: float, ring_signal: float, t: float) -> float:
    return runtime.step(observed_actuation, ring_signal, t)
