"""Active-sensor dynamics, the passive tone ring and the RFID coupling scene."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, signal

from .errors import CalibrationError, DegenerateFitError, DimensionError, NumericError, ParameterError
from .sigcore import ChallengeSchedule, RngStream, SignalTrace

DEFAULT_SETTLE_S = 0.035
DEFAULT_SIGMA_V = 0.003
# aim slightly under 1% so the discretized response clears the mark
SETTLE_LEVEL = 0.009


@dataclass
class StateSpaceModel:
    """Linear discrete-time sensor ``x+ = A x + B u + w``, ``y = C x + v``.

    Parameters
    ----------
    A, B, C : array_like
        State transition (n x n), input (n) and output (n) maps.
    sigma_w, sigma_v : float
        Process and measurement noise standard deviations.
    sample_rate_hz : float
        Rate the discretization refers to.
    x : array_like, optional
        Current state; defaults to zero.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    sigma_w: float = 0.0
    sigma_v: float = DEFAULT_SIGMA_V
    sample_rate_hz: float = 10_000.0
    x: np.ndarray | None = None

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        n = self.A.shape[0]
        if self.A.shape != (n, n):
            raise DimensionError(f"A must be square, got {self.A.shape}")
        self.B = np.asarray(self.B, dtype=float).reshape(-1)
        self.C = np.asarray(self.C, dtype=float).reshape(-1)
        if self.B.size != n or self.C.size != n:
            raise DimensionError("B and C must have one entry per state")
        self.x = np.zeros(n) if self.x is None else np.asarray(self.x, dtype=float).reshape(-1).copy()
        if self.x.size != n:
            raise DimensionError("state vector has the wrong size")
        for name in ("A", "B", "C", "x"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise NumericError(f"{name} contains non-finite values")
        if self.sigma_w < 0 or self.sigma_v < 0:
            raise ParameterError("noise levels must be non-negative")
        if not self.sample_rate_hz > 0:
            raise ParameterError("sample_rate_hz must be positive")
        rho = self.spectral_radius()
        if rho >= 1:
            raise NumericError(f"unstable sensor dynamics: spectral radius {rho:.6g} >= 1")

    @property
    def order(self) -> int:
        return self.A.shape[0]

    def spectral_radius(self) -> float:
        return float(np.max(np.abs(np.linalg.eigvals(self.A))))

    def dc_gain(self) -> float:
        return float(self.C @ np.linalg.solve(np.eye(self.order) - self.A, self.B))

    def copy(self, **changes) -> "StateSpaceModel":
        kw = dict(A=self.A, B=self.B, C=self.C, sigma_w=self.sigma_w, sigma_v=self.sigma_v,
                  sample_rate_hz=self.sample_rate_hz, x=self.x)
        kw.update(changes)
        return StateSpaceModel(**kw)

    def step(self, u: float, w=0.0) -> tuple[np.ndarray, float]:
        """Advance one sample; returns the new state and the pre-update output ``C x``."""
        w = np.broadcast_to(np.asarray(w, dtype=float), self.x.shape)
        if not (np.isfinite(u) and np.all(np.isfinite(w))):
            raise NumericError("non-finite input to step")
        y = float(self.C @ self.x)
        self.x = self.A @ self.x + self.B * u + w
        return self.x.copy(), y

    def impulse_response(self, n: int) -> np.ndarray:
        """``C A^k B`` for ``k = 0..n-1``."""
        out = np.empty(n)
        v = self.B.copy()
        for k in range(n):
            out[k] = self.C @ v
            v = self.A @ v
        return out

    def free_response(self, n: int, x0=None) -> np.ndarray:
        """Zero-input output ``C A^k x0`` for ``k = 0..n-1``."""
        x0 = self.x if x0 is None else np.asarray(x0, dtype=float)
        return self.simulate(np.zeros(n), x0=x0)[0]

    def steady_state(self, u: float) -> np.ndarray:
        return np.linalg.solve(np.eye(self.order) - self.A, self.B * u)

    def simulate(self, u, w=None, x0=None) -> tuple[np.ndarray, np.ndarray]:
        """Run the model over an input sequence without touching ``self.x``.

        Returns ``(y_clean, states)`` where ``states`` has one more row than
        ``u`` (the final row is the state after the last input).
        """
        u = np.asarray(u, dtype=float).reshape(-1)
        L, n = u.size, self.order
        x0 = self.x if x0 is None else np.asarray(x0, dtype=float).reshape(-1)
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(x0))):
            raise NumericError("non-finite input to simulate")
        # inputs: u, x0 injected one sample early, and optional per-state process noise
        cols = [self.B[:, None]]
        drives = [np.concatenate([[0.0], u, [0.0]])]
        impulse = np.zeros(L + 2)
        impulse[0] = 1.0
        cols.append(x0[:, None])
        drives.append(impulse)
        if w is not None:
            w = np.asarray(w, dtype=float).reshape(L, n)
            if not np.all(np.isfinite(w)):
                raise NumericError("non-finite process noise")
            for i in range(n):
                e = np.zeros((n, 1))
                e[i] = 1.0
                cols.append(e)
                drives.append(np.concatenate([[0.0], w[:, i], [0.0]]))
        states = np.zeros((L + 2, n))
        for col, drive in zip(cols, drives):
            if not np.any(col) or not np.any(drive):
                continue
            for i in range(n):
                row = np.zeros((1, n))
                row[0, i] = 1.0
                num, den = signal.ss2tf(self.A, col, row, np.zeros((1, 1)))
                states[:, i] += signal.lfilter(num[0], den, drive)
        # lfilter row m holds the state one sample after drive[m - 1]
        states = states[1:]
        return states[:-1] @ self.C, states


def sensor_model(
    sample_rate_hz: float = 10_000.0,
    settle_s: float = DEFAULT_SETTLE_S,
    order: int = 2,
    sigma_v: float = DEFAULT_SIGMA_V,
    sigma_w: float = 0.0,
    fast_fraction: float = 0.7,
    fast_tau_s: float = 0.0005,
) -> StateSpaceModel:
    """Unit-DC-gain sensor whose 1 -> 0 step response falls below 1% after ``settle_s``.

    ``order=2`` runs a fast pickup path (weight ``fast_fraction``, time
    constant ``fast_tau_s``) in parallel with a slow path that sets the
    settling time; ``order=1`` is a single pole.
    """
    dt = 1.0 / sample_rate_hz
    if order == 1:
        tau = settle_s / np.log(1 / SETTLE_LEVEL)
        lam = np.exp(-dt / tau)
        return StateSpaceModel([[lam]], [1 - lam], [1.0], sigma_w, sigma_v, sample_rate_hz)
    if order != 2:
        raise ParameterError("order must be 1 or 2")
    if not 0 <= fast_fraction < 1:
        raise ParameterError("fast_fraction must lie in [0, 1)")
    w_fast, w_slow = fast_fraction, 1 - fast_fraction

    def residual_at_settle(tau):
        return w_slow * np.exp(-settle_s / tau) + w_fast * np.exp(-settle_s / fast_tau_s) - SETTLE_LEVEL

    tau = optimize.brentq(residual_at_settle, settle_s / 200, settle_s)
    lf, ls = np.exp(-dt / fast_tau_s), np.exp(-dt / tau)
    A = np.diag([lf, ls])
    B = [(1 - lf) * w_fast, (1 - ls) * w_slow]
    return StateSpaceModel(A, B, [1.0, 1.0], sigma_w, sigma_v, sample_rate_hz)


@dataclass(frozen=True)
class ToneRing:
    """Passive toothed wheel: reflects actuation at its tooth-passing frequency."""

    frequency_hz: float = 71.0
    gain: float = 1.0
    phase: float = 0.0

    def __post_init__(self):
        if not self.frequency_hz > 0:
            raise ParameterError("ring frequency must be positive")

    def carrier(self, n: int, sample_rate_hz: float, t0: float = 0.0) -> np.ndarray:
        t = t0 + np.arange(n) / sample_rate_hz
        return self.gain * np.sin(2 * np.pi * self.frequency_hz * t + self.phase)

    def response(self, schedule: ChallengeSchedule, sample_rate_hz: float) -> np.ndarray:
        """Entity output: zero wherever the actuator is off."""
        return schedule.actuation() * self.carrier(schedule.total_samples, sample_rate_hz)


@dataclass
class SensorRun:
    """Components of one sensor simulation; ``y = ring_y + attack + noise``."""

    y: SignalTrace
    ring_y: np.ndarray
    attack: np.ndarray
    noise: np.ndarray
    states: np.ndarray


def simulate_sensor_parts(model: StateSpaceModel, schedule: ChallengeSchedule, ring: ToneRing,
                          attack: SignalTrace | np.ndarray | None = None,
                          rng: RngStream | None = None, x0=None) -> SensorRun:
    n = schedule.total_samples
    fs = model.sample_rate_hz
    a = np.zeros(n)
    if attack is not None:
        a = np.asarray(attack.samples if isinstance(attack, SignalTrace) else attack, dtype=float)
        if a.size != n:
            raise DimensionError(f"attack has {a.size} samples, schedule has {n}")
    excitation = ring.response(schedule, fs)
    w = None
    if model.sigma_w > 0:
        if rng is None:
            raise ParameterError("process noise requires an rng")
        w = rng.child(1).normal((n, model.order), scale=model.sigma_w)
    ring_y, states = model.simulate(excitation, w=w, x0=x0)
    v = np.zeros(n)
    if model.sigma_v > 0:
        if rng is None:
            raise ParameterError("measurement noise requires an rng")
        v = rng.child(2).normal(n, scale=model.sigma_v)
    y = SignalTrace(ring_y + a + v, fs)
    return SensorRun(y, ring_y, a, v, states)


def simulate_sensor(model, schedule, ring, attack=None, rng=None, x0=None) -> SignalTrace:
    """Measured output ``y = sensor(amplitude * u * ring) + a + v``."""
    return simulate_sensor_parts(model, schedule, ring, attack, rng, x0).y


def predict_output(model: StateSpaceModel, schedule: ChallengeSchedule, ring: ToneRing, x0=None) -> np.ndarray:
    """No-attack, noise-free output; the same path as :func:`simulate_sensor`."""
    quiet = model.copy(sigma_w=0.0, sigma_v=0.0)
    return simulate_sensor_parts(quiet, schedule, ring, x0=x0).ring_y


@dataclass
class DecayFit:
    model: StateSpaceModel
    time_constants_s: np.ndarray
    coefficients: np.ndarray
    residual_rms: float


def _exp_basis(lams, n):
    k = np.arange(n)[:, None]
    return np.asarray(lams)[None, :] ** k


def fit_decay_model(step_responses, order: int = 1, sigma_v: float = DEFAULT_SIGMA_V) -> DecayFit:
    """Least-squares fit of ``y[k] = sum_i c_i * lam_i**k`` to 1 -> 0 transitions.

    Time constants are shared by all traces; amplitudes are fitted per trace
    and averaged into the returned model's initial state.
    """
    traces = list(step_responses)
    if not traces:
        raise ParameterError("need at least one step response")
    fs = traces[0].sample_rate_hz
    ys = [np.asarray(t.samples, float) for t in traces]
    if all(not np.any(y) for y in ys):
        raise DegenerateFitError("all step responses are zero")
    if order not in (1, 2):
        raise ParameterError("order must be 1 or 2")

    def coefs_and_resid(log_tau):
        lams = np.exp(-1.0 / np.exp(log_tau))
        res, cs = [], []
        for y in ys:
            basis = _exp_basis(lams, y.size)
            c, *_ = np.linalg.lstsq(basis, y, rcond=None)
            cs.append(c)
            res.append(y - basis @ c)
        return np.concatenate(res), np.array(cs), lams

    y0 = ys[0]
    area = np.sum(np.abs(y0)) / max(abs(y0[0]), np.max(np.abs(y0)) * 1e-3)
    tau0 = float(np.clip(area, 1.0, 10 * y0.size))
    init = [np.log(tau0)] if order == 1 else [np.log(tau0), np.log(max(tau0 / 5, 0.5))]
    sol = optimize.least_squares(lambda p: coefs_and_resid(p)[0], init, method="lm" if sum(y.size for y in ys) > order else "trf")
    resid, cs, lams = coefs_and_resid(sol.x)
    order_idx = np.argsort(-lams)
    lams, cs = lams[order_idx], cs[:, order_idx]
    c = cs.mean(axis=0)
    model = StateSpaceModel(np.diag(lams), c * (1 - lams), np.ones(order), 0.0, sigma_v, fs, x=c)
    taus = -1.0 / (fs * np.log(lams))
    return DecayFit(model, taus, c, float(np.sqrt(np.mean(resid**2))))


def calibrate_threshold(quiet_statistics, q: float) -> float:
    """Empirical ``q``-quantile of attack-free detector statistics."""
    vals = np.asarray(quiet_statistics, dtype=float).reshape(-1)
    if not 0 < q < 1:
        raise CalibrationError(f"quantile must lie in (0, 1), got {q}")
    if vals.size < 100:
        raise CalibrationError(f"need at least 100 attack-free statistics, got {vals.size}")
    if not np.all(np.isfinite(vals)):
        raise CalibrationError("calibration statistics must be finite")
    return float(np.quantile(vals, q))


@dataclass(frozen=True)
class CouplingScene:
    """Reader carrier shared by a tag and, possibly, an eavesdropping antenna."""

    carrier_freq_hz: float = 125_000.0
    kappa_tag: float = 0.05
    tag_bits: tuple[int, ...] = (1, 0, 1, 1, 0, 0, 1, 0)
    kappa_eve: float = 0.0
    bit_period_samples: int = 256
    sample_rate_hz: float = 1_000_000.0
    sigma_v: float = 0.005
    amplitude: float = 1.0
    _bits: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not 0 <= self.kappa_tag < 1:
            raise ParameterError("kappa_tag must lie in [0, 1)")
        if self.kappa_eve < 0:
            raise ParameterError("kappa_eve must be non-negative")
        if self.kappa_tag + self.kappa_eve >= 1:
            raise ParameterError("kappa_tag + kappa_eve must stay below 1")
        if not 0 < self.carrier_freq_hz < self.sample_rate_hz / 2:
            raise ParameterError("carrier frequency violates Nyquist")
        if self.bit_period_samples < 1 or len(self.tag_bits) == 0:
            raise ParameterError("tag modulation needs at least one bit of positive length")
        if self.sigma_v < 0:
            raise ParameterError("sigma_v must be non-negative")
        object.__setattr__(self, "_bits", np.asarray(self.tag_bits, dtype=float))

    def with_eavesdropper(self, kappa_eve: float) -> "CouplingScene":
        return CouplingScene(self.carrier_freq_hz, self.kappa_tag, self.tag_bits, kappa_eve,
                             self.bit_period_samples, self.sample_rate_hz, self.sigma_v, self.amplitude)

    def tag_pattern(self, n: int) -> np.ndarray:
        idx = (np.arange(n) // self.bit_period_samples) % self._bits.size
        return self._bits[idx]

    def carrier(self, n: int) -> np.ndarray:
        return np.sin(2 * np.pi * self.carrier_freq_hz * np.arange(n) / self.sample_rate_hz)

    def clean(self, schedule: ChallengeSchedule, kappa_eve: float | None = None) -> np.ndarray:
        n = schedule.total_samples
        k_eve = self.kappa_eve if kappa_eve is None else kappa_eve
        load = 1.0 - self.kappa_tag * self.tag_pattern(n) - k_eve
        return self.amplitude * schedule.actuation() * self.carrier(n) * load


def rfid_observe(scene: CouplingScene, schedule: ChallengeSchedule, rng: RngStream) -> SignalTrace:
    """Reader pickup ``amp * u * carrier * (1 - k_tag * m - k_eve) + v``."""
    y = scene.clean(schedule)
    if scene.sigma_v > 0:
        y = y + rng.normal(y.size, scale=scene.sigma_v)
    return SignalTrace(y, scene.sample_rate_hz)


def rfid_predict(scene: CouplingScene, schedule: ChallengeSchedule) -> np.ndarray:
    """Reader's tag-aware expectation: no eavesdropper, no noise."""
    return scene.clean(schedule, kappa_eve=0.0)
