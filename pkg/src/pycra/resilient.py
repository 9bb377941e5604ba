"""Frequency-domain attack-resilient estimation.

A sliding DFT tracks the sensor spectrum. During each silent window the
measured spectrum is compared with the spectrum the no-attack model predicts.
Bins whose residual energy exceeds ``beta_freq`` are treated as attacked, and
the frequency estimate is the strongest spectral peak that avoids them.
"""

from __future__ import annotations

import csv
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import signal

from .errors import NeedsMoreSamples, ParameterError


class SlidingDft:
    """Streaming ``N``-point DFT of the trailing window.

    Parameters
    ----------
    N : int
        Window length.
    bins : array_like of int, optional
        Bins to track; all ``N`` by default.
    resync : bool
        Recompute the tracked bins directly every ``N`` updates to stop
        rounding drift.
    """

    def __init__(self, N: int, bins=None, resync: bool = True):
        if N < 1:
            raise ParameterError("N must be positive")
        self.N = int(N)
        self.bins = np.arange(N) if bins is None else np.asarray(bins, dtype=int)
        if self.bins.size and (self.bins.min() < 0 or self.bins.max() >= N):
            raise ParameterError("bin index out of range")
        self.twiddle = np.exp(2j * np.pi * self.bins / self.N)
        self.Y = np.zeros(self.bins.size, dtype=complex)
        self.buffer = np.zeros(self.N)
        self.head = 0  # index of the oldest sample
        self.updates = 0
        self.resync = resync

    def copy(self) -> "SlidingDft":
        other = SlidingDft.__new__(SlidingDft)
        other.__dict__.update(self.__dict__)
        other.Y = self.Y.copy()
        other.buffer = self.buffer.copy()
        return other

    def window(self) -> np.ndarray:
        """Trailing window, oldest sample first."""
        return np.roll(self.buffer, -self.head)

    def direct(self) -> np.ndarray:
        """Tracked bins of the direct DFT of the current window."""
        w = self.window()
        if self.bins.size == self.N:
            return np.fft.fft(w)[self.bins]
        m = np.arange(self.N)
        return np.exp(-2j * np.pi * np.outer(self.bins, m) / self.N) @ w

    def update(self, y_new: float) -> np.ndarray:
        y_old = self.buffer[self.head]
        self.Y = sliding_dft_update(self.Y, self.twiddle, y_new, y_old)
        self.buffer[self.head] = y_new
        self.head = (self.head + 1) % self.N
        self.updates += 1
        if self.resync and self.updates % self.N == 0:
            self.Y = self.direct()
        return self.Y

    def extend(self, samples) -> np.ndarray:
        for v in np.asarray(samples, dtype=float):
            self.update(v)
        return self.Y

    def load(self, window) -> None:
        """Start from a full window (oldest first), computed directly."""
        w = np.asarray(window, dtype=float)
        if w.size != self.N:
            raise ParameterError(f"window must hold {self.N} samples")
        self.buffer = w.copy()
        self.head = 0
        self.Y = self.direct()


def sliding_dft_update(Y, twiddle, y_new: float, y_old: float):
    """``Y_k <- e^{j 2 pi k / N} (Y_k + y_new - y_old)``.

    Equivalent to the textbook form ``e^{j2pik/N} Y_k + e^{-j2pik(N-1)/N} y_new
    - e^{j2pik/N} y_old`` because ``e^{-j2pik(N-1)/N} = e^{j2pik/N}``.
    """
    return twiddle * (Y + (y_new - y_old))


def rfft_bins(N: int) -> np.ndarray:
    return np.arange(N // 2 + 1)


def frame_spectrum(y, end: int, N: int) -> np.ndarray:
    """Magnitudes of the one-sided DFT of ``y[end-N+1 : end+1]``."""
    y = np.asarray(y, dtype=float)
    if end + 1 < N:
        raise NeedsMoreSamples(f"need {N} samples before index {end}")
    return np.abs(np.fft.rfft(y[end - N + 1:end + 1]))


def silent_window_spectra(y, y_pred, start: int, length: int, N: int, bins=None):
    """Measured and predicted spectra for each sample of a silent window.

    Both streams share the window content before ``start``; from ``start``
    onward one is fed the measurement and the other the no-attack
    prediction, so their difference starts at zero.

    Returns
    -------
    Y, Y_hat : ndarray, shape (length, n_bins)
    """
    y = np.asarray(y, dtype=float)
    y_pred = np.asarray(y_pred, dtype=float)
    if start < N:
        raise NeedsMoreSamples("silent window starts before the first full DFT window")
    if length > N:
        raise ParameterError("silent window longer than the DFT window")
    bins = rfft_bins(N) if bins is None else bins
    meas = SlidingDft(N, bins, resync=False)
    meas.load(y[start - N:start])
    pred = meas.copy()
    Y = np.empty((length, len(bins)), dtype=complex)
    Y_hat = np.empty_like(Y)
    for m in range(length):
        Y[m] = meas.update(y[start + m])
        Y_hat[m] = pred.update(y_pred[start + m])
    return Y, Y_hat


def predict_natural_spectrum(y, y_pred, start: int, length: int, N: int, bins=None) -> np.ndarray:
    """Predicted no-attack spectrum over a silent window (see :func:`silent_window_spectra`)."""
    return silent_window_spectra(y, y_pred, start, length, N, bins)[1]


def spectral_residual(Y, Y_hat) -> np.ndarray:
    """``Z_k = |Y_k| - |Y_hat_k|`` per frame."""
    return np.abs(Y) - np.abs(Y_hat)


def freq_chi2(Z, T: int) -> np.ndarray:
    """Per-bin mean of ``Z**2`` over the last ``T`` frames."""
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    if T < 1:
        raise ParameterError("T must be at least 1")
    if Z.shape[0] < T:
        raise NeedsMoreSamples(f"have {Z.shape[0]} frames, need {T}")
    return np.mean(Z[-T:] ** 2, axis=0)


class RunningFreqChi2:
    """Recursive form of :func:`freq_chi2` for streaming frames."""

    def __init__(self, T: int, n_bins: int):
        if T < 1:
            raise ParameterError("T must be at least 1")
        self.T = T
        self.frames: deque = deque()
        self.total = np.zeros(n_bins)

    def push(self, Z) -> np.ndarray | None:
        z2 = np.asarray(Z, dtype=float) ** 2
        self.frames.append(z2)
        self.total = self.total + z2
        if len(self.frames) > self.T:
            self.total = self.total - self.frames.popleft()
        return self.total / self.T if len(self.frames) == self.T else None


def classify_attacked_bins(G, beta_freq: float) -> np.ndarray:
    """Indices ``k`` with ``G_k > beta_freq``."""
    G = np.asarray(G, dtype=float)
    return np.flatnonzero(G > beta_freq)


@dataclass(frozen=True)
class PeakConfig:
    mad_factor: float = 6.0
    min_separation: int = 3
    guard_bins: int = 1
    skip_dc: bool = True


def spectral_peaks(magnitude, config: PeakConfig = PeakConfig()) -> np.ndarray:
    """Local maxima above ``median + mad_factor * MAD``, strongest first."""
    mag = np.asarray(magnitude, dtype=float)
    med = np.median(mag)
    mad = np.median(np.abs(mag - med))
    peaks, _ = signal.find_peaks(mag, height=med + config.mad_factor * mad, distance=config.min_separation)
    if config.skip_dc:
        peaks = peaks[peaks > 0]
    return peaks[np.argsort(-mag[peaks], kind="stable")]


def secure_frequency_estimate(magnitude, attacked_bins, bin_hz: float,
                              config: PeakConfig = PeakConfig()) -> float | None:
    """Frequency of the strongest peak clear of every attacked bin (plus guard)."""
    mag = np.asarray(magnitude, dtype=float)
    blocked = np.zeros(mag.size, dtype=bool)
    for k in np.asarray(attacked_bins, dtype=int):
        blocked[max(0, k - config.guard_bins):k + config.guard_bins + 1] = True
    for k in spectral_peaks(mag, config):
        if not blocked[k]:
            return float(k * bin_hz)
    return None


@dataclass
class SignalFamily:
    """Unit-energy sinusoids ``sin(2 pi f t)`` over a grid of frequencies."""

    freqs_hz: np.ndarray
    sample_rate_hz: float

    def __post_init__(self):
        self.freqs_hz = np.asarray(self.freqs_hz, dtype=float)
        if self.freqs_hz.size == 0:
            raise ParameterError("signal family needs at least one frequency")
        if not self.sample_rate_hz > 0:
            raise ParameterError("sample_rate_hz must be positive")

    def basis(self, n: int, t0: float = 0.0) -> np.ndarray:
        t = t0 + np.arange(n) / self.sample_rate_hz
        phi = np.sin(2 * np.pi * np.outer(self.freqs_hz, t))
        norms = np.linalg.norm(phi, axis=1, keepdims=True)
        return phi / np.where(norms > 0, norms, 1.0)

    def gram(self, n: int, t0: float = 0.0) -> np.ndarray:
        phi = self.basis(n, t0)
        return phi @ phi.T

    def scores(self, y, t0: float = 0.0) -> np.ndarray:
        """``Re<y, phi> - ||phi||^2`` for every grid member."""
        y = np.asarray(y, dtype=float)
        phi = self.basis(y.size, t0)
        return phi @ y - np.sum(phi * phi, axis=1)


def _argmax_low(scores) -> int:
    # np.argmax returns the first maximum, i.e. the lowest grid frequency on ties
    return int(np.argmax(scores))


def ml_estimate(y, family: SignalFamily, t0: float = 0.0) -> float:
    y = np.asarray(y, dtype=float)
    if y.size == 0:
        raise ParameterError("empty observation window")
    order = np.argsort(family.freqs_hz, kind="stable")
    s = family.scores(y, t0)[order]
    return float(family.freqs_hz[order][_argmax_low(s)])


def fused_scores(windows, family: SignalFamily) -> np.ndarray:
    total = np.zeros(family.freqs_hz.size)
    for y, t0 in windows:
        total += family.scores(y, t0)
    return total


def fuse_challenges(windows, family: SignalFamily) -> float:
    """ML estimate from several ``(window, start_time_s)`` pairs scored jointly."""
    windows = list(windows)
    if not windows:
        raise ParameterError("need at least one window")
    order = np.argsort(family.freqs_hz, kind="stable")
    s = fused_scores(windows, family)[order]
    return float(family.freqs_hz[order][_argmax_low(s)])


@dataclass
class ChallengeSpectrum:
    index: int
    start: int
    length: int
    G: np.ndarray
    attacked: np.ndarray


@dataclass
class TrackFrame:
    frame: int
    end: int
    magnitude: np.ndarray
    attacked: np.ndarray
    estimate_hz: float | None
    G: np.ndarray | None = None


@dataclass
class ResilientConfig:
    N: int = 5000
    window_T: int = 50
    beta_freq: float = 1.0
    memory_samples: int | None = None
    max_hz: float | None = None
    peaks: PeakConfig = field(default_factory=PeakConfig)

    def __post_init__(self):
        if self.N < 2:
            raise ParameterError("N must be at least 2")
        if self.window_T < 1:
            raise ParameterError("window_T must be at least 1")
        if self.beta_freq < 0:
            raise ParameterError("beta_freq must be non-negative")


@dataclass
class ResilientTrack:
    frames: list[TrackFrame]
    challenges: list[ChallengeSpectrum]
    bin_hz: float
    N: int

    def estimates(self) -> np.ndarray:
        return np.array([np.nan if f.estimate_hz is None else f.estimate_hz for f in self.frames])

    def spectrogram_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["frame", "bin", "freq_hz", "magnitude", "G", "attacked"])
            for f in self.frames:
                att = np.zeros(f.magnitude.size, dtype=bool)
                att[f.attacked[f.attacked < att.size]] = True
                G = f.G if f.G is not None else np.zeros(f.magnitude.size)
                for k in range(f.magnitude.size):
                    w.writerow([f.frame, k, repr(float(k * self.bin_hz)), repr(float(f.magnitude[k])),
                                repr(float(G[k])), int(att[k])])
        return path

    def track_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["frame", "freq_hz_estimate"])
            for f in self.frames:
                w.writerow([f.frame, "" if f.estimate_hz is None else repr(float(f.estimate_hz))])
        return path


def resilient_track(y, y_pred, silent_segments, sample_rate_hz: float, config: ResilientConfig,
                    warmup: int | None = None) -> ResilientTrack:
    """Classify attacked bins in every silent window and estimate the ring frequency at its end.

    Parameters
    ----------
    y, y_pred : array_like
        Measured output and the no-attack prediction.
    silent_segments : list of (start, length)
        Silent windows in sample indices.
    warmup : int, optional
        Frames ending before this sample are not reported (default ``N``).
    """
    y = np.asarray(y, dtype=float)
    N = config.N
    bin_hz = sample_rate_hz / N
    n_bins = N // 2 + 1
    if config.max_hz is not None:
        n_bins = min(n_bins, int(np.ceil(config.max_hz / bin_hz)) + 1)
    bins = np.arange(n_bins)
    memory = N if config.memory_samples is None else config.memory_samples
    warmup = N if warmup is None else warmup
    history: deque = deque()
    frames, challenges = [], []
    for i, (start, length) in enumerate(silent_segments):
        if start < N:
            continue
        L = min(length, N)
        end = start + L - 1
        if L >= config.window_T:
            Y, Y_hat = silent_window_spectra(y, y_pred, start, L, N, bins)
            G = freq_chi2(spectral_residual(Y, Y_hat), config.window_T)
        else:
            G = np.zeros(n_bins)
        attacked = classify_attacked_bins(G, config.beta_freq)
        challenges.append(ChallengeSpectrum(i, start, length, G, attacked))
        history.append((end, attacked))
        while history and history[0][0] <= end - memory:
            history.popleft()
        union = np.unique(np.concatenate([a for _, a in history])).astype(int)
        if end < warmup:
            continue
        mag = frame_spectrum(y, end, N)[:n_bins]
        est = secure_frequency_estimate(mag, union, bin_hz, config.peaks)
        if est is not None:
            k = int(round(est / bin_hz))
            blocked = np.zeros(n_bins, dtype=bool)
            for a in union:
                blocked[max(0, a - config.peaks.guard_bins):a + config.peaks.guard_bins + 1] = True
            assert not blocked[k], "secure estimate landed on an attacked bin"
        frames.append(TrackFrame(len(frames), end, mag, union, est, G))
    return ResilientTrack(frames, challenges, bin_hz, N)



# --- recovery from the samples right after each 0->1 actuation transition ---

def excess_bins(magnitude, predicted_magnitude, beta: float) -> np.ndarray:
    """Bins whose measured magnitude exceeds the predicted one by more than ``beta``."""
    z = np.asarray(magnitude, float) - np.asarray(predicted_magnitude, float)
    return np.flatnonzero(z > beta)


def nuisance_basis(sample_idx, offsets, freqs_hz, sample_rate_hz: float, degree: int = 2) -> np.ndarray:
    """Orthonormal columns spanning ``offset**p * (cos, sin)`` at each nuisance frequency.

    ``offsets`` is the position of each kept sample inside its own window, so
    the basis follows a tone whose amplitude ramps after every transition.
    """
    t = np.asarray(sample_idx, float) / sample_rate_hz
    off = np.asarray(offsets, float)
    scale = off.max() if off.size and off.max() > 0 else 1.0
    cols = []
    for f in np.atleast_1d(freqs_hz):
        for p in range(degree + 1):
            g = (off / scale) ** p
            cols += [g * np.cos(2 * np.pi * f * t), g * np.sin(2 * np.pi * f * t)]
    if not cols:
        return np.zeros((t.size, 0))
    q, _ = np.linalg.qr(np.column_stack(cols))
    return q


def gated_tone_energy(y, sample_idx, freqs_hz, sample_rate_hz: float, nuisance=None) -> np.ndarray:
    """Energy of the least-squares fit of ``a cos + b sin`` to ``y[sample_idx]`` per frequency.

    The fit is phase-invariant and accounts for the gaps between the kept
    samples, so a tone observed through an arbitrary gate scores highest at
    its own frequency. Columns of ``nuisance`` (orthonormal) are projected out
    of both the data and the candidate tones first. Frequencies whose tone
    lies inside the nuisance span score ``-inf``.
    """
    idx = np.asarray(sample_idx, dtype=int)
    yg = np.asarray(y, float)[idx]
    w = 2 * np.pi * np.outer(np.asarray(freqs_hz, float), idx / sample_rate_hz)
    c, s = np.cos(w), np.sin(w)
    scale = (c * c).sum(1) * (s * s).sum(1)
    if nuisance is not None and nuisance.shape[1]:
        Q = nuisance
        c = c - (c @ Q) @ Q.T
        s = s - (s @ Q) @ Q.T
        yg = yg - Q @ (Q.T @ yg)
    cc, ss, cs = (c * c).sum(1), (s * s).sum(1), (c * s).sum(1)
    yc, ys = c @ yg, s @ yg
    det = cc * ss - cs * cs
    # degeneracy is judged against the tone energy before projection
    ok = det > 1e-9 * np.maximum(scale, 1e-300)
    energy = np.full(len(w), -np.inf)
    # projection energy r^T M^-1 r for the 2x2 normal matrix M
    energy[ok] = (ss * yc**2 - 2 * cs * yc * ys + cc * ys**2)[ok] / det[ok]
    return energy


@dataclass
class PostTransitionConfig:
    """Settings for the post-transition estimator.

    ``width`` samples after every 0->1 transition inside the trailing ``N``
    samples are pooled. Bins where the measured spectrum over the same ``N``
    samples exceeds the prediction by more than ``beta_excess`` are excluded
    with ``guard_bins`` neighbours. The strongest excess tone is removed as a
    ramped nuisance of polynomial ``ramp_degree``.
    """

    N: int = 10000
    width: int = 40
    beta_excess: float = 20.0
    max_hz: float | None = 600.0
    guard_bins: int = 2
    ramp_degree: int = 2

    def __post_init__(self):
        if self.N < 2 or self.width < 1:
            raise ParameterError("N must be at least 2 and width at least 1")
        if not self.beta_excess > 0:
            raise ParameterError("beta_excess must be positive")
        if self.ramp_degree < 0 or self.guard_bins < 0:
            raise ParameterError("ramp_degree and guard_bins must be non-negative")


@dataclass
class PostTransitionFrame:
    frame: int
    transition: int
    end: int
    excluded: np.ndarray
    estimate_hz: float | None


def post_transition_track(y, y_pred, transitions, sample_rate_hz: float,
                          config: PostTransitionConfig = PostTransitionConfig()) -> list[PostTransitionFrame]:
    """One estimate per 0->1 transition once a full ``N``-sample history exists."""
    y = np.asarray(y, float)
    y_pred = np.asarray(y_pred, float)
    N, W = config.N, config.width
    bin_hz = sample_rate_hz / N
    n_bins = N // 2 + 1
    if config.max_hz is not None:
        n_bins = min(n_bins, int(np.ceil(config.max_hz / bin_hz)) + 1)
    freqs = np.arange(1, n_bins) * bin_hz
    ups = sorted(int(t) for t in transitions if t + W <= y.size)
    frames = []
    for t in ups:
        end = t + W - 1
        if end + 1 < N:
            continue
        excess = frame_spectrum(y, end, N)[:n_bins] - frame_spectrum(y_pred, end, N)[:n_bins]
        excluded = np.flatnonzero(excess > config.beta_excess)
        starts = [v for v in ups if end - N < v <= t]
        idx = np.concatenate([np.arange(v, v + W) for v in starts])
        offsets = np.tile(np.arange(W), len(starts))
        nuis_f = [int(np.argmax(excess)) * bin_hz] if excluded.size else []
        Q = nuisance_basis(idx, offsets, nuis_f, sample_rate_hz, config.ramp_degree)
        score = gated_tone_energy(y, idx, freqs, sample_rate_hz, Q)
        blocked = np.zeros(n_bins, dtype=bool)
        for k in excluded:
            blocked[max(0, k - config.guard_bins):k + config.guard_bins + 1] = True
        score[blocked[1:]] = -np.inf
        est = float(freqs[int(np.argmax(score))]) if np.isfinite(score).any() else None
        frames.append(PostTransitionFrame(len(frames), t, end, excluded, est))
    return frames
