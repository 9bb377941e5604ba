"""Scenario execution, parameter sweeps and CSV export."""

from __future__ import annotations

import csv
import dataclasses
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import adversary as adv
from .config import ScenarioConfig
from .detect import DetectionReport, DetectorConfig, detect
from .errors import PycraError
from .metrics import Confusion, RocCurve, roc_curve
from .plant import (CouplingScene, SensorRun, StateSpaceModel, ToneRing, calibrate_threshold,
                    predict_output, rfid_observe, rfid_predict, sensor_model, simulate_sensor_parts)
from .qcd import wilson_interval
from .resilient import (PostTransitionConfig, PostTransitionFrame, ResilientConfig, ResilientTrack,
                        classify_attacked_bins, freq_chi2, post_transition_track, resilient_track,
                        silent_window_spectra, spectral_residual)
from .sigcore import (ChallengeSchedule, Phase, RngStream, SignalTrace, gen_confusion_schedule,
                      gen_fixed_silence_schedule, gen_random_challenge_schedule)

# child indices of a run's random stream
_SCHEDULE, _SENSOR, _ATTACK = 10, 20, 30
MIN_TRIALS = 30


def build_model(cfg: ScenarioConfig) -> StateSpaceModel:
    return sensor_model(cfg.fs, cfg.plant.settle_s, cfg.plant.order, cfg.plant.sigma_v)


def build_ring(cfg: ScenarioConfig) -> ToneRing:
    return ToneRing(cfg.ring.frequency_hz, cfg.ring.gain)


def build_schedule(cfg: ScenarioConfig, rng: RngStream) -> ChallengeSchedule:
    s = cfg.schedule
    n = cfg.n_samples
    grid = max(1, int(round(s.grid_s * cfg.fs)))
    period = max(1, int(round(s.mean_period_s * cfg.fs)))
    if s.beta_amp > 1:
        return gen_confusion_schedule(rng, s.amplitude, s.beta_amp, s.silence_ratio, n, grid, period)
    return gen_random_challenge_schedule(rng, n, period, s.silence_ratio, grid, s.amplitude)


def build_attacker(cfg: ScenarioConfig, tau_s: float | None = None) -> adv.AttackerModel | None:
    """Attacker described by ``cfg``; ``None`` when ``attacker.kind = none``.

    ``tau_s = 0`` is accepted here and handled by :func:`attack_signal` as
    the lag-free limit.
    """
    a = cfg.attacker
    if a.kind == "none":
        return None
    kind = {"t1": adv.AttackKind.T1_EAVESDROP, "t2": adv.AttackKind.T2_SIMPLE,
            "t3": adv.AttackKind.T3_ADVANCED}[a.kind]
    det = (adv.OracleDetector(a.delay_samples) if a.detector == "oracle"
           else adv.QcdDetector(a.alpha, a.hazard, a.sigma_obs))
    tau = a.tau_attack_s if tau_s is None else tau_s
    wave = adv.Waveform(a.f_start_hz, a.f_end_hz, a.sweep_s or None)
    return adv.AttackerModel(kind, wave, a.amplitude, tau if tau > 0 else 1.0, det, a.cancel_gain)


def attack_signal(attacker: adv.AttackerModel, schedule: ChallengeSchedule, fs: float, ring_y,
                  rng: RngStream, tau_s: float | None = None) -> adv.AttackTrace:
    """Attack trace; ``tau_s = 0`` drops the lag so the attack follows the belief exactly."""
    tr = adv.generate_attack(attacker, schedule, fs, ring_y=ring_y, rng=rng)
    if tau_s is not None and tau_s == 0:
        return adv.AttackTrace(SignalTrace(tr.intent, fs), tr.belief, tr.belief.copy(), tr.intent)
    return tr


@dataclass
class ScenarioRun:
    config: ScenarioConfig
    schedule: ChallengeSchedule
    model: StateSpaceModel
    ring: ToneRing
    prediction: np.ndarray
    sensor: SensorRun
    attack: adv.AttackTrace | None
    report: DetectionReport | None = None
    track: ResilientTrack | None = None
    post_frames: list[PostTransitionFrame] | None = None

    @property
    def residual(self) -> np.ndarray:
        return self.sensor.y.samples - self.prediction

    def to_csv(self, path) -> Path:
        """Per-sample trace ``t_seconds,u,y,y_pred,residual,attack``."""
        y = self.sensor.y
        a = np.zeros(len(y)) if self.attack is None else self.attack.a.samples
        cols = [y.times(), self.schedule.u(), y.samples, self.prediction, self.residual, a]
        return write_rows(path, ["t_seconds", "u", "y", "y_pred", "residual", "attack"], zip(*cols))


def simulate_run(cfg: ScenarioConfig, rng: RngStream, attacked: bool = True,
                 tau_s: float | None = None, schedule: ChallengeSchedule | None = None) -> ScenarioRun:
    """Schedule, attack and sensor output for one random stream; no detection."""
    model, ring = build_model(cfg), build_ring(cfg)
    sched = build_schedule(cfg, rng.child(_SCHEDULE)) if schedule is None else schedule
    pred = predict_output(model, sched, ring)
    attacker = build_attacker(cfg, tau_s) if attacked else None
    trace = None
    if attacker is not None:
        trace = attack_signal(attacker, sched, cfg.fs, pred, rng.child(_ATTACK), tau_s)
    parts = simulate_sensor_parts(model, sched, ring, None if trace is None else trace.a, rng.child(_SENSOR))
    return ScenarioRun(cfg, sched, model, ring, pred, parts, trace)


def trial_score(cfg: ScenarioConfig, rng: RngStream, attacked: bool, tau_s: float | None = None) -> float:
    """Largest windowed residual energy over all silent windows of one run."""
    run = simulate_run(cfg, rng, attacked, tau_s)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        rep = detect(run.sensor.y, run.schedule, DetectorConfig(cfg.detector.window_T, 1.0, run.model, run.ring),
                     prediction=run.prediction)
    g = rep.g_max()
    return float(g.max()) if g.size else 0.0


def calibrate_detector(cfg: ScenarioConfig, runs: int | None = None) -> float:
    """Alarm threshold: quantile of per-run scores over attack-free runs."""
    runs = cfg.detector.calibration_runs if runs is None else runs
    root = RngStream(cfg.seed).child(1)
    scores = [trial_score(cfg, root.child(i), attacked=False) for i in range(runs)]
    return calibrate_threshold(scores, cfg.detector.calibration_quantile)


def run_scenario(cfg: ScenarioConfig, threshold: float | None = None, resilient: bool = False) -> ScenarioRun:
    """Simulate, run the time-domain detector and optionally the spectral tracker.

    The alarm threshold is ``detector.threshold`` when positive, else
    ``threshold``, else calibrated from attack-free runs.
    """
    cfg.validate()
    if cfg.detector.threshold > 0:
        threshold = cfg.detector.threshold
    elif threshold is None:
        threshold = calibrate_detector(cfg)
    run = simulate_run(cfg, RngStream(cfg.seed))
    truth = np.zeros(cfg.n_samples, dtype=bool) if run.attack is None else run.attack.active
    run.report = detect(run.sensor.y, run.schedule, DetectorConfig(cfg.detector.window_T, threshold, run.model, run.ring),
                        truth_active=truth, prediction=run.prediction)
    if resilient:
        _attach_tracker(run)
    return run


def _attach_tracker(run: ScenarioRun) -> None:
    cfg, r = run.config, run.config.resilient
    y = run.sensor.y.samples
    if len(y) < r.N:
        warnings.warn(f"horizon of {len(y)} samples is shorter than the DFT length {r.N}", RuntimeWarning, stacklevel=3)
        return
    if r.post_transition:
        pc = PostTransitionConfig(r.N, r.post_width, r.beta_excess, r.max_hz)
        ups = [s + n for s, n in run.schedule.segments_of(Phase.SILENT)]
        run.post_frames = post_transition_track(y, run.prediction, ups, cfg.fs, pc)
    else:
        rc = ResilientConfig(N=r.N, window_T=r.window_T, beta_freq=r.beta_freq, max_hz=r.max_hz,
                             memory_samples=int(r.memory_factor * r.N))
        run.track = resilient_track(y, run.prediction, run.schedule.segments_of(Phase.SILENT), cfg.fs, rc,
                                    warmup=int(r.warmup_factor * r.N))


# --- sweeps ---------------------------------------------------------------

@dataclass
class SweepPoint:
    fs: float
    tau_attack_s: float
    trials: int
    threshold: float
    tpr: float
    fpr: float
    balanced_accuracy: float
    f1: float
    accuracy_ci_low: float
    accuracy_ci_high: float


def _warn_trials(trials: int) -> None:
    if trials < MIN_TRIALS:
        warnings.warn(f"{trials} trials per point gives wide confidence intervals (use at least {MIN_TRIALS})",
                      RuntimeWarning, stacklevel=3)


def tau_sweep(cfg: ScenarioConfig, taus, trials: int = 30, sample_rates=None) -> list[SweepPoint]:
    """Detection accuracy against the attacker's lag, per sample rate.

    Each run is scored by its largest windowed residual energy. The threshold
    comes from attack-free calibration runs; ``trials`` attacked and
    ``trials`` fresh attack-free runs are then classified at every lag. The
    attacked runs at different lags share random streams.
    """
    taus = list(taus)
    if not taus:
        raise PycraError("tau list is empty")
    _warn_trials(trials)
    out = []
    for fi, fs in enumerate(sample_rates or [cfg.fs]):
        c = cfg.replace(fs=fs)
        thr = calibrate_detector(c)
        root = RngStream(cfg.seed).child(2).child(fi)
        clean = np.array([trial_score(c, root.child(0).child(i), False) for i in range(trials)])
        for tau in taus:
            att = np.array([trial_score(c, root.child(1).child(i), True, tau) for i in range(trials)])
            pred = np.concatenate([att > thr, clean > thr])
            truth = np.concatenate([np.ones(trials, bool), np.zeros(trials, bool)])
            cm = Confusion.from_predictions(pred, truth)
            lo, hi = wilson_interval(cm.tp + cm.tn, 2 * trials)
            out.append(SweepPoint(fs, tau, trials, thr, cm.tpr, cm.fpr, cm.balanced_accuracy, cm.f1, lo, hi))
    return out


@dataclass
class ResiliencePoint:
    silent_length_s: float
    trials: int
    challenges: int
    tpr: float
    fpr: float
    balanced_accuracy: float
    median_trial_accuracy: float
    auc: float


def _truth_bins(attacker: adv.AttackerModel, start: int, N: int, fs: float, n_total: int, n_bins: int) -> np.ndarray:
    bin_hz = fs / N
    wf = attacker.waveform
    dur = wf.duration_s or n_total / fs
    f_lo = float(wf.instantaneous_frequency(np.array((start - N) / fs), dur))
    f_hi = float(wf.instantaneous_frequency(np.array(start / fs), dur))
    f = np.arange(n_bins) * bin_hz
    return (f >= f_lo - bin_hz) & (f <= f_hi + bin_hz)


def resilience_sweep(cfg: ScenarioConfig, silent_lengths_s, trials: int = 10) -> list[ResiliencePoint]:
    """Attacked-bin classification quality against the silent-window length.

    Every challenge of a run has the same silent length. Ground truth is the
    band the attacker's sweep covered inside the DFT window. Challenges
    starting before one full window are ignored.
    """
    attacker = build_attacker(cfg)
    if attacker is None or attacker.kind is adv.AttackKind.T1_EAVESDROP:
        raise PycraError("resilience sweep needs an injecting attacker")
    r = cfg.resilient
    N, fs, n = r.N, cfg.fs, cfg.n_samples
    n_bins = min(N // 2 + 1, int(math.ceil(r.max_hz * N / fs)) + 1)
    bins = np.arange(n_bins)
    period = max(1, int(round(cfg.schedule.mean_period_s * fs)))
    out = []
    for L_s in silent_lengths_s:
        L = int(round(L_s * fs))
        scores, labels, flags, per_trial, count = [], [], [], [], 0
        for t in range(trials):
            rng = RngStream(cfg.seed).child(3).child(t)
            sched = gen_fixed_silence_schedule(rng.child(_SCHEDULE), n, period, L, cfg.schedule.amplitude)
            run = simulate_run(cfg, rng, True, schedule=sched)
            y = run.sensor.y.samples
            t_flags, t_labels = [], []
            for start, length in sched.segments_of(Phase.SILENT):
                if start < N:
                    continue
                Y, Y_hat = silent_window_spectra(y, run.prediction, start, min(length, N), N, bins)
                G = freq_chi2(spectral_residual(Y, Y_hat), min(r.window_T, length))
                att = np.zeros(n_bins, dtype=bool)
                att[classify_attacked_bins(G, r.beta_freq)] = True
                truth = _truth_bins(attacker, start, N, fs, n, n_bins)
                scores.append(G)
                labels.append(truth)
                t_flags.append(att)
                t_labels.append(truth)
                count += 1
            if t_flags:
                per_trial.append(Confusion.from_predictions(np.concatenate(t_flags), np.concatenate(t_labels)).balanced_accuracy)
            else:
                per_trial.append(0.5)
            flags += t_flags
        if count:
            cm = Confusion.from_predictions(np.concatenate(flags), np.concatenate(labels))
            auc = roc_curve(np.concatenate(scores), np.concatenate(labels)).auc
            out.append(ResiliencePoint(L_s, trials, count, cm.tpr, cm.fpr, cm.balanced_accuracy,
                                       float(np.median(per_trial)), auc))
        else:
            # no silent window means no evidence: chance-level classification
            out.append(ResiliencePoint(L_s, trials, 0, 0.0, 0.0, 0.5, 0.5, 0.5))
    return out


# --- RFID eavesdropping ---------------------------------------------------

@dataclass
class RfidPoint:
    kappa_eve: float
    runs: int
    alarms: int
    alarm_rate: float
    ci_low: float
    ci_high: float
    displacement_over_noise: float
    threshold: float


def rfid_scene(cfg: ScenarioConfig) -> CouplingScene:
    f = cfg.rfid
    return CouplingScene(f.carrier_hz, f.kappa_tag, bit_period_samples=f.bit_period_samples,
                         sample_rate_hz=f.fs, sigma_v=f.sigma_v)


def _rfid_schedule(cfg: ScenarioConfig, rng: RngStream) -> ChallengeSchedule:
    f = cfg.rfid
    n = 16 * f.bit_period_samples
    return gen_random_challenge_schedule(rng, n, 2 * f.bit_period_samples, 0.5, grid=f.bit_period_samples // 4 or 1)


def rfid_statistic(scene: CouplingScene, schedule: ChallengeSchedule, rng: RngStream) -> float:
    """Mean squared coupling residual over the actuated samples."""
    z = rfid_observe(scene, schedule, rng).samples - rfid_predict(scene, schedule)
    on = schedule.u() > 0
    return float(np.mean(z[on] ** 2)) if on.any() else 0.0


def rfid_experiment(cfg: ScenarioConfig, kappas=None, runs: int | None = None) -> list[RfidPoint]:
    """Alarm rate per eavesdropper coupling.

    The threshold is the ``1 - rfid.fpr`` quantile over calibration runs
    without an eavesdropper. Run ``i`` uses the same random stream for every
    coupling value, so alarm rates are paired across the grid.
    """
    f = cfg.rfid
    kappas = list(f.kappa_eve if kappas is None else kappas)
    runs = f.runs if runs is None else runs
    base = rfid_scene(cfg)
    cal = RngStream(cfg.seed).child(4).child(0)
    null = [rfid_statistic(base, _rfid_schedule(cfg, cal.child(i).child(0)), cal.child(i).child(1))
            for i in range(f.calibration_runs)]
    thr = calibrate_threshold(null, 1 - f.fpr)
    root = RngStream(cfg.seed).child(4).child(1)
    out = []
    for k in kappas:
        scene = base.with_eavesdropper(k)
        hits = sum(rfid_statistic(scene, _rfid_schedule(cfg, root.child(i).child(0)), root.child(i).child(1)) > thr
                   for i in range(runs))
        lo, hi = wilson_interval(hits, runs)
        disp = k * base.amplitude / f.sigma_v if f.sigma_v > 0 else math.inf
        out.append(RfidPoint(k, runs, int(hits), hits / runs, lo, hi, disp, thr))
    return out


# --- export ---------------------------------------------------------------

def write_rows(path, header, rows) -> Path:
    path = Path(path)
    try:
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for row in rows:
                w.writerow([_cell(v) for v in row])
    except OSError as exc:
        raise PycraError(f"cannot write {path}: {exc.strerror}") from exc
    return path


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return int(v)
    return v


def export_csv(artifact, path) -> Path:
    """Write a run, report, track, ROC curve or list of sweep points as CSV."""
    try:
        if isinstance(artifact, (ScenarioRun, DetectionReport, RocCurve)):
            return artifact.to_csv(path)
        if isinstance(artifact, ResilientTrack):
            return artifact.track_csv(path)
    except OSError as exc:
        raise PycraError(f"cannot write {path}: {exc.strerror}") from exc
    try:
        rows = list(artifact)
    except TypeError:
        raise PycraError(f"don't know how to export {type(artifact).__name__}") from None
    if rows and isinstance(rows[0], PostTransitionFrame):
        return write_rows(path, ["frame", "freq_hz_estimate"],
                           ((f.frame, "" if f.estimate_hz is None else f.estimate_hz) for f in rows))
    if not rows or not dataclasses.is_dataclass(rows[0]):
        raise PycraError(f"don't know how to export {type(artifact).__name__}")
    names = [f.name for f in dataclasses.fields(rows[0])]
    return write_rows(path, names, ([getattr(r, k) for k in names] for r in rows))
