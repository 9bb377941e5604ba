"""Bayesian quickest change detection for a Gaussian mean shift.

The attacker's best strategy for spotting the start of a silent period is the
Shiryaev posterior-threshold rule. This module implements the rule, a
brute-force posterior for cross-checking, and Monte Carlo estimators for the
delay/false-alarm trade-off.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import special, stats

from .errors import ParameterError
from .sigcore import RngStream

DEFAULT_CAP = 10**7


@dataclass(frozen=True)
class QcdProblem:
    """Mean shift ``N(0, sigma^2) -> N(A, sigma^2)`` with a geometric change prior.

    Parameters
    ----------
    A : float
        Post-change mean per observation.
    sigma : float
        Observation noise standard deviation.
    rho : float
        Change prior ``Pr(change at slot n) = (1 - rho)**(n - 1) * rho``.
    threshold : float
        Posterior level at which the detector stops.
    cell : int
        Observations per prior slot; the change can only happen at slot
        boundaries and the detector decides once per slot.
    """

    A: float = 1.0
    sigma: float = 1.0
    rho: float = 0.1
    threshold: float = 0.99
    cell: int = 1

    def __post_init__(self):
        if not self.sigma > 0:
            raise ParameterError("sigma must be positive")
        if not 0 < self.rho < 1:
            raise ParameterError("rho must lie in (0, 1)")
        if not 0 < self.threshold < 1:
            raise ParameterError("threshold must lie in (0, 1)")
        if self.cell < 1:
            raise ParameterError("cell must be at least one observation")

    @property
    def log_threshold(self) -> float:
        return math.log(self.threshold) - math.log1p(-self.threshold)

    def with_log_threshold(self, h: float) -> "QcdProblem":
        return replace(self, threshold=float(special.expit(h)))


def likelihood_ratio(x, A: float, sigma: float):
    """``f1(x) / f0(x) = exp((A / sigma^2) * (x - A / 2))``."""
    if not sigma > 0:
        raise ParameterError("sigma must be positive")
    return np.exp((A / sigma**2) * (np.asarray(x, dtype=float) - A / 2))


def shiryaev_update(p: float, x: float, problem: QcdProblem) -> float:
    """One step of the posterior ``Pr(change has happened | data)``."""
    if p >= 1:
        return 1.0
    llr = (problem.A / problem.sigma**2) * (x - problem.A / 2)
    prior = p + (1 - p) * problem.rho
    # log-odds form; the ratio form overflows for large |x|
    return float(special.expit(math.log(prior) + llr - math.log((1 - p) * (1 - problem.rho))))


def posterior_path(xs, problem: QcdProblem, p0: float = 0.0) -> np.ndarray:
    out = np.empty(len(xs))
    p = p0
    for i, x in enumerate(xs):
        p = shiryaev_update(p, x, problem)
        out[i] = p
    return out


def brute_force_posterior(xs, problem: QcdProblem) -> float:
    """``Pr(change <= n | x_1..x_n)`` by summing over every change point."""
    xs = np.asarray(xs, dtype=float)
    n = xs.size
    f0 = stats.norm.pdf(xs, 0.0, problem.sigma)
    f1 = stats.norm.pdf(xs, problem.A, problem.sigma)
    rho = problem.rho
    changed = 0.0
    for g in range(1, n + 1):
        prior = (1 - rho) ** (g - 1) * rho
        changed += prior * np.prod(f0[: g - 1]) * np.prod(f1[g - 1:])
    unchanged = (1 - rho) ** n * np.prod(f0)
    return float(changed / (changed + unchanged))


def wilson_interval(successes: int, trials: int, confidence: float = 0.95) -> tuple[float, float]:
    if trials == 0:
        return 0.0, 1.0
    ci = stats.binomtest(int(successes), int(trials)).proportion_ci(confidence, method="wilson")
    return float(ci.low), float(ci.high)


@dataclass
class TrialBatch:
    """Change slots, stopping slots and posteriors at stopping for many trials."""

    gamma: np.ndarray
    tau: np.ndarray
    log_odds_at_stop: np.ndarray
    truncated: np.ndarray

    @property
    def trials(self) -> int:
        return self.gamma.size

    def false_alarms(self) -> np.ndarray:
        return (self.tau < self.gamma) & ~self.truncated

    def p_fa_posterior(self) -> float:
        """Lower-variance estimate ``E[1 - p_tau]`` of the false-alarm probability."""
        ok = ~self.truncated
        return float(np.mean(special.expit(-self.log_odds_at_stop[ok]))) if ok.any() else float("nan")

    def delay_within(self, K: int) -> np.ndarray:
        return (self.tau >= self.gamma) & (self.tau <= self.gamma + K) & ~self.truncated

    def mean_delay(self) -> float:
        return float(np.mean(np.maximum(self.tau - self.gamma, 0)))


def run_trials(rng: RngStream, problem: QcdProblem, trials: int, cap: int = DEFAULT_CAP,
               amp_per_obs: float | None = None) -> TrialBatch:
    """Vectorized Monte Carlo of the Shiryaev rule.

    Each slot draws ``problem.cell`` observations with mean ``amp_per_obs``
    (default ``A``) after the change. Noise for trial ``i`` at slot ``n`` is
    the same for every threshold, so runs with one seed share random numbers.
    """
    M, m = int(trials), problem.cell
    amp = problem.A if amp_per_obs is None else amp_per_obs
    s2 = problem.sigma**2
    gamma = rng.child(0).geometric(problem.rho, M)
    lo = np.full(M, -np.inf)
    tau = np.zeros(M, dtype=np.int64)
    lo_stop = np.zeros(M)
    active = np.ones(M, dtype=bool)
    h = problem.log_threshold
    log_rho, log_stay = math.log(problem.rho), math.log1p(-problem.rho)
    noise_root = rng.child(1)
    n = 0
    while active.any() and n < cap:
        n += 1
        noise = noise_root.child(n).normal((M, m) if m > 1 else M, scale=problem.sigma)
        idx = np.flatnonzero(active)
        mean = np.where(gamma[idx] <= n, amp, 0.0)
        if m > 1:
            total = noise[idx].sum(axis=1) + m * mean
        else:
            total = noise[idx] + mean
        llr = (amp / s2) * (total - m * amp / 2)
        lo[idx] = np.logaddexp(lo[idx], log_rho) - log_stay + llr
        hit = idx[lo[idx] >= h]
        tau[hit] = n
        lo_stop[hit] = lo[hit]
        active[hit] = False
    truncated = active.copy()
    tau[truncated] = n
    lo_stop[truncated] = lo[truncated]
    if truncated.any():
        warnings.warn(f"{truncated.sum()} trials hit the {cap}-slot cap", RuntimeWarning, stacklevel=2)
    return TrialBatch(gamma, tau, lo_stop, truncated)


def run_trial(rng: RngStream, problem: QcdProblem, cap: int = DEFAULT_CAP) -> tuple[int, int, bool]:
    """Single trial: ``(change slot, stopping slot, truncated)``."""
    b = run_trials(rng, problem, 1, cap)
    return int(b.gamma[0]), int(b.tau[0]), bool(b.truncated[0])


def calibrate_problem(rng: RngStream, problem: QcdProblem, alpha: float, trials: int = 20_000,
                      iterations: int = 30, amp_per_obs: float | None = None) -> QcdProblem:
    """Bisect the posterior threshold until the estimated false-alarm rate is ``alpha``."""
    if not 0 < alpha < 1:
        raise ParameterError("alpha must lie in (0, 1)")
    lo_h, hi_h = -2.0, math.log(1 / alpha) + 10.0
    for _ in range(iterations):
        mid = 0.5 * (lo_h + hi_h)
        pfa = run_trials(rng, problem.with_log_threshold(mid), trials, amp_per_obs=amp_per_obs).p_fa_posterior()
        if pfa > alpha:
            lo_h = mid
        else:
            hi_h = mid
        if hi_h - lo_h < 1e-3:
            break
    return problem.with_log_threshold(hi_h)


@dataclass
class DelayProfile:
    alpha: float
    p_fa: float
    p_fa_ci: tuple[float, float]
    prob_within: dict[int, tuple[float, float, float]]
    mean_delay: float
    trials: int
    truncated: int
    threshold: float

    def rows(self):
        for K, (p, lo, hi) in sorted(self.prob_within.items()):
            yield dict(alpha=self.alpha, K=K, prob_delay_le_K=p, ci_lo=lo, ci_hi=hi,
                       mean_delay=self.mean_delay, p_fa_empirical=self.p_fa)


def delay_profile(batch: TrialBatch, Ks, alpha: float = float("nan"), threshold: float = float("nan")) -> DelayProfile:
    M = batch.trials
    fa = int(batch.false_alarms().sum())
    within = {}
    for K in Ks:
        k = int(batch.delay_within(K).sum())
        within[int(K)] = (k / M, *wilson_interval(k, M))
    return DelayProfile(alpha, fa / M, wilson_interval(fa, M), within, batch.mean_delay(), M,
                        int(batch.truncated.sum()), threshold)


@dataclass
class Theorem1Result:
    profiles: list[DelayProfile]
    slope: float
    intercept: float
    K: int
    warnings: list[str] = field(default_factory=list)


def verify_theorem1(rng: RngStream, problem: QcdProblem, alphas, K: int = 1, trials: int = 100_000,
                    calibration_trials: int = 20_000) -> Theorem1Result:
    """Fit the log-log slope of ``Pr(change <= stop <= change + K)`` against ``alpha``."""
    alphas = sorted(alphas, reverse=True)
    if len(alphas) < 2 or max(alphas) / min(alphas) < 100:
        raise ParameterError("alpha list must span at least two decades")
    profiles, notes = [], []
    for i, a in enumerate(alphas):
        calibrated = calibrate_problem(rng.child(100 + i), problem, a, calibration_trials)
        batch = run_trials(rng.child(1), calibrated, trials)
        prof = delay_profile(batch, [K], a, calibrated.threshold)
        lo, hi = prof.prob_within[K][1:]
        if prof.prob_within[K][0] * trials < 30:
            notes.append(f"alpha={a}: fewer than 30 events, CI [{lo:.2e}, {hi:.2e}] is wide")
        profiles.append(prof)
    p = np.array([pr.prob_within[K][0] for pr in profiles])
    x = np.log(alphas)
    with np.errstate(divide="ignore"):
        y = np.log(p)
    ok = np.isfinite(y)
    slope, intercept = (np.polyfit(x[ok], y[ok], 1) if ok.sum() >= 2 else (float("nan"), float("nan")))
    return Theorem1Result(profiles, float(slope), float(intercept), K, notes)


@dataclass
class Theorem2Result:
    beta: float
    K: int
    base: tuple[float, float, float]
    scaled: tuple[float, float, float]
    difference: float
    overlap: bool


def verify_theorem2(rng: RngStream, problem: QcdProblem, beta: float, K: int, alpha: float = 0.01,
                    trials: int = 100_000, calibration_trials: int = 20_000) -> Theorem2Result:
    """Compare delay CDFs of ``(A, T)`` and ``(A / beta, beta^2 T)``.

    The scaled arm observes ``beta^2`` samples of mean ``A / beta`` per prior
    slot; delays are counted in samples, so ``beta^2 * K`` samples equal
    ``K`` slots.
    """
    if not beta >= 1:
        raise ParameterError("beta must be at least 1")
    m = int(round(beta**2))
    if abs(m - beta**2) > 1e-9:
        raise ParameterError("beta^2 must be an integer number of samples")
    base = calibrate_problem(rng.child(10), problem, alpha, calibration_trials)
    b1 = run_trials(rng.child(1), base, trials)
    scaled = replace(problem, cell=m)
    scaled = calibrate_problem(rng.child(20), scaled, alpha, calibration_trials, amp_per_obs=problem.A / beta)
    b2 = run_trials(rng.child(2), scaled, trials, amp_per_obs=problem.A / beta)
    k1 = int(b1.delay_within(K).sum())
    # scaled arm: delay in samples (tau - gamma) * m <= beta^2 K
    d2 = (b2.tau - b2.gamma) * m
    k2 = int(((d2 >= 0) & (d2 <= m * K) & ~b2.truncated).sum())
    r1 = (k1 / trials, *wilson_interval(k1, trials))
    r2 = (k2 / trials, *wilson_interval(k2, trials))
    overlap = r1[1] <= r2[2] and r2[1] <= r1[2]
    return Theorem2Result(beta, K, r1, r2, abs(r1[0] - r2[0]), overlap)


def project_cells(fine, beta: float) -> np.ndarray:
    """Map ``beta^2``-sample cells of a scaled stream onto one base observation each.

    Cell sums divided by ``beta`` turn ``N(A / beta, sigma^2)`` samples into
    ``N(A, sigma^2)`` observations.
    """
    m = int(round(beta**2))
    fine = np.asarray(fine, dtype=float)
    usable = fine.size - fine.size % m
    return fine[:usable].reshape(-1, m).sum(axis=1) / beta


def detection_bound_over_challenges(alpha: float, K: int) -> float:
    """Lower bound ``1 - (1 - alpha)**K`` on catching the attacker in ``K`` challenges."""
    if not 0 < alpha < 1:
        raise ParameterError("alpha must lie in (0, 1)")
    if K < 1:
        raise ParameterError("K must be at least 1")
    return float(-np.expm1(K * np.log1p(-alpha)))


@dataclass
class MultiChallengeResult:
    K: int
    per_challenge: float
    empirical: float
    ci: tuple[float, float]
    bound: float


def simulate_multi_challenge(rng: RngStream, problem: QcdProblem, Ks, trials: int = 10_000) -> list[MultiChallengeResult]:
    """Catch rate over ``K`` independent challenges.

    A challenge catches the attacker when its detector stops before the
    silence starts (it drops the spoof while the actuator is still on).
    """
    Kmax = max(Ks)
    caught = np.empty((trials, Kmax), dtype=bool)
    for j in range(Kmax):
        caught[:, j] = run_trials(rng.child(j), problem, trials).false_alarms()
    per = float(caught.mean())
    out = []
    for K in Ks:
        hits = int(caught[:, :K].any(axis=1).sum())
        out.append(MultiChallengeResult(K, per, hits / trials, wilson_interval(hits, trials),
                                        detection_bound_over_challenges(per, K)))
    return out
