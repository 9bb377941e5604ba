import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pycra.errors import NeedsMoreSamples, ParameterError
from pycra.plant import ToneRing, predict_output, sensor_model, simulate_sensor
from pycra.resilient import (PeakConfig, PostTransitionConfig, RunningFreqChi2, SignalFamily, SlidingDft,
                             classify_attacked_bins, excess_bins, frame_spectrum, freq_chi2, fuse_challenges,
                             fused_scores, gated_tone_energy, ml_estimate, nuisance_basis,
                             post_transition_track, predict_natural_spectrum, secure_frequency_estimate,
                             silent_window_spectra, sliding_dft_update, spectral_peaks, spectral_residual)
from pycra.sigcore import ChallengeSchedule, Phase, RngStream, Segment

FS = 10_000.0


# --- sliding DFT -----------------------------------------------------------

def test_zero_stream_stays_zero():
    s = SlidingDft(64)
    for _ in range(300):
        assert not s.update(0.0).any()


def test_matches_direct_dft_after_warmup():
    N = 256
    x = RngStream(1).normal(3 * N + 17)
    s = SlidingDft(N)
    s.extend(x)
    Y, ref = s.Y, np.fft.fft(x[-N:])
    assert np.max(np.abs(np.abs(Y) - np.abs(ref))) / np.max(np.abs(ref)) < 1e-9


def test_textbook_recursion_form():
    N, k = 32, np.arange(32)
    Y = RngStream(2).normal(N) + 1j * RngStream(3).normal(N)
    w = np.exp(2j * np.pi * k / N)
    textbook = w * Y + np.exp(-2j * np.pi * k * (N - 1) / N) * 0.7 - w * (-0.2)
    assert np.allclose(sliding_dft_update(Y, w, 0.7, -0.2), textbook, atol=1e-13)


def test_tone_concentrates_in_two_bins():
    N, k0 = 128, 9
    x = np.sin(2 * np.pi * k0 * np.arange(2 * N) / N)
    s = SlidingDft(N)
    mag = np.abs(s.extend(x))
    others = np.delete(mag, [k0, N - k0])
    assert mag[k0] == pytest.approx(N / 2) and mag[N - k0] == pytest.approx(N / 2)
    assert others.max() < 1e-9 * mag[k0]


def test_bad_bins():
    with pytest.raises(ParameterError):
        SlidingDft(8, bins=[8])


# --- predicted spectrum ----------------------------------------------------

def test_zero_state_prediction_is_zero():
    N = 64
    y = RngStream(4).normal(400) * np.r_[np.zeros(200), np.ones(200)]
    Y_hat = predict_natural_spectrum(y, np.zeros(400), 100, 40, N)
    assert not np.abs(Y_hat).any()


def _one_window(seed, sigma_v):
    sched = ChallengeSchedule((Segment(Phase.STEADY, 1.0, 6000), Segment(Phase.SILENT, 0.0, 400)))
    m = sensor_model(FS, sigma_v=sigma_v)
    ring = ToneRing()
    y = simulate_sensor(m, sched, ring, rng=RngStream(seed)).samples
    return y, predict_output(m, sched, ring), m


def test_no_attack_residual_within_noise_floor():
    N, start, L = 5000, 6000, 400
    y, y_pred, m = _one_window(5, 0.003)
    Y, Y_hat = silent_window_spectra(y, y_pred, start, L, N, np.arange(300))
    Z = spectral_residual(Y, Y_hat)
    assert np.all(Z[0] == Z[0]) and np.abs(Z[0]).max() < 6 * m.sigma_v
    # |Z| <= |DFT of the noise fed in since the window opened|
    floor = 6 * m.sigma_v * np.sqrt(np.arange(1, L + 1))[:, None]
    assert np.all(np.abs(Z) <= floor)


def test_prediction_equals_noise_free_simulation():
    y0, y_pred, _ = _one_window(6, 0.0)
    assert np.array_equal(y0, y_pred)


def test_window_must_follow_history():
    with pytest.raises(NeedsMoreSamples):
        silent_window_spectra(np.zeros(100), np.zeros(100), 10, 5, 64)


# --- frequency residual statistic ------------------------------------------

def test_freq_chi2_zero():
    assert not freq_chi2(np.zeros((10, 7)), 5).any()


def test_running_equals_batch():
    Z = RngStream(7).normal((300, 40))
    run = RunningFreqChi2(25, 40)
    for m in range(Z.shape[0]):
        G = run.push(Z[m])
        if m + 1 < 25:
            assert G is None
        else:
            assert np.allclose(G, freq_chi2(Z[:m + 1], 25), rtol=1e-12, atol=0)


def test_freq_chi2_underflow():
    with pytest.raises(NeedsMoreSamples):
        freq_chi2(np.zeros((3, 4)), 4)


def test_classify_examples():
    assert classify_attacked_bins(np.zeros(20), 0.5).size == 0
    G = RngStream(8).uniform(0, 10, 50)
    assert classify_attacked_bins(G, G.max() + 1e-9).size == 0
    assert list(classify_attacked_bins([0.0, 3.0, 1.0, 5.0], 2.0)) == [1, 3]


# --- peak selection --------------------------------------------------------

def test_single_tone_estimate_is_argmax():
    n = 4000
    y = np.sin(2 * np.pi * 71 * np.arange(n) / FS) + RngStream(9).normal(n, scale=0.01)
    mag = np.abs(np.fft.rfft(y))
    bin_hz = FS / n
    assert secure_frequency_estimate(mag, [], bin_hz) == pytest.approx(int(np.argmax(mag)) * bin_hz)


def test_all_candidates_attacked_gives_none():
    mag = np.zeros(100)
    mag[[20, 50]] = 10.0
    mag += RngStream(10).uniform(0, 0.01, 100)
    assert secure_frequency_estimate(mag, [20, 50], 1.0) is None
    assert secure_frequency_estimate(mag, [49], 1.0) == 20.0  # guard band covers 50


# --- matched-filter estimation ---------------------------------------------

def test_ml_noiseless():
    fam = SignalFamily(np.arange(40.0, 201.0, 20.0), FS)
    t = np.arange(1000) / FS
    assert ml_estimate(np.sin(2 * np.pi * 120 * t), fam) == 120.0


def test_ml_at_10db_snr():
    n = 200  # Rayleigh resolution FS / n = 50 Hz; grid spacing is two of those
    fam = SignalFamily(np.arange(100.0, 2001.0, 100.0), FS)
    sigma = np.sqrt(0.5 / 10)  # unit sine has power 0.5
    r = RngStream(11)
    hits = 0
    for i in range(1000):
        f0 = fam.freqs_hz[r.integers(0, fam.freqs_hz.size)]
        y = np.sin(2 * np.pi * f0 * np.arange(n) / FS) + r.normal(n, scale=sigma)
        hits += ml_estimate(y, fam) == f0
    assert hits >= 990


def test_cross_correlation_shrinks_with_window():
    fam = SignalFamily(np.array([70.0, 77.0]), FS)
    leak = [abs(fam.gram(n)[0, 1]) for n in (1000, 2000, 5000, 20_000)]
    assert all(a > b for a, b in zip(leak, leak[1:]))


def test_gram_diagonally_dominant():
    fam = SignalFamily(np.arange(40.0, 201.0, 20.0), FS)
    G = fam.gram(1000)
    off = np.abs(G - np.diag(np.diag(G))).sum(axis=1)
    assert np.all(np.diag(G) > off)


def test_fusion_identical_windows():
    fam = SignalFamily(np.arange(40.0, 201.0, 20.0), FS)
    t = np.arange(1000) / FS
    w = (np.sin(2 * np.pi * 80 * t) + RngStream(12).normal(1000, scale=3.0), 0.0)
    assert fuse_challenges([w] * 5, fam) == ml_estimate(w[0], fam)


def test_fused_true_score_linear_in_windows():
    fam = SignalFamily(np.arange(40.0, 201.0, 20.0), FS)
    windows = []
    for j in range(10):
        t0 = 0.31 * j
        windows.append((3.0 * np.sin(2 * np.pi * 100 * (t0 + np.arange(1000) / FS)), t0))
    k = int(np.flatnonzero(fam.freqs_hz == 100.0)[0])
    one = fused_scores(windows[:1], fam)[k]
    for N in (2, 5, 10):
        assert fused_scores(windows[:N], fam)[k] / one == pytest.approx(N, rel=0.01)


def test_fusion_requires_windows():
    with pytest.raises(ParameterError):
        fuse_challenges([], SignalFamily([1.0], FS))


# --- post-transition estimator ---------------------------------------------

def test_excess_bins():
    assert list(excess_bins([1, 5, 30, 2], [1, 1, 1, 1], 3.0)) == [1, 2]


def test_nuisance_basis_orthonormal():
    idx = np.arange(0, 400, 3)
    Q = nuisance_basis(idx, idx % 40, [120.0, 55.0], FS, degree=2)
    assert Q.shape == (idx.size, 12)
    assert np.allclose(Q.T @ Q, np.eye(12), atol=1e-10)
    assert nuisance_basis(idx, idx % 40, [], FS).shape == (idx.size, 0)


def test_gated_energy_peaks_at_true_tone():
    idx = np.concatenate([np.arange(s, s + 40) for s in range(0, 20_000, 700)])
    y = np.zeros(20_000)
    y[idx] = 0.3 * np.sin(2 * np.pi * 71 * idx / FS + 0.4)
    freqs = np.arange(1, 600.0)
    e = gated_tone_energy(y, idx, freqs, FS)
    assert freqs[int(np.argmax(e))] == 71.0


def test_nuisance_is_removed():
    idx = np.concatenate([np.arange(s, s + 40) for s in range(0, 20_000, 700)])
    off = idx - (idx // 700) * 700
    y = np.zeros(20_000)
    ramp = (off / 39.0) * np.sin(2 * np.pi * 400 * idx / FS)
    y[idx] = 0.05 * np.sin(2 * np.pi * 71 * idx / FS) + 3.0 * ramp
    freqs = np.arange(1, 600.0)
    Q = nuisance_basis(idx, off, [400.0], FS, 2)
    e = gated_tone_energy(y, idx, freqs, FS, Q)
    assert freqs[int(np.argmax(e))] == 71.0
    assert e[399] == -np.inf


def test_post_transition_config_validation():
    with pytest.raises(ParameterError):
        PostTransitionConfig(width=0)
    with pytest.raises(ParameterError):
        PostTransitionConfig(beta_excess=0.0)


def test_post_transition_waits_for_history():
    y = np.zeros(3000)
    assert post_transition_track(y, y, [100, 2000], FS, PostTransitionConfig(N=5000)) == []


# --- properties ------------------------------------------------------------

@given(seed=st.integers(0, 2**32), N=st.sampled_from([8, 31, 64, 100]), extra=st.integers(0, 300))
def test_parseval(seed, N, extra):
    x = RngStream(seed).normal(N + extra)
    s = SlidingDft(N)
    s.extend(x)
    w = s.window()
    assert np.sum(np.abs(s.Y) ** 2) == pytest.approx(N * np.sum(w * w), rel=1e-9)


@given(seed=st.integers(0, 2**32), N=st.sampled_from([16, 64, 256]), extra=st.integers(0, 700))
def test_sliding_equals_direct(seed, N, extra):
    x = RngStream(seed).normal(N + extra)
    s = SlidingDft(N)
    s.extend(x)
    ref = np.fft.fft(x[-N:])
    assert np.max(np.abs(s.Y - ref)) <= 1e-9 * np.max(np.abs(ref))


@given(seed=st.integers(0, 2**32), b1=st.floats(0, 5), b2=st.floats(0, 5))
def test_classification_monotone_in_threshold(seed, b1, b2):
    G = RngStream(seed).uniform(0, 5, 64)
    lo, hi = sorted((b1, b2))
    assert set(classify_attacked_bins(G, hi)) <= set(classify_attacked_bins(G, lo))


@given(seed=st.integers(0, 2**32), c=st.floats(1e-3, 1e3))
def test_ml_scale_invariant(seed, c):
    fam = SignalFamily(np.arange(40.0, 201.0, 20.0), FS)
    r = RngStream(seed)
    y = np.sin(2 * np.pi * 100 * np.arange(500) / FS) + r.normal(500, scale=2.0)
    # the penalty is constant (unit-energy basis), so compare correlations
    phi = fam.basis(500)
    assert int(np.argmax(phi @ (c * y))) == int(np.argmax(phi @ y))


@given(seed=st.integers(0, 2**32), n_att=st.integers(0, 30))
def test_secure_estimate_never_attacked(seed, n_att):
    r = RngStream(seed)
    mag = r.uniform(0, 1, 200) ** 4 * 100
    attacked = r.integers(0, 200, n_att)
    cfg = PeakConfig()
    est = secure_frequency_estimate(mag, attacked, 1.0, cfg)
    if est is not None:
        k = int(est)
        assert np.all(np.abs(attacked - k) > cfg.guard_bins)
        assert k in spectral_peaks(mag, cfg)
