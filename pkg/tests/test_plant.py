import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from pycra.errors import CalibrationError, DegenerateFitError, DimensionError, NumericError, ParameterError
from pycra.plant import (CouplingScene, StateSpaceModel, ToneRing, calibrate_threshold, fit_decay_model,
                         predict_output, rfid_observe, rfid_predict, sensor_model, simulate_sensor,
                         simulate_sensor_parts)
from pycra.resilient import PeakConfig, spectral_peaks
from pycra.sigcore import (Phase, RngStream, SignalTrace, constant_schedule, gen_confusion_schedule,
                           gen_random_challenge_schedule)

FS = 10_000.0


def step_down(model, n):
    """Output after a long unit input is switched off."""
    return model.free_response(n, x0=model.steady_state(1.0))


# --- step / model ----------------------------------------------------------

def test_zero_fixed_point():
    m = sensor_model(sigma_v=0.0)
    x, y = m.step(0.0, 0.0)
    assert not x.any() and y == 0.0


def test_step_rejects_nonfinite():
    with pytest.raises(NumericError):
        sensor_model().step(np.nan)


def test_unstable_model_rejected():
    with pytest.raises(NumericError):
        StateSpaceModel([[1.01]], [1.0], [1.0])


def test_shape_mismatch():
    with pytest.raises(DimensionError):
        StateSpaceModel(np.eye(2) * 0.5, [1.0], [1.0, 1.0])


@pytest.mark.parametrize("order", [1, 2])
def test_settles_within_35ms(order):
    m = sensor_model(FS, order=order)
    y = step_down(m, 400)
    assert abs(y[350]) < 0.01
    assert m.dc_gain() == pytest.approx(1.0)


def test_impulse_response_matches_matrix_powers():
    m = sensor_model(FS)
    direct = [m.C @ np.linalg.matrix_power(m.A, k) @ m.B for k in range(11)]
    assert np.allclose(m.impulse_response(11), direct, rtol=1e-13, atol=0)


def test_simulate_matches_stepping():
    m = sensor_model(FS, sigma_v=0.0)
    u = RngStream(2).normal(200)
    y_sim, states = m.simulate(u)
    stepper = m.copy()
    ys = [stepper.step(v)[1] for v in u]
    assert np.allclose(y_sim, ys, atol=1e-12)
    assert np.allclose(states[-1], stepper.x, atol=1e-12)


# --- simulate_sensor -------------------------------------------------------

def test_passive_silence_gives_zero():
    m = sensor_model(FS, sigma_v=0.0)
    y = simulate_sensor(m, constant_schedule(2000, phase=Phase.SILENT), ToneRing())
    assert not y.samples.any()


def _steady_spectrum(attack_hz=None, seed=0):
    n, skip = 11_000, 1000  # drop the start-up transient
    m = sensor_model(FS)
    a = None
    if attack_hz:
        a = 0.5 * np.sin(2 * np.pi * attack_hz * np.arange(n) / FS)
    y = simulate_sensor(m, constant_schedule(n), ToneRing(71.0), a, RngStream(seed)).samples[skip:]
    return np.abs(np.fft.rfft(y)), m.sigma_v * np.sqrt(y.size)


def test_ring_dominant_bin():
    mag, _ = _steady_spectrum()
    assert int(np.argmax(mag[1:])) + 1 == 71  # 1 Hz bins


def test_ring_plus_attack_two_peaks():
    mag, noise_level = _steady_spectrum(120.0, seed=5)
    above = np.flatnonzero(mag > 10 * noise_level)
    assert set(above) == {71, 120}
    assert set(spectral_peaks(mag, PeakConfig(mad_factor=10))) == {71, 120}


def test_attack_length_mismatch():
    with pytest.raises(DimensionError):
        simulate_sensor(sensor_model(), constant_schedule(10), ToneRing(), np.zeros(9), RngStream(0))


# --- fit_decay_model -------------------------------------------------------

def test_fit_recovers_time_constant():
    tau0 = 0.004
    t = np.arange(400) / FS
    fit = fit_decay_model([SignalTrace(np.exp(-t / tau0), FS)], order=1)
    assert fit.time_constants_s[0] == pytest.approx(tau0, rel=1e-3)


def test_fit_residual_at_noise_scale():
    m = sensor_model(FS)
    clean = step_down(m, 400)
    noisy = clean + RngStream(7).normal(400, scale=m.sigma_v)
    fit = fit_decay_model([SignalTrace(noisy, FS)], order=2)
    assert fit.residual_rms <= 0.005


def test_fit_deterministic():
    tr = SignalTrace(step_down(sensor_model(FS), 300) + RngStream(1).normal(300, scale=0.003), FS)
    a, b = fit_decay_model([tr], order=2), fit_decay_model([tr], order=2)
    assert np.array_equal(a.time_constants_s, b.time_constants_s)
    assert np.array_equal(a.coefficients, b.coefficients)


def test_fit_all_zero():
    with pytest.raises(DegenerateFitError):
        fit_decay_model([SignalTrace(np.zeros(50), FS)])


# --- calibrate_threshold ---------------------------------------------------

def test_threshold_zero_residuals():
    assert calibrate_threshold(np.zeros(500), 0.99) == 0.0


def test_threshold_chi2_quantile():
    g = stats.chi2(5).rvs(size=200_000, random_state=np.random.default_rng(3))
    assert calibrate_threshold(g, 0.999) == pytest.approx(stats.chi2(5).ppf(0.999), rel=0.05)


def test_threshold_median():
    x = RngStream(4).normal(1001)
    assert calibrate_threshold(x, 0.5) == np.median(x)


@pytest.mark.parametrize("vals,q", [(np.zeros(99), 0.9), (np.zeros(200), 1.0), (np.zeros(200), 0.0)])
def test_threshold_errors(vals, q):
    with pytest.raises(CalibrationError):
        calibrate_threshold(vals, q)


# --- RFID coupling ---------------------------------------------------------

def test_rfid_no_coupling_is_carrier_plus_noise():
    scene = CouplingScene(kappa_tag=0.0, kappa_eve=0.0)
    sched = constant_schedule(4096)
    y = rfid_observe(scene, sched, RngStream(5)).samples
    noise = RngStream(5).normal(4096, scale=scene.sigma_v)
    assert np.allclose(y, scene.carrier(4096) + noise, atol=1e-15)


def test_rfid_eavesdropper_amplitude_drop():
    base = CouplingScene(kappa_tag=0.0)
    sched = constant_schedule(1 << 16)
    carrier = base.carrier(1 << 16)
    # least-squares amplitude against the unattenuated carrier
    amp = lambda y: float(carrier @ y / (carrier @ carrier))
    a0 = amp(rfid_observe(base, sched, RngStream(6)).samples)
    a1 = amp(rfid_observe(base.with_eavesdropper(0.05), sched, RngStream(6)).samples)
    assert 1 - a1 / a0 == pytest.approx(0.05, abs=0.002)


def test_rfid_tag_only_below_threshold():
    scene = CouplingScene()
    rng = RngStream(8)
    stat = []
    for i in range(300):
        sched = gen_random_challenge_schedule(rng.child(i), 4096, 512, 0.5, 64)
        z = rfid_observe(scene, sched, rng.child(10_000 + i)).samples - rfid_predict(scene, sched)
        stat.append(np.mean(z[sched.u() > 0] ** 2))
    thr = calibrate_threshold(stat[:200], 0.99)
    assert np.mean(np.array(stat[200:]) > thr) <= 0.05


def test_rfid_coupling_budget():
    with pytest.raises(ParameterError):
        CouplingScene(kappa_tag=0.6, kappa_eve=0.5)


# --- properties ------------------------------------------------------------

@given(seed=st.integers(0, 2**32), n=st.integers(1, 800))
def test_passivity(seed, n):
    m = sensor_model(FS, sigma_v=0.0)
    sched = gen_random_challenge_schedule(RngStream(seed), n, 50, 0.5, 5)
    y = predict_output(m, sched, ToneRing(phase=1.0))
    # with x(0) = 0 nothing is seen before the first actuated sample
    first_on = np.flatnonzero(sched.u() > 0)
    stop = first_on[0] if first_on.size else n
    assert not y[:stop + 1].any()


@given(seed=st.integers(0, 2**32), amp=st.floats(0.1, 50.0))
def test_stability_bounded_state(seed, amp):
    m = sensor_model(FS, sigma_v=0.0)
    u = amp * np.sign(RngStream(seed).normal(5000))
    _, states = m.simulate(u)
    # |x_i| <= sum_k |A_ii|^k |B_i| amp for a diagonal stable model
    bound = np.abs(m.B) / (1 - np.abs(np.diag(m.A))) * amp
    assert np.all(np.abs(states) <= bound * (1 + 1e-9))


@given(seed=st.integers(0, 2**32), beta=st.floats(1.1, 5.0))
def test_superposition(seed, beta):
    r = RngStream(seed)
    m = sensor_model(FS, sigma_v=0.0)
    sched = gen_confusion_schedule(r, 1.0, beta, 0.5, 1500, grid=10)
    a = r.normal(1500)
    ring = ToneRing()
    with_attack = simulate_sensor_parts(m, sched, ring, a).y.samples
    assert np.allclose(with_attack, predict_output(m, sched, ring) + a, atol=1e-12)
