import numpy as np
import pytest

from ersm import dsp
from ersm.errors import (
    DegenerateSignal, InvalidArgument, InvalidCutoff, InvalidShift, Misaligned, TooShort,
)
from ersm.timeseries import TimeSeries

DAY = 86400


def analytic_gain_sq(freq_cph, cutoff_cph, order, period_s=60.0):
    # Bilinear-transform Butterworth: |H|^2 = 1 / (1 + (tan(w/2) / tan(wc/2))^(2N))
    fs = 3600.0 / period_s
    w, wc = 2 * np.pi * np.asarray(freq_cph) / fs, 2 * np.pi * cutoff_cph / fs
    return 1.0 / (1.0 + (np.tan(w / 2) / np.tan(wc / 2)) ** (2 * order))


def sine_series(freq_cph, days=7, amp=1.0, period_s=60.0, phase=0.0):
    t = np.arange(0, days * DAY, period_s)
    return TimeSeries(0.0, period_s, amp * np.sin(2 * np.pi * freq_cph * t / 3600.0 + phase))


@pytest.fixture(scope="module")
def lp():
    return dsp.design_butterworth_lowpass(4, 0.33, 60.0)


def test_filter_is_stable_and_ordered(lp):
    assert lp.order == 4 and lp.sections.shape == (2, 6)
    assert np.all(np.abs(lp.poles) < 1.0)


def test_dc_gain_is_unity(lp):
    assert abs(lp.response(0.0)[0]) == pytest.approx(1.0, abs=1e-12)


def test_half_power_at_cutoff(lp):
    gain_db = 20 * np.log10(abs(lp.response(0.33)[0]))
    assert gain_db == pytest.approx(-3.0103, abs=1e-4)
    assert abs(lp.response(0.33)[0]) ** 2 == pytest.approx(0.5, abs=1e-6)


def test_response_matches_analytic_butterworth(lp):
    f = np.array([0.01, 0.1, 0.2, 0.33, 0.5, 1.0, 3.3, 10.0, 25.0])
    np.testing.assert_allclose(np.abs(lp.response(f)) ** 2, analytic_gain_sq(f, 0.33, 4), rtol=1e-6, atol=1e-15)


def test_stopband_rolloff(lp):
    # order 4 rolls off at about 80 dB per decade
    gain_db = 20 * np.log10(abs(lp.response(3.3)[0]))
    assert gain_db <= -74.0


@pytest.mark.parametrize("order", [0, 9, 2.5])
def test_bad_order(order):
    with pytest.raises(InvalidArgument):
        dsp.design_butterworth_lowpass(order, 0.33, 60.0)


@pytest.mark.parametrize("cutoff", [0.0, -1.0, 30.0, 45.0])
def test_bad_cutoff(cutoff):
    with pytest.raises(InvalidCutoff):
        dsp.design_butterworth_lowpass(4, cutoff, 60.0)


def test_filtfilt_preserves_constant(lp):
    out = dsp.filtfilt(lp, TimeSeries(0, 60, np.full(2000, 42.0)))
    np.testing.assert_allclose(out.values, 42.0, atol=1e-9)


def test_filtfilt_too_short(lp):
    with pytest.raises(TooShort):
        dsp.filtfilt(lp, TimeSeries(0, 60, np.ones(12)))


def test_filtfilt_period_mismatch(lp):
    with pytest.raises(Misaligned):
        dsp.filtfilt(lp, TimeSeries(0, 30, np.ones(1000)))


def test_passband_sinusoid_amplitude_and_zero_phase():
    ts = sine_series(0.05)
    out = dsp.lowpass(ts, 0.33)
    mid = slice(len(ts) // 4, 3 * len(ts) // 4)
    amp = np.max(np.abs(out.values[mid]))
    assert amp == pytest.approx(1.0, rel=0.01)
    # zero phase: peak positions unchanged
    lag = dsp.best_lag(ts.slice_epochs(DAY, 6 * DAY), out.slice_epochs(DAY, 6 * DAY), 3600)
    assert lag == 0.0


def test_stopband_sinusoid_suppressed():
    out = dsp.lowpass(sine_series(3.0), 0.33)
    mid = out.values[len(out) // 4: 3 * len(out) // 4]
    assert np.max(np.abs(mid)) <= 0.02


def test_complementary_split_separates_bands():
    slow, fast = sine_series(0.04, amp=10.0), sine_series(5.0, amp=2.0)
    low, high = dsp.complementary_split(slow + fast, 0.33)
    mid = slice(len(slow) // 4, 3 * len(slow) // 4)
    assert np.max(np.abs(low.values[mid] - slow.values[mid])) <= 0.02 * 10.0
    assert np.max(np.abs(high.values[mid] - fast.values[mid])) <= 0.02 * 2.0
    np.testing.assert_allclose(low.values + high.values, (slow + fast).values, rtol=0, atol=1e-10)


def test_shift_zero_is_identity():
    ts = sine_series(0.1, days=1)
    out = dsp.shift_series(ts, 0.0)
    np.testing.assert_array_equal(out.values, ts.values)
    assert out.start_epoch == ts.start_epoch


def test_shift_two_samples():
    ts = TimeSeries(0, 60, np.arange(10.0))
    out = dsp.shift_series(ts, 120.0)
    # output at t is the input at t - 120
    assert out.start_epoch == 120.0
    np.testing.assert_array_equal(out.values, np.arange(8.0))


def test_shift_negative():
    ts = TimeSeries(0, 60, np.arange(10.0))
    out = dsp.shift_series(ts, -180.0)
    assert out.start_epoch == 0.0
    np.testing.assert_array_equal(out.values, np.arange(3.0, 10.0))


def test_fractional_shift_on_ramp():
    ts = TimeSeries(0, 60, np.arange(0, 6000, 60.0))
    out = dsp.shift_series(ts, 90.0)
    np.testing.assert_allclose(out.values, out.epochs - 90.0)


def test_shift_beyond_duration():
    with pytest.raises(InvalidShift):
        dsp.shift_series(TimeSeries(0, 60, np.arange(10.0)), 600.0)


def test_derivative_of_ramp():
    ts = TimeSeries(0, 60, 3.0 * np.arange(0, 600, 60.0))
    np.testing.assert_allclose(dsp.time_derivative(ts).values, 3.0)
    np.testing.assert_allclose(dsp.time_derivative(TimeSeries(0, 60, [0.0, 6.0])).values, [0.1, 0.1])
    with pytest.raises(TooShort):
        dsp.time_derivative(TimeSeries(0, 60, [1.0]))


@pytest.fixture(scope="module")
def noise():
    rng = np.random.default_rng(3)
    return TimeSeries(0, 60, np.convolve(rng.normal(size=3000), np.ones(15) / 15, "same"))


def test_best_lag_recovers_shift(noise):
    assert dsp.best_lag(noise, dsp.shift_series(noise, 300.0), 1800) == 300.0
    assert dsp.best_lag(noise, dsp.shift_series(noise, -240.0), 1800) == -240.0


def test_best_lag_self(noise):
    assert dsp.best_lag(noise, noise, 600) == 0.0


def test_best_lag_negated_matches_brute_force(noise):
    neg = noise.replace(values=-noise.values)
    lag = dsp.best_lag(noise, neg, 600)
    a = noise.values
    best, arg = -np.inf, None
    for k in range(-10, 11):
        x = a[max(0, -k):len(a) - max(0, k)]
        y = -a[max(0, k):len(a) - max(0, -k)]
        c = np.corrcoef(x, y)[0, 1]
        if c > best + 1e-12:
            best, arg = c, k
    assert lag == arg * 60.0


def test_best_lag_degenerate():
    flat = TimeSeries(0, 60, np.ones(100))
    with pytest.raises(DegenerateSignal):
        dsp.best_lag(flat, flat, 600)


def test_best_lag_window_too_large(noise):
    with pytest.raises(InvalidArgument):
        dsp.best_lag(noise, noise, 1e9)
