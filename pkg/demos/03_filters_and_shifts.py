# Zero-phase Butterworth filtering, the complementary band split, sample shifts and lag search.
import numpy as np

from ersm import dsp
from ersm.timeseries import TimeSeries

lp = dsp.design_butterworth_lowpass(4, 0.33, 60.0)
print("sections:", lp.sections.shape)
for f in (0.05, 0.33, 1.0, 3.3):
    print(f"gain at {f:4.2f} cph: {20 * np.log10(abs(lp.response(f)[0])):7.2f} dB")

# Slow Sq-like variation plus a fast oscillation
t = np.arange(0, 3 * 86400, 60.0)
slow = 20 * np.cos(2 * np.pi * t / 86400)
fast = 2 * np.sin(2 * np.pi * 4.0 * t / 3600)
ts = TimeSeries(0.0, 60.0, slow + fast)
low, high = dsp.complementary_split(ts, 0.33)
mid = slice(len(t) // 4, 3 * len(t) // 4)
print("low band vs slow part, max diff:", np.abs(low.values[mid] - slow[mid]).max().round(4))
print("reconstruction error:", np.abs(low.values + high.values - ts.values).max())

# Shifting delays the series: output at t is input at t - offset; the span shrinks
late = dsp.shift_series(low, 1800.0)
print("shifted start:", late.start_epoch, "samples lost:", len(low) - len(late))

# Cross-correlation recovers the delay
print("best lag:", dsp.best_lag(low.slice_epochs(late.start_epoch, late.end_epoch + 1), late, 3600), "s")
