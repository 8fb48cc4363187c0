# The 17-day block protocol and the bias/lag adjustments for external baselines.
import numpy as np

from ersm import dsp, harness, synthetic
from ersm.ingest import StationRecord

ers_st = StationRecord("BOU", 40.137, -105.238, 1682)
lrs_st = StationRecord("FRD", 38.21, -77.373, 69)
start = 1680739200.0
day = 86400.0

sched = harness.make_schedule(start, start + 374 * day)
print("374 days ->", sched.n_blocks, "blocks")

# Two blocks of synthetic data, one local day missing in the second evaluation week
ers, lrs = synthetic.station_pair(start, 34, ers_st.longitude_deg, lrs_st.longitude_deg,
                                  period_s=300.0, seed=9, lrs_scale=1.2)
sched = harness.make_schedule(start, start + 34 * day, missing_days=[start + 30 * day])
print("eval days per block:", [len(b.eval_days) for b in sched.blocks])

kp = synthetic.kp_series(start, 34, seed=1, storm_days=(12, 29))
opts = {"knn": {"k_grid": [5, 10, 20], "alpha_grid": [1, 5, 20], "hops": 2}}
rep = harness.evaluate_pair(ers_st, lrs_st, ers, lrs, sched, models=("linear", "knn"), kp=kp, seed=4,
                            model_options=opts)
print(f"separation {rep.separation_km:.0f} km")
for model, strata in rep.summary().items():
    for stratum, s in strata.items():
        print(f"{model:6s} {stratum:8s} median {s['median']:.2f} nT  IQR [{s['q1']:.2f}, {s['q3']:.2f}]  "
              f"days {s['n_days']}")
print(rep.to_csv().splitlines()[:4])

# An external prediction that is late by 20 minutes and biased by 8 nT
truth = lrs.slice_epochs(start + 10 * day, start + 17 * day)
external = dsp.shift_series(truth, 1200.0) + 8.0
lagged, lag = harness.lag_adjust(external, truth, 3600)
common = truth.slice_epochs(lagged.start_epoch, lagged.end_epoch + 1)
adjusted, bias = harness.mean_adjust(lagged, common)
print(f"lag {lag:.0f} s, bias {bias:.2f} nT, residual RMSE {harness.rmse(adjusted, common):.2e} nT")

# A vector prediction becomes a scalar disturbance once the core field is added back
core = np.array([[20000.0, -3000.0, 45000.0]])
difi = np.array([[0.0, 100.0, 0.0]])
print("core re-addition:", harness.core_readdition(difi, core)[0].round(4), "nT")
