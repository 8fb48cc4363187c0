# Linear, kNN and residual-network corrections trained on ten aligned days.
import time

import numpy as np

from ersm import longnorm, synthetic
from ersm.ingest import StationRecord
from ersm.regressors import build_features, fit_knn, fit_linear, fit_nn, predict

ers_st = StationRecord("BOU", 40.137, -105.238, 1682)
lrs_st = StationRecord("FRD", 38.21, -77.373, 69)
start = 1680739200.0
ers, lrs = synthetic.station_pair(start, 12, ers_st.longitude_deg, lrs_st.longitude_deg,
                                  period_s=300.0, seed=5, lrs_scale=1.3, lrs_offset_nT=4.0)
day = 86400.0
train = build_features(longnorm.align(ers.slice_epochs(start, start + 10 * day),
                                      lrs.slice_epochs(start, start + 10 * day), ers_st, lrs_st))
_, offset = longnorm.longitude_offset(ers_st, lrs_st)
test = build_features(longnorm.align(ers.slice_epochs(start + 10 * day, start + 12 * day),
                                     lrs.slice_epochs(start + 10 * day, start + 12 * day),
                                     ers_st, lrs_st, offset_s=offset))
print("training rows:", len(train), "test rows:", len(test))

lin = fit_linear(train)
print(f"linear: a = {lin.scale_a:.3f}, b = {lin.offset_b:.3f}")

t0 = time.perf_counter()
knn = fit_knn(train, k_grid=[5, 10, 20, 40], alpha_grid=[1, 2, 5, 10, 25, 50], hops=3, seed=1)
print(f"kNN: k = {knn.k}, alpha = {knn.alpha:.2f}, CV RMSE {knn.cv['refined_score']:.3f} nT "
      f"({time.perf_counter() - t0:.1f} s)")

# a small ensemble to keep the demo short; the default is 16 members x 200 epochs
t0 = time.perf_counter()
net = fit_nn(train, seed=1, n_members=4, epochs=20)
print(f"NN: {len(net.members)} members ({time.perf_counter() - t0:.1f} s)")

for name, model in (("linear", lin), ("knn", knn), ("nn", net)):
    err = predict(model, test).values - test.target_nT
    print(f"{name:6s} held-out RMSE {np.sqrt(np.mean(err ** 2)):.3f} nT")
