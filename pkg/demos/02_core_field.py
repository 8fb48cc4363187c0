# Core field from the bundled IGRF table and the temporal scalar left after removing it.
import numpy as np

from ersm import igrf, synthetic
from ersm.ingest import StationRecord, scalar_magnitude

model = igrf.load_default_model()
print("model epochs:", model.epochs[0], "to", model.epochs[-1])

frd = StationRecord("FRD", 38.21, -77.373, 69)
bou = StationRecord("BOU", 40.137, -105.238, 1682)
t = 2023.26
for st in (frd, bou):
    v = igrf.core_field(model, st.latitude_deg, st.longitude_deg, st.elevation_m, t)
    print(f"{st.iaga_code}: N {v.north_nT:9.1f}  E {v.east_nT:8.1f}  D {v.down_nT:9.1f}  |B| {v.magnitude:9.1f} nT")

# A synthetic day whose total field is |B_core| + a known disturbance
start = 1680739200.0
dv, _ = synthetic.station_pair(start, 1, frd.longitude_deg, frd.longitude_deg, seed=0)
rec = synthetic.station_record("FRD", frd.latitude_deg, frd.longitude_deg, frd.elevation_m, dv, model)
temporal = igrf.temporal_scalar(scalar_magnitude(rec), frd, model)

# The synthetic record uses the same hourly core interpolation, so the recovery is exact to rounding
print("max recovery error:", np.max(np.abs(temporal.values - dv.values)), "nT")
print("temporal field range:", temporal.values.min().round(2), temporal.values.max().round(2), "nT")
