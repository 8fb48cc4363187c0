# Reading observatory minute files and Kp, then cleaning the scalar series.
from pathlib import Path

import numpy as np

from ersm import ingest

FIXTURES = Path(__file__).resolve().parent.parent / "tests" / "fixtures"

# One day of Fredericksburg data in IAGA-2002 layout
rec = ingest.read_iaga2002(FIXTURES / "frd20230406vmin.min")
print(rec.iaga_code, rec.latitude_deg, rec.longitude_deg, rec.elevation_m, rec.reported)
f = rec.components["F"]
print("samples:", len(f), "period:", f.period_s, "s")

# The same day with two 5-minute blocks of 99999 sentinels
gappy = ingest.read_iaga2002(FIXTURES / "frd20230406vmin_gaps.min")
mag = ingest.scalar_magnitude(gappy)
print("gap samples:", int(mag.gap_mask.sum()))

# Spikes are judged against an 11-sample rolling median; gaps are filled linearly
spiky = mag.replace(values=np.where(np.arange(len(mag)) == 300, mag.values + 2000, mag.values),
                    gap_mask=mag.gap_mask)
cleaned, stats = ingest.clean_series(spiky, spike_threshold_nT=100.0, return_stats=True)
print(stats)
print("still NaN after cleaning:", int(np.isnan(cleaned.values).sum()))

# Kp is three-hourly; kp_at holds the latest value not after the query time
kp = ingest.read_kp(FIXTURES / "kp_sample.txt")
print("Kp entries:", len(kp))
noon = f.start_epoch + 12 * 3600
print("Kp at noon:", ingest.kp_at(kp, noon))
