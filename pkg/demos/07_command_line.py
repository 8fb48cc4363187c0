# The ersm command line end to end on synthetic observatory files.
import json
import tempfile
from pathlib import Path

from ersm import cli, synthetic

work = Path(tempfile.mkdtemp(prefix="ersm-demo-"))
raw = work / "raw"
raw.mkdir()
start = 1680739200.0
ers, lrs = synthetic.station_pair(start, 17, -105.238, -77.373, seed=2, lrs_scale=1.1)
bou = synthetic.write_daily_files(synthetic.station_record("BOU", 40.137, -105.238, 1682, ers), raw)
frd = synthetic.write_daily_files(synthetic.station_record("FRD", 38.21, -77.373, 69, lrs), raw)
print(len(bou), "BOU files and", len(frd), "FRD files in", raw)

# prepare: clean and core-subtract, one CSV plus provenance sidecar per station
cli.main(["prepare", "--ers-path", *bou, "--lrs-path", *frd, "--output-dir", str(work / "prepared")])
print(json.loads((work / "prepared" / "lrs_FRD.json").read_text()))

# train on the first ten days, then predict the following week
config = work / "run.json"
config.write_text(json.dumps({
    "ers_path": "prepared/ers_BOU.csv", "lrs_path": "prepared/lrs_FRD.csv",
    "train_start": "2023-04-06", "train_end": "2023-04-16", "output_dir": "models",
}))
cli.main(["train", "--config", str(config), "--model", "linear"])
print(json.loads((work / "models" / "train_manifest.json").read_text())["models"])
cli.main(["predict", "--config", str(config), "--model-file", str(work / "models" / "model_linear.json"),
          "--start", "2023-04-16", "--output", str(work / "prediction.csv")])

# evaluate runs the block protocol and writes plot-ready CSVs
cli.main(["evaluate", "--config", str(config), "--model", "linear", "--output-dir", str(work / "eval")])
print(sorted(p.name for p in (work / "eval").iterdir()))
