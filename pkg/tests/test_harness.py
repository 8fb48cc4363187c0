import numpy as np
import pytest

from ersm import dsp, harness, longnorm, synthetic
from ersm.errors import EmptySeries, Misaligned, ParseError, SpanTooShort, TooShort
from ersm.igrf import FieldVector
from ersm.ingest import StationRecord
from ersm.regressors import fit_linear
from ersm.timeseries import TimeSeries

from helpers import APR6, DAY

ERS = StationRecord("BOU", 40.137, -105.238, 1682)
LRS = StationRecord("FRD", 38.21, -77.373, 69)


# schedule --------------------------------------------------------------------

@pytest.mark.parametrize("days,blocks,discarded", [(374, 22, 0), (17, 1, 0), (20, 1, 3), (40, 2, 6)])
def test_block_counts(days, blocks, discarded):
    s = harness.make_schedule(APR6, APR6 + days * DAY)
    assert s.n_blocks == blocks
    assert s.discarded_days == discarded


def test_single_block_layout():
    (b,) = harness.make_schedule(APR6, APR6 + 17 * DAY).blocks
    assert len(b.train_days) == 10 and len(b.eval_days) == 7
    assert b.train_days[0] == APR6 and b.eval_days[0] == APR6 + 10 * DAY
    assert b.train_span == (APR6, APR6 + 10 * DAY)
    assert b.eval_span == (APR6 + 10 * DAY, APR6 + 17 * DAY)


def test_span_too_short():
    with pytest.raises(SpanTooShort):
        harness.make_schedule(APR6, APR6 + 16.5 * DAY)


def test_blocks_contiguous():
    s = harness.make_schedule(APR6, APR6 + 374 * DAY)
    for a, b in zip(s.blocks, s.blocks[1:]):
        assert b.start_epoch == a.stop_epoch
        assert a.train_span[1] == a.eval_span[0]


def test_missing_eval_day_shrinks_eval():
    s = harness.make_schedule(APR6, APR6 + 17 * DAY, missing_days=[APR6 + 12.5 * DAY])
    (b,) = s.blocks
    assert len(b.eval_days) == 6 and APR6 + 12 * DAY not in b.eval_days
    assert len(b.train_days) == 10


def test_block_without_training_is_dropped():
    missing = [APR6 + 17 * DAY + d * DAY for d in range(10)]
    s = harness.make_schedule(APR6, APR6 + 34 * DAY, missing_days=missing)
    assert [b.index for b in s.blocks] == [0]
    assert s.dropped == ((1, "no training days"),)


def test_block_without_eval_is_dropped():
    missing = [APR6 + d * DAY for d in range(10, 17)]
    s = harness.make_schedule(APR6, APR6 + 17 * DAY, missing_days=missing)
    assert s.n_blocks == 0 and s.dropped[0][0] == 0


def test_missing_days_detects_empty_day():
    v = np.ones(3 * 1440)
    v[1440:2880] = np.nan
    ts = TimeSeries(APR6, 60, v)
    assert harness.missing_days([ts], APR6, 3) == [APR6 + DAY]
    assert harness.missing_days([ts.slice_epochs(APR6, APR6 + DAY)], APR6, 2) == [APR6 + DAY]


# scoring and adjustments -------------------------------------------------------

def test_rmse_examples():
    truth = TimeSeries(0, 60, [1.0, 2.0])
    assert harness.rmse(truth, truth) == 0.0
    assert harness.rmse(truth + 5.0, truth) == pytest.approx(5.0)
    assert harness.rmse(TimeSeries(0, 60, [3.0, 4.0]), TimeSeries(0, 60, [0.0, 0.0])) == pytest.approx(3.5355, abs=1e-4)


def test_rmse_errors():
    with pytest.raises(Misaligned):
        harness.rmse(TimeSeries(0, 60, [1.0]), TimeSeries(60, 60, [1.0]))
    with pytest.raises(EmptySeries):
        harness.rmse(TimeSeries(0, 60, []), TimeSeries(0, 60, []))


def test_mean_adjust_examples():
    truth = TimeSeries(0, 60, np.arange(5.0))
    adj, b = harness.mean_adjust(truth + 10.0, truth)
    assert b == pytest.approx(10.0)
    np.testing.assert_allclose(adj.values, truth.values)
    assert harness.mean_adjust(truth, truth)[1] == 0.0
    adj, b = harness.mean_adjust(TimeSeries(0, 60, [1.0, 2, 3]), TimeSeries(0, 60, [0.0, 0, 0]))
    assert b == 2.0
    np.testing.assert_array_equal(adj.values, [-1.0, 0.0, 1.0])


def smooth_noise(n=4000, seed=3):
    rng = np.random.default_rng(seed)
    return TimeSeries(APR6, 60, np.convolve(rng.normal(size=n), np.ones(30) / 30, "same") * 20)


def test_lag_adjust_round_trip():
    truth = smooth_noise()
    pred = dsp.shift_series(truth, 600.0)
    adj, lag = harness.lag_adjust(pred, truth, 1800)
    assert lag == 600.0
    ref = truth.slice_epochs(adj.start_epoch, adj.end_epoch + 1)
    np.testing.assert_allclose(adj.values, ref.values, atol=1e-9)


def test_lag_adjust_identity():
    truth = smooth_noise()
    adj, lag = harness.lag_adjust(truth, truth, 600)
    assert lag == 0.0
    np.testing.assert_array_equal(adj.values, truth.values)


@pytest.mark.parametrize("shift", [60.0, 300.0, 1260.0, 3600.0])
def test_lag_then_mean_never_worse(shift):
    truth = smooth_noise(6000)
    pred = dsp.shift_series(truth, shift) + 7.0
    lagged, _ = harness.lag_adjust(pred, truth, 4000)
    lag_truth = truth.slice_epochs(lagged.start_epoch, lagged.end_epoch + 1)
    common_pred = pred.slice_epochs(lagged.start_epoch, lagged.end_epoch + 1)
    common_truth = truth.slice_epochs(common_pred.start_epoch, common_pred.end_epoch + 1)
    both = harness.rmse(harness.mean_adjust(lagged, lag_truth)[0], lag_truth)
    mean_only = harness.rmse(harness.mean_adjust(common_pred, common_truth)[0], common_truth)
    assert both <= mean_only + 1e-9


def test_core_readdition_examples():
    core = FieldVector(np.array(20000.0), np.array(0.0), np.array(-45825.75))
    c = core.as_array()
    assert harness.core_readdition(np.zeros((4, 3)), core) == pytest.approx(np.zeros(4))
    unit = c / np.linalg.norm(c)
    assert harness.core_readdition(37.5 * unit, core)[0] == pytest.approx(37.5, abs=1e-8)
    perp = np.array([[0.0, 100.0, 0.0]])
    big = np.array([[0.0, 0.0, 50000.0]])
    assert harness.core_readdition(perp, big)[0] == pytest.approx(np.hypot(50000, 100) - 50000, abs=1e-9)
    assert harness.core_readdition(perp, big)[0] == pytest.approx(0.1, abs=1e-3)


def test_core_readdition_series_and_mismatch():
    comps = tuple(TimeSeries(0, 60, v) for v in ([1.0, 2.0], [0.0, 0.0], [0.0, 0.0]))
    out = harness.core_readdition(comps, np.array([[1000.0, 0, 0], [1000.0, 0, 0]]))
    assert isinstance(out, TimeSeries)
    np.testing.assert_allclose(out.values, [1.0, 2.0])
    with pytest.raises(Misaligned):
        harness.core_readdition(np.zeros((3, 3)), np.ones((2, 3)))


def test_baseline_csv_scalar_and_vector():
    s = harness.read_baseline_csv(text="# difi\nepoch_s,b\n0,1.5\n60,2.5\n120,3.5\n")
    assert s.period_s == 60 and list(s.values) == [1.5, 2.5, 3.5]
    v = harness.read_baseline_csv(text="epoch_s,x,y,z\n0,1,2,3\n60,4,5,6\n")
    assert len(v) == 3 and list(v[2].values) == [3.0, 6.0]


@pytest.mark.parametrize("text", ["", "time,b\n0,1\n", "epoch_s,b\n0,zz\n", "epoch_s,a,b\n0,1,2\n"])
def test_baseline_csv_errors(text):
    with pytest.raises(ParseError):
        harness.read_baseline_csv(text=text)


def test_great_circle():
    assert harness.great_circle_km(0, 0, 0, 1) == pytest.approx(2 * np.pi * 6371.0 / 360)
    d = harness.great_circle_km(ERS.latitude_deg, ERS.longitude_deg, LRS.latitude_deg, LRS.longitude_deg)
    assert 2300 < d < 2500


# evaluate_pair -----------------------------------------------------------------

def test_self_pair_linear_is_exact():
    st = StationRecord("AAA", 40.0, -100.0, 0.0)
    ers, _ = synthetic.station_pair(APR6, 17, st.longitude_deg, st.longitude_deg, seed=1)
    sched = harness.make_schedule(APR6, APR6 + 17 * DAY)
    rep = harness.evaluate_pair(st, st, ers, ers, sched, models=("linear",))
    daily = rep.daily_rmse("linear")
    assert daily.size == 7 and np.all(daily < 0.1)


@pytest.fixture(scope="module")
def affine_pair():
    # lrs = 2 * (ers moved onto lrs local time) + 3 + N(0, 1)
    ers_dv, _ = synthetic.station_pair(APR6, 17, ERS.longitude_deg, LRS.longitude_deg, seed=4,
                                       noise_nT=0.0, disturbance_nT=0.0)
    _, offset = longnorm.longitude_offset(ERS, LRS)
    shifted = dsp.shift_series(ers_dv, offset)
    rng = np.random.default_rng(5)
    lrs_dv = shifted.replace(values=2 * shifted.values + 3 + rng.normal(0, 1, len(shifted)))
    return ers_dv, lrs_dv


def test_affine_pair_linear_hits_noise_floor(affine_pair):
    ers_dv, lrs_dv = affine_pair
    sched = harness.make_schedule(APR6, APR6 + 17 * DAY)
    rep = harness.evaluate_pair(ERS, LRS, ers_dv, lrs_dv, sched, models=("linear",))
    daily = rep.daily_rmse("linear")
    assert daily.size == 7
    assert np.all((daily >= 0.8) & (daily <= 1.3)), daily
    m = rep.block_info[0]["models"]["linear"]
    assert m["scale_a"] == pytest.approx(2.0, abs=0.02) and m["offset_b"] == pytest.approx(3.0, abs=0.1)


def test_report_files(affine_pair):
    ers_dv, lrs_dv = affine_pair
    sched = harness.make_schedule(APR6, APR6 + 17 * DAY)
    rep = harness.evaluate_pair(ERS, LRS, ers_dv, lrs_dv, sched, models=("linear",))
    lines = rep.to_csv().splitlines()
    assert lines[0] == "# schema_version: 1"
    assert lines[1] == "date,block,model,stratum,rmse_nT,n_samples"
    assert lines[2].startswith("all,0,linear,all,")
    d = rep.to_dict()
    assert d["station_pair"] == ["BOU", "FRD"] and d["n_blocks"] == 1
    assert d["summary"]["linear"]["all"]["n_days"] == 7
    assert all(r["rmse_nT"] >= 0 for r in rep.rows)


def test_kp_strata_partition():
    st = StationRecord("AAA", 40.0, -100.0, 0.0)
    ers, lrs = synthetic.station_pair(APR6, 17, -100.0, -100.0, seed=2, lrs_scale=1.5)
    kp = synthetic.kp_series(APR6, 17, seed=0, storm_days=(12,))
    sched = harness.make_schedule(APR6, APR6 + 17 * DAY)
    rep = harness.evaluate_pair(st, st, ers, lrs, sched, models=("linear",), kp=kp)
    counts = {s: rep.per_block("linear", s)[0]["n_samples"] for s in harness.STRATA}
    assert counts["kp_lt_4"] + counts["kp_ge_4"] == counts["all"] == 7 * 1440
    assert counts["kp_ge_4"] == 1440
    storm_rows = rep.per_day("linear", "kp_ge_4")
    assert [r["date"] for r in storm_rows] == ["2023-04-18"]


def test_failed_block_is_recorded_and_skipped():
    st = StationRecord("AAA", 40.0, -100.0, 0.0)
    ers, lrs = synthetic.station_pair(APR6, 34, -100.0, -100.0, seed=2)
    calls = []

    def flaky(fm, kp, seed):
        calls.append(seed)
        if len(calls) == 1:
            raise TooShort("not enough rows")
        return fit_linear(fm)

    sched = harness.make_schedule(APR6, APR6 + 34 * DAY)
    rep = harness.evaluate_pair(st, st, ers, lrs, sched, models=("linear",), fitters={"linear": flaky})
    assert rep.blocks == [1]
    assert rep.failed_blocks[0][0] == 0 and "TooShort" in rep.failed_blocks[0][1]


def test_block_without_local_eval_data_fails_cleanly():
    st = StationRecord("AAA", 40.0, -100.0, 0.0)
    ers, lrs = synthetic.station_pair(APR6, 17, -100.0, -100.0, seed=2)
    sched = harness.make_schedule(APR6, APR6 + 17 * DAY)
    rep = harness.evaluate_pair(st, st, ers, lrs.slice_epochs(APR6, APR6 + 10 * DAY), sched, models=("linear",))
    assert not rep.rows
    assert rep.failed_blocks[0][0] == 0 and "NoOverlap" in rep.failed_blocks[0][1]


def test_evaluation_is_deterministic():
    st = StationRecord("AAA", 40.0, -100.0, 0.0)
    ers, lrs = synthetic.station_pair(APR6, 17, -100.0, -96.0, period_s=300.0, seed=7)
    lrs_st = StationRecord("BBB", 40.0, -96.0, 0.0)
    sched = harness.make_schedule(APR6, APR6 + 17 * DAY)
    opts = {"knn": {"k_grid": [5, 10], "alpha_grid": [1, 4], "hops": 1},
            "nn": {"n_members": 2, "epochs": 2}}
    a = harness.evaluate_pair(st, lrs_st, ers, lrs, sched, models=("knn", "nn"), seed=11, model_options=opts)
    b = harness.evaluate_pair(st, lrs_st, ers, lrs, sched, models=("knn", "nn"), seed=11, model_options=opts)
    assert a.to_json() == b.to_json()
    assert a.block_info[0]["seed"] == harness.block_seed(11, 0) != harness.block_seed(11, 1)
