import io
import json
from datetime import datetime, timedelta

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from htmstream import bench, synth
from htmstream.bench import AnomalyWindow, ApplicationProfile, PROFILES
from htmstream.ingest import PipelineConfig

T0 = datetime(2020, 1, 1)
STANDARD = PROFILES["standard"]

# logistic(5 - 7 * relpos) at 0, 1 and 0.5, from mpmath at 40 digits
SIG_START = 0.99330714907571514444
SIG_END = 0.11920292202211755594
SIG_MID = 0.81757447619364365961


def ts(minutes):
    return T0 + timedelta(minutes=minutes)


def window(a, b, stream="s"):
    return AnomalyWindow(stream, ts(a), ts(b))


def test_sigmoid_anchors():
    assert bench.scaled_sigmoid(0.0) == pytest.approx(SIG_START, rel=1e-15)
    assert bench.scaled_sigmoid(1.0) == pytest.approx(SIG_END, rel=1e-15)
    assert bench.scaled_sigmoid(0.5) == pytest.approx(SIG_MID, rel=1e-15)


def test_detection_at_window_start_earns_full_credit():
    sc = bench.score_stream([ts(100)], [window(100, 200)], STANDARD)
    assert sc.raw == pytest.approx(SIG_START)
    assert (sc.tp, sc.fp, sc.fn) == (1, 0, 0)


def test_only_first_detection_in_window_counts():
    sc = bench.score_stream([ts(150), ts(160), ts(199)], [window(100, 200)], STANDARD)
    assert sc.raw == pytest.approx(SIG_MID)
    assert sc.tp == 1 and sc.fp == 0


def test_no_detections_costs_every_window():
    windows = [window(0, 10), window(20, 30), window(40, 50)]
    sc = bench.score_stream([], windows, STANDARD)
    assert sc.raw == 3 * STANDARD.fn_weight
    assert sc.fn == 3


def test_detection_outside_windows_costs_fp_weight():
    sc = bench.score_stream([ts(5000)], [], STANDARD)
    assert sc.raw == STANDARD.fp_weight
    assert sc.fp == 1


def test_window_edges_are_inside():
    w = window(100, 200)
    assert bench.score_stream([ts(200)], [w], STANDARD).raw == pytest.approx(SIG_END)
    assert bench.score_stream([ts(99)], [w], STANDARD).fp == 1


def test_unsorted_detections_rejected():
    with pytest.raises(ValueError):
        bench.score_stream([ts(2), ts(1)], [], STANDARD)


def test_overlapping_windows_rejected():
    with pytest.raises(ValueError):
        bench.score_stream([], [window(0, 10), window(5, 20)], STANDARD)


def test_window_and_profile_validation():
    with pytest.raises(ValueError):
        window(10, 10)
    with pytest.raises(ValueError):
        ApplicationProfile("bad", 1.0, 0.1, -1.0)
    with pytest.raises(ValueError):
        ApplicationProfile("bad", 0.0, -0.1, -1.0)


def test_profiles():
    assert (PROFILES["standard"].fp_weight, PROFILES["standard"].fn_weight) == (-0.11, -1.0)
    assert PROFILES["reward_low_fp"].fp_weight < PROFILES["standard"].fp_weight
    assert PROFILES["reward_low_fn"].fn_weight < PROFILES["standard"].fn_weight


def test_normalize_corpus():
    assert bench.normalize_corpus(7.0, 7.0, -3.0) == 100.0
    assert bench.normalize_corpus(-3.0, 7.0, -3.0) == 0.0
    assert bench.normalize_corpus(2.0, 7.0, -3.0) == 50.0
    with pytest.raises(ValueError):
        bench.normalize_corpus(0.0, 1.0, 1.0)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(0, 2000), max_size=30), st.integers(0, 2000))
def test_extra_false_positive_strictly_lowers_score(minutes, extra):
    windows = [window(300, 400), window(900, 1000)]
    inside = any(w.start <= ts(extra) <= w.end for w in windows)
    if inside:
        extra = 2500
    base = sorted(ts(m) for m in minutes)
    more = sorted(base + [ts(extra)])
    for prof in PROFILES.values():
        assert bench.score_stream(more, windows, prof).raw < bench.score_stream(base, windows, prof).raw


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 100), st.integers(0, 100))
def test_earlier_detection_never_scores_less(a, b):
    early, late = sorted((a, b))
    w = [window(1000, 1100)]
    s_early = bench.score_stream([ts(1000 + early)], w, STANDARD).raw
    s_late = bench.score_stream([ts(1000 + late)], w, STANDARD).raw
    assert s_early >= s_late


# -- baselines -----------------------------------------------------------------

def test_sliding_threshold_constant_stream_is_silent():
    assert bench.baseline_sliding_threshold([5.0] * 500) == []


def test_sliding_threshold_finds_single_spike():
    x = np.full(600, 10.0)
    x[400] = 20.0
    assert bench.baseline_sliding_threshold(x) == [400]


def test_sliding_threshold_blind_to_double_spike():
    # spikes every fifth record are normal; a pair of adjacent spikes is not
    x = np.full(1000, 10.0)
    x[4::5] = 30.0
    x[701] = 30.0
    flagged = bench.baseline_sliding_threshold(x)
    assert 701 not in flagged and 704 not in flagged


def test_sliding_threshold_blind_to_rhythm_change():
    records, windows = synth.generate("temperature", 0)
    flagged = bench.baseline_sliding_threshold([r.value for r in records])
    (start, end), = windows
    assert not any(start <= records[i].timestamp <= end for i in flagged)


def test_sliding_threshold_window_parameters():
    x = np.zeros(300)
    x[250] = 1.0
    assert bench.baseline_sliding_threshold(x, window=50, c=3.0) == [250]
    assert bench.baseline_sliding_threshold(x[:250]) == []


def test_random_baseline():
    assert bench.baseline_random(1000, rate=0.0, seed=1) == []
    assert bench.baseline_random(50, rate=1.0, seed=1) == list(range(50))
    flags = bench.baseline_random(10_000, rate=0.01, seed=7)
    assert 70 <= len(flags) <= 130
    assert flags == bench.baseline_random(10_000, rate=0.01, seed=7)
    assert flags != bench.baseline_random(10_000, rate=0.01, seed=8)
    with pytest.raises(ValueError):
        bench.baseline_random(10, rate=1.5)


def test_random_baseline_differs_between_streams():
    a = bench.baseline_random(4000, seed=bench.stream_seed(42, "a"))
    b = bench.baseline_random(4000, seed=bench.stream_seed(42, "b"))
    assert a != b


# -- labels and corpus runs ----------------------------------------------------------

def test_labels_round_trip(tmp_path):
    raw = {"b": [["2020-01-01 00:10:00", "2020-01-01 00:20:00"]],
           "a": [["2020-01-02 00:00:00", "2020-01-02 01:00:00"],
                 ["2020-01-01 00:00:00", "2020-01-01 01:00:00"]]}
    path = tmp_path / "labels.json"
    bench.dump_labels(raw, path)
    loaded = bench.load_labels(path)
    assert [w.start for w in loaded["a"]] == [datetime(2020, 1, 1), datetime(2020, 1, 2)]
    assert list(json.loads(path.read_text())) == ["a", "b"]


def test_overlapping_labels_rejected(tmp_path):
    path = tmp_path / "labels.json"
    path.write_text(json.dumps({"s": [["2020-01-01 00:00", "2020-01-01 02:00"],
                                      ["2020-01-01 01:00", "2020-01-01 03:00"]]}))
    with pytest.raises(ValueError):
        bench.load_labels(path)


@pytest.fixture(scope="module")
def small_corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    labels = {}
    for name, seed in (("level_shift", 1), ("noisy_spikes", 2)):
        records, windows = synth.generate(name, seed, 1500)
        with open(out / f"{name}.csv", "w") as fh:
            fh.write("timestamp,value\n")
            for r in records:
                fh.write(f"{r.timestamp.isoformat(sep=' ')},{r.value!r}\n")
        labels[name] = [[str(a), str(b)] for a, b in windows]
    bench.dump_labels(labels, out / "labels.json")
    return out


def test_perfect_and_null_anchor_the_scale(small_corpus):
    labels = bench.load_labels(small_corpus / "labels.json")
    reports = bench.run_corpus(small_corpus, labels, ["perfect", "null"], list(PROFILES))
    for rep in reports:
        expected = 100.0 if rep.detector == "perfect" else 0.0
        assert rep.normalized == pytest.approx(expected)
    perfect = [r for r in reports if r.detector == "perfect"][0]
    assert (perfect.tp, perfect.fp, perfect.fn) == (2, 0, 0)


def test_parallel_run_matches_serial(small_corpus):
    labels = bench.load_labels(small_corpus / "labels.json")
    dets = ["sliding_threshold", "random"]
    serial = bench.run_corpus(small_corpus, labels, dets, ["standard"], seed=3)
    parallel = bench.run_corpus(small_corpus, labels, dets, ["standard"], seed=3, jobs=2)
    assert [(r.detector, r.raw, r.tp, r.fp) for r in serial] == \
           [(r.detector, r.raw, r.tp, r.fp) for r in parallel]


def test_probation_detections_never_scored(tmp_path):
    # a spike inside the probationary prefix must not change the outcome
    rng = np.random.default_rng(5)
    values = 10 + rng.normal(0, 0.1, 2000)
    values[1500] = 30.0
    labels = {"s": [[str(ts(5 * 1480)), str(ts(5 * 1520))]]}
    results = []
    for spike_at in (None, 20):
        v = values.copy()
        if spike_at is not None:
            v[spike_at] = 50.0
        d = tmp_path / f"c{spike_at}"
        d.mkdir()
        with open(d / "s.csv", "w") as fh:
            fh.write("timestamp,value\n")
            for i, x in enumerate(v):
                fh.write(f"{ts(5 * i).isoformat(sep=' ')},{float(x)!r}\n")
        bench.dump_labels(labels, d / "labels.json")
        rep, = bench.run_corpus(d, bench.load_labels(d / "labels.json"),
                                ["sliding_threshold"], ["standard"])
        results.append((rep.raw, rep.tp, rep.fp, rep.fn))
    assert results[0] == results[1]
    assert results[0][1] == 1


def test_unknown_detector_and_empty_corpus(tmp_path):
    with pytest.raises(KeyError):
        bench.run_corpus(tmp_path, {}, ["oracle"])
    with pytest.raises(FileNotFoundError):
        bench.run_corpus(tmp_path, {}, ["null"])


def test_report_table_and_csv():
    rep = bench.ScoreReport("htm", "standard", raw=-1.5, normalized=42.25, tp=3, fp=1, fn=2)
    table = bench.format_table([rep])
    header, row = table.splitlines()
    assert header.split() == list(bench.REPORT_HEADER)
    assert row.split() == ["htm", "standard", "42.2", "-1.5000", "3", "1", "2"]
    buf = io.StringIO()
    bench.write_report_csv([rep], buf)
    assert buf.getvalue().splitlines()[1] == "htm,standard,42.2,-1.5000,3,1,2"


def test_htm_detector_uses_pipeline_flags():
    records, _ = synth.generate("level_shift", 3, 3000)
    idx = bench.detect_indices("htm", records, [], PipelineConfig(), 0)
    shift = int(0.6 * 3000)
    assert idx and shift <= idx[0] <= shift + 10
