import dataclasses
import io
import math
from datetime import datetime, timedelta

import numpy as np
import pytest

from htmstream import synth
from htmstream.ingest import (
    OUTPUT_HEADER,
    PipelineConfig,
    Record,
    StreamError,
    StreamStats,
    load_csv,
    outputs_to_csv,
    read_csv,
    run_multi,
    run_stream,
    write_combined,
)
from htmstream.multi import MultiConfig

T0 = datetime(2021, 5, 1)


def cyclic_records(n, period=12, start=T0, anomaly_at=(), span=1):
    vals = [float((i % period) * 10) for i in range(n)]
    rng = np.random.default_rng(3)
    for a in anomaly_at:
        for j in range(a, min(n, a + span)):
            vals[j] = float(rng.uniform(500, 900))
    return [Record(start + timedelta(minutes=5 * i), v) for i, v in enumerate(vals)]


def test_empty_stream():
    assert list(run_stream([], PipelineConfig())) == []


def test_row_count_and_probation():
    recs = cyclic_records(400)
    outs = list(run_stream(recs, PipelineConfig()))
    assert len(outs) == 400
    head = math.ceil(0.15 * 400)
    assert not any(o.flag for o in outs[:head])
    assert all(o.likelihood == 0.5 for o in outs[:head])


def test_probation_capped_for_long_streams():
    cfg = PipelineConfig()
    assert cfg.probation_length(100_000) == 750
    assert cfg.probation_length(1000) == 150
    assert cfg.probation_length(None) == 750


def test_deterministic_bytes():
    recs = cyclic_records(300, anomaly_at=[250])
    a = outputs_to_csv(run_stream(recs, PipelineConfig()))
    b = outputs_to_csv(run_stream(recs, PipelineConfig()))
    assert a == b
    assert a.splitlines()[0] == ",".join(OUTPUT_HEADER)


def test_seed_changes_model():
    recs = cyclic_records(200)
    a = outputs_to_csv(run_stream(recs, PipelineConfig(seed=1)))
    b = outputs_to_csv(run_stream(recs, PipelineConfig(seed=2)))
    assert a != b


def test_prefix_runs_match_full_run():
    recs, _ = synth.generate("noisy_spikes", 4, 600)
    full = list(run_stream(recs, PipelineConfig()))
    for cut in (1, 77, 301, 599):
        part = list(run_stream(recs[:cut], PipelineConfig(), stream_length=len(recs)))
        assert part == full[:cut]


def test_csv_reader_skips_bad_rows():
    text = "timestamp,value\n2020-01-01 00:00:00,1.0\nbad,row\n2020-01-01 00:05:00,nan\n" \
           "2020-01-01 00:10:00,2.5\n"
    stats = StreamStats()
    recs = list(read_csv(io.StringIO(text), stats=stats))
    assert [r.value for r in recs] == [1.0, 2.5]
    assert stats.skipped_malformed == 2
    with pytest.raises(StreamError):
        list(read_csv(io.StringIO(text), strict=True))


def test_csv_reader_requires_header():
    with pytest.raises(StreamError):
        list(read_csv(io.StringIO("a,b\n1,2\n")))
    assert list(read_csv(io.StringIO(""))) == []


def test_out_of_order_records_skipped():
    recs = cyclic_records(30)
    recs.insert(20, Record(T0 - timedelta(days=1), 5.0))
    stats = StreamStats()
    outs = list(run_stream(recs, PipelineConfig(), stats=stats))
    assert len(outs) == 30 and stats.skipped_out_of_order == 1
    strict = dataclasses.replace(PipelineConfig(), strict=True)
    with pytest.raises(StreamError):
        list(run_stream(recs, strict))


def test_load_csv_round_trip(tmp_path):
    recs = cyclic_records(20)
    path = tmp_path / "s.csv"
    path.write_text("timestamp,value\n" + "".join(f"{r.timestamp},{r.value}\n" for r in recs))
    assert load_csv(path) == recs


def test_config_round_trip_and_validation(tmp_path):
    cfg = PipelineConfig(seed=9).with_epsilon(1e-3)
    again = PipelineConfig.from_dict(cfg.to_dict())
    assert again == cfg
    with pytest.raises(ValueError):
        PipelineConfig.from_dict({"tm": {"bogus": 1}})
    with pytest.raises(ValueError):
        PipelineConfig.from_dict({"bogus": 1})
    with pytest.raises(ValueError):
        PipelineConfig(probation_fraction=1.0)


def test_auto_resolution_frozen_after_probation():
    from htmstream.ingest import Detector
    recs = cyclic_records(200)
    det = Detector(PipelineConfig(), probation=30)
    for r in recs[:31]:
        det.process(r)
    res = det.resolution
    det.process(Record(recs[-1].timestamp + timedelta(days=1), 1e6))
    assert det.resolution == res == pytest.approx(110 / 130)


# -- multi-stream ----------------------------------------------------------------

POINT = MultiConfig(sigma=1e-3, kernel_span=1)


def test_single_stream_reduces_to_single_model():
    recs, _ = synth.generate("level_shift", 5, 3000)
    cfg = dataclasses.replace(PipelineConfig(), multi=POINT)
    single = list(run_stream(recs, cfg))
    combined = list(run_multi([recs], cfg))
    assert [r.flag for r in combined] == [o.flag for o in single]
    assert [r.likelihood for r in combined] == [o.likelihood for o in single]
    assert any(r.flag for r in combined)


def test_missing_timestamp_padded_neutral():
    a = cyclic_records(50)
    b = [r for i, r in enumerate(cyclic_records(50)) if i != 30]
    rows = list(run_multi([a, b], PipelineConfig()))
    assert len(rows) == 50
    assert rows[30].q_values[1] == 0.5
    assert rows[31].q_values[1] != 0.5 or rows[31].q_values[0] == 0.5


def test_coincident_sustained_anomalies_fire():
    a = cyclic_records(1200, anomaly_at=[1000], span=40)
    b = cyclic_records(1200, period=8, anomaly_at=[1004], span=40)
    rows = list(run_multi([a, b], PipelineConfig()))
    fired = [i for i, r in enumerate(rows) if r.flag]
    assert fired and 1000 <= fired[0] <= 1044


def test_run_multi_validation():
    with pytest.raises(ValueError):
        list(run_multi([], PipelineConfig()))
    with pytest.raises(StreamError):
        list(run_multi([cyclic_records(5), []], PipelineConfig()))
    late = cyclic_records(5, start=T0 + timedelta(days=30))
    with pytest.raises(StreamError):
        list(run_multi([cyclic_records(5), late], PipelineConfig()))


def test_combined_csv_layout():
    buf = io.StringIO()
    n = write_combined(run_multi([cyclic_records(10)] * 2, PipelineConfig()), buf, 2)
    lines = buf.getvalue().splitlines()
    assert n == 10 and len(lines) == 11
    assert lines[0] == "timestamp,q_0,q_1,smoothed_0,smoothed_1,likelihood,flag"
