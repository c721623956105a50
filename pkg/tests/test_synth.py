import numpy as np
import pytest

from htmstream import synth


@pytest.mark.parametrize("name", sorted(synth.GENERATORS))
def test_generators_are_deterministic(name):
    a, wa = synth.generate(name, 9, 1000)
    b, wb = synth.generate(name, 9, 1000)
    c, _ = synth.generate(name, 10, 1000)
    assert a == b and wa == wb
    assert len(a) == 1000
    assert [r.value for r in a] != [r.value for r in c]


def test_timestamps_are_regular():
    records, _ = synth.generate("spike", 0, 100)
    gaps = {b.timestamp - a.timestamp for a, b in zip(records, records[1:])}
    assert gaps == {synth.STEP}


def test_windows_cover_anomalies_and_span_a_tenth():
    records, anomalies = synth.level_shift(0, 4000)
    (start, end), = synth.windows_for(records, anomalies)
    assert start <= records[anomalies[0]].timestamp <= end
    assert (end - start) / synth.STEP == 400


def test_windows_split_between_anomalies():
    records, _ = synth.generate("noise", 0, 1000)
    windows = synth.windows_for(records, [200, 700])
    assert [(e - s) / synth.STEP for s, e in windows] == [50, 50]
    assert synth.windows_for(records, []) == []


def test_cyclic_repeats_exactly():
    records, windows = synth.cyclic(1, 240, period=24)
    v = np.array([r.value for r in records])
    assert np.array_equal(v[:24], v[24:48]) and windows == []


def test_corpus_members():
    members = synth.corpus_members(42)
    assert len(members) == len(synth.CORPUS) * synth.CORPUS_SEEDS
    assert len({name for name, _, _ in members}) == len(members)
    assert ("spike_2", "spike", 44) in members


def test_unknown_generator():
    with pytest.raises(KeyError):
        synth.generate("nope", 0)
