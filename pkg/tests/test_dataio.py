import math
import warnings

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st
from scipy.signal import find_peaks, hilbert

from gadfmacnn.dataio import (TABLE2_GEOMETRY, BearingGeometry, RawRecord, RecordLengthWarning,
                              SplitSpec, SyntheticSpec, compute_fault_frequencies, discover_files,
                              envelope_spectrum, load_xjtu_csv, segment_windows, stratified_split,
                              synth_bearing_signal, window_dataset, write_synthetic_dataset,
                              write_xjtu_csv)
from gadfmacnn.errors import (InsufficientClassSamples, MissingColumn, ParseError,
                              WindowTooLong)


def _record(n, seed=0):
    return RawRecord(np.random.default_rng(seed).standard_normal(n), "horizontal", 25600.0, "mem", 0)


# --- load_xjtu_csv ---------------------------------------------------------

def test_load_full_minute_file(tmp_path):
    h = np.arange(32768) * 0.001
    write_xjtu_csv(tmp_path / "7.csv", h, -h)
    with warnings.catch_warnings():
        warnings.simplefilter("error", RecordLengthWarning)
        rec = load_xjtu_csv(tmp_path / "7.csv", "horizontal")
    assert rec.samples.size == 32768
    assert rec.minute_index == 7
    assert rec.sample_rate == 25600.0
    np.testing.assert_array_equal(rec.samples, h)
    np.testing.assert_array_equal(load_xjtu_csv(tmp_path / "7.csv", "vertical").samples, -h)


def test_load_short_file_warns(tmp_path):
    path = tmp_path / "1.csv"
    rows = ["Horizontal_vibration_signals,Vertical_vibration_signals"]
    rows += [f"{0.01 * i},{-0.01 * i}" for i in range(1000)]
    path.write_text("\n".join(rows) + "\n")
    with pytest.warns(RecordLengthWarning):
        rec = load_xjtu_csv(path, "horizontal")
    assert rec.samples.size == len(rows) - 1 == 1000


def test_load_empty_file(tmp_path):
    (tmp_path / "1.csv").write_text("")
    with pytest.raises(ParseError):
        load_xjtu_csv(tmp_path / "1.csv")


def test_load_bad_cell_reports_row(tmp_path):
    (tmp_path / "1.csv").write_text("Horizontal,Vertical\n1,2\n3,abc\nxyz,4\n")
    with pytest.raises(ParseError, match="row 3"):
        load_xjtu_csv(tmp_path / "1.csv", "horizontal")


def test_load_missing_column(tmp_path):
    (tmp_path / "1.csv").write_text("Horizontal\n1\n2\n")
    with pytest.raises(MissingColumn):
        load_xjtu_csv(tmp_path / "1.csv", "vertical")


def test_sample_rate_is_configured_not_inferred(tmp_path):
    write_xjtu_csv(tmp_path / "1.csv", np.ones(10))
    with pytest.warns(RecordLengthWarning):
        assert load_xjtu_csv(tmp_path / "1.csv", sample_rate=12800.0).sample_rate == 12800.0


# --- segment_windows -------------------------------------------------------

@pytest.mark.parametrize("n,L,stride,expected", [(32768, 1024, 1024, 32), (1024, 1024, 1024, 1),
                                                 (5000, 1024, 512, 8)])
def test_window_counts(n, L, stride, expected):
    assert len(segment_windows(_record(n), L, stride, 0)) == expected == (n - L) // stride + 1


def test_window_too_long():
    with pytest.raises(WindowTooLong):
        segment_windows(_record(100), 1024, 1024, 0)


@given(n=st.integers(2, 3000), L=st.integers(2, 400), stride=st.integers(1, 500))
@settings(max_examples=60, deadline=None)
def test_windows_reassemble_source(n, L, stride):
    if L > n:
        return
    rec = _record(n)
    rebuilt = np.full(n, np.nan)
    for w in segment_windows(rec, L, stride, 1, "x"):
        assert w.values.size == L
        rebuilt[w.record_ref.offset:w.record_ref.offset + L] = w.values
    covered = ~np.isnan(rebuilt)
    np.testing.assert_array_equal(rebuilt[covered], rec.samples[covered])
    n_windows = (n - L) // stride + 1
    expected = (n_windows - 1) * stride + L if stride <= L else n_windows * L
    assert covered.sum() == expected


# --- stratified_split ------------------------------------------------------

def _labeled(counts):
    out = []
    for label, n in enumerate(counts):
        out += segment_windows(_record(4 * n, seed=label), 4, 4, label, f"c{label}")
    return out


def test_split_exact_proportions():
    ws = _labeled([100] * 4)
    tr, va, te = stratified_split(ws, SplitSpec(0.6, 0.2, 0.2, seed=3))
    for label in range(4):
        assert [sum(w.label == label for w in part) for part in (tr, va, te)] == [60, 20, 20]


def test_split_deterministic():
    ws = _labeled([37, 50, 9])
    a = stratified_split(ws, SplitSpec(0.5, 0.25, 0.25, seed=11))
    b = stratified_split(ws, SplitSpec(0.5, 0.25, 0.25, seed=11))
    assert [[id(w) for w in p] for p in a] == [[id(w) for w in p] for p in b]


def test_split_needs_three_per_class():
    with pytest.raises(InsufficientClassSamples):
        stratified_split(_labeled([10, 2]), SplitSpec())


def test_split_spec_validation():
    with pytest.raises(ValueError):
        SplitSpec(0.6, 0.3, 0.2)


@given(counts=st.lists(st.integers(3, 60), min_size=1, max_size=5),
       fr=st.sampled_from([(0.6, 0.2, 0.2), (0.5, 0.25, 0.25), (0.8, 0.1, 0.1), (1 / 3, 1 / 3, 1 / 3)]),
       seed=st.integers(0, 1000))
@settings(max_examples=60, deadline=None)
def test_split_is_partition_with_proportions(counts, fr, seed):
    ws = _labeled(counts)
    parts = stratified_split(ws, SplitSpec(*fr, seed=seed))
    ids = [id(w) for p in parts for w in p]
    assert sorted(ids) == sorted(id(w) for w in ws)
    assert len(set(ids)) == len(ids)
    for label, n in enumerate(counts):
        for part, f in zip(parts, fr):
            k = sum(w.label == label for w in part)
            assert k >= 1
            if min(fr) * n >= 1:
                assert abs(k - f * n) <= 1 + 1e-9


# --- fault frequencies -----------------------------------------------------

def test_table2_fault_frequencies():
    # hand evaluation: d/D = 7.92/34.55 = 0.229233; n/2 = 4
    f = compute_fault_frequencies(TABLE2_GEOMETRY, 1.0)
    assert f["BPFO"] == pytest.approx(4 * (1 - 7.92 / 34.55), rel=1e-12)
    assert f["BPFO"] == pytest.approx(3.083, abs=5e-4)
    assert f["BPFI"] == pytest.approx(4.917, abs=5e-4)
    assert f["FTF"] == pytest.approx(0.5 * (1 - 7.92 / 34.55), rel=1e-12)


def test_fault_frequencies_small_ball_limit():
    f = compute_fault_frequencies(BearingGeometry(9, 0.0, 40.0, 15.0), 30.0)
    assert f["BPFO"] == f["BPFI"] == pytest.approx(9 * 30.0 / 2)


@given(n=st.integers(1, 30), d=st.floats(0.1, 20), D_extra=st.floats(0.1, 50),
       theta=st.floats(0, 45), fr=st.floats(0.1, 200))
def test_bpfo_plus_bpfi(n, d, D_extra, theta, fr):
    f = compute_fault_frequencies(BearingGeometry(n, d, d + D_extra, theta), fr)
    assert f["BPFO"] + f["BPFI"] == pytest.approx(n * fr, rel=1e-12)


# --- synthetic signals -----------------------------------------------------

def test_outer_race_impulse_count():
    spec = SyntheticSpec(fault_class="outer_race", duration_s=1.0, shaft_hz=35.0, snr_db=math.inf, seed=4)
    x = synth_bearing_signal(spec).samples
    env = np.abs(hilbert(x))
    bpfo = compute_fault_frequencies(TABLE2_GEOMETRY, 35.0)["BPFO"]
    peaks, _ = find_peaks(env, height=0.3 * env.max(), distance=int(0.5 * spec.sample_rate / bpfo))
    assert abs(len(peaks) - bpfo) <= 1


def test_healthy_without_noise_is_silent():
    x = synth_bearing_signal(SyntheticSpec(fault_class="healthy", snr_db=math.inf)).samples
    assert x.size == 32768
    assert not x.any()


def test_synthetic_deterministic():
    spec = SyntheticSpec(fault_class="inner_race", seed=9)
    np.testing.assert_array_equal(synth_bearing_signal(spec).samples, synth_bearing_signal(spec).samples)
    other = SyntheticSpec(fault_class="inner_race", seed=10)
    assert not np.array_equal(synth_bearing_signal(spec).samples, synth_bearing_signal(other).samples)


def test_synthetic_spec_invariants():
    with pytest.raises(ValueError):
        SyntheticSpec(sample_rate=5000.0, resonance_hz=3000.0)
    with pytest.raises(ValueError):
        SyntheticSpec(duration_s=0.0)


@given(cls=st.sampled_from(["outer_race", "inner_race", "cage"]), seed=st.integers(0, 10**6),
       shaft=st.floats(10.0, 60.0), snr=st.floats(6.0, 40.0), duration=st.floats(0.5, 2.0))
@settings(max_examples=40, deadline=None)
def test_envelope_peak_at_characteristic_frequency(cls, seed, shaft, snr, duration):
    spec = SyntheticSpec(fault_class=cls, duration_s=duration, shaft_hz=shaft, snr_db=snr, seed=seed)
    key = {"outer_race": "BPFO", "inner_race": "BPFI", "cage": "FTF"}[cls]
    target = compute_fault_frequencies(spec.geometry, shaft)[key]
    assume(target * duration >= 10)  # a line needs a few periods to resolve
    x = synth_bearing_signal(spec).samples
    freqs, amp = envelope_spectrum(x, spec.sample_rate)
    bin_width = spec.sample_rate / x.size
    band = freqs > bin_width
    peak = freqs[band][np.argmax(amp[band])]
    assert abs(peak - target) <= bin_width


# --- dataset discovery -----------------------------------------------------

def test_synthetic_dataset_roundtrip(tmp_path):
    label_map = write_synthetic_dataset(tmp_path, ["healthy", "cage"], runs_per_class=1,
                                        minutes_per_run=2, record_len=4096, seed=1)
    files, names = discover_files(tmp_path, label_map, ["healthy", "cage"])
    assert names == ["healthy", "cage"]
    assert len(files) == 4
    ws = window_dataset(files, "horizontal", 1024, 1024, 25600.0)
    assert len(ws) == 16
    assert {w.label_name for w in ws} == {"healthy", "cage"}
    capped = window_dataset(files, "horizontal", 1024, 1024, 25600.0, max_windows_per_class=5)
    assert sorted(sum(w.label == k for w in capped) for k in (0, 1)) == [5, 5]


def test_default_xjtu_labeling(tmp_path):
    for m in range(1, 6):
        write_xjtu_csv(tmp_path / "35Hz12kN" / "Bearing1_4" / f"{m}.csv", np.ones(8))
    files, names = discover_files(tmp_path, healthy_first_n=2, fault_last_n=2)
    by_minute = {f.minute_index: f.label_name for f in files}
    assert by_minute == {1: "healthy_early", 2: "healthy_early", 4: "cage", 5: "cage"}
    assert names[files[0].label] == "healthy_early"
