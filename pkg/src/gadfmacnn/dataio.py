"""Vibration record ingestion, windowing, splitting and a synthetic bearing oracle.

Records follow the XJTU-SY distribution layout: one CSV per sampling minute,
a header row, then horizontal and vertical acceleration columns.
"""
from __future__ import annotations

import csv
import math
import re
import warnings
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import signal as sps

from .errors import (ConfigError, InsufficientClassSamples, MissingColumn,
                     ParseError, WindowTooLong)

XJTU_RECORD_LEN = 32768
DEFAULT_SAMPLE_RATE = 25600.0
CHANNELS = ("horizontal", "vertical")
FAULT_CLASSES = ("healthy", "outer_race", "inner_race", "cage")

# Documented failure location of every XJTU-SY run. Runs with several
# failed elements are folded into "mixed".
XJTU_FAILURES = {
    "Bearing1_1": "outer_race", "Bearing1_2": "outer_race", "Bearing1_3": "outer_race",
    "Bearing1_4": "cage", "Bearing1_5": "mixed",
    "Bearing2_1": "inner_race", "Bearing2_2": "outer_race", "Bearing2_3": "cage",
    "Bearing2_4": "outer_race", "Bearing2_5": "outer_race",
    "Bearing3_1": "outer_race", "Bearing3_2": "mixed", "Bearing3_3": "inner_race",
    "Bearing3_4": "inner_race", "Bearing3_5": "outer_race",
}
XJTU_CLASS_NAMES = ("healthy_early", "inner_race", "outer_race", "cage", "mixed")


class RecordLengthWarning(UserWarning):
    pass


@dataclass
class RawRecord:
    samples: np.ndarray
    channel: str
    sample_rate: float
    source_path: str
    minute_index: int = 0

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise ParseError(f"{self.source_path}: record has no samples")
        if self.channel not in CHANNELS:
            raise ValueError(f"unknown channel {self.channel!r}")
        if not self.sample_rate > 0:
            raise ValueError("sample_rate must be positive")


@dataclass(frozen=True)
class RecordRef:
    source_path: str
    channel: str
    offset: int


@dataclass
class SignalWindow:
    values: np.ndarray
    label: int
    label_name: str
    record_ref: RecordRef


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.6
    val_fraction: float = 0.2
    test_fraction: float = 0.2
    seed: int = 0
    stratified: bool = True

    def __post_init__(self):
        fr = (self.train_fraction, self.val_fraction, self.test_fraction)
        if min(fr) <= 0 or abs(sum(fr) - 1.0) > 1e-9:
            raise ValueError(f"split fractions must be positive and sum to 1, got {fr}")


@dataclass(frozen=True)
class BearingGeometry:
    ball_count: int
    ball_diameter: float  # mm
    pitch_diameter: float  # mm
    contact_angle: float = 0.0  # degrees

    def __post_init__(self):
        if self.ball_count < 1:
            raise ValueError("ball_count must be >= 1")
        if not 0 <= self.ball_diameter < self.pitch_diameter:
            raise ValueError("ball_diameter must be below pitch_diameter")


# LDK UER204, the bearing used on the XJTU-SY rig
TABLE2_GEOMETRY = BearingGeometry(ball_count=8, ball_diameter=7.92, pitch_diameter=34.55,
                                  contact_angle=0.0)


@dataclass(frozen=True)
class SyntheticSpec:
    geometry: BearingGeometry = TABLE2_GEOMETRY
    shaft_hz: float = 35.0
    fault_class: str = "healthy"
    snr_db: float = 10.0
    resonance_hz: float = 3000.0
    decay: float = 300.0
    seed: int = 0
    duration_s: float = XJTU_RECORD_LEN / DEFAULT_SAMPLE_RATE
    sample_rate: float = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        if self.fault_class not in FAULT_CLASSES:
            raise ValueError(f"fault_class must be one of {FAULT_CLASSES}")
        if not self.sample_rate > 2 * self.resonance_hz:
            raise ValueError("sample_rate must exceed twice resonance_hz")
        if not self.duration_s > 0:
            raise ValueError("duration_s must be positive")
        if not self.shaft_hz > 0:
            raise ValueError("shaft_hz must be positive")


def _column_index(header: list[str], channel: str) -> int:
    for i, name in enumerate(header):
        if channel in name.strip().lower():
            return i
    raise MissingColumn(f"header {header!r} has no {channel} column")


def load_xjtu_csv(path, channel: str = "horizontal", sample_rate: float = DEFAULT_SAMPLE_RATE,
                  minute_index: int | None = None) -> RawRecord:
    """Read one XJTU-SY minute file and return the requested channel.

    The sample rate always comes from the caller; the files do not carry it.
    """
    if channel not in CHANNELS:
        raise ValueError(f"channel must be one of {CHANNELS}")
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header:
            raise ParseError(f"{path}: empty file")
        col = _column_index(header, channel)
        values = []
        for row_no, row in enumerate(reader, start=1):
            if not row:
                continue
            try:
                values.append(float(row[col]))
            except (ValueError, IndexError):
                raise ParseError(f"{path}: row {row_no}: cannot parse {row!r}") from None
    if not values:
        raise ParseError(f"{path}: header but no data rows")
    if len(values) != XJTU_RECORD_LEN:
        warnings.warn(f"{path}: {len(values)} samples, XJTU-SY files hold {XJTU_RECORD_LEN}",
                      RecordLengthWarning, stacklevel=2)
    if minute_index is None:
        minute_index = int(path.stem) if path.stem.isdigit() else 0
    return RawRecord(np.array(values), channel, float(sample_rate), str(path), minute_index)


def write_xjtu_csv(path, horizontal: np.ndarray, vertical: np.ndarray | None = None) -> None:
    """Write a two-channel minute file in the XJTU-SY layout."""
    if vertical is None:
        vertical = np.zeros_like(horizontal)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["Horizontal_vibration_signals", "Vertical_vibration_signals"])
        for h, v in zip(horizontal, vertical):
            w.writerow([repr(float(h)), repr(float(v))])


def segment_windows(record: RawRecord, window_len: int, stride: int, label: int,
                    label_name: str = "") -> list[SignalWindow]:
    if window_len < 2 or stride < 1:
        raise ValueError("need window_len >= 2 and stride >= 1")
    n = record.samples.size
    if window_len > n:
        raise WindowTooLong(f"window of {window_len} exceeds record of {n} samples")
    count = (n - window_len) // stride + 1
    out = []
    for k in range(count):
        off = k * stride
        ref = RecordRef(record.source_path, record.channel, off)
        out.append(SignalWindow(record.samples[off:off + window_len].copy(), label, label_name, ref))
    return out


def _part_sizes(n: int, spec: SplitSpec) -> tuple[int, int, int]:
    n_val = max(1, round(n * spec.val_fraction))
    n_test = max(1, round(n * spec.test_fraction))
    n_train = n - n_val - n_test
    while n_train < 1:
        # steal from the larger of val/test
        if n_val >= n_test:
            n_val -= 1
        else:
            n_test -= 1
        n_train += 1
    return n_train, n_val, n_test


def stratified_split(windows: Sequence[SignalWindow], spec: SplitSpec):
    """Split windows into (train, val, test), per class when ``spec.stratified``.

    Parts keep the input order of the windows they receive.
    """
    groups: dict[int, list[int]] = defaultdict(list)
    for i, w in enumerate(windows):
        groups[w.label if spec.stratified else 0].append(i)
    for label, idx in groups.items():
        if len(idx) < 3:
            raise InsufficientClassSamples(f"class {label} has {len(idx)} windows, need >= 3")
    assign = np.empty(len(windows), dtype=np.int64)
    for label in sorted(groups):
        idx = np.array(groups[label])
        rng = np.random.default_rng([spec.seed, label])
        perm = idx[rng.permutation(idx.size)]
        n_train, n_val, _ = _part_sizes(idx.size, spec)
        assign[perm[:n_train]] = 0
        assign[perm[n_train:n_train + n_val]] = 1
        assign[perm[n_train + n_val:]] = 2
    parts = ([], [], [])
    for i, w in enumerate(windows):
        parts[assign[i]].append(w)
    return parts


def compute_fault_frequencies(geometry: BearingGeometry, shaft_hz: float) -> dict[str, float]:
    if not shaft_hz > 0:
        raise ValueError("shaft_hz must be positive")
    ratio = geometry.ball_diameter / geometry.pitch_diameter * math.cos(math.radians(geometry.contact_angle))
    n = geometry.ball_count
    return {
        "BPFO": n / 2 * shaft_hz * (1 - ratio),
        "BPFI": n / 2 * shaft_hz * (1 + ratio),
        "FTF": shaft_hz / 2 * (1 - ratio),
    }


def characteristic_frequency(spec: SyntheticSpec) -> float | None:
    key = {"outer_race": "BPFO", "inner_race": "BPFI", "cage": "FTF"}.get(spec.fault_class)
    if key is None:
        return None
    return compute_fault_frequencies(spec.geometry, spec.shaft_hz)[key]


def _band_limited_noise(rng: np.random.Generator, n: int, fs: float) -> np.ndarray:
    white = rng.standard_normal(n)
    sos = sps.butter(4, 0.4 * fs, btype="lowpass", fs=fs, output="sos")
    noise = sps.sosfilt(sos, white)
    return noise / np.sqrt(np.mean(noise ** 2))


def synth_bearing_signal(spec: SyntheticSpec) -> RawRecord:
    """Simulate one channel of a bearing with a localized fault.

    A fault is a train of impacts at the class's characteristic frequency,
    each ringing the structure at ``resonance_hz`` with exponential decay.
    The impact train is scaled to unit RMS; band-limited Gaussian noise of
    RMS ``10**(-snr_db/20)`` is added. A healthy bearing is the noise alone,
    so ``snr_db=inf`` gives silence.
    """
    fs = spec.sample_rate
    n = int(round(spec.duration_s * fs))
    t = np.arange(n) / fs
    rng = np.random.default_rng([spec.seed, FAULT_CLASSES.index(spec.fault_class)])
    x = np.zeros(n)
    f_char = characteristic_frequency(spec)
    if f_char is not None:
        period = 1.0 / f_char
        t0 = rng.uniform(0.0, period)
        n_imp = int(np.floor((spec.duration_s - t0) / period)) + 1
        amps = 1.0 + 0.1 * rng.standard_normal(n_imp)
        ring_len = min(n, int(np.ceil(fs * 10.0 / spec.decay)))  # ~e^-10 tail
        for k in range(n_imp):
            tk = t0 + k * period
            start = int(np.ceil(tk * fs))
            if start >= n:
                break
            seg = min(ring_len, n - start)
            dt = t[start:start + seg] - tk
            x[start:start + seg] += amps[k] * np.exp(-spec.decay * dt) * np.sin(2 * np.pi * spec.resonance_hz * dt)
        rms = np.sqrt(np.mean(x ** 2))
        if rms > 0:
            x /= rms
    if math.isfinite(spec.snr_db):
        x = x + 10 ** (-spec.snr_db / 20) * _band_limited_noise(rng, n, fs)
    src = f"synthetic:{spec.fault_class}:seed={spec.seed}"
    return RawRecord(x, "horizontal", fs, src, 0)


def envelope_spectrum(x: np.ndarray, fs: float, pad: int = 8) -> tuple[np.ndarray, np.ndarray]:
    """One-sided amplitude spectrum of the Hilbert envelope (mean removed).

    Hann-windowed and zero-padded ``pad`` times so that a line between two
    natural bins (``fs / len(x)`` apart) is not attenuated below its harmonics.
    """
    env = np.abs(sps.hilbert(x))
    env = env - env.mean()
    w = np.hanning(env.size)
    nfft = pad * env.size
    spec = np.abs(np.fft.rfft(env * w, nfft)) / w.sum()
    return np.fft.rfftfreq(nfft, 1.0 / fs), spec


# --- dataset discovery ---------------------------------------------------

@dataclass
class LabeledFile:
    path: Path
    run: str
    label: int
    label_name: str
    minute_index: int


def _minute_files(run_dir: Path) -> list[Path]:
    files = [p for p in run_dir.glob("*.csv") if p.stem.isdigit()]
    return sorted(files, key=lambda p: int(p.stem))


def discover_files(root, label_map: dict[str, str] | None = None, class_names: Sequence[str] | None = None,
                   healthy_first_n: int = 10, fault_last_n: int = 10) -> tuple[list[LabeledFile], list[str]]:
    """Find labeled minute files under ``root`` (searched recursively for run directories).

    With a ``label_map`` (run directory name -> class name) every minute file
    of a mapped run takes that class. Without one, the documented XJTU-SY
    failure modes apply: the first ``healthy_first_n`` minutes of each run are
    ``healthy_early`` and the last ``fault_last_n`` take the run's failure class.
    """
    root = Path(root)
    if not root.is_dir():
        raise ConfigError(f"dataset root {root} is not a directory")
    runs = sorted({p.parent for p in root.rglob("*.csv")}, key=lambda p: str(p))
    if label_map is not None:
        names = list(class_names) if class_names else sorted(set(label_map.values()))
    else:
        names = list(class_names) if class_names else list(XJTU_CLASS_NAMES)
    index = {name: i for i, name in enumerate(names)}
    out = []
    for run_dir in runs:
        run = run_dir.name
        files = _minute_files(run_dir)
        if label_map is not None:
            cls = label_map.get(run)
            if cls is None:
                continue
            if cls not in index:
                raise ConfigError(f"label map sends {run} to unknown class {cls!r}")
            out += [LabeledFile(p, run, index[cls], cls, int(p.stem)) for p in files]
            continue
        cls = XJTU_FAILURES.get(run)
        if cls is None:
            continue
        early = files[:healthy_first_n]
        late = [p for p in files[-fault_last_n:] if p not in early] if fault_last_n > 0 else []
        out += [LabeledFile(p, run, index["healthy_early"], "healthy_early", int(p.stem)) for p in early]
        out += [LabeledFile(p, run, index[cls], cls, int(p.stem)) for p in late]
    return out, names


def window_dataset(files: Sequence[LabeledFile], channel: str, window_len: int, stride: int,
                   sample_rate: float, max_windows_per_class: int | None = None,
                   seed: int = 0) -> list[SignalWindow]:
    windows = []
    for f in files:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RecordLengthWarning)
            rec = load_xjtu_csv(f.path, channel, sample_rate, f.minute_index)
        windows += segment_windows(rec, window_len, stride, f.label, f.label_name)
    if max_windows_per_class is None:
        return windows
    by_class: dict[int, list[int]] = defaultdict(list)
    for i, w in enumerate(windows):
        by_class[w.label].append(i)
    keep = set()
    for label, idx in by_class.items():
        if len(idx) > max_windows_per_class:
            rng = np.random.default_rng([seed, label, 1])
            idx = sorted(rng.choice(idx, size=max_windows_per_class, replace=False).tolist())
        keep.update(idx)
    return [w for i, w in enumerate(windows) if i in keep]


_RUN_RE = re.compile(r"[^A-Za-z0-9_.-]")


def write_synthetic_dataset(out_dir, classes: Sequence[str] = FAULT_CLASSES, runs_per_class: int = 1,
                            minutes_per_run: int = 3, base: SyntheticSpec | None = None,
                            seed: int = 0, record_len: int = XJTU_RECORD_LEN) -> dict[str, str]:
    """Emit a synthetic dataset in the XJTU-SY directory layout plus its label map.

    Returns the label map (run directory -> class name), also written to
    ``out_dir/labels.json``.
    """
    import json

    base = base or SyntheticSpec()
    out_dir = Path(out_dir)
    label_map = {}
    for ci, cls in enumerate(classes):
        for r in range(runs_per_class):
            run = _RUN_RE.sub("_", f"{cls}_{r + 1}")
            label_map[run] = cls
            for m in range(minutes_per_run):
                rec_seed = int(np.random.SeedSequence([seed, ci, r, m]).generate_state(1)[0])
                spec = SyntheticSpec(**{**base.__dict__, "fault_class": cls, "seed": rec_seed,
                                        "duration_s": record_len / base.sample_rate})
                rec = synth_bearing_signal(spec)
                vert = synth_bearing_signal(SyntheticSpec(**{**spec.__dict__, "seed": rec_seed + 1})).samples
                write_xjtu_csv(out_dir / run / f"{m + 1}.csv", rec.samples[:record_len], vert[:record_len])
    with open(out_dir / "labels.json", "w") as fh:
        json.dump({"classes": list(classes), "runs": label_map}, fh, indent=2, sort_keys=True)
    return label_map
