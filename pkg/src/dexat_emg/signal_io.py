"""Loading, synthesis, windowing and splitting of labeled EMG recordings."""

from __future__ import annotations

import math
import struct
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import EmptyClass, MalformedFile, NonFiniteValue, UnknownLabel, WindowTooLong

ROCK, PAPER, SCISSORS = 0, 1, 2
CLASS_NAMES = ("Rock", "Paper", "Scissors")
N_CLASSES = 3

RAWBIN_MAGIC = b"EMG1"


def _check_label(label) -> Optional[int]:
    if label is None:
        return None
    if isinstance(label, (bool, np.bool_)) or int(label) != label or int(label) not in (0, 1, 2):
        raise UnknownLabel(f"label {label!r} not in {{0, 1, 2}}")
    return int(label)


@dataclass
class EmgRecording:
    """Multi-channel voltage recording, stored channel-major as (channels, length)."""

    samples: np.ndarray
    sample_rate_hz: float = 200.0
    label: Optional[int] = None
    subject_id: Optional[str] = None

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim == 1:
            samples = samples[None, :]
        if samples.ndim != 2 or samples.shape[0] < 1 or samples.shape[1] < 1:
            raise MalformedFile(f"samples must be (channels, length) with both >= 1, got {samples.shape}")
        if not np.all(np.isfinite(samples)):
            raise NonFiniteValue("recording contains non-finite voltages")
        self.samples = samples
        self.label = _check_label(self.label)

    @property
    def channels(self) -> int:
        return self.samples.shape[0]

    def __len__(self) -> int:
        return self.samples.shape[1]


@dataclass(frozen=True)
class EmgWindow:
    """A fixed-length view into a recording.

    The label is copied at construction; replacing it (``dataclasses.replace``)
    never touches the source recording.
    """

    recording: EmgRecording
    start: int
    length: int
    label: Optional[int] = None

    def __post_init__(self):
        if self.length < 2:
            raise WindowTooLong(f"window length {self.length} < 2")
        if self.start < 0 or self.start + self.length > len(self.recording):
            raise WindowTooLong(
                f"window [{self.start}, {self.start + self.length}) exceeds recording length {len(self.recording)}"
            )

    @property
    def data(self) -> np.ndarray:
        view = self.recording.samples[:, self.start:self.start + self.length]
        view.flags.writeable = False
        return view


@dataclass
class Dataset:
    windows: list = field(default_factory=list)

    def __post_init__(self):
        for w in self.windows:
            if w.label is None:
                raise UnknownLabel("every dataset window must be labeled")

    @property
    def histogram(self) -> dict[int, int]:
        counts = Counter(w.label for w in self.windows)
        return {c: counts.get(c, 0) for c in range(N_CLASSES)}

    @property
    def labels(self) -> np.ndarray:
        return np.array([w.label for w in self.windows], dtype=np.int64)

    def __len__(self) -> int:
        return len(self.windows)

    def __iter__(self):
        return iter(self.windows)


# ---------------------------------------------------------------------------
# file formats


def save_recording(rec: EmgRecording, path, format: str = "csv") -> None:
    path = Path(path)
    if format == "csv":
        label = "none" if rec.label is None else str(rec.label)
        subject = rec.subject_id or ""
        rate = rec.sample_rate_hz
        rate_txt = str(int(rate)) if float(rate).is_integer() else repr(float(rate))
        lines = [f"# channels={rec.channels} rate={rate_txt} label={label} subject={subject}"]
        for row in rec.samples.T:
            lines.append(",".join(repr(float(v)) for v in row))
        path.write_text("\n".join(lines) + "\n")
    elif format == "rawbin":
        label = -1 if rec.label is None else rec.label
        header = RAWBIN_MAGIC + struct.pack("<IIIi", rec.channels, int(rec.sample_rate_hz), len(rec), label)
        path.write_bytes(header + rec.samples.astype("<f4").tobytes(order="C"))
    else:
        raise ValueError(f"unknown format {format!r}")


def _parse_csv_header(line: str) -> dict[str, str]:
    if not line.startswith("#"):
        raise MalformedFile("missing '# channels=... rate=... label=... subject=...' header")
    fields = {}
    for token in line[1:].split():
        if "=" not in token:
            raise MalformedFile(f"bad header token {token!r}")
        key, value = token.split("=", 1)
        fields[key] = value
    for key in ("channels", "rate", "label"):
        if key not in fields:
            raise MalformedFile(f"header lacks {key!r}")
    return fields


def load_recording(path, format: Optional[str] = None) -> EmgRecording:
    """Read a recording in csv or rawbin format (inferred from the suffix if omitted)."""
    path = Path(path)
    if format is None:
        format = "rawbin" if path.suffix in (".bin", ".rawbin") else "csv"
    if format == "csv":
        return _load_csv(path)
    if format == "rawbin":
        return _load_rawbin(path)
    raise ValueError(f"unknown format {format!r}")


def _load_csv(path: Path) -> EmgRecording:
    lines = path.read_text().splitlines()
    if not lines:
        raise MalformedFile(f"{path}: empty file")
    hdr = _parse_csv_header(lines[0])
    try:
        channels = int(hdr["channels"])
        rate = float(hdr["rate"])
    except ValueError as exc:
        raise MalformedFile(f"{path}: {exc}") from None
    label_txt = hdr["label"]
    if label_txt.lower() == "none":
        label = None
    else:
        try:
            label = int(label_txt)
        except ValueError:
            raise UnknownLabel(f"{path}: label {label_txt!r}") from None
        label = _check_label(label)
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        cells = line.split(",")
        if len(cells) != channels:
            raise MalformedFile(f"{path}:{lineno}: expected {channels} columns, got {len(cells)}")
        try:
            row = [float(c) for c in cells]
        except ValueError as exc:
            raise MalformedFile(f"{path}:{lineno}: {exc}") from None
        if not all(math.isfinite(v) for v in row):
            raise NonFiniteValue(f"{path}:{lineno}: non-finite voltage")
        rows.append(row)
    if not rows:
        raise MalformedFile(f"{path}: no samples")
    subject = hdr.get("subject") or None
    return EmgRecording(np.array(rows, dtype=np.float64).T, rate, label, subject)


def _load_rawbin(path: Path) -> EmgRecording:
    blob = path.read_bytes()
    if len(blob) < 20 or blob[:4] != RAWBIN_MAGIC:
        raise MalformedFile(f"{path}: bad magic")
    channels, rate, length, label = struct.unpack("<IIIi", blob[4:20])
    payload = blob[20:]
    if channels < 1 or length < 1 or len(payload) != 4 * channels * length:
        raise MalformedFile(f"{path}: payload size does not match header")
    samples = np.frombuffer(payload, dtype="<f4").reshape(channels, length).astype(np.float64)
    if not np.all(np.isfinite(samples)):
        raise NonFiniteValue(f"{path}: non-finite voltage")
    return EmgRecording(samples, float(rate), None if label == -1 else _check_label(label))


# ---------------------------------------------------------------------------
# synthetic data

# Per-channel burst amplitude (volts) for Rock, Paper, Scissors.
DEFAULT_AMPLITUDES = (
    (1.25, 1.27, 0.78, 0.58, 0.59, 1.00, 1.24, 0.75),
    (0.71, 0.91, 1.28, 1.16, 0.91, 0.64, 0.70, 0.79),
    (0.94, 1.32, 1.23, 0.66, 0.50, 0.86, 1.15, 0.57),
)


@dataclass(frozen=True)
class SynthConfig:
    """Parameters of the synthetic gesture generator.

    Each sample is ``clip(a[class, ch] * jitter * envelope(t) * carrier(t) + noise, -2, 2)``
    where the carrier is unit-variance white noise, the envelope is a raised
    sinusoid whose burst rate depends on the class, and ``jitter`` is a per
    recording/channel gain drawn uniformly from ``1 +- amplitude_jitter``.
    """

    channels: int = 8
    sample_rate_hz: float = 200.0
    length: int = 400
    amplitudes: tuple = DEFAULT_AMPLITUDES
    burst_hz: tuple = (1.0, 1.5, 2.0)
    envelope_floor: float = 0.3
    amplitude_jitter: float = 0.3
    noise_std: float = 0.05
    v_limit: float = 2.0
    margin: float = 0.25

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=np.float64)
        if amps.shape != (N_CLASSES, self.channels):
            raise ValueError(f"amplitudes must be {N_CLASSES}x{self.channels}, got {amps.shape}")
        if self.class_separation() < self.margin:
            raise ValueError(
                f"class amplitude profiles differ by {self.class_separation():.3f} < margin {self.margin}"
            )

    def class_separation(self) -> float:
        """Smallest pairwise max-abs difference between class amplitude profiles."""
        amps = np.asarray(self.amplitudes, dtype=np.float64)
        return min(
            float(np.max(np.abs(amps[a] - amps[b])))
            for a in range(N_CLASSES) for b in range(a + 1, N_CLASSES)
        )


def generate_synthetic(class_id: int, seed: int, cfg: SynthConfig = SynthConfig()) -> EmgRecording:
    """Deterministic labeled recording for ``class_id``.

    Values are rounded to float32 precision so both file formats round-trip
    exactly.
    """
    class_id = _check_label(class_id)
    if class_id is None:
        raise UnknownLabel("class_id is required")
    rng = np.random.default_rng([int(seed), class_id])
    t = np.arange(cfg.length) / cfg.sample_rate_hz
    amps = np.asarray(cfg.amplitudes[class_id], dtype=np.float64)
    gain = amps * rng.uniform(1 - cfg.amplitude_jitter, 1 + cfg.amplitude_jitter, size=cfg.channels)
    phase = rng.uniform(0, 2 * np.pi, size=(cfg.channels, 1))
    floor = cfg.envelope_floor
    envelope = floor + (1 - floor) * 0.5 * (1 + np.sin(2 * np.pi * cfg.burst_hz[class_id] * t + phase))
    carrier = rng.standard_normal((cfg.channels, cfg.length))
    noise = cfg.noise_std * rng.standard_normal((cfg.channels, cfg.length))
    x = np.clip(gain[:, None] * envelope * carrier + noise, -cfg.v_limit, cfg.v_limit)
    x = x.astype(np.float32).astype(np.float64)
    return EmgRecording(x, cfg.sample_rate_hz, class_id, subject_id=f"synth-{seed}")


# ---------------------------------------------------------------------------
# windowing and splitting


def window(rec: EmgRecording, length_T: int = 200, stride: Optional[int] = None) -> list[EmgWindow]:
    if length_T < 2:
        raise ValueError("length_T must be >= 2")
    stride = length_T if stride is None else stride
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if length_T > len(rec):
        raise WindowTooLong(f"window length {length_T} > recording length {len(rec)}")
    return [EmgWindow(rec, s, length_T, rec.label) for s in range(0, len(rec) - length_T + 1, stride)]


def make_dataset(recordings: Sequence[EmgRecording], length_T: int = 200, stride: Optional[int] = None) -> Dataset:
    return Dataset([w for rec in recordings for w in window(rec, length_T, stride)])


def split_dataset(ds: Dataset, test_fraction: float = 0.2, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Stratified split that keeps every source recording on one side.

    Per class, recordings are shuffled and moved to the test side until it
    holds at least ``round(test_fraction * class_count)`` windows.  Windows
    keep their original order within each side.
    """
    if not 0 < test_fraction < 1:
        raise ValueError("test_fraction must lie in (0, 1)")
    hist = ds.histogram
    for c, n in hist.items():
        if n < 2:
            raise EmptyClass(f"class {c} has {n} windows; need at least 2")

    # group key: order of first appearance of each source recording
    group_of = {}
    for w in ds.windows:
        group_of.setdefault(id(w.recording), len(group_of))
    groups_by_class: dict[int, dict[int, list[int]]] = {c: {} for c in range(N_CLASSES)}
    for i, w in enumerate(ds.windows):
        groups_by_class[w.label].setdefault(group_of[id(w.recording)], []).append(i)

    rng = np.random.default_rng(seed)
    test_idx = set()
    for c in range(N_CLASSES):
        groups = list(groups_by_class[c].values())
        target = min(max(1, round(test_fraction * hist[c])), hist[c] - 1)
        taken = 0
        for g in rng.permutation(len(groups)):
            if taken >= target:
                break
            test_idx.update(groups[g])
            taken += len(groups[g])

    train = [w for i, w in enumerate(ds.windows) if i not in test_idx]
    test = [w for i, w in enumerate(ds.windows) if i in test_idx]
    return Dataset(train), Dataset(test)
