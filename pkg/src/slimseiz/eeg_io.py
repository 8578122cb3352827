"""EEG ingestion: EDF parsing/writing, seizure annotation sidecars, synthetic EEG."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence, TextIO

import numpy as np

from .errors import (
    InvalidHeader,
    OrderError,
    ParseError,
    TruncatedData,
    UnsupportedLayout,
)
from .rng import stream

EDF_VERSION = b"0       "
DIGITAL_MIN = -32768
DIGITAL_MAX = 32767


@dataclass(frozen=True, order=True)
class SeizureAnnotation:
    onset_s: float
    offset_s: float

    def __post_init__(self):
        if not (0 <= self.onset_s < self.offset_s):
            raise OrderError(f"invalid seizure interval ({self.onset_s}, {self.offset_s})")

    @property
    def duration_s(self) -> float:
        return self.offset_s - self.onset_s


@dataclass
class EegRecording:
    """Multichannel recording, ``samples`` is [num_channels x num_samples] in physical units."""

    channel_labels: list[str]
    sample_rate_hz: float
    samples: np.ndarray
    annotations: list[SeizureAnnotation] = field(default_factory=list)
    name: str = ""

    def __post_init__(self):
        self.samples = np.asarray(self.samples)
        if self.samples.ndim != 2:
            raise ValueError("samples must be a [channels x samples] matrix")
        if self.samples.shape[0] < 1:
            raise ValueError("a recording needs at least one channel")
        if len(self.channel_labels) != self.samples.shape[0]:
            raise ValueError(
                f"{len(self.channel_labels)} labels for {self.samples.shape[0]} channel rows"
            )
        if not self.sample_rate_hz > 0:
            raise ValueError("sample_rate_hz must be positive")
        self.channel_labels = list(self.channel_labels)
        self.annotations = validate_annotations(self.annotations, self.duration_s)

    @property
    def num_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def num_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration_s(self) -> float:
        return self.num_samples / self.sample_rate_hz

    def with_annotations(self, annotations: Iterable[SeizureAnnotation]) -> "EegRecording":
        return replace(self, annotations=list(annotations))

    def channel_index(self, label: str) -> int:
        """Index of a channel matched by label text (case-insensitive, whitespace-trimmed)."""
        want = label.strip().upper()
        for i, lab in enumerate(self.channel_labels):
            if lab.strip().upper() == want:
                return i
        raise KeyError(label)


def validate_annotations(
    annotations: Iterable[SeizureAnnotation], duration_s: float | None = None
) -> list[SeizureAnnotation]:
    out = sorted(annotations)
    for prev, cur in zip(out, out[1:]):
        if cur.onset_s < prev.offset_s:
            raise OrderError(f"seizures overlap: {prev} and {cur}")
    if duration_s is not None and out and out[-1].offset_s > duration_s + 1e-9:
        raise OrderError(
            f"seizure offset {out[-1].offset_s} s beyond recording end {duration_s} s"
        )
    return out


# ---------------------------------------------------------------------------
# EDF


def _field(raw: bytes, what: str) -> str:
    try:
        return bytes(raw).decode("ascii").strip()
    except UnicodeDecodeError:
        raise InvalidHeader(f"non-ASCII bytes in {what} field") from None


def _number(raw: bytes, what: str, kind=float):
    text = _field(raw, what)
    try:
        value = kind(text)
    except ValueError:
        raise InvalidHeader(f"{what} field is not a number: {text!r}") from None
    if kind is float and not math.isfinite(value):
        raise InvalidHeader(f"{what} field is not finite: {text!r}")
    return value


def parse_edf(data: bytes, name: str = "") -> EegRecording:
    """Parse a complete EDF byte stream.

    Channels come back in file order, calibrated to physical units.  Every
    signal must share the same samples-per-record count.
    """
    buf = memoryview(data)
    if len(buf) < 256:
        raise TruncatedData(f"{len(buf)} bytes is shorter than the 256-byte EDF header")
    if bytes(buf[0:8]) != EDF_VERSION:
        raise InvalidHeader(f"unsupported version field {bytes(buf[0:8])!r}")
    header_bytes = _number(buf[184:192], "header bytes", int)
    n_records = _number(buf[236:244], "number of data records", int)
    record_s = _number(buf[244:252], "data record duration")
    ns = _number(buf[252:256], "number of signals", int)
    if ns < 1:
        raise InvalidHeader(f"number of signals must be positive, got {ns}")
    if header_bytes != 256 * (ns + 1):
        raise InvalidHeader(
            f"header declares {header_bytes} bytes but {ns} signals need {256 * (ns + 1)}"
        )
    if record_s <= 0:
        raise InvalidHeader(f"data record duration must be positive, got {record_s}")
    if n_records < -1:
        raise InvalidHeader(f"invalid number of data records {n_records}")
    if len(buf) < header_bytes:
        raise TruncatedData(f"signal header needs {header_bytes} bytes, file has {len(buf)}")

    offset = 256

    def column(width: int) -> list[memoryview]:
        nonlocal offset
        items = [buf[offset + i * width : offset + (i + 1) * width] for i in range(ns)]
        offset += ns * width
        return items

    labels = [_field(b, "label") for b in column(16)]
    column(80)  # transducer
    column(8)  # physical dimension
    phys_min = np.array([_number(b, "physical minimum") for b in column(8)])
    phys_max = np.array([_number(b, "physical maximum") for b in column(8)])
    dig_min = np.array([_number(b, "digital minimum", int) for b in column(8)])
    dig_max = np.array([_number(b, "digital maximum", int) for b in column(8)])
    column(80)  # prefiltering
    spr = np.array([_number(b, "samples per record", int) for b in column(8)])

    for i in range(ns):
        if dig_max[i] <= dig_min[i]:
            raise InvalidHeader(f"signal {i}: digital maximum must exceed digital minimum")
        if phys_max[i] == phys_min[i]:
            raise InvalidHeader(f"signal {i}: physical minimum equals physical maximum")
        if not (DIGITAL_MIN <= dig_min[i] and dig_max[i] <= DIGITAL_MAX):
            raise InvalidHeader(f"signal {i}: digital range outside 16-bit")
        if spr[i] < 1:
            raise InvalidHeader(f"signal {i}: samples per record must be positive")
    if np.any(spr != spr[0]):
        raise UnsupportedLayout(f"signals have differing samples per record: {spr.tolist()}")

    per_record = int(spr.sum())
    available = (len(buf) - header_bytes) // (2 * per_record)
    if n_records == -1:
        n_records = available
    elif available < n_records:
        raise TruncatedData(
            f"header declares {n_records} data records, file holds {available}"
        )

    raw = np.frombuffer(data, dtype="<i2", count=n_records * per_record, offset=header_bytes)
    n = int(spr[0])
    digital = raw.reshape(n_records, ns, n).transpose(1, 0, 2).reshape(ns, n_records * n)
    gain = (phys_max - phys_min) / (dig_max - dig_min)
    physical = phys_min[:, None] + (digital.astype(np.float64) - dig_min[:, None]) * gain[:, None]
    return EegRecording(
        channel_labels=labels,
        sample_rate_hz=n / record_s,
        samples=physical,
        annotations=[],
        name=name,
    )


def read_edf(path: str | Path) -> EegRecording:
    path = Path(path)
    return parse_edf(path.read_bytes(), name=path.stem)


def _format_edf_number(x: float, rounding: str) -> str:
    """Shortest <= 8 character decimal for ``x``, rounded down/up so the bound still holds."""
    op = {"floor": math.floor, "ceil": math.ceil}[rounding]
    for decimals in range(7, -1, -1):
        scale = 10**decimals
        value = op(x * scale) / scale
        text = f"{value:.{decimals}f}"
        if "." in text:
            text = text.rstrip("0").rstrip(".")
        if text == "-0":
            text = "0"
        if len(text) <= 8:
            return text
    raise ValueError(f"{x} cannot be represented in an 8-character EDF field")


def _ascii(text: str, width: int) -> bytes:
    raw = text.encode("ascii")
    if len(raw) > width:
        raise ValueError(f"{text!r} exceeds {width} bytes")
    return raw.ljust(width, b" ")


def write_edf(rec: EegRecording) -> bytes:
    """Serialize ``rec`` as EDF with one data record per second.

    Used for round-trip testing and for synthetic corpora; per-channel
    physical ranges are taken from the data.
    """
    fs = rec.sample_rate_hz
    if abs(fs - round(fs)) > 1e-9:
        raise ValueError("write_edf needs an integral sample rate (1 s data records)")
    fs = int(round(fs))
    if rec.num_samples % fs:
        raise ValueError("recording length must be a whole number of seconds")
    ns, n_records = rec.num_channels, rec.num_samples // fs

    pmin, pmax = [], []
    for row in rec.samples:
        lo = float(row.min()) if row.size else 0.0
        hi = float(row.max()) if row.size else 0.0
        if hi - lo < 1e-6:
            lo, hi = lo - 1.0, hi + 1.0
        pmin.append(_format_edf_number(lo, "floor"))
        pmax.append(_format_edf_number(hi, "ceil"))
    pmin_a, pmax_a = np.array(pmin, dtype=float), np.array(pmax, dtype=float)
    gain = (pmax_a - pmin_a) / (DIGITAL_MAX - DIGITAL_MIN)
    digital = np.rint((rec.samples - pmin_a[:, None]) / gain[:, None] + DIGITAL_MIN)
    digital = np.clip(digital, DIGITAL_MIN, DIGITAL_MAX).astype("<i2")

    out = io.BytesIO()
    out.write(EDF_VERSION)
    out.write(_ascii("X X X X", 80))
    out.write(_ascii("Startdate X X X X", 80))
    out.write(b"01.01.00")
    out.write(b"00.00.00")
    out.write(_ascii(str(256 * (ns + 1)), 8))
    out.write(b" " * 44)
    out.write(_ascii(str(n_records), 8))
    out.write(_ascii("1", 8))
    out.write(_ascii(str(ns), 4))
    for lab in rec.channel_labels:
        out.write(_ascii(lab, 16))
    out.write(_ascii("", 80) * ns)
    out.write(_ascii("uV", 8) * ns)
    for text in pmin + pmax:
        out.write(_ascii(text, 8))
    out.write(_ascii(str(DIGITAL_MIN), 8) * ns)
    out.write(_ascii(str(DIGITAL_MAX), 8) * ns)
    out.write(_ascii("", 80) * ns)
    out.write(_ascii(str(fs), 8) * ns)
    out.write(b" " * 32 * ns)
    body = digital.reshape(ns, n_records, fs).transpose(1, 0, 2)
    out.write(np.ascontiguousarray(body).tobytes())
    return out.getvalue()


# ---------------------------------------------------------------------------
# annotation sidecar


def load_annotations(text: str | TextIO) -> list[SeizureAnnotation]:
    """Parse ``onset_s,offset_s`` lines; '#' comments and blank lines are skipped."""
    if not isinstance(text, str):
        text = text.read()
    found = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 2:
            raise ParseError(f"line {lineno}: expected 'onset_s,offset_s', got {line!r}")
        try:
            onset, offset = float(parts[0]), float(parts[1])
        except ValueError:
            raise ParseError(f"line {lineno}: non-numeric field in {line!r}") from None
        if not (math.isfinite(onset) and math.isfinite(offset)):
            raise ParseError(f"line {lineno}: non-finite time in {line!r}")
        if offset <= onset or onset < 0:
            raise OrderError(f"line {lineno}: offset {offset} must follow onset {onset} >= 0")
        found.append(SeizureAnnotation(onset, offset))
    return validate_annotations(found)


def dump_annotations(annotations: Sequence[SeizureAnnotation]) -> str:
    return "".join(f"{a.onset_s:g},{a.offset_s:g}\n" for a in annotations)


# ---------------------------------------------------------------------------
# synthetic EEG


@dataclass
class SynthConfig:
    """Synthetic recording parameters.

    ``preictal_onsets_s`` are the seizure onsets; informative channels carry
    a 4-8 Hz rhythm whose amplitude ramps up over the ``preictal_horizon_s``
    before each onset.
    """

    num_channels: int = 8
    duration_s: float = 7200.0
    sample_rate_hz: float = 256.0
    informative_channels: frozenset[int] = frozenset({1, 3})
    preictal_onsets_s: list[float] = field(default_factory=lambda: [2100.0, 4200.0, 6300.0])
    noise_sigma: float = 20.0
    seed: int = 0
    ictal_duration_s: float = 60.0
    preictal_horizon_s: float = 1800.0
    signature_amplitude: float = 1.0
    ramp_floor: float = 0.5
    noise_ar: float = 0.7
    channel_labels: list[str] | None = None

    def __post_init__(self):
        self.informative_channels = frozenset(int(c) for c in self.informative_channels)
        self.preictal_onsets_s = [float(t) for t in self.preictal_onsets_s]
        if self.num_channels < 1:
            raise ValueError("num_channels must be >= 1")
        if self.duration_s <= 0 or self.sample_rate_hz <= 0:
            raise ValueError("duration_s and sample_rate_hz must be positive")
        if any(not 0 <= c < self.num_channels for c in self.informative_channels):
            raise ValueError("informative channel index out of range")
        onsets = self.preictal_onsets_s
        if any(b <= a for a, b in zip(onsets, onsets[1:])):
            raise ValueError("preictal_onsets_s must be strictly increasing")
        if any(b < a + self.ictal_duration_s for a, b in zip(onsets, onsets[1:])):
            raise ValueError("seizures would overlap")
        if onsets and (onsets[0] < 0 or onsets[-1] + self.ictal_duration_s > self.duration_s):
            raise ValueError("seizure falls outside the recording")
        if not 0 <= self.noise_ar < 1:
            raise ValueError("noise_ar must be in [0, 1)")
        if self.channel_labels is not None and len(self.channel_labels) != self.num_channels:
            raise ValueError("channel_labels length must equal num_channels")


def _ar1_noise(rng: np.random.Generator, n: int, phi: float, sigma: float) -> np.ndarray:
    from scipy.signal import lfilter

    white = rng.standard_normal(n)
    if phi == 0:
        return sigma * white
    # unit marginal variance for the AR(1) process
    return sigma * np.sqrt(1 - phi * phi) * lfilter([1.0], [1.0, -phi], white)


def synth_eeg(cfg: SynthConfig) -> EegRecording:
    fs = cfg.sample_rate_hz
    n = int(round(cfg.duration_s * fs))
    t = np.arange(n) / fs
    samples = np.empty((cfg.num_channels, n))
    for c in range(cfg.num_channels):
        samples[c] = _ar1_noise(stream(cfg.seed, "noise", c), n, cfg.noise_ar, cfg.noise_sigma)

    peak = cfg.signature_amplitude * cfg.noise_sigma
    for c in sorted(cfg.informative_channels):
        rng = stream(cfg.seed, "signature", c)
        freq = rng.uniform(4.0, 8.0)
        for onset in cfg.preictal_onsets_s:
            phase = rng.uniform(0.0, 2 * np.pi)
            start = max(0.0, onset - cfg.preictal_horizon_s)
            a, b = int(round(start * fs)), int(round(onset * fs))
            if b <= a:
                continue
            ramp = np.linspace(cfg.ramp_floor, 1.0, b - a, endpoint=False)
            samples[c, a:b] += peak * ramp * np.sin(2 * np.pi * freq * t[a:b] + phase)

    annotations = []
    ictal_rng = stream(cfg.seed, "ictal")
    for onset in cfg.preictal_onsets_s:
        offset = onset + cfg.ictal_duration_s
        a, b = int(round(onset * fs)), min(n, int(round(offset * fs)))
        burst = 5 * cfg.noise_sigma * np.sin(2 * np.pi * 3.0 * t[a:b] + ictal_rng.uniform(0, 2 * np.pi))
        samples[:, a:b] += burst
        annotations.append(SeizureAnnotation(onset, offset))

    labels = cfg.channel_labels or [f"CH{c:02d}" for c in range(cfg.num_channels)]
    return EegRecording(
        channel_labels=list(labels),
        sample_rate_hz=fs,
        samples=samples,
        annotations=annotations,
        name=f"synth-{cfg.seed}",
    )
