import numpy as np
import pytest

from slimseiz.eeg_io import SynthConfig, synth_eeg


def _pad(text, width):
    raw = str(text).encode("ascii")
    assert len(raw) <= width, (text, width)
    return raw.ljust(width, b" ")


def craft_edf(
    digital,
    spr,
    phys_min,
    phys_max,
    dig_min,
    dig_max,
    labels=None,
    duration=1,
    version=b"0       ",
    header_bytes=None,
    n_records=None,
    ns_field=None,
    spr_list=None,
):
    """EDF bytes assembled field by field from the published header layout.

    ``digital`` is [ns x n_records*spr] int16 codes.  Any header field can be
    overridden to build malformed files.
    """
    digital = np.asarray(digital, dtype=np.int64)
    ns = digital.shape[0]
    recs = digital.shape[1] // spr if spr else 0
    labels = labels or [f"EEG{i}" for i in range(ns)]
    as_list = lambda v: list(v) if np.ndim(v) else [v] * ns  # noqa: E731
    phys_min, phys_max = as_list(phys_min), as_list(phys_max)
    dig_min, dig_max = as_list(dig_min), as_list(dig_max)
    spr_list = spr_list or [spr] * ns

    h = bytearray()
    h += version
    h += _pad("patient", 80) + _pad("recording", 80)
    h += b"01.02.03" + b"04.05.06"
    h += _pad(256 * (ns + 1) if header_bytes is None else header_bytes, 8)
    h += b" " * 44
    h += _pad(recs if n_records is None else n_records, 8)
    h += _pad(duration, 8)
    h += _pad(ns if ns_field is None else ns_field, 4)
    for lab in labels:
        h += _pad(lab, 16)
    h += b" " * 80 * ns
    h += _pad("uV", 8) * ns
    for v in phys_min:
        h += _pad(v, 8)
    for v in phys_max:
        h += _pad(v, 8)
    for v in dig_min:
        h += _pad(v, 8)
    for v in dig_max:
        h += _pad(v, 8)
    h += b" " * 80 * ns
    for v in spr_list:
        h += _pad(v, 8)
    h += b" " * 32 * ns
    body = bytearray()
    for r in range(recs):
        for s in range(ns):
            body += digital[s, r * spr : (r + 1) * spr].astype("<i2").tobytes()
    return bytes(h) + bytes(body)


def calibrate(digital, phys_min, phys_max, dig_min, dig_max):
    return phys_min + (np.asarray(digital, dtype=float) - dig_min) * (phys_max - phys_min) / (dig_max - dig_min)


@pytest.fixture
def edf_builder():
    return craft_edf


@pytest.fixture(scope="session")
def small_recording():
    """40 min at 128 Hz, one seizure, informative channels 1 and 3."""
    cfg = SynthConfig(
        num_channels=4,
        duration_s=2400.0,
        sample_rate_hz=128.0,
        informative_channels={1, 3},
        preictal_onsets_s=[2000.0],
        ictal_duration_s=30.0,
        seed=3,
    )
    return synth_eeg(cfg)


def band_power(x, fs, lo, hi):
    spec = np.abs(np.fft.rfft(x - x.mean())) ** 2
    freqs = np.fft.rfftfreq(x.size, 1 / fs)
    return float(spec[(freqs >= lo) & (freqs <= hi)].sum() / x.size)


_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line per acceptance criterion, then assert it."""

    def record(name: str, ok: bool, detail: str) -> None:
        line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
