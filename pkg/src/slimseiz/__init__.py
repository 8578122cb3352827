"""Seizure prediction from scalp EEG: EDF ingest, channel selection and a compact CNN-Mamba network."""

from .eeg_io import EegRecording, SeizureAnnotation, SynthConfig, read_edf, synth_eeg, write_edf
from .errors import DataError, SlimSeizError

__version__ = "0.1.0"

__all__ = [
    "DataError",
    "EegRecording",
    "SeizureAnnotation",
    "SlimSeizError",
    "SynthConfig",
    "read_edf",
    "synth_eeg",
    "write_edf",
]
