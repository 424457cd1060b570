"""Recording ingestion, normalization, windowing and patient splits."""

from .io import (
    Manifest,
    ManifestEntry,
    load_dataset,
    load_manifest,
    load_patient_meta,
    load_recording,
    write_patient_meta,
    write_recording,
)
from .pipeline import attach_context, normalize_repetition, prepare_recording
from .recording import SAMPLE_RATE_HZ, PatientMeta, Recording, impairment_band
from .schema import Channel, ChannelSchema, compact_schema, default_schema
from .splits import split_patients
from .windows import (
    Window,
    WindowSet,
    class_distribution,
    extract_all,
    extract_windows,
    window_count,
    window_length,
)

__all__ = [
    "Channel", "ChannelSchema", "Manifest", "ManifestEntry", "PatientMeta", "Recording", "SAMPLE_RATE_HZ",
    "Window", "WindowSet", "attach_context", "class_distribution", "compact_schema", "default_schema",
    "extract_all", "extract_windows", "impairment_band", "load_dataset", "load_manifest", "load_patient_meta",
    "load_recording", "normalize_repetition", "prepare_recording", "split_patients", "window_count",
    "window_length", "write_patient_meta", "write_recording",
]
