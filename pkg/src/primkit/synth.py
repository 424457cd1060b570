"""Synthetic recordings with known primitive scripts.

Each patient performs random scripts: sequences of (primitive, duration)
segments. Every segment is rendered per channel from the primitive's
template, a sinusoid plus offset plus linear ramp in time measured from
the segment start. A per-patient affine map, a per-patient tempo factor
and Gaussian noise make patients differ. Held-out patients can receive
one extra per-channel affine shift shared by the whole cohort, which is
the mismatch batch statistics cannot absorb.

Template families are built so that reach/transport differ only on some
channels, and stabilize/idle are both near-constant (stabilize carries a
small fast tremor), giving two confusable pairs.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from itertools import combinations
from pathlib import Path

import numpy as np

from .data.io import Manifest, ManifestEntry, write_patient_meta, write_recording
from .data.recording import SAMPLE_RATE_HZ, PatientMeta, Recording
from .data.schema import compact_schema
from .data.windows import WindowSet, extract_all, window_length
from .errors import ConfigError
from .primitives import N_PRIMITIVES, PRIMITIVE_NAMES, Primitive
from .rng import derive_rng

#: render length (seconds) used when measuring template separation
_DISTANCE_SPAN_S = 2.0


@dataclass
class PrimitiveTemplates:
    """Per-(primitive, channel) signal parameters, each a ``5 x C`` array.

    Channel ``c`` of primitive ``k`` at local time ``t`` (seconds since the
    segment began) is ``offset + amplitude * sin(2 pi freq t + phase) + slope * t``.
    """

    offset: np.ndarray
    amplitude: np.ndarray
    freq: np.ndarray
    phase: np.ndarray
    slope: np.ndarray

    FIELDS = ("offset", "amplitude", "freq", "phase", "slope")

    def __post_init__(self):
        shapes = {np.shape(getattr(self, f)) for f in self.FIELDS}
        if len(shapes) != 1:
            raise ConfigError(f"template arrays disagree in shape: {sorted(shapes)}")
        shape = shapes.pop()
        if len(shape) != 2 or shape[0] != N_PRIMITIVES:
            raise ConfigError(f"templates must be {N_PRIMITIVES} x C, got {shape}")
        for f in self.FIELDS:
            setattr(self, f, np.asarray(getattr(self, f), dtype=np.float64))

    @property
    def n_channels(self) -> int:
        return self.offset.shape[1]

    def render(self, primitive: int, n_samples: int, tempo: float = 1.0) -> np.ndarray:
        """``n_samples x C`` noiseless signal for one segment."""
        t = (np.arange(n_samples) / SAMPLE_RATE_HZ)[:, None]
        k = primitive
        return (self.offset[k] + self.amplitude[k] * np.sin(2 * np.pi * self.freq[k] * tempo * t + self.phase[k])
                + self.slope[k] * tempo * t)

    def distances(self) -> np.ndarray:
        """Pairwise RMS distance between primitive renders over a two second span."""
        n = int(_DISTANCE_SPAN_S * SAMPLE_RATE_HZ)
        renders = [self.render(k, n) for k in range(N_PRIMITIVES)]
        d = np.zeros((N_PRIMITIVES, N_PRIMITIVES))
        for i, j in combinations(range(N_PRIMITIVES), 2):
            d[i, j] = d[j, i] = np.sqrt(np.mean((renders[i] - renders[j]) ** 2))
        return d

    def to_dict(self) -> dict:
        return {f: getattr(self, f).tolist() for f in self.FIELDS}

    @classmethod
    def from_dict(cls, d) -> "PrimitiveTemplates":
        try:
            return cls(**{f: d[f] for f in cls.FIELDS})
        except KeyError as exc:
            raise ConfigError(f"template dict missing {exc}") from None


@dataclass
class SynthConfig:
    n_train_patients: int = 20
    n_test_patients: int = 5
    recordings_per_patient: int = 2
    recording_seconds: float = 40.0
    n_sensor_channels: int = 12
    include_context: bool = True
    duration_range: tuple = (1.0, 3.0)
    noise_std: float = 0.15
    idiosyncrasy: bool = True
    scale_range: tuple = (0.8, 1.25)
    offset_range: tuple = (-0.5, 0.5)
    tempo_jitter: float = 0.1
    test_shift: bool = False
    shift_scale_range: tuple = (0.5, 2.0)
    shift_offset_range: tuple = (-1.0, 1.0)
    min_template_distance: float = 0.3
    seed: int = 0
    templates: PrimitiveTemplates | None = field(default=None, repr=False)

    def __post_init__(self):
        if isinstance(self.templates, dict):
            self.templates = PrimitiveTemplates.from_dict(self.templates)
        for name in ("duration_range", "scale_range", "offset_range", "shift_scale_range", "shift_offset_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ConfigError(f"{name} lower bound {lo} exceeds upper bound {hi}")
            setattr(self, name, (float(lo), float(hi)))
        if self.duration_range[0] < 2 / SAMPLE_RATE_HZ:
            raise ConfigError(f"primitive durations must be at least {2 / SAMPLE_RATE_HZ} s")
        if self.scale_range[0] <= 0 or self.shift_scale_range[0] <= 0:
            raise ConfigError("affine scales must be positive")
        if self.n_train_patients < 0 or self.n_test_patients < 0 or self.n_patients == 0:
            raise ConfigError("need at least one patient")
        if self.recordings_per_patient < 1 or self.recording_seconds <= 0:
            raise ConfigError("recordings_per_patient and recording_seconds must be positive")
        if self.noise_std < 0 or not 0 <= self.tempo_jitter < 1:
            raise ConfigError("noise_std must be >= 0 and tempo_jitter in [0, 1)")
        if self.n_sensor_channels < 1:
            raise ConfigError("n_sensor_channels must be positive")
        if self.templates is not None and self.templates.n_channels != self.n_sensor_channels:
            raise ConfigError(f"templates cover {self.templates.n_channels} channels, "
                              f"schema has {self.n_sensor_channels}")

    @property
    def n_patients(self) -> int:
        return self.n_train_patients + self.n_test_patients

    @property
    def schema(self):
        return compact_schema(self.n_sensor_channels, self.include_context)

    def is_held_out(self, patient_index: int) -> bool:
        return patient_index >= self.n_train_patients

    def to_dict(self) -> dict:
        d = asdict(self)
        d["templates"] = self.templates.to_dict() if self.templates is not None else None
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    @classmethod
    def from_dict(cls, d) -> "SynthConfig":
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(f"malformed synth config: {exc}") from None


def make_templates(n_channels: int, seed: int = 0, min_distance: float = 0.3,
                   max_attempts: int = 100) -> PrimitiveTemplates:
    """Draw templates with the two confusable pairs, redrawing until all pairs are ``min_distance`` apart."""
    rng = derive_rng(seed, "synth", "templates")
    C = n_channels
    R, T, P, S, I = (int(p) for p in (Primitive.REACH, Primitive.TRANSPORT, Primitive.REPOSITION,
                                        Primitive.STABILIZE, Primitive.IDLE))
    for _ in range(max_attempts):
        off = rng.uniform(-1.0, 1.0, (N_PRIMITIVES, C))
        amp = np.zeros((N_PRIMITIVES, C))
        freq = np.zeros((N_PRIMITIVES, C))
        phase = rng.uniform(0, 2 * np.pi, (N_PRIMITIVES, C))
        slope = np.zeros((N_PRIMITIVES, C))

        amp[R] = rng.uniform(0.6, 1.2, C)
        freq[R] = rng.uniform(0.6, 1.2, C)
        slope[R] = rng.uniform(0.2, 0.6, C) * rng.choice([-1, 1], C)
        # transport shares reach's shape except on a random half of the channels
        amp[T], freq[T], phase[T], slope[T], off[T] = amp[R], freq[R], phase[R], slope[R], off[R]
        changed = rng.permutation(C)[:max(1, C // 2)]
        freq[T, changed] = freq[R, changed] * rng.uniform(1.5, 2.0, len(changed))
        off[T, changed] = off[R, changed] + rng.choice([-1, 1], len(changed)) * rng.uniform(0.3, 0.6, len(changed))

        amp[P] = rng.uniform(0.6, 1.2, C)
        freq[P] = rng.uniform(1.8, 3.0, C)
        slope[P] = rng.uniform(0.2, 0.6, C) * rng.choice([-1, 1], C)

        amp[S] = rng.uniform(0.25, 0.4, C)
        freq[S] = rng.uniform(5.0, 7.0, C)
        amp[I] = rng.uniform(0.05, 0.1, C)
        freq[I] = rng.uniform(0.2, 0.4, C)

        tpl = PrimitiveTemplates(off, amp, freq, phase, slope)
        d = tpl.distances()
        if d[np.triu_indices(N_PRIMITIVES, 1)].min() >= min_distance:
            return tpl
    raise ConfigError(f"could not draw templates {min_distance} apart in {max_attempts} attempts")


def templates_for(config: SynthConfig) -> PrimitiveTemplates:
    if config.templates is not None:
        d = config.templates.distances()
        if d[np.triu_indices(N_PRIMITIVES, 1)].min() < config.min_template_distance:
            raise ConfigError("supplied templates are closer than min_template_distance")
        return config.templates
    return make_templates(config.n_sensor_channels, config.seed, config.min_template_distance)


@dataclass
class CohortShift:
    """Per-channel affine map ``x -> scale * x + offset`` applied to held-out patients."""

    scale: np.ndarray
    offset: np.ndarray

    def apply(self, values: np.ndarray) -> np.ndarray:
        return values * self.scale + self.offset

    def to_dict(self) -> dict:
        return {"scale": self.scale.tolist(), "offset": self.offset.tolist()}


def cohort_shift(config: SynthConfig) -> CohortShift | None:
    if not config.test_shift:
        return None
    rng = derive_rng(config.seed, "synth", "shift")
    C = config.n_sensor_channels
    lo, hi = np.log(config.shift_scale_range)
    return CohortShift(np.exp(rng.uniform(lo, hi, C)), rng.uniform(*config.shift_offset_range, C))


def draw_script(rng, n_samples: int, duration_range) -> list:
    """Random (primitive, n_samples) segments covering exactly ``n_samples``; no primitive repeats back to back."""
    lo = max(2, int(round(duration_range[0] * SAMPLE_RATE_HZ)))
    hi = max(lo, int(round(duration_range[1] * SAMPLE_RATE_HZ)))
    script, total, prev = [], 0, -1
    while total < n_samples:
        choices = [k for k in range(N_PRIMITIVES) if k != prev]
        prim = int(choices[rng.integers(len(choices))])
        n = int(min(rng.integers(lo, hi + 1), n_samples - total))
        script.append((prim, n))
        total += n
        prev = prim
    return script


@dataclass
class SynthPatient:
    meta: PatientMeta
    recordings: list
    scripts: list
    held_out: bool


def patient_id(index: int) -> str:
    return f"P{index:03d}"


def generate_patient(config: SynthConfig, patient_index: int, templates: PrimitiveTemplates | None = None,
                     shift: CohortShift | None = None) -> SynthPatient:
    """Render all recordings of one patient; deterministic in ``(config.seed, patient_index)``."""
    if not 0 <= patient_index < config.n_patients:
        raise ConfigError(f"patient index {patient_index} outside 0..{config.n_patients - 1}")
    templates = templates if templates is not None else templates_for(config)
    if templates.n_channels != config.n_sensor_channels:
        raise ConfigError(f"templates cover {templates.n_channels} channels, schema has {config.n_sensor_channels}")
    held_out = config.is_held_out(patient_index)
    if shift is None and held_out:
        shift = cohort_shift(config)
    if not held_out:
        shift = None
    rng = derive_rng(config.seed, "synth", "patient", patient_index)
    C = config.n_sensor_channels
    meta = PatientMeta(patient_id(patient_index), ("left", "right")[int(rng.integers(2))], int(rng.integers(10, 67)))
    if config.idiosyncrasy:
        lo, hi = np.log(config.scale_range)
        scale = np.exp(rng.uniform(lo, hi, C))
        offset = rng.uniform(*config.offset_range, C)
        tempo = float(rng.uniform(1 - config.tempo_jitter, 1 + config.tempo_jitter))
    else:
        scale, offset, tempo = np.ones(C), np.zeros(C), 1.0

    schema = config.schema
    T = int(round(config.recording_seconds * SAMPLE_RATE_HZ))
    recordings, scripts = [], []
    for r in range(config.recordings_per_patient):
        script = draw_script(rng, T, config.duration_range)
        values = np.concatenate([templates.render(k, n, tempo) for k, n in script])
        labels = np.repeat([k for k, _ in script], [n for _, n in script])
        values = values * scale + offset
        if config.noise_std > 0:
            values = values + rng.normal(0.0, config.noise_std, values.shape)
        if shift is not None:
            values = shift.apply(values)
        recordings.append(Recording(meta.patient_id, "synthetic", r, values, labels, schema))
        scripts.append(script)
    return SynthPatient(meta, recordings, scripts, held_out)


def generate_cohorts(config: SynthConfig):
    """All patients in memory: ``(train_patients, test_patients)``."""
    templates = templates_for(config)
    shift = cohort_shift(config)
    patients = [generate_patient(config, i, templates, shift) for i in range(config.n_patients)]
    return [p for p in patients if not p.held_out], [p for p in patients if p.held_out]


def script_shares(scripts) -> dict:
    """Seconds and time fraction per primitive over a list of scripts."""
    totals = np.zeros(N_PRIMITIVES, dtype=np.int64)
    for script in scripts:
        for k, n in script:
            totals[k] += n
    whole = int(totals.sum())
    return {name: {"seconds": int(totals[k]) / SAMPLE_RATE_HZ, "fraction": int(totals[k]) / whole if whole else 0.0}
            for k, name in enumerate(PRIMITIVE_NAMES)}


def generate_dataset(config: SynthConfig, out_dir) -> dict:
    """Write recordings, ``patients.csv``, train/test manifests and ``summary.json`` under ``out_dir``.

    Returns the summary dict.
    """
    out = Path(out_dir)
    rec_dir = out / "recordings"
    try:
        rec_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"{rec_dir}: cannot create output directory ({exc})") from exc
    train, test = generate_cohorts(config)
    shift = cohort_shift(config)
    everyone = train + test
    write_patient_meta(out / "patients.csv", [p.meta for p in everyone])
    summary = {"config": config.to_dict(), "templates": templates_for(config).to_dict(),
               "shift": shift.to_dict() if shift is not None else None, "cohorts": {}, "patients": {}}
    for cohort, members in (("train", train), ("test", test)):
        entries = []
        for p in members:
            for rec in p.recordings:
                rel = f"recordings/{rec.patient_id}_r{rec.repetition_index}.csv"
                write_recording(out / rel, rec)
                entries.append(ManifestEntry(rec.patient_id, rec.activity_id, rec.repetition_index, rel))
            summary["patients"][p.meta.patient_id] = {"cohort": cohort, "shares": script_shares(p.scripts)}
        Manifest(config.schema, "patients.csv", entries).write(out / f"manifest_{cohort}.json")
        summary["cohorts"][cohort] = {"patients": [p.meta.patient_id for p in members],
                                      "shares": script_shares([s for p in members for s in p.scripts])}
    (out / "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return summary


def make_separable_windows(n_windows: int = 500, n_channels: int = 12, seed: int = 0, noise_std: float = 0.05,
                           window_s: float = 2.0, stride: int = 5) -> WindowSet:
    """A balanced window set where every window lies entirely inside one primitive segment."""
    if n_windows < N_PRIMITIVES:
        raise ConfigError(f"need at least {N_PRIMITIVES} windows")
    templates = make_templates(n_channels, seed)
    rng = derive_rng(seed, "synth", "separable")
    schema = compact_schema(n_channels, include_context=False)
    W = window_length(window_s)
    per_class = [n_windows // N_PRIMITIVES + (k < n_windows % N_PRIMITIVES) for k in range(N_PRIMITIVES)]
    recs = []
    for k, m in enumerate(per_class):
        T = W + (m - 1) * stride
        values = templates.render(k, T) + rng.normal(0, noise_std, (T, n_channels))
        recs.append(Recording(f"sep{k}", "separable", 0, values, np.full(T, k), schema))
    return extract_all(recs, window_s, stride)
