"""CSV/JSON file formats for recordings, patient metadata and dataset manifests.

Recording file: UTF-8 CSV, header = channel names then a final ``label``
column, one row per 10 ms sample. Labels are case-insensitive primitive
names or ``unlabeled``. Patient file: CSV with ``patient_id,paretic_side,fma_score``.
Manifest: JSON with the schema, the patient file and one entry per recording.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import ConfigError, LabelError, ParseError
from ..primitives import label_name, parse_label
from .recording import PatientMeta, Recording
from .schema import ChannelSchema

MANIFEST_VERSION = 1


def _fmt(v: float) -> str:
    return repr(float(v))


def write_recording(path, rec: Recording) -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(rec.channel_names + ["label"])
        for row, lab in zip(rec.values, rec.labels):
            w.writerow([_fmt(v) for v in row] + [label_name(int(lab))])


def load_recording(path, schema: ChannelSchema, patient_id="", activity_id="", repetition_index=0) -> Recording:
    """Parse a recording CSV against ``schema``.

    Sensor columns are required; context columns are optional but must be
    all present or all absent. Column order in the file is free.
    """
    path = Path(path)
    if not path.exists():
        raise ParseError(f"{path}: file not found")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        rows = list(reader)
    if "label" not in header:
        raise ParseError(f"{path}: missing column 'label'")
    col = {name: i for i, name in enumerate(header)}
    for name in schema.sensor_names:
        if name not in col:
            raise ParseError(f"{path}: missing column {name!r}")
    ctx = [c.name for c in schema.context_channels]
    present = [n for n in ctx if n in col]
    if present and len(present) != len(ctx):
        missing = [n for n in ctx if n not in col]
        raise ParseError(f"{path}: missing column {missing[0]!r}")
    names = schema.sensor_names + present
    known = set(names) | {"label"}
    for name in header:
        if name not in known:
            raise ParseError(f"{path}: unknown column {name!r}")
    order = [col[n] for n in names]
    label_col = col["label"]

    cells = []
    labels = np.empty(len(rows), dtype=np.int8)
    for r, row in enumerate(rows, start=2):
        if len(row) != len(header):
            raise ParseError(f"{path}: row {r} has {len(row)} cells, expected {len(header)}")
        try:
            labels[r - 2] = parse_label(row[label_col])
        except LabelError:
            raise ParseError(f"{path}: row {r}, column 'label': unknown label {row[label_col]!r}") from None
        cells.append([row[i] for i in order])
    try:
        values = np.array(cells, dtype=np.float64).reshape(len(rows), len(names))
    except ValueError:
        for r, row in enumerate(cells, start=2):
            for name, cell in zip(names, row):
                try:
                    float(cell)
                except ValueError:
                    raise ParseError(f"{path}: row {r}, column {name!r}: non-numeric cell {cell!r}") from None
        raise
    return Recording(patient_id, activity_id, int(repetition_index), values, labels, schema,
                     context_attached=bool(present))


def write_patient_meta(path, metas) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["patient_id", "paretic_side", "fma_score"])
        for m in metas:
            w.writerow([m.patient_id, m.paretic_side, m.fma_score])


def load_patient_meta(path) -> dict:
    path = Path(path)
    out = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for col in ("patient_id", "paretic_side", "fma_score"):
            if col not in (reader.fieldnames or []):
                raise ParseError(f"{path}: missing column {col!r}")
        for r, row in enumerate(reader, start=2):
            try:
                meta = PatientMeta(row["patient_id"], row["paretic_side"].strip().lower(), int(row["fma_score"]))
            except (ValueError, ConfigError) as exc:
                raise ParseError(f"{path}: row {r}: {exc}") from None
            out[meta.patient_id] = meta
    return out


@dataclass(frozen=True)
class ManifestEntry:
    patient_id: str
    activity_id: str
    repetition_index: int
    path: str


@dataclass
class Manifest:
    schema: ChannelSchema
    patients_path: str
    entries: list
    root: Path = Path(".")

    def resolve(self, rel) -> Path:
        p = Path(rel)
        return p if p.is_absolute() else self.root / p

    def patient_ids(self) -> list:
        seen = []
        for e in self.entries:
            if e.patient_id not in seen:
                seen.append(e.patient_id)
        return seen

    def to_dict(self) -> dict:
        return {
            "version": MANIFEST_VERSION,
            "schema": self.schema.to_dict(),
            "patients": self.patients_path,
            "recordings": [e.__dict__ for e in self.entries],
        }

    def write(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n", encoding="utf-8")


def load_manifest(path) -> Manifest:
    path = Path(path)
    try:
        d = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"{path}: cannot read manifest: {exc}") from None
    if d.get("version") != MANIFEST_VERSION:
        raise ParseError(f"{path}: unsupported manifest version {d.get('version')!r}")
    try:
        entries = [ManifestEntry(e["patient_id"], e["activity_id"], int(e["repetition_index"]), e["path"])
                   for e in d["recordings"]]
        return Manifest(ChannelSchema.from_dict(d["schema"]), d["patients"], entries, path.parent)
    except KeyError as exc:
        raise ParseError(f"{path}: manifest missing key {exc}") from None


def load_dataset(manifest_path):
    """Load every recording listed in a manifest plus the patient metadata.

    Returns ``(manifest, recordings, metas)`` with ``metas`` keyed by patient id.
    """
    man = load_manifest(manifest_path)
    metas = load_patient_meta(man.resolve(man.patients_path))
    recs = []
    for e in man.entries:
        if e.patient_id not in metas:
            raise ParseError(f"{manifest_path}: patient {e.patient_id!r} has no metadata row")
        recs.append(load_recording(man.resolve(e.path), man.schema, e.patient_id, e.activity_id,
                                   e.repetition_index))
    return man, recs, metas
