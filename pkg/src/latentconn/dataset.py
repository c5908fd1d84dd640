"""Subject manifests and per-subject edge files."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .connectome import assemble_input, read_edges_csv
from .exceptions import ShapeError, ValidationError

GROUPS = ("ASD", "NC")
MANIFEST_COLUMNS = ("subject_id", "group", "age", "fiq")


@dataclass
class SubjectRecord:
    subject_id: str
    group: str
    age: float
    fiq: float | None = None
    edges: np.ndarray | None = None

    @property
    def is_asd(self):
        return self.group == "ASD"


def _fmt(x):
    return "" if x is None or (isinstance(x, float) and math.isnan(x)) else f"{x:.9g}"


def write_manifest(path, records):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_COLUMNS)
        for r in records:
            w.writerow([r.subject_id, r.group, _fmt(r.age), _fmt(r.fiq)])


def read_manifest(path):
    """Parse a manifest; the ``fiq`` column may be absent or blank per row."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        fields = [f.strip() for f in (reader.fieldnames or [])]
        missing = {"subject_id", "group", "age"} - set(fields)
        if missing:
            raise ValidationError(f"{path}: manifest lacks column(s) {sorted(missing)}")
        records = []
        seen = set()
        for line, row in enumerate(reader, start=2):
            row = {k.strip(): (v or "").strip() for k, v in row.items() if k}
            sid, group = row["subject_id"], row["group"].upper()
            if group not in GROUPS:
                raise ValidationError(f"{path}:{line}: group must be ASD or NC, got {row['group']!r}")
            if sid in seen:
                raise ValidationError(f"{path}:{line}: duplicate subject_id {sid!r}")
            seen.add(sid)
            try:
                age = float(row["age"])
                fiq = float(row["fiq"]) if row.get("fiq") else None
            except ValueError as exc:
                raise ValidationError(f"{path}:{line}: {exc}") from None
            records.append(SubjectRecord(sid, group, age, fiq))
    if not records:
        raise ValidationError(f"{path}: manifest has no subjects")
    return records


def load_cohort(manifest, edges_dir):
    """Manifest records with their edge vectors attached, in manifest order."""
    records = read_manifest(manifest)
    edges_dir = Path(edges_dir)
    width = None
    for r in records:
        path = edges_dir / f"{r.subject_id}.csv"
        if not path.exists():
            raise ValidationError(f"missing edge file for subject {r.subject_id}: {path}")
        r.edges = read_edges_csv(path)
        if width is None:
            width = r.edges.size
        elif r.edges.size != width:
            raise ShapeError(f"{path}: {r.edges.size} edges, expected {width}")
    return records


def design_matrix(records):
    """(N, n_edges + 1) model inputs: edges then age / 100."""
    return np.vstack([assemble_input(r.edges, r.age) for r in records])


def labels_of(records):
    return np.array([1 if r.is_asd else 0 for r in records])
