"""Loading, validation and light preprocessing of per-subject ROI time series.

Data files are tab-separated with a header row of node labels and one row per
time point. Annotation files hold one task label per line.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np


class IngestError(ValueError):
    """Raised for malformed or inconsistent input files and sessions."""


@dataclass(frozen=True, eq=False)
class SubjectSession:
    """One subject/acquisition: an ``n x p`` time-series matrix plus labels."""

    subject_id: str
    acquisition: str
    data: np.ndarray
    node_labels: tuple[str, ...]
    task_labels: tuple[str, ...]
    sampling_interval: float = 0.72

    def __post_init__(self):
        data = np.array(self.data, dtype=float)
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "node_labels", tuple(str(x) for x in self.node_labels))
        object.__setattr__(self, "task_labels", tuple(str(x) for x in self.task_labels))

        if data.ndim != 2:
            raise IngestError(f"data must be 2-d, got shape {data.shape}")
        n, p = data.shape
        if n < 2 or p < 2:
            raise IngestError(f"need n >= 2 and p >= 2, got n={n}, p={p}")
        bad = np.argwhere(~np.isfinite(data))
        if len(bad):
            i, j = bad[0]
            raise IngestError(f"non-finite value at row {i + 1}, col {j + 1}")
        if len(self.task_labels) != n:
            raise IngestError(
                f"annotation length mismatch: {len(self.task_labels)} labels for {n} rows"
            )
        if len(self.node_labels) != p:
            raise IngestError(f"{len(self.node_labels)} node labels for {p} columns")
        _check_unique(self.node_labels)
        if not self.sampling_interval > 0:
            raise IngestError("sampling_interval must be positive")

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def p(self) -> int:
        return self.data.shape[1]

    def with_data(self, data: np.ndarray) -> "SubjectSession":
        return replace(self, data=data)


@dataclass(frozen=True)
class Population:
    """Ordered sessions sharing a common node set."""

    sessions: tuple[SubjectSession, ...] = field(default_factory=tuple)

    def __post_init__(self):
        sessions = tuple(self.sessions)
        object.__setattr__(self, "sessions", sessions)
        if sessions:
            labels = sessions[0].node_labels
            for s in sessions[1:]:
                if s.node_labels != labels:
                    raise IngestError(
                        f"session {s.subject_id}/{s.acquisition} has different node labels"
                    )

    def __len__(self):
        return len(self.sessions)

    def __iter__(self):
        return iter(self.sessions)

    @property
    def node_labels(self) -> tuple[str, ...]:
        return self.sessions[0].node_labels if self.sessions else ()

    @property
    def subject_ids(self) -> list[str]:
        seen: dict[str, None] = {}
        for s in self.sessions:
            seen.setdefault(s.subject_id, None)
        return list(seen)

    @property
    def S(self) -> int:
        return len(self.subject_ids)

    def filter(self, acquisition: str | None = None) -> "Population":
        if acquisition is None:
            return self
        return Population(tuple(s for s in self.sessions if s.acquisition == acquisition))


def _check_unique(labels: Sequence[str], where: str = ""):
    seen = set()
    for lab in labels:
        if lab in seen:
            raise IngestError(f"duplicate node label {lab!r}{where}")
        seen.add(lab)


def load_session(data_path, annotation_path, subject_id: str, acquisition: str,
                 sampling_interval: float = 0.72) -> SubjectSession:
    """Read a TSV data file and its annotation file into a validated session."""
    data_path = Path(data_path)
    annotation_path = Path(annotation_path)
    with open(data_path, newline="") as fh:
        reader = csv.reader(fh, delimiter="\t")
        try:
            header = next(reader)
        except StopIteration:
            raise IngestError(f"{data_path}: empty file") from None
        _check_unique(header, where=f" in {data_path} header")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise IngestError(
                    f"{data_path}:{lineno}: expected {len(header)} fields, got {len(row)}"
                )
            values = []
            for col, cell in enumerate(row, start=1):
                try:
                    v = float(cell)
                except ValueError:
                    raise IngestError(
                        f"{data_path}:{lineno}: non-numeric value {cell!r} in col {col}"
                    ) from None
                if not math.isfinite(v):
                    raise IngestError(
                        f"{data_path}:{lineno}: non-finite value at row {lineno - 1}, col {col}"
                    )
                values.append(v)
            rows.append(values)

    with open(annotation_path, encoding="utf-8") as fh:
        labels = [line.rstrip("\r\n") for line in fh]
    while labels and labels[-1] == "":
        labels.pop()
    if len(labels) != len(rows):
        raise IngestError(
            f"{annotation_path}: annotation length mismatch: "
            f"{len(labels)} labels for {len(rows)} data rows in {data_path}"
        )

    return SubjectSession(
        subject_id=subject_id,
        acquisition=acquisition,
        data=np.array(rows, dtype=float).reshape(len(rows), len(header)),
        node_labels=tuple(header),
        task_labels=tuple(labels),
        sampling_interval=sampling_interval,
    )


def write_session(session: SubjectSession, data_path, annotation_path):
    """Write ``session`` in the format :func:`load_session` reads."""
    with open(data_path, "w", newline="") as fh:
        fh.write("\t".join(session.node_labels) + "\n")
        for row in session.data:
            fh.write("\t".join(repr(float(v)) for v in row) + "\n")
    with open(annotation_path, "w", encoding="utf-8") as fh:
        for lab in session.task_labels:
            fh.write(f"{lab}\n")


MANIFEST_COLUMNS = ("subject_id", "acquisition", "data_path", "annotation_path")


def read_manifest(path) -> list[dict[str, str]]:
    """Parse a session manifest. Relative paths resolve against the manifest's directory."""
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh, delimiter="\t")
        missing = set(MANIFEST_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise IngestError(f"{path}: manifest missing columns {sorted(missing)}")
        entries = []
        for row in reader:
            entry = {k: row[k] for k in MANIFEST_COLUMNS}
            for key in ("data_path", "annotation_path"):
                p = Path(entry[key])
                entry[key] = str(p if p.is_absolute() else path.parent / p)
            entries.append(entry)
    return entries


def write_manifest(path, entries: Sequence[dict[str, str]]):
    with open(path, "w", newline="") as fh:
        fh.write("\t".join(MANIFEST_COLUMNS) + "\n")
        for e in entries:
            fh.write("\t".join(str(e[k]) for k in MANIFEST_COLUMNS) + "\n")


def load_population(manifest_path, sampling_interval: float = 0.72) -> Population:
    entries = read_manifest(manifest_path)
    return Population(tuple(
        load_session(e["data_path"], e["annotation_path"], e["subject_id"], e["acquisition"],
                     sampling_interval=sampling_interval)
        for e in entries
    ))


def dct_basis(n: int, n_regressors: int) -> np.ndarray:
    """Orthonormal DCT-II regressors, shape ``(n, n_regressors)``; column k has frequency k/(2n dt)."""
    t = np.arange(n)
    k = np.arange(n_regressors)
    basis = np.cos(np.pi * np.outer(2 * t + 1, k) / (2 * n))
    basis[:, 0] = 1.0
    return basis / np.linalg.norm(basis, axis=0)


def n_highpass_regressors(n: int, sampling_interval: float, cutoff: float) -> int:
    return int(math.floor(2 * n * sampling_interval * cutoff)) + 1


def highpass_filter(session: SubjectSession, cutoff: float = 1.0 / 130) -> SubjectSession:
    """Remove slow drifts by regressing out every DCT regressor below ``cutoff`` Hz.

    The constant regressor is always included, so filtered columns have zero mean.
    """
    if not cutoff > 0:
        raise IngestError("cutoff must be positive")
    nyquist = 1.0 / (2 * session.sampling_interval)
    if cutoff >= nyquist:
        raise IngestError(f"cutoff {cutoff} Hz is at or above Nyquist ({nyquist} Hz)")
    basis = dct_basis(session.n, n_highpass_regressors(session.n, session.sampling_interval, cutoff))
    X = session.data
    return session.with_data(X - basis @ (basis.T @ X))


def standardize(session: SubjectSession) -> SubjectSession:
    """Center each column and scale it to unit sample variance (ddof=1)."""
    X = session.data
    sd = X.std(axis=0, ddof=1)
    scale = np.maximum(np.abs(X).max(axis=0), 1.0)
    for j in np.flatnonzero(sd <= 1e-12 * scale):
        raise IngestError(f"zero-variance column for node {session.node_labels[j]!r}")
    return session.with_data((X - X.mean(axis=0)) / sd)
