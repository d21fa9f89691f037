"""Ingestion of embeddings, softmax tables and labels; synthetic ground
truths; run-record persistence.

File formats
------------
Embedding file (text): one header line ``p=<dim> n=<count>`` followed by one
``<id>,<v1>,...,<vp>`` line per point. UTF-8, ``.`` decimal separator,
exponent notation allowed. Ids must be unique nonnegative integers; all
values must be finite.

Embedding file (binary, for large p): magic ``TDEMB1\\n`` then little-endian
int64 count, int64 dim, int64 ids[count], float64 values[count * dim]
(row-major).

Run record: line-delimited JSON. The first line holds
``{"config": ..., "version": "v1"}``; each further line is one round entry.
Floats are serialized with ``repr`` semantics and round-trip bit-exactly.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DataError, InputError, NumericError, ParseError
from .kernels import KernelSpec, NoiseModel, Point, gram, jittered

RECORD_VERSION = "v1"
_BINARY_MAGIC = b"TDEMB1\n"


# ---------------------------------------------------------------------------
# embeddings and softmax tables
# ---------------------------------------------------------------------------

def _parse_matrix_file(path: str) -> tuple[list[int], np.ndarray]:
    with open(path, "r", encoding="utf-8") as handle:
        lines = handle.read().splitlines()
    if not lines:
        raise ParseError(f"{path}: empty file")
    header = lines[0].split()
    try:
        fields = dict(part.split("=", 1) for part in header)
        dim, count = int(fields["p"]), int(fields["n"])
    except (ValueError, KeyError) as exc:
        raise ParseError(f"{path}:1: malformed header {lines[0]!r}") from exc
    if dim < 1 or count < 0:
        raise ParseError(f"{path}:1: header declares p={dim}, n={count}")
    ids: list[int] = []
    seen: set[int] = set()
    rows = np.empty((count, dim), dtype=np.float64)
    body = [line for line in lines[1:] if line.strip()]
    if len(body) != count:
        raise ParseError(f"{path}: header declares n={count} rows, found {len(body)}")
    for lineno, line in enumerate(body, start=2):
        parts = line.split(",")
        if len(parts) != dim + 1:
            raise ParseError(f"{path}:{lineno}: expected {dim + 1} fields, got {len(parts)}")
        try:
            idx = int(parts[0])
            values = [float(v) for v in parts[1:]]
        except ValueError as exc:
            raise ParseError(f"{path}:{lineno}: {exc}") from exc
        if idx < 0:
            raise ParseError(f"{path}:{lineno}: negative id {idx}")
        if idx in seen:
            raise ParseError(f"{path}:{lineno}: duplicate id {idx}")
        if not all(np.isfinite(values)):
            raise ParseError(f"{path}:{lineno}: non-finite value in row for id {idx}")
        seen.add(idx)
        ids.append(idx)
        rows[len(ids) - 1] = values
    return ids, rows


def load_embeddings(path: str) -> list[Point]:
    """Read a text embedding file into domain points."""
    ids, rows = _parse_matrix_file(path)
    return [Point(index=i, embedding=row) for i, row in zip(ids, rows)]


def save_embeddings(points: Sequence[Point], path: str) -> None:
    """Write points (with embeddings) to the text format, bit-exactly."""
    rows = []
    dim = None
    for point in points:
        if point.embedding is None:
            raise InputError(f"point {point.index} has no embedding to save")
        if dim is None:
            dim = point.embedding.size
        elif point.embedding.size != dim:
            raise InputError("embedding dimensions are inconsistent")
        rows.append(f"{point.index}," + ",".join(repr(float(v)) for v in point.embedding))
    payload = f"p={dim} n={len(rows)}\n" + "\n".join(rows) + ("\n" if rows else "")
    _atomic_write_text(path, payload)


def load_embeddings_binary(path: str) -> list[Point]:
    with open(path, "rb") as handle:
        blob = handle.read()
    if not blob.startswith(_BINARY_MAGIC):
        raise ParseError(f"{path}: not a binary embedding file")
    offset = len(_BINARY_MAGIC)
    header = np.frombuffer(blob, dtype="<i8", count=2, offset=offset)
    count, dim = int(header[0]), int(header[1])
    offset += 16
    ids = np.frombuffer(blob, dtype="<i8", count=count, offset=offset)
    offset += 8 * count
    values = np.frombuffer(blob, dtype="<f8", count=count * dim, offset=offset)
    if len(set(ids.tolist())) != count:
        raise ParseError(f"{path}: duplicate ids in binary file")
    if not np.all(np.isfinite(values)):
        raise ParseError(f"{path}: non-finite values in binary file")
    matrix = values.reshape(count, dim)
    return [Point(index=int(i), embedding=row) for i, row in zip(ids, matrix)]


def save_embeddings_binary(points: Sequence[Point], path: str) -> None:
    ids = np.array([p.index for p in points], dtype="<i8")
    matrix = np.stack([p.embedding for p in points]).astype("<f8")
    blob = (_BINARY_MAGIC
            + np.array([len(points), matrix.shape[1]], dtype="<i8").tobytes()
            + ids.tobytes() + matrix.tobytes())
    _atomic_write_bytes(path, blob)


def load_softmax(path: str):
    """Read a softmax table (same container as embeddings, rows sum to 1)."""
    from .selection import SoftmaxTable

    ids, rows = _parse_matrix_file(path)
    if np.any(rows < 0):
        raise ParseError(f"{path}: softmax rows must be nonnegative")
    sums = rows.sum(axis=1)
    bad = np.where(np.abs(sums - 1.0) > 1e-6)[0]
    if bad.size:
        raise ParseError(f"{path}: row for id {ids[bad[0]]} sums to {sums[bad[0]]!r}, not 1")
    return SoftmaxTable(probs=rows, ids=tuple(ids))


# ---------------------------------------------------------------------------
# synthetic ground truth
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SyntheticTruth:
    """A function sampled from the zero-mean prior over a fixed grid."""

    kernel: KernelSpec
    points: tuple[Point, ...]
    values: np.ndarray
    seed: int


def _covariance_factor(matrix: np.ndarray) -> np.ndarray:
    if matrix.size and float(np.max(np.diag(matrix))) == 0.0:
        return np.zeros_like(matrix)
    try:
        return np.linalg.cholesky(jittered(matrix))
    except np.linalg.LinAlgError:
        eigvals, eigvecs = np.linalg.eigh(matrix)
        if np.min(eigvals) < -1e-6 * max(1.0, float(np.max(np.abs(eigvals)))):
            raise NumericError("prior covariance is not positive semi-definite")
        return eigvecs * np.sqrt(np.maximum(eigvals, 0.0))


def sample_gp_truth(spec: KernelSpec, grid: Sequence[Point], seed: int) -> SyntheticTruth:
    """Draw f* ~ N(0, K) over the grid via a seeded Cholesky transform."""
    if not grid:
        raise InputError("grid must be nonempty")
    factor = _covariance_factor(gram(spec, grid).values)
    draw = np.random.default_rng(seed).standard_normal(len(grid))
    return SyntheticTruth(kernel=spec, points=tuple(grid),
                          values=factor @ draw, seed=seed)


def labeled_oracle(truth: SyntheticTruth, noise: NoiseModel,
                   seed: int) -> Callable[[int], float]:
    """Label provider y = f*(x) + eps with fresh seeded noise per query."""
    lookup = {p.index: float(v) for p, v in zip(truth.points, truth.values)}
    rng = np.random.default_rng(seed)

    def oracle(index: int) -> float:
        if index not in lookup:
            raise DataError(f"oracle has no label for index {index}")
        rho2 = noise.variance_at(index)
        return lookup[index] + np.sqrt(rho2) * float(rng.standard_normal())

    return oracle


# ---------------------------------------------------------------------------
# run records
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RoundEntry:
    round: int
    chosen: tuple[int, ...]
    objectives: tuple[float, ...]
    mean_variance: float
    max_variance: float
    relevant_picks: int
    distinct_relevant: int
    rmse: float | None = None
    wall_time: float = 0.0

    def to_json(self) -> dict:
        return {
            "round": self.round,
            "chosen": list(self.chosen),
            "objectives": list(self.objectives),
            "mean_variance": self.mean_variance,
            "max_variance": self.max_variance,
            "relevant_picks": self.relevant_picks,
            "distinct_relevant": self.distinct_relevant,
            "rmse": self.rmse,
            "wall_time": self.wall_time,
        }

    @classmethod
    def from_json(cls, payload: dict) -> "RoundEntry":
        return cls(
            round=int(payload["round"]),
            chosen=tuple(int(i) for i in payload["chosen"]),
            objectives=tuple(float(v) for v in payload["objectives"]),
            mean_variance=float(payload["mean_variance"]),
            max_variance=float(payload["max_variance"]),
            relevant_picks=int(payload["relevant_picks"]),
            distinct_relevant=int(payload["distinct_relevant"]),
            rmse=None if payload.get("rmse") is None else float(payload["rmse"]),
            wall_time=float(payload.get("wall_time", 0.0)),
        )


@dataclass
class RunRecord:
    """Per-round log of one selection run; config is fixed at creation."""

    config: dict
    rounds: list[RoundEntry] = field(default_factory=list)
    version: str = RECORD_VERSION

    def append(self, entry: RoundEntry) -> None:
        if self.rounds and entry.round <= self.rounds[-1].round:
            raise InputError("round numbers must be strictly increasing")
        self.rounds.append(entry)


def _atomic_write_text(path: str, payload: str) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8", newline="\n") as handle:
        handle.write(payload)
    os.replace(tmp, path)


def _atomic_write_bytes(path: str, payload: bytes) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as handle:
        handle.write(payload)
    os.replace(tmp, path)


def _dump(payload) -> str:
    return json.dumps(payload, sort_keys=True, allow_nan=False, separators=(",", ":"))


def persist_run(record: RunRecord, path: str) -> None:
    """Write a run record to ``path`` (atomic rename on completion)."""
    lines = [_dump({"version": record.version, "config": record.config})]
    lines.extend(_dump(entry.to_json()) for entry in record.rounds)
    _atomic_write_text(path, "\n".join(lines) + "\n")


def save_table(path: str, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    """Write a delimited table; floats keep full precision via ``repr``."""

    def cell(value) -> str:
        if value is None:
            return ""
        if isinstance(value, float):
            return repr(value)
        return str(value)

    lines = ["\t".join(header)]
    lines.extend("\t".join(cell(v) for v in row) for row in rows)
    _atomic_write_text(path, "\n".join(lines) + "\n")


def load_table(path: str) -> tuple[list[str], list[list]]:
    """Read a table written by :func:`save_table` back without loss."""

    def parse(token: str):
        if token == "":
            return None
        try:
            return int(token)
        except ValueError:
            pass
        try:
            value = float(token)
        except ValueError:
            return token
        if not np.isfinite(value):
            raise ParseError(f"{path}: non-finite numeric cell {token!r}")
        return value

    with open(path, "r", encoding="utf-8") as handle:
        lines = handle.read().splitlines()
    if not lines:
        raise ParseError(f"{path}: empty table file")
    header = lines[0].split("\t")
    rows = [[parse(tok) for tok in line.split("\t")] for line in lines[1:] if line]
    for lineno, row in enumerate(rows, start=2):
        if len(row) != len(header):
            raise ParseError(f"{path}:{lineno}: expected {len(header)} columns")
    return header, rows


def _reject_constant(token: str):
    raise ParseError(f"non-finite numeric constant {token!r} in record file")


def load_run(path: str) -> RunRecord:
    """Read a run record back; raises on version mismatch or corruption."""
    with open(path, "r", encoding="utf-8") as handle:
        lines = [line for line in handle.read().splitlines() if line.strip()]
    if not lines:
        raise ParseError(f"{path}: empty record file")
    try:
        header = json.loads(lines[0], parse_constant=_reject_constant)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}:1: {exc}") from exc
    if not isinstance(header, dict) or "version" not in header:
        raise ParseError(f"{path}:1: missing record header")
    if header["version"] != RECORD_VERSION:
        raise DataError(
            f"{path}: record version {header['version']!r} is incompatible "
            f"with supported version {RECORD_VERSION!r}")
    entries = []
    for lineno, line in enumerate(lines[1:], start=2):
        try:
            entries.append(RoundEntry.from_json(
                json.loads(line, parse_constant=_reject_constant)))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"{path}:{lineno}: {exc}") from exc
    record = RunRecord(config=header.get("config", {}))
    for entry in entries:
        record.append(entry)
    return record
