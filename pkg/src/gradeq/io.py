"""CSV and JSON plumbing shared by the command line and the tests.

Floats are written with ``repr`` so that a value read back with ``float``
is bit-identical to the one written.
"""

from __future__ import annotations

import csv
import json
import math
import os
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .pipelines import Stream

SCHEMA_VERSION = "1"
METRIC_COLUMNS = ["avg_grad_norm", "identity_residual", "bound", "satisfied"]


class IngestError(ValueError):
    """Malformed input file; the message names the offending row when known."""


def fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return ""
        return repr(v)
    return str(v)


def write_csv(path: str, columns: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(columns))
        for row in rows:
            if len(row) != len(columns):
                raise ValueError("row width does not match header")
            w.writerow([fmt(v) for v in row])


def read_csv(path: str) -> Tuple[List[str], List[List[str]]]:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise IngestError(f"{path}: empty file, expected a header row") from None
            rows = [r for r in reader if r]
    except UnicodeDecodeError as exc:
        raise IngestError(f"{path}: not valid UTF-8 ({exc})") from None
    except FileNotFoundError:
        raise IngestError(f"{path}: no such file") from None
    header = [h.strip() for h in header]
    if len(set(header)) != len(header):
        raise IngestError(f"{path}: duplicate column names in header")
    for i, r in enumerate(rows):
        if len(r) != len(header):
            raise IngestError(f"{path}: row {i + 1} has {len(r)} cells, header has {len(header)}")
    return header, rows


def _num(cell: str, row: int, col: str) -> float:
    try:
        v = float(cell.strip())
    except ValueError:
        raise IngestError(f"row {row}: column {col!r} is not a number: {cell!r}") from None
    if not math.isfinite(v):
        raise IngestError(f"row {row}: column {col!r} is not finite: {cell!r}")
    return v


def ingest_csv(path: str, schema: str = "stream", warn=None, disjoint: bool = False):
    """Read a stream (``schema="stream"``) or battles (``schema="battles"``).

    Streams need a ``y`` column; ``f`` (or its alias ``pred``) defaults to 0
    with a warning; ``group:<label>`` columns form the group vectors.
    Battles need ``model_a``, ``model_b``, ``winner`` and return
    ``(battles, names)`` with models indexed by first appearance.
    """
    header, rows = read_csv(path)
    if schema == "battles":
        need = ["model_a", "model_b", "winner"]
        missing = [c for c in need if c not in header]
        if missing:
            raise IngestError(f"{path}: missing columns {missing}")
        ia, ib, iw = (header.index(c) for c in need)
        triples = []
        for i, r in enumerate(rows, start=1):
            a, b, w = r[ia].strip(), r[ib].strip(), r[iw].strip()
            if not a or not b:
                raise IngestError(f"row {i}: empty model name")
            if a == b:
                raise IngestError(f"row {i}: a model cannot face itself")
            if w not in (a, b):
                raise IngestError(f"row {i}: winner {w!r} is neither {a!r} nor {b!r}")
            triples.append((a, b, w))
        return index_battles(triples)
    if schema != "stream":
        raise ValueError(f"unknown schema {schema!r}")
    if "y" not in header:
        raise IngestError(f"{path}: missing required column 'y'")
    fcol = "f" if "f" in header else ("pred" if "pred" in header else None)
    if fcol is None and warn is not None:
        warn("no 'f' column; base predictions default to 0")
    gcols = [c for c in header if c.startswith("group:")]
    allowed = {"y", "f", "pred", "x_id"} | set(gcols)
    unknown = [c for c in header if c not in allowed]
    if unknown:
        raise IngestError(f"{path}: unknown columns {unknown}")
    iy = header.index("y")
    iff = header.index(fcol) if fcol else None
    ig = [header.index(c) for c in gcols]
    ids = [] if "x_id" in header else None
    T = len(rows)
    y = np.empty(T)
    f = np.zeros(T)
    z = np.empty((T, len(gcols))) if gcols else None
    for i, r in enumerate(rows):
        y[i] = _num(r[iy], i + 1, "y")
        if iff is not None:
            f[i] = _num(r[iff], i + 1, fcol)
        for k, j in enumerate(ig):
            v = _num(r[j], i + 1, gcols[k])
            if v not in (0.0, 1.0):
                raise IngestError(f"row {i + 1}: group column {gcols[k]!r} must be 0 or 1")
            z[i, k] = v
        if ids is not None:
            ids.append(r[header.index("x_id")])
    labels = [c[len("group:"):] for c in gcols] or None
    if disjoint and z is not None:
        bad = np.nonzero(z.sum(axis=1) > 1)[0]
        if bad.size:
            raise IngestError(f"row {int(bad[0]) + 1}: groups declared disjoint but several flags are set")
    return Stream(f, y, z, labels, disjoint=disjoint and z is not None, ids=ids)


def index_battles(triples: Sequence[Tuple[str, str, str]]):
    """Map named battles to ``(a, b, y)`` rows; ``y = 1`` when ``b`` wins."""
    names: List[str] = []
    pos = {}
    out = np.empty((len(triples), 3))
    for i, (a, b, w) in enumerate(triples):
        for n in (a, b):
            if n not in pos:
                pos[n] = len(names)
                names.append(n)
        out[i] = (pos[a], pos[b], 1.0 if w == b else 0.0)
    return out, names


def write_stream_csv(stream: Stream, path: str) -> None:
    cols = ["f", "y"]
    if stream.z is not None:
        cols += [f"group:{lab}" for lab in stream.labels]

    def rows():
        for t in range(stream.T):
            row = [float(stream.f[t]), float(stream.y[t])]
            if stream.z is not None:
                row += [int(v) for v in stream.z[t]]
            yield row

    write_csv(path, cols, rows())


def write_battles_csv(battles, path: str, names: Optional[Sequence[str]] = None) -> None:
    battles = np.asarray(battles)

    def nm(i):
        return names[int(i)] if names is not None else f"m{int(i)}"

    rows = ([nm(a), nm(b), nm(b) if y == 1 else nm(a)] for a, b, y in battles)
    write_csv(path, ["model_a", "model_b", "winner"], rows)


def write_json(path: str, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _jsonable(o):
    if isinstance(o, dict):
        return {str(k): _jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_jsonable(v) for v in o]
    if isinstance(o, np.ndarray):
        return [_jsonable(v) for v in o.tolist()]
    if isinstance(o, (np.bool_, bool)):
        return bool(o)
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (float, np.floating)):
        o = float(o)
        return o if math.isfinite(o) else None
    return o


def ensure_dir(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path
