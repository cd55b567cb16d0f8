"""Binary field files, CSV tables and the run manifest.

A field file is a flat little-endian float64 array:

    d, N, grading code, r_1 ... r_N, Re u_1, Im u_1, ..., Re u_N, Im u_N

so a chained subcommand reads back exactly the samples that were written.
"""

import csv
import hashlib
import io
import json
import os
from pathlib import Path

import numpy as np

from .errors import HartreeError
from .radial_core import RadialField, RadialGrid, build_grid

MODULE = "cli-io"
GRADINGS = ("geometric", "uniform")
_DTYPE = np.dtype("<f8")


def field_bytes(u: RadialField) -> bytes:
    grid = u.grid
    head = np.array([grid.d, grid.n, GRADINGS.index(grid.grading)], dtype=_DTYPE)
    payload = np.empty(2 * grid.n, dtype=_DTYPE)
    payload[0::2] = u.values.real
    payload[1::2] = u.values.imag
    return head.tobytes() + np.asarray(grid.nodes, dtype=_DTYPE).tobytes() + payload.tobytes()


def field_from_bytes(blob: bytes, grid: RadialGrid | None = None) -> RadialField:
    """Decode a field file.  With ``grid`` the stored nodes must match it;
    otherwise the grid is rebuilt from the header and checked against the nodes."""
    data = np.frombuffer(blob, dtype=_DTYPE)
    if data.size < 3:
        raise HartreeError(MODULE, "field-file-invalid", "truncated header")
    d, n, code = data[:3]
    if d != int(d) or n != int(n) or int(code) not in (0, 1) or data.size != 3 + 3 * int(n):
        raise HartreeError(MODULE, "field-file-invalid", "inconsistent header or length")
    n = int(n)
    nodes = data[3:3 + n]
    payload = data[3 + n:]
    if grid is None:
        grid = build_grid(int(d), float(nodes[0]), float(nodes[-1]), n, GRADINGS[int(code)])
    if grid.d != int(d) or grid.n != n or not np.allclose(grid.nodes, nodes, rtol=1e-13, atol=0.0):
        raise HartreeError(MODULE, "grid-mismatch", "field file was written on a different grid")
    return RadialField(grid, payload[0::2] + 1j * payload[1::2])


def write_field(path, u: RadialField) -> bytes:
    blob = field_bytes(u)
    Path(path).write_bytes(blob)
    return blob


def read_field(path, grid: RadialGrid | None = None) -> RadialField:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise HartreeError(MODULE, "field-file-invalid", f"cannot read {path}: {exc.strerror}") from None
    return field_from_bytes(blob, grid)


def csv_text(header, rows) -> str:
    """CSV with floats written by repr, so identical numbers give identical bytes."""
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(header)
    for row in rows:
        wr.writerow([repr(float(x)) if isinstance(x, (float, np.floating, int, np.integer)) else x
                     for x in row])
    return buf.getvalue()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer, int)) and not isinstance(obj, bool):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def json_text(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"


class OutputDir:
    """Collects emitted files and their checksums; the manifest goes last."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.mkdir(parents=True, exist_ok=True)
        self.files = {}

    def write(self, name: str, data: bytes | str) -> Path:
        blob = data.encode("utf-8") if isinstance(data, str) else data
        target = self.path / name
        target.write_bytes(blob)
        self.files[name] = {"sha256": hashlib.sha256(blob).hexdigest(), "bytes": len(blob)}
        return target

    def write_manifest(self, manifest: dict, name: str = "manifest.json") -> Path:
        body = dict(manifest)
        body["files"] = dict(sorted(self.files.items()))
        tmp = self.path / (name + ".tmp")
        tmp.write_text(json_text(body), encoding="utf-8")
        os.replace(tmp, self.path / name)
        return self.path / name


def verify_manifest(path) -> list[str]:
    """Names of listed files whose checksum no longer matches (empty if all match)."""
    path = Path(path)
    body = json.loads(path.read_text(encoding="utf-8"))
    bad = []
    for name, meta in body.get("files", {}).items():
        target = path.parent / name
        if not target.exists() or hashlib.sha256(target.read_bytes()).hexdigest() != meta["sha256"]:
            bad.append(name)
    return bad
