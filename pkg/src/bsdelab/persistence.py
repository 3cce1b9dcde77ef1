"""Binary caches for path bundles and solutions, CSV/JSON writers and digests."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import struct
from pathlib import Path

import numpy as np

from . import _rng
from .bsde_solver import BsdeSolution
from .forward_sde import PathBundle
from .regression import RegressionBasis

MAGIC = b"BSDELAB1"
_HDR = struct.Struct("<8s5Q")  # kind tag, seed, M, N, d, K

__all__ = ["save_bundle", "load_bundle", "save_solution", "load_solution",
           "write_csv", "write_json", "sha256_file", "to_jsonable", "MAGIC"]


def _write_arrays(fh, arrays):
    for a in arrays:
        fh.write(np.ascontiguousarray(a).tobytes())


def save_bundle(bundle: PathBundle, path) -> Path:
    """Little-endian layout: magic, header, grid, paths, increments (f64), counts (i32)."""
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(_HDR.pack(b"bundle\0\0", bundle.seed, bundle.M, bundle.N, bundle.d, bundle.K))
        _write_arrays(fh, [bundle.grid.astype("<f8"), bundle.paths.astype("<f8"),
                           bundle.brownian_increments.astype("<f8"),
                           bundle.jump_counts.astype("<i4")])
    return path


def _read_header(buf, kind):
    if buf[:8] != MAGIC:
        raise ValueError("not a bsdelab cache file")
    tag, seed, M, N, d, K = _HDR.unpack_from(buf, 8)
    tag = tag.rstrip(b"\0")
    if tag != kind:
        raise ValueError(f"cache holds a {tag.decode()}, expected {kind.decode()}")
    return seed, M, N, d, K, 8 + _HDR.size


def _take(buf, off, dtype, shape):
    n = int(np.prod(shape))
    arr = np.frombuffer(buf, dtype=dtype, count=n, offset=off).reshape(shape).copy()
    return arr, off + n * np.dtype(dtype).itemsize


def load_bundle(path) -> PathBundle:
    buf = Path(path).read_bytes()
    seed, M, N, d, K, off = _read_header(buf, b"bundle")
    grid, off = _take(buf, off, "<f8", (N + 1,))
    paths, off = _take(buf, off, "<f8", (M, N + 1, d))
    dW, off = _take(buf, off, "<f8", (M, N, d))
    counts, off = _take(buf, off, "<i4", (M, N, K))
    for a in (grid, paths, dW, counts):
        a.setflags(write=False)
    return PathBundle(grid, paths, dW, counts, int(seed), _rng.SCHEME)


def save_solution(sol: BsdeSolution, path) -> Path:
    """Same header as bundles (seed is the bundle seed); then ``n``, grid, y, z, u, se_y."""
    path = Path(path)
    M, N = sol.M, sol.N
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(_HDR.pack(b"solution", sol.bundle_seed, M, N, sol.z.shape[2], sol.u.shape[2]))
        fh.write(struct.pack("<d", float(sol.n)))
        _write_arrays(fh, [a.astype("<f8") for a in (sol.grid, sol.y, sol.z, sol.u, sol.se_y)])
    return path


def load_solution(path, basis: RegressionBasis | None = None) -> BsdeSolution:
    buf = Path(path).read_bytes()
    seed, M, N, d, K, off = _read_header(buf, b"solution")
    (n,) = struct.unpack_from("<d", buf, off)
    off += 8
    grid, off = _take(buf, off, "<f8", (N + 1,))
    y, off = _take(buf, off, "<f8", (M, N + 1))
    z, off = _take(buf, off, "<f8", (M, N, d))
    u, off = _take(buf, off, "<f8", (M, N, K))
    se, off = _take(buf, off, "<f8", (M, N + 1))
    return BsdeSolution(n=n, grid=grid, y=y, z=z, u=u, se_y=se,
                        basis=basis or RegressionBasis(), bundle_seed=int(seed))


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    return str(v)


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    path.write_text(buf.getvalue())
    return path


def to_jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isfinite(v):
            return v
        return "nan" if math.isnan(v) else ("inf" if v > 0 else "-inf")
    return obj


def write_json(path, obj) -> Path:
    path = Path(path)
    path.write_text(json.dumps(to_jsonable(obj), indent=2, sort_keys=True) + "\n")
    return path


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
