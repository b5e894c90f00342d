"""Matrix files: a CSV text form and a fixed-header little-endian binary form.

CSV: first line ``# name rows cols``, then comma-separated rows with 17
significant digits.  BIN: a 32-byte header (magic ``DPCA``, u16 version,
u32 rows, u32 cols, u8 dtype tag, zero padding) followed by row-major
float64 values.
"""

import os
import struct

import numpy as np

from depca.errors import MatrixFileError

MAGIC = b"DPCA"
VERSION = 1
DTYPE_F64 = 1
HEADER = struct.Struct("<4sHIIB17x")
assert HEADER.size == 32

FORMATS = ("csv", "bin")


def _as_2d(a):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise MatrixFileError(f"can only store 1-D or 2-D arrays, got shape {a.shape}")
    return a


def format_from_path(path, default="csv"):
    ext = os.path.splitext(str(path))[1].lower().lstrip(".")
    return ext if ext in FORMATS else default


def write_matrix(path, a, fmt=None, name=None):
    a = _as_2d(a)
    fmt = fmt or format_from_path(path)
    name = name or os.path.splitext(os.path.basename(str(path)))[0]
    if fmt == "csv":
        if any(c.isspace() for c in name):
            raise MatrixFileError(f"matrix name {name!r} contains whitespace")
        lines = [f"# {name} {a.shape[0]} {a.shape[1]}"]
        lines += [",".join(f"{v:.17g}" for v in row) for row in a]
        with open(path, "w", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")
    elif fmt == "bin":
        with open(path, "wb") as fh:
            fh.write(HEADER.pack(MAGIC, VERSION, a.shape[0], a.shape[1], DTYPE_F64))
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())
    else:
        raise MatrixFileError(f"unknown matrix format {fmt!r}")


def _check_nan(a, path, allow_nan):
    if not allow_nan and np.isnan(a).any():
        raise MatrixFileError(f"{path}: contains NaN (pass allow_nan to accept)")
    return a


def _read_csv(path):
    with open(path) as fh:
        head = fh.readline().split()
        if len(head) != 4 or head[0] != "#":
            raise MatrixFileError(f"{path}: malformed header, expected '# name rows cols'")
        try:
            rows, cols = int(head[2]), int(head[3])
        except ValueError:
            raise MatrixFileError(f"{path}: malformed header dimensions {head[2:]}") from None
        body = [ln for ln in fh.read().splitlines() if ln.strip()]
    if len(body) != rows:
        raise MatrixFileError(f"{path}: header says {rows} rows, found {len(body)}")
    out = np.empty((rows, cols))
    for i, ln in enumerate(body):
        vals = ln.split(",")
        if len(vals) != cols:
            raise MatrixFileError(f"{path}: line {i + 2} has {len(vals)} values, expected {cols}")
        try:
            out[i] = [float(v) for v in vals]
        except ValueError as exc:
            raise MatrixFileError(f"{path}: line {i + 2}: {exc}") from None
    return out


def _read_bin(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < HEADER.size:
        raise MatrixFileError(f"{path}: file shorter than the {HEADER.size}-byte header")
    magic, version, rows, cols, tag = HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise MatrixFileError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise MatrixFileError(f"{path}: unsupported version {version}")
    if tag != DTYPE_F64:
        raise MatrixFileError(f"{path}: unsupported dtype tag {tag}")
    want = rows * cols * 8
    got = len(raw) - HEADER.size
    if got != want:
        raise MatrixFileError(f"{path}: expected {want} payload bytes, found {got}")
    return np.frombuffer(raw, dtype="<f8", offset=HEADER.size).reshape(rows, cols).astype(np.float64)


def read_matrix(path, allow_nan=False):
    with open(path, "rb") as fh:
        lead = fh.read(4)
    a = _read_bin(path) if lead == MAGIC else _read_csv(path)
    return _check_nan(a, path, allow_nan)
