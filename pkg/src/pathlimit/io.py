"""CSV, JSON and binary export of kernels, wave functions, paths and reports.

CSV files are comma-delimited with a header row and ``%.17g`` numbers, so
values round-trip exactly. The binary layout (little-endian) is::

    bytes 0-3   magic b"PLK1"
    uint32      ndim
    uint32      flags (bit 0 set: complex, stored as interleaved re, im)
    uint64      dims[ndim]
    float64     data, C order
"""

from __future__ import annotations

import json
import math
import struct
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

MAGIC = b"PLK1"


def format_number(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, str):
        return value
    return "%.17g" % float(value)


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    lines = [",".join(header)]
    lines.extend(",".join(format_number(v) for v in row) for row in rows)
    path.write_text("\n".join(lines) + "\n")
    return path


def read_csv(path) -> tuple[list[str], np.ndarray]:
    text = Path(path).read_text().splitlines()
    header = text[0].split(",")
    data = np.array([[float(v) for v in line.split(",")] for line in text[1:] if line])
    return header, data.reshape(-1, len(header))


def kernel_to_csv(kernel, path) -> Path:
    """Long format: one row per (x, x_in) pair."""
    x_out = kernel.grid_out.x
    x_in = kernel.grid_in.x
    entries = np.asarray(kernel.entries, dtype=complex)
    rows = (
        (x_out[i], x_in[j], entries[i, j].real, entries[i, j].imag)
        for i in range(len(x_out))
        for j in range(len(x_in))
    )
    return write_csv(path, ("x", "x_in", "re", "im"), rows)


def wavefunction_to_csv(psi, path) -> Path:
    amp = psi.amplitudes
    return write_csv(path, ("x", "re", "im"), zip(psi.grid.x, amp.real, amp.imag))


def path_to_csv(result, path) -> Path:
    """Two columns (tau, X) for a least-action result or a one-row SystemPaths."""
    paths = getattr(result, "path", result)
    return write_csv(path, ("tau", "X"), zip(paths.grid.times, paths.positions[0]))


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def _clean(obj):
    # JSON has no NaN/inf; write them as null
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def write_json(path, payload) -> Path:
    path = Path(path)
    text = json.dumps(_clean(json.loads(json.dumps(payload, default=_json_default))),
                      indent=2, sort_keys=True)
    path.write_text(text + "\n")
    return path


def write_binary(path, array) -> Path:
    array = np.asarray(array)
    is_complex = np.iscomplexobj(array)
    data = np.ascontiguousarray(array, dtype="<c16" if is_complex else "<f8")
    header = MAGIC + struct.pack("<II", data.ndim, 1 if is_complex else 0)
    header += struct.pack(f"<{data.ndim}Q", *data.shape)
    path = Path(path)
    path.write_bytes(header + data.tobytes())
    return path


def read_binary(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise ValueError(f"{path}: not a PLK1 file")
    ndim, flags = struct.unpack_from("<II", raw, 4)
    dims = struct.unpack_from(f"<{ndim}Q", raw, 12)
    offset = 12 + 8 * ndim
    dtype = "<c16" if flags & 1 else "<f8"
    return np.frombuffer(raw, dtype=dtype, offset=offset).reshape(dims).copy()
