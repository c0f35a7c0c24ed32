"""Result files: CSV tables, a JSON summary and the binary grid snapshot format.

Binary grid files start with a 64-byte little-endian header:

    offset  size  field
    0       8     magic b"HCDGRID1"
    8       4     version (uint32, currently 1)
    12      4     nx (uint32)
    16      4     ny (uint32)
    20      4     ncomp (uint32), number of stacked complex components
    24      4     dtype code (uint32, 1 = complex128)
    28      8     spacing (float64)
    36      8     span (float64)
    44      8     time (float64)
    52      12    zero padding

followed by ncomp * nx * ny complex128 values, component-major, then x, then y
(C order of an array shaped (ncomp, nx, ny)).
"""

import json
from pathlib import Path
from typing import Any, Dict, Iterable, List, Sequence, Tuple

import numpy as np

from .errors import InvalidArgumentError

GRID_MAGIC = b"HCDGRID1"
GRID_VERSION = 1
DTYPE_COMPLEX128 = 1

HEADER_DTYPE = np.dtype([
    ("magic", "S8"),
    ("version", "<u4"),
    ("nx", "<u4"),
    ("ny", "<u4"),
    ("ncomp", "<u4"),
    ("dtype", "<u4"),
    ("spacing", "<f8"),
    ("span", "<f8"),
    ("time", "<f8"),
    ("pad", "V12"),
])
assert HEADER_DTYPE.itemsize == 64


def create_dirs(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def to_jsonable(value: Any) -> Any:
    """Complex numbers become {"re", "im"}; arrays become lists"""
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return to_jsonable(value.tolist())
    if isinstance(value, (complex, np.complexfloating)):
        return {"re": float(value.real), "im": float(value.imag)}
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.bool_):
        return bool(value)
    return value


def write_json(path: Path, payload: Dict[str, Any]) -> Path:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(to_jsonable(payload), f, indent=2, sort_keys=True)
    return path


def write_csv(path: Path, columns: Sequence[Tuple[str, str]], rows: np.ndarray) -> Path:
    """columns are (name, unit) pairs; the header row reads name[unit],..."""
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    if rows.shape[1] != len(columns):
        raise InvalidArgumentError(f"{len(columns)} columns declared, {rows.shape[1]} given")
    header = ",".join(f"{name}[{unit}]" for name, unit in columns)
    np.savetxt(path, rows, delimiter=",", header=header, comments="", fmt="%.17g")
    return path


def write_band_csv(path: Path, samples: Iterable) -> Path:
    rows = [[s.alpha[0], s.alpha[1], s.omega1, s.omega2] for s in samples]
    columns = [("alpha_x", "1/length"), ("alpha_y", "1/length"), ("omega1", "1/time"), ("omega2", "1/time")]
    return write_csv(path, columns, np.array(rows))


def write_grid_binary(path: Path, components: np.ndarray, spacing: float, span: float, time: float) -> Path:
    data = np.asarray(components, dtype="<c16")
    if data.ndim == 2:
        data = data[None]
    if data.ndim != 3:
        raise InvalidArgumentError(f"grid data must be (ncomp, nx, ny), got shape {data.shape}")
    header = np.zeros(1, dtype=HEADER_DTYPE)
    header["magic"] = GRID_MAGIC
    header["version"] = GRID_VERSION
    header["ncomp"], header["nx"], header["ny"] = data.shape
    header["dtype"] = DTYPE_COMPLEX128
    header["spacing"] = spacing
    header["span"] = span
    header["time"] = time
    with open(path, "wb") as f:
        f.write(header.tobytes())
        f.write(np.ascontiguousarray(data).tobytes())
    return path


def read_grid_binary(path: Path) -> Tuple[Dict[str, Any], np.ndarray]:
    raw = Path(path).read_bytes()
    if len(raw) < HEADER_DTYPE.itemsize:
        raise InvalidArgumentError(f"{path} is too short for a grid header")
    header = np.frombuffer(raw[:HEADER_DTYPE.itemsize], dtype=HEADER_DTYPE)[0]
    if header["magic"] != GRID_MAGIC:
        raise InvalidArgumentError(f"{path} is not a grid file (magic {header['magic']!r})")
    if header["dtype"] != DTYPE_COMPLEX128:
        raise InvalidArgumentError(f"unsupported dtype code {header['dtype']}")
    shape = (int(header["ncomp"]), int(header["nx"]), int(header["ny"]))
    data = np.frombuffer(raw[HEADER_DTYPE.itemsize:], dtype="<c16")
    if data.size != np.prod(shape):
        raise InvalidArgumentError(f"{path} holds {data.size} values, header announces {shape}")
    meta = {
        "version": int(header["version"]),
        "nx": shape[1],
        "ny": shape[2],
        "ncomp": shape[0],
        "spacing": float(header["spacing"]),
        "span": float(header["span"]),
        "time": float(header["time"]),
    }
    return meta, data.reshape(shape)


def write_grid_csv(path: Path, points: np.ndarray, components: Sequence[np.ndarray], names: List[str]) -> Path:
    """One row per grid point: x, y and real/imag parts of each component"""
    cols = [("x", "length"), ("y", "length")]
    data = [points[..., 0].ravel(), points[..., 1].ravel()]
    for name, values in zip(names, components):
        cols += [(f"{name}_re", "amplitude"), (f"{name}_im", "amplitude")]
        data += [np.real(values).ravel(), np.imag(values).ravel()]
    return write_csv(path, cols, np.stack(data, axis=1))
