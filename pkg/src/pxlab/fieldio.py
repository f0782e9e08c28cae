"""Single-file storage for masks and grid fields.

Layout: one line of JSON (the header), a newline, then the raw blob.  Masks
are bit-packed row-major; scalar fields are little-endian float64 row-major.
Measures are plain JSON ``{"atoms": [[x, y, m], ...], "density": path}``.
"""

import json
from pathlib import Path

import numpy as np

from .geometry import DomainMask, Grid


def _write(path, header, blob):
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode())
        fh.write(b"\n")
        fh.write(blob)


def _read(path):
    raw = Path(path).read_bytes()
    cut = raw.index(b"\n")
    return json.loads(raw[:cut].decode()), raw[cut + 1:]


def save_mask(path, mask):
    header = {
        "kind": "mask",
        "grid": mask.grid.to_dict(),
        "corners": mask.corners.tolist(),
        "label": mask.label,
    }
    _write(path, header, np.packbits(mask.inside.ravel()).tobytes())


def load_mask(path):
    header, blob = _read(path)
    if header.get("kind") != "mask":
        raise ValueError(f"{path} is not a mask file")
    grid = Grid.from_dict(header["grid"])
    count = int(np.prod(grid.shape))
    bits = np.unpackbits(np.frombuffer(blob, dtype=np.uint8), count=count)
    inside = bits.astype(bool).reshape(grid.shape)
    return DomainMask(grid, inside, np.asarray(header["corners"]), header["label"])


def save_field(path, grid, values, meta=None):
    values = np.asarray(values, dtype="<f8")
    if values.shape != grid.shape:
        raise ValueError("field shape does not match grid")
    header = {"kind": "field", "grid": grid.to_dict(), "meta": meta or {}}
    _write(path, header, np.ascontiguousarray(values).tobytes())


def load_field(path):
    """Return ``(grid, values, meta)``."""
    header, blob = _read(path)
    if header.get("kind") != "field":
        raise ValueError(f"{path} is not a field file")
    grid = Grid.from_dict(header["grid"])
    values = np.frombuffer(blob, dtype="<f8").reshape(grid.shape).astype(float)
    return grid, values, header.get("meta", {})


def save_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, default=_jsonable))


def load_json(path):
    return json.loads(Path(path).read_text())


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, (np.bool_,)):
        return bool(o)
    raise TypeError(f"not serializable: {type(o)}")
