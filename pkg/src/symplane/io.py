"""Point-cloud readers/writers (XYZ, PLY, OBJ) and key=value records."""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np

from .geometry import PointCloud, SymmetryPlane

_PLY_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}


class CloudFormatError(ValueError):
    pass


def read_cloud(path) -> PointCloud:
    """Read XYZ, PLY or OBJ by extension (anything unknown is parsed as XYZ)."""
    path = Path(path)
    ext = path.suffix.lower()
    if ext == ".ply":
        pts = read_ply(path)
    elif ext == ".obj":
        pts = read_obj(path)
    else:
        pts = read_xyz(path)
    if len(pts) == 0:
        raise CloudFormatError(f"{path}: no points")
    return PointCloud(pts, id=path.stem)


def read_xyz(path) -> np.ndarray:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.replace(",", " ").split()
            if len(parts) < 3:
                raise CloudFormatError(f"{path}:{lineno}: expected 'x y z'")
            try:
                rows.append([float(p) for p in parts[:3]])
            except ValueError as exc:
                raise CloudFormatError(f"{path}:{lineno}: {exc}") from None
    return np.asarray(rows, dtype=float).reshape(-1, 3)


def read_obj(path) -> np.ndarray:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if parts and parts[0] == "v":
                try:
                    rows.append([float(p) for p in parts[1:4]])
                except (ValueError, IndexError):
                    raise CloudFormatError(f"{path}:{lineno}: bad vertex record") from None
    return np.asarray(rows, dtype=float).reshape(-1, 3)


def _parse_ply_header(fh):
    if fh.readline().strip() != b"ply":
        raise CloudFormatError("missing 'ply' magic")
    fmt = None
    elements = []  # (name, count, [(prop_name, dtype or ('list', cnt_t, item_t))])
    while True:
        raw = fh.readline()
        if not raw:
            raise CloudFormatError("unterminated PLY header")
        tok = raw.decode("ascii", errors="replace").split()
        if not tok or tok[0] in ("comment", "obj_info"):
            continue
        if tok[0] == "format":
            fmt = tok[1]
        elif tok[0] == "element":
            elements.append((tok[1], int(tok[2]), []))
        elif tok[0] == "property":
            if tok[1] == "list":
                elements[-1][2].append((tok[4], ("list", _PLY_TYPES[tok[2]], _PLY_TYPES[tok[3]])))
            else:
                elements[-1][2].append((tok[2], _PLY_TYPES[tok[1]]))
        elif tok[0] == "end_header":
            break
    if fmt not in ("ascii", "binary_little_endian"):
        raise CloudFormatError(f"unsupported PLY format {fmt!r}")
    return fmt, elements


def read_ply(path) -> np.ndarray:
    """Vertex positions from ASCII or binary little-endian PLY."""
    with open(path, "rb") as fh:
        try:
            fmt, elements = _parse_ply_header(fh)
        except (KeyError, IndexError) as exc:
            raise CloudFormatError(f"{path}: malformed header ({exc})") from None
        if fmt == "ascii":
            lines = fh.read().decode("ascii").splitlines()
            pos = 0
            for name, count, props in elements:
                if name == "vertex":
                    names = [p[0] for p in props]
                    cols = [names.index(c) for c in "xyz"]
                    block = lines[pos:pos + count]
                    if len(block) < count:
                        raise CloudFormatError(f"{path}: truncated vertex block")
                    arr = np.array([ln.split() for ln in block], dtype=float)
                    return arr[:, cols].reshape(-1, 3)
                pos += count
            raise CloudFormatError(f"{path}: no vertex element")
        for name, count, props in elements:
            if any(isinstance(t, tuple) for _, t in props):
                if name == "vertex":
                    raise CloudFormatError(f"{path}: list property on vertex")
                raise CloudFormatError(f"{path}: variable-size element before vertex")
            dt = np.dtype([(p, "<" + t) for p, t in props])
            data = np.frombuffer(fh.read(dt.itemsize * count), dtype=dt, count=count)
            if name == "vertex":
                return np.stack([data[c].astype(float) for c in "xyz"], axis=1)
    raise CloudFormatError(f"{path}: no vertex element")


def write_ply(path, points, binary: bool = False) -> None:
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    fmt = "binary_little_endian" if binary else "ascii"
    header = (
        f"ply\nformat {fmt} 1.0\nelement vertex {len(pts)}\n"
        "property double x\nproperty double y\nproperty double z\nend_header\n"
    )
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        if binary:
            fh.write(pts.astype("<f8").tobytes())
        else:
            fh.write("".join(f"{x!r} {y!r} {z!r}\n" for x, y, z in pts.tolist()).encode("ascii"))


def write_xyz(path, points) -> None:
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    with open(path, "w", encoding="utf-8") as fh:
        fh.writelines(f"{x!r} {y!r} {z!r}\n" for x, y, z in pts.tolist())


def write_cloud(path, points) -> None:
    if Path(path).suffix.lower() in (".xyz", ".txt"):
        write_xyz(path, points)
    else:
        write_ply(path, points)


def format_value(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (list, tuple, np.ndarray)):
        return " ".join(format_value(x) for x in np.asarray(v).ravel().tolist())
    return str(v)


def write_keyvalue(path, record: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for k, v in record.items():
            fh.write(f"{k}={format_value(v)}\n")


def read_keyvalue(path) -> dict[str, str]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#") or line.startswith("["):
                continue
            if "=" not in line:
                continue
            k, v = line.split("=", 1)
            out[k.strip()] = v.strip()
    return out


def floats(s: str) -> np.ndarray:
    return np.array([float(x) for x in s.split()], dtype=float)


def plane_from_record(rec: dict[str, str], prefix: str = "") -> SymmetryPlane:
    """Plane from ``normal``/``offset`` keys, or from three ``point_*`` keys."""
    from .geometry import plane_from_points

    if prefix + "normal" in rec:
        return SymmetryPlane(floats(rec[prefix + "normal"]), float(rec[prefix + "offset"]))
    keys = [prefix + f"point_{c}" for c in "abc"]
    if all(k in rec for k in keys):
        return plane_from_points(*(floats(rec[k]) for k in keys))
    raise KeyError("record holds no plane (normal/offset or point_a..c)")


def resolve(base, p: str) -> str:
    return p if os.path.isabs(p) else os.path.join(os.path.dirname(os.path.abspath(base)), p)
