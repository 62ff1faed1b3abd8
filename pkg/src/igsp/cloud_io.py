"""Reading and writing point clouds as XYZ text and PLY (ASCII / binary little-endian)."""

from __future__ import annotations

import logging
import os
from pathlib import Path

import numpy as np

from .geometry import PointCloud

logger = logging.getLogger(__name__)

FORMATS = ("xyz", "ply-ascii", "ply-binary-le")

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
_COORDS = ("x", "y", "z")
_NORMALS = ("nx", "ny", "nz")


class CloudFormatError(ValueError):
    """Malformed or unsupported point-cloud file."""


def guess_format(path) -> str:
    suffix = Path(path).suffix.lower()
    if suffix in (".xyz", ".txt", ".pts"):
        return "xyz"
    if suffix == ".ply":
        with open(path, "rb") as fh:
            head = fh.read(512)
        return "ply-ascii" if b"format ascii" in head else "ply-binary-le"
    raise CloudFormatError(f"{path}: cannot infer format from suffix {suffix!r}")


def load_cloud(path, format: str | None = None) -> PointCloud:
    fmt = format or guess_format(path)
    if fmt == "xyz":
        return _load_xyz(path)
    if fmt in ("ply-ascii", "ply-binary-le"):
        return _load_ply(path, expect=fmt)
    raise CloudFormatError(f"unknown format {fmt!r}; expected one of {FORMATS}")


def save_cloud(cloud: PointCloud, path, format: str | None = None) -> None:
    fmt = format or ("xyz" if Path(path).suffix.lower() != ".ply" else "ply-binary-le")
    if fmt not in FORMATS:
        raise CloudFormatError(f"unknown format {fmt!r}; expected one of {FORMATS}")
    try:
        if fmt == "xyz":
            np.savetxt(path, cloud.points, fmt="%.17g")
        else:
            _save_ply(cloud, path, binary=(fmt == "ply-binary-le"))
    except OSError as exc:
        raise OSError(f"failed to write point cloud to {path}: {exc}") from exc


def _load_xyz(path) -> PointCloud:
    rows = []
    with open(path, "r") as fh:
        for lineno, line in enumerate(fh, start=1):
            tokens = line.split()
            if not tokens or tokens[0].startswith("#"):
                continue
            if len(tokens) < 3:
                raise CloudFormatError(f"{path}: line {lineno}: expected 'x y z', got {line.strip()!r}")
            try:
                rows.append([float(tok) for tok in tokens[:3]])
            except ValueError:
                raise CloudFormatError(f"{path}: line {lineno}: non-numeric token in {line.strip()!r}") from None
    return PointCloud(np.array(rows, dtype=np.float64).reshape(-1, 3))


def _parse_header(fh, path):
    """Return (format, elements, header_lines, header_bytes).

    Each element is ``(name, count, props)`` where ``props`` is a list of
    ``(name, dtype)`` or ``(name, ("list", count_dtype, item_dtype))``.
    """
    first = fh.readline()
    if first.strip() != b"ply":
        raise CloudFormatError(f"{path}: line 1: missing 'ply' magic")
    fmt = None
    elements = []
    lineno = 1
    while True:
        raw = fh.readline()
        lineno += 1
        if not raw:
            raise CloudFormatError(f"{path}: line {lineno}: unexpected end of header")
        tokens = raw.decode("ascii", errors="replace").split()
        if not tokens or tokens[0] in ("comment", "obj_info"):
            continue
        key = tokens[0]
        if key == "end_header":
            break
        if key == "format":
            if len(tokens) < 2 or tokens[1] not in ("ascii", "binary_little_endian", "binary_big_endian"):
                raise CloudFormatError(f"{path}: line {lineno}: bad format line")
            fmt = tokens[1]
        elif key == "element":
            if len(tokens) != 3 or not tokens[2].isdigit():
                raise CloudFormatError(f"{path}: line {lineno}: bad element line")
            elements.append((tokens[1], int(tokens[2]), []))
        elif key == "property":
            if not elements:
                raise CloudFormatError(f"{path}: line {lineno}: property before any element")
            if tokens[1] == "list":
                if len(tokens) != 5 or tokens[2] not in _PLY_TYPES or tokens[3] not in _PLY_TYPES:
                    raise CloudFormatError(f"{path}: line {lineno}: unsupported list property")
                elements[-1][2].append((tokens[4], ("list", _PLY_TYPES[tokens[2]], _PLY_TYPES[tokens[3]])))
            else:
                if len(tokens) != 3 or tokens[1] not in _PLY_TYPES:
                    raise CloudFormatError(f"{path}: line {lineno}: unsupported property type {tokens[1]!r}")
                elements[-1][2].append((tokens[2], _PLY_TYPES[tokens[1]]))
        else:
            raise CloudFormatError(f"{path}: line {lineno}: unknown header keyword {key!r}")
    if fmt is None:
        raise CloudFormatError(f"{path}: header has no format line")
    return fmt, elements, lineno, fh.tell()


def _check_vertex(props, path):
    names = [p[0] for p in props]
    for c in _COORDS:
        if c not in names:
            raise CloudFormatError(f"{path}: vertex element lacks property {c!r}")
    for name, dtype in props:
        if name in _COORDS + _NORMALS and dtype not in ("f4", "f8"):
            raise CloudFormatError(f"{path}: property {name!r} must be float or double, got {dtype}")
        if isinstance(dtype, tuple) and name in _COORDS:
            raise CloudFormatError(f"{path}: list-typed coordinate {name!r}")
    extra = [n for n in names if n not in _COORDS + _NORMALS]
    if extra:
        logger.warning("%s: ignoring vertex properties %s", path, extra)
    return all(n in names for n in _NORMALS)


def _load_ply(path, expect: str) -> PointCloud:
    with open(path, "rb") as fh:
        fmt, elements, header_lines, offset = _parse_header(fh, path)
        if fmt == "binary_big_endian":
            raise CloudFormatError(f"{path}: big-endian PLY is not supported")
        if expect == "ply-ascii" and fmt != "ascii" or expect == "ply-binary-le" and fmt == "ascii":
            raise CloudFormatError(f"{path}: declared {expect} but header says {fmt}")
        if not any(e[0] == "vertex" for e in elements):
            raise CloudFormatError(f"{path}: no vertex element")
        skipped = [e[0] for e in elements if e[0] != "vertex" and e[1] > 0]
        if skipped:
            logger.warning("%s: skipping elements %s", path, skipped)
        if fmt == "ascii":
            return _read_ply_ascii(fh, elements, header_lines, path)
        return _read_ply_binary(fh, elements, offset, path)


def _read_ply_ascii(fh, elements, lineno, path):
    for name, count, props in elements:
        rows = []
        for _ in range(count):
            raw = fh.readline()
            lineno += 1
            if not raw:
                raise CloudFormatError(f"{path}: line {lineno}: unexpected end of file in element {name!r}")
            tokens = raw.split()
            if name != "vertex":
                continue
            if len(tokens) < len(props):
                raise CloudFormatError(f"{path}: line {lineno}: expected {len(props)} values, got {len(tokens)}")
            try:
                rows.append([float(t) for t in tokens[: len(props)]])
            except ValueError:
                raise CloudFormatError(f"{path}: line {lineno}: non-numeric token") from None
        if name == "vertex":
            has_normals = _check_vertex(props, path)
            data = np.array(rows, dtype=np.float64).reshape(-1, len(props))
            return _to_cloud(data, [p[0] for p in props], has_normals)
    raise AssertionError("unreachable")


def _read_ply_binary(fh, elements, offset, path):
    for name, count, props in elements:
        if any(isinstance(p[1], tuple) for p in props):
            if name == "vertex":
                raise CloudFormatError(f"{path}: list properties in vertex element are unsupported")
            for _ in range(count):
                for _, dtype in props:
                    if isinstance(dtype, tuple):
                        _, cnt_t, item_t = dtype
                        cnt_size = np.dtype(cnt_t).itemsize
                        buf = fh.read(cnt_size)
                        if len(buf) != cnt_size:
                            raise CloudFormatError(f"{path}: byte {fh.tell()}: truncated list in {name!r}")
                        n = int(np.frombuffer(buf, "<" + cnt_t)[0])
                        fh.seek(n * np.dtype(item_t).itemsize, os.SEEK_CUR)
                    else:
                        fh.seek(np.dtype(dtype).itemsize, os.SEEK_CUR)
            continue
        dt = np.dtype([(p[0], "<" + p[1]) for p in props])
        start = fh.tell()
        buf = fh.read(dt.itemsize * count)
        if len(buf) != dt.itemsize * count:
            raise CloudFormatError(f"{path}: byte {start}: truncated data in element {name!r}")
        if name != "vertex":
            continue
        has_normals = _check_vertex(props, path)
        rec = np.frombuffer(buf, dtype=dt)
        names = [p[0] for p in props]
        data = np.column_stack([rec[n].astype(np.float64) for n in names]) if count else np.zeros((0, len(names)))
        return _to_cloud(data, names, has_normals)
    raise AssertionError("unreachable")


def _to_cloud(data, names, has_normals):
    pts = data[:, [names.index(c) for c in _COORDS]]
    normals = None
    if has_normals and len(data):
        normals = data[:, [names.index(c) for c in _NORMALS]]
        norm = np.linalg.norm(normals, axis=1, keepdims=True)
        # single-precision files store normals that are only unit to ~1e-7
        normals = np.divide(normals, norm, out=np.zeros_like(normals), where=norm > 0)
        if np.any(norm == 0):
            logger.warning("zero-length normals found; dropping normals")
            normals = None
    return PointCloud(pts, normals)


def _save_ply(cloud: PointCloud, path, binary: bool):
    names = list(_COORDS) + (list(_NORMALS) if cloud.has_normals else [])
    data = cloud.points if not cloud.has_normals else np.hstack([cloud.points, cloud.normals])
    header = ["ply", "format " + ("binary_little_endian" if binary else "ascii") + " 1.0",
              "comment written by igsp", f"element vertex {len(cloud)}"]
    header += [f"property double {n}" for n in names]
    header.append("end_header")
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        if binary:
            fh.write(np.ascontiguousarray(data, dtype="<f8").tobytes())
        else:
            for row in data:
                fh.write((" ".join("%.17g" % v for v in row) + "\n").encode("ascii"))
