"""
PCD v0.7 reader and writer.

Only the subset lifemap exchanges is supported: unorganized or organized
clouds with scalar fields, `ascii` or `binary` (little-endian) payloads.
Coordinates are written as float32; an optional `label` field is written
as uint8.
"""

import typing
from pathlib import Path

import numpy as np
from loguru import logger

from lifemap.errors import ParseError, UnsupportedFormat
from lifemap.geom.types import Label, PointCloud

_TYPES = {
    ("F", 4): "<f4",
    ("F", 8): "<f8",
    ("U", 1): "<u1",
    ("U", 2): "<u2",
    ("U", 4): "<u4",
    ("I", 1): "<i1",
    ("I", 2): "<i2",
    ("I", 4): "<i4",
}

_HEADER_KEYS = ("VERSION", "FIELDS", "SIZE", "TYPE", "COUNT", "WIDTH", "HEIGHT", "VIEWPOINT", "POINTS", "DATA")


class _Header(typing.NamedTuple):
    fields: list[str]
    dtype: np.dtype
    points: int
    data: str
    points_line: int
    data_offset: int
    data_line: int


def _parse_header(raw: bytes, path) -> _Header:
    entries = dict()
    lines_at = dict()
    offset = 0
    line_no = 0
    while True:
        end = raw.find(b"\n", offset)
        if end < 0:
            raise ParseError("header ended before DATA", line_no + 1, path)
        line_no += 1
        try:
            line = raw[offset:end].decode("ascii").strip()
        except UnicodeDecodeError:
            raise ParseError("non-ascii header line", line_no, path)
        offset = end + 1
        if not line or line.startswith("#"):
            continue
        key, _, rest = line.partition(" ")
        key = key.upper()
        if key not in _HEADER_KEYS:
            raise ParseError(f"unknown header entry {key!r}", line_no, path)
        entries[key] = rest.split()
        lines_at[key] = line_no
        if key == "DATA":
            break

    for needed in ("FIELDS", "SIZE", "TYPE", "WIDTH", "HEIGHT", "DATA"):
        if needed not in entries:
            raise ParseError(f"missing {needed} entry", lines_at.get("DATA", line_no), path)

    fields = entries["FIELDS"]
    sizes, types = entries["SIZE"], entries["TYPE"]
    counts = entries.get("COUNT", ["1"] * len(fields))
    if not (len(fields) == len(sizes) == len(types) == len(counts)):
        raise ParseError("FIELDS, SIZE, TYPE and COUNT lengths differ", lines_at["FIELDS"], path)
    for axis in ("x", "y", "z"):
        if axis not in fields:
            raise UnsupportedFormat(f"{path}: PCD without an {axis} field")

    dtype_fields = []
    for name, size, kind, count in zip(fields, sizes, types, counts):
        try:
            size_i, count_i = int(size), int(count)
        except ValueError:
            raise ParseError(f"bad SIZE/COUNT for field {name}", lines_at["SIZE"], path)
        if count_i != 1:
            raise UnsupportedFormat(f"{path}: field {name} has COUNT {count_i}; only scalar fields are supported")
        code = _TYPES.get((kind.upper(), size_i))
        if code is None:
            raise UnsupportedFormat(f"{path}: unsupported field type {kind}{size_i} for {name}")
        dtype_fields.append((name, code))

    try:
        width = int(entries["WIDTH"][0])
        height = int(entries["HEIGHT"][0])
        points = int(entries["POINTS"][0]) if "POINTS" in entries else width * height
    except (ValueError, IndexError):
        raise ParseError("WIDTH, HEIGHT and POINTS must be integers", lines_at.get("WIDTH", line_no), path)
    if width * height != points:
        raise ParseError(
            f"WIDTH*HEIGHT ({width}*{height}) does not match POINTS {points}",
            lines_at["WIDTH"],
            path,
        )

    data = entries["DATA"][0].lower() if entries["DATA"] else ""
    if data not in ("ascii", "binary"):
        raise UnsupportedFormat(f"{path}: DATA {data!r} is not supported (ascii or binary only)")
    return _Header(
        fields=fields,
        dtype=np.dtype(dtype_fields),
        points=points,
        data=data,
        points_line=lines_at.get("POINTS", lines_at["WIDTH"]),
        data_offset=offset,
        data_line=line_no,
    )


def labels_from_column(values, path, lines: typing.Optional[typing.Sequence[int]] = None) -> np.ndarray:
    """
    uint8 labels from a raw label column. A value that is not a known label
    raises ParseError naming its line (ascii) or point index (binary).
    """
    values = np.asarray(values, dtype=np.float64)
    bad = ~np.isin(values, [int(label) for label in Label])
    if bad.any():
        row = int(np.argmax(bad))
        line = None if lines is None else int(lines[row])
        raise ParseError(f"invalid label {values[row]:g} at point {row}", line, path)
    return values.astype(np.uint8)


def _cloud_from_columns(columns: dict, fields: list[str], path, lines=None) -> PointCloud:
    points = np.stack([np.asarray(columns[a], dtype=np.float64) for a in ("x", "y", "z")], axis=1)
    labels = None
    if "label" in fields:
        labels = labels_from_column(columns["label"], path, lines)
    ignored = [f for f in fields if f not in ("x", "y", "z", "label")]
    if ignored:
        logger.debug(f"{path}: ignoring PCD fields {ignored}")
    finite = np.isfinite(points).all(axis=1)
    if not finite.all():
        # organized clouds mark missing returns with NaN
        logger.warning(f"{path}: dropping {int((~finite).sum())} non-finite points")
        points = points[finite]
        labels = None if labels is None else labels[finite]
    return PointCloud(points, labels)


def read_pcd(path) -> PointCloud:
    path = Path(path)
    raw = path.read_bytes()
    header = _parse_header(raw, path)
    payload = raw[header.data_offset:]

    if header.data == "binary":
        expected = header.points * header.dtype.itemsize
        if len(payload) != expected:
            raise ParseError(
                f"binary payload has {len(payload)} bytes, header declares {header.points} points ({expected} bytes)",
                header.points_line,
                path,
            )
        records = np.frombuffer(payload, dtype=header.dtype, count=header.points)
        columns = {name: records[name] for name in header.fields}
        return _cloud_from_columns(columns, header.fields, path)

    rows = []
    row_lines = []
    ncols = len(header.fields)
    for i, line in enumerate(payload.decode("ascii", errors="replace").splitlines()):
        line = line.strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != ncols:
            raise ParseError(f"expected {ncols} values, got {len(parts)}", header.data_line + i + 1, path)
        try:
            rows.append([float(p) for p in parts])
        except ValueError:
            raise ParseError("non-numeric value", header.data_line + i + 1, path)
        row_lines.append(header.data_line + i + 1)
    if len(rows) != header.points:
        raise ParseError(
            f"ascii payload has {len(rows)} rows, header declares {header.points} points",
            header.points_line,
            path,
        )
    table = np.array(rows, dtype=np.float64).reshape(-1, ncols)
    columns = {name: table[:, i] for i, name in enumerate(header.fields)}
    return _cloud_from_columns(columns, header.fields, path, row_lines)


def encode_pcd(cloud: PointCloud, encoding: str = "binary") -> bytes:
    if encoding not in ("ascii", "binary"):
        raise UnsupportedFormat(f"PCD encoding {encoding!r} is not supported")
    labeled = cloud.labels is not None
    n = len(cloud)
    header = [
        "# .PCD v0.7 - Point Cloud Data file format",
        "VERSION 0.7",
        "FIELDS x y z label" if labeled else "FIELDS x y z",
        "SIZE 4 4 4 1" if labeled else "SIZE 4 4 4",
        "TYPE F F F U" if labeled else "TYPE F F F",
        "COUNT 1 1 1 1" if labeled else "COUNT 1 1 1",
        f"WIDTH {n}",
        "HEIGHT 1",
        "VIEWPOINT 0 0 0 1 0 0 0",
        f"POINTS {n}",
        f"DATA {encoding}",
    ]
    head = ("\n".join(header) + "\n").encode("ascii")
    xyz = cloud.points.astype("<f4")

    if encoding == "binary":
        fields = [("x", "<f4"), ("y", "<f4"), ("z", "<f4")]
        if labeled:
            fields.append(("label", "<u1"))
        records = np.empty(n, dtype=np.dtype(fields))
        records["x"], records["y"], records["z"] = xyz[:, 0], xyz[:, 1], xyz[:, 2]
        if labeled:
            records["label"] = cloud.labels
        return head + records.tobytes()

    # repr of a float32 round-trips exactly
    lines = []
    for i in range(n):
        row = [repr(float(v)) for v in xyz[i]]
        if labeled:
            row.append(str(int(cloud.labels[i])))
        lines.append(" ".join(row))
    return head + ("\n".join(lines) + ("\n" if lines else "")).encode("ascii")


def write_pcd(cloud: PointCloud, path, encoding: str = "binary"):
    Path(path).write_bytes(encode_pcd(cloud, encoding))
