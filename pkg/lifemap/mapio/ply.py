from pathlib import Path

import numpy as np

from lifemap.errors import ParseError, UnsupportedFormat
from lifemap.geom.types import PointCloud
from lifemap.mapio.pcd import labels_from_column


def read_ply(path) -> PointCloud:
    """Read an ascii PLY whose only non-empty element is `vertex`."""
    path = Path(path)
    lines = path.read_text(encoding="ascii", errors="replace").splitlines()
    if not lines or lines[0].strip() != "ply":
        raise ParseError("missing 'ply' magic", 1, path)

    properties = []
    vertex_count = None
    current = None
    header_end = None
    for i, line in enumerate(lines[1:], start=2):
        parts = line.split()
        if not parts or parts[0] in ("comment", "obj_info"):
            continue
        if parts[0] == "format":
            if len(parts) < 2 or parts[1] != "ascii":
                raise UnsupportedFormat(f"{path}: PLY format {' '.join(parts[1:])!r}; only ascii is supported")
        elif parts[0] == "element":
            if len(parts) != 3:
                raise ParseError("malformed element line", i, path)
            current = parts[1]
            try:
                count = int(parts[2])
            except ValueError:
                raise ParseError("element count is not an integer", i, path)
            if current == "vertex":
                vertex_count = count
            elif count:
                raise UnsupportedFormat(f"{path}: PLY element {current!r} is not supported (vertex only)")
        elif parts[0] == "property":
            if current == "vertex":
                if len(parts) != 3 or parts[1] == "list":
                    raise UnsupportedFormat(f"{path}: vertex property {' '.join(parts[1:])!r} is not supported")
                properties.append(parts[2])
        elif parts[0] == "end_header":
            header_end = i
            break
        else:
            raise ParseError(f"unknown header keyword {parts[0]!r}", i, path)

    if header_end is None:
        raise ParseError("header ended without end_header", len(lines), path)
    if vertex_count is None:
        raise ParseError("no vertex element", header_end, path)
    for axis in ("x", "y", "z"):
        if axis not in properties:
            raise UnsupportedFormat(f"{path}: vertex element without {axis}")

    body = [line for line in lines[header_end:] if line.strip()]
    if len(body) < vertex_count:
        raise ParseError(f"expected {vertex_count} vertices, found {len(body)}", len(lines), path)
    table = np.empty((vertex_count, len(properties)))
    for j, line in enumerate(body[:vertex_count]):
        parts = line.split()
        if len(parts) != len(properties):
            raise ParseError(f"expected {len(properties)} values, got {len(parts)}", header_end + j + 1, path)
        try:
            table[j] = [float(p) for p in parts]
        except ValueError:
            raise ParseError("non-numeric value", header_end + j + 1, path)

    points = table[:, [properties.index(a) for a in ("x", "y", "z")]]
    finite = np.isfinite(points).all(axis=1)
    if not finite.all():
        raise ParseError("non-finite coordinate", header_end + int(np.argmin(finite)) + 1, path)
    labels = None
    if "label" in properties:
        lines_of = [header_end + j + 1 for j in range(vertex_count)]
        labels = labels_from_column(table[:, properties.index("label")], path, lines_of)
    return PointCloud(points, labels)


def write_ply(cloud: PointCloud, path):
    labeled = cloud.labels is not None
    header = ["ply", "format ascii 1.0", f"element vertex {len(cloud)}"]
    header += ["property float x", "property float y", "property float z"]
    if labeled:
        header.append("property uchar label")
    header.append("end_header")
    xyz = cloud.points.astype(np.float32)
    rows = []
    for i in range(len(cloud)):
        row = " ".join(repr(float(v)) for v in xyz[i])
        if labeled:
            row += f" {int(cloud.labels[i])}"
        rows.append(row)
    Path(path).write_text("\n".join(header + rows) + "\n", encoding="ascii")
