"""ASCII readers and writers for clouds, correspondences, matrices and CSVs."""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .errors import ContractError
from .geometry import PointCloud


def _fmt(v: float) -> str:
    # repr round-trips float64 exactly
    return repr(float(v))


def write_xyz(path, cloud: PointCloud) -> None:
    path = Path(path)
    with path.open("w") as fh:
        for x, y, z in cloud.points:
            fh.write(f"{_fmt(x)} {_fmt(y)} {_fmt(z)}\n")


def read_xyz(path, id: str | None = None) -> PointCloud:
    path = Path(path)
    rows = []
    with path.open() as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) < 3:
                raise ContractError(f"{path}:{lineno}: expected 'x y z', got {line!r}")
            rows.append([float(p) for p in parts[:3]])
    return PointCloud(np.array(rows, dtype=np.float64).reshape(-1, 3), id=id or path.stem)


def write_ply(path, cloud: PointCloud) -> None:
    path = Path(path)
    with path.open("w") as fh:
        fh.write("ply\nformat ascii 1.0\n")
        fh.write(f"element vertex {cloud.n}\n")
        fh.write("property double x\nproperty double y\nproperty double z\nend_header\n")
        for x, y, z in cloud.points:
            fh.write(f"{_fmt(x)} {_fmt(y)} {_fmt(z)}\n")


def read_ply(path, id: str | None = None) -> PointCloud:
    """Read the vertex positions of an ASCII PLY file (other elements ignored)."""
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines or lines[0].strip() != "ply":
        raise ContractError(f"{path}: not a PLY file")
    n_vert = None
    props: list[str] = []
    in_vertex = False
    header_end = None
    for i, line in enumerate(lines[1:], 1):
        tok = line.split()
        if not tok:
            continue
        if tok[0] == "format" and tok[1] != "ascii":
            raise ContractError(f"{path}: only ASCII PLY is supported")
        elif tok[0] == "element":
            in_vertex = tok[1] == "vertex"
            if in_vertex:
                n_vert = int(tok[2])
        elif tok[0] == "property" and in_vertex:
            props.append(tok[-1])
        elif tok[0] == "end_header":
            header_end = i
            break
    if header_end is None or n_vert is None:
        raise ContractError(f"{path}: malformed PLY header")
    try:
        cols = [props.index(c) for c in ("x", "y", "z")]
    except ValueError:
        raise ContractError(f"{path}: vertex element lacks x/y/z properties") from None
    body = lines[header_end + 1: header_end + 1 + n_vert]
    if len(body) != n_vert:
        raise ContractError(f"{path}: expected {n_vert} vertices, found {len(body)}")
    pts = np.array([[float(line.split()[c]) for c in cols] for line in body], dtype=np.float64)
    return PointCloud(pts.reshape(-1, 3), id=id or path.stem)


def read_cloud(path, id: str | None = None) -> PointCloud:
    if Path(path).suffix.lower() == ".ply":
        return read_ply(path, id)
    return read_xyz(path, id)


def write_cloud(path, cloud: PointCloud) -> None:
    if Path(path).suffix.lower() == ".ply":
        write_ply(path, cloud)
    else:
        write_xyz(path, cloud)


def write_indices(path, idx) -> None:
    Path(path).write_text("".join(f"{int(i)}\n" for i in np.asarray(idx).ravel()))


def read_indices(path) -> np.ndarray:
    path = Path(path)
    out = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        try:
            v = int(line)
        except ValueError:
            raise ContractError(f"{path}:{lineno}: expected an integer index, got {line!r}") from None
        if v < 0:
            raise ContractError(f"{path}:{lineno}: negative index {v}")
        out.append(v)
    return np.array(out, dtype=np.int64)


def write_matrix(path, m) -> None:
    m = np.atleast_2d(np.asarray(m, dtype=np.float64))
    Path(path).write_text("".join(" ".join(_fmt(v) for v in row) + "\n" for row in m))


def read_matrix(path) -> np.ndarray:
    rows = [[float(t) for t in line.split()] for line in Path(path).read_text().splitlines() if line.strip()]
    if len({len(r) for r in rows}) > 1:
        raise ContractError(f"{path}: ragged matrix rows")
    return np.array(rows, dtype=np.float64)


def write_csv(path, header, rows) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ContractError(f"{path}: empty CSV")
    return rows[0], rows[1:]
