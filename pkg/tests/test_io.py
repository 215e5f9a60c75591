import numpy as np
import pytest

from linvmap import io
from linvmap.errors import ContractError
from linvmap.geometry import PointCloud


@pytest.fixture
def cloud():
    pts = np.random.default_rng(0).normal(size=(40, 3)) * 1e-3
    pts[0] = [1e-17, -3.0e5, np.pi]
    return PointCloud(pts, id="c")


@pytest.mark.parametrize("suffix", [".xyz", ".ply", ".txt"])
def test_cloud_round_trip(tmp_path, cloud, suffix):
    path = tmp_path / f"c{suffix}"
    io.write_cloud(path, cloud)
    back = io.read_cloud(path)
    assert np.array_equal(back.points, cloud.points)


def test_xyz_byte_stable(tmp_path, cloud):
    a, b = tmp_path / "a.xyz", tmp_path / "b.xyz"
    io.write_xyz(a, cloud)
    io.write_xyz(b, io.read_xyz(a))
    assert a.read_bytes() == b.read_bytes()


def test_xyz_comments_and_errors(tmp_path):
    p = tmp_path / "c.xyz"
    p.write_text("# header\n0 0 0\n1 0 0\n0 1 0\n0 0 1\n")
    assert io.read_xyz(p).n == 4
    p.write_text("0 0\n")
    with pytest.raises(ContractError):
        io.read_xyz(p)


def test_ply_with_extra_properties(tmp_path):
    p = tmp_path / "c.ply"
    p.write_text(
        "ply\nformat ascii 1.0\nelement vertex 4\nproperty float x\nproperty float y\n"
        "property float z\nproperty uchar red\nend_header\n"
        "0 0 0 255\n1 0 0 0\n0 1 0 0\n0 0 1 0\n"
    )
    assert np.array_equal(io.read_ply(p).points, np.vstack([np.zeros(3), np.eye(3)]))


def test_indices_round_trip(tmp_path):
    idx = np.random.default_rng(1).integers(0, 1000, 57)
    p = tmp_path / "i.txt"
    io.write_indices(p, idx)
    assert np.array_equal(io.read_indices(p), idx)
    assert len(p.read_text().splitlines()) == 57


def test_indices_reject_garbage(tmp_path):
    p = tmp_path / "i.txt"
    p.write_text("1\nx\n")
    with pytest.raises(ContractError):
        io.read_indices(p)
    p.write_text("1\n-2\n")
    with pytest.raises(ContractError):
        io.read_indices(p)


def test_matrix_round_trip(tmp_path):
    m = np.random.default_rng(2).normal(size=(6, 6))
    p = tmp_path / "m.txt"
    io.write_matrix(p, m)
    assert np.abs(io.read_matrix(p) - m).max() <= 1e-12
    assert np.array_equal(io.read_matrix(p), m)


def test_csv_round_trip(tmp_path):
    rows = [(i, float(v)) for i, v in enumerate(np.random.default_rng(3).random(10))]
    p = tmp_path / "l.csv"
    io.write_csv(p, ["step", "loss"], rows)
    header, back = io.read_csv(p)
    assert header == ["step", "loss"]
    assert [(int(a), float(b)) for a, b in back] == rows
