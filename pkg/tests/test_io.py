import numpy as np
import pytest

from cyclecomplete.pointcloud_io import (
    PointCloudIOError, load_dataset, read_ply, read_xyz, training_pools,
    write_dataset, write_ply, write_xyz,
)
from cyclecomplete.shapes import DatasetSpec, build_dataset


def test_xyz_round_trip_at_printed_precision(tmp_path):
    rng = np.random.default_rng(0)
    cloud = rng.uniform(-0.5, 0.5, size=(40, 3))
    path = tmp_path / "cloud.xyz"
    write_xyz(path, cloud)
    back = read_xyz(path)
    assert back.shape == cloud.shape
    assert np.allclose(back, cloud, rtol=1e-8, atol=1e-9)
    # printed form is a fixed point: write(read(write(P))) == write(P)
    path2 = tmp_path / "cloud2.xyz"
    write_xyz(path2, back)
    assert path.read_bytes() == path2.read_bytes()


def test_xyz_empty_file_rejected(tmp_path):
    path = tmp_path / "empty.xyz"
    path.write_text("")
    with pytest.raises(PointCloudIOError, match="empty"):
        read_xyz(path)


def test_xyz_malformed_line_names_line_number(tmp_path):
    path = tmp_path / "bad.xyz"
    path.write_text("1 2\n")
    with pytest.raises(PointCloudIOError, match=r"bad\.xyz:1"):
        read_xyz(path)
    path.write_text("0 0 0\n1 2 zz\n")
    with pytest.raises(PointCloudIOError, match=r"bad\.xyz:2"):
        read_xyz(path)


def test_ply_header_exact(tmp_path):
    cloud = np.array([[0.25, -0.5, 0.125], [1.0, 2.0, 3.0]])
    path = tmp_path / "cloud.ply"
    write_ply(path, cloud)
    lines = path.read_text().splitlines()
    assert lines[:7] == [
        "ply",
        "format ascii 1.0",
        "element vertex 2",
        "property float x",
        "property float y",
        "property float z",
        "end_header",
    ]
    assert len(lines) == 9
    back = read_ply(path)
    assert np.allclose(back, cloud, rtol=1e-8)


def test_ply_wrong_vertex_count_rejected(tmp_path):
    path = tmp_path / "bad.ply"
    path.write_text(
        "ply\nformat ascii 1.0\nelement vertex 3\n"
        "property float x\nproperty float y\nproperty float z\n"
        "end_header\n0 0 0\n1 1 1\n")
    with pytest.raises(PointCloudIOError, match="promises 3"):
        read_ply(path)


def test_dataset_round_trip(tmp_path):
    spec = DatasetSpec.from_total(("box", "cylinder"), 10, n_points=32, seed=2)
    ds = build_dataset(spec)
    root = tmp_path / "data"
    write_dataset(ds, root)
    manifest = (root / "manifest.txt").read_text().splitlines()
    assert len(manifest) == 10
    assert all(len(line.split("\t")) == 3 for line in manifest)
    samples = load_dataset(root)
    assert [s.id for s in samples] == [s.id for s in ds.samples]
    for loaded, orig in zip(samples, ds.samples):
        assert loaded.split == orig.split
        assert loaded.category == orig.category
        assert np.allclose(loaded.complete, orig.complete, rtol=1e-8, atol=1e-9)
        assert len(loaded.partials) == 8
    inc, comp = training_pools(samples)
    assert inc.shape == (8 * len(ds.by_split("incomplete")), 32, 3)
    assert comp.shape == (len(ds.by_split("complete")), 32, 3)


def test_dataset_write_refuses_nonempty_root(tmp_path):
    spec = DatasetSpec.from_total(("box",), 4, n_points=16, seed=3)
    ds = build_dataset(spec)
    root = tmp_path / "data"
    root.mkdir()
    (root / "junk.txt").write_text("x")
    with pytest.raises(PointCloudIOError, match="not empty"):
        write_dataset(ds, root)
    write_dataset(ds, root, force=True)
    assert (root / "manifest.txt").exists()


def test_dataset_writes_identical_bytes_for_same_spec(tmp_path):
    spec = DatasetSpec.from_total(("box",), 4, n_points=16, seed=4)
    r1, r2 = tmp_path / "a", tmp_path / "b"
    write_dataset(build_dataset(spec), r1)
    write_dataset(build_dataset(spec), r2)
    for rel in ["manifest.txt", "complete/box-0000.xyz", "partial/box-0003_7.xyz"]:
        assert (r1 / rel).read_bytes() == (r2 / rel).read_bytes()


def test_load_dataset_missing_manifest(tmp_path):
    with pytest.raises(PointCloudIOError, match="manifest"):
        load_dataset(tmp_path)
