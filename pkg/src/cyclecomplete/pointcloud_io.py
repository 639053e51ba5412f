"""Point cloud file formats and the on-disk dataset layout.

``.xyz`` is headerless ASCII, one "X Y Z" line per point, written at 9
significant digits.  ``.ply`` export is ASCII with a fixed seven-line header.
A dataset directory holds ``complete/<id>.xyz``, ``partial/<id>_<view>.xyz``
for views 0..7, and a tab-separated ``manifest.txt`` of id/category/split.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np


class PointCloudIOError(ValueError):
    """Malformed point-cloud file or dataset layout."""


_FMT = "%.9g"


def write_xyz(path, points):
    points = np.asarray(points, dtype=np.float64)
    with open(path, "w") as f:
        for p in points:
            f.write(f"{_FMT % p[0]} {_FMT % p[1]} {_FMT % p[2]}\n")


def read_xyz(path):
    rows = []
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 3:
                raise PointCloudIOError(
                    f"{path}:{lineno}: expected 3 coordinates, got {len(parts)}")
            try:
                rows.append([float(v) for v in parts])
            except ValueError:
                raise PointCloudIOError(
                    f"{path}:{lineno}: could not parse coordinates") from None
    if not rows:
        raise PointCloudIOError(f"{path}: empty point cloud file")
    return np.array(rows)


_PLY_PROPS = ["property float x", "property float y", "property float z"]


def write_ply(path, points):
    points = np.asarray(points, dtype=np.float64)
    with open(path, "w") as f:
        f.write("ply\nformat ascii 1.0\n")
        f.write(f"element vertex {len(points)}\n")
        f.write("\n".join(_PLY_PROPS) + "\n")
        f.write("end_header\n")
        for p in points:
            f.write(f"{_FMT % p[0]} {_FMT % p[1]} {_FMT % p[2]}\n")


def read_ply(path):
    with open(path) as f:
        lines = [l.rstrip("\n") for l in f]
    if not lines or lines[0] != "ply":
        raise PointCloudIOError(f"{path}: not an ascii ply file")
    try:
        end = lines.index("end_header")
    except ValueError:
        raise PointCloudIOError(f"{path}: missing end_header") from None
    count = None
    for h in lines[1:end]:
        if h.startswith("element vertex "):
            count = int(h.split()[-1])
    if count is None:
        raise PointCloudIOError(f"{path}: missing vertex element")
    body = [l for l in lines[end + 1:] if l.strip()]
    if len(body) != count:
        raise PointCloudIOError(
            f"{path}: header promises {count} vertices, found {len(body)}")
    pts = np.array([[float(v) for v in l.split()] for l in body])
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise PointCloudIOError(f"{path}: vertex lines are not 3-float rows")
    return pts


# ---------------------------------------------------------------------------
# dataset directory layout


def write_dataset(dataset, root, force=False):
    """Materialize a dataset as complete/, partial/ and manifest.txt."""
    if os.path.isdir(root) and os.listdir(root) and not force:
        raise PointCloudIOError(f"{root}: exists and is not empty (use force)")
    os.makedirs(os.path.join(root, "complete"), exist_ok=True)
    os.makedirs(os.path.join(root, "partial"), exist_ok=True)
    with open(os.path.join(root, "manifest.txt"), "w") as mf:
        for s in dataset.samples:
            mf.write(f"{s.id}\t{s.category}\t{s.split}\n")
            write_xyz(os.path.join(root, "complete", f"{s.id}.xyz"), s.complete)
            for k, part in enumerate(s.partials):
                write_xyz(os.path.join(root, "partial", f"{s.id}_{k}.xyz"), part)


@dataclass
class LoadedSample:
    id: str
    category: str
    split: str
    complete: np.ndarray
    partials: list


def load_dataset(root):
    """Read a dataset directory back; returns the samples in manifest order."""
    manifest = os.path.join(root, "manifest.txt")
    if not os.path.isfile(manifest):
        raise PointCloudIOError(f"{root}: missing manifest.txt")
    samples = []
    with open(manifest) as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 3:
                raise PointCloudIOError(
                    f"{manifest}:{lineno}: expected id<TAB>category<TAB>split")
            sid, category, split = parts
            complete = read_xyz(os.path.join(root, "complete", f"{sid}.xyz"))
            partials = [
                read_xyz(os.path.join(root, "partial", f"{sid}_{k}.xyz"))
                for k in range(8)
            ]
            samples.append(LoadedSample(sid, category, split, complete, partials))
    if not samples:
        raise PointCloudIOError(f"{root}: empty manifest")
    return samples


def training_pools(samples):
    """(incomplete partial pool, complete pool) from disjoint instance splits."""
    inc = [p for s in samples if s.split == "incomplete" for p in s.partials]
    comp = [s.complete for s in samples if s.split == "complete"]
    if not inc or not comp:
        raise PointCloudIOError("dataset lacks incomplete or complete training instances")
    return np.stack(inc), np.stack(comp)
