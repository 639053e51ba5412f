"""Synthetic shape generation and the partial-view protocol.

Complete clouds are sampled uniformly by surface area over randomized
parametric primitives, normalized into the unit cube centered at the origin.
Partial views keep the points on one side of a depth quantile along a view
direction (a stand-in for single-viewpoint visibility) and pad back to the
configured resolution by resampling kept points, so every partial is an
exact multiset subset of its complete shape.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

CATEGORIES = ("plane-like", "box", "cylinder", "composite-chair", "composite-table")

# Fixed stand-in for 8 viewpoints: the cube-corner directions.
CUBE_CORNER_VIEWS = np.array(list(itertools.product((-1.0, 1.0), repeat=3))) / np.sqrt(3.0)


# ---------------------------------------------------------------------------
# parametric faces


@dataclass(frozen=True)
class RectFace:
    origin: np.ndarray
    u: np.ndarray
    v: np.ndarray

    @property
    def area(self):
        return float(np.linalg.norm(np.cross(self.u, self.v)))

    def sample(self, rng, n):
        a = rng.random((n, 1))
        b = rng.random((n, 1))
        return self.origin + a * self.u + b * self.v


@dataclass(frozen=True)
class DiscFace:
    center: np.ndarray
    radius: float

    @property
    def area(self):
        return float(np.pi * self.radius**2)

    def sample(self, rng, n):
        rr = self.radius * np.sqrt(rng.random(n))
        th = 2.0 * np.pi * rng.random(n)
        pts = np.column_stack([rr * np.cos(th), rr * np.sin(th), np.zeros(n)])
        return pts + self.center


@dataclass(frozen=True)
class CylinderSide:
    center: np.ndarray
    radius: float
    height: float

    @property
    def area(self):
        return float(2.0 * np.pi * self.radius * self.height)

    def sample(self, rng, n):
        th = 2.0 * np.pi * rng.random(n)
        z = (rng.random(n) - 0.5) * self.height
        pts = np.column_stack([self.radius * np.cos(th), self.radius * np.sin(th), z])
        return pts + self.center


def _box_faces(center, extents):
    cx, cy, cz = center
    lx, ly, lz = extents
    o = np.array([cx - lx / 2, cy - ly / 2, cz - lz / 2])
    ex = np.array([lx, 0.0, 0.0])
    ey = np.array([0.0, ly, 0.0])
    ez = np.array([0.0, 0.0, lz])
    return [
        RectFace(o, ex, ey), RectFace(o + ez, ex, ey),        # bottom, top
        RectFace(o, ex, ez), RectFace(o + ey, ex, ez),        # front, back
        RectFace(o, ey, ez), RectFace(o + ex, ey, ez),        # left, right
    ]


def _legs(rng, width, depth, height, thickness):
    faces = []
    for sx, sy in itertools.product((-1, 1), repeat=2):
        cx = sx * (width / 2 - thickness / 2)
        cy = sy * (depth / 2 - thickness / 2)
        faces += _box_faces((cx, cy, height / 2), (thickness, thickness, height))
    return faces


def category_faces(category, rng):
    """Randomized face list for one object of the given category."""
    if category == "box":
        return _box_faces((0, 0, 0), rng.uniform(0.4, 1.0, 3))
    if category == "cylinder":
        r = rng.uniform(0.15, 0.4)
        h = rng.uniform(0.5, 1.0)
        top = np.array([0.0, 0.0, h / 2])
        return [
            CylinderSide(np.zeros(3), r, h),
            DiscFace(top, r),
            DiscFace(-top, r),
        ]
    if category == "plane-like":
        span = rng.uniform(0.9, 1.3)
        chord = rng.uniform(0.3, 0.5)
        body_len = rng.uniform(0.9, 1.3)
        body_w = rng.uniform(0.06, 0.12)
        fin = rng.uniform(0.15, 0.3)
        wing = RectFace(np.array([-span / 2, -chord / 2, 0.0]),
                        np.array([span, 0.0, 0.0]), np.array([0.0, chord, 0.0]))
        tail = RectFace(np.array([0.0, body_len / 2 - fin, 0.0]),
                        np.array([0.0, fin, 0.0]), np.array([0.0, 0.0, fin]))
        body = _box_faces((0, 0, 0), (body_w, body_len, body_w))
        return [wing, tail, *body]
    if category == "composite-chair":
        w = rng.uniform(0.4, 0.6)
        d = rng.uniform(0.4, 0.6)
        seat_h = rng.uniform(0.35, 0.5)
        back_h = rng.uniform(0.4, 0.6)
        t = rng.uniform(0.03, 0.06)
        faces = _box_faces((0, 0, seat_h + t / 2), (w, d, t))          # seat
        faces += _box_faces((0, d / 2 - t / 2, seat_h + t + back_h / 2), (w, t, back_h))
        faces += _legs(rng, w, d, seat_h, t)
        return faces
    if category == "composite-table":
        w = rng.uniform(0.6, 1.0)
        d = rng.uniform(0.5, 0.9)
        h = rng.uniform(0.4, 0.6)
        t = rng.uniform(0.03, 0.07)
        faces = _box_faces((0, 0, h + t / 2), (w, d, t))               # top
        faces += _legs(rng, w, d, h, t)
        return faces
    raise ValueError(f"unknown category {category!r}")


def sample_on_faces(faces, n, rng):
    """Area-weighted surface sampling; returns (points, per-face counts)."""
    areas = np.array([f.area for f in faces])
    counts = rng.multinomial(n, areas / areas.sum())
    parts = [f.sample(rng, k) for f, k in zip(faces, counts) if k > 0]
    return np.concatenate(parts, axis=0), counts


def normalize_cloud(points):
    """Center at the origin and scale the largest extent to 1 (unit cube).

    Already-normalized clouds pass through unchanged, which makes
    normalization exactly idempotent despite fp rounding.
    """
    points = np.asarray(points, dtype=np.float64)
    lo = points.min(axis=0)
    hi = points.max(axis=0)
    center = (lo + hi) / 2.0
    extent = float((hi - lo).max())
    if np.abs(center).max() < 1e-12 and abs(extent - 1.0) < 1e-12:
        return points
    if extent == 0.0:
        return points - center
    return np.clip((points - center) / extent, -0.5, 0.5)


def generate_complete(category, rng, n_points=2048):
    """One complete cloud: n_points area-weighted samples, normalized."""
    faces = category_faces(category, rng)
    points, _ = sample_on_faces(faces, n_points, rng)
    return normalize_cloud(points)


def make_partial(points, view, tau, rng, n_points=None):
    """Depth-quantile crop along a view direction, padded back to resolution.

    Keeps the points whose projection onto ``view`` falls at or below the
    tau-quantile, then resamples kept points with replacement to pad the
    cloud back to ``n_points``.  Every output point is an input point.
    """
    points = np.asarray(points, dtype=np.float64)
    view = np.asarray(view, dtype=np.float64)
    norm = np.linalg.norm(view)
    if norm == 0.0:
        raise ValueError("make_partial: view direction must be non-zero")
    if not 0.0 < tau < 1.0:
        raise ValueError(f"make_partial: tau must be in (0, 1), got {tau}")
    if n_points is None:
        n_points = len(points)
    depth = points @ (view / norm)
    kept = points[depth <= np.quantile(depth, tau)]
    if len(kept) < n_points:
        extra = rng.integers(0, len(kept), size=n_points - len(kept))
        kept = np.concatenate([kept, kept[extra]], axis=0)
    return kept


def resample_to(points, n, rng):
    """Subsample without replacement (or pad with replacement) to n points."""
    points = np.asarray(points, dtype=np.float64)
    if len(points) == n:
        return points
    if len(points) > n:
        return points[rng.choice(len(points), size=n, replace=False)]
    extra = rng.integers(0, len(points), size=n - len(points))
    return np.concatenate([points, points[extra]], axis=0)


# ---------------------------------------------------------------------------
# dataset assembly


@dataclass(frozen=True)
class DatasetSpec:
    """Everything needed to rebuild a dataset bit-exactly."""

    categories: tuple
    counts: tuple                  # per-category object counts
    n_points: int = 2048
    tau: float = 0.5
    seed: int = 0
    split: tuple = (0.4, 0.4, 0.2)  # incomplete / complete / eval fractions

    def __post_init__(self):
        if len(self.categories) != len(self.counts):
            raise ValueError("categories and counts must align")
        for c in self.categories:
            if c not in CATEGORIES:
                raise ValueError(f"unknown category {c!r} (choose from {CATEGORIES})")
        if any(k < 1 for k in self.counts):
            raise ValueError("per-category counts must be >= 1")
        if not 0.0 < self.tau < 1.0:
            raise ValueError("tau must be in (0, 1)")
        if self.n_points < 1:
            raise ValueError("n_points must be positive")

    @classmethod
    def from_total(cls, categories, total, **kw):
        """Distribute a total object count round-robin across categories."""
        categories = tuple(categories)
        base = total // len(categories)
        rem = total % len(categories)
        counts = tuple(base + (1 if i < rem else 0) for i in range(len(categories)))
        return cls(categories=categories, counts=counts, **kw)


@dataclass
class ShapeSample:
    id: str
    category: str
    complete: np.ndarray
    partials: list = field(default_factory=list)  # 8 views
    split: str | None = None


def generate_sample(spec: DatasetSpec, cat_idx, obj_idx) -> ShapeSample:
    """One object with its 8 partial views; owns an independent seeded stream."""
    rng = np.random.default_rng(np.random.SeedSequence((spec.seed, cat_idx, obj_idx)))
    category = spec.categories[cat_idx]
    complete = generate_complete(category, rng, spec.n_points)
    partials = [
        make_partial(complete, view, spec.tau, rng, spec.n_points)
        for view in CUBE_CORNER_VIEWS
    ]
    return ShapeSample(id=f"{category}-{obj_idx:04d}", category=category,
                       complete=complete, partials=partials)


@dataclass
class Dataset:
    spec: DatasetSpec
    samples: list

    def by_split(self, split):
        return [s for s in self.samples if s.split == split]

    def incomplete_pool(self):
        """Stacked partial clouds of the incomplete-pool instances."""
        out = [p for s in self.by_split("incomplete") for p in s.partials]
        return np.stack(out)

    def complete_pool(self):
        """Stacked complete clouds of the complete-pool instances."""
        return np.stack([s.complete for s in self.by_split("complete")])


def build_dataset(spec: DatasetSpec) -> Dataset:
    """Generate all objects and split instances into disjoint unpaired pools.

    The incomplete and complete training pools come from disjoint object
    instances; only the eval split keeps its complete/partial pairing.
    """
    f_inc, f_comp, _ = spec.split
    samples = []
    for ci, count in enumerate(spec.counts):
        n_inc = int(f_inc * count)
        n_comp = int(f_comp * count)
        n_eval = count - n_inc - n_comp
        if min(n_inc, n_comp, n_eval) < 1:
            raise ValueError(
                f"count {count} for {spec.categories[ci]!r} too small to split "
                f"into non-empty incomplete/complete/eval pools"
            )
        for oi in range(count):
            s = generate_sample(spec, ci, oi)
            if oi < n_inc:
                s.split = "incomplete"
            elif oi < n_inc + n_comp:
                s.split = "complete"
            else:
                s.split = "eval"
            samples.append(s)
    return Dataset(spec=spec, samples=samples)
