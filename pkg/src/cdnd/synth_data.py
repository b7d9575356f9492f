"""Two-domain synthetic shape benchmark.

The clean domain samples primitive surfaces uniformly. The shifted domain adds
scan-like artefacts: per-point noise, half-space occlusion with resampling,
non-uniform density and random rotation about the vertical axis.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .geometry import write_cloud

SHAPE_CLASSES = ("sphere", "box", "cylinder", "cone")
SPLITS = (("train", 0.70), ("val", 0.15), ("test", 0.15))
DOMAINS = ("clean", "shifted")


@dataclass
class ShapeSpec:
    shape: str = "sphere"
    n: int = 128
    aspect_range: tuple[float, float] = (0.6, 1.4)

    def validate(self):
        if self.shape not in SHAPE_CLASSES:
            raise ValueError(f"unknown shape {self.shape!r}")
        if self.n < 16:
            raise ValueError("shapes need at least 16 points")


@dataclass
class DomainShiftConfig:
    jitter_sigma: float = 0.0
    crop_fraction: float = 0.0
    density_bias: float = 0.0
    rotation: str = "none"  # none | z-random

    def validate(self):
        if not 0.0 <= self.crop_fraction <= 0.5:
            raise ValueError("crop_fraction must be in [0, 0.5]")
        if self.jitter_sigma < 0:
            raise ValueError("jitter_sigma must be >= 0")
        if self.density_bias < 0:
            raise ValueError("density_bias must be >= 0")
        if self.rotation not in ("none", "z-random"):
            raise ValueError(f"unknown rotation {self.rotation!r}")


SCAN_LIKE_SHIFT = DomainShiftConfig(jitter_sigma=0.02, crop_fraction=0.3, density_bias=1.5, rotation="z-random")


def normalize(points: np.ndarray, center: np.ndarray | None = None) -> np.ndarray:
    """Translate ``center`` (bounding-box midpoint by default) to the origin, scale to unit max norm."""
    if center is None:
        center = 0.5 * (points.min(axis=0) + points.max(axis=0))
    out = points - center
    radius = np.max(np.linalg.norm(out, axis=1))
    return out / radius if radius > 0 else out


def _unit_vectors(rng, n):
    v = rng.standard_normal((n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _disk(rng, n, radius):
    r = radius * np.sqrt(rng.uniform(size=n))
    t = rng.uniform(0, 2 * math.pi, n)
    return r * np.cos(t), r * np.sin(t)


def _sample_sphere(rng, n, _aspect):
    return _unit_vectors(rng, n)


def _sample_box(rng, n, aspect):
    ext = np.array([1.0, aspect[0], aspect[1]])
    areas = np.array([ext[1] * ext[2], ext[0] * ext[2], ext[0] * ext[1]]).repeat(2)
    face = rng.choice(6, size=n, p=areas / areas.sum())
    pts = rng.uniform(-1, 1, (n, 3)) * ext
    axis = face // 2
    sign = np.where(face % 2 == 0, 1.0, -1.0)
    pts[np.arange(n), axis] = sign * ext[axis]
    return pts


def _sample_cylinder(rng, n, aspect):
    radius, half_h = 1.0, aspect[0]
    side, cap = 2 * math.pi * radius * 2 * half_h, math.pi * radius ** 2
    part = rng.choice(3, size=n, p=np.array([side, cap, cap]) / (side + 2 * cap))
    pts = np.empty((n, 3))
    t = rng.uniform(0, 2 * math.pi, n)
    lat = part == 0
    pts[lat] = np.column_stack([radius * np.cos(t[lat]), radius * np.sin(t[lat]),
                                rng.uniform(-half_h, half_h, lat.sum())])
    for code, z in ((1, half_h), (2, -half_h)):
        sel = part == code
        x, y = _disk(rng, sel.sum(), radius)
        pts[sel] = np.column_stack([x, y, np.full(sel.sum(), z)])
    return pts


def _sample_cone(rng, n, aspect):
    radius, height = 1.0, 2.0 * aspect[0]
    slant = math.hypot(radius, height)
    side, base = math.pi * radius * slant, math.pi * radius ** 2
    on_side = rng.uniform(size=n) < side / (side + base)
    pts = np.empty((n, 3))
    k = on_side.sum()
    # lateral area density grows linearly with distance from the apex
    frac = np.sqrt(rng.uniform(size=k))
    t = rng.uniform(0, 2 * math.pi, k)
    pts[on_side] = np.column_stack([frac * radius * np.cos(t), frac * radius * np.sin(t),
                                    height / 2 - frac * height])
    x, y = _disk(rng, n - k, radius)
    pts[~on_side] = np.column_stack([x, y, np.full(n - k, -height / 2)])
    return pts


_SAMPLERS = {"sphere": _sample_sphere, "box": _sample_box, "cylinder": _sample_cylinder, "cone": _sample_cone}


def generate_shape(spec: ShapeSpec, rng: np.random.Generator) -> np.ndarray:
    """Sample ``spec.n`` surface points, centred on the shape's own centre, unit max norm."""
    spec.validate()
    aspect = rng.uniform(*spec.aspect_range, size=2)
    pts = _SAMPLERS[spec.shape](rng, spec.n, aspect)
    return normalize(pts, center=np.zeros(3))


# -- domain shift steps -------------------------------------------------------------------


def jitter(points, sigma, rng):
    if sigma <= 0:
        return points.copy()
    return points + sigma * rng.standard_normal(points.shape)


def crop_resample(points, fraction, rng, offset_sigma=0.01):
    """Drop the ``fraction`` of points furthest along a random direction, refill to n."""
    n = len(points)
    drop = int(round(fraction * n))
    if drop == 0:
        return points.copy()
    direction = _unit_vectors(rng, 1)[0]
    order = np.argsort(-(points @ direction), kind="stable")
    kept = points[np.sort(order[drop:])]
    refill = kept[rng.integers(len(kept), size=drop)] + offset_sigma * rng.standard_normal((drop, 3))
    return np.concatenate([kept, refill])


def density_resample(points, bias, rng, offset_sigma=0.005):
    """Resample n points with probability rising along a random direction (``bias`` = exponent)."""
    if bias <= 0:
        return points.copy()
    n = len(points)
    direction = _unit_vectors(rng, 1)[0]
    proj = points @ direction
    w = ((proj - proj.min()) / (np.ptp(proj) + 1e-12) + 0.05) ** bias
    idx = rng.choice(n, size=n, replace=True, p=w / w.sum())
    return points[idx] + offset_sigma * rng.standard_normal((n, 3))


def rotate_z(points, rng):
    t = rng.uniform(0, 2 * math.pi)
    c, s = math.cos(t), math.sin(t)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    return points @ rot.T


def apply_domain_shift(points, config: DomainShiftConfig, rng: np.random.Generator) -> np.ndarray:
    config.validate()
    out = jitter(np.asarray(points, dtype=np.float64), config.jitter_sigma, rng)
    out = crop_resample(out, config.crop_fraction, rng)
    out = density_resample(out, config.density_bias, rng)
    if config.rotation == "z-random":
        out = rotate_z(out, rng)
    return normalize(out)


# -- datasets --------------------------------------------------------------------------------


@dataclass
class ManifestRecord:
    path: str
    label: int
    domain: str
    split: str


@dataclass
class DatasetManifest:
    records: list[ManifestRecord]
    seed: int
    config: dict = field(default_factory=dict)
    root: Path | None = None

    def select(self, domain: str, split: str) -> list[ManifestRecord]:
        return [r for r in self.records if r.domain == domain and r.split == split]


def split_counts(total: int) -> list[int]:
    train = int(round(SPLITS[0][1] * total))
    val = int(round(SPLITS[1][1] * total))
    return [train, val, total - train - val]


def generate_dataset(shapes: Sequence[str] = SHAPE_CLASSES, shift: DomainShiftConfig = SCAN_LIKE_SHIFT,
                     per_class: int = 50, seed: int = 0, out_dir=".", n_points: int = 128,
                     aspect_range: tuple[float, float] = (0.6, 1.4)) -> DatasetManifest:
    out = Path(out_dir)
    shift.validate()
    counts = split_counts(per_class * len(shapes))
    split_of = [name for (name, _), c in zip(SPLITS, counts) for _ in range(c)]
    records = []
    for d_idx, domain in enumerate(DOMAINS):
        # interleave classes so every split stays balanced to within one sample
        order = [(i, c) for i in range(per_class) for c in range(len(shapes))]
        for pos, (i, c) in enumerate(order):
            rng = np.random.default_rng([seed, d_idx, c, i])
            cloud = generate_shape(ShapeSpec(shapes[c], n_points, aspect_range), rng)
            if domain == "shifted":
                cloud = apply_domain_shift(cloud, shift, rng)
            split = split_of[pos]
            rel = Path(domain) / split / f"{shapes[c]}_{i:04d}.xyz"
            try:
                (out / rel).parent.mkdir(parents=True, exist_ok=True)
                write_cloud(out / rel, cloud)
            except OSError as exc:
                raise OSError(f"cannot write {out / rel}: {exc}") from exc
            records.append(ManifestRecord(rel.as_posix(), c, domain, split))

    config = {
        "classes": ",".join(shapes),
        "per_class": per_class,
        "n_points": n_points,
        "aspect_range": f"{aspect_range[0]!r},{aspect_range[1]!r}",
        **{f"shift.{k}": v for k, v in asdict(shift).items()},
    }
    manifest = DatasetManifest(records, seed, config, out)
    write_manifest(out / "manifest.tsv", manifest)
    return manifest


def write_manifest(path, manifest: DatasetManifest) -> None:
    lines = [f"# seed={manifest.seed}"]
    lines += [f"# {k}={v}" for k, v in manifest.config.items()]
    lines += [f"{r.path}\t{r.label}\t{r.domain}\t{r.split}" for r in manifest.records]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def read_manifest(path) -> DatasetManifest:
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.tsv"
    config, records, seed = {}, [], 0
    for line_no, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition("=")
            if key == "seed":
                seed = int(value)
            else:
                config[key] = value
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise ValueError(f"{path}:{line_no}: expected 4 tab-separated fields")
        records.append(ManifestRecord(parts[0], int(parts[1]), parts[2], parts[3]))
    return DatasetManifest(records, seed, config, path.parent)
