"""Point-cloud geometry: sampling, neighbourhoods, curvature, diversity and deformation.

Everything here is non-differentiable and deterministic given an explicit
``numpy.random.Generator``. Ties are always broken towards the lowest index.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Sequence

import numpy as np

Statistic = Literal["entropy", "std"]
SelectMode = Literal["lowest", "highest", "random"]
FpsStart = Literal["index_zero", "seeded_random"]

ENTROPY_EPS = 1e-10
DEGENERATE_TRACE = 1e-12


class GeometryError(ValueError):
    """Invalid argument for a geometry operation."""


def as_cloud(points) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] < 1:
        raise GeometryError(f"expected an (n, 3) array with n >= 1, got shape {pts.shape}")
    if not np.all(np.isfinite(pts)):
        raise GeometryError("point cloud contains non-finite coordinates")
    return pts


@dataclass(frozen=True)
class Region:
    center_index: int
    member_indices: tuple[int, ...]


@dataclass(frozen=True)
class DiversityScore:
    region_index: int
    score: float
    statistic: Statistic


@dataclass
class DeformConfig:
    k: int = 8
    m: int | None = None  # None -> ceil(n / k) - 1
    n_deform: int = 1
    mode: SelectMode = "lowest"
    statistic: Statistic = "entropy"
    variance: float = 0.001
    curvature_neighborhood: int = 20
    fps_start: FpsStart = "index_zero"

    def neighbors_for(self, n: int) -> int:
        return self.m if self.m is not None else math.ceil(n / self.k) - 1

    def validate(self, n: int) -> None:
        m = self.neighbors_for(n)
        if self.k < 1 or self.k > n:
            raise GeometryError(f"k={self.k} must be in [1, {n}]")
        if not 1 <= self.n_deform <= self.k:
            raise GeometryError(f"n_deform={self.n_deform} must be in [1, k={self.k}]")
        if m < 0 or m + 1 > n:
            raise GeometryError(f"m={m} needs m + 1 <= n={n}")
        if not self.variance > 0:
            raise GeometryError("variance must be positive")
        if self.mode not in ("lowest", "highest", "random"):
            raise GeometryError(f"unknown mode {self.mode!r}")
        if self.statistic not in ("entropy", "std"):
            raise GeometryError(f"unknown statistic {self.statistic!r}")

    def reconstruction_size(self, n: int) -> int:
        """Points the decoder emits: one slot per member of every deformed region."""
        return self.n_deform * (self.neighbors_for(n) + 1)


@dataclass
class DeformedCloud:
    points: np.ndarray
    deformed_indices: np.ndarray
    original_region_points: np.ndarray
    source_cloud_id: str = ""


# -- neighbourhoods -------------------------------------------------------------------


def pairwise_sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    diff = a[:, None, :] - b[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def farthest_point_sample(cloud, k: int, start: FpsStart = "index_zero",
                          rng: np.random.Generator | None = None) -> list[int]:
    pts = as_cloud(cloud)
    n = len(pts)
    if not 1 <= k <= n:
        raise GeometryError(f"k={k} must be in [1, {n}]")
    if start == "index_zero":
        first = 0
    elif start == "seeded_random":
        if rng is None:
            raise GeometryError("seeded_random start needs a generator")
        first = int(rng.integers(n))
    else:
        raise GeometryError(f"unknown start rule {start!r}")

    chosen = [first]
    min_d = np.sum((pts - pts[first]) ** 2, axis=1)
    min_d[first] = -1.0
    for _ in range(k - 1):
        nxt = int(np.argmax(min_d))  # argmax returns the first maximum
        chosen.append(nxt)
        min_d = np.minimum(min_d, np.sum((pts - pts[nxt]) ** 2, axis=1))
        min_d[chosen] = -1.0
    return chosen


def k_nearest(cloud, query_index: int, m: int) -> list[int]:
    pts = as_cloud(cloud)
    n = len(pts)
    if not 0 <= m <= n - 1:
        raise GeometryError(f"m={m} must be in [0, {n - 1}]")
    d = np.sum((pts - pts[query_index]) ** 2, axis=1)
    order = np.lexsort((np.arange(n), d))  # distance, then index
    order = order[order != query_index]
    return [int(i) for i in order[:m]]


def _neighborhood_table(pts: np.ndarray, size: int) -> np.ndarray:
    """Indices of the ``size`` nearest points of every point, self included first."""
    n = len(pts)
    d = pairwise_sq_dists(pts, pts)
    d[np.arange(n), np.arange(n)] = -1.0
    return np.argsort(d, axis=1, kind="stable")[:, :size]


# -- curvature ---------------------------------------------------------------------------


def curvature_of(neighborhood: np.ndarray) -> float:
    """Surface variation of one neighbourhood: smallest covariance eigenvalue over the trace."""
    centered = neighborhood - neighborhood.mean(axis=0)
    cov = centered.T @ centered / len(neighborhood)
    eig = np.clip(np.linalg.eigvalsh(cov), 0.0, None)
    total = eig.sum()
    if total < DEGENERATE_TRACE:
        return 0.0
    return float(eig[0] / total)


def pca_curvature(cloud, neighborhood_size: int = 20) -> np.ndarray:
    pts = as_cloud(cloud)
    n = len(pts)
    if neighborhood_size < 3:
        raise GeometryError("neighborhood_size must be >= 3")
    if neighborhood_size > n:
        raise GeometryError(f"neighborhood_size={neighborhood_size} exceeds n={n}")
    nbrs = pts[_neighborhood_table(pts, neighborhood_size)]  # (n, s, 3)
    centered = nbrs - nbrs.mean(axis=1, keepdims=True)
    cov = np.einsum("nsi,nsj->nij", centered, centered) / neighborhood_size
    eig = np.clip(np.linalg.eigvalsh(cov), 0.0, None)
    total = eig.sum(axis=1)
    safe = np.where(total < DEGENERATE_TRACE, 1.0, total)
    return np.where(total < DEGENERATE_TRACE, 0.0, eig[:, 0] / safe)


# -- regions -------------------------------------------------------------------------------


def partition_regions(cloud, config: DeformConfig,
                      rng: np.random.Generator | None = None) -> list[Region]:
    pts = as_cloud(cloud)
    config.validate(len(pts))
    m = config.neighbors_for(len(pts))
    centers = farthest_point_sample(pts, config.k, config.fps_start, rng)
    return [Region(c, (c, *k_nearest(pts, c, m))) for c in centers]


def diversity_score(region: Region, curvatures: np.ndarray, statistic: Statistic = "entropy",
                    region_index: int = 0) -> DiversityScore:
    c = np.asarray(curvatures, dtype=np.float64)[list(region.member_indices)]
    if statistic == "entropy":
        c_norm = (c - c.min()) / (c.max() - c.min() + ENTROPY_EPS)
        score = float(-np.sum(c_norm * np.log(c_norm + ENTROPY_EPS))) + 0.0  # -0.0 -> 0.0
    elif statistic == "std":
        score = float(np.std(c))
    else:
        raise GeometryError(f"unknown statistic {statistic!r}")
    return DiversityScore(region_index, score, statistic)


def select_regions(regions: Sequence[Region], scores: Sequence[DiversityScore], n_deform: int,
                   mode: SelectMode = "lowest",
                   rng: np.random.Generator | None = None) -> list[Region]:
    k = len(regions)
    if len(scores) != k:
        raise GeometryError("need one score per region")
    if not 1 <= n_deform <= k:
        raise GeometryError(f"n_deform={n_deform} must be in [1, {k}]")
    values = np.array([s.score for s in scores])
    idx = np.arange(k)
    if mode == "lowest":
        order = np.lexsort((idx, values))
    elif mode == "highest":
        order = np.lexsort((idx, -values))
    elif mode == "random":
        if rng is None:
            raise GeometryError("random mode needs a generator")
        order = rng.choice(k, size=n_deform, replace=False)
    else:
        raise GeometryError(f"unknown mode {mode!r}")
    return [regions[int(i)] for i in order[:n_deform]]


def deform(cloud, selected: Sequence[Region], variance: float = 0.001,
           rng: np.random.Generator | None = None, cloud_id: str = "") -> DeformedCloud:
    pts = as_cloud(cloud)
    if not selected:
        raise GeometryError("empty region selection")
    if not variance > 0:
        raise GeometryError("variance must be positive")
    if rng is None:
        raise GeometryError("deform needs a generator")

    # Each replaced point uses the centroid of the first selected region holding it.
    means: dict[int, np.ndarray] = {}
    for region in selected:
        centroid = pts[list(region.member_indices)].mean(axis=0)
        for i in region.member_indices:
            means.setdefault(int(i), centroid)
    index = np.array(sorted(means), dtype=np.int64)
    mu = np.stack([means[int(i)] for i in index])

    out = pts.copy()
    out[index] = mu + math.sqrt(variance) * rng.standard_normal(mu.shape)
    return DeformedCloud(out, index, pts[index].copy(), cloud_id)


@dataclass
class CloudAnalysis:
    """Cached per-cloud geometry: regions and their diversity scores."""

    regions: list[Region]
    curvatures: np.ndarray
    scores: dict[str, list[DiversityScore]] = field(default_factory=dict)


def analyze(cloud, config: DeformConfig, rng: np.random.Generator | None = None) -> CloudAnalysis:
    pts = as_cloud(cloud)
    regions = partition_regions(pts, config, rng)
    curv = pca_curvature(pts, min(config.curvature_neighborhood, len(pts)))
    scores = {
        stat: [diversity_score(r, curv, stat, j) for j, r in enumerate(regions)]
        for stat in ("entropy", "std")
    }
    return CloudAnalysis(regions, curv, scores)


def curvature_deform(cloud, config: DeformConfig, rng: np.random.Generator,
                     analysis: CloudAnalysis | None = None, cloud_id: str = "") -> DeformedCloud:
    """Full pipeline: regions, diversity ranking, selection, Gaussian replacement."""
    pts = as_cloud(cloud)
    if analysis is None:
        analysis = analyze(pts, config, rng)
    chosen = select_regions(analysis.regions, analysis.scores[config.statistic],
                            config.n_deform, config.mode, rng)
    return deform(pts, chosen, config.variance, rng, cloud_id)


# -- text format ----------------------------------------------------------------------------


class CloudParseError(ValueError):
    def __init__(self, path, line_no: int, message: str):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = path
        self.line_no = line_no


def read_cloud(path) -> np.ndarray:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            parts = text.split()
            if len(parts) != 3:
                raise CloudParseError(path, line_no, f"expected 3 values, got {len(parts)}")
            try:
                rows.append([float(p) for p in parts])
            except ValueError as exc:
                raise CloudParseError(path, line_no, str(exc)) from None
    if not rows:
        raise CloudParseError(path, 0, "no points")
    pts = np.array(rows, dtype=np.float64)
    if not np.all(np.isfinite(pts)):
        raise CloudParseError(path, 0, "non-finite coordinate")
    return pts


def format_cloud(points: np.ndarray) -> str:
    return "".join(f"{x!r} {y!r} {z!r}\n" for x, y, z in np.asarray(points).tolist())


def write_cloud(path, points: np.ndarray, header: str | None = None) -> None:
    text = format_cloud(points)
    if header:
        text = "".join(f"# {h}\n" for h in header.splitlines()) + text
    Path(path).write_text(text, encoding="utf-8", newline="\n")
