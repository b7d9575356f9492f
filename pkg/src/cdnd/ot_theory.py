"""Exact finite-space checks: mixture measures, 1-Wasserstein distance and norm bounds."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Hashable, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .autodiff import jacobi_svd

MASS_TOL = 1e-12
METRIC_TOL = 1e-9


@dataclass
class CheckReport:
    name: str
    passed: bool
    worst_deviation: float = 0.0
    failures: list[str] = field(default_factory=list)

    def __bool__(self):
        return self.passed


@dataclass
class DiscreteMeasure:
    support: list[Hashable]
    weights: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if len(self.support) != len(self.weights):
            raise ValueError("support and weights differ in length")
        if len(set(self.support)) != len(self.support):
            raise ValueError("support points must be distinct")

    @classmethod
    def uniform(cls, support: Sequence[Hashable]) -> DiscreteMeasure:
        return cls(list(support), np.full(len(support), 1.0 / len(support)))

    def mass(self, event) -> float:
        event = set(event)
        return float(sum(w for x, w in zip(self.support, self.weights) if x in event))


class FiniteMetric:
    """Distance table over a finite point set, validated on construction."""

    def __init__(self, points: Sequence[Hashable], table, tol: float = METRIC_TOL):
        self.points = list(points)
        self.table = np.asarray(table, dtype=np.float64)
        self.index = {p: i for i, p in enumerate(self.points)}
        n = len(self.points)
        if self.table.shape != (n, n):
            raise ValueError(f"distance table must be {n}x{n}")
        d = self.table
        if np.any(np.abs(d - d.T) > tol):
            raise ValueError("distance table is not symmetric")
        if np.any(np.abs(np.diag(d)) > tol):
            raise ValueError("d(x, x) must be 0")
        off = d[~np.eye(n, dtype=bool)]
        if np.any(off <= tol):
            raise ValueError("distinct points must have positive distance")
        if np.any(d[:, None, :] > d[:, :, None] + d[None, :, :] + tol):
            raise ValueError("triangle inequality violated")

    @classmethod
    def euclidean(cls, coords) -> FiniteMetric:
        coords = np.atleast_2d(np.asarray(coords, dtype=np.float64))
        if coords.shape[0] == 1 and coords.shape[1] > 1:
            coords = coords.T
        diff = coords[:, None, :] - coords[None, :, :]
        return cls(list(range(len(coords))), np.sqrt(np.sum(diff ** 2, axis=-1)))

    @classmethod
    def two_block(cls, d1: FiniteMetric, d2: FiniteMetric, cross: float) -> FiniteMetric:
        """Disjoint union of two metric spaces with a constant cross-block distance."""
        n1, n2 = len(d1.points), len(d2.points)
        table = np.full((n1 + n2, n1 + n2), float(cross))
        table[:n1, :n1] = d1.table
        table[n1:, n1:] = d2.table
        points = [(0, p) for p in d1.points] + [(1, p) for p in d2.points]
        return cls(points, table)

    def d(self, x, y) -> float:
        return float(self.table[self.index[x], self.index[y]])

    def cost(self, xs, ys) -> np.ndarray:
        return self.table[np.ix_([self.index[x] for x in xs], [self.index[y] for y in ys])]


def mixture(nu1: DiscreteMeasure, nu2: DiscreteMeasure, p1: float, p2: float) -> DiscreteMeasure:
    if set(nu1.support) & set(nu2.support):
        raise ValueError("mixture components must live on disjoint sample spaces")
    if p1 < 0 or p2 < 0 or abs(p1 + p2 - 1.0) > MASS_TOL:
        raise ValueError("mixture weights must be non-negative and sum to 1")
    return DiscreteMeasure(nu1.support + nu2.support,
                           np.concatenate([p1 * nu1.weights, p2 * nu2.weights]))


def random_partition(n: int, rng: np.random.Generator) -> list[np.ndarray]:
    blocks = int(rng.integers(1, n + 1))
    labels = rng.integers(blocks, size=n)
    return [np.flatnonzero(labels == b) for b in range(blocks)]


def check_probability_axioms(nu: DiscreteMeasure, trials: int = 500,
                             rng: np.random.Generator | None = None) -> CheckReport:
    """Non-negativity, unit mass and finite additivity over random partitions of the support."""
    rng = rng or np.random.default_rng(0)
    failures = []
    w = nu.weights
    worst = 0.0
    if np.any(w < 0):
        failures.append(f"negative weight {w.min()!r}")
        worst = max(worst, float(-w.min()))
    mass_err = abs(float(np.sum(w)) - 1.0)
    worst = max(worst, mass_err)
    if mass_err > MASS_TOL:
        failures.append(f"total mass off by {mass_err:.3e}")
    if nu.mass([]) != 0.0:
        failures.append("empty set has non-zero mass")
    for _ in range(trials):
        blocks = random_partition(len(nu.support), rng)
        parts = sum(nu.mass(nu.support[i] for i in b) for b in blocks)
        err = abs(parts - nu.mass(nu.support))
        worst = max(worst, err)
        if err > MASS_TOL:
            failures.append(f"additivity off by {err:.3e}")
            break
    return CheckReport("probability_axioms", not failures, worst, failures)


def wasserstein1_exact(mu: DiscreteMeasure, nu: DiscreteMeasure, metric: FiniteMetric) -> float:
    """Optimal transport cost between uniform measures of equal support size (assignment)."""
    n = len(mu.support)
    if n != len(nu.support):
        raise ValueError("supports must have equal size")
    for m in (mu, nu):
        if not np.allclose(m.weights, 1.0 / n, atol=MASS_TOL, rtol=0):
            raise ValueError("measures must be uniform")
    cost = metric.cost(mu.support, nu.support)
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].sum() / n)


def wasserstein1_enumerate(mu: DiscreteMeasure, nu: DiscreteMeasure, metric: FiniteMetric) -> float:
    cost = metric.cost(mu.support, nu.support)
    n = len(cost)
    return min(sum(cost[i, p[i]] for i in range(n)) for p in itertools.permutations(range(n))) / n


def metric_axioms_check(metric: FiniteMetric, measures: Sequence[DiscreteMeasure],
                        tol: float = METRIC_TOL) -> CheckReport:
    failures = []
    worst = 0.0
    k = len(measures)
    w = np.zeros((k, k))
    for i in range(k):
        for j in range(k):
            w[i, j] = wasserstein1_exact(measures[i], measures[j], metric)
    diag = float(np.max(np.abs(np.diag(w)))) if k else 0.0
    asym = float(np.max(np.abs(w - w.T))) if k else 0.0
    tri = float(np.max(w[:, None, :] - w[:, :, None] - w[None, :, :])) if k else 0.0
    for label, dev in (("identity", diag), ("symmetry", asym), ("triangle", tri)):
        worst = max(worst, dev)
        if dev > tol:
            failures.append(f"{label} violated by {dev:.3e}")
    return CheckReport("metric_axioms", not failures, worst, failures)


def nuclear_frobenius_bounds(p, tol: float = 1e-8) -> CheckReport:
    p = np.asarray(p, dtype=np.float64)
    _, s, _ = jacobi_svd(p)
    nuc = float(s.sum())
    fro = float(np.sqrt(np.sum(p ** 2)))
    upper = np.sqrt(min(p.shape)) * fro
    failures = []
    worst = max(0.0, fro - nuc, nuc - upper)
    if fro - nuc > tol:
        failures.append(f"nuclear {nuc!r} below Frobenius {fro!r}")
    if nuc - upper > tol:
        failures.append(f"nuclear {nuc!r} above sqrt(min(b,K))*Frobenius {upper!r}")
    if np.allclose(p.sum(axis=1), 1.0, atol=1e-12, rtol=0) and np.all(p >= 0):
        z = p.T @ p
        dev = abs(float(z.sum()) - p.shape[0])
        worst = max(worst, dev)
        if dev > 1e-9:
            failures.append(f"I_a + I_e differs from b by {dev:.3e}")
    return CheckReport("nuclear_frobenius_bounds", not failures, worst, failures)
