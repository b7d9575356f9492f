"""Self-contained verification suites behind ``cdnd verify``."""
from __future__ import annotations

import math
from importlib import resources
from typing import Callable

import numpy as np

from . import autodiff as ad
from . import geometry as geo
from . import ot_theory as ot
from .autodiff import Tensor
from .losses import LossWeights, chamfer, cls_loss, dnwd_loss, nwd_loss, ssl_loss, target_consistency_loss
from .models import CDNDModel, ModelConfig
from .ot_theory import CheckReport

FD_STEP = 1e-5
FD_TOL = 1e-4


def fixture(name: str) -> np.ndarray:
    with resources.as_file(resources.files("cdnd") / "fixtures" / name) as path:
        return geo.read_cloud(path)


def _report(name: str, deviation: float, tol: float, detail: str = "") -> CheckReport:
    ok = bool(np.isfinite(deviation) and deviation <= tol)
    return CheckReport(name, ok, float(deviation), [] if ok else [detail or f"deviation {deviation:.3e} > {tol:.1e}"])


# -- gradient suite --------------------------------------------------------------------------------


def micro_model(seed: int = 0, num_classes: int = 3, recon_points: int = 4) -> CDNDModel:
    cfg = ModelConfig(encoder_widths=(3, 8, 8, 6), classifier_widths=(6, 5), decoder_widths=(6, 5),
                      num_classes=num_classes, recon_points=recon_points)
    model = CDNDModel.init(cfg, seed)
    rng = np.random.default_rng(seed + 100)
    for p in model.params.values():  # non-zero biases keep units away from exact relu kinks
        if p.value.ndim == 1:
            p.value = rng.uniform(0.05, 0.2, p.value.shape)
    return model


def micro_batch(seed: int = 0, b: int = 2, n: int = 16, k: int = 2, m: int = 1):
    """Two-domain micro-batch with curvature deformation applied; returns (source, target, deform cfg)."""
    from .training import DomainBatch

    rng = np.random.default_rng(seed)
    dcfg = geo.DeformConfig(k=k, m=m, n_deform=1, curvature_neighborhood=6)
    batches = []
    for domain in ("source", "target"):
        clouds = [rng.uniform(-1, 1, (n, 3)) for _ in range(b)]
        deformed = [geo.curvature_deform(c, dcfg, rng) for c in clouds]
        labels = rng.integers(3, size=b) if domain == "source" else None
        batches.append(DomainBatch(clouds, deformed, labels, domain))
    return batches[0], batches[1], dcfg


def param_fd_error(model: CDNDModel, name: str, objective: Callable[[], Tensor], step: float = FD_STEP) -> float:
    """Finite-difference check of ``objective`` w.r.t. one named parameter of ``model``."""
    param = model.params[name]

    def f(x: Tensor) -> Tensor:
        model.params[name] = x
        try:
            return objective()
        finally:
            model.params[name] = param

    return ad.finite_difference_check(f, param.value, step)


def gradient_suite() -> list[CheckReport]:
    rng = np.random.default_rng(11)
    out = []
    out.append(_report("fd.squared_norm", ad.finite_difference_check(lambda x: ad.total(ad.square(x)),
                                                                      rng.standard_normal(6)), 1e-6))
    out.append(_report("fd.nuclear_norm", ad.finite_difference_check(ad.nuclear_norm,
                                                                      rng.standard_normal((4, 3))), FD_TOL))
    target = rng.standard_normal((5, 3))
    out.append(_report("fd.chamfer", ad.finite_difference_check(lambda x: chamfer(target, x),
                                                                rng.standard_normal((6, 3))), FD_TOL))
    labels = np.array([0, 2, 1, 2])
    out.append(_report("fd.cls_loss", ad.finite_difference_check(
        lambda x: cls_loss(ad.softmax_rows(x), labels), rng.standard_normal((4, 3))), FD_TOL))
    fixed = ad.softmax_rows(Tensor(rng.standard_normal((4, 3))))
    out.append(_report("fd.dnwd_loss", ad.finite_difference_check(
        lambda x: dnwd_loss([ad.softmax_rows(x)], [fixed]), rng.standard_normal((4, 3))), FD_TOL))
    out.append(_report("fd.nwd_loss", ad.finite_difference_check(
        lambda x: nwd_loss([fixed], [ad.softmax_rows(x)]), rng.standard_normal((4, 3))), FD_TOL))
    out.append(_report("fd.target_consistency", ad.finite_difference_check(
        lambda x: target_consistency_loss([ad.softmax_rows(x)], [fixed]), rng.standard_normal((4, 3))), FD_TOL))

    # gradient reversal: exact negation scaled by lambda
    x = Tensor(rng.standard_normal((3, 2)), requires_grad=True)
    upstream = rng.standard_normal((3, 2))
    ad.gradient_reverse(x, 0.7).backward(upstream)
    out.append(_report("grl.backward", float(np.max(np.abs(x.grad - (-0.7 * upstream)))), 0.0))

    out.append(_report("fd.full_objective", full_objective_fd_error(), FD_TOL))
    return out


def full_objective_fd_error(seed: int = 3, alignment: str = "dnwd") -> float:
    """Worst relative error of the composed objective over every parameter of a micro model.

    The reversal layer is run with lambda = -1 (plain pass-through) so the tape
    gradient is the true gradient of the scalar; reversal itself is checked separately.
    """
    from .training import TrainConfig, build_objective

    source, target, dcfg = micro_batch(seed)
    model = micro_model(seed, recon_points=dcfg.reconstruction_size(16))
    cfg = TrainConfig(weights=LossWeights(), alignment=alignment, deform=dcfg, batch_size=2)
    worst = 0.0
    for name in list(model.params):
        err = param_fd_error(model, name, lambda: build_objective(model, source, target, cfg, grl_lambda=-1.0)[0])
        worst = max(worst, err)
    return worst


# -- theory suite -------------------------------------------------------------------------------------


def random_measure(rng, labels) -> ot.DiscreteMeasure:
    w = rng.uniform(0.01, 1.0, len(labels))
    return ot.DiscreteMeasure(list(labels), w / w.sum())


def lemma1_suite(draws: int = 100, partitions: int = 500, seed: int = 0) -> CheckReport:
    rng = np.random.default_rng(seed)
    worst, failures = 0.0, []
    for i in range(draws):
        n1, n2 = rng.integers(1, 11, size=2)
        nu1 = random_measure(rng, [("a", j) for j in range(n1)])
        nu2 = random_measure(rng, [("b", j) for j in range(n2)])
        p1 = float(rng.uniform())
        rep = ot.check_probability_axioms(ot.mixture(nu1, nu2, p1, 1.0 - p1), partitions, rng)
        worst = max(worst, rep.worst_deviation)
        if not rep.passed:
            failures.append(f"draw {i}: {rep.failures}")
    return CheckReport("lemma1.mixture_axioms", not failures, worst, failures)


def _uniform_on(rng, size, pool):
    return ot.DiscreteMeasure.uniform([pool[i] for i in rng.choice(len(pool), size, replace=False)])


def w1_enumeration_suite(trials: int = 100, seed: int = 1) -> CheckReport:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        size = int(rng.integers(1, 7))
        metric = ot.FiniteMetric.euclidean(rng.standard_normal((12, 2)))
        mu, nu = _uniform_on(rng, size, metric.points), _uniform_on(rng, size, metric.points)
        worst = max(worst, abs(ot.wasserstein1_exact(mu, nu, metric) - ot.wasserstein1_enumerate(mu, nu, metric)))
    return _report("w1.enumeration", worst, 1e-12)


def w1_metric_suite(triples: int = 200, seed: int = 2) -> list[CheckReport]:
    rng = np.random.default_rng(seed)
    reports = []
    plain = ot.FiniteMetric.euclidean(rng.standard_normal((10, 3)))
    block = ot.FiniteMetric.two_block(ot.FiniteMetric.euclidean(rng.uniform(size=(5, 2))),
                                      ot.FiniteMetric.euclidean(rng.uniform(size=(5, 2))), cross=2.0)
    for label, metric in (("w1.metric_axioms", plain), ("w1.metric_axioms_two_block", block)):
        worst, failures = 0.0, []
        for _ in range(triples):
            size = int(rng.integers(1, 5))
            measures = [_uniform_on(rng, size, metric.points) for _ in range(3)]
            rep = ot.metric_axioms_check(metric, measures)
            worst = max(worst, rep.worst_deviation)
            failures += rep.failures
        reports.append(CheckReport(label, not failures, worst, failures[:5]))
    return reports


def w1_real_line_suite(trials: int = 100, seed: int = 3) -> CheckReport:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        size = int(rng.integers(1, 8))
        xs = rng.standard_normal(2 * size)
        metric = ot.FiniteMetric.euclidean(xs[:, None])
        mu = ot.DiscreteMeasure.uniform(list(range(size)))
        nu = ot.DiscreteMeasure.uniform(list(range(size, 2 * size)))
        closed = float(np.mean(np.abs(np.sort(xs[:size]) - np.sort(xs[size:]))))
        worst = max(worst, abs(ot.wasserstein1_exact(mu, nu, metric) - closed))
    return _report("w1.real_line_closed_form", worst, 1e-12)


def norm_bounds_suite(trials: int = 1000, seed: int = 4) -> CheckReport:
    rng = np.random.default_rng(seed)
    worst, failures = 0.0, []
    for _ in range(trials):
        b, k = rng.integers(1, 17), rng.integers(2, 9)
        p = rng.uniform(size=(b, k)) ** rng.uniform(0.2, 5.0)
        p /= p.sum(axis=1, keepdims=True)
        rep = ot.nuclear_frobenius_bounds(p)
        worst = max(worst, rep.worst_deviation)
        failures += rep.failures
    return CheckReport("nuclear_frobenius_bounds", not failures, worst, failures[:5])


def theory_suite() -> list[CheckReport]:
    return [lemma1_suite(), w1_enumeration_suite(), *w1_metric_suite(), w1_real_line_suite(), norm_bounds_suite()]


# -- geometry suite -----------------------------------------------------------------------------------


def geometry_suite() -> list[CheckReport]:
    out = []
    plane = fixture("coplanar_patch.xyz")
    out.append(_report("curvature.coplanar", geo.curvature_of(plane), 1e-9))
    cube = fixture("cube_corners.xyz")
    out.append(_report("curvature.cube_corners", abs(geo.curvature_of(cube) - 1.0 / 3.0), 1e-9))

    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(100):
        c = geo.pca_curvature(rng.standard_normal((int(rng.integers(20, 80)), 3)) * rng.uniform(0.1, 3, 3), 10)
        worst = max(worst, float(max(-c.min(), c.max() - 1.0 / 3.0, 0.0)))
    out.append(_report("curvature.bounds", worst, 1e-9))

    mismatches = 0
    for _ in range(50):
        pts = rng.standard_normal((int(rng.integers(2, 65)), 3))
        k = int(rng.integers(1, len(pts) + 1))
        mismatches += geo.farthest_point_sample(pts, k) != brute_force_fps(pts, k)
        q, m = int(rng.integers(len(pts))), int(rng.integers(0, len(pts)))
        mismatches += geo.k_nearest(pts, q, m) != brute_force_knn(pts, q, m)
    out.append(_report("sampling.fps_knn_oracle", float(mismatches), 0.0))

    h = geo.diversity_score(geo.Region(0, (0, 1, 2)), np.array([0.0, 0.5, 1.0]), "entropy").score
    out.append(_report("entropy.reference", abs(h - reference_entropy([0.0, 0.5, 1.0])), 1e-12))
    flat = geo.diversity_score(geo.Region(0, (0, 1, 2)), np.full(3, 0.2), "entropy").score
    out.append(_report("entropy.constant_region", abs(flat), 0.0))

    mean_dev, var_dev = deformation_statistics()
    out.append(_report("deform.gaussian_mean", mean_dev, 4 * math.sqrt(0.001 / 256)))
    out.append(_report("deform.gaussian_variance", var_dev, 0.0003))
    return out


def brute_force_fps(pts: np.ndarray, k: int) -> list[int]:
    chosen = [0]
    while len(chosen) < k:
        best, best_d = None, -1.0
        for i in range(len(pts)):
            if i in chosen:
                continue
            d = min(float(np.sum((pts[i] - pts[j]) ** 2)) for j in chosen)
            if d > best_d:
                best, best_d = i, d
        chosen.append(best)
    return chosen


def brute_force_knn(pts: np.ndarray, q: int, m: int) -> list[int]:
    cands = sorted((float(np.sum((pts[i] - pts[q]) ** 2)), i) for i in range(len(pts)) if i != q)
    return [i for _, i in cands[:m]]


def reference_entropy(values) -> float:
    lo, hi = min(values), max(values)
    total = 0.0
    for v in values:
        z = (v - lo) / (hi - lo + 1e-10)
        total -= z * math.log(z + 1e-10)
    return total


def deformation_statistics(seed: int = 0, per_region: int = 32, regions: int = 8) -> tuple[float, float]:
    """Worst per-axis |mean - centroid| and |variance - 0.001| over 256 replaced points."""
    rng = np.random.default_rng(seed)
    centers = rng.uniform(-5, 5, (regions, 3))
    cloud = np.concatenate([c + 0.1 * rng.standard_normal((per_region, 3)) for c in centers])
    selected = [geo.Region(r * per_region, tuple(range(r * per_region, (r + 1) * per_region)))
                for r in range(regions)]
    out = geo.deform(cloud, selected, 0.001, rng)
    mean_dev = var_dev = 0.0
    resid = []
    for r in selected:
        idx = list(r.member_indices)
        centroid = cloud[idx].mean(axis=0)
        resid.append(out.points[idx] - centroid)
    resid = np.concatenate(resid)
    mean_dev = float(np.max(np.abs(resid.mean(axis=0))))
    var_dev = float(np.max(np.abs(resid.var(axis=0) - 0.001)))
    return mean_dev, var_dev


SUITES = {"grad": gradient_suite, "theory": theory_suite, "geometry": geometry_suite}


def run_suites(names) -> list[CheckReport]:
    reports = []
    for name in names:
        reports += SUITES[name]()
    return reports

