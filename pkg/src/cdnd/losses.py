"""Chamfer reconstruction, cross-entropy and nuclear-norm discrepancy losses."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .geometry import DeformedCloud, pairwise_sq_dists

CE_EPS = 1e-12


class LossError(ValueError):
    pass


@dataclass
class LossWeights:
    alpha: float = 0.5
    gamma: float = 0.5
    beta1: float = 1.0
    beta2: float = 0.2

    def validate(self):
        for name in ("alpha", "gamma", "beta1", "beta2"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise LossError(f"weight {name}={v} must be finite and >= 0")


def _tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def chamfer(r1, r2) -> Tensor:
    """Sum of squared nearest-neighbour distances in both directions (no averaging)."""
    a, b = _tensor(r1), _tensor(r2)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[0] == 0 or b.shape[0] == 0:
        raise LossError(f"chamfer needs two non-empty point sets, got {a.shape} and {b.shape}")
    d = pairwise_sq_dists(a.value, b.value)
    nn_ab = np.argmin(d, axis=1)
    nn_ba = np.argmin(d, axis=0)
    rows = np.arange(len(a.value))
    cols = np.arange(len(b.value))
    value = d[rows, nn_ab].sum() + d[nn_ba, cols].sum()

    def back(g):
        g = float(g)
        diff_ab = a.value - b.value[nn_ab]  # a_i - nearest b
        diff_ba = b.value - a.value[nn_ba]  # b_j - nearest a
        ga = 2.0 * diff_ab
        gb = 2.0 * diff_ba
        np.add.at(gb, nn_ab, -2.0 * diff_ab)
        np.add.at(ga, nn_ba, -2.0 * diff_ba)
        return g * ga, g * gb

    return ad.make_node(value, (a, b), back, "chamfer")


def ssl_loss(pairs: Sequence[tuple[DeformedCloud, Tensor]]) -> Tensor:
    if not pairs:
        raise LossError("ssl_loss needs at least one pair")
    terms = [chamfer(deformed.original_region_points, recon) for deformed, recon in pairs]
    out = terms[0]
    for t in terms[1:]:
        out = out + t
    return out


def cls_loss(probs: Tensor, labels) -> Tensor:
    labels = np.asarray(labels, dtype=np.int64)
    b, k = probs.shape
    if labels.shape != (b,):
        raise LossError(f"need {b} labels, got shape {labels.shape}")
    if np.any(labels < 0) or np.any(labels >= k):
        raise LossError(f"labels must lie in [0, {k})")
    picked = ad.pick(probs, np.arange(b), labels)
    return ad.scale(ad.mean(ad.log(ad.add(picked, Tensor(CE_EPS)))), -1.0)


def _mean_nuclear(preds: Sequence[Tensor]) -> Tensor:
    if not preds:
        raise LossError("need at least one prediction batch")
    total = ad.nuclear_norm(preds[0])
    for p in preds[1:]:
        total = total + ad.nuclear_norm(p)
    return ad.scale(total, 1.0 / len(preds))


def dnwd_loss(source_preds: Sequence[Tensor], target_preds: Sequence[Tensor]) -> Tensor:
    """Mean source nuclear norm minus mean target nuclear norm.

    Each batch is expected to stack originals with their deformed counterparts 1:1.
    """
    return _mean_nuclear(source_preds) - _mean_nuclear(target_preds)


def nwd_loss(source_preds: Sequence[Tensor], target_preds: Sequence[Tensor]) -> Tensor:
    """Same discrepancy on batches of original samples only."""
    return _mean_nuclear(source_preds) - _mean_nuclear(target_preds)


def target_consistency_loss(original_preds: Sequence[Tensor], deformed_preds: Sequence[Tensor]) -> Tensor:
    if len(original_preds) != len(deformed_preds):
        raise LossError("original and deformed target batches must pair up")
    return _mean_nuclear(original_preds) - _mean_nuclear(deformed_preds)


def total_objective(weights: LossWeights, l_cls, l_ssl, l_dnwd, l_nwd_t) -> tuple[Tensor, Tensor]:
    """Return (supervised part, adversarial part) of the weighted objective."""
    terms = [_tensor(t) for t in (l_cls, l_ssl, l_dnwd, l_nwd_t)]
    for t in terms:
        if not np.all(np.isfinite(t.value)):
            raise ad.NumericFailure("non-finite loss term", t.value)
    cls_t, ssl_t, dnwd_t, nwdt_t = terms
    supervised = ad.scale(cls_t, weights.alpha) + ad.scale(ssl_t, weights.gamma)
    adversarial = ad.scale(dnwd_t, weights.beta1) + ad.scale(nwdt_t, weights.beta2)
    return supervised, adversarial


def correlation_split(p: np.ndarray) -> tuple[float, float]:
    """Intra-class (trace) and inter-class (off-diagonal) mass of ``P^T P``."""
    z = p.T @ p
    ia = float(np.trace(z))
    return ia, float(z.sum() - ia)
