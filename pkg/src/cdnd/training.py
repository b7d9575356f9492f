"""Adam, the single-step min-max training loop, evaluation and multi-seed runs."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import NumericFailure, Tensor
from .geometry import CloudAnalysis, DeformConfig, DeformedCloud, analyze, curvature_deform, read_cloud
from .losses import (LossWeights, cls_loss, dnwd_loss, nwd_loss, ssl_loss, target_consistency_loss,
                     total_objective)
from .models import CDNDModel, ModelConfig, model_state, save_checkpoint

log = logging.getLogger(__name__)

METRIC_FIELDS = ("epoch", "l_cls", "l_ssl", "l_dnwd", "l_nwd_t", "src_acc", "tgt_acc")
ALIGNMENTS = ("none", "nwd", "dnwd")


@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    epochs: int = 100
    batch_size: int = 16
    weights: LossWeights = field(default_factory=LossWeights)
    grl_lambda: float = 1.0
    grl_ramp_epochs: int = 0  # 0 -> constant lambda
    alignment: str = "dnwd"
    deform: DeformConfig = field(default_factory=DeformConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    seeds: tuple[int, ...] = (1, 2, 3)
    shuffle_seed: int = 0
    dataset: str = ""
    source_domain: str = "clean"
    target_domain: str = "shifted"
    workers: int = 1
    nuclear_scale: str = "per_row"  # per_row | none

    def validate(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.alignment not in ALIGNMENTS:
            raise ValueError(f"alignment must be one of {ALIGNMENTS}")
        if not math.isfinite(self.grl_lambda):
            raise ValueError("grl_lambda must be finite")
        if self.nuclear_scale not in ("per_row", "none"):
            raise ValueError("nuclear_scale must be per_row or none")
        if not self.seeds:
            raise ValueError("need at least one seed")
        self.weights.validate()

    @property
    def uses_deformation(self) -> bool:
        """Source-only training (no alignment, no reconstruction) never touches deformed clouds."""
        return self.alignment != "none" or self.weights.gamma > 0

    def lambda_at(self, epoch: int) -> float:
        if self.grl_ramp_epochs <= 0:
            return self.grl_lambda
        p = min(1.0, epoch / self.grl_ramp_epochs)
        return self.grl_lambda * (2.0 / (1.0 + math.exp(-10.0 * p)) - 1.0)


# -- optimiser -------------------------------------------------------------------------------


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(state: AdamState, params: dict[str, Tensor], grads: dict[str, np.ndarray | None],
              lr: float) -> None:
    """Bias-corrected Adam, updating ``params`` values in place."""
    for name, g in grads.items():
        if g is not None and not np.all(np.isfinite(g)):
            raise NumericFailure(f"non-finite gradient for {name}", name)
    state.step += 1
    t = state.step
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.value)
        if g.shape != p.value.shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != {p.value.shape}")
        m = state.m.get(name, np.zeros_like(p.value))
        v = state.v.get(name, np.zeros_like(p.value))
        m = state.beta1 * m + (1 - state.beta1) * g
        v = state.beta2 * v + (1 - state.beta2) * g * g
        state.m[name], state.v[name] = m, v
        m_hat = m / (1 - state.beta1 ** t)
        v_hat = v / (1 - state.beta2 ** t)
        p.value = p.value - lr * m_hat / (np.sqrt(v_hat) + state.eps)


# -- batches -----------------------------------------------------------------------------------


@dataclass
class DomainBatch:
    clouds: list[np.ndarray]
    deformed: list[DeformedCloud] | None = None
    labels: np.ndarray | None = None
    domain: str = "source"

    @property
    def deformed_points(self) -> list[np.ndarray]:
        return [d.points for d in self.deformed] if self.deformed else []


def _rows(a: Tensor, start: int, stop: int) -> Tensor:
    def back(g):
        full = np.zeros_like(a.value)
        full[start:stop] = g
        return (full,)

    return ad.make_node(a.value[start:stop], (a,), back, "rows")


@dataclass
class StepLosses:
    l_cls: float
    l_ssl: float
    l_dnwd: float
    l_nwd_t: float


def build_objective(model: CDNDModel, source: DomainBatch, target: DomainBatch, config: TrainConfig,
                    grl_lambda: float | None = None):
    """Forward all streams and return (scalar to minimise, loss terms).

    The adversarial part is subtracted behind a gradient reversal layer so one
    descent step ascends it in the classifier and descends it in the encoder.
    """
    lam = config.grl_lambda if grl_lambda is None else grl_lambda
    deformed = config.uses_deformation
    if deformed and (source.deformed is None or target.deformed is None):
        raise ValueError("this configuration needs deformed clouds in both batches")
    if source.labels is None:
        raise ValueError("source batch needs labels")

    bs, bt = len(source.clouds), len(target.clouds)
    streams = list(source.clouds)
    if deformed:
        streams += source.deformed_points + list(target.clouds) + target.deformed_points
    feats = model.encode(streams)

    # supervised: cross-entropy on source originals (and their deformations)
    n_src = 2 * bs if deformed else bs
    src_labels = np.concatenate([source.labels, source.labels]) if deformed else source.labels
    l_cls = cls_loss(model.classify(_rows(feats, 0, n_src)), src_labels)

    zero = Tensor(0.0)
    l_ssl = zero
    if deformed and config.weights.gamma > 0:
        s_d = _rows(feats, bs, 2 * bs)
        t_d = _rows(feats, 2 * bs + bt, 2 * bs + 2 * bt)
        recon = model.reconstruct(ad.concat_rows([s_d, t_d]))
        pairs = list(zip(source.deformed + target.deformed, recon))
        l_ssl = ad.scale(ssl_loss(pairs), 1.0 / len(pairs))  # per-sample mean, like the CE term

    l_align, l_nwd_t = zero, zero
    opt_align, opt_nwd_t = zero, zero
    if config.alignment != "none":
        rev = ad.gradient_reverse(feats, lam)
        p_t = model.classify(_rows(rev, 2 * bs, 2 * bs + bt))
        p_td = model.classify(_rows(rev, 2 * bs + bt, 2 * bs + 2 * bt))
        if config.alignment == "dnwd":
            p_src_mix = model.classify(_rows(rev, 0, 2 * bs))
            p_tgt_mix = model.classify(_rows(rev, 2 * bs, 2 * bs + 2 * bt))
            l_align = dnwd_loss([p_src_mix], [p_tgt_mix])
            align_rows = 2 * max(bs, bt)
        else:
            p_s = model.classify(_rows(rev, 0, bs))
            l_align = nwd_loss([p_s], [p_t])
            align_rows = max(bs, bt)
        l_nwd_t = target_consistency_loss([p_t], [p_td])
        opt_align, opt_nwd_t = l_align, l_nwd_t
        if config.nuclear_scale == "per_row":
            # nuclear norms grow like sqrt(rows); keep the critic on the scale of the CE term
            opt_align = ad.scale(l_align, 1.0 / align_rows)
            opt_nwd_t = ad.scale(l_nwd_t, 1.0 / bt)

    supervised, adversarial = total_objective(config.weights, l_cls, l_ssl, opt_align, opt_nwd_t)
    objective = supervised - adversarial
    terms = StepLosses(l_cls.item(), float(l_ssl.value), float(l_align.value), float(l_nwd_t.value))
    return objective, terms


def train_step(model: CDNDModel, source: DomainBatch, target: DomainBatch, config: TrainConfig,
               state: AdamState, grl_lambda: float | None = None) -> StepLosses:
    model.zero_grad()
    objective, terms = build_objective(model, source, target, config, grl_lambda)
    if not np.isfinite(objective.value):
        raise NumericFailure("non-finite objective", terms)
    objective.backward()
    adam_step(state, model.params, {k: p.grad for k, p in model.params.items()}, config.learning_rate)
    return terms


# -- evaluation ---------------------------------------------------------------------------------


def predict_logits(model: CDNDModel, clouds: Sequence[np.ndarray], chunk: int = 64) -> np.ndarray:
    out = []
    for i in range(0, len(clouds), chunk):
        out.append(model.logits(model.encode(list(clouds[i:i + chunk]))).value)
    return np.concatenate(out, axis=0)


def evaluate(model: CDNDModel, clouds: Sequence[np.ndarray], labels) -> float:
    if len(clouds) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    pred = np.argmax(predict_logits(model, clouds), axis=1)  # first max -> lowest class index
    return float(np.mean(pred == np.asarray(labels)))


# -- data ------------------------------------------------------------------------------------------


@dataclass
class Split:
    clouds: list[np.ndarray]
    labels: np.ndarray
    ids: list[str]


def load_split(dataset, domain: str, split: str) -> Split:
    from .synth_data import read_manifest

    manifest = read_manifest(dataset)
    recs = manifest.select(domain, split)
    if not recs:
        raise ValueError(f"no {domain}/{split} samples in {dataset}")
    clouds = [read_cloud(manifest.root / r.path) for r in recs]
    return Split(clouds, np.array([r.label for r in recs], dtype=np.int64), [r.path for r in recs])


@dataclass
class DatasetPair:
    source_train: Split
    source_val: Split
    target_train: Split
    target_test: Split
    source_test: Split | None = None

    @classmethod
    def load(cls, config: TrainConfig) -> DatasetPair:
        s, t = config.source_domain, config.target_domain
        return cls(load_split(config.dataset, s, "train"), load_split(config.dataset, s, "val"),
                   load_split(config.dataset, t, "train"), load_split(config.dataset, t, "test"),
                   load_split(config.dataset, s, "test"))


# -- runs --------------------------------------------------------------------------------------------


@dataclass
class RunMetrics:
    per_seed: dict[int, list[dict]]
    src_acc_mean: float
    src_acc_std: float
    tgt_acc_mean: float
    tgt_acc_std: float


def _fmt(x: float) -> str:
    return repr(float(x))


def _deform_batch(clouds, ids, analyses, deform_cfg, rng) -> list[DeformedCloud]:
    return [curvature_deform(c, deform_cfg, rng, analysis=a, cloud_id=i)
            for c, i, a in zip(clouds, ids, analyses)]


def train_seed(config: TrainConfig, data: DatasetPair, seed: int, out_dir: Path | None = None,
               analyses: tuple[list[CloudAnalysis], list[CloudAnalysis]] | None = None) -> list[dict]:
    """Train one model; write metrics/embeddings/checkpoint into ``out_dir`` if given."""
    config.validate()
    n_points = len(data.source_train.clouds[0])
    mcfg = ModelConfig(**{**config.model.__dict__, "recon_points": config.deform.reconstruction_size(n_points)})
    model = CDNDModel.init(mcfg, seed)
    state = AdamState()
    shuffle_rng = np.random.default_rng(config.shuffle_seed)  # shared across methods
    deform_rng = np.random.default_rng([seed, 1])

    if config.uses_deformation and analyses is None:
        analyses = precompute_analyses(config, data)

    ns, nt = len(data.source_train.clouds), len(data.target_train.clouds)
    steps = math.ceil(ns / config.batch_size)
    history = []
    metrics_fh = writer = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        metrics_fh = open(out_dir / "metrics.csv", "w", newline="", encoding="utf-8")
        writer = csv.writer(metrics_fh, lineterminator="\n")
        writer.writerow(METRIC_FIELDS)
    try:
        for epoch in range(1, config.epochs + 1):
            lam = config.lambda_at(epoch - 1)
            s_perm = shuffle_rng.permutation(ns)
            t_perm = np.concatenate([shuffle_rng.permutation(nt) for _ in range(math.ceil(ns / nt))])
            sums = np.zeros(4)
            for step in range(steps):
                s_idx = s_perm[step * config.batch_size:(step + 1) * config.batch_size]
                t_idx = t_perm[step * config.batch_size:step * config.batch_size + len(s_idx)]
                source = _batch(data.source_train, s_idx, "source")
                target = _batch(data.target_train, t_idx, "target")
                if config.uses_deformation:
                    source.deformed = _deform_batch(source.clouds, [data.source_train.ids[i] for i in s_idx],
                                                    [analyses[0][i] for i in s_idx], config.deform, deform_rng)
                    target.deformed = _deform_batch(target.clouds, [data.target_train.ids[i] for i in t_idx],
                                                    [analyses[1][i] for i in t_idx], config.deform, deform_rng)
                try:
                    terms = train_step(model, source, target, config, state, lam)
                except NumericFailure as exc:
                    exc.step = (epoch, step)
                    raise
                sums += [terms.l_cls, terms.l_ssl, terms.l_dnwd, terms.l_nwd_t]
            row = {
                "epoch": epoch,
                **dict(zip(METRIC_FIELDS[1:5], sums / steps)),
                "src_acc": evaluate(model, data.source_val.clouds, data.source_val.labels),
                "tgt_acc": evaluate(model, data.target_test.clouds, data.target_test.labels),
            }
            history.append(row)
            log.info("seed %d epoch %d: %s", seed, epoch, row)
            if writer is not None:
                writer.writerow([epoch] + [_fmt(row[k]) for k in METRIC_FIELDS[1:]])
                metrics_fh.flush()
    finally:
        if metrics_fh is not None:
            metrics_fh.close()

    if out_dir is not None:
        meta = {"seed": seed, "epoch": config.epochs, "config": config_echo(config)}
        save_checkpoint(out_dir / "checkpoint.cdnd", model_state(model), meta)
        write_embeddings(out_dir / "embeddings.csv", model, data)
    return history


def _batch(split: Split, idx, domain: str) -> DomainBatch:
    labels = split.labels[idx] if domain == "source" else None
    return DomainBatch([split.clouds[i] for i in idx], None, labels, domain)


def precompute_analyses(config: TrainConfig, data: DatasetPair):
    rng = np.random.default_rng([config.shuffle_seed, 2])
    return ([analyze(c, config.deform, rng) for c in data.source_train.clouds],
            [analyze(c, config.deform, rng) for c in data.target_train.clouds])


def write_embeddings(path, model: CDNDModel, data: DatasetPair) -> None:
    k = model.config.num_classes
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id", "domain", "label"] + [f"dim_{j}" for j in range(k)])
        for domain, split in (("source", data.source_test or data.source_val), ("target", data.target_test)):
            logits = predict_logits(model, split.clouds)
            for sid, label, row in zip(split.ids, split.labels, logits):
                w.writerow([sid, domain, int(label)] + [_fmt(x) for x in row])


def config_echo(config: TrainConfig) -> dict:
    from .config import to_dict

    return to_dict(config)


def _seed_job(args):
    config, data, seed, out_dir, analyses = args
    return seed, train_seed(config, data, seed, out_dir, analyses)


def run_experiment(config: TrainConfig, data: DatasetPair | None = None, out_dir=None,
                   label: str | None = None) -> RunMetrics:
    """Train every seed, then aggregate final-epoch accuracies as mean and population std."""
    config.validate()
    data = data or DatasetPair.load(config)
    out = Path(out_dir) if out_dir is not None else None
    analyses = precompute_analyses(config, data) if config.uses_deformation else None
    jobs = [(config, data, s, out / f"seed_{s}" if out else None, analyses) for s in config.seeds]
    if config.workers > 1 and len(jobs) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            results = dict(pool.map(_seed_job, jobs))
    else:
        results = dict(_seed_job(j) for j in jobs)

    src = np.array([results[s][-1]["src_acc"] for s in config.seeds])
    tgt = np.array([results[s][-1]["tgt_acc"] for s in config.seeds])
    metrics = RunMetrics(results, float(src.mean()), float(src.std()), float(tgt.mean()), float(tgt.std()))
    if out is not None:
        append_summary(out / "summary.csv", label or variant_name(config), config.seeds, metrics)
    return metrics


SUMMARY_FIELDS = ("variant", "seeds", "src_acc_mean", "src_acc_std", "tgt_acc_mean", "tgt_acc_std")


def append_summary(path: Path, label: str, seeds, m: RunMetrics) -> None:
    new = not path.exists()
    with open(path, "a", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if new:
            w.writerow(SUMMARY_FIELDS)
        w.writerow([label, " ".join(str(s) for s in seeds), _fmt(m.src_acc_mean), _fmt(m.src_acc_std),
                    _fmt(m.tgt_acc_mean), _fmt(m.tgt_acc_std)])


def variant_name(config: TrainConfig) -> str:
    if not config.uses_deformation:
        return "source-only"
    stat = "En" if config.deform.statistic == "entropy" else "S"
    rec = "DefRec" if config.deform.mode == "random" else f"CurvRec({stat})-{config.deform.mode.capitalize().replace('est', '')}"
    if config.alignment == "none":
        return rec
    return f"{rec}+{'D-NWD' if config.alignment == 'dnwd' else 'NWD'}"
