"""Training loop, optimizers, metrics logging, evaluation, and sweeps."""

from __future__ import annotations

import csv
import json
import math
import os
import time
from dataclasses import dataclass, replace

import numpy as np

from . import __version__
from .attacks import AttackConfig, pgd_attack, robust_accuracy
from .config import RunConfig
from .data import AugmentationSpec, Batch, Dataset, augment, iter_batches
from .divergence import divergence_report
from .errors import ContractError, TrainingAborted
from .losses import total_loss
from .models import MLPClassifier, save_model
from .tensor import Tensor

__all__ = [
    "Adam",
    "SGD",
    "lr_at",
    "MetricsRow",
    "MetricsWriter",
    "METRICS_SCHEMA",
    "METRICS_COLUMNS",
    "train_step",
    "train",
    "TrainResult",
    "evaluate",
    "sweep",
    "write_sweep_csv",
]

# rng stream tags, combined with the run seed as (seed, tag, ...)
_S_INIT, _S_SHUFFLE, _S_ATTACK, _S_EPOCH_EVAL, _S_FINAL_EVAL, _S_AUG = range(6)


class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            m *= b1
            m += (1 - b1) * p.grad
            v *= b2
            v += (1 - b2) * p.grad ** 2
            mhat = m / (1 - b1 ** self.t)
            vhat = v / (1 - b2 ** self.t)
            p.data = p.data - self.lr * mhat / (np.sqrt(vhat) + self.eps)

    def zero_grad(self):
        for p in self.params:
            p.grad = None


class SGD:
    def __init__(self, params, lr=0.1, momentum=0.0, weight_decay=0.0):
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.buf = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        for p, buf in zip(self.params, self.buf):
            if p.grad is None:
                continue
            g = p.grad
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            buf *= self.momentum
            buf += g
            p.data = p.data - self.lr * buf

    def zero_grad(self):
        for p in self.params:
            p.grad = None


def lr_at(schedule, epoch):
    """Last scheduled rate at or before this epoch."""
    lr = schedule[0][1]
    for e, v in schedule:
        if e <= epoch:
            lr = v
    return lr


METRICS_SCHEMA = "schema=asclmetrics.v1"
METRICS_COLUMNS = (
    "epoch", "split", "nat_acc", "rob_acc", "loss_at", "loss_scl", "loss_vat",
    "loss_total", "d_a_plus", "d_a_minus", "r_div", "mean_pos", "mean_neg",
    "wall_time_s",
)


@dataclass
class MetricsRow:
    epoch: int
    split: str
    nat_acc: float = None
    rob_acc: float = None
    loss_at: float = None
    loss_scl: float = None
    loss_vat: float = None
    loss_total: float = None
    d_a_plus: float = None
    d_a_minus: float = None
    r_div: float = None
    mean_pos: float = None
    mean_neg: float = None
    wall_time_s: float = None


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.12g}"


class MetricsWriter:
    """CSV writer with a schema line; flushes after every row so aborted
    runs leave their partial metrics behind."""

    def __init__(self, path):
        self.path = path
        self._fh = open(path, "w", newline="")
        self._fh.write(METRICS_SCHEMA + "\n")
        self._writer = csv.writer(self._fh)
        self._writer.writerow(METRICS_COLUMNS)
        self._fh.flush()

    def write(self, row: MetricsRow):
        self._writer.writerow([_fmt(getattr(row, c)) for c in METRICS_COLUMNS])
        self._fh.flush()

    def close(self):
        self._fh.close()


def train_step(model, optimizer, x, y, cfg: RunConfig, step_seed):
    """One update: regenerate adversarial examples from current weights,
    one joint forward, combined loss, backward, optimizer step."""
    x_adv = pgd_attack(model, x, y, cfg.train_attack(), seed=step_seed)
    bd = total_loss(Batch(x, y, x_adv), model, cfg.strategy, cfg.loss_weights(),
                    nat_ce=cfg.nat_ce, use_vat=cfg.use_vat)
    total_val = bd.total.item()
    if not math.isfinite(total_val):
        raise TrainingAborted(
            f"non-finite loss (at={bd.at}, scl={bd.scl}, vat={bd.vat})")
    model.zero_grad()
    bd.total.backward()
    optimizer.step()
    return {
        "loss_at": bd.at, "loss_scl": bd.scl, "loss_vat": bd.vat,
        "loss_total": total_val, "mean_pos": bd.mean_pos, "mean_neg": bd.mean_neg,
    }


@dataclass
class TrainResult:
    model: MLPClassifier
    metrics_path: str
    checkpoint_path: str
    summary_path: str
    summary: dict


def _natural_accuracy(model, ds: Dataset):
    preds = np.argmax(model.forward(ds.features).data, axis=1)
    return float((preds == ds.labels).mean())


def train(cfg: RunConfig, quiet=True) -> TrainResult:
    """Full run: epoch loop with the lr schedule, per-epoch cheap
    evaluation, metrics CSV, final checkpoint and summary JSON."""
    train_ds, test_ds = cfg.build_datasets()
    spec = cfg.model_spec(train_ds.dim, train_ds.num_classes)
    model = MLPClassifier(spec, seed=(cfg.seed, _S_INIT))
    schedule = cfg.effective_schedule()
    if cfg.optimizer == "adam":
        opt = Adam(model.parameters, lr=schedule[0][1])
    else:
        opt = SGD(model.parameters, lr=schedule[0][1], momentum=cfg.momentum,
                  weight_decay=cfg.weight_decay)

    aug = None
    if cfg.augment_flip or cfg.augment_shift > 0:
        aug = AugmentationSpec(horizontal_flip=cfg.augment_flip,
                               shift_fraction=cfg.augment_shift,
                               image_shape=cfg.image_shape or None)

    os.makedirs(cfg.output_dir, exist_ok=True)
    metrics_path = os.path.join(cfg.output_dir, "metrics.csv")
    checkpoint_path = os.path.join(cfg.output_dir, "model.ckpt")
    summary_path = os.path.join(cfg.output_dir, "summary.json")
    writer = MetricsWriter(metrics_path)
    started = time.monotonic()

    try:
        for epoch in range(cfg.epochs):
            opt.lr = lr_at(schedule, epoch)
            shuffle_rng = np.random.default_rng((cfg.seed, _S_SHUFFLE, epoch))
            aug_rng = np.random.default_rng((cfg.seed, _S_AUG, epoch))
            sums, steps = {}, 0
            for step, (x, y) in enumerate(iter_batches(train_ds, cfg.batch_size,
                                                       shuffle_rng)):
                if aug is not None:
                    x = augment(x, aug, aug_rng)
                try:
                    frag = train_step(model, opt, x, y, cfg,
                                      step_seed=(cfg.seed, _S_ATTACK, epoch, step))
                except TrainingAborted:
                    writer.write(MetricsRow(epoch=epoch, split="train",
                                            loss_total=float("nan"),
                                            wall_time_s=time.monotonic() - started))
                    raise
                for k, v in frag.items():
                    sums[k] = sums.get(k, 0.0) + v
                steps += 1
            writer.write(MetricsRow(
                epoch=epoch, split="train",
                **{k: v / steps for k, v in sums.items()},
                wall_time_s=time.monotonic() - started))

            if cfg.eval_every and (epoch + 1) % cfg.eval_every == 0:
                writer.write(_eval_row(model, test_ds, cfg, epoch, started))
            if not quiet:
                print(f"epoch {epoch}: loss_total={sums['loss_total'] / steps:.4f}")
    finally:
        writer.close()

    save_model(model, checkpoint_path)

    eval_cfg = cfg.eval_attack()
    final = {
        "nat_acc": _natural_accuracy(model, test_ds),
        "rob_acc": robust_accuracy(model, test_ds.features, test_ds.labels, "pgd",
                                   eval_cfg, seed=(cfg.seed, _S_FINAL_EVAL))
        if cfg.epochs > 0 else None,
    }
    summary = {
        "config": cfg.to_dict(),
        "final": final,
        "checkpoint": checkpoint_path,
        "metrics": metrics_path,
        "build_id": f"ascl-{__version__}",
    }
    with open(summary_path, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return TrainResult(model=model, metrics_path=metrics_path,
                       checkpoint_path=checkpoint_path, summary_path=summary_path,
                       summary=summary)


def _eval_row(model, test_ds, cfg: RunConfig, epoch, started) -> MetricsRow:
    cheap = AttackConfig(epsilon=cfg.eval_eps, eta=cfg.eval_eta,
                         steps=cfg.epoch_eval_steps,
                         random_init=cfg.eval_random_init)
    nat = _natural_accuracy(model, test_ds)
    rob = robust_accuracy(model, test_ds.features, test_ds.labels, "pgd", cheap,
                          seed=(cfg.seed, _S_EPOCH_EVAL, epoch))
    train_cfg = cfg.train_attack()
    report = divergence_report(model, test_ds.features, test_ds.labels,
                               train_cfg if train_cfg.epsilon > 0 else None,
                               seed=(cfg.seed, _S_EPOCH_EVAL, epoch))
    return MetricsRow(epoch=epoch, split="test", nat_acc=nat, rob_acc=rob,
                      d_a_plus=report.d_a_plus, d_a_minus=report.d_a_minus,
                      r_div=report.r_div,
                      wall_time_s=time.monotonic() - started)


def evaluate(model, dataset: Dataset, eval_cfg: AttackConfig,
             attacks=("none", "pgd", "mpgd"), seed=0):
    """One metrics row per attack; robust accuracy under each."""
    if len(dataset) == 0:
        raise ContractError("evaluate on an empty dataset")
    nat = _natural_accuracy(model, dataset)
    rows = []
    for name in attacks:
        rob = robust_accuracy(model, dataset.features, dataset.labels, name,
                              eval_cfg, seed=seed)
        rows.append((name, MetricsRow(epoch=0, split=dataset.split,
                                      nat_acc=nat, rob_acc=rob)))
    return rows


SWEEP_COLUMNS = ("strategy", "lambda_scl", "lambda_vat", "nat_acc", "rob_acc", "status")


def sweep(base_cfg: RunConfig, strategies, scl_grid, vat_grid, epochs=None):
    """Train one run per (strategy, lambda_scl, lambda_vat) cell; failures
    are recorded and the sweep continues. Rows come back sorted."""
    cells = sorted((s, float(a), float(b))
                   for s in strategies for a in scl_grid for b in vat_grid)
    rows = []
    for strategy, lam_scl, lam_vat in cells:
        cell_dir = os.path.join(base_cfg.output_dir,
                                f"sweep_{strategy}_scl{lam_scl:g}_vat{lam_vat:g}")
        cell_cfg = replace(base_cfg, strategy=strategy, lambda_scl=lam_scl,
                           lambda_vat=lam_vat, output_dir=cell_dir,
                           epochs=epochs if epochs is not None else base_cfg.epochs)
        row = {"strategy": strategy, "lambda_scl": lam_scl, "lambda_vat": lam_vat,
               "nat_acc": None, "rob_acc": None, "status": "ok"}
        try:
            result = train(cell_cfg)
            row["nat_acc"] = result.summary["final"]["nat_acc"]
            row["rob_acc"] = result.summary["final"]["rob_acc"]
        except Exception as e:  # per-cell isolation
            row["status"] = f"failed: {type(e).__name__}"
        rows.append(row)
    return rows


def write_sweep_csv(rows, fh):
    writer = csv.writer(fh)
    writer.writerow(SWEEP_COLUMNS)
    for row in rows:
        writer.writerow([_fmt(row[c]) for c in SWEEP_COLUMNS])
