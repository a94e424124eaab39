"""Training objective: positive/negative selection strategies, the
supervised contrastive loss over a pooled natural+adversarial batch, the
adversarial cross-entropy term, the KL smoothness term, and their
weighted combination.

Latent pool layout: slots ``0..N-1`` hold natural latents, ``N..2N-1``
the adversarial counterparts; slot ``j + N`` is sample ``j``'s
adversarial view.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DomainError
from .models import MLPClassifier, PredictionSnapshot, snapshot_from_logits
from .tensor import Tensor, concat

__all__ = [
    "STRATEGIES",
    "LossWeights",
    "SelectionResult",
    "select",
    "selection_stats",
    "similarity",
    "supcon_anchor_nat",
    "supcon_anchor_adv",
    "supcon_batch",
    "at_loss",
    "vat_loss",
    "total_loss",
    "LossBreakdown",
    "log_softmax",
]

STRATEGIES = ("global", "hard", "soft", "leaked")


@dataclass(frozen=True)
class LossWeights:
    """Weights and similarity settings of the combined objective."""

    lambda_scl: float = 1.0
    lambda_vat: float = 2.0
    tau: float = 0.07
    similarity: str = "cosine"

    def __post_init__(self):
        if self.lambda_scl < 0 or self.lambda_vat < 0:
            raise ContractError("loss weights must be nonnegative")
        if not self.tau > 0:
            raise ContractError("temperature must be positive")
        _parse_similarity(self.similarity)


def _parse_similarity(name):
    if name == "cosine":
        return ("cosine", None)
    if name.startswith("lp:"):
        p = float(name[3:])
        if not p >= 1:
            raise ContractError("lp similarity requires p >= 1")
        return ("lp", p)
    raise ContractError(f"similarity must be 'cosine' or 'lp:<p>', got {name!r}")


@dataclass
class SelectionResult:
    """Per-anchor positive and negative slot sets in the 2N latent pool."""

    anchor: int
    positives: np.ndarray
    negatives: np.ndarray
    anchor_adv_slot: int


def select(strategy, labels, snapshot: PredictionSnapshot | None, i: int) -> SelectionResult:
    """Positive/negative slots for anchor ``i`` under the named strategy.

    ``global`` splits all other samples by true label. ``hard``/``soft``
    keep the global positives but keep only negatives currently predicted
    as the anchor's true label (hard) or the anchor's predicted label
    (soft). ``leaked`` additionally keeps only positives predicted like
    the anchor. Natural slots are filtered on the natural prediction,
    adversarial slots on the adversarial prediction.
    """
    if strategy not in STRATEGIES:
        raise ContractError(f"unknown strategy {strategy!r}")
    labels = np.asarray(labels, dtype=np.intp)
    n = labels.shape[0]
    if not 0 <= i < n:
        raise ContractError(f"anchor {i} out of range for batch of {n}")
    if strategy != "global" and snapshot is None:
        raise ContractError("prediction-filtered strategies need a snapshot")

    others = np.arange(n) != i
    same = others & (labels == labels[i])
    diff = others & (labels != labels[i])

    if strategy == "global":
        pos_nat, pos_adv = same, same
        neg_nat, neg_adv = diff, diff
    else:
        p, pa = snapshot.preds_nat, snapshot.preds_adv
        ref = labels[i] if strategy == "hard" else p[i]
        neg_nat = diff & (p == ref)
        neg_adv = diff & (pa == ref)
        if strategy == "leaked":
            pos_nat = same & (p == p[i])
            pos_adv = same & (pa == p[i])
        else:
            pos_nat, pos_adv = same, same

    idx = np.arange(n)
    positives = np.concatenate([idx[pos_nat], idx[pos_adv] + n])
    negatives = np.concatenate([idx[neg_nat], idx[neg_adv] + n])
    return SelectionResult(anchor=i, positives=positives, negatives=negatives,
                           anchor_adv_slot=i + n)


def selection_stats(strategy, labels, snapshot=None):
    """Batch means of (|positives| + 1, |negatives|); the +1 counts the
    anchor's own adversarial view as a positive."""
    labels = np.asarray(labels, dtype=np.intp)
    n = labels.shape[0]
    if n < 2:
        raise ContractError("selection stats need a batch of at least 2")
    if strategy not in STRATEGIES:
        raise ContractError(f"unknown strategy {strategy!r}")
    if strategy != "global" and snapshot is None:
        raise ContractError("prediction-filtered strategies need a snapshot")

    same = (labels[:, None] == labels[None, :]) & ~np.eye(n, dtype=bool)
    diff = (labels[:, None] != labels[None, :])
    if strategy == "global":
        pos = 2 * same.sum(axis=1)
        neg = 2 * diff.sum(axis=1)
    else:
        p, pa = snapshot.preds_nat, snapshot.preds_adv
        ref = labels if strategy == "hard" else p
        neg = (diff & (p[None, :] == ref[:, None])).sum(axis=1) \
            + (diff & (pa[None, :] == ref[:, None])).sum(axis=1)
        if strategy == "leaked":
            pos = (same & (p[None, :] == p[:, None])).sum(axis=1) \
                + (same & (pa[None, :] == p[:, None])).sum(axis=1)
        else:
            pos = 2 * same.sum(axis=1)
    return float(np.mean(pos + 1)), float(np.mean(neg))


def similarity(weights: LossWeights, z_a: Tensor, z_b: Tensor) -> Tensor:
    """Similarity between two latent vectors: cosine, or negated Lp distance."""
    a = z_a if isinstance(z_a, Tensor) else Tensor(z_a)
    b = z_b if isinstance(z_b, Tensor) else Tensor(z_b)
    kind, p = _parse_similarity(weights.similarity)
    if kind == "cosine":
        if not np.linalg.norm(a.data) > 0 or not np.linalg.norm(b.data) > 0:
            raise DomainError("cosine similarity of a zero vector")
        dot = (a * b).sum()
        return dot / ((a * a).sum().sqrt() * (b * b).sum().sqrt())
    return -(((a - b).abs() ** p).sum() ** (1.0 / p))


def _similarity_rows(weights, rows: Tensor, anchor: Tensor) -> Tensor:
    """Similarity of each row of ``rows`` (K, h) to ``anchor`` (1, h) -> (K, 1)."""
    kind, p = _parse_similarity(weights.similarity)
    if kind == "cosine":
        norms = np.linalg.norm(rows.data, axis=1)
        if not np.linalg.norm(anchor.data) > 0 or not np.all(norms > 0):
            raise DomainError("cosine similarity of a zero vector")
        dots = rows @ anchor.transpose()
        rn = (rows * rows).sum(axis=1, keepdims=True).sqrt()
        an = (anchor * anchor).sum(axis=1, keepdims=True).sqrt()
        return dots / (rn * an)
    diff = rows - anchor
    return -((diff.abs() ** p).sum(axis=1, keepdims=True) ** (1.0 / p))


def _anchor_loss(anchor_slot, partner_slot, pool, sel, weights):
    # numerator terms: positives plus the anchor's other view; denominator
    # adds the negatives; the anchor itself appears in neither
    num_idx = np.concatenate([sel.positives, [partner_slot]])
    den_idx = np.concatenate([sel.positives, sel.negatives, [partner_slot]])
    anchor_vec = pool.gather_rows([anchor_slot])
    num_sims = _similarity_rows(weights, pool.gather_rows(num_idx), anchor_vec) / weights.tau
    den_sims = _similarity_rows(weights, pool.gather_rows(den_idx), anchor_vec) / weights.tau
    return den_sims.log_sum_exp() - num_sims.mean()


def supcon_anchor_nat(i, pool: Tensor, sel: SelectionResult, weights: LossWeights) -> Tensor:
    """Contrastive loss with the natural view of sample ``i`` as anchor.

    Mean over the positives plus the anchor's adversarial view of
    ``-log softmax(sim/tau)`` against positives+negatives+that view.
    Nonnegative; exactly zero when both sets are empty.
    """
    return _anchor_loss(i, sel.anchor_adv_slot, pool, sel, weights)


def supcon_anchor_adv(i, pool: Tensor, sel: SelectionResult, weights: LossWeights) -> Tensor:
    """Same loss with the adversarial view as anchor and the natural view
    taking the special slot."""
    return _anchor_loss(sel.anchor_adv_slot, i, pool, sel, weights)


def supcon_batch(pool: Tensor, labels, snapshot, strategy, weights: LossWeights) -> Tensor:
    """Batch mean of the natural- plus adversarial-anchor losses.

    Both anchor views of sample ``i`` share one selection result.
    """
    labels = np.asarray(labels, dtype=np.intp)
    n = labels.shape[0]
    if pool.shape[0] != 2 * n:
        raise ContractError(f"pool of {pool.shape[0]} slots does not match {n} samples")
    total = None
    for i in range(n):
        sel = select(strategy, labels, snapshot, i)
        term = supcon_anchor_nat(i, pool, sel, weights) + supcon_anchor_adv(i, pool, sel, weights)
        total = term if total is None else total + term
    return total / float(n)


def log_softmax(logits: Tensor) -> Tensor:
    return logits - logits.log_sum_exp(axis=1, keepdims=True)


def _mean_ce(logits: Tensor, labels) -> Tensor:
    n, c = logits.shape
    onehot = np.eye(c)[np.asarray(labels, dtype=np.intp)]
    return -(log_softmax(logits) * Tensor(onehot)).sum(axis=1).mean()


def at_loss(snapshot: PredictionSnapshot, labels, nat_ce: bool = True) -> Tensor:
    """Cross-entropy on the adversarial batch plus, unless disabled, the
    natural batch; per-sample terms are averaged over the batch."""
    adv = _mean_ce(snapshot.logits_adv, labels)
    if not nat_ce:
        return adv
    return _mean_ce(snapshot.logits_nat, labels) + adv


def vat_loss(snapshot: PredictionSnapshot) -> Tensor:
    """Mean KL(natural predictions || adversarial predictions); keeps the
    classifier smooth across the perturbation."""
    logp = log_softmax(snapshot.logits_nat)
    logq = log_softmax(snapshot.logits_adv)
    p = logp.exp()
    return (p * (logp - logq)).sum(axis=1).mean()


@dataclass
class LossBreakdown:
    total: Tensor
    at: float
    scl: float
    vat: float
    snapshot: PredictionSnapshot
    mean_pos: float
    mean_neg: float


def total_loss(batch, model: MLPClassifier, strategy, weights: LossWeights,
               nat_ce: bool = True, use_vat: bool = True) -> LossBreakdown:
    """Combined objective on a paired batch: adversarial cross-entropy plus
    weighted contrastive and KL terms, all fed from one pair of forwards.

    ``batch`` carries (x, y, x_adv). Terms with zero weight are skipped, so
    at lambda_scl = lambda_vat = 0 the result is exactly the AT loss.
    """
    z_nat, logits_nat = model.forward_with_latent(batch.x)
    z_adv, logits_adv = model.forward_with_latent(batch.x_adv)
    snap = snapshot_from_logits(logits_nat, logits_adv)

    total = at_loss(snap, batch.y, nat_ce=nat_ce)
    at_val = total.item()

    scl_val = 0.0
    mean_pos, mean_neg = selection_stats(strategy, batch.y, snap) \
        if len(batch.y) >= 2 else (1.0, 0.0)
    if weights.lambda_scl > 0:
        pool = concat([model.project(z_nat), model.project(z_adv)], axis=0)
        scl = supcon_batch(pool, batch.y, snap, strategy, weights)
        scl_val = scl.item()
        total = total + weights.lambda_scl * scl

    vat_val = 0.0
    if use_vat and weights.lambda_vat > 0:
        vat = vat_loss(snap)
        vat_val = vat.item()
        total = total + weights.lambda_vat * vat

    return LossBreakdown(total=total, at=at_val, scl=scl_val, vat=vat_val,
                         snapshot=snap, mean_pos=mean_pos, mean_neg=mean_neg)
