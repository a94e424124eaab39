"""Latent-space diagnostics: mean cosine distance from each anchor to its
same-class pool (intra) and different-class pool (inter), and their
ratio, computed over pooled natural+adversarial latents."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .attacks import AttackConfig, pgd_attack, robust_accuracy
from .errors import ContractError, DegenerateInputError, DomainError

__all__ = [
    "DivergenceReport",
    "cosine_distance",
    "absolute_divergences",
    "relative_divergence",
    "divergence_report",
    "divergence_sweep",
    "write_divergence_csv",
]

RDIV_DENOM_TOL = 1e-12

SWEEP_COLUMNS = ("epsilon", "d_a_plus", "d_a_minus", "r_div", "robust_acc",
                 "n_samples", "layer_name")


@dataclass
class DivergenceReport:
    d_a_plus: float
    d_a_minus: float
    r_div: float | None
    layer_name: str = "penultimate"
    n_samples: int = 0
    distance_kind: str = "cosine_distance"


def cosine_distance(z_a, z_b) -> float:
    """1 - cosine similarity; lies in [0, 2]."""
    a = np.asarray(z_a, dtype=np.float64)
    b = np.asarray(z_b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if not (na > 0 and nb > 0):
        raise DomainError("cosine distance of a zero vector")
    return float(1.0 - np.dot(a, b) / (na * nb))


def _pooled(z, labels, z_adv):
    z = np.asarray(z, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.intp)
    if z.ndim != 2 or labels.shape != (z.shape[0],):
        raise ContractError("latents must be (N, h) with matching labels")
    if z_adv is None:
        return z, labels, np.arange(z.shape[0])
    z_adv = np.asarray(z_adv, dtype=np.float64)
    if z_adv.shape != z.shape:
        raise ContractError("adversarial latents must match natural latents")
    pool = np.concatenate([z, z_adv])
    src = np.concatenate([np.arange(z.shape[0])] * 2)
    return pool, np.concatenate([labels, labels]), src


def absolute_divergences(z, labels, z_adv=None):
    """Mean anchor-to-positive and anchor-to-negative cosine distances.

    Every pooled slot serves as anchor; its positives are all slots from
    *other* source samples with the same label, negatives those with a
    different label. Anchors with an empty set are skipped on that side.
    """
    pool, slot_labels, src = _pooled(z, labels, z_adv)
    m = pool.shape[0]
    norms = np.linalg.norm(pool, axis=1)
    if not np.all(norms > 0):
        raise DomainError("cosine distance of a zero vector")
    sims = (pool / norms[:, None]) @ (pool / norms[:, None]).T
    dist = 1.0 - sims

    other = src[:, None] != src[None, :]
    same = other & (slot_labels[:, None] == slot_labels[None, :])
    diff = other & (slot_labels[:, None] != slot_labels[None, :])

    def side_mean(mask):
        counts = mask.sum(axis=1)
        keep = counts > 0
        if not np.any(keep):
            return None
        per_anchor = (dist * mask).sum(axis=1)[keep] / counts[keep]
        return float(per_anchor.mean())

    d_plus = side_mean(same)
    d_minus = side_mean(diff)
    if d_plus is None or d_minus is None:
        raise DegenerateInputError("every anchor has an empty positive or negative set")
    # clip float fuzz: self-similarity rounding can give -1e-16 distances
    return max(d_plus, 0.0), max(d_minus, 0.0)


def relative_divergence(d_a_plus, d_a_minus):
    """Ratio intra/inter, or None when the denominator is at tolerance."""
    if d_a_minus > RDIV_DENOM_TOL:
        return d_a_plus / d_a_minus
    return None


def divergence_report(model, features, labels, attack_cfg: AttackConfig | None,
                      seed=0, batch_size=128, layer_name="penultimate") -> DivergenceReport:
    """Divergences of the model's penultimate latents over a dataset.

    With an attack config, pools natural and adversarial latents; without
    one (or at epsilon 0), uses benign latents only. Large inputs are
    processed in mini-batches and the batch divergences averaged.
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.intp)
    attacked = attack_cfg is not None and attack_cfg.epsilon > 0
    d_plus_parts, d_minus_parts = [], []
    for lo in range(0, features.shape[0], batch_size):
        xb = features[lo:lo + batch_size]
        yb = labels[lo:lo + batch_size]
        z = model.encode(xb).data
        z_adv = None
        if attacked:
            x_adv = pgd_attack(model, xb, yb, attack_cfg, seed=seed, index_base=lo)
            z_adv = model.encode(x_adv).data
        dp, dm = absolute_divergences(z, yb, z_adv)
        d_plus_parts.append(dp)
        d_minus_parts.append(dm)
    d_plus = float(np.mean(d_plus_parts))
    d_minus = float(np.mean(d_minus_parts))
    return DivergenceReport(
        d_a_plus=d_plus,
        d_a_minus=d_minus,
        r_div=relative_divergence(d_plus, d_minus),
        layer_name=layer_name,
        n_samples=int(features.shape[0]),
    )


def divergence_sweep(model, dataset, eps_grid, base_cfg: AttackConfig, seed=0,
                     batch_size=128):
    """Rows of (epsilon, divergences, robust accuracy), ascending in epsilon.

    The epsilon-0 row uses benign-only latents and natural accuracy.
    """
    rows = []
    for eps in sorted(float(e) for e in eps_grid):
        if eps == 0.0:
            report = divergence_report(model, dataset.features, dataset.labels,
                                       None, seed=seed, batch_size=batch_size)
            acc = robust_accuracy(model, dataset.features, dataset.labels,
                                  "none", base_cfg, seed=seed)
        else:
            cfg = AttackConfig(epsilon=eps, eta=base_cfg.eta, steps=base_cfg.steps,
                               random_init=base_cfg.random_init,
                               clip_range=base_cfg.clip_range)
            report = divergence_report(model, dataset.features, dataset.labels,
                                       cfg, seed=seed, batch_size=batch_size)
            acc = robust_accuracy(model, dataset.features, dataset.labels,
                                  "pgd", cfg, seed=seed)
        rows.append({
            "epsilon": eps,
            "d_a_plus": report.d_a_plus,
            "d_a_minus": report.d_a_minus,
            "r_div": report.r_div,
            "robust_acc": acc,
            "n_samples": report.n_samples,
            "layer_name": report.layer_name,
        })
    return rows


def write_divergence_csv(rows, fh):
    writer = csv.writer(fh)
    writer.writerow(SWEEP_COLUMNS)
    for row in rows:
        writer.writerow([
            f"{row['epsilon']:.12g}",
            f"{row['d_a_plus']:.12g}",
            f"{row['d_a_minus']:.12g}",
            "" if row["r_div"] is None else f"{row['r_div']:.12g}",
            f"{row['robust_acc']:.12g}",
            row["n_samples"],
            row["layer_name"],
        ])
