"""L-infinity attacks: PGD with random start, multi-targeted PGD, ball
projection, and robust-accuracy evaluation.

Determinism contract: the random start for sample ``i`` is drawn from a
stream seeded by ``(*seed, i)``, so serial and per-sample-parallel
evaluation agree bitwise. Targeted runs reuse the same start.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ContractError
from .tensor import Tensor

__all__ = [
    "AttackConfig",
    "project_linf",
    "pgd_attack",
    "multi_targeted_pgd",
    "robust_accuracy",
]

LOSS_KINDS = ("cross_entropy", "targeted_cross_entropy")


@dataclass(frozen=True)
class AttackConfig:
    epsilon: float = 8.0 / 255.0
    eta: float = 2.0 / 255.0
    steps: int = 10
    random_init: bool = True
    loss_kind: str = "cross_entropy"
    clip_range: tuple = (0.0, 1.0)

    def __post_init__(self):
        if self.epsilon < 0:
            raise ContractError("epsilon must be nonnegative")
        if self.steps > 0 and not self.eta > 0:
            raise ContractError("eta must be positive when steps > 0")
        if not self.clip_range[0] < self.clip_range[1]:
            raise ContractError("clip_range lower bound must be below upper bound")
        if self.loss_kind not in LOSS_KINDS:
            raise ContractError(f"loss_kind must be one of {LOSS_KINDS}")


def _seed_parts(seed):
    if isinstance(seed, (int, np.integer)):
        return (int(seed),)
    return tuple(int(s) for s in seed)


def project_linf(x_adv, x_orig, epsilon, clip_range=(0.0, 1.0)):
    """Clamp x_adv into the epsilon ball around x_orig, then into clip_range."""
    if epsilon < 0:
        raise ContractError("epsilon must be nonnegative")
    x_adv = np.asarray(x_adv, dtype=np.float64)
    x_orig = np.asarray(x_orig, dtype=np.float64)
    lo, hi = clip_range
    out = np.minimum(np.maximum(x_adv, x_orig - epsilon), x_orig + epsilon)
    return np.clip(out, lo, hi)


def _input_gradient(model, x_adv, y, targets):
    """Gradient of summed cross-entropy at x_adv; fresh graph per call."""
    xt = Tensor(x_adv, requires_grad=True)
    logits = model.forward(xt)
    n, c = logits.shape
    lse = logits.log_sum_exp(axis=1, keepdims=True)
    log_probs = logits - lse
    if targets is None:
        picked = np.eye(c)[y]
    else:
        picked = np.eye(c)[targets]
    loss = -(log_probs * Tensor(picked)).sum()
    loss.backward()
    return xt.grad


def pgd_attack(model, x, y, cfg: AttackConfig, seed=0, targets=None, index_base=0):
    """Iterated signed-gradient attack inside the epsilon ball.

    Untargeted: ascend cross-entropy against the true labels. Targeted
    (``loss_kind="targeted_cross_entropy"``): descend cross-entropy toward
    ``targets``. Model weights and the input batch are never mutated.
    ``index_base`` offsets the per-sample stream index so that splitting a
    dataset into batches does not change any sample's random start.
    """
    x = np.array(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.intp)
    lo, hi = cfg.clip_range
    if np.any(x < lo) or np.any(x > hi):
        raise ContractError("input batch lies outside clip_range")
    targeted = cfg.loss_kind == "targeted_cross_entropy"
    if targeted:
        if targets is None:
            raise ContractError("targeted attack requires targets")
        targets = np.asarray(targets, dtype=np.intp)
    elif targets is not None:
        raise ContractError("targets given but loss_kind is untargeted")

    if cfg.random_init and cfg.epsilon > 0:
        parts = _seed_parts(seed)
        noise = np.empty_like(x)
        for i in range(x.shape[0]):
            rng = np.random.default_rng((*parts, index_base + i))
            noise[i] = rng.uniform(-cfg.epsilon, cfg.epsilon, size=x.shape[1:])
        x_adv = project_linf(x + noise, x, cfg.epsilon, cfg.clip_range)
    else:
        x_adv = x.copy()

    for _ in range(cfg.steps):
        grad = _input_gradient(model, x_adv, y, targets if targeted else None)
        if grad is None:
            break
        step = cfg.eta * np.sign(grad)
        x_adv = x_adv - step if targeted else x_adv + step
        x_adv = project_linf(x_adv, x, cfg.epsilon, cfg.clip_range)
    return x_adv


def multi_targeted_pgd(model, x, y, cfg: AttackConfig, seed=0, index_base=0):
    """Best-of targeted PGD over every wrong class.

    Per sample, returns the first candidate (in class order) that flips the
    prediction; otherwise the candidate with the largest untargeted
    cross-entropy loss. Every targeted run reuses the same per-sample
    random start, so with two classes this equals one targeted attack.
    """
    x = np.array(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.intp)
    logits = model.forward(x)
    c = logits.shape[1]
    if c < 2:
        raise ContractError("multi-targeted attack requires at least 2 classes")
    tcfg = replace(cfg, loss_kind="targeted_cross_entropy")

    n = x.shape[0]
    best = x.copy()
    decided = np.zeros(n, dtype=bool)
    best_loss = np.full(n, -np.inf)

    for t in range(c):
        targets = np.full(n, t, dtype=np.intp)
        active = targets != y
        if not np.any(active):
            continue
        cand = pgd_attack(model, x, y, tcfg, seed=seed, targets=targets, index_base=index_base)
        logits_c = model.forward(cand).data
        preds_c = np.argmax(logits_c, axis=1)
        lse = logits_c.max(axis=1) + np.log(
            np.exp(logits_c - logits_c.max(axis=1, keepdims=True)).sum(axis=1))
        ce = lse - logits_c[np.arange(n), y]

        flipped = active & ~decided & (preds_c != y)
        best[flipped] = cand[flipped]
        decided |= flipped

        improved = active & ~decided & (ce > best_loss)
        best[improved] = cand[improved]
        best_loss[improved] = ce[improved]
    return best


def attack_by_name(name):
    if name == "none":
        return lambda model, x, y, cfg, seed=0, index_base=0: np.array(x, dtype=np.float64)
    if name == "pgd":
        return pgd_attack
    if name == "mpgd":
        return multi_targeted_pgd
    raise ContractError(f"unknown attack {name!r}")


def robust_accuracy(model, features, labels, attack, cfg: AttackConfig,
                    seed=0, batch_size=256):
    """Fraction of samples still predicted correctly after the attack.

    ``attack`` is one of "none"/"pgd"/"mpgd" or a callable with the
    pgd_attack signature. Attacks run per batch; per-sample seeding keeps
    the result independent of batch_size.
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.intp)
    if features.shape[0] == 0:
        raise ContractError("robust_accuracy on an empty dataset")
    fn = attack_by_name(attack) if isinstance(attack, str) else attack

    correct = 0
    for lo in range(0, features.shape[0], batch_size):
        xb = features[lo:lo + batch_size]
        yb = labels[lo:lo + batch_size]
        x_adv = fn(model, xb, yb, cfg, seed=seed, index_base=lo)
        preds = np.argmax(model.forward(x_adv).data, axis=1)
        correct += int((preds == yb).sum())
    return correct / features.shape[0]
