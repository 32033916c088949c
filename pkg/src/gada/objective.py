"""GADA training losses.

Loss terms, all minimized jointly in one backward pass:

* ``l_shared``: cross-entropy of masked enhanced predictions on shared source data
* ``l_k1``: cross-entropy of backbone predictions on all source data
* ``l_k2``: cross-entropy of enhanced predictions on source samples whose
  backbone confidence in the true class exceeds ``gamma`` (the source
  classifier filter)
* ``l_adv``: negated margin disparity discrepancy; the gradient reversal in
  front of head f2 turns its minimization into the min-max game.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, clamped_log, gather, mean, sub
from .model import GadaModel, Predictions, forward_all

PROB_CLAMP = 1e-7


class LossError(ValueError):
    pass


@dataclass
class Batch:
    x: np.ndarray  # (B, H, W, D_in)
    y: np.ndarray | None = None  # (B,) class indices

    def __len__(self) -> int:
        return len(self.x)


@dataclass
class LossBreakdown:
    l_shared: float
    l_k1: float
    l_k2: float
    l_adv: float
    total: float
    scf_kept: int
    scf_total: int
    scf_kept_nonshared: int = 0
    scf_total_nonshared: int = 0
    graph: Tensor | None = field(default=None, repr=False, compare=False)

    @property
    def scf_keep_rate(self) -> float:
        return self.scf_kept / self.scf_total if self.scf_total else 0.0


def _pick(p: Tensor, labels: np.ndarray) -> Tensor:
    return gather(p, np.asarray(labels, dtype=np.int64), axis=1)


def cross_entropy(p: Tensor, labels) -> Tensor:
    """Mean ``-log p[i, y_i]`` with the probability floored at 1e-7."""
    return -mean(clamped_log(_pick(p, labels), PROB_CLAMP))


def _check_labels(labels, k: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise LossError(f"labels out of range 0..{k - 1}: {labels[(labels < 0) | (labels >= k)]}")
    return labels


def _check_shared(labels: np.ndarray, mask: np.ndarray) -> None:
    bad = labels[mask[labels] == 0]
    if bad.size:
        raise LossError(f"non-shared labels in shared batch: {sorted(set(bad.tolist()))}")


# -------------------------------------------------- prediction-level terms
def shared_term(pred: Predictions, labels, mask) -> Tensor:
    labels = _check_labels(labels, len(mask))
    _check_shared(labels, np.asarray(mask))
    return cross_entropy(pred.p1_pp, labels)


def backbone_term(pred: Predictions, labels) -> Tensor:
    labels = _check_labels(labels, pred.p1.shape[-1])
    return cross_entropy(pred.p1, labels)


def scf_term(pred: Predictions, labels, gamma: float) -> tuple[Tensor, np.ndarray]:
    """Filtered enhanced-feature loss plus the boolean keep mask.

    The gate reads the backbone prediction ``p1``; the loss reads ``p1_plus``.
    """
    if not 0.0 <= gamma <= 1.0:
        raise LossError(f"gamma must lie in [0, 1], got {gamma}")
    labels = _check_labels(labels, pred.p1.shape[-1])
    conf = pred.p1.data[np.arange(len(labels)), labels]
    keep = conf > gamma
    if not keep.any():
        return Tensor(0.0), keep
    idx = np.flatnonzero(keep)
    return cross_entropy(pred.p1_plus[idx], labels[idx]), keep


def mdd_term(src: Predictions, tgt: Predictions, lambda3: float) -> Tensor:
    """E_t log(1 - p2_pp[h1]) - lambda3 * E_s(-log p2_pp[h1]), h1 held constant."""
    if len(src.h1) == 0 or len(tgt.h1) == 0:
        raise LossError("mdd_discrepancy needs non-empty source and target batches")
    lo, hi = PROB_CLAMP, 1.0 - PROB_CLAMP
    p_t = _pick(tgt.p2_pp, tgt.h1)
    p_s = _pick(src.p2_pp, src.h1)
    target_part = mean(clamped_log(sub(1.0, p_t), lo, hi))  # 1 - clip(p) == clip(1 - p)
    source_part = -mean(clamped_log(p_s, lo, hi))
    return target_part - source_part * lambda3


# --------------------------------------------------------- batch-level API
def shared_loss(batch: Batch, model: GadaModel, mode: str = "train") -> Tensor:
    return shared_term(forward_all(batch.x, model, mode), batch.y, model.mask)


def big_source_loss_backbone(batch: Batch, model: GadaModel, mode: str = "train") -> Tensor:
    labels = _check_labels(batch.y, model.num_classes)
    return backbone_term(forward_all(batch.x, model, mode), labels)


def big_source_loss_scf(batch: Batch, model: GadaModel, gamma: float = 0.7, mode: str = "train"):
    """Returns ``(loss, kept, total)``."""
    loss, keep = scf_term(forward_all(batch.x, model, mode), batch.y, gamma)
    return loss, int(keep.sum()), len(keep)


def mdd_discrepancy(source: Batch, target: Batch, model: GadaModel, lambda3: float = 4.0,
                    mode: str = "train", eta: float = 1.0) -> Tensor:
    if len(source) == 0 or len(target) == 0:
        raise LossError("mdd_discrepancy needs non-empty source and target batches")
    pred = forward_all(np.concatenate([source.x, target.x]), model, mode, eta)
    n = len(source)
    return mdd_term(_slice(pred, 0, n), _slice(pred, n, None), lambda3)


def adversarial_eta(step: int, total_steps: int, eta_max: float = 1.0, warmup_frac: float = 0.1) -> float:
    """Linear ramp of the reversal coefficient from 0 to ``eta_max``."""
    warm = warmup_frac * total_steps
    if warm <= 0:
        return eta_max
    return eta_max * min(1.0, step / warm)


def _slice(pred: Predictions, start: int, stop: int | None) -> Predictions:
    sl = slice(start, stop)
    return Predictions(
        p1=pred.p1[sl],
        p1_plus=pred.p1_plus[sl],
        p1_pp=pred.p1_pp[sl],
        h1=pred.h1[sl],
        p2_plus=pred.p2_plus[sl],
        p2_pp=pred.p2_pp[sl],
        h2=pred.h2[sl],
        features=pred.features[sl],
    )


def total_loss(
    shared_batch: Batch,
    full_batch: Batch,
    target_batch: Batch,
    model: GadaModel,
    lambda1: float = 2.0,
    lambda2: float = 3.2,
    lambda3: float = 4.0,
    gamma: float = 0.7,
    eta: float = 1.0,
    mode: str = "train",
) -> LossBreakdown:
    """One joint forward over shared, full-source and target batches.

    ``l_adv`` is the negated discrepancy (the quantity head f2 minimizes).
    The returned breakdown carries the scalar graph in ``.graph``.
    """
    if len(shared_batch) == 0 or len(full_batch) == 0 or len(target_batch) == 0:
        raise LossError("total_loss needs three non-empty batches")
    n_sh, n_full = len(shared_batch), len(full_batch)
    x = np.concatenate([shared_batch.x, full_batch.x, target_batch.x])
    pred = forward_all(x, model, mode, eta)
    sh = _slice(pred, 0, n_sh)
    full = _slice(pred, n_sh, n_sh + n_full)
    tgt = _slice(pred, n_sh + n_full, None)

    full_labels = _check_labels(full_batch.y, model.num_classes)
    l_shared = shared_term(sh, shared_batch.y, model.mask)
    l_k1 = backbone_term(full, full_labels)
    l_k2, keep = scf_term(full, full_labels, gamma)
    l_adv = -mdd_term(sh, tgt, lambda3)

    total = l_shared + (l_k1 + l_k2) * lambda1 + l_adv * lambda2
    nonshared = model.mask[full_labels] == 0
    parts = [float(t.data) for t in (l_shared, l_k1, l_k2, l_adv)]
    return LossBreakdown(
        *parts,
        total=float(total.data),
        scf_kept=int(keep.sum()),
        scf_total=len(keep),
        scf_kept_nonshared=int(keep[nonshared].sum()),
        scf_total_nonshared=int(nonshared.sum()),
        graph=total,
    )
