"""Target-domain evaluation: accuracy, per-class/macro F1 and sparse-class
breakdowns, plus feature dumps for external projection tools."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .model import GadaModel, forward_all


@dataclass
class EvalReport:
    accuracy: float
    classes: list[int]  # class indices, in confusion-matrix order
    precision: list[float]
    recall: list[float]
    f1: list[float]
    support: list[int]
    macro_f1: float
    sparse_f1: float
    nonsparse_f1: float
    sparse_accuracy: float
    nonsparse_accuracy: float
    n_samples: int

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> EvalReport:
        return cls(**json.loads(text))


def confusion_matrix(y_true, y_pred, classes: Sequence[int]) -> np.ndarray:
    """Integer counts over ``classes``; rows are true labels, columns predictions."""
    pos = {c: i for i, c in enumerate(classes)}
    cm = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for t, p in zip(np.asarray(y_true), np.asarray(y_pred)):
        if t not in pos or p not in pos:
            raise ValueError(f"label pair ({t}, {p}) outside the evaluated class set")
        cm[pos[t], pos[p]] += 1
    return cm


def _mean(values) -> float:
    values = list(values)
    return float(np.mean(values)) if values else 0.0


def report_from_predictions(y_true, y_pred, classes: Sequence[int], sparse: Sequence[int] = ()) -> EvalReport:
    """Per-class scores with f1 = 0 whenever precision + recall = 0.

    Macro and breakdown means run over classes present in ``y_true`` only.
    """
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if len(y_true) == 0:
        raise ValueError("cannot evaluate an empty target set")
    classes = [int(c) for c in classes]
    cm = confusion_matrix(y_true, y_pred, classes)
    tp = np.diag(cm).astype(float)
    pred_tot = cm.sum(axis=0)
    true_tot = cm.sum(axis=1)
    precision = np.divide(tp, pred_tot, out=np.zeros_like(tp), where=pred_tot > 0)
    recall = np.divide(tp, true_tot, out=np.zeros_like(tp), where=true_tot > 0)
    denom = precision + recall
    f1 = np.divide(2 * precision * recall, denom, out=np.zeros_like(tp), where=denom > 0)

    present = true_tot > 0
    sparse_set = {int(c) for c in sparse}
    is_sparse = np.array([c in sparse_set for c in classes], dtype=bool)

    def acc_over(sel):
        n = true_tot[sel].sum()
        return float(tp[sel].sum() / n) if n else 0.0

    return EvalReport(
        accuracy=float(np.trace(cm) / cm.sum()),
        classes=classes,
        precision=precision.tolist(),
        recall=recall.tolist(),
        f1=f1.tolist(),
        support=true_tot.tolist(),
        macro_f1=_mean(f1[present]),
        sparse_f1=_mean(f1[present & is_sparse]),
        nonsparse_f1=_mean(f1[present & ~is_sparse]),
        sparse_accuracy=acc_over(present & is_sparse),
        nonsparse_accuracy=acc_over(present & ~is_sparse),
        n_samples=int(cm.sum()),
    )


def evaluate(model: GadaModel, target_x, target_y, sparse_classes: Sequence[int] = (), batch_size: int = 256) -> EvalReport:
    """Score masked h1 predictions (eval-mode forward) against hidden labels."""
    target_x = np.asarray(target_x)
    if len(target_x) == 0:
        raise ValueError("cannot evaluate an empty target set")
    preds = np.concatenate(
        [forward_all(target_x[i : i + batch_size], model, "eval").h1 for i in range(0, len(target_x), batch_size)]
    )
    return report_from_predictions(target_y, preds, model.shared, sparse_classes)


def evaluate_scenario(model: GadaModel, scenario) -> EvalReport:
    return evaluate(model, scenario.target_x, scenario.target_y, scenario.sparse_classes)


def average_reports(reports: Sequence[EvalReport]) -> EvalReport:
    """Field-wise arithmetic mean (per-class lists averaged elementwise)."""
    if not reports:
        raise ValueError("no reports to average")
    first = reports[0]
    out = {}
    for key, value in asdict(first).items():
        column = [asdict(r)[key] for r in reports]
        if key == "classes":
            out[key] = value
        elif isinstance(value, list):
            out[key] = np.mean(column, axis=0).tolist()
        else:
            out[key] = float(np.mean(column))
    return EvalReport(**out)


def leave_five_out(
    model_trainer: Callable[[object], EvalReport],
    scenario_family: Callable[[tuple[int, ...]], object],
    num_shared: int,
) -> tuple[EvalReport, list[EvalReport]]:
    """Fold i marks shared positions 5i..5i+4 sparse, retrains and evaluates.

    ``scenario_family(sparse_positions)`` builds the fold's scenario and
    ``model_trainer(scenario)`` trains and returns its report. Returns the
    averaged report and the per-fold reports.
    """
    if num_shared % 5:
        raise ValueError(f"leave-five-out needs K' divisible by 5, got {num_shared}")
    folds = []
    for i in range(num_shared // 5):
        sparse = tuple(range(5 * i, 5 * i + 5))
        folds.append(model_trainer(scenario_family(sparse)))
    return average_reports(folds), folds


def dump_embeddings(model: GadaModel, x, labels, domains, path, batch_size: int = 256) -> Path:
    """CSV of pooled HGR features with ``label`` and ``domain`` columns."""
    x = np.asarray(x)
    feats = [forward_all(x[i : i + batch_size], model, "eval").features.data for i in range(0, len(x), batch_size)]
    feats = np.concatenate(feats) if feats else np.zeros((0, model.d_local))
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"f{j}" for j in range(feats.shape[1])] + ["label", "domain"])
        for row, y, dom in zip(feats, labels, domains):
            w.writerow([repr(float(v)) for v in row] + [int(y), dom])
    return path
