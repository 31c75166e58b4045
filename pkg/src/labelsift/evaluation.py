"""Ground-truth-aware metrics and the canonical CSV logs.

These are pure read-only functions over training snapshots; nothing here
feeds back into training state.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .augment import iter_plain
from .selection import PROV_LGA, PROV_NAMES, SelectionState

METRICS_COLUMNS = ["epoch", "net_id", "precision", "recall", "f1", "pseudo_acc",
                   "test_acc_net1", "test_acc_net2", "test_acc_ensemble",
                   "n_labeled", "n_unlabeled"]
LOSS_COLUMNS = ["epoch", "net_id", "l_x_primary", "l_x_aux", "l_u_aux", "l_cls",
                "l_cr", "l_mix", "l_total", "gamma", "lambda_u", "lr"]
SELECTION_COLUMNS = ["epoch", "sample_id", "network", "provenance",
                     "chosen_label", "confidence"]


@dataclass
class SelectionMetrics:
    precision: float
    recall: float
    f1: float
    tp_per_class: np.ndarray
    fp_per_class: np.ndarray
    n_selected: int
    epoch: int = -1


def selection_metrics(state: SelectionState, true_labels: np.ndarray,
                      noisy_labels: np.ndarray, epoch: int = -1) -> SelectionMetrics:
    """A selected id counts as a true positive iff its clean-set label (observed,
    or the guessed label for agreement admits) equals the hidden true label.

    Recall's denominator is the observed-correct count plus agreement admits
    whose guessed label corrected a wrong observed one (so relabeling can add
    recoverable mass to both numerator and denominator).
    """
    true_sel = np.asarray(true_labels)[state.clean_indices]
    tp_mask = state.labels == true_sel
    c = state.num_classes
    tp_per_class = np.bincount(state.labels[tp_mask], minlength=c)
    fp_per_class = np.bincount(state.labels[~tp_mask], minlength=c)

    n_selected = len(state.clean_indices)
    precision = tp_mask.sum() / n_selected if n_selected else 0.0

    observed_correct = int((np.asarray(noisy_labels) == np.asarray(true_labels)).sum())
    lga_mask = state.provenance == PROV_LGA
    corrected = int((tp_mask & lga_mask
                     & (np.asarray(noisy_labels)[state.clean_indices] != true_sel)).sum())
    denom = observed_correct + corrected
    recall = tp_mask.sum() / denom if denom else 0.0

    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return SelectionMetrics(float(precision), float(recall), float(f1),
                            tp_per_class, fp_per_class, n_selected, epoch)


def pseudo_label_metrics(pseudo_labels: np.ndarray, true_labels: np.ndarray,
                         num_classes: int) -> tuple[float, np.ndarray] | None:
    """Accuracy of pseudo-labels against hidden truth, plus per-class recall.
    Returns None for an empty unlabeled set (metric undefined)."""
    pseudo_labels = np.asarray(pseudo_labels)
    true_labels = np.asarray(true_labels)
    if len(pseudo_labels) == 0:
        return None
    correct = pseudo_labels == true_labels
    acc = float(correct.mean())
    recall = np.zeros(num_classes)
    for j in range(num_classes):
        mask = true_labels == j
        recall[j] = correct[mask].mean() if mask.any() else np.nan
    return acc, recall


@dataclass
class AccuracyLog:
    accs: list[float] = field(default_factory=list)

    def add(self, acc: float) -> None:
        self.accs.append(float(acc))

    @property
    def best(self) -> float:
        return max(self.accs) if self.accs else float("nan")

    @property
    def last10_mean(self) -> float:
        if not self.accs:
            return float("nan")
        return float(np.mean(self.accs[-10:]))


def test_accuracy(pair, test_bundle, batch_size: int = 512) -> tuple[float, float, float]:
    """Per-network and logit-ensemble top-1 accuracy on the test split."""
    pair.eval()
    hits = np.zeros(3)
    total = 0
    labels = test_bundle.true_labels
    with torch.no_grad():
        for start, x in iter_plain(test_bundle.images, batch_size):
            y = labels[start:start + len(x)]
            logits1 = pair.net1.predict_logits(x)
            logits2 = pair.net2.predict_logits(x)
            for k, logits in enumerate((logits1, logits2, (logits1 + logits2) / 2)):
                hits[k] += (logits.argmax(dim=1).numpy() == y).sum()
            total += len(x)
    return tuple(float(h) / total for h in hits)


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


class CsvLog:
    """Append-only CSV writer with a fixed column schema."""

    def __init__(self, path: str | Path, columns: list[str]):
        self.path = Path(path)
        self.columns = columns
        self._file = open(self.path, "w", newline="")
        self._writer = csv.writer(self._file)
        self._writer.writerow(columns)

    def write(self, **values) -> None:
        unknown = set(values) - set(self.columns)
        if unknown:
            raise ValueError(f"unknown columns: {sorted(unknown)}")
        self._writer.writerow([_fmt(values.get(c)) for c in self.columns])
        self._file.flush()

    def close(self) -> None:
        self._file.close()


def dump_selection(log: CsvLog, state: SelectionState, epoch: int, net_id: int) -> None:
    for i, sample_id in enumerate(state.clean_indices.tolist()):
        log.write(epoch=epoch, sample_id=sample_id, network=net_id,
                  provenance=PROV_NAMES[int(state.provenance[i])],
                  chosen_label=int(state.labels[i]),
                  confidence=float(state.confidence[i]))


def read_csv(path: str | Path) -> list[dict]:
    with open(path, newline="") as f:
        return list(csv.DictReader(f))
