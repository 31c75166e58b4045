"""Per-epoch partition of the training set into a clean set and an unlabeled set.

Three admission routes, in order:
  css  - per observed class, the k smallest-loss samples form the base set
  mhcs - samples whose prediction matches the observed label with confidence >= tau
  lga  - unlabeled samples both peer networks confidently agree on; admitted with
         the agreed prediction replacing the observed label
followed by a size cap that evicts the lowest-confidence lga then mhcs admits.

All routes are pure functions of (scores, labels, config); ties break by
ascending sample id so partitions are reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from .augment import AugmentPolicy, epoch_rng, iter_augmented

PROV_CSS = 0
PROV_MHCS = 1
PROV_LGA = 2
PROV_NAMES = {PROV_CSS: "css", PROV_MHCS: "mhcs", PROV_LGA: "lga"}

# stream tag for the epoch-start selection pass rng
SELECTION_STREAM = 101


@dataclass(frozen=True)
class FilterConfig:
    filter_rate: float          # R
    confidence_threshold: float  # tau
    cap_ratio: float            # rho
    lga_start: int              # first epoch at which agreement relabeling runs
    balanced_css: bool = True   # per-class k = ceil(n/C * R); False: floor(|S_j| * R)

    def __post_init__(self):
        for name in ("filter_rate", "confidence_threshold", "cap_ratio"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ValueError(f"{name} must lie in (0, 1]")


@dataclass(frozen=True)
class SelectionState:
    """One network's partition for one epoch.

    ``labels`` holds the training label of each clean sample (the observed
    label, or the guessed label for agreement-admitted ids); ``confidence``
    holds the admitting network's max softmax score, used by the cap.
    """

    clean_indices: np.ndarray      # ascending sample ids
    unlabeled_indices: np.ndarray  # ascending, complement of clean
    provenance: np.ndarray         # int8 aligned with clean_indices
    labels: np.ndarray             # int64 aligned with clean_indices
    confidence: np.ndarray         # float64 aligned with clean_indices
    num_classes: int

    def __len__(self) -> int:
        return len(self.clean_indices) + len(self.unlabeled_indices)

    @property
    def guessed_labels(self) -> dict[int, int]:
        mask = self.provenance == PROV_LGA
        return dict(zip(self.clean_indices[mask].tolist(), self.labels[mask].tolist()))

    @property
    def per_class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)

    def effective_labels(self, noisy_labels: np.ndarray) -> np.ndarray:
        """Full-length label array with guessed labels substituted."""
        out = noisy_labels.copy()
        out[self.clean_indices] = self.labels
        return out

    def validate(self) -> None:
        inter = np.intersect1d(self.clean_indices, self.unlabeled_indices)
        if len(inter):
            raise AssertionError("clean and unlabeled sets overlap")
        n = len(self)
        union = np.union1d(self.clean_indices, self.unlabeled_indices)
        if len(union) != n or (len(union) and (union[0] != 0 or union[-1] != n - 1)):
            raise AssertionError("partition does not cover all sample ids")


def css_select(losses: np.ndarray, noisy_labels: np.ndarray, cfg: FilterConfig,
               num_classes: int) -> np.ndarray:
    """Per-class smallest-loss base selection; returns ascending sample ids."""
    losses = np.asarray(losses, dtype=np.float64)
    if not np.isfinite(losses).all():
        raise ValueError("losses must be finite")
    if len(losses) != len(noisy_labels):
        raise ValueError("losses and labels must align")
    n = len(losses)
    chosen = []
    for j in range(num_classes):
        ids = np.flatnonzero(noisy_labels == j)
        if len(ids) == 0:
            continue
        if cfg.balanced_css:
            k = min(math.ceil(n / num_classes * cfg.filter_rate), len(ids))
        else:
            k = min(math.floor(len(ids) * cfg.filter_rate), len(ids))
        if k <= 0:
            continue
        order = np.lexsort((ids, losses[ids]))  # loss ascending, then id
        chosen.append(ids[order[:k]])
    if not chosen:
        return np.empty(0, dtype=np.int64)
    return np.sort(np.concatenate(chosen)).astype(np.int64)


def mhcs_select(probs: np.ndarray, noisy_labels: np.ndarray, tau: float,
                exclude: np.ndarray) -> np.ndarray:
    """Ids whose argmax matches the observed label with max prob >= tau."""
    if not 0.0 < tau <= 1.0:
        raise ValueError("tau must lie in (0, 1]")
    probs = np.asarray(probs, dtype=np.float64)
    if np.abs(probs.sum(axis=1) - 1.0).max() > 1e-5:
        raise ValueError("probability rows must sum to 1")
    conf = probs.max(axis=1)
    pred = probs.argmax(axis=1)  # ties resolve to the lowest class id
    mask = (conf >= tau) & (pred == np.asarray(noisy_labels))
    mask[np.asarray(exclude, dtype=np.int64)] = False
    return np.flatnonzero(mask).astype(np.int64)


def lga_select(probs1: np.ndarray, probs2: np.ndarray, tau: float,
               candidates: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Agreement relabeling over ``candidates``: both networks confident on the
    same class. Returns (admitted ids ascending, guessed labels aligned)."""
    if not 0.0 < tau <= 1.0:
        raise ValueError("tau must lie in (0, 1]")
    cand = np.sort(np.asarray(candidates, dtype=np.int64))
    if len(cand) == 0:
        return cand, np.empty(0, dtype=np.int64)
    p1 = np.asarray(probs1, dtype=np.float64)[cand]
    p2 = np.asarray(probs2, dtype=np.float64)[cand]
    pred1, pred2 = p1.argmax(axis=1), p2.argmax(axis=1)
    ok = (p1.max(axis=1) >= tau) & (p2.max(axis=1) >= tau) & (pred1 == pred2)
    return cand[ok], pred1[ok].astype(np.int64)


def apply_cap(state: SelectionState, rho: float, n: int) -> SelectionState:
    """Evict excess clean samples down to floor(rho * n).

    Eviction order: lowest-confidence agreement admits, then lowest-confidence
    matched-confidence admits; base-selection ids are never evicted (so the cap
    cannot bind below the base set size). Ties break by ascending id.
    """
    limit = math.floor(rho * n)
    excess = len(state.clean_indices) - limit
    if excess <= 0:
        return state
    keep = np.ones(len(state.clean_indices), dtype=bool)
    for prov in (PROV_LGA, PROV_MHCS):
        if excess <= 0:
            break
        pos = np.flatnonzero(state.provenance == prov)
        order = np.lexsort((state.clean_indices[pos], state.confidence[pos]))
        evict = pos[order[:min(excess, len(pos))]]
        keep[evict] = False
        excess -= len(evict)
    moved = state.clean_indices[~keep]
    return SelectionState(
        clean_indices=state.clean_indices[keep],
        unlabeled_indices=np.sort(np.concatenate([state.unlabeled_indices, moved])),
        provenance=state.provenance[keep],
        labels=state.labels[keep],
        confidence=state.confidence[keep],
        num_classes=state.num_classes,
    )


def partition_from_scores(losses: np.ndarray, probs_self: np.ndarray,
                          probs_peer: np.ndarray, noisy_labels: np.ndarray,
                          cfg: FilterConfig, epoch: int, num_classes: int,
                          use_css: bool = True, use_mhcs: bool = True,
                          use_lga: bool = True) -> SelectionState:
    """Compose css -> mhcs -> lga -> cap for one network from precomputed scores."""
    n = len(noisy_labels)
    noisy_labels = np.asarray(noisy_labels, dtype=np.int64)
    conf_self = np.asarray(probs_self).max(axis=1).astype(np.float64)

    css_ids = css_select(losses, noisy_labels, cfg, num_classes) if use_css \
        else np.empty(0, dtype=np.int64)
    mhcs_ids = mhcs_select(probs_self, noisy_labels, cfg.confidence_threshold, css_ids) \
        if use_mhcs else np.empty(0, dtype=np.int64)

    parts = [(css_ids, PROV_CSS), (mhcs_ids, PROV_MHCS)]
    clean = np.concatenate([css_ids, mhcs_ids])
    labels = noisy_labels[clean]

    if use_lga and epoch >= cfg.lga_start:
        in_clean = np.zeros(n, dtype=bool)
        in_clean[clean] = True
        candidates = np.flatnonzero(~in_clean)
        lga_ids, guessed = lga_select(probs_self, probs_peer,
                                      cfg.confidence_threshold, candidates)
        parts.append((lga_ids, PROV_LGA))
        clean = np.concatenate([clean, lga_ids])
        labels = np.concatenate([labels, guessed])

    provenance = np.concatenate([np.full(len(ids), tag, dtype=np.int8)
                                 for ids, tag in parts]) if len(clean) else \
        np.empty(0, dtype=np.int8)
    order = np.argsort(clean, kind="stable")
    clean, provenance, labels = clean[order], provenance[order], labels[order]

    in_clean = np.zeros(n, dtype=bool)
    in_clean[clean] = True
    state = SelectionState(
        clean_indices=clean.astype(np.int64),
        unlabeled_indices=np.flatnonzero(~in_clean).astype(np.int64),
        provenance=provenance,
        labels=labels.astype(np.int64),
        confidence=conf_self[clean],
        num_classes=num_classes,
    )
    return apply_cap(state, cfg.cap_ratio, n)


def eval_pass(net: torch.nn.Module, images: np.ndarray, noisy_labels: np.ndarray,
              seed: int, epoch: int, batch_size: int,
              policy: AugmentPolicy) -> tuple[np.ndarray, np.ndarray]:
    """Eval-mode losses and primary-head probabilities on one weak view of the
    whole training set, aligned with sample ids."""
    n = len(images)
    losses = np.empty(n, dtype=np.float64)
    probs = np.empty((n, 0))
    rng = epoch_rng(seed, epoch, SELECTION_STREAM)
    was_training = net.training
    net.eval()
    with torch.no_grad():
        for batch in iter_augmented(images, noisy_labels, np.arange(n), batch_size,
                                    rng, policy, shuffle=False):
            logits, _ = net(batch.weak_views)
            logp = torch.log_softmax(logits, dim=1)
            ce = -logp.gather(1, batch.labels.view(-1, 1)).squeeze(1)
            p = logp.exp().double().numpy()
            if probs.shape[1] == 0:
                probs = np.empty((n, p.shape[1]), dtype=np.float64)
            losses[batch.indices] = ce.double().numpy()
            probs[batch.indices] = p
    if was_training:
        net.train()
    return losses, probs


def build_partition(pair, view, cfg: FilterConfig, epoch: int, *, seed: int,
                    batch_size: int = 256, policy: AugmentPolicy | None = None,
                    use_css: bool = True, use_mhcs: bool = True,
                    use_lga: bool = True) -> tuple[SelectionState, SelectionState]:
    """Build each peer network's partition from its own epoch-start scores.

    The two networks share the weak-view pass (same augmentation draw) but
    select independently; the agreement route is the only cross-network step.
    """
    policy = policy or AugmentPolicy()
    losses1, probs1 = eval_pass(pair.net1, view.images, view.noisy_labels,
                                seed, epoch, batch_size, policy)
    losses2, probs2 = eval_pass(pair.net2, view.images, view.noisy_labels,
                                seed, epoch, batch_size, policy)
    state1 = partition_from_scores(losses1, probs1, probs2, view.noisy_labels,
                                   cfg, epoch, view.num_classes,
                                   use_css, use_mhcs, use_lga)
    state2 = partition_from_scores(losses2, probs2, probs1, view.noisy_labels,
                                   cfg, epoch, view.num_classes,
                                   use_css, use_mhcs, use_lga)
    return state1, state2
