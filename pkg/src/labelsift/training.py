"""Per-batch loss composition and the per-epoch training loop.

The classification loss has three parts: margin-based CE of the primary head
on clean-batch labels, the same for the auxiliary head, and the auxiliary
head's loss against sharpened debiased pseudo-labels on the unlabeled batch
(weighted by lambda_u). Consistency re-applies that composite on strong
views, and mixup interpolates clean pairs; both enter the total weighted by
gamma. Pseudo-label targets are always detached.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .augment import AugmentPolicy, AugmentedBatch, epoch_rng, iter_augmented
from .calibration import ClassPrior, debias_logits, dml_loss, sharpen
from .selection import SelectionState

log = logging.getLogger(__name__)

LABELED_STREAM = 201
UNLABELED_STREAM = 202
MIXUP_STREAM = 203


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class LossConfig:
    """Per-epoch loss weights and toggles."""

    alpha: float = 0.8
    temperature: float = 0.5
    lambda_u: float = 0.1
    gamma: float = 1.0
    mixup_beta: float = 4.0
    use_aux_head: bool = True     # False: pseudo-labels made and consumed by the primary head
    use_unlabeled: bool = True    # False: train on selected samples only

    def __post_init__(self):
        if self.mixup_beta <= 0:
            raise ValueError("mixup beta parameter must be > 0")


@dataclass
class PriorPair:
    labeled: ClassPrior
    unlabeled: ClassPrior

    @classmethod
    def uniform(cls, num_classes: int, momentum: float) -> "PriorPair":
        return cls(ClassPrior.uniform(num_classes, momentum, "labeled"),
                   ClassPrior.uniform(num_classes, momentum, "unlabeled"))


@dataclass
class LossBreakdown:
    l_x_primary: float = 0.0
    l_x_aux: float = 0.0
    l_u_aux: float = 0.0
    l_cls: float = 0.0
    l_cr: float = 0.0
    l_mix: float = 0.0
    l_total: float = 0.0
    gamma: float = 0.0
    lambda_u: float = 0.0

    @classmethod
    def mean(cls, items: list["LossBreakdown"]) -> "LossBreakdown":
        if not items:
            return cls()
        out = cls()
        for name in ("l_x_primary", "l_x_aux", "l_u_aux", "l_cls", "l_cr",
                     "l_mix", "l_total"):
            setattr(out, name, float(np.mean([getattr(it, name) for it in items])))
        out.gamma = items[-1].gamma
        out.lambda_u = items[-1].lambda_u
        return out


def _one_hot(labels: torch.Tensor, num_classes: int, dtype) -> torch.Tensor:
    return F.one_hot(labels, num_classes).to(dtype)


def supervised_loss(net, batch: AugmentedBatch, priors: PriorPair,
                    cfg: LossConfig) -> tuple[torch.Tensor, torch.Tensor]:
    """Margin CE of both heads on the clean batch's weak views."""
    logits_h, logits_a = net(batch.weak_views)
    return _supervised_terms(logits_h, logits_a, batch.labels, priors, cfg)


def _supervised_terms(logits_h, logits_a, labels, priors: PriorPair, cfg: LossConfig):
    l_p = dml_loss(logits_h, labels, priors.labeled.pi, cfg.alpha)
    if cfg.use_aux_head:
        l_a = dml_loss(logits_a, labels, priors.labeled.pi, cfg.alpha)
    else:
        l_a = torch.zeros((), dtype=logits_h.dtype)
    return l_p, l_a


def pseudo_targets(logits_primary: torch.Tensor, prior_u: ClassPrior,
                   cfg: LossConfig) -> torch.Tensor:
    """Sharpened softmax of the debiased primary logits; detached."""
    refined = debias_logits(logits_primary.detach(), prior_u.pi, cfg.alpha)
    return sharpen(torch.softmax(refined, dim=-1), cfg.temperature)


def unsupervised_loss(net, batch: AugmentedBatch, priors: PriorPair,
                      cfg: LossConfig, targets: torch.Tensor | None = None) -> torch.Tensor:
    """Margin CE of the pseudo-head against sharpened debiased pseudo-labels."""
    logits_h, logits_a = net(batch.weak_views)
    if targets is None:
        targets = pseudo_targets(logits_h, priors.unlabeled, cfg)
    consumer = logits_a if cfg.use_aux_head else logits_h
    return dml_loss(consumer, targets, priors.unlabeled.pi, cfg.alpha)


def mixup_pair(sample_i: torch.Tensor, sample_j: torch.Tensor,
               label_i: torch.Tensor, label_j: torch.Tensor,
               beta_param: float, rng: np.random.Generator):
    """Convex combination of one sample pair with sigma ~ Beta(beta_param, beta_param)."""
    if beta_param <= 0:
        raise ValueError("mixup beta parameter must be > 0")
    sigma = float(rng.beta(beta_param, beta_param))
    return (sigma * sample_i + (1 - sigma) * sample_j,
            sigma * label_i + (1 - sigma) * label_j)


def mixup_batch(x: torch.Tensor, y_onehot: torch.Tensor, beta_param: float,
                rng: np.random.Generator):
    """Mix the batch with a random permutation of itself; one sigma per batch."""
    if beta_param <= 0:
        raise ValueError("mixup beta parameter must be > 0")
    sigma = float(rng.beta(beta_param, beta_param))
    perm = torch.from_numpy(rng.permutation(len(x)))
    return (sigma * x + (1 - sigma) * x[perm],
            sigma * y_onehot + (1 - sigma) * y_onehot[perm])


def consistency_loss(net, labeled: AugmentedBatch | None, unlabeled: AugmentedBatch | None,
                     targets: torch.Tensor | None, priors: PriorPair,
                     cfg: LossConfig) -> torch.Tensor:
    """The classification composite recomputed on strong views; supervised
    targets stay the batch labels, pseudo targets stay the weak-view ones."""
    total = torch.zeros(())
    if labeled is not None:
        logits_h, logits_a = net(labeled.strong_views)
        l_p, l_a = _supervised_terms(logits_h, logits_a, labeled.labels, priors, cfg)
        total = l_p + l_a
    if unlabeled is not None and cfg.use_unlabeled and targets is not None and cfg.lambda_u != 0.0:
        logits_h, logits_a = net(unlabeled.strong_views)
        consumer = logits_a if cfg.use_aux_head else logits_h
        total = total + cfg.lambda_u * dml_loss(consumer, targets, priors.unlabeled.pi, cfg.alpha)
    return total


@dataclass
class LossTensors:
    l_x_primary: torch.Tensor
    l_x_aux: torch.Tensor
    l_u_aux: torch.Tensor
    l_cls: torch.Tensor
    l_cr: torch.Tensor
    l_mix: torch.Tensor
    l_total: torch.Tensor
    px_labeled: np.ndarray | None
    px_unlabeled: np.ndarray | None


def compute_losses(net, labeled: AugmentedBatch | None, unlabeled: AugmentedBatch | None,
                   priors: PriorPair, cfg: LossConfig,
                   rng: np.random.Generator) -> LossTensors:
    """Compose the full per-step loss. ``rng`` only drives mixup draws, so
    re-seeding it makes the result a deterministic function of parameters."""
    zero = torch.zeros(())
    px_labeled = px_unlabeled = None
    targets = None

    if labeled is not None and len(labeled):
        logits_h, logits_a = net(labeled.weak_views)
        l_x_primary, l_x_aux = _supervised_terms(logits_h, logits_a, labeled.labels, priors, cfg)
        px_labeled = torch.softmax(logits_h.detach(), dim=1).double().numpy()
    else:
        if labeled is not None:
            log.warning("empty clean batch: supervised terms set to zero")
        l_x_primary, l_x_aux = zero, zero

    if unlabeled is not None and len(unlabeled) and cfg.use_unlabeled:
        logits_uh, logits_ua = net(unlabeled.weak_views)
        targets = pseudo_targets(logits_uh, priors.unlabeled, cfg)
        consumer = logits_ua if cfg.use_aux_head else logits_uh
        l_u_aux = dml_loss(consumer, targets, priors.unlabeled.pi, cfg.alpha)
        px_unlabeled = torch.softmax(logits_uh.detach(), dim=1).double().numpy()
    else:
        l_u_aux = zero

    l_cls = l_x_primary + l_x_aux + cfg.lambda_u * l_u_aux

    if cfg.gamma != 0.0:
        l_cr = consistency_loss(net, labeled if labeled is not None and len(labeled) else None,
                                unlabeled, targets, priors, cfg)
        if labeled is not None and len(labeled):
            y1h = _one_hot(labeled.labels, net.num_classes, labeled.mix_views.dtype)
            xm, ym = mixup_batch(labeled.mix_views, y1h, cfg.mixup_beta, rng)
            logits_mh, logits_ma = net(xm)
            l_mix = dml_loss(logits_mh, ym, priors.labeled.pi, cfg.alpha)
            if cfg.use_aux_head:
                l_mix = l_mix + dml_loss(logits_ma, ym, priors.labeled.pi, cfg.alpha)
        else:
            l_mix = zero
    else:
        l_cr, l_mix = zero, zero

    l_total = l_cls + cfg.gamma * (l_cr + l_mix)
    return LossTensors(l_x_primary, l_x_aux, l_u_aux, l_cls, l_cr, l_mix, l_total,
                       px_labeled, px_unlabeled)


def train_step(net, opt, labeled, unlabeled, priors: PriorPair, cfg: LossConfig,
               rng: np.random.Generator) -> LossBreakdown:
    lt = compute_losses(net, labeled, unlabeled, priors, cfg, rng)
    total = float(lt.l_total.detach())
    if not math.isfinite(total):
        raise TrainingDiverged(
            f"non-finite loss: total={total} cls={float(lt.l_cls.detach())} "
            f"cr={float(lt.l_cr.detach())} mix={float(lt.l_mix.detach())}")
    opt.zero_grad(set_to_none=True)
    lt.l_total.backward()
    opt.step()
    if lt.px_labeled is not None:
        priors.labeled.update(lt.px_labeled)
    if lt.px_unlabeled is not None:
        priors.unlabeled.update(lt.px_unlabeled)
    def val(t):
        return float(t.detach())

    return LossBreakdown(
        l_x_primary=val(lt.l_x_primary), l_x_aux=val(lt.l_x_aux),
        l_u_aux=val(lt.l_u_aux), l_cls=val(lt.l_cls), l_cr=val(lt.l_cr),
        l_mix=val(lt.l_mix), l_total=total, gamma=cfg.gamma, lambda_u=cfg.lambda_u)


def _stream(images, labels_full, ids, batch_size, seed, epoch, tag, policy):
    """Endless epoch-seeded batch stream; reshuffles on each wraparound."""
    wrap = 0
    while True:
        rng = epoch_rng(seed, epoch, tag, wrap)
        yield from iter_augmented(images, labels_full, ids, batch_size, rng, policy)
        wrap += 1


def train_epoch(pair, view, states: tuple[SelectionState, SelectionState],
                priors_by_net: tuple[PriorPair, PriorPair], cfg: LossConfig,
                epoch: int, *, seed: int, batch_size: int = 256,
                policy: AugmentPolicy | None = None) -> list[LossBreakdown]:
    """One epoch for both peer networks over their own partitions.

    Each step pairs one clean batch with one unlabeled batch (nominally equal
    size); the shorter stream cycles with fresh shuffles.
    """
    policy = policy or AugmentPolicy()
    pair.train()
    reports = []
    for net_idx, (net, opt, state, priors) in enumerate(
            zip(pair.nets(), pair.optimizers(), states, priors_by_net)):
        labels_eff = state.effective_labels(view.noisy_labels)
        n_l = len(state.clean_indices)
        n_u = len(state.unlabeled_indices) if cfg.use_unlabeled else 0
        if n_l == 0:
            log.warning("net %d: empty clean set at epoch %d, supervised loss is zero",
                        net_idx + 1, epoch)
        steps = math.ceil(max(n_l, n_u) / batch_size)
        if steps == 0:
            reports.append(LossBreakdown(gamma=cfg.gamma, lambda_u=cfg.lambda_u))
            continue
        labeled_it = _stream(view.images, labels_eff, state.clean_indices, batch_size,
                             seed, epoch, LABELED_STREAM + 10 * net_idx, policy) \
            if n_l else None
        unlabeled_it = _stream(view.images, view.noisy_labels, state.unlabeled_indices,
                               batch_size, seed, epoch, UNLABELED_STREAM + 10 * net_idx,
                               policy) if n_u else None
        mix_rng = epoch_rng(seed, epoch, MIXUP_STREAM + 10 * net_idx)
        step_reports = []
        for _ in range(steps):
            labeled = next(labeled_it) if labeled_it is not None else None
            unlabeled = next(unlabeled_it) if unlabeled_it is not None else None
            step_reports.append(train_step(net, opt, labeled, unlabeled,
                                           priors, cfg, mix_rng))
        reports.append(LossBreakdown.mean(step_reports))
    return reports
