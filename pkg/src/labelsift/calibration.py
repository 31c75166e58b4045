"""Class-prior tracking and the debiased loss/pseudo-label primitives.

The prior is a moving-average estimate of the model's predicted label
distribution, kept in float64 so long update sequences stay exact. The
margin loss shifts logits by alpha * log(prior) before the softmax; the
pseudo-label path subtracts the same term instead.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

PRIOR_FLOOR = 1e-8


@dataclass
class ClassPrior:
    """Moving-average class distribution estimate, one per (network, role)."""

    pi: np.ndarray
    momentum: float = 0.9999
    role: str = "labeled"

    def __post_init__(self):
        self.pi = np.asarray(self.pi, dtype=np.float64)
        if self.pi.ndim != 1 or len(self.pi) < 2:
            raise ValueError("prior must be a vector of >= 2 class probabilities")
        if (self.pi < 0).any() or abs(self.pi.sum() - 1.0) > 1e-6:
            raise ValueError("prior must lie on the probability simplex")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")

    @classmethod
    def uniform(cls, num_classes: int, momentum: float = 0.9999, role: str = "labeled") -> "ClassPrior":
        return cls(np.full(num_classes, 1.0 / num_classes), momentum, role)

    def update(self, batch_probs: np.ndarray) -> "ClassPrior":
        """pi <- m * pi + (1 - m) * mean(batch_probs); returns self."""
        probs = np.asarray(batch_probs, dtype=np.float64)
        if probs.ndim != 2 or probs.shape[0] == 0:
            raise ValueError("batch_probs must be a nonempty (B, C) matrix")
        if probs.shape[1] != len(self.pi):
            raise ValueError("batch_probs class dimension mismatch")
        if np.abs(probs.sum(axis=1) - 1.0).max() > 1e-4:
            raise ValueError("batch_probs rows must lie on the simplex")
        self.pi = self.momentum * self.pi + (1.0 - self.momentum) * probs.mean(axis=0)
        return self


def _log_prior(pi, num_classes: int, dtype, device) -> torch.Tensor:
    if isinstance(pi, ClassPrior):
        pi = pi.pi
    arr = np.asarray(pi, dtype=np.float64)
    if arr.shape != (num_classes,):
        raise ValueError(f"prior has shape {arr.shape}, expected ({num_classes},)")
    if (arr < 0).any():
        raise ValueError("prior entries must be nonnegative")
    return torch.as_tensor(np.log(np.maximum(arr, PRIOR_FLOOR)), dtype=dtype, device=device)


def dml_loss(logits: torch.Tensor, target, pi, alpha: float,
             reduction: str = "mean") -> torch.Tensor:
    """Margin-shifted cross entropy: -sum_j y_j log softmax_j(f + alpha*log pi).

    ``target`` may be integer class ids or a soft/one-hot matrix. alpha=0 (or
    a uniform prior) reduces exactly to standard cross entropy.
    """
    single = logits.dim() == 1
    if single:
        logits = logits.unsqueeze(0)
    if torch.isnan(logits).any():
        raise ValueError("NaN logits passed to the margin loss")
    c = logits.shape[-1]
    shifted = logits
    if alpha != 0.0:
        shifted = logits + alpha * _log_prior(pi, c, logits.dtype, logits.device)
    logp = F.log_softmax(shifted, dim=-1)
    target_t = torch.as_tensor(target, device=logits.device)
    if target_t.dim() <= 1 and not torch.is_floating_point(target_t):
        target_t = target_t.reshape(-1)
        losses = -logp.gather(1, target_t.view(-1, 1)).squeeze(1)
    else:
        if single and target_t.dim() == 1:
            target_t = target_t.unsqueeze(0)
        losses = -(target_t.to(logp.dtype) * logp).sum(dim=-1)
    if reduction == "none":
        return losses.squeeze(0) if single else losses
    if reduction == "sum":
        return losses.sum()
    return losses.mean()


def debias_logits(logits: torch.Tensor, pi, alpha: float) -> torch.Tensor:
    """Refined logits for pseudo-label generation: f - alpha * log pi."""
    if alpha == 0.0:
        return logits
    c = logits.shape[-1]
    return logits - alpha * _log_prior(pi, c, logits.dtype, logits.device)


def sharpen(p, temperature: float) -> torch.Tensor:
    """Raise probabilities to 1/T and renormalize. T=1 is the identity."""
    if temperature <= 0:
        raise ValueError("sharpening temperature must be > 0")
    pt = torch.as_tensor(p)
    if not torch.is_floating_point(pt):
        pt = pt.double()
    # divide by the rowwise max first so tiny T cannot underflow everything
    peak = pt.max(dim=-1, keepdim=True).values.clamp_min(1e-30)
    powered = (pt / peak) ** (1.0 / temperature)
    return powered / powered.sum(dim=-1, keepdim=True)
