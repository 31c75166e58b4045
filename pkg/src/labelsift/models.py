"""Dual-head classifiers, the peer-network pair, warm-up, and schedules.

The classifier is a shared backbone with two independent linear heads: the
primary head is the task classifier and the only one read at inference; the
auxiliary head consumes pseudo-labels during training so their errors never
reach the primary head's parameters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .augment import AugmentPolicy, epoch_rng, iter_augmented

WARMUP_STREAM = 7


class SmallConvNet(nn.Module):
    """Conv-BN-ReLU-pool blocks ending in global average pooling."""

    def __init__(self, channels=(64, 128, 256, 256), first_stride=1, in_channels=3):
        super().__init__()
        layers = []
        c_in = in_channels
        for i, c in enumerate(channels):
            layers += [
                nn.Conv2d(c_in, c, 3, stride=first_stride if i == 0 else 1,
                          padding=1, bias=False),
                nn.BatchNorm2d(c),
                nn.ReLU(inplace=True),
                nn.MaxPool2d(2),
            ]
            c_in = c
        self.features = nn.Sequential(*layers)
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.feature_dim = c_in

    def forward(self, x):
        return self.pool(self.features(x)).flatten(1)


class BasicBlock(nn.Module):
    def __init__(self, c_in, c_out, stride=1):
        super().__init__()
        self.conv1 = nn.Conv2d(c_in, c_out, 3, stride=stride, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(c_out)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(c_out)
        self.shortcut = nn.Sequential()
        if stride != 1 or c_in != c_out:
            self.shortcut = nn.Sequential(
                nn.Conv2d(c_in, c_out, 1, stride=stride, bias=False),
                nn.BatchNorm2d(c_out),
            )

    def forward(self, x):
        out = F.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return F.relu(out + self.shortcut(x))


class ResNet18(nn.Module):
    """ResNet-18 with the 3x3 stem used for 32x32 inputs."""

    def __init__(self, in_channels=3):
        super().__init__()
        self.conv1 = nn.Conv2d(in_channels, 64, 3, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(64)
        stages = []
        c_in = 64
        for c_out, stride in ((64, 1), (128, 2), (256, 2), (512, 2)):
            stages += [BasicBlock(c_in, c_out, stride), BasicBlock(c_out, c_out)]
            c_in = c_out
        self.stages = nn.Sequential(*stages)
        self.feature_dim = 512

    def forward(self, x):
        out = F.relu(self.bn1(self.conv1(x)))
        out = self.stages(out)
        return F.adaptive_avg_pool2d(out, 1).flatten(1)


BACKBONES = {
    "cnn-tiny": lambda: SmallConvNet((8, 16, 32), first_stride=2),
    "cnn-small": lambda: SmallConvNet((16, 32, 64, 128), first_stride=2),
    "cnn-large": lambda: SmallConvNet((64, 128, 256, 256), first_stride=1),
    "resnet18": ResNet18,
}


class DualHeadClassifier(nn.Module):
    """Shared backbone with a primary head and an auxiliary pseudo head.

    Only the primary head is consulted at inference; the auxiliary head
    exists to absorb pseudo-label training signal.
    """

    def __init__(self, backbone: str = "cnn-large", num_classes: int = 10):
        super().__init__()
        if backbone not in BACKBONES:
            raise ValueError(f"unknown backbone {backbone!r}; choose from {sorted(BACKBONES)}")
        self.backbone = BACKBONES[backbone]()
        self.num_classes = num_classes
        self.primary_head = nn.Linear(self.backbone.feature_dim, num_classes)
        self.aux_head = nn.Linear(self.backbone.feature_dim, num_classes)

    def forward(self, x) -> tuple[torch.Tensor, torch.Tensor]:
        feats = self.backbone(x)
        return self.primary_head(feats), self.aux_head(feats)

    def predict_logits(self, x) -> torch.Tensor:
        """Inference path: primary head only."""
        return self.primary_head(self.backbone(x))


@dataclass
class PeerPair:
    """Two identically-shaped networks with independent optimizers."""

    net1: DualHeadClassifier
    net2: DualHeadClassifier
    opt1: torch.optim.Optimizer
    opt2: torch.optim.Optimizer

    def nets(self):
        return (self.net1, self.net2)

    def optimizers(self):
        return (self.opt1, self.opt2)

    def set_lr(self, lr: float) -> None:
        for opt in self.optimizers():
            for group in opt.param_groups:
                group["lr"] = lr

    def train(self):
        self.net1.train()
        self.net2.train()

    def eval(self):
        self.net1.eval()
        self.net2.eval()


def make_peer_pair(backbone: str, num_classes: int, seed: int, lr: float = 0.05,
                   momentum: float = 0.9, weight_decay: float = 5e-4) -> PeerPair:
    nets = []
    for k in (1, 2):
        torch.manual_seed(seed + k)
        nets.append(DualHeadClassifier(backbone, num_classes))
    opts = [torch.optim.SGD(net.parameters(), lr=lr, momentum=momentum,
                            weight_decay=weight_decay) for net in nets]
    return PeerPair(nets[0], nets[1], opts[0], opts[1])


def warmup_epoch(pair: PeerPair, view, epoch: int, *, batch_size: int = 256,
                 seed: int = 0, policy: AugmentPolicy | None = None) -> float:
    """One epoch of plain cross entropy on all observed labels, primary head
    only (the auxiliary head receives no gradient and stays untouched).
    Returns the mean CE over both networks."""
    policy = policy or AugmentPolicy()
    pair.train()
    rng = epoch_rng(seed, epoch, WARMUP_STREAM)
    total, steps = 0.0, 0
    n = len(view.images)
    for batch in iter_augmented(view.images, view.noisy_labels, np.arange(n),
                                batch_size, rng, policy):
        for net, opt in zip(pair.nets(), pair.optimizers()):
            opt.zero_grad(set_to_none=True)
            logits = net.primary_head(net.backbone(batch.weak_views))
            loss = F.cross_entropy(logits, batch.labels)
            loss.backward()
            opt.step()
            total += loss.item()
            steps += 1
    return total / max(steps, 1)


def warmup(pair: PeerPair, view, epochs: int, *, batch_size: int = 256,
           seed: int = 0, policy: AugmentPolicy | None = None) -> PeerPair:
    if epochs < 1:
        raise ValueError("warm-up needs at least one epoch")
    for epoch in range(epochs):
        warmup_epoch(pair, view, epoch, batch_size=batch_size, seed=seed, policy=policy)
    return pair


def ensemble_predict(pair: PeerPair, x: torch.Tensor) -> torch.Tensor:
    """Softmax of the mean of the two primary-head logit vectors."""
    with torch.no_grad():
        logits = (pair.net1.predict_logits(x) + pair.net2.predict_logits(x)) / 2.0
        return torch.softmax(logits, dim=-1)


@dataclass(frozen=True)
class ScheduleSpec:
    total_epochs: int
    warmup_epochs: int
    lr0: float
    gamma_max: float = 1.0
    gamma_ramp: int = 50
    lambda_u_max: float = 0.1
    lambda_u_ramp: int = 50
    lga_start: int = 250

    def __post_init__(self):
        if not self.warmup_epochs < self.lga_start <= self.total_epochs:
            raise ValueError("need warmup_epochs < lga_start <= total_epochs")
        if self.gamma_ramp < 0 or self.lambda_u_ramp < 0:
            raise ValueError("ramp lengths must be >= 0")


def _ramp(epoch: int, start: int, length: int) -> float:
    if epoch <= start:
        return 0.0
    if length <= 0:
        return 1.0
    return min((epoch - start) / length, 1.0)


def schedule_value(spec: ScheduleSpec, epoch: int, which: str) -> float:
    """Cosine learning rate; linear 0->max ramps for the loss weights."""
    if not 0 <= epoch <= spec.total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {spec.total_epochs}]")
    if which == "lr":
        return spec.lr0 * 0.5 * (1.0 + math.cos(math.pi * epoch / spec.total_epochs))
    if which == "gamma":
        return spec.gamma_max * _ramp(epoch, spec.warmup_epochs, spec.gamma_ramp)
    if which == "lambda_u":
        return spec.lambda_u_max * _ramp(epoch, spec.warmup_epochs, spec.lambda_u_ramp)
    raise ValueError(f"unknown schedule {which!r}")
