"""End-to-end experiment runner: data prep, warm-up, the per-epoch
select/train/evaluate loop, logging, and checkpoints."""

from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from . import data as datamod
from .augment import AugmentPolicy
from .calibration import PRIOR_FLOOR, ClassPrior
from .config import RunConfig
from .evaluation import (LOSS_COLUMNS, METRICS_COLUMNS, SELECTION_COLUMNS,
                         AccuracyLog, CsvLog, dump_selection, pseudo_label_metrics,
                         selection_metrics, test_accuracy)
from .models import PeerPair, ScheduleSpec, make_peer_pair, schedule_value, warmup_epoch
from .selection import FilterConfig, eval_pass, partition_from_scores
from .training import LossBreakdown, LossConfig, PriorPair, train_epoch

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1

# seed-derivation tags
_SEED_DATA, _SEED_NOISE, _SEED_IMBALANCE, _SEED_MODEL, _SEED_TRAIN = range(5)


def derive_seed(seed: int, tag: int) -> int:
    return int(np.random.SeedSequence([seed, tag]).generate_state(1)[0])


@dataclass
class RunResult:
    out_dir: Path
    test_log: AccuracyLog          # ensemble accuracy per epoch
    test_log_net1: AccuracyLog
    test_log_net2: AccuracyLog
    final_selection: list | None   # SelectionMetrics per net, last epoch
    pseudo_acc_by_epoch: list[tuple[float | None, float | None]]

    @property
    def summary(self) -> dict:
        return {
            "best_ensemble": self.test_log.best,
            "last10_ensemble": self.test_log.last10_mean,
            "last10_net1": self.test_log_net1.last10_mean,
            "last10_net2": self.test_log_net2.last10_mean,
            "final_precision": [m.precision for m in self.final_selection] if self.final_selection else None,
            "final_recall": [m.recall for m in self.final_selection] if self.final_selection else None,
        }


def prepare_data(cfg: RunConfig) -> tuple[datamod.DatasetBundle, datamod.DatasetBundle]:
    """Build train/test bundles: load or synthesize, subset, imbalance, then
    inject label noise (always in that order)."""
    if cfg.dataset == "synthetic":
        n_train = cfg.n_train or 5000
        n_test = cfg.n_test or 2000
        train, test = datamod.make_synthetic_dataset(
            cfg.num_classes, n_train, n_test, cfg.synthetic_modes,
            cfg.synthetic_pixel_noise, seed=derive_seed(cfg.seed, _SEED_DATA))
    elif cfg.dataset == "cifar10-bin":
        root = cfg.resolved_data_dir()
        train = datamod.load_cifar10_dir(root, "train", cfg.num_classes)
        test = datamod.load_cifar10_dir(root, "test", cfg.num_classes)
        if cfg.n_train:
            train = datamod.balanced_subset(train, cfg.n_train, derive_seed(cfg.seed, _SEED_DATA))
        if cfg.n_test and cfg.n_test < len(test):
            rng = np.random.default_rng(derive_seed(cfg.seed, _SEED_DATA) + 1)
            keep = np.sort(rng.choice(len(test), cfg.n_test, replace=False))
            test = datamod.DatasetBundle(test.images[keep], test.noisy_labels[keep],
                                         test.true_labels[keep], cfg.num_classes, "test")
    elif cfg.dataset == "bundle":
        root = Path(cfg.resolved_data_dir())
        train = datamod.load_bundle(root / "train")
        test = datamod.load_bundle(root / "test")
        return train, test  # noise was baked in at prepare time
    else:
        raise ValueError(f"unknown dataset {cfg.dataset!r}")

    if cfg.imbalance_kappa > 1.0:
        train = datamod.make_imbalanced(
            train, datamod.ImbalanceSpec(cfg.imbalance_kappa, derive_seed(cfg.seed, _SEED_IMBALANCE)))
    spec = datamod.NoiseSpec(cfg.noise_kind, cfg.noise_rate,
                             cfg.asym_mapping() if cfg.noise_kind == "asym" else None,
                             derive_seed(cfg.seed, _SEED_NOISE),
                             cfg.noise_file or None)
    return datamod.apply_noise(train, spec), test


def make_policy(cfg: RunConfig) -> AugmentPolicy:
    if cfg.strong_ops:
        ops = tuple(op.strip() for op in cfg.strong_ops.split(",") if op.strip())
        return AugmentPolicy(strong_ops=ops, n_strong_ops=cfg.n_strong_ops)
    return AugmentPolicy(n_strong_ops=cfg.n_strong_ops)


def save_checkpoint(path: str | Path, pair: PeerPair,
                    priors: tuple[PriorPair, PriorPair], epoch: int,
                    cfg: RunConfig) -> None:
    torch.save({
        "version": CHECKPOINT_VERSION,
        "epoch": epoch,
        "net1": pair.net1.state_dict(),
        "net2": pair.net2.state_dict(),
        "opt1": pair.opt1.state_dict(),
        "opt2": pair.opt2.state_dict(),
        "priors": {
            "net1_labeled": priors[0].labeled.pi,
            "net1_unlabeled": priors[0].unlabeled.pi,
            "net2_labeled": priors[1].labeled.pi,
            "net2_unlabeled": priors[1].unlabeled.pi,
            "momentum": priors[0].labeled.momentum,
        },
        "rng": {"torch": torch.get_rng_state(), "seed": cfg.seed},
        "config": dataclasses.asdict(cfg),
    }, path)


def load_checkpoint(path: str | Path) -> dict:
    ckpt = torch.load(path, weights_only=False)
    if ckpt.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {ckpt.get('version')}")
    return ckpt


def restore_pair(ckpt: dict) -> tuple[PeerPair, tuple[PriorPair, PriorPair], int]:
    cfg = RunConfig.from_dict(ckpt["config"])
    pair = make_peer_pair(cfg.backbone, cfg.num_classes, derive_seed(cfg.seed, _SEED_MODEL),
                          cfg.lr, cfg.momentum, cfg.weight_decay)
    pair.net1.load_state_dict(ckpt["net1"])
    pair.net2.load_state_dict(ckpt["net2"])
    pair.opt1.load_state_dict(ckpt["opt1"])
    pair.opt2.load_state_dict(ckpt["opt2"])
    m = ckpt["priors"]["momentum"]
    priors = tuple(
        PriorPair(ClassPrior(ckpt["priors"][f"net{k}_labeled"], m, "labeled"),
                  ClassPrior(ckpt["priors"][f"net{k}_unlabeled"], m, "unlabeled"))
        for k in (1, 2))
    torch.set_rng_state(ckpt["rng"]["torch"])
    return pair, priors, ckpt["epoch"]


def run(cfg: RunConfig) -> RunResult:
    """Execute one training run and leave config, logs, metrics, plots, and
    checkpoints in ``cfg.out_dir``."""
    cfg.validate()
    if cfg.threads > 0:
        torch.set_num_threads(cfg.threads)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / "config.json")

    train_bundle, test_bundle = prepare_data(cfg)
    view = train_bundle.train_view()
    n = len(view)
    (out / "run_meta.json").write_text(json.dumps({
        "dataset_sha256": train_bundle.content_hash(),
        "test_sha256": test_bundle.content_hash(),
        "n_train": n, "n_test": len(test_bundle),
        "seed": cfg.seed,
        "model_seed": derive_seed(cfg.seed, _SEED_MODEL),
        "train_seed": derive_seed(cfg.seed, _SEED_TRAIN),
    }, sort_keys=True, indent=2) + "\n")

    torch.manual_seed(derive_seed(cfg.seed, _SEED_MODEL))
    pair = make_peer_pair(cfg.backbone, cfg.num_classes,
                          derive_seed(cfg.seed, _SEED_MODEL),
                          cfg.lr, cfg.momentum, cfg.weight_decay)
    priors = (PriorPair.uniform(cfg.num_classes, cfg.prior_momentum),
              PriorPair.uniform(cfg.num_classes, cfg.prior_momentum))
    spec = ScheduleSpec(cfg.epochs, cfg.warmup_epochs, cfg.lr, cfg.gamma_max,
                        cfg.gamma_ramp, cfg.lambda_u_max, cfg.lambda_u_ramp,
                        cfg.lga_start)
    fcfg = FilterConfig(cfg.resolved_filter_rate(), cfg.tau, cfg.rho,
                        cfg.lga_start, cfg.balanced_css)
    policy = make_policy(cfg)
    train_seed = derive_seed(cfg.seed, _SEED_TRAIN)

    metrics_log = CsvLog(out / "metrics.csv", METRICS_COLUMNS)
    loss_log = CsvLog(out / "losses.csv", LOSS_COLUMNS)
    sel_log = CsvLog(out / "selection.csv", SELECTION_COLUMNS) if cfg.dump_selection else None

    acc_ens, acc_n1, acc_n2 = AccuracyLog(), AccuracyLog(), AccuracyLog()
    pseudo_by_epoch: list[tuple[float | None, float | None]] = []
    final_selection = None

    for epoch in range(cfg.epochs):
        lr = schedule_value(spec, epoch, "lr")
        pair.set_lr(lr)
        sel_metrics = (None, None)
        pseudo_accs: tuple[float | None, float | None] = (None, None)
        sizes = ((n, 0), (n, 0))

        if cfg.plain_ce or epoch < cfg.warmup_epochs:
            ce = warmup_epoch(pair, view, epoch, batch_size=cfg.batch_size,
                              seed=train_seed, policy=policy)
            breakdowns = [LossBreakdown(l_x_primary=ce, l_cls=ce, l_total=ce),
                          LossBreakdown(l_x_primary=ce, l_cls=ce, l_total=ce)]
        else:
            gamma = schedule_value(spec, epoch, "gamma")
            lambda_u = schedule_value(spec, epoch, "lambda_u")
            lcfg = LossConfig(
                alpha=0.0 if cfg.no_dbr else cfg.alpha,
                temperature=cfg.temperature,
                lambda_u=0.0 if cfg.only_clean else lambda_u,
                gamma=gamma, mixup_beta=cfg.mixup_beta,
                use_aux_head=not cfg.no_cbr,
                use_unlabeled=not cfg.only_clean,
            )
            scores = [eval_pass(net, view.images, view.noisy_labels, train_seed,
                                epoch, cfg.batch_size, policy)
                      for net in pair.nets()]
            states = tuple(
                partition_from_scores(scores[k][0], scores[k][1], scores[1 - k][1],
                                      view.noisy_labels, fcfg, epoch, cfg.num_classes,
                                      use_css=not cfg.no_css,
                                      use_mhcs=not cfg.no_mhcs,
                                      use_lga=not cfg.no_lga)
                for k in (0, 1))
            sel_metrics = tuple(
                selection_metrics(states[k], train_bundle.true_labels,
                                  train_bundle.noisy_labels, epoch)
                for k in (0, 1))
            pseudo_accs = tuple(
                _pseudo_accuracy(states[k], scores[k][1], priors[k],
                                 0.0 if cfg.no_dbr else cfg.alpha,
                                 train_bundle.true_labels, cfg.num_classes)
                for k in (0, 1))
            sizes = tuple((len(states[k].clean_indices), len(states[k].unlabeled_indices))
                          for k in (0, 1))
            if sel_log is not None:
                for k in (0, 1):
                    dump_selection(sel_log, states[k], epoch, k + 1)
            breakdowns = train_epoch(pair, view, states, priors, lcfg, epoch,
                                     seed=train_seed, batch_size=cfg.batch_size,
                                     policy=policy)
            final_selection = list(sel_metrics)

        a1, a2, ens = test_accuracy(pair, test_bundle)
        acc_n1.add(a1)
        acc_n2.add(a2)
        acc_ens.add(ens)
        pseudo_by_epoch.append(pseudo_accs)

        for k in (0, 1):
            sm = sel_metrics[k]
            metrics_log.write(
                epoch=epoch, net_id=k + 1,
                precision=None if sm is None else sm.precision,
                recall=None if sm is None else sm.recall,
                f1=None if sm is None else sm.f1,
                pseudo_acc=pseudo_accs[k],
                test_acc_net1=a1, test_acc_net2=a2, test_acc_ensemble=ens,
                n_labeled=sizes[k][0], n_unlabeled=sizes[k][1])
            b = breakdowns[k]
            loss_log.write(epoch=epoch, net_id=k + 1, l_x_primary=b.l_x_primary,
                           l_x_aux=b.l_x_aux, l_u_aux=b.l_u_aux, l_cls=b.l_cls,
                           l_cr=b.l_cr, l_mix=b.l_mix, l_total=b.l_total,
                           gamma=b.gamma, lambda_u=b.lambda_u, lr=lr)

        if cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0:
            save_checkpoint(out / f"checkpoint_ep{epoch + 1}.pt", pair, priors, epoch + 1, cfg)
        if epoch % 10 == 0 or epoch == cfg.epochs - 1:
            log.info("epoch %d/%d lr=%.4f acc(net1/net2/ens)=%.3f/%.3f/%.3f",
                     epoch, cfg.epochs, lr, a1, a2, ens)

    save_checkpoint(out / "checkpoint_final.pt", pair, priors, cfg.epochs, cfg)
    result = RunResult(out, acc_ens, acc_n1, acc_n2, final_selection, pseudo_by_epoch)
    (out / "summary.json").write_text(json.dumps(result.summary, sort_keys=True, indent=2) + "\n")
    metrics_log.close()
    loss_log.close()
    if sel_log is not None:
        sel_log.close()
    if cfg.emit_plots:
        from .reporting import emit_reports
        emit_reports(out)
    return result


def _pseudo_accuracy(state, probs: np.ndarray, priors: PriorPair, alpha: float,
                     true_labels: np.ndarray, num_classes: int) -> float | None:
    """Accuracy of the debiased pseudo-labels the unlabeled batch targets would
    use this epoch (sharpening cannot move the argmax)."""
    ids = state.unlabeled_indices
    if len(ids) == 0:
        return None
    scores = np.log(np.maximum(probs[ids], PRIOR_FLOOR))
    if alpha != 0.0:
        scores = scores - alpha * np.log(np.maximum(priors.unlabeled.pi, PRIOR_FLOOR))
    pseudo = scores.argmax(axis=1)
    res = pseudo_label_metrics(pseudo, np.asarray(true_labels)[ids], num_classes)
    return None if res is None else res[0]
