"""Stage 1: teacher training on base classes, then teacher-to-student
self-distillation on low-frequency samples under the progressive radius
curriculum.

The student starts from the teacher weights with batchnorm frozen, draws one
radius per minibatch, and minimizes CE(student(x), y) minus the cosine
similarity between student logits on the filtered batch and detached teacher
logits on the original batch (or plus a KL term when configured). Once per
epoch the student's accuracy at the peak radius, measured on a fixed seeded
subset of the base data, decides whether the weighting scheme shifts.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, no_grad, sub
from .data import Dataset
from .losses import cross_entropy, cosine_similarity, kl_div_loss
from .model import ConvNet, ModelParams
from .optim import Optimizer
from .schedule import RadiusSchedule, init_schedule, maybe_shift, sample_radius
from .spectral import low_pass
from . import autodiff as ad


class TrainingDiverged(Exception):
    """Loss became non-finite; carries the epoch and step where it happened."""


@dataclass
class PretrainConfig:
    epochs: int = 20          # paper-scale default is 40
    batch_size: int = 32      # paper-scale default is 128
    lr: float = 1e-2
    distill_lr: float | None = None  # student stage rate; defaults to lr
    momentum: float = 0.9
    lr_schedule: str = "cosine"
    width: int = 64
    lam: float = 0.80
    threshold: float = 0.98
    r_max: int | None = None  # defaults to side / 2
    r_min: int = 2
    freq_loss: str = "cosine"  # "cosine" | "kl"
    bn_frozen: bool = True     # False keeps affine params trainable (stats still fixed)
    shift_eval_max: int = 2048
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if self.freq_loss not in ("cosine", "kl"):
            raise ValueError(f"freq_loss must be 'cosine' or 'kl', got {self.freq_loss!r}")


@dataclass
class EpochLog:
    epoch: int
    loss: float
    loss_ce: float
    loss_freq: float
    train_acc: float
    acc_at_peak: float | None = None
    peak_radius: int | None = None

    def to_dict(self) -> dict:
        out = {
            "epoch": self.epoch,
            "loss": self.loss,
            "loss_ce": self.loss_ce,
            "loss_freq": self.loss_freq,
            "train_acc": self.train_acc,
        }
        if self.acc_at_peak is not None:
            out["acc_at_peak"] = self.acc_at_peak
            out["peak_radius"] = self.peak_radius
        return out


@dataclass
class PretrainResult:
    params: ModelParams
    schedule: RadiusSchedule | None
    log: list[EpochLog] = field(default_factory=list)
    seconds: float = 0.0


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def _check_finite(loss: float, epoch: int, step: int) -> None:
    if not np.isfinite(loss):
        raise TrainingDiverged(
            f"non-finite loss {loss} at epoch {epoch}, step {step}"
        )


def train_teacher(base: Dataset, cfg: PretrainConfig) -> PretrainResult:
    """Plain cross-entropy training from scratch on the base classes."""
    if base.size == 0:
        raise ValueError("base dataset is empty")
    t0 = time.perf_counter()
    rng = np.random.default_rng(cfg.seed)
    net = ConvNet(
        num_classes=base.class_count,
        in_channels=base.images.shape[1],
        width=cfg.width,
        side=base.side,
        rng=rng,
        bn_mode="train",
    )
    opt = Optimizer(
        net.parameters(),
        kind="sgd-momentum",
        lr=cfg.lr,
        momentum=cfg.momentum,
        schedule=cfg.lr_schedule,
        total_epochs=max(cfg.epochs, 1),
    )
    log: list[EpochLog] = []
    for epoch in range(cfg.epochs):
        opt.set_epoch(epoch)
        tot_loss = 0.0
        correct = 0
        for step, idx in enumerate(_batches(base.size, cfg.batch_size, rng)):
            x = Tensor(base.images[idx])
            y = base.labels[idx]
            logits = net.forward(x, "train")
            loss = cross_entropy(logits, y)
            _check_finite(loss.item(), epoch, step)
            opt.zero_grad()
            loss.backward()
            opt.step()
            tot_loss += loss.item() * idx.size
            correct += int((logits.data.argmax(axis=-1) == y).sum())
        log.append(
            EpochLog(
                epoch=epoch,
                loss=tot_loss / base.size,
                loss_ce=tot_loss / base.size,
                loss_freq=0.0,
                train_acc=correct / base.size,
            )
        )
    params = net.state(stage="teacher", seed=cfg.seed)
    return PretrainResult(params, None, log, time.perf_counter() - t0)


def _subset_accuracy(
    net: ConvNet, base: Dataset, idx: np.ndarray, radius: int, batch: int
) -> float:
    correct = 0
    with no_grad():
        for start in range(0, idx.size, batch):
            sel = idx[start : start + batch]
            xl = low_pass(Tensor(base.images[sel]), radius)
            pred = net.forward(xl).data.argmax(axis=-1)
            correct += int((pred == base.labels[sel]).sum())
    return correct / idx.size


def distill_student(
    teacher: ModelParams | None, base: Dataset, cfg: PretrainConfig
) -> PretrainResult:
    """Frequency-regularized student training.

    With a teacher, the student is initialized from it and matches detached
    teacher logits on original samples (batchnorm frozen). With
    teacher=None the student trains from scratch and matches its own
    detached logits on the originals instead (the self-to-self variant).
    """
    if base.size == 0:
        raise ValueError("base dataset is empty")
    t0 = time.perf_counter()
    rng = np.random.default_rng(cfg.seed)
    r_max = cfg.r_max if cfg.r_max is not None else base.side // 2
    schedule = init_schedule(r_max, cfg.r_min, cfg.lam, cfg.threshold)

    teacher_net = None
    if teacher is not None:
        teacher_net = ConvNet.from_params(teacher, bn_mode="eval")
        teacher_net.set_trainable(False)
        student = ConvNet.from_params(teacher, bn_mode="frozen" if cfg.bn_frozen else "eval")
    else:
        student = ConvNet(
            num_classes=base.class_count,
            in_channels=base.images.shape[1],
            width=cfg.width,
            side=base.side,
            rng=rng,
            bn_mode="train",
        )
    opt = Optimizer(
        student.parameters(),
        kind="sgd-momentum",
        lr=cfg.distill_lr if cfg.distill_lr is not None else cfg.lr,
        momentum=cfg.momentum,
        schedule=cfg.lr_schedule,
        total_epochs=max(cfg.epochs, 1),
    )

    eval_idx = rng.permutation(base.size)[: min(cfg.shift_eval_max, base.size)]
    log: list[EpochLog] = []
    for epoch in range(cfg.epochs):
        opt.set_epoch(epoch)
        tot = np.zeros(3)
        correct = 0
        for step, idx in enumerate(_batches(base.size, cfg.batch_size, rng)):
            x = Tensor(base.images[idx])
            y = base.labels[idx]
            r = sample_radius(schedule, rng)
            xl = low_pass(x, r)
            logits = student.forward(x)
            logits_l = student.forward(xl)
            if teacher_net is not None:
                with no_grad():
                    target = teacher_net.forward(x)
            else:
                target = logits.detach()
            ce = cross_entropy(logits, y)
            if cfg.freq_loss == "cosine":
                freq = cosine_similarity(logits_l, target)
                loss = sub(ce, freq)
            else:
                freq = kl_div_loss(logits_l, target)
                loss = ad.add(ce, freq)
            _check_finite(loss.item(), epoch, step)
            opt.zero_grad()
            loss.backward()
            opt.step()
            tot += np.array([loss.item(), ce.item(), freq.item()]) * idx.size
            correct += int((logits.data.argmax(axis=-1) == y).sum())
        acc_peak = _subset_accuracy(
            student, base, eval_idx, schedule.peak_radius, cfg.batch_size
        )
        log.append(
            EpochLog(
                epoch=epoch,
                loss=tot[0] / base.size,
                loss_ce=tot[1] / base.size,
                loss_freq=tot[2] / base.size,
                train_acc=correct / base.size,
                acc_at_peak=acc_peak,
                peak_radius=schedule.peak_radius,
            )
        )
        schedule = maybe_shift(schedule, acc_peak)

    params = student.state(
        stage="student", seed=cfg.seed, schedule=schedule.to_meta()
    )
    return PretrainResult(params, schedule, log, time.perf_counter() - t0)
