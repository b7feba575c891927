"""Stage 2, step 1: transductive finetuning on one novel-class episode.

A cosine-softmax head is initialized from class-mean support features (the
backbone's logit vectors) and the whole network is then finetuned with Adam
at a fixed rate: cross-entropy on the labeled support set, softmax entropy
on the unlabeled query set, and a cosine consistency term between the
backbone logits of filtered and unfiltered samples. One radius per epoch is
drawn from the weight distribution carried over from pretraining. Query
ground truth is never touched here; it stays sealed inside the episode.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, no_grad
from .data import Episode
from .losses import cosine_similarity, cross_entropy, entropy_loss, kl_div_loss
from .model import (
    ConvNet,
    CosineHead,
    ModelParams,
    head_forward,
    init_head_from_support,
)
from .optim import Optimizer
from .schedule import RadiusSchedule
from .spectral import low_pass


@dataclass
class FinetuneConfig:
    epochs: int = 25           # paper-scale default
    lr: float = 5e-5
    use_entropy: bool = True
    use_freq_reg: bool = True
    freq_reg_target: str = "query"  # "query" | "support" | "both"
    freq_loss: str = "cosine"       # "cosine" | "kl"
    head_scale: float = 10.0
    bn_mode: str = "frozen"
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.freq_reg_target not in ("query", "support", "both"):
            raise ValueError(f"bad freq_reg_target {self.freq_reg_target!r}")
        if self.freq_loss not in ("cosine", "kl"):
            raise ValueError(f"bad freq_loss {self.freq_loss!r}")


class EpisodeModel:
    """Finetuned backbone + head bound to one episode's class slots."""

    def __init__(self, net: ConvNet, head: CosineHead, bn_mode: str = "frozen"):
        self.net = net
        self.head = head
        self.bn_mode = bn_mode

    def features(self, x: Tensor) -> Tensor:
        """Episode feature vector: the backbone's base-class logits."""
        return self.net.forward(x, self.bn_mode)

    def logits(self, x: Tensor) -> Tensor:
        """k-way head logits on raw input."""
        return head_forward(self.head, self.features(x))

    __call__ = logits

    def freeze(self) -> None:
        self.net.set_trainable(False)
        self.head.w.requires_grad = False

    def state(self, **meta) -> ModelParams:
        params = self.net.state(**meta)
        params.entries.append(("head.w", self.head.w.data.copy()))
        params.meta["head_scale"] = self.head.scale
        return params


@dataclass
class FinetuneResult:
    model: EpisodeModel
    loss_trace: list[dict] = field(default_factory=list)
    seconds: float = 0.0


def finetune_episode(
    student: ModelParams,
    episode: Episode,
    radius_dist: RadiusSchedule,
    cfg: FinetuneConfig,
) -> FinetuneResult:
    """Adapt a fresh copy of the pretrained student to one episode."""
    t0 = time.perf_counter()
    present = np.unique(episode.support_labels)
    if present.size != episode.k or present.min() != 0 or present.max() != episode.k - 1:
        raise ValueError(
            f"support must cover every class in [0, {episode.k}), got {present}"
        )
    rng = np.random.default_rng(cfg.seed)
    net = ConvNet.from_params(student, bn_mode=cfg.bn_mode)

    x_s = Tensor(episode.support_images)
    y_s = episode.support_labels
    x_q = Tensor(episode.query_images)

    with no_grad():
        support_feats = net.forward(x_s).data
    head = init_head_from_support(
        support_feats, y_s, episode.k, scale=cfg.head_scale
    )
    model = EpisodeModel(net, head, cfg.bn_mode)

    trace: list[dict] = []
    if cfg.epochs > 0:
        opt = Optimizer(
            net.parameters() + [head.w],
            kind="adam",
            lr=cfg.lr,
            schedule="constant",
        )
        radii = radius_dist.radii
        weights = radius_dist.weights
        for epoch in range(cfg.epochs):
            r = int(rng.choice(radii, p=weights))
            f_s = net.forward(x_s)
            loss = cross_entropy(head_forward(head, f_s), y_s)
            entry = {"epoch": epoch, "radius": r, "loss_ce": loss.item()}
            f_q = None
            if cfg.use_entropy:
                f_q = net.forward(x_q)
                ent = entropy_loss(head_forward(head, f_q))
                entry["loss_entropy"] = ent.item()
                loss = ad.add(loss, ent)
            if cfg.use_freq_reg:
                if cfg.freq_reg_target == "query":
                    plain = f_q if f_q is not None else net.forward(x_q)
                    filt = net.forward(low_pass(x_q, r))
                elif cfg.freq_reg_target == "support":
                    plain = f_s
                    filt = net.forward(low_pass(x_s, r))
                else:
                    both = Tensor(
                        np.concatenate(
                            [episode.query_images, episode.support_images]
                        )
                    )
                    plain = net.forward(both)
                    filt = net.forward(low_pass(both, r))
                if cfg.freq_loss == "cosine":
                    reg = cosine_similarity(filt, plain)
                    loss = ad.sub(loss, reg)
                else:
                    reg = kl_div_loss(filt, plain.detach())
                    loss = ad.add(loss, reg)
                entry["loss_freq"] = reg.item()
            entry["loss"] = loss.item()
            opt.zero_grad()
            loss.backward()
            opt.step()
            trace.append(entry)

    model.freeze()
    return FinetuneResult(model, trace, time.perf_counter() - t0)
