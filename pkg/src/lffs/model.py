"""Conv-4 backbone classifier and the cosine-softmax few-shot head.

The backbone is four {conv 3x3, batchnorm, relu, 2x2 max-pool} blocks
followed by a linear layer to the base-class logits; channel width and
input geometry are constructor parameters. The few-shot head consumes the
backbone's logit vector as its feature and scores classes by scaled cosine
similarity against per-class weight rows.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .precision import float_dtype


@dataclass
class ModelParams:
    """Ordered named arrays plus free-form metadata (stage, seed, schedule)."""

    entries: list[tuple[str, np.ndarray]]
    meta: dict[str, Any] = field(default_factory=dict)

    def names(self) -> list[str]:
        return [n for n, _ in self.entries]

    def as_dict(self) -> dict[str, np.ndarray]:
        return dict(self.entries)


class ArchitectureMismatch(Exception):
    """Loaded parameters do not fit the target network."""


class ConvNet:
    """Deterministic conv-4 backbone; bn_mode selects train/eval/frozen."""

    def __init__(
        self,
        num_classes: int,
        in_channels: int = 3,
        width: int = 64,
        side: int = 32,
        rng: np.random.Generator | None = None,
        bn_mode: str = "train",
    ):
        if side % 16:
            raise ValueError(
                f"input side must be divisible by 16 (four 2x pools), got {side}"
            )
        rng = rng or np.random.default_rng(0)
        self.num_classes = num_classes
        self.in_channels = in_channels
        self.width = width
        self.side = side
        self.bn_mode = bn_mode
        self.feature_dim = (side // 16) ** 2 * width

        dt = float_dtype()

        def he(shape, fan_in):
            return Tensor(
                (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dt),
                requires_grad=True,
            )

        self.conv_w: list[Tensor] = []
        self.bn_gamma: list[Tensor] = []
        self.bn_beta: list[Tensor] = []
        self.bn_mean: list[np.ndarray] = []
        self.bn_var: list[np.ndarray] = []
        cin = in_channels
        for _ in range(4):
            self.conv_w.append(he((width, cin, 3, 3), cin * 9))
            self.bn_gamma.append(Tensor(np.ones(width, dtype=dt), requires_grad=True))
            self.bn_beta.append(Tensor(np.zeros(width, dtype=dt), requires_grad=True))
            self.bn_mean.append(np.zeros(width, dtype=dt))
            self.bn_var.append(np.ones(width, dtype=dt))
            cin = width
        self.fc_w = Tensor(
            (rng.standard_normal((self.feature_dim, num_classes))
             * np.sqrt(1.0 / self.feature_dim)).astype(dt),
            requires_grad=True,
        )
        self.fc_b = Tensor(np.zeros(num_classes, dtype=dt), requires_grad=True)

    # -- parameter plumbing ---------------------------------------------

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        out = []
        for i in range(4):
            out.append((f"conv{i + 1}.w", self.conv_w[i]))
            out.append((f"bn{i + 1}.gamma", self.bn_gamma[i]))
            out.append((f"bn{i + 1}.beta", self.bn_beta[i]))
        out.append(("fc.w", self.fc_w))
        out.append(("fc.b", self.fc_b))
        return out

    def named_buffers(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for i in range(4):
            out.append((f"bn{i + 1}.running_mean", self.bn_mean[i]))
            out.append((f"bn{i + 1}.running_var", self.bn_var[i]))
        return out

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def set_trainable(self, trainable: bool) -> None:
        for p in self.parameters():
            p.requires_grad = trainable

    def state(self, **meta) -> ModelParams:
        entries = [(n, t.data.copy()) for n, t in self.named_parameters()]
        entries += [(n, b.copy()) for n, b in self.named_buffers()]
        meta.setdefault(
            "arch",
            {
                "num_classes": self.num_classes,
                "in_channels": self.in_channels,
                "width": self.width,
                "side": self.side,
            },
        )
        return ModelParams(entries, meta)

    def load_state(self, params: ModelParams) -> None:
        table = params.as_dict()
        targets: list[tuple[str, Any]] = list(self.named_parameters())
        targets += list(self.named_buffers())
        for name, holder in targets:
            if name not in table:
                raise ArchitectureMismatch(f"checkpoint is missing parameter {name!r}")
            src = table[name]
            dst = holder.data if isinstance(holder, Tensor) else holder
            if tuple(src.shape) != tuple(dst.shape):
                raise ArchitectureMismatch(
                    f"parameter {name!r}: checkpoint shape {tuple(src.shape)} "
                    f"does not match model shape {tuple(dst.shape)}"
                )
            dst[...] = src.astype(dst.dtype)

    @classmethod
    def from_params(cls, params: ModelParams, bn_mode: str = "eval") -> "ConvNet":
        arch = params.meta.get("arch")
        if arch is None:
            raise ArchitectureMismatch("checkpoint metadata lacks an 'arch' record")
        net = cls(
            num_classes=int(arch["num_classes"]),
            in_channels=int(arch["in_channels"]),
            width=int(arch["width"]),
            side=int(arch["side"]),
            bn_mode=bn_mode,
        )
        net.load_state(params)
        return net

    def clone(self) -> "ConvNet":
        other = ConvNet(
            self.num_classes, self.in_channels, self.width, self.side,
            bn_mode=self.bn_mode,
        )
        other.load_state(self.state())
        return other

    # -- forward ----------------------------------------------------------

    def _check_input(self, x: Tensor) -> None:
        if x.data.ndim != 4 or x.shape[1] != self.in_channels:
            raise ValueError(
                f"expected [B, {self.in_channels}, d, d] input, got {tuple(x.shape)}"
            )
        if x.shape[2] % 16 or x.shape[2] != x.shape[3]:
            raise ValueError(
                f"input side must be square and divisible by 16, got "
                f"{x.shape[2]}x{x.shape[3]}"
            )

    def features(self, x: Tensor, bn_mode: str | None = None) -> Tensor:
        """Penultimate (flattened) representation before the linear layer."""
        self._check_input(x)
        mode = bn_mode or self.bn_mode
        h = ad.to_nhwc(x)
        for i in range(4):
            h = ad.conv2d_nhwc(h, self.conv_w[i], stride=1, pad=1)
            h = ad.batchnorm2d_nhwc(
                h, self.bn_gamma[i], self.bn_beta[i],
                self.bn_mean[i], self.bn_var[i], mode,
            )
            h = ad.relu(h)
            h = ad.max_pool2d_nhwc(h)
        return ad.flatten(h)

    def forward(self, x: Tensor, bn_mode: str | None = None) -> Tensor:
        """Base-class logits [B, num_classes]."""
        f = self.features(x, bn_mode)
        return ad.add(ad.matmul(f, self.fc_w), self.fc_b)

    __call__ = forward


class CosineHead:
    """k-way classifier: scale * cosine(feature, class weight row); no bias."""

    def __init__(self, weight: np.ndarray, scale: float = 10.0):
        if scale <= 0:
            raise ValueError("cosine head scale must be positive")
        self.w = Tensor(np.asarray(weight, dtype=float_dtype()), requires_grad=True)
        self.scale = float(scale)

    @property
    def k(self) -> int:
        return self.w.shape[0]


def init_head_from_support(
    features: np.ndarray, labels: np.ndarray, k: int, scale: float = 10.0
) -> CosineHead:
    """Rows are per-class support means; every class in [0, k) must appear."""
    features = np.asarray(features)
    labels = np.asarray(labels)
    rows = np.empty((k, features.shape[1]), dtype=features.dtype)
    for j in range(k):
        picked = features[labels == j]
        if picked.shape[0] == 0:
            raise ValueError(f"support set has no samples for class {j}")
        rows[j] = picked.mean(axis=0)
    return CosineHead(rows, scale)


def head_forward(head: CosineHead, features: Tensor) -> Tensor:
    """Logits [B, k]; invariant to positive scaling of the input features."""
    fhat = ad.normalize_rows(features)
    what = ad.normalize_rows(head.w)
    return ad.scalar_mul(ad.matmul(fhat, ad.transpose2d(what)), head.scale)
