"""Stage 2, step 2: weighted spectral-ensemble inference plus episode
evaluation with confidence intervals.

Ensemble prediction sums radius-weighted logits over low-pass inputs across
the pretrained radius range. Each episode runs the finetuner, scores the
clean query set, attacks it (white box, ground-truth labels), and scores the
adversarial set with the same inference path. The aggregate report carries
per-episode rows, means, and 1.96 * sd / sqrt(n) half-widths; timing is kept
out of the deterministic report and written to a sidecar file instead.
"""

from __future__ import annotations

import csv
import json
import struct
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import autodiff as ad
from .attack import AttackConfig, pgd
from .autodiff import Tensor, no_grad
from .data import Dataset, Episode, sample_episode
from .finetune import EpisodeModel, FinetuneConfig, finetune_episode
from .model import ConvNet, ModelParams
from .schedule import RadiusSchedule
from .spectral import low_pass

Forward = Callable[[Tensor], Tensor]


def ensemble_forward(
    model: EpisodeModel, radii: np.ndarray, weights: np.ndarray
) -> Forward:
    """Differentiable closure: sum_r w_r * model(low_pass(x, r))."""
    if len(radii) != len(weights):
        raise ValueError("radii and weights must align")

    def forward(x: Tensor) -> Tensor:
        out = None
        for r, w in zip(radii, weights):
            term = ad.scalar_mul(model.logits(low_pass(x, int(r))), float(w))
            out = term if out is None else ad.add(out, term)
        return out

    return forward


def ensemble_logits(
    model: EpisodeModel, x, radii, weights
) -> np.ndarray:
    """Ensemble logits for a raw image batch (inference, no graph)."""
    xt = x if isinstance(x, Tensor) else Tensor(x)
    with no_grad():
        return ensemble_forward(model, np.asarray(radii), np.asarray(weights))(xt).data


@dataclass
class EvalConfig:
    k: int = 5
    shots: int | list = 1
    queries_per_class: int = 15
    episodes: int = 50
    use_ensemble: bool = True
    seed: int = 0
    workers: int = 1

    def to_meta(self) -> dict:
        shots = self.shots if np.isscalar(self.shots) else list(self.shots)
        return {
            "k": self.k,
            "shots": shots,
            "queries_per_class": self.queries_per_class,
            "episodes": self.episodes,
            "use_ensemble": self.use_ensemble,
            "seed": self.seed,
        }


@dataclass
class EpisodeRow:
    episode: int
    clean_acc: float
    robust_acc: float


@dataclass
class EvalReport:
    rows: list[EpisodeRow]
    clean_mean: float
    clean_ci: float
    robust_mean: float
    robust_ci: float
    eval_config: dict
    attack_config: dict
    finetune_config: dict
    timing: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        """Deterministic payload: everything except wall-clock timing."""
        return {
            "clean_mean": self.clean_mean,
            "clean_ci95": self.clean_ci,
            "robust_mean": self.robust_mean,
            "robust_ci95": self.robust_ci,
            "eval": self.eval_config,
            "attack": self.attack_config,
            "finetune": self.finetune_config,
            "episodes": [
                {
                    "episode": r.episode,
                    "clean_acc": r.clean_acc,
                    "robust_acc": r.robust_acc,
                }
                for r in self.rows
            ],
        }


def confidence_interval(values: np.ndarray) -> tuple[float, float]:
    """Mean and 95% half-width, 1.96 * sample sd / sqrt(n)."""
    values = np.asarray(values, dtype=np.float64)
    mean = float(values.mean())
    if values.size < 2:
        return mean, 0.0
    return mean, float(1.96 * values.std(ddof=1) / np.sqrt(values.size))


def _accuracy(pred: np.ndarray, truth: np.ndarray) -> float:
    return float((pred == truth).mean())


def run_episode(
    student: ModelParams,
    episode: Episode,
    radius_dist: RadiusSchedule,
    finetune_cfg: FinetuneConfig,
    attack_cfg: AttackConfig,
    use_ensemble: bool,
) -> tuple[float, float, dict]:
    """Finetune, then clean and adversarial query accuracy (one episode)."""
    ft = finetune_episode(student, episode, radius_dist, finetune_cfg)
    model = ft.model
    radii = radius_dist.radii
    weights = radius_dist.weights

    def infer(batch: np.ndarray) -> np.ndarray:
        if use_ensemble:
            return ensemble_logits(model, batch, radii, weights).argmax(axis=-1)
        with no_grad():
            return model.logits(Tensor(batch)).data.argmax(axis=-1)

    t_inf = time.perf_counter()
    clean_pred = infer(episode.query_images)
    truth = episode.query_labels.reveal()
    clean_acc = _accuracy(clean_pred, truth)

    t_atk = time.perf_counter()
    if attack_cfg.target_forward == "ensemble":
        target: Forward = ensemble_forward(model, radii, weights)
    else:
        target = model.logits
    x_adv = pgd(target, episode.query_images, truth, attack_cfg)
    t_adv = time.perf_counter()
    robust_acc = _accuracy(infer(x_adv), truth)
    t_end = time.perf_counter()
    timing = {
        "finetune": ft.seconds,
        "attack": t_adv - t_atk,
        "inference": (t_atk - t_inf) + (t_end - t_adv),
    }
    return clean_acc, robust_acc, timing


def evaluate(
    student: ModelParams,
    radius_dist: RadiusSchedule,
    novel: Dataset,
    eval_cfg: EvalConfig,
    finetune_cfg: FinetuneConfig,
    attack_cfg: AttackConfig,
    pretrain_seconds: float = 0.0,
) -> EvalReport:
    """Full episode protocol; bit-reproducible for a fixed seed."""
    children = np.random.SeedSequence(eval_cfg.seed).spawn(eval_cfg.episodes)

    def one(i: int) -> tuple[float, float, dict]:
        seq = children[i]
        try:
            episode = sample_episode(
                novel,
                eval_cfg.k,
                eval_cfg.shots,
                eval_cfg.queries_per_class,
                np.random.default_rng(seq),
            )
            ft_cfg = FinetuneConfig(
                **{**finetune_cfg.__dict__, "seed": int(seq.generate_state(1)[0])}
            )
            return run_episode(
                student, episode, radius_dist, ft_cfg, attack_cfg,
                eval_cfg.use_ensemble,
            )
        except Exception as exc:
            raise RuntimeError(
                f"episode {i} (root seed {eval_cfg.seed}, spawn key "
                f"{seq.spawn_key}) failed: {exc}"
            ) from exc

    if eval_cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=eval_cfg.workers) as pool:
            results = list(pool.map(one, range(eval_cfg.episodes)))
    else:
        results = [one(i) for i in range(eval_cfg.episodes)]

    rows = [
        EpisodeRow(i, clean, robust)
        for i, (clean, robust, _) in enumerate(results)
    ]
    clean_mean, clean_ci = confidence_interval([r.clean_acc for r in rows])
    robust_mean, robust_ci = confidence_interval([r.robust_acc for r in rows])
    per_ep = [t for _, _, t in results]
    timing = {
        "pretrain_seconds": pretrain_seconds,
        "finetune_per_episode": float(np.mean([t["finetune"] for t in per_ep])),
        "attack_per_episode": float(np.mean([t["attack"] for t in per_ep])),
        "inference_per_episode": float(np.mean([t["inference"] for t in per_ep])),
    }
    return EvalReport(
        rows=rows,
        clean_mean=clean_mean,
        clean_ci=clean_ci,
        robust_mean=robust_mean,
        robust_ci=robust_ci,
        eval_config=eval_cfg.to_meta(),
        attack_config=attack_cfg.to_meta(),
        finetune_config={
            k: v for k, v in finetune_cfg.__dict__.items() if k != "seed"
        },
        timing=timing,
    )


# -- report files -------------------------------------------------------------


def write_report(
    report: EvalReport, out_dir, stem: str = "report", extra: dict | None = None
) -> dict:
    """Write <stem>.json / <stem>.csv (deterministic) and <stem>_timing.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    payload = report.to_json_dict()
    if extra:
        payload.update(extra)
    json_path = out / f"{stem}.json"
    json_path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")
    csv_path = out / f"{stem}.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["episode", "clean_acc", "robust_acc"])
        for r in report.rows:
            writer.writerow([r.episode, repr(r.clean_acc), repr(r.robust_acc)])
    timing_path = out / f"{stem}_timing.json"
    timing_path.write_text(json.dumps(report.timing, sort_keys=True, indent=2) + "\n")
    return {"json": str(json_path), "csv": str(csv_path), "timing": str(timing_path)}


# -- feature export ------------------------------------------------------------

_FEAT_MAGIC = b"FSFT"
_FEAT_VERSION = 1


def export_features(net: ConvNet, images: np.ndarray, path) -> None:
    """Write penultimate features for external analysis or plotting.

    Layout: magic "FSFT" | u32 version | u32 N | u32 F | N*F float32.
    """
    images = np.asarray(images)
    if images.shape[0] == 0:
        feats = np.zeros((0, net.feature_dim), dtype=np.float32)
    else:
        with no_grad():
            feats = net.features(Tensor(images)).data.astype(np.float32)
    blob = bytearray()
    blob += _FEAT_MAGIC
    blob += struct.pack("<III", _FEAT_VERSION, feats.shape[0], feats.shape[1])
    blob += np.ascontiguousarray(feats, dtype="<f4").tobytes()
    Path(path).write_bytes(bytes(blob))


def load_features(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != _FEAT_MAGIC:
        raise ValueError(f"{path}: not a feature export file")
    version, n, f = struct.unpack("<III", raw[4:16])
    if version != _FEAT_VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    return np.frombuffer(raw, dtype="<f4", count=n * f, offset=16).reshape(n, f).copy()
