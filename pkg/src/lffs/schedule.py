"""Long-tail weighted sampling over filter radii with threshold-driven
peak shifting.

The radius range runs downward, [r_max, r_max-1, ..., r_min]; index i maps
to radius r_max - i. Initial weights decay geometrically from the peak at
r_max; after a shift the decay is symmetric about the new peak,
w_i ~ lam^|i - peak_index|, which reduces to the initial scheme when the
peak sits at index 0. Once per epoch, if accuracy at the peak radius meets
the threshold, the peak moves one radius lower until it reaches r_min.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np


@dataclass(frozen=True)
class RadiusSchedule:
    r_max: int
    r_min: int
    lam: float
    threshold: float
    peak_index: int
    weights: np.ndarray = field(repr=False)

    @property
    def radii(self) -> np.ndarray:
        return np.arange(self.r_max, self.r_min - 1, -1)

    @property
    def peak_radius(self) -> int:
        return self.r_max - self.peak_index

    def to_meta(self) -> dict:
        """JSON-friendly snapshot for checkpoint metadata."""
        return {
            "r_max": self.r_max,
            "r_min": self.r_min,
            "lambda": self.lam,
            "threshold": self.threshold,
            "peak_index": self.peak_index,
            "weights": [float(w) for w in self.weights],
        }

    @staticmethod
    def from_meta(meta: dict) -> "RadiusSchedule":
        return RadiusSchedule(
            r_max=int(meta["r_max"]),
            r_min=int(meta["r_min"]),
            lam=float(meta["lambda"]),
            threshold=float(meta["threshold"]),
            peak_index=int(meta["peak_index"]),
            weights=np.asarray(meta["weights"], dtype=np.float64),
        )


def _weights_for_peak(n: int, lam: float, peak_index: int) -> np.ndarray:
    w = lam ** np.abs(np.arange(n) - peak_index).astype(np.float64)
    return w / w.sum()


def init_schedule(
    r_max: int, r_min: int, lam: float = 0.80, threshold: float = 0.98
) -> RadiusSchedule:
    """Weights lam^i over [r_max..r_min], normalized; peak starts at r_max."""
    if r_min < 1 or r_max < r_min:
        raise ValueError(f"need r_max >= r_min >= 1, got r_max={r_max}, r_min={r_min}")
    if not 0.0 < lam < 1.0:
        raise ValueError(f"lambda must lie in (0, 1), got {lam}")
    if not 0.0 < threshold <= 1.0:
        raise ValueError(f"threshold must lie in (0, 1], got {threshold}")
    n = r_max - r_min + 1
    return RadiusSchedule(
        r_max=r_max,
        r_min=r_min,
        lam=lam,
        threshold=threshold,
        peak_index=0,
        weights=_weights_for_peak(n, lam, 0),
    )


def sample_radius(schedule: RadiusSchedule, rng: np.random.Generator) -> int:
    return int(rng.choice(schedule.radii, p=schedule.weights))


def maybe_shift(schedule: RadiusSchedule, acc_at_peak: float) -> RadiusSchedule:
    """Move the peak one radius lower when accuracy reaches the threshold;
    clamps at r_min and is a no-op afterwards."""
    if not 0.0 <= acc_at_peak <= 1.0:
        raise ValueError(f"accuracy must lie in [0, 1], got {acc_at_peak}")
    n = schedule.weights.size
    if acc_at_peak >= schedule.threshold and schedule.peak_index < n - 1:
        peak = schedule.peak_index + 1
        return replace(
            schedule,
            peak_index=peak,
            weights=_weights_for_peak(n, schedule.lam, peak),
        )
    return schedule


def final_distribution(schedule: RadiusSchedule) -> np.ndarray:
    """Normalized weight snapshot over [r_max..r_min]; callers must not mutate."""
    w = schedule.weights.copy()
    w.flags.writeable = False
    return w
