"""The progressive long-tail radius schedule, in isolation.

Weights decay geometrically from the peak radius; when accuracy at the peak
meets the threshold, the peak steps one radius lower until it reaches the
minimum. Sampling follows whatever the current distribution is.
"""

import numpy as np

from lffs.schedule import final_distribution, init_schedule, maybe_shift, sample_radius


def bar(w, width=40):
    return "#" * int(round(w * width))


s = init_schedule(r_max=16, r_min=2, lam=0.8, threshold=0.98)
print("initial long-tail distribution (peak at r_max):")
for r, w in zip(s.radii, s.weights):
    print(f"  r={r:>2} {w:.3f} {bar(w)}")

# Simulate a training run: accuracy at the peak improves quickly at high
# radii, then stalls as the filtered inputs get harder.
fake_acc = iter([1.0, 1.0, 1.0, 0.99, 0.95, 1.0, 1.0, 0.99, 1.0, 1.0, 0.9, 0.99, 1.0])
print("\nshift log:")
for epoch, acc in enumerate(fake_acc):
    before = s.peak_radius
    s = maybe_shift(s, acc)
    moved = "->" + str(s.peak_radius) if s.peak_radius != before else "(hold)"
    print(f"  epoch {epoch:>2}: acc@r_p={acc:.2f} peak {before} {moved}")

print("\ndistribution after those shifts (peak at", s.peak_radius, "):")
for r, w in zip(s.radii, final_distribution(s)):
    print(f"  r={r:>2} {w:.3f} {bar(w)}")

# Weighted sampling matches the distribution.
rng = np.random.default_rng(0)
draws = np.array([sample_radius(s, rng) for _ in range(100_000)])
freq = [(draws == r).mean() for r in s.radii]
tv = 0.5 * np.abs(np.array(freq) - s.weights).sum()
print(f"\nempirical vs exact over 1e5 draws: total variation {tv:.4f}")
