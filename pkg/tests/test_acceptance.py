"""Acceptance criteria, one test per criterion, at their stated tolerances.

The heavy end-to-end experiments (attack collapse, directional claim,
ablation ladder) run once per "pass"; determinism is then checked by running
a second, independent pass and comparing report bytes. Budgets are asserted
from wall-clock measurements of each criterion's core computation.
"""

import json
import math
import time
from pathlib import Path

import numpy as np
import pytest

pytestmark = pytest.mark.acceptance

from lffs import autodiff as ad
from lffs import experiment as exp
from lffs.attack import AttackConfig, pgd
from lffs.autodiff import Tensor, no_grad
from lffs.data import generate_synthetic, sample_episode
from lffs.evaluate import ensemble_logits, evaluate, write_report
from lffs.finetune import finetune_episode
from lffs.gradcheck import finite_diff_check
from lffs.losses import cosine_similarity, cross_entropy, entropy_loss, kl_div_loss
from lffs.model import ConvNet, CosineHead
from lffs.precision import precision
from lffs.pretrain import train_teacher
from lffs.schedule import init_schedule, maybe_shift, sample_radius
from lffs.spectral import dft2d, high_pass, idft2d, low_pass


def report(criterion: str, ok: bool, detail: str = "") -> None:
    print(f"ACCEPTANCE {criterion}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, f"{criterion} failed: {detail}"


# -- shared end-to-end passes --------------------------------------------------


def _full_pass(out_dir: Path) -> dict:
    """One complete acceptance experiment: attack-collapse evaluation,
    directional claim, and the ablation ladder, all from the default config."""
    cfg = exp.load_config(None)
    cfg["out_dir"] = str(out_dir)
    exp.apply_precision(cfg)
    timings = {}

    t0 = time.perf_counter()
    base, novel = exp.load_data(cfg)
    teacher = train_teacher(base, exp.pretrain_config(cfg))
    vanilla_sched = init_schedule(
        base.side // 2,
        cfg["schedule"]["r_min"],
        cfg["schedule"]["lambda"],
        cfg["schedule"]["threshold"],
    )
    collapse = evaluate(
        teacher.params,
        vanilla_sched,
        novel,
        exp.eval_config(cfg, episodes=20, use_ensemble=False),
        exp.finetune_config(cfg, use_freq_reg=False),
        exp.attack_config(cfg),
    )
    write_report(collapse, out_dir, stem="attack_collapse")
    timings["collapse"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    claim = exp.run_claim(cfg)
    timings["claim"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    ladder = exp.run_ladder(cfg)
    timings["ladder"] = time.perf_counter() - t0

    report_files = sorted(
        p.name
        for p in out_dir.iterdir()
        if p.suffix in (".json", ".csv") and "timing" not in p.name
    )
    return {
        "cfg": cfg,
        "collapse": collapse,
        "claim": claim,
        "ladder": ladder,
        "timings": timings,
        "files": {name: (out_dir / name).read_bytes() for name in report_files},
    }


@pytest.fixture(scope="session")
def pass_a(tmp_path_factory):
    return _full_pass(tmp_path_factory.mktemp("acceptance_run"))


@pytest.fixture(scope="session")
def pass_b(pass_a):
    # Second run with the byte-identical config, same output directory and
    # seeds; pass_a's report bytes are already snapshotted in memory.
    return _full_pass(Path(pass_a["cfg"]["out_dir"]))


# -- criterion 1: spectral correctness ----------------------------------------


def test_criterion_1_spectral_correctness():
    t0 = time.perf_counter()
    with precision(64):
        rng = np.random.default_rng(0)
        worst = {"trip": 0.0, "parseval": 0.0, "complement": 0.0,
                 "idempotent": 0.0, "linear": 0.0, "fast_direct": 0.0}
        for _ in range(20):
            img = rng.random((3, 32, 32))
            spec = dft2d(img)
            worst["trip"] = max(worst["trip"], np.abs(idft2d(spec) - img).max())
            worst["parseval"] = max(
                worst["parseval"],
                abs((img**2).sum() - (np.abs(spec.coeffs) ** 2).sum() / 32**2),
            )
            x = Tensor(img[None])
            r = int(rng.integers(1, 17))
            lo, hi = low_pass(x, r).data, high_pass(x, r).data
            worst["complement"] = max(
                worst["complement"], np.abs(lo + hi - img[None]).max()
            )
            worst["idempotent"] = max(
                worst["idempotent"],
                np.abs(low_pass(Tensor(lo), r).data - lo).max(),
            )
            other = rng.random((1, 3, 32, 32))
            mix = low_pass(Tensor(2.0 * img[None] + 3.0 * other), r).data
            worst["linear"] = max(
                worst["linear"],
                np.abs(mix - 2.0 * lo - 3.0 * low_pass(Tensor(other), r).data).max(),
            )
            worst["fast_direct"] = max(
                worst["fast_direct"],
                np.abs(dft2d(img, "fft").coeffs - dft2d(img, "direct").coeffs).max(),
            )
    elapsed = time.perf_counter() - t0
    ok = (
        all(worst[k] < 1e-6 for k in ("trip", "parseval", "complement", "idempotent", "linear"))
        and worst["fast_direct"] < 1e-9
        and elapsed < 10
    )
    report(
        "criterion-1 spectral",
        ok,
        f"max errs {({k: float(f'{v:.2e}') for k, v in worst.items()})} in {elapsed:.1f}s",
    )


# -- criterion 2: gradient oracle ----------------------------------------------


def test_criterion_2_gradient_oracle():
    t0 = time.perf_counter()
    with precision(64):
        rng = np.random.default_rng(1)
        worst = 0.0

        def check(f, x):
            nonlocal worst
            worst = max(worst, finite_diff_check(f, x))

        # every differentiable op on tiny shapes
        m = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
        other = Tensor(rng.standard_normal((3, 4)))
        labels = rng.integers(0, 4, size=3)
        img = Tensor(rng.standard_normal((1, 2, 4, 4)), requires_grad=True)
        w = Tensor(rng.standard_normal((3, 2, 3, 3)), requires_grad=True)
        vec = Tensor(rng.standard_normal(5), requires_grad=True)
        check(lambda t: ad.tsum(ad.relu(t)), m)
        check(lambda t: ad.mean(t), m)
        check(lambda t: ad.l2_norm(t), m)
        check(lambda t: ad.tsum(ad.mul(ad.softmax(t), other)), m)
        check(lambda t: ad.tsum(ad.mul(ad.log_softmax(t), other)), m)
        check(lambda t: ad.tsum(ad.add(t, other)), m)
        check(lambda t: ad.tsum(ad.sub(t, other)), m)
        check(lambda t: ad.tsum(ad.mul(t, other)), m)
        check(lambda t: ad.tsum(ad.scalar_mul(t, 1.7)), m)
        check(lambda t: ad.tsum(ad.normalize_rows(t)), m)
        check(lambda t: ad.tsum(ad.flatten(ad.mul(t, t))), img)
        vec_other = Tensor(rng.standard_normal(5))
        mat_other = Tensor(rng.standard_normal((4, 2)))
        check(lambda t: ad.dot(t, vec_other), vec)
        check(lambda t: ad.tsum(ad.matmul(t, mat_other)), m)
        check(lambda t: cross_entropy(t, labels), m)
        check(lambda t: entropy_loss(t), m)
        check(lambda t: cosine_similarity(t, other), m)
        check(lambda t: kl_div_loss(t, other), m)
        check(lambda t: ad.tsum(ad.conv2d(t, w.detach(), 1, 1)), img)
        check(lambda t: ad.tsum(ad.conv2d(img.detach(), t, 2, 1)), w)
        check(lambda t: ad.tsum(ad.max_pool2d(t, 2)), img)
        gamma = Tensor(rng.standard_normal(2) + 1.0, requires_grad=True)
        beta = Tensor(rng.standard_normal(2), requires_grad=True)
        rm, rv = np.zeros(2), np.ones(2)
        check(
            lambda t: ad.tsum(
                ad.batchnorm2d(t, gamma, beta, rm.copy(), rv.copy(), "train")
            ),
            img,
        )
        check(lambda t: ad.tsum(low_pass(t, 2)), img)

        # full conv-4 loss, tiny 4-channel variant
        net = ConvNet(3, width=4, side=32, rng=np.random.default_rng(2))
        x32 = Tensor(np.random.default_rng(3).random((2, 3, 32, 32)))
        y32 = np.array([0, 2])
        probe = Tensor(net.conv_w[0].data.copy(), requires_grad=True)
        net.conv_w[0] = probe
        check(lambda _t: cross_entropy(net.forward(x32, "frozen"), y32), probe)

        # low_pass composition through the network input
        xin = Tensor(np.random.default_rng(4).random((1, 3, 32, 32)), requires_grad=True)
        check(
            lambda t: cross_entropy(net.forward(low_pass(t, 5), "frozen"), [1]), xin
        )

        # the attack gradient: CE through backbone + cosine head
        head = CosineHead(np.random.default_rng(5).standard_normal((3, 3)))
        from lffs.finetune import EpisodeModel

        model = EpisodeModel(net, head, "frozen")
        check(lambda t: cross_entropy(model.logits(t), [0]), xin)
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-4 and elapsed < 60
    report("criterion-2 gradients", ok, f"max rel err {worst:.2e} in {elapsed:.1f}s")


# -- criterion 3: PL scheduler ---------------------------------------------------


def test_criterion_3_scheduler():
    t0 = time.perf_counter()
    s = init_schedule(4, 2, lam=0.5)
    exact_half = np.array([4 / 7, 2 / 7, 1 / 7])
    ok = bool(np.abs(s.weights - exact_half).max() < 1e-15)

    s8 = init_schedule(16, 2, lam=0.8)
    raw = 0.8 ** np.arange(15)
    ok &= bool(np.abs(s8.weights - raw / raw.sum()).max() < 1e-15)

    cur = init_schedule(16, 2, lam=0.8)
    shifts = 0
    while True:
        nxt = maybe_shift(cur, 1.0)
        if nxt is cur:
            break
        cur = nxt
        shifts += 1
    ok &= shifts == 14 and cur.peak_radius == 2
    ok &= maybe_shift(cur, 1.0) is cur

    rng = np.random.default_rng(7)
    s = init_schedule(4, 2, lam=0.5)
    draws = np.array([sample_radius(s, rng) for _ in range(100_000)])
    freq = np.array([(draws == r).mean() for r in (4, 3, 2)])
    tv = 0.5 * np.abs(freq - s.weights).sum()
    ok &= tv < 0.01
    elapsed = time.perf_counter() - t0
    ok &= elapsed < 10
    report("criterion-3 scheduler", ok, f"shifts={shifts} TV={tv:.4f} in {elapsed:.1f}s")


# -- criterion 4: ensemble semantics ---------------------------------------------


def test_criterion_4_ensemble():
    t0 = time.perf_counter()
    calls = []

    class Two:
        def logits(self, x):
            calls.append(1)
            vals = [1.0, 0.0] if len(calls) == 1 else [0.0, 2.0]
            return Tensor(np.tile(vals, (x.shape[0], 1)))

    out = ensemble_logits(Two(), np.random.rand(2, 1, 16, 16), [4, 2], [0.6, 0.4])
    ok = bool(np.abs(out - [0.6, 0.8]).max() < 1e-6)
    ok &= out.argmax(axis=-1).tolist() == [1, 1]

    rng = np.random.default_rng(8)
    net = ConvNet(3, width=4, side=32, rng=rng)
    head = CosineHead(rng.standard_normal((3, 3)).astype(np.float32))
    from lffs.finetune import EpisodeModel
    from lffs.spectral import low_pass as lp

    model = EpisodeModel(net, head, "frozen")
    x = rng.random((2, 3, 32, 32)).astype(np.float32)
    degenerate = ensemble_logits(model, x, [5], [1.0])
    with no_grad():
        direct = model.logits(lp(Tensor(x), 5)).data
    ok &= bool(np.abs(degenerate - direct).max() < 1e-6)

    w = np.array([0.5, 0.3, 0.2])
    a = ensemble_logits(model, x, [6, 4, 2], w)
    b = ensemble_logits(model, x, [6, 4, 2], 4.2 * w)
    ok &= bool(np.array_equal(a.argmax(axis=-1), b.argmax(axis=-1)))
    elapsed = time.perf_counter() - t0
    ok &= elapsed < 5
    report("criterion-4 ensemble", ok, f"in {elapsed:.1f}s")


# -- criterion 5: attack contract -------------------------------------------------


def test_criterion_5_attack_contract(pass_a):
    # constraints + identity checked here; the 20-episode collapse comes
    # from the shared pass
    t0 = time.perf_counter()
    rng = np.random.default_rng(9)
    net = ConvNet(4, width=4, side=32, rng=rng)
    head = CosineHead(rng.standard_normal((4, 4)).astype(np.float32))
    from lffs.finetune import EpisodeModel

    model = EpisodeModel(net, head, "frozen")
    net.set_trainable(False)
    head.w.requires_grad = False
    x = rng.random((8, 3, 32, 32)).astype(np.float32)
    y = rng.integers(0, 4, size=8)
    cfg = AttackConfig()  # 20-step PGD, eps 8/255, step 2/255
    adv = pgd(model.logits, x, y, cfg)
    ok = bool(np.abs(adv - x).max() <= cfg.epsilon + 1e-7)
    ok &= bool(adv.min() >= 0.0 and adv.max() <= 1.0)
    zero = pgd(model.logits, x, y, AttackConfig(epsilon=0.0, iters=0))
    ok &= bool(np.array_equal(zero, x))

    collapse = pass_a["collapse"]
    ratio = (
        collapse.robust_mean / collapse.clean_mean
        if collapse.clean_mean > 0
        else math.inf
    )
    ok &= ratio < 0.20
    elapsed = time.perf_counter() - t0 + pass_a["timings"]["collapse"]
    ok &= elapsed < 300
    report(
        "criterion-5 attack",
        ok,
        f"vanilla clean={collapse.clean_mean:.3f} robust={collapse.robust_mean:.3f} "
        f"(ratio {ratio:.3f}) in {elapsed:.1f}s",
    )


# -- criterion 6: end-to-end directional claim -------------------------------------


def test_criterion_6_directional_claim(pass_a):
    claim = pass_a["claim"]
    robust_gain = claim["robust_gain"]
    clean_drop = claim["clean_drop"]
    elapsed = pass_a["timings"]["claim"]
    ok = claim["criteria"]["robust_gain_ge_20pts"]
    ok &= claim["criteria"]["clean_within_10pts"]
    ok &= robust_gain >= 0.20 and clean_drop <= 0.10
    ok &= elapsed < 600
    report(
        "criterion-6 claim",
        ok,
        f"robust gain {100 * robust_gain:.1f}pts, clean drop {100 * clean_drop:.1f}pts "
        f"in {elapsed:.0f}s",
    )


# -- criterion 7: ablation ladder ---------------------------------------------------


def test_criterion_7_ablation_ladder(pass_a):
    ladder = pass_a["ladder"]
    rows = ladder["rows"]
    ok = [r["config"] for r in rows] == list(exp.LADDER)
    robust = [r["robust_mean"] for r in rows]
    ok &= all(robust[i] <= robust[i + 1] + 1e-12 for i in range(3))
    ok &= ladder["robust_nondecreasing"]
    csv_bytes = pass_a["files"].get("ablation.csv", b"")
    ok &= csv_bytes.startswith(b"config,clean_mean")
    ok &= len(csv_bytes.strip().splitlines()) == 5
    elapsed = pass_a["timings"]["ladder"]
    ok &= elapsed < 1800
    report(
        "criterion-7 ladder",
        ok,
        "robust " + " -> ".join(f"{100 * r:.1f}%" for r in robust) + f" in {elapsed:.0f}s",
    )


# -- criterion 8: determinism --------------------------------------------------------


def test_criterion_8_determinism(pass_a, pass_b):
    mismatched = [
        name
        for name in pass_a["files"]
        if pass_b["files"].get(name) != pass_a["files"][name]
    ]
    missing = set(pass_a["files"]) ^ set(pass_b["files"])
    ok = not mismatched and not missing
    report(
        "criterion-8 determinism",
        ok,
        f"{len(pass_a['files'])} report files byte-identical"
        + (f"; mismatched: {mismatched or missing}" if not ok else ""),
    )


# -- module invariant tied to the acceptance dataset ----------------------------------


def test_support_ce_nonincreasing_on_acceptance_dataset(pass_a):
    cfg = pass_a["cfg"]
    student = exp.require_checkpoint(exp.paths_for(cfg).student, "student")
    dist = exp.schedule_from_params(student)
    _, novel = generate_synthetic(
        exp.synthetic_config(cfg), cfg["seeds"]["data"]
    )
    good = 0
    n = 10
    for seed in range(n):
        episode = sample_episode(novel, 5, 1, 15, np.random.default_rng(900 + seed))
        trace = finetune_episode(
            student, episode, dist, exp.finetune_config(cfg, seed=seed)
        ).loss_trace
        ce = [t["loss_ce"] for t in trace]
        if all(b <= a + 1e-4 for a, b in zip(ce, ce[1:])):
            good += 1
    assert good >= 0.9 * n, f"support CE nonincreasing in only {good}/{n} episodes"
