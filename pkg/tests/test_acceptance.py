"""Exit criteria.  Each test prints one PASS/FAIL line and then asserts.

Shared task: 3-class blobs with 3 interleaved centres per class (n=3000,
noise 0.3, data seed 0), MLP 2->32->32->3, SGD lr 0.05 with cosine decay,
batch 64.  Runs are cached so criteria that compare the same configuration
reuse it.
"""

import functools
import json
import statistics
import time

import numpy as np
import pytest

from s2hprune import autodiff as ad
from s2hprune.autodiff import Tensor
from s2hprune.cli.checkpoint import load_checkpoint, load_graph_state, save_trainer
from s2hprune.cli.main import main as cli_main
from s2hprune.data import gen_synthetic
from s2hprune.graph import ModelGraph, export_compact, mlp_spec
from s2hprune.nn import cross_entropy, gap_measure
from s2hprune.pruner import (
    Pruner,
    PruneRunConfig,
    apply_updates,
    combine_gradients,
    prune_step,
    resource_penalty,
)
from s2hprune.pruner.optim import SGD

pytestmark = [pytest.mark.acceptance, pytest.mark.slow]

WIDTHS = [2, 32, 32, 3]
T_LOW = 0.15
EPOCHS = 100
SEEDS = (0, 1, 2)
CHANCE = 1 / 3


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'} - {detail}")
        assert ok, detail
    return emit


@functools.lru_cache(maxsize=None)
def blobs():
    return gen_synthetic("blobs", 3000, 3, 0.3, 0, centers_per_class=3)


@functools.lru_cache(maxsize=None)
def run(mode="s2h", seed=0, T=T_LOW, epochs=EPOCHS, toggles=()):
    """Final report and trajectory of one pruning run (cached)."""
    sp = blobs()
    cfg = PruneRunConfig(mode=mode, T=T, epochs=epochs, seed=seed, toggles=dict(toggles))
    t0 = time.perf_counter()
    p = Pruner(ModelGraph(mlp_spec(WIDTHS), seed=seed), cfg, sp.train, sp.val)
    p.run()
    return p.report(), tuple(p.trajectory), time.perf_counter() - t0


def median(xs):
    return statistics.median(xs)


# -- 1 ---------------------------------------------------------------------------

def _max_rel(analytic, fd):
    return float(np.max(np.abs(analytic - fd)) / max(np.max(np.abs(fd)), 1e-300))


def test_criterion_1_gradient_terms_match_fd(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    g = ModelGraph(mlp_spec([3, 6, 2]), seed=1)
    u = g.groups["h1"].u
    u.values = rng.standard_normal(6)
    x = rng.standard_normal((8, 3))
    y = rng.integers(0, 2, 8)
    cfg = PruneRunConfig(T=0.4, toggles={"g_G_soft_theta": True})
    bundle = prune_step(g, x, y, cfg).bundle
    g.refresh_masks()
    with ad.no_grad():
        ys0 = Tensor(g.forward_soft(x).values)
        yh0 = Tensor(g.forward_hard(x).values)

    def soft():
        g.refresh_masks()
        return g.forward_soft(x)

    scalars = {
        "g_L_theta": lambda: cross_entropy(soft(), y),
        "g_G_hard_theta": lambda: gap_measure(g.forward_hard(x), ys0),
        "g_G_soft_theta": lambda: gap_measure(yh0, soft()),
        "g_L_u": lambda: cross_entropy(soft(), y),
        "g_R_u": lambda: (g.refresh_masks(), resource_penalty(g, cfg.T))[1],
        "g_G_u": lambda: gap_measure(yh0, soft()),
    }
    worst = {}
    for name, f in scalars.items():
        leaves = [u] if name.endswith("_u") else g.parameters()
        errs = [_max_rel(getattr(bundle, name)[t], ad.numerical_gradient(lambda _: f(), t))
                for t in leaves]
        worst[name] = max(errs)
    g.refresh_masks()
    took = time.perf_counter() - t0
    ok = all(v < 1e-5 for v in worst.values()) and took < 60
    detail = ", ".join(f"{k}={v:.1e}" for k, v in worst.items()) + f"; {took:.1f}s"
    report(1, ok, detail)


# -- 2 ---------------------------------------------------------------------------

def test_criterion_2_decoupling(report, monkeypatch):
    sp = blobs()
    g = ModelGraph(mlp_spec(WIDTHS), seed=0)
    theta_ids = {id(t) for t in g.parameters()}
    cfg = PruneRunConfig(T=T_LOW)
    cfg_keep = PruneRunConfig(T=T_LOW, record_soft_theta=True)
    opt = SGD(cfg.momentum)
    rng = np.random.default_rng(0)
    calls = []
    real_backward = ad.backward

    def spy(root, targets=None):
        calls.append((root, [id(t) for t in (targets or [])]))
        return real_backward(root, targets)

    failures = []
    for step in range(100):
        idx = rng.choice(len(sp.train), 64, replace=False)
        xb, yb = sp.train.features[idx], sp.train.labels[idx]
        calls.clear()
        monkeypatch.setattr(ad, "backward", spy)
        res = prune_step(g, xb, yb, cfg, keep_graph=True)
        monkeypatch.setattr(ad, "backward", real_backward)
        d1, d2 = res.tensors["d1"], res.tensors["d2"]
        us = g.mask_parameters()
        if any(np.any(v != 0) for v in ad.backward(d1, us).values()):
            failures.append(f"step {step}: d1 reaches u")
        d2_targets = [tg for root, tg in calls if root is d2]
        if not d2_targets or any(theta_ids & set(tg) for tg in d2_targets):
            failures.append(f"step {step}: d2 backward targets theta")
        if any(np.any(v != 0) for v in res.bundle.g_G_soft_theta.values()):
            failures.append(f"step {step}: g_G_soft_theta nonzero")
        th_a, _ = combine_gradients(res.bundle, cfg)
        th_b, _ = combine_gradients(prune_step(g, xb, yb, cfg_keep).bundle, cfg_keep)
        if any(th_a[t].tobytes() != th_b[t].tobytes() for t in g.parameters()):
            failures.append(f"step {step}: theta update differs when soft branch kept")
        res = prune_step(g, xb, yb, cfg)
        apply_updates(g, res.bundle, cfg, opt, cfg.lr)
    report(2, not failures, "; ".join(failures[:3]) or "100 steps, all exact")


# -- 3 ---------------------------------------------------------------------------

@pytest.mark.parametrize("T", [0.35, 0.55])
def test_criterion_3_resource_convergence(report, T):
    rep, _, took = run(T=T, epochs=200)
    ok = abs(rep.flops_hard - T) <= 0.03 and took < 300
    report(3, ok, f"T={T}: hard ratio {rep.flops_hard:.4f} (soft {rep.flops_soft:.4f}), "
                  f"|diff| {abs(rep.flops_hard - T):.4f} vs 0.03; {took:.0f}s")


# -- 4 ---------------------------------------------------------------------------

def test_criterion_4_gap_ordering(report):
    js, top1 = {}, {}
    for mode in ("s2h", "alt1", "alt2"):
        reps = [run(mode, s)[0] for s in SEEDS]
        js[mode] = median(r.js for r in reps)
        top1[mode] = median(r.hard_top1 for r in reps)
    ok = (js["s2h"] < js["alt1"] and js["s2h"] < js["alt2"]
          and top1["s2h"] >= top1["alt1"] and top1["s2h"] >= top1["alt2"])
    detail = "; ".join(f"{m}: JS {js[m]:.2e} hard {top1[m]:.4f}" for m in js)
    report(4, ok, detail)


# -- 5 ---------------------------------------------------------------------------

def _median_hard(toggles=()):
    return median(run("s2h", s, toggles=toggles)[0].hard_top1 for s in SEEDS)


ABLATIONS = {
    "+g_G_soft_theta": ((("g_G_soft_theta", True),), "below_default"),
    "-g_L_theta": ((("g_L_theta", False),), "below_chance"),
    "-g_G_hard_theta": ((("g_G_hard_theta", False),), "below_chance"),
    "-g_L_u": ((("g_L_u", False),), "below_default"),
    "-g_G_u": ((("g_G_u", False),), "below_default"),
}


@pytest.mark.parametrize("name", list(ABLATIONS))
def test_criterion_5_ablation_directions(report, name):
    toggles, rule = ABLATIONS[name]
    base = _median_hard()
    got = _median_hard(toggles)
    if rule == "below_default":
        ok, want = got < base, f"< default {base:.4f}"
    else:
        ok, want = got < 1.5 * CHANCE, f"< 1.5x chance {1.5 * CHANCE:.4f}"
    report(5, ok, f"{name}: median hard top-1 {got:.4f} {want}")


# -- 6 ---------------------------------------------------------------------------

def test_criterion_6_binary_mask_equivalence(report):
    rng = np.random.default_rng(0)
    g = ModelGraph(mlp_spec(WIDTHS), seed=0)
    worst = 0.0
    for _ in range(10):
        g.force_prefix_lengths({gid: int(rng.integers(1, g.groups[gid].channels + 1))
                                for gid in g.prunable_groups()})
        x = rng.standard_normal((100, 2)) * 3
        soft = g.forward_soft(x).values
        hard = g.forward_hard(x).values
        comp = export_compact(g).forward(x).values
        worst = max(worst, np.max(np.abs(soft - hard)), np.max(np.abs(comp - hard)))
    report(6, worst < 1e-12, f"max abs diff {worst:.1e} over 10 random prefix assignments")


# -- 7 ---------------------------------------------------------------------------

def test_criterion_7_seed_robustness(report):
    reps = [run("s2h", s)[0] for s in (0, 1, 2, 3)]
    flops = [r.flops_hard for r in reps]
    accs = [r.hard_top1 for r in reps]
    spread = max(flops) - min(flops)
    sd = statistics.pstdev(accs)
    ok = spread < 0.01 and sd < 0.015
    report(7, ok, f"hard FLOPs {[round(f, 4) for f in flops]} spread {spread:.4f} (< 0.01); "
                  f"hard top-1 {[round(a, 4) for a in accs]} sd {sd:.4f} (< 0.015)")


# -- 8 ---------------------------------------------------------------------------

def test_criterion_8_determinism_and_persistence(report, tmp_path, monkeypatch, capsys):
    cfg = {"model": {"mlp": WIDTHS},
           "data": {"kind": "synthetic", "n": 3000, "centers_per_class": 3},
           "prune": {"T": T_LOW}, "train": {"epochs": 20}, "seed": 5}
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cfg))

    def prune(out, *extra):
        monkeypatch.setenv("S2HPRUNE_OUT", str(tmp_path / out))
        code = cli_main(["prune", "--config", str(path), *extra])
        capsys.readouterr()
        return code, tmp_path / out

    checks = {}
    _, a = prune("a", "--checkpoint-every", "10")
    _, b = prune("b")
    checks["csv identical"] = (a / "trajectory.csv").read_bytes() == (b / "trajectory.csv").read_bytes()
    _, c = prune("c", "--resume", str(a / "epoch_0010.ckpt"))
    checks["resume identical"] = (
        (c / "trajectory.csv").read_bytes() == (a / "trajectory.csv").read_bytes()
        and (c / "final.ckpt").read_bytes() == (a / "final.ckpt").read_bytes())

    # save -> load -> save through a fresh trainer
    ck = load_checkpoint(a / "epoch_0010.ckpt")
    sp = blobs()
    g = ModelGraph(ck.header["model_spec"], seed=5)
    p = Pruner(g, PruneRunConfig(T=T_LOW, epochs=20, seed=5), sp.train, sp.val)
    from s2hprune.cli.checkpoint import restore_trainer
    restore_trainer(p, ck)
    save_trainer(p, tmp_path / "again.ckpt", config=ck.header["config"])
    checks["save-load-save identical"] = (
        (tmp_path / "again.ckpt").read_bytes() == (a / "epoch_0010.ckpt").read_bytes())
    bad = [k for k, v in checks.items() if not v]
    report(8, not bad, "failed: " + ", ".join(bad) if bad else ", ".join(checks))


# -- 9 ---------------------------------------------------------------------------

FT_CHECKPOINTS = (0, 20, 40, 60, 80, 100)  # fine-tune epochs at which the gap is read


def _finetune_curve(seed, tmp_path):
    sp = blobs()
    src = Pruner(ModelGraph(mlp_spec(WIDTHS), seed=seed),
                 PruneRunConfig(mode="soft_only", T=T_LOW, epochs=EPOCHS, seed=seed),
                 sp.train, sp.val)
    src.run()
    ckpt = tmp_path / f"soft_only_{seed}.ckpt"
    save_trainer(src, ckpt)
    g = ModelGraph(mlp_spec(WIDTHS), seed=seed)
    load_graph_state(g, load_checkpoint(ckpt, expected_model_hash=g.hash))
    ft = Pruner(g, PruneRunConfig(mode="finetune", T=T_LOW, epochs=FT_CHECKPOINTS[-1], seed=seed,
                                  source_checkpoint=str(ckpt)), sp.train, sp.val)
    rep = ft.report()
    gaps = [abs(rep.soft_top1 - rep.hard_top1)]
    for e in FT_CHECKPOINTS[1:]:
        ft.run(until=e)
        r = ft.trajectory[-1]
        gaps.append(abs(r.soft_top1 - r.hard_top1))
    return gaps, ft.trajectory[-1].hard_top1


def test_criterion_9_finetune(report, tmp_path):
    curves, ft_hard = [], []
    for s in SEEDS:
        gaps, hard = _finetune_curve(s, tmp_path)
        curves.append(gaps)
        ft_hard.append(hard)
    med_gap = [median(c[i] for c in curves) for i in range(len(FT_CHECKPOINTS))]
    monotone = all(b <= a for a, b in zip(med_gap, med_gap[1:])) and med_gap[-1] < med_gap[0]
    s2h = _median_hard()
    ft = median(ft_hard)
    ok = monotone and s2h >= ft
    report(9, ok, f"median |soft-hard| at fine-tune epochs {list(FT_CHECKPOINTS)}: "
                  f"{[round(v, 4) for v in med_gap]} (monotone: {monotone}); "
                  f"s2h hard {s2h:.4f} vs fine-tuned {ft:.4f}")
