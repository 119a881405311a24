"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Criteria 6-9 run on the trained digit world from conftest (real MNIST when
EADMAGNET_MNIST_DIR is set, the surrogate corpus otherwise); crafted cells
are cached on disk so re-runs and the criterion-9 re-evaluation reuse them.
Run with `pytest tests/test_acceptance.py -v -s` to see every line.
"""

import math
import time

import numpy as np
import pytest

from eadmagnet.attacks import (AttackConfig, cw_attack, distortion_metrics,
                               ead_attack, shrink_threshold)
from eadmagnet.defense import (DefensePipeline, Detector, calibrate_thresholds,
                               defend_classify, detector_score, jsd_divergence)
from eadmagnet.harness import (AttackSpec, EvalConfig, craft_cell,
                               evaluate_defense, select_clean_examples)
from eadmagnet.nets import LayerSpec, build_network, finite_diff_check

N_ATTACK = 100
KAPPA = 15.0


def _report(num, name, passed, detail=""):
    line = f"ACCEPTANCE {num:>2} {'PASS' if passed else 'FAIL'} {name}"
    if detail:
        line += f" — {detail}"
    print(line, flush=True)
    assert passed, line


# ---------------------------------------------------------------------------


def test_criterion_1_gradient_correctness():
    t0 = time.time()
    rng = np.random.default_rng(101)
    worst = 0.0
    for trial in range(20):
        if trial % 2 == 0:
            specs = [LayerSpec("dense", units=int(rng.integers(4, 9))),
                     LayerSpec("sigmoid"),
                     LayerSpec("dense", units=int(rng.integers(2, 6)))]
            shape = (int(rng.integers(5, 12)),)
        else:
            specs = [LayerSpec("conv2d", ksize=3, filters=int(rng.integers(2, 5))),
                     LayerSpec("sigmoid"), LayerSpec("avgpool2x2"),
                     LayerSpec("upsample2x2"),
                     LayerSpec("conv2d", ksize=3, filters=2),
                     LayerSpec("sigmoid"), LayerSpec("flatten"),
                     LayerSpec("dense", units=3)]
            shape = (6, 6, int(rng.integers(1, 3)))
        net = build_network(specs, shape, seed=1000 + trial)
        x = rng.uniform(size=int(np.prod(shape)))
        rep = finite_diff_check(net, x, tolerance=1e-4, seed=trial)
        worst = max(worst, rep.max_rel_error)
        assert rep.passed, f"net {trial}: rel err {rep.max_rel_error:.2e}"
    elapsed = time.time() - t0
    _report(1, "gradient vs central finite differences",
            worst < 1e-4 and elapsed < 60,
            f"max rel err {worst:.2e} over 20 nets in {elapsed:.1f}s")


def test_criterion_2_shrinkage_unit_suite():
    x0 = np.array([0.5])
    exact = (
        shrink_threshold(np.array([0.55]), x0, 0.1)[0] == 0.5,
        abs(shrink_threshold(np.array([0.9]), x0, 0.1)[0] - 0.8) < 1e-15,
        shrink_threshold(np.array([1.5]), x0, 0.1)[0] == 1.0,
        abs(shrink_threshold(np.array([0.1]), x0, 0.2)[0] - 0.3) < 1e-15,
    )
    rng = np.random.default_rng(102)
    z = rng.uniform(-1.5, 2.5, size=1000)
    ref = rng.uniform(size=1000)
    degenerate = np.array_equal(shrink_threshold(z, ref, 0.0), np.clip(z, 0, 1))
    _report(2, "shrinkage-thresholding branch suite",
            all(exact) and degenerate,
            f"branches {sum(exact)}/4 exact, beta=0 degenerates to clamp")


def _two_pixel_model():
    net = build_network([LayerSpec("dense", units=2)], (2,), seed=0)
    net.layers[0].w.data = np.array([[3.0, 0.0], [0.0, 3.0]])
    net.layers[0].b.data = np.zeros(2)
    from eadmagnet.nets import Classifier

    return Classifier(net=net, k=2)


def test_criterion_3_beta_zero_equivalence():
    model = _two_pixel_model()
    x0 = np.array([0.8, 0.2])
    cfg = AttackConfig(beta=0.0, kappa=1.0, iterations=100, lr=0.01,
                       binary_steps=1, record_iterates=True)
    a = ead_attack(model, x0, 0, cfg)
    b = cw_attack(model, x0, 0, cfg)
    identical = (len(a.iterates) == len(b.iterates) == 100 and
                 all(np.array_equal(x, y) for x, y in zip(a.iterates, b.iterates)))
    _report(3, "beta=0: ead and cw iterate sequences bitwise identical",
            identical, "100 steps compared")


def test_criterion_4_small_instance_grid_oracle():
    t0 = time.time()
    model = _two_pixel_model()
    x0 = np.array([0.8, 0.2])
    cfg = AttackConfig(beta=0.01, kappa=0.0, iterations=1000, lr=0.01,
                       binary_steps=9, rule="en")
    res = ead_attack(model, x0, 0, cfg)
    assert res.success
    from eadmagnet.attacks import attack_loss_untargeted

    f = attack_loss_untargeted(model.logits(res.x), 0, 0.0)
    d = distortion_metrics(res.x, x0, 0.01)
    attacked = res.c_used * f + d.l2 ** 2 + 0.01 * d.l1

    grid = np.linspace(0.0, 1.0, 1001)
    g0, g1 = np.meshgrid(grid, grid, indexing="ij")
    fgrid = np.maximum(3 * g0 - 3 * g1, 0.0)
    obj = (res.c_used * fgrid + (g0 - 0.8) ** 2 + (g1 - 0.2) ** 2
           + 0.01 * (np.abs(g0 - 0.8) + np.abs(g1 - 0.2)))
    oracle = float(obj.min())
    elapsed = time.time() - t0
    _report(4, "2-pixel objective within 1e-2 of grid-search minimum",
            abs(attacked - oracle) <= 1e-2 and elapsed < 60,
            f"attack {attacked:.4f} vs grid {oracle:.4f} in {elapsed:.1f}s")


def test_criterion_5_jsd_suite():
    rng = np.random.default_rng(105)
    ok = True
    for _ in range(300):
        k = int(rng.integers(2, 8))
        p, q = rng.dirichlet(np.ones(k)), rng.dirichlet(np.ones(k))
        j = jsd_divergence(p, q)
        ok &= abs(j - jsd_divergence(q, p)) < 1e-12
        ok &= -1e-15 <= j <= math.log(2) + 1e-12
        ok &= jsd_divergence(p, p) < 1e-12
        if not np.allclose(p, q, atol=1e-12):
            ok &= j > 0
    ok &= jsd_divergence([0.5, 0.5], [0.5, 0.5]) == 0.0
    ok &= abs(jsd_divergence([1, 0], [0, 1]) - math.log(2)) < 1e-14
    closed_form = 1.5 * math.log(2) - 0.75 * math.log(3)
    ok &= abs(jsd_divergence([0.5, 0.5], [1, 0]) - closed_form) < 1e-14

    # T -> infinity drives temperature-softened scores to zero
    from eadmagnet.autodiff import softmax

    z1, z2 = rng.normal(scale=8, size=5), rng.normal(scale=8, size=5)
    t_limit = jsd_divergence(softmax(z1 / 1e6), softmax(z2 / 1e6))
    ok &= t_limit < 1e-10
    _report(5, "JSD symmetry/range/zero-iff-equal/worked values/T-limit", ok,
            f"T=1e6 score {t_limit:.2e}")


# ---------------------------------------------------------------------------
# trained-world criteria


def _default_pipeline(world, fp=1e-3):
    dets = [Detector(kind="recon-l1", ae=world["reformer"]),
            Detector(kind="recon-l2", ae=world["detector2"])]
    pipe = DefensePipeline(classifier=world["model"], detectors=dets,
                           reformer=world["reformer"], fp_rate=fp)
    pipe.calibrate(world["val_x"], fp)
    return pipe


def test_criterion_6_calibration_false_positive_rate(digit_world):
    world = digit_world
    dets = [Detector(kind="recon-l1", ae=world["reformer"]),
            Detector(kind="recon-l2", ae=world["detector2"])]
    cal = calibrate_thresholds(dets, world["model"], world["reformer"],
                               world["val_x"], fp_rate=0.01)
    held_out = world["test_x"][1000:2000]
    assert len(held_out) == 1000
    realized = []
    for det in cal:
        flagged = sum(
            detector_score(det, world["model"], world["reformer"], x)
            > det.threshold for x in held_out)
        realized.append(100.0 * flagged / len(held_out))
    ok = all(abs(r - 1.0) <= 0.5 for r in realized)
    _report(6, "calibrated fp within 0.5pp of 1% on held-out 1000",
            ok, f"realized fp {realized[0]:.2f}% / {realized[1]:.2f}%")


def test_criterion_7_clean_accuracy_overhead(digit_world):
    world = digit_world
    model = world["model"]
    xs, ys = world["test_x"][:1000], world["test_y"][:1000]
    undefended = 100.0 * model.accuracy(xs, ys)
    assert undefended >= 97.0, f"desk model accuracy {undefended:.1f}% below 97%"
    pipe = _default_pipeline(world)
    correct = 0
    for x, y in zip(xs, ys):
        v = defend_classify(pipe, x)
        correct += (v.outcome == "classified" and v.label == int(y))
    defended = 100.0 * correct / len(xs)
    _report(7, "defended clean accuracy within 3 points of undefended",
            undefended - defended <= 3.0,
            f"undefended {undefended:.1f}% defended {defended:.1f}%")


@pytest.fixture(scope="module")
def crafted_cells(digit_world):
    """Criterion-8 crafting, shared with criterion 9 via the disk cache."""
    world = digit_world
    model = world["model"]
    cfg = EvalConfig(kappas=(KAPPA,), n_examples=N_ATTACK, seed=7,
                     iterations=200, binary_steps=5, lr=0.01,
                     cache_dir=world["cache_dir"],
                     dataset_name=world["source"])
    xs, ys, _ = select_clean_examples(model, world["test_x"][:1000],
                                      world["test_y"][:1000], N_ATTACK, cfg.seed)
    t0 = time.time()
    adv_ead = craft_cell(model, xs, ys,
                         AttackSpec(kind="ead", beta=1e-2, rule="en"), KAPPA, cfg)
    adv_cw = craft_cell(model, xs, ys,
                        AttackSpec(kind="cw", beta=0.0, rule="l2"), KAPPA, cfg)
    return {"xs": xs, "ys": ys, "ead": adv_ead, "cw": adv_cw,
            "craft_seconds": time.time() - t0}


def test_criterion_8_ead_beats_cw_through_default_pipeline(digit_world,
                                                           crafted_cells):
    world = digit_world
    pipe = _default_pipeline(world, fp=1e-3)
    ys = crafted_cells["ys"]
    asr_ead = evaluate_defense(pipe, crafted_cells["ead"], ys)["asr_pct"]
    asr_cw = evaluate_defense(pipe, crafted_cells["cw"], ys)["asr_pct"]
    gap = asr_ead - asr_cw
    _report(8, "ASR(EAD) - ASR(CW) >= 20pp at kappa=15 vs default pipeline",
            gap >= 20.0,
            f"EAD {asr_ead:.1f}% vs CW {asr_cw:.1f}% (gap {gap:.1f}pp, "
            f"craft {crafted_cells['craft_seconds']:.0f}s, corpus "
            f"{world['source']})")


def test_criterion_9_jsd_detectors_strictly_lower_ead_asr(digit_world,
                                                          crafted_cells):
    world = digit_world
    ys = crafted_cells["ys"]
    recon_only = _default_pipeline(world, fp=1e-3)
    asr_base = evaluate_defense(recon_only, crafted_cells["ead"], ys)["asr_pct"]
    dets = [Detector(kind="recon-l1", ae=world["reformer"]),
            Detector(kind="recon-l2", ae=world["detector2"]),
            Detector(kind="jsd", temperature=10.0),
            Detector(kind="jsd", temperature=40.0)]
    augmented = DefensePipeline(classifier=world["model"], detectors=dets,
                                reformer=world["reformer"])
    augmented.calibrate(world["val_x"], 1e-3)
    asr_jsd = evaluate_defense(augmented, crafted_cells["ead"], ys)["asr_pct"]
    _report(9, "adding JSD(10)+JSD(40) strictly lowers cached-EAD ASR",
            asr_jsd < asr_base,
            f"recon-only {asr_base:.1f}% -> +JSD {asr_jsd:.1f}%")


# ---------------------------------------------------------------------------
# sweep-level criteria (synthetic desk data)


def _blob_sweep(tmp_path, out_name, timing=False):
    from eadmagnet.cli import main

    out = tmp_path / out_name
    code = main(["sweep", "--dataset", "synthetic", "--attack", "ead,cw",
                 "--beta", "0.01", "--rule", "en", "--kappas", "0,0.5,1",
                 "--n", "12", "--seed", "7", "--count", "500",
                 "--test-count", "200", "--iters", "60", "--binary-steps", "3",
                 "--epochs", "40", "--out", str(out)]
                + (["--timing"] if timing else []))
    assert code == 0
    return out


def test_criterion_10_norm_ordering_across_sweep(tmp_path, crafted_cells):
    from eadmagnet.harness import read_report_csv

    out = _blob_sweep(tmp_path, "norms.csv")
    rows = read_report_csv(out)
    ok = True
    checked = 0
    for row in rows:
        if row["mean_l1"] == "":
            continue
        l1, l2, linf = (float(row[c]) for c in ("mean_l1", "mean_l2", "mean_linf"))
        ok &= l1 >= l2 - 1e-9 and l2 >= linf - 1e-9
        checked += 1
    # also every per-example triple from the criterion-8 cells
    for adv, x0 in zip(crafted_cells["ead"] + crafted_cells["cw"],
                       list(crafted_cells["xs"]) * 2):
        if adv is None:
            continue
        d = distortion_metrics(adv, x0)
        ok &= d.l1 >= d.l2 - 1e-9 and d.l2 >= d.linf - 1e-9
        checked += 1
    _report(10, "L1 >= L2 >= Linf across all reported triples", ok,
            f"{checked} triples checked")


def test_criterion_11_sweep_determinism(tmp_path):
    a = _blob_sweep(tmp_path, "det_a.csv")
    b = _blob_sweep(tmp_path, "det_b.csv")
    identical = a.read_bytes() == b.read_bytes()
    _report(11, "same-seed synthetic sweeps byte-identical", identical,
            f"{len(a.read_bytes())} bytes compared")
