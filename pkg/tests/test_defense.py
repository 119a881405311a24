import math

import numpy as np
import pytest

from eadmagnet.autodiff import softmax
from eadmagnet.defense import (DefensePipeline, DefenseVerdict, Detector,
                               calibrate_thresholds, defend_classify,
                               detector_score, jsd_divergence,
                               load_pipeline_config, save_pipeline_config)
from eadmagnet.nets import (Autoencoder, Classifier, LayerSpec, build_network)


def dense_classifier(w):
    net = build_network([LayerSpec("dense", units=w.shape[1])], (w.shape[0],),
                        seed=0)
    net.layers[0].w.data = np.asarray(w, dtype=np.float64)
    net.layers[0].b.data = np.zeros(w.shape[1])
    return Classifier(net=net, k=w.shape[1])


def identity_ae(p):
    """Dense AE pinned to the identity map (sigmoid-free chain)."""
    net = build_network([LayerSpec("dense", units=p)], (p,), seed=0)
    net.layers[0].w.data = np.eye(p)
    net.layers[0].b.data = np.zeros(p)
    return Autoencoder(net=net)


def constant_ae(p, value):
    net = build_network([LayerSpec("dense", units=p)], (p,), seed=0)
    net.layers[0].w.data = np.zeros((p, p))
    net.layers[0].b.data = np.full(p, value)
    return Autoencoder(net=net)


# ---------------------------------------------------------------------------
# Jensen-Shannon divergence


def test_jsd_equal_distributions_zero():
    p = np.array([0.2, 0.3, 0.5])
    assert jsd_divergence(p, p) == 0.0


def test_jsd_disjoint_supports_ln2():
    assert jsd_divergence([1.0, 0.0], [0.0, 1.0]) == pytest.approx(math.log(2),
                                                                   abs=1e-15)


def test_jsd_half_half_vs_point_mass():
    # closed form: 1.5*ln2 - 0.75*ln3 = 0.21576155... (0.215761 truncated)
    expected = 1.5 * math.log(2) - 0.75 * math.log(3)
    assert expected == pytest.approx(0.215761, abs=1e-6)
    assert jsd_divergence([0.5, 0.5], [1.0, 0.0]) == pytest.approx(expected,
                                                                   abs=1e-14)


def test_jsd_rejects_invalid_distributions():
    with pytest.raises(ValueError):
        jsd_divergence([0.5, 0.6], [0.5, 0.5])
    with pytest.raises(ValueError):
        jsd_divergence([-0.1, 1.1], [0.5, 0.5])
    with pytest.raises(ValueError):
        jsd_divergence([1.0], [0.5, 0.5])


def test_jsd_symmetry_range_and_zero_iff_equal():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        k = int(rng.integers(2, 8))
        p = rng.dirichlet(np.ones(k))
        q = rng.dirichlet(np.ones(k))
        j_pq = jsd_divergence(p, q)
        j_qp = jsd_divergence(q, p)
        assert abs(j_pq - j_qp) < 1e-12
        assert -1e-15 <= j_pq <= math.log(2) + 1e-12
        if np.allclose(p, q, atol=1e-12):
            assert j_pq < 1e-12
        else:
            assert j_pq > 0.0
        assert jsd_divergence(p, p) < 1e-15


# ---------------------------------------------------------------------------
# detector scores


def test_perfect_ae_gives_zero_scores():
    p = 4
    model = dense_classifier(np.random.default_rng(1).normal(size=(p, 3)))
    ae = identity_ae(p)
    x = np.random.default_rng(1).uniform(size=p)
    for det in (Detector(kind="recon-l1", ae=ae),
                Detector(kind="recon-l2", ae=ae),
                Detector(kind="jsd", temperature=10.0)):
        assert detector_score(det, model, ae, x) == pytest.approx(0.0, abs=1e-15)


def test_recon_scores_single_pixel_worked_example():
    p = 4
    model = dense_classifier(np.zeros((p, 2)))
    x = np.array([0.5, 0.2, 0.2, 0.2])
    ae = constant_ae(p, 0.0)
    ae.net.layers[0].b.data = np.array([0.0, 0.2, 0.2, 0.2])  # one pixel off by 0.5
    d1 = Detector(kind="recon-l1", ae=ae)
    d2 = Detector(kind="recon-l2", ae=ae)
    assert detector_score(d1, model, ae, x) == pytest.approx(0.125)
    assert detector_score(d2, model, ae, x) == pytest.approx(0.0625)


def test_jsd_score_modes():
    rng = np.random.default_rng(2)
    w = rng.normal(size=(6, 4))
    model = dense_classifier(w)
    ae = constant_ae(6, 0.5)
    x = rng.uniform(size=6)
    rx = ae.reconstruct(x)
    t = 10.0
    logits_mode = Detector(kind="jsd", temperature=t, temp_mode="logits")
    expected = jsd_divergence(softmax(model.logits(x) / t),
                              softmax(model.logits(rx) / t))
    assert detector_score(logits_mode, model, ae, x) == pytest.approx(expected)
    probs_mode = Detector(kind="jsd", temperature=t, temp_mode="probs")
    expected = jsd_divergence(model.probs(x), model.probs(rx)) / t
    assert detector_score(probs_mode, model, ae, x) == pytest.approx(expected)


def test_temperature_limit_drives_jsd_to_zero():
    rng = np.random.default_rng(3)
    model = dense_classifier(rng.normal(size=(6, 4)))
    ae = constant_ae(6, 0.3)
    det = Detector(kind="jsd", temperature=1e6)
    for _ in range(10):
        x = rng.uniform(size=6)
        assert detector_score(det, model, ae, x) < 1e-10


# ---------------------------------------------------------------------------
# calibration


class _ScriptedDetector:
    """Stands in for a detector with predetermined scores."""


def test_calibration_quantile_worked_example(monkeypatch):
    import eadmagnet.defense as dfs

    scores = {i: float(i + 1) for i in range(10)}  # clean scores 1..10

    def fake_score(det, model, reformer, x):
        return scores[int(x[0])]

    monkeypatch.setattr(dfs, "detector_score", fake_score)
    xs = np.arange(10, dtype=float)[:, None]
    det = Detector(kind="jsd", temperature=1.0)
    (cal,) = dfs.calibrate_thresholds([det], None, None, xs, fp_rate=0.1)
    assert cal.threshold == 9.0
    flagged = sum(fake_score(cal, None, None, x) > cal.threshold for x in xs)
    assert flagged == 1
    (cal0,) = dfs.calibrate_thresholds([det], None, None, xs, fp_rate=0.0)
    assert cal0.threshold == 10.0
    assert sum(fake_score(cal0, None, None, x) > cal0.threshold for x in xs) == 0


def test_calibration_rejects_bad_inputs():
    det = Detector(kind="jsd", temperature=1.0)
    with pytest.raises(ValueError):
        calibrate_thresholds([det], None, None, np.zeros((0, 4)), 0.01)
    with pytest.raises(ValueError):
        calibrate_thresholds([det], None, None, np.zeros((5, 4)), 1.0)


def test_calibration_realized_fp_bounded():
    rng = np.random.default_rng(4)
    p = 9
    model = dense_classifier(rng.normal(size=(p, 3)))
    ae = constant_ae(p, 0.5)
    xs = rng.uniform(size=(400, p))
    for fp in (0.0, 0.01, 0.05, 0.2):
        dets = calibrate_thresholds([Detector(kind="recon-l1", ae=ae)],
                                    model, ae, xs, fp)
        flagged = sum(detector_score(dets[0], model, ae, x) > dets[0].threshold
                      for x in xs)
        assert flagged / len(xs) <= fp + 1.0 / len(xs)


# ---------------------------------------------------------------------------
# pipeline


def _toy_pipeline(rng, thresholds=(np.inf, np.inf)):
    p = 4
    model = dense_classifier(rng.normal(size=(p, 3)))
    ae = constant_ae(p, 0.4)
    dets = [Detector(kind="recon-l1", ae=ae, threshold=thresholds[0]),
            Detector(kind="recon-l2", ae=ae, threshold=thresholds[1])]
    return DefensePipeline(classifier=model, detectors=dets, reformer=ae), model, ae


def test_rejection_skips_classifier():
    pipe, model, ae = _toy_pipeline(np.random.default_rng(5),
                                    thresholds=(-1.0, np.inf))
    verdict = defend_classify(pipe, np.array([0.9, 0.9, 0.9, 0.9]))
    assert verdict.outcome == "rejected"
    assert verdict.rejected_by == "recon-l1"
    assert verdict.label is None
    assert pipe.classify_calls == 0


def test_infinite_thresholds_classify_reformed():
    pipe, model, ae = _toy_pipeline(np.random.default_rng(6))
    x = np.array([0.9, 0.0, 0.9, 0.0])
    verdict = defend_classify(pipe, x)
    assert verdict.outcome == "classified"
    assert verdict.label == int(model.classify(ae.reconstruct(x)))
    assert pipe.classify_calls == 1


def test_reform_bypass_flag():
    pipe, model, _ = _toy_pipeline(np.random.default_rng(7))
    pipe.reform_enabled = False
    x = np.array([0.9, 0.0, 0.9, 0.0])
    verdict = defend_classify(pipe, x)
    assert verdict.label == int(model.classify(x))


def test_rejection_monotone_in_thresholds():
    rng = np.random.default_rng(8)
    pipe_hi, model, ae = _toy_pipeline(rng, thresholds=(0.3, 0.3))
    pipe_lo = DefensePipeline(
        classifier=model,
        detectors=[Detector(kind=d.kind, ae=d.ae, threshold=d.threshold - 0.2)
                   for d in pipe_hi.detectors],
        reformer=ae)
    for _ in range(50):
        x = rng.uniform(size=4)
        hi = defend_classify(pipe_hi, x)
        lo = defend_classify(pipe_lo, x)
        if hi.outcome == "rejected":
            assert lo.outcome == "rejected"


def test_verdict_invariants():
    with pytest.raises(ValueError):
        DefenseVerdict(outcome="rejected", label=3)
    with pytest.raises(ValueError):
        DefenseVerdict(outcome="classified", label=None)


def test_detector_validation():
    with pytest.raises(ValueError):
        Detector(kind="recon-l1")  # needs an AE
    with pytest.raises(ValueError):
        Detector(kind="jsd", temperature=0.0)
    with pytest.raises(ValueError):
        Detector(kind="maha")


# ---------------------------------------------------------------------------
# config file round trip


def test_pipeline_config_roundtrip(tmp_path):
    ae = constant_ae(4, 0.5)
    dets = [Detector(kind="recon-l1", ae=ae, threshold=0.125),
            Detector(kind="recon-l2", ae=ae, threshold=0.03),
            Detector(kind="jsd", temperature=10.0, threshold=0.004),
            Detector(kind="jsd", temperature=40.0)]
    path = tmp_path / "pipeline.cfg"
    save_pipeline_config(path, dets, "reformer.eadmb", fp_rate=0.001,
                         temp_mode="logits",
                         ae_paths=["ae1.eadmb", "ae2.eadmb", None, None])
    cfg = load_pipeline_config(path)
    assert cfg["fp_rate"] == 0.001
    assert cfg["reformer"] == "reformer.eadmb"
    assert cfg["temp_mode"] == "logits"
    kinds = [d["kind"] for d in cfg["detectors"]]
    assert kinds == ["recon-l1", "recon-l2", "jsd", "jsd"]
    assert cfg["detectors"][0]["threshold"] == 0.125
    assert cfg["detectors"][0]["ae_path"] == "ae1.eadmb"
    assert cfg["detectors"][2]["temperature"] == 10.0
    assert cfg["detectors"][3]["threshold"] == math.inf
