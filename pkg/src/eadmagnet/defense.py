"""MagNet-style serial defense: detectors first, then the reformer.

Inputs whose reconstruction error or temperature-softened Jensen-Shannon
divergence exceeds a calibrated threshold are rejected; survivors are passed
through the reformer autoencoder before classification. Thresholds come only
from quantile calibration on clean validation data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .autodiff import softmax
from .nets import Autoencoder, Classifier

DETECTOR_KINDS = ("recon-l1", "recon-l2", "jsd")


def jsd_divergence(p: np.ndarray, q: np.ndarray) -> float:
    """Jensen-Shannon divergence, natural log, with 0*ln 0 taken as 0.

    Symmetric, and bounded by ln 2 (attained on disjoint supports).
    """
    p = np.asarray(p, dtype=np.float64).reshape(-1)
    q = np.asarray(q, dtype=np.float64).reshape(-1)
    if p.shape != q.shape:
        raise ValueError("distributions must have the same length")
    for name, v in (("P", p), ("Q", q)):
        if v.min() < 0 or abs(v.sum() - 1.0) > 1e-9:
            raise ValueError(f"{name} is not a probability distribution")
    m = 0.5 * (p + q)

    def kl(a):
        nz = a > 0
        return float(np.sum(a[nz] * np.log(a[nz] / m[nz])))

    return 0.5 * kl(p) + 0.5 * kl(q)


@dataclass(frozen=True)
class Detector:
    kind: str                      # recon-l1 | recon-l2 | jsd
    ae: Autoencoder | None = None  # reconstruction detectors own an AE
    temperature: float = 1.0       # jsd only
    threshold: float = math.inf    # set only by calibrate_thresholds
    temp_mode: str = "logits"      # logits | probs (see detector_score)

    def __post_init__(self):
        if self.kind not in DETECTOR_KINDS:
            raise ValueError(f"unknown detector kind {self.kind!r}")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.kind != "jsd" and self.ae is None:
            raise ValueError(f"{self.kind} detector needs an autoencoder")

    def label(self) -> str:
        return f"jsd(T={self.temperature:g})" if self.kind == "jsd" else self.kind


def detector_score(det: Detector, model: Classifier, reformer: Autoencoder,
                   x: np.ndarray) -> float:
    """Anomaly score of one flat example; higher means more suspicious.

    recon-l1 / recon-l2 use the detector's own AE and per-pixel means, so
    thresholds are resolution independent. jsd compares the class
    distributions of x and AE(x): in 'logits' mode both are
    softmax(Logit(.)/T); 'probs' mode divides the probability vectors by T
    literally, which factors to JSD(F(x), F(AE(x)))/T and is computed that
    way so both arguments stay valid distributions.
    """
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if det.kind == "jsd":
        ae = det.ae or reformer
        rx = ae.reconstruct(x)
        if det.temp_mode == "logits":
            p = softmax(model.logits(x) / det.temperature)
            q = softmax(model.logits(rx) / det.temperature)
            return jsd_divergence(p, q)
        return jsd_divergence(model.probs(x), model.probs(rx)) / det.temperature
    rx = det.ae.reconstruct(x)
    if rx.shape != x.shape:
        raise ValueError("autoencoder output shape does not match input")
    d = x - rx
    return float(np.mean(np.abs(d))) if det.kind == "recon-l1" else float(np.mean(d * d))


def calibrate_thresholds(detectors, model: Classifier, reformer: Autoencoder,
                         clean_xs: np.ndarray, fp_rate: float = 1e-3):
    """Set each threshold to the (1 - fp)-quantile of clean scores.

    The threshold is the ceil((1-fp)*N)-th smallest clean score and inputs
    are flagged on score > threshold, so at most fp*N + 1 clean validation
    examples can exceed it; fp = 0 flags nothing.
    """
    clean_xs = np.asarray(clean_xs, dtype=np.float64)
    if len(clean_xs) == 0:
        raise ValueError("empty calibration set")
    if not 0 <= fp_rate < 1:
        raise ValueError("false-positive rate must lie in [0, 1)")
    n = len(clean_xs)
    rank = max(math.ceil((1.0 - fp_rate) * n), 1)
    calibrated = []
    for det in detectors:
        scores = np.sort([detector_score(det, model, reformer, x) for x in clean_xs])
        calibrated.append(replace(det, threshold=float(scores[rank - 1])))
    return calibrated


@dataclass
class DefenseVerdict:
    outcome: str                   # rejected | classified
    label: int | None = None
    rejected_by: str | None = None
    scores: dict[str, float] | None = None

    def __post_init__(self):
        if self.outcome == "rejected" and self.label is not None:
            raise ValueError("rejected verdicts carry no label")
        if self.outcome == "classified" and self.label is None:
            raise ValueError("classified verdicts need a label")


@dataclass
class DefensePipeline:
    """Ordered detectors, a reformer and the protected classifier."""

    classifier: Classifier
    detectors: list[Detector]
    reformer: Autoencoder | None = None
    reform_enabled: bool = True
    fp_rate: float = 1e-3
    # instrumentation: how often the classifier ran after the detector stage
    classify_calls: int = 0

    def calibrate(self, clean_xs: np.ndarray, fp_rate: float | None = None) -> None:
        if fp_rate is not None:
            self.fp_rate = fp_rate
        self.detectors = calibrate_thresholds(
            self.detectors, self.classifier, self.reformer, clean_xs, self.fp_rate
        )

    def reform(self, x: np.ndarray) -> np.ndarray:
        if self.reform_enabled and self.reformer is not None:
            return self.reformer.reconstruct(x)
        return np.asarray(x, dtype=np.float64).reshape(-1)


def defend_classify(pipeline: DefensePipeline, x: np.ndarray) -> DefenseVerdict:
    """Serial two-stage defense: any firing detector rejects before the
    reformer or classifier ever run."""
    scores = {}
    for det in pipeline.detectors:
        s = detector_score(det, pipeline.classifier, pipeline.reformer, x)
        scores[det.label()] = s
        if s > det.threshold:
            return DefenseVerdict(outcome="rejected", rejected_by=det.label(),
                                  scores=scores)
    pipeline.classify_calls += 1
    label = int(pipeline.classifier.classify(pipeline.reform(x)))
    return DefenseVerdict(outcome="classified", label=label, scores=scores)


# ---------------------------------------------------------------------------
# pipeline config file: human-readable key-value lines


def save_pipeline_config(path, detectors, reformer_path: str, fp_rate: float,
                         temp_mode: str = "logits", ae_paths=None) -> None:
    """Write detector kinds, temperatures, thresholds and AE weight paths.

    ae_paths aligns with detectors; None entries fall back to the reformer's
    weight file (shared-AE detectors).
    """
    ae_paths = ae_paths or [None] * len(detectors)
    lines = [f"fp_rate = {fp_rate!r}", f"reformer = {reformer_path}",
             f"temp_mode = {temp_mode}"]
    for det, ae_path in zip(detectors, ae_paths):
        if det.kind == "jsd":
            spec = f"jsd {det.temperature:g}"
        else:
            spec = f"{det.kind} {ae_path or reformer_path}"
        thr = "inf" if math.isinf(det.threshold) else repr(det.threshold)
        lines.append(f"detector = {spec} threshold={thr}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def build_pipeline_from_file(path, classifier: Classifier) -> DefensePipeline:
    """Materialize a pipeline (AEs loaded from their weight files) from a
    saved config; thresholds in the file are kept as-is."""
    from .modelio import load_model
    from .nets import Autoencoder

    cfg = load_pipeline_config(path)
    if cfg["reformer"] is None:
        raise ValueError(f"pipeline config {path} names no reformer")
    reformer = Autoencoder(net=load_model(cfg["reformer"]))
    ae_cache = {cfg["reformer"]: reformer}
    detectors = []
    for d in cfg["detectors"]:
        if d["kind"] == "jsd":
            detectors.append(Detector(kind="jsd", temperature=d["temperature"],
                                      threshold=d["threshold"],
                                      temp_mode=cfg["temp_mode"]))
        else:
            ae_path = d["ae_path"]
            if ae_path not in ae_cache:
                ae_cache[ae_path] = Autoencoder(net=load_model(ae_path))
            detectors.append(Detector(kind=d["kind"], ae=ae_cache[ae_path],
                                      threshold=d["threshold"]))
    return DefensePipeline(classifier=classifier, detectors=detectors,
                           reformer=reformer, fp_rate=cfg["fp_rate"])


def load_pipeline_config(path) -> dict:
    """Parse the key-value pipeline file into a plain dict."""
    cfg = {"detectors": [], "fp_rate": 1e-3, "reformer": None, "temp_mode": "logits"}
    with open(path) as fh:
        for raw in fh:
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if key == "fp_rate":
                cfg["fp_rate"] = float(value)
            elif key == "reformer":
                cfg["reformer"] = value
            elif key == "temp_mode":
                cfg["temp_mode"] = value
            elif key == "detector":
                parts = value.split()
                kind, arg = parts[0], parts[1]
                thr = math.inf
                for extra in parts[2:]:
                    if extra.startswith("threshold="):
                        v = extra.split("=", 1)[1]
                        thr = math.inf if v == "inf" else float(v)
                if kind == "jsd":
                    cfg["detectors"].append({"kind": "jsd", "temperature": float(arg),
                                             "threshold": thr})
                else:
                    cfg["detectors"].append({"kind": kind, "ae_path": arg,
                                             "threshold": thr})
            else:
                raise ValueError(f"unknown pipeline config key {key!r}")
    return cfg
