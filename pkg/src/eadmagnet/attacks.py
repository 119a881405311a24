"""Elastic-net (EAD), C&W L2 and FGSM attacks against a plain classifier.

EAD minimizes  c*f(x,t) + ||x - x0||_2^2 + beta*||x - x0||_1  over the box
[0,1]^p with ISTA: a gradient step on the smooth part followed by the
pixel-wise projected shrinkage-thresholding operator. C&W L2 is the beta=0
special case. Attacks see only the classifier -- never a defense -- which is
what makes the evaluation protocol oblivious.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .nets import Classifier


class AttackAborted(RuntimeError):
    """Numeric failure (NaN gradient) while crafting one example."""


@dataclass(frozen=True)
class AttackConfig:
    beta: float = 1e-2                # L1 weight; 0 recovers C&W
    kappa: float = 0.0                # confidence margin in logit units
    targeted: bool = False
    target: int | None = None         # required when targeted
    iterations: int = 1000
    lr: float = 1e-2                  # initial step size
    binary_steps: int = 9
    initial_c: float = 1e-3
    rule: str = "en"                  # en | l1 | l2
    decay: bool = True                # sqrt step-size decay; False = constant
    record_iterates: bool = False     # keep every iterate of every c-run
    track_success_scores: bool = False

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if self.kappa < 0:
            raise ValueError("kappa must be >= 0")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.initial_c <= 0:
            raise ValueError("initial c must be positive")
        if self.binary_steps < 1:
            raise ValueError("binary search needs at least one step")
        if self.rule not in ("en", "l1", "l2"):
            raise ValueError(f"unknown decision rule {self.rule!r}")
        if self.targeted and self.target is None:
            raise ValueError("targeted attack needs a target class")


@dataclass
class Distortion:
    l1: float
    l2: float
    linf: float
    en: float


@dataclass
class AttackResult:
    success: bool
    x: np.ndarray | None
    predicted: int | None
    distortion: Distortion | None
    c_used: float | None
    iterations_run: int
    iterates: list[np.ndarray] = field(default_factory=list)
    success_scores: list[float] = field(default_factory=list)
    c_history: list[tuple[float, bool]] = field(default_factory=list)


def distortion_metrics(x: np.ndarray, x0: np.ndarray, beta: float = 0.0) -> Distortion:
    """L1/L2/Linf norms of x - x0 plus the elastic-net score beta*L1 + L2^2."""
    x = np.asarray(x, dtype=np.float64)
    x0 = np.asarray(x0, dtype=np.float64)
    if x.shape != x0.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {x0.shape}")
    d = (x - x0).reshape(-1)
    l1 = float(np.sum(np.abs(d)))
    l2 = float(np.sqrt(np.sum(d * d)))
    linf = float(np.max(np.abs(d))) if d.size else 0.0
    return Distortion(l1=l1, l2=l2, linf=linf, en=beta * l1 + l2 * l2)


def attack_loss_targeted(logits: np.ndarray, target: int, kappa: float) -> float:
    """max(max_{j != t} z_j - z_t, -kappa)."""
    return float(ad.attack_margin(Tensor(np.asarray(logits, dtype=np.float64)),
                                  target, kappa, targeted=True).data)


def attack_loss_untargeted(logits: np.ndarray, true_label: int, kappa: float) -> float:
    """max(z_{t0} - max_{j != t0} z_j, -kappa)."""
    return float(ad.attack_margin(Tensor(np.asarray(logits, dtype=np.float64)),
                                  true_label, kappa, targeted=False).data)


def shrink_threshold(z: np.ndarray, x0: np.ndarray, beta: float) -> np.ndarray:
    """Pixel-wise projected shrinkage-thresholding onto [0,1] around x0.

    Perturbations no larger than beta are zeroed (the dead zone); larger ones
    are shrunk by beta and clamped to the box.
    """
    z = np.asarray(z, dtype=np.float64)
    x0 = np.asarray(x0, dtype=np.float64)
    if z.shape != x0.shape:
        raise ValueError(f"shape mismatch: {z.shape} vs {x0.shape}")
    d = z - x0
    upper = np.minimum(z - beta, 1.0)
    lower = np.maximum(z + beta, 0.0)
    return np.where(d > beta, upper, np.where(d < -beta, lower, x0))


def _margin(logits: np.ndarray, label: int, targeted: bool) -> float:
    """Signed margin of the attack objective; >= kappa means full confidence."""
    masked = logits.copy()
    masked[label] = -np.inf
    m = float(masked.max())
    return logits[label] - m if targeted else m - logits[label]


def _smooth_gradient(model: Classifier, x: np.ndarray, x0: np.ndarray,
                     cfg: AttackConfig, c: float, label: int) -> tuple[np.ndarray, float]:
    """Gradient of g = c*f + ||x - x0||_2^2 at x, plus f's value."""
    tape = Tape()
    xt = Tensor(x[None, :])
    logits = model.logits_tensor(xt, tape)
    f = ad.attack_margin(logits, label, cfg.kappa, cfg.targeted, tape)
    l2 = ad.sum_squares_diff(xt, x0[None, :], tape)
    g = ad.add(ad.scale(f, c, tape), l2, tape)
    grad = tape.backward(g).wrt(xt)[0]
    if not np.all(np.isfinite(grad)):
        raise AttackAborted(f"NaN/Inf gradient at c={c}")
    return grad, float(f.data)


def ista_step(x_k: np.ndarray, x0: np.ndarray, model: Classifier,
              cfg: AttackConfig, k: int, c: float, label: int) -> np.ndarray:
    """One EAD iteration: x_{k+1} = S_beta(x_k - alpha_k * grad g(x_k))."""
    alpha = cfg.lr * math.sqrt(1.0 - k / cfg.iterations) if cfg.decay else cfg.lr
    grad, _ = _smooth_gradient(model, x_k, x0, cfg, c, label)
    return shrink_threshold(x_k - alpha * grad, x0, cfg.beta)


@dataclass
class _Best:
    score: float = math.inf
    x: np.ndarray | None = None
    c: float | None = None


def _rule_score(x: np.ndarray, x0: np.ndarray, cfg: AttackConfig) -> float:
    d = distortion_metrics(x, x0, cfg.beta)
    return {"en": d.en, "l1": d.l1, "l2": d.l2}[cfg.rule]


def ead_attack(model: Classifier, x0: np.ndarray, true_label: int,
               cfg: AttackConfig) -> AttackResult:
    """Craft one adversarial example, binary-searching the loss weight c.

    The caller guarantees x0 is correctly classified (the protocol attacks
    only such examples). Success requires the hinge to saturate, i.e. a full
    kappa logit margin, not mere misclassification. Among all successful
    iterates across every c run, the one minimizing the decision rule
    (elastic-net score or L1 distortion) is returned.
    """
    x0 = np.asarray(x0, dtype=np.float64).reshape(-1)
    if x0.min() < -1e-12 or x0.max() > 1 + 1e-12:
        raise ValueError("example pixels must lie in [0,1]")
    label = cfg.target if cfg.targeted else true_label
    lo, hi = 0.0, math.inf
    c = cfg.initial_c
    best = _Best()
    result = AttackResult(success=False, x=None, predicted=None, distortion=None,
                          c_used=None, iterations_run=0)
    for _ in range(cfg.binary_steps):
        run_success = False
        x = x0.copy()
        for k in range(cfg.iterations):
            x = ista_step(x, x0, model, cfg, k, c, label)
            result.iterations_run += 1
            if cfg.record_iterates:
                result.iterates.append(x.copy())
            logits = model.logits(x)
            if _margin(logits, label, cfg.targeted) >= cfg.kappa:
                run_success = True
                score = _rule_score(x, x0, cfg)
                if cfg.track_success_scores:
                    result.success_scores.append(score)
                if score < best.score:
                    best = _Best(score=score, x=x.copy(), c=c)
        result.c_history.append((c, run_success))
        if run_success:
            hi = c
        else:
            lo = c
        c = (lo + hi) / 2.0 if math.isfinite(hi) else c * 10.0
    if best.x is None:
        return result
    result.success = True
    result.x = best.x
    result.predicted = int(model.classify(best.x))
    result.distortion = distortion_metrics(best.x, x0, cfg.beta)
    result.c_used = best.c
    return result


def cw_attack(model: Classifier, x0: np.ndarray, true_label: int,
              cfg: AttackConfig) -> AttackResult:
    """C&W L2: EAD with beta forced to 0 and an L2 decision rule."""
    return ead_attack(model, x0, true_label, replace(cfg, beta=0.0, rule="l2"))


def fgsm_attack(model: Classifier, x0: np.ndarray, true_label: int,
                epsilon: float) -> AttackResult:
    """Single signed-gradient ascent step on the cross-entropy loss."""
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    x0 = np.asarray(x0, dtype=np.float64).reshape(-1)
    tape = Tape()
    xt = Tensor(x0[None, :])
    logits = model.logits_tensor(xt, tape)
    loss = ad.cross_entropy_logits(logits, np.array([true_label]), tape)
    grad = tape.backward(loss).wrt(xt)[0]
    if not np.all(np.isfinite(grad)):
        raise AttackAborted("NaN/Inf gradient in FGSM")
    x = np.clip(x0 + epsilon * np.sign(grad), 0.0, 1.0)
    predicted = int(model.classify(x))
    return AttackResult(success=predicted != true_label, x=x, predicted=predicted,
                        distortion=distortion_metrics(x, x0), c_used=None,
                        iterations_run=1)
