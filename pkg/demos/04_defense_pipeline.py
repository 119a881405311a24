"""The serial two-stage defense: detectors first, reformer second.

Trains the classifier, two narrow autoencoders and a calibrated pipeline on
a reduced corpus, then walks one clean digit, one noise image and one
adversarial digit through it, printing every detector score and the verdict.
"""

import numpy as np

from eadmagnet.attacks import AttackConfig, ead_attack
from eadmagnet.data import synthetic_digits
from eadmagnet.defense import DefensePipeline, Detector, defend_classify
from eadmagnet.nets import build_autoencoder, build_classifier
from eadmagnet.train import TrainConfig, train_autoencoder, train_classifier

train, test = synthetic_digits(n_train=3000, n_test=300, seed=0)
tr_x, val_x = train.images[:2700], train.images[2700:]

print("training classifier and autoencoders (a few minutes)...")
model = build_classifier((28, 28, 1), k=10, seed=0)
train_classifier(model, tr_x, train.labels[:2700],
                 TrainConfig(epochs=4, batch_size=64, lr=0.05, seed=0))
reformer = build_autoencoder((28, 28, 1), arch="mnist_reformer", filters=3,
                             seed=1)
train_autoencoder(reformer, tr_x, TrainConfig(epochs=8, lr=1.0, seed=1))
detector2 = build_autoencoder((28, 28, 1), arch="mnist_detector2", filters=3,
                              seed=2)
train_autoencoder(detector2, tr_x, TrainConfig(epochs=8, lr=1.0, seed=2))

pipe = DefensePipeline(
    classifier=model,
    detectors=[Detector(kind="recon-l1", ae=reformer),
               Detector(kind="recon-l2", ae=detector2),
               Detector(kind="jsd", temperature=10.0),
               Detector(kind="jsd", temperature=40.0)],
    reformer=reformer)
pipe.calibrate(val_x, fp_rate=0.005)
for d in pipe.detectors:
    print(f"  threshold {d.label():<12} = {d.threshold:.6f}")


def walk(x, label, title):
    v = defend_classify(pipe, x)
    print(f"\n{title}")
    for k, s in v.scores.items():
        print(f"  score {k:<12} = {s:.6f}")
    if v.outcome == "rejected":
        print(f"  -> REJECTED by {v.rejected_by}")
    else:
        print(f"  -> classified as {v.label} (true {label})")


x0, y0 = test.images[0], int(test.labels[0])
walk(x0, y0, "clean digit:")
walk(np.random.default_rng(1).uniform(size=784), "-",
     "uniform noise (far off the data manifold):")

print("\ncrafting an adversarial digit against the bare classifier...")
res = ead_attack(model, x0, y0, AttackConfig(beta=1e-2, kappa=10.0,
                                             iterations=200, lr=0.01,
                                             binary_steps=5, rule="en"))
if res.success:
    walk(res.x, y0, f"EAD adversarial digit (bare-model class {res.predicted}):")
else:
    print("attack found no success at any c")
