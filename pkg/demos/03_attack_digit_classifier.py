"""Craft sparse and dense adversarial digits against a small conv net.

Trains on a reduced corpus for speed (a couple of minutes), then renders one
clean digit next to its EAD and C&W adversarial versions. The EAD
perturbation touches a handful of pixels; the C&W one is a faint haze over
many.
"""

import numpy as np

from eadmagnet.attacks import AttackConfig, cw_attack, ead_attack
from eadmagnet.data import synthetic_digits
from eadmagnet.nets import build_classifier
from eadmagnet.train import TrainConfig, train_classifier


def show(img, title):
    print(title)
    for row in img.reshape(28, 28)[1::2]:
        print("".join(" .:*#"[min(int(v * 5), 4)] for v in row))


train, test = synthetic_digits(n_train=3000, n_test=300, seed=0)
model = build_classifier((28, 28, 1), k=10, seed=0)
print("training classifier on 3000 digits...")
train_classifier(model, train.images, train.labels,
                 TrainConfig(epochs=4, batch_size=64, lr=0.05, seed=0))
acc = model.accuracy(test.images, test.labels)
print(f"test accuracy {acc:.3f}")

# pick one correctly classified digit
idx = next(i for i in range(len(test)) if model.classify(test.images[i])
           == test.labels[i])
x0, y0 = test.images[idx], int(test.labels[idx])
show(x0, f"\nclean digit (class {y0}):")

cfg = AttackConfig(beta=1e-2, kappa=5.0, iterations=200, lr=0.01,
                   binary_steps=5, rule="en")
ead = ead_attack(model, x0, y0, cfg)
cw = cw_attack(model, x0, y0, cfg)

for name, res in (("EAD", ead), ("C&W", cw)):
    if not res.success:
        print(f"{name}: no success at any c")
        continue
    d = res.distortion
    changed = int(np.sum(np.abs(res.x - x0) > 1e-6))
    print(f"\n{name}: class {y0} -> {res.predicted}  "
          f"L1 {d.l1:.2f}  L2 {d.l2:.2f}  Linf {d.linf:.2f}  "
          f"pixels touched {changed}/784")
    show(np.abs(res.x - x0) * 3, f"{name} |perturbation| (amplified):")
