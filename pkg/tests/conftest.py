"""Shared fixtures: a trained digit world, disk-cached across test runs.

Real MNIST IDX files are used when EADMAGNET_MNIST_DIR points at them
(train-images-idx3-ubyte etc.); otherwise the deterministic surrogate digit
corpus stands in. Trained models are stored under tests/_cache as EADMB1
files keyed by a version tag, so repeat runs skip training; bump
_FIXTURE_VERSION after changing anything that affects training.
"""

import os
from pathlib import Path

import numpy as np
import pytest

from eadmagnet.data import load_mnist_idx, save_mnist_idx, synthetic_digits
from eadmagnet.modelio import load_model, save_model
from eadmagnet.nets import (Autoencoder, Classifier, build_autoencoder,
                            build_classifier)
from eadmagnet.train import TrainConfig, train_autoencoder, train_classifier

_FIXTURE_VERSION = "v2"
_CACHE = Path(__file__).parent / "_cache"

N_TRAIN = 10000
N_TEST = 2000
CLF_EPOCHS = 6
AE_EPOCHS = 12


def _digit_datasets():
    mnist_dir = os.environ.get("EADMAGNET_MNIST_DIR")
    if mnist_dir:
        d = Path(mnist_dir)
        train = load_mnist_idx(d / "train-images-idx3-ubyte",
                               d / "train-labels-idx1-ubyte")
        test = load_mnist_idx(d / "t10k-images-idx3-ubyte",
                              d / "t10k-labels-idx1-ubyte")
        return train.take(N_TRAIN), test.take(N_TEST), "mnist"
    _CACHE.mkdir(exist_ok=True)
    tag = f"digits_{_FIXTURE_VERSION}_{N_TRAIN}_{N_TEST}"
    paths = {name: _CACHE / f"{tag}-{name}" for name in
             ("train-img", "train-lab", "test-img", "test-lab")}
    if not all(p.exists() for p in paths.values()):
        train, test = synthetic_digits(n_train=N_TRAIN, n_test=N_TEST, seed=0)
        save_mnist_idx(paths["train-img"], paths["train-lab"],
                       train.images, train.labels)
        save_mnist_idx(paths["test-img"], paths["test-lab"],
                       test.images, test.labels)
    train = load_mnist_idx(paths["train-img"], paths["train-lab"])
    test = load_mnist_idx(paths["test-img"], paths["test-lab"])
    return train, test, "digits"


def _cached_model(name, build_and_train):
    _CACHE.mkdir(exist_ok=True)
    path = _CACHE / f"{name}_{_FIXTURE_VERSION}.eadmb"
    if path.exists():
        return load_model(path)
    net = build_and_train()
    save_model(path, net)
    return net


@pytest.fixture(scope="session")
def digit_world():
    train, test, source = _digit_datasets()
    tr_x, tr_y = train.images[:9000], train.labels[:9000]
    val_x = train.images[9000:]

    def train_clf():
        model = build_classifier((28, 28, 1), k=10, seed=0)
        train_classifier(model, tr_x, tr_y,
                         TrainConfig(epochs=CLF_EPOCHS, batch_size=64, lr=0.05,
                                     seed=0))
        return model.net

    def train_ae(arch, seed):
        def inner():
            ae = build_autoencoder((28, 28, 1), arch=arch, filters=3, seed=seed)
            train_autoencoder(ae, tr_x,
                              TrainConfig(epochs=AE_EPOCHS, batch_size=64,
                                          lr=1.0, seed=seed))
            return ae.net
        return inner

    model = Classifier(net=_cached_model(f"{source}_clf", train_clf), k=10)
    ae1 = Autoencoder(net=_cached_model(f"{source}_ae1",
                                        train_ae("mnist_reformer", 1)))
    ae2 = Autoencoder(net=_cached_model(f"{source}_ae2",
                                        train_ae("mnist_detector2", 2)))
    return {
        "source": source,
        "model": model,
        "reformer": ae1,
        "detector2": ae2,
        "train_x": tr_x,
        "train_y": tr_y,
        "val_x": val_x,
        "test_x": test.images,
        "test_y": test.labels,
        "cache_dir": str(_CACHE / f"adv_{_FIXTURE_VERSION}"),
    }
