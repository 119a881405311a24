"""On-disk formats: EADMB1 network weights and EADADV1 adversarial caches.

Both are little-endian. The weight file is magic, layer count, then one
descriptor per layer (kind tag + shape ints) followed by that layer's raw
float64 weights, exactly in chain order. Writes are atomic
(write-temp-then-rename) so interrupted runs never leave partial files.
"""

from __future__ import annotations

import os
import struct
import tempfile

import numpy as np

from .nets import LAYER_KINDS, LayerSpec, Network, build_network

MODEL_MAGIC = b"EADMB1"
ADV_MAGIC = b"EADADV1"

_KIND_TAG = {kind: i + 1 for i, kind in enumerate(LAYER_KINDS)}
_TAG_KIND = {v: k for k, v in _KIND_TAG.items()}


class ModelFormatError(ValueError):
    """Weight file violates the EADMB1 layout."""


def _atomic_write(path, payload: bytes) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_model(path, net: Network) -> None:
    parts = [MODEL_MAGIC, struct.pack("<I", len(net.layers))]
    parts.append(struct.pack("<III", *(_shape3(net.input_shape))))
    for layer in net.layers:
        tag = _KIND_TAG[layer.kind]
        if layer.kind == "dense":
            w, b = layer.w.data, layer.b.data
            parts.append(struct.pack("<BII", tag, w.shape[0], w.shape[1]))
            parts.append(w.astype("<f8").tobytes())
            parts.append(b.astype("<f8").tobytes())
        elif layer.kind == "conv2d":
            k = layer.kern.data
            parts.append(struct.pack("<BIII", tag, k.shape[0], k.shape[2], k.shape[3]))
            parts.append(k.astype("<f8").tobytes())
            parts.append(layer.b.data.astype("<f8").tobytes())
        else:
            parts.append(struct.pack("<B", tag))
    _atomic_write(path, b"".join(parts))


def _shape3(shape) -> tuple[int, int, int]:
    if len(shape) == 3:
        return tuple(int(s) for s in shape)
    return (int(shape[0]), 1, 1)


class _Reader:
    def __init__(self, fh):
        self.fh = fh

    def take(self, fmt: str):
        size = struct.calcsize(fmt)
        buf = self.fh.read(size)
        if len(buf) != size:
            raise ModelFormatError("truncated weight file")
        return struct.unpack(fmt, buf)

    def floats(self, count: int) -> np.ndarray:
        buf = self.fh.read(8 * count)
        if len(buf) != 8 * count:
            raise ModelFormatError("truncated weight block")
        return np.frombuffer(buf, dtype="<f8").copy()


def load_model(path) -> Network:
    with open(path, "rb") as fh:
        magic = fh.read(len(MODEL_MAGIC))
        if magic != MODEL_MAGIC:
            raise ModelFormatError(
                f"bad magic {magic!r} in {path} (expected {MODEL_MAGIC!r})")
        rd = _Reader(fh)
        (n_layers,) = rd.take("<I")
        h, w, c = rd.take("<III")
        input_shape = (h, w, c) if (w, c) != (1, 1) else (h,)
        specs, weights = [], []
        for _ in range(n_layers):
            (tag,) = rd.take("<B")
            kind = _TAG_KIND.get(tag)
            if kind is None:
                raise ModelFormatError(f"unknown layer tag {tag}")
            if kind == "dense":
                fin, fout = rd.take("<II")
                specs.append(LayerSpec("dense", units=fout))
                weights.append((rd.floats(fin * fout).reshape(fin, fout),
                                rd.floats(fout)))
            elif kind == "conv2d":
                ksize, cin, cout = rd.take("<III")
                specs.append(LayerSpec("conv2d", ksize=ksize, filters=cout))
                weights.append((rd.floats(ksize * ksize * cin * cout)
                                .reshape(ksize, ksize, cin, cout),
                                rd.floats(cout)))
            else:
                specs.append(LayerSpec(kind))
                weights.append(None)
        if fh.read(1):
            raise ModelFormatError("trailing bytes after final layer")
    net = build_network(specs, input_shape, seed=0)
    for layer, wt in zip(net.layers, weights):
        if wt is None:
            continue
        if layer.kind == "dense":
            if layer.w.data.shape != wt[0].shape:
                raise ModelFormatError("dense weight shape inconsistent with chain")
            layer.w.data, layer.b.data = wt
        else:
            if layer.kern.data.shape != wt[0].shape:
                raise ModelFormatError("conv weight shape inconsistent with chain")
            layer.kern.data, layer.b.data = wt
    return net


# ---------------------------------------------------------------------------
# adversarial example cache: one file per sweep cell


def save_adversarial_cache(path, entries, pixel_count: int) -> None:
    """entries: iterable of (index, success, pixels-or-None)."""
    parts = [ADV_MAGIC]
    entries = list(entries)
    parts.append(struct.pack("<II", len(entries), pixel_count))
    for index, success, pixels in entries:
        parts.append(struct.pack("<IB", index, 1 if success else 0))
        if pixels is None:
            pixels = np.zeros(pixel_count)
        parts.append(np.asarray(pixels, dtype="<f8").tobytes())
    _atomic_write(path, b"".join(parts))


def load_adversarial_cache(path):
    """Returns list of (index, success, pixels|None)."""
    with open(path, "rb") as fh:
        magic = fh.read(len(ADV_MAGIC))
        if magic != ADV_MAGIC:
            raise ModelFormatError(f"bad magic {magic!r} in adversarial cache {path}")
        rd = _Reader(fh)
        count, p = rd.take("<II")
        out = []
        for _ in range(count):
            index, success = rd.take("<IB")
            pixels = rd.floats(p)
            out.append((index, bool(success), pixels if success else None))
    return out
