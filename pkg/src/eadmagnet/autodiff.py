"""Minimal reverse-mode autodiff over float64 numpy arrays.

Everything is dense, single-threaded and deterministic. A forward pass
optionally records onto a Tape (a Wengert list); Tape.backward replays the
list once in reverse and returns the gradients of a scalar output with
respect to every participating tensor. Distinct tapes over shared read-only
tensors are safe to run concurrently because gradients live in the Grads
object returned by backward, never on the tensors themselves.
"""

from __future__ import annotations

import os

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

_CHECK_FINITE = bool(os.environ.get("EADMAGNET_CHECK_FINITE"))


class Tensor:
    """A float64 ndarray with identity, so tapes can key gradients by node."""

    __slots__ = ("data",)

    def __init__(self, data):
        arr = np.asarray(data, dtype=np.float64)
        # ascontiguousarray would promote 0-d scalars to shape (1,)
        self.data = arr if arr.flags["C_CONTIGUOUS"] else np.ascontiguousarray(arr)

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def copy(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self):
        return f"Tensor(shape={self.data.shape})"


class _Record:
    __slots__ = ("out", "inputs", "vjp")

    def __init__(self, out, inputs, vjp):
        self.out = out
        self.inputs = inputs
        self.vjp = vjp  # ndarray cotangent of out -> tuple of input cotangents


class Grads:
    """Gradients keyed by tensor identity; zeros for non-participants."""

    def __init__(self, table, keep_alive):
        self._table = table
        self._keep_alive = keep_alive  # pins recorded tensors so ids stay valid

    def wrt(self, t: Tensor) -> np.ndarray:
        g = self._table.get(id(t))
        if g is None:
            return np.zeros_like(t.data)
        return g


class Tape:
    """Recorded forward operations plus the saved values their VJPs need."""

    def __init__(self):
        self._records: list[_Record] = []
        self.last_replay_count = 0

    def __len__(self):
        return len(self._records)

    def _record(self, out, inputs, vjp):
        self._records.append(_Record(out, inputs, vjp))

    def backward(self, out: Tensor) -> Grads:
        """Reverse sweep from a scalar output; touches each record once."""
        if out.data.size != 1:
            raise ValueError(f"backward needs a scalar output, got shape {out.data.shape}")
        table: dict[int, np.ndarray] = {id(out): np.ones_like(out.data)}
        self.last_replay_count = 0
        for rec in reversed(self._records):
            self.last_replay_count += 1
            og = table.get(id(rec.out))
            if og is None:
                continue
            for inp, gi in zip(rec.inputs, rec.vjp(og)):
                if gi is None:
                    continue
                acc = table.get(id(inp))
                # rebind instead of += : vjps may return views of the cotangent
                table[id(inp)] = gi if acc is None else acc + gi
        return Grads(table, self._records)


def backward_grad(tape: Tape, out: Tensor) -> Grads:
    """Gradient of a recorded scalar output w.r.t. every tape input."""
    return tape.backward(out)


def _finite(a: np.ndarray, what: str) -> np.ndarray:
    if _CHECK_FINITE and not np.all(np.isfinite(a)):
        raise FloatingPointError(f"non-finite values after {what}")
    return a


# ---------------------------------------------------------------------------
# elementwise / shape ops — all take and return (n, ...) batched Tensors


def relu(x: Tensor, tape: Tape | None = None) -> Tensor:
    out = Tensor(np.maximum(x.data, 0.0))
    if tape is not None:
        mask = x.data > 0
        tape._record(out, (x,), lambda g: (g * mask,))
    return out


def sigmoid(x: Tensor, tape: Tape | None = None) -> Tensor:
    # piecewise form never overflows exp
    d = x.data
    s = np.empty_like(d)
    pos = d >= 0
    s[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    e = np.exp(d[~pos])
    s[~pos] = e / (1.0 + e)
    out = Tensor(_finite(s, "sigmoid"))
    if tape is not None:
        tape._record(out, (x,), lambda g: (g * s * (1.0 - s),))
    return out


def flatten(x: Tensor, tape: Tape | None = None) -> Tensor:
    """(n, ...) -> (n, p)."""
    n = x.data.shape[0]
    out = Tensor(x.data.reshape(n, -1))
    if tape is not None:
        shape = x.data.shape
        tape._record(out, (x,), lambda g: (g.reshape(shape),))
    return out


def reshape(x: Tensor, shape, tape: Tape | None = None) -> Tensor:
    out = Tensor(x.data.reshape(shape))
    if tape is not None:
        old = x.data.shape
        tape._record(out, (x,), lambda g: (g.reshape(old),))
    return out


def add(a: Tensor, b: Tensor, tape: Tape | None = None) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ValueError("add: shape mismatch")
    out = Tensor(a.data + b.data)
    if tape is not None:
        tape._record(out, (a, b), lambda g: (g, g))
    return out


def scale(x: Tensor, s: float, tape: Tape | None = None) -> Tensor:
    out = Tensor(x.data * s)
    if tape is not None:
        tape._record(out, (x,), lambda g: (g * s,))
    return out


# ---------------------------------------------------------------------------
# dense / convolutional layers


def dense(x: Tensor, w: Tensor, b: Tensor, tape: Tape | None = None) -> Tensor:
    """x (n, fin) @ w (fin, fout) + b (fout,)."""
    if x.data.ndim != 2 or x.data.shape[1] != w.data.shape[0]:
        raise ValueError(f"dense: input {x.data.shape} does not match weight {w.data.shape}")
    out = Tensor(x.data @ w.data + b.data)
    if tape is not None:
        xd, wd = x.data, w.data
        tape._record(
            out,
            (x, w, b),
            lambda g: (g @ wd.T, xd.T @ g, g.sum(axis=0)),
        )
    return out


def _pad_same(x: np.ndarray, k: int) -> np.ndarray:
    p = k // 2
    n, h, w, c = x.shape
    xp = np.zeros((n, h + 2 * p, w + 2 * p, c), dtype=np.float64)
    xp[:, p : p + h, p : p + w, :] = x
    return xp


def _im2col(x: np.ndarray, k: int) -> np.ndarray:
    """(n,h,w,c) -> (n*h*w, k*k*c) patches under same zero padding."""
    n, h, w, c = x.shape
    xp = _pad_same(x, k)
    win = sliding_window_view(xp, (k, k), axis=(1, 2))  # (n,h,w,c,k,k)
    return np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(n * h * w, k * k * c)


def _conv_raw(x: np.ndarray, kern: np.ndarray, bias: np.ndarray | None):
    n, h, w, _ = x.shape
    k = kern.shape[0]
    cout = kern.shape[3]
    cols = _im2col(x, k)
    y = cols @ kern.reshape(-1, cout)
    if bias is not None:
        y += bias
    return y.reshape(n, h, w, cout), cols


def _col2im(gcols: np.ndarray, shape, k: int) -> np.ndarray:
    """Scatter (n*h*w, k*k*c) patch gradients back onto the padded image."""
    n, h, w, c = shape
    p = k // 2
    gx = np.zeros((n, h + 2 * p, w + 2 * p, c), dtype=np.float64)
    g6 = gcols.reshape(n, h, w, k, k, c)
    for di in range(k):
        for dj in range(k):
            gx[:, di : di + h, dj : dj + w, :] += g6[:, :, :, di, dj, :]
    return gx[:, p : p + h, p : p + w, :]


def conv2d(x: Tensor, kern: Tensor, bias: Tensor | None = None, tape: Tape | None = None) -> Tensor:
    """Stride-1 'same' zero-padded convolution; kern (k, k, cin, cout)."""
    if x.data.ndim != 4:
        raise ValueError(f"conv2d: expected (n,h,w,c) input, got {x.data.shape}")
    k = kern.data.shape[0]
    if k % 2 == 0 or kern.data.shape[1] != k:
        raise ValueError(f"conv2d: kernel spatial size must be square and odd, got {kern.data.shape[:2]}")
    if kern.data.shape[2] != x.data.shape[3]:
        raise ValueError(
            f"conv2d: input channels {x.data.shape[3]} != kernel channels {kern.data.shape[2]}"
        )
    y, cols = _conv_raw(x.data, kern.data, bias.data if bias is not None else None)
    out = Tensor(_finite(y, "conv2d"))
    if tape is not None:
        kshape = kern.data.shape
        kmat = kern.data.reshape(-1, kshape[3])
        xshape = x.data.shape

        def vjp(g):
            gf = g.reshape(-1, kshape[3])
            gx = _col2im(gf @ kmat.T, xshape, k)
            gk = (cols.T @ gf).reshape(kshape)
            gb = None if bias is None else g.sum(axis=(0, 1, 2))
            return (gx, gk, gb) if bias is not None else (gx, gk)

        tape._record(out, (x, kern, bias) if bias is not None else (x, kern), vjp)
    return out


def avgpool2x2(x: Tensor, tape: Tape | None = None) -> Tensor:
    n, h, w, c = x.data.shape
    if h % 2 or w % 2:
        raise ValueError(f"avgpool2x2: spatial dims must be even, got {h}x{w}")
    blocks = x.data.reshape(n, h // 2, 2, w // 2, 2, c)
    out = Tensor(blocks.mean(axis=(2, 4)))
    if tape is not None:

        def vjp(g):
            ge = np.repeat(np.repeat(g, 2, axis=1), 2, axis=2) * 0.25
            return (ge,)

        tape._record(out, (x,), vjp)
    return out


def upsample2x2(x: Tensor, tape: Tape | None = None) -> Tensor:
    """Nearest-neighbour 2x2 replication."""
    out = Tensor(np.repeat(np.repeat(x.data, 2, axis=1), 2, axis=2))
    if tape is not None:
        n, h, w, c = x.data.shape

        def vjp(g):
            return (g.reshape(n, h, 2, w, 2, c).sum(axis=(2, 4)),)

        tape._record(out, (x,), vjp)
    return out


# ---------------------------------------------------------------------------
# probability / loss heads


def softmax(z: np.ndarray) -> np.ndarray:
    """Stable softmax along the last axis; forward only."""
    z = np.asarray(z, dtype=np.float64)
    if z.size == 0:
        raise ValueError("softmax: empty input")
    if not np.all(np.isfinite(z)):
        raise ValueError("softmax: non-finite logits")
    m = z.max(axis=-1, keepdims=True)
    e = np.exp(z - m)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy_logits(logits: Tensor, labels: np.ndarray, tape: Tape | None = None) -> Tensor:
    """Mean softmax cross-entropy of (n, K) logits against integer labels.

    Non-finite logits yield a non-finite loss rather than raising, so
    training loops can abort with their own diagnostic.
    """
    z = logits.data
    n = z.shape[0]
    m = z.max(axis=1, keepdims=True)
    with np.errstate(invalid="ignore", over="ignore"):
        e = np.exp(z - m)
        lse = m[:, 0] + np.log(e.sum(axis=1))
        p = e / e.sum(axis=1, keepdims=True)
    out = Tensor(np.mean(lse - z[np.arange(n), labels]))
    if tape is not None:

        def vjp(g):
            gz = p.copy()
            gz[np.arange(n), labels] -= 1.0
            return (gz * (g / n),)

        tape._record(out, (logits,), vjp)
    return out


def mean_squared_error(x: Tensor, target: np.ndarray, tape: Tape | None = None) -> Tensor:
    d = x.data - target
    out = Tensor(np.mean(d * d))
    if tape is not None:
        scale_ = 2.0 / d.size
        tape._record(out, (x,), lambda g: (g * scale_ * d,))
    return out


def mean_absolute_error(x: Tensor, target: np.ndarray, tape: Tape | None = None) -> Tensor:
    d = x.data - target
    out = Tensor(np.mean(np.abs(d)))
    if tape is not None:
        sgn = np.sign(d) / d.size
        tape._record(out, (x,), lambda g: (g * sgn,))
    return out


def sum_squares_diff(x: Tensor, ref: np.ndarray, tape: Tape | None = None) -> Tensor:
    """||x - ref||_2^2 with ref held constant."""
    d = x.data - ref
    out = Tensor(np.array(np.sum(d * d)))
    if tape is not None:
        tape._record(out, (x,), lambda g: (g * 2.0 * d,))
    return out


def attack_margin(
    logits: Tensor,
    label: int,
    kappa: float,
    targeted: bool,
    tape: Tape | None = None,
) -> Tensor:
    """Hinge margin loss over a single example's logits.

    targeted:   max(max_{j != t} z_j - z_t, -kappa) with t = label
    untargeted: max(z_{t0} - max_{j != t0} z_j, -kappa) with t0 = label

    The subgradient is zero once the hinge saturates at -kappa; the max over
    classes breaks ties toward the lowest class index.
    """
    z = logits.data.reshape(-1)
    k = z.shape[0]
    if k < 2:
        raise ValueError("attack_margin: need at least 2 classes")
    if not 0 <= label < k:
        raise ValueError(f"attack_margin: label {label} out of range for {k} classes")
    if kappa < 0:
        raise ValueError("attack_margin: kappa must be >= 0")
    masked = z.copy()
    masked[label] = -np.inf
    j = int(np.argmax(masked))  # argmax breaks ties toward the lowest index
    inner = masked[j] - z[label] if targeted else z[label] - masked[j]
    out = Tensor(np.array(max(inner, -kappa)))
    if tape is not None:
        active = inner > -kappa
        shape = logits.data.shape

        def vjp(g):
            gz = np.zeros(k)
            if active:
                if targeted:
                    gz[j], gz[label] = 1.0, -1.0
                else:
                    gz[label], gz[j] = 1.0, -1.0
            return (float(g) * gz.reshape(shape),)

        tape._record(out, (logits,), vjp)
    return out


# ---------------------------------------------------------------------------
# numeric gradient oracle (independent of the tape machinery)


def numeric_gradient(f, x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function, coordinate by coordinate."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = f(x)
        flat[i] = orig - step
        fm = f(x)
        flat[i] = orig
        gf[i] = (fp - fm) / (2.0 * step)
    return g
