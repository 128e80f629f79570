"""Dense float64 tensors with tape-based reverse-mode differentiation.

Everything is numpy under the hood; the tape records one backward closure
per primitive op, in forward order. There is no broadcasting except
scalar-scale and the dedicated bias/mask helpers, which keeps shape bugs
loud.
"""

import math

import numpy as np

# When True, every op output is checked for NaN/Inf and raises.
DEBUG_CHECKS = False

_active_tape = None


class Tape:
    """Recorded graph for one forward/backward cycle."""

    def __init__(self):
        self._records = []  # (output Tensor, backward closure)
        self._spent = False

    def __enter__(self):
        global _active_tape
        if _active_tape is not None:
            raise RuntimeError("nested tapes are not supported")
        _active_tape = self
        return self

    def __exit__(self, *exc):
        global _active_tape
        _active_tape = None
        return False

    def _record(self, out, backward_fn):
        self._records.append((out, backward_fn))


class Tensor:
    __slots__ = ("data", "grad")

    def __init__(self, data):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape})"

    def _accum(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g


def _out(data, backward_fn):
    if DEBUG_CHECKS and not np.all(np.isfinite(data)):
        raise FloatingPointError("non-finite value produced by op")
    t = Tensor(data)
    if _active_tape is not None:
        _active_tape._record(t, backward_fn)
    return t


def constant(data):
    return Tensor(data)


# ---------------------------------------------------------------------------
# primitives

def matmul(a, b):
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.data.shape} x {b.data.shape}")
    ad, bd = a.data, b.data

    def bw(g):
        a._accum(g @ bd.T)
        b._accum(ad.T @ g)

    return _out(ad @ bd, bw)


def _binary(a, b, fd, bwa, bwb):
    if a.data.shape != b.data.shape:
        raise ValueError(f"shape mismatch: {a.data.shape} vs {b.data.shape}")

    def bw(g):
        a._accum(bwa(g))
        b._accum(bwb(g))

    return _out(fd(a.data, b.data), bw)


def add(a, b):
    return _binary(a, b, np.add, lambda g: g, lambda g: g)


def sub(a, b):
    return _binary(a, b, np.subtract, lambda g: g, lambda g: -g)


def mul(a, b):
    ad, bd = a.data, b.data
    return _binary(a, b, np.multiply, lambda g: g * bd, lambda g: g * ad)


def tanh(a):
    y = np.tanh(a.data)
    return _out(y, lambda g: a._accum(g * (1.0 - y * y)))


def sigmoid(a):
    y = 1.0 / (1.0 + np.exp(-a.data))
    return _out(y, lambda g: a._accum(g * y * (1.0 - y)))


def exp(a):
    y = np.exp(a.data)
    return _out(y, lambda g: a._accum(g * y))


def log(a):
    if np.any(a.data <= 0.0):
        raise ValueError("log of non-positive value")
    ad = a.data
    return _out(np.log(ad), lambda g: a._accum(g / ad))


def scale(a, c):
    c = float(c)
    return _out(a.data * c, lambda g: a._accum(g * c))


def add_bias(a, b):
    """Add a 1-D bias to every row of a 2-D tensor."""
    if a.data.ndim != 2 or b.data.ndim != 1 or a.data.shape[1] != b.data.shape[0]:
        raise ValueError(f"add_bias shape mismatch: {a.data.shape} + {b.data.shape}")

    def bw(g):
        a._accum(g)
        b._accum(g.sum(axis=0))

    return _out(a.data + b.data, bw)


def cmul(a, const):
    """Elementwise multiply by a constant array (no gradient through const)."""
    const = np.asarray(const, dtype=np.float64)
    if const.shape != a.data.shape:
        raise ValueError(f"cmul shape mismatch: {a.data.shape} vs {const.shape}")
    return _out(a.data * const, lambda g: a._accum(g * const))


def log_softmax(a):
    """Log-softmax over the last axis, stabilized by max subtraction."""
    x = a.data
    m = x.max(axis=-1, keepdims=True)
    z = x - m
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    y = z - lse

    def bw(g):
        a._accum(g - np.exp(y) * g.sum(axis=-1, keepdims=True))

    return _out(y, bw)


def lookup(table, ids):
    """Select rows of a 2-D table by integer index (embedding lookup)."""
    ids = np.asarray(ids, dtype=np.intp)
    if np.any(ids < 0) or np.any(ids >= table.data.shape[0]):
        raise IndexError("lookup index out of range")

    def bw(g):
        if table.grad is None:
            table.grad = np.zeros_like(table.data)
        np.add.at(table.grad, ids, g)

    return _out(table.data[ids], bw)


def pick(a, ids):
    """a[(i, ids[i])] for a 2-D tensor; returns a 1-D tensor."""
    ids = np.asarray(ids, dtype=np.intp)
    rows = np.arange(a.data.shape[0])

    def bw(g):
        if a.grad is None:
            a.grad = np.zeros_like(a.data)
        np.add.at(a.grad, (rows, ids), g)

    return _out(a.data[rows, ids], bw)


def concat_cols(a, b):
    if a.data.shape[0] != b.data.shape[0]:
        raise ValueError("concat_cols row mismatch")
    na = a.data.shape[1]

    def bw(g):
        a._accum(g[:, :na])
        b._accum(g[:, na:])

    return _out(np.concatenate([a.data, b.data], axis=1), bw)


def slice_cols(a, lo, hi):
    def bw(g):
        if a.grad is None:
            a.grad = np.zeros_like(a.data)
        a.grad[:, lo:hi] += g

    return _out(a.data[:, lo:hi].copy(), bw)


def stack_rows(rows):
    """Stack 1xH tensors into a TxH tensor."""

    def bw(g):
        for i, r in enumerate(rows):
            r._accum(g[i : i + 1, :])

    return _out(np.concatenate([r.data for r in rows], axis=0), bw)


def transpose(a):
    return _out(a.data.T.copy(), lambda g: a._accum(g.T))


def ssum(a):
    shp = a.data.shape
    return _out(a.data.sum(), lambda g: a._accum(np.full(shp, g)))


# ---------------------------------------------------------------------------
# parameters and backward

class Parameters:
    """Named collection of parameter tensors (model weights)."""

    def __init__(self, tensors):
        self._tensors = dict(tensors)

    def names(self):
        return list(self._tensors)

    def items(self):
        return self._tensors.items()

    def __getitem__(self, name):
        return self._tensors[name]

    def __contains__(self, name):
        return name in self._tensors

    def __len__(self):
        return len(self._tensors)

    def clone(self):
        return Parameters({k: Tensor(v.data.copy()) for k, v in self._tensors.items()})

    def num_values(self):
        return sum(v.data.size for v in self._tensors.values())


def l2_distance(a, b):
    """Euclidean norm over the concatenation of all parameter differences."""
    if a.names() != b.names():
        raise ValueError("mismatched parameter sets")
    total = 0.0
    for name, ta in a.items():
        tb = b[name]
        if ta.data.shape != tb.data.shape:
            raise ValueError(f"shape mismatch for parameter {name}")
        d = ta.data - tb.data
        total += float((d * d).sum())
    return math.sqrt(total)


def backward(root, tape, params):
    """Gradients of a scalar root w.r.t. every parameter; consumes the tape.

    Parameters untouched by the recorded graph get exact zeros.
    """
    if root.data.shape != ():
        raise ValueError("backward root must be a scalar")
    if tape._spent:
        raise RuntimeError("tape already consumed")
    tape._spent = True
    root.grad = np.ones(())
    for out, fn in reversed(tape._records):
        if out.grad is not None:
            fn(out.grad)
    grads = {}
    for name, p in params.items():
        grads[name] = p.grad if p.grad is not None else np.zeros_like(p.data)
        p.grad = None
    for out, _ in tape._records:
        out.grad = None
    return grads


def check_gradients(f, params, h=1e-5):
    """Max relative error between analytic and central-difference gradients.

    f() must rebuild the forward pass from the current parameter values and
    return a scalar Tensor.
    """
    with Tape() as tape:
        loss = f()
    analytic = backward(loss, tape, params)
    worst = 0.0
    for name, p in params.items():
        flat = p.data.reshape(-1)
        ga = analytic[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = f().item()
            flat[i] = orig - h
            dn = f().item()
            flat[i] = orig
            fd = (up - dn) / (2.0 * h)
            err = abs(ga[i] - fd) / max(1.0, abs(ga[i]))
            worst = max(worst, err)
    return worst


# ---------------------------------------------------------------------------
# optimizers

class Sgd:
    def __init__(self, lr):
        self.lr = lr

    def step(self, params, grads):
        for name, p in params.items():
            if name not in grads:
                raise KeyError(f"missing gradient for {name}")
            p.data -= self.lr * grads[name]


class Adam:
    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {}
        self.v = {}

    def step(self, params, grads):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for name, p in params.items():
            if name not in grads:
                raise KeyError(f"missing gradient for {name}")
            g = grads[name]
            m = self.m.get(name)
            if m is None:
                m = np.zeros_like(p.data)
                self.v[name] = np.zeros_like(p.data)
            v = self.v[name]
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            self.m[name], self.v[name] = m, v
            mhat = m / (1 - b1**self.t)
            vhat = v / (1 - b2**self.t)
            p.data -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


def make_optimizer(kind, lr):
    if kind == "sgd":
        return Sgd(lr)
    if kind == "adam":
        return Adam(lr)
    raise ValueError(f"unknown optimizer kind: {kind}")


# ---------------------------------------------------------------------------
# initialization

def seeded_rng(seed):
    return np.random.default_rng(seed)


def glorot(rng, fan_in, fan_out, shape=None):
    """Glorot-uniform initializer."""
    if shape is None:
        shape = (fan_in, fan_out)
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-bound, bound, size=shape))
