"""Dense float64 tensors with reverse-mode gradients, Adam, and batch norm.

Every value in the model is a `Tensor` wrapping a float64 numpy array.
Operations executed while a `Tape` is active are recorded; the tape can
replay the forward pass or run the backward pass to produce gradients.
"""

from __future__ import annotations

import struct
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractViolation

_ACTIVE_TAPE: "Tape | None" = None


class Tensor:
    """A float64 array plus the bookkeeping needed for reverse mode.

    Leaf tensors are either trainable parameters (requires_grad=True) or
    constants. Non-leaf tensors remember their inputs, a vjp closure, and a
    recompute closure used by Tape.replay().
    """

    __slots__ = ("data", "requires_grad", "inputs", "op", "_vjp", "_recompute", "name")

    def __init__(self, data, requires_grad=False, name=None):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.inputs: tuple[Tensor, ...] = ()
        self.op = "leaf"
        self._vjp: Callable | None = None
        self._recompute: Callable | None = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        return f"Tensor(op={self.op}, shape={self.data.shape}, name={self.name})"

    # operator sugar; constants are wrapped on the fly
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __truediv__(self, other):
        return div(self, _as_tensor(other))

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))

    def __neg__(self):
        return mul(self, _as_tensor(-1.0))

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def sum(self, axis=None, keepdims=False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Tape:
    """Ordered record of the primitive operations of one forward pass.

    Nodes are appended in creation order, which is a topological order:
    every node's inputs precede it. Reverse iteration is therefore a valid
    reverse topological order and visits each node exactly once.
    """

    def __init__(self):
        self.nodes: list[Tensor] = []

    def __enter__(self):
        global _ACTIVE_TAPE
        if _ACTIVE_TAPE is not None:
            raise ContractViolation("tapes do not nest")
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, *exc):
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = None
        return False

    def replay(self) -> bool:
        """Recompute every recorded node from its inputs.

        Returns True when each node reproduces its stored forward value
        exactly (bitwise); used to validate the record abstraction.
        """
        for node in self.nodes:
            if node._recompute is None:
                continue
            fresh = node._recompute(*[t.data for t in node.inputs])
            if not np.array_equal(fresh, node.data):
                return False
        return True

    def gradients(self, loss: Tensor, params: dict[str, Tensor]) -> dict[str, np.ndarray]:
        return evaluate_with_gradients(self, loss, params)


def evaluate_with_gradients(
    tape: Tape, loss: Tensor, params: dict[str, Tensor]
) -> dict[str, np.ndarray]:
    """Gradient of a scalar loss with respect to every named parameter.

    Parameters that do not lie on any path to the loss get a zero gradient
    of their own shape.
    """
    if loss.data.size != 1:
        raise ContractViolation(f"loss must be scalar, got shape {loss.data.shape}")
    # copy-on-write accumulation: a vjp may hand the same array to several
    # inputs, so entries start borrowed and are copied before first mutation
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    owned: set[int] = {id(loss)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node), None)
        if g is None or node._vjp is None:
            continue
        owned.discard(id(node))
        for inp, gi in zip(node.inputs, node._vjp(g)):
            if gi is None:
                continue
            gi = np.asarray(gi)  # 0-d results come back as numpy scalars
            key = id(inp)
            acc = grads.get(key)
            if acc is None:
                grads[key] = gi
            else:
                if key not in owned:
                    acc = acc.copy()
                    grads[key] = acc
                    owned.add(key)
                acc += gi
    out = {}
    for name, p in params.items():
        g = grads.get(id(p))
        out[name] = np.zeros_like(p.data) if g is None else g
    return out


def _record(out: Tensor, inputs: Sequence[Tensor], op: str, vjp, recompute) -> Tensor:
    out.inputs = tuple(inputs)
    out.op = op
    out._vjp = vjp
    out._recompute = recompute
    if _ACTIVE_TAPE is not None:
        _ACTIVE_TAPE.nodes.append(out)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient down to `shape` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# primitive operations
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data + b.data)
    return _record(
        out, (a, b), "add",
        lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)),
        lambda x, y: x + y,
    )


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data - b.data)
    return _record(
        out, (a, b), "sub",
        lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)),
        lambda x, y: x - y,
    )


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data * b.data)
    return _record(
        out, (a, b), "mul",
        lambda g: (_unbroadcast(g * b.data, a.data.shape), _unbroadcast(g * a.data, b.data.shape)),
        lambda x, y: x * y,
    )


def div(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data / b.data)
    return _record(
        out, (a, b), "div",
        lambda g: (
            _unbroadcast(g / b.data, a.data.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape),
        ),
        lambda x, y: x / y,
    )


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ContractViolation(f"matmul expects 2-D operands, got {a.data.shape} @ {b.data.shape}")
    out = Tensor(a.data @ b.data)
    return _record(
        out, (a, b), "matmul",
        lambda g: (g @ b.data.T, a.data.T @ g),
        lambda x, y: x @ y,
    )


def relu(a: Tensor) -> Tensor:
    out = Tensor(np.maximum(a.data, 0.0))
    return _record(
        out, (a,), "relu",
        lambda g: (g * (a.data > 0.0),),
        lambda x: np.maximum(x, 0.0),
    )


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    out = Tensor(y)
    return _record(out, (a,), "exp", lambda g: (g * y,), np.exp)


def log(a: Tensor) -> Tensor:
    out = Tensor(np.log(a.data))
    return _record(out, (a,), "log", lambda g: (g / a.data,), np.log)


def sqrt(a: Tensor) -> Tensor:
    y = np.sqrt(a.data)
    out = Tensor(y)
    return _record(out, (a,), "sqrt", lambda g: (g * (0.5 / y),), np.sqrt)


def _sigmoid_arr(x: np.ndarray) -> np.ndarray:
    pos = x >= 0
    out = np.empty_like(x)
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    y = _sigmoid_arr(a.data)
    out = Tensor(y)
    return _record(out, (a,), "sigmoid", lambda g: (g * y * (1.0 - y),), _sigmoid_arr)


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    out = Tensor(np.clip(a.data, lo, hi))
    inside = (a.data > lo) & (a.data < hi)
    return _record(
        out, (a,), "clamp",
        lambda g: (g * inside,),
        lambda x: np.clip(x, lo, hi),
    )


def tensor_sum(a: Tensor, axis=None, keepdims=False) -> Tensor:
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims))

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, a.data.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.data.shape).copy(),)

    return _record(out, (a,), "sum", vjp, lambda x: x.sum(axis=axis, keepdims=keepdims))


def mean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    n = a.data.size if axis is None else a.data.shape[axis]
    return mul(tensor_sum(a, axis=axis, keepdims=keepdims), _as_tensor(1.0 / n))


def reshape(a: Tensor, shape) -> Tensor:
    out = Tensor(a.data.reshape(shape))
    return _record(
        out, (a,), "reshape",
        lambda g: (g.reshape(a.data.shape),),
        lambda x: x.reshape(shape),
    )


def broadcast_to(a: Tensor, shape) -> Tensor:
    out = Tensor(np.broadcast_to(a.data, shape).copy())
    return _record(
        out, (a,), "broadcast",
        lambda g: (_unbroadcast(g, a.data.shape),),
        lambda x: np.broadcast_to(x, shape).copy(),
    )


def concat(parts: Sequence[Tensor], axis: int) -> Tensor:
    datas = [p.data for p in parts]
    out = Tensor(np.concatenate(datas, axis=axis))
    sizes = [d.shape[axis] for d in datas]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return _record(out, tuple(parts), "concat", vjp, lambda *xs: np.concatenate(xs, axis=axis))


def rows(a: Tensor, idx: np.ndarray) -> Tensor:
    """Gather rows of a 2-D tensor; the embedding-lookup primitive."""
    if a.data.ndim != 2:
        raise ContractViolation("rows() expects a 2-D tensor")
    if idx.size and (idx.min() < 0 or idx.max() >= a.data.shape[0]):
        raise ContractViolation("row index out of range")
    out = Tensor(a.data[idx])
    n, d = a.data.shape

    def vjp(g):
        g2 = g.reshape(idx.size, d)
        flat = idx.reshape(-1)
        cols = [np.bincount(flat, weights=g2[:, j], minlength=n) for j in range(d)]
        return (np.stack(cols, axis=1),)

    return _record(out, (a,), "rows", vjp, lambda x: x[idx])


def scatter_rows(a: Tensor, idx: np.ndarray, length: int) -> Tensor:
    """Place rows (or scalars) of `a` at positions `idx` of a zero tensor."""
    shape = (length,) + a.data.shape[1:]
    buf = np.zeros(shape)
    buf[idx] = a.data
    out = Tensor(buf)

    def rec(x):
        b = np.zeros(shape)
        b[idx] = x
        return b

    return _record(out, (a,), "scatter", lambda g: (g[idx],), rec)


def stop_gradient(a: Tensor) -> Tensor:
    return Tensor(a.data)


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

class Adam:
    """Adam with bias correction; one moment pair per named parameter."""

    def __init__(self, params: dict[str, Tensor], lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self, grads: dict[str, np.ndarray]) -> None:
        missing = set(self.params) - set(grads)
        if missing:
            raise ContractViolation(f"gradients missing for {sorted(missing)[:3]}")
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        for name, p in self.params.items():
            g = grads[name]
            if g.shape != p.data.shape:
                raise ContractViolation(f"gradient shape mismatch for {name}")
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


# ---------------------------------------------------------------------------
# batch normalization
# ---------------------------------------------------------------------------

class BatchNorm:
    """Per-feature batch normalization over axis 0 of a (batch, width) input.

    Training mode normalizes by the biased batch statistics and folds them
    into the running statistics with the configured momentum (weight of the
    old value). Inference mode is a pure affine map built from the running
    statistics.
    """

    def __init__(self, width: int, momentum=0.9, eps=1e-5, prefix="bn",
                 params: dict[str, Tensor] | None = None):
        self.width = width
        self.momentum = momentum
        self.eps = eps
        self.gamma = Tensor(np.ones(width), requires_grad=True, name=f"{prefix}.gamma")
        self.beta = Tensor(np.zeros(width), requires_grad=True, name=f"{prefix}.beta")
        self.run_mean = np.zeros(width)
        self.run_var = np.ones(width)
        self.prefix = prefix
        if params is not None:
            params[f"{prefix}.gamma"] = self.gamma
            params[f"{prefix}.beta"] = self.beta

    def __call__(self, x: Tensor, training: bool, update_running: bool = True) -> Tensor:
        if x.data.ndim != 2 or x.data.shape[1] != self.width:
            raise ContractViolation(f"batch norm expects (batch, {self.width}) input")
        if training:
            if x.data.shape[0] < 2:
                raise ContractViolation("batch norm training needs batch >= 2")
            mu = mean(x, axis=0, keepdims=True)
            centered = sub(x, mu)
            var = mean(mul(centered, centered), axis=0, keepdims=True)
            if update_running:
                m = self.momentum
                self.run_mean = m * self.run_mean + (1.0 - m) * mu.data.reshape(-1)
                self.run_var = m * self.run_var + (1.0 - m) * var.data.reshape(-1)
            inv = div(_as_tensor(1.0), sqrt(add(var, _as_tensor(self.eps))))
            return add(mul(mul(centered, inv), self.gamma), self.beta)
        mu = Tensor(self.run_mean.reshape(1, -1))
        var = Tensor(self.run_var.reshape(1, -1))
        centered = sub(x, mu)
        inv = div(_as_tensor(1.0), sqrt(add(var, _as_tensor(self.eps))))
        return add(mul(mul(centered, inv), self.gamma), self.beta)

    def state(self) -> dict[str, np.ndarray]:
        return {f"{self.prefix}.run_mean": self.run_mean, f"{self.prefix}.run_var": self.run_var}

    def load_state(self, tensors: dict[str, np.ndarray]) -> None:
        self.run_mean = tensors[f"{self.prefix}.run_mean"].copy()
        self.run_var = tensors[f"{self.prefix}.run_var"].copy()


# ---------------------------------------------------------------------------
# checkpoint container: named float64 tensors, little-endian
# ---------------------------------------------------------------------------

_CKPT_VERSION = 1


def save_tensors(path, tensors: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as fh:
        fh.write(struct.pack("<II", _CKPT_VERSION, len(tensors)))
        for name, arr in tensors.items():
            raw = name.encode("utf-8")
            a = np.asarray(arr, dtype="<f8")  # keeps 0-d rank, unlike ascontiguousarray
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", a.ndim))
            fh.write(struct.pack(f"<{a.ndim}I", *a.shape))
            fh.write(a.tobytes())


def load_tensors(path) -> dict[str, np.ndarray]:
    out: dict[str, np.ndarray] = {}
    with open(path, "rb") as fh:
        version, count = struct.unpack("<II", fh.read(8))
        if version != _CKPT_VERSION:
            raise ContractViolation(f"unsupported checkpoint version {version}")
        for _ in range(count):
            (nlen,) = struct.unpack("<I", fh.read(4))
            name = fh.read(nlen).decode("utf-8")
            (rank,) = struct.unpack("<I", fh.read(4))
            shape = struct.unpack(f"<{rank}I", fh.read(4 * rank)) if rank else ()
            n = int(np.prod(shape)) if shape else 1
            arr = np.frombuffer(fh.read(8 * n), dtype="<f8").reshape(shape).copy()
            out[name] = arr
    return out


def uniform_init(rng: np.random.Generator, shape, scale=0.05) -> np.ndarray:
    return rng.uniform(-scale, scale, size=shape)
