"""Dense float64 tensors with a tape-based reverse-mode differentiator.

Every learnable function in the package is composed from the ops below.
A :class:`Tape` is activated with ``with Tape() as tape:``; ops whose inputs
require gradients record themselves on it, and ``tape.backward(loss, params)``
walks the record once in reverse.  Outside an active tape, ops only compute
values, which is how inference runs.
"""

from __future__ import annotations

from collections.abc import Callable, Mapping, Sequence

import numpy as np

LOG_FLOOR = 1e-12

_tape_stack: list[Tape] = []


class ShapeError(ValueError):
    """Raised when an op receives operands of incompatible shape."""

    def __init__(self, op: str, *shapes):
        self.op = op
        self.shapes = shapes
        joined = ", ".join(str(tuple(s)) for s in shapes)
        super().__init__(f"{op}: incompatible shapes {joined}")


class TapeError(RuntimeError):
    pass


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward")
    # make numpy defer to the reflected Tensor operators
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)


class Tape:
    """Ordered record of differentiable operations.

    Nodes are appended as ops execute, so the record is topologically sorted
    by construction.  A tape may be differentiated once.
    """

    def __init__(self):
        self.nodes: list[Tensor] = []
        self.consumed = False

    def __enter__(self) -> Tape:
        _tape_stack.append(self)
        return self

    def __exit__(self, *exc):
        _tape_stack.remove(self)
        return False

    def record(self, node: Tensor) -> None:
        if self.consumed:
            raise TapeError("cannot record on a consumed tape")
        self.nodes.append(node)

    def backward(self, loss: Tensor, params=None) -> dict[str, np.ndarray]:
        """Differentiate ``loss`` and return gradients keyed by parameter name.

        ``params`` is a mapping name -> Tensor (or a sequence of named
        tensors).  Parameters the loss does not depend on get exact zeros.
        Gradients are also left on each parameter's ``.grad``.
        """
        if self.consumed:
            raise TapeError("backward called on a consumed tape")
        if loss.size != 1:
            raise ShapeError("backward", loss.shape)
        self.consumed = True
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for node in reversed(self.nodes):
            g = grads.pop(id(node), None)
            if g is None or node._backward is None:
                if g is not None:
                    grads[id(node)] = g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
            # release the closure so intermediate arrays can be freed
            node._backward = None
            node._parents = ()
        named = _named(params)
        out = {}
        for name, p in named.items():
            g = grads.get(id(p))
            p.grad = np.zeros_like(p.data) if g is None else np.asarray(g, dtype=np.float64).reshape(p.shape)
            out[name] = p.grad
        self.nodes = []
        return out


def _named(params) -> dict[str, Tensor]:
    if params is None:
        return {}
    if isinstance(params, Mapping):
        return dict(params)
    if isinstance(params, Tensor):
        params = [params]
    return {(p.name or f"p{i}"): p for i, p in enumerate(params)}


def backward(tape: Tape, loss: Tensor, params=None) -> dict[str, np.ndarray]:
    return tape.backward(loss, params)


def _make(data, parents: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    out = Tensor(data)
    if _tape_stack and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
        _tape_stack[-1].record(out)
    return out


def _is_scalar(t: Tensor) -> bool:
    return t.data.size == 1


def _unbroadcast(g: np.ndarray, t: Tensor) -> np.ndarray:
    if g.shape == t.shape:
        return g
    return np.asarray(g.sum()).reshape(t.shape)


def _binary_shapes(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape and not (_is_scalar(a) or _is_scalar(b)):
        raise ShapeError(op, a.shape, b.shape)


# -- arithmetic -----------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes("add", a, b)
    return _make(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, a), _unbroadcast(g, b)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes("sub", a, b)
    return _make(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, a), _unbroadcast(-g, b)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes("mul", a, b)
    return _make(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a), _unbroadcast(g * a.data, b)),
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes("div", a, b)
    out = a.data / b.data
    return _make(
        out,
        (a, b),
        lambda g: (_unbroadcast(g / b.data, a), _unbroadcast(-g * out / b.data, b)),
    )


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)
    return _make(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def bias_add(x, b) -> Tensor:
    """Add a row vector ``b`` of shape (m,) to every row of ``x`` (n, m)."""
    x, b = as_tensor(x), as_tensor(b)
    if x.data.ndim != 2 or b.data.ndim != 1 or x.shape[1] != b.shape[0]:
        raise ShapeError("bias_add", x.shape, b.shape)
    return _make(x.data + b.data, (x, b), lambda g: (g, g.sum(axis=0)))


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", x.shape, shape) from None
    return _make(out, (x,), lambda g: (g.reshape(x.shape),))


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        raise ShapeError("concat", *(t.shape for t in ts)) from None
    sizes = [t.shape[axis] for t in ts]
    cuts = np.cumsum(sizes)[:-1]

    def bw(g):
        return np.split(g, cuts, axis=axis)

    return _make(out, ts, bw)


def sum(x, axis: int | None = None) -> Tensor:  # noqa: A001
    x = as_tensor(x)

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, x.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),)

    return _make(x.data.sum(axis=axis), (x,), bw)


def mean(x, axis: int | None = None) -> Tensor:
    x = as_tensor(x)
    n = x.data.size if axis is None else x.shape[axis]
    return sum(x, axis) * (1.0 / n)


# -- elementwise ------------------------------------------------------------------


def tanh(x) -> Tensor:
    x = as_tensor(x)
    out = np.tanh(x.data)
    return _make(out, (x,), lambda g: (g * (1.0 - out * out),))


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    d = x.data
    e = np.exp(-np.abs(d))
    out = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _make(out, (x,), lambda g: (g * out * (1.0 - out),))


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    # np.maximum keeps NaN visible to the divergence guard
    return _make(np.maximum(x.data, 0.0), (x,), lambda g: (g * mask,))


def log(x) -> Tensor:
    """Natural log with inputs clamped to at least ``LOG_FLOOR``."""
    x = as_tensor(x)
    clamped = np.maximum(x.data, LOG_FLOOR)
    live = x.data >= LOG_FLOOR
    return _make(np.log(clamped), (x,), lambda g: (np.where(live, g / clamped, 0.0),))


def abs(x) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    # sign(0) == 0 gives the zero subgradient at the kink
    return _make(np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),))


def cos(x) -> Tensor:
    x = as_tensor(x)
    return _make(np.cos(x.data), (x,), lambda g: (-g * np.sin(x.data),))


def clamp(x, lo: float | None = None, hi: float | None = None) -> Tensor:
    x = as_tensor(x)
    d = x.data
    out = np.clip(d, -np.inf if lo is None else lo, np.inf if hi is None else hi)
    inside = out == d
    return _make(out, (x,), lambda g: (g * inside,))


def l2norm(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    norm = np.sqrt((x.data * x.data).sum(axis=axis))
    safe = np.where(norm > 0, norm, 1.0)

    def bw(g):
        scale = np.where(norm > 0, g / safe, 0.0)
        return (np.expand_dims(scale, axis) * x.data,)

    return _make(norm, (x,), bw)


def round_st(x) -> Tensor:
    """Round to nearest integer; the backward pass is the identity."""
    x = as_tensor(x)
    return _make(np.round(x.data), (x,), lambda g: (g,))


# -- indexing ---------------------------------------------------------------------


def gather_rows(x, idx) -> Tensor:
    x = as_tensor(x)
    idx = np.asarray(idx, dtype=np.int64)

    def bw(g):
        out = np.zeros_like(x.data)
        np.add.at(out, idx, g)
        return (out,)

    return _make(x.data[idx], (x,), bw)


def set_rows(base, idx, values) -> Tensor:
    """Return ``base`` with rows ``idx`` replaced by ``values``; ``idx`` must be unique."""
    base, values = as_tensor(base), as_tensor(values)
    idx = np.asarray(idx, dtype=np.int64)
    if values.shape != (len(idx),) + base.shape[1:]:
        raise ShapeError("set_rows", base.shape, values.shape)
    out = base.data.copy()
    out[idx] = values.data

    def bw(g):
        gb = g.copy()
        gb[idx] = 0.0
        return gb, g[idx]

    return _make(out, (base, values), bw)


def segment_sum(x, segments, num_segments: int) -> Tensor:
    """Sum rows of ``x`` into ``num_segments`` buckets; empty buckets are zero."""
    x = as_tensor(x)
    segments = np.asarray(segments, dtype=np.int64)
    if x.data.ndim != 2 or len(segments) != x.shape[0]:
        raise ShapeError("segment_sum", x.shape, segments.shape)
    out = np.zeros((num_segments, x.shape[1]))
    np.add.at(out, segments, x.data)
    return _make(out, (x,), lambda g: (g[segments],))


def column(x, j: int) -> Tensor:
    x = as_tensor(x)

    def bw(g):
        out = np.zeros_like(x.data)
        out[:, j] = g
        return (out,)

    return _make(x.data[:, j], (x,), bw)


# -- randomness -------------------------------------------------------------------


class Rng:
    """Seeded generator; identical seeds yield identical draw sequences."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self.gen = np.random.Generator(np.random.PCG64(self.seed))

    def normal(self, shape) -> np.ndarray:
        return self.gen.standard_normal(shape)

    def uniform(self, lo: float, hi: float, shape=None):
        return self.gen.uniform(lo, hi, shape)

    def integers(self, lo: int, hi: int, shape=None):
        return self.gen.integers(lo, hi, shape)

    def random(self, shape=None):
        return self.gen.random(shape)

    def spawn(self, key: int) -> Rng:
        return Rng((self.seed * 1_000_003 + key) % (2**63))

    def get_state(self) -> dict:
        return self.gen.bit_generator.state

    def set_state(self, state: dict) -> None:
        self.gen.bit_generator.state = state


def sample_gaussian(rng: Rng, shape) -> Tensor:
    return Tensor(rng.normal(shape))


def sample_uniform(rng: Rng, lo: float, hi: float, shape) -> Tensor:
    if not lo < hi:
        raise ValueError(f"uniform bounds need lo < hi, got {lo}, {hi}")
    return Tensor(rng.uniform(lo, hi, shape))


def squashed_noise(rng: Rng, shape) -> Tensor:
    """Gaussian noise mapped into (-1, 1) with tanh."""
    return Tensor(np.tanh(rng.normal(shape)))


def glorot(rng: Rng, fan_in: int, fan_out: int, name: str | None = None) -> Tensor:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return parameter(rng.uniform(-limit, limit, (fan_in, fan_out)), name)


# -- building blocks ----------------------------------------------------------------


def linear(x, w: Tensor, b: Tensor) -> Tensor:
    return bias_add(matmul(x, w), b)


def mlp_params(rng: Rng, sizes: Sequence[int], prefix: str) -> dict[str, Tensor]:
    params = {}
    for i, (fi, fo) in enumerate(zip(sizes[:-1], sizes[1:])):
        params[f"{prefix}.w{i}"] = glorot(rng, fi, fo, f"{prefix}.w{i}")
        params[f"{prefix}.b{i}"] = parameter(np.zeros(fo), f"{prefix}.b{i}")
    return params


def mlp(x, params: Mapping[str, Tensor], prefix: str, layers: int) -> Tensor:
    """Affine layers joined by rectifiers; no activation after the last."""
    h = x
    for i in range(layers):
        h = linear(h, params[f"{prefix}.w{i}"], params[f"{prefix}.b{i}"])
        if i < layers - 1:
            h = relu(h)
    return h


class Adam:
    """Adaptive-moment gradient descent over a name -> Tensor mapping."""

    def __init__(self, params: Mapping[str, Tensor], lr: float = 1e-4,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        self.params = dict(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def step(self, grads: Mapping[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for k, p in self.params.items():
            g = grads.get(k)
            if g is None:
                continue
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            p.data = p.data - self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)

    def state_dict(self) -> dict:
        return {"t": self.t, "m": self.m, "v": self.v}

    def load_state_dict(self, state: dict) -> None:
        self.t = int(state["t"])
        self.m = {k: np.asarray(v) for k, v in state["m"].items()}
        self.v = {k: np.asarray(v) for k, v in state["v"].items()}


# -- gradient checking --------------------------------------------------------------


def relative_error(analytic, numeric) -> float:
    """|a - n| / max(1e-12, |a| + |n|) with |.| the Euclidean norm over the whole array."""
    a = np.asarray(analytic, dtype=np.float64).reshape(-1)
    n = np.asarray(numeric, dtype=np.float64).reshape(-1)
    return float(np.linalg.norm(a - n) / max(1e-12, np.linalg.norm(a) + np.linalg.norm(n)))


def fd_check(f: Callable[[], Tensor], params: Mapping[str, Tensor], eps: float = 1e-6,
             max_coords: int | None = None, rng: Rng | None = None) -> float:
    """Max over parameter tensors of the relative error between tape gradients
    and central differences.

    ``f`` rebuilds the scalar loss from the current parameter values on every
    call and must be deterministic.  With ``max_coords`` set, each parameter
    tensor is probed at that many coordinates drawn from ``rng`` instead of
    exhaustively.
    """
    params = dict(params)
    with Tape() as tape:
        loss = f()
    if not loss.requires_grad:
        # constant in every parameter
        analytic = {k: np.zeros_like(p.data) for k, p in params.items()}
    else:
        analytic = tape.backward(loss, params)
    rng = rng or Rng(0)
    worst = 0.0
    for name, p in params.items():
        flat = p.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = np.sort(rng.gen.choice(flat.size, max_coords, replace=False))
        numeric = np.empty(len(coords))
        for i, c in enumerate(coords):
            orig = flat[c]
            flat[c] = orig + eps
            up = f().item()
            flat[c] = orig - eps
            down = f().item()
            flat[c] = orig
            numeric[i] = (up - down) / (2 * eps)
        worst = max(worst, relative_error(analytic[name].reshape(-1)[coords], numeric))
    return worst
