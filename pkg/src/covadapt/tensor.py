"""Dense float64 tensors with reverse-mode automatic differentiation.

Every array is a C-ordered ``numpy`` float64 buffer. A forward pass records
its primitive operations on a :class:`Tape`; ``backward`` replays the tape in
reverse, accumulating vector-Jacobian products into leaf gradients. Frozen
parameters participate in the forward pass but never accumulate gradient.

All reductions use numpy's deterministic summation, so repeated forward
passes over identical inputs are bitwise identical.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, DimensionError, NumericError

Array = np.ndarray


def _as_f64(data) -> Array:
    # asarray keeps 0-d shapes (ascontiguousarray would promote them to 1-d)
    return np.asarray(data, dtype=np.float64, order="C")


class Tensor:
    """Immutable node of a computation graph.

    Attributes:
        data: the float64 payload.
        grad: gradient buffer, allocated lazily during backward.
        tape: owning tape, or None for constants.
    """

    __slots__ = ("data", "grad", "tape", "requires_grad")

    def __init__(self, data, tape: "Tape | None" = None, requires_grad: bool = False):
        self.data = _as_f64(data)
        if not np.all(np.isfinite(self.data)):
            raise NumericError("tensor construction received non-finite values")
        self.grad: Array | None = None
        self.tape = tape
        self.requires_grad = requires_grad and tape is not None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def _accumulate(self, g: Array) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    # Operator sugar; every method defers to the module-level primitives.
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

    def __getitem__(self, idx):
        return take(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, axes):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis=axis, keepdims=keepdims)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


class Parameter:
    """A named trainable (or frozen) array with a gradient slot."""

    __slots__ = ("value", "grad", "frozen")

    def __init__(self, value, frozen: bool = False):
        self.value = _as_f64(value)
        if not np.all(np.isfinite(self.value)):
            raise NumericError("parameter value must be finite")
        self.grad = np.zeros_like(self.value)
        self.frozen = bool(frozen)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __repr__(self):
        return f"Parameter(shape={self.shape}, frozen={self.frozen})"


class Tape:
    """Ordered record of primitive ops for one forward/backward pass.

    Single-owner: build one forward pass, call :func:`backward` once.
    Execution order is a topological order of the graph, so reverse
    iteration visits each op after all its consumers.
    """

    __slots__ = ("_ops", "_leaves")

    def __init__(self):
        self._ops: list[Callable[[], None]] = []
        self._leaves: list[tuple[Parameter, Tensor]] = []

    def leaf(self, param: Parameter) -> Tensor:
        """Enter a parameter into the graph; frozen ones become constants."""
        t = Tensor(param.value, self, requires_grad=not param.frozen)
        self._leaves.append((param, t))
        return t

    def constant(self, data) -> Tensor:
        return Tensor(data, self, requires_grad=False)

    def record(self, fn: Callable[[], None]) -> None:
        self._ops.append(fn)

    def __len__(self):
        return len(self._ops)


def backward(tape: Tape, loss: Tensor) -> None:
    """Populate gradients of all non-frozen parameters bound to ``tape``.

    ``loss`` must be a scalar produced through ``tape``. Frozen parameters
    keep a zero gradient; gradient still flows through them to their inputs.
    """
    if loss.shape != ():
        raise ContractError(f"loss must be scalar, got shape {loss.shape}")
    if loss.tape is not tape:
        raise ContractError("loss was not produced through this tape")
    loss.grad = np.ones((), dtype=np.float64)
    for op in reversed(tape._ops):
        op()
    for param, leaf in tape._leaves:
        if param.frozen:
            param.grad = np.zeros_like(param.value)
        else:
            param.grad = leaf.grad if leaf.grad is not None else np.zeros_like(param.value)


# ---------------------------------------------------------------------------
# primitive helpers


def _coerce(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    tape = like.tape if like is not None else None
    return Tensor(np.asarray(x, dtype=np.float64), tape, requires_grad=False)


def _join_tape(*tensors: Tensor) -> Tape | None:
    tape = None
    for t in tensors:
        if t.tape is not None:
            if tape is None:
                tape = t.tape
            elif tape is not t.tape:
                raise ContractError("operands belong to different tapes")
    return tape


def _unbroadcast(g: Array, shape: tuple[int, ...]) -> Array:
    """Sum ``g`` down to ``shape`` to undo numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _make(out_data: Array, inputs: Sequence[Tensor], vjps: Sequence[Callable[[Array], Array] | None]) -> Tensor:
    tape = _join_tape(*inputs)
    req = any(t.requires_grad for t in inputs)
    out = Tensor(out_data, tape, requires_grad=req)
    if req:
        def _bw():
            g = out.grad
            if g is None:
                return
            for t, vjp in zip(inputs, vjps):
                if t.requires_grad and vjp is not None:
                    t._accumulate(vjp(g))
        tape.record(_bw)
    return out


# ---------------------------------------------------------------------------
# arithmetic


def add(a, b) -> Tensor:
    a = _coerce(a, b if isinstance(b, Tensor) else None)
    b = _coerce(b, a)
    out = a.data + b.data
    return _make(out, (a, b), (lambda g: _unbroadcast(g, a.shape), lambda g: _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a = _coerce(a, b if isinstance(b, Tensor) else None)
    b = _coerce(b, a)
    out = a.data - b.data
    return _make(out, (a, b), (lambda g: _unbroadcast(g, a.shape), lambda g: _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a = _coerce(a, b if isinstance(b, Tensor) else None)
    b = _coerce(b, a)
    out = a.data * b.data
    return _make(out, (a, b), (
        lambda g: _unbroadcast(g * b.data, a.shape),
        lambda g: _unbroadcast(g * a.data, b.shape),
    ))


def div(a, b) -> Tensor:
    a = _coerce(a, b if isinstance(b, Tensor) else None)
    b = _coerce(b, a)
    out = a.data / b.data
    if not np.all(np.isfinite(out)):
        raise NumericError("division produced non-finite values")
    return _make(out, (a, b), (
        lambda g: _unbroadcast(g / b.data, a.shape),
        lambda g: _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
    ))


def neg(a) -> Tensor:
    a = _coerce(a)
    return _make(-a.data, (a,), (lambda g: -g,))


def matmul(a, b) -> Tensor:
    """Matrix product with numpy batch semantics; operands must be >= 2-D."""
    a = _coerce(a, b if isinstance(b, Tensor) else None)
    b = _coerce(b, a)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError("matmul operands must be at least 2-D")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dimensions disagree: {a.shape} x {b.shape}")
    out = np.matmul(a.data, b.data)

    def vjp_a(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        return _unbroadcast(ga, a.shape)

    def vjp_b(g):
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(gb, b.shape)

    return _make(out, (a, b), (vjp_a, vjp_b))


# ---------------------------------------------------------------------------
# shape manipulation


def reshape(a: Tensor, shape) -> Tensor:
    a = _coerce(a)
    out = a.data.reshape(shape)
    return _make(np.ascontiguousarray(out), (a,), (lambda g: g.reshape(a.shape),))


def transpose(a: Tensor, axes) -> Tensor:
    a = _coerce(a)
    axes = tuple(axes)
    inv = tuple(int(np.argsort(axes)[i]) for i in range(len(axes)))
    out = np.ascontiguousarray(a.data.transpose(axes))
    return _make(out, (a,), (lambda g: g.transpose(inv),))


def take(a: Tensor, idx) -> Tensor:
    """Basic slicing; gradient scatters back onto the sliced region."""
    a = _coerce(a)
    out = a.data[idx]

    def vjp(g):
        ga = np.zeros_like(a.data)
        ga[idx] += g
        return ga

    return _make(np.ascontiguousarray(out), (a,), (vjp,))


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    tensors = [_coerce(t) for t in tensors]
    if not tensors:
        raise DimensionError("concat of empty sequence")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    vjps = []
    for i, t in enumerate(tensors):
        lo, hi = offsets[i], offsets[i + 1]

        def vjp(g, lo=lo, hi=hi):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            return g[tuple(sl)]

        vjps.append(vjp)
    return _make(out, tensors, vjps)


def gather_rows(table: Tensor, ids: Array) -> Tensor:
    """Row lookup ``table[ids]`` with scatter-add backward into the table."""
    table = _coerce(table)
    ids = np.asarray(ids, dtype=np.int64)
    out = table.data[ids]

    def vjp(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids, g)
        return gt

    return _make(out, (table,), (vjp,))


# ---------------------------------------------------------------------------
# reductions


def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def reduce_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = _coerce(a)
    axes = _norm_axis(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return np.broadcast_to(g, a.shape).copy()

    return _make(out, (a,), (vjp,))


def reduce_mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = _coerce(a)
    axes = _norm_axis(axis, a.ndim)
    n = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    out = a.data.mean(axis=axes, keepdims=keepdims)

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return np.broadcast_to(g / n, a.shape).copy()

    return _make(out, (a,), (vjp,))


# ---------------------------------------------------------------------------
# nonlinearities


def elu(a) -> Tensor:
    """x for x >= 0 else exp(x) - 1, applied elementwise."""
    a = _coerce(a)
    neg_part = np.expm1(np.minimum(a.data, 0.0))
    out = np.where(a.data >= 0.0, a.data, neg_part)
    deriv = np.where(a.data >= 0.0, 1.0, neg_part + 1.0)
    return _make(out, (a,), (lambda g: g * deriv,))


def relu(a) -> Tensor:
    a = _coerce(a)
    out = np.maximum(a.data, 0.0)
    mask = (a.data > 0.0).astype(np.float64)
    return _make(out, (a,), (lambda g: g * mask,))


def sigmoid(a) -> Tensor:
    a = _coerce(a)
    out = 1.0 / (1.0 + np.exp(-a.data))
    return _make(out, (a,), (lambda g: g * out * (1.0 - out),))


def sqrt(a) -> Tensor:
    a = _coerce(a)
    out = np.sqrt(a.data)
    if not np.all(np.isfinite(out)):
        raise NumericError("sqrt of negative input")
    return _make(out, (a,), (lambda g: g * 0.5 / np.maximum(out, 1e-300),))


def absolute(a) -> Tensor:
    a = _coerce(a)
    out = np.abs(a.data)
    sign = np.sign(a.data)
    return _make(out, (a,), (lambda g: g * sign,))


def clip_min(a, floor: float) -> Tensor:
    """max(x, floor); gradient passes only where x > floor."""
    a = _coerce(a)
    out = np.maximum(a.data, floor)
    mask = (a.data > floor).astype(np.float64)
    return _make(out, (a,), (lambda g: g * mask,))


def clip_max(a, ceil: float) -> Tensor:
    a = _coerce(a)
    out = np.minimum(a.data, ceil)
    mask = (a.data < ceil).astype(np.float64)
    return _make(out, (a,), (lambda g: g * mask,))


def sort_last(a) -> Tensor:
    """Sort along the last axis; gradient follows the permutation."""
    a = _coerce(a)
    idx = np.argsort(a.data, axis=-1, kind="stable")
    out = np.take_along_axis(a.data, idx, axis=-1)

    def vjp(g):
        ga = np.empty_like(g)
        np.put_along_axis(ga, idx, g, axis=-1)
        return ga

    return _make(out, (a,), (vjp,))


def softmax(a, axis: int = -1) -> Tensor:
    """Stable softmax along ``axis``; rows land on the probability simplex."""
    a = _coerce(a)
    if a.data.size == 0 or a.shape[axis] == 0:
        raise DimensionError("softmax of empty axis")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return out * (g - dot)

    return _make(out, (a,), (vjp,))


def layer_norm(a, gamma, beta, eps: float = 1e-6) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine.

    Uses population variance with an epsilon floor of 1e-6.
    """
    a = _coerce(a)
    gamma = _coerce(gamma, a)
    beta = _coerce(beta, a)
    mu = a.data.mean(axis=-1, keepdims=True)
    xc = a.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = gamma.data * xhat + beta.data

    def vjp_a(g):
        gx = g * gamma.data
        m1 = gx.mean(axis=-1, keepdims=True)
        m2 = (gx * xhat).mean(axis=-1, keepdims=True)
        return inv * (gx - m1 - xhat * m2)

    def vjp_gamma(g):
        return _unbroadcast(g * xhat, gamma.shape)

    def vjp_beta(g):
        return _unbroadcast(g, beta.shape)

    return _make(out, (a, gamma, beta), (vjp_a, vjp_gamma, vjp_beta))


def standardize(a: Tensor, axis: int = -1, sigma_floor: float = 1e-6) -> tuple[Tensor, Tensor, Tensor]:
    """Center/scale ``a`` along ``axis`` by its mean and population std.

    Returns (z, mu, sigma) with sigma floored at ``sigma_floor``; the
    transform is exactly invertible via ``z * sigma + mu``.
    """
    a = _coerce(a)
    mu = reduce_mean(a, axis=axis, keepdims=True)
    centered = sub(a, mu)
    var = reduce_mean(mul(centered, centered), axis=axis, keepdims=True)
    sigma = clip_min(sqrt(var), sigma_floor)
    z = div(centered, sigma)
    return z, mu, sigma


# ---------------------------------------------------------------------------
# verification oracle


def finite_diff_check(
    build_loss: Callable[[Tape], Tensor],
    params: dict[str, Parameter] | Iterable[tuple[str, Parameter]],
    h: float = 1e-6,
    max_coords_per_param: int | None = None,
    seed: int = 0,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``build_loss`` must deterministically rebuild the scalar loss on a fresh
    tape, reading parameter values through ``tape.leaf``. Per coordinate the
    error is |analytic - central| / max(1e-8, |central|); large parameters
    may be subsampled via ``max_coords_per_param`` (deterministic choice).
    """
    items = list(params.items()) if isinstance(params, dict) else list(params)
    tape = Tape()
    loss = build_loss(tape)
    backward(tape, loss)
    analytic = {name: p.grad.copy() for name, p in items}

    rng = np.random.default_rng(seed)
    worst = 0.0
    for name, p in items:
        if p.frozen:
            continue
        flat = p.value.reshape(-1)
        n = flat.size
        if max_coords_per_param is not None and n > max_coords_per_param:
            coords = rng.choice(n, size=max_coords_per_param, replace=False)
        else:
            coords = np.arange(n)
        for c in coords:
            orig = flat[c]
            flat[c] = orig + h
            f_plus = build_loss(Tape()).item()
            flat[c] = orig - h
            f_minus = build_loss(Tape()).item()
            flat[c] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise NumericError(f"non-finite loss while probing {name}[{c}]")
            central = (f_plus - f_minus) / (2.0 * h)
            err = abs(analytic[name].reshape(-1)[c] - central) / max(1e-8, abs(central))
            worst = max(worst, err)
    return worst
