"""Dense float64 tensors with tape-based reverse-mode automatic differentiation.

Design constraints, kept deliberately tight so every backward rule stays
auditable:

- float64 everywhere; no mixed precision.
- broadcasting is limited to exact-shape and scalar operands; the only other
  implicit broadcast is the row-wise bias in ``dense``/``conv2d``, which is
  part of those ops' contracts.
- tensors are immutable values once created (optimizers mutate leaf ``data``
  in place between graph constructions, never mid-graph).
- graph construction and backward are single-threaded; results are
  bit-deterministic for a fixed input and seed.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ContractViolationError, InvalidShapeError

_CHECK_FINITE = False


def set_debug_checks(enabled: bool) -> None:
    """Toggle post-op NaN/Inf assertions (off by default; tests switch them on)."""
    global _CHECK_FINITE
    _CHECK_FINITE = bool(enabled)


class Tensor:
    """N-dimensional float64 array, optionally tracked for gradients.

    ``grad`` is populated (overwritten, not accumulated across calls) by
    :func:`backward` for every tensor with ``requires_grad`` reachable from
    the loss.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple = ()
        self._backward: Optional[Callable] = None
        self._op = "leaf"

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(op={self._op}, shape={self.data.shape}, requires_grad={self.requires_grad})"


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def _node(data: np.ndarray, parents: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    out = Tensor(data)
    out.requires_grad = any(p.requires_grad for p in parents)
    out._parents = tuple(parents)
    out._backward = backward
    out._op = op
    if _CHECK_FINITE and all(np.all(np.isfinite(p.data)) for p in parents):
        if not np.all(np.isfinite(out.data)):
            raise FloatingPointError(f"non-finite values produced by op '{op}'")
    return out


class Tape:
    """Operations reachable from a root, in topological order (inputs first).

    Built once per backward pass; replaying it in reverse visits each node
    exactly once.
    """

    def __init__(self, nodes: list):
        self.nodes = nodes

    @classmethod
    def trace(cls, root: Tensor) -> "Tape":
        order: list = []
        seen: set = set()
        stack: list = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen and p.requires_grad:
                    stack.append((p, False))
        return cls(order)


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every requires_grad tensor contributing to ``loss``.

    Gradients of shared subexpressions are summed. ``loss`` must be scalar
    (shape ``()``).
    """
    if loss.data.shape != ():
        raise ContractViolationError(
            f"backward root must be scalar, got shape {loss.data.shape}"
        )
    tape = Tape.trace(loss)
    grads: dict = {id(loss): np.ones((), dtype=np.float64)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad:
            node.grad = np.asarray(g)
        if node._backward is None:
            continue
        parent_grads = node._backward(g)
        for p, pg in zip(node._parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            key = id(p)
            grads[key] = pg if key not in grads else grads[key] + pg


# ---------------------------------------------------------------------------
# elementwise ops (exact-shape or scalar broadcast only)
# ---------------------------------------------------------------------------


def _binary_shapes_ok(a: Tensor, b: Tensor) -> None:
    if a.data.shape != b.data.shape and a.data.shape != () and b.data.shape != ():
        raise InvalidShapeError(
            f"elementwise operands must match exactly or be scalar, "
            f"got {a.data.shape} and {b.data.shape}"
        )


def _reduce_to(g: np.ndarray, shape: tuple) -> np.ndarray:
    # undo a scalar broadcast
    if shape == () and np.shape(g) != ():
        return np.asarray(g).sum()
    return g


def add(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes_ok(a, b)
    return _node(
        a.data + b.data,
        (a, b),
        lambda g: (_reduce_to(g, a.data.shape), _reduce_to(g, b.data.shape)),
        "add",
    )


def sub(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes_ok(a, b)
    return _node(
        a.data - b.data,
        (a, b),
        lambda g: (_reduce_to(g, a.data.shape), _reduce_to(-g, b.data.shape)),
        "sub",
    )


def mul(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes_ok(a, b)
    return _node(
        a.data * b.data,
        (a, b),
        lambda g: (
            _reduce_to(g * b.data, a.data.shape),
            _reduce_to(g * a.data, b.data.shape),
        ),
        "mul",
    )


def scale(a: Tensor, k: float) -> Tensor:
    k = float(k)
    return _node(a.data * k, (a,), lambda g: (g * k,), "scale")


def add_scalar(a: Tensor, k: float) -> Tensor:
    k = float(k)
    return _node(a.data + k, (a,), lambda g: (g,), "add_scalar")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0  # subgradient at 0 is 0
    return _node(np.maximum(a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _node(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def sigmoid(a: Tensor) -> Tensor:
    flat = a.data.reshape(-1)
    out = np.empty_like(flat)
    pos = flat >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-flat[pos]))
    ex = np.exp(flat[~pos])
    out[~pos] = ex / (1.0 + ex)
    out = out.reshape(a.data.shape)
    return _node(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return _node(out, (a,), lambda g: (g * 0.5 / out,), "sqrt")


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise InvalidShapeError(
            f"matmul expects [N,D] x [D,M], got {a.data.shape} and {b.data.shape}"
        )
    return _node(
        a.data @ b.data,
        (a, b),
        lambda g: (
            g @ b.data.T if a.requires_grad else None,
            a.data.T @ g if b.requires_grad else None,
        ),
        "matmul",
    )


def dense(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x @ w + b with b broadcast across rows."""
    if (
        x.data.ndim != 2
        or w.data.ndim != 2
        or x.data.shape[1] != w.data.shape[0]
        or b.data.shape != (w.data.shape[1],)
    ):
        raise InvalidShapeError(
            f"dense expects input [N,D], weight [D,M], bias [M]; "
            f"got {x.data.shape}, {w.data.shape}, {b.data.shape}"
        )
    return _node(
        x.data @ w.data + b.data,
        (x, w, b),
        lambda g: (
            g @ w.data.T if x.requires_grad else None,
            x.data.T @ g if w.requires_grad else None,
            g.sum(axis=0) if b.requires_grad else None,
        ),
        "dense",
    )


# ---------------------------------------------------------------------------
# convolution and pooling
# ---------------------------------------------------------------------------


def conv2d(x: Tensor, k: Tensor, b: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of [N,C,H,W] with [F,C,kH,kW] plus per-filter bias."""
    if x.data.ndim != 4 or k.data.ndim != 4:
        raise InvalidShapeError(
            f"conv2d expects 4-d input and kernel, got {x.data.shape} and {k.data.shape}"
        )
    n, c, h, w = x.data.shape
    f, kc, kh, kw = k.data.shape
    if kc != c:
        raise InvalidShapeError(
            f"conv2d channel mismatch: input {x.data.shape} vs kernel {k.data.shape}"
        )
    if b.data.shape != (f,):
        raise InvalidShapeError(
            f"conv2d bias must have shape ({f},), got {b.data.shape}"
        )
    stride = int(stride)
    padding = int(padding)
    if stride < 1 or padding < 0:
        raise InvalidShapeError(f"conv2d needs stride >= 1 and padding >= 0, got {stride}, {padding}")
    if kh > h + 2 * padding or kw > w + 2 * padding:
        raise InvalidShapeError(
            f"conv2d kernel {k.data.shape} larger than padded input {x.data.shape} (padding {padding})"
        )

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]
    ho, wo = win.shape[2], win.shape[3]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)
    kflat = k.data.reshape(f, c * kh * kw)
    out = (cols @ kflat.T + b.data).reshape(n, ho, wo, f).transpose(0, 3, 1, 2)

    def back(g):
        gflat = g.transpose(0, 2, 3, 1).reshape(n * ho * wo, f)
        dk = (gflat.T @ cols).reshape(k.data.shape) if k.requires_grad else None
        db = g.sum(axis=(0, 2, 3)) if b.requires_grad else None
        dx = None
        if x.requires_grad:
            dcols = (gflat @ kflat).reshape(n, ho, wo, c, kh, kw)
            dxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += (
                        dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
                    )
            dx = dxp[:, :, padding : padding + h, padding : padding + w] if padding else dxp
        return (dx, dk, db)

    return _node(out, (x, k, b), back, "conv2d")


def maxpool2d(x: Tensor, kernel: int, stride: Optional[int] = None) -> Tensor:
    """Max over kernel x kernel windows; ties route the gradient to the first max."""
    if x.data.ndim != 4:
        raise InvalidShapeError(f"maxpool2d expects [N,C,H,W], got {x.data.shape}")
    kernel = int(kernel)
    stride = kernel if stride is None else int(stride)
    n, c, h, w = x.data.shape
    if kernel < 1 or stride < 1 or kernel > h or kernel > w:
        raise InvalidShapeError(
            f"maxpool2d kernel {kernel}/stride {stride} invalid for input {x.data.shape}"
        )
    win = np.lib.stride_tricks.sliding_window_view(x.data, (kernel, kernel), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]
    ho, wo = win.shape[2], win.shape[3]
    wflat = win.reshape(n, c, ho, wo, kernel * kernel)
    am = wflat.argmax(axis=-1)
    out = np.take_along_axis(wflat, am[..., None], axis=-1)[..., 0]

    def back(g):
        hi = (np.arange(ho) * stride)[None, None, :, None] + am // kernel
        wi = (np.arange(wo) * stride)[None, None, None, :] + am % kernel
        ni = np.arange(n)[:, None, None, None]
        ci = np.arange(c)[None, :, None, None]
        dx = np.zeros_like(x.data)
        np.add.at(dx, (ni, ci, hi, wi), g)
        return (dx,)

    return _node(out, (x,), back, "maxpool2d")


def global_avgpool(x: Tensor) -> Tensor:
    """[N,C,H,W] -> [N,C] spatial mean."""
    if x.data.ndim != 4:
        raise InvalidShapeError(f"global_avgpool expects [N,C,H,W], got {x.data.shape}")
    n, c, h, w = x.data.shape
    out = x.data.mean(axis=(2, 3))
    return _node(
        out,
        (x,),
        lambda g: (np.broadcast_to(g[:, :, None, None] / (h * w), x.data.shape),),
        "global_avgpool",
    )


# ---------------------------------------------------------------------------
# shape ops
# ---------------------------------------------------------------------------


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape, dtype=np.int64)) != x.data.size:
        raise InvalidShapeError(
            f"reshape cannot map {x.data.shape} ({x.data.size} elements) to {shape}"
        )
    return _node(
        x.data.reshape(shape), (x,), lambda g: (np.asarray(g).reshape(x.data.shape),), "reshape"
    )


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(int(a) for a in axes)
    if sorted(axes) != list(range(x.data.ndim)):
        raise InvalidShapeError(f"transpose axes {axes} invalid for shape {x.data.shape}")
    inv = tuple(np.argsort(axes))
    return _node(
        x.data.transpose(axes), (x,), lambda g: (np.asarray(g).transpose(inv),), "transpose"
    )


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    if not tensors:
        raise InvalidShapeError("concat needs at least one tensor")
    axis = int(axis)
    ref = tensors[0].data.shape
    for t in tensors[1:]:
        s = t.data.shape
        if len(s) != len(ref) or any(
            i != axis and s[i] != ref[i] for i in range(len(ref))
        ):
            raise InvalidShapeError(
                f"concat axis {axis} mismatch: {ref} vs {s}"
            )
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def back(g):
        pieces = []
        for i in range(len(tensors)):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(offsets[i], offsets[i + 1])
            pieces.append(g[tuple(sl)])
        return tuple(pieces)

    return _node(out, tuple(tensors), back, "concat")


def slice_axis(x: Tensor, axis: int, start: int, stop: int) -> Tensor:
    axis, start, stop = int(axis), int(start), int(stop)
    if not (0 <= start < stop <= x.data.shape[axis]):
        raise InvalidShapeError(
            f"slice_axis [{start},{stop}) invalid for axis {axis} of shape {x.data.shape}"
        )
    sl = [slice(None)] * x.data.ndim
    sl[axis] = slice(start, stop)
    sl = tuple(sl)

    def back(g):
        dx = np.zeros_like(x.data)
        dx[sl] = g
        return (dx,)

    return _node(x.data[sl], (x,), back, "slice_axis")


def take(x: Tensor, indices, axis: int) -> Tensor:
    """Gather along an axis with an integer index array; repeats accumulate in backward."""
    idx = np.asarray(indices, dtype=np.intp)
    axis = int(axis)
    if idx.ndim != 1 or (idx.size and (idx.min() < 0 or idx.max() >= x.data.shape[axis])):
        raise InvalidShapeError(
            f"take indices out of range for axis {axis} of shape {x.data.shape}"
        )
    sl = (slice(None),) * axis

    def back(g):
        dx = np.zeros_like(x.data)
        np.add.at(dx, sl + (idx,), g)
        return (dx,)

    return _node(np.take(x.data, idx, axis=axis), (x,), back, "take")


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------


def sum_all(x: Tensor) -> Tensor:
    return _node(
        x.data.sum(), (x,), lambda g: (np.broadcast_to(g, x.data.shape),), "sum_all"
    )


def sum_axis(x: Tensor, axis: int) -> Tensor:
    axis = int(axis)
    if not 0 <= axis < x.data.ndim:
        raise InvalidShapeError(f"sum_axis axis {axis} invalid for shape {x.data.shape}")
    return _node(
        x.data.sum(axis=axis),
        (x,),
        lambda g: (np.broadcast_to(np.expand_dims(g, axis), x.data.shape),),
        "sum_axis",
    )


def mean_all(x: Tensor) -> Tensor:
    return scale(sum_all(x), 1.0 / x.data.size)


# ---------------------------------------------------------------------------
# recurrent cell
# ---------------------------------------------------------------------------


def lstm_cell(x: Tensor, h: Tensor, c: Tensor, wx: Tensor, wh: Tensor, b: Tensor):
    """One step of the standard gated recurrence.

    Gate packing along the last axis of ``wx`` [Din,4*Dh], ``wh`` [Dh,4*Dh]
    and ``b`` [4*Dh] is (input, forget, cell, output). Returns (h', c').
    """
    if x.data.ndim != 2 or h.data.ndim != 2 or c.data.ndim != 2:
        raise InvalidShapeError(
            f"lstm_cell expects 2-d x/h/c, got {x.data.shape}, {h.data.shape}, {c.data.shape}"
        )
    dh = h.data.shape[1]
    if (
        c.data.shape != h.data.shape
        or x.data.shape[0] != h.data.shape[0]
        or wx.data.shape != (x.data.shape[1], 4 * dh)
        or wh.data.shape != (dh, 4 * dh)
        or b.data.shape != (4 * dh,)
    ):
        raise InvalidShapeError(
            f"lstm_cell parameter shapes inconsistent: x {x.data.shape}, h {h.data.shape}, "
            f"c {c.data.shape}, wx {wx.data.shape}, wh {wh.data.shape}, b {b.data.shape}"
        )
    z = add(dense(x, wx, b), matmul(h, wh))
    gate_i = sigmoid(slice_axis(z, 1, 0, dh))
    gate_f = sigmoid(slice_axis(z, 1, dh, 2 * dh))
    gate_g = tanh(slice_axis(z, 1, 2 * dh, 3 * dh))
    gate_o = sigmoid(slice_axis(z, 1, 3 * dh, 4 * dh))
    c_next = add(mul(gate_f, c), mul(gate_i, gate_g))
    h_next = mul(gate_o, tanh(c_next))
    return h_next, c_next
