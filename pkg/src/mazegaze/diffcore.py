"""Minimal reverse-mode automatic differentiation on numpy arrays.

Values are wrapped in :class:`DValue`.  Every operation whose inputs require
gradients appends a node to the active :class:`Tape`; :func:`backward` walks
that tape in reverse and materializes ``.grad`` on the leaf values.

Most operations accept an optional leading batch axis (``conv2d`` on
``[B, C, H, W]``, ``linear`` on ``[B, n]``) so a whole minibatch of mazes is
processed with a single graph.
"""

from __future__ import annotations

import json
import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

CHECKPOINT_FORMAT = "mazegaze-checkpoint"
CHECKPOINT_VERSION = 1


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class ContractError(RuntimeError):
    """An operation was called outside its contract."""


class Tape:
    """Records operations in execution order (which is a topological order)."""

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self):
        _state.stack.append(self)
        return self

    def __exit__(self, *exc):
        _state.stack.pop()
        return False

    def record(self, node: "_Node") -> None:
        node.tape = self
        self.nodes.append(node)

    def clear(self) -> None:
        for node in self.nodes:
            node.tape = None
        self.nodes = []


class _State(threading.local):
    def __init__(self):
        self.stack: list[Tape] = [Tape()]
        # branch signatures collected while grad_check evaluates a function
        self.branch_log: list | None = None
        self.recording = True


_state = _State()


def active_tape() -> Tape:
    return _state.stack[-1]


@contextmanager
def no_grad():
    """Evaluate without recording anything on the tape."""
    prev = _state.recording
    _state.recording = False
    try:
        yield
    finally:
        _state.recording = prev


@dataclass(eq=False)
class _Node:
    out: "DValue"
    parents: tuple
    backward: Callable[[np.ndarray], tuple]
    name: str
    tape: Tape | None = None


class DValue:
    """An array taking part in gradient computation."""

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self._node: _Node | None = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        flag = ", requires_grad" if self.requires_grad else ""
        return f"DValue(shape={self.shape}{flag})"

    def __add__(self, other):
        return add(self, _lift(other, self.shape))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _lift(other, self.shape))

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)


def _lift(x, shape) -> DValue:
    if isinstance(x, DValue):
        return x
    return DValue(np.broadcast_to(np.asarray(x, dtype=np.float64), shape))


def constant(x) -> DValue:
    return x if isinstance(x, DValue) else DValue(x)


def record(data: np.ndarray, parents: Sequence[DValue], backward, name: str) -> DValue:
    """Wrap ``data`` as the output of an op; put it on the tape if needed.

    ``backward`` maps the output gradient to a tuple of input gradients (one
    per parent, ``None`` allowed for parents that need none).
    """
    out = DValue(data)
    if _state.recording and any(p.requires_grad for p in parents):
        out.requires_grad = True
        node = _Node(out, tuple(parents), backward, name)
        active_tape().record(node)
        out._node = node
    return out


def note_branch(signature: np.ndarray) -> None:
    """Report the branch pattern of a piecewise op (used by grad_check)."""
    if _state.branch_log is not None:
        _state.branch_log.append(np.array(signature, copy=True))


def _same_shape(x: DValue, y: DValue, op: str) -> None:
    if x.shape != y.shape:
        raise DimensionError(f"{op}: shape mismatch {x.shape} vs {y.shape}")


# ---------------------------------------------------------------------------
# elementwise and reductions


def add(x: DValue, y: DValue) -> DValue:
    _same_shape(x, y, "add")
    return record(x.data + y.data, (x, y), lambda g: (g, g), "add")


def sub(x: DValue, y: DValue) -> DValue:
    _same_shape(x, y, "sub")
    return record(x.data - y.data, (x, y), lambda g: (g, -g), "sub")


def mul(x: DValue, y: DValue) -> DValue:
    _same_shape(x, y, "mul")
    xd, yd = x.data, y.data
    return record(xd * yd, (x, y), lambda g: (g * yd, g * xd), "mul")


def scale(x: DValue, c: float) -> DValue:
    return record(x.data * c, (x,), lambda g: (g * c,), "scale")


def square(x: DValue) -> DValue:
    xd = x.data
    return record(xd * xd, (x,), lambda g: (2.0 * g * xd,), "square")


def relu(x: DValue) -> DValue:
    active = x.data > 0
    note_branch(active)
    return record(np.where(active, x.data, 0.0), (x,), lambda g: (g * active,), "relu")


def exp(x: DValue) -> DValue:
    y = np.exp(x.data)
    return record(y, (x,), lambda g: (g * y,), "exp")


def sum(x: DValue, axis=None) -> DValue:  # noqa: A001 - mirrors numpy
    shape = x.shape

    def back(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return record(np.sum(x.data, axis=axis), (x,), back, "sum")


def mean(x: DValue) -> DValue:
    n = x.data.size
    return scale(sum(x), 1.0 / n)


def mse(x: DValue, y: DValue) -> DValue:
    """Mean over all elements of the squared difference."""
    _same_shape(x, y, "mse")
    diff = x.data - y.data
    n = diff.size

    def back(g):
        gx = (2.0 / n) * g * diff
        return gx, -gx

    return record(np.mean(diff * diff), (x, y), back, "mse")


# ---------------------------------------------------------------------------
# structural


def reshape(x: DValue, shape) -> DValue:
    old = x.shape
    return record(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),), "reshape")


def concat(values: Sequence[DValue], axis: int = 0) -> DValue:
    sizes = [v.shape[axis] for v in values]
    cuts = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, cuts, axis=axis))

    return record(np.concatenate([v.data for v in values], axis=axis), tuple(values), back, "concat")


def stack(values: Sequence[DValue], axis: int = 0) -> DValue:
    for v in values[1:]:
        _same_shape(values[0], v, "stack")

    def back(g):
        return tuple(np.moveaxis(g, axis, 0))

    return record(np.stack([v.data for v in values], axis=axis), tuple(values), back, "stack")


# ---------------------------------------------------------------------------
# layers


def linear(x: DValue, weight: DValue, bias: DValue) -> DValue:
    """Affine map ``x @ weight.T + bias`` for ``x`` of shape [n] or [B, n]."""
    if weight.ndim != 2 or bias.shape != (weight.shape[0],):
        raise DimensionError(f"linear: weight {weight.shape} / bias {bias.shape} inconsistent")
    if x.ndim not in (1, 2) or x.shape[-1] != weight.shape[1]:
        raise DimensionError(f"linear: input {x.shape} does not match weight {weight.shape}")
    xd, wd = x.data, weight.data

    def back(g):
        if xd.ndim == 1:
            return g @ wd, np.outer(g, xd), g
        return g @ wd, g.T @ xd, g.sum(axis=0)

    return record(xd @ wd.T + bias.data, (x, weight, bias), back, "linear")


def _im2col(xp: np.ndarray, k: int, stride: int, ho: int, wo: int) -> np.ndarray:
    # xp: [B, C, Hp, Wp] -> [B, C*k*k, ho*wo]
    b, c = xp.shape[:2]
    cols = np.empty((b, c, k, k, ho, wo))
    for i in range(k):
        for j in range(k):
            cols[:, :, i, j] = xp[:, :, i : i + stride * (ho - 1) + 1 : stride, j : j + stride * (wo - 1) + 1 : stride]
    return cols.reshape(b, c * k * k, ho * wo)


def conv2d(x: DValue, kernel: DValue, bias: DValue, stride: int = 1, padding: int = 0) -> DValue:
    """2D cross-correlation on [C, H, W] or [B, C, H, W] inputs."""
    if kernel.ndim != 4 or kernel.shape[2] != kernel.shape[3]:
        raise DimensionError(f"conv2d: kernel must be [C_out, C_in, k, k], got {kernel.shape}")
    c_out, c_in, k, _ = kernel.shape
    if k % 2 == 0:
        raise DimensionError(f"conv2d: kernel size must be odd, got {k}")
    if bias.shape != (c_out,):
        raise DimensionError(f"conv2d: bias {bias.shape} does not match {c_out} output channels")
    unbatched = x.ndim == 3
    if x.ndim not in (3, 4) or x.shape[-3] != c_in:
        raise DimensionError(f"conv2d: input {x.shape} does not match kernel {kernel.shape}")
    xd = x.data[None] if unbatched else x.data
    b, _, h, w = xd.shape
    ho = (h + 2 * padding - k) // stride + 1
    wo = (w + 2 * padding - k) // stride + 1
    if ho < 1 or wo < 1:
        raise DimensionError(f"conv2d: input {x.shape} too small for kernel {k} with padding {padding}")

    xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else xd
    cols = _im2col(xp, k, stride, ho, wo)
    kmat = kernel.data.reshape(c_out, -1)
    out = (np.matmul(kmat, cols) + bias.data[:, None]).reshape(b, c_out, ho, wo)

    def back(g):
        g = (g[None] if unbatched else g).reshape(b, c_out, ho * wo)
        gk = np.matmul(g, cols.transpose(0, 2, 1)).sum(axis=0).reshape(kernel.shape)
        gb = g.sum(axis=(0, 2))
        dcols = np.matmul(kmat.T, g).reshape(b, c_in, k, k, ho, wo)
        gxp = np.zeros_like(xp)
        for i in range(k):
            for j in range(k):
                gxp[:, :, i : i + stride * (ho - 1) + 1 : stride, j : j + stride * (wo - 1) + 1 : stride] += dcols[:, :, i, j]
        gx = gxp[:, :, padding : padding + h, padding : padding + w] if padding else gxp
        return (gx[0] if unbatched else gx), gk, gb

    return record(out[0] if unbatched else out, (x, kernel, bias), back, "conv2d")


# ---------------------------------------------------------------------------
# backward pass


def backward(loss: DValue) -> None:
    """Propagate d(loss)/d(.) to every reachable leaf and clear the tape.

    Leaf gradients are overwritten, not accumulated.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    node = loss._node
    if node is None or node.tape is None:
        raise ContractError("loss is not on an active tape (backward already called, or no graph recorded)")
    tape = node.tape
    nodes = tape.nodes[: tape.nodes.index(node) + 1]
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, DValue] = {}
    for nd in reversed(nodes):
        g = grads.pop(id(nd.out), None)
        if g is None:
            continue
        for parent, pg in zip(nd.parents, nd.backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if parent._node is None:
                leaves[key] = parent
            grads[key] = grads[key] + pg if key in grads else pg
    for key, leaf in leaves.items():
        leaf.grad = np.array(grads[key], dtype=np.float64).reshape(leaf.shape)
    for nd in tape.nodes:
        nd.out._node = None
    tape.clear()


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict[str, DValue], grads: dict[str, np.ndarray] | None, state: AdamState):
    """One bias-corrected Adam update, applied in place.

    ``grads`` defaults to each parameter's ``.grad``; a missing gradient is
    treated as zero.
    """
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    for name, p in params.items():
        g = p.grad if grads is None else grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.shape:
            raise DimensionError(f"adam_step: gradient for {name!r} has shape {g.shape}, expected {p.shape}")
        m = state.m.get(name)
        v = state.v.get(name)
        m = (1 - b1) * g if m is None else b1 * m + (1 - b1) * g
        v = (1 - b2) * g * g if v is None else b2 * v + (1 - b2) * g * g
        state.m[name], state.v[name] = m, v
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        p.data -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params, state


# ---------------------------------------------------------------------------
# finite-difference verification


@dataclass
class GradCheckReport:
    max_rel_error: float
    passed: bool
    n_checked: int
    n_skipped: int
    notes: list = field(default_factory=list)


def _eval_with_branches(f, inputs):
    _state.branch_log = []
    try:
        with Tape():
            val = float(f(*inputs).data)
        return val, _state.branch_log
    finally:
        _state.branch_log = None


def _same_branches(a, b) -> bool:
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


def grad_check(
    f: Callable[..., DValue],
    inputs: Sequence[DValue],
    h: float = 1e-5,
    tol: float = 1e-4,
    floor: float = 1e-7,
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
) -> GradCheckReport:
    """Compare analytic gradients of scalar ``f(*inputs)`` with central differences.

    The relative error of a coordinate is ``|a - n| / max(|a|, |n|, floor)``.
    Coordinates where the +h and -h evaluations take different branches of a
    piecewise op (relu kinks) are skipped.  With ``max_coords`` only a random
    subset of coordinates per input is probed.
    """
    for x in inputs:
        x.requires_grad = True
        x.grad = None
    with Tape():
        out = f(*inputs)
        if out.data.size != 1:
            raise ContractError("grad_check needs a scalar-valued function")
        backward(out)
    analytic = [np.zeros_like(x.data) if x.grad is None else x.grad.copy() for x in inputs]

    worst, checked, skipped = 0.0, 0, 0
    for x, a in zip(inputs, analytic):
        flat = x.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            idx = (rng or np.random.default_rng(0)).choice(flat.size, max_coords, replace=False)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            fp, bp = _eval_with_branches(f, inputs)
            flat[i] = orig - h
            fm, bm = _eval_with_branches(f, inputs)
            flat[i] = orig
            if not _same_branches(bp, bm):
                skipped += 1
                continue
            num = (fp - fm) / (2 * h)
            ana = a.reshape(-1)[i]
            err = abs(ana - num) / max(abs(ana), abs(num), floor)
            worst = max(worst, err)
            checked += 1
    notes = ["non-differentiable point skipped"] if skipped else []
    return GradCheckReport(worst, worst <= tol, checked, skipped, notes)


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, params: dict[str, DValue], state: AdamState | None = None, meta: dict | None = None) -> None:
    """Write named float64 parameter arrays (plus optional Adam moments) to an npz file."""
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "params": {k: list(v.shape) for k, v in params.items()},
        "meta": meta or {},
    }
    arrays = {f"param/{k}": v.data for k, v in params.items()}
    if state is not None:
        header["adam"] = {
            "lr": state.lr, "beta1": state.beta1, "beta2": state.beta2, "eps": state.eps, "step": state.step,
        }
        arrays.update({f"adam_m/{k}": v for k, v in state.m.items()})
        arrays.update({f"adam_v/{k}": v for k, v in state.v.items()})
    with open(path, "wb") as fh:
        np.savez(fh, __header__=np.array(json.dumps(header)), **arrays)


def load_checkpoint(path):
    """Inverse of :func:`save_checkpoint`; returns ``(params, adam_state_or_None, meta)``."""
    with np.load(path, allow_pickle=False) as z:
        header = json.loads(str(z["__header__"]))
        if header.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"{path}: not a {CHECKPOINT_FORMAT} file")
        if header.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {header.get('version')}")
        params = {}
        for name, shape in header["params"].items():
            arr = z[f"param/{name}"]
            if list(arr.shape) != shape:
                raise ValueError(f"{path}: parameter {name!r} has shape {arr.shape}, header says {shape}")
            params[name] = DValue(arr, requires_grad=True, name=name)
        state = None
        if "adam" in header:
            state = AdamState(**header["adam"])
            state.m = {k[len("adam_m/"):]: z[k].copy() for k in z.files if k.startswith("adam_m/")}
            state.v = {k[len("adam_v/"):]: z[k].copy() for k in z.files if k.startswith("adam_v/")}
    return params, state, header["meta"]
