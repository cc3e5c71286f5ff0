"""Dense tensors with reverse-mode differentiation on an explicit tape.

The operator set is exactly what the model needs: matmul, broadcasting
arithmetic, concat/split, activations, (masked) softmax, embedding lookup,
deterministic dropout, and an LSTM built from the primitives. Ops record a
backward closure on a thread-local tape whenever an input requires grad;
``backward`` replays the tape in reverse and clears it. Everything runs in
float64 by default so finite-difference checks have headroom; call
``set_default_dtype(np.float32)`` for a lighter runtime.
"""

from __future__ import annotations

import hashlib
import json
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Optional, Sequence

import numpy as np


class ShapeMismatchError(Exception):
    """Operands have incompatible shapes; the message names both."""


class NotScalarError(Exception):
    """backward() was handed a non-scalar loss."""


_DTYPE = np.float64


def set_default_dtype(dtype) -> None:
    global _DTYPE
    if np.dtype(dtype) not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError("supported dtypes are float32 and float64")
    _DTYPE = np.dtype(dtype).type


def get_default_dtype():
    return _DTYPE


class Tensor:
    """Dense array plus an optional gradient of the same shape."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=_DTYPE)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _not_scalar(self)

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # arithmetic sugar; all routed through the taped ops below
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return add(self, scale(as_tensor(other), -1.0))

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _not_scalar(t: Tensor):
    raise NotScalarError(f"expected a scalar, got shape {t.shape}")


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


# ---------------------------------------------------------------------------
# Tape
# ---------------------------------------------------------------------------


@dataclass
class _TapeEntry:
    out: Tensor
    backward: Callable[[np.ndarray], None]


class Tape:
    """Ordered record of executed ops; execution order is topological."""

    def __init__(self) -> None:
        self.entries: list[_TapeEntry] = []

    def __len__(self) -> int:
        return len(self.entries)

    def clear(self) -> None:
        self.entries.clear()


class _State(threading.local):
    def __init__(self) -> None:
        self.tape = Tape()
        self.recording = True


_STATE = _State()


def active_tape() -> Tape:
    return _STATE.tape


class no_grad:
    """Context manager that suspends tape recording."""

    def __enter__(self):
        self._saved = _STATE.recording
        _STATE.recording = False
        return self

    def __exit__(self, *exc):
        _STATE.recording = self._saved
        return False


def _record(out: Tensor, backward: Callable[[np.ndarray], None]) -> Tensor:
    if out.requires_grad and _STATE.recording:
        _STATE.tape.entries.append(_TapeEntry(out=out, backward=backward))
    return out


def backward(loss: Tensor) -> None:
    """Populate grads of every tensor the loss depends on; clears the tape.

    Gradients accumulate into ``.grad`` (zero-initialized on first touch),
    so parameters reused across several ops sum their contributions.
    """
    if loss.data.size != 1:
        raise NotScalarError(f"loss must be scalar, got shape {loss.shape}")
    tape = _STATE.tape
    loss.grad = np.ones_like(loss.data)
    try:
        for entry in reversed(tape.entries):
            if entry.out.grad is not None:
                entry.backward(entry.out.grad)
    finally:
        tape.clear()


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.zero_grad()


# ---------------------------------------------------------------------------
# Primitives
# ---------------------------------------------------------------------------


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcast gradient back to the operand's shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, s in enumerate(shape):
        if s == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _binary_forward(a: Tensor, b: Tensor, fn, opname: str) -> np.ndarray:
    try:
        return fn(a.data, b.data)
    except ValueError as exc:
        raise ShapeMismatchError(f"{opname}: shapes {a.shape} and {b.shape}") from exc


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(_binary_forward(a, b, np.add, "add"), a.requires_grad or b.requires_grad)

    def bwd(g: np.ndarray) -> None:
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g, b.shape))

    return _record(out, bwd)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(_binary_forward(a, b, np.multiply, "mul"), a.requires_grad or b.requires_grad)

    def bwd(g: np.ndarray) -> None:
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g * a.data, b.shape))

    return _record(out, bwd)


def scale(a: Tensor, s: float) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.data * s, a.requires_grad)

    def bwd(g: np.ndarray) -> None:
        a.accumulate_grad(g * s)

    return _record(out, bwd)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatchError(f"matmul: shapes {a.shape} and {b.shape}")
    out = Tensor(a.data @ b.data, a.requires_grad or b.requires_grad)

    def bwd(g: np.ndarray) -> None:
        if a.requires_grad:
            a.accumulate_grad(g @ b.data.T)
        if b.requires_grad:
            b.accumulate_grad(a.data.T @ g)

    return _record(out, bwd)


def transpose(a: Tensor) -> Tensor:
    a = as_tensor(a)
    if a.ndim != 2:
        raise ShapeMismatchError(f"transpose: expected a matrix, got shape {a.shape}")
    out = Tensor(a.data.T, a.requires_grad)

    def bwd(g: np.ndarray) -> None:
        a.accumulate_grad(g.T)

    return _record(out, bwd)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.data.reshape(shape), a.requires_grad)

    def bwd(g: np.ndarray) -> None:
        a.accumulate_grad(g.reshape(a.shape))

    return _record(out, bwd)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeMismatchError(
            f"concat(axis={axis}): shapes {[t.shape for t in tensors]}"
        ) from exc
    out = Tensor(data, any(t.requires_grad for t in tensors))
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g: np.ndarray) -> None:
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                t.accumulate_grad(g[tuple(idx)])

    return _record(out, bwd)


def split(a: Tensor, sizes: Sequence[int], axis: int = -1) -> list[Tensor]:
    """Inverse of concat: cut ``a`` into chunks of the given sizes."""
    a = as_tensor(a)
    if sum(sizes) != a.shape[axis]:
        raise ShapeMismatchError(
            f"split(axis={axis}): sizes {list(sizes)} do not cover {a.shape}"
        )
    outs = []
    lo = 0
    for size in sizes:
        hi = lo + size
        idx = [slice(None)] * a.ndim
        idx[axis] = slice(lo, hi)
        piece = Tensor(a.data[tuple(idx)], a.requires_grad)
        outs.append(_record(piece, _make_split_bwd(a, tuple(idx))))
        lo = hi
    return outs


def _make_split_bwd(a: Tensor, idx: tuple) -> Callable[[np.ndarray], None]:
    def bwd(g: np.ndarray) -> None:
        full = np.zeros_like(a.data)
        full[idx] = g
        a.accumulate_grad(full)

    return bwd


def relu(a: Tensor) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.maximum(a.data, 0.0), a.requires_grad)

    def bwd(g: np.ndarray) -> None:
        a.accumulate_grad(g * (a.data > 0))

    return _record(out, bwd)


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.where(a.data > 0, a.data, slope * a.data), a.requires_grad)

    def bwd(g: np.ndarray) -> None:
        a.accumulate_grad(g * np.where(a.data > 0, 1.0, slope))

    return _record(out, bwd)


def sigmoid(a: Tensor) -> Tensor:
    a = as_tensor(a)
    s = 1.0 / (1.0 + np.exp(-a.data))
    out = Tensor(s, a.requires_grad)

    def bwd(g: np.ndarray) -> None:
        a.accumulate_grad(g * s * (1.0 - s))

    return _record(out, bwd)


def tanh(a: Tensor) -> Tensor:
    a = as_tensor(a)
    t = np.tanh(a.data)
    out = Tensor(t, a.requires_grad)

    def bwd(g: np.ndarray) -> None:
        a.accumulate_grad(g * (1.0 - t * t))

    return _record(out, bwd)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(s, a.requires_grad)

    def bwd(g: np.ndarray) -> None:
        inner = (g * s).sum(axis=axis, keepdims=True)
        a.accumulate_grad((g - inner) * s)

    return _record(out, bwd)


def masked_softmax(a: Tensor, mask: np.ndarray, axis: int = -1) -> Tensor:
    """Softmax over unmasked entries; masked entries are exactly zero.

    ``mask`` is a boolean array (True = keep) broadcastable to ``a``. Every
    slice along ``axis`` must keep at least one entry.
    """
    a = as_tensor(a)
    keep = np.broadcast_to(np.asarray(mask, dtype=bool), a.shape)
    if not keep.any(axis=axis).all():
        raise ValueError("masked_softmax: some slice is fully masked")
    neg = np.where(keep, a.data, -np.inf)
    shifted = neg - neg.max(axis=axis, keepdims=True)
    e = np.where(keep, np.exp(shifted), 0.0)
    s = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(s, a.requires_grad)

    def bwd(g: np.ndarray) -> None:
        inner = (g * s).sum(axis=axis, keepdims=True)
        a.accumulate_grad(np.where(keep, (g - inner) * s, 0.0))

    return _record(out, bwd)


def log(a: Tensor) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.log(a.data), a.requires_grad)

    def bwd(g: np.ndarray) -> None:
        a.accumulate_grad(g / a.data)

    return _record(out, bwd)


def clip_min(a: Tensor, floor: float) -> Tensor:
    """Elementwise max(a, floor); gradient passes only where a > floor."""
    a = as_tensor(a)
    out = Tensor(np.maximum(a.data, floor), a.requires_grad)

    def bwd(g: np.ndarray) -> None:
        a.accumulate_grad(g * (a.data > floor))

    return _record(out, bwd)


def reduce_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims), a.requires_grad)

    def bwd(g: np.ndarray) -> None:
        if axis is None:
            a.accumulate_grad(np.broadcast_to(g, a.shape).copy())
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            a.accumulate_grad(np.broadcast_to(gg, a.shape).copy())

    return _record(out, bwd)


def embedding_lookup(table: Tensor, ids) -> Tensor:
    """Select rows of ``table`` by integer index; grads scatter-add back."""
    table = as_tensor(table)
    idx = np.asarray(ids, dtype=np.int64)
    if table.ndim != 2:
        raise ShapeMismatchError(f"embedding_lookup: table must be 2-D, got {table.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise IndexError(
            f"embedding_lookup: ids outside [0,{table.shape[0]}): "
            f"[{idx.min()},{idx.max()}]"
        )
    out = Tensor(table.data[idx], table.requires_grad)

    def bwd(g: np.ndarray) -> None:
        acc = np.zeros_like(table.data)
        np.add.at(acc, idx, g)
        table.accumulate_grad(acc)

    return _record(out, bwd)


gather_rows = embedding_lookup


def fold_seed(*parts) -> int:
    """Stable 64-bit key from arbitrary parts (strings, ints, tuples)."""
    h = hashlib.blake2b(digest_size=8)
    for p in parts:
        h.update(repr(p).encode("utf-8"))
        h.update(b"\x00")
    return int.from_bytes(h.digest(), "little")


def dropout(a: Tensor, rate: float, train: bool, seed: int = 0) -> Tensor:
    """Inverted dropout with a counter-based generator.

    The mask depends only on ``seed`` (fold the global seed, a layer id and
    the step counter with ``fold_seed``), so training runs are reproducible
    at batch size 1. Identity when not training or rate is 0.
    """
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate {rate} outside [0,1)")
    a = as_tensor(a)
    if not train or rate == 0.0:
        return a
    rng = np.random.Generator(np.random.Philox(key=seed & (2**64 - 1)))
    mask = (rng.random(a.shape) >= rate) / (1.0 - rate)
    out = Tensor(a.data * mask, a.requires_grad)

    def bwd(g: np.ndarray) -> None:
        a.accumulate_grad(g * mask)

    return _record(out, bwd)


# ---------------------------------------------------------------------------
# LSTM (composite: built from the primitives, differentiable for free)
# ---------------------------------------------------------------------------


@dataclass
class LstmParams:
    """Gate parameters in i|f|g|o order along the last axis."""

    w_ih: Tensor  # (d_in, 4h)
    w_hh: Tensor  # (h, 4h)
    bias: Tensor  # (4h,)

    @property
    def hidden(self) -> int:
        return self.w_hh.shape[0]

    def tensors(self) -> list[Tensor]:
        return [self.w_ih, self.w_hh, self.bias]


def lstm(x: Tensor, params: LstmParams, reverse: bool = False) -> Tensor:
    """Single-direction LSTM over a (T, d_in) sequence; returns (T, h)."""
    x = as_tensor(x)
    if x.ndim != 2 or x.shape[1] != params.w_ih.shape[0]:
        raise ShapeMismatchError(
            f"lstm: input {x.shape} does not match w_ih {params.w_ih.shape}"
        )
    hdim = params.hidden
    steps = range(x.shape[0] - 1, -1, -1) if reverse else range(x.shape[0])
    h = Tensor(np.zeros((1, hdim)))
    c = Tensor(np.zeros((1, hdim)))
    outs: dict[int, Tensor] = {}
    for t in steps:
        xt = gather_rows(x, [t])
        z = add(add(matmul(xt, params.w_ih), matmul(h, params.w_hh)), params.bias)
        gi, gf, gg, go = split(z, [hdim] * 4, axis=-1)
        c = add(mul(sigmoid(gf), c), mul(sigmoid(gi), tanh(gg)))
        h = mul(sigmoid(go), tanh(c))
        outs[t] = h
    return concat([outs[t] for t in range(x.shape[0])], axis=0)


def bilstm(x: Tensor, forward: LstmParams, backward_: LstmParams) -> Tensor:
    """Forward and backward LSTM passes, concatenated per step: (T, 2h)."""
    return concat([lstm(x, forward), lstm(x, backward_, reverse=True)], axis=-1)


def linear(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    out = matmul(x, w)
    return add(out, b) if b is not None else out


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    """Moments and step counter for one parameter group."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    state: AdamState,
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update; deterministic, returns new values.

    Parameters without an entry in ``grads`` are treated as zero-gradient
    (their moments still decay).
    """
    t = state.step + 1
    new_m, new_v, new_p = {}, {}, {}
    for name, p in params.items():
        g = grads.get(name)
        g = np.zeros_like(p) if g is None else np.asarray(g)
        if g.shape != p.shape:
            raise ShapeMismatchError(f"adam_step: {name} param {p.shape} vs grad {g.shape}")
        m = state.beta1 * state.m.get(name, np.zeros_like(p)) + (1 - state.beta1) * g
        v = state.beta2 * state.v.get(name, np.zeros_like(p)) + (1 - state.beta2) * g * g
        m_hat = m / (1 - state.beta1**t)
        v_hat = v / (1 - state.beta2**t)
        new_p[name] = p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
        new_m[name], new_v[name] = m, v
    next_state = AdamState(
        lr=state.lr,
        beta1=state.beta1,
        beta2=state.beta2,
        eps=state.eps,
        step=t,
        m=new_m,
        v=new_v,
    )
    return new_p, next_state


class Adam:
    """Adam over named parameter tensors, with per-prefix learning rates.

    ``group_lrs`` maps a name prefix (e.g. ``"encoder."``) to its own
    learning rate; everything else uses ``lr``. Each group keeps its own
    AdamState and is updated through :func:`adam_step`.
    """

    def __init__(
        self,
        params: Mapping[str, Tensor],
        lr: float = 1e-3,
        group_lrs: Optional[Mapping[str, float]] = None,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.params = dict(params)
        group_lrs = dict(group_lrs or {})
        self._groups: dict[str, list[str]] = {prefix: [] for prefix in group_lrs}
        self._groups[""] = []
        for name in self.params:
            prefix = next((p for p in group_lrs if name.startswith(p)), "")
            self._groups[prefix].append(name)
        self._states = {
            prefix: AdamState(lr=group_lrs.get(prefix, lr), beta1=beta1, beta2=beta2, eps=eps)
            for prefix in self._groups
        }

    def zero_grad(self) -> None:
        zero_grads(self.params.values())

    def step(self) -> None:
        for prefix, names in self._groups.items():
            if not names:
                continue
            values = {n: self.params[n].data for n in names}
            grads = {
                n: self.params[n].grad for n in names if self.params[n].grad is not None
            }
            new_values, self._states[prefix] = adam_step(self._states[prefix], values, grads)
            for n in names:
                self.params[n].data = new_values[n]

    def state_dict(self) -> dict:
        return {
            prefix: {
                "lr": s.lr,
                "beta1": s.beta1,
                "beta2": s.beta2,
                "eps": s.eps,
                "step": s.step,
                "m": {n: arr.tolist() for n, arr in s.m.items()},
                "v": {n: arr.tolist() for n, arr in s.v.items()},
            }
            for prefix, s in self._states.items()
        }

    def load_state_dict(self, data: dict) -> None:
        for prefix, blob in data.items():
            if prefix not in self._states:
                continue
            self._states[prefix] = AdamState(
                lr=blob["lr"],
                beta1=blob["beta1"],
                beta2=blob["beta2"],
                eps=blob["eps"],
                step=blob["step"],
                m={n: np.asarray(a, dtype=_DTYPE) for n, a in blob["m"].items()},
                v={n: np.asarray(a, dtype=_DTYPE) for n, a in blob["v"].items()},
            )


# ---------------------------------------------------------------------------
# Finite-difference gradient checking
# ---------------------------------------------------------------------------


@dataclass
class GradCheckReport:
    """Per-parameter worst relative error between tape and central FD."""

    per_param: dict[str, float]
    tol: float
    h: float

    @property
    def max_error(self) -> float:
        return max(self.per_param.values()) if self.per_param else 0.0

    @property
    def passed(self) -> bool:
        return all(err < self.tol for err in self.per_param.values())

    def __str__(self) -> str:
        lines = [f"grad check (h={self.h:g}, tol={self.tol:g})"]
        width = max((len(n) for n in self.per_param), default=4)
        for name in sorted(self.per_param):
            err = self.per_param[name]
            status = "ok" if err < self.tol else "FAIL"
            lines.append(f"  {name:<{width}}  {err:.3e}  {status}")
        lines.append(f"  max {self.max_error:.3e}  {'PASS' if self.passed else 'FAIL'}")
        return "\n".join(lines)


def grad_check(
    f: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    h: float = 1e-5,
    tol: float = 1e-4,
    scale_floor: float = 1e-3,
) -> GradCheckReport:
    """Compare tape gradients of a scalar function against central FD.

    ``f`` must be deterministic given the parameter values (disable
    dropout). Relative error uses ``|a - n| / max(|a|, |n|, scale_floor)``;
    the floor keeps finite-difference noise on near-zero gradients from
    dominating the ratio.
    """
    zero_grads(params.values())
    active_tape().clear()
    loss = f()
    backward(loss)
    analytic = {
        name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
        for name, p in params.items()
    }

    per_param: dict[str, float] = {}
    with no_grad():
        for name, p in params.items():
            worst = 0.0
            ana_flat = analytic[name].reshape(-1)
            for k in range(p.data.size):
                idx = np.unravel_index(k, p.data.shape) if p.data.shape else ()
                saved = p.data[idx]
                p.data[idx] = saved + h
                f_plus = f().item()
                p.data[idx] = saved - h
                f_minus = f().item()
                p.data[idx] = saved
                numeric = (f_plus - f_minus) / (2.0 * h)
                a = ana_flat[k]
                err = abs(a - numeric) / max(abs(a), abs(numeric), scale_floor)
                worst = max(worst, err)
            per_param[name] = worst
    return GradCheckReport(per_param=per_param, tol=tol, h=h)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

CHECKPOINT_VERSION = 1


def save_checkpoint(
    path: str | Path,
    params: Mapping[str, Tensor],
    optimizer: Optional[dict] = None,
    config: Optional[dict] = None,
    vocab: Optional[dict] = None,
) -> None:
    """Write a versioned JSON dump: name -> shape -> values, plus state."""
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "config": config or {},
        "params": {
            name: {"shape": list(p.shape), "values": p.data.reshape(-1).tolist()}
            for name, p in params.items()
        },
        "optimizer": optimizer or {},
        "vocab": vocab or {},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True)


def load_checkpoint(path: str | Path) -> dict:
    """Read a checkpoint; validates the declared shapes against the values."""
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format_version") != CHECKPOINT_VERSION:
        raise ValueError(
            f"unsupported checkpoint version {payload.get('format_version')!r}"
        )
    params = {}
    for name, rec in payload["params"].items():
        shape = tuple(rec["shape"])
        values = np.asarray(rec["values"], dtype=_DTYPE)
        expected = int(np.prod(shape)) if shape else 1
        if values.size != expected:
            raise ValueError(f"checkpoint param {name}: {values.size} values for shape {shape}")
        params[name] = values.reshape(shape)
    payload["params"] = params
    return payload
