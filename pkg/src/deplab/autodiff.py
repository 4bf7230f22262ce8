"""Reverse-mode automatic differentiation over dense 2-D arrays.

A Tape records one op per forward call; backward walks the records in
reverse creation order exactly once. Values are (rows, cols) float64
arrays; every op validates shapes and rejects non-finite outputs.
Gradient rules are written against the trailing two axes so the same
closures serve scalar backward passes and batched (matrix-seeded)
Jacobian extraction.
"""

from __future__ import annotations

import math
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np


class DimensionError(ValueError):
    """Operands with incompatible shapes, named after the offending op."""


class NumericsError(ArithmeticError):
    """A forward op produced NaN or Inf."""


class ContractError(ValueError):
    """An op was called outside its contract (e.g. non-scalar backward root)."""


class Value:
    """Node in the computation graph: a (rows, cols) array, possibly on a tape."""

    __slots__ = ("data", "tape", "name", "needs_grad")

    def __init__(self, data: np.ndarray, tape: Optional["Tape"] = None,
                 name: str = "", needs_grad: bool = False):
        self.data = data
        self.tape = tape
        self.name = name
        self.needs_grad = needs_grad

    @classmethod
    def const(cls, data) -> "Value":
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(-1, 1)
        return cls(arr)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.data.shape  # type: ignore[return-value]

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self) -> str:
        label = self.name or "value"
        return f"<Value {label} {self.data.shape}>"


# one record: (outputs, parents, vjp); vjp(gs, needed) returns per-parent grads
Record = Tuple[Tuple[Value, ...], Tuple[Value, ...], Callable]


def _ensure_finite(op: str, arr: np.ndarray) -> None:
    if not np.isfinite(arr).all():
        raise NumericsError(f"{op}: non-finite value in forward result")


class Tape:
    """Topologically ordered op records with reverse-mode backward."""

    def __init__(self):
        self._records: List[Record] = []

    def __len__(self) -> int:
        return len(self._records)

    def _emit(self, op: str, data: np.ndarray, parents: Tuple[Value, ...], vjp: Callable) -> Value:
        _ensure_finite(op, data)
        out = Value(data, tape=self, needs_grad=True)
        self._records.append(((out,), parents, vjp))
        return out

    # ---- forward ops -------------------------------------------------

    def matmul(self, a: Value, b: Value) -> Value:
        if a.shape[1] != b.shape[0]:
            raise DimensionError(f"matmul: {a.shape} @ {b.shape}")
        data = a.data @ b.data

        def vjp(gs, needed):
            g = gs[0]
            da = g @ b.data.T if needed[0] else None
            db = a.data.T @ g if needed[1] else None
            return da, db

        return self._emit("matmul", data, (a, b), vjp)

    def add(self, a: Value, b: Value) -> Value:
        if a.shape != b.shape and not (a.shape[0] == b.shape[0] and b.shape[1] == 1):
            raise DimensionError(f"add: {a.shape} + {b.shape}")
        broadcast_b = b.shape != a.shape
        data = a.data + b.data

        def vjp(gs, needed):
            g = gs[0]
            db = None
            if needed[1]:
                db = g.sum(axis=-1, keepdims=True) if broadcast_b else g
            return (g if needed[0] else None), db

        return self._emit("add", data, (a, b), vjp)

    def sub(self, a: Value, b: Value) -> Value:
        if a.shape != b.shape:
            raise DimensionError(f"sub: {a.shape} - {b.shape}")
        data = a.data - b.data

        def vjp(gs, needed):
            g = gs[0]
            return (g if needed[0] else None), (-g if needed[1] else None)

        return self._emit("sub", data, (a, b), vjp)

    def mul(self, a: Value, b: Value) -> Value:
        if a.shape != b.shape:
            raise DimensionError(f"mul: {a.shape} * {b.shape}")
        data = a.data * b.data

        def vjp(gs, needed):
            g = gs[0]
            da = g * b.data if needed[0] else None
            db = g * a.data if needed[1] else None
            return da, db

        return self._emit("mul", data, (a, b), vjp)

    def scale(self, a: Value, factor: float) -> Value:
        data = a.data * factor

        def vjp(gs, needed):
            return (gs[0] * factor if needed[0] else None),

        return self._emit("scale", data, (a,), vjp)

    def add_const(self, a: Value, constant: float) -> Value:
        data = a.data + constant

        def vjp(gs, needed):
            return (gs[0] if needed[0] else None),

        return self._emit("add_const", data, (a,), vjp)

    def tanh(self, a: Value) -> Value:
        data = np.tanh(a.data)

        def vjp(gs, needed):
            return (gs[0] * (1.0 - data * data) if needed[0] else None),

        return self._emit("tanh", data, (a,), vjp)

    def logistic(self, a: Value) -> Value:
        data = 1.0 / (1.0 + np.exp(-a.data))

        def vjp(gs, needed):
            return (gs[0] * data * (1.0 - data) if needed[0] else None),

        return self._emit("logistic", data, (a,), vjp)

    def relu(self, a: Value) -> Value:
        data = np.maximum(a.data, 0.0)
        mask = a.data > 0.0

        def vjp(gs, needed):
            return (gs[0] * mask if needed[0] else None),

        return self._emit("relu", data, (a,), vjp)

    def concat(self, parts: Sequence[Value]) -> Value:
        """Stack column vectors / matrices along rows."""
        if not parts:
            raise DimensionError("concat: empty input")
        cols = parts[0].shape[1]
        if any(p.shape[1] != cols for p in parts):
            raise DimensionError(f"concat: mismatched column counts {[p.shape for p in parts]}")
        data = np.concatenate([p.data for p in parts], axis=0)
        offsets = np.cumsum([0] + [p.shape[0] for p in parts])

        def vjp(gs, needed):
            g = gs[0]
            return tuple(g[..., offsets[i]:offsets[i + 1], :] if needed[i] else None
                         for i in range(len(parts)))

        return self._emit("concat", data, tuple(parts), vjp)

    def hstack(self, parts: Sequence[Value]) -> Value:
        """Stack along columns."""
        if not parts:
            raise DimensionError("hstack: empty input")
        rows = parts[0].shape[0]
        if any(p.shape[0] != rows for p in parts):
            raise DimensionError(f"hstack: mismatched row counts {[p.shape for p in parts]}")
        data = np.concatenate([p.data for p in parts], axis=1)
        offsets = np.cumsum([0] + [p.shape[1] for p in parts])

        def vjp(gs, needed):
            g = gs[0]
            return tuple(g[..., :, offsets[i]:offsets[i + 1]] if needed[i] else None
                         for i in range(len(parts)))

        return self._emit("hstack", data, tuple(parts), vjp)

    def slice_rows(self, a: Value, start: int, stop: int) -> Value:
        if not 0 <= start < stop <= a.shape[0]:
            raise DimensionError(f"slice_rows: [{start}:{stop}] of {a.shape}")
        data = a.data[start:stop, :].copy()

        def vjp(gs, needed):
            if not needed[0]:
                return (None,)
            g = gs[0]
            full = np.zeros(g.shape[:-2] + a.shape, dtype=g.dtype)
            full[..., start:stop, :] = g
            return (full,)

        return self._emit("slice_rows", data, (a,), vjp)

    def lookup(self, table: Value, row: int) -> Value:
        """Row of an embedding table as a column vector."""
        if not 0 <= row < table.shape[0]:
            raise DimensionError(f"lookup: row {row} of {table.shape}")
        data = table.data[row, :].reshape(-1, 1).copy()

        def vjp(gs, needed):
            if not needed[0]:
                return (None,)
            g = gs[0]
            full = np.zeros(g.shape[:-2] + table.shape, dtype=g.dtype)
            full[..., row, :] = g[..., :, 0]
            return (full,)

        return self._emit("lookup", data, (table,), vjp)

    def gather_cols(self, a: Value, indices: Sequence[int]) -> Value:
        """Select columns (with repeats) of a matrix."""
        idx = np.asarray(indices, dtype=np.intp)
        if idx.size and (idx.min() < 0 or idx.max() >= a.shape[1]):
            raise DimensionError(f"gather_cols: indices out of range for {a.shape}")
        data = a.data[:, idx].copy()

        def vjp(gs, needed):
            if not needed[0]:
                return (None,)
            g = gs[0]
            full = np.zeros(g.shape[:-2] + a.shape, dtype=g.dtype)
            np.add.at(full, (Ellipsis, slice(None), idx), g)
            return (full,)

        return self._emit("gather_cols", data, (a,), vjp)

    def affine(self, w: Value, x: Value, b: Value) -> Value:
        """w @ x + b with b broadcast across columns of x."""
        if w.shape[1] != x.shape[0] or b.shape != (w.shape[0], 1):
            raise DimensionError(f"affine: {w.shape} @ {x.shape} + {b.shape}")
        data = w.data @ x.data + b.data

        def vjp(gs, needed):
            g = gs[0]
            dw = g @ x.data.swapaxes(-1, -2) if needed[0] else None
            dx = w.data.T @ g if needed[1] else None
            db = g.sum(axis=-1, keepdims=True) if needed[2] else None
            return dw, dx, db

        return self._emit("affine", data, (w, x, b), vjp)

    def pick(self, a: Value, row: int, col: int = 0) -> Value:
        """Single entry as a 1x1 scalar."""
        if not (0 <= row < a.shape[0] and 0 <= col < a.shape[1]):
            raise DimensionError(f"pick: ({row},{col}) of {a.shape}")
        data = a.data[row, col].reshape(1, 1).copy()

        def vjp(gs, needed):
            if not needed[0]:
                return (None,)
            g = gs[0]
            full = np.zeros(g.shape[:-2] + a.shape, dtype=g.dtype)
            full[..., row, col] = g[..., 0, 0]
            return (full,)

        return self._emit("pick", data, (a,), vjp)

    def sum(self, a: Value) -> Value:
        data = np.array([[a.data.sum()]])

        def vjp(gs, needed):
            if not needed[0]:
                return (None,)
            g = gs[0]
            return (g * np.ones(a.shape),)

        return self._emit("sum", data, (a,), vjp)

    def max(self, a: Value) -> Value:
        """Maximum entry; the gradient flows to its first occurrence."""
        flat = int(np.argmax(a.data))
        row, col = divmod(flat, a.shape[1])
        data = a.data[row, col].reshape(1, 1).copy()

        def vjp(gs, needed):
            if not needed[0]:
                return (None,)
            g = gs[0]
            full = np.zeros(g.shape[:-2] + a.shape, dtype=g.dtype)
            full[..., row, col] = g[..., 0, 0]
            return (full,)

        return self._emit("max", data, (a,), vjp)

    def lstm_cell(self, x: Value, h_prev: Value, c_prev: Value,
                  w: Value, u: Value, b: Value) -> Tuple[Value, Value]:
        """One LSTM step; gate rows of w/u/b are ordered [input; forget; output; candidate].

        Fused into a single record: the analytic backward below is checked
        against finite differences in the test suite.
        """
        hidden = h_prev.shape[0]
        if w.shape != (4 * hidden, x.shape[0]) or u.shape != (4 * hidden, hidden) \
                or b.shape != (4 * hidden, 1) or c_prev.shape != h_prev.shape:
            raise DimensionError(
                f"lstm_cell: x{x.shape} h{h_prev.shape} c{c_prev.shape} w{w.shape} u{u.shape} b{b.shape}")
        z = w.data @ x.data + u.data @ h_prev.data + b.data
        gi = 1.0 / (1.0 + np.exp(-z[:hidden]))
        gf = 1.0 / (1.0 + np.exp(-z[hidden:2 * hidden]))
        go = 1.0 / (1.0 + np.exp(-z[2 * hidden:3 * hidden]))
        gc = np.tanh(z[3 * hidden:])
        c_new = gf * c_prev.data + gi * gc
        tc = np.tanh(c_new)
        h_new = go * tc
        _ensure_finite("lstm_cell", h_new)
        _ensure_finite("lstm_cell", c_new)
        h_out = Value(h_new, tape=self, needs_grad=True)
        c_out = Value(c_new, tape=self, needs_grad=True)

        def vjp(gs, needed):
            gh, gcell = gs
            if gh is None:
                gh = np.zeros_like(gcell[..., :, :] if gcell is not None else h_new)
            dc = gh * go * (1.0 - tc * tc)
            if gcell is not None:
                dc = dc + gcell
            d_go = gh * tc
            d_gi = dc * gc
            d_gf = dc * c_prev.data
            d_gc = dc * gi
            dz = np.concatenate([
                d_gi * gi * (1.0 - gi),
                d_gf * gf * (1.0 - gf),
                d_go * go * (1.0 - go),
                d_gc * (1.0 - gc * gc),
            ], axis=-2)
            dx = w.data.T @ dz if needed[0] else None
            dh = u.data.T @ dz if needed[1] else None
            dcp = dc * gf if needed[2] else None
            dw = dz @ x.data.swapaxes(-1, -2) if needed[3] else None
            du = dz @ h_prev.data.swapaxes(-1, -2) if needed[4] else None
            db = dz.sum(axis=-1, keepdims=True) if needed[5] else None
            return dx, dh, dcp, dw, du, db

        self._records.append(((h_out, c_out), (x, h_prev, c_prev, w, u, b), vjp))
        return h_out, c_out

    # ---- backward ----------------------------------------------------

    def _depends_on(self, targets: Iterable[Value]) -> set:
        """Values whose forward result depends on any of the targets."""
        depends = set(targets)
        for outs, parents, _ in self._records:
            if any(p in depends for p in parents):
                depends.update(outs)
        return depends

    def backward(self, root: Value, seed: Optional[np.ndarray] = None,
                 wrt: Optional[Iterable[Value]] = None) -> Dict[Value, np.ndarray]:
        """Gradients of a scalar root (or seeded output) for all reachable nodes.

        With wrt given, propagation is pruned to nodes that can reach the
        wrt set; other nodes are absent from the result (their gradient is
        zero). The seed may carry leading batch axes for matrix-valued
        adjoints.
        """
        if seed is None:
            if root.size != 1:
                raise ContractError(f"backward: root has shape {root.shape}, expected scalar")
            seed = np.ones((1, 1))
        mask = None if wrt is None else self._depends_on(wrt)
        if mask is not None and root not in mask:
            return {}
        grads: Dict[Value, np.ndarray] = {root: np.asarray(seed, dtype=np.float64)}
        for outs, parents, vjp in reversed(self._records):
            gs = [grads.get(o) for o in outs]
            if all(g is None for g in gs):
                continue
            needed = tuple(p.needs_grad and (mask is None or p in mask) for p in parents)
            if not any(needed):
                continue
            for p, pg in zip(parents, vjp(tuple(gs), needed)):
                if pg is None:
                    continue
                acc = grads.get(p)
                grads[p] = pg if acc is None else acc + pg
        return grads


def backward(tape: Tape, root: Value) -> Dict[Value, np.ndarray]:
    return tape.backward(root)


def jacobian(tape: Tape, out: Value, wrt: Value) -> np.ndarray:
    """d out / d wrt as a (dim(out), dim(wrt)) matrix, one scalar backward per row."""
    k = out.size
    rows = np.zeros((k, wrt.size))
    for j in range(k):
        seed = np.zeros(out.shape)
        seed.flat[j] = 1.0
        grads = tape.backward(out, seed=seed, wrt=[wrt])
        g = grads.get(wrt)
        if g is not None:
            rows[j, :] = g.ravel()
    return rows


def jacobian_batched(tape: Tape, out: Value, wrt: Sequence[Value]) -> Dict[Value, np.ndarray]:
    """Jacobians of out w.r.t. several nodes from one matrix-seeded backward.

    Numerically identical to calling jacobian() per node; the k seed rows
    ride along a leading batch axis instead of separate passes.
    """
    k = out.size
    seed = np.zeros((k,) + out.shape)
    for j in range(k):
        seed[j].flat[j] = 1.0
    grads = tape.backward(out, seed=seed, wrt=list(wrt))
    result = {}
    for w in wrt:
        g = grads.get(w)
        result[w] = g.reshape(k, w.size) if g is not None else np.zeros((k, w.size))
    return result


class ParameterStore:
    """Named trainable parameters with Adam moment accumulators.

    The step counter is shared by all parameters of one model; gradients
    accumulate between backward passes and are cleared by adam_step.
    """

    def __init__(self):
        self.params: Dict[str, Value] = {}
        self.grads: Dict[str, np.ndarray] = {}
        self._moment1: Dict[str, np.ndarray] = {}
        self._moment2: Dict[str, np.ndarray] = {}
        self.step = 0
        self._by_value: Dict[Value, str] = {}

    def register(self, name: str, data: np.ndarray) -> Value:
        if name in self.params:
            raise ContractError(f"parameter {name!r} already registered")
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 1:
            arr = arr.reshape(-1, 1)
        value = Value(arr, name=name, needs_grad=True)
        self.params[name] = value
        self._moment1[name] = np.zeros_like(arr)
        self._moment2[name] = np.zeros_like(arr)
        self._by_value[value] = name
        return value

    def add_glorot(self, name: str, shape: Tuple[int, int], rng: np.random.Generator) -> Value:
        limit = math.sqrt(6.0) / math.sqrt(shape[0] + shape[1])
        return self.register(name, rng.uniform(-limit, limit, size=shape))

    def add_zeros(self, name: str, shape: Tuple[int, int]) -> Value:
        return self.register(name, np.zeros(shape))

    def __getitem__(self, name: str) -> Value:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def names(self) -> List[str]:
        return list(self.params)

    def accumulate(self, grads: Dict[Value, np.ndarray]) -> None:
        for value, grad in grads.items():
            name = self._by_value.get(value)
            if name is None:
                continue
            acc = self.grads.get(name)
            self.grads[name] = grad.copy() if acc is None else acc + grad

    def adam_step(self, learning_rate: float, beta1: float = 0.9,
                  beta2: float = 0.999, eps: float = 1e-8) -> None:
        """Bias-corrected Adam update over all parameters; clears gradients."""
        self.step += 1
        bc1 = 1.0 - beta1 ** self.step
        bc2 = 1.0 - beta2 ** self.step
        for name, value in self.params.items():
            m = self._moment1[name]
            v = self._moment2[name]
            grad = self.grads.get(name)
            if grad is None:
                m *= beta1
                v *= beta2
            else:
                m *= beta1
                m += (1.0 - beta1) * grad
                v *= beta2
                v += (1.0 - beta2) * grad * grad
            value.data -= learning_rate * (m / bc1) / (np.sqrt(v / bc2) + eps)
        self.grads.clear()

    def snapshot(self) -> Dict[str, np.ndarray]:
        return {name: value.data.copy() for name, value in self.params.items()}

    def restore(self, snapshot: Dict[str, np.ndarray]) -> None:
        for name, data in snapshot.items():
            self.params[name].data[...] = data


def adam_step(store: ParameterStore, learning_rate: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> None:
    store.adam_step(learning_rate, beta1=beta1, beta2=beta2, eps=eps)
