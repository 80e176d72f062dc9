"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

A :class:`Value` wraps a numpy array and records enough provenance to run
backpropagation from a scalar root. Gradients accumulate additively: calling
``backward`` twice without re-building the graph doubles leaf gradients.

Subgradient conventions: relu'(0) = 0; elementwise maximum routes the
gradient to its first argument on ties.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterator, Mapping, Sequence

import numpy as np

from .errors import ContractError

PARAM_FORMAT_VERSION = 1


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` along the axes numpy broadcast over."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


class Value:
    """A node in the computation graph."""

    __slots__ = ("data", "grad", "_prev", "_backward")

    def __init__(self, data, _prev: tuple["Value", ...] = (),
                 _backward: Callable[[], None] | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = np.zeros_like(self.data)
        self._prev = _prev
        self._backward = _backward

    # -- helpers ----------------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @staticmethod
    def _wrap(x) -> "Value":
        return x if isinstance(x, Value) else Value(x)

    def __repr__(self):
        return f"Value(shape={self.shape}, data={self.data!r})"

    def item(self) -> float:
        return float(self.data)

    # -- arithmetic -------------------------------------------------------

    def __add__(self, other):
        other = self._wrap(other)
        out = Value(self.data + other.data, (self, other))

        def _back():
            self.grad += _unbroadcast(out.grad, self.shape)
            other.grad += _unbroadcast(out.grad, other.shape)

        out._backward = _back
        return out

    __radd__ = __add__

    def __neg__(self):
        out = Value(-self.data, (self,))

        def _back():
            self.grad += -out.grad

        out._backward = _back
        return out

    def __sub__(self, other):
        return self + (-self._wrap(other))

    def __rsub__(self, other):
        return self._wrap(other) + (-self)

    def __mul__(self, other):
        other = self._wrap(other)
        out = Value(self.data * other.data, (self, other))

        def _back():
            self.grad += _unbroadcast(out.grad * other.data, self.shape)
            other.grad += _unbroadcast(out.grad * self.data, other.shape)

        out._backward = _back
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._wrap(other)
        out = Value(self.data / other.data, (self, other))

        def _back():
            self.grad += _unbroadcast(out.grad / other.data, self.shape)
            other.grad += _unbroadcast(-out.grad * self.data / other.data ** 2,
                                       other.shape)

        out._backward = _back
        return out

    def __rtruediv__(self, other):
        return self._wrap(other) / self

    def __pow__(self, p: float):
        if not isinstance(p, (int, float)):
            raise ContractError("only constant powers are supported")
        out = Value(self.data ** p, (self,))

        def _back():
            self.grad += out.grad * p * self.data ** (p - 1)

        out._backward = _back
        return out

    # -- elementwise nonlinearities --------------------------------------

    def exp(self):
        out = Value(np.exp(self.data), (self,))

        def _back():
            self.grad += out.grad * out.data

        out._backward = _back
        return out

    def log(self):
        if np.any(self.data <= 0.0):
            raise ContractError("log requires strictly positive input")
        out = Value(np.log(self.data), (self,))

        def _back():
            self.grad += out.grad / self.data

        out._backward = _back
        return out

    def tanh(self):
        out = Value(np.tanh(self.data), (self,))

        def _back():
            self.grad += out.grad * (1.0 - out.data ** 2)

        out._backward = _back
        return out

    def relu(self):
        out = Value(np.maximum(self.data, 0.0), (self,))

        def _back():
            self.grad += out.grad * (self.data > 0.0)

        out._backward = _back
        return out

    def maximum(self, other):
        other = self._wrap(other)
        out = Value(np.maximum(self.data, other.data), (self, other))

        def _back():
            first = self.data >= other.data  # first argument wins ties
            self.grad += _unbroadcast(out.grad * first, self.shape)
            other.grad += _unbroadcast(out.grad * ~first, other.shape)

        out._backward = _back
        return out

    # -- reductions and linear algebra -----------------------------------

    def sum(self, axis: int | None = None):
        out = Value(self.data.sum(axis=axis), (self,))

        def _back():
            if axis is None:
                self.grad += out.grad
            else:
                self.grad += np.expand_dims(out.grad, axis)

        out._backward = _back
        return out

    def mean(self, axis: int | None = None):
        count = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis) * (1.0 / count)

    def matmul(self, other):
        other = self._wrap(other)
        if self.data.ndim != 2 or other.data.ndim not in (1, 2):
            raise ContractError(
                f"matmul expects (m,n) @ (n,) or (n,p); got {self.shape} @ {other.shape}"
            )
        if self.shape[1] != other.shape[0]:
            raise ContractError(f"matmul shape mismatch: {self.shape} @ {other.shape}")
        out = Value(self.data @ other.data, (self, other))

        def _back():
            if other.data.ndim == 1:
                self.grad += np.outer(out.grad, other.data)
                other.grad += self.data.T @ out.grad
            else:
                self.grad += out.grad @ other.data.T
                other.grad += self.data.T @ out.grad

        out._backward = _back
        return out

    __matmul__ = matmul

    def dot(self, other):
        other = self._wrap(other)
        if self.data.ndim != 1 or other.data.ndim != 1:
            raise ContractError("dot expects two 1-D values")
        if self.shape != other.shape:
            raise ContractError(f"dot shape mismatch: {self.shape} vs {other.shape}")
        out = Value(np.dot(self.data, other.data), (self, other))

        def _back():
            self.grad += out.grad * other.data
            other.grad += out.grad * self.data

        out._backward = _back
        return out

    def __getitem__(self, idx):
        out = Value(self.data[idx], (self,))

        def _back():
            np.add.at(self.grad, idx, out.grad)

        out._backward = _back
        return out

    # -- backward pass ----------------------------------------------------

    def _topo(self) -> list["Value"]:
        order: list[Value] = []
        seen: set[int] = set()
        stack: list[tuple[Value, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._prev:
                if id(parent) not in seen:
                    stack.append((parent, False))
        return order

    def backward(self) -> None:
        """Backpropagate from a scalar root; leaf gradients accumulate."""
        if self.data.size != 1:
            raise ContractError(f"backward requires a scalar root, got shape {self.shape}")
        order = self._topo()
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None:
                node._backward()

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)


# ---------------------------------------------------------------------------
# Composite / specialized ops
# ---------------------------------------------------------------------------

def cosine_similarity_matrix(a: Value, b: Value) -> Value:
    """Row-wise cosine similarities: (m, d) x (n, d) -> (m, n)."""
    a, b = Value._wrap(a), Value._wrap(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ContractError(f"cosine expects (m,d) and (n,d); got {a.shape}, {b.shape}")
    na = np.linalg.norm(a.data, axis=1)
    nb = np.linalg.norm(b.data, axis=1)
    if np.any(na == 0.0) or np.any(nb == 0.0):
        raise ContractError("cosine similarity undefined for zero rows")
    cos = (a.data @ b.data.T) / np.outer(na, nb)
    out = Value(cos, (a, b))

    def _back():
        g = out.grad
        inv = 1.0 / np.outer(na, nb)                      # (m, n)
        a.grad += (g * inv) @ b.data \
            - ((g * cos).sum(axis=1) / na ** 2)[:, None] * a.data
        b.grad += (g * inv).T @ a.data \
            - ((g * cos).sum(axis=0) / nb ** 2)[:, None] * b.data

    out._backward = _back
    return out


def gather_rows(table: Value, indices: Sequence[int],
                fill: np.ndarray | None = None) -> Value:
    """Select rows of a (V, d) table; index -1 takes the matching row of ``fill``.

    Backward scatter-adds only into the selected in-table rows, which is what
    an embedding lookup with out-of-vocabulary constants needs.
    """
    table = Value._wrap(table)
    idx = np.asarray(indices, dtype=np.int64)
    data = np.empty((len(idx), table.shape[1]), dtype=np.float64)
    in_vocab = idx >= 0
    data[in_vocab] = table.data[idx[in_vocab]]
    if np.any(~in_vocab):
        if fill is None:
            raise ContractError("gather_rows: negative index but no fill rows given")
        data[~in_vocab] = np.asarray(fill, dtype=np.float64)[~in_vocab]
    out = Value(data, (table,))

    def _back():
        np.add.at(table.grad, idx[in_vocab], out.grad[in_vocab])

    out._backward = _back
    return out


# ---------------------------------------------------------------------------
# Named parameter vectors
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ParamVector:
    """An ordered set of named float64 arrays with a fixed flattening order.

    Flattening concatenates each array (C order) in the order the names were
    inserted; this order is shared by the optimizer, the Fisher diagonal and
    the EWC penalty.
    """

    arrays: dict[str, np.ndarray]

    @property
    def names(self) -> list[str]:
        return list(self.arrays)

    @property
    def total_dim(self) -> int:
        return sum(a.size for a in self.arrays.values())

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]

    def copy(self) -> "ParamVector":
        return ParamVector({n: a.copy() for n, a in self.arrays.items()})

    def to_flat(self) -> np.ndarray:
        if not self.arrays:
            return np.zeros(0)
        return np.concatenate([a.ravel() for a in self.arrays.values()])

    def from_flat(self, flat: np.ndarray) -> "ParamVector":
        """A new ParamVector with this structure and the given flat contents."""
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != self.total_dim:
            raise ContractError(f"flat size {flat.size} != total_dim {self.total_dim}")
        out, offset = {}, 0
        for name, arr in self.arrays.items():
            out[name] = flat[offset:offset + arr.size].reshape(arr.shape).copy()
            offset += arr.size
        return ParamVector(out)

    def slices(self) -> Iterator[tuple[str, slice]]:
        """(name, flat-slice) pairs in flattening order."""
        offset = 0
        for name, arr in self.arrays.items():
            yield name, slice(offset, offset + arr.size)
            offset += arr.size

    def leaves(self) -> dict[str, Value]:
        """Fresh graph leaves over copies of the arrays (zero gradients)."""
        return {n: Value(a.copy()) for n, a in self.arrays.items()}

    def grads_from_leaves(self, leaves: Mapping[str, Value]) -> "ParamVector":
        return ParamVector({n: leaves[n].grad.copy() for n in self.arrays})

    # -- serialization: JSON manifest line + little-endian float64 blob ---

    def save(self, path: str | Path) -> None:
        manifest = {
            "format": "rankstream-params",
            "version": PARAM_FORMAT_VERSION,
            "dtype": "<f8",
            "entries": [{"name": n, "shape": list(a.shape)} for n, a in self.arrays.items()],
        }
        with open(path, "wb") as fh:
            fh.write(json.dumps(manifest).encode("utf-8"))
            fh.write(b"\n")
            for a in self.arrays.values():
                fh.write(a.astype("<f8").tobytes(order="C"))

    @classmethod
    def load(cls, path: str | Path) -> "ParamVector":
        with open(path, "rb") as fh:
            manifest = json.loads(fh.readline().decode("utf-8"))
            if manifest.get("format") != "rankstream-params":
                raise ContractError(f"{path}: not a parameter file")
            if manifest.get("version") != PARAM_FORMAT_VERSION:
                raise ContractError(f"{path}: unsupported format version")
            arrays = {}
            for entry in manifest["entries"]:
                shape = tuple(entry["shape"])
                count = int(np.prod(shape)) if shape else 1
                buf = fh.read(count * 8)
                if len(buf) != count * 8:
                    raise ContractError(f"{path}: truncated parameter file")
                arrays[entry["name"]] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
        return cls(arrays)


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------

@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_name: str
    worst_index: int
    passed: bool


def finite_diff_check(f: Callable[[Mapping[str, Value]], Value],
                      params: ParamVector, h: float = 1e-5,
                      tol: float = 1e-4) -> GradCheckReport:
    """Compare analytic gradients of ``f`` against central finite differences.

    ``f`` maps a dict of leaf Values (one per named array) to a scalar Value.
    """
    if h <= 0:
        raise ContractError("h must be > 0")
    leaves = params.leaves()
    f(leaves).backward()
    analytic = {n: leaves[n].grad.copy() for n in params.arrays}

    def eval_at(p: ParamVector) -> float:
        return float(f(p.leaves()).data)

    worst = (0.0, "", 0)
    for name, arr in params.arrays.items():
        flat = arr.ravel()
        for i in range(flat.size):
            bumped = params.copy()
            bumped.arrays[name].ravel()[i] = flat[i] + h
            fp = eval_at(bumped)
            bumped.arrays[name].ravel()[i] = flat[i] - h
            fm = eval_at(bumped)
            numeric = (fp - fm) / (2.0 * h)
            a = analytic[name].ravel()[i]
            rel = abs(a - numeric) / max(abs(a) + abs(numeric), 1e-6)
            if rel > worst[0]:
                worst = (rel, name, i)
    return GradCheckReport(
        max_rel_error=worst[0], worst_name=worst[1], worst_index=worst[2],
        passed=worst[0] <= tol,
    )
