"""A minimal reverse-mode autodiff tensor over float64 numpy arrays.

Every op builds a child tensor holding a closure that scatters the child's
gradient back to its parents; ``backward()`` runs them in reverse topological
order. All arithmetic is 64-bit and any non-finite forward value raises
immediately, so a NaN can never propagate silently into a gradient check.
"""

from __future__ import annotations

import math

import numpy as np

__all__ = ["Tensor", "concat", "gradient_check"]


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to the parent's shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """Dense float64 array node in a reverse-mode computation graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise FloatingPointError("tensor holds non-finite values")
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    # graph plumbing ----------------------------------------------------------

    @classmethod
    def _from_op(cls, data, parents, backward) -> "Tensor":
        out = cls(data)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        return out

    def _accum(self, grad: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(grad, dtype=np.float64, copy=True)
        else:
            self.grad = self.grad + grad

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Reverse-mode sweep from a scalar output."""
        if self.data.size != 1:
            raise ValueError(f"backward requires a scalar, got shape {self.shape}")
        topo: list[Tensor] = []
        seen = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # helpers -----------------------------------------------------------------

    @staticmethod
    def _lift(value) -> "Tensor":
        return value if isinstance(value, Tensor) else Tensor(value)

    def item(self) -> float:
        return float(self.data.reshape(()))

    # arithmetic --------------------------------------------------------------

    def __add__(self, other) -> "Tensor":
        other = self._lift(other)

        def backward(grad):
            if self.requires_grad:
                self._accum(_unbroadcast(grad, self.data.shape))
            if other.requires_grad:
                other._accum(_unbroadcast(grad, other.data.shape))

        return Tensor._from_op(self.data + other.data, (self, other), backward)

    __radd__ = __add__

    def __neg__(self) -> "Tensor":
        def backward(grad):
            if self.requires_grad:
                self._accum(-grad)

        return Tensor._from_op(-self.data, (self,), backward)

    def __sub__(self, other) -> "Tensor":
        return self + (-self._lift(other))

    def __rsub__(self, other) -> "Tensor":
        return self._lift(other) + (-self)

    def __mul__(self, other) -> "Tensor":
        other = self._lift(other)

        def backward(grad):
            if self.requires_grad:
                self._accum(_unbroadcast(grad * other.data, self.data.shape))
            if other.requires_grad:
                other._accum(_unbroadcast(grad * self.data, other.data.shape))

        return Tensor._from_op(self.data * other.data, (self, other), backward)

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Tensor":
        other = self._lift(other)

        def backward(grad):
            if self.requires_grad:
                self._accum(_unbroadcast(grad / other.data, self.data.shape))
            if other.requires_grad:
                other._accum(
                    _unbroadcast(-grad * self.data / (other.data**2), other.data.shape)
                )

        return Tensor._from_op(self.data / other.data, (self, other), backward)

    def __rtruediv__(self, other) -> "Tensor":
        return self._lift(other) / self

    def __matmul__(self, other) -> "Tensor":
        other = self._lift(other)
        if self.data.ndim != 2 or other.data.ndim != 2:
            raise ValueError("matmul expects 2D operands")

        def backward(grad):
            if self.requires_grad:
                self._accum(grad @ other.data.T)
            if other.requires_grad:
                other._accum(self.data.T @ grad)

        return Tensor._from_op(self.data @ other.data, (self, other), backward)

    # elementwise -------------------------------------------------------------

    def relu(self) -> "Tensor":
        mask = self.data > 0.0

        def backward(grad):
            if self.requires_grad:
                self._accum(grad * mask)

        return Tensor._from_op(np.where(mask, self.data, 0.0), (self,), backward)

    def exp(self) -> "Tensor":
        value = np.exp(self.data)

        def backward(grad):
            if self.requires_grad:
                self._accum(grad * value)

        return Tensor._from_op(value, (self,), backward)

    def log(self) -> "Tensor":
        def backward(grad):
            if self.requires_grad:
                self._accum(grad / self.data)

        return Tensor._from_op(np.log(self.data), (self,), backward)

    def sigmoid(self) -> "Tensor":
        value = 1.0 / (1.0 + np.exp(-self.data))

        def backward(grad):
            if self.requires_grad:
                self._accum(grad * value * (1.0 - value))

        return Tensor._from_op(value, (self,), backward)

    def clip(self, lo: float, hi: float) -> "Tensor":
        """Clamp values; gradient passes only where the input was interior."""
        mask = (self.data >= lo) & (self.data <= hi)

        def backward(grad):
            if self.requires_grad:
                self._accum(grad * mask)

        return Tensor._from_op(np.clip(self.data, lo, hi), (self,), backward)

    # reductions and shape ----------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        value = self.data.sum(axis=axis, keepdims=keepdims)

        def backward(grad):
            if not self.requires_grad:
                return
            g = np.asarray(grad)
            if axis is not None and not keepdims:
                axes = axis if isinstance(axis, tuple) else (axis,)
                axes = tuple(a % self.data.ndim for a in axes)
                for a in sorted(axes):
                    g = np.expand_dims(g, a)
            self._accum(np.broadcast_to(g, self.data.shape))

        return Tensor._from_op(value, (self,), backward)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        if axis is None:
            count = self.data.size
        else:
            axes = axis if isinstance(axis, tuple) else (axis,)
            count = int(np.prod([self.data.shape[a] for a in axes]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])

        def backward(grad):
            if self.requires_grad:
                self._accum(grad.reshape(self.data.shape))

        return Tensor._from_op(self.data.reshape(shape), (self,), backward)

    def transpose(self, axes=None) -> "Tensor":
        if axes is None:
            axes = tuple(reversed(range(self.data.ndim)))
        inverse = np.argsort(axes)

        def backward(grad):
            if self.requires_grad:
                self._accum(grad.transpose(inverse))

        return Tensor._from_op(self.data.transpose(axes), (self,), backward)

    @property
    def T(self) -> "Tensor":
        return self.transpose()

    def __getitem__(self, key) -> "Tensor":
        def backward(grad):
            if self.requires_grad:
                buf = np.zeros_like(self.data)
                buf[key] = grad
                self._accum(buf)

        return Tensor._from_op(self.data[key], (self,), backward)

    def gather_rows(self, indices) -> "Tensor":
        """Select rows along axis 0; duplicate indices accumulate in backward."""
        idx = np.asarray(indices, dtype=np.int64)

        def backward(grad):
            if self.requires_grad:
                buf = np.zeros_like(self.data)
                np.add.at(buf, idx, grad)
                self._accum(buf)

        return Tensor._from_op(self.data[idx], (self,), backward)

    def pad2d(self, pad_rows: tuple, pad_cols: tuple) -> "Tensor":
        """Zero-pad the first two axes of an (H, W, ...) tensor."""
        widths = [pad_rows, pad_cols] + [(0, 0)] * (self.data.ndim - 2)

        def backward(grad):
            if self.requires_grad:
                sl = tuple(
                    slice(w[0], grad.shape[i] - w[1]) for i, w in enumerate(widths)
                )
                self._accum(grad[sl])

        return Tensor._from_op(np.pad(self.data, widths), (self,), backward)

    def max(self, axis: int) -> "Tensor":
        """Max along one axis; gradient routes to the first argmax (ties)."""
        axis = axis % self.data.ndim
        value = self.data.max(axis=axis)
        argmax = self.data.argmax(axis=axis)

        def backward(grad):
            if not self.requires_grad:
                return
            buf = np.zeros_like(self.data)
            grid = np.indices(value.shape)
            index = list(grid)
            index.insert(axis, argmax)
            buf[tuple(index)] = grad
            self._accum(buf)

        return Tensor._from_op(value, (self,), backward)

    def softmax(self, axis: int = -1) -> "Tensor":
        """Numerically stable softmax along one axis."""
        shifted = self.data - self.data.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
        value = e / e.sum(axis=axis, keepdims=True)

        def backward(grad):
            if self.requires_grad:
                dot = (grad * value).sum(axis=axis, keepdims=True)
                self._accum(value * (grad - dot))

        return Tensor._from_op(value, (self,), backward)

    def dropout(self, p: float, seed: int, enabled: bool = True) -> "Tensor":
        """Deterministic-seed dropout with inverse scaling; identity if disabled."""
        if not enabled or p <= 0.0:
            return self
        if not 0.0 < p < 1.0:
            raise ValueError(f"dropout rate must be in (0, 1), got {p}")
        rng = np.random.default_rng(seed)
        mask = (rng.random(self.data.shape) >= p) / (1.0 - p)

        def backward(grad):
            if self.requires_grad:
                self._accum(grad * mask)

        return Tensor._from_op(self.data * mask, (self,), backward)


def concat(tensors: list, axis: int = 0) -> Tensor:
    """Concatenate tensors along an axis, differentiably."""
    tensors = [Tensor._lift(t) for t in tensors]
    if not tensors:
        raise ValueError("concat needs at least one tensor")
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(grad):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                sl = [slice(None)] * grad.ndim
                sl[axis] = slice(lo, hi)
                t._accum(grad[tuple(sl)])

    return Tensor._from_op(
        np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward
    )


def gradient_check(
    build_loss, params: list, step: float = 1e-5, rtol: float = 1e-4
) -> float:
    """Central finite-difference check of reverse-mode gradients.

    ``build_loss`` must rebuild the scalar loss graph from the same parameter
    tensors each call (their ``data`` is perturbed in place). Returns the
    worst relative error |analytic - numeric| / (|analytic| + 1e-8) and raises
    AssertionError when it exceeds ``rtol``.
    """
    for p in params:
        p.zero_grad()
    loss = build_loss()
    loss.backward()
    grads = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    worst = 0.0
    for p, grad in zip(params, grads):
        flat = p.data.reshape(-1)
        gflat = grad.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + step
            hi = build_loss().item()
            flat[i] = keep - step
            lo = build_loss().item()
            flat[i] = keep
            numeric = (hi - lo) / (2.0 * step)
            rel = abs(gflat[i] - numeric) / (abs(gflat[i]) + 1e-8)
            worst = max(worst, rel)
            if rel > rtol:
                raise AssertionError(
                    f"gradient mismatch at {p!r}[{i}]: "
                    f"analytic {gflat[i]:.10g} vs numeric {numeric:.10g} "
                    f"(rel err {rel:.3g})"
                )
    if not math.isfinite(worst):
        raise AssertionError("non-finite relative error in gradient check")
    return worst
