"""Scaled dot-product and multi-head attention, differentiable and exact.

The key/value rows are re-ordered into a canonical lexicographic order before
any arithmetic, so permuting K and V jointly gives bitwise-identical output
(naive summation differs in ulps under permutation). The reorder is an index
operation, fully transparent to gradients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, concat

__all__ = ["AttentionParams", "attention", "multi_head"]


def _canonical_order(k_data: np.ndarray, v_data: np.ndarray) -> np.ndarray:
    """Permutation sorting [K|V] rows lexicographically (stable for duplicates)."""
    kv = np.concatenate([k_data, v_data], axis=1)
    return np.lexsort(kv.T[::-1])


def _attention_t(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    if q.data.ndim != 2 or k.data.ndim != 2 or v.data.ndim != 2:
        raise ValueError("attention expects 2D Q, K, V")
    if q.shape[1] != k.shape[1]:
        raise ValueError(f"Q width {q.shape[1]} != K width {k.shape[1]}")
    if k.shape[0] != v.shape[0]:
        raise ValueError(f"K rows {k.shape[0]} != V rows {v.shape[0]}")
    order = _canonical_order(k.data, v.data)
    k = k.gather_rows(order)
    v = v.gather_rows(order)
    d_k = q.shape[1]
    logits = (q @ k.T) * (1.0 / math.sqrt(d_k))
    return logits.softmax(axis=-1) @ v


def attention(q, k, v):
    """softmax(Q Kᵀ / sqrt(d_k)) V with rows summing to one.

    Accepts Tensors (differentiable) or arrays (returns a plain ndarray).
    """
    tensor_in = any(isinstance(t, Tensor) for t in (q, k, v))
    q_t = q if isinstance(q, Tensor) else Tensor(q)
    k_t = k if isinstance(k, Tensor) else Tensor(k)
    v_t = v if isinstance(v, Tensor) else Tensor(v)
    out = _attention_t(q_t, k_t, v_t)
    return out if tensor_in else out.data


@dataclass
class AttentionParams:
    """Multi-head projection weights.

    w_q[i], w_k[i]: (d_model, d_k); w_v[i]: (d_model, d_v);
    w_o: (h * d_v, d_model). All stored as Tensors so the same parameters
    serve forward-only use and gradient-checked training.
    """

    d_model: int
    h: int
    d_k: int
    d_v: int
    w_q: list
    w_k: list
    w_v: list
    w_o: Tensor

    def __post_init__(self):
        if self.h < 1:
            raise ValueError("head count must be >= 1")
        for name in ("w_q", "w_k", "w_v"):
            mats = [Tensor._lift(m) for m in getattr(self, name)]
            if len(mats) != self.h:
                raise ValueError(f"{name} must hold h={self.h} matrices")
            width = self.d_k if name in ("w_q", "w_k") else self.d_v
            for m in mats:
                if m.shape != (self.d_model, width):
                    raise ValueError(
                        f"{name} shape {m.shape} != {(self.d_model, width)}"
                    )
            setattr(self, name, mats)
        w_o = Tensor._lift(self.w_o)
        if w_o.shape != (self.h * self.d_v, self.d_model):
            raise ValueError(
                f"w_o shape {w_o.shape} != {(self.h * self.d_v, self.d_model)}"
            )
        self.w_o = w_o

    @classmethod
    def random(
        cls,
        d_model: int,
        h: int,
        d_k: int | None = None,
        d_v: int | None = None,
        seed: int = 0,
        requires_grad: bool = False,
    ) -> "AttentionParams":
        d_k = d_model // h if d_k is None else d_k
        d_v = d_model // h if d_v is None else d_v
        rng = np.random.default_rng(seed)
        scale = 1.0 / math.sqrt(d_model)

        def mat(rows, cols):
            t = Tensor(rng.normal(0.0, scale, size=(rows, cols)))
            t.requires_grad = requires_grad
            return t

        return cls(
            d_model=d_model,
            h=h,
            d_k=d_k,
            d_v=d_v,
            w_q=[mat(d_model, d_k) for _ in range(h)],
            w_k=[mat(d_model, d_k) for _ in range(h)],
            w_v=[mat(d_model, d_v) for _ in range(h)],
            w_o=mat(h * d_v, d_model),
        )

    def tensors(self) -> list:
        return [*self.w_q, *self.w_k, *self.w_v, self.w_o]


def multi_head(x_q, x_kv, params: AttentionParams):
    """Concat of per-head attentions projected by w_o.

    head_i = attention(x_q W_q[i], x_kv W_k[i], x_kv W_v[i]); the concatenated
    heads are mapped back to d_model by w_o. Accepts Tensors or arrays.
    """
    tensor_in = isinstance(x_q, Tensor) or isinstance(x_kv, Tensor)
    q_t = x_q if isinstance(x_q, Tensor) else Tensor(x_q)
    kv_t = x_kv if isinstance(x_kv, Tensor) else Tensor(x_kv)
    if q_t.shape[1] != params.d_model or kv_t.shape[1] != params.d_model:
        raise ValueError("multi_head inputs must have width d_model")
    heads = []
    for i in range(params.h):
        heads.append(
            _attention_t(
                q_t @ params.w_q[i], kv_t @ params.w_k[i], kv_t @ params.w_v[i]
            )
        )
    out = concat(heads, axis=1) @ params.w_o
    return out if tensor_in else out.data
