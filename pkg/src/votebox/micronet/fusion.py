"""Desk-scale student fusion network over front-view XYZ patches.

Per proposal: branch A runs a conv stem over the patch, RoIAligns the
proposal's rectangle to a token grid, and refines the tokens with a stack of
self-attention blocks (one head, conv feed-forward, residual around both
sublayers). Branch B reduces the whole patch through stride-2 residual stages
to the same token grid. The branches fuse by channel addition and two
fully-connected heads emit classification logits (foreground classes plus
background) and a 16-bin rotation distribution. All parameters are autodiff
tensors, so the whole graph is trainable and finite-difference checkable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..geometry import Rect2D
from .attention import AttentionParams, multi_head
from .layers import Conv1D, Conv2D, Dense, roi_align
from .tensor import Tensor

__all__ = ["FusionConfig", "SelfAttentionBlock", "StudentFusionNet", "student_fusion_forward"]


@dataclass(frozen=True)
class FusionConfig:
    """Network sizing; the default mirrors the full-scale layout at desk width."""

    input_size: int = 128
    channels: int = 8
    attn_blocks: int = 4
    ffn_kernel: int = 4
    conv_kernel: int = 3
    token_grid: int = 4
    n_classes: int = 1
    rot_bins: int = 16
    head_width: int = 32
    dropout: float = 0.5
    dropout_enabled: bool = False
    seed: int = 0

    def __post_init__(self):
        size = self.input_size
        if size < self.token_grid or size % self.token_grid:
            raise ValueError("token_grid must divide input_size")
        stages = size // self.token_grid
        if stages & (stages - 1):
            raise ValueError("input_size / token_grid must be a power of two")

    @property
    def n_stages(self) -> int:
        return int(math.log2(self.input_size // self.token_grid))

    @property
    def n_tokens(self) -> int:
        return self.token_grid * self.token_grid


class SelfAttentionBlock:
    """x + attention(x); then y + conv1d feed-forward, one head, no norm."""

    def __init__(self, channels: int, ffn_kernel: int, rng: np.random.Generator):
        self.attn = AttentionParams.random(
            d_model=channels,
            h=1,
            seed=int(rng.integers(0, 2**31)),
            requires_grad=True,
        )
        self.ffn = Conv1D(channels, channels, kernel=ffn_kernel, rng=rng)

    def __call__(self, x: Tensor) -> Tensor:
        y = x + multi_head(x, x, self.attn)
        return y + self.ffn(y).relu()

    def parameters(self) -> list:
        return [*self.attn.tensors(), *self.ffn.parameters()]


class _ResidualStage:
    """Stride-2 downsampling stage: relu(conv3x3_s2(x) + conv1x1_s2(x))."""

    def __init__(self, channels: int, kernel: int, rng: np.random.Generator):
        self.conv = Conv2D(channels, channels, kernel=kernel, stride=2, rng=rng)
        self.shortcut = Conv2D(channels, channels, kernel=1, stride=2, rng=rng)

    def __call__(self, x: Tensor) -> Tensor:
        return (self.conv(x) + self.shortcut(x)).relu()

    def parameters(self) -> list:
        return [*self.conv.parameters(), *self.shortcut.parameters()]


class StudentFusionNet:
    def __init__(self, config: FusionConfig = FusionConfig()):
        self.config = config
        rng = np.random.default_rng(config.seed)
        c = config.channels
        self.stem = Conv2D(3, c, kernel=config.conv_kernel, rng=rng)
        self.blocks = [
            SelfAttentionBlock(c, config.ffn_kernel, rng)
            for _ in range(config.attn_blocks)
        ]
        self.stages = [
            _ResidualStage(c, config.conv_kernel, rng)
            for _ in range(config.n_stages)
        ]
        self.stage_in = Conv2D(3, c, kernel=config.conv_kernel, rng=rng)
        width = config.n_tokens * c
        self.cls_head = [
            Dense(width, config.head_width, rng),
            Dense(config.head_width, config.n_classes + 1, rng),
        ]
        self.rot_head = [
            Dense(width, config.head_width, rng),
            Dense(config.head_width, config.rot_bins, rng),
        ]

    def _check_patch(self, patch: np.ndarray) -> np.ndarray:
        arr = np.asarray(patch, dtype=np.float64)
        size = self.config.input_size
        if arr.shape != (size, size, 3):
            raise ValueError(f"patch must be ({size}, {size}, 3), got {arr.shape}")
        return arr

    def forward(self, patch, rects: list) -> tuple:
        """Per-proposal (classification logits, rotation logits) tensors.

        ``patch`` is the (S, S, 3) XYZ patch; ``rects`` are axis-aligned
        Rect2D proposals in patch coordinates. Returns Tensors of shape
        (n, n_classes + 1) and (n, rot_bins).
        """
        arr = self._check_patch(patch)
        if not rects:
            raise ValueError("forward needs at least one proposal rectangle")
        cfg = self.config
        x = Tensor(arr)
        feat = self.stem(x)
        ctx = self.stage_in(x)
        for stage in self.stages:
            ctx = stage(ctx)
        ctx_tokens = ctx.reshape(cfg.n_tokens, cfg.channels)
        cls_rows = []
        rot_rows = []
        for rect in rects:
            tokens = roi_align(feat, rect, out_size=cfg.token_grid)
            tokens = tokens.reshape(cfg.n_tokens, cfg.channels)
            for block in self.blocks:
                tokens = block(tokens)
            fused = tokens + ctx_tokens
            flat = fused.reshape(1, cfg.n_tokens * cfg.channels)
            flat = flat.dropout(
                cfg.dropout, seed=cfg.seed, enabled=cfg.dropout_enabled
            )
            cls_rows.append(self.cls_head[1](self.cls_head[0](flat).relu()))
            rot_rows.append(self.rot_head[1](self.rot_head[0](flat).relu()))
        from .tensor import concat

        return concat(cls_rows, axis=0), concat(rot_rows, axis=0)

    def foreground_scores(self, patch, rects: list) -> list:
        """Per-proposal foreground probability as scalar Tensors (class 0)."""
        cls_logits, _ = self.forward(patch, rects)
        probs = cls_logits.softmax(axis=-1)
        return [probs[i, 0] for i in range(len(rects))]

    def parameters(self) -> list:
        params = [*self.stem.parameters(), *self.stage_in.parameters()]
        for block in self.blocks:
            params.extend(block.parameters())
        for stage in self.stages:
            params.extend(stage.parameters())
        for layer in (*self.cls_head, *self.rot_head):
            params.extend(layer.parameters())
        return params

    # Named weights for checkpoint round-trips.

    def weight_names(self) -> list:
        return [f"param{idx:04d}" for idx in range(len(self.parameters()))]

    def weight_dict(self) -> dict:
        return {
            name: p.data.copy()
            for name, p in zip(self.weight_names(), self.parameters())
        }

    def load_weight_dict(self, weights: dict) -> None:
        params = self.parameters()
        names = self.weight_names()
        missing = [n for n in names if n not in weights]
        if missing:
            raise ValueError(f"missing weights: {missing[:3]}...")
        for name, p in zip(names, params):
            arr = np.asarray(weights[name], dtype=np.float64)
            if arr.shape != p.data.shape:
                raise ValueError(
                    f"{name}: shape {arr.shape} != expected {p.data.shape}"
                )
            p.data = arr.copy()


def student_fusion_forward(xyz_patch, proposals_2d: list, weights) -> tuple:
    """Softmaxed per-proposal outputs from patch + proposal rectangles.

    ``weights`` is a StudentFusionNet, or a (FusionConfig, weight dict) pair
    as produced by checkpoint loading. Returns (class scores (n, L+1),
    rotation distribution (n, 16)) as plain arrays.
    """
    if isinstance(weights, StudentFusionNet):
        net = weights
    else:
        config, weight_dict = weights
        net = StudentFusionNet(config)
        net.load_weight_dict(weight_dict)
    rects = [
        r if isinstance(r, Rect2D) else Rect2D(tuple(r[0]), tuple(r[1]))
        for r in proposals_2d
    ]
    cls_logits, rot_logits = net.forward(xyz_patch, rects)
    return (
        cls_logits.softmax(axis=-1).data,
        rot_logits.softmax(axis=-1).data,
    )
