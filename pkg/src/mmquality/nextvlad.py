"""NeXtVLAD aggregation of a variable-size image set into one descriptor.

Each image embedding ``x`` is expanded by an affine map to ``xe`` (length
``lambda * N``) and reshaped into ``G`` group vectors of length ``d_g``.
Every group vector is soft-assigned over ``K`` clusters (softmax of an
affine map of ``xe``) and gated by a per-group sigmoid attention on ``xe``.
The descriptor sums gated residuals against the cluster anchors over all
images and groups::

    y[k, j] = sum_{i, g} att[i, g] * assign[i, g, k] * (xg[i, g, j] - anchors[k, j])

then (optionally) L2-normalizes each cluster row and the whole vector.

The batched functions take images padded to ``(B, M, N)`` plus a ``(B, M)``
mask; padded slots contribute nothing.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core_math import ParamBlock, ShapeError, sigmoid, softmax, softmax_backward

NORM_EPS = 1e-12
PREFIX = "nextvlad."


@dataclass(frozen=True)
class NeXtVLADConfig:
    input_dim: int
    expansion: int = 2
    groups: int = 4
    clusters: int = 8
    normalize: bool = True

    def __post_init__(self):
        if self.input_dim < 1 or self.expansion < 1 or self.groups < 1 or self.clusters < 1:
            raise ValueError(f"NeXtVLAD dimensions must be positive: {self}")
        if (self.expansion * self.input_dim) % self.groups:
            raise ValueError(
                f"expansion*input_dim = {self.expansion * self.input_dim} "
                f"is not divisible by groups = {self.groups}"
            )

    @property
    def expanded_dim(self) -> int:
        return self.expansion * self.input_dim

    @property
    def group_dim(self) -> int:
        return self.expanded_dim // self.groups

    @property
    def output_dim(self) -> int:
        return self.clusters * self.group_dim


def param_shapes(cfg: NeXtVLADConfig, prefix: str = PREFIX) -> dict[str, tuple[int, ...]]:
    L, G, K = cfg.expanded_dim, cfg.groups, cfg.clusters
    return {
        prefix + "W_expand": (L, cfg.input_dim),
        prefix + "b_expand": (L,),
        prefix + "W_assign": (G * K, L),
        prefix + "b_assign": (G * K,),
        prefix + "W_attn": (G, L),
        prefix + "b_attn": (G,),
        prefix + "anchors": (K, cfg.group_dim),
    }


def init_params(params: ParamBlock, cfg: NeXtVLADConfig, rng: np.random.Generator,
                prefix: str = PREFIX) -> None:
    """Fill the NeXtVLAD slots of ``params`` with scaled Gaussian weights."""
    L = cfg.expanded_dim
    params[prefix + "W_expand"][:] = rng.normal(0.0, 1.0 / np.sqrt(cfg.input_dim), (L, cfg.input_dim))
    params[prefix + "b_expand"][:] = 0.0
    params[prefix + "W_assign"][:] = rng.normal(0.0, 1.0 / np.sqrt(L), (cfg.groups * cfg.clusters, L))
    params[prefix + "b_assign"][:] = 0.0
    params[prefix + "W_attn"][:] = rng.normal(0.0, 1.0 / np.sqrt(L), (cfg.groups, L))
    params[prefix + "b_attn"][:] = 0.0
    params[prefix + "anchors"][:] = rng.normal(0.0, 0.1, (cfg.clusters, cfg.group_dim))
    params.version += 1


def new_params(cfg: NeXtVLADConfig, seed: int = 0, prefix: str = PREFIX) -> ParamBlock:
    params = ParamBlock(param_shapes(cfg, prefix))
    init_params(params, cfg, np.random.default_rng(seed), prefix)
    return params


@dataclass
class NeXtVLADCache:
    params: ParamBlock
    version: int
    cfg: NeXtVLADConfig
    prefix: str
    X: np.ndarray       # (B, M, N)
    mask: np.ndarray    # (B, M)
    E: np.ndarray       # expanded, (B, M, L)
    S: np.ndarray       # soft assignment, (B, M, G, K)
    T: np.ndarray       # attention, (B, M, G)
    W: np.ndarray       # masked att * assign, (B, M, G, K)
    V: np.ndarray       # raw aggregate, (B, K, d_g)
    U: np.ndarray | None = None     # intra-normalized
    n_intra: np.ndarray | None = None
    n_global: np.ndarray | None = None
    Y: np.ndarray | None = None
    has_images: np.ndarray | None = None


def pack_images(image_lists: Sequence[Sequence[np.ndarray]], input_dim: int,
                m_max: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Pad a list of image lists into ``(B, M, N)`` plus a float mask."""
    B = len(image_lists)
    M = max((len(imgs) for imgs in image_lists), default=0)
    if m_max is not None:
        M = min(M, m_max)
    M = max(M, 1)
    X = np.zeros((B, M, input_dim))
    mask = np.zeros((B, M))
    for b, imgs in enumerate(image_lists):
        for i, v in enumerate(imgs[:M]):
            v = np.asarray(v, dtype=np.float64)
            if v.shape != (input_dim,):
                raise ShapeError(f"image {i} of set {b} has shape {v.shape}, expected ({input_dim},)")
            X[b, i] = v
            mask[b, i] = 1.0
    return X, mask


def forward_batch(X: np.ndarray, mask: np.ndarray, params: ParamBlock, cfg: NeXtVLADConfig,
                  prefix: str = PREFIX) -> tuple[np.ndarray, NeXtVLADCache]:
    """Descriptors ``(B, K * d_g)`` for a padded batch of image sets."""
    if X.ndim != 3 or X.shape[2] != cfg.input_dim:
        raise ShapeError(f"images have shape {X.shape}, expected (B, M, {cfg.input_dim})")
    if mask.shape != X.shape[:2]:
        raise ShapeError(f"mask shape {mask.shape} does not match images {X.shape[:2]}")
    B, M, _ = X.shape
    G, K, dg = cfg.groups, cfg.clusters, cfg.group_dim
    p = lambda name: params[prefix + name]  # noqa: E731

    E = X @ p("W_expand").T + p("b_expand")
    S = softmax((E @ p("W_assign").T + p("b_assign")).reshape(B, M, G, K), axis=-1)
    T = sigmoid(E @ p("W_attn").T + p("b_attn"))
    Xg = E.reshape(B, M, G, dg)
    W = T[..., None] * S * mask[:, :, None, None]
    mass = W.sum(axis=(1, 2))                               # (B, K)
    V = np.einsum("bigk,bigj->bkj", W, Xg) - mass[:, :, None] * p("anchors")[None]

    cache = NeXtVLADCache(params, params.version, cfg, prefix, X, mask, E, S, T, W, V)
    if not cfg.normalize:
        return V.reshape(B, K * dg), cache

    has = mask.sum(axis=1) > 0
    n_intra = np.sqrt((V * V).sum(axis=2, keepdims=True) + NORM_EPS)
    U = V / n_intra
    n_global = np.sqrt((U * U).sum(axis=(1, 2), keepdims=True) + NORM_EPS)
    Y = U / n_global
    Y[~has] = 0.0
    cache.U, cache.n_intra, cache.n_global, cache.Y, cache.has_images = U, n_intra, n_global, Y, has
    return Y.reshape(B, K * dg), cache


def backward_batch(grad_y: np.ndarray, cache: NeXtVLADCache) -> tuple[dict[str, np.ndarray], np.ndarray]:
    """Gradients w.r.t. every NeXtVLAD slot (summed over the batch) and the images."""
    cfg, prefix, params = cache.cfg, cache.prefix, cache.params
    if params.version != cache.version:
        raise ValueError("stale NeXtVLAD cache: parameters changed since the forward pass")
    B, M, _ = cache.X.shape
    G, K, dg = cfg.groups, cfg.clusters, cfg.group_dim
    if grad_y.shape != (B, K * dg):
        raise ShapeError(f"grad_y has shape {grad_y.shape}, expected {(B, K * dg)}")
    dY = grad_y.reshape(B, K, dg)

    if cfg.normalize:
        Y, U = cache.Y, cache.U
        dY = np.where(cache.has_images[:, None, None], dY, 0.0)
        dU = (dY - Y * (dY * Y).sum(axis=(1, 2), keepdims=True)) / cache.n_global
        dV = (dU - U * (dU * U).sum(axis=2, keepdims=True)) / cache.n_intra
    else:
        dV = dY

    anchors = params[prefix + "anchors"]
    Xg = cache.E.reshape(B, M, G, dg)
    mass = cache.W.sum(axis=(1, 2))
    d_anchors = -np.einsum("bk,bkj->kj", mass, dV)

    dXg = np.einsum("bigk,bkj->bigj", cache.W, dV)
    dW = np.einsum("bkj,bigj->bigk", dV, Xg) - np.einsum("bkj,kj->bk", dV, anchors)[:, None, None, :]
    dW *= cache.mask[:, :, None, None]
    dT = (dW * cache.S).sum(axis=-1)
    dS = dW * cache.T[..., None]
    d_att_logit = dT * cache.T * (1.0 - cache.T)                         # (B, M, G)
    d_assign_logit = softmax_backward(cache.S, dS, axis=-1).reshape(B, M, G * K)

    W_assign, W_attn, W_expand = (params[prefix + n] for n in ("W_assign", "W_attn", "W_expand"))
    dE = dXg.reshape(B, M, G * dg) + d_assign_logit @ W_assign + d_att_logit @ W_attn

    E2 = cache.E.reshape(B * M, -1)
    grads = {
        prefix + "W_expand": dE.reshape(B * M, -1).T @ cache.X.reshape(B * M, -1),
        prefix + "b_expand": dE.sum(axis=(0, 1)),
        prefix + "W_assign": d_assign_logit.reshape(B * M, -1).T @ E2,
        prefix + "b_assign": d_assign_logit.sum(axis=(0, 1)),
        prefix + "W_attn": d_att_logit.reshape(B * M, -1).T @ E2,
        prefix + "b_attn": d_att_logit.sum(axis=(0, 1)),
        prefix + "anchors": d_anchors,
    }
    dX = dE @ W_expand
    return grads, dX


def nextvlad_forward(images: Sequence[np.ndarray], params: ParamBlock, cfg: NeXtVLADConfig,
                     prefix: str = PREFIX) -> tuple[np.ndarray, NeXtVLADCache]:
    """Descriptor of length ``K * d_g`` for one image set (may be empty)."""
    X, mask = pack_images([list(images)], cfg.input_dim)
    Y, cache = forward_batch(X, mask, params, cfg, prefix)
    return Y[0], cache


def nextvlad_backward(grad_y: np.ndarray, cache: NeXtVLADCache) -> tuple[dict[str, np.ndarray], list[np.ndarray]]:
    """Single-set counterpart of :func:`backward_batch`."""
    grad_y = np.asarray(grad_y, dtype=np.float64)
    if cache.X.shape[0] != 1 or grad_y.ndim != 1:
        raise ShapeError("nextvlad_backward expects the cache of a single-set forward and a 1-d gradient")
    grads, dX = backward_batch(grad_y[None, :], cache)
    n_images = int(cache.mask[0].sum())
    return grads, [dX[0, i].copy() for i in range(n_images)]
