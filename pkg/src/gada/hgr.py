"""Hierarchy Graph Reasoning layer.

Local features are projected into a semantic space, pooled onto the
hierarchy nodes by self-attention, fused with prediction-attended node
embeddings, propagated over the normalized adjacency, projected back and
read out to every location by query-key-value attention. The result is added
to the input (residual).

All functions accept arbitrary leading batch axes.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import (
    BatchNormParams,
    Parameter,
    Tensor,
    TwoLayerMLP,
    as_tensor,
    batch_norm,
    concat,
    matmul,
    mul,
    relu,
    reshape,
    softmax,
    transpose,
)
from .autodiff import tensor as T
from .hierarchy import (
    HierarchyGraph,
    PprConfig,
    hierarchy_attention,
    normalized_adjacency,
    transition_matrix,
)


@dataclass
class HgrParams:
    S: Parameter  # (N, D^S) node embeddings
    mlp_in: TwoLayerMLP  # D^l -> hidden -> D^S
    W_a: Parameter  # (N, D^S) self-attention weights
    bn_nodes: BatchNormParams  # over D^S
    W_g: Parameter  # (2 D^S, D^S)
    bn_reason: BatchNormParams  # over D^S
    mlp_out: TwoLayerMLP  # D^S -> hidden -> D^l

    @property
    def n_nodes(self) -> int:
        return self.S.shape[0]

    @property
    def d_sem(self) -> int:
        return self.S.shape[1]

    @property
    def d_local(self) -> int:
        return self.mlp_in.first.weight.shape[0]

    def parameters(self) -> list[Parameter]:
        return [
            self.S,
            *self.mlp_in.parameters(),
            self.W_a,
            *self.bn_nodes.parameters(),
            self.W_g,
            *self.bn_reason.parameters(),
            *self.mlp_out.parameters(),
        ]

    def buffers(self) -> dict[str, np.ndarray]:
        return {**self.bn_nodes.buffers(), **self.bn_reason.buffers()}


def init_hgr_params(
    rng: np.random.Generator,
    n_nodes: int,
    d_local: int,
    d_sem: int,
    prefix: str = "hgr",
    embedding_std: float = 0.02,
) -> HgrParams:
    hidden = max(d_local, 2 * d_sem)
    return HgrParams(
        S=Parameter(rng.normal(0.0, embedding_std, size=(n_nodes, d_sem)), name=f"{prefix}.S", decay=False),
        mlp_in=TwoLayerMLP.init(rng, d_local, hidden, d_sem, f"{prefix}.mlp_in"),
        W_a=Parameter(rng.normal(0.0, 1.0 / np.sqrt(d_sem), size=(n_nodes, d_sem)), name=f"{prefix}.W_a"),
        bn_nodes=BatchNormParams.init(d_sem, f"{prefix}.bn_nodes"),
        W_g=Parameter(rng.normal(0.0, np.sqrt(1.0 / d_sem), size=(2 * d_sem, d_sem)), name=f"{prefix}.W_g"),
        bn_reason=BatchNormParams.init(d_sem, f"{prefix}.bn_reason"),
        mlp_out=TwoLayerMLP.init(rng, d_sem, hidden, d_local, f"{prefix}.mlp_out"),
    )


# ------------------------------------------------------------------ sub-ops
def local_to_semantic(X_l, params: HgrParams) -> Tensor:
    """(..., H, W, D^l) -> (..., H*W, D^S) via the per-location MLP."""
    X_l = as_tensor(X_l)
    if X_l.ndim < 3 or X_l.shape[-1] != params.d_local:
        raise T.ShapeError(f"expected (..., H, W, {params.d_local}) features, got {X_l.shape}")
    flat = reshape(X_l, X_l.shape[:-3] + (X_l.shape[-3] * X_l.shape[-2], X_l.shape[-1]))
    return params.mlp_in(flat)


def attended_embeddings(a_n, S) -> Tensor:
    """Scale row n of ``S`` by ``a_n[..., n]``."""
    a_n = as_tensor(a_n)
    S = as_tensor(S)
    if a_n.shape[-1] != S.shape[0]:
        raise T.ShapeError(f"attention has {a_n.shape[-1]} entries, S has {S.shape[0]} rows")
    return mul(reshape(a_n, a_n.shape + (1,)), S)


def node_attention_weights(X_s, W_a) -> Tensor:
    """Per-location distribution over nodes: softmax_n <W_a[n], X_s[i]>."""
    return softmax(matmul(X_s, transpose(as_tensor(W_a))), axis=-1)


def aggregate_to_nodes(X_s, W_a) -> Tensor:
    """H^S[n] = sum_i a[i->n] X^S[i]; (..., HW, D^S) -> (..., N, D^S)."""
    X_s = as_tensor(X_s)
    att = node_attention_weights(X_s, W_a)
    return matmul(transpose(att), X_s)


def fuse_nodes(H_s, S_a, params: HgrParams, mode: str = "train") -> Tensor:
    H_s, S_a = as_tensor(H_s), as_tensor(S_a)
    if H_s.shape != S_a.shape:
        raise T.ShapeError(f"fuse_nodes shape mismatch: {H_s.shape} vs {S_a.shape}")
    return concat([relu(batch_norm(H_s, params.bn_nodes, mode)), S_a], axis=-1)


def graph_reason(H_fused, A_hat, W_g, params: HgrParams, mode: str = "train") -> Tensor:
    """relu(BN(A_hat @ H_fused @ W_g))."""
    H_fused = as_tensor(H_fused)
    A_hat = np.asarray(A_hat)
    if A_hat.shape != (H_fused.shape[-2],) * 2:
        raise T.ShapeError(f"adjacency {A_hat.shape} does not match {H_fused.shape[-2]} nodes")
    H_sr = matmul(matmul(Tensor(A_hat), H_fused), W_g)
    return relu(batch_norm(H_sr, params.bn_reason, mode))


def semantic_to_local(H_sr, params: HgrParams) -> Tensor:
    H_sr = as_tensor(H_sr)
    if H_sr.shape[-1] != params.d_sem:
        raise T.ShapeError(f"expected {params.d_sem} semantic channels, got {H_sr.shape}")
    return params.mlp_out(H_sr)


def local_attention_weights(X_flat, H_l) -> Tensor:
    X_flat, H_l = as_tensor(X_flat), as_tensor(H_l)
    scores = matmul(X_flat, transpose(H_l)) * (1.0 / np.sqrt(X_flat.shape[-1]))
    return softmax(scores, axis=-1)


def graph_to_local_attention(X_flat, H_l) -> Tensor:
    """Scaled dot-product attention: queries are locations, keys/values are nodes."""
    X_flat, H_l = as_tensor(X_flat), as_tensor(H_l)
    if X_flat.shape[-1] != H_l.shape[-1]:
        raise T.ShapeError(f"query dim {X_flat.shape[-1]} != key dim {H_l.shape[-1]}")
    return matmul(local_attention_weights(X_flat, H_l), H_l)


# ---------------------------------------------------------------- attention
def _ppr_tensor(p_n: Tensor, g: HierarchyGraph, cfg: PprConfig) -> Tensor:
    """Differentiable PPR: unrolls as many power iterations as the numpy
    routine needs to converge for this input."""
    pt = Tensor(transition_matrix(g).T)
    v = p_n / T.tsum(p_n, axis=-1, keepdims=True)
    a = v
    prev = v.data
    for _ in range(cfg.max_iterations):
        a = v * cfg.alpha + matmul(a, pt) * (1.0 - cfg.alpha)
        delta = np.abs(a.data - prev).sum(axis=-1).max()
        prev = a.data
        if delta < cfg.tolerance:
            break
    return a


def prediction_attention(p1, g: HierarchyGraph, cfg: PprConfig) -> Tensor:
    """Hierarchy attention for a batch of class scores.

    A plain array is treated as data (no gradient); a Tensor that requires
    grad is differentiated through the unrolled power iteration.
    """
    if isinstance(p1, Tensor) and p1.requires_grad:
        pad = Tensor(np.zeros((g.num_classes, g.node_count)))
        pad.data[np.arange(g.num_classes), list(g.leaf_map)] = 1.0
        p_n = matmul(p1 if p1.ndim > 1 else reshape(p1, (1, -1)), pad)
        a_n = _ppr_tensor(p_n, g, cfg) + p_n
        return reshape(a_n, (g.node_count,)) if p1.ndim == 1 else a_n
    p = p1.data if isinstance(p1, Tensor) else np.asarray(p1)
    return Tensor(hierarchy_attention(p, g, cfg))


def hgr_forward(
    X_l,
    p1,
    g: HierarchyGraph,
    params: HgrParams,
    mode: str = "train",
    ppr_cfg: PprConfig = PprConfig(),
    A_hat: np.ndarray | None = None,
    attention: Tensor | None = None,
) -> Tensor:
    """One HGR layer: (..., H, W, D^l) -> same shape, ``X_l + X_l'``.

    ``p1`` is the backbone classifier's class distribution for each sample.
    ``A_hat`` and ``attention`` may be passed in precomputed.
    """
    X_l = as_tensor(X_l)
    if A_hat is None:
        A_hat = normalized_adjacency(g)
    a_n = prediction_attention(p1, g, ppr_cfg) if attention is None else attention
    S_a = attended_embeddings(a_n, params.S)
    X_s = local_to_semantic(X_l, params)
    H_s = aggregate_to_nodes(X_s, params.W_a)
    H_fused = fuse_nodes(H_s, S_a, params, mode)
    H_sr = graph_reason(H_fused, A_hat, params.W_g, params, mode)
    H_l = semantic_to_local(H_sr, params)
    lead = X_l.shape[:-3]
    hw = X_l.shape[-3] * X_l.shape[-2]
    X_flat = reshape(X_l, lead + (hw, X_l.shape[-1]))
    X_prime = graph_to_local_attention(X_flat, H_l)
    return X_l + reshape(X_prime, X_l.shape)


# ---------------------------------------------------------- embedding files
def write_embeddings(path, S: np.ndarray) -> None:
    """``u32 N | u32 D^S | f64 row-major payload``, little-endian."""
    S = np.asarray(S, dtype="<f8")
    Path(path).write_bytes(struct.pack("<II", *S.shape) + np.ascontiguousarray(S).tobytes())


def read_embeddings(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    n, d = struct.unpack_from("<II", buf, 0)
    if len(buf) != 8 + 8 * n * d:
        raise ValueError(f"{path}: expected {n}x{d} payload, file has {len(buf) - 8} bytes")
    return np.frombuffer(buf, dtype="<f8", offset=8).reshape(n, d).copy()
