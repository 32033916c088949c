"""The GADA network: backbone -> HGR -> two masked classifier heads."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Affine, Parameter, Tensor, as_tensor, grad_reverse, mean, mul, softmax
from .autodiff import checkpoint as ckpt
from .hgr import HgrParams, hgr_forward, init_hgr_params, prediction_attention
from .hierarchy import HierarchyGraph, PprConfig, normalized_adjacency


@dataclass
class GadaModel:
    graph: HierarchyGraph
    mask: np.ndarray  # (K,) 0/1, 1 at shared classes
    backbone: Affine  # per-location D_in -> D^l
    hgr: list[HgrParams]
    f1: Affine  # D^l -> K after global average pooling
    f2: Affine
    use_hgr: bool = True
    detach_attention: bool = True
    ppr: PprConfig = field(default_factory=PprConfig)

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=np.float64)
        if self.mask.shape != (self.graph.num_classes,):
            raise ValueError(f"mask length {self.mask.shape} != K={self.graph.num_classes}")
        if not np.all((self.mask == 0) | (self.mask == 1)) or self.mask.sum() < 1:
            raise ValueError("mask must be 0/1 with at least one shared class")
        self.A_hat = normalized_adjacency(self.graph)
        self.shared = np.flatnonzero(self.mask)

    @property
    def num_classes(self) -> int:
        return self.graph.num_classes

    @property
    def d_local(self) -> int:
        return self.backbone.weight.shape[1]

    def parameters(self) -> list[Parameter]:
        params = list(self.backbone.parameters())
        if self.use_hgr:
            for layer in self.hgr:
                params += layer.parameters()
        return params + self.f1.parameters() + self.f2.parameters()

    def state_dict(self) -> dict[str, np.ndarray]:
        """All parameters and BN running statistics, keyed by name."""
        out = {}
        for p in self.all_parameters():
            out[p.name] = p.data
        for layer in self.hgr:
            out.update(layer.buffers())
        return out

    def all_parameters(self) -> list[Parameter]:
        params = list(self.backbone.parameters())
        for layer in self.hgr:
            params += layer.parameters()
        return params + self.f1.parameters() + self.f2.parameters()

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for p in self.all_parameters():
            if p.name not in state:
                raise KeyError(f"checkpoint lacks parameter {p.name!r}")
            if state[p.name].shape != p.data.shape:
                raise ValueError(f"{p.name}: shape {state[p.name].shape} != {p.data.shape}")
            p.data[...] = state[p.name]
        for layer in self.hgr:
            for name, buf in layer.buffers().items():
                buf[...] = state[name]

    def save(self, path) -> None:
        ckpt.write_checkpoint(path, self.state_dict())

    def load(self, path) -> None:
        self.load_state_dict(ckpt.read_checkpoint(path))


def init_model(
    graph: HierarchyGraph,
    mask,
    d_in: int,
    d_local: int = 32,
    d_sem: int = 16,
    hgr_layers: int = 1,
    seed: int = 0,
    use_hgr: bool = True,
    detach_attention: bool = True,
    ppr: PprConfig | None = None,
) -> GadaModel:
    rng = np.random.default_rng(seed)
    k = graph.num_classes
    backbone = Affine.init(rng, d_in, d_local, "backbone")
    hgr = [init_hgr_params(rng, graph.node_count, d_local, d_sem, prefix=f"hgr{i}") for i in range(hgr_layers)]
    f1 = Affine.init(rng, d_local, k, "f1", scale=0.01)
    f2 = Affine.init(rng, d_local, k, "f2", scale=0.01)
    return GadaModel(
        graph, np.asarray(mask, dtype=np.float64), backbone, hgr, f1, f2,
        use_hgr=use_hgr, detach_attention=detach_attention, ppr=ppr or PprConfig(),
    )


@dataclass
class Predictions:
    p1: Tensor  # backbone feature, head f1
    p1_plus: Tensor  # HGR feature, head f1
    p1_pp: Tensor  # p1_plus masked
    h1: np.ndarray
    p2_plus: Tensor  # HGR feature (through reversal), head f2
    p2_pp: Tensor
    h2: np.ndarray
    features: Tensor  # pooled HGR output, (B, D^l)


def masked_argmax(p: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Argmax restricted to shared classes, so underflowed scores never
    leak a non-shared index."""
    return np.argmax(np.where(mask > 0, p, -np.inf), axis=-1)


def backbone_features(x, model: GadaModel) -> Tensor:
    return model.backbone(as_tensor(x))


def enhance(X_l: Tensor, p1: Tensor, model: GadaModel, mode: str) -> Tensor:
    """Run the HGR stack (or pass through when HGR is disabled)."""
    if not model.use_hgr or not model.hgr:
        return X_l
    p_att = p1 if not model.detach_attention else p1.data
    att = prediction_attention(p_att, model.graph, model.ppr)
    out = X_l
    for layer in model.hgr:
        out = hgr_forward(out, p_att, model.graph, layer, mode, model.ppr, A_hat=model.A_hat, attention=att)
    return out


def forward_all(x, model: GadaModel, mode: str = "train", eta: float = 1.0) -> Predictions:
    """Full forward chain for a batch of inputs (B, H, W, D_in).

    ``eta`` scales the reversed gradient flowing from head f2 into the
    features.
    """
    x = as_tensor(x)
    if x.ndim != 4 or x.shape[-1] != model.backbone.weight.shape[0]:
        raise ValueError(f"expected (B, H, W, {model.backbone.weight.shape[0]}) input, got {x.shape}")
    X_l = backbone_features(x, model)
    pooled = mean(X_l, axis=(1, 2))
    p1 = softmax(model.f1(pooled), axis=-1)
    X_next = enhance(X_l, p1, model, mode)
    feats = mean(X_next, axis=(1, 2)) if X_next is not X_l else pooled
    p1_plus = softmax(model.f1(feats), axis=-1)
    p2_plus = softmax(model.f2(grad_reverse(feats, eta)), axis=-1)
    p1_pp = mul(p1_plus, model.mask)
    p2_pp = mul(p2_plus, model.mask)
    return Predictions(
        p1=p1,
        p1_plus=p1_plus,
        p1_pp=p1_pp,
        h1=masked_argmax(p1_pp.data, model.mask),
        p2_plus=p2_plus,
        p2_pp=p2_pp,
        h2=masked_argmax(p2_pp.data, model.mask),
        features=feats,
    )


def predict(x, model: GadaModel, batch_size: int = 256) -> np.ndarray:
    """Masked h1 labels in eval mode."""
    x = np.asarray(x)
    out = [forward_all(x[i : i + batch_size], model, "eval").h1 for i in range(0, len(x), batch_size)]
    return np.concatenate(out) if out else np.zeros(0, dtype=int)
