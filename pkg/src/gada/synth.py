"""Synthetic non-shared-and-imbalanced transfer scenarios.

Classes are leaves of a generated tree. Each node owns a seeded Gaussian
vector and a leaf prototype is the sum of the vectors on its root path, so
siblings differ only by their leaf offsets. A source sample of class ``l`` is
a feature grid whose every location is ``proto_l + noise``; a target sample is
``R (proto_l + noise) + b`` for one rotation ``R`` and bias ``b`` fixed per
scenario. Non-shared classes never appear in the target.
"""

from __future__ import annotations

import struct
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .hierarchy import HierarchyGraph, load_graph, save_graph


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class ScenarioConfig:
    num_classes: int = 24
    num_shared: int = 8
    depth: int = 3
    branching: int = 3
    height: int = 4
    width: int = 4
    d_in: int = 32
    # per shared class (length num_shared) / scalar for every non-shared class
    source_shared_counts: tuple[int, ...] = (10,) * 8
    source_nonshared_count: int = 80
    target_counts: tuple[int, ...] = (60,) * 8
    # positions within the shared set reported as "sparse"
    sparse_classes: tuple[int, ...] = ()
    rotation: float = 1.0  # radians, applied in ``shift_fraction`` of the planes
    shift_fraction: float = 0.5
    bias: float = 0.5
    noise: float = 6.0
    seed: int = 0
    name: str = "custom"

    def validate(self) -> None:
        if not 1 <= self.num_shared <= self.num_classes:
            raise ScenarioError(f"need 1 <= K' <= K, got K'={self.num_shared}, K={self.num_classes}")
        if len(self.source_shared_counts) != self.num_shared:
            raise ScenarioError(f"source_shared_counts needs {self.num_shared} entries")
        if len(self.target_counts) != self.num_shared:
            raise ScenarioError(f"target_counts needs {self.num_shared} entries")
        counts = (*self.source_shared_counts, *self.target_counts, self.source_nonshared_count)
        if any(c < 0 for c in counts):
            raise ScenarioError("sample counts must be >= 0")
        if not any(c > 0 for c in self.target_counts):
            raise ScenarioError("at least one shared class needs a target sample")
        if any(not 0 <= s < self.num_shared for s in self.sparse_classes):
            raise ScenarioError("sparse_classes must index into the shared set")
        if min(self.height, self.width, self.d_in) < 1:
            raise ScenarioError("grid dimensions must be positive")
        if self.noise < 0:
            raise ScenarioError("noise must be >= 0")


@dataclass
class Scenario:
    config: ScenarioConfig
    hierarchy: HierarchyGraph
    prototypes: np.ndarray  # (K, D_in)
    shared_classes: np.ndarray  # class indices, length K'
    mask: np.ndarray  # (K,)
    source_x: np.ndarray  # (n_s, H, W, D_in)
    source_y: np.ndarray
    target_x: np.ndarray
    target_y: np.ndarray  # hidden; evaluation only
    rotation: np.ndarray  # (D_in, D_in)
    bias: np.ndarray  # (D_in,)
    sparse_classes: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))  # class indices

    @property
    def source_is_shared(self) -> np.ndarray:
        return self.mask[self.source_y] > 0

    @property
    def name(self) -> str:
        return self.config.name


# ------------------------------------------------------------------ hierarchy
def build_synthetic_hierarchy(cfg: ScenarioConfig) -> tuple[HierarchyGraph, np.ndarray]:
    """A tree with exactly K leaves and one prototype per leaf class.

    Starts from the full ``branching``-ary tree of the given depth and removes
    surplus leaves round-robin from the last bottom-level parents.
    """
    b, d, k = cfg.branching, cfg.depth, cfg.num_classes
    if d < 2 or b < 2:
        raise ScenarioError(f"need depth >= 2 and branching >= 2, got depth={d}, branching={b}")
    if b**d < k:
        raise ScenarioError(f"branching^depth = {b ** d} < K = {k}")

    n_bottom = b ** (d - 1)
    leaf_counts = [b] * n_bottom
    for r in range(b**d - k):
        leaf_counts[n_bottom - 1 - (r % n_bottom)] -= 1

    names: list[str] = ["root"]
    edges: list[tuple[int, int]] = []
    leaves: list[int] = []

    def grow(node: int, level: int, path: tuple[int, ...]) -> bool:
        if level == d - 1:
            bottom = 0
            for i, digit in enumerate(path):
                bottom = bottom * b + digit
            if leaf_counts[bottom] == 0:
                return False
            for j in range(leaf_counts[bottom]):
                names.append(f"leaf_{'_'.join(map(str, path))}_{j}")
                edges.append((node, len(names) - 1))
                leaves.append(len(names) - 1)
            return True
        kept = False
        for j in range(b):
            names.append(f"g{level + 1}_{'_'.join(map(str, path + (j,)))}")
            child = len(names) - 1
            edges.append((node, child))
            if grow(child, level + 1, path + (j,)):
                kept = True
            else:
                names.pop()
                edges.pop()
        return kept

    grow(0, 0, ())
    graph = HierarchyGraph(tuple(names), tuple(edges), tuple(leaves))

    rng = np.random.default_rng([cfg.seed, 1])
    leaf_set = set(leaves)
    vectors = np.stack(
        [rng.normal(0.0, 0.5 if i in leaf_set else 1.0, size=cfg.d_in) for i in range(len(names))]
    )
    parent = {c: p for p, c in edges}
    protos = np.zeros((k, cfg.d_in))
    for cls, node in enumerate(leaves):
        while node is not None:
            protos[cls] += vectors[node]
            node = parent.get(node)
    return graph, protos


def shared_class_indices(graph: HierarchyGraph, num_shared: int) -> np.ndarray:
    """Spread shared classes over sibling groups: the j-th shared class is
    leaf ``j // G`` of group ``j % G`` (G = number of bottom-level parents)."""
    groups: dict[int, list[int]] = {}
    for cls, node in enumerate(graph.leaf_map):
        groups.setdefault(graph.parent_of(node), []).append(cls)
    ordered = list(groups.values())
    picked = []
    depth = 0
    while len(picked) < num_shared:
        for members in ordered:
            if depth < len(members) and len(picked) < num_shared:
                picked.append(members[depth])
        depth += 1
    return np.array(sorted(picked))


def _rotation(rng: np.random.Generator, dim: int, angle: float, fraction: float) -> np.ndarray:
    q, _ = np.linalg.qr(rng.normal(size=(dim, dim)))
    planes = int(round(fraction * (dim // 2)))
    block = np.eye(dim)
    c, s = np.cos(angle), np.sin(angle)
    for p in range(planes):
        i, j = 2 * p, 2 * p + 1
        block[i, i], block[i, j], block[j, i], block[j, j] = c, -s, s, c
    return q @ block @ q.T


# ------------------------------------------------------------------ sampling
def sample_scenario(cfg: ScenarioConfig) -> Scenario:
    cfg.validate()
    graph, protos = build_synthetic_hierarchy(cfg)
    shared = shared_class_indices(graph, cfg.num_shared)
    mask = np.zeros(cfg.num_classes)
    mask[shared] = 1.0
    rng = np.random.default_rng([cfg.seed, 2])
    rot = _rotation(rng, cfg.d_in, cfg.rotation, cfg.shift_fraction)
    bias_dir = rng.normal(size=cfg.d_in)
    bias = cfg.bias * bias_dir / np.linalg.norm(bias_dir)

    src_counts = np.full(cfg.num_classes, cfg.source_nonshared_count)
    src_counts[shared] = cfg.source_shared_counts
    tgt_counts = np.zeros(cfg.num_classes, dtype=int)
    tgt_counts[shared] = cfg.target_counts

    grid = (cfg.height, cfg.width, cfg.d_in)

    def draw(counts):
        ys = np.repeat(np.arange(cfg.num_classes), counts)
        xs = protos[ys][:, None, None, :] + cfg.noise * rng.normal(size=(len(ys), *grid))
        return xs, ys

    sx, sy = draw(src_counts)
    tx, ty = draw(tgt_counts)
    tx = tx @ rot.T + bias
    return Scenario(
        config=cfg,
        hierarchy=graph,
        prototypes=protos,
        shared_classes=shared,
        mask=mask,
        source_x=sx,
        source_y=sy,
        target_x=tx,
        target_y=ty,
        rotation=rot,
        bias=bias,
        sparse_classes=shared[list(cfg.sparse_classes)],
    )


STANDARD_NAMES = (
    "imbalanced-source-10",
    "imbalanced-source-20",
    "imbalanced-source-50",
    "imbalanced-target-sparse",
    "imbalanced-target-half",
    "full-sparse",
)

TARGET_SETTING_SOURCE_COUNT = 30


def standard_config(name: str, seed: int = 0, **overrides) -> ScenarioConfig:
    """Config of a named desk-scale scenario (K=24, K'=8)."""
    base = ScenarioConfig(seed=seed, name=name)
    kp = base.num_shared
    if name.startswith("imbalanced-source-") and name.rsplit("-", 1)[1].isdigit():
        n = int(name.rsplit("-", 1)[1])
        cfg = replace(base, source_shared_counts=(n,) * kp, target_counts=(60,) * kp,
                      sparse_classes=tuple(range(kp)))
    elif name == "imbalanced-target-sparse":
        cfg = replace(base, source_shared_counts=(TARGET_SETTING_SOURCE_COUNT,) * kp,
                      target_counts=(10,) * 5 + (60,) * (kp - 5), sparse_classes=tuple(range(5)))
    elif name == "imbalanced-target-half":
        half = kp // 2
        cfg = replace(base, source_shared_counts=(TARGET_SETTING_SOURCE_COUNT,) * kp,
                      target_counts=(30,) * half + (60,) * (kp - half), sparse_classes=tuple(range(half)))
    elif name == "full-sparse":
        cfg = replace(base, source_shared_counts=(TARGET_SETTING_SOURCE_COUNT,) * kp,
                      target_counts=(10,) * kp, sparse_classes=tuple(range(kp)))
    else:
        raise ScenarioError(f"unknown scenario {name!r}; valid names: {', '.join(STANDARD_NAMES)}")
    return replace(cfg, **overrides) if overrides else cfg


def standard_scenarios(seed: int = 0) -> dict[str, Scenario]:
    return {name: sample_scenario(standard_config(name, seed)) for name in STANDARD_NAMES}


# ------------------------------------------------------------- serialization
def _write_grid(path: Path, x: np.ndarray) -> None:
    n, h, w, d = x.shape
    path.write_bytes(struct.pack("<4I", n, h, w, d) + np.ascontiguousarray(x, dtype="<f8").tobytes())


def _read_grid(path: Path) -> np.ndarray:
    buf = path.read_bytes()
    n, h, w, d = struct.unpack_from("<4I", buf, 0)
    if len(buf) != 16 + 8 * n * h * w * d:
        raise ScenarioError(f"{path}: payload size does not match header {n}x{h}x{w}x{d}")
    return np.frombuffer(buf, dtype="<f8", offset=16).reshape(n, h, w, d).copy()


def _config_text(cfg: ScenarioConfig) -> str:
    lines = []
    for key, value in asdict(cfg).items():
        if isinstance(value, (tuple, list)):
            value = ",".join(map(str, value))
        lines.append(f"{key}={value}")
    return "\n".join(lines) + "\n"


def _parse_config(text: str) -> ScenarioConfig:
    fields = ScenarioConfig.__dataclass_fields__
    kw = {}
    for line in text.splitlines():
        if not line.strip():
            continue
        key, value = line.split("=", 1)
        default = fields[key].default
        if isinstance(default, tuple):
            kw[key] = tuple(int(v) for v in value.split(",") if v)
        elif isinstance(default, bool):
            kw[key] = value == "True"
        else:
            kw[key] = type(default)(value)
    return ScenarioConfig(**kw)


def save_scenario(scn: Scenario, directory) -> Path:
    """Write a scenario directory.

    Files: ``edges.txt``/``leaves.txt`` (hierarchy formats), ``source.bin``
    and ``target.bin`` (u32 count,H,W,D header then f64 payload),
    ``labels.csv`` (source: index,label,is_shared), ``target_labels.csv``
    (hidden target labels) and ``scenario.cfg`` (generator config).
    """
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    save_graph(scn.hierarchy, out / "edges.txt", out / "leaves.txt")
    _write_grid(out / "source.bin", scn.source_x)
    _write_grid(out / "target.bin", scn.target_x)
    shared = scn.source_is_shared.astype(int)
    rows = ["index,label,is_shared"] + [f"{i},{y},{s}" for i, (y, s) in enumerate(zip(scn.source_y, shared))]
    (out / "labels.csv").write_text("\n".join(rows) + "\n")
    rows = ["index,label,is_shared"] + [f"{i},{y},1" for i, y in enumerate(scn.target_y)]
    (out / "target_labels.csv").write_text("\n".join(rows) + "\n")
    (out / "scenario.cfg").write_text(_config_text(scn.config))
    return out


def _read_labels(path: Path) -> np.ndarray:
    rows = path.read_text().splitlines()[1:]
    return np.array([int(r.split(",")[1]) for r in rows if r], dtype=np.int64)


def load_scenario(directory) -> Scenario:
    """Load a directory written by ``save_scenario``.

    Data come from the files; prototypes and shift are regenerated from the
    stored config.
    """
    d = Path(directory)
    cfg = _parse_config((d / "scenario.cfg").read_text())
    graph = load_graph(d / "edges.txt", d / "leaves.txt")
    ref = sample_scenario(cfg)
    if ref.hierarchy.names != graph.names:
        raise ScenarioError(f"{d}: hierarchy files do not match scenario.cfg")
    ref.source_x = _read_grid(d / "source.bin")
    ref.target_x = _read_grid(d / "target.bin")
    ref.source_y = _read_labels(d / "labels.csv")
    ref.target_y = _read_labels(d / "target_labels.csv")
    return ref
