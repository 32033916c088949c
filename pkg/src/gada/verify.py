"""Self-checks shared by ``gada verify`` and the acceptance tests.

Each check returns a ``CheckResult`` carrying the worst observed error and
the threshold it is held to.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .autodiff import finite_diff_check, tsum
from .hgr import hgr_forward, init_hgr_params
from .hierarchy import HierarchyGraph, normalized_adjacency, personalized_pagerank, ppr_oracle_solve
from .model import forward_all, init_model
from .synth import ScenarioConfig, build_synthetic_hierarchy, shared_class_indices


@dataclass
class CheckResult:
    name: str
    value: float
    threshold: float
    passed: bool
    seconds: float
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: {self.value:.3e} (threshold {self.threshold:g}) {self.seconds:.1f}s {self.detail}".rstrip()


def random_tree(rng: np.random.Generator, n: int) -> HierarchyGraph:
    """Random recursive tree on ``n`` nodes; childless nodes become the classes."""
    edges = [(int(rng.integers(0, i)), i) for i in range(1, n)]
    parents = {p for p, _ in edges}
    leaves = [i for i in range(n) if i not in parents]
    rng.shuffle(leaves)
    return HierarchyGraph(tuple(f"n{i}" for i in range(n)), tuple(edges), tuple(int(i) for i in leaves))


def _randomize(model, rng, scale=0.5):
    for p in model.all_parameters():
        p.data[...] = rng.normal(0.0, scale, size=p.shape)
    for layer in model.hgr:
        for bn in (layer.bn_nodes, layer.bn_reason):
            bn.running_mean[:] = rng.normal(0.0, 0.3, size=bn.running_mean.shape)
            bn.running_var[:] = rng.uniform(0.5, 2.0, size=bn.running_var.shape)


def desk_model(seed: int = 0):
    """Default-sized model (K=24, N=37, D^l=32, D^S=16) with every parameter random."""
    cfg = ScenarioConfig(seed=seed)
    graph, _ = build_synthetic_hierarchy(cfg)
    mask = np.zeros(cfg.num_classes)
    mask[shared_class_indices(graph, cfg.num_shared)] = 1.0
    model = init_model(graph, mask, cfg.d_in, seed=seed, detach_attention=False)
    rng = np.random.default_rng([seed, 99])
    _randomize(model, rng, scale=0.3)
    x = rng.normal(size=(3, cfg.height, cfg.width, cfg.d_in))
    return model, x, rng


def check_gradients(seed: int = 0, eps: float = 1e-5, threshold: float = 1e-4, floor: float = 1e-6,
                    kink_tol: float = 2e-4) -> CheckResult:
    """Central differences against reverse mode for every HGR parameter
    group and both heads, eval-mode BN, with the attention path left
    attached so the PPR and softmax gradients are covered too.

    Gradients below ``floor`` are compared absolutely: at eps 1e-5 their
    central differences are dominated by roundoff. Coordinates sitting on a
    relu kink are skipped and counted in the detail string. A kink at
    distance d < eps shifts the central difference by jump*(eps-d)/(2*eps)
    and the one-sided slopes apart by twice that, so ``kink_tol`` of twice
    the threshold catches every kink that could fake a failure. Both slopes
    come from the loss alone, so a wrong analytic gradient is never skipped.

    Head f2 sits behind the gradient reversal, so it is checked on a loss
    built from p2 alone while everything upstream is checked on p1_plus.
    """
    t0 = time.perf_counter()
    model, x, rng = desk_model(seed)
    k = model.num_classes
    w1 = rng.normal(size=(len(x), k))
    w2 = rng.normal(size=(len(x), k))

    # Probabilities rather than log-probabilities keep |loss| near 1, so the
    # central-difference roundoff stays well under the smallest gradients.
    def loss_p1():
        return tsum(forward_all(x, model, "eval").p1_plus * w1)

    def loss_p2():
        return tsum(forward_all(x, model, "eval").p2_plus * w2)

    worst, worst_name = 0.0, ""
    checked = skipped = 0
    groups = [(p, loss_p1) for layer in model.hgr for p in layer.parameters()]
    groups += [(p, loss_p1) for p in model.f1.parameters()]
    groups += [(p, loss_p2) for p in model.f2.parameters()]
    for p, fn in groups:
        stats: dict = {}
        err = finite_diff_check(fn, [p], eps=eps, max_coords=64, seed=seed, floor=floor, kink_tol=kink_tol, stats=stats)
        checked += stats["checked"]
        skipped += stats["skipped"]
        if err > worst:
            worst, worst_name = err, p.name
    return CheckResult("gradcheck", worst, threshold, worst < threshold, time.perf_counter() - t0,
                       f"{len(groups)} groups, {checked} coords, {skipped} on kinks, worst {worst_name}")


def check_ppr(trees: int = 100, max_nodes: int = 64, seed: int = 0, threshold: float = 1e-8) -> CheckResult:
    t0 = time.perf_counter()
    rng = np.random.default_rng([seed, 11])
    worst = 0.0
    for _ in range(trees):
        g = random_tree(rng, int(rng.integers(1, max_nodes + 1)))
        v = rng.random(g.node_count) * (rng.random(g.node_count) < 0.5)
        v[rng.integers(g.node_count)] += rng.random() + 1e-3
        worst = max(worst, float(np.max(np.abs(personalized_pagerank(g, v) - ppr_oracle_solve(g, v)))))
    return CheckResult("ppr", worst, threshold, worst < threshold, time.perf_counter() - t0, f"{trees} trees")


def check_mask_soundness(models: int = 500, inputs_per_model: int = 20, seed: int = 0) -> CheckResult:
    """h1/h2 inside the shared set and exact zeros at masked entries over
    ``models * inputs_per_model`` draws with random masks, weights and scales."""
    t0 = time.perf_counter()
    rng = np.random.default_rng([seed, 12])
    violations = 0
    for _ in range(models):
        g = random_tree(rng, int(rng.integers(2, 16)))
        k = g.num_classes
        mask = (rng.random(k) < rng.uniform(0.1, 0.9)).astype(float)
        mask[rng.integers(k)] = 1.0
        d_in = int(rng.integers(1, 6))
        model = init_model(g, mask, d_in, d_local=int(rng.integers(2, 7)), d_sem=int(rng.integers(1, 4)),
                           seed=int(rng.integers(2**31)))
        _randomize(model, rng, scale=float(rng.choice([0.1, 1.0, 10.0])))
        x = rng.normal(0.0, float(rng.choice([0.01, 1.0, 100.0])), size=(inputs_per_model, 2, 2, d_in))
        with np.errstate(all="ignore"):
            pred = forward_all(x, model, str(rng.choice(["train", "eval"])))
        shared = mask > 0
        violations += int(np.sum(~shared[pred.h1]) + np.sum(~shared[pred.h2]))
        violations += int(np.sum(pred.p1_pp.data[:, ~shared] != 0) + np.sum(pred.p2_pp.data[:, ~shared] != 0))
    n = models * inputs_per_model
    return CheckResult("mask-soundness", float(violations), 0.5, violations == 0, time.perf_counter() - t0,
                       f"{n} draws")


def check_residual_identity(inputs: int = 100, seed: int = 0) -> CheckResult:
    t0 = time.perf_counter()
    rng = np.random.default_rng([seed, 13])
    mismatches = 0
    for _ in range(inputs):
        g = random_tree(rng, int(rng.integers(2, 20)))
        d_l = int(rng.integers(1, 9))
        params = init_hgr_params(rng, g.node_count, d_l, int(rng.integers(1, 6)))
        for p in params.parameters():
            p.data[...] = rng.normal(size=p.shape)
        params.mlp_out.second.weight.data[...] = 0.0
        params.mlp_out.second.bias.data[...] = 0.0
        x = rng.normal(0.0, 3.0, size=(int(rng.integers(1, 4)), int(rng.integers(1, 4)), int(rng.integers(1, 4)), d_l))
        p1 = rng.dirichlet(np.ones(g.num_classes), size=len(x))
        out = hgr_forward(x, p1, g, params, str(rng.choice(["train", "eval"]))).data
        mismatches += int(not np.array_equal(out, x))
    return CheckResult("residual-identity", float(mismatches), 0.5, mismatches == 0, time.perf_counter() - t0,
                       f"{inputs} inputs")


def check_adjacency(trees: int = 100, seed: int = 0) -> tuple[CheckResult, CheckResult]:
    """Symmetry error and power-iteration spectral radius of D^-1/2 (A+I) D^-1/2."""
    t0 = time.perf_counter()
    rng = np.random.default_rng([seed, 14])
    asym, radius = 0.0, 0.0
    for _ in range(trees):
        g = random_tree(rng, int(rng.integers(2, 65)))
        a = normalized_adjacency(g)
        asym = max(asym, float(np.max(np.abs(a - a.T))))
        v = rng.random(g.node_count) + 0.1
        est = 0.0
        for _ in range(500):
            w = a @ v
            est = float(np.linalg.norm(w) / np.linalg.norm(v))
            v = w / np.linalg.norm(w)
        radius = max(radius, est)
    dt = time.perf_counter() - t0
    return (
        CheckResult("adjacency-symmetry", asym, 1e-12, asym <= 1e-12, dt, f"{trees} trees"),
        CheckResult("adjacency-spectral-radius", radius, 1 + 1e-9, radius <= 1 + 1e-9, dt, f"{trees} trees"),
    )


def check_softmax(seed: int = 0) -> CheckResult:
    from .autodiff import Tensor, softmax

    t0 = time.perf_counter()
    rng = np.random.default_rng([seed, 15])
    worst = 0.0
    for _ in range(200):
        x = rng.normal(0.0, float(rng.choice([1.0, 100.0, 1e4])), size=(int(rng.integers(1, 6)), int(rng.integers(1, 9))))
        s = softmax(Tensor(x), axis=-1).data
        worst = max(worst, float(np.max(np.abs(s.sum(axis=-1) - 1.0))))
    return CheckResult("softmax-normalization", worst, 1e-12, worst <= 1e-12, time.perf_counter() - t0)


def run_suite(suite: str, seed: int = 0) -> list[CheckResult]:
    if suite not in ("gradcheck", "ppr", "invariants", "all"):
        raise ValueError(f"unknown suite {suite!r}; choose gradcheck, ppr, invariants or all")
    results = []
    if suite in ("gradcheck", "all"):
        results.append(check_gradients(seed))
    if suite in ("ppr", "all"):
        results.append(check_ppr(seed=seed))
    if suite in ("invariants", "all"):
        results.append(check_mask_soundness(seed=seed))
        results.append(check_residual_identity(seed=seed))
        results.extend(check_adjacency(seed=seed))
        results.append(check_softmax(seed))
    return results
