import numpy as np
import pytest

from gada.hierarchy import HierarchyGraph


def random_tree(rng: np.random.Generator, n: int) -> HierarchyGraph:
    """Uniform random recursive tree on ``n`` nodes; childless nodes are the classes."""
    names = [f"n{i}" for i in range(n)]
    edges = [(int(rng.integers(0, i)), i) for i in range(1, n)]
    parents = {p for p, _ in edges}
    leaves = [i for i in range(n) if i not in parents]
    rng.shuffle(leaves)
    return HierarchyGraph(tuple(names), tuple(edges), tuple(int(i) for i in leaves))


def animal_graph() -> HierarchyGraph:
    """K=6 leaves under 3 super-classes under one root (N=10)."""
    edges = [
        ("root", "cats"), ("root", "dogs"), ("root", "birds"),
        ("cats", "wildcat"), ("cats", "housecat"),
        ("dogs", "wilddog"), ("dogs", "housedog"),
        ("birds", "sparrow"), ("birds", "crow"),
    ]
    leaves = ["wildcat", "housecat", "wilddog", "housedog", "sparrow", "crow"]
    return HierarchyGraph.from_named(edges, leaves)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def animals():
    return animal_graph()
