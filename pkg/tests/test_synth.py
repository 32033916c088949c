from dataclasses import replace

import numpy as np
import pytest

from gada.synth import (
    STANDARD_NAMES,
    ScenarioConfig,
    ScenarioError,
    build_synthetic_hierarchy,
    load_scenario,
    sample_scenario,
    save_scenario,
    shared_class_indices,
    standard_config,
    standard_scenarios,
)


def small(**kw):
    base = dict(num_classes=9, num_shared=3, depth=2, branching=3, height=2, width=2, d_in=8,
                source_shared_counts=(5, 5, 5), source_nonshared_count=4, target_counts=(6, 6, 6))
    base.update(kw)
    return ScenarioConfig(**base)


class TestHierarchy:
    def test_full_binary(self):
        g, protos = build_synthetic_hierarchy(small(num_classes=4, num_shared=2, depth=2, branching=2,
                                                    source_shared_counts=(1, 1), target_counts=(1, 1)))
        assert g.node_count == 7 and g.num_classes == 4 and protos.shape == (4, 8)

    def test_default_size(self):
        g, _ = build_synthetic_hierarchy(ScenarioConfig())
        assert g.num_classes == 24 and 30 <= g.node_count <= 40

    def test_infeasible(self):
        with pytest.raises(ScenarioError):
            build_synthetic_hierarchy(small(num_classes=10))

    def test_deterministic(self):
        a = build_synthetic_hierarchy(ScenarioConfig(seed=4))[1]
        b = build_synthetic_hierarchy(ScenarioConfig(seed=4))[1]
        assert a.tobytes() == b.tobytes()

    def test_siblings_closer_than_cousins(self):
        sib, cousin = [], []
        for seed in range(100):
            g, protos = build_synthetic_hierarchy(ScenarioConfig(seed=seed))
            parent = {k: g.parent_of(node) for k, node in enumerate(g.leaf_map)}
            grand = {k: g.parent_of(parent[k]) for k in parent}
            a = 0
            b = next(k for k in parent if k != a and parent[k] == parent[a])
            c = next(k for k in parent if parent[k] != parent[a] and grand[k] == grand[a])
            sib.append(np.linalg.norm(protos[a] - protos[b]))
            cousin.append(np.linalg.norm(protos[a] - protos[c]))
        # Expected squared gaps: siblings 2*0.25*D, cousins (2*0.25 + 2*1)*D.
        assert np.mean(sib) + 1.0 < np.mean(cousin)
        assert np.mean(np.array(sib) < np.array(cousin)) > 0.9

    def test_shared_spread_over_groups(self):
        g, _ = build_synthetic_hierarchy(ScenarioConfig())
        shared = shared_class_indices(g, 8)
        parents = {g.parent_of(g.leaf_map[k]) for k in shared}
        assert len(shared) == 8 and len(parents) == 8


class TestSample:
    def test_no_shift_same_means(self):
        scn = sample_scenario(small(rotation=0.0, bias=0.0, noise=0.0))
        for k in scn.shared_classes:
            np.testing.assert_allclose(
                scn.source_x[scn.source_y == k].mean(axis=(0, 1, 2)),
                scn.target_x[scn.target_y == k].mean(axis=(0, 1, 2)),
                atol=1e-12,
            )

    def test_imbalanced_source_10(self):
        scn = sample_scenario(standard_config("imbalanced-source-10"))
        for k in scn.shared_classes:
            assert np.sum(scn.source_y == k) == 10 and np.sum(scn.target_y == k) == 60

    def test_full_sparse(self):
        scn = sample_scenario(standard_config("full-sparse"))
        assert all(np.sum(scn.target_y == k) == 10 for k in scn.shared_classes)
        assert set(scn.sparse_classes) == set(scn.shared_classes)

    def test_target_sparse_five(self):
        scn = sample_scenario(standard_config("imbalanced-target-sparse"))
        assert len(scn.sparse_classes) == 5
        assert all(np.sum(scn.target_y == k) == 10 for k in scn.sparse_classes)

    def test_target_half(self):
        scn = sample_scenario(standard_config("imbalanced-target-half"))
        counts = sorted(np.sum(scn.target_y == k) for k in scn.shared_classes)
        assert counts == [30] * 4 + [60] * 4

    def test_named_deterministic_and_nonshared_absent(self):
        a = standard_scenarios(3)
        for name in STANDARD_NAMES:
            b = sample_scenario(standard_config(name, 3))
            assert a[name].source_x.tobytes() == b.source_x.tobytes()
            assert a[name].target_x.tobytes() == b.target_x.tobytes()
            assert set(a[name].target_y) <= set(a[name].shared_classes)
            present = {k for k in range(24) if np.any(a[name].source_y == k)}
            assert present == set(range(24))

    def test_unknown_name(self):
        with pytest.raises(ScenarioError, match="valid names"):
            standard_config("nope")

    @pytest.mark.parametrize(
        "kw",
        [
            dict(num_shared=10),
            dict(target_counts=(0, 0, 0)),
            dict(source_shared_counts=(1, -1, 1)),
            dict(source_shared_counts=(1, 1)),
            dict(noise=-1.0),
        ],
    )
    def test_invalid(self, kw):
        with pytest.raises(ScenarioError):
            sample_scenario(small(**kw))

    def test_source_means_converge(self):
        cfg = small(source_shared_counts=(200, 200, 200), source_nonshared_count=200, noise=1.5)
        scn = sample_scenario(cfg)
        for k in range(cfg.num_classes):
            xs = scn.source_x[scn.source_y == k]
            n = xs.shape[0] * cfg.height * cfg.width
            dev = np.abs(xs.mean(axis=(0, 1, 2)) - scn.prototypes[k])
            assert np.all(dev < 3 * cfg.noise / np.sqrt(n) * 1.5)  # 1.5 slack for the max over dims

    def test_inverse_affine(self):
        cfg = small(target_counts=(300, 300, 300), noise=1.0, rotation=1.2, bias=2.0)
        scn = sample_scenario(cfg)
        np.testing.assert_allclose(scn.rotation @ scn.rotation.T, np.eye(8), atol=1e-12)
        back = (scn.target_x - scn.bias) @ scn.rotation
        for k in scn.shared_classes:
            xs = back[scn.target_y == k]
            n = xs.shape[0] * cfg.height * cfg.width
            dev = np.abs(xs.mean(axis=(0, 1, 2)) - scn.prototypes[k])
            assert np.all(dev < 4.5 * cfg.noise / np.sqrt(n))

    def test_roundtrip(self, tmp_path):
        scn = sample_scenario(small(seed=5))
        save_scenario(scn, tmp_path / "s")
        back = load_scenario(tmp_path / "s")
        assert back.config == scn.config
        for attr in ("source_x", "source_y", "target_x", "target_y", "mask"):
            assert np.array_equal(getattr(back, attr), getattr(scn, attr))
        header = (tmp_path / "s" / "source.bin").read_bytes()[:16]
        assert np.frombuffer(header, "<u4").tolist() == [len(scn.source_y), 2, 2, 8]
        first = (tmp_path / "s" / "labels.csv").read_text().splitlines()[:2]
        assert first[0] == "index,label,is_shared"
        assert first[1] == f"0,{scn.source_y[0]},{int(scn.source_is_shared[0])}"

    def test_overrides(self):
        cfg = standard_config("imbalanced-source-20", 1, noise=0.5)
        assert cfg.noise == 0.5 and cfg.source_shared_counts == (20,) * 8 and cfg.seed == 1
        assert replace(cfg, noise=6.0) == standard_config("imbalanced-source-20", 1)
