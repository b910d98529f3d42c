import numpy as np
import pytest

from interseg.rng import make_rng
from interseg.sampling import (
    AmbiguityCombo,
    AmbiguityRules,
    CaseEntry,
    CaseObjects,
    DatasetSpec,
    augment,
    case_sampling_weights,
    extract_patch,
    instances_from_semantic,
    pick_center,
    sample_target,
)

from conftest import sphere_mask


def _weights_oracle(datasets):
    """Independent literal evaluation of the stated weight formula."""
    raw = []
    for ds in datasets:
        n = len(ds.cases)
        for case in ds.cases:
            raw.append(ds.manual_weight * (n**0.5 / n) * case.n_objects**0.5)
    total = sum(raw)
    return [w / total for w in raw]


class TestCaseWeights:
    def test_budget_example(self):
        big = DatasetSpec("big", [CaseEntry(f"b{i}") for i in range(100)])
        tiny = DatasetSpec("tiny", [CaseEntry("t0")])
        ids, probs = case_sampling_weights([big, tiny])
        # pre-normalization weights 0.1 vs 1.0 -> tiny case is 10x any big case
        assert probs[ids.index("t0")] == pytest.approx(10 * probs[ids.index("b0")])

    def test_object_count_scaling(self):
        ds = DatasetSpec("d", [CaseEntry("one", 1), CaseEntry("four", 4)])
        ids, probs = case_sampling_weights([ds])
        assert probs[ids.index("four")] == pytest.approx(2 * probs[ids.index("one")])

    def test_single_case(self):
        ids, probs = case_sampling_weights([DatasetSpec("d", [CaseEntry("c")])])
        assert probs.tolist() == [1.0]

    def test_formula_oracle_random_specs(self):
        rng = make_rng(8)
        for _ in range(100):
            datasets = []
            for d in range(int(rng.integers(1, 5))):
                cases = [
                    CaseEntry(f"d{d}c{i}", int(rng.integers(1, 9)))
                    for i in range(int(rng.integers(1, 12)))
                ]
                datasets.append(
                    DatasetSpec(f"d{d}", cases, manual_weight=float(rng.uniform(0.2, 3.0)))
                )
            _, probs = case_sampling_weights(datasets)
            oracle = _weights_oracle(datasets)
            assert probs.sum() == pytest.approx(1.0, abs=1e-12)
            assert np.allclose(probs, oracle, atol=1e-12)


class TestSampleTarget:
    def _liver_case(self):
        rules = AmbiguityRules(
            combos=(
                AmbiguityCombo("liver_with_tumors", (1, 2, 3), 0.25),
                AmbiguityCombo("liver_without", (1,), 0.25),
            ),
            remainder_instances=(2, 3),
        )
        return CaseObjects(instances=(1, 2, 3), rules=rules)

    def test_msd_style_distribution(self):
        case = self._liver_case()
        rng = make_rng(9)
        counts = {"liver_with_tumors": 0, "liver_without": 0, "2": 0, "3": 0}
        n = 10_000
        for _ in range(n):
            target = sample_target(case, rng, pseudo_prob=0.0)
            counts[target.name] += 1
        assert abs(counts["liver_with_tumors"] / n - 0.25) < 0.015
        assert abs(counts["liver_without"] / n - 0.25) < 0.015
        assert abs(counts["2"] / n - 0.25) < 0.015
        assert abs(counts["3"] / n - 0.25) < 0.015

    def test_pseudo_fraction(self):
        case = CaseObjects(instances=(1, 2), pseudo_labels=("sv0", "sv1"))
        rng = make_rng(10)
        n = 10_000
        hits = sum(sample_target(case, rng, 0.2).kind == "pseudo" for _ in range(n))
        assert abs(hits / n - 0.2) < 0.015

    def test_no_pseudo_fallback(self):
        case = CaseObjects(instances=(1,))
        rng = make_rng(11)
        for _ in range(100):
            assert sample_target(case, rng, 0.99).kind == "instance"

    def test_uniform_without_rules(self):
        case = CaseObjects(instances=(4, 5, 6))
        rng = make_rng(12)
        counts = {4: 0, 5: 0, 6: 0}
        for _ in range(6000):
            counts[sample_target(case, rng, 0.0).ids[0]] += 1
        for v in counts.values():
            assert abs(v / 6000 - 1 / 3) < 0.03

    def test_empty_case_is_error(self):
        with pytest.raises(ValueError):
            sample_target(CaseObjects(instances=()), make_rng(0))

    def test_rules_validation(self):
        with pytest.raises(ValueError):
            AmbiguityRules(combos=(AmbiguityCombo("a", (1,), 0.7),), remainder_instances=())
        rules = AmbiguityRules.from_json(
            {"combos": [{"name": "a", "instances": [1], "prob": 1.0}]}
        )
        assert rules.combos[0].instances == (1,)

    def test_dataset_spec_json_loader(self, tmp_path):
        import json

        from interseg.sampling import load_dataset_specs

        doc = {
            "datasets": [
                {
                    "id": "liver",
                    "weight": 2.0,
                    "cases": [{"id": "c0", "objects": 3}, {"id": "c1"}],
                    "cleanup": {"1": {"op": "close", "radius": 1}},
                    "ambiguity": {
                        "combos": [{"name": "with", "instances": [1, 2], "prob": 0.5}],
                        "remainder_instances": [2],
                    },
                }
            ]
        }
        path = tmp_path / "specs.json"
        path.write_text(json.dumps(doc))
        specs = load_dataset_specs(path)
        assert specs[0].manual_weight == 2.0
        assert specs[0].cases[0].n_objects == 3
        assert specs[0].cleanup == {1: ("close", 1.0)}
        assert specs[0].ambiguity.combos[0].name == "with"


class TestInstancesFromSemantic:
    def test_two_blobs_same_class(self):
        labels = np.zeros((8, 8, 8), dtype=np.int32)
        labels[0:2, 0:2, 0:2] = 7
        labels[5:8, 5:8, 5:8] = 7
        out = instances_from_semantic(labels)
        assert set(np.unique(out)) == {0, 1, 2}

    def test_close_merges_nearby_blobs(self):
        labels = np.zeros((10, 10, 10), dtype=np.int32)
        labels[2:4, 2:6, 2:6] = 3
        labels[5:7, 2:6, 2:6] = 3  # one-voxel gap at index 4
        merged = instances_from_semantic(labels, cleanup={3: ("close", 1)})
        assert merged.max() == 1
        split = instances_from_semantic(labels)
        assert split.max() == 2

    def test_empty(self):
        out = instances_from_semantic(np.zeros((4, 4, 4), dtype=np.int32))
        assert not out.any()

    def test_ids_consecutive_across_classes(self):
        labels = np.zeros((8, 8, 8), dtype=np.int32)
        labels[0:2, 0:2, 0:2] = 2
        labels[4:6, 4:6, 4:6] = 5
        labels[6:8, 0:2, 0:2] = 5
        out = instances_from_semantic(labels)
        assert set(np.unique(out)) == {0, 1, 2, 3}

    def test_voxels_conserved_without_cleanup(self):
        rng = make_rng(13)
        labels = (rng.random((10, 10, 10)) < 0.3).astype(np.int32) * 4
        out = instances_from_semantic(labels)
        assert np.array_equal(out > 0, labels > 0)


class TestExtractPatch:
    def test_interior_no_padding(self):
        rng = make_rng(14)
        vol = rng.uniform(size=(40, 40, 40))
        patch = extract_patch(vol, (20, 20, 20), patch=16)
        assert np.array_equal(patch, vol[12:28, 12:28, 12:28])

    def test_small_volume_padded(self):
        vol = np.ones((4, 4, 4), dtype=np.float32)
        patch = extract_patch(vol, (2, 2, 2), patch=12)
        assert patch.shape == (12, 12, 12)
        assert patch.sum() == 64
        assert patch[4:8, 4:8, 4:8].all()

    def test_center_validation(self):
        with pytest.raises(ValueError):
            extract_patch(np.zeros((4, 4, 4)), (4, 0, 0), patch=8)

    def test_pick_center_alpha_law(self):
        mask = np.zeros((1, 1, 5), dtype=bool)
        mask[0, 0, 1:4] = True
        rng = make_rng(15)
        n = 20_000
        hits = sum(pick_center(mask, rng, alpha=8) == (0, 0, 2) for _ in range(n))
        assert abs(hits / n - 0.9922) < 0.01


class TestAugment:
    def _pair(self, seed=16, shape=(14, 14, 14)):
        rng = make_rng(seed)
        image = rng.uniform(0, 10, shape).astype(np.float32)
        target = sphere_mask(shape, (7, 7, 7), 4).astype(np.int16)
        return image, target

    def test_stubbed_identity(self, stub_rng):
        # midpoint draws: 0.5 >= all branch probabilities except transpose,
        # whose permutation stub is the identity
        image, target = self._pair()
        out_img, out_tgt = augment(image, target, stub_rng)
        assert abs(float(out_img.mean())) < 1e-5
        assert abs(float(out_img.std()) - 1.0) < 1e-4
        assert np.array_equal(out_tgt, target)

    def test_transpose_relabels_indices(self):
        image, target = self._pair()
        rng = make_rng(17)
        found = False
        for _ in range(60):
            out_img, out_tgt, trace = augment(image, target, rng, with_trace=True)
            if trace.transposed and not trace.scaled and not trace.inverted:
                perm = trace.permutation
                from interseg.volio import zscore

                base, _ = zscore(image)
                assert np.array_equal(out_img, base.transpose(perm))
                assert np.array_equal(out_tgt, target.transpose(perm))
                found = True
                break
        assert found

    def test_branch_frequencies(self):
        image, target = self._pair(shape=(6, 6, 6))
        rng = make_rng(18)
        n = 4000
        scaled = transposed = inverted = 0
        for _ in range(n):
            _, _, trace = augment(image, target, rng, with_trace=True)
            scaled += trace.scaled
            transposed += trace.transposed
            inverted += trace.inverted
        assert abs(scaled / n - 0.3) < 0.025
        assert abs(transposed / n - 0.5) < 0.025
        assert abs(inverted / n - 0.1) < 0.02

    def test_scale_factors_in_range_and_sync(self):
        image, target = self._pair(shape=(8, 8, 8))
        rng = make_rng(19)
        saw_sync = saw_free = False
        for _ in range(400):
            _, _, trace = augment(image, target, rng, with_trace=True)
            if not trace.scaled:
                continue
            assert all(0.5 <= f <= 2.0 for f in trace.scale_factors)
            if trace.synchronized:
                assert len(set(trace.scale_factors)) == 1
                saw_sync = True
            else:
                saw_free = True
        assert saw_sync and saw_free

    def test_target_topology_through_transpose_roundtrip(self):
        from interseg.volcore import dice

        image, target = self._pair()
        rng = make_rng(20)
        for _ in range(40):
            _, out_tgt, trace = augment(image, target, rng, with_trace=True)
            if trace.transposed and not trace.scaled:
                inverse = np.argsort(trace.permutation)
                assert dice(out_tgt.transpose(inverse) > 0, target > 0) == 1.0

    def test_inversion_negates(self):
        image, target = self._pair(shape=(6, 6, 6))
        rng = make_rng(21)
        from interseg.volio import zscore

        for _ in range(200):
            out_img, _, trace = augment(image, target, rng, with_trace=True)
            if trace.inverted and not trace.scaled and not trace.transposed:
                base, _ = zscore(image)
                assert np.array_equal(out_img, -base)
                return
        pytest.fail("never saw a pure inversion")
