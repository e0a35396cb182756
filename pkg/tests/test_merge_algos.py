"""Merge operators: spec'd examples, invariants, and oracle equivalence."""

from __future__ import annotations

import math

import numpy as np
import pytest

from guardmerge import rng as rngmod
from guardmerge.errors import (
    EmptySelection,
    IncompatibleCheckpoints,
    InvalidDropRate,
    ZeroNormVector,
)
from guardmerge.merge_algos import (
    MergeSpec,
    TaskVector,
    apply_merge,
    dare_merge,
    dare_sparsify,
    disjoint_merge,
    elect_sign,
    slerp,
    slerp_merge,
    soup_merge,
    task_vector,
    ties_merge,
    trim_topk,
)
from guardmerge.param_groups import MergeType
from guardmerge.tensor_store import TensorMap

from conftest import map_to_flat_lists, random_tensor_map
from naive_reference import ref_dare_p0, ref_slerp, ref_soup, ref_ties


def tmap(values) -> TensorMap:
    return TensorMap({"t": values})


def tv(values) -> TaskVector:
    return TaskVector({"t": np.asarray(values, dtype=np.float64)})


class TestMergeSpecValidation:
    def test_weights_must_sum_to_one(self):
        with pytest.raises(ValueError):
            MergeSpec("soup", (0.5, 0.6))

    def test_weights_must_be_nonnegative(self):
        with pytest.raises(ValueError):
            MergeSpec("soup", (1.5, -0.5))

    def test_slerp_needs_two_models(self):
        with pytest.raises(ValueError):
            MergeSpec("slerp", (0.5, 0.25, 0.25))

    def test_unknown_algorithm(self):
        with pytest.raises(ValueError):
            MergeSpec("fisher", (1.0,))

    def test_lambda_zero_is_allowed(self):
        assert MergeSpec("ties", (1.0,), lam=0.0).lam == 0.0


class TestTaskVector:
    def test_identical_model_gives_zero_delta(self):
        m = tmap([1.0, 2.0])
        delta = task_vector(m, m, ["t"])
        np.testing.assert_array_equal(delta.values["t"], [0.0, 0.0])

    def test_elementwise_subtraction(self):
        delta = task_vector(tmap([3.0, 1.0]), tmap([1.0, 1.0]), ["t"])
        np.testing.assert_array_equal(delta.values["t"], [2.0, 0.0])

    def test_init_plus_delta_reconstructs_model(self, rng):
        model = random_tensor_map(rng, names=["a", "b"])
        init = TensorMap({n: rng.standard_normal(model[n].shape).astype(np.float32)
                          for n in model.names()})
        delta = task_vector(model, init, model.names())
        for name in model.names():
            recon = np.asarray(init[name], dtype=np.float64) + delta.values[name]
            np.testing.assert_array_equal(recon.astype(np.float32), model[name])

    def test_shape_mismatch_raises(self):
        with pytest.raises(IncompatibleCheckpoints):
            task_vector(tmap([1.0, 2.0]), tmap([[1.0], [2.0]]), ["t"])


class TestTrimTopk:
    def test_k_100_is_identity(self):
        delta = tv([0.1, -3.0, 0.5, 2.0])
        out = trim_topk(delta, 100.0)
        np.testing.assert_array_equal(out.values["t"], delta.values["t"])

    def test_spec_example_k50(self):
        out = trim_topk(tv([0.1, -3.0, 0.5, 2.0]), 50.0)
        np.testing.assert_array_equal(out.values["t"], [0.0, -3.0, 0.0, 2.0])

    def test_all_zero_stays_zero(self):
        out = trim_topk(tv([0.0, 0.0, 0.0]), 30.0)
        np.testing.assert_array_equal(out.values["t"], [0.0, 0.0, 0.0])

    def test_threshold_ties_keep_earlier_element(self):
        out = trim_topk(tv([1.0, -1.0, 1.0, -1.0]), 50.0)
        np.testing.assert_array_equal(out.values["t"], [1.0, -1.0, 0.0, 0.0])

    def test_global_across_tensors(self):
        delta = TaskVector({
            "a": np.array([5.0, 0.1]),
            "b": np.array([4.0, 0.2]),
        })
        out = trim_topk(delta, 50.0)
        np.testing.assert_array_equal(out.values["a"], [5.0, 0.0])
        np.testing.assert_array_equal(out.values["b"], [4.0, 0.0])

    def test_per_tensor_mode(self):
        delta = TaskVector({
            "a": np.array([5.0, 0.1]),
            "b": np.array([4.0, 0.2]),
        })
        out = trim_topk(delta, 50.0, per_tensor=True)
        np.testing.assert_array_equal(out.values["a"], [5.0, 0.0])
        np.testing.assert_array_equal(out.values["b"], [4.0, 0.0])

    def test_matches_brute_force_sort_oracle(self, rng):
        for _ in range(50):
            size = int(rng.integers(1, 20))
            vals = rng.standard_normal(size)
            k = float(rng.uniform(1, 100))
            keep_count = math.ceil(k * size / 100.0)
            order = sorted(range(size), key=lambda i: (-abs(vals[i]), i))
            keep = set(order[:keep_count])
            expected = [vals[i] if i in keep else 0.0 for i in range(size)]
            out = trim_topk(TaskVector({"t": vals.copy()}), k)
            np.testing.assert_array_equal(out.values["t"], expected)


class TestElectSign:
    def test_weighted_spec_example(self):
        signs = elect_sign([tv([1.0, -2.0]), tv([3.0, 1.0])], [0.5, 0.5], "weighted")
        np.testing.assert_array_equal(signs["t"], [1.0, -1.0])

    def test_single_delta_any_mode(self):
        for mode in ("weighted", "unweighted"):
            signs = elect_sign([tv([2.0, -3.0, 0.0])], [1.0], mode)
            np.testing.assert_array_equal(signs["t"], [1.0, -1.0, 0.0])

    def test_exact_cancellation_gives_zero(self):
        signs = elect_sign([tv([1.0]), tv([-1.0])], [0.5, 0.5], "weighted")
        np.testing.assert_array_equal(signs["t"], [0.0])

    def test_unweighted_ignores_weights(self):
        deltas = [tv([1.0]), tv([-2.0])]
        weighted = elect_sign(deltas, [0.9, 0.1], "weighted")
        unweighted = elect_sign(deltas, [0.9, 0.1], "unweighted")
        np.testing.assert_array_equal(weighted["t"], [1.0])
        np.testing.assert_array_equal(unweighted["t"], [-1.0])


class TestDisjointMerge:
    def test_weighted_mean_spec_example(self):
        deltas = [tv([1.0, -2.0]), tv([3.0, 1.0])]
        signs = TensorMap({"t": [1.0, -1.0]})
        out = disjoint_merge(deltas, [0.5, 0.5], signs, "weighted_mean")
        np.testing.assert_allclose(out.values["t"], [2.0, -2.0])

    def test_single_model_signs_always_agree(self):
        delta = tv([0.5, -1.5, 0.0])
        signs = elect_sign([delta], [1.0], "weighted")
        out = disjoint_merge([delta], [1.0], signs, "weighted_mean")
        np.testing.assert_array_equal(out.values["t"], delta.values["t"])

    def test_all_zero_signs_give_zero(self):
        deltas = [tv([1.0, 2.0]), tv([-1.0, -2.0])]
        signs = TensorMap({"t": [0.0, 0.0]})
        out = disjoint_merge(deltas, [0.5, 0.5], signs, "weighted_mean")
        np.testing.assert_array_equal(out.values["t"], [0.0, 0.0])

    def test_plain_mean_mode(self):
        deltas = [tv([1.0]), tv([3.0])]
        signs = TensorMap({"t": [1.0]})
        out = disjoint_merge(deltas, [0.9, 0.1], signs, "plain_mean")
        np.testing.assert_allclose(out.values["t"], [2.0])


class TestTiesMerge:
    def test_single_model_k100_lam1_returns_model(self, rng):
        model = random_tensor_map(rng, names=["a", "b"])
        init = TensorMap({n: rng.standard_normal(model[n].shape).astype(np.float32)
                          for n in model.names()})
        spec = MergeSpec("ties", (1.0,), ties_k=100.0, lam=1.0)
        out = ties_merge([model], init, spec, model.names())
        assert out == model

    def test_spec_hand_trace(self):
        out = ties_merge(
            [tmap([1.0, -2.0]), tmap([3.0, 1.0])],
            tmap([0.0, 0.0]),
            MergeSpec("ties", (0.5, 0.5), ties_k=100.0, lam=1.0),
            ["t"],
        )
        np.testing.assert_allclose(out["t"], [2.0, -2.0])

    def test_lambda_zero_returns_init_on_selected(self):
        init = tmap([7.0, -7.0])
        out = ties_merge(
            [tmap([1.0, -2.0]), tmap([3.0, 1.0])], init,
            MergeSpec("ties", (0.5, 0.5), ties_k=100.0, lam=0.0), ["t"],
        )
        np.testing.assert_array_equal(out["t"], init["t"])

    def test_zero_interference_equals_weighted_average(self, rng):
        """All-positive deltas agree everywhere, so the disjoint merge is
        the plain weighted average of the deltas."""
        init = random_tensor_map(rng, names=["a"])
        deltas = [np.abs(rng.standard_normal(init["a"].shape)) + 0.1 for _ in range(3)]
        models = [TensorMap({"a": init["a"] + d.astype(np.float32)}) for d in deltas]
        w = (0.2, 0.5, 0.3)
        spec = MergeSpec("ties", w, ties_k=100.0, lam=1.0)
        out = ties_merge(models, init, spec, ["a"])
        f64 = [np.asarray(m["a"], dtype=np.float64) -
               np.asarray(init["a"], dtype=np.float64) for m in models]
        expected = np.asarray(init["a"], dtype=np.float64) + sum(
            wi * di for wi, di in zip(w, f64)
        )
        np.testing.assert_allclose(out["a"], expected, atol=1e-6)


class TestSoupMerge:
    def test_uniform_over_two_copies_is_identity(self, rng):
        m = random_tensor_map(rng)
        out = soup_merge([m, m], (0.5, 0.5), m.names())
        assert out == m

    def test_spec_example(self):
        out = soup_merge([tmap([0.0, 4.0]), tmap([2.0, 0.0])], (0.25, 0.75), ["t"])
        np.testing.assert_allclose(out["t"], [1.5, 1.0])

    def test_degenerate_weight_returns_first_model(self, rng):
        shape = (4,)
        models = [TensorMap({"a": rng.standard_normal(shape).astype(np.float32)})
                  for _ in range(3)]
        out = soup_merge(models, (1.0, 0.0, 0.0), ["a"])
        assert out == models[0]


class TestDareSparsify:
    def test_p0_returns_sft_exactly(self, rng):
        sft = random_tensor_map(rng, names=["a", "b"])
        pre = TensorMap({n: rng.standard_normal(sft[n].shape).astype(np.float32)
                         for n in sft.names()})
        out = dare_sparsify(sft, pre, 0.0, rngmod.stream(7, "test"))
        assert out == sft

    def test_equal_checkpoints_give_pre(self, rng):
        m = random_tensor_map(rng)
        out = dare_sparsify(m, m, 0.7, rngmod.stream(7, "test"))
        assert out == m

    def test_unbiased_at_p09(self):
        """Monte-Carlo oracle: E[mask / (1-p)] = 1, so the mean recovered
        delta over 100k seeded draws stays within 5% of the true delta."""
        size = 100_000
        pre = TensorMap({"t": np.zeros(size, dtype=np.float32)})
        sft = TensorMap({"t": np.ones(size, dtype=np.float32)})
        out = dare_sparsify(sft, pre, 0.9, rngmod.stream(3, "mc"))
        mean_delta = float(np.mean(np.asarray(out["t"], dtype=np.float64)))
        assert abs(mean_delta - 1.0) < 0.05

    def test_invalid_drop_rate(self):
        m = tmap([1.0])
        for p in (-0.1, 1.0, 1.5):
            with pytest.raises(InvalidDropRate):
                dare_sparsify(m, m, p, rngmod.stream(0))


class TestDareMerge:
    def test_single_model_p0_lam1_is_identity(self, rng):
        model = random_tensor_map(rng, names=["a"])
        pre = TensorMap({"a": rng.standard_normal(model["a"].shape).astype(np.float32)})
        spec = MergeSpec("dare", (1.0,), dare_p=0.0, lam=1.0)
        out = dare_merge([model], pre, spec, ["a"])
        assert out == model

    def test_p0_two_models_sums_both_deltas(self):
        pre = tmap([1.0, 1.0])
        m1 = tmap([2.0, 0.0])
        m2 = tmap([1.0, 3.0])
        spec = MergeSpec("dare", (0.5, 0.5), dare_p=0.0, lam=1.0)
        out = dare_merge([m1, m2], pre, spec, ["t"])
        # pre + (m1 - pre) + (m2 - pre)
        np.testing.assert_allclose(out["t"], [2.0, 2.0])

    def test_same_seed_is_deterministic(self, rng):
        models = [random_tensor_map(rng, names=["a"]) for _ in range(2)]
        models[1] = TensorMap({"a": rng.standard_normal(models[0]["a"].shape)
                               .astype(np.float32)})
        pre = TensorMap({"a": np.zeros(models[0]["a"].shape, dtype=np.float32)})
        spec = MergeSpec("dare", (0.5, 0.5), dare_p=0.5, seed=11)
        assert dare_merge(models, pre, spec, ["a"]) == \
            dare_merge(models, pre, spec, ["a"])

    def test_different_seeds_differ(self):
        pre = TensorMap({"a": np.zeros(64, dtype=np.float32)})
        model = TensorMap({"a": np.ones(64, dtype=np.float32)})
        out1 = dare_merge([model], pre, MergeSpec("dare", (1.0,), dare_p=0.5, seed=1),
                          ["a"])
        out2 = dare_merge([model], pre, MergeSpec("dare", (1.0,), dare_p=0.5, seed=2),
                          ["a"])
        assert out1 != out2


class TestSlerp:
    def test_endpoints(self):
        v0 = np.array([1.0, 2.0], dtype=np.float32)
        v1 = np.array([-3.0, 0.5], dtype=np.float32)
        np.testing.assert_allclose(slerp(v0, v1, 0.0), v0, atol=1e-12)
        np.testing.assert_allclose(slerp(v0, v1, 1.0), v1, atol=1e-12)

    def test_orthogonal_midpoint(self):
        out = slerp(np.array([1.0, 0.0]), np.array([0.0, 1.0]), 0.5)
        np.testing.assert_allclose(out, [0.70710678, 0.70710678], atol=1e-6)

    def test_collinear_falls_back_to_lerp(self):
        v0 = np.array([1.0, 2.0])
        v1 = 1.0000001 * v0
        out = slerp(v0, v1, 0.5)
        assert np.isfinite(out).all()
        np.testing.assert_allclose(out, 0.5 * v0 + 0.5 * v1, atol=1e-9)

    def test_zero_norm_raises(self):
        with pytest.raises(ZeroNormVector):
            slerp(np.zeros(2), np.ones(2), 0.5)

    def test_lerp_limit_agreement_at_small_angle(self):
        """Near omega -> 0 the spherical formula converges to the linear one."""
        gen = np.random.default_rng(5)
        base = gen.standard_normal(8)
        for scale in (1e-4, 1e-5):
            other = base + scale * gen.standard_normal(8)
            spherical = slerp(base, other, 0.3, eps=1e-12)
            linear = 0.7 * base + 0.3 * other
            np.testing.assert_allclose(spherical, linear, atol=1e-4)


class TestSlerpMerge:
    def test_t0_returns_model0_on_selected(self, rng):
        m0 = random_tensor_map(rng, names=["a", "b"])
        m1 = TensorMap({n: rng.standard_normal(m0[n].shape).astype(np.float32)
                        for n in m0.names()})
        spec = MergeSpec("slerp", (0.5, 0.5), slerp_t=0.0)
        out = slerp_merge(m0, m1, spec, m0.names())
        assert out == m0

    def test_preserves_norm_for_unit_inputs(self, rng):
        a = rng.standard_normal(16)
        b = rng.standard_normal(16)
        m0 = TensorMap({"t": (a / np.linalg.norm(a)).astype(np.float32)})
        m1 = TensorMap({"t": (b / np.linalg.norm(b)).astype(np.float32)})
        spec = MergeSpec("slerp", (0.5, 0.5), slerp_t=0.37)
        out = slerp_merge(m0, m1, spec, ["t"])
        assert abs(np.linalg.norm(np.asarray(out["t"], dtype=np.float64)) - 1.0) < 1e-6

    def test_identical_models_take_fallback_path(self, rng):
        m = random_tensor_map(rng)
        spec = MergeSpec("slerp", (0.5, 0.5), slerp_t=0.4)
        assert slerp_merge(m, m, spec, m.names()) == m

    def test_zero_tensor_interpolates_linearly(self):
        m0 = TensorMap({"t": [0.0, 0.0]})
        m1 = TensorMap({"t": [2.0, 4.0]})
        spec = MergeSpec("slerp", (0.5, 0.5), slerp_t=0.5)
        out = slerp_merge(m0, m1, spec, ["t"])
        np.testing.assert_allclose(out["t"], [1.0, 2.0])


NAMES_3 = ["dense.attention.weight", "dense.ffn.weight", "classifier.weight"]


def _three_tensor_models(rng, count=2):
    models = []
    for _ in range(count):
        models.append(TensorMap({
            name: rng.standard_normal(4).astype(np.float32) for name in NAMES_3
        }))
    init = TensorMap({name: np.zeros(4, dtype=np.float32) for name in NAMES_3})
    return models, init


class TestApplyMerge:
    def test_base_soup_keeps_carrier_classifier(self, rng):
        models, _ = _three_tensor_models(rng)
        spec = MergeSpec("soup", (0.3, 0.7), tau=MergeType.BASE)
        out = apply_merge(models, None, spec)
        assert out["classifier.weight"].tobytes() == \
            models[0]["classifier.weight"].tobytes()

    def test_full_soup_is_elementwise_mean(self, rng):
        models, _ = _three_tensor_models(rng)
        spec = MergeSpec("soup", (0.5, 0.5), tau=MergeType.FULL)
        out = apply_merge(models, None, spec)
        for name in NAMES_3:
            expected = 0.5 * np.asarray(models[0][name], dtype=np.float64) \
                + 0.5 * np.asarray(models[1][name], dtype=np.float64)
            np.testing.assert_allclose(out[name], expected, atol=1e-7)

    def test_attention_ties_composes_with_standalone(self, rng):
        models, init = _three_tensor_models(rng)
        spec = MergeSpec("ties", (0.5, 0.5), tau=MergeType.ATTENTION,
                         ties_k=50.0, lam=1.0)
        out = apply_merge(models, init, spec)
        standalone = ties_merge(models, init, spec, ["dense.attention.weight"])
        np.testing.assert_array_equal(out["dense.attention.weight"],
                                      standalone["dense.attention.weight"])
        for name in ("dense.ffn.weight", "classifier.weight"):
            assert out[name].tobytes() == models[0][name].tobytes()

    def test_empty_selection_propagates(self, rng):
        models = [TensorMap({"linear.weight": rng.standard_normal(3)
                             .astype(np.float32)}) for _ in range(2)]
        spec = MergeSpec("soup", (0.5, 0.5), tau=MergeType.ATTENTION)
        with pytest.raises(EmptySelection):
            apply_merge(models, None, spec)

    def test_incompatible_models_rejected(self):
        a = TensorMap({"t": [1.0, 2.0]})
        b = TensorMap({"t": [1.0]})
        with pytest.raises(IncompatibleCheckpoints):
            apply_merge([a, b], None, MergeSpec("soup", (0.5, 0.5)))


class TestInvariants:
    def test_idempotence_suite(self, rng):
        """Merging n copies of one model returns it within 1e-7 elementwise."""
        m = random_tensor_map(rng, names=["u", "v"])
        n = 3
        uniform = tuple(1.0 / n for _ in range(n))
        skewed = (0.6, 0.3, 0.1)
        for weights in (uniform, skewed):
            out = soup_merge([m] * n, weights, m.names())
            for name in m.names():
                np.testing.assert_allclose(out[name], m[name], atol=1e-7)
        init = TensorMap({k: rng.standard_normal(m[k].shape).astype(np.float32)
                          for k in m.names()})
        out = ties_merge([m] * n, init, MergeSpec("ties", uniform, ties_k=100.0,
                                                  lam=1.0), m.names())
        for name in m.names():
            np.testing.assert_allclose(out[name], m[name], atol=1e-7)
        out = dare_merge([m], m, MergeSpec("dare", (1.0,), dare_p=0.0, lam=1.0),
                         m.names())
        for name in m.names():
            np.testing.assert_allclose(out[name], m[name], atol=1e-7)
        for t in (0.0, 0.37, 1.0):
            out = slerp_merge(m, m, MergeSpec("slerp", (0.5, 0.5), slerp_t=t),
                              m.names())
            for name in m.names():
                np.testing.assert_allclose(out[name], m[name], atol=1e-7)

    def test_weight_permutation_equivariance(self, rng):
        """Jointly permuting (models, weights) leaves outputs unchanged.

        DARE is checked at p=0: with p > 0 the mask stream is keyed by
        model index, so permuting models permutes masks by design.
        """
        template = random_tensor_map(rng, names=["a", "b"])
        models = [TensorMap({n: rng.standard_normal(template[n].shape)
                             .astype(np.float32) for n in template.names()})
                  for _ in range(3)]
        init = TensorMap({n: np.zeros_like(models[0][n]) for n in models[0].names()})
        weights = (0.5, 0.3, 0.2)
        perm = [2, 0, 1]
        p_models = [models[i] for i in perm]
        p_weights = tuple(weights[i] for i in perm)
        names = models[0].names()

        out_a = soup_merge(models, weights, names)
        out_b = soup_merge(p_models, p_weights, names, carrier=models[0])
        for name in names:
            np.testing.assert_allclose(out_a[name], out_b[name], atol=1e-7)

        spec_a = MergeSpec("ties", weights, ties_k=60.0)
        spec_b = MergeSpec("ties", p_weights, ties_k=60.0)
        out_a = ties_merge(models, init, spec_a, names)
        out_b = ties_merge(p_models, init, spec_b, names, carrier=models[0])
        for name in names:
            np.testing.assert_allclose(out_a[name], out_b[name], atol=1e-7)

        spec_a = MergeSpec("dare", weights, dare_p=0.0)
        spec_b = MergeSpec("dare", p_weights, dare_p=0.0)
        out_a = dare_merge(models, init, spec_a, names)
        out_b = dare_merge(p_models, init, spec_b, names, carrier=models[0])
        for name in names:
            np.testing.assert_allclose(out_a[name], out_b[name], atol=1e-7)

    def test_merges_are_pure(self, rng):
        models, init = _three_tensor_models(rng)
        for spec in (
            MergeSpec("soup", (0.4, 0.6)),
            MergeSpec("ties", (0.4, 0.6), ties_k=40.0),
            MergeSpec("dare", (0.4, 0.6), dare_p=0.8, seed=9),
            MergeSpec("slerp", (0.4, 0.6), slerp_t=0.25),
        ):
            first = apply_merge(models, init, spec)
            second = apply_merge(models, init, spec)
            assert first == second


class TestOracleEquivalence:
    """Randomized comparison against the straight-line reference loops."""

    def test_small_instances_match_reference(self, rng):
        for trial in range(40):
            n_models = int(rng.integers(1, 4))
            n_tensors = int(rng.integers(1, 4))
            names = [f"t{i}" for i in range(n_tensors)]
            template = random_tensor_map(rng, names=names)
            models = [
                TensorMap({n: rng.standard_normal(template[n].shape)
                           .astype(np.float32) for n in names})
                for _ in range(n_models)
            ]
            init = TensorMap({n: rng.standard_normal(template[n].shape)
                              .astype(np.float32) for n in names})
            raw = rng.dirichlet(np.ones(n_models))
            weights = tuple(float(w) for w in raw)
            flat_models = [map_to_flat_lists(m) for m in models]
            flat_init = map_to_flat_lists(init)

            got = soup_merge(models, weights, names)
            expected = ref_soup(flat_models, weights)
            for name in names:
                np.testing.assert_allclose(got[name].ravel(), expected[name],
                                           atol=1e-6)

            k = float(rng.uniform(10, 100))
            lam = float(rng.uniform(0.2, 1.5))
            spec = MergeSpec("ties", weights, ties_k=k, lam=lam)
            got = ties_merge(models, init, spec, names)
            expected = ref_ties(flat_models, flat_init, weights, k, lam)
            for name in names:
                np.testing.assert_allclose(got[name].ravel(), expected[name],
                                           atol=1e-6)

            spec = MergeSpec("dare", weights, dare_p=0.0, lam=lam)
            got = dare_merge(models, init, spec, names)
            expected = ref_dare_p0(flat_models, flat_init, weights, lam)
            for name in names:
                np.testing.assert_allclose(got[name].ravel(), expected[name],
                                           atol=1e-6)

            if n_models >= 2:
                t = float(rng.uniform(0, 1))
                spec = MergeSpec("slerp", (0.5, 0.5), slerp_t=t)
                got = slerp_merge(models[0], models[1], spec, names)
                expected = ref_slerp(flat_models[0], flat_models[1], t,
                                     spec.collinear_eps)
                for name in names:
                    np.testing.assert_allclose(got[name].ravel(), expected[name],
                                               atol=1e-6)
