"""Grouping rules and merge-type parameter selection."""

from __future__ import annotations

import pytest

from guardmerge.errors import EmptySelection
from guardmerge.param_groups import (
    DEFAULT_RULES,
    GROUP_LABELS,
    GroupRules,
    MergeType,
    classify,
    select_params,
)

TRANSFORMER_NAMES = [
    "embeddings.word_embeddings.weight",
    "encoder.layer.0.attention.self.query.weight",
    "encoder.layer.0.attention.output.dense.weight",
    "encoder.layer.0.intermediate.dense.weight",
    "encoder.layer.0.output.dense.bias",
    "classifier.weight",
    "classifier.bias",
]


class TestClassify:
    def test_attention_by_substring(self):
        assert classify("encoder.layer.3.attention.self.query.weight") == "attention"

    def test_classifier(self):
        assert classify("classifier.weight") == "classifier"

    def test_embedding(self):
        assert classify("embeddings.word_embeddings.weight") == "embedding"

    def test_default_label(self):
        assert classify("encoder.layer.0.output.dense.bias") == "other"

    def test_first_match_wins(self):
        rules = GroupRules(patterns=(("ffn", "dense"), ("attention", "attention")))
        assert classify("attention.dense.weight", rules) == "ffn"

    def test_anchored_glob_pattern(self):
        rules = GroupRules(patterns=(("classifier", "head.*"),))
        assert classify("head.weight", rules) == "classifier"
        assert classify("lm_head.weight", rules) == "other"  # anchored, no match

    def test_partition_property(self):
        labels = {name: classify(name) for name in TRANSFORMER_NAMES}
        assert set(labels.values()) <= set(GROUP_LABELS)
        # every name resolves to exactly one label by construction
        assert len(labels) == len(TRANSFORMER_NAMES)


class TestGroupRulesValidation:
    def test_rejects_unknown_label(self):
        with pytest.raises(ValueError):
            GroupRules(patterns=(("bogus", "x"),))

    def test_rejects_empty_patterns(self):
        with pytest.raises(ValueError):
            GroupRules(patterns=())


class TestSelectParams:
    def test_full_is_identity(self):
        assert select_params(TRANSFORMER_NAMES, MergeType.FULL) == set(TRANSFORMER_NAMES)

    def test_base_excludes_classifier(self):
        names = {"attn.q", "ffn.w", "classifier.weight"}
        assert select_params(names, "base") == {"attn.q", "ffn.w"}

    def test_ffn_selection(self):
        names = {"ffn.w1", "ffn.w2", "attn.k"}
        assert select_params(names, MergeType.FFN) == {"ffn.w1", "ffn.w2"}

    def test_attention_selection(self):
        selected = select_params(TRANSFORMER_NAMES, MergeType.ATTENTION)
        assert selected == {
            "encoder.layer.0.attention.self.query.weight",
            "encoder.layer.0.attention.output.dense.weight",
        }

    def test_monotone_full_superset(self):
        full = select_params(TRANSFORMER_NAMES, MergeType.FULL)
        for tau in MergeType:
            assert select_params(TRANSFORMER_NAMES, tau) <= full

    def test_base_plus_classifier_equals_full(self):
        base = select_params(TRANSFORMER_NAMES, MergeType.BASE)
        classifier = {n for n in TRANSFORMER_NAMES if classify(n) == "classifier"}
        assert base | classifier == set(TRANSFORMER_NAMES)

    def test_empty_selection_raises(self):
        with pytest.raises(EmptySelection):
            select_params({"linear.weight"}, MergeType.ATTENTION)

    def test_unknown_tau_rejected(self):
        with pytest.raises(ValueError):
            select_params(TRANSFORMER_NAMES, "everything")
