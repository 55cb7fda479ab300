import itertools
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from emofuse.consensus import (
    ConsensusConfig,
    DuplicateAnnotation,
    EmptyVotes,
    MissingConsensus,
    augmentation_report,
    augmented_labels,
    evaluator_scores,
    majority_consensus,
    recompute_consensus,
)
from emofuse.core import CLASSES, AnnotationRecord, EmotionLabel, X, parse_label

from oracles import brute_majority, naive_recompute

A, C, H, N, S = (parse_label(c) for c in "ACHNS")


def L(codes):
    return [parse_label(c) for c in codes]


def ann(rows):
    return [AnnotationRecord(s, a, parse_label(v)) for s, a, v in rows]


class TestMajority:
    def test_strict_majority(self):
        assert majority_consensus(L("AAN")) is A

    def test_neutral_tie_dropped(self):
        assert majority_consensus(L("AN")) is A

    def test_neutral_tie_kept_when_disabled(self):
        assert majority_consensus(L("AN"), neutral_drop_tie=False) is X

    def test_non_neutral_tie(self):
        assert majority_consensus(L("AS")) is X

    def test_three_way_tie_with_neutral(self):
        assert majority_consensus(L("ASN")) is X

    def test_neutral_majority(self):
        assert majority_consensus(L("NNA")) is EmotionLabel.NEUTRAL

    def test_empty(self):
        with pytest.raises(EmptyVotes):
            majority_consensus([])

    def test_x_vote_rejected(self):
        with pytest.raises(ValueError):
            majority_consensus([A, X])

    def test_exhaustive_against_oracle(self):
        for size in range(1, 6):
            for votes in itertools.product("ASHN", repeat=size):
                for drop in (True, False):
                    got = majority_consensus(L(votes), drop).value
                    assert got == brute_majority(list(votes), drop), votes

    @given(st.lists(st.sampled_from(CLASSES), min_size=1, max_size=9), st.randoms())
    def test_permutation_invariant(self, votes, rnd):
        shuffled = list(votes)
        rnd.shuffle(shuffled)
        assert majority_consensus(votes) is majority_consensus(shuffled)


class TestScores:
    def test_ratio(self):
        consensus = {"s1": A, "s2": A, "s3": H, "s4": N}
        rows = ann([("s1", "a", "A"), ("s2", "a", "A"), ("s3", "a", "H"), ("s4", "a", "S")])
        assert evaluator_scores(rows, consensus) == {"a": 0.75}

    def test_all_match(self):
        assert evaluator_scores(ann([("s1", "a", "A")]), {"s1": A}) == {"a": 1.0}

    def test_only_x_samples(self):
        assert evaluator_scores(ann([("s1", "a", "A"), ("s2", "a", "S")]), {"s1": X, "s2": X}) == {"a": 1.0}

    def test_x_samples_excluded_from_denominator(self):
        rows = ann([("s1", "a", "A"), ("s2", "a", "S")])
        assert evaluator_scores(rows, {"s1": A, "s2": X}) == {"a": 1.0}

    def test_missing_consensus(self):
        with pytest.raises(MissingConsensus):
            evaluator_scores(ann([("s9", "a", "A")]), {"s1": A})


class TestRecompute:
    def test_threshold_zero_is_plain_majority(self):
        rows = ann([("s1", "a", "A"), ("s1", "b", "N"), ("s2", "a", "S"), ("s2", "b", "S")])
        res = recompute_consensus(rows, {"s1": X, "s2": A}, ConsensusConfig(0.0))
        assert [(r.sample_id, r.label, r.source) for r in res] == [
            ("s1", A, "recomputed"),
            ("s2", S, "recomputed"),
        ]

    def test_bad_annotator_discarded(self):
        original = {"s1": A, "s2": H, "s3": S}
        rows = ann(
            [("s1", "good", "A"), ("s2", "good", "H"), ("s3", "good", "S")]
            + [("s1", "bad", "C"), ("s2", "bad", "C"), ("s3", "bad", "C")]
        )
        assert evaluator_scores(rows, original) == {"bad": 0.0, "good": 1.0}
        res = recompute_consensus(rows, original, ConsensusConfig(0.5))
        for r in res:
            assert sum(r.vote_histogram.values()) == 1
            assert r.label is original[r.sample_id]
            assert r.source == "original"

    def test_sample_without_surviving_votes_is_x(self):
        rows = ann([("s1", "a", "A"), ("s2", "b", "H"), ("s3", "b", "S")])
        res = recompute_consensus(rows, {"s1": A, "s2": A, "s3": A}, ConsensusConfig(0.5))
        by_id = {r.sample_id: r for r in res}
        assert by_id["s2"].label is X and by_id["s2"].vote_histogram == {}
        assert by_id["s2"].source == "recomputed"

    def test_duplicate_rejected(self):
        with pytest.raises(DuplicateAnnotation):
            recompute_consensus(ann([("s1", "a", "A"), ("s1", "a", "H")]), {"s1": A})

    def test_four_sample_fixture_against_oracle(self):
        rows = [
            ("s1", "a1", "A"), ("s1", "a2", "A"), ("s1", "a3", "N"),
            ("s2", "a1", "H"), ("s2", "a2", "S"), ("s2", "a4", "N"),
            ("s3", "a2", "N"), ("s3", "a3", "A"), ("s3", "a4", "A"),
            ("s4", "a1", "S"), ("s4", "a3", "S"), ("s4", "a4", "H"),
        ]
        original = {"s1": "A", "s2": "X", "s3": "A", "s4": "S"}
        for threshold in (0.0, 0.25, 0.5, 0.6, 0.75, 1.0):
            expected = naive_recompute(rows, original, threshold)
            got = recompute_consensus(ann(rows), {k: parse_label(v) for k, v in original.items()},
                                      ConsensusConfig(threshold))
            assert {r.sample_id: (r.label.value, r.source) for r in got} == expected, threshold

    def test_augmented_labels_only_adds_former_x(self):
        original = {"s1": X, "s2": A, "s3": X}
        rows = ann([("s1", "a", "H"), ("s2", "a", "S"), ("s3", "a", "C"), ("s3", "b", "S")])
        res = recompute_consensus(rows, original, ConsensusConfig(0.0))
        assert augmented_labels(original, res) == {"s1": EmotionLabel.HAPPINESS, "s2": A}


@st.composite
def tables(draw):
    n_samples = draw(st.integers(1, 6))
    n_ann = draw(st.integers(1, 4))
    rows = []
    for s in range(n_samples):
        voters = draw(st.lists(st.integers(0, n_ann - 1), unique=True, min_size=1, max_size=n_ann))
        for a in voters:
            rows.append((f"s{s}", f"a{a}", draw(st.sampled_from("ACHNS"))))
    original = {f"s{s}": draw(st.sampled_from("ACHNSX")) for s in range(n_samples)}
    return rows, original


class TestProperties:
    @settings(max_examples=150, deadline=None)
    @given(tables(), st.floats(0, 1), st.floats(0, 1))
    def test_monotone_filtering(self, table, t1, t2):
        rows, original = table
        lo, hi = sorted((t1, t2))
        orig = {k: parse_label(v) for k, v in original.items()}
        res_lo = recompute_consensus(ann(rows), orig, ConsensusConfig(lo))
        res_hi = recompute_consensus(ann(rows), orig, ConsensusConfig(hi))
        for a, b in zip(res_lo, res_hi):
            assert sum(b.vote_histogram.values()) <= sum(a.vote_histogram.values())

    @settings(max_examples=150, deadline=None)
    @given(tables())
    def test_threshold_zero_equals_majority(self, table):
        rows, original = table
        orig = {k: parse_label(v) for k, v in original.items()}
        res = recompute_consensus(ann(rows), orig, ConsensusConfig(0.0))
        for r in res:
            votes = [parse_label(v) for s, _, v in rows if s == r.sample_id]
            assert r.label is majority_consensus(votes)

    @settings(max_examples=150, deadline=None)
    @given(tables(), st.floats(0, 1))
    def test_non_x_labels_have_support(self, table, threshold):
        rows, original = table
        orig = {k: parse_label(v) for k, v in original.items()}
        for r in recompute_consensus(ann(rows), orig, ConsensusConfig(threshold)):
            if r.label is not X:
                assert r.vote_histogram.get(r.label, 0) >= 1


class TestReport:
    def _counts(self, values):
        return dict(zip(CLASSES, values))

    def test_identity_delta_zero(self):
        c = self._counts([5, 4, 3, 2, 1, 6, 7, 8])
        text = augmentation_report(c, c)
        body = [line for line in text.splitlines()[2:] if not line.startswith("=")]
        assert all(line.rstrip().endswith("+0") for line in body)

    def test_table_layout(self):
        # class counts from the challenge training set, before/after augmentation
        before = {"N": 25106, "H": 13440, "S": 3882, "A": 3053, "U": 2897, "C": 2443, "D": 1426, "F": 1139}
        after = {"N": 25106, "H": 13440, "S": 6067, "A": 4753, "U": 4328, "C": 2897, "D": 2352, "F": 1681}
        text = augmentation_report(before, after)
        lines = text.splitlines()
        assert [line.split("|")[0].strip() for line in lines[2:10]] == list("NHSAUCDF")
        total = lines[-1].split("|")
        assert [t.strip() for t in total] == ["Total", "53386", "60624", "+7238"]

    def test_synthetic_total(self):
        before = {c: 0 for c in CLASSES}
        after = dict(before)
        before[A], after[A] = 1, 2
        assert [t.strip() for t in augmentation_report(before, after).splitlines()[-1].split("|")] == [
            "Total", "1", "2", "+1"]

    def test_requires_all_classes(self):
        with pytest.raises(ValueError):
            augmentation_report({A: 1}, {A: 1})


def test_random_tables_against_oracle():
    rnd = random.Random(7)
    for _ in range(200):
        n_samples, n_ann = rnd.randint(1, 10), rnd.randint(1, 6)
        rows = []
        for s in range(n_samples):
            for a in rnd.sample(range(n_ann), rnd.randint(1, n_ann)):
                rows.append((f"s{s}", f"a{a}", rnd.choice("ACDFHNSU")))
        original = {f"s{s}": rnd.choice("ACDFHNSUX") for s in range(n_samples)}
        threshold = rnd.choice([0.0, 0.2, 0.5, 0.75, 1.0, rnd.random()])
        drop = rnd.random() < 0.8
        expected = naive_recompute(rows, original, threshold, drop)
        got = recompute_consensus(ann(rows), {k: parse_label(v) for k, v in original.items()},
                                  ConsensusConfig(threshold, drop))
        assert {r.sample_id: (r.label.value, r.source) for r in got} == expected
