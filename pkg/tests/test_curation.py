import io
import json
import math
import random
from itertools import product

import pytest

from advforge.attacks import AttackCandidate
from advforge.curation import (
    ACCEPT_THRESHOLD,
    ANNOTATION_GUIDELINES,
    AnnotationSession,
    CurationResources,
    FilterCriterion,
    accept_decision,
    apply_filter,
    assemble_benchmark,
    compute_metrics,
    load_benchmark,
    open_session,
    save_benchmark,
    simulate_annotators,
    submit_score,
    write_rejection_report,
)
from advforge.textcore import EmbeddingTable, VisualSimilarityTable


def make_candidate(
    index=0,
    status="success",
    original="ཀ་ཁ་ག",
    adversarial="ང་ཁ་ག",
    substitutions=((0, "ཀ", "ང"),),
    metrics=None,
    dataset="toy",
):
    from advforge.textcore import levenshtein

    distance = levenshtein(original, adversarial)
    return AttackCandidate(
        id=f"{dataset}:stub:{index:05d}:aa{index:02d}",
        dataset=dataset,
        attack="stub",
        original_text=original,
        adversarial_text=adversarial,
        gold_label="A",
        orig_pred="A",
        adv_pred="B" if status == "success" else "A",
        status=status,
        substituted_positions=[tuple(s) for s in substitutions],
        query_count=5,
        edit_distance=distance,
        metrics=(
            {"edit_ratio": distance / len(original) if original else 0.0}
            if metrics is None
            else metrics
        ),
    )


class TestAcceptDecision:
    def test_exhaustive_triples_match_min_rule(self):
        for scores in product(range(1, 6), repeat=3):
            expected = "accepted" if min(scores) >= ACCEPT_THRESHOLD else "rejected"
            assert accept_decision(list(scores), 3) == expected

    def test_unanimity_beats_majority(self):
        # two of three approve; unanimity still rejects
        assert accept_decision([5, 5, 2], 3) == "rejected"

    def test_short_circuit_rejects_on_first_low_score(self):
        assert accept_decision([2], 3) == "rejected"
        assert accept_decision([4, 1], 3) == "rejected"

    def test_incomplete_high_scores_stay_pending(self):
        assert accept_decision([], 3) == "pending"
        assert accept_decision([4], 3) == "pending"
        assert accept_decision([5, 4], 3) == "pending"

    def test_exactly_redundancy_high_scores_accept(self):
        assert accept_decision([4, 4, 4], 3) == "accepted"
        assert accept_decision([5, 5, 5, 4], 4) == "accepted"

    def test_too_many_scores_rejected(self):
        with pytest.raises(ValueError, match="more scores than redundancy"):
            accept_decision([4, 4, 4, 4], 3)

    def test_score_range_validated(self):
        with pytest.raises(ValueError):
            accept_decision([0], 3)
        with pytest.raises(ValueError):
            accept_decision([6], 3)
        with pytest.raises(ValueError):
            accept_decision([4.5], 3)

    def test_guidelines_cover_every_score(self):
        assert sorted(ANNOTATION_GUIDELINES) == [1, 2, 3, 4, 5]
        assert all(isinstance(v, str) and v for v in ANNOTATION_GUIDELINES.values())


class TestComputeMetrics:
    def resources(self):
        table = EmbeddingTable({"ཀ": [1.0, 0.0], "ང": [0.9, 0.1], "ཁ": [0.0, 1.0]})
        visual = VisualSimilarityTable({"ཀ": [("ང", 0.8)]})
        return CurationResources(embedding_table=table, visual_table=visual)

    def test_edit_ratio_matches_hand_computation(self):
        cand = compute_metrics(make_candidate(), self.resources())
        assert cand.metrics["edit_ratio"] == pytest.approx(1 / 5)
        assert cand.edit_distance == 1

    def test_embedding_cosine_is_mean_over_substituted_pairs(self):
        cand = compute_metrics(make_candidate(), self.resources())
        expected = 0.9 / math.sqrt(0.81 + 0.01)
        assert cand.metrics["embedding_cosine"] == pytest.approx(expected, abs=1e-12)

    def test_visual_score_counts_unchanged_positions_as_one(self):
        cand = compute_metrics(make_candidate(), self.resources())
        assert cand.metrics["visual_score"] == pytest.approx((0.8 + 1.0 + 1.0) / 3)

    def test_uncovered_embedding_pair_leaves_metric_out(self):
        resources = CurationResources(
            embedding_table=EmbeddingTable({"ཀ": [1.0, 0.0]}),
            visual_table=self.resources().visual_table,
        )
        cand = compute_metrics(make_candidate(), resources)
        assert "embedding_cosine" not in cand.metrics
        assert "visual_score" in cand.metrics

    def test_uncovered_visual_pair_leaves_metric_out(self):
        resources = CurationResources(
            embedding_table=self.resources().embedding_table,
            visual_table=VisualSimilarityTable({"ཁ": [("ག", 0.5)]}),
        )
        cand = compute_metrics(make_candidate(), resources)
        assert "visual_score" not in cand.metrics
        assert "embedding_cosine" in cand.metrics

    def test_no_tables_gives_edit_ratio_only(self):
        cand = compute_metrics(make_candidate(), CurationResources())
        assert set(cand.metrics) == {"edit_ratio"}

    def test_non_success_rejected(self):
        with pytest.raises(ValueError, match="successful candidates only"):
            compute_metrics(make_candidate(status="failure"), CurationResources())

    def test_zero_length_original_rejected(self):
        cand = make_candidate(original="", adversarial="", substitutions=())
        with pytest.raises(ValueError, match="zero-length"):
            compute_metrics(cand, CurationResources())

    def test_recomputation_is_stable(self):
        once = compute_metrics(make_candidate(), self.resources())
        twice = compute_metrics(once, self.resources())
        assert once.metrics == twice.metrics


class TestApplyFilter:
    def test_default_keeps_ratio_at_threshold(self):
        # one substituted character in a ten-character text: ratio exactly 0.1
        original = "ཀཁགངཅཆཇཉཏཐ"
        adversarial = "ཀཁགངཅཆཇཉཏཕ"
        cand = make_candidate(
            original=original,
            adversarial=adversarial,
            substitutions=((0, original, adversarial),),
        )
        cand = compute_metrics(cand, CurationResources())
        assert cand.metrics["edit_ratio"] == 0.1
        result = apply_filter([cand])
        assert result.kept == [cand]

    def test_ratio_just_above_threshold_drops(self):
        cand = make_candidate(metrics={"edit_ratio": 0.1 + 1e-9})
        result = apply_filter([cand])
        assert result.kept == []
        assert result.dropped[0][1] == "failed:edit_ratio<=0.1"

    def test_non_success_always_dropped(self):
        cand = make_candidate(status="skipped", metrics={"edit_ratio": 0.0})
        result = apply_filter([cand])
        assert result.dropped[0][1] == "not_success"

    def test_missing_metric_dropped_with_reason(self):
        cand = make_candidate(metrics={"edit_ratio": 0.05})
        criteria = [FilterCriterion("visual_score", ">=", 0.5)]
        result = apply_filter([cand], criteria)
        assert result.dropped[0][1] == "metric_unavailable:visual_score"

    def test_ge_threshold_is_inclusive(self):
        cand = make_candidate(metrics={"edit_ratio": 0.05, "embedding_cosine": 0.9})
        criteria = [FilterCriterion("embedding_cosine", ">=", 0.9)]
        assert apply_filter([cand], criteria).kept == [cand]

    def test_conjunction_short_circuits_in_order(self):
        cand = make_candidate(metrics={"edit_ratio": 0.5, "visual_score": 0.1})
        criteria = [
            FilterCriterion("edit_ratio", "<=", 0.1),
            FilterCriterion("visual_score", ">=", 0.9),
        ]
        assert apply_filter([cand], criteria).dropped[0][1] == "failed:edit_ratio<=0.1"

    def test_partition_is_exact_and_ordered(self):
        cands = [
            make_candidate(index=i, metrics={"edit_ratio": 0.05 if i % 2 else 0.5})
            for i in range(6)
        ]
        result = apply_filter(cands)
        assert [c.id for c in result.kept] == [c.id for c in cands if c.metrics["edit_ratio"] <= 0.1]
        assert [c.id for c, _ in result.dropped] == [
            c.id for c in cands if c.metrics["edit_ratio"] > 0.1
        ]
        assert len(result.kept) + len(result.dropped) == len(cands)

    def test_bad_op_rejected(self):
        with pytest.raises(ValueError, match="unsupported filter op"):
            FilterCriterion("edit_ratio", "<", 0.1)

    def test_rejection_report_lines(self):
        cand = make_candidate(status="failure")
        buf = io.StringIO()
        write_rejection_report([(cand, "not_success")], buf)
        assert json.loads(buf.getvalue()) == {"id": cand.id, "reason": "not_success"}


def sample_candidates(n, ratios=None):
    cands = []
    for i in range(n):
        ratio = 0.05 if ratios is None else ratios[i]
        cands.append(make_candidate(index=i, metrics={"edit_ratio": ratio}))
    return cands


class TestOpenSession:
    def test_each_candidate_gets_redundancy_distinct_annotators(self):
        session = open_session(sample_candidates(7), ["a", "b", "c", "d"], seed=3)
        per_candidate = {}
        for annotator, queue in session.assignments.items():
            for cid in queue:
                per_candidate.setdefault(cid, set()).add(annotator)
        assert all(len(v) == 3 for v in per_candidate.values())
        assert set(per_candidate) == set(session.candidates)

    def test_load_spread_at_most_one(self):
        rng = random.Random(11)
        for _ in range(30):
            n_annot = rng.randint(3, 6)
            annotators = [f"a{i}" for i in range(n_annot)]
            session = open_session(
                sample_candidates(rng.randint(1, 40)), annotators, seed=rng.randint(0, 99)
            )
            loads = [len(q) for q in session.assignments.values()]
            assert max(loads) - min(loads) <= 1

    def test_same_seed_reproduces_assignment(self):
        a = open_session(sample_candidates(9), ["a", "b", "c", "d"], seed=5)
        b = open_session(sample_candidates(9), ["a", "b", "c", "d"], seed=5)
        assert a.assignments == b.assignments
        assert a.id == b.id

    def test_queue_is_permutation_of_assigned(self):
        session = open_session(sample_candidates(8), ["a", "b", "c"], seed=2)
        for queue in session.assignments.values():
            assert len(queue) == len(set(queue))

    def test_too_few_annotators_rejected(self):
        with pytest.raises(ValueError, match="at least 3 annotators"):
            open_session(sample_candidates(2), ["a", "b"])

    def test_duplicate_annotators_rejected(self):
        with pytest.raises(ValueError, match="distinct"):
            open_session(sample_candidates(2), ["a", "a", "b"])

    def test_empty_candidates_rejected(self):
        with pytest.raises(ValueError, match="no candidates"):
            open_session([], ["a", "b", "c"])

    def test_non_success_candidates_rejected(self):
        with pytest.raises(ValueError, match="not a success"):
            open_session([make_candidate(status="failure")], ["a", "b", "c"])


class TestScoringFlow:
    def session(self, n=2, annotators=("a", "b", "c")):
        return open_session(sample_candidates(n), list(annotators), seed=1)

    def test_submit_until_accepted(self):
        session = self.session(n=1)
        cid = next(iter(session.candidates))
        assert submit_score(session, "a", cid, 5) == "pending"
        assert submit_score(session, "b", cid, 4) == "pending"
        assert submit_score(session, "c", cid, 4) == "accepted"
        assert session.is_complete

    def test_low_score_rejects_and_clears_queues(self):
        session = self.session(n=1)
        cid = next(iter(session.candidates))
        assert submit_score(session, "a", cid, 2) == "rejected"
        for annotator in ("a", "b", "c"):
            assert session.next_for(annotator) is None
        assert session.is_complete

    def test_next_for_skips_scored_and_decided(self):
        session = self.session(n=2)
        first = session.next_for("a")
        submit_score(session, "a", first, 4)
        following = session.next_for("a")
        assert following is not None and following != first

    def test_double_score_rejected(self):
        session = self.session(n=1)
        cid = next(iter(session.candidates))
        submit_score(session, "a", cid, 4)
        with pytest.raises(ValueError, match="already scored"):
            submit_score(session, "a", cid, 5)

    def test_unknown_annotator_and_candidate(self):
        session = self.session(n=1)
        cid = next(iter(session.candidates))
        with pytest.raises(ValueError, match="unknown annotator"):
            submit_score(session, "zz", cid, 4)
        with pytest.raises(ValueError, match="unknown candidate"):
            submit_score(session, "a", "nope", 4)
        with pytest.raises(ValueError, match="unknown annotator"):
            session.next_for("zz")

    def test_unassigned_candidate_rejected(self):
        session = open_session(sample_candidates(2), ["a", "b", "c", "d"], seed=0)
        per_candidate = {
            cid: [a for a, q in session.assignments.items() if cid in q]
            for cid in session.candidates
        }
        cid, assigned = next(iter(per_candidate.items()))
        outsider = next(a for a in session.annotators if a not in assigned)
        with pytest.raises(ValueError, match="not assigned"):
            submit_score(session, outsider, cid, 4)

    def test_score_validation(self):
        session = self.session(n=1)
        cid = next(iter(session.candidates))
        for bad in (0, 6, 4.5, True):
            with pytest.raises(ValueError):
                submit_score(session, "a", cid, bad)

    def test_progress_counts(self):
        session = self.session(n=2)
        assert session.progress() == {
            "accepted": 0,
            "rejected": 0,
            "pending": 2,
            "scores_submitted": 0,
        }
        cid = session.next_for("a")
        submit_score(session, "a", cid, 1)
        progress = session.progress()
        assert progress["rejected"] == 1
        assert progress["scores_submitted"] == 1

    def test_session_round_trips_through_dict(self):
        session = self.session(n=3)
        cid = session.next_for("a")
        submit_score(session, "a", cid, 2)
        cid2 = session.next_for("b")
        submit_score(session, "b", cid2, 5)
        clone = AnnotationSession.from_dict(json.loads(json.dumps(session.to_dict())))
        assert clone.assignments == session.assignments
        assert clone.scores == session.scores
        assert {cid: clone.decision(cid) for cid in clone.candidates} == {
            cid: session.decision(cid) for cid in session.candidates
        }


class TestSimulateAnnotators:
    def test_thresholds_without_jitter(self):
        cands = sample_candidates(3, ratios=[0.02, 0.08, 0.2])
        session = open_session(cands, ["a", "b", "c"], seed=4)
        simulate_annotators(session, seed=4, jitter_p=0.0)
        decisions = {cid: session.decision(cid) for cid in session.candidates}
        assert decisions[cands[0].id] == "accepted"
        assert decisions[cands[1].id] == "accepted"
        assert decisions[cands[2].id] == "rejected"
        assert session.ordered_scores(cands[0].id) == [5, 5, 5]
        assert session.ordered_scores(cands[1].id) == [4, 4, 4]
        # rejection short-circuits after a single low score
        assert session.ordered_scores(cands[2].id) == [2]

    def test_jitter_is_reproducible(self):
        outcomes = []
        for _ in range(2):
            session = open_session(sample_candidates(20), ["a", "b", "c"], seed=9)
            simulate_annotators(session, seed=9, jitter_p=0.5)
            outcomes.append(
                {cid: session.ordered_scores(cid) for cid in session.candidates}
            )
        assert outcomes[0] == outcomes[1]

    def test_completes_every_candidate(self):
        session = open_session(sample_candidates(15), ["a", "b", "c", "d"], seed=2)
        simulate_annotators(session, seed=2)
        assert session.is_complete


class TestAssembleBenchmark:
    def complete_session(self):
        cands = sample_candidates(4, ratios=[0.02, 0.2, 0.08, 0.3])
        session = open_session(cands, ["a", "b", "c"], seed=7)
        simulate_annotators(session, seed=7, jitter_p=0.0)
        return cands, session

    def test_pending_session_rejected(self):
        session = open_session(sample_candidates(2), ["a", "b", "c"], seed=1)
        with pytest.raises(ValueError, match="annotation incomplete: 2"):
            assemble_benchmark(session, "bench")

    def test_accepted_candidates_with_scores(self):
        cands, session = self.complete_session()
        bench = assemble_benchmark(session, "bench", {"run": "r1"})
        ids = [entry.candidate.id for entry in bench.entries]
        assert ids == [cands[0].id, cands[2].id]
        assert all(len(e.scores) == 3 and min(e.scores) >= 4 for e in bench.entries)
        assert bench.provenance == {"run": "r1"}

    def test_zero_accepted_reports_histogram(self):
        cands = sample_candidates(3, ratios=[0.2, 0.3, 0.4])
        session = open_session(cands, ["a", "b", "c"], seed=1)
        simulate_annotators(session, seed=1, jitter_p=0.0)
        with pytest.raises(ValueError, match=r"min-score histogram: 2:3"):
            assemble_benchmark(session, "bench")

    def test_subsets_group_by_source_dataset(self):
        a = make_candidate(index=0, dataset="news", metrics={"edit_ratio": 0.02})
        b = make_candidate(index=1, dataset="forum", metrics={"edit_ratio": 0.02})
        c = make_candidate(index=2, dataset="news", metrics={"edit_ratio": 0.02})
        session = open_session([a, b, c], ["x", "y", "z"], seed=0)
        simulate_annotators(session, seed=0, jitter_p=0.0)
        bench = assemble_benchmark(session, "bench")
        subsets = bench.subsets()
        assert sorted(subsets) == ["forum", "news"]
        assert [e.candidate.id for e in subsets["news"]] == [a.id, c.id]

    def test_save_load_round_trip(self):
        _, session = self.complete_session()
        bench = assemble_benchmark(session, "bench", {"seed": 7})
        buf = io.StringIO()
        save_benchmark(bench, buf)
        buf.seek(0)
        loaded = load_benchmark(buf)
        assert loaded.name == bench.name
        assert loaded.provenance == bench.provenance
        assert [e.candidate for e in loaded.entries] == [e.candidate for e in bench.entries]
        assert [e.scores for e in loaded.entries] == [e.scores for e in bench.entries]

    def test_header_line_shape(self):
        _, session = self.complete_session()
        bench = assemble_benchmark(session, "bench")
        buf = io.StringIO()
        save_benchmark(bench, buf)
        first = json.loads(buf.getvalue().splitlines()[0])
        assert first == {"benchmark": "bench", "provenance": {}}

    def test_missing_header_rejected(self):
        with pytest.raises(ValueError, match="missing benchmark header"):
            load_benchmark(io.StringIO('{"id": "x"}\n'))
        with pytest.raises(ValueError, match="empty benchmark"):
            load_benchmark(io.StringIO(""))
