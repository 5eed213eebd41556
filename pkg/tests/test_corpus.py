import copy

import numpy as np
import pytest

from services.actions import ACTION_TYPES, Stop
from services.corpus_service import (
    INCONSISTENT_TRANSITION,
    INVALID_ACTION,
    MISSING_OBSERVATION,
    RawCorpus,
    action_type_histogram,
    clean_corpus,
    collect_corpus,
    load_clean_corpus,
    make_transition,
    merge_corpora,
    read_corpus,
    split_corpus,
    to_raw,
    write_corpus,
)
from services.web_env import InvalidSize, WebEnvironment
from services.world_model import TERMINAL_SCRIPT


class TestCollectCorpus:
    def test_collects_exactly_n(self, corpus):
        assert len(corpus.transitions) == 120
        assert corpus.provenance == "collected:seed=0"

    def test_is_reproducible(self, tasks, corpus):
        again = collect_corpus(WebEnvironment(), tasks, 120, seed=0)
        assert again.transitions == corpus.transitions

    def test_stop_transitions_are_terminal(self, corpus):
        for transition in corpus.transitions:
            assert transition.terminal == isinstance(transition.action, Stop)
            assert transition.delta.terminal == transition.terminal

    def test_follows_witnesses_without_exploration(self, tasks):
        env = WebEnvironment()
        collected = collect_corpus(env, tasks, 10, seed=1, explore_prob=0.0)
        first = collected.transitions[0]
        assert any(first.action == witness[0] for task in tasks for witness in task.witnesses)
        assert env.step_count == 10

    @pytest.mark.parametrize("n", [0, -1])
    def test_rejects_empty_requests(self, tasks, n):
        with pytest.raises(InvalidSize):
            collect_corpus(WebEnvironment(), tasks, n, seed=0)

    def test_needs_tasks(self):
        with pytest.raises(InvalidSize):
            collect_corpus(WebEnvironment(), [], 5, seed=0)


def test_make_transition_for_stop(small_tree):
    transition = make_transition(small_tree, Stop(""), small_tree)
    assert transition.delta == TERMINAL_SCRIPT
    assert transition.terminal


def test_histogram_covers_every_action_type(corpus):
    histogram = action_type_histogram(corpus)
    assert list(histogram) == [action_type.value for action_type in ACTION_TYPES]
    assert sum(histogram.values()) == len(corpus.transitions)


# ---------------------------------------------------------------------------
# Cleaning
# ---------------------------------------------------------------------------


class TestCleanCorpus:
    def test_collected_records_survive(self, corpus):
        report = clean_corpus(to_raw(corpus))
        assert report.dropped == 0
        assert report.corpus.transitions == corpus.transitions

    def test_counts_drops_by_reason(self, corpus):
        records = [copy.deepcopy(record) for record in to_raw(corpus).records[:6]]
        del records[0]["obs"]
        records[1]["action"] = {"type": "fly"}
        records[2]["action"] = {"type": "click", "id": 999_999}
        records[3]["next_obs"] = "url: http://elsewhere.local\nroot [1] ''"
        records[4]["terminal"] = not records[4]["terminal"]
        raw = RawCorpus("instructions", "test", tuple(records) + (None,))

        report = clean_corpus(raw)

        assert report.drop_counts == {
            MISSING_OBSERVATION: 2,
            INVALID_ACTION: 2,
            INCONSISTENT_TRANSITION: 2,
        }
        assert report.corpus.transitions == (corpus.transitions[5],)

    def test_removes_exactly_the_corrupted_records(self, corpus):
        records = [copy.deepcopy(record) for record in to_raw(corpus).records]
        corrupted = sorted(int(i) for i in np.random.default_rng(4).choice(len(records), size=12, replace=False))
        for position, index in enumerate(corrupted):
            record = records[index]
            kind = position % 4
            if kind == 0:
                del record["obs"]
            elif kind == 1:
                record["action"] = {"type": "click", "id": 999_999}
            elif kind == 2:
                record["next_obs"] = "url: http://elsewhere.local\nroot [1] ''"
            else:
                record["terminal"] = not record["terminal"]

        report = clean_corpus(RawCorpus("instructions", "test", tuple(records)))

        expected = tuple(t for index, t in enumerate(corpus.transitions) if index not in set(corrupted))
        assert report.corpus.transitions == expected
        assert report.dropped == 12
        assert report.drop_counts[MISSING_OBSERVATION] == 3

    def test_canonicalises_deltas(self, corpus):
        transition = next(t for t in corpus.transitions if len(t.delta) and not t.terminal)
        record = transition.to_json()
        record["delta"] = record["delta"] + [{"op": "SetFocus", "id": None}] + [
            {"op": "SetFocus", "id": transition.next_obs.focused_id}
        ]
        report = clean_corpus(RawCorpus("", "test", (record,)))
        assert report.corpus.transitions[0].delta == transition.delta


# ---------------------------------------------------------------------------
# Files and splits
# ---------------------------------------------------------------------------


class TestCorpusFiles:
    def test_round_trip(self, corpus, tmp_path):
        path = tmp_path / "corpus.jsonl"
        write_corpus(corpus, path)
        report = load_clean_corpus(path)
        assert report.dropped == 0
        assert report.corpus.transitions == corpus.transitions
        assert report.corpus.provenance == corpus.provenance

    def test_header_line(self, corpus, tmp_path):
        path = tmp_path / "corpus.jsonl"
        write_corpus(corpus, path)
        assert path.read_text(encoding="utf-8").splitlines()[0].startswith('{"count": 120, "header": true')

    def test_undecodable_lines_become_drops(self, corpus, tmp_path):
        path = tmp_path / "corpus.jsonl"
        write_corpus(corpus, path)
        with path.open("a", encoding="utf-8") as handle:
            handle.write("{broken\n")
        raw = read_corpus(path)
        assert raw.records[-1] is None
        assert clean_corpus(raw).drop_counts[MISSING_OBSERVATION] == 1


def test_split_keeps_order_and_sizes(corpus):
    train, heldout = split_corpus(corpus, 0.25, seed=3)
    assert len(heldout.transitions) == 30
    assert len(train.transitions) == 90
    positions = {id(t): index for index, t in enumerate(corpus.transitions)}
    assert [positions[id(t)] for t in heldout.transitions] == sorted(positions[id(t)] for t in heldout.transitions)
    assert split_corpus(corpus, 0.25, seed=3)[1].transitions == heldout.transitions


def test_merge_concatenates(corpus):
    train, heldout = split_corpus(corpus, 0.5, seed=0)
    merged = merge_corpora([train, heldout])
    assert len(merged.transitions) == len(corpus.transitions)
    assert merged.provenance == "merged"
