import json
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmquality.dataset_io import (
    ContentItem,
    CorpusError,
    load_corpus,
    save_corpus,
    split,
    truncate_images,
)

from conftest import make_item


def write_lines(path, header, records):
    with open(path, "w") as fh:
        fh.write(json.dumps(header) + "\n")
        for r in records:
            fh.write((r if isinstance(r, str) else json.dumps(r)) + "\n")


def record(item_id, d_text=2, images=((0.0, 0.0, 0.0),), **kw):
    rec = {
        "id": item_id,
        "text_embedding": [0.5] * d_text,
        "image_embeddings": [list(v) for v in images],
        "likes": 1,
        "retweets": 2,
        "comments": 3,
        "human_score": None,
    }
    rec.update(kw)
    return rec


HEADER = {"format_version": 1, "d_text": 2, "d_image": 3, "item_count": 0}


def test_empty_corpus(tmp_path):
    write_lines(tmp_path / "c.jsonl", HEADER, [])
    header, items = load_corpus(tmp_path / "c.jsonl")
    assert header.item_count == 0 and items == []


def test_five_records(tmp_path):
    recs = [record(f"i{k}", human_score=k / 4) for k in range(5)]
    write_lines(tmp_path / "c.jsonl", {**HEADER, "item_count": 5}, recs)
    header, items = load_corpus(tmp_path / "c.jsonl")
    assert header.item_count == 5 and len(items) == 5
    assert [it.id for it in items] == [f"i{k}" for k in range(5)]
    assert items[4].human_score == 1.0
    assert items[0].likes == 1 and items[0].comments == 3


def test_image_dimension_error_names_item(tmp_path):
    bad = record("bad-one", images=((1, 2, 3), (1, 2, 3), (1, 2)))
    write_lines(tmp_path / "c.jsonl", {**HEADER, "item_count": 1}, [bad])
    with pytest.raises(CorpusError, match="bad-one"):
        load_corpus(tmp_path / "c.jsonl")


def test_malformed_json_reports_line(tmp_path):
    write_lines(tmp_path / "c.jsonl", {**HEADER, "item_count": 2}, [record("a"), "{not json"])
    with pytest.raises(CorpusError, match="line 3"):
        load_corpus(tmp_path / "c.jsonl")


def test_duplicate_id(tmp_path):
    write_lines(tmp_path / "c.jsonl", {**HEADER, "item_count": 2}, [record("a"), record("a")])
    with pytest.raises(CorpusError, match="duplicate"):
        load_corpus(tmp_path / "c.jsonl")


@pytest.mark.parametrize(
    "patch",
    [
        {"id": ""},
        {"likes": -1},
        {"retweets": 1.5},
        {"human_score": 1.5},
        {"text_embedding": [0.5]},
        {"text_embedding": [0.5, float("nan")]},
    ],
)
def test_invalid_records_reject_file(tmp_path, patch):
    write_lines(tmp_path / "c.jsonl", {**HEADER, "item_count": 1}, [record("x", **patch)])
    with pytest.raises(CorpusError):
        load_corpus(tmp_path / "c.jsonl")


def test_item_count_mismatch(tmp_path):
    write_lines(tmp_path / "c.jsonl", {**HEADER, "item_count": 3}, [record("a")])
    with pytest.raises(CorpusError, match="item_count"):
        load_corpus(tmp_path / "c.jsonl")


def test_zero_image_items_are_legal(tmp_path):
    write_lines(tmp_path / "c.jsonl", {**HEADER, "item_count": 1}, [record("t", images=())])
    _, items = load_corpus(tmp_path / "c.jsonl")
    assert items[0].image_embeddings == ()


def test_save_load_round_trip(tmp_path, small_items):
    save_corpus(tmp_path / "c.jsonl", small_items, 6, 4)
    header, loaded = load_corpus(tmp_path / "c.jsonl")
    assert header.item_count == len(small_items)
    assert loaded == small_items
    for a, b in zip(loaded, small_items):
        assert a.text_embedding.tobytes() == b.text_embedding.tobytes()


def test_header_field_names_are_exact(tmp_path):
    save_corpus(tmp_path / "c.jsonl", [make_item("a", d_text=2, d_image=3)], 2, 3)
    lines = (tmp_path / "c.jsonl").read_text().splitlines()
    assert json.loads(lines[0]) == {"format_version": 1, "d_text": 2, "d_image": 3, "item_count": 1}
    assert set(json.loads(lines[1])) == {
        "id", "text_embedding", "image_embeddings", "likes", "retweets", "comments", "human_score"
    }


# ---------------------------------------------------------------------------
# truncate


def test_truncate_cases():
    two = make_item("a", n_images=2)
    assert truncate_images(two, 4) is two
    six = make_item("b", n_images=6)
    kept = truncate_images(six, 4)
    assert len(kept.image_embeddings) == 4
    for k in range(4):
        np.testing.assert_array_equal(kept.image_embeddings[k], six.image_embeddings[k])
    zero = make_item("c", n_images=0)
    assert truncate_images(zero, 4).image_embeddings == ()


@given(st.integers(0, 8), st.integers(1, 6))
def test_truncate_idempotent(n, m):
    item = make_item("x", n_images=n)
    once = truncate_images(item, m)
    assert truncate_images(once, m) == once
    assert len(once.image_embeddings) == min(n, m)


# ---------------------------------------------------------------------------
# split


def test_split_all_train():
    ids = [f"id{k}" for k in range(200)]
    sa = split(ids, (1.0, 0.0, 0.0), seed=1)
    assert set(sa.assignment.values()) == {"train"}


def test_split_permutation_invariant():
    ids = [f"id{k}" for k in range(500)]
    shuffled = ids[:]
    random.Random(0).shuffle(shuffled)
    assert split(ids, seed=4).assignment == split(shuffled, seed=4).assignment


def test_split_stable_under_append():
    ids = [f"id{k}" for k in range(300)]
    before = split(ids, seed=9).assignment
    after = split(ids + [f"new{k}" for k in range(50)], seed=9).assignment
    assert all(after[k] == v for k, v in before.items())


def test_split_proportions_10k():
    sa = split([f"synthetic-{k}" for k in range(10_000)], (0.8, 0.1, 0.1), seed=7)
    frac = {b: c / 10_000 for b, c in sa.counts.items()}
    assert abs(frac["train"] - 0.8) <= 0.02
    assert abs(frac["val"] - 0.1) <= 0.02
    assert abs(frac["test"] - 0.1) <= 0.02


def test_split_depends_on_seed():
    ids = [f"id{k}" for k in range(200)]
    assert split(ids, seed=1).assignment != split(ids, seed=2).assignment


@pytest.mark.parametrize("ratios", [(0.5, 0.5, 0.5), (1.2, -0.1, -0.1), (0.8, 0.2)])
def test_split_bad_ratios(ratios):
    with pytest.raises(ValueError):
        split(["a"], ratios)


@settings(max_examples=50)
@given(st.lists(st.text(min_size=1, max_size=8), min_size=1, max_size=40, unique=True), st.integers(0, 99))
def test_split_is_total_and_disjoint(ids, seed):
    sa = split(ids, seed=seed)
    assert set(sa.assignment) == set(ids)
    assert sum(sa.counts.values()) == len(ids)
