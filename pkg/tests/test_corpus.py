from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import make_corpus, make_post
from vtcheck.corpus import (
    CorpusTooSmallError,
    DuplicatePostIdError,
    Rejection,
    dedup_by_video,
    filter_verifiable,
    ingest,
    serialize,
    split,
)
from vtcheck.events import LexiconEventTagger

VERIFIABLE = "Officials are scrambling to contain outbreaks of the coronavirus outside of China."
UNVERIFIABLE = "So proud of my boys! #GetVaccinated"


def record_line(post_id: str, **overrides) -> str:
    record = {
        "post_id": post_id,
        "video_link": f"https://video/{post_id}",
        "claim": "Officials contain the virus.",
        "speech": ["People fight the virus."],
        "screen_text": [],
        "frames": [[[0.5, -1.0], [2.0, 0.25]]],
        "label": "consistent",
        "taxonomy": "pristine",
        "verified": True,
        "video_length_s": 12.0,
    }
    record.update(overrides)
    return json.dumps(record)


HEADER = json.dumps({"format": "vtcorpus/1", "n_patches": 2, "d_v": 2})


def write_corpus_file(tmp_path, lines, name="corpus.jsonl"):
    path = tmp_path / name
    path.write_text("\n".join([HEADER, *lines]) + "\n", encoding="utf-8")
    return path


def test_ingest_three_valid_lines(tmp_path):
    path = write_corpus_file(tmp_path, [record_line(f"p{i}") for i in range(3)])
    corpus = ingest(path)
    assert len(corpus) == 3
    assert corpus.ids() == ("p0", "p1", "p2")


def test_ingest_reports_missing_claim(tmp_path):
    bad = json.loads(record_line("p2"))
    del bad["claim"]
    path = write_corpus_file(tmp_path, [record_line("p0"), record_line("p1"), json.dumps(bad)])
    report: list[Rejection] = []
    corpus = ingest(path, report=report)
    assert len(corpus) == 2
    assert len(report) == 1
    assert report[0].line == 4
    assert "claim" in report[0].reason


def test_ingest_empty_file(tmp_path):
    path = tmp_path / "empty.jsonl"
    path.write_text("", encoding="utf-8")
    corpus = ingest(path)
    assert len(corpus) == 0


def test_ingest_duplicate_id_is_hard_error(tmp_path):
    path = write_corpus_file(tmp_path, [record_line("p0"), record_line("p0")])
    with pytest.raises(DuplicatePostIdError):
        ingest(path)


def test_ingest_missing_file():
    with pytest.raises(FileNotFoundError):
        ingest("/nonexistent/corpus.jsonl")


def test_ingest_rejects_frameless_record(tmp_path):
    path = write_corpus_file(tmp_path, [record_line("p0", frames=[])])
    report: list[Rejection] = []
    corpus = ingest(path, report=report)
    assert len(corpus) == 0
    assert "frames" in report[0].reason


def test_ingest_drop_unverified(tmp_path):
    path = write_corpus_file(tmp_path, [record_line("p0"), record_line("p1", verified=False)])
    report: list[Rejection] = []
    corpus = ingest(path, drop_unverified=True, report=report)
    assert corpus.ids() == ("p0",)
    assert report[0].reason == "unverified account"


def test_ingest_label_taxonomy_coherence(tmp_path):
    path = write_corpus_file(tmp_path, [record_line("p0", label="inconsistent")])
    report: list[Rejection] = []
    corpus = ingest(path, report=report)
    assert len(corpus) == 0 and "taxonomy" in report[0].reason


def test_round_trip_identity(tmp_path):
    posts = [
        make_post("a", VERIFIABLE, speech=("People fight the virus.", "Second line."),
                  screen=("on screen",)),
        make_post("b", "Doctors stop the outbreak.", label="inconsistent",
                  taxonomy="fake_claim"),
    ]
    corpus = make_corpus(posts)
    path = tmp_path / "rt.jsonl"
    serialize(corpus, path)
    loaded = ingest(path)
    assert loaded == corpus


def test_sidecar_reference_ingest(tmp_path):
    from vtcheck.encoders import write_sidecar

    frames = np.arange(2 * 2 * 2, dtype=np.float32).reshape(2, 2, 2)
    write_sidecar(tmp_path / "feat.bin", 2, 2, {"vidkey": frames})
    header = json.dumps({"format": "vtcorpus/1", "n_patches": 2, "d_v": 2,
                         "sidecar": "feat.bin"})
    line = record_line("p0")
    record = json.loads(line)
    del record["frames"]
    record["frames_ref"] = "vidkey"
    path = tmp_path / "c.jsonl"
    path.write_text(header + "\n" + json.dumps(record) + "\n", encoding="utf-8")
    corpus = ingest(path)
    assert len(corpus) == 1
    assert corpus.posts[0].frames[0].patches.shape == (2, 2)
    assert np.allclose(corpus.posts[0].frames[1].patches, frames[1])


def test_dedup_keeps_one_per_link():
    posts = [
        make_post("a", "Officials contain it.", video_link="L1"),
        make_post("b", "Officials contain it again.", video_link="L1"),
        make_post("c", "Doctors stop it.", video_link="L2"),
    ]
    corpus = dedup_by_video(make_corpus(posts))
    assert corpus.ids() == ("a", "c")


def test_dedup_keep_rule_lowest_id():
    posts = [
        make_post("b", "Officials contain it.", video_link="L1"),
        make_post("a", "Officials contain it again.", video_link="L1"),
    ]
    assert dedup_by_video(make_corpus(posts)).ids() == ("a",)


def test_dedup_identity_when_distinct():
    posts = [make_post("a", "x contain y"), make_post("b", "x stop y")]
    corpus = make_corpus(posts)
    assert dedup_by_video(corpus) == corpus


def test_dedup_output_links_distinct():
    posts = [make_post(f"p{i}", "contain it", video_link=f"L{i % 3}") for i in range(9)]
    links = [p.video_link for p in dedup_by_video(make_corpus(posts))]
    assert len(links) == len(set(links)) == 3


def test_filter_verifiable_keeps_and_removes():
    tagger = LexiconEventTagger()
    posts = [make_post("keep", VERIFIABLE), make_post("drop", UNVERIFIABLE)]
    report: list[Rejection] = []
    corpus = filter_verifiable(make_corpus(posts), tagger, report=report)
    assert corpus.ids() == ("keep",)
    assert report[0].post_id == "drop"
    assert report[0].reason == "no event structure"


def test_filter_verifiable_empty_corpus():
    assert len(filter_verifiable(make_corpus([]), LexiconEventTagger())) == 0


def test_filter_verifiable_flags_tagger_failures():
    class Flaky:
        def tag(self, text):
            raise OSError("socket closed")

    report: list[Rejection] = []
    corpus = filter_verifiable(make_corpus([make_post("p", VERIFIABLE)]), Flaky(),
                               report=report)
    assert len(corpus) == 0
    assert "tagger failure" in report[0].reason


def test_filter_verifiable_idempotent():
    tagger = LexiconEventTagger()
    posts = [make_post("a", VERIFIABLE), make_post("b", UNVERIFIABLE),
             make_post("c", "Doctors stop the spread.")]
    once = filter_verifiable(make_corpus(posts), tagger)
    twice = filter_verifiable(once, tagger)
    assert once == twice


def balanced_corpus(n: int):
    posts = []
    for i in range(n):
        label = "consistent" if i % 2 == 0 else "inconsistent"
        taxonomy = "pristine" if label == "consistent" else "fake_claim"
        posts.append(make_post(f"p{i:03d}", f"claim number {i} contain x",
                               label=label, taxonomy=taxonomy))
    return make_corpus(posts)


def test_split_100_records():
    corpus = balanced_corpus(100)
    result = split(corpus, seed=0)
    assert result.sizes() == (80, 10, 10)


def test_split_deterministic():
    corpus = balanced_corpus(40)
    assert split(corpus, 7) == split(corpus, 7)
    assert split(corpus, 7) != split(corpus, 8)


def test_split_too_small():
    with pytest.raises(CorpusTooSmallError):
        split(balanced_corpus(8), 0)


def test_split_ten_balanced_records_stay_balanced():
    # enumerate seeds and check every part stays within +-2 of 50/50
    corpus = balanced_corpus(10)
    labels = {p.post_id: p.label for p in corpus}
    for seed in range(20):
        result = split(corpus, seed)
        for part in (result.train, result.val, result.test):
            n_cons = sum(1 for pid in part if labels[pid] == "consistent")
            n_inc = len(part) - n_cons
            assert abs(n_cons - n_inc) <= 2


@settings(max_examples=25, deadline=None)
@given(n=st.integers(min_value=10, max_value=60), seed=st.integers(0, 1000))
def test_split_is_partition(n, seed):
    corpus = balanced_corpus(n)
    result = split(corpus, seed)
    train, val, test = set(result.train), set(result.val), set(result.test)
    assert train | val | test == set(corpus.ids())
    assert not (train & val) and not (train & test) and not (val & test)
    assert abs(len(val) - n * 0.1) <= 1
    assert abs(len(test) - n * 0.1) <= 1
    assert abs(len(train) - n * 0.8) <= 1
