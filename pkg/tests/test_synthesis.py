from __future__ import annotations

import collections

import numpy as np
import pytest

from conftest import (
    DISEASE_POOL,
    make_corpus,
    make_post,
    synthetic_pristine_corpus,
    synthetic_suite,
)
from vtcheck.events import LexiconEventTagger, Span, tokenize
from vtcheck.synthesis import (
    CONTRADICTION,
    FakeClaimResult,
    InsufficientFakesError,
    ManipulationCandidate,
    MeanPoolVideoEmbedder,
    NLIJudgment,
    StubMaskedLM,
    StubNLIScorer,
    build_balanced_dataset,
    build_vocab,
    cosine,
    dedup_alternatives,
    default_stub_suite,
    extract_entities,
    fill_missing_speech,
    filter_vocab,
    generate_fake_claim,
    generate_fake_speech,
    generate_fake_video,
    propose_substitutions,
    rank_by_contradiction,
    select_evidence_sentences,
)

CLAIM_1 = "Officials are scrambling to contain outbreaks of the coronavirus outside of China."
FAKE_1 = "Officials are scrambling to contain the spread of ebola outside of China."
CLAIM_3 = "Fed chair powell warns omicron variant could dent economic recovery."
FAKE_3 = "Fed chair powell warns omicron variant could facilitate economic recovery."

TABLE_VOCAB = frozenset(
    "the spread of ebola facilitate hurt slow outbreaks virus wave infections "
    "getting infected lost home".split()
)


def claim_span(claim: str, phrase: str) -> Span:
    tokens = [t.lower().strip(".,!") for t in tokenize(claim)]
    words = phrase.split()
    for start in range(len(tokens) - len(words) + 1):
        if tokens[start : start + len(words)] == words:
            return Span(start, start + len(words))
    raise AssertionError(f"{phrase!r} not in {claim!r}")


# ---------------------------------------------------------------------------
# substitution proposal and filtering


def test_propose_returns_stub_list_minus_original():
    masker = StubMaskedLM({"dent": ("facilitate", "dent", "hurt")})
    span = claim_span(CLAIM_3, "dent")
    candidates = propose_substitutions(CLAIM_3, span, "trigger", masker)
    assert [c.substitution for c in candidates] == ["facilitate", "hurt"]
    for cand in candidates:
        assert cand.candidate_claim != CLAIM_3
        # exact single-span replacement
        original_tokens = tokenize(CLAIM_3)
        new_tokens = tokenize(cand.candidate_claim)
        assert new_tokens[: span.start] == original_tokens[: span.start]
        assert new_tokens[span.start + 1 :] == original_tokens[span.end :]


def test_propose_k_one_truncates():
    masker = StubMaskedLM({"dent": ("facilitate", "hurt")})
    span = claim_span(CLAIM_3, "dent")
    assert len(propose_substitutions(CLAIM_3, span, "trigger", masker, k=1)) == 1


def test_propose_masker_failure_reports_empty():
    class Broken:
        def propose(self, tokens, span, k):
            raise TimeoutError("remote masker gone")

    report = []
    out = propose_substitutions(CLAIM_3, claim_span(CLAIM_3, "dent"), "trigger",
                                Broken(), report=report)
    assert out == []
    assert report and report[0]["reason"] == "masker failure"


def test_filter_vocab_keeps_in_vocab_substitution():
    masker = StubMaskedLM({"outbreaks of the coronavirus": ("the spread of ebola",)})
    span = claim_span(CLAIM_1, "outbreaks of the coronavirus")
    candidates = propose_substitutions(CLAIM_1, span, "argument", masker)
    kept = filter_vocab(candidates, frozenset({"the", "spread", "of", "ebola"}))
    assert [c.substitution for c in kept] == ["the spread of ebola"]


def test_filter_vocab_drops_out_of_vocab():
    cand = ManipulationCandidate(CLAIM_3, claim_span(CLAIM_3, "dent"), "trigger",
                                 "zyzzogeton", "x")
    assert filter_vocab([cand], frozenset({"facilitate"})) == []
    assert filter_vocab([], frozenset()) == []


# ---------------------------------------------------------------------------
# contradiction ranking


class TableNLI:
    def __init__(self, table):
        self.table = table

    def score(self, premise, hypothesis):
        return self.table.get(hypothesis, NLIJudgment("neutral", 0.0))


def make_candidates(*subs):
    span = claim_span(CLAIM_3, "dent")
    return [
        ManipulationCandidate(CLAIM_3, span, "trigger", s, f"claim with {s}")
        for s in subs
    ]


def test_rank_label_then_score():
    nli = TableNLI({
        "claim with a": NLIJudgment(CONTRADICTION, 0.9),
        "claim with b": NLIJudgment(CONTRADICTION, 0.7),
        "claim with c": NLIJudgment("neutral", 0.95),
    })
    best = rank_by_contradiction(CLAIM_3, make_candidates("a", "b", "c"), nli)
    assert best.substitution == "a"
    assert best.contradiction_score == 0.9


def test_rank_all_neutral_gives_none():
    nli = TableNLI({})
    assert rank_by_contradiction(CLAIM_3, make_candidates("a", "b"), nli) is None


def test_rank_tie_breaks_lexicographically():
    nli = TableNLI({
        "claim with zeta": NLIJudgment(CONTRADICTION, 0.8),
        "claim with alpha": NLIJudgment(CONTRADICTION, 0.8),
    })
    best = rank_by_contradiction(CLAIM_3, make_candidates("zeta", "alpha"), nli)
    assert best.substitution == "alpha"


def test_stub_nli_antonym_and_entity_heuristics():
    nli = StubNLIScorer(pairs={}, antonyms=(("dent", "facilitate"),),
                        entities=("coronavirus", "ebola"))
    antonym = nli.score("it could dent recovery", "it could facilitate recovery")
    assert antonym.label == CONTRADICTION
    swap = nli.score("fear the coronavirus wave", "fear the ebola wave")
    assert swap.label == CONTRADICTION
    same = nli.score("all the same words", "all the same words")
    assert same.label != CONTRADICTION


# ---------------------------------------------------------------------------
# whole-claim generation (reported manipulation examples)


def test_generate_fake_claim_argument_manipulation():
    suite = default_stub_suite()
    post = make_post("t1", CLAIM_1)
    result = generate_fake_claim(post, suite.tagger, suite.masker, suite.nli, TABLE_VOCAB)
    assert result is not None
    assert result.kind == "argument"
    assert result.best().candidate_claim == FAKE_1
    assert result.best().substitution == "the spread of ebola"


def test_generate_fake_claim_trigger_manipulation():
    suite = default_stub_suite()
    post = make_post("t3", CLAIM_3)
    result = generate_fake_claim(post, suite.tagger, suite.masker, suite.nli, TABLE_VOCAB)
    assert result is not None
    assert result.kind == "trigger"
    assert result.best().candidate_claim == FAKE_3


def test_generate_fake_claim_no_events_is_none():
    suite = default_stub_suite()
    post = make_post("t0", "So proud of my boys!")
    report = []
    assert generate_fake_claim(post, suite.tagger, suite.masker, suite.nli,
                               TABLE_VOCAB, report=report) is None
    assert report[0]["reason"] == "no event structure"


# ---------------------------------------------------------------------------
# one-per-alternative dedup


def result_with(source_id, *subs, original=CLAIM_3):
    span = claim_span(CLAIM_3, "dent")
    ranked = tuple(
        ManipulationCandidate(original, span, "trigger", s, f"claim {s}",
                              CONTRADICTION, 0.9 - 0.01 * i)
        for i, s in enumerate(subs)
    )
    return FakeClaimResult(source_id, original, span, "trigger", ranked)


def test_dedup_regenerates_from_next_best():
    results = [result_with("a", "ebola", "cholera"), result_with("b", "ebola", "typhus")]
    emissions = dedup_alternatives(results)
    assert [(e.source_id, e.candidate.substitution) for e in emissions] == [
        ("a", "ebola"), ("b", "typhus"),
    ]


def test_dedup_identity_when_distinct():
    results = [result_with("a", "ebola"), result_with("b", "cholera")]
    emissions = dedup_alternatives(results)
    assert [e.candidate.substitution for e in emissions] == ["ebola", "cholera"]


def test_dedup_multiplicities_all_one():
    # synthetic batch with heavy overlap; oracle counts the multiset
    results = [
        result_with(f"s{i}", *("shared", f"unique{i}", f"backup{i}"))
        for i in range(12)
    ]
    emissions = dedup_alternatives(results)
    counts = collections.Counter(e.candidate.substitution for e in emissions)
    assert all(v == 1 for v in counts.values())
    assert len(emissions) == 12


def test_dedup_exhausted_candidates_skip_and_report():
    report = []
    results = [result_with("a", "only"), result_with("b", "only")]
    emissions = dedup_alternatives(results, report=report)
    assert len(emissions) == 1
    assert report[0]["post_id"] == "b"


def test_dedup_replacement_path():
    b_claim = "Fed chair powell warns omicron variant could dent economic recovery soon."
    corpus = make_corpus([
        make_post("a", CLAIM_3),
        make_post("b", b_claim),
        make_post("c", "Completely unrelated gardening tips."),
    ])
    suite = synthetic_suite()
    results = [result_with("a", "only"), result_with("b", "only", original=b_claim)]
    emissions = dedup_alternatives(results, corpus=corpus, embedder=suite.sentence_embedder,
                                   allow_claim_replacement=True)
    assert len(emissions) == 2
    replaced = emissions[1]
    assert replaced.method == "claim_replacement"
    # nearest-claim oracle: the other claim sharing nearly all tokens wins
    assert replaced.fake_claim == CLAIM_3


# ---------------------------------------------------------------------------
# speech manipulation


def test_single_sentence_is_the_evidence():
    suite = synthetic_suite()
    assert select_evidence_sentences("x", ["only sentence"], suite.sentence_embedder) == (0,)


def test_evidence_selection_matches_brute_force():
    suite = synthetic_suite()
    claim = "Officials contain malady007 outside of region9."
    sentences = [
        "Weather remains calm today.",
        "Experts say officials contain malady007 near region9.",
        "Totally unrelated chatter about sports.",
        "Officials contain malady007.",
    ]
    emb = suite.sentence_embedder
    target = emb.embed(claim)
    sims = [cosine(target, emb.embed(s)) for s in sentences]
    expected = max(range(len(sentences)), key=lambda i: (sims[i], -i))
    assert select_evidence_sentences(claim, sentences, emb) == (expected,)


def test_generate_fake_speech_changes_only_evidence():
    suite = synthetic_suite()
    corpus = synthetic_pristine_corpus(6)
    post = corpus.posts[2]
    vocab = build_vocab(corpus)
    result = generate_fake_speech(post, suite.sentence_embedder, suite.tagger,
                                  suite.masker, suite.nli, vocab)
    assert result is not None
    assert result.evidence_indices == (0,)
    assert result.new_speech[0] != post.speech_sentences[0]
    assert result.new_speech[1:] == post.speech_sentences[1:]
    assert suite.nli.score(post.speech_sentences[0], result.new_speech[0]).label == CONTRADICTION


def test_generate_fake_speech_evidence_equal_to_claim():
    suite = synthetic_suite()
    claim = "Officials contain malady001 outside of region1."
    post = make_post("p", claim, speech=(claim, "Unrelated filler sentence."))
    vocab = frozenset(build_vocab(synthetic_pristine_corpus(6)) | {"outside", "officials"})
    result = generate_fake_speech(post, suite.sentence_embedder, suite.tagger,
                                  suite.masker, suite.nli, vocab)
    assert result is not None
    assert result.evidence_indices == (0,)
    assert result.new_speech[1] == "Unrelated filler sentence."


def test_generate_fake_speech_unmanipulable_reports():
    suite = synthetic_suite()
    post = make_post("p", "Officials contain malady001.", speech=("no events here at all",))
    report = []
    assert generate_fake_speech(post, suite.sentence_embedder, suite.tagger, suite.masker,
                                suite.nli, frozenset(), report=report) is None
    assert report[-1]["reason"] == "no manipulable evidence sentence"


def test_generate_fake_speech_requires_speech():
    suite = synthetic_suite()
    with pytest.raises(ValueError):
        generate_fake_speech(make_post("p", "Officials contain malady001."),
                             suite.sentence_embedder, suite.tagger, suite.masker,
                             suite.nli, frozenset())


# ---------------------------------------------------------------------------
# adversarial video matching


def test_fake_video_matches_brute_force():
    corpus = synthetic_pristine_corpus(12)
    embedder = MeanPoolVideoEmbedder()
    for post in corpus:
        result = generate_fake_video(post, corpus, embedder)
        target = embedder.embed(post)
        sims = {
            other.post_id: cosine(target, embedder.embed(other))
            for other in corpus if other.post_id != post.post_id
        }
        expected = min(sims, key=lambda pid: (-sims[pid], pid))
        assert result.matched_id == expected
        assert result.matched_id != post.post_id


def test_fake_video_tie_breaks_lowest_id():
    shared = make_post("z", "Officials contain it.").frames
    posts = [
        make_post("a", "Officials contain it."),
        make_post("b", "Doctors stop it."),
        make_post("c", "Nurses help here."),
    ]
    posts[1] = posts[1].__class__(**{**posts[1].__dict__, "frames": shared})
    posts[2] = posts[2].__class__(**{**posts[2].__dict__, "frames": shared})
    corpus = make_corpus(posts)
    result = generate_fake_video(posts[0], corpus, MeanPoolVideoEmbedder())
    assert result.matched_id == "b"


def test_fake_video_needs_two_videos():
    corpus = make_corpus([make_post("a", "Officials contain it.")])
    with pytest.raises(ValueError):
        generate_fake_video(corpus.posts[0], corpus, MeanPoolVideoEmbedder())


# ---------------------------------------------------------------------------
# missing speech fill


def test_fill_missing_speech_shared_entity():
    tagger = LexiconEventTagger(triggers=("contain",), arguments=("moderna", "pfizer"))
    donor = make_post("donor", "Officials contain pfizer doses.",
                      speech=("The moderna shipment arrived.",))
    other = make_post("other", "Nothing related here.",
                      speech=("Totally unrelated sentence.",))
    target = make_post("target", "Officials contain moderna supplies.")
    corpus = make_corpus([donor, other, target])
    result = fill_missing_speech(target, corpus, tagger)
    assert result is not None
    assert result.donor_id == "donor"
    assert "moderna" in result.shared_entities


def test_fill_missing_speech_no_overlap_skips():
    tagger = LexiconEventTagger(triggers=("contain",), arguments=("moderna",))
    donor = make_post("donor", "claim contain moderna", speech=("words without entities",))
    target = make_post("target", "Officials contain moderna.")
    report = []
    corpus = make_corpus([donor, target])
    assert fill_missing_speech(target, corpus, tagger, report=report) is None
    assert report[0]["reason"] == "no speech shares an entity"


def test_fill_missing_speech_matches_overlap_oracle():
    corpus = synthetic_pristine_corpus(15)
    suite = synthetic_suite()
    target = make_post("zz-empty", "Officials contain malady004 outside of region4.")
    extended = make_corpus(list(corpus.posts) + [target])
    result = fill_missing_speech(target, extended, suite.tagger)
    assert result is not None
    claim_ents = extract_entities(target.claim, suite.tagger)
    overlaps = {}
    for donor in extended:
        if donor.post_id == "zz-empty" or not donor.speech_sentences:
            continue
        donor_ents = set()
        for s in donor.speech_sentences:
            donor_ents |= extract_entities(s, suite.tagger)
        n = len(claim_ents & donor_ents)
        if n:
            overlaps[donor.post_id] = n
    expected = min(overlaps, key=lambda pid: (-overlaps[pid], pid))
    assert result.donor_id == expected


# ---------------------------------------------------------------------------
# balanced dataset assembly


def token_diff_spans(a: str, b: str) -> int:
    # oracle: number of contiguous differing token spans between two texts
    ta, tb = tokenize(a), tokenize(b)
    i = 0
    while i < min(len(ta), len(tb)) and ta[i] == tb[i]:
        i += 1
    j = 0
    while j < min(len(ta), len(tb)) - i and ta[len(ta) - 1 - j] == tb[len(tb) - 1 - j]:
        j += 1
    if i == len(ta) == len(tb) and j == 0:
        return 0
    return 1 if (len(ta) - i - j >= 0 and len(tb) - i - j >= 0) else 2


def test_build_balanced_dataset_quotas_and_balance():
    corpus = synthetic_pristine_corpus(30)
    suite = synthetic_suite()
    combined, report = build_balanced_dataset(corpus, suite, (1, 1, 1), seed=3)
    fakes = [p for p in combined if p.taxonomy != "pristine"]
    assert len(fakes) == 30
    labels = collections.Counter(p.label for p in combined)
    assert labels["consistent"] == labels["inconsistent"] == 30
    by_tax = collections.Counter(p.taxonomy for p in fakes)
    assert by_tax["fake_claim"] == 10
    assert by_tax["fake_speech"] + by_tax["filled_speech"] == 10
    assert by_tax["fake_video"] == 10
    assert len(report.provenance) == 30


def test_build_quota_largest_remainder_example():
    from vtcheck.synthesis import largest_remainder_counts

    assert largest_remainder_counts([1, 1, 1], 100) == [34, 33, 33]
    assert largest_remainder_counts([1, 1, 1], 6) == [2, 2, 2]


def test_build_deterministic_under_seed(tmp_path):
    from vtcheck.corpus import serialize

    corpus = synthetic_pristine_corpus(18)
    suite = synthetic_suite()
    a, _ = build_balanced_dataset(corpus, suite, (1, 1, 1), seed=9)
    b, _ = build_balanced_dataset(corpus, suite, (1, 1, 1), seed=9)
    pa, pb = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    serialize(a, pa)
    serialize(b, pb)
    assert pa.read_bytes() == pb.read_bytes()


def test_build_single_span_edit_invariant():
    corpus = synthetic_pristine_corpus(24)
    suite = synthetic_suite()
    combined, report = build_balanced_dataset(corpus, suite, (1, 1, 1), seed=0)
    sources = {p.post_id: p for p in corpus}
    for fake in combined:
        if fake.taxonomy != "fake_claim":
            continue
        src = sources[fake.post_id.split("::")[0]]
        assert token_diff_spans(src.claim, fake.claim) == 1
        assert suite.nli.score(src.claim, fake.claim).label == CONTRADICTION


def test_build_video_swap_purity():
    corpus = synthetic_pristine_corpus(24)
    suite = synthetic_suite()
    combined, _ = build_balanced_dataset(corpus, suite, (1, 1, 1), seed=0)
    sources = {p.post_id: p for p in corpus}
    for fake in combined:
        if fake.taxonomy != "fake_video":
            continue
        src = sources[fake.post_id.split("::")[0]]
        assert fake.claim == src.claim
        assert fake.speech_sentences == src.speech_sentences
        assert fake.screen_text_sentences == src.screen_text_sentences
        assert fake.video_link != src.video_link
        assert fake.frames != src.frames


def test_build_insufficient_fakes_errors_with_shortfall():
    # only 1 pristine post: video matching is impossible
    corpus = synthetic_pristine_corpus(1)
    suite = synthetic_suite()
    with pytest.raises(InsufficientFakesError) as exc:
        build_balanced_dataset(corpus, suite, (0, 0, 1), seed=0)
    assert exc.value.shortfall["fake_video"] == 1
