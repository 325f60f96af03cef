"""Automatic generation of inconsistent video-post records.

Three manipulation routes (claim span edits, evidence-sentence edits in
speech, adversarial video swaps) plus a missing-speech fill-in, with the
quality and bias controls: vocabulary filtering, contradiction gating,
one-fake-per-alternative dedup, and exact label balancing.

The pretrained components (masked LM, NLI cross-encoder, sentence and video
embedders) sit behind small protocols with deterministic stubs, so the whole
pipeline runs and is testable without model weights.
"""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass, replace
from hashlib import blake2b
from typing import Mapping, Protocol, Sequence

import numpy as np

from .corpus import (
    LABEL_INCONSISTENT,
    Corpus,
    VideoPost,
)
from .encoders import seeded_unit_vector
from .events import (
    EventStructure,
    EventTagger,
    LexiconEventTagger,
    Span,
    detokenize,
    normalize_token,
    tag_events,
    tokenize,
)

logger = logging.getLogger(__name__)

CONTRADICTION = "contradiction"
NEUTRAL = "neutral"
ENTAILMENT = "entailment"


class InsufficientFakesError(RuntimeError):
    def __init__(self, shortfall: dict[str, int]) -> None:
        self.shortfall = shortfall
        detail = ", ".join(f"{k}: short by {v}" for k, v in shortfall.items() if v)
        super().__init__(f"could not generate enough fakes ({detail})")


# --------------------------------------------------------------------------
# pluggable components and their deterministic stubs


class MaskedLM(Protocol):
    def propose(self, tokens: Sequence[str], span: Span, k: int) -> Sequence[str]: ...


@dataclass(frozen=True)
class NLIJudgment:
    label: str
    contradiction_score: float


class NLIScorer(Protocol):
    def score(self, premise: str, hypothesis: str) -> NLIJudgment: ...


class SentenceEmbedder(Protocol):
    def embed(self, text: str) -> np.ndarray: ...


class VideoEmbedder(Protocol):
    def embed(self, post: VideoPost) -> np.ndarray: ...


def _norm_phrase(text: str) -> str:
    return " ".join(normalize_token(t) for t in tokenize(text))


def _normalize_span(text: str) -> tuple[str, ...]:
    return tuple(normalize_token(t) for t in tokenize(text))


class StubMaskedLM:
    """Fixed substitution lists keyed by the masked phrase."""

    def __init__(self, table: Mapping[str, Sequence[str]]) -> None:
        self.table = {_norm_phrase(k): tuple(v) for k, v in table.items()}

    def propose(self, tokens: Sequence[str], span: Span, k: int) -> Sequence[str]:
        phrase = _norm_phrase(" ".join(tokens[span.start : span.end]))
        return self.table.get(phrase, ())[: max(k, 0)]


def _contains_phrase(tokens: list[str], phrase: tuple[str, ...]) -> bool:
    width = len(phrase)
    return any(tuple(tokens[i : i + width]) == phrase
               for i in range(len(tokens) - width + 1))


class StubNLIScorer:
    """Heuristic contradiction judge over the edited phrase pair.

    Checks, in order: an explicit phrase-pair table (the original phrase
    must appear in the premise, the replacement in the hypothesis, and not
    vice versa), antonym word pairs, and known-entity swaps, the latter two
    on the minimal token diff. Everything else is neutral.
    """

    def __init__(
        self,
        pairs: Mapping[tuple[str, str], float] | None = None,
        antonyms: Sequence[tuple[str, str]] = (),
        entities: Sequence[str] = (),
    ) -> None:
        self.pairs = {
            (_normalize_span(a), _normalize_span(b)): float(s)
            for (a, b), s in (pairs or {}).items()
        }
        self.antonyms = {frozenset((normalize_token(a), normalize_token(b))) for a, b in antonyms}
        self.entities = {normalize_token(e) for e in entities}

    @staticmethod
    def _diff(p: list[str], h: list[str]) -> tuple[str, str] | None:
        i = 0
        while i < min(len(p), len(h)) and p[i] == h[i]:
            i += 1
        j = 0
        while j < min(len(p), len(h)) - i and p[len(p) - 1 - j] == h[len(h) - 1 - j]:
            j += 1
        changed_p = " ".join(p[i : len(p) - j])
        changed_h = " ".join(h[i : len(h) - j])
        if not changed_p and not changed_h:
            return None
        return changed_p, changed_h

    def score(self, premise: str, hypothesis: str) -> NLIJudgment:
        p = [normalize_token(t) for t in tokenize(premise)]
        h = [normalize_token(t) for t in tokenize(hypothesis)]
        diff = self._diff(p, h)
        if diff is None:
            return NLIJudgment(ENTAILMENT, 0.0)
        for (orig, new), score in self.pairs.items():
            if (_contains_phrase(p, orig) and _contains_phrase(h, new)
                    and not _contains_phrase(h, orig) and not _contains_phrase(p, new)):
                return NLIJudgment(CONTRADICTION, score)
        orig_words, new_words = set(diff[0].split()), set(diff[1].split())
        for a in orig_words:
            for b in new_words:
                if frozenset((a, b)) in self.antonyms:
                    return NLIJudgment(CONTRADICTION, 0.9)
        orig_ents = orig_words & self.entities
        new_ents = new_words & self.entities
        if orig_ents and new_ents and orig_ents != new_ents:
            return NLIJudgment(CONTRADICTION, 0.85)
        return NLIJudgment(NEUTRAL, 0.0)


class HashSentenceEmbedder:
    """Mean of seeded per-token unit vectors; shared tokens raise cosine."""

    def __init__(self, dim: int = 64, seed: int = 0) -> None:
        self.dim = dim
        self.seed = seed

    def embed(self, text: str) -> np.ndarray:
        keys = [normalize_token(t) for t in tokenize(text)]
        keys = [k for k in keys if k]
        if not keys:
            return np.zeros(self.dim)
        vecs = [seeded_unit_vector(f"{self.seed}:sent:{k}", self.dim) for k in keys]
        mean = np.mean(vecs, axis=0)
        norm = np.linalg.norm(mean)
        return mean / norm if norm > 0 else mean


class MeanPoolVideoEmbedder:
    """Pooled patch features as the whole-video representation."""

    def embed(self, post: VideoPost) -> np.ndarray:
        pooled = np.concatenate([f.patches for f in post.frames]).mean(axis=0)
        norm = np.linalg.norm(pooled)
        return pooled / norm if norm > 0 else pooled


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    denom = float(np.linalg.norm(a) * np.linalg.norm(b))
    if denom == 0.0:
        return 0.0
    return float(np.dot(a, b) / denom)


# --------------------------------------------------------------------------
# default stub configuration

DEFAULT_MASKER_TABLE: dict[str, tuple[str, ...]] = {
    "outbreaks of the coronavirus": (
        "the spread of ebola", "outbreaks of the virus", "the wave of infections",
    ),
    "dent": ("facilitate", "hurt", "slow"),
    "getting vaccinated booster shots": ("getting infected",),
    "finally returned home": ("lost home",),
}

DEFAULT_NLI_PAIRS: dict[tuple[str, str], float] = {
    ("outbreaks of the coronavirus", "the spread of ebola"): 0.93,
    ("getting vaccinated booster shots", "getting infected"): 0.91,
    ("finally returned home", "lost home"): 0.92,
    ("dent", "facilitate"): 0.9,
}

DEFAULT_ANTONYMS: tuple[tuple[str, str], ...] = (
    ("dent", "facilitate"), ("stop", "start"), ("protect", "infect"),
    ("contain", "spread"), ("prevent", "cause"),
)

DEFAULT_ENTITIES: tuple[str, ...] = (
    "coronavirus", "ebola", "covid", "omicron", "delta", "moderna", "pfizer",
    "booster", "vaccine", "china", "australia", "who", "virus",
)


@dataclass(frozen=True)
class StubSuite:
    tagger: EventTagger
    masker: MaskedLM
    nli: NLIScorer
    sentence_embedder: SentenceEmbedder
    video_embedder: VideoEmbedder


def default_stub_suite(seed: int = 0) -> StubSuite:
    return StubSuite(
        tagger=LexiconEventTagger(),
        masker=StubMaskedLM(DEFAULT_MASKER_TABLE),
        nli=StubNLIScorer(DEFAULT_NLI_PAIRS, DEFAULT_ANTONYMS, DEFAULT_ENTITIES),
        sentence_embedder=HashSentenceEmbedder(seed=seed),
        video_embedder=MeanPoolVideoEmbedder(),
    )


# --------------------------------------------------------------------------
# claim manipulation


@dataclass(frozen=True)
class ManipulationCandidate:
    original_claim: str
    target_span: Span
    target_kind: str  # {trigger, argument}
    substitution: str
    candidate_claim: str
    nli_label: str | None = None
    contradiction_score: float = 0.0


def splice_tokens(tokens: Sequence[str], span: Span, substitution: str) -> list[str]:
    return list(tokens[: span.start]) + tokenize(substitution) + list(tokens[span.end :])


def build_vocab(corpus: Corpus) -> frozenset[str]:
    """Token vocabulary over all original claims and speech."""
    vocab: set[str] = set()
    for post in corpus:
        for text in (post.claim, *post.speech_sentences):
            vocab.update(t for t in (normalize_token(w) for w in tokenize(text)) if t)
    return frozenset(vocab)


def propose_substitutions(
    claim: str,
    span: Span,
    kind: str,
    masker: MaskedLM,
    k: int = 10,
    *,
    report: list[dict] | None = None,
) -> list[ManipulationCandidate]:
    """Masked-LM alternates for one event span, excluding the original
    phrase. A masker failure yields an empty list plus a report entry."""
    tokens = tokenize(claim)
    if span.end > len(tokens):
        raise ValueError(f"span {span} out of range for claim")
    original_phrase = _norm_phrase(" ".join(tokens[span.start : span.end]))
    try:
        proposals = masker.propose(tokens, span, k + 1)
    except Exception as exc:
        logger.warning("masker failed on %r: %s", claim, exc)
        if report is not None:
            report.append({"reason": "masker failure", "claim": claim, "error": str(exc)})
        return []
    out = []
    for sub in proposals:
        if _norm_phrase(sub) == original_phrase:
            continue
        out.append(ManipulationCandidate(
            original_claim=claim,
            target_span=span,
            target_kind=kind,
            substitution=sub,
            candidate_claim=detokenize(splice_tokens(tokens, span, sub)),
        ))
    return out[:k]


def contradiction_ranking(
    original: str, candidates: Sequence[ManipulationCandidate], nli: NLIScorer
) -> list[ManipulationCandidate]:
    """Contradiction-labeled candidates, best score first; ties break on the
    lexicographically smaller substitution."""
    scored = []
    for cand in candidates:
        judgment = nli.score(original, cand.candidate_claim)
        scored.append(replace(
            cand, nli_label=judgment.label, contradiction_score=judgment.contradiction_score,
        ))
    kept = [c for c in scored if c.nli_label == CONTRADICTION]
    return sorted(kept, key=lambda c: (-c.contradiction_score, c.substitution))


def rank_by_contradiction(
    original: str, candidates: Sequence[ManipulationCandidate], nli: NLIScorer
) -> ManipulationCandidate | None:
    """Best contradiction-labeled candidate, or None (no fake possible)."""
    ranking = contradiction_ranking(original, candidates, nli)
    return ranking[0] if ranking else None


def _stable_rng(seed: int, key: str) -> random.Random:
    digest = blake2b(f"{seed}:{key}".encode("utf-8"), digest_size=8).digest()
    return random.Random(int.from_bytes(digest, "little"))


def _ordered_spans(structure: EventStructure, policy: str, rng: random.Random) -> list[tuple[Span, str]]:
    arguments = [(s, "argument") for s in structure.arguments]
    triggers = [(s, "trigger") for s in structure.triggers]
    if policy == "prefer_argument":
        return sorted(arguments) + sorted(triggers)
    if policy == "random":
        spans = sorted(arguments + triggers)
        rng.shuffle(spans)
        return spans
    raise ValueError(f"unknown span policy {policy!r}")


@dataclass(frozen=True)
class FakeClaimResult:
    source_id: str
    original_claim: str
    span: Span
    kind: str
    ranked: tuple[ManipulationCandidate, ...]  # contradiction-labeled, best first

    def best(self) -> ManipulationCandidate:
        return self.ranked[0]


def generate_fake_claim(
    post: VideoPost,
    tagger: EventTagger,
    masker: MaskedLM,
    nli: NLIScorer,
    vocab: frozenset[str],
    *,
    k: int = 10,
    span_policy: str = "prefer_argument",
    seed: int = 0,
    report: list[dict] | None = None,
) -> FakeClaimResult | None:
    """Tag, propose, vocabulary-filter, and contradiction-rank one claim.
    Returns None (reported) when no span yields a contradiction."""
    structure = tag_events(post.claim, tagger)
    if structure.is_empty():
        if report is not None:
            report.append({"post_id": post.post_id, "reason": "no event structure"})
        return None
    rng = _stable_rng(seed, post.post_id)
    for span, kind in _ordered_spans(structure, span_policy, rng):
        candidates = propose_substitutions(post.claim, span, kind, masker, k, report=report)
        candidates = filter_vocab(candidates, vocab)
        ranking = contradiction_ranking(post.claim, candidates, nli)
        if ranking:
            return FakeClaimResult(post.post_id, post.claim, span, kind, tuple(ranking))
    if report is not None:
        report.append({"post_id": post.post_id, "reason": "no contradiction candidate"})
    return None


def filter_vocab(
    candidates: Sequence[ManipulationCandidate], corpus_vocab: frozenset[str]
) -> list[ManipulationCandidate]:
    """Drop candidates whose substitution uses out-of-vocabulary tokens."""
    out = []
    for cand in candidates:
        words = [normalize_token(t) for t in tokenize(cand.substitution)]
        if all(w in corpus_vocab for w in words if w):
            out.append(cand)
    return out


@dataclass(frozen=True)
class FakeClaimEmission:
    source_id: str
    method: str  # {span_edit, claim_replacement}
    candidate: ManipulationCandidate | None
    fake_claim: str


def dedup_alternatives(
    results: Sequence[FakeClaimResult],
    *,
    corpus: Corpus | None = None,
    embedder: SentenceEmbedder | None = None,
    allow_claim_replacement: bool = False,
    report: list[dict] | None = None,
) -> list[FakeClaimEmission]:
    """Keep one fake claim per distinct substitution. Sources are processed
    in post_id order, so the lowest id retains a contested alternative;
    later ones fall back to their next-best contradiction candidate. When a
    source runs out of candidates it is skipped and reported, unless
    claim replacement is enabled, which swaps in the most similar other
    claim from the corpus (whole-claim edit, flagged in the emission)."""
    used: set[str] = set()
    emissions: list[FakeClaimEmission] = []
    for result in sorted(results, key=lambda r: r.source_id):
        chosen = None
        for cand in result.ranked:
            key = _norm_phrase(cand.substitution)
            if key not in used:
                chosen = cand
                break
        if chosen is not None:
            used.add(_norm_phrase(chosen.substitution))
            emissions.append(FakeClaimEmission(result.source_id, "span_edit", chosen,
                                               chosen.candidate_claim))
            continue
        if allow_claim_replacement and corpus is not None and embedder is not None:
            replacement = _most_similar_claim(result.original_claim, result.source_id,
                                              corpus, embedder)
            if replacement is not None:
                emissions.append(FakeClaimEmission(result.source_id, "claim_replacement",
                                                   None, replacement))
                continue
        if report is not None:
            report.append({"post_id": result.source_id,
                           "reason": "all alternatives already used"})
    return emissions


def _most_similar_claim(
    claim: str, source_id: str, corpus: Corpus, embedder: SentenceEmbedder
) -> str | None:
    target = embedder.embed(claim)
    best: tuple[float, str, str] | None = None
    for post in corpus:
        if post.post_id == source_id or post.claim == claim:
            continue
        sim = cosine(target, embedder.embed(post.claim))
        key = (-sim, post.post_id)
        if best is None or key < (-best[0], best[1]):
            best = (sim, post.post_id, post.claim)
    return best[2] if best else None


# --------------------------------------------------------------------------
# speech, video, and missing-modality manipulation


@dataclass(frozen=True)
class FakeSpeechResult:
    source_id: str
    evidence_indices: tuple[int, ...]
    candidates: tuple[ManipulationCandidate, ...]
    new_speech: tuple[str, ...]


def select_evidence_sentences(
    claim: str, sentences: Sequence[str], embedder: SentenceEmbedder, m: int = 1
) -> tuple[int, ...]:
    """Indices of the m sentences most cosine-similar to the claim."""
    target = embedder.embed(claim)
    ranked = sorted(
        range(len(sentences)),
        key=lambda i: (-cosine(target, embedder.embed(sentences[i])), i),
    )
    return tuple(sorted(ranked[: max(m, 0)]))


def generate_fake_speech(
    post: VideoPost,
    embedder: SentenceEmbedder,
    tagger: EventTagger,
    masker: MaskedLM,
    nli: NLIScorer,
    vocab: frozenset[str],
    *,
    m: int = 1,
    k: int = 10,
    span_policy: str = "prefer_argument",
    seed: int = 0,
    report: list[dict] | None = None,
) -> FakeSpeechResult | None:
    """Manipulate the evidence sentences (those most similar to the claim);
    every other sentence is untouched."""
    if not post.speech_sentences:
        raise ValueError(f"post {post.post_id} has no speech")
    evidence = select_evidence_sentences(post.claim, post.speech_sentences, embedder, m)
    new_speech = list(post.speech_sentences)
    applied: list[ManipulationCandidate] = []
    touched: list[int] = []
    for idx in evidence:
        sentence = post.speech_sentences[idx]
        structure = tag_events(sentence, tagger)
        if structure.is_empty():
            continue
        rng = _stable_rng(seed, f"{post.post_id}:speech:{idx}")
        for span, kind in _ordered_spans(structure, span_policy, rng):
            candidates = propose_substitutions(sentence, span, kind, masker, k, report=report)
            candidates = filter_vocab(candidates, vocab)
            best = rank_by_contradiction(sentence, candidates, nli)
            if best is not None:
                new_speech[idx] = best.candidate_claim
                applied.append(best)
                touched.append(idx)
                break
    if not applied:
        if report is not None:
            report.append({"post_id": post.post_id,
                           "reason": "no manipulable evidence sentence"})
        return None
    return FakeSpeechResult(post.post_id, tuple(touched), tuple(applied), tuple(new_speech))


@dataclass(frozen=True)
class FakeVideoResult:
    source_id: str
    matched_id: str
    similarity: float


def generate_fake_video(
    post: VideoPost, corpus: Corpus, video_embedder: VideoEmbedder
) -> FakeVideoResult:
    """Adversarial matching: the most similar other video in the corpus,
    ties broken by lowest post_id."""
    if len(corpus) < 2:
        raise ValueError("adversarial matching needs at least 2 videos")
    target = video_embedder.embed(post)
    best: tuple[float, str] | None = None
    for other in corpus:
        if other.post_id == post.post_id or other.video_link == post.video_link:
            continue
        sim = cosine(target, video_embedder.embed(other))
        if best is None or (-sim, other.post_id) < (-best[0], best[1]):
            best = (sim, other.post_id)
    if best is None:
        raise ValueError("no distinct video available for matching")
    return FakeVideoResult(post.post_id, best[1], best[0])


def extract_entities(text: str, tagger: EventTagger | None = None) -> frozenset[str]:
    """Named-entity stand-in: event-argument phrases plus capitalized tokens."""
    tokens = tokenize(text)
    entities: set[str] = set()
    if tagger is not None:
        structure = tag_events(text, tagger)
        for span in structure.arguments:
            for tok in tokens[span.start : span.end]:
                word = normalize_token(tok)
                if word:
                    entities.add(word)
    for tok in tokens:
        stripped = tok.strip(".,!?;:'\"()")
        if stripped[:1].isupper() and len(stripped) > 1:
            entities.add(normalize_token(tok))
    return frozenset(entities)


@dataclass(frozen=True)
class FilledSpeechResult:
    source_id: str
    donor_id: str
    shared_entities: tuple[str, ...]
    new_speech: tuple[str, ...]


def fill_missing_speech(
    post: VideoPost,
    corpus: Corpus,
    tagger: EventTagger | None = None,
    *,
    report: list[dict] | None = None,
) -> FilledSpeechResult | None:
    """For a post without speech, borrow the corpus speech sharing the most
    entities with the claim (at least one required)."""
    if post.speech_sentences:
        raise ValueError(f"post {post.post_id} already has speech")
    claim_entities = extract_entities(post.claim, tagger)
    best: tuple[int, str, frozenset[str], tuple[str, ...]] | None = None
    for donor in corpus:
        if donor.post_id == post.post_id or not donor.speech_sentences:
            continue
        donor_entities: set[str] = set()
        for sentence in donor.speech_sentences:
            donor_entities |= extract_entities(sentence, tagger)
        shared = claim_entities & donor_entities
        if not shared:
            continue
        key = (-len(shared), donor.post_id)
        if best is None or key < (-best[0], best[1]):
            best = (len(shared), donor.post_id, frozenset(shared), donor.speech_sentences)
    if best is None:
        if report is not None:
            report.append({"post_id": post.post_id, "reason": "no speech shares an entity"})
        return None
    return FilledSpeechResult(post.post_id, best[1], tuple(sorted(best[2])), best[3])


# --------------------------------------------------------------------------
# balanced dataset assembly


@dataclass
class SynthesisReport:
    provenance: list[dict]
    rejections: list[dict]

    def to_jsonl(self) -> str:
        import json

        lines = [json.dumps({"kind": "provenance", **p}, sort_keys=True)
                 for p in self.provenance]
        lines += [json.dumps({"kind": "rejection", **r}, sort_keys=True)
                  for r in self.rejections]
        return "\n".join(lines) + ("\n" if lines else "")


def largest_remainder_counts(fractions: Sequence[float], total: int) -> list[int]:
    norm = sum(fractions)
    if norm <= 0:
        raise ValueError("mix fractions must sum to a positive value")
    quotas = [f / norm * total for f in fractions]
    counts = [int(q) for q in quotas]
    order = sorted(range(len(quotas)), key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in order[: total - sum(counts)]:
        counts[i] += 1
    return counts


TAXONOMY_ORDER = ("fake_claim", "fake_speech", "fake_video")


def build_balanced_dataset(
    pristine: Corpus,
    suite: StubSuite,
    mix: Sequence[float] = (1.0, 1.0, 1.0),
    seed: int = 0,
    *,
    k: int = 10,
    span_policy: str = "prefer_argument",
    evidence_m: int = 1,
    allow_claim_replacement: bool = False,
) -> tuple[Corpus, SynthesisReport]:
    """Emit exactly one manipulated record per pristine record, split across
    the three taxonomies by largest-remainder rounding of `mix`. Posts with
    no speech satisfy the speech quota through missing-speech fill-ins.
    Raises InsufficientFakesError with the per-taxonomy shortfall when the
    corpus cannot support the requested mix."""
    if len(mix) != 3:
        raise ValueError("mix must have three entries (claim, speech, video)")
    report = SynthesisReport([], [])
    n = len(pristine)
    quotas = dict(zip(TAXONOMY_ORDER, largest_remainder_counts(list(mix), n)))
    ordered = sorted(pristine, key=lambda p: p.post_id)
    vocab = build_vocab(pristine)

    claim_results = []
    for post in ordered:
        result = generate_fake_claim(
            post, suite.tagger, suite.masker, suite.nli, vocab,
            k=k, span_policy=span_policy, seed=seed, report=report.rejections,
        )
        if result is not None:
            claim_results.append(result)
    claim_emissions = {
        e.source_id: e
        for e in dedup_alternatives(
            claim_results, corpus=pristine, embedder=suite.sentence_embedder,
            allow_claim_replacement=allow_claim_replacement, report=report.rejections,
        )
    }

    speech_results: dict[str, FakeSpeechResult | FilledSpeechResult] = {}
    for post in ordered:
        if post.speech_sentences:
            fake = generate_fake_speech(
                post, suite.sentence_embedder, suite.tagger, suite.masker, suite.nli,
                vocab, m=evidence_m, k=k, span_policy=span_policy, seed=seed,
                report=report.rejections,
            )
        else:
            fake = fill_missing_speech(post, pristine, suite.tagger,
                                       report=report.rejections)
        if fake is not None:
            speech_results[post.post_id] = fake

    video_results: dict[str, FakeVideoResult] = {}
    if len(pristine) >= 2:
        for post in ordered:
            video_results[post.post_id] = generate_fake_video(post, pristine,
                                                              suite.video_embedder)

    available = {
        "fake_claim": claim_emissions,
        "fake_speech": speech_results,
        "fake_video": video_results,
    }

    # one fake per source post first, cycling taxonomy preference for spread;
    # a second pass reuses sources if a quota is still unfilled
    assignment: list[tuple[str, str]] = []  # (taxonomy, source_id)
    remaining = dict(quotas)
    shuffled = list(ordered)
    random.Random(seed).shuffle(shuffled)
    rotations = [TAXONOMY_ORDER, TAXONOMY_ORDER[1:] + TAXONOMY_ORDER[:1],
                 TAXONOMY_ORDER[2:] + TAXONOMY_ORDER[:2]]
    for turn, post in enumerate(shuffled):
        for taxonomy in rotations[turn % 3]:
            if remaining[taxonomy] > 0 and post.post_id in available[taxonomy]:
                assignment.append((taxonomy, post.post_id))
                remaining[taxonomy] -= 1
                break
    if any(remaining.values()):
        assigned = set(assignment)
        for taxonomy in TAXONOMY_ORDER:
            for post in ordered:
                if remaining[taxonomy] <= 0:
                    break
                pair = (taxonomy, post.post_id)
                if pair not in assigned and post.post_id in available[taxonomy]:
                    assignment.append(pair)
                    assigned.add(pair)
                    remaining[taxonomy] -= 1
    if any(remaining.values()):
        raise InsufficientFakesError({t: remaining[t] for t in TAXONOMY_ORDER})

    fakes: list[VideoPost] = []
    for taxonomy, source_id in sorted(assignment, key=lambda a: (a[1], a[0])):
        source = pristine.get(source_id)
        fake, entry = _materialize(taxonomy, source, available[taxonomy][source_id], pristine)
        fakes.append(fake.validated())
        report.provenance.append(entry)

    posts = list(pristine.posts) + fakes
    return pristine.with_posts(posts), report


def _materialize(
    taxonomy: str, source: VideoPost, result, corpus: Corpus
) -> tuple[VideoPost, dict]:
    base = {"source_post_id": source.post_id}
    if taxonomy == "fake_claim":
        emission: FakeClaimEmission = result
        new_id = f"{source.post_id}::fake_claim"
        fake = replace(source, post_id=new_id, claim=emission.fake_claim,
                       label=LABEL_INCONSISTENT, taxonomy="fake_claim")
        detail = {"method": emission.method}
        if emission.candidate is not None:
            detail.update({
                "substitution": emission.candidate.substitution,
                "original_span": [emission.candidate.target_span.start,
                                  emission.candidate.target_span.end],
                "target_kind": emission.candidate.target_kind,
                "contradiction_score": emission.candidate.contradiction_score,
            })
        return fake, {**base, "post_id": new_id, "taxonomy": "fake_claim", **detail}
    if taxonomy == "fake_speech":
        if isinstance(result, FilledSpeechResult):
            new_id = f"{source.post_id}::filled_speech"
            fake = replace(source, post_id=new_id, speech_sentences=result.new_speech,
                           label=LABEL_INCONSISTENT, taxonomy="filled_speech")
            detail = {"donor_post_id": result.donor_id,
                      "shared_entities": list(result.shared_entities)}
            return fake, {**base, "post_id": new_id, "taxonomy": "filled_speech", **detail}
        speech_result: FakeSpeechResult = result
        new_id = f"{source.post_id}::fake_speech"
        fake = replace(source, post_id=new_id, speech_sentences=speech_result.new_speech,
                       label=LABEL_INCONSISTENT, taxonomy="fake_speech")
        detail = {
            "evidence_indices": list(speech_result.evidence_indices),
            "substitutions": [c.substitution for c in speech_result.candidates],
        }
        return fake, {**base, "post_id": new_id, "taxonomy": "fake_speech", **detail}
    if taxonomy == "fake_video":
        video_result: FakeVideoResult = result
        matched = corpus.get(video_result.matched_id)
        new_id = f"{source.post_id}::fake_video"
        fake = replace(source, post_id=new_id, frames=matched.frames,
                       video_link=matched.video_link,
                       label=LABEL_INCONSISTENT, taxonomy="fake_video")
        detail = {"matched_post_id": video_result.matched_id,
                  "similarity": video_result.similarity}
        return fake, {**base, "post_id": new_id, "taxonomy": "fake_video", **detail}
    raise ValueError(f"unknown taxonomy {taxonomy!r}")
