"""Event span tagging and per-token event-role indices.

Texts are tokenized by whitespace; lexicon matching works on lowercased,
punctuation-stripped token forms so that "China." still matches "china".
Role indices: 0 = plain token, 1 = inside a trigger span, 2 = inside an
argument span. Overlaps resolve trigger-wins.
"""

from __future__ import annotations

import string
from dataclasses import dataclass
from typing import Protocol, Sequence

ROLE_NONE = 0
ROLE_TRIGGER = 1
ROLE_ARGUMENT = 2

AlertIndices = tuple[int, ...]


class TaggerUnavailableError(RuntimeError):
    """The tagger backend failed; distinct from an empty tagging result."""


def tokenize(text: str) -> list[str]:
    return text.split()


def normalize_token(token: str) -> str:
    return token.strip(string.punctuation).lower()


def detokenize(tokens: Sequence[str]) -> str:
    return " ".join(tokens)


@dataclass(frozen=True, order=True)
class Span:
    """Half-open token index range [start, end)."""

    start: int
    end: int

    def __post_init__(self) -> None:
        if self.start < 0 or self.end <= self.start:
            raise ValueError(f"invalid span ({self.start}, {self.end})")

    def overlaps(self, other: "Span") -> bool:
        return self.start < other.end and other.start < self.end

    def __len__(self) -> int:
        return self.end - self.start


@dataclass(frozen=True)
class EventStructure:
    triggers: tuple[Span, ...]
    arguments: tuple[Span, ...]

    @classmethod
    def empty(cls) -> "EventStructure":
        return cls((), ())

    def is_empty(self) -> bool:
        return not self.triggers and not self.arguments

    def spans(self) -> tuple[tuple[Span, str], ...]:
        """All spans with their role kind, in textual order."""
        tagged = [(s, "trigger") for s in self.triggers]
        tagged += [(s, "argument") for s in self.arguments]
        return tuple(sorted(tagged, key=lambda it: (it[0].start, it[0].end)))


class EventTagger(Protocol):
    def tag(self, text: str) -> EventStructure: ...


# Frequent event vocabulary observed in the target domain; used to seed the
# deterministic lexicon tagger so the pipeline runs without a trained model.
DEFAULT_TRIGGERS: tuple[str, ...] = (
    "fight", "infect", "protect", "prevent", "help", "stop", "quarantine",
    "contain", "confirm", "threat", "plunge", "mandate", "deal", "cause",
    "dent", "facilitate", "warns",
    "finally returned home", "lost home",
)

DEFAULT_ARGUMENTS: tuple[str, ...] = (
    "coronavirus", "omicron", "pfizer", "covid", "delta", "moderna",
    "booster", "mask", "lockdown", "protest", "social distance", "ban",
    "vaccine", "officials", "ebola", "virus",
    "outbreaks of the coronavirus", "the spread of ebola",
    "economic recovery", "getting vaccinated booster shots",
    "getting infected", "omicron variant",
)


def _normalize_phrase(phrase: str) -> tuple[str, ...]:
    return tuple(normalize_token(t) for t in tokenize(phrase))


class LexiconEventTagger:
    """Deterministic tagger: greedy longest-phrase lexicon matching.

    Triggers are matched first; argument matches overlapping a trigger are
    dropped (trigger wins). Matching is greedy left to right, longest phrase
    first at each position.
    """

    def __init__(
        self,
        triggers: Sequence[str] = DEFAULT_TRIGGERS,
        arguments: Sequence[str] = DEFAULT_ARGUMENTS,
    ) -> None:
        self._triggers = {_normalize_phrase(p) for p in triggers if p.strip()}
        self._arguments = {_normalize_phrase(p) for p in arguments if p.strip()}
        lengths = {len(p) for p in self._triggers | self._arguments}
        self._max_len = max(lengths, default=0)

    def _match(
        self, tokens: Sequence[str], lexicon: set[tuple[str, ...]], taken: list[bool]
    ) -> list[Span]:
        spans: list[Span] = []
        norm = [normalize_token(t) for t in tokens]
        i = 0
        while i < len(norm):
            hit = None
            for width in range(min(self._max_len, len(norm) - i), 0, -1):
                if any(taken[i : i + width]):
                    continue
                if tuple(norm[i : i + width]) in lexicon:
                    hit = Span(i, i + width)
                    break
            if hit is not None:
                spans.append(hit)
                for j in range(hit.start, hit.end):
                    taken[j] = True
                i = hit.end
            else:
                i += 1
        return spans

    def tag(self, text: str) -> EventStructure:
        tokens = tokenize(text)
        taken = [False] * len(tokens)
        triggers = self._match(tokens, self._triggers, taken)
        arguments = self._match(tokens, self._arguments, taken)
        return EventStructure(tuple(triggers), tuple(arguments))


def default_tagger() -> LexiconEventTagger:
    return LexiconEventTagger()


def tag_events(text: str, tagger: EventTagger) -> EventStructure:
    """Tag event spans in `text`. Raises TaggerUnavailableError on backend
    failure, which is distinct from the empty structure returned when the
    text simply has no events."""
    if not text or not text.strip():
        raise ValueError("text must be nonempty")
    try:
        structure = tagger.tag(text)
    except Exception as exc:
        raise TaggerUnavailableError(f"event tagger failed: {exc}") from exc
    n_tokens = len(tokenize(text))
    for span, _ in structure.spans():
        if span.end > n_tokens:
            raise ValueError(f"tagger produced out-of-range span {span} for {n_tokens} tokens")
    return structure


def to_alert_indices(text_tokens: Sequence[str], structure: EventStructure) -> AlertIndices:
    """Per-token role indices: 1 inside a trigger, 2 inside an argument,
    0 otherwise. A pure function of (token count, spans); trigger wins on
    overlap."""
    n = len(text_tokens)
    for span in (*structure.triggers, *structure.arguments):
        if span.end > n:
            raise ValueError(f"span {span} out of range for {n} tokens")
    indices = [ROLE_NONE] * n
    for span in structure.arguments:
        for i in range(span.start, span.end):
            indices[i] = ROLE_ARGUMENT
    for span in structure.triggers:
        for i in range(span.start, span.end):
            indices[i] = ROLE_TRIGGER
    return tuple(indices)
