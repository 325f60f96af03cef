"""Video-post corpus: ingest, validate, filter, split, and the on-disk format.

On disk a corpus is line-delimited JSON: a header line declaring the patch
geometry, then one record per line. Frame features are inline nested arrays
or a `frames_ref` key into a binary sidecar file. Corpus objects are
immutable after ingest and safe to share across parallel readers.
"""

from __future__ import annotations

import json
import logging
import random
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .encoders import FramePatchFeatures, SidecarFrameEncoder
from .events import EventTagger, TaggerUnavailableError, tag_events

logger = logging.getLogger(__name__)

FORMAT_NAME = "vtcorpus/1"

LABEL_CONSISTENT = "consistent"
LABEL_INCONSISTENT = "inconsistent"
LABELS = (LABEL_CONSISTENT, LABEL_INCONSISTENT)

TAXONOMY_PRISTINE = "pristine"
TAXONOMIES = (TAXONOMY_PRISTINE, "fake_claim", "fake_speech", "fake_video", "filled_speech")

_REQUIRED_FIELDS = (
    "post_id", "video_link", "claim", "speech", "screen_text",
    "label", "taxonomy", "verified", "video_length_s",
)


class DuplicatePostIdError(ValueError):
    pass


class CorpusTooSmallError(ValueError):
    pass


@dataclass(frozen=True)
class Rejection:
    """A record that failed validation, with its input line number."""

    line: int
    post_id: str | None
    reason: str


@dataclass(frozen=True)
class VideoPost:
    post_id: str
    video_link: str
    claim: str
    frames: tuple[FramePatchFeatures, ...]
    speech_sentences: tuple[str, ...]
    screen_text_sentences: tuple[str, ...]
    label: str
    taxonomy: str
    verified_account: bool
    video_length_s: float

    def problems(self) -> list[str]:
        out = []
        if not self.post_id:
            out.append("empty post_id")
        if not self.claim or not self.claim.strip():
            out.append("empty claim")
        if not self.frames:
            out.append("no frames")
        if self.label not in LABELS:
            out.append(f"unknown label {self.label!r}")
        if self.taxonomy not in TAXONOMIES:
            out.append(f"unknown taxonomy {self.taxonomy!r}")
        if (self.label == LABEL_CONSISTENT) != (self.taxonomy == TAXONOMY_PRISTINE):
            out.append("label/taxonomy mismatch: consistent iff pristine")
        if self.video_length_s < 0:
            out.append("negative video length")
        return out

    def validated(self) -> "VideoPost":
        problems = self.problems()
        if problems:
            raise ValueError(f"invalid post {self.post_id!r}: " + "; ".join(problems))
        return self


def make_pristine_post(**kwargs) -> VideoPost:
    return VideoPost(label=LABEL_CONSISTENT, taxonomy=TAXONOMY_PRISTINE, **kwargs).validated()


@dataclass(frozen=True)
class Corpus:
    posts: tuple[VideoPost, ...]
    n_patches: int
    d_v: int

    def __len__(self) -> int:
        return len(self.posts)

    def __iter__(self) -> Iterator[VideoPost]:
        return iter(self.posts)

    def ids(self) -> tuple[str, ...]:
        return tuple(p.post_id for p in self.posts)

    def get(self, post_id: str) -> VideoPost:
        for post in self.posts:
            if post.post_id == post_id:
                return post
        raise KeyError(post_id)

    def with_posts(self, posts: Sequence[VideoPost]) -> "Corpus":
        return replace(self, posts=tuple(posts))


@dataclass(frozen=True)
class CorpusSplit:
    train: tuple[str, ...]
    val: tuple[str, ...]
    test: tuple[str, ...]

    def sizes(self) -> tuple[int, int, int]:
        return (len(self.train), len(self.val), len(self.test))

    def to_json(self) -> str:
        payload = {"train": list(self.train), "val": list(self.val), "test": list(self.test)}
        return json.dumps(payload, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "CorpusSplit":
        data = json.loads(text)
        return cls(tuple(data["train"]), tuple(data["val"]), tuple(data["test"]))


def _post_from_record(record: dict, n_patches: int, d_v: int,
                      sidecar: SidecarFrameEncoder | None) -> VideoPost:
    missing = [k for k in _REQUIRED_FIELDS if k not in record]
    if missing:
        raise ValueError(f"missing required field(s): {', '.join(missing)}")
    if "frames" in record:
        frames = tuple(
            FramePatchFeatures(np.asarray(frame, dtype=np.float64))
            for frame in record["frames"]
        )
    elif "frames_ref" in record:
        if sidecar is None:
            raise ValueError("record uses frames_ref but corpus has no sidecar")
        frames = sidecar.frames_for(record["frames_ref"])
    else:
        raise ValueError("missing required field(s): frames or frames_ref")
    for f in frames:
        if f.patches.shape != (n_patches, d_v):
            raise ValueError(
                f"frame shape {f.patches.shape} does not match header ({n_patches}, {d_v})"
            )
    return VideoPost(
        post_id=str(record["post_id"]),
        video_link=str(record["video_link"]),
        claim=str(record["claim"]),
        frames=frames,
        speech_sentences=tuple(str(s) for s in record["speech"]),
        screen_text_sentences=tuple(str(s) for s in record["screen_text"]),
        label=str(record["label"]),
        taxonomy=str(record["taxonomy"]),
        verified_account=bool(record["verified"]),
        video_length_s=float(record["video_length_s"]),
    ).validated()


def ingest(path: str | Path, *, drop_unverified: bool = False,
           report: list[Rejection] | None = None) -> Corpus:
    """Read and validate a corpus file.

    Malformed records are rejected one by one (reported with line numbers);
    a duplicate post_id is a hard error. An empty file is an empty corpus.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(str(path))
    lines = path.read_text(encoding="utf-8").splitlines()
    while lines and not lines[-1].strip():
        lines.pop()
    if not lines:
        return Corpus((), 0, 0)

    header = json.loads(lines[0])
    if header.get("format") != FORMAT_NAME:
        raise ValueError(f"{path}: first line must be a {FORMAT_NAME} header")
    n_patches = int(header["n_patches"])
    d_v = int(header["d_v"])
    sidecar = None
    if header.get("sidecar"):
        sidecar_path = Path(header["sidecar"])
        if not sidecar_path.is_absolute():
            sidecar_path = path.parent / sidecar_path
        sidecar = SidecarFrameEncoder(sidecar_path)

    posts: list[VideoPost] = []
    seen: dict[str, int] = {}
    for line_no, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        post_id = None
        try:
            record = json.loads(line)
            post_id = record.get("post_id") if isinstance(record, dict) else None
            post = _post_from_record(record, n_patches, d_v, sidecar)
        except (ValueError, KeyError) as exc:
            rej = Rejection(line_no, post_id, str(exc))
            logger.warning("rejected line %d (%s): %s", rej.line, rej.post_id, rej.reason)
            if report is not None:
                report.append(rej)
            continue
        if post.post_id in seen:
            raise DuplicatePostIdError(
                f"duplicate post_id {post.post_id!r} at lines {seen[post.post_id]} and {line_no}"
            )
        seen[post.post_id] = line_no
        if drop_unverified and not post.verified_account:
            if report is not None:
                report.append(Rejection(line_no, post.post_id, "unverified account"))
            continue
        posts.append(post)
    return Corpus(tuple(posts), n_patches, d_v)


def serialize(corpus: Corpus, path: str | Path) -> None:
    """Write a corpus with inline frame features; ingest(serialize(c)) == c."""
    out = [json.dumps(
        {"format": FORMAT_NAME, "n_patches": corpus.n_patches, "d_v": corpus.d_v},
        sort_keys=True,
    )]
    for post in corpus:
        record = {
            "post_id": post.post_id,
            "video_link": post.video_link,
            "claim": post.claim,
            "speech": list(post.speech_sentences),
            "screen_text": list(post.screen_text_sentences),
            "frames": [f.patches.tolist() for f in post.frames],
            "label": post.label,
            "taxonomy": post.taxonomy,
            "verified": post.verified_account,
            "video_length_s": post.video_length_s,
        }
        out.append(json.dumps(record, sort_keys=True, separators=(",", ":")))
    Path(path).write_text("\n".join(out) + "\n", encoding="utf-8")


def dedup_by_video(corpus: Corpus) -> Corpus:
    """Keep exactly one post per video link: the lowest post_id."""
    keep: dict[str, VideoPost] = {}
    for post in corpus:
        cur = keep.get(post.video_link)
        if cur is None or post.post_id < cur.post_id:
            keep[post.video_link] = post
    kept_ids = {p.post_id for p in keep.values()}
    return corpus.with_posts([p for p in corpus if p.post_id in kept_ids])


def filter_verifiable(corpus: Corpus, tagger: EventTagger, *,
                      report: list[Rejection] | None = None) -> Corpus:
    """Keep posts whose claim has at least one event trigger. Tagger
    failures exclude the record but are flagged, never silent."""
    kept: list[VideoPost] = []
    for post in corpus:
        try:
            structure = tag_events(post.claim, tagger)
        except TaggerUnavailableError as exc:
            logger.warning("tagger failed on %s: %s", post.post_id, exc)
            if report is not None:
                report.append(Rejection(-1, post.post_id, f"tagger failure: {exc}"))
            continue
        if structure.triggers:
            kept.append(post)
        else:
            logger.info("removed %s: no event structure", post.post_id)
            if report is not None:
                report.append(Rejection(-1, post.post_id, "no event structure"))
    return corpus.with_posts(kept)


def _largest_remainder(quotas: Sequence[float], total: int, *, reverse_ties: bool = False) -> list[int]:
    floors = [int(q) for q in quotas]
    counts = list(floors)
    order = sorted(
        range(len(quotas)),
        key=lambda i: (-(quotas[i] - floors[i]), -i if reverse_ties else i),
    )
    for i in order[: total - sum(floors)]:
        counts[i] += 1
    return counts


def split(corpus: Corpus, seed: int) -> CorpusSplit:
    """Deterministic stratified 80/10/10 split by label.

    Validation and test extras from fractional quotas go to different label
    groups where possible (tie orders reversed) so every part stays close
    to the corpus label balance.
    """
    n = len(corpus)
    if n < 10:
        raise CorpusTooSmallError(f"need at least 10 records to split, got {n}")
    n_val = round(n * 0.1)
    n_test = round(n * 0.1)

    groups: dict[str, list[str]] = {label: [] for label in LABELS}
    for post in corpus:
        groups[post.label].append(post.post_id)
    labels = [lab for lab in LABELS if groups[lab]]
    sizes = [len(groups[lab]) for lab in labels]

    val_counts = _largest_remainder([m * n_val / n for m in sizes], n_val)
    test_counts = _largest_remainder([m * n_test / n for m in sizes], n_test, reverse_ties=True)

    train: list[str] = []
    val: list[str] = []
    test: list[str] = []
    for gi, label in enumerate(labels):
        ids = sorted(groups[label])
        random.Random(seed * 1000003 + gi).shuffle(ids)
        v, t = val_counts[gi], test_counts[gi]
        val.extend(ids[:v])
        test.extend(ids[v : v + t])
        train.extend(ids[v + t :])
    return CorpusSplit(tuple(sorted(train)), tuple(sorted(val)), tuple(sorted(test)))


def subset(corpus: Corpus, ids: Sequence[str]) -> list[VideoPost]:
    wanted = set(ids)
    return [p for p in corpus if p.post_id in wanted]
