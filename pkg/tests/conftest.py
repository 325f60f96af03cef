from __future__ import annotations

import numpy as np
import pytest

from vtcheck.corpus import Corpus, VideoPost
from vtcheck.encoders import EncoderConfig, FramePatchFeatures, StubTextEncoder
from vtcheck.events import LexiconEventTagger
from vtcheck.model import Featurizer, ModelConfig
from vtcheck.synthesis import StubMaskedLM, StubNLIScorer, StubSuite, HashSentenceEmbedder, MeanPoolVideoEmbedder

TINY_DIM = 8
TINY_PATCHES = 3


def tiny_model_config(**overrides) -> ModelConfig:
    base = dict(
        dim=TINY_DIM, text_dim=TINY_DIM, patch_dim=TINY_DIM,
        aoa_layers=1, aoa_heads=1, fuse_layers=1, fuse_heads=1,
        max_tokens=24, max_patches=8, max_fuse_len=32,
        dtype="float64", seed=1,
    )
    base.update(overrides)
    return ModelConfig(**base)


def make_frames(key: str, n_frames: int, n_patches: int = TINY_PATCHES,
                d_v: int = TINY_DIM, seed: int = 0) -> tuple[FramePatchFeatures, ...]:
    from hashlib import blake2b

    digest = blake2b(f"{seed}:{key}".encode(), digest_size=8).digest()
    rng = np.random.Generator(np.random.PCG64(int.from_bytes(digest, "little")))
    return tuple(
        FramePatchFeatures(rng.standard_normal((n_patches, d_v)))
        for _ in range(n_frames)
    )


def make_post(post_id: str, claim: str, *, speech=(), screen=(), label="consistent",
              taxonomy="pristine", n_frames=2, n_patches=TINY_PATCHES, d_v=TINY_DIM,
              video_link=None, verified=True, video_length_s=10.0) -> VideoPost:
    return VideoPost(
        post_id=post_id,
        video_link=video_link or f"https://video/{post_id}",
        claim=claim,
        frames=make_frames(post_id, n_frames, n_patches, d_v),
        speech_sentences=tuple(speech),
        screen_text_sentences=tuple(screen),
        label=label,
        taxonomy=taxonomy,
        verified_account=verified,
        video_length_s=video_length_s,
    ).validated()


def make_corpus(posts, n_patches=TINY_PATCHES, d_v=TINY_DIM) -> Corpus:
    return Corpus(tuple(posts), n_patches, d_v)


@pytest.fixture
def tiny_config() -> ModelConfig:
    return tiny_model_config()


@pytest.fixture
def tiny_featurizer() -> Featurizer:
    encoder = StubTextEncoder(EncoderConfig(n_patches=TINY_PATCHES, d_v=TINY_DIM,
                                            d_t=TINY_DIM, seed=0))
    return Featurizer(encoder, LexiconEventTagger(), max_frames=4, max_tokens=24)


# ---------------------------------------------------------------------------
# synthetic balanced corpus for synthesis and training tests

POOL_SIZE = 160
DISEASE_POOL = tuple(f"malady{i:03d}" for i in range(POOL_SIZE))


def synthetic_suite(seed: int = 0) -> StubSuite:
    """Stub components whose lexicons cover the synthetic disease pool, so
    every synthetic claim is manipulable and every substitution stays in
    vocabulary."""
    tagger = LexiconEventTagger(
        triggers=("contain", "monitor", "stop", "fight"),
        arguments=DISEASE_POOL,
    )
    masker = StubMaskedLM({
        disease: tuple(DISEASE_POOL[(i + j) % POOL_SIZE] for j in (1, 2, 3, 5, 8))
        for i, disease in enumerate(DISEASE_POOL)
    })
    nli = StubNLIScorer(pairs={}, antonyms=(), entities=DISEASE_POOL)
    return StubSuite(tagger, masker, nli, HashSentenceEmbedder(seed=seed),
                     MeanPoolVideoEmbedder())


def synthetic_pristine_corpus(n: int, *, n_frames: int = 2, with_speech: bool = True,
                              n_patches: int = TINY_PATCHES, d_v: int = TINY_DIM,
                              seed: int = 0) -> Corpus:
    posts = []
    for i in range(n):
        disease = DISEASE_POOL[i % POOL_SIZE]
        # neighbors' claims put every masker alternate into the corpus vocab
        speech = (
            f"Experts say officials contain {disease} near region{i}.",
            f"Weather remains calm in region{i}.",
        ) if with_speech else ()
        posts.append(make_post(
            f"p{i:04d}",
            f"Officials contain {disease} outside of region{i}.",
            speech=speech,
            screen=(f"region{i} alert",) if i % 3 else (),
            n_frames=n_frames + (i % 2),
            n_patches=n_patches,
            d_v=d_v,
            video_length_s=5.0 + (i % 20),
        ))
    return make_corpus(posts, n_patches, d_v)
