"""Pluggable feature extraction with deterministic stub encoders.

The stubs map every token (or frame-patch slot) to a seeded pseudo-random
unit vector, so distinct inputs get near-orthogonal embeddings and the
whole system runs without pretrained weights. A sidecar adapter loads
precomputed frame-patch features written by this module's binary format.
"""

from __future__ import annotations

import io
import math
import struct
from dataclasses import dataclass
from hashlib import blake2b
from pathlib import Path
from typing import Mapping

import numpy as np

from .events import normalize_token, tokenize

SIDECAR_MAGIC = b"VTFEAT1\n"


@dataclass(frozen=True)
class EncoderConfig:
    """Config keys shared by the stub encoders.

    kind selects the frame-feature source; text embeddings are always stub
    (released corpora carry frame features, not text features).
    """

    kind: str = "stub"  # {stub, sidecar}
    n_patches: int = 8
    d_v: int = 512
    d_t: int = 768
    seed: int = 0
    sidecar_path: str | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("stub", "sidecar"):
            raise ValueError(f"unknown encoder kind {self.kind!r}")
        if self.n_patches < 1 or self.d_v < 1 or self.d_t < 1:
            raise ValueError("encoder dimensions must be positive")


@dataclass(frozen=True, eq=False)
class FramePatchFeatures:
    """Per-frame patch embedding matrix, shape (n_patches, d_v)."""

    patches: np.ndarray

    def __post_init__(self) -> None:
        if self.patches.ndim != 2 or self.patches.shape[0] < 1:
            raise ValueError(f"patches must be (N, D_v), got {self.patches.shape}")
        if not np.isfinite(self.patches).all():
            raise ValueError("patch features must be finite")

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, FramePatchFeatures):
            return NotImplemented
        return np.array_equal(self.patches, other.patches)

    @property
    def n_patches(self) -> int:
        return int(self.patches.shape[0])

    @property
    def d_v(self) -> int:
        return int(self.patches.shape[1])


@dataclass(frozen=True)
class TokenEmbeddings:
    """Token embedding matrix (L, d_t) plus the tokenization it came from."""

    tokens: np.ndarray
    token_strings: tuple[str, ...]

    def __post_init__(self) -> None:
        if self.tokens.ndim != 2 or self.tokens.shape[0] < 1:
            raise ValueError(f"tokens must be (L, D_t), got {self.tokens.shape}")
        if len(self.token_strings) != self.tokens.shape[0]:
            raise ValueError("token_strings length must match embedding rows")
        if not np.isfinite(self.tokens).all():
            raise ValueError("token embeddings must be finite")


def seeded_unit_vector(key: str, dim: int) -> np.ndarray:
    """Deterministic pseudo-random unit vector for a string key."""
    digest = blake2b(key.encode("utf-8"), digest_size=8).digest()
    rng = np.random.Generator(np.random.PCG64(int.from_bytes(digest, "little")))
    vec = rng.standard_normal(dim)
    return vec / np.linalg.norm(vec)


class StubTextEncoder:
    """Hash-seeded token embeddings; pure function of (text, config)."""

    def __init__(self, config: EncoderConfig) -> None:
        self.config = config

    def encode_text_tokens(self, text: str) -> TokenEmbeddings:
        if not text or not text.strip():
            raise ValueError("text must be nonempty")
        tokens = tokenize(text)
        rows = np.stack([
            seeded_unit_vector(
                f"{self.config.seed}:tok:{normalize_token(t) or t}", self.config.d_t
            )
            for t in tokens
        ])
        return TokenEmbeddings(rows, tuple(tokens))


class StubFrameEncoder:
    """Hash-seeded patch features keyed by (frame id, patch index)."""

    def __init__(self, config: EncoderConfig) -> None:
        self.config = config

    def encode_frame_patches(self, frame_ref: str) -> FramePatchFeatures:
        if not frame_ref:
            raise ValueError("frame reference must be nonempty")
        cfg = self.config
        rows = np.stack([
            seeded_unit_vector(f"{cfg.seed}:frame:{frame_ref}:patch:{i}", cfg.d_v)
            for i in range(cfg.n_patches)
        ])
        return FramePatchFeatures(rows)


class SidecarFrameEncoder:
    """Loads precomputed per-frame patch features from a sidecar file."""

    def __init__(self, path: str | Path) -> None:
        self.path = Path(path)
        self._index = read_sidecar(self.path)

    @property
    def n_patches(self) -> int:
        return self._index.n_patches

    @property
    def d_v(self) -> int:
        return self._index.d_v

    def encode_frame_patches(self, frame_ref: str) -> FramePatchFeatures:
        """Resolve a single frame. frame_ref is "<key>#<frame index>"."""
        key, sep, idx = frame_ref.rpartition("#")
        if not sep:
            raise KeyError(f"frame reference {frame_ref!r} must be '<key>#<index>'")
        frames = self._index.get(key)
        if frames is None:
            raise KeyError(f"feature key {key!r} not in sidecar {self.path}")
        i = int(idx)
        if not 0 <= i < frames.shape[0]:
            raise KeyError(f"frame index {i} out of range for key {key!r}")
        return FramePatchFeatures(frames[i])

    def frames_for(self, key: str) -> tuple[FramePatchFeatures, ...]:
        frames = self._index.get(key)
        if frames is None:
            raise KeyError(f"feature key {key!r} not in sidecar {self.path}")
        return tuple(FramePatchFeatures(f) for f in frames)


def make_frame_encoder(config: EncoderConfig) -> StubFrameEncoder | SidecarFrameEncoder:
    if config.kind == "sidecar":
        if not config.sidecar_path:
            raise ValueError("sidecar encoder requires sidecar_path")
        return SidecarFrameEncoder(config.sidecar_path)
    return StubFrameEncoder(config)


@dataclass(frozen=True)
class SidecarIndex:
    n_patches: int
    d_v: int
    entries: Mapping[str, np.ndarray]  # key -> (frames, n_patches, d_v) float32

    def get(self, key: str) -> np.ndarray | None:
        return self.entries.get(key)


def write_sidecar(path: str | Path, n_patches: int, d_v: int,
                  entries: Mapping[str, np.ndarray]) -> None:
    """Binary sidecar: magic, header (N, D_v), then per-key blocks of
    little-endian float32 rows, one row per patch per frame. Keys are
    written sorted so the file is byte-reproducible."""
    buf = io.BytesIO()
    buf.write(SIDECAR_MAGIC)
    buf.write(struct.pack("<II", n_patches, d_v))
    for key in sorted(entries):
        block = np.ascontiguousarray(entries[key], dtype="<f4")
        if block.ndim != 3 or block.shape[1:] != (n_patches, d_v):
            raise ValueError(
                f"entry {key!r} must be (frames, {n_patches}, {d_v}), got {block.shape}"
            )
        encoded = key.encode("utf-8")
        buf.write(struct.pack("<H", len(encoded)))
        buf.write(encoded)
        buf.write(struct.pack("<I", block.shape[0]))
        buf.write(block.tobytes())
    Path(path).write_bytes(buf.getvalue())


def read_sidecar(path: str | Path) -> SidecarIndex:
    raw = Path(path).read_bytes()
    if not raw.startswith(SIDECAR_MAGIC):
        raise ValueError(f"{path} is not a feature sidecar")
    off = len(SIDECAR_MAGIC)
    n_patches, d_v = struct.unpack_from("<II", raw, off)
    off += 8
    entries: dict[str, np.ndarray] = {}
    while off < len(raw):
        (key_len,) = struct.unpack_from("<H", raw, off)
        off += 2
        key = raw[off : off + key_len].decode("utf-8")
        off += key_len
        (n_frames,) = struct.unpack_from("<I", raw, off)
        off += 4
        count = n_frames * n_patches * d_v
        block = np.frombuffer(raw, dtype="<f4", count=count, offset=off)
        off += count * 4
        entries[key] = block.reshape(n_frames, n_patches, d_v)
    return SidecarIndex(n_patches, d_v, entries)


def sample_frames(video_length_s: float, rate_fps: float = 1.0,
                  max_frames: int = 18) -> tuple[int, ...]:
    """Frame indices under uniform sampling at `rate_fps`, capped at
    `max_frames` by evenly spaced selection with floor rounding. Output is
    strictly increasing and lies in [0, floor(video_length_s * rate_fps))."""
    if video_length_s <= 0:
        raise ValueError("video length must be positive")
    if rate_fps <= 0:
        raise ValueError("sampling rate must be positive")
    if max_frames < 1:
        raise ValueError("max_frames must be >= 1")
    count = math.floor(video_length_s * rate_fps)
    if count <= max_frames:
        return tuple(range(count))
    return tuple(math.floor(i * count / max_frames) for i in range(max_frames))


def subsample_indices(n_items: int, max_items: int) -> tuple[int, ...]:
    """Evenly spaced index selection used wherever a sequence must be
    shortened to a cap (same arithmetic as sample_frames)."""
    if n_items <= max_items:
        return tuple(range(n_items))
    return tuple(math.floor(i * n_items / max_items) for i in range(max_items))
