"""The cross-modal consistency network.

Per post: texts are token-embedded, gated by learned event-role vectors,
projected into a common subspace, and summarized per sentence by a masked
AoA stack; frames are summarized by a patch-level AoA stack with mean
pooling. Three cross-modal fusers produce pairwise relation embeddings
(video+screen-text vs speech, video+screen-text vs claim, claim vs speech),
each scored by an MLP+sigmoid head; an attention combiner over the three
scores yields the inconsistency probability, and the two lowest pair scores
localize the inconsistent modality.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from torch import Tensor, nn

from .corpus import VideoPost
from .encoders import subsample_indices
from .events import EventTagger, tag_events, to_alert_indices
from .layers import AoAEncoder, MaskedSelfAttention, TransformerLayer

logger = logging.getLogger(__name__)

PAIR_NAMES = ("video_speech", "video_claim", "claim_speech")
MODALITY_IDS = {"frame": 0, "screen": 1, "speech": 2, "claim": 3}
VARIANTS = ("full", "no_event_alert", "one_stream")

CHECKPOINT_FORMAT = "vtcheck-ckpt/1"
PROB_EPS = 1e-7


class CheckpointError(ValueError):
    """Checkpoint file is malformed or fails its integrity hash."""


@dataclass(frozen=True)
class ModelConfig:
    dim: int = 512
    text_dim: int = 768
    patch_dim: int = 512
    aoa_layers: int = 2
    aoa_heads: int = 4
    fuse_layers: int = 1
    fuse_heads: int = 4
    max_tokens: int = 64
    max_patches: int = 64
    max_fuse_len: int = 64
    text_positional: bool = True
    threshold: float = 0.5
    variant: str = "full"
    drop_pair: str | None = None
    combiner_zero_init: bool = False
    dtype: str = "float32"
    seed: int = 0

    def __post_init__(self) -> None:
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.drop_pair is not None and self.drop_pair not in PAIR_NAMES:
            raise ValueError(f"unknown drop_pair {self.drop_pair!r}")
        if self.drop_pair is not None and self.variant == "one_stream":
            raise ValueError("drop_pair does not apply to the one_stream variant")
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"unsupported dtype {self.dtype!r}")

    def torch_dtype(self) -> torch.dtype:
        return torch.float64 if self.dtype == "float64" else torch.float32

    def to_dict(self) -> dict:
        return asdict(self)

    def hash(self) -> str:
        payload = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class PairScores:
    video_speech: float
    video_claim: float
    claim_speech: float

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.video_speech, self.video_claim, self.claim_speech)


@dataclass(frozen=True)
class Verdict:
    post_id: str
    p_inconsistent: float
    predicted_label: str
    explanation: str  # {video, speech, claim, none}
    scores: PairScores


_COMMON_MODALITY = {
    frozenset({"video_speech", "claim_speech"}): "speech",
    frozenset({"video_speech", "video_claim"}): "video",
    frozenset({"video_claim", "claim_speech"}): "claim",
}


def explain(scores: PairScores, predicted_label: str = "inconsistent") -> str:
    """Name the modality shared by the two lowest-scoring pairs. Ties break
    in the fixed pair order (video_speech, video_claim, claim_speech)."""
    if predicted_label != "inconsistent":
        raise ValueError("explanations are defined only for inconsistent verdicts")
    ranked = sorted(zip(scores.as_tuple(), range(3)))
    lowest = frozenset(PAIR_NAMES[i] for _, i in ranked[:2])
    return _COMMON_MODALITY[lowest]


# --------------------------------------------------------------------------
# featurized inputs


@dataclass(frozen=True)
class TextInput:
    tokens: np.ndarray  # (L, text_dim)
    alert: tuple[int, ...]

    def __post_init__(self) -> None:
        if self.tokens.shape[0] != len(self.alert):
            raise ValueError("alert indices must align 1:1 with tokens")


@dataclass(frozen=True)
class PostInputs:
    post_id: str
    claim: TextInput
    speech: tuple[TextInput, ...]
    screen: tuple[TextInput, ...]
    frames: np.ndarray  # (n_frames, n_patches, patch_dim)
    label: str | None = None
    taxonomy: str | None = None


class Featurizer:
    """Turns a raw post into model inputs: token embeddings plus event-role
    indices per text, and the stacked frame-patch features."""

    def __init__(self, text_encoder, tagger: EventTagger, *,
                 max_frames: int = 18, max_tokens: int = 64) -> None:
        self.text_encoder = text_encoder
        self.tagger = tagger
        self.max_frames = max_frames
        self.max_tokens = max_tokens

    def _text(self, text: str) -> TextInput:
        emb = self.text_encoder.encode_text_tokens(text)
        structure = tag_events(text, self.tagger)
        alert = to_alert_indices(emb.token_strings, structure)
        tokens = emb.tokens
        if tokens.shape[0] > self.max_tokens:
            tokens = tokens[: self.max_tokens]
            alert = alert[: self.max_tokens]
        return TextInput(tokens, alert)

    def featurize(self, post: VideoPost) -> PostInputs:
        frame_stack = np.stack([f.patches for f in post.frames])
        keep = subsample_indices(len(post.frames), self.max_frames)
        return PostInputs(
            post_id=post.post_id,
            claim=self._text(post.claim),
            speech=tuple(self._text(s) for s in post.speech_sentences if s.strip()),
            screen=tuple(self._text(s) for s in post.screen_text_sentences if s.strip()),
            frames=frame_stack[list(keep)],
            label=post.label,
            taxonomy=post.taxonomy,
        )


# --------------------------------------------------------------------------
# network components


class CrossFuser(nn.Module):
    """Cross-modal transformer over [summary] + typed modality segments.

    Positions are indexed within each segment so a segment's padding never
    shifts another segment's content.
    """

    def __init__(self, dim: int, n_heads: int, n_layers: int, max_len: int) -> None:
        super().__init__()
        self.cls = nn.Parameter(torch.zeros(dim))
        self.type_table = nn.Parameter(torch.zeros(len(MODALITY_IDS), dim))
        self.pos = nn.Parameter(torch.zeros(max_len, dim))
        self.layers = nn.ModuleList(
            TransformerLayer(dim, n_heads) for _ in range(n_layers)
        )

    def forward(self, segments: Sequence[tuple[Tensor, Tensor, str]]) -> Tensor:
        present = [(x, valid, kind) for x, valid, kind in segments if x.shape[1] > 0]
        if not present:
            raise ValueError("cross-modal fusion needs at least one nonempty input")
        b = present[0][0].shape[0]
        parts = [self.cls.expand(b, 1, -1)]
        valids = [present[0][1].new_ones(b, 1)]
        for x, valid, kind in present:
            if x.shape[1] > self.pos.shape[0]:
                raise ValueError(
                    f"segment length {x.shape[1]} exceeds fuser capacity {self.pos.shape[0]}"
                )
            parts.append(x + self.type_table[MODALITY_IDS[kind]] + self.pos[: x.shape[1]])
            valids.append(valid)
        x = torch.cat(parts, dim=1)
        valid = torch.cat(valids, dim=1)
        for layer in self.layers:
            x = layer(x, valid)
        return x[:, 0]


class ScoreHead(nn.Module):
    """One hidden tanh layer then a sigmoid scalar in (0, 1)."""

    def __init__(self, dim: int) -> None:
        super().__init__()
        self.hidden = nn.Linear(dim, dim)
        self.out = nn.Linear(dim, 1)

    def forward(self, x: Tensor) -> Tensor:
        return torch.sigmoid(self.out(torch.tanh(self.hidden(x)))).squeeze(-1)


class ScoreCombiner(nn.Module):
    """Attention over the pairwise scores: each scalar is embedded with its
    pair-type vector, self-attended with a residual, mean-pooled, and mapped
    to one inconsistency probability. No normalization here: the prediction
    must stay sensitive to the scalar magnitudes."""

    def __init__(self, dim: int, n_heads: int) -> None:
        super().__init__()
        self.link_table = nn.Parameter(torch.zeros(3, dim))
        self.value_vec = nn.Parameter(torch.zeros(dim))
        self.attention = MaskedSelfAttention(dim, n_heads)
        self.out = nn.Linear(dim, 1)

    def forward(self, scores: Sequence[Tensor | None]) -> Tensor:
        tokens = []
        for i, s in enumerate(scores):
            if s is None:
                continue
            # center at the sigmoid midpoint so a neutral score contributes
            # nothing and the prediction starts unbiased
            tokens.append((s[:, None] - 0.5) * self.value_vec + self.link_table[i])
        if not tokens:
            raise ValueError("combiner needs at least one pair score")
        x = torch.stack(tokens, dim=1)
        valid = torch.ones(x.shape[0], x.shape[1], dtype=torch.bool, device=x.device)
        x = x + self.attention(x, valid)
        return torch.sigmoid(self.out(x.mean(dim=1))).squeeze(-1)


@dataclass
class ModelOutput:
    p_inconsistent: Tensor  # (B,)
    scores: dict[str, Tensor] | None  # each (B,), None for one_stream
    relations: dict[str, Tensor] | None  # each (B, dim)


class ConsistencyModel(nn.Module):
    def __init__(self, config: ModelConfig) -> None:
        super().__init__()
        self.config = config
        d, heads = config.dim, config.fuse_heads
        self.gate_table = nn.Parameter(torch.zeros(3, d))
        self.proj_claim = nn.Linear(config.text_dim, d, bias=False)
        self.proj_speech = nn.Linear(config.text_dim, d, bias=False)
        self.proj_screen = nn.Linear(config.text_dim, d, bias=False)
        self.proj_patch = nn.Linear(config.patch_dim, d, bias=False)
        self.pos_token = nn.Parameter(torch.zeros(config.max_tokens, d))
        self.pos_patch = nn.Parameter(torch.zeros(config.max_patches, d))
        self.text_aoa = AoAEncoder(d, config.aoa_heads, config.aoa_layers, with_cls=True)
        self.patch_aoa = AoAEncoder(d, config.aoa_heads, config.aoa_layers, with_cls=False)
        if config.variant == "one_stream":
            self.single_fuser = CrossFuser(d, heads, config.fuse_layers, config.max_fuse_len)
            self.single_head = ScoreHead(d)
        else:
            self.fuser_video_speech = CrossFuser(d, heads, config.fuse_layers, config.max_fuse_len)
            self.fuser_video_claim = CrossFuser(d, heads, config.fuse_layers, config.max_fuse_len)
            self.fuser_claim_speech = CrossFuser(d, heads, config.fuse_layers, config.max_fuse_len)
            self.head_video_speech = ScoreHead(d)
            self.head_video_claim = ScoreHead(d)
            self.head_claim_speech = ScoreHead(d)
            self.combiner = ScoreCombiner(d, heads)
        if config.variant == "no_event_alert":
            self.gate_table.requires_grad_(False)
        self.to(config.torch_dtype())
        self.reset_parameters(config.seed)

    # -- initialization ----------------------------------------------------

    def reset_parameters(self, seed: int) -> None:
        gen = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            for name, p in self.named_parameters():
                parts = name.split(".")
                if name == "gate_table":
                    # neutral multiplicative gate at init
                    p.copy_(1.0 + 0.02 * torch.randn(p.shape, generator=gen, dtype=p.dtype))
                elif parts[-1] == "weight" and parts[-2].startswith("norm"):
                    p.fill_(1.0)
                elif name.endswith("bias"):
                    p.zero_()
                elif p.dim() >= 2 and name.endswith("weight"):
                    fan_out, fan_in = p.shape[0], p.shape[1]
                    bound = math.sqrt(6.0 / (fan_in + fan_out))
                    p.uniform_(-bound, bound, generator=gen)
                else:
                    # cls/type/link/pos embeddings and value vectors
                    p.copy_(0.02 * torch.randn(p.shape, generator=gen, dtype=p.dtype))
            # the combiner reads scalar scores re-embedded as c*v + link; a
            # random output projection is near-orthogonal to v at D=512, so
            # start the read-out aligned with v to make the scores visible
            # to the objective from the first step
            if self.config.variant != "one_stream":
                scale = 1.0 / math.sqrt(self.config.dim)
                for p in (self.combiner.value_vec, self.combiner.link_table):
                    p.copy_(scale * torch.randn(p.shape, generator=gen, dtype=p.dtype))
                self.combiner.out.weight.copy_(3.0 * self.combiner.value_vec[None, :])
            if self.config.combiner_zero_init and self.config.variant != "one_stream":
                self.combiner.out.weight.zero_()
                self.combiner.out.bias.zero_()

    # -- spec-level operations ----------------------------------------------

    def alert_gate(self, indices: Sequence[int]) -> Tensor:
        """Per-token gate rows looked up from the 3-row table (all ones when
        the event-alert ablation is active)."""
        idx = torch.as_tensor(list(indices), dtype=torch.long)
        if idx.numel() and (idx.min() < 0 or idx.max() > 2):
            raise ValueError("alert indices must be in {0, 1, 2}")
        if self.config.variant == "no_event_alert":
            return torch.ones(len(indices), self.config.dim, dtype=self.dtype())
        return self.gate_table[idx]

    def gate_project(self, tokens: Tensor, gates: Tensor, kind: str = "claim") -> Tensor:
        """gate ⊙ tanh(W tokens) for one text's token matrix."""
        proj = {"claim": self.proj_claim, "speech": self.proj_speech,
                "screen": self.proj_screen}[kind]
        if tokens.shape[0] != gates.shape[0]:
            raise ValueError("tokens and gates must have equal length")
        return gates * torch.tanh(proj(tokens))

    def encode_frames(self, patches: Tensor, patch_valid: Tensor | None = None) -> Tensor:
        """Frame vectors from patch features (B, N, patch_dim): bounded
        projection, patch-position embeddings, AoA self-attention, mean pool
        over valid patches."""
        b, n, _ = patches.shape
        x = torch.tanh(self.proj_patch(patches)) + self.pos_patch[:n]
        if patch_valid is None:
            patch_valid = torch.ones(b, n, dtype=torch.bool, device=patches.device)
        return self.patch_aoa(x, patch_valid)

    def dtype(self) -> torch.dtype:
        return self.config.torch_dtype()

    # -- batched forward ----------------------------------------------------

    def _encode_all_texts(self, inputs: Sequence[PostInputs]) -> list[dict[str, list[Tensor]]]:
        """AoA-encode every sentence of every post in one padded batch.
        Returns, per post, the sentence vectors grouped by text kind."""
        entries: list[tuple[int, str, TextInput]] = []
        for pi, post in enumerate(inputs):
            entries.append((pi, "claim", post.claim))
            entries.extend((pi, "speech", t) for t in post.speech)
            entries.extend((pi, "screen", t) for t in post.screen)
        max_len = max(t.tokens.shape[0] for _, _, t in entries)
        if max_len > self.config.max_tokens:
            raise ValueError(f"text length {max_len} exceeds max_tokens {self.config.max_tokens}")

        dtype = self.dtype()
        rows = []
        valid = torch.zeros(len(entries), max_len, dtype=torch.bool)
        alert = torch.zeros(len(entries), max_len, dtype=torch.long)
        for ei, (_, _, t) in enumerate(entries):
            length = t.tokens.shape[0]
            padded = torch.zeros(max_len, t.tokens.shape[1], dtype=dtype)
            padded[:length] = torch.as_tensor(t.tokens, dtype=dtype)
            rows.append(padded)
            valid[ei, :length] = True
            alert[ei, :length] = torch.as_tensor(t.alert, dtype=torch.long)
        tokens = torch.stack(rows)

        projected = torch.zeros(len(entries), max_len, self.config.dim, dtype=dtype)
        for kind, proj in (("claim", self.proj_claim), ("speech", self.proj_speech),
                           ("screen", self.proj_screen)):
            sel = [ei for ei, (_, k, _) in enumerate(entries) if k == kind]
            if sel:
                projected[sel] = torch.tanh(proj(tokens[sel]))
        if self.config.variant == "no_event_alert":
            gates = torch.ones_like(projected)
        else:
            gates = self.gate_table[alert]
        x = gates * projected
        if self.config.text_positional:
            x = x + self.pos_token[:max_len]
        sentence_vecs = self.text_aoa(x, valid)

        grouped: list[dict[str, list[Tensor]]] = [
            {"claim": [], "speech": [], "screen": []} for _ in inputs
        ]
        for ei, (pi, kind, _) in enumerate(entries):
            grouped[pi][kind].append(sentence_vecs[ei])
        return grouped

    def _encode_all_frames(self, inputs: Sequence[PostInputs]) -> list[Tensor]:
        counts = [p.frames.shape[0] for p in inputs]
        stacked = torch.as_tensor(
            np.concatenate([p.frames for p in inputs]), dtype=self.dtype()
        )
        frame_vecs = self.encode_frames(stacked)
        out = []
        offset = 0
        for c in counts:
            out.append(frame_vecs[offset : offset + c])
            offset += c
        return out

    @staticmethod
    def _pad_segment(seqs: list[Tensor], dim: int, dtype: torch.dtype) -> tuple[Tensor, Tensor]:
        b = len(seqs)
        max_len = max((s.shape[0] for s in seqs), default=0)
        x = torch.zeros(b, max_len, dim, dtype=dtype)
        valid = torch.zeros(b, max_len, dtype=torch.bool)
        for i, s in enumerate(seqs):
            if s.shape[0]:
                x[i, : s.shape[0]] = s
                valid[i, : s.shape[0]] = True
        return x, valid

    def forward(self, inputs: Sequence[PostInputs]) -> ModelOutput:
        if not inputs:
            raise ValueError("forward needs at least one post")
        for post in inputs:
            if post.frames.ndim != 3 or post.frames.shape[0] < 1:
                raise ValueError(f"post {post.post_id}: frames must be (F, N, D_v)")
        dtype = self.dtype()
        grouped = self._encode_all_texts(inputs)
        frame_seqs = self._encode_all_frames(inputs)

        def seg(kind: str) -> tuple[Tensor, Tensor]:
            seqs = []
            for pi in range(len(inputs)):
                vecs = grouped[pi][kind]
                seqs.append(torch.stack(vecs) if vecs else torch.zeros(0, self.config.dim, dtype=dtype))
            return self._pad_segment(seqs, self.config.dim, dtype)

        frames = self._pad_segment(frame_seqs, self.config.dim, dtype)
        claim = seg("claim")
        speech = seg("speech")
        screen = seg("screen")

        if self.config.variant == "one_stream":
            rel = self.single_fuser([
                (frames[0], frames[1], "frame"),
                (screen[0], screen[1], "screen"),
                (speech[0], speech[1], "speech"),
                (claim[0], claim[1], "claim"),
            ])
            p = self.single_head(rel)
            return ModelOutput(p, None, {"single": rel})

        relations: dict[str, Tensor | None] = {}
        score_list: list[Tensor | None] = []
        fusers = {
            "video_speech": (self.fuser_video_speech, self.head_video_speech,
                             [(frames, "frame"), (screen, "screen"), (speech, "speech")]),
            "video_claim": (self.fuser_video_claim, self.head_video_claim,
                            [(frames, "frame"), (screen, "screen"), (claim, "claim")]),
            "claim_speech": (self.fuser_claim_speech, self.head_claim_speech,
                             [(claim, "claim"), (speech, "speech")]),
        }
        for name in PAIR_NAMES:
            if self.config.drop_pair == name:
                relations[name] = None
                score_list.append(None)
                continue
            fuser, head, segments = fusers[name]
            rel = fuser([(x, valid, kind) for (x, valid), kind in segments])
            relations[name] = rel
            score_list.append(head(rel))

        p = self.combiner(score_list)
        scores = {name: s for name, s in zip(PAIR_NAMES, score_list) if s is not None}
        return ModelOutput(p, scores, {k: v for k, v in relations.items() if v is not None})

    # -- convenience wrappers -------------------------------------------------

    def loss(self, inputs: Sequence[PostInputs], labels: Sequence[int]) -> Tensor:
        """Clamped binary cross-entropy on the inconsistency probability."""
        out = self.forward(inputs)
        y = torch.as_tensor(list(labels), dtype=self.dtype())
        p = out.p_inconsistent.clamp(PROB_EPS, 1.0 - PROB_EPS)
        return -(y * torch.log(p) + (1.0 - y) * torch.log(1.0 - p)).mean()

    @torch.no_grad()
    def predict(self, inputs: Sequence[PostInputs]) -> list[Verdict]:
        if self.config.variant == "one_stream" or self.config.drop_pair is not None:
            raise ValueError("verdicts with explanations need the full pairwise variant")
        out = self.forward(inputs)
        verdicts = []
        for i, post in enumerate(inputs):
            p = float(out.p_inconsistent[i])
            scores = PairScores(*(float(out.scores[name][i]) for name in PAIR_NAMES))
            if p >= self.config.threshold:
                label, reason = "inconsistent", explain(scores)
            else:
                label, reason = "consistent", "none"
            verdicts.append(Verdict(post.post_id, p, label, reason, scores))
        return verdicts

    @torch.no_grad()
    def predict_proba(self, inputs: Sequence[PostInputs]) -> np.ndarray:
        return self.forward(inputs).p_inconsistent.numpy()


# --------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path: str | Path, model: ConsistencyModel) -> None:
    """Named tensors plus config and its hash; header line of JSON followed
    by raw little-endian tensor bytes in name order. Byte-reproducible for
    identical parameters."""
    state = model.state_dict()
    names = sorted(state)
    header = {
        "format": CHECKPOINT_FORMAT,
        "config": model.config.to_dict(),
        "config_hash": model.config.hash(),
        "tensors": [
            {"name": n, "shape": list(state[n].shape),
             "dtype": str(state[n].detach().numpy().dtype)}
            for n in names
        ],
    }
    blob = bytearray()
    blob += json.dumps(header, sort_keys=True).encode("utf-8")
    blob += b"\n"
    for n in names:
        arr = state[n].detach().numpy()
        blob += np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<")).tobytes()
    Path(path).write_bytes(bytes(blob))


def load_checkpoint(path: str | Path) -> ConsistencyModel:
    raw = Path(path).read_bytes()
    newline = raw.find(b"\n")
    if newline < 0:
        raise CheckpointError(f"{path}: missing checkpoint header")
    try:
        header = json.loads(raw[:newline])
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: malformed header: {exc}") from exc
    if header.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path}: not a {CHECKPOINT_FORMAT} checkpoint")
    config = ModelConfig(**header["config"])
    if config.hash() != header.get("config_hash"):
        raise CheckpointError(f"{path}: config hash mismatch")
    model = ConsistencyModel(config)
    state = model.state_dict()
    offset = newline + 1
    loaded = {}
    for spec in header["tensors"]:
        name, shape = spec["name"], tuple(spec["shape"])
        dtype = np.dtype(spec["dtype"]).newbyteorder("<")
        count = int(np.prod(shape)) if shape else 1
        end = offset + count * dtype.itemsize
        if end > len(raw):
            raise CheckpointError(f"{path}: truncated tensor data for {name}")
        arr = np.frombuffer(raw, dtype=dtype, count=count, offset=offset).reshape(shape)
        loaded[name] = torch.as_tensor(arr.copy())
        offset = end
    if offset != len(raw):
        raise CheckpointError(f"{path}: trailing bytes after tensor data")
    if set(loaded) != set(state):
        raise CheckpointError(f"{path}: tensor names do not match the configured model")
    model.load_state_dict(loaded)
    return model
