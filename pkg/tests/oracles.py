"""Independent numpy re-implementations used as test oracles.

These unroll the attention arithmetic step by step from module parameters,
sharing no code with the package's torch forward path.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf


def np_param(module, name: str) -> np.ndarray:
    tensor = dict(module.named_parameters())[name]
    return tensor.detach().numpy().astype(np.float64)


def np_linear(x: np.ndarray, weight: np.ndarray, bias: np.ndarray | None) -> np.ndarray:
    out = x @ weight.T
    if bias is not None:
        out = out + bias
    return out


def np_sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-x))


def np_gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + erf(x / np.sqrt(2.0)))


def np_layernorm(x: np.ndarray, weight: np.ndarray, bias: np.ndarray,
                 eps: float = 1e-5) -> np.ndarray:
    mean = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mean) / np.sqrt(var + eps) * weight + bias


def np_masked_mha(x: np.ndarray, valid: np.ndarray, att_module) -> np.ndarray:
    """x: (L, D); valid: (L,) bool; mirrors MaskedSelfAttention on batch 1."""
    n_heads = att_module.n_heads
    head_dim = att_module.head_dim
    length, dim = x.shape
    q = np_linear(x, np_param(att_module, "q.weight"), np_param(att_module, "q.bias"))
    k = np_linear(x, np_param(att_module, "k.weight"), np_param(att_module, "k.bias"))
    v = np_linear(x, np_param(att_module, "v.weight"), np_param(att_module, "v.bias"))
    out = np.zeros((length, dim))
    for h in range(n_heads):
        sl = slice(h * head_dim, (h + 1) * head_dim)
        scores = q[:, sl] @ k[:, sl].T / np.sqrt(head_dim)
        scores[:, ~valid] = -np.inf
        shifted = scores - scores.max(axis=-1, keepdims=True)
        weights = np.exp(shifted)
        weights = weights / weights.sum(axis=-1, keepdims=True)
        out[:, sl] = weights @ v[:, sl]
    return np_linear(out, np_param(att_module, "out.weight"), np_param(att_module, "out.bias"))


def np_aoa_layer(x: np.ndarray, valid: np.ndarray, layer) -> np.ndarray:
    attended = np_masked_mha(x, valid, layer.attention)
    joint = np.concatenate([x, attended], axis=-1)
    info = np_linear(joint, np_param(layer, "info.weight"), np_param(layer, "info.bias"))
    gate = np_sigmoid(np_linear(joint, np_param(layer, "gate.weight"),
                                np_param(layer, "gate.bias")))
    return np_layernorm(x + gate * info, np_param(layer, "norm.weight"),
                        np_param(layer, "norm.bias"))


def np_aoa_encoder(x: np.ndarray, valid: np.ndarray, encoder) -> np.ndarray:
    """Returns the summary vector: cls output or mean over valid positions."""
    if encoder.with_cls:
        cls = np_param(encoder, "cls")
        x = np.concatenate([cls[None, :], x], axis=0)
        valid = np.concatenate([[True], valid])
    for layer in encoder.layers:
        x = np_aoa_layer(x, valid, layer)
    if encoder.with_cls:
        return x[0]
    weights = valid.astype(np.float64)
    return (x * weights[:, None]).sum(axis=0) / weights.sum()


def np_transformer_layer(x: np.ndarray, valid: np.ndarray, layer) -> np.ndarray:
    y = np_layernorm(x + np_masked_mha(x, valid, layer.attention),
                     np_param(layer, "norm1.weight"), np_param(layer, "norm1.bias"))
    h = np_linear(y, np_param(layer, "ffn.0.weight"), np_param(layer, "ffn.0.bias"))
    h = np_gelu(h)
    h = np_linear(h, np_param(layer, "ffn.2.weight"), np_param(layer, "ffn.2.bias"))
    return np_layernorm(y + h, np_param(layer, "norm2.weight"),
                        np_param(layer, "norm2.bias"))


def np_cross_fuser(segments, fuser, modality_ids) -> np.ndarray:
    """segments: list of (array (L, D), valid (L,), kind)."""
    cls = np_param(fuser, "cls")
    type_table = np_param(fuser, "type_table")
    pos = np_param(fuser, "pos")
    parts = [cls[None, :]]
    valids = [np.array([True])]
    for x, valid, kind in segments:
        if x.shape[0] == 0:
            continue
        parts.append(x + type_table[modality_ids[kind]] + pos[: x.shape[0]])
        valids.append(np.asarray(valid, dtype=bool))
    x = np.concatenate(parts, axis=0)
    valid = np.concatenate(valids)
    for layer in fuser.layers:
        x = np_transformer_layer(x, valid, layer)
    return x[0]


def np_score_head(x: np.ndarray, head) -> float:
    hidden = np.tanh(np_linear(x, np_param(head, "hidden.weight"),
                               np_param(head, "hidden.bias")))
    return float(np_sigmoid(np_linear(hidden, np_param(head, "out.weight"),
                                      np_param(head, "out.bias")))[0])


def np_combiner(scores: list[float | None], combiner) -> float:
    link = np_param(combiner, "link_table")
    value_vec = np_param(combiner, "value_vec")
    tokens = [(s - 0.5) * value_vec + link[i] for i, s in enumerate(scores) if s is not None]
    x = np.stack(tokens)
    valid = np.ones(x.shape[0], dtype=bool)
    x = x + np_masked_mha(x, valid, combiner.attention)
    pooled = x.mean(axis=0)
    return float(np_sigmoid(np_linear(pooled, np_param(combiner, "out.weight"),
                                      np_param(combiner, "out.bias")))[0])
