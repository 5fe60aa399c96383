"""Representation-producing math: context/cause encoding, the
sensible-rational fusion attention, per-relation knowledge encoding, and
analysis-text encoding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, concat, embedding, parameter, softmax
from .corpus import CLS_ID, Vocab
from .knowledge import RELATIONS, KnowledgeBundle
from .layers import EncoderLayer, sinusoidal_positions

DEFAULT_MAX_ANALYSIS_LEN = 128


@dataclass
class FusionParams:
    """Square query/key/value maps for the fusion attention."""

    w_q: Tensor
    w_k: Tensor
    w_v: Tensor

    @classmethod
    def create(cls, rng: np.random.Generator, d: int) -> "FusionParams":
        # Seeded uniform(-1/sqrt(d), 1/sqrt(d)).
        s = 1.0 / math.sqrt(d)
        return cls(
            w_q=parameter(rng.uniform(-s, s, (d, d))),
            w_k=parameter(rng.uniform(-s, s, (d, d))),
            w_v=parameter(rng.uniform(-s, s, (d, d))),
        )

    def parameters(self) -> dict[str, Tensor]:
        return {"w_q": self.w_q, "w_k": self.w_k, "w_v": self.w_v}


class EncoderStack:
    """Token embeddings, fixed sinusoidal positions, post-norm layers."""

    def __init__(
        self,
        rng: np.random.Generator,
        vocab_size: int,
        d: int,
        layers: int,
        heads: int,
        ffn_mult: int = 4,
        dropout: float = 0.1,
        max_len: int = 512,
    ):
        self.vocab_size = vocab_size
        self.d = d
        self.dropout = dropout
        self.token_embedding = parameter(rng.normal(0.0, 0.02, (vocab_size, d)))
        self.positions = sinusoidal_positions(max_len, d)
        self.layers = [EncoderLayer(rng, d, heads, ffn_mult) for _ in range(layers)]

    def encode(self, ids: list[int], rng: np.random.Generator | None = None) -> Tensor:
        if not ids:
            raise ValueError("cannot encode an empty id sequence")
        if max(ids) >= self.vocab_size or min(ids) < 0:
            raise ValueError(f"token id out of range for vocab of {self.vocab_size}")
        drop = self.dropout if rng is not None else 0.0
        x = embedding(self.token_embedding, ids) + Tensor(self.positions[: len(ids)])
        for layer in self.layers:
            x = layer(x, drop, rng)
        return x

    def parameters(self) -> dict[str, Tensor]:
        out = {"token_embedding": self.token_embedding}
        for i, layer in enumerate(self.layers):
            for k, v in layer.parameters().items():
                out[f"layers.{i}.{k}"] = v
        return out


def encode_context(ids: list[int], stack: EncoderStack, rng=None) -> Tensor:
    """Context representation over the flattened dialogue ids."""
    return stack.encode(ids, rng)


def encode_cause(ids: list[int], stack: EncoderStack, rng=None) -> Tensor:
    """Cause representation over the separator-joined cause utterances."""
    return stack.encode(ids, rng)


def fuse_sensible(
    context_rep: Tensor,
    cause_rep: Tensor,
    params: FusionParams,
    return_attention: bool = False,
):
    """Single-head attention of context queries over cause keys/values.

    fused = softmax((X Wq^T)(C Wk^T)^T / sqrt(2 d)) (C Wv^T)

    Row count of the output equals the context length; each attention row
    is a probability vector over the cause tokens. Note the scale is
    sqrt(2*d), not the usual sqrt(d).
    """
    if context_rep.shape[1] != cause_rep.shape[1]:
        raise ValueError(
            f"width mismatch: context {context_rep.shape[1]} vs cause {cause_rep.shape[1]}"
        )
    d = context_rep.shape[1]
    q = context_rep @ params.w_q.swapaxes(0, 1)
    k = cause_rep @ params.w_k.swapaxes(0, 1)
    v = cause_rep @ params.w_v.swapaxes(0, 1)
    scores = (q @ k.swapaxes(0, 1)) * (1.0 / math.sqrt(2.0 * d))
    attention = softmax(scores, axis=-1)
    fused = attention @ v
    if return_attention:
        return fused, attention
    return fused


def relation_token_ids(bundle: KnowledgeBundle, vocab: Vocab) -> list[list[int]]:
    """Per-relation id lists in fixed relation order, each prefixed with <cls>."""
    return [[CLS_ID] + vocab.encode_text(text) for text in bundle.texts_in_order()]


def relation_cls_positions(token_lists: list[list[int]]) -> list[int]:
    """Row indices of the five summary tokens inside the stacked encoding."""
    positions, offset = [], 0
    for ids in token_lists:
        positions.append(offset)
        offset += len(ids)
    return positions


def encode_relations(
    bundle_or_ids,
    stack: EncoderStack,
    vocab: Vocab | None = None,
    rng=None,
) -> Tensor:
    """Encode each relation sequence separately and stack the outputs row-wise.

    Total row count is the summed token count plus one summary row per
    relation.
    """
    if isinstance(bundle_or_ids, KnowledgeBundle):
        if vocab is None:
            raise ValueError("vocab required to tokenize a bundle")
        token_lists = relation_token_ids(bundle_or_ids, vocab)
    else:
        token_lists = bundle_or_ids
    if len(token_lists) != len(RELATIONS):
        raise ValueError(f"expected {len(RELATIONS)} relation sequences")
    return concat([stack.encode(ids, rng) for ids in token_lists], axis=0)


def analysis_token_ids(
    text: str, vocab: Vocab, max_len: int = DEFAULT_MAX_ANALYSIS_LEN
) -> list[int]:
    """<cls>-prefixed analysis ids, head-truncated; the summary row survives."""
    if not text.strip():
        raise ValueError("empty analysis text")
    ids = [CLS_ID] + vocab.encode_text(text)
    return ids[:max_len]


def encode_analysis(
    text_or_ids,
    stack: EncoderStack,
    vocab: Vocab | None = None,
    max_len: int = DEFAULT_MAX_ANALYSIS_LEN,
    rng=None,
) -> Tensor:
    if isinstance(text_or_ids, str):
        if vocab is None:
            raise ValueError("vocab required to tokenize analysis text")
        ids = analysis_token_ids(text_or_ids, vocab, max_len)
    else:
        ids = text_or_ids
    return stack.encode(ids, rng)
