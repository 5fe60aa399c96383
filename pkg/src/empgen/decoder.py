"""Tri-stream decoder: memory assembly over the fused context, knowledge
and analysis representations, teacher-forced NLL, and token-by-token
generation (greedy or beam).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, concat, embedding, log_softmax, take_per_row
from .corpus import BOS_ID, EOS_ID, Vocab
from .layers import DecoderLayer, Linear, causal_mask, sinusoidal_positions

SEGMENT_CONTEXT, SEGMENT_KNOWLEDGE, SEGMENT_ANALYSIS = 0, 1, 2
NUM_SEGMENTS = 3

DEFAULT_MAX_GEN_LEN = 32


@dataclass
class DecoderMemory:
    """Row-stacked memory with per-row segment ids.

    Row order is fixed: context rows, then knowledge rows, then analysis
    rows. Disabled streams are simply absent.
    """

    values: Tensor
    segment_ids: np.ndarray

    def segment_histogram(self) -> dict[int, int]:
        ids, counts = np.unique(self.segment_ids, return_counts=True)
        return {int(i): int(c) for i, c in zip(ids, counts)}

    def rows_of(self, segment: int) -> np.ndarray:
        return self.values.data[self.segment_ids == segment]


def assemble_memory(
    context_rep: Tensor,
    knowledge_rep: Tensor | None = None,
    analysis_rep: Tensor | None = None,
) -> DecoderMemory:
    parts = [context_rep]
    segments = [np.full(context_rep.shape[0], SEGMENT_CONTEXT, dtype=np.int64)]
    d = context_rep.shape[1]
    for rep, seg in ((knowledge_rep, SEGMENT_KNOWLEDGE), (analysis_rep, SEGMENT_ANALYSIS)):
        if rep is None:
            continue
        if rep.shape[1] != d:
            raise ValueError(f"width mismatch in memory: {rep.shape[1]} vs {d}")
        parts.append(rep)
        segments.append(np.full(rep.shape[0], seg, dtype=np.int64))
    values = concat(parts, axis=0) if len(parts) > 1 else parts[0]
    return DecoderMemory(values, np.concatenate(segments))


class DecoderStack:
    """Masked self-attention plus cross-attention over the segment-tagged memory."""

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
        token_embedding: Tensor | None = None,
    ):
        from .autodiff import parameter

        self.vocab_size = vocab_size
        self.d = d
        self.dropout = dropout
        self.token_embedding = (
            token_embedding
            if token_embedding is not None
            else parameter(rng.normal(0.0, 0.02, (vocab_size, d)))
        )
        self.segment_embedding = parameter(rng.normal(0.0, 0.02, (NUM_SEGMENTS, d)))
        self.positions = sinusoidal_positions(max_len, d)
        self.layers = [DecoderLayer(rng, d, heads, ffn_mult) for _ in range(layers)]
        self.out_proj = Linear(rng, d, vocab_size)

    def forward(
        self,
        input_ids: list[int],
        memory: DecoderMemory,
        rng: np.random.Generator | None = None,
    ) -> Tensor:
        """Logits over the vocabulary for every input position."""
        if not input_ids:
            raise ValueError("decoder needs at least one input token")
        drop = self.dropout if rng is not None else 0.0
        m = len(input_ids)
        x = embedding(self.token_embedding, input_ids) + Tensor(self.positions[:m])
        mem = memory.values + embedding(self.segment_embedding, memory.segment_ids)
        mask = causal_mask(m)
        for layer in self.layers:
            x = layer(x, mem, mask, drop, rng)
        return self.out_proj(x)

    def parameters(self) -> dict[str, Tensor]:
        out = {
            "token_embedding": self.token_embedding,
            "segment_embedding": self.segment_embedding,
        }
        for i, layer in enumerate(self.layers):
            for k, v in layer.parameters().items():
                out[f"layers.{i}.{k}"] = v
        for k, v in self.out_proj.parameters().items():
            out[f"out_proj.{k}"] = v
        return out


def nll_loss(
    target_ids: list[int],
    memory: DecoderMemory,
    stack: DecoderStack,
    rng: np.random.Generator | None = None,
) -> tuple[Tensor, np.ndarray]:
    """Teacher-forced negative log-likelihood, summed over target positions.

    Returns the scalar sum (a graph node) and the per-token values used
    for perplexity.
    """
    if not target_ids:
        raise ValueError("empty target")
    input_ids = [BOS_ID] + list(target_ids[:-1])
    logits = stack.forward(input_ids, memory, rng)
    logp = log_softmax(logits, axis=-1)
    picked = take_per_row(logp, target_ids)
    total = -picked.sum()
    per_token = -picked.data[:, 0].copy()
    return total, per_token


@dataclass
class GeneratedResponse:
    ids: list[int]
    text: str
    log_probs: list[float]


def greedy_decode(step_fn, eos_id: int, max_len: int, bos_id: int = BOS_ID):
    """Argmax decoding; exact ties resolve to the lowest token id."""
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    ids: list[int] = []
    log_probs: list[float] = []
    while len(ids) < max_len:
        lp = step_fn([bos_id] + ids)
        tok = int(np.argmax(lp))
        ids.append(tok)
        log_probs.append(float(lp[tok]))
        if tok == eos_id:
            break
    return ids, log_probs


def beam_decode(step_fn, k: int, eos_id: int, max_len: int, bos_id: int = BOS_ID):
    """Beam search over summed log-probs, length-normalized at final selection.

    Candidate ordering breaks ties by token id then parent rank, so
    beam(1) reproduces greedy decoding exactly.
    """
    if k < 1:
        raise ValueError("beam size must be >= 1")
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    live: list[tuple[tuple[int, ...], float]] = [((), 0.0)]
    finished: list[tuple[tuple[int, ...], float]] = []
    for _ in range(max_len):
        if not live:
            break
        candidates = []
        for rank, (ids, score) in enumerate(live):
            lp = step_fn([bos_id] + list(ids))
            for tok in range(len(lp)):
                candidates.append((score + float(lp[tok]), tok, rank, ids))
        candidates.sort(key=lambda c: (-c[0], c[1], c[2]))
        live = []
        for score, tok, _rank, ids in candidates[: k]:
            seq = ids + (tok,)
            if tok == eos_id:
                finished.append((seq, score))
            else:
                live.append((seq, score))
    finished.extend(live)  # hypotheses cut off at max_len count as ended
    best = min(finished, key=lambda h: (-h[1] / len(h[0]), h[0]))
    return list(best[0]), best[1]


def generate(
    memory: DecoderMemory,
    stack: DecoderStack,
    vocab: Vocab | None = None,
    strategy: str = "greedy",
    beam_size: int = 3,
    max_gen_len: int = DEFAULT_MAX_GEN_LEN,
) -> GeneratedResponse:
    def step_fn(prefix: list[int]) -> np.ndarray:
        logits = stack.forward(prefix, memory)
        row = logits.data[-1]
        z = row - row.max()
        return z - np.log(np.exp(z).sum())

    if strategy == "greedy":
        ids, log_probs = greedy_decode(step_fn, EOS_ID, max_gen_len)
    elif strategy == "beam":
        ids, _score = beam_decode(step_fn, beam_size, EOS_ID, max_gen_len)
        log_probs = []
        for t in range(len(ids)):
            lp = step_fn([BOS_ID] + ids[:t])
            log_probs.append(float(lp[ids[t]]))
    else:
        raise ValueError(f"unknown decoding strategy {strategy!r}")
    text = vocab.decode(ids) if vocab is not None else ""
    return GeneratedResponse(ids, text, log_probs)
