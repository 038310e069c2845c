"""Dual-encoder retriever: a question tower and a context tower, each a small
pre-norm transformer pooled at the first position, scored by dot product.

The towers share no parameters, so either side can be frozen without
touching the other. Single-sequence encoding is the bit-exact path used for
indexing and retrieval; padded batch encoding exists for training throughput
and carries no bitwise contract.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import DimensionError, DomainError, FormatError
from .text import CLS_ID, PAD_ID, SEP_ID, Vocabulary

INIT_STD = 0.02
LN_EPS = 1e-5


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int
    layers: int = 2
    hidden_size: int = 64
    heads: int = 4
    max_seq_len: int = 256

    def __post_init__(self):
        if self.layers < 1:
            raise DomainError(f"layers must be >= 1, got {self.layers}")
        if self.hidden_size < 8:
            raise DomainError(f"hidden_size must be >= 8, got {self.hidden_size}")
        if self.hidden_size % self.heads != 0:
            raise DomainError(
                f"heads ({self.heads}) must divide hidden_size ({self.hidden_size})"
            )
        if self.max_seq_len < 1:
            raise DomainError(f"max_seq_len must be >= 1, got {self.max_seq_len}")
        if self.vocab_size < 7:
            raise DomainError("vocab_size must cover the reserved token block")

    def to_dict(self) -> dict:
        return {
            "vocab_size": self.vocab_size,
            "layers": self.layers,
            "hidden_size": self.hidden_size,
            "heads": self.heads,
            "max_seq_len": self.max_seq_len,
        }


def truncated_normal(
    rng: np.random.Generator, shape: tuple[int, ...], std: float = INIT_STD
) -> np.ndarray:
    """Normal(0, std) with values beyond 2 std redrawn."""
    x = rng.normal(0.0, std, size=shape)
    bad = np.abs(x) > 2 * std
    while bad.any():
        x[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(x) > 2 * std
    return x


def layer_norm(x: ad.Tensor, gain: ad.Parameter, bias: ad.Parameter) -> ad.Tensor:
    mean = ad.reduce_mean(x, axis=-1, keepdims=True)
    centered = x - mean
    var = ad.reduce_mean(ad.mul(centered, centered), axis=-1, keepdims=True)
    inv = ad.power(var + ad.Tensor(np.array(LN_EPS)), -0.5)
    return ad.mul(centered, inv) * gain + bias


class TransformerEncoder:
    """Pre-norm transformer over token ids; pooled output is position 0."""

    def __init__(self, config: EncoderConfig, rng: np.random.Generator, prefix: str):
        self.config = config
        self.prefix = prefix
        d, v = config.hidden_size, config.vocab_size
        ff = 4 * d
        p: dict[str, ad.Parameter] = {}

        def param(name: str, values) -> ad.Parameter:
            p[name] = ad.Parameter(values, name=f"{prefix}.{name}")
            return p[name]

        param("token_emb", truncated_normal(rng, (v, d)))
        param("pos_emb", truncated_normal(rng, (config.max_seq_len, d)))
        for i in range(config.layers):
            for mat in ("wq", "wk", "wv", "wo"):
                param(f"layer{i}.{mat}", truncated_normal(rng, (d, d)))
                param(f"layer{i}.{mat}_b", np.zeros(d))
            param(f"layer{i}.ln1_g", np.ones(d))
            param(f"layer{i}.ln1_b", np.zeros(d))
            param(f"layer{i}.ln2_g", np.ones(d))
            param(f"layer{i}.ln2_b", np.zeros(d))
            param(f"layer{i}.w1", truncated_normal(rng, (d, ff)))
            param(f"layer{i}.w1_b", np.zeros(ff))
            param(f"layer{i}.w2", truncated_normal(rng, (ff, d)))
            param(f"layer{i}.w2_b", np.zeros(d))
        param("final_ln_g", np.ones(d))
        param("final_ln_b", np.zeros(d))
        self.params = p

    def parameters(self) -> list[ad.Parameter]:
        return list(self.params.values())

    def _attention(self, h: ad.Tensor, i: int, mask: np.ndarray) -> ad.Tensor:
        cfg = self.config
        d, n_heads = cfg.hidden_size, cfg.heads
        dh = d // n_heads
        b, t, _ = h.shape
        p = self.params

        def heads(x: ad.Tensor) -> ad.Tensor:
            return ad.transpose(ad.reshape(x, (b, t, n_heads, dh)), (0, 2, 1, 3))

        q = heads(ad.matmul(h, p[f"layer{i}.wq"]) + p[f"layer{i}.wq_b"])
        k = heads(ad.matmul(h, p[f"layer{i}.wk"]) + p[f"layer{i}.wk_b"])
        v = heads(ad.matmul(h, p[f"layer{i}.wv"]) + p[f"layer{i}.wv_b"])
        scores = ad.scale(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dh))
        weights = ad.softmax(scores, mask=mask)
        mixed = ad.reshape(ad.transpose(ad.matmul(weights, v), (0, 2, 1, 3)), (b, t, d))
        return ad.matmul(mixed, p[f"layer{i}.wo"]) + p[f"layer{i}.wo_b"]

    def _ffn(self, h: ad.Tensor, i: int) -> ad.Tensor:
        p = self.params
        inner = ad.gelu(ad.matmul(h, p[f"layer{i}.w1"]) + p[f"layer{i}.w1_b"])
        return ad.matmul(inner, p[f"layer{i}.w2"]) + p[f"layer{i}.w2_b"]

    def forward(self, token_ids: np.ndarray) -> ad.Tensor:
        """(B, T) padded int ids -> (B, T, d) hidden states."""
        token_ids = np.asarray(token_ids, dtype=np.int64)
        if token_ids.ndim != 2:
            raise DimensionError("forward expects a (batch, time) id matrix")
        b, t = token_ids.shape
        if t > self.config.max_seq_len:
            raise DimensionError(
                f"sequence length {t} exceeds max_seq_len {self.config.max_seq_len}"
            )
        p = self.params
        h = ad.embedding(p["token_emb"], token_ids) + ad.embedding(
            p["pos_emb"], np.arange(t)
        )
        # additive mask: [PAD] key positions get MASK_NEG in every attention row
        pad_cols = (token_ids == PAD_ID)[:, None, None, :]
        mask = np.where(pad_cols, ad.MASK_NEG, 0.0)
        for i in range(self.config.layers):
            h = h + self._attention(layer_norm(h, p[f"layer{i}.ln1_g"], p[f"layer{i}.ln1_b"]), i, mask)
            h = h + self._ffn(layer_norm(h, p[f"layer{i}.ln2_g"], p[f"layer{i}.ln2_b"]), i)
        return layer_norm(h, p["final_ln_g"], p["final_ln_b"])

    def encode(self, token_ids: Sequence[int]) -> ad.Tensor:
        """Single sequence -> pooled (d,) vector; deterministic and batch-free."""
        ids = list(token_ids)
        truncated_from = None
        if len(ids) > self.config.max_seq_len:
            truncated_from = len(ids)
            ids = ids[: self.config.max_seq_len]
        if not ids:
            raise DomainError("cannot encode an empty token sequence")
        h = self.forward(np.array([ids], dtype=np.int64))
        pooled = ad.reshape(ad.take_position(h, 0), (self.config.hidden_size,))
        if truncated_from is not None:
            pooled.meta = {"truncated_from": truncated_from}
        return pooled

    def encode_batch(self, sequences: Sequence[Sequence[int]]) -> ad.Tensor:
        """Pad to the batch maximum and pool position 0 -> (B, d).

        Sequences longer than max_seq_len are head-truncated.
        """
        if not sequences:
            raise DomainError("cannot encode an empty batch")
        clipped = [list(s)[: self.config.max_seq_len] for s in sequences]
        if any(not s for s in clipped):
            raise DomainError("cannot encode an empty token sequence")
        t = max(len(s) for s in clipped)
        ids = np.full((len(clipped), t), PAD_ID, dtype=np.int64)
        for row, seq in enumerate(clipped):
            ids[row, : len(seq)] = seq
        return ad.take_position(self.forward(ids), 0)


def question_input(question_tokens: Sequence[int]) -> list[int]:
    return [CLS_ID] + list(question_tokens)


def context_input(title_tokens: Sequence[int], text_tokens: Sequence[int]) -> list[int]:
    return [CLS_ID] + list(title_tokens) + [SEP_ID] + list(text_tokens)


class DualEncoder:
    """Question tower and context tower with disjoint parameters."""

    def __init__(self, config: EncoderConfig, seed: int = 0):
        self.config = config
        rng = np.random.default_rng(seed)
        self.question_encoder = TransformerEncoder(config, rng, prefix="q")
        self.context_encoder = TransformerEncoder(config, rng, prefix="z")

    def parameters(self) -> list[ad.Parameter]:
        return self.question_encoder.parameters() + self.context_encoder.parameters()

    def encode_question(self, question_tokens: Sequence[int]) -> ad.Tensor:
        return self.question_encoder.encode(question_input(question_tokens))

    def encode_context(
        self, title_tokens: Sequence[int], text_tokens: Sequence[int]
    ) -> ad.Tensor:
        return self.context_encoder.encode(context_input(title_tokens, text_tokens))

    def encode_document(self, doc, vocab: Vocabulary) -> ad.Tensor:
        return self.encode_context(vocab.encode(doc.title), doc.tokens)

    def save(self, path) -> None:
        arrays = {p.name: p.data for p in self.parameters()}
        save_checkpoint(path, {"kind": "dual_encoder", **self.config.to_dict()}, arrays)

    @classmethod
    def load(cls, path) -> "DualEncoder":
        config, arrays = load_checkpoint(path)
        if config.get("kind") != "dual_encoder":
            raise FormatError(f"{path}: checkpoint kind {config.get('kind')!r} is not dual_encoder")
        cfg = EncoderConfig(**{k: v for k, v in config.items() if k != "kind"})
        model = cls(cfg, seed=0)
        _restore(model.parameters(), arrays, path)
        return model


def _restore(params: Sequence[ad.Parameter], arrays: dict[str, np.ndarray], path) -> None:
    names = {p.name for p in params}
    missing = names - set(arrays)
    extra = set(arrays) - names
    if missing or extra:
        raise FormatError(
            f"{path}: parameter names disagree (missing {sorted(missing)[:3]}, "
            f"unexpected {sorted(extra)[:3]})"
        )
    for p in params:
        arr = arrays[p.name]
        if arr.shape != p.data.shape:
            raise FormatError(
                f"{path}: shape mismatch for {p.name}: {arr.shape} vs {p.data.shape}"
            )
        p.data = arr if arr.flags.c_contiguous else np.ascontiguousarray(arr)
        p.zero_grad()


def relevance_score(q_vec: np.ndarray, z_vec: np.ndarray) -> float:
    """Dot-product relevance between two d-vectors."""
    q = np.asarray(q_vec, dtype=np.float64)
    z = np.asarray(z_vec, dtype=np.float64)
    if q.ndim != 1 or z.ndim != 1 or q.shape != z.shape:
        raise DimensionError(f"relevance_score shapes disagree: {q.shape} vs {z.shape}")
    return float(q @ z)
