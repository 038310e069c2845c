"""Generative reader: a small encoder-decoder that scores and produces
answers, either from one context or by fusing k retrieved contexts.

Fusion stacks every context's encoder states into one cross-attention
memory and adds a per-position logit bias of lambda * p(z|q), broadcast over
the positions of the owning context. The bias is re-centered by its maximum
(a constant shift softmax ignores), so a single context, or lambda = 0,
reproduces the unbiased reader bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .checkpoint import load_checkpoint, save_checkpoint
from .encoder import EncoderConfig, TransformerEncoder, layer_norm, truncated_normal
from .errors import DimensionError, DomainError, FormatError
from .text import BOS_ID, EOS_ID, SEP_ID

PROB_SUM_TOL = 1e-9


@dataclass(frozen=True)
class ReaderConfig:
    vocab_size: int
    enc_layers: int = 2
    dec_layers: int = 2
    hidden_size: int = 64
    heads: int = 4
    max_seq_len: int = 256
    max_answer_len: int = 32

    def __post_init__(self):
        if self.dec_layers < 1:
            raise DomainError(f"dec_layers must be >= 1, got {self.dec_layers}")
        if self.max_answer_len < 1:
            raise DomainError(f"max_answer_len must be >= 1, got {self.max_answer_len}")
        # encoder-side constraints are re-checked by the embedded EncoderConfig
        EncoderConfig(
            vocab_size=self.vocab_size,
            layers=self.enc_layers,
            hidden_size=self.hidden_size,
            heads=self.heads,
            max_seq_len=self.max_seq_len,
        )

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(
            vocab_size=self.vocab_size,
            layers=self.enc_layers,
            hidden_size=self.hidden_size,
            heads=self.heads,
            max_seq_len=self.max_seq_len,
        )

    def to_dict(self) -> dict:
        return {
            "vocab_size": self.vocab_size,
            "enc_layers": self.enc_layers,
            "dec_layers": self.dec_layers,
            "hidden_size": self.hidden_size,
            "heads": self.heads,
            "max_seq_len": self.max_seq_len,
            "max_answer_len": self.max_answer_len,
        }


def with_eos(tokens: Sequence[int]) -> list[int]:
    """Append the end marker unless already present."""
    out = list(tokens)
    if not out or out[-1] != EOS_ID:
        out.append(EOS_ID)
    return out


class Reader:
    def __init__(self, config: ReaderConfig, seed: int = 0):
        self.config = config
        rng = np.random.default_rng(seed)
        self.encoder = TransformerEncoder(config.encoder_config(), rng, prefix="reader_enc")
        d, v = config.hidden_size, config.vocab_size
        ff = 4 * d
        p: dict[str, ad.Parameter] = {}

        def param(name: str, values) -> ad.Parameter:
            p[name] = ad.Parameter(values, name=f"reader_dec.{name}")
            return p[name]

        param("token_emb", truncated_normal(rng, (v, d)))
        param("pos_emb", truncated_normal(rng, (config.max_answer_len, d)))
        for i in range(config.dec_layers):
            for mat in ("wq", "wk", "wv", "wo", "cq", "ck", "cv", "co"):
                param(f"layer{i}.{mat}", truncated_normal(rng, (d, d)))
                param(f"layer{i}.{mat}_b", np.zeros(d))
            for ln in ("ln1", "lnc", "ln2"):
                param(f"layer{i}.{ln}_g", np.ones(d))
                param(f"layer{i}.{ln}_b", np.zeros(d))
            param(f"layer{i}.w1", truncated_normal(rng, (d, ff)))
            param(f"layer{i}.w1_b", np.zeros(ff))
            param(f"layer{i}.w2", truncated_normal(rng, (ff, d)))
            param(f"layer{i}.w2_b", np.zeros(d))
        param("final_ln_g", np.ones(d))
        param("final_ln_b", np.zeros(d))
        param("out_proj", truncated_normal(rng, (d, v)))
        param("out_proj_b", np.zeros(v))
        self.dec_params = p
        # Eq-8-style fusion weight; zero start means unbiased fusion
        self.lambda_bias = ad.Parameter(np.zeros(()), name="reader.lambda_bias")

    def parameters(self) -> list[ad.Parameter]:
        return (
            self.encoder.parameters()
            + list(self.dec_params.values())
            + [self.lambda_bias]
        )

    # Encoding ------------------------------------------------------------

    def encode_pair(self, question_tokens: Sequence[int], context_tokens: Sequence[int]) -> ad.Tensor:
        """Encode question + [SEP] + context into (T, d) memory states."""
        ids = list(question_tokens) + [SEP_ID] + list(context_tokens)
        ids = ids[: self.config.max_seq_len]
        h = self.encoder.forward(np.array([ids], dtype=np.int64))
        t = len(ids)
        return ad.reshape(h, (t, self.config.hidden_size))

    # Decoding ------------------------------------------------------------

    def _heads(self, x: ad.Tensor) -> ad.Tensor:
        t = x.shape[0]
        dh = self.config.hidden_size // self.config.heads
        return ad.transpose(ad.reshape(x, (t, self.config.heads, dh)), (1, 0, 2))

    def _merge(self, x: ad.Tensor) -> ad.Tensor:
        h, t, dh = x.shape
        return ad.reshape(ad.transpose(x, (1, 0, 2)), (t, h * dh))

    def _decode_logits(
        self,
        memory: ad.Tensor,
        bias: ad.Tensor | None,
        decoder_input: Sequence[int],
    ) -> ad.Tensor:
        """Teacher-forced decoder: (T_dec,) input ids -> (T_dec, vocab) logits."""
        cfg = self.config
        t_dec = len(decoder_input)
        if t_dec > cfg.max_answer_len:
            raise DimensionError(
                f"decoder length {t_dec} exceeds max_answer_len {cfg.max_answer_len}"
            )
        p = self.dec_params
        dh = cfg.hidden_size // cfg.heads
        ids = np.asarray(decoder_input, dtype=np.int64)
        h = ad.embedding(p["token_emb"], ids) + ad.embedding(p["pos_emb"], np.arange(t_dec))
        causal = np.where(np.triu(np.ones((t_dec, t_dec), dtype=bool), k=1), ad.MASK_NEG, 0.0)
        for i in range(cfg.dec_layers):
            x = layer_norm(h, p[f"layer{i}.ln1_g"], p[f"layer{i}.ln1_b"])
            q = self._heads(ad.matmul(x, p[f"layer{i}.wq"]) + p[f"layer{i}.wq_b"])
            k = self._heads(ad.matmul(x, p[f"layer{i}.wk"]) + p[f"layer{i}.wk_b"])
            v = self._heads(ad.matmul(x, p[f"layer{i}.wv"]) + p[f"layer{i}.wv_b"])
            scores = ad.scale(ad.matmul(q, ad.transpose(k, (0, 2, 1))), 1.0 / math.sqrt(dh))
            self_out = self._merge(ad.matmul(ad.softmax(scores, mask=causal), v))
            h = h + (ad.matmul(self_out, p[f"layer{i}.wo"]) + p[f"layer{i}.wo_b"])

            x = layer_norm(h, p[f"layer{i}.lnc_g"], p[f"layer{i}.lnc_b"])
            q = self._heads(ad.matmul(x, p[f"layer{i}.cq"]) + p[f"layer{i}.cq_b"])
            k = self._heads(ad.matmul(memory, p[f"layer{i}.ck"]) + p[f"layer{i}.ck_b"])
            v = self._heads(ad.matmul(memory, p[f"layer{i}.cv"]) + p[f"layer{i}.cv_b"])
            scores = ad.scale(ad.matmul(q, ad.transpose(k, (0, 2, 1))), 1.0 / math.sqrt(dh))
            if bias is not None:
                scores = scores + bias  # (T_mem,) broadcast over heads and rows
            cross_out = self._merge(ad.matmul(ad.softmax(scores), v))
            h = h + (ad.matmul(cross_out, p[f"layer{i}.co"]) + p[f"layer{i}.co_b"])

            x = layer_norm(h, p[f"layer{i}.ln2_g"], p[f"layer{i}.ln2_b"])
            inner = ad.gelu(ad.matmul(x, p[f"layer{i}.w1"]) + p[f"layer{i}.w1_b"])
            h = h + (ad.matmul(inner, p[f"layer{i}.w2"]) + p[f"layer{i}.w2_b"])
        h = layer_norm(h, p["final_ln_g"], p["final_ln_b"])
        return ad.matmul(h, p["out_proj"]) + p["out_proj_b"]

    def _fusion_memory(
        self,
        question_tokens: Sequence[int],
        contexts: Sequence[Sequence[int]],
        probs,
    ) -> tuple[ad.Tensor, ad.Tensor]:
        """probs may be a plain sequence (inference) or a Tensor carrying
        gradient back into whatever produced the retrieval distribution."""
        if len(contexts) < 1:
            raise DomainError("fusion needs at least one context")
        probs_t = probs if isinstance(probs, ad.Tensor) else ad.Tensor(np.asarray(probs, dtype=np.float64))
        probs_arr = probs_t.data
        if probs_arr.ndim != 1 or probs_arr.shape[0] != len(contexts):
            raise DimensionError("one probability per context required")
        if (probs_arr < 0).any() or abs(probs_arr.sum() - 1.0) > PROB_SUM_TOL:
            raise DomainError(
                f"context probabilities must be a distribution, got sum {probs_arr.sum()!r}"
            )
        encoded = [self.encode_pair(question_tokens, z) for z in contexts]
        memory = ad.concat(encoded, axis=0) if len(encoded) > 1 else encoded[0]
        # in-graph bias lambda * p_i per context, broadcast over its positions
        lengths = [e.shape[0] for e in encoded]
        spread = np.zeros((sum(lengths), len(contexts)))
        lo = 0
        for i, n in enumerate(lengths):
            spread[lo:lo + n, i] = 1.0
            lo += n
        per_position = ad.matmul(
            ad.Tensor(spread), ad.reshape(ad.mul(self.lambda_bias, probs_t), (len(contexts), 1))
        )
        # constant re-centering: softmax is shift-invariant, and this makes
        # k=1 and lambda=0 reduce to the unbiased decoder exactly
        shift = float(-(float(self.lambda_bias.data) * probs_arr).max())
        bias = ad.reshape(per_position, (sum(lengths),)) + ad.Tensor(np.array(shift))
        return memory, bias

    # Public likelihood / generation API -----------------------------------

    def answer_log_likelihood(
        self,
        question_tokens: Sequence[int],
        context_tokens: Sequence[int],
        answer_tokens: Sequence[int],
    ) -> ad.Tensor:
        """Teacher-forced log p(answer | question, context); scores exactly
        the tokens given (callers terminate answers with [EOS])."""
        answer = list(answer_tokens)
        if not answer:
            raise DomainError("cannot score an empty answer")
        memory = self.encode_pair(question_tokens, context_tokens)
        return self._teacher_forced(memory, None, answer)

    def joint_forward(
        self,
        question_tokens: Sequence[int],
        contexts: Sequence[Sequence[int]],
        probs,
        answer_tokens: Sequence[int],
    ) -> ad.Tensor:
        """log p(answer | question, all k contexts, retrieval probs).

        probs: sequence of floats, or a Tensor to backpropagate through."""
        answer = list(answer_tokens)
        if not answer:
            raise DomainError("cannot score an empty answer")
        memory, bias = self._fusion_memory(question_tokens, contexts, probs)
        return self._teacher_forced(memory, bias, answer)

    def _teacher_forced(
        self, memory: ad.Tensor, bias: ad.Tensor | None, answer: list[int]
    ) -> ad.Tensor:
        decoder_input = [BOS_ID] + answer[:-1]
        logits = self._decode_logits(memory, bias, decoder_input)
        t, v = logits.shape
        out = ad.sequence_log_prob(
            ad.reshape(logits, (1, t, v)), np.asarray([answer], dtype=np.int64)
        )
        return ad.reshape(out, ())

    def greedy_decode(
        self,
        question_tokens: Sequence[int],
        context_tokens: Sequence[int],
        max_len: int | None = None,
    ) -> list[int]:
        memory = self.encode_pair(question_tokens, context_tokens)
        return self._greedy(memory, None, max_len)

    def joint_greedy_decode(
        self,
        question_tokens: Sequence[int],
        contexts: Sequence[Sequence[int]],
        probs: Sequence[float],
        max_len: int | None = None,
    ) -> list[int]:
        memory, bias = self._fusion_memory(question_tokens, contexts, probs)
        return self._greedy(memory, bias, max_len)

    def _greedy(self, memory: ad.Tensor, bias: ad.Tensor | None, max_len: int | None) -> list[int]:
        """Argmax decoding until [EOS] or the length cap; the terminal [EOS]
        is not included in the returned sequence. Ties pick the lowest id."""
        cap = self.config.max_answer_len - 1 if max_len is None else max_len
        if cap < 1:
            raise DomainError(f"max_len must be >= 1, got {cap}")
        cap = min(cap, self.config.max_answer_len - 1)
        generated: list[int] = []
        for _ in range(cap):
            logits = self._decode_logits(memory, bias, [BOS_ID] + generated)
            next_id = int(np.argmax(logits.data[-1]))  # first occurrence wins ties
            if next_id == EOS_ID:
                break
            generated.append(next_id)
        return generated

    # Persistence -----------------------------------------------------------

    def save(self, path) -> None:
        arrays = {p.name: p.data for p in self.parameters()}
        save_checkpoint(path, {"kind": "reader", **self.config.to_dict()}, arrays)

    @classmethod
    def load(cls, path) -> "Reader":
        config, arrays = load_checkpoint(path)
        if config.get("kind") != "reader":
            raise FormatError(f"{path}: checkpoint kind {config.get('kind')!r} is not reader")
        cfg = ReaderConfig(**{k: v for k, v in config.items() if k != "kind"})
        model = cls(cfg, seed=0)
        from .encoder import _restore

        _restore(model.parameters(), arrays, path)
        return model
