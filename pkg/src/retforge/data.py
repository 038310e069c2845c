"""Corpus and QA ingestion, BM25 distant supervision, and the two
unsupervised example generators (inverse cloze and masked salient spans).

All sampling takes an explicit numpy Generator, so pipelines are pure
functions of (data, seed) and safe to parallelize across examples.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .errors import DomainError, InputError
from .text import MASK_ID, Vocabulary, contains_answer, segment_sentences

BM25_K1 = 1.2
BM25_B = 0.75


@dataclass(frozen=True)
class Document:
    id: int
    title: str
    text: str
    tokens: tuple[int, ...]

    def __post_init__(self):
        if self.id < 0:
            raise InputError(f"document id must be non-negative, got {self.id}")
        if not self.text:
            raise InputError(f"document {self.id}: empty text")


@dataclass(frozen=True)
class QAExample:
    question: str
    answers: tuple[str, ...]
    positive_ctx: int | None = None
    hard_negatives: tuple[int, ...] = ()
    filtered: bool = False

    def __post_init__(self):
        if not self.answers:
            raise InputError(f"question {self.question!r}: no answers")


@dataclass(frozen=True)
class SpanAnnotation:
    """Token-offset spans over one document; offsets are inclusive."""

    doc_id: int
    spans: tuple[tuple[int, int, str], ...]

    def __post_init__(self):
        norm = tuple(sorted(self.spans))
        for start, end, _ in norm:
            if start < 0 or end < start:
                raise InputError(
                    f"doc {self.doc_id}: bad span ({start}, {end}); need 0 <= start <= end"
                )
        for (_, e1, _), (s2, _, _) in zip(norm, norm[1:]):
            if s2 <= e1:
                raise InputError(f"doc {self.doc_id}: overlapping spans")
        object.__setattr__(self, "spans", norm)


class Corpus:
    """Immutable document collection with a shared vocabulary."""

    def __init__(self, documents: Sequence[Document], vocab: Vocabulary):
        self.documents = list(documents)
        self.vocab = vocab
        self.by_id: dict[int, Document] = {}
        for doc in self.documents:
            if doc.id in self.by_id:
                raise InputError(f"duplicate document id {doc.id}")
            self.by_id[doc.id] = doc

    def __len__(self) -> int:
        return len(self.documents)

    def __iter__(self):
        return iter(self.documents)

    @classmethod
    def build(cls, raw: Iterable[dict], vocab: Vocabulary | None = None) -> "Corpus":
        """Construct from {"id", "title", "text"} records, building the
        vocabulary from titles and texts when one is not supplied."""
        raw = list(raw)
        if vocab is None:
            vocab = Vocabulary.build(
                [r["title"] for r in raw] + [r["text"] for r in raw]
            )
        docs = [
            Document(
                id=int(r["id"]),
                title=str(r["title"]),
                text=str(r["text"]),
                tokens=tuple(vocab.encode(str(r["text"]))),
            )
            for r in raw
        ]
        return cls(docs, vocab)


# JSON-lines I/O ----------------------------------------------------------


def _read_jsonl(path) -> Iterable[tuple[int, dict]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise InputError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
            if not isinstance(obj, dict):
                raise InputError(f"{path}:{lineno}: expected an object")
            yield lineno, obj


def load_corpus(path, vocab: Vocabulary | None = None) -> Corpus:
    raw = []
    for lineno, obj in _read_jsonl(path):
        for key in ("id", "title", "text"):
            if key not in obj:
                raise InputError(f"{path}:{lineno}: missing field {key!r}")
        raw.append(obj)
    if not raw:
        raise InputError(f"{path}: empty corpus")
    return Corpus.build(raw, vocab)


def save_corpus(corpus: Corpus, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for doc in corpus:
            fh.write(json.dumps(
                {"id": doc.id, "title": doc.title, "text": doc.text},
                ensure_ascii=False,
            ) + "\n")


def load_qa(path) -> list[QAExample]:
    out = []
    for lineno, obj in _read_jsonl(path):
        if "question" not in obj or "answers" not in obj:
            raise InputError(f"{path}:{lineno}: need question and answers fields")
        answers = obj["answers"]
        if not isinstance(answers, list) or not answers:
            raise InputError(f"{path}:{lineno}: answers must be a non-empty list")
        out.append(QAExample(
            question=str(obj["question"]),
            answers=tuple(str(a) for a in answers),
            positive_ctx=obj.get("positive_ctx"),
            hard_negatives=tuple(obj.get("hard_negatives", ())),
            filtered=bool(obj.get("filtered", False)),
        ))
    return out


def save_qa(examples: Sequence[QAExample], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            record: dict = {"question": ex.question, "answers": list(ex.answers)}
            if ex.positive_ctx is not None:
                record["positive_ctx"] = ex.positive_ctx
            if ex.hard_negatives:
                record["hard_negatives"] = list(ex.hard_negatives)
            if ex.filtered:
                record["filtered"] = True
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")


def load_spans(path) -> dict[int, SpanAnnotation]:
    out: dict[int, SpanAnnotation] = {}
    for lineno, obj in _read_jsonl(path):
        if "doc_id" not in obj or "spans" not in obj:
            raise InputError(f"{path}:{lineno}: need doc_id and spans fields")
        doc_id = int(obj["doc_id"])
        if doc_id in out:
            raise InputError(f"{path}:{lineno}: duplicate annotation for doc {doc_id}")
        spans = tuple(
            (int(s[0]), int(s[1]), str(s[2])) for s in obj["spans"]
        )
        try:
            out[doc_id] = SpanAnnotation(doc_id=doc_id, spans=spans)
        except InputError as exc:
            raise InputError(f"{path}:{lineno}: {exc}") from exc
    return out


def save_spans(annotations: Sequence[SpanAnnotation], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ann in annotations:
            fh.write(json.dumps(
                {"doc_id": ann.doc_id, "spans": [list(s) for s in ann.spans]},
                ensure_ascii=False,
            ) + "\n")


# BM25 and distant supervision ---------------------------------------------


@dataclass(frozen=True)
class CorpusStats:
    n_docs: int
    doc_freqs: dict[int, int]
    avg_doc_len: float
    doc_lens: dict[int, int] = field(repr=False)


def build_corpus_stats(corpus: Corpus) -> CorpusStats:
    if len(corpus) == 0:
        raise DomainError("corpus statistics over an empty corpus")
    doc_freqs: Counter[int] = Counter()
    doc_lens: dict[int, int] = {}
    for doc in corpus:
        doc_freqs.update(set(doc.tokens))
        doc_lens[doc.id] = len(doc.tokens)
    total = sum(doc_lens.values())
    return CorpusStats(
        n_docs=len(corpus),
        doc_freqs=dict(doc_freqs),
        avg_doc_len=total / len(corpus),
        doc_lens=doc_lens,
    )


def bm25_score(
    query_tokens: Sequence[int],
    doc: Document,
    stats: CorpusStats,
    k1: float = BM25_K1,
    b: float = BM25_B,
) -> float:
    """Okapi BM25; each query-token occurrence contributes separately."""
    if not query_tokens:
        return 0.0
    tf = Counter(doc.tokens)
    norm = k1 * (1.0 - b + b * len(doc.tokens) / stats.avg_doc_len)
    score = 0.0
    for t in query_tokens:
        f = tf.get(t, 0)
        if f == 0:
            continue
        df = stats.doc_freqs.get(t, 0)
        idf = math.log(1.0 + (stats.n_docs - df + 0.5) / (df + 0.5))
        score += idf * f * (k1 + 1.0) / (f + norm)
    return score


def rank_bm25(
    query_tokens: Sequence[int], corpus: Corpus, stats: CorpusStats
) -> list[tuple[int, float]]:
    """All documents sorted by descending score, ascending id on ties."""
    scored = [(doc.id, bm25_score(query_tokens, doc, stats)) for doc in corpus]
    scored.sort(key=lambda pair: (-pair[1], pair[0]))
    return scored


def mine_distant_supervision(
    example: QAExample,
    corpus: Corpus,
    stats: CorpusStats,
    n_candidates: int = 100,
    n_hard_negatives: int = 1,
) -> QAExample:
    """Fill positive_ctx and hard_negatives from a BM25 ranking.

    The positive is the highest-ranked candidate containing an answer; hard
    negatives are the top answer-free candidates. An example with no
    answer-bearing candidate is marked filtered instead of raising.
    """
    if len(corpus) == 0:
        raise DomainError("distant supervision over an empty corpus")
    query = corpus.vocab.encode(example.question)
    ranking = rank_bm25(query, corpus, stats)[:n_candidates]
    positive: int | None = None
    negatives: list[int] = []
    for doc_id, _ in ranking:
        doc = corpus.by_id[doc_id]
        if contains_answer(doc.text, example.answers):
            if positive is None:
                positive = doc_id
        elif len(negatives) < n_hard_negatives:
            negatives.append(doc_id)
        if positive is not None and len(negatives) >= n_hard_negatives:
            break
    if positive is None:
        return replace(example, positive_ctx=None, hard_negatives=(), filtered=True)
    return replace(
        example,
        positive_ctx=positive,
        hard_negatives=tuple(negatives),
        filtered=False,
    )


# Unsupervised example generation -------------------------------------------

ICT_MAX_CONTEXT_TOKENS = 256
ICT_KEEP_PROB = 0.1


def sentence_token_ranges(
    doc: Document, vocab: Vocabulary
) -> list[tuple[str, int, int]]:
    """Sentences with their [start, end) offsets into doc.tokens.

    Whitespace carries no tokens, so per-sentence encodings concatenate to
    exactly the document token sequence.
    """
    out = []
    offset = 0
    for sentence in segment_sentences(doc.text):
        n = len(vocab.encode(sentence))
        out.append((sentence, offset, offset + n))
        offset += n
    return out


def sample_ict_pair(
    doc: Document,
    vocab: Vocabulary,
    rng: np.random.Generator,
    keep_prob: float = ICT_KEEP_PROB,
    max_context_tokens: int = ICT_MAX_CONTEXT_TOKENS,
) -> tuple[list[int], list[int]] | None:
    """Inverse cloze pair: one sentence as query, the rest as context.

    With probability keep_prob the query sentence stays in the context.
    Returns None for single-sentence paragraphs (skip, not an error). Draw
    order is fixed: sentence index first, then the keep decision.
    """
    sentences = segment_sentences(doc.text)
    if len(sentences) < 2:
        return None
    idx = int(rng.integers(len(sentences)))
    keep = bool(rng.random() < keep_prob)
    query = vocab.encode(sentences[idx])
    context_sentences = sentences if keep else sentences[:idx] + sentences[idx + 1:]
    context: list[int] = []
    for s in context_sentences:
        context.extend(vocab.encode(s))
    return query, context[:max_context_tokens]


def mask_salient_spans(
    doc: Document,
    annotation: SpanAnnotation,
    vocab: Vocabulary,
    rng: np.random.Generator,
) -> tuple[list[int], list[int]] | None:
    """Pick one annotated span uniformly, replace it with [MASK] inside its
    sentence, and return (masked sentence tokens, span tokens).

    Returns None when the document has no spans. Spans must lie inside one
    sentence of the document's token sequence.
    """
    if not annotation.spans:
        return None
    if annotation.doc_id != doc.id:
        raise InputError(
            f"annotation for doc {annotation.doc_id} applied to doc {doc.id}"
        )
    start, end, _ = annotation.spans[int(rng.integers(len(annotation.spans)))]
    if end >= len(doc.tokens):
        raise InputError(
            f"doc {doc.id}: span ({start}, {end}) outside {len(doc.tokens)} tokens"
        )
    for _, s_start, s_end in sentence_token_ranges(doc, vocab):
        if s_start <= start and end < s_end:
            sentence_tokens = list(doc.tokens[s_start:s_end])
            lo, hi = start - s_start, end - s_start
            masked = sentence_tokens[:lo] + [MASK_ID] + sentence_tokens[hi + 1:]
            target = list(doc.tokens[start:end + 1])
            return masked, target
    raise InputError(f"doc {doc.id}: span ({start}, {end}) crosses a sentence boundary")
