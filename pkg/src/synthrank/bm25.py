"""BM25 first-stage retrieval over an in-memory inverted index."""

from __future__ import annotations

import json
import math
import re
import struct
from collections import Counter
from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DuplicateDocId, EmptyCorpus, MalformedLine, UnknownDoc
from .records import Query, Ranking

_TOKEN = re.compile(r"[^\W_]+")

INDEX_MAGIC = b"SRBM25\x00\x00"
INDEX_VERSION = 1


def tokenize(text: str, stopwords: frozenset[str] | None = None) -> list[str]:
    """Lowercase, split on anything that is not a letter or digit."""
    terms = _TOKEN.findall(text.lower())
    if stopwords:
        terms = [t for t in terms if t not in stopwords]
    return terms


@dataclass(frozen=True)
class Bm25Params:
    k1: float = 1.5
    b: float = 0.75

    def __post_init__(self) -> None:
        if not (math.isfinite(self.k1) and self.k1 > 0):
            raise ValueError(f"k1 must be a positive finite number, got {self.k1}")
        if not (math.isfinite(self.b) and 0.0 <= self.b <= 1.0):
            raise ValueError(f"b must lie in [0, 1], got {self.b}")


@dataclass(frozen=True)
class IndexStats:
    doc_count: int
    avg_doc_len: float
    doc_freq: dict[str, int]
    doc_len: dict[str, int]


def idf(doc_freq: int, doc_count: int) -> float:
    return math.log((doc_count - doc_freq + 0.5) / (doc_freq + 0.5) + 1.0)


class InvertedIndex:
    """Postings keyed by term; documents are numbered in doc-id order.

    Numbering by sorted doc id makes posting lists doc-id sorted and lets the
    retrieval tie rule (doc id ascending) fall out of an index sort.
    """

    def __init__(
        self,
        doc_ids: Sequence[str],
        doc_lens: Sequence[int],
        postings: dict[str, tuple[np.ndarray, np.ndarray]],
        params: Bm25Params,
        stopwords: frozenset[str] | None = None,
    ) -> None:
        self.doc_ids = list(doc_ids)
        self._pos = {d: i for i, d in enumerate(self.doc_ids)}
        self._lens = np.asarray(doc_lens, dtype=np.float64)
        self._postings = postings
        self.params = params
        self.stopwords = stopwords
        n = len(self.doc_ids)
        avgdl = float(self._lens.mean()) if n else 0.0
        self.stats = IndexStats(
            doc_count=n,
            avg_doc_len=avgdl,
            doc_freq={t: len(idx) for t, (idx, _) in postings.items()},
            doc_len={d: int(l) for d, l in zip(self.doc_ids, doc_lens)},
        )
        # length normalisation is query-independent; precompute it once
        denom_avg = avgdl if avgdl > 0 else 1.0
        self._norm = params.k1 * (1.0 - params.b + params.b * self._lens / denom_avg)

    @property
    def postings(self) -> dict[str, list[tuple[str, int]]]:
        return {
            t: [(self.doc_ids[i], int(tf)) for i, tf in zip(idx, tfs)] for t, (idx, tfs) in self._postings.items()
        }

    def __contains__(self, doc_id: str) -> bool:
        return doc_id in self._pos

    def __len__(self) -> int:
        return len(self.doc_ids)

    def term_scores(self, term: str) -> tuple[np.ndarray, np.ndarray]:
        """Doc positions and their BM25 contribution for one term."""
        hit = self._postings.get(term)
        if hit is None:
            return np.empty(0, dtype=np.int64), np.empty(0)
        idx, tf = hit
        w = idf(len(idx), len(self.doc_ids))
        k1 = self.params.k1
        return idx, w * tf * (k1 + 1.0) / (tf + self._norm[idx])

    def score_all(self, query_terms: Iterable[str]) -> np.ndarray:
        scores = np.zeros(len(self.doc_ids))
        for term in dict.fromkeys(query_terms):
            idx, contrib = self.term_scores(term)
            scores[idx] += contrib
        return scores

    # persistence: magic, u16 version, u32 header length, header JSON, body JSON

    def save(self, path: str | Path) -> None:
        header = {
            "version": INDEX_VERSION,
            "params": {"k1": self.params.k1, "b": self.params.b},
            "doc_count": self.stats.doc_count,
            "avg_doc_len": self.stats.avg_doc_len,
            "term_count": len(self._postings),
            "stopwords": sorted(self.stopwords) if self.stopwords else None,
        }
        body = {
            "doc_ids": self.doc_ids,
            "doc_lens": [int(x) for x in self._lens],
            "postings": {t: [idx.tolist(), tf.astype(int).tolist()] for t, (idx, tf) in sorted(self._postings.items())},
        }
        hbytes = json.dumps(header, sort_keys=True).encode()
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "wb") as f:
            f.write(INDEX_MAGIC)
            f.write(struct.pack("<HI", INDEX_VERSION, len(hbytes)))
            f.write(hbytes)
            f.write(json.dumps(body, ensure_ascii=False).encode())

    @classmethod
    def load(cls, path: str | Path) -> InvertedIndex:
        with open(path, "rb") as f:
            if f.read(len(INDEX_MAGIC)) != INDEX_MAGIC:
                raise MalformedLine(str(path), 1, "", "not a BM25 index file")
            version, hlen = struct.unpack("<HI", f.read(6))
            if version != INDEX_VERSION:
                raise MalformedLine(str(path), 1, "", f"unsupported index version {version}")
            header = json.loads(f.read(hlen))
            body = json.loads(f.read())
        postings = {
            t: (np.asarray(idx, dtype=np.int64), np.asarray(tf, dtype=np.float64)) for t, (idx, tf) in body["postings"].items()
        }
        sw = header.get("stopwords")
        return cls(body["doc_ids"], body["doc_lens"], postings, Bm25Params(**header["params"]), frozenset(sw) if sw else None)


def build_index(
    corpus: Iterable, params: Bm25Params | None = None, stopwords: frozenset[str] | None = None
) -> InvertedIndex:
    """Index any records with ``id`` and ``text`` attributes."""
    params = params or Bm25Params()
    docs: dict[str, list[str]] = {}
    for doc in corpus:
        if doc.id in docs:
            raise DuplicateDocId(f"duplicate document id {doc.id!r}")
        docs[doc.id] = tokenize(doc.text, stopwords)
    if not docs:
        raise EmptyCorpus("cannot build an index over an empty corpus")
    doc_ids = sorted(docs)
    raw: dict[str, tuple[list[int], list[int]]] = {}
    for i, doc_id in enumerate(doc_ids):
        for term, tf in Counter(docs[doc_id]).items():
            idx, tfs = raw.setdefault(term, ([], []))
            idx.append(i)
            tfs.append(tf)
    postings = {t: (np.asarray(idx, dtype=np.int64), np.asarray(tf, dtype=np.float64)) for t, (idx, tf) in raw.items()}
    return InvertedIndex(doc_ids, [len(docs[d]) for d in doc_ids], postings, params, stopwords)


def bm25_score(query_terms: Iterable[str], doc_id: str, index: InvertedIndex) -> float:
    if doc_id not in index:
        raise UnknownDoc(doc_id)
    pos = index._pos[doc_id]
    total = 0.0
    for term in dict.fromkeys(query_terms):
        idx, contrib = index.term_scores(term)
        hit = np.searchsorted(idx, pos)
        if hit < len(idx) and idx[hit] == pos:
            total += float(contrib[hit])
    return total


def retrieve(query: Query | str, index: InvertedIndex, k: int = 100, tag: str = "bm25") -> Ranking:
    if k < 1:
        raise ValueError("k must be at least 1")
    text = query if isinstance(query, str) else query.full_text
    qid = "query" if isinstance(query, str) else query.id
    scores = index.score_all(tokenize(text, index.stopwords))
    # index position order is doc-id order, so a stable sort on -score applies the tie rule
    order = np.argsort(-scores, kind="stable")[:k]
    return Ranking(qid, tuple((index.doc_ids[i], float(scores[i])) for i in order), tag)
