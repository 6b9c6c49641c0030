"""Title matching: edge n-gram analysis and BM25 ranking over a title catalog."""

from __future__ import annotations

import csv
import math
import re
import unicodedata
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from . import _accel

_WORD = re.compile(r"[^\W_]+")
# letters NFKD does not decompose
_FOLD = str.maketrans({
    "ß": "ss", "æ": "ae", "Æ": "AE", "ø": "o", "Ø": "O", "œ": "oe", "Œ": "OE", "đ": "d",
    "Đ": "D", "ł": "l", "Ł": "L", "þ": "th", "Þ": "TH", "ð": "d", "Ð": "D", "ı": "i",
})

KINDS = ("movie", "tv-series", "episode")
_IMDB_KIND = {
    "movie": "movie", "tvMovie": "movie", "short": "movie", "video": "movie", "tvSpecial": "movie",
    "tvShort": "movie", "tvSeries": "tv-series", "tvMiniSeries": "tv-series", "tvEpisode": "episode",
}


class CatalogError(ValueError):
    pass


@dataclass(frozen=True)
class AnalyzerConfig:
    min_gram: int = 4
    max_gram: int = 15
    lowercase: bool = True
    ascii_fold: bool = True

    def __post_init__(self):
        if not 1 <= self.min_gram <= self.max_gram:
            raise ValueError("need 1 <= min_gram <= max_gram")


@dataclass(frozen=True)
class Bm25Params:
    k1: float = 1.2
    b: float = 0.75

    def __post_init__(self):
        if self.k1 < 0 or not 0 <= self.b <= 1:
            raise ValueError("need k1 >= 0 and 0 <= b <= 1")


@dataclass(frozen=True)
class CatalogEntry:
    catalog_id: str
    primary_title: str
    year: int | None = None
    kind: str = "movie"
    genres: tuple = ()


@dataclass(frozen=True)
class MatchResult:
    catalog_id: str
    score: float
    accepted: bool = False


def ascii_fold(text: str) -> str:
    text = unicodedata.normalize("NFKD", text.translate(_FOLD))
    return "".join(c for c in text if not unicodedata.combining(c))


def analyze(text: str, config: AnalyzerConfig = AnalyzerConfig()) -> list[str]:
    """Edge n-grams of each word; words shorter than ``min_gram`` pass through whole."""
    if config.ascii_fold:
        text = ascii_fold(text)
    if config.lowercase:
        text = text.lower()
    out = []
    lo, hi = config.min_gram, config.max_gram
    for word in _WORD.findall(text):
        if len(word) < lo:
            out.append(word)
        else:
            out.extend(word[:n] for n in range(lo, min(hi, len(word)) + 1))
    return out


def idf(n_docs: int, df: int) -> float:
    return math.log(1.0 + (n_docs - df + 0.5) / (df + 0.5))


class TitleIndex:
    """Immutable inverted index over analyzed primary titles."""

    def __init__(self, entries: list[CatalogEntry], analyzer: AnalyzerConfig, params: Bm25Params):
        if not entries:
            raise CatalogError("cannot index an empty catalog")
        ids = [e.catalog_id for e in entries]
        if len(set(ids)) != len(ids):
            dup = next(i for i, c in Counter(ids).items() if c > 1)
            raise CatalogError(f"duplicate catalog id {dup!r}")
        self.entries = list(entries)
        self.analyzer = analyzer
        self.params = params
        self.terms: dict[str, int] = {}
        doc_tf: list[Counter] = []
        for e in self.entries:
            tf = Counter(analyze(e.primary_title, analyzer))
            for t in tf:
                self.terms.setdefault(t, len(self.terms))
            doc_tf.append(tf)
        n_terms = len(self.terms)
        self.n_docs = len(self.entries)
        self.doc_len = np.array([sum(tf.values()) for tf in doc_tf], dtype=np.float64)
        self.avgdl = float(self.doc_len.mean()) if self.n_docs else 0.0
        # CSR postings
        rows: list[list[tuple[int, int]]] = [[] for _ in range(n_terms)]
        for d, tf in enumerate(doc_tf):
            for t, c in tf.items():
                rows[self.terms[t]].append((d, c))
        self.df = np.array([len(r) for r in rows], dtype=np.int64)
        self.indptr = np.zeros(n_terms + 1, dtype=np.int64)
        np.cumsum(self.df, out=self.indptr[1:])
        self.post_doc = np.array([d for r in rows for d, _ in r], dtype=np.int64)
        self.post_tf = np.array([c for r in rows for _, c in r], dtype=np.float64)
        self.idf = np.array([idf(self.n_docs, int(x)) for x in self.df], dtype=np.float64)
        self._doc_tf = doc_tf
        self.position = {e.catalog_id: i for i, e in enumerate(self.entries)}

    def __len__(self) -> int:
        return self.n_docs

    def doc_freq(self, term: str) -> int:
        tid = self.terms.get(term)
        return 0 if tid is None else int(self.df[tid])

    def score(self, query_tokens: Iterable[str], catalog_id: str) -> float:
        """BM25 of one document, summed over the query token multiset."""
        d = self.position[catalog_id]
        tf = self._doc_tf[d]
        k1, b = self.params.k1, self.params.b
        norm = k1 * (1.0 - b + b * self.doc_len[d] / self.avgdl)
        total = 0.0
        for t in query_tokens:
            f = tf.get(t, 0)
            if f:
                total += self.idf[self.terms[t]] * (f * (k1 + 1.0)) / (f + norm)
        return total

    def score_all(self, query_tokens: Iterable[str]) -> np.ndarray:
        q = Counter(t for t in query_tokens if t in self.terms)
        if not q:
            return np.zeros(self.n_docs)
        term_ids = np.array([self.terms[t] for t in q], dtype=np.int64)
        weights = np.array(list(q.values()), dtype=np.float64)
        return _accel.bm25_accumulate(self.indptr, self.post_doc, self.post_tf, self.doc_len,
                                      term_ids, weights, self.idf, self.params.k1,
                                      self.params.b, self.avgdl, self.n_docs)

    def match(self, title: str, top_k: int = 10, threshold: float | None = None) -> list[MatchResult]:
        """Top ``top_k`` entries by score (ties by catalog id); zero scores are dropped."""
        scores = self.score_all(analyze(title, self.analyzer))
        hits = np.nonzero(scores > 0)[0]
        ranked = sorted(hits.tolist(), key=lambda d: (-scores[d], self.entries[d].catalog_id))
        return [MatchResult(self.entries[d].catalog_id, float(scores[d]),
                            threshold is not None and float(scores[d]) >= threshold)
                for d in ranked[:top_k]]

    def entry(self, catalog_id: str) -> CatalogEntry:
        return self.entries[self.position[catalog_id]]


def build_index(entries: Iterable[CatalogEntry], analyzer: AnalyzerConfig = AnalyzerConfig(),
                params: Bm25Params = Bm25Params()) -> TitleIndex:
    return TitleIndex(list(entries), analyzer, params)


def compute_threshold(scores, k_sigma: float = 2.0) -> float:
    """``mean + k_sigma * std`` (population std) of best-match scores."""
    arr = np.asarray(list(scores) if not isinstance(scores, np.ndarray) else scores, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("cannot compute a threshold from an empty sample")
    if k_sigma < 0:
        raise ValueError("k_sigma must be >= 0")
    return float(arr.mean() + k_sigma * arr.std())


# ------------------------------------------------------------------ catalog files

def _null(v: str | None) -> str | None:
    return None if v is None or v in ("", "\\N") else v


def read_catalog(path: str | Path) -> list[CatalogEntry]:
    """Read a tab-separated catalog.

    Accepts the native header ``id title year kind genres`` or the IMDb
    ``title.basics`` layout (``tconst titleType primaryTitle ... startYear ... genres``).
    """
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh, delimiter="\t", quoting=csv.QUOTE_NONE)
        cols = set(reader.fieldnames or ())
        imdb = "tconst" in cols
        need = {"tconst", "primaryTitle"} if imdb else {"id", "title"}
        if not need <= cols:
            raise CatalogError(f"catalog header lacks {sorted(need - cols)}")
        for row in reader:
            if imdb:
                cid, title = row["tconst"], row["primaryTitle"]
                year = _null(row.get("startYear"))
                kind = _IMDB_KIND.get(row.get("titleType") or "", "movie")
            else:
                cid, title = row["id"], row["title"]
                year = _null(row.get("year"))
                kind = _null(row.get("kind")) or "movie"
            genres = _null(row.get("genres"))
            if not cid or not title:
                raise CatalogError(f"catalog row without id or title: {row}")
            out.append(CatalogEntry(cid, title, int(year) if year else None, kind,
                                    tuple(genres.split(",")) if genres else ()))
    return out


def write_catalog(path: str | Path, entries: Iterable[CatalogEntry]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write("id\ttitle\tyear\tkind\tgenres\n")
        for e in entries:
            year = "\\N" if e.year is None else str(e.year)
            genres = ",".join(e.genres) if e.genres else "\\N"
            fh.write(f"{e.catalog_id}\t{e.primary_title}\t{year}\t{e.kind}\t{genres}\n")
