"""Dual lexical/semantic indexing and hybrid retrieval.

One unified index spans all platforms; each platform also gets its own index
whose document store keeps the raw field projection. On top sits a vector
store of fixed-dimension unit-norm embeddings. Queries combine lexical BM25
ranking, exact cosine nearest neighbours, metadata filters, and reciprocal
rank fusion.

The shipped embedder is deterministic feature hashing (token n-grams into
signed buckets, L2-normalized), standing in for any external model behind
the same interface; tests stay hermetic and the interface accepts any
d-dimensional replacement.
"""

from __future__ import annotations

import json
import math
import re
import struct
import threading
from collections import Counter
from dataclasses import dataclass, field
from datetime import datetime
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, Protocol

import numpy as np

from .errors import NotFoundError
from .normalize import UnifiedPost
from .platforms import Platform
from .util import ensure_utc, format_rfc3339, stable_hash64

_WORD_RE = re.compile(r"\w+", re.UNICODE)

BM25_K1 = 1.2
BM25_B = 0.75
RRF_CONSTANT = 60
DEFAULT_DIMENSION = 256


def tokenize(text: str) -> list[str]:
    """Unicode word segmentation, lowercased, accents kept, no stopwords."""
    return [m.group(0).lower() for m in _WORD_RE.finditer(text)]


# -- filters -------------------------------------------------------------------

@dataclass(frozen=True)
class SearchFilters:
    """Hard predicates over post metadata; empty filters match everything."""

    platforms: frozenset[Platform] | None = None
    main_type: str | None = None
    sub_type: str | None = None
    federal_party: str | None = None
    province: str | None = None
    tag: str | None = None
    seed_id: str | None = None
    date_from: datetime | None = None
    date_to: datetime | None = None

    def is_empty(self) -> bool:
        return self == SearchFilters()

    def matches(self, doc: dict) -> bool:
        if self.platforms is not None:
            token = doc.get("platform")
            if token is None or Platform(token) not in self.platforms:
                return False
        meta = doc.get("seed_meta", {})
        if self.main_type is not None and meta.get("main_type") != self.main_type:
            return False
        if self.sub_type is not None and meta.get("sub_type") != self.sub_type:
            return False
        if self.federal_party is not None and meta.get("federal_party") != self.federal_party:
            return False
        if self.province is not None and meta.get("province") != self.province:
            return False
        if self.tag is not None and self.tag not in meta.get("collection_tags", ()):
            return False
        if self.seed_id is not None and doc.get("seed_id") != self.seed_id:
            return False
        if self.date_from is not None and doc.get("published_at", "") < format_rfc3339(self.date_from):
            return False
        if self.date_to is not None and doc.get("published_at", "") >= format_rfc3339(self.date_to):
            return False
        return True


# -- lexical index ---------------------------------------------------------------

class LexicalIndex:
    """Inverted index with BM25 ranking and upsert semantics.

    Corpus statistics (document count, document frequencies, average length)
    always cover the whole index; filters restrict the candidate set only.
    """

    def __init__(self):
        self._postings: dict[str, dict[str, tuple[int, tuple[int, ...]]]] = {}
        self._docs: dict[str, dict] = {}
        self._doc_tokens: dict[str, list[str]] = {}
        self._total_len = 0
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._docs)

    def __contains__(self, post_id: str) -> bool:
        return post_id in self._docs

    def doc(self, post_id: str) -> dict:
        try:
            return self._docs[post_id]
        except KeyError:
            raise NotFoundError(f"post {post_id!r} not indexed") from None

    def docs(self) -> Iterable[dict]:
        return self._docs.values()

    def post_ids(self) -> list[str]:
        return sorted(self._docs)

    def document_frequency(self, token: str) -> int:
        return len(self._postings.get(token, ()))

    def postings(self, token: str) -> list[tuple[str, int, tuple[int, ...]]]:
        """Posting list sorted by post id: (post_id, term frequency, positions)."""
        plist = self._postings.get(token, {})
        return [(pid, tf, pos) for pid, (tf, pos) in sorted(plist.items())]

    def index(self, post_id: str, text: str, doc: dict) -> None:
        """Insert or replace one document."""
        with self._lock:
            if post_id in self._docs:
                self._remove_locked(post_id)
            tokens = tokenize(text)
            positions: dict[str, list[int]] = {}
            for i, token in enumerate(tokens):
                positions.setdefault(token, []).append(i)
            for token, pos in positions.items():
                self._postings.setdefault(token, {})[post_id] = (len(pos), tuple(pos))
            self._docs[post_id] = doc
            self._doc_tokens[post_id] = tokens
            self._total_len += len(tokens)

    def remove(self, post_id: str) -> None:
        with self._lock:
            if post_id in self._docs:
                self._remove_locked(post_id)

    def _remove_locked(self, post_id: str) -> None:
        tokens = self._doc_tokens.pop(post_id)
        self._total_len -= len(tokens)
        for token in set(tokens):
            plist = self._postings.get(token)
            if plist is not None:
                plist.pop(post_id, None)
                if not plist:
                    del self._postings[token]
        del self._docs[post_id]

    def search(
        self,
        query: str,
        filters: SearchFilters | None = None,
        k: int = 10,
        k1: float = BM25_K1,
        b: float = BM25_B,
    ) -> list[tuple[str, float]]:
        """BM25 top-k; ties broken by ascending post id."""
        if k <= 0:
            raise ValueError("k must be positive")
        filters = filters or SearchFilters()
        n_docs = len(self._docs)
        if n_docs == 0:
            return []
        avgdl = self._total_len / n_docs

        scores: dict[str, float] = {}
        for token, qtf in Counter(tokenize(query)).items():
            plist = self._postings.get(token)
            if not plist:
                continue
            df = len(plist)
            idf = math.log(1.0 + (n_docs - df + 0.5) / (df + 0.5))
            for post_id, (tf, _) in plist.items():
                dl = len(self._doc_tokens[post_id])
                denom = tf + k1 * (1.0 - b + b * dl / avgdl) if avgdl > 0 else tf + k1
                scores[post_id] = scores.get(post_id, 0.0) + qtf * idf * tf * (k1 + 1.0) / denom

        ranked = [
            (post_id, score)
            for post_id, score in scores.items()
            if filters.matches(self._docs[post_id])
        ]
        ranked.sort(key=lambda item: (-item[1], item[0]))
        return ranked[:k]

    # -- persistence ---------------------------------------------------------

    def to_segment(self, kind: str) -> dict:
        return {
            "format": "meo.lexical-segment",
            "version": 1,
            "kind": kind,
            "docs": {pid: self._docs[pid] for pid in sorted(self._docs)},
            "texts": {pid: " ".join(self._doc_tokens[pid]) for pid in sorted(self._doc_tokens)},
        }

    @classmethod
    def from_segment(cls, segment: dict) -> "LexicalIndex":
        if segment.get("format") != "meo.lexical-segment" or segment.get("version") != 1:
            raise ValueError("unrecognized lexical segment format")
        index = cls()
        for post_id, doc in segment["docs"].items():
            index.index(post_id, segment["texts"][post_id], doc)
        return index


# -- embeddings -------------------------------------------------------------------

class Embedder(Protocol):
    dimension: int

    def embed(self, text: str) -> np.ndarray | None: ...


class HashingEmbedder:
    """Deterministic hashed n-gram embedder producing unit-norm vectors.

    Token unigrams and bigrams map to signed buckets via a keyless blake2b
    hash, so the embedding of a text is identical across processes and
    platforms. Empty text yields None (the null embedding), which nearest
    neighbour search excludes.
    """

    def __init__(self, dimension: int = DEFAULT_DIMENSION):
        if dimension < 2:
            raise ValueError("dimension must be >= 2")
        self.dimension = dimension

    def embed(self, text: str) -> np.ndarray | None:
        tokens = tokenize(text)
        if not tokens:
            return None
        features = list(tokens)
        features.extend(f"{a} {b}" for a, b in zip(tokens, tokens[1:]))
        vec = np.zeros(self.dimension, dtype=np.float64)
        for feature in features:
            h = stable_hash64(feature)
            sign = 1.0 if (h >> 63) & 1 == 0 else -1.0
            vec[h % self.dimension] += sign
        norm = float(np.linalg.norm(vec))
        if norm == 0.0:
            vec[stable_hash64(features[0]) % self.dimension] = 1.0
            norm = 1.0
        return (vec / norm).astype(np.float32)


@dataclass
class PostVector:
    post_id: str
    vector: np.ndarray | None  # None encodes the null embedding

    @property
    def is_null(self) -> bool:
        return self.vector is None

    @property
    def norm(self) -> float:
        return 0.0 if self.vector is None else float(np.linalg.norm(self.vector))


class VectorStore:
    """Exact cosine top-k over float32 vectors, computed in float64."""

    def __init__(self, dimension: int = DEFAULT_DIMENSION):
        self.dimension = dimension
        self._vectors: dict[str, np.ndarray] = {}  # non-null only
        self._null_ids: set[str] = set()
        self._lock = threading.Lock()
        self._matrix: np.ndarray | None = None
        self._matrix_ids: list[str] = []
        self._norms: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self._vectors) + len(self._null_ids)

    def upsert(self, post_id: str, vector: np.ndarray | None) -> None:
        with self._lock:
            self._vectors.pop(post_id, None)
            self._null_ids.discard(post_id)
            if vector is None:
                self._null_ids.add(post_id)
            else:
                vector = np.asarray(vector, dtype=np.float32)
                if vector.shape != (self.dimension,):
                    raise ValueError(
                        f"vector dimension {vector.shape} != ({self.dimension},)"
                    )
                self._vectors[post_id] = vector
            self._matrix = None

    def remove(self, post_id: str) -> None:
        with self._lock:
            self._vectors.pop(post_id, None)
            self._null_ids.discard(post_id)
            self._matrix = None

    def get(self, post_id: str) -> PostVector:
        if post_id in self._null_ids:
            return PostVector(post_id, None)
        vec = self._vectors.get(post_id)
        if vec is None:
            raise NotFoundError(f"no vector for post {post_id!r}")
        return PostVector(post_id, vec)

    def _ensure_matrix(self) -> tuple[list[str], np.ndarray, np.ndarray]:
        with self._lock:
            if self._matrix is None:
                self._matrix_ids = sorted(self._vectors)
                if self._matrix_ids:
                    self._matrix = np.stack(
                        [self._vectors[pid] for pid in self._matrix_ids]
                    ).astype(np.float64)
                else:
                    self._matrix = np.zeros((0, self.dimension), dtype=np.float64)
                norms = np.linalg.norm(self._matrix, axis=1)
                norms[norms == 0.0] = 1.0
                self._norms = norms
            return self._matrix_ids, self._matrix, self._norms

    def knn(
        self,
        query: np.ndarray,
        k: int,
        filters: SearchFilters | None = None,
        doc_lookup: Callable[[str], dict] | None = None,
    ) -> list[tuple[str, float]]:
        """Exact top-k by cosine over non-null vectors passing the filters."""
        if k <= 0:
            raise ValueError("k must be positive")
        query = np.asarray(query, dtype=np.float64)
        if query.shape != (self.dimension,):
            raise ValueError(f"query dimension {query.shape} != ({self.dimension},)")
        qnorm = float(np.linalg.norm(query))
        if qnorm == 0.0:
            return []
        ids, matrix, norms = self._ensure_matrix()
        if not ids:
            return []
        scores = (matrix @ query) / (norms * qnorm)
        ranked = []
        for i, post_id in enumerate(ids):
            if filters is not None and doc_lookup is not None:
                if not filters.matches(doc_lookup(post_id)):
                    continue
            ranked.append((post_id, float(scores[i])))
        ranked.sort(key=lambda item: (-item[1], item[0]))
        return ranked[:k]

    # -- persistence -------------------------------------------------------------

    def save(self, path: str | Path) -> None:
        """Binary layout: one JSON header line, then (id, d float32) records."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        header = {
            "format": "meo.vectors",
            "version": 1,
            "dimension": self.dimension,
            "count": len(self),
        }
        with open(path, "wb") as fh:
            fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
            for post_id in sorted(set(self._vectors) | self._null_ids):
                vec = self._vectors.get(post_id)
                data = (
                    vec.tobytes()
                    if vec is not None
                    else np.zeros(self.dimension, dtype=np.float32).tobytes()
                )
                encoded = post_id.encode("utf-8")
                fh.write(struct.pack("<I", len(encoded)))
                fh.write(encoded)
                fh.write(data)

    @classmethod
    def load(cls, path: str | Path) -> "VectorStore":
        with open(path, "rb") as fh:
            header = json.loads(fh.readline())
            if header.get("format") != "meo.vectors" or header.get("version") != 1:
                raise ValueError("unrecognized vector store format")
            store = cls(dimension=header["dimension"])
            vec_bytes = header["dimension"] * 4
            for _ in range(header["count"]):
                (id_len,) = struct.unpack("<I", fh.read(4))
                post_id = fh.read(id_len).decode("utf-8")
                vec = np.frombuffer(fh.read(vec_bytes), dtype=np.float32).copy()
                store.upsert(post_id, None if not vec.any() else vec)
        return store


# -- hybrid queries -----------------------------------------------------------------

class Fusion(str, Enum):
    LEXICAL_ONLY = "lexical_only"
    SEMANTIC_ONLY = "semantic_only"
    RRF = "rrf"


@dataclass
class HybridQuery:
    text: str | None = None
    vector: np.ndarray | None = None
    filters: SearchFilters = field(default_factory=SearchFilters)
    k: int = 10
    fusion: Fusion = Fusion.RRF

    def __post_init__(self) -> None:
        if self.k <= 0:
            raise ValueError("k must be positive")


def rrf_fuse(lists: list[list[str]], constant: int = RRF_CONSTANT) -> dict[str, float]:
    """score(doc) = sum over lists of 1/(constant + rank), rank starting at 1."""
    scores: dict[str, float] = {}
    for ranked in lists:
        for rank, post_id in enumerate(ranked, start=1):
            scores[post_id] = scores.get(post_id, 0.0) + 1.0 / (constant + rank)
    return scores


# -- the engine ---------------------------------------------------------------------

class IndexEngine:
    """Unified + per-platform lexical indices plus the semantic vector layer."""

    def __init__(self, embedder: Embedder | None = None):
        self.embedder: Embedder = embedder or HashingEmbedder()
        self.unified = LexicalIndex()
        self.platform_indices: dict[Platform, LexicalIndex] = {}
        self.vectors = VectorStore(dimension=self.embedder.dimension)

    def platform_index(self, platform: Platform) -> LexicalIndex:
        index = self.platform_indices.get(platform)
        if index is None:
            index = LexicalIndex()
            self.platform_indices[platform] = index
        return index

    def document_count(self) -> int:
        return len(self.unified)

    def platform_counts(self) -> dict[Platform, int]:
        return {p: len(ix) for p, ix in self.platform_indices.items()}

    def index_post(self, post: UnifiedPost, raw_doc: dict | None = None) -> None:
        """Upsert a post into both indices and the vector store."""
        doc = post.to_doc()
        self.unified.index(post.post_id, post.text, doc)
        projection = dict(raw_doc) if raw_doc is not None else {}
        projection["post_id"] = post.post_id
        self.platform_index(post.platform).index(post.post_id, post.text, projection)
        self.vectors.upsert(post.post_id, self.embedder.embed(post.text))

    def get_post(self, post_id: str) -> UnifiedPost:
        return UnifiedPost.from_doc(self.unified.doc(post_id))

    def iter_docs(self) -> Iterable[dict]:
        return self.unified.docs()

    def embed(self, text: str) -> np.ndarray | None:
        return self.embedder.embed(text)

    def search_lexical(
        self, query: str, filters: SearchFilters | None = None, k: int = 10
    ) -> list[tuple[str, float]]:
        return self.unified.search(query, filters, k)

    def search_semantic(
        self, query_vector: np.ndarray, filters: SearchFilters | None = None, k: int = 10
    ) -> list[tuple[str, float]]:
        return self.vectors.knn(query_vector, k, filters or SearchFilters(), self.unified.doc)

    def browse(self, filters: SearchFilters, k: int) -> list[tuple[str, float]]:
        """Filters-only listing, newest first, score fixed at 0."""
        matching = [d for d in self.unified.docs() if filters.matches(d)]
        matching.sort(key=lambda d: (d["published_at"], d["post_id"]))
        matching.reverse()
        return [(d["post_id"], 0.0) for d in matching[:k]]

    def search_hybrid(self, q: HybridQuery) -> list[tuple[str, float]]:
        if q.text is None and q.vector is None:
            if q.filters.is_empty():
                raise ValueError("hybrid query needs text, a vector, or filters")
            return self.browse(q.filters, q.k)

        if q.fusion is Fusion.LEXICAL_ONLY:
            if q.text is None:
                raise ValueError("lexical_only fusion requires query text")
            return self.search_lexical(q.text, q.filters, q.k)

        query_vector = q.vector
        if query_vector is None and q.text is not None:
            query_vector = self.embed(q.text)

        if q.fusion is Fusion.SEMANTIC_ONLY:
            if query_vector is None:
                raise ValueError("semantic_only fusion requires a non-empty query")
            return self.search_semantic(query_vector, q.filters, q.k)

        lists: list[list[str]] = []
        if q.text is not None:
            lists.append([pid for pid, _ in self.search_lexical(q.text, q.filters, q.k)])
        if query_vector is not None:
            lists.append([pid for pid, _ in self.search_semantic(query_vector, q.filters, q.k)])
        fused = rrf_fuse(lists)
        ranked = sorted(fused.items(), key=lambda item: (-item[1], item[0]))
        return ranked[: q.k]

    # -- consistency and persistence -------------------------------------------------

    def check_dual_consistency(self) -> list[str]:
        """Every unified post must sit in exactly one platform index, counts agreeing."""
        problems = []
        per_platform: dict[Platform, int] = {p: 0 for p in self.platform_indices}
        for doc in self.unified.docs():
            platform = Platform(doc["platform"])
            index = self.platform_indices.get(platform)
            if index is None or doc["post_id"] not in index:
                problems.append(f"{doc['post_id']} missing from its platform index")
                continue
            per_platform[platform] = per_platform.get(platform, 0) + 1
            others = sum(
                1 for p, ix in self.platform_indices.items()
                if p is not platform and doc["post_id"] in ix
            )
            if others:
                problems.append(f"{doc['post_id']} present in {others} other platform indices")
        for platform, index in self.platform_indices.items():
            if len(index) != per_platform.get(platform, 0):
                problems.append(
                    f"platform {platform} count {len(index)} != unified view "
                    f"{per_platform.get(platform, 0)}"
                )
        return problems

    def save(self, directory: str | Path) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        (directory / "unified.json").write_text(
            json.dumps(self.unified.to_segment("unified"), sort_keys=True), encoding="utf-8"
        )
        for platform, index in self.platform_indices.items():
            (directory / f"platform_{platform.value}.json").write_text(
                json.dumps(index.to_segment(platform.value), sort_keys=True), encoding="utf-8"
            )
        self.vectors.save(directory / "vectors.bin")

    @classmethod
    def load(cls, directory: str | Path, embedder: Embedder | None = None) -> "IndexEngine":
        directory = Path(directory)
        engine = cls(embedder=embedder)
        unified_path = directory / "unified.json"
        if unified_path.exists():
            engine.unified = LexicalIndex.from_segment(json.loads(unified_path.read_text()))
        for path in sorted(directory.glob("platform_*.json")):
            platform = Platform(path.stem.removeprefix("platform_"))
            engine.platform_indices[platform] = LexicalIndex.from_segment(
                json.loads(path.read_text())
            )
        vectors_path = directory / "vectors.bin"
        if vectors_path.exists():
            engine.vectors = VectorStore.load(vectors_path)
        return engine
