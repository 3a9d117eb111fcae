"""Independent brute-force reference implementations for verification.

Everything here recomputes answers by the most naive method available (day
sets, exhaustive scans, dense power iteration, full partition enumeration)
and deliberately shares no code with the production implementations it
checks. Oracles take plain inputs (token lists, vectors, edge tuples, day
intervals) so they can be fed from either side of a comparison.

These run in the shipped package, not test scratch, so verification runs
are reproducible by third parties. Instance caps are documented per oracle;
exceeding one raises ValueError.
"""

from __future__ import annotations

import math
from datetime import date, timedelta
from typing import Iterable, Mapping, Sequence

MAX_ORACLE_POSTS = 10_000
MAX_MODULARITY_NODES = 12


# -- coverage / gaps ---------------------------------------------------------------

def oracle_coverage_days(
    covered_lists: Iterable[Iterable[tuple[date, date]]],
) -> set[date]:
    """Union of half-open [start, end) day intervals, as an explicit day set."""
    days: set[date] = set()
    for intervals in covered_lists:
        for start, end in intervals:
            d = start
            while d < end:
                days.add(d)
                d += timedelta(days=1)
    return days


def oracle_gaps(
    window: tuple[date, date],
    covered_lists: Iterable[Iterable[tuple[date, date]]],
) -> list[tuple[date, date]]:
    """Day-by-day complement of coverage within the window, re-grouped into runs."""
    covered = oracle_coverage_days(covered_lists)
    gaps: list[tuple[date, date]] = []
    run_start: date | None = None
    d = window[0]
    while d <= window[1]:
        missing = d < window[1] and d not in covered
        if missing and run_start is None:
            run_start = d
        if not missing and run_start is not None:
            gaps.append((run_start, d))
            run_start = None
        d += timedelta(days=1)
    return gaps


# -- BM25 ----------------------------------------------------------------------------

def oracle_bm25(
    doc_tokens: Mapping[str, Sequence[str]],
    query_tokens: Sequence[str],
    k1: float = 1.2,
    b: float = 0.75,
) -> list[tuple[str, float]]:
    """Full-corpus BM25 scan over pre-tokenized documents.

    Scores every document against every query token occurrence; documents
    sharing no query token are omitted. Returns all scored documents ranked
    by (-score, doc_id). Cap: MAX_ORACLE_POSTS documents.
    """
    if len(doc_tokens) > MAX_ORACLE_POSTS:
        raise ValueError(f"oracle capped at {MAX_ORACLE_POSTS} documents")
    n = len(doc_tokens)
    if n == 0:
        return []
    avgdl = sum(len(toks) for toks in doc_tokens.values()) / n

    results = []
    for doc_id, tokens in doc_tokens.items():
        score = 0.0
        matched = False
        for term in query_tokens:
            tf = sum(1 for t in tokens if t == term)
            if tf == 0:
                continue
            matched = True
            df = sum(1 for toks in doc_tokens.values() if term in toks)
            idf = math.log(1.0 + (n - df + 0.5) / (df + 0.5))
            if avgdl > 0:
                denom = tf + k1 * (1.0 - b + b * len(tokens) / avgdl)
            else:
                denom = tf + k1
            score += idf * tf * (k1 + 1.0) / denom
        if matched:
            results.append((doc_id, score))
    results.sort(key=lambda item: (-item[1], item[0]))
    return results


# -- cosine kNN -------------------------------------------------------------------------

def oracle_knn(
    vectors: Mapping[str, Sequence[float]],
    query: Sequence[float],
    k: int,
) -> list[tuple[str, float]]:
    """Exhaustive cosine scan; zero vectors are excluded as null embeddings.

    Cap: MAX_ORACLE_POSTS vectors.
    """
    if len(vectors) > MAX_ORACLE_POSTS:
        raise ValueError(f"oracle capped at {MAX_ORACLE_POSTS} vectors")
    qnorm = math.sqrt(sum(float(x) * float(x) for x in query))
    if qnorm == 0.0:
        return []
    scored = []
    for vec_id, vec in vectors.items():
        norm = math.sqrt(sum(float(x) * float(x) for x in vec))
        if norm == 0.0:
            continue
        dot = sum(float(x) * float(y) for x, y in zip(vec, query))
        scored.append((vec_id, dot / (norm * qnorm)))
    scored.sort(key=lambda item: (-item[1], item[0]))
    return scored[:k]


# -- PageRank -----------------------------------------------------------------------------

def oracle_pagerank(
    edges: Iterable[tuple[str, str, float]],
    nodes: Iterable[str] = (),
    damping: float = 0.85,
    iterations: int = 5_000,
) -> dict[str, float]:
    """Dict-based power iteration run for a fixed, generous iteration count.

    Self-loops are ignored and dangling mass spreads uniformly, mirroring the
    contract under test but with none of its code or data structures.
    """
    out: dict[str, dict[str, float]] = {}
    node_set: set[str] = set(nodes)
    for src, dst, w in edges:
        node_set.add(src)
        node_set.add(dst)
        if src == dst:
            continue
        out.setdefault(src, {})
        out[src][dst] = out[src].get(dst, 0.0) + float(w)
    ordered = sorted(node_set)
    n = len(ordered)
    if n == 0:
        raise ValueError("graph is empty")
    rank = {node: 1.0 / n for node in ordered}
    for _ in range(iterations):
        new_rank = {node: (1.0 - damping) / n for node in ordered}
        dangling_mass = sum(rank[u] for u in ordered if not out.get(u))
        for node in ordered:
            new_rank[node] += damping * dangling_mass / n
        for src, dsts in out.items():
            strength = sum(dsts.values())
            for dst, w in dsts.items():
                new_rank[dst] += damping * rank[src] * w / strength
        delta = sum(abs(new_rank[node] - rank[node]) for node in ordered)
        rank = new_rank
        if delta < 1e-14:
            break
    return rank


# -- modularity ---------------------------------------------------------------------------

def _oracle_modularity_q(
    sym: Mapping[tuple[str, str], float],
    degree: Mapping[str, float],
    two_m: float,
    partition: Mapping[str, int],
) -> float:
    q = 0.0
    nodes = sorted(degree)
    for u in nodes:
        for v in nodes:
            if partition[u] != partition[v]:
                continue
            key = (u, v) if u < v else (v, u)
            a_uv = sym.get(key, 0.0) if u != v else 0.0
            q += a_uv / two_m - degree[u] * degree[v] / (two_m * two_m)
    return q


def oracle_modularity(
    edges: Iterable[tuple[str, str, float]], partition: Mapping[str, int]
) -> float:
    """Direct double-loop Newman modularity on the symmetrized graph."""
    sym: dict[tuple[str, str], float] = {}
    nodes: set[str] = set()
    for u, v, w in edges:
        nodes.add(u)
        nodes.add(v)
        if u == v:
            continue
        key = (u, v) if u < v else (v, u)
        sym[key] = sym.get(key, 0.0) + float(w)
    degree = {node: 0.0 for node in nodes}
    for (u, v), w in sym.items():
        degree[u] += w
        degree[v] += w
    two_m = sum(degree.values())
    if two_m == 0.0:
        raise ValueError("graph has zero total weight")
    return _oracle_modularity_q(sym, degree, two_m, partition)


def _set_partitions(items: list[str]):
    """Enumerate every set partition of `items` (restricted-growth strings)."""
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for sub in _set_partitions(rest):
        for i in range(len(sub)):
            yield sub[:i] + [[first] + sub[i]] + sub[i + 1:]
        yield [[first]] + sub


def oracle_best_modularity(
    edges: Iterable[tuple[str, str, float]],
) -> tuple[float, dict[str, int]]:
    """Exhaustive search for the maximum-modularity partition.

    Cap: MAX_MODULARITY_NODES nodes (partition counts grow as Bell numbers).
    """
    edges = list(edges)
    nodes = sorted({u for u, _, _ in edges} | {v for _, v, _ in edges})
    if len(nodes) > MAX_MODULARITY_NODES:
        raise ValueError(f"oracle capped at {MAX_MODULARITY_NODES} nodes")
    sym: dict[tuple[str, str], float] = {}
    for u, v, w in edges:
        if u == v:
            continue
        key = (u, v) if u < v else (v, u)
        sym[key] = sym.get(key, 0.0) + float(w)
    degree = {node: 0.0 for node in nodes}
    for (u, v), w in sym.items():
        degree[u] += w
        degree[v] += w
    two_m = sum(degree.values())
    if two_m == 0.0:
        raise ValueError("graph has zero total weight")

    best_q = -math.inf
    best: dict[str, int] = {}
    for blocks in _set_partitions(nodes):
        partition = {node: i for i, block in enumerate(blocks) for node in block}
        q = _oracle_modularity_q(sym, degree, two_m, partition)
        if q > best_q:
            best_q = q
            best = partition
    return best_q, best


# -- lag scan --------------------------------------------------------------------------------

def oracle_lag_scan(
    a: tuple[date, Sequence[float]],
    b: tuple[date, Sequence[float]],
    max_lag_days: int,
) -> list[tuple[int, float]]:
    """Pearson correlation recomputed directly at every lag with >= 3 overlap.

    Returns (lag, correlation) pairs for every defined lag, unsorted.
    """
    a_start, a_vals = a
    b_start, b_vals = b
    out: list[tuple[int, float]] = []
    for lag in range(-max_lag_days, max_lag_days + 1):
        xs, ys = [], []
        for i, va in enumerate(a_vals):
            d = a_start + timedelta(days=i)
            j = (d + timedelta(days=lag) - b_start).days
            if 0 <= j < len(b_vals):
                xs.append(float(va))
                ys.append(float(b_vals[j]))
        if len(xs) < 3:
            continue
        n = len(xs)
        mx = sum(xs) / n
        my = sum(ys) / n
        vx = sum((x - mx) ** 2 for x in xs)
        vy = sum((y - my) ** 2 for y in ys)
        if vx == 0.0 or vy == 0.0:
            continue
        cov = sum((x - mx) * (y - my) for x, y in zip(xs, ys))
        out.append((lag, cov / math.sqrt(vx * vy)))
    return out
