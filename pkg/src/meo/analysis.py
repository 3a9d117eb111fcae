"""Graph, temporal, and engagement analyses over collected posts.

All functions here are pure over immutable snapshots: graphs built from
mention edges, daily time series, and per-post engagement values. Community
detection is greedy modularity maximization with deterministic tie-breaks,
chosen over stochastic methods so results are stable at desk scale.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from datetime import date, datetime, timedelta
from typing import Callable, Iterable, Mapping

import numpy as np

from .errors import AnalysisError, InsufficientDataError
from .ledger import Interval
from .normalize import UnifiedPost
from .platforms import Platform
from .seeds import SeedRegistry

_MENTION_RE = re.compile(r"@(\w+)", re.UNICODE)


class InteractionGraph:
    """Directed weighted graph over seed or post identifiers."""

    def __init__(self):
        self._out: dict[str, dict[str, float]] = {}
        self._nodes: set[str] = set()

    def add_node(self, node: str) -> None:
        self._nodes.add(node)

    def add_edge(self, src: str, dst: str, weight: float = 1.0) -> None:
        if weight < 0:
            raise ValueError("edge weights must be >= 0")
        self._nodes.add(src)
        self._nodes.add(dst)
        self._out.setdefault(src, {})
        self._out[src][dst] = self._out[src].get(dst, 0.0) + weight

    @property
    def nodes(self) -> list[str]:
        return sorted(self._nodes)

    def edges(self) -> list[tuple[str, str, float]]:
        return sorted(
            (src, dst, w) for src, dsts in self._out.items() for dst, w in dsts.items()
        )

    def out_edges(self, node: str) -> dict[str, float]:
        return dict(self._out.get(node, {}))

    def edge_count(self) -> int:
        return sum(len(d) for d in self._out.values())

    def is_empty(self) -> bool:
        return not self._nodes

    def symmetric_weights(self) -> dict[tuple[str, str], float]:
        """Undirected weights A[u,v] = w(u->v) + w(v->u); self-loops dropped."""
        sym: dict[tuple[str, str], float] = {}
        for src, dsts in self._out.items():
            for dst, w in dsts.items():
                if src == dst:
                    continue
                key = (src, dst) if src < dst else (dst, src)
                sym[key] = sym.get(key, 0.0) + w
        return sym

    @classmethod
    def from_edges(cls, edges: Iterable[tuple[str, str, float]]) -> "InteractionGraph":
        g = cls()
        for src, dst, w in edges:
            g.add_edge(str(src), str(dst), float(w))
        return g

    @classmethod
    def from_edge_list_text(cls, text: str) -> "InteractionGraph":
        """Parse 'src dst weight' lines (weight optional, default 1)."""
        g = cls()
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) == 2:
                g.add_edge(parts[0], parts[1], 1.0)
            elif len(parts) == 3:
                g.add_edge(parts[0], parts[1], float(parts[2]))
            else:
                raise ValueError(f"bad edge line: {line!r}")
        return g

    def to_edge_list_text(self) -> str:
        return "\n".join(f"{s} {d} {w:g}" for s, d, w in self.edges()) + "\n"


def build_interaction_graph(
    posts: Iterable[UnifiedPost], registry: SeedRegistry
) -> InteractionGraph:
    """Edges: post author -> mentioned seed, for @handle mentions that resolve
    on the post's own platform. Weight accumulates per mention."""
    g = InteractionGraph()
    for post in posts:
        g.add_node(post.seed_id)
        for match in _MENTION_RE.finditer(post.text):
            target = registry.find_by_handle(post.platform, match.group(1))
            if target is not None and target.id != post.seed_id:
                g.add_edge(post.seed_id, target.id, 1.0)
    return g


# -- PageRank ---------------------------------------------------------------------

@dataclass
class PageRankResult:
    scores: dict[str, float]
    converged: bool
    iterations: int


def pagerank(
    g: InteractionGraph,
    damping: float = 0.85,
    tol: float = 1e-9,
    max_iter: int = 200,
) -> PageRankResult:
    """Power iteration with uniform teleport; dangling mass spreads uniformly.

    Self-loops are dropped. Scores sum to 1; convergence is L1 delta < tol.
    """
    if g.is_empty():
        raise ValueError("graph is empty")
    nodes = g.nodes
    n = len(nodes)
    idx = {node: i for i, node in enumerate(nodes)}

    weights = np.zeros((n, n), dtype=np.float64)
    for src, dsts in ((s, g.out_edges(s)) for s in nodes):
        for dst, w in dsts.items():
            if src != dst:
                weights[idx[src], idx[dst]] = w
    out_strength = weights.sum(axis=1)
    dangling = out_strength == 0.0
    transition = np.zeros_like(weights)
    nonzero = ~dangling
    transition[nonzero] = weights[nonzero] / out_strength[nonzero, None]

    rank = np.full(n, 1.0 / n)
    teleport = (1.0 - damping) / n
    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        dangling_mass = rank[dangling].sum() / n
        new_rank = damping * (transition.T @ rank + dangling_mass) + teleport
        delta = float(np.abs(new_rank - rank).sum())
        rank = new_rank
        if delta < tol:
            converged = True
            break
    return PageRankResult(
        scores={node: float(rank[idx[node]]) for node in nodes},
        converged=converged,
        iterations=iterations,
    )


# -- modularity and communities ------------------------------------------------------

def modularity(g: InteractionGraph, partition: Mapping[str, object]) -> float:
    """Newman modularity Q on the weight-symmetrized undirected graph."""
    missing = [node for node in g.nodes if node not in partition]
    if missing:
        raise ValueError(f"partition does not label nodes: {missing[:5]}")
    sym = g.symmetric_weights()
    two_m = 2.0 * sum(sym.values())
    if two_m == 0.0:
        raise AnalysisError("graph has zero total weight")

    degree: dict[str, float] = {node: 0.0 for node in g.nodes}
    for (u, v), w in sym.items():
        degree[u] += w
        degree[v] += w

    internal: dict[object, float] = {}
    total: dict[object, float] = {}
    for node in g.nodes:
        c = partition[node]
        total[c] = total.get(c, 0.0) + degree[node]
    for (u, v), w in sym.items():
        if partition[u] == partition[v]:
            internal[partition[u]] = internal.get(partition[u], 0.0) + 2.0 * w

    return sum(
        internal.get(c, 0.0) / two_m - (total[c] / two_m) ** 2 for c in total
    )


def detect_communities(g: InteractionGraph) -> dict[str, str]:
    """Greedy agglomerative modularity maximization.

    Merges the community pair with the largest positive modularity gain;
    ties resolve to the lexicographically smallest label pair. Final labels
    are each community's smallest member id.
    """
    if g.is_empty():
        raise ValueError("graph is empty")
    sym = g.symmetric_weights()
    two_m = 2.0 * sum(sym.values())
    if two_m == 0.0:
        # no edges: every node is its own community
        return {node: node for node in g.nodes}

    members: dict[str, set[str]] = {node: {node} for node in g.nodes}
    # a[c]: community degree fraction; between[(a,b)]: symmetric weight fraction
    degree: dict[str, float] = {node: 0.0 for node in g.nodes}
    between: dict[tuple[str, str], float] = {}
    for (u, v), w in sym.items():
        degree[u] += w
        degree[v] += w
        between[(u, v) if u < v else (v, u)] = between.get((u, v) if u < v else (v, u), 0.0) + w
    a = {node: degree[node] / two_m for node in g.nodes}
    e = {pair: w / two_m for pair, w in between.items()}

    while len(members) > 1:
        # sorted iteration + strict improvement: exact ties resolve to the
        # lexicographically smallest community-label pair
        best_gain = 1e-12
        best_pair: tuple[str, str] | None = None
        for (ca, cb), eab in sorted(e.items()):
            gain = 2.0 * (eab - a[ca] * a[cb])
            if gain > best_gain:
                best_gain = gain
                best_pair = (ca, cb)
        if best_pair is None:
            break
        ca, cb = best_pair
        keep, absorb = (ca, cb) if ca < cb else (cb, ca)
        members[keep] |= members.pop(absorb)
        a[keep] = a[keep] + a.pop(absorb)
        e.pop((min(ca, cb), max(ca, cb)), None)
        # redirect absorbed community's pair weights onto the kept label
        for (x, y), w in list(e.items()):
            if absorb in (x, y):
                other = y if x == absorb else x
                del e[(x, y)]
                key = (keep, other) if keep < other else (other, keep)
                if other != keep:
                    e[key] = e.get(key, 0.0) + w

    labels: dict[str, str] = {}
    for community in members.values():
        label = min(community)
        for node in community:
            labels[node] = label
    return labels


# -- temporal pattern matching ----------------------------------------------------------

@dataclass
class TimeSeries:
    """Daily-bucketed series; missing days inside the window are explicit zeros."""

    key: str
    start: date
    values: list[float]

    def __post_init__(self) -> None:
        if not self.values:
            raise ValueError("series must be non-empty")

    @property
    def end(self) -> date:
        return self.start + timedelta(days=len(self.values))

    def value_on(self, d: date) -> float | None:
        offset = (d - self.start).days
        if 0 <= offset < len(self.values):
            return self.values[offset]
        return None

    @classmethod
    def from_buckets(cls, key: str, buckets: Mapping[date, float],
                     window: Interval | None = None) -> "TimeSeries":
        if not buckets and window is None:
            raise ValueError("series must be non-empty")
        start = window.start if window else min(buckets)
        end = window.end if window else max(buckets) + timedelta(days=1)
        n = (end - start).days
        values = [0.0] * n
        for d, v in buckets.items():
            offset = (d - start).days
            if 0 <= offset < n:
                values[offset] += v
        return cls(key=key, start=start, values=values)


@dataclass
class TemporalMatch:
    best_lag: int
    correlation: float


def _pearson(xs: list[float], ys: list[float]) -> float | None:
    n = len(xs)
    mean_x = sum(xs) / n
    mean_y = sum(ys) / n
    var_x = sum((x - mean_x) ** 2 for x in xs)
    var_y = sum((y - mean_y) ** 2 for y in ys)
    if var_x == 0.0 or var_y == 0.0:
        return None
    cov = sum((x - mean_x) * (y - mean_y) for x, y in zip(xs, ys))
    return cov / math.sqrt(var_x * var_y)


def temporal_match(a: TimeSeries, b: TimeSeries, max_lag_days: int) -> TemporalMatch:
    """Best integer lag in [-max_lag, +max_lag] by Pearson correlation.

    Positive lag means b's pattern trails a by that many days. Ties resolve
    to the smallest |lag|, negative first. Lags with under 3 overlapping days
    or zero variance are undefined and excluded; if every lag is undefined
    the correlation is reported as an error, never as 0.
    """
    if max_lag_days < 0:
        raise ValueError("max_lag_days must be >= 0")
    candidates: list[tuple[float, int]] = []
    any_overlap = False
    for lag in range(-max_lag_days, max_lag_days + 1):
        xs, ys = [], []
        lo = max(a.start, b.start - timedelta(days=lag))
        hi = min(a.end, b.end - timedelta(days=lag))
        d = lo
        while d < hi:
            va = a.value_on(d)
            vb = b.value_on(d + timedelta(days=lag))
            if va is not None and vb is not None:
                xs.append(va)
                ys.append(vb)
            d += timedelta(days=1)
        if len(xs) < 3:
            continue
        any_overlap = True
        corr = _pearson(xs, ys)
        if corr is not None:
            candidates.append((corr, lag))
    if not any_overlap:
        raise InsufficientDataError("series overlap under 3 days at every lag")
    if not candidates:
        raise AnalysisError("correlation undefined: zero variance at every lag")
    candidates.sort(key=lambda item: (-item[0], abs(item[1]), item[1]))
    corr, lag = candidates[0]
    return TemporalMatch(best_lag=lag, correlation=corr)


def timeline_counts(
    posts: Iterable[UnifiedPost | dict], window: Interval
) -> dict[Platform, TimeSeries]:
    """Zero-filled daily post counts per platform over the window."""
    buckets: dict[Platform, dict[date, float]] = {}
    for post in posts:
        doc = post.to_doc() if isinstance(post, UnifiedPost) else post
        day = datetime.fromisoformat(doc["published_at"].replace("Z", "+00:00")).date()
        if not window.contains_day(day):
            continue
        per_platform = buckets.setdefault(Platform(doc["platform"]), {})
        per_platform[day] = per_platform.get(day, 0.0) + 1
    return {
        p: TimeSeries.from_buckets(p.value, buckets.get(p, {}), window=window)
        for p in Platform
    }


# -- engagement change ---------------------------------------------------------------------

@dataclass
class EngagementChange:
    mean_a: float
    mean_b: float
    pct_change: float


def engagement_change(
    posts: Iterable[UnifiedPost | dict],
    group_filter: Callable[[dict], bool],
    period_a: Interval,
    period_b: Interval,
    metric: str = "likes",
) -> EngagementChange:
    """Period-over-period mean engagement comparison for a post group.

    pct_change = (mean_b - mean_a) / mean_a * 100 over per-post values of the
    chosen metric; posts whose platform does not expose the metric are
    excluded. Empty periods or a zero baseline are errors, not zeros.
    """
    values_a: list[float] = []
    values_b: list[float] = []
    for post in posts:
        doc = post.to_doc() if isinstance(post, UnifiedPost) else post
        if not group_filter(doc):
            continue
        value = doc["engagement"].get(metric)
        if value is None:
            continue
        day = datetime.fromisoformat(doc["published_at"].replace("Z", "+00:00")).date()
        if period_a.contains_day(day):
            values_a.append(float(value))
        elif period_b.contains_day(day):
            values_b.append(float(value))
    if not values_a or not values_b:
        raise InsufficientDataError("insufficient data: a period has no posts for the group")
    mean_a = sum(values_a) / len(values_a)
    mean_b = sum(values_b) / len(values_b)
    if mean_a == 0.0:
        raise AnalysisError("baseline mean is zero; percentage change undefined")
    return EngagementChange(
        mean_a=mean_a,
        mean_b=mean_b,
        pct_change=(mean_b - mean_a) / mean_a * 100.0,
    )


# -- embedding clustering ----------------------------------------------------------------------

@dataclass
class KMeansResult:
    assignments: dict[str, int]
    centroids: np.ndarray
    inertia_history: list[float] = field(default_factory=list)

    @property
    def inertia(self) -> float:
        return self.inertia_history[-1] if self.inertia_history else float("nan")


def cluster_embeddings(
    vectors: Mapping[str, np.ndarray],
    k: int,
    rng_seed: int,
    max_iter: int = 100,
    tol: float = 1e-6,
) -> KMeansResult:
    """Deterministic k-means with k-means++ seeding; nulls are excluded."""
    ids = sorted(pid for pid, v in vectors.items() if v is not None and np.any(v))
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > len(ids):
        raise ValueError(f"k={k} exceeds the {len(ids)} non-null vectors")
    data = np.stack([np.asarray(vectors[pid], dtype=np.float64) for pid in ids])
    rng = np.random.default_rng(rng_seed)

    # k-means++ seeding
    centroids = np.empty((k, data.shape[1]), dtype=np.float64)
    first = int(rng.integers(len(ids)))
    centroids[0] = data[first]
    closest = np.square(data - centroids[0]).sum(axis=1)
    for j in range(1, k):
        total = closest.sum()
        if total == 0.0:
            # all remaining points coincide with a centroid; pick deterministically
            centroids[j] = data[j % len(ids)]
            continue
        pick = int(rng.choice(len(ids), p=closest / total))
        centroids[j] = data[pick]
        closest = np.minimum(closest, np.square(data - centroids[j]).sum(axis=1))

    history: list[float] = []
    labels = np.zeros(len(ids), dtype=np.int64)
    for _ in range(max_iter):
        dists = np.square(data[:, None, :] - centroids[None, :, :]).sum(axis=2)
        labels = dists.argmin(axis=1)
        history.append(float(dists[np.arange(len(ids)), labels].sum()))
        new_centroids = centroids.copy()
        for j in range(k):
            mask = labels == j
            if mask.any():
                new_centroids[j] = data[mask].mean(axis=0)
            else:
                # re-seed an empty cluster at the point farthest from its centroid
                farthest = int(dists[np.arange(len(ids)), labels].argmax())
                new_centroids[j] = data[farthest]
        movement = float(np.sqrt(np.square(new_centroids - centroids).sum(axis=1)).max())
        centroids = new_centroids
        if movement < tol:
            break
    dists = np.square(data[:, None, :] - centroids[None, :, :]).sum(axis=2)
    labels = dists.argmin(axis=1)
    history.append(float(dists[np.arange(len(ids)), labels].sum()))

    return KMeansResult(
        assignments={pid: int(labels[i]) for i, pid in enumerate(ids)},
        centroids=centroids,
        inertia_history=history,
    )
