"""REST surface: data endpoints, analysis endpoints, and operations views.

Every endpoint except /health requires a bearer token from the configured
static token list. List endpoints paginate with offset/limit and report the
total so clients can walk every page. Analysis requests above the configured
size threshold run as pollable jobs; smaller ones answer synchronously.
"""

from __future__ import annotations

import threading
import uuid
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import date, datetime, timezone
from typing import Any

from fastapi import Depends, FastAPI, HTTPException, Query, Request
from fastapi.responses import JSONResponse, PlainTextResponse

from .analysis import (
    EngagementChange,
    InteractionGraph,
    TimeSeries,
    cluster_embeddings,
    detect_communities,
    engagement_change,
    modularity,
    pagerank,
    temporal_match,
)
from .errors import AnalysisError, InsufficientDataError, NotFoundError, ObservatoryError
from .indexing import Fusion, HybridQuery, SearchFilters
from .ledger import Interval
from .observatory import Observatory
from .platforms import MainType, Platform

MAX_PAGE_LIMIT = 500


@dataclass
class _Job:
    job_id: str
    status: str  # pending | running | done | error
    result: Any = None
    error: str | None = None


class _JobStore:
    def __init__(self):
        self._jobs: dict[str, _Job] = {}
        self._lock = threading.Lock()
        self._pool = ThreadPoolExecutor(max_workers=1)

    def submit(self, fn) -> str:
        job_id = uuid.uuid4().hex
        with self._lock:
            self._jobs[job_id] = _Job(job_id=job_id, status="pending")

        def run() -> None:
            with self._lock:
                self._jobs[job_id].status = "running"
            try:
                result = fn()
            except Exception as exc:  # surfaced through the job record
                with self._lock:
                    self._jobs[job_id].status = "error"
                    self._jobs[job_id].error = str(exc)
            else:
                with self._lock:
                    self._jobs[job_id].status = "done"
                    self._jobs[job_id].result = result

        self._pool.submit(run)
        return job_id

    def get(self, job_id: str) -> _Job:
        with self._lock:
            job = self._jobs.get(job_id)
        if job is None:
            raise NotFoundError(f"no job {job_id!r}")
        return job


def _parse_date(value: str, name: str) -> date:
    try:
        return date.fromisoformat(value)
    except ValueError:
        raise HTTPException(status_code=400, detail=f"bad {name}: {value!r}") from None


def _parse_window(date_from: str | None, date_to: str | None) -> Interval:
    if not date_from or not date_to:
        raise HTTPException(status_code=400, detail="from and to dates are required")
    window_start = _parse_date(date_from, "from")
    window_end = _parse_date(date_to, "to")
    if window_start >= window_end:
        raise HTTPException(status_code=400, detail="from must precede to")
    return Interval(window_start, window_end)


def _paginate(items: list, offset: int, limit: int) -> dict:
    if offset < 0 or limit < 1 or limit > MAX_PAGE_LIMIT:
        raise HTTPException(status_code=400, detail="bad pagination parameters")
    page = items[offset: offset + limit]
    next_offset = offset + limit if offset + limit < len(items) else None
    return {
        "items": page,
        "total": len(items),
        "offset": offset,
        "limit": limit,
        "next_offset": next_offset,
    }


def _seed_record(entity) -> dict:
    return {
        "id": entity.id,
        "name": entity.name,
        "main_type": entity.main_type.value,
        "sub_type": entity.sub_type,
        "federal_party": entity.federal_party,
        "provincial_party": entity.provincial_party,
        "province": entity.province,
        "riding": entity.riding,
        "country": entity.country,
        "collection_tags": sorted(entity.collection_tags),
        "handles": {
            p.value: {
                "handle": h.handle,
                "verified": h.verified,
                "followers": h.followers,
                "following": h.following,
            }
            for p, h in sorted(entity.handles.items(), key=lambda kv: kv[0].value)
        },
    }


def create_app(obs: Observatory) -> FastAPI:
    app = FastAPI(title="meo", version="0.1.0", docs_url=None, redoc_url=None)
    jobs = _JobStore()
    tokens = set(obs.config.api_tokens)

    def require_auth(request: Request) -> None:
        header = request.headers.get("Authorization", "")
        token = header.removeprefix("Bearer ").strip() if header.startswith("Bearer ") else ""
        if not token or token not in tokens:
            raise HTTPException(status_code=401, detail="missing or invalid bearer token")

    @app.exception_handler(NotFoundError)
    async def _not_found(request, exc):
        return JSONResponse(status_code=404, content={"detail": str(exc)})

    @app.exception_handler(InsufficientDataError)
    async def _insufficient(request, exc):
        return JSONResponse(status_code=422, content={"detail": str(exc)})

    @app.exception_handler(AnalysisError)
    async def _degenerate(request, exc):
        return JSONResponse(status_code=422, content={"detail": str(exc)})

    @app.exception_handler(ObservatoryError)
    async def _domain(request, exc):
        return JSONResponse(status_code=400, content={"detail": str(exc)})

    @app.exception_handler(ValueError)
    async def _value(request, exc):
        return JSONResponse(status_code=400, content={"detail": str(exc)})

    # -- health and metrics -------------------------------------------------

    @app.get("/health")
    def health() -> dict:
        return {
            "status": "ok",
            "components": {
                "registry": {"entities": len(obs.registry)},
                "raw_store": {"objects": obs.raw_store.count()},
                "index": {"documents": obs.engine.document_count()},
                "backfills": {"pending": obs.backfills.pending_count()},
            },
        }

    @app.get("/metrics")
    def metrics(request: Request, format: str = "json", _=Depends(require_auth)):
        snap = obs.metrics_snapshot()
        if format == "text":
            lines = [f"{name} {snap[name]:g}" for name in sorted(snap)]
            return PlainTextResponse("\n".join(lines) + "\n")
        return dict(sorted(snap.items()))

    # -- seeds ------------------------------------------------------------------

    @app.get("/seeds")
    def list_seeds(
        main_type: str | None = None,
        province: str | None = None,
        party: str | None = None,
        platform: str | None = None,
        offset: int = 0,
        limit: int = 50,
        _=Depends(require_auth),
    ):
        entities = obs.registry.select(
            main_type=MainType(main_type) if main_type else None,
            province=province,
            party=party,
            platform=Platform(platform) if platform else None,
        )
        return _paginate([_seed_record(e) for e in entities], offset, limit)

    @app.get("/seeds/{seed_id}")
    def get_seed(seed_id: str, _=Depends(require_auth)):
        return _seed_record(obs.registry.get(seed_id))

    # -- posts ---------------------------------------------------------------------

    def _filters(
        platform: list[str] | None,
        main_type: str | None,
        sub_type: str | None,
        party: str | None,
        province: str | None,
        tag: str | None,
        seed_id: str | None,
        date_from: str | None,
        date_to: str | None,
    ) -> SearchFilters:
        return SearchFilters(
            platforms=frozenset(Platform(p) for p in platform) if platform else None,
            main_type=main_type,
            sub_type=sub_type,
            federal_party=party,
            province=province,
            tag=tag,
            seed_id=seed_id,
            date_from=(
                datetime.combine(_parse_date(date_from, "from"), datetime.min.time(), timezone.utc)
                if date_from else None
            ),
            date_to=(
                datetime.combine(_parse_date(date_to, "to"), datetime.min.time(), timezone.utc)
                if date_to else None
            ),
        )

    @app.get("/posts/search")
    def search_posts(
        q: str | None = None,
        mode: str = "lexical",
        k: int = 10,
        platform: list[str] | None = Query(default=None),
        main_type: str | None = None,
        sub_type: str | None = None,
        party: str | None = None,
        province: str | None = None,
        tag: str | None = None,
        seed_id: str | None = None,
        date_from: str | None = Query(default=None, alias="from"),
        date_to: str | None = Query(default=None, alias="to"),
        _=Depends(require_auth),
    ):
        if k <= 0:
            raise HTTPException(status_code=400, detail="k must be positive")
        if mode not in ("lexical", "semantic", "hybrid", "browse"):
            raise HTTPException(status_code=400, detail=f"bad mode {mode!r}")
        filters = _filters(
            platform, main_type, sub_type, party, province, tag, seed_id, date_from, date_to
        )
        if mode == "lexical":
            if not q:
                raise HTTPException(status_code=400, detail="q is required for lexical mode")
            ranked = obs.engine.search_lexical(q, filters, k)
        elif mode == "semantic":
            if not q:
                raise HTTPException(status_code=400, detail="q is required for semantic mode")
            vec = obs.engine.embed(q)
            if vec is None:
                raise HTTPException(status_code=400, detail="query text embeds to null")
            ranked = obs.engine.search_semantic(vec, filters, k)
        elif mode == "hybrid":
            ranked = obs.engine.search_hybrid(
                HybridQuery(text=q or None, filters=filters, k=k, fusion=Fusion.RRF)
            )
        else:
            ranked = obs.engine.browse(filters, k)

        items = []
        for post_id, score in ranked:
            doc = obs.engine.unified.doc(post_id)
            items.append({
                "post_id": post_id,
                "platform": doc["platform"],
                "seed_id": doc["seed_id"],
                "text": doc["text"],
                "published_at": doc["published_at"],
                "score": score,
            })
        return {"mode": mode, "k": k, "items": items}

    @app.get("/timeline")
    def timeline(
        date_from: str | None = Query(default=None, alias="from"),
        date_to: str | None = Query(default=None, alias="to"),
        platform: list[str] | None = Query(default=None),
        format: str = "json",
        _=Depends(require_auth),
    ):
        window = _parse_window(date_from, date_to)
        platforms = [Platform(p) for p in platform] if platform else None
        if format == "csv":
            return PlainTextResponse(obs.timeline_csv(window, platforms))
        return obs.timeline(window, platforms)

    @app.get("/stats/table2")
    def stats_table2(_=Depends(require_auth)):
        data = obs.stats_table2()
        data["rendered"] = obs.render_table2()
        return data

    @app.get("/stats/distribution")
    def stats_distribution(_=Depends(require_auth)):
        report = obs.distribution()
        data = report.to_dict()
        data["rendered"] = report.render()
        return data

    # -- analysis ----------------------------------------------------------------------

    def _analysis_size(kind: str, body: dict) -> int:
        if kind in ("pagerank", "communities"):
            return len(body.get("edges", []))
        if kind == "clusters":
            return obs.engine.document_count()
        if kind in ("similar", "temporal", "engagement-change"):
            return obs.engine.document_count()
        return 0

    def _run_analysis(kind: str, body: dict):
        if kind == "pagerank":
            g = InteractionGraph.from_edges(
                (e[0], e[1], float(e[2]) if len(e) > 2 else 1.0) for e in body["edges"]
            )
            result = pagerank(
                g,
                damping=float(body.get("damping", 0.85)),
                tol=float(body.get("tol", 1e-9)),
                max_iter=int(body.get("max_iter", 200)),
            )
            return {
                "scores": result.scores,
                "converged": result.converged,
                "iterations": result.iterations,
            }
        if kind == "communities":
            g = InteractionGraph.from_edges(
                (e[0], e[1], float(e[2]) if len(e) > 2 else 1.0) for e in body["edges"]
            )
            labels = detect_communities(g)
            return {"communities": labels, "modularity": modularity(g, labels)}
        if kind == "similar":
            text = body.get("text")
            post_id = body.get("post_id")
            if post_id:
                vec = obs.engine.vectors.get(post_id).vector
            elif text:
                vec = obs.engine.embed(text)
            else:
                raise ValueError("similar needs text or post_id")
            if vec is None:
                raise ValueError("reference embeds to null")
            ranked = obs.engine.search_semantic(vec, SearchFilters(), int(body.get("k", 10)))
            return {"items": [{"post_id": p, "cosine": s} for p, s in ranked]}
        if kind == "temporal":
            series = []
            for label in ("a", "b"):
                spec = body[label]
                buckets = {
                    date.fromisoformat(k): float(v) for k, v in spec["buckets"].items()
                }
                series.append(TimeSeries.from_buckets(spec.get("key", label), buckets))
            match = temporal_match(series[0], series[1], int(body.get("max_lag_days", 7)))
            return {"best_lag": match.best_lag, "correlation": match.correlation}
        if kind == "clusters":
            vectors = {
                pid: obs.engine.vectors.get(pid).vector
                for pid in obs.engine.unified.post_ids()
            }
            result = cluster_embeddings(
                {p: v for p, v in vectors.items() if v is not None},
                k=int(body["k"]),
                rng_seed=int(body.get("rng_seed", 0)),
            )
            return {
                "assignments": result.assignments,
                "inertia": result.inertia,
            }
        if kind == "engagement-change":
            flt = body.get("filter", {})
            search_filters = SearchFilters(
                platforms=frozenset(Platform(p) for p in flt["platforms"]) if flt.get("platforms") else None,
                main_type=flt.get("main_type"),
                sub_type=flt.get("sub_type"),
            )
            result: EngagementChange = engagement_change(
                obs.engine.iter_docs(),
                search_filters.matches,
                period_a=Interval(
                    date.fromisoformat(body["period_a"][0]), date.fromisoformat(body["period_a"][1])
                ),
                period_b=Interval(
                    date.fromisoformat(body["period_b"][0]), date.fromisoformat(body["period_b"][1])
                ),
                metric=body.get("metric", "likes"),
            )
            return {
                "mean_a": result.mean_a,
                "mean_b": result.mean_b,
                "pct_change": result.pct_change,
            }
        raise HTTPException(status_code=404, detail=f"unknown analysis kind {kind!r}")

    @app.post("/analysis/{kind}")
    def analysis(kind: str, body: dict, _=Depends(require_auth)):
        if kind not in ("pagerank", "communities", "similar", "temporal", "clusters",
                        "engagement-change"):
            raise HTTPException(status_code=404, detail=f"unknown analysis kind {kind!r}")
        try:
            if _analysis_size(kind, body) > obs.config.job_threshold:
                job_id = jobs.submit(lambda: _run_analysis(kind, body))
                return JSONResponse(status_code=202, content={"job_id": job_id, "status": "pending"})
            return _run_analysis(kind, body)
        except KeyError as exc:
            raise HTTPException(status_code=400, detail=f"missing parameter: {exc}") from None

    @app.get("/analysis/jobs/{job_id}")
    def analysis_job(job_id: str, _=Depends(require_auth)):
        job = jobs.get(job_id)
        out = {"job_id": job.job_id, "status": job.status}
        if job.status == "done":
            out["result"] = job.result
        if job.status == "error":
            out["error"] = job.error
        return out

    # -- operations -----------------------------------------------------------------------

    @app.get("/gaps")
    def gaps(
        platform: str,
        date_from: str | None = Query(default=None, alias="from"),
        date_to: str | None = Query(default=None, alias="to"),
        handle: str | None = None,
        offset: int = 0,
        limit: int = 50,
        _=Depends(require_auth),
    ):
        window = _parse_window(date_from, date_to)
        found = obs.detect_gaps(Platform(platform), window, handle)
        return _paginate(found, offset, limit)

    @app.post("/backfills", status_code=201)
    def create_backfills(body: dict, _=Depends(require_auth)):
        items = body.get("items", [])
        if not items:
            raise HTTPException(status_code=400, detail="items must be non-empty")
        parsed = []
        for item in items:
            gap = Interval(date.fromisoformat(item["start"]), date.fromisoformat(item["end"]))
            platform = Platform(item["platform"])
            handle = item["handle"]
            if obs.backfills.has_task(platform, handle, gap):
                raise HTTPException(
                    status_code=409,
                    detail=f"backfill already exists for {platform.value}/{handle} "
                           f"{gap.start}..{gap.end}",
                )
            parsed.append((platform, handle, gap))
        created = []
        for platform, handle, gap in parsed:
            created.extend(obs.enqueue_backfills(platform, handle, [gap]))
        return {"created": [t.task_id for t in created]}

    @app.get("/backfills")
    def list_backfills(offset: int = 0, limit: int = 50, _=Depends(require_auth)):
        tasks = [t.to_json() for t in obs.backfills.tasks()]
        return _paginate(tasks, offset, limit)

    return app
