"""HTTP service for the annotation loop and the analysis reports.

Reads operate on immutable snapshots (corpus, registry, cached model
scores); label writes are serialized through the append-only store and
are durable before the response is sent. Retraining runs in a background
worker per job; the suggestion queue re-scores lazily when the registry
version changes, so reads never block behind training.
"""

from __future__ import annotations

import threading
import uuid
from contextlib import asynccontextmanager
from dataclasses import dataclass, field
from pathlib import Path

from fastapi import FastAPI, Query, Request
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from . import annotation, classifier, satisfaction, trends
from .codes import ALL_CODES, MiCode
from .corpus import (
    Corpus,
    filter_active_listeners,
    filter_min_length,
    iter_contexts,
    listener_first_utterances,
    parse_corpus,
    restrict_to_listeners,
)


@dataclass
class ServiceConfig:
    corpus_path: Path
    labels_path: Path
    registry_path: Path
    k: int = 1
    suggest_threshold: float = 0.7
    label_threshold: float = 0.5
    min_span_days: float = 365.0
    min_sessions: int = 500
    min_utterances: int = 50
    seed: int = 0


class ApiError(Exception):
    def __init__(self, status: int, code: str, message: str):
        super().__init__(message)
        self.status = status
        self.code = code


class LabelSubmission(BaseModel):
    utterance_id: str
    annotator_id: str
    codes: list[str]


class TrainRequest(BaseModel):
    code: str | None = None
    k: int | None = None


@dataclass
class TrainJob:
    job_id: str
    status: str  # queued | running | done | failed
    code: str | None
    k: int
    error: str | None = None
    trained: list[str] = field(default_factory=list)


class ServiceState:
    """Shared mutable state behind the endpoints.

    A single lock serializes store appends and registry swaps; model
    scoring for the queue is cached per registry version.
    """

    def __init__(self, config: ServiceConfig):
        self.config = config
        self.corpus: Corpus = parse_corpus(config.corpus_path)
        known = {u.utterance_id for u in self.corpus.utterances()}
        # exclusive: one service instance per store file
        self.store = annotation.LabelStore(
            config.labels_path, known_utterances=known, exclusive=True
        )
        try:
            self.registry = classifier.load_registry(config.registry_path)
        except FileNotFoundError:
            self.registry = classifier.ModelRegistry()
        self.lock = threading.Lock()
        self.jobs: dict[str, TrainJob] = {}
        self._queue_cache: tuple[str, frozenset[str], annotation.SuggestionQueue] | None = None

    def queue(self) -> annotation.SuggestionQueue:
        verified = frozenset(self.store.human_labeled_utterances())
        version = self.registry.version()
        cached = self._queue_cache
        if cached is not None and cached[0] == version and cached[1] == verified:
            return cached[2]
        queue = annotation.suggest(
            self.registry,
            self.corpus,
            threshold=self.config.suggest_threshold,
            k=self.config.k,
            exclude=verified,
        )
        self._queue_cache = (version, verified, queue)
        return queue

    def analysis_labels(self) -> dict[str, frozenset[MiCode]]:
        missing = [c for c in ALL_CODES if self.registry.get(c, self.config.k) is None]
        if missing:
            raise ApiError(
                409,
                "models_missing",
                f"no model at k={self.config.k} for: {', '.join(c.value for c in missing)}",
            )
        labels: dict[str, frozenset[MiCode]] = {}
        for cu in iter_contexts(self.corpus, self.config.k):
            scores = self.registry.scores(cu, codes=ALL_CODES)
            passing = frozenset(
                code for code, p in scores.items() if p >= self.config.label_threshold
            )
            if passing:
                labels[cu.target.utterance_id] = passing
        return labels

    def run_training(self, job: TrainJob) -> None:
        job.status = "running"
        try:
            labeled = annotation.labeled_contexts(self.store, self.corpus, job.k)
            if not labeled:
                raise ValueError("no labeled listener utterances to train on")
            codes = [MiCode(job.code)] if job.code else list(ALL_CODES)
            hyper = classifier.Hyper(seed=self.config.seed)
            models = classifier.train_one_vs_all(labeled, k=job.k, hyper=hyper, codes=codes)
            h = classifier.training_set_hash(
                (cu.context_text, "|".join(sorted(c.value for c in cs))) for cu, cs in labeled
            )
            with self.lock:
                for code, model in models.items():
                    self.registry.put(model, code, job.k, train_hash=h)
                classifier.save_registry(self.registry, self.config.registry_path)
            job.trained = sorted(code.value for code in models)
            job.status = "done"
        except Exception as exc:  # surfaced via the job resource
            job.status = "failed"
            job.error = str(exc)


def _queue_item_json(item: annotation.SuggestionItem) -> dict:
    return {
        "utterance_id": item.utterance_id,
        "context_preview": item.context_preview,
        "suggestions": {
            code.value: round(p, 6)
            for code, p in sorted(item.suggestions.items(), key=lambda kv: kv[0].value)
        },
        "model_ids": list(item.model_ids),
    }


def create_app(config: ServiceConfig) -> FastAPI:
    state = ServiceState(config)

    @asynccontextmanager
    async def lifespan(_app: FastAPI):
        yield
        state.store.close()

    app = FastAPI(title="micoder annotation service", lifespan=lifespan)
    app.state.service = state

    @app.exception_handler(ApiError)
    async def handle_api_error(_request: Request, exc: ApiError):
        return JSONResponse(status_code=exc.status, content={"error": str(exc), "code": exc.code})

    @app.get("/healthz")
    def healthz():
        return {
            "status": "ok",
            "conversations": len(state.corpus),
            "registry_version": state.registry.version(),
        }

    @app.get("/conversations")
    def conversations(limit: int = Query(default=50, ge=1, le=1000), offset: int = 0):
        convs = state.corpus.conversations[offset : offset + limit]
        return {
            "total": len(state.corpus),
            "items": [
                {
                    "conversation_id": c.conversation_id,
                    "listener_id": c.listener_id,
                    "member_id": c.member_id,
                    "rating": c.rating,
                    "utterances": len(c),
                }
                for c in convs
            ],
        }

    @app.get("/conversations/{conversation_id}")
    def conversation(conversation_id: str):
        if conversation_id not in state.corpus:
            raise ApiError(404, "not_found", f"unknown conversation {conversation_id!r}")
        conv = state.corpus.get(conversation_id)
        human = state.store.effective_human_codes()
        return {
            "conversation_id": conv.conversation_id,
            "listener_id": conv.listener_id,
            "member_id": conv.member_id,
            "listener_age": conv.listener_age,
            "member_age": conv.member_age,
            "rating": conv.rating,
            "utterances": [
                {
                    "utterance_id": u.utterance_id,
                    "index": u.index,
                    "speaker": u.speaker.value,
                    "timestamp": u.timestamp.strftime("%Y-%m-%dT%H:%M:%SZ"),
                    "text": u.text,
                    "codes": sorted(c.value for c in human.get(u.utterance_id, ())),
                }
                for u in conv.utterances
            ],
        }

    @app.get("/queue")
    def queue(limit: int = Query(default=20, ge=1, le=500), annotator: str | None = None):
        items = state.queue().items[:limit]
        return {
            "threshold": state.config.suggest_threshold,
            "k": state.config.k,
            "annotator": annotator,
            "items": [_queue_item_json(item) for item in items],
        }

    @app.post("/labels")
    def post_labels(submission: LabelSubmission):
        if not submission.annotator_id:
            raise ApiError(422, "bad_request", "annotator_id is required")
        if len(submission.codes) > annotation.MAX_CODES_PER_RECORD:
            raise ApiError(422, "too_many_codes", "max 3 codes")
        if not submission.codes:
            raise ApiError(422, "no_codes", "at least one code is required")
        try:
            codes = tuple(MiCode(name) for name in submission.codes)
        except ValueError as exc:
            raise ApiError(422, "unknown_code", str(exc)) from exc
        record = annotation.LabelRecord(
            utterance_id=submission.utterance_id,
            source=f"human:{submission.annotator_id}",
            codes=codes,
        )
        with state.lock:
            try:
                appended = state.store.append_if_changed(record)
            except annotation.LabelStoreError as exc:
                raise ApiError(404, "unknown_utterance", str(exc)) from exc
        return {
            "utterance_id": submission.utterance_id,
            "annotator_id": submission.annotator_id,
            "codes": [c.value for c in codes],
            "duplicate": not appended,
        }

    @app.post("/train")
    def post_train(request: TrainRequest):
        k = request.k if request.k is not None else state.config.k
        if request.code is not None:
            try:
                MiCode(request.code)
            except ValueError as exc:
                raise ApiError(422, "unknown_code", str(exc)) from exc
        job = TrainJob(job_id=uuid.uuid4().hex[:12], status="queued", code=request.code, k=k)
        state.jobs[job.job_id] = job
        worker = threading.Thread(target=state.run_training, args=(job,), daemon=True)
        worker.start()
        return {"job_id": job.job_id, "status": job.status}

    @app.get("/train/{job_id}")
    def train_status(job_id: str):
        job = state.jobs.get(job_id)
        if job is None:
            raise ApiError(404, "not_found", f"unknown training job {job_id!r}")
        return {
            "job_id": job.job_id,
            "status": job.status,
            "code": job.code,
            "k": job.k,
            "trained": job.trained,
            "error": job.error,
        }

    @app.get("/agreement")
    def agreement():
        report = annotation.agreement_report(state.store)
        return report.to_dict()

    @app.get("/analysis/satisfaction")
    def analysis_satisfaction():
        labels = state.analysis_labels()
        design = satisfaction.build_design(state.corpus, labels)
        if not design.rows:
            raise ApiError(409, "no_data", "no usable conversations for the satisfaction model")
        try:
            fit = satisfaction.fit_weighted_logistic(design.rows)
        except (ValueError, satisfaction.SeparationError) as exc:
            raise ApiError(409, "fit_error", str(exc)) from exc
        return satisfaction.satisfaction_report_dict(fit, design)

    @app.get("/analysis/trends")
    def analysis_trends():
        labels = state.analysis_labels()
        joins = listener_first_utterances(state.corpus)
        active = filter_active_listeners(
            state.corpus,
            min_span_days=state.config.min_span_days,
            min_sessions=state.config.min_sessions,
        )
        survivors = filter_min_length(
            restrict_to_listeners(state.corpus, active),
            min_utterances=state.config.min_utterances,
        )
        if not len(survivors):
            raise ApiError(409, "no_data", "no conversations survive the cohort filters")
        series = trends.code_fraction_by_bucket(survivors, labels, join_times=joins)
        return {"rows": series.rows()}

    @app.get("/analysis/topwords")
    def analysis_topwords(top: int = Query(default=5, ge=1, le=50)):
        labels = state.analysis_labels()
        out: dict[str, list[dict]] = {}
        for code in ALL_CODES:
            try:
                words = trends.tfidf_top_words(state.corpus, labels, code, n=top)
            except ValueError:
                out[code.value] = []
                continue
            out[code.value] = [{"token": t, "score": round(s, 6)} for t, s in words]
        return {"top": top, "codes": out}

    return app
