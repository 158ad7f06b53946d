"""HTTP REST backend exposing instances, classifications, explanations and the
latent atlas.

Models and the dataset are loaded once at startup and treated as immutable;
explanations are computed in background threads with an id-derived seed so the
result is cacheable and byte-stable, and cached to disk under ``MODEL_DIR``.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
from dataclasses import dataclass, field

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import Response

from .atlas import embed_dataset, pairwise_separation, project_embedding
from .data import load_packed
from .errors import ExplanationInfeasibleError
from .explainer import ExplainParams, explain, serialize_explanation, _png_b64
from .models import classify, load_aae, load_blackbox

DATASET_FILE = "dataset.bin"
BLACKBOX_FILE = "blackbox.ckpt"
AAE_FILE = "aae.ckpt"
EXPLANATION_DIR = "explanations"


def instance_seed(instance_id):
    """Stable per-instance explanation seed derived from the id."""
    digest = hashlib.sha256(instance_id.encode("utf-8")).hexdigest()
    return int(digest[:8], 16)


@dataclass
class Job:
    job_id: str
    instance_id: str
    state: str = "queued"  # queued -> running -> done | failed
    progress: float = 0.0
    error: str | None = None
    stage: str | None = None

    def to_dict(self):
        return {
            "job_id": self.job_id,
            "instance_id": self.instance_id,
            "state": self.state,
            "progress": self.progress,
            "error": self.error,
            "stage": self.stage,
        }


@dataclass
class ServiceState:
    model_dir: str
    dataset: object = None
    blackbox: object = None
    aae: object = None
    loaded: bool = False
    explain_params: dict = field(default_factory=dict)
    jobs: dict = field(default_factory=dict)          # job id -> Job
    active: dict = field(default_factory=dict)        # instance id -> job id
    lock: threading.Lock = field(default_factory=threading.Lock)
    atlas_cache: dict = field(default_factory=dict)

    def load(self):
        paths = {name: os.path.join(self.model_dir, name)
                 for name in (DATASET_FILE, BLACKBOX_FILE, AAE_FILE)}
        if not all(os.path.exists(p) for p in paths.values()):
            self.loaded = False
            return
        self.dataset = load_packed(paths[DATASET_FILE])
        self.blackbox = load_blackbox(paths[BLACKBOX_FILE])
        self.aae = load_aae(paths[AAE_FILE])
        os.makedirs(os.path.join(self.model_dir, EXPLANATION_DIR), exist_ok=True)
        self.loaded = True

    def explanation_path(self, instance_id):
        return os.path.join(self.model_dir, EXPLANATION_DIR, f"{instance_id}.json")

    def params_for(self, instance_id):
        return ExplainParams(seed=instance_seed(instance_id), **self.explain_params)


def _run_explanation(state, job, item):
    with state.lock:
        job.state = "running"
        job.progress = 0.1
    try:
        params = state.params_for(item.instance_id)
        explanation = explain(item.image, state.blackbox, state.aae, params,
                              class_names=state.dataset.class_names)
        payload = serialize_explanation(explanation, state.dataset.class_names)
        tmp = state.explanation_path(item.instance_id) + ".tmp"
        with open(tmp, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, state.explanation_path(item.instance_id))
        with state.lock:
            job.progress = 1.0
            job.state = "done"
    except ExplanationInfeasibleError as exc:
        with state.lock:
            job.state = "failed"
            job.stage = exc.stage
            job.error = str(exc)
    except Exception as exc:  # surfaced as a failed job, not a hung one
        with state.lock:
            job.state = "failed"
            job.stage = "internal"
            job.error = f"{type(exc).__name__}: {exc}"
    finally:
        with state.lock:
            state.active.pop(item.instance_id, None)


def create_app(model_dir=None, explain_params=None):
    model_dir = model_dir or os.environ.get("MODEL_DIR", "models")
    state = ServiceState(model_dir=model_dir,
                         explain_params=dict(explain_params or {}))
    state.load()

    app = FastAPI(title="lxl", version="1.0")
    app.state.service = state
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"],
    )

    def require_models():
        if not state.loaded:
            raise HTTPException(status_code=503, detail="models not loaded")

    def get_item(instance_id):
        require_models()
        try:
            return state.dataset.by_id(instance_id)
        except KeyError:
            raise HTTPException(status_code=404,
                                detail=f"unknown instance {instance_id}")

    @app.get("/api/instances")
    def list_instances():
        require_models()
        records = []
        for item in state.dataset.items:
            records.append({
                "id": item.instance_id,
                "thumbnail": _png_b64(item.image),
                "label": int(item.label),
                "class_name": state.dataset.class_names[item.label],
                "has_explanation": os.path.exists(
                    state.explanation_path(item.instance_id)),
            })
        return sorted(records, key=lambda r: r["id"])

    @app.get("/api/instances/{instance_id}/classification")
    def classification(instance_id: str):
        item = get_item(instance_id)
        scores = classify(state.blackbox, item.image)
        label = int(np.argmax(scores))
        return {
            "id": item.instance_id,
            "scores": [float(s) for s in scores],
            "label": label,
            "class_name": state.dataset.class_names[label],
            "class_names": list(state.dataset.class_names),
        }

    @app.post("/api/instances/{instance_id}/explanation")
    def request_explanation(instance_id: str):
        item = get_item(instance_id)
        with state.lock:
            if instance_id in state.active:
                raise HTTPException(status_code=409,
                                    detail=f"job already running for {instance_id}")
            job_id = f"job-{instance_id}-{len(state.jobs)}"
            job = Job(job_id=job_id, instance_id=instance_id)
            state.jobs[job_id] = job
            if os.path.exists(state.explanation_path(instance_id)):
                job.state = "done"
                job.progress = 1.0
                return job.to_dict()
            state.active[instance_id] = job_id
        threading.Thread(target=_run_explanation, args=(state, job, item),
                         daemon=True).start()
        return job.to_dict()

    @app.get("/api/jobs/{job_id}")
    def job_status(job_id: str):
        with state.lock:
            job = state.jobs.get(job_id)
            if job is None:
                raise HTTPException(status_code=404, detail=f"unknown job {job_id}")
            return job.to_dict()

    @app.get("/api/instances/{instance_id}/explanation")
    def get_explanation(instance_id: str):
        get_item(instance_id)
        path = state.explanation_path(instance_id)
        if not os.path.exists(path):
            raise HTTPException(status_code=404,
                                detail=f"no explanation computed for {instance_id}")
        with open(path, "rb") as fh:
            return Response(content=fh.read(), media_type="application/json")

    @app.get("/api/atlas")
    def atlas(classA: str | None = None, classB: str | None = None):
        require_models()
        if "atlas" not in state.atlas_cache:
            emb = embed_dataset(state.aae, state.dataset)
            state.atlas_cache["emb"] = emb
            state.atlas_cache["atlas"] = project_embedding(emb)
        atlas2d = state.atlas_cache["atlas"]
        separation = None
        if classA is not None or classB is not None:
            if classA is None or classB is None:
                raise HTTPException(status_code=400,
                                    detail="classA and classB must be given together")
            names = state.dataset.class_names
            for cls in (classA, classB):
                if cls not in names:
                    raise HTTPException(status_code=400,
                                        detail=f"unknown class {cls}")
            key = (classA, classB)
            if key not in state.atlas_cache:
                try:
                    report = pairwise_separation(state.atlas_cache["emb"],
                                                 classA, classB)
                except ValueError as exc:
                    raise HTTPException(status_code=400, detail=str(exc))
                state.atlas_cache[key] = json.loads(report.to_json())
            separation = state.atlas_cache[key]
        return {
            "points": [
                {
                    "id": iid,
                    "x": float(x),
                    "y": float(y),
                    "label": int(lab),
                    "class_name": atlas2d.class_names[lab],
                }
                for iid, (x, y), lab in zip(atlas2d.ids, atlas2d.coordinates,
                                            atlas2d.labels)
            ],
            "stress": float(atlas2d.stress),
            "class_names": list(atlas2d.class_names),
            "separation": separation,
        }

    return app


def main():
    import uvicorn
    port = int(os.environ.get("PORT", "8000"))
    uvicorn.run(create_app(), host="0.0.0.0", port=port)


if __name__ == "__main__":
    main()
