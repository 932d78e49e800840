"""HTTP session API for interactive editing.

Sessions hold a current image plus an ordered edit history; edits run as
asynchronous jobs that clients poll. Persistence is content-addressed PNG
blobs on disk plus one JSON document per session/job, so a stored history
replays to the current image bit-exactly even across restarts.
"""

import hashlib
import json
import os
import tempfile
import threading
import time
import uuid
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict

import numpy as np
from fastapi import FastAPI, File, Form, HTTPException, UploadFile
from fastapi.responses import JSONResponse, Response
from fastapi.staticfiles import StaticFiles

from . import editor, images, pipeline
from .config import ServiceConfig, load_service_config


class Storage:
    """Content-addressed blobs + per-entity JSON documents under one root."""

    def __init__(self, root):
        self.root = os.fspath(root)
        for sub in ("blobs", "sessions", "jobs"):
            os.makedirs(os.path.join(self.root, sub), exist_ok=True)

    # -- blobs ---------------------------------------------------------

    def put_blob(self, data: bytes) -> str:
        digest = hashlib.sha256(data).hexdigest()
        path = os.path.join(self.root, "blobs", digest + ".png")
        if not os.path.exists(path):
            self._atomic_write(path, data)
        return digest

    def get_blob(self, digest: str) -> bytes:
        path = os.path.join(self.root, "blobs", digest + ".png")
        if not os.path.exists(path):
            raise KeyError(digest)
        with open(path, "rb") as fh:
            return fh.read()

    # -- documents -------------------------------------------------------

    def _doc_path(self, kind, doc_id):
        return os.path.join(self.root, kind, doc_id + ".json")

    def save_doc(self, kind, doc):
        self._atomic_write(self._doc_path(kind, doc["id"]),
                           json.dumps(doc, indent=1).encode())

    def load_doc(self, kind, doc_id):
        path = self._doc_path(kind, doc_id)
        if not os.path.exists(path):
            raise KeyError(doc_id)
        with open(path) as fh:
            return json.load(fh)

    def list_ids(self, kind):
        d = os.path.join(self.root, kind)
        return sorted(f[:-5] for f in os.listdir(d) if f.endswith(".json"))

    def _atomic_write(self, path, data: bytes):
        fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path), suffix=".tmp")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise


def config_to_dict(cfg: editor.EditConfig) -> dict:
    return asdict(cfg)


def config_from_dict(d: dict) -> editor.EditConfig:
    return editor.EditConfig(**d)


class ServiceState:
    """Shared mutable state: storage, model bundle, job executor, locks."""

    def __init__(self, config: ServiceConfig, bundle=None):
        self.config = config
        self.storage = Storage(config.data_dir)
        self._bundle = bundle
        self._bundle_lock = threading.Lock()
        self.executor = ThreadPoolExecutor(max_workers=max(1, config.max_jobs))
        self._locks = {}
        self._locks_guard = threading.Lock()
        self._sweep_interrupted_jobs()

    @property
    def bundle(self):
        with self._bundle_lock:
            if self._bundle is None:
                self._bundle = pipeline.load_bundle(self.config.models_dir)
            return self._bundle

    def session_lock(self, session_id) -> threading.Lock:
        with self._locks_guard:
            return self._locks.setdefault(session_id, threading.Lock())

    def _sweep_interrupted_jobs(self):
        # a restart cannot resume an in-flight job; mark it failed, keep the rest
        for job_id in self.storage.list_ids("jobs"):
            doc = self.storage.load_doc("jobs", job_id)
            if doc["status"] in ("queued", "running"):
                doc["status"] = "error"
                doc["error"] = "interrupted by service restart"
                self.storage.save_doc("jobs", doc)


def _now():
    return time.time()


def _decode_image_upload(data: bytes, expected_size: int):
    try:
        img = images.decode_png(data)
    except Exception:
        raise HTTPException(status_code=400, detail="image is not decodable PNG")
    rescaled = False
    if img.shape[0] != expected_size or img.shape[1] != expected_size:
        from PIL import Image
        import io
        pil = Image.open(io.BytesIO(data)).convert("RGB")
        pil = pil.resize((expected_size, expected_size), Image.BILINEAR)
        img = images.from_uint8(np.asarray(pil))
        rescaled = True
    return img, rescaled


def run_job(state: ServiceState, job_id: str):
    storage = state.storage
    job = storage.load_doc("jobs", job_id)
    job["status"] = "running"
    job["updated"] = _now()
    storage.save_doc("jobs", job)
    try:
        session = storage.load_doc("sessions", job["session_id"])
        # a scribble overlay, when supplied, replaces the session image as input
        src_blob = job["request"].get("image_blob") or session["current_blob"]
        x = images.decode_png(storage.get_blob(src_blob))
        mask = images.decode_mask_png(storage.get_blob(job["request"]["mask_blob"]))
        cfg = config_from_dict(job["request"]["config"])
        candidates = pipeline.run_edit(state.bundle, x, mask, job["request"]["prompt"], cfg)
        job["candidates"] = [
            {"blob": storage.put_blob(images.encode_png(c.image)),
             "score": c.score, "rank": c.rank, "source_index": c.source_index}
            for c in candidates
        ]
        job["status"] = "done"
    except Exception as exc:  # report, don't crash the worker
        job["status"] = "error"
        job["error"] = f"{type(exc).__name__}: {exc}"
    job["updated"] = _now()
    storage.save_doc("jobs", job)


def replay_session(state: ServiceState, session_id: str) -> np.ndarray:
    """Re-run the stored history from the original image; returns the image
    the session should currently show."""
    storage = state.storage
    session = storage.load_doc("sessions", session_id)
    x = images.decode_png(storage.get_blob(session["original_blob"]))
    for entry in session["history"]:
        if entry["request"].get("image_blob"):
            x = images.decode_png(storage.get_blob(entry["request"]["image_blob"]))
        mask = images.decode_mask_png(storage.get_blob(entry["request"]["mask_blob"]))
        cfg = config_from_dict(entry["request"]["config"])
        candidates = pipeline.run_edit(state.bundle, x, mask, entry["request"]["prompt"], cfg)
        chosen = candidates[entry["chosen_index"]]
        # round-trip through PNG exactly as the live path does
        x = images.decode_png(images.encode_png(chosen.image))
    return x


def create_app(config: ServiceConfig = None, bundle=None) -> FastAPI:
    config = config or load_service_config()
    state = ServiceState(config, bundle=bundle)
    app = FastAPI(title="latentblend service")
    app.state.service = state
    expected = 64  # model resolution; bundles are trained at one size

    @app.post("/sessions")
    def create_session(image: UploadFile = File(...)):
        img, rescaled = _decode_image_upload(image.file.read(), expected)
        blob = state.storage.put_blob(images.encode_png(img))
        doc = {
            "id": uuid.uuid4().hex,
            "created": _now(),
            "updated": _now(),
            "original_blob": blob,
            "current_blob": blob,
            "rescaled_on_upload": rescaled,
            "history": [],
        }
        state.storage.save_doc("sessions", doc)
        return {"id": doc["id"]}

    def _load_or_404(kind, doc_id):
        try:
            return state.storage.load_doc(kind, doc_id)
        except KeyError:
            raise HTTPException(status_code=404, detail=f"unknown {kind[:-1]} {doc_id}")

    @app.post("/sessions/{session_id}/edits")
    def submit_edit(session_id: str,
                    mask: UploadFile = File(...),
                    image: UploadFile = File(None),
                    prompt: str = Form(""),
                    steps: int = Form(editor.EditConfig.num_sampler_steps),
                    guidance: float = Form(editor.EditConfig.guidance_scale),
                    batch: int = Form(4),
                    seed: int = Form(0),
                    shrink: bool = Form(True),
                    reconstruct_mode: str = Form("stitch"),
                    eta: float = Form(0.0)):
        _load_or_404("sessions", session_id)
        try:
            m = images.decode_mask_png(mask.file.read())
        except Exception:
            raise HTTPException(status_code=400, detail="mask is not decodable PNG")
        if m.shape != (expected, expected):
            raise HTTPException(status_code=400,
                                detail=f"mask shape {m.shape} does not match image size {expected}")
        image_blob = None
        if image is not None:
            # scribble overlay: must align with the session image, so no rescale
            raw = image.file.read()
            try:
                overlay = images.decode_png(raw)
            except Exception:
                raise HTTPException(status_code=400, detail="image is not decodable PNG")
            if overlay.shape[:2] != (expected, expected):
                raise HTTPException(status_code=400,
                                    detail=f"image shape {overlay.shape[:2]} does not match size {expected}")
            image_blob = state.storage.put_blob(images.encode_png(overlay))
        cfg = editor.EditConfig(
            num_sampler_steps=steps, guidance_scale=guidance, batch_size=batch,
            seed=seed, use_progressive_shrinking=shrink, reconstruction_mode=reconstruct_mode,
            eta=eta)
        try:
            cfg.validate()
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        mask_blob = state.storage.put_blob(images.encode_mask_png(m))
        job = {
            "id": uuid.uuid4().hex,
            "session_id": session_id,
            "status": "queued",
            "error": None,
            "created": _now(),
            "updated": _now(),
            "request": {"mask_blob": mask_blob, "image_blob": image_blob,
                        "prompt": prompt, "config": config_to_dict(cfg)},
            "candidates": [],
        }
        state.storage.save_doc("jobs", job)
        state.executor.submit(run_job, state, job["id"])
        return {"job_id": job["id"]}

    @app.get("/jobs/{job_id}")
    def get_job(job_id: str):
        return _load_or_404("jobs", job_id)

    @app.post("/sessions/{session_id}/accept")
    def accept_candidate(session_id: str, body: dict):
        job_id = body.get("job_id")
        index = body.get("index")
        if job_id is None or index is None:
            raise HTTPException(status_code=400, detail="body must carry job_id and index")
        with state.session_lock(session_id):
            session = _load_or_404("sessions", session_id)
            job = _load_or_404("jobs", job_id)
            if job["session_id"] != session_id:
                raise HTTPException(status_code=400, detail="job belongs to another session")
            if job["status"] in ("queued", "running"):
                raise HTTPException(status_code=409, detail="job still pending")
            if job["status"] != "done":
                raise HTTPException(status_code=409, detail=f"job failed: {job['error']}")
            if not 0 <= int(index) < len(job["candidates"]):
                raise HTTPException(status_code=400, detail="candidate index out of range")
            session["current_blob"] = job["candidates"][int(index)]["blob"]
            session["history"].append({
                "job_id": job_id,
                "request": job["request"],
                "chosen_index": int(index),
            })
            session["updated"] = _now()
            state.storage.save_doc("sessions", session)
            return session

    @app.get("/sessions/{session_id}")
    def get_session(session_id: str):
        return _load_or_404("sessions", session_id)

    @app.get("/blobs/{digest}")
    def get_blob(digest: str):
        try:
            data = state.storage.get_blob(digest)
        except KeyError:
            raise HTTPException(status_code=404, detail="unknown blob")
        return Response(content=data, media_type="image/png")

    @app.get("/healthz")
    def healthz():
        return {"status": "ok"}

    @app.get("/vocabulary")
    def get_vocabulary():
        from . import data
        return {"labels": data.vocabulary()}

    if config.static_dir and os.path.isdir(config.static_dir):
        app.mount("/", StaticFiles(directory=config.static_dir, html=True), name="ui")

    return app


def main(config_path=None):
    import uvicorn
    cfg = load_service_config(config_path)
    uvicorn.run(create_app(cfg), host=cfg.host, port=cfg.port)
