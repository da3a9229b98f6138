"""HTTP service exposing pipeline jobs and interactive point-prompt
mask-refinement sessions.

State lives under a data directory so the process can restart without
losing sessions:

    data_dir/images/{image_id}.png|jpg     inputs, addressed by stem
    data_dir/masks/{image_id}.png          ground truth for the oracle detector
    data_dir/jobs/{job_id}.png|.json       finished job masks + details
    data_dir/sessions/{session_id}/        session.json + mask_v{n}.png
    data_dir/exports/{session_id}.png      accepted masks

Every session mutation (point, undo) writes a new mask version file, so
any acknowledged version stays retrievable.
"""

from __future__ import annotations

import json
import logging
import threading
import time
import uuid
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from pydantic import BaseModel
from scipy import ndimage

from . import raster, tiling
from .prompting import DetectorConfig, HeuristicDetector, MaskOracleDetector, PromptSet
from .raster import BoundingBox
from .segmentation import (
    PipelineConfig,
    RegionGrowingSegmenter,
    STRATEGIES,
    segment_image,
)

log = logging.getLogger(__name__)

UNDO_DEPTH = 32
POLARITIES = ("positive", "negative")
USABILITY_TAGS = ("usable", "unusable")
DETECTOR_NAMES = ("heuristic", "oracle")


class ApiError(Exception):
    def __init__(self, status: int, code: str, message: str):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message


def _not_found(what: str) -> ApiError:
    return ApiError(404, "not_found", what)


def _conflict(message: str) -> ApiError:
    return ApiError(409, "state_conflict", message)


def _invalid(message: str) -> ApiError:
    return ApiError(400, "validation", message)


@dataclass
class JobRecord:
    job_id: str
    image_id: str
    strategy: str
    detector: str
    segmenter: str
    state: str = "queued"
    error: str | None = None
    submitted_at: float = field(default_factory=time.time)
    started_at: float | None = None
    finished_at: float | None = None

    def to_json(self) -> dict:
        data = asdict(self)
        if self.state == "done":
            data["mask"] = f"/jobs/{self.job_id}/mask"
        return data


def _serialize_boxes(patch_boxes: dict) -> dict:
    return {f"{r},{c}": [[b.x_min, b.y_min, b.x_max, b.y_max, b.confidence]
                         for b in boxes]
            for (r, c), boxes in patch_boxes.items()}


def _deserialize_boxes(data: dict) -> dict:
    out = {}
    for key, boxes in data.items():
        r, c = (int(v) for v in key.split(","))
        out[(r, c)] = [BoundingBox(int(x0), int(y0), int(x1), int(y1), conf)
                       for x0, y0, x1, y1, conf in boxes]
    return out


class RefinementSession:
    """One interactive refinement dialogue over a single sheet.

    Positive points grow the mask (never shrink it): the enclosing patch
    is re-segmented with the point as seed, within any detector box that
    covered the point, and the result is unioned in. Negative points
    delete the connected mask region under them. Undo restores the exact
    previous mask; replaying the prompt history from the seed always
    reproduces the current mask bit for bit.
    """

    def __init__(self, session_id: str, image_id: str, image: np.ndarray,
                 seed_mask: np.ndarray | None, store_dir: Path,
                 segmenter=None, patch_size: int | None = None,
                 patch_boxes: dict | None = None, undo_depth: int = UNDO_DEPTH):
        raster.ensure_image(image)
        h, w = image.shape[:2]
        if seed_mask is None:
            seed_mask = np.zeros((h, w), dtype=bool)
        if seed_mask.shape != (h, w):
            raise ValueError("seed mask dimensions differ from the image")
        self.session_id = session_id
        self.image_id = image_id
        self.image = image
        self.current_mask = seed_mask.copy()
        self.status = "active"
        self.usability_tag: str | None = None
        self.version = 0
        self.prompt_history: list[dict] = []
        self.patch_size = patch_size or tiling.select_patch_size(w)
        self.patch_boxes = patch_boxes or {}
        self.undo_depth = undo_depth
        self.segmenter = segmenter or RegionGrowingSegmenter()
        self.store_dir = Path(store_dir)
        self._undo: list[int] = []
        self._redo: list[tuple[int, dict]] = []
        self._lock = threading.Lock()

    # -- persistence -------------------------------------------------

    def _mask_path(self, version: int) -> Path:
        return self.store_dir / f"mask_v{version}.png"

    def persist(self) -> None:
        self.store_dir.mkdir(parents=True, exist_ok=True)
        if not self._mask_path(self.version).exists():
            raster.save_mask(self._mask_path(self.version), self.current_mask)
        state = {
            "session_id": self.session_id,
            "image_id": self.image_id,
            "status": self.status,
            "usability_tag": self.usability_tag,
            "version": self.version,
            "prompt_history": self.prompt_history,
            "patch_size": self.patch_size,
            "patch_boxes": _serialize_boxes(self.patch_boxes),
            "undo_depth": self.undo_depth,
            "undo_stack": self._undo,
            "redo_stack": self._redo,
        }
        (self.store_dir / "session.json").write_text(json.dumps(state, indent=2))

    @classmethod
    def load(cls, store_dir: Path, image: np.ndarray, segmenter=None) -> "RefinementSession":
        state = json.loads((Path(store_dir) / "session.json").read_text())
        seed = raster.load_mask(Path(store_dir) / f"mask_v{state['version']}.png")
        session = cls(
            session_id=state["session_id"],
            image_id=state["image_id"],
            image=image,
            seed_mask=seed,
            store_dir=store_dir,
            segmenter=segmenter,
            patch_size=state["patch_size"],
            patch_boxes=_deserialize_boxes(state["patch_boxes"]),
            undo_depth=state["undo_depth"],
        )
        session.status = state["status"]
        session.usability_tag = state["usability_tag"]
        session.version = state["version"]
        session.prompt_history = state["prompt_history"]
        session._undo = [int(v) for v in state["undo_stack"]]
        session._redo = [(int(v), entry) for v, entry in state["redo_stack"]]
        return session

    # -- mutations ---------------------------------------------------

    def _require_active(self):
        if self.status != "active":
            raise _conflict(f"session is {self.status}")

    def _check_point(self, x: int, y: int):
        h, w = self.current_mask.shape
        if not (0 <= x < w and 0 <= y < h):
            raise _invalid(f"point ({x}, {y}) outside {w}x{h} image")

    def _grow_from(self, mask: np.ndarray, x: int, y: int) -> np.ndarray:
        size = self.patch_size
        row, col = y // size, x // size
        y0, x0 = row * size, col * size
        patch = self.image[y0:y0 + size, x0:x0 + size]
        local = (x - x0, y - y0)
        context = [b for b in self.patch_boxes.get((row, col), ())
                   if b.contains_point(*local)]
        clamped = [c for b in context
                   for c in [b.clamped(patch.shape[1], patch.shape[0])] if c is not None]
        prompts = PromptSet(boxes=clamped, positive_points=[local])
        grown = self.segmenter.segment(patch, prompts).mask
        out = mask.copy()
        out[y0:y0 + patch.shape[0], x0:x0 + patch.shape[1]] |= grown
        return out

    @staticmethod
    def _carve_at(mask: np.ndarray, x: int, y: int) -> np.ndarray:
        if not mask[y, x]:
            return mask.copy()
        labels, _ = ndimage.label(mask, structure=np.ones((3, 3), dtype=bool))
        return mask & (labels != labels[y, x])

    def _apply_entry(self, mask: np.ndarray, entry: dict) -> np.ndarray:
        if entry["polarity"] == "positive":
            return self._grow_from(mask, entry["x"], entry["y"])
        return self._carve_at(mask, entry["x"], entry["y"])

    def apply_point(self, x: int, y: int, polarity: str) -> int:
        if polarity not in POLARITIES:
            raise _invalid(f"polarity must be one of {POLARITIES}")
        with self._lock:
            self._require_active()
            self._check_point(x, y)
            entry = {"x": int(x), "y": int(y), "polarity": polarity}
            new_mask = self._apply_entry(self.current_mask, entry)
            self._undo.append(self.version)
            if len(self._undo) > self.undo_depth:
                self._undo.pop(0)
            self._redo.clear()
            self.current_mask = new_mask
            self.prompt_history.append(entry)
            self.version += 1
            self.persist()
            return self.version

    def undo(self) -> int:
        with self._lock:
            self._require_active()
            if not self._undo:
                raise _conflict("nothing to undo")
            restore = self._undo.pop()
            entry = self.prompt_history.pop()
            self._redo.append((self.version, entry))
            self.current_mask = raster.load_mask(self._mask_path(restore))
            self.version += 1
            self.persist()
            return self.version

    def redo(self) -> int:
        with self._lock:
            self._require_active()
            if not self._redo:
                raise _conflict("nothing to redo")
            restore, entry = self._redo.pop()
            self._undo.append(self.version)
            if len(self._undo) > self.undo_depth:
                self._undo.pop(0)
            self.current_mask = raster.load_mask(self._mask_path(restore))
            self.prompt_history.append(entry)
            self.version += 1
            self.persist()
            return self.version

    def tag_usability(self, tag: str) -> None:
        if tag not in USABILITY_TAGS:
            raise _invalid(f"tag must be one of {USABILITY_TAGS}")
        with self._lock:
            self._require_active()
            self.usability_tag = tag
            self.persist()

    def accept(self, export_dir: Path) -> Path:
        with self._lock:
            self._require_active()
            export_dir = Path(export_dir)
            export_dir.mkdir(parents=True, exist_ok=True)
            path = export_dir / f"{self.session_id}.png"
            raster.save_mask(path, self.current_mask)
            self.status = "accepted"
            self._undo.clear()
            self._redo.clear()
            self.persist()
            return path

    def discard(self) -> None:
        with self._lock:
            self._require_active()
            self.status = "discarded"
            self.persist()

    def replay(self) -> np.ndarray:
        """Recompute the current mask by folding the prompt history over
        the seed; used to verify session integrity."""
        mask = raster.load_mask(self._mask_path(0))
        for entry in self.prompt_history:
            mask = self._apply_entry(mask, entry)
        return mask

    def mask_at(self, version: int) -> np.ndarray:
        path = self._mask_path(version)
        if not path.exists():
            raise _not_found(f"no mask version {version}")
        return raster.load_mask(path)

    def summary(self) -> dict:
        h, w = self.current_mask.shape
        return {
            "session_id": self.session_id,
            "image_id": self.image_id,
            "status": self.status,
            "usability_tag": self.usability_tag,
            "mask_version": self.version,
            "width": w,
            "height": h,
        }


class ServiceStore:
    """All jobs and sessions of one service process."""

    IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")

    def __init__(self, data_dir, workers: int | None = None):
        self.data_dir = Path(data_dir)
        for sub in ("images", "masks", "jobs", "sessions", "exports"):
            (self.data_dir / sub).mkdir(parents=True, exist_ok=True)
        self.executor = ThreadPoolExecutor(max_workers=workers or 2)
        self.jobs: dict[str, JobRecord] = {}
        self.sessions: dict[str, RefinementSession] = {}
        self._lock = threading.Lock()
        self._load_sessions()

    # -- images ------------------------------------------------------

    def image_path(self, image_id: str) -> Path:
        for suffix in self.IMAGE_SUFFIXES:
            path = self.data_dir / "images" / f"{image_id}{suffix}"
            if path.exists():
                return path
        raise _not_found(f"unknown image {image_id!r}")

    def load_image(self, image_id: str) -> np.ndarray:
        return raster.load_image(self.image_path(image_id))

    # -- jobs ----------------------------------------------------------

    def _make_detector(self, name: str, image_id: str):
        if name == "heuristic":
            return HeuristicDetector(DetectorConfig())
        if name == "oracle":
            mask_path = self.data_dir / "masks" / f"{image_id}.png"
            if not mask_path.exists():
                raise _invalid(f"oracle detector needs a ground-truth mask for {image_id!r}")
            return MaskOracleDetector(raster.load_mask(mask_path), DetectorConfig())
        raise _invalid(f"unknown detector {name!r}; expected one of {DETECTOR_NAMES}")

    def _make_segmenter(self, name: str):
        if name == "reference":
            return RegionGrowingSegmenter()
        if name.startswith("model:"):
            from .segmentation import OnnxPromptSegmenter

            return OnnxPromptSegmenter(name.split(":", 1)[1])
        raise _invalid(f"unknown segmenter {name!r}; expected 'reference' or 'model:<path>'")

    def submit_job(self, image_id: str, strategy: str, detector: str, segmenter: str) -> str:
        if strategy not in STRATEGIES:
            raise _invalid(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")
        image = self.load_image(image_id)  # 404 before enqueue if unknown
        detector_impl = self._make_detector(detector, image_id)
        segmenter_impl = self._make_segmenter(segmenter)
        job = JobRecord(job_id=uuid.uuid4().hex[:12], image_id=image_id,
                        strategy=strategy, detector=detector, segmenter=segmenter)
        with self._lock:
            self.jobs[job.job_id] = job
        self.executor.submit(self._run_job, job, image, detector_impl, segmenter_impl)
        return job.job_id

    def _run_job(self, job: JobRecord, image, detector, segmenter) -> None:
        with self._lock:
            job.state = "running"
            job.started_at = time.time()
        try:
            result = segment_image(image, detector, segmenter,
                                   PipelineConfig(strategy=job.strategy),
                                   return_details=True)
            raster.save_mask(self.data_dir / "jobs" / f"{job.job_id}.png", result.mask)
            details = {
                "plan": json.loads(result.plan.to_json()),
                "patch_boxes": _serialize_boxes(result.patch_boxes),
            }
            (self.data_dir / "jobs" / f"{job.job_id}.json").write_text(
                json.dumps(details, indent=2))
            with self._lock:
                job.state = "done"
                job.finished_at = time.time()
        except Exception as exc:
            log.exception("job %s failed", job.job_id)
            with self._lock:
                job.state = "failed"
                job.error = str(exc)
                job.finished_at = time.time()

    def get_job(self, job_id: str) -> JobRecord:
        try:
            return self.jobs[job_id]
        except KeyError:
            raise _not_found(f"unknown job {job_id!r}") from None

    def job_mask_path(self, job_id: str) -> Path:
        job = self.get_job(job_id)
        if job.state != "done":
            raise _conflict(f"job {job_id} is {job.state}, mask not available")
        return self.data_dir / "jobs" / f"{job_id}.png"

    def wait_for_job(self, job_id: str, timeout: float = 60.0) -> JobRecord:
        deadline = time.time() + timeout
        while time.time() < deadline:
            job = self.get_job(job_id)
            if job.state in ("done", "failed"):
                return job
            time.sleep(0.02)
        raise TimeoutError(f"job {job_id} did not finish within {timeout}s")

    # -- sessions ------------------------------------------------------

    def _load_sessions(self) -> None:
        for sdir in sorted((self.data_dir / "sessions").iterdir()):
            state_file = sdir / "session.json"
            if not state_file.exists():
                continue
            try:
                state = json.loads(state_file.read_text())
                image = self.load_image(state["image_id"])
                session = RefinementSession.load(sdir, image)
                self.sessions[session.session_id] = session
            except Exception as exc:
                log.warning("could not restore session from %s: %s", sdir, exc)

    def open_session(self, image_id: str, seed: str = "empty") -> RefinementSession:
        image = self.load_image(image_id)
        seed_mask = None
        patch_size = None
        patch_boxes = None
        if seed.startswith("job:"):
            job_id = seed.split(":", 1)[1]
            job = self.get_job(job_id)
            if job.state != "done":
                raise _conflict(f"job {job_id} is {job.state}, cannot seed a session")
            seed_mask = raster.load_mask(self.data_dir / "jobs" / f"{job_id}.png")
            details = json.loads(
                (self.data_dir / "jobs" / f"{job_id}.json").read_text())
            patch_size = details["plan"]["patch_size"]
            patch_boxes = _deserialize_boxes(details["patch_boxes"])
        elif seed != "empty":
            raise _invalid(f"seed must be 'empty' or 'job:<id>', got {seed!r}")
        session_id = uuid.uuid4().hex[:12]
        session = RefinementSession(
            session_id=session_id, image_id=image_id, image=image,
            seed_mask=seed_mask,
            store_dir=self.data_dir / "sessions" / session_id,
            patch_size=patch_size, patch_boxes=patch_boxes)
        session.persist()
        with self._lock:
            self.sessions[session_id] = session
        return session

    def get_session(self, session_id: str) -> RefinementSession:
        try:
            return self.sessions[session_id]
        except KeyError:
            raise _not_found(f"unknown session {session_id!r}") from None

    def list_sessions(self, tag: str | None = None) -> list[dict]:
        rows = [s.summary() for s in self.sessions.values()]
        if tag is not None:
            rows = [r for r in rows if r["usability_tag"] == tag]
        return sorted(rows, key=lambda r: r["session_id"])

    @property
    def export_dir(self) -> Path:
        return self.data_dir / "exports"


class JobRequest(BaseModel):
    image_id: str
    strategy: str = "multi_region"
    detector: str = "heuristic"
    segmenter: str = "reference"


class SessionRequest(BaseModel):
    image_id: str
    seed: str = "empty"


class PointRequest(BaseModel):
    x: int
    y: int
    polarity: str


class TagRequest(BaseModel):
    tag: str


def create_app(data_dir, workers: int | None = None, ui_dir=None):
    """Build the FastAPI application around a ServiceStore."""
    from fastapi import FastAPI, Request
    from fastapi.exceptions import RequestValidationError
    from fastapi.responses import FileResponse, JSONResponse, Response

    store = ServiceStore(data_dir, workers=workers)
    app = FastAPI(title="herbseg service")
    app.state.store = store

    @app.exception_handler(ApiError)
    async def on_api_error(_request: Request, exc: ApiError):
        return JSONResponse(status_code=exc.status,
                            content={"code": exc.code, "message": exc.message})

    @app.exception_handler(RequestValidationError)
    async def on_validation_error(_request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400,
                            content={"code": "validation", "message": str(exc)})

    @app.post("/jobs")
    def submit_job(body: JobRequest):
        job_id = store.submit_job(body.image_id, body.strategy,
                                  body.detector, body.segmenter)
        return {"job_id": job_id}

    @app.get("/jobs/{job_id}")
    def get_job(job_id: str):
        return store.get_job(job_id).to_json()

    @app.get("/jobs/{job_id}/mask")
    def get_job_mask(job_id: str):
        return FileResponse(store.job_mask_path(job_id), media_type="image/png")

    @app.post("/sessions")
    def open_session(body: SessionRequest):
        return store.open_session(body.image_id, body.seed).summary()

    @app.get("/sessions")
    def list_sessions(tag: str | None = None):
        return store.list_sessions(tag)

    @app.get("/sessions/{session_id}")
    def get_session(session_id: str):
        return store.get_session(session_id).summary()

    @app.post("/sessions/{session_id}/points")
    def apply_point(session_id: str, body: PointRequest):
        version = store.get_session(session_id).apply_point(body.x, body.y, body.polarity)
        return {"mask_version": version}

    @app.post("/sessions/{session_id}/undo")
    def undo(session_id: str):
        return {"mask_version": store.get_session(session_id).undo()}

    @app.post("/sessions/{session_id}/accept")
    def accept(session_id: str):
        store.get_session(session_id).accept(store.export_dir)
        return {"status": "accepted"}

    @app.post("/sessions/{session_id}/tag")
    def tag(session_id: str, body: TagRequest):
        store.get_session(session_id).tag_usability(body.tag)
        return {"usability_tag": body.tag}

    @app.get("/sessions/{session_id}/mask")
    def session_mask(session_id: str, version: int | None = None):
        session = store.get_session(session_id)
        mask = (session.current_mask if version is None
                else session.mask_at(version))
        import io

        from PIL import Image

        buf = io.BytesIO()
        Image.fromarray(np.where(mask, 255, 0).astype(np.uint8), mode="L").save(
            buf, format="PNG")
        return Response(content=buf.getvalue(), media_type="image/png")

    @app.get("/images/{image_id}")
    def get_image(image_id: str):
        path = store.image_path(image_id)
        media = "image/png" if path.suffix == ".png" else "image/jpeg"
        return FileResponse(path, media_type=media)

    if ui_dir is not None:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=ui_dir, html=True), name="ui")

    return app
