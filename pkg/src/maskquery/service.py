"""HTTP facade over catalogs, the histogram index, and the query engine.

Datasets register a catalog path plus an optional prebuilt index; queries run
synchronously under a timeout and leave behind an in-memory session that the
detail endpoint reads for bound-distribution plots.  All error bodies carry
`{"code": ..., "message": ...}`.
"""

from __future__ import annotations

import json
import os
import threading
import uuid
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from concurrent.futures import TimeoutError as FutureTimeout
from dataclasses import dataclass
from pathlib import Path

from fastapi import FastAPI, HTTPException, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import FileResponse, JSONResponse
from pydantic import BaseModel

from . import engine
from .catalog import Catalog, CatalogError, MaskStore, catalog_load
from .chi import Chi, ChiConfig, ChiFormatError, build_index, index_load, index_save
from .dialect import (
    ParseError,
    QueryPlan,
    ValidationError,
    candidate_masks,
    parse,
    render,
    validate,
)
from .images import augment_image, load_image, save_image
from .masks import MaskFormatError, Roi

DEFAULT_TIMEOUT = 120.0
SESSION_CAP = 64
DATA_ROOT_ENV = "MASKQUERY_DATA_ROOT"
PORT_ENV = "MASKQUERY_PORT"
UI_DIR_ENV = "MASKQUERY_UI_DIR"

_MEDIA_TYPES = {
    ".msk1": "application/octet-stream",
    ".pgm": "image/x-portable-graymap",
    ".ppm": "image/x-portable-pixmap",
}


def _fail(status: int, code: str, message: str) -> HTTPException:
    return HTTPException(status_code=status, detail={"code": code, "message": message})


# --- request bodies ----------------------------------------------------------

class DatasetBody(BaseModel):
    id: str | None = None
    catalog: str
    index: str | None = None
    build_index: bool = True
    buckets: int = 16
    cell_h: int = 32
    cell_w: int = 32


class QueryBody(BaseModel):
    sql: str
    params: dict | None = None
    mode: str = "full"
    threads: int = 1


class AugmentBody(BaseModel):
    image_ids: list[int]
    roi_source: str = "object"
    roi: tuple[tuple[int, int], tuple[int, int]] | None = None
    seed: int = 0


# --- server state ------------------------------------------------------------

@dataclass
class _Dataset:
    id: str
    catalog_path: Path
    index_path: Path | None
    catalog: Catalog
    chi: Chi
    store: MaskStore


class _Sessions:
    """Fixed-capacity LRU of immutable query sessions."""

    def __init__(self, cap: int = SESSION_CAP):
        self.cap = cap
        self._lock = threading.Lock()
        self._items: OrderedDict[str, dict] = OrderedDict()

    def put(self, sid: str, value: dict) -> None:
        with self._lock:
            self._items[sid] = value
            self._items.move_to_end(sid)
            while len(self._items) > self.cap:
                self._items.popitem(last=False)

    def get(self, sid: str) -> dict | None:
        with self._lock:
            value = self._items.get(sid)
            if value is not None:
                self._items.move_to_end(sid)
            return value


class _State:
    def __init__(self, data_root: Path, timeout: float):
        self.data_root = data_root
        self.timeout = timeout
        self.registry_path = data_root / "registry.json"
        self.registered: dict[str, dict] = {}
        self.datasets: dict[str, _Dataset] = {}
        self.sessions = _Sessions()
        self.lock = threading.Lock()  # serializes registration and lazy loads
        self.pool = ThreadPoolExecutor(max_workers=8)
        if self.registry_path.exists():
            saved = json.loads(self.registry_path.read_text())
            self.registered = {e["id"]: e for e in saved.get("datasets", [])}

    def persist(self) -> None:
        body = {"version": 1, "datasets": sorted(self.registered.values(),
                                                 key=lambda e: e["id"])}
        self.registry_path.write_text(json.dumps(body, indent=2))

    def load_dataset(self, dataset_id: str) -> _Dataset:
        ds = self.datasets.get(dataset_id)
        if ds is not None:
            return ds
        entry = self.registered.get(dataset_id)
        if entry is None:
            raise _fail(404, "unknown_dataset", f"no dataset {dataset_id!r}")
        with self.lock:
            ds = self.datasets.get(dataset_id)
            if ds is not None:
                return ds
            try:
                ds = _open_dataset(entry)
            except (OSError, CatalogError, ChiFormatError) as exc:
                raise _fail(500, "storage_error", str(exc)) from exc
            self.datasets[dataset_id] = ds
            return ds


def _open_dataset(entry: dict) -> _Dataset:
    catalog = catalog_load(entry["catalog"])
    index_path = Path(entry["index"]) if entry.get("index") else None
    config = ChiConfig(buckets=entry.get("buckets", 16),
                       cell_h=entry.get("cell_h", 32),
                       cell_w=entry.get("cell_w", 32))
    if index_path is not None and index_path.exists():
        chi = index_load(index_path)
    else:
        chi = build_index(catalog, config)
        if index_path is not None:
            index_save(chi, index_path)
    chi.backing_path = index_path  # incremental additions persist
    return _Dataset(
        id=entry["id"], catalog_path=Path(entry["catalog"]),
        index_path=index_path, catalog=catalog, chi=chi,
        store=MaskStore(catalog),
    )


# --- row shaping --------------------------------------------------------------

def _group_members(plan: QueryPlan, catalog: Catalog) -> dict[int, list[int]]:
    members: dict[int, list[int]] = {}
    for rec in candidate_masks(plan, catalog):
        members.setdefault(rec.image_id, []).append(rec.mask_id)
    return members


def _shape_rows(ds: _Dataset, plan: QueryPlan, rows) -> list[dict]:
    prefix = f"/datasets/{ds.id}"
    grouped = plan.group_by is not None
    by_image = _group_members(plan, ds.catalog) if grouped else {}
    shaped = []
    for row in rows:
        if grouped:
            image_id = row.key
            mask_ids = sorted(by_image.get(row.key, []))
        else:
            image_id = ds.catalog.masks[row.key].image_id
            mask_ids = [row.key]
        item = {
            "key": row.key,
            "value": row.value,
            "image_id": image_id,
            "masks": mask_ids,
            "mask_urls": [f"{prefix}/masks/{m}" for m in mask_ids],
        }
        image = ds.catalog.images.get(image_id)
        item["image_url"] = (
            f"{prefix}/images/{image_id}"
            if image is not None and image.path is not None else None
        )
        shaped.append(item)
    return shaped


def _augment_path(original: Path, seed: int) -> Path:
    return original.with_name(f"{original.stem}.aug{seed}{original.suffix}")


# --- app factory ---------------------------------------------------------------

def create_app(data_root: os.PathLike | str | None = None,
               timeout: float = DEFAULT_TIMEOUT,
               ui_dir: os.PathLike | str | None = None) -> FastAPI:
    root = Path(data_root if data_root is not None
                else os.environ.get(DATA_ROOT_ENV, "."))
    root.mkdir(parents=True, exist_ok=True)
    state = _State(root, timeout)
    app = FastAPI(title="maskquery", version="0.1.0")
    app.state.mq = state

    @app.exception_handler(HTTPException)
    async def on_http_error(request: Request, exc: HTTPException):
        detail = exc.detail if isinstance(exc.detail, dict) else {
            "code": "error", "message": str(exc.detail)}
        return JSONResponse(status_code=exc.status_code, content=detail)

    @app.exception_handler(RequestValidationError)
    async def on_bad_request(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=422, content={
            "code": "invalid_request", "message": str(exc.errors())})

    # --- datasets ---

    @app.post("/datasets", status_code=201)
    def register_dataset(body: DatasetBody):
        catalog_path = Path(body.catalog)
        dataset_id = body.id or catalog_path.stem
        with state.lock:
            if dataset_id in state.registered:
                raise _fail(409, "duplicate_dataset",
                            f"dataset {dataset_id!r} already registered")
            try:
                catalog = catalog_load(catalog_path)
            except (OSError, CatalogError) as exc:
                raise _fail(400, "bad_catalog", str(exc)) from exc
            missing = [mask_id for mask_id in catalog.mask_ids()
                       if not catalog.mask_path(mask_id).exists()]
            if missing:
                shown = ", ".join(str(m) for m in missing[:20])
                raise _fail(400, "missing_masks",
                            f"catalog references missing mask files: mask_id {shown}")
            index_path = Path(body.index) if body.index else None
            if index_path is None and body.build_index:
                index_path = state.data_root / f"{dataset_id}.chi1"
            entry = {
                "id": dataset_id, "catalog": str(catalog_path),
                "index": str(index_path) if index_path else None,
                "buckets": body.buckets, "cell_h": body.cell_h,
                "cell_w": body.cell_w,
            }
            if index_path is not None and index_path.exists():
                try:
                    chi = index_load(index_path)
                except ChiFormatError as exc:
                    raise _fail(400, "bad_index", str(exc)) from exc
            elif body.build_index:
                chi = build_index(catalog, ChiConfig(
                    buckets=body.buckets, cell_h=body.cell_h, cell_w=body.cell_w))
                if index_path is not None:
                    index_save(chi, index_path)
            else:
                chi = Chi(ChiConfig(buckets=body.buckets, cell_h=body.cell_h,
                                    cell_w=body.cell_w))
            chi.backing_path = index_path
            state.registered[dataset_id] = entry
            state.datasets[dataset_id] = _Dataset(
                id=dataset_id, catalog_path=catalog_path, index_path=index_path,
                catalog=catalog, chi=chi, store=MaskStore(catalog),
            )
            state.persist()
        return {
            "id": dataset_id,
            "masks": len(catalog.masks),
            "images": len(catalog.images),
            "indexed": len(chi),
        }

    @app.get("/datasets")
    def list_datasets():
        out = []
        for dataset_id in sorted(state.registered):
            ds = state.load_dataset(dataset_id)
            models = sorted({r.model_id for r in ds.catalog.masks.values()})
            types = sorted({r.mask_type for r in ds.catalog.masks.values()})
            out.append({
                "id": dataset_id,
                "masks": len(ds.catalog.masks),
                "images": len(ds.catalog.images),
                "models": models,
                "mask_types": types,
                "indexed": len(ds.chi),
            })
        return {"datasets": out}

    @app.get("/datasets/{dataset_id}/confusion")
    def confusion(dataset_id: str, model_id: int | None = None):
        ds = state.load_dataset(dataset_id)
        cells, accuracy = engine.confusion_matrix(ds.catalog, model_id)
        return {
            "cells": [
                {"true_label": t, "pred_label": p, "image_ids": ids}
                for (t, p), ids in sorted(cells.items())
            ],
            "accuracy": accuracy,
            "images": sum(len(ids) for ids in cells.values()),
        }

    # --- query execution ---

    @app.post("/datasets/{dataset_id}/parse")
    def parse_only(dataset_id: str, body: QueryBody):
        ds = state.load_dataset(dataset_id)
        plan = _parse_validated(ds, body)
        return {"sql": render(plan), "kind": plan.kind}

    @app.post("/datasets/{dataset_id}/query")
    def run_query(dataset_id: str, body: QueryBody):
        ds = state.load_dataset(dataset_id)
        plan = _parse_validated(ds, body)
        if body.mode not in ("full", "incremental"):
            raise _fail(422, "validation_error", f"unknown mode {body.mode!r}")
        future = state.pool.submit(
            engine.eval, plan, ds.chi, ds.catalog, ds.store, body.mode,
            max(1, body.threads),
        )
        try:
            rows, stats = future.result(timeout=state.timeout)
        except FutureTimeout:
            raise _fail(504, "timeout",
                        f"query exceeded {state.timeout:.0f}s") from None
        except (OSError, MaskFormatError, ChiFormatError) as exc:
            raise _fail(500, "storage_error", str(exc)) from exc
        except ValidationError as exc:
            raise _fail(422, "validation_error", str(exc)) from exc
        sid = uuid.uuid4().hex
        canonical = render(plan)
        state.sessions.put(sid, {
            "plan": plan, "sql": canonical, "dataset_id": dataset_id,
            "stats": stats,
        })
        return {
            "session_id": sid,
            "sql": canonical,
            "kind": plan.kind,
            "rows": _shape_rows(ds, plan, rows),
            "stats": stats.to_json(),
        }

    def _parse_validated(ds: _Dataset, body: QueryBody) -> QueryPlan:
        try:
            plan = parse(body.sql, body.params)
            return validate(plan, ds.catalog, dims_of=ds.store.dims)
        except ParseError as exc:
            raise _fail(422, "parse_error", str(exc)) from exc
        except (ValidationError, ValueError) as exc:
            raise _fail(422, "validation_error", str(exc)) from exc

    @app.get("/query/{session_id}/detail")
    def query_detail(session_id: str):
        session = state.sessions.get(session_id)
        if session is None:
            raise _fail(404, "unknown_session", f"no session {session_id!r}")
        plan: QueryPlan = session["plan"]
        stats: engine.ExecStats = session["stats"]
        detail = {
            "session_id": session_id,
            "dataset_id": session["dataset_id"],
            "sql": session["sql"],
            "kind": plan.kind,
            "total_candidates": stats.total_candidates,
            "accepted": stats.accepted,
            "pruned": stats.pruned,
            "verified": stats.verified,
            "masks_loaded": stats.masks_loaded,
            "groups_excluded": stats.groups_excluded,
            "fml": stats.fml,
            "wall_time": stats.wall_time,
            "bound_histogram": stats.bound_histogram(),
            "segments": [
                {"key": key, "lower": min(lo, stats.hist_upper),
                 "upper": min(hi, stats.hist_upper)}
                for key, lo, hi in stats.bounds_sample
            ],
        }
        if plan.predicate is not None:
            detail["threshold"] = plan.predicate.threshold
            detail["cmp"] = plan.predicate.cmp
        return detail

    # --- augmentation ---

    @app.post("/datasets/{dataset_id}/augment")
    def augment(dataset_id: str, body: AugmentBody):
        ds = state.load_dataset(dataset_id)
        if body.roi_source not in ("object", "constant"):
            raise _fail(422, "validation_error",
                        f"unknown roi_source {body.roi_source!r}")
        if body.roi_source == "constant" and body.roi is None:
            raise _fail(422, "validation_error", "constant roi_source needs a roi")
        unknown = [i for i in body.image_ids if i not in ds.catalog.images]
        if unknown:
            shown = ", ".join(str(i) for i in unknown)
            raise _fail(404, "unknown_image", f"unknown image_id {shown}")
        jobs = []
        for image_id in body.image_ids:
            image = ds.catalog.images[image_id]
            if image.path is None:
                raise _fail(422, "validation_error",
                            f"image_id {image_id} has no stored image bytes")
            if body.roi_source == "object":
                roi = image.object_roi
                if roi is None:
                    raise _fail(422, "validation_error",
                                f"image_id {image_id} has no object roi")
            else:
                (r0, c0), (r1, c1) = body.roi
                roi = Roi(r0, c0, r1, c1)
            jobs.append((image_id, ds.catalog.image_path(image_id), roi))
        outputs = []
        for image_id, path, roi in jobs:
            try:
                pixels = load_image(path)
                roi.validate_for(*pixels.shape[:2])
            except (OSError, MaskFormatError) as exc:
                raise _fail(500, "storage_error", str(exc)) from exc
            except ValueError as exc:
                raise _fail(422, "validation_error",
                            f"image_id {image_id}: {exc}") from exc
            out_path = _augment_path(path, body.seed)
            save_image(augment_image(pixels, roi, body.seed), out_path)
            outputs.append({
                "image_id": image_id,
                "path": str(out_path),
                "url": f"/datasets/{dataset_id}/augmented/{image_id}?seed={body.seed}",
            })
        return {"seed": body.seed, "outputs": outputs}

    # --- raw bytes for overlays ---

    @app.api_route("/datasets/{dataset_id}/masks/{mask_id}",
                   methods=["GET", "HEAD"])
    def mask_bytes(dataset_id: str, mask_id: int):
        ds = state.load_dataset(dataset_id)
        if mask_id not in ds.catalog.masks:
            raise _fail(404, "unknown_mask", f"no mask {mask_id}")
        path = ds.catalog.mask_path(mask_id)
        if not path.exists():
            raise _fail(404, "unknown_mask", f"mask {mask_id} file missing")
        return FileResponse(path, media_type=_media_type(path))

    @app.api_route("/datasets/{dataset_id}/images/{image_id}",
                   methods=["GET", "HEAD"])
    def image_bytes(dataset_id: str, image_id: int):
        ds = state.load_dataset(dataset_id)
        image = ds.catalog.images.get(image_id)
        if image is None or image.path is None:
            raise _fail(404, "unknown_image", f"no image {image_id}")
        path = ds.catalog.image_path(image_id)
        if not path.exists():
            raise _fail(404, "unknown_image", f"image {image_id} file missing")
        return FileResponse(path, media_type=_media_type(path))

    @app.api_route("/datasets/{dataset_id}/augmented/{image_id}",
                   methods=["GET", "HEAD"])
    def augmented_bytes(dataset_id: str, image_id: int, seed: int = 0):
        ds = state.load_dataset(dataset_id)
        image = ds.catalog.images.get(image_id)
        if image is None or image.path is None:
            raise _fail(404, "unknown_image", f"no image {image_id}")
        path = _augment_path(ds.catalog.image_path(image_id), seed)
        if not path.exists():
            raise _fail(404, "unknown_image",
                        f"image {image_id} has no augmented output for seed {seed}")
        return FileResponse(path, media_type=_media_type(path))

    _mount_ui(app, ui_dir)
    return app


def _media_type(path: Path) -> str:
    return _MEDIA_TYPES.get(path.suffix.lower(), "application/octet-stream")


def _mount_ui(app: FastAPI, ui_dir: os.PathLike | str | None) -> None:
    target = ui_dir or os.environ.get(UI_DIR_ENV)
    if target is None:
        return
    target = Path(target)
    if not target.is_dir():
        return
    from fastapi.staticfiles import StaticFiles

    app.mount("/ui", StaticFiles(directory=target, html=True), name="ui")


def main(argv: list[str] | None = None) -> None:
    """Entry point mirrored by `maskquery serve`."""
    import argparse

    import uvicorn

    parser = argparse.ArgumentParser(prog="maskquery-service")
    parser.add_argument("--port", type=int,
                        default=int(os.environ.get(PORT_ENV, "8000")))
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--data-root", default=None)
    parser.add_argument("--ui-dir", default=None)
    args = parser.parse_args(argv)
    app = create_app(args.data_root, ui_dir=args.ui_dir)
    uvicorn.run(app, host=args.host, port=args.port)


if __name__ == "__main__":
    main()
