"""Deterministic synthetic datasets.

Masks are Gaussian blobs over a low uniform background, which gives them the
spatial structure the index feeds on.  Every generator takes a seed and is
reproducible; catalogs are written to disk and re-loaded so tests exercise the
same file paths a real deployment would.
"""

from __future__ import annotations

from pathlib import Path
from typing import Callable

import numpy as np

from .catalog import Catalog, ImageRecord, MaskRecord, catalog_load, catalog_save
from .images import save_image
from .masks import PathLike, Roi, save_mask

MaskFn = Callable[[np.random.Generator, int, int, int], np.ndarray]


def blob_mask(rng: np.random.Generator, height: int, width: int,
              max_blobs: int = 3, background: float = 0.15) -> np.ndarray:
    """Sum of random Gaussian bumps over uniform noise, clipped to [0, 1]."""
    yy = np.arange(height, dtype=np.float64)[:, None]
    xx = np.arange(width, dtype=np.float64)[None, :]
    acc = rng.uniform(0.0, background, (height, width))
    for _ in range(int(rng.integers(1, max_blobs + 1))):
        cy = rng.uniform(0, height)
        cx = rng.uniform(0, width)
        sy = rng.uniform(height / 10, height / 3)
        sx = rng.uniform(width / 10, width / 3)
        amp = rng.uniform(0.5, 1.0)
        acc += amp * np.exp(-(((yy - cy) / sy) ** 2 + ((xx - cx) / sx) ** 2) / 2.0)
    return np.clip(acc, 0.0, 1.0).astype(np.float32)


def filled_mask(rng: np.random.Generator, height: int, width: int, roi: Roi,
                inside: tuple[float, float], outside: tuple[float, float]
                ) -> np.ndarray:
    mask = rng.uniform(outside[0], outside[1], (height, width))
    mask[roi.r0:roi.r1, roi.c0:roi.c1] = rng.uniform(
        inside[0], inside[1], (roi.r1 - roi.r0, roi.c1 - roi.c0)
    )
    return np.clip(mask, 0.0, 1.0).astype(np.float32)


def random_roi(rng: np.random.Generator, height: int, width: int,
               min_frac: float = 0.25, max_frac: float = 0.75) -> Roi:
    rh = int(rng.integers(max(1, int(height * min_frac)), int(height * max_frac) + 1))
    rw = int(rng.integers(max(1, int(width * min_frac)), int(width * max_frac) + 1))
    r0 = int(rng.integers(0, height - rh + 1))
    c0 = int(rng.integers(0, width - rw + 1))
    return Roi(r0, c0, r0 + rh, c0 + rw)


def make_dataset(base_dir: PathLike, n_images: int,
                 models: tuple[int, ...] = (1,), mask_types: tuple[int, ...] = (1,),
                 height: int = 64, width: int = 64, seed: int = 0,
                 classes: int = 10, with_images: bool = False,
                 mask_fn: MaskFn | None = None) -> Catalog:
    """Write masks, optional images, and a catalog under base_dir.

    Per image: one mask per (model, mask_type) pair; labels sampled with ~70%
    agreement so confusion matrices have off-diagonal cells; object_roi always
    present.  mask_fn(rng, image_id, model_id, mask_type) overrides the
    default blob generator.
    """
    rng = np.random.default_rng(seed)
    base = Path(base_dir)
    (base / "masks").mkdir(parents=True, exist_ok=True)
    if with_images:
        (base / "images").mkdir(parents=True, exist_ok=True)

    records: list[MaskRecord | ImageRecord] = []
    mask_id = 1
    for image_id in range(1, n_images + 1):
        object_roi = random_roi(rng, height, width)
        true_label = int(rng.integers(classes))
        pred_label = true_label if rng.random() < 0.7 else int(rng.integers(classes))
        image_path = None
        if with_images:
            if image_id % 3 == 0:
                pixels = rng.integers(0, 256, (height, width, 3), dtype=np.uint8)
            else:
                pixels = rng.integers(0, 256, (height, width), dtype=np.uint8)
            image_path = f"images/{image_id:05d}.{'ppm' if pixels.ndim == 3 else 'pgm'}"
            save_image(pixels, base / image_path)
        records.append(ImageRecord(
            image_id=image_id, true_label=true_label, pred_label=pred_label,
            path=image_path, object_roi=object_roi,
        ))
        for model_id in models:
            for mask_type in mask_types:
                if mask_fn is not None:
                    mask = mask_fn(rng, image_id, model_id, mask_type)
                else:
                    mask = blob_mask(rng, height, width)
                path = f"masks/{mask_id:05d}.msk1"
                save_mask(mask, base / path)
                records.append(MaskRecord(
                    mask_id=mask_id, image_id=image_id, model_id=model_id,
                    mask_type=mask_type, path=path,
                ))
                mask_id += 1

    cat = Catalog(base_dir=base)
    for record in records:
        cat.add(record)
    catalog_path = base / "catalog.jsonl"
    catalog_save(cat, catalog_path)
    return catalog_load(catalog_path)


def make_bimodal_dataset(base_dir: PathLike, n_images: int, roi: Roi,
                         height: int = 64, width: int = 64, seed: int = 0,
                         warm_frac: float = 0.1) -> Catalog:
    """Half the masks nearly fill the roi with high values, half are near
    empty there; a small warm remainder straddles any mid threshold."""
    rng_kind = np.random.default_rng(seed ^ 0x5EED)

    def fn(rng: np.random.Generator, image_id: int, model_id: int,
           mask_type: int) -> np.ndarray:
        draw = rng_kind.random()
        if draw < warm_frac:
            inside = (0.3, 0.9)   # straddles: roughly half the roi qualifies
        elif draw < warm_frac + (1.0 - warm_frac) / 2.0:
            inside = (0.7, 1.0)   # hot: nearly every roi pixel qualifies
        else:
            inside = (0.0, 0.2)   # cold: nearly none
        return filled_mask(rng, height, width, roi, inside, (0.0, 0.2))

    return make_dataset(base_dir, n_images, height=height, width=width,
                        seed=seed, mask_fn=fn)
