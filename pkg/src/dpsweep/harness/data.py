"""Dataset ingestion: PNG directories or synthetic draws from the configured prior."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from ..errors import ConfigurationError, DpsweepError
from ..operator import LinearOperator
from ..prior import ScoreModel
from .config import ExperimentConfig, build_operator, build_prior


class DataError(DpsweepError):
    pass


@dataclass
class Dataset:
    names: list[str]
    shape: tuple[int, int, int]
    x0: np.ndarray  # (n, d) flattened ground truth
    y: np.ndarray  # (n, m) flattened measurements
    model: ScoreModel
    operator: LinearOperator
    is_image: bool

    def __len__(self) -> int:
        return len(self.names)

    def image(self, i: int) -> np.ndarray:
        return self.x0[i].reshape(self.shape)


def load_png(path: Path) -> np.ndarray:
    """Decode an 8-bit grayscale or RGB PNG into ``(H, W, C)`` floats in [0, 1]."""
    try:
        with Image.open(path) as im:
            if im.format != "PNG":
                raise DataError(f"{path}: not a PNG file")
            if im.mode not in ("L", "RGB"):
                raise DataError(f"{path}: unsupported image mode {im.mode!r} (need 8-bit L or RGB)")
            arr = np.asarray(im, dtype=np.uint8)
    except (UnidentifiedImageError, OSError) as exc:
        raise DataError(f"{path}: cannot decode image ({exc})") from exc
    if arr.ndim == 2:
        arr = arr[..., None]
    return arr.astype(np.float64) / 255.0


def save_png(path: Path, image: np.ndarray) -> None:
    img = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    u8 = np.round(img * 255.0).astype(np.uint8)
    if u8.ndim == 3 and u8.shape[2] == 1:
        u8 = u8[..., 0]
    Image.fromarray(u8).save(path, format="PNG")


def list_pngs(directory: str | Path) -> list[Path]:
    files = sorted(p for p in Path(directory).iterdir() if p.is_file() and p.suffix.lower() == ".png")
    if not files:
        raise DataError(f"{directory}: no PNG images found")
    return files


def _item_rng(seed: int, i: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(i),)))


def ingest_dataset(cfg: ExperimentConfig) -> Dataset:
    """Build (x0, y) pairs; ``y = A x0 + n`` with a per-item noise stream."""
    d = cfg.data
    if d.source == "images":
        files = list_pngs(d.path)
        if d.limit is not None:
            files = files[: d.limit]
        images = [load_png(f) for f in files]
        shape = images[0].shape
        for f, im in zip(files, images):
            if im.shape != shape:
                raise DataError(f"{f}: shape {im.shape} differs from {shape}")
        names = [f.name for f in files]
        x0 = np.stack([im.ravel() for im in images])
        is_image = True
    else:
        shape = cfg.image_shape
        names = [f"item{i:05d}" for i in range(d.count)]
        is_image = False
        x0 = None

    model = build_prior(cfg, shape)
    operator = build_operator(cfg, shape)
    if x0 is None:
        x0 = np.stack([model.sample(_item_rng(d.seed, i)) for i in range(d.count)])
    sigma = cfg.operator.noise_sigma
    ys = []
    for i in range(len(names)):
        # separate stream from the prior draw so y noise does not shift x0
        rng = np.random.default_rng(np.random.SeedSequence(int(d.seed), spawn_key=(i, 1)))
        ys.append(operator.degrade(x0[i].reshape(shape), sigma, rng).ravel())
    if len(ys) == 0:
        raise ConfigurationError("dataset is empty")
    return Dataset(names=names, shape=tuple(shape), x0=x0, y=np.stack(ys),
                   model=model, operator=operator, is_image=is_image)
