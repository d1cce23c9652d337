"""Dataset ingestion, batching and saliency-map files."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np
import torch
from PIL import Image

log = logging.getLogger(__name__)

IMAGE_EXTS = (".jpg", ".jpeg", ".png", ".bmp", ".tif", ".tiff")
MEAN = (0.485, 0.456, 0.406)
STD = (0.229, 0.224, 0.225)


class ManifestError(ValueError):
    pass


class SampleReadError(OSError):
    def __init__(self, sample_id: str, path, reason: str):
        super().__init__(f"{sample_id}: cannot read {path}: {reason}")
        self.sample_id = sample_id


@dataclass
class Sample:
    image: torch.Tensor  # (3, H, W), normalised
    mask: torch.Tensor  # (1, H, W), values in {0, 1}
    id: str


@dataclass
class DatasetManifest:
    image_dir: Path
    mask_dir: Path
    split: str = "train"

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        """Read a JSON manifest; relative directories resolve against the manifest's folder."""
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as err:
            raise ManifestError(f"{path}: {err}") from None
        for key in ("image_dir", "mask_dir"):
            if key not in data:
                raise ManifestError(f"{path}: missing field {key!r}")
        base = path.parent
        return cls(base / data["image_dir"], base / data["mask_dir"], data.get("split", "train"))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(
            {"split": self.split, "image_dir": str(self.image_dir), "mask_dir": str(self.mask_dir)}, indent=2))

    def pairs(self) -> list[tuple[str, Path, Path]]:
        for d in (self.image_dir, self.mask_dir):
            if not Path(d).is_dir():
                raise ManifestError(f"directory not found: {d}")
        images = {p.stem: p for p in list_images(self.image_dir)}
        masks = {p.stem: p for p in list_images(self.mask_dir)}
        missing = sorted(images.keys() ^ masks.keys())
        if missing:
            raise ManifestError(f"{len(missing)} unpaired file(s), e.g. {missing[:3]}")
        if not images:
            raise ManifestError(f"no images in {self.image_dir}")
        return [(s, images[s], masks[s]) for s in sorted(images)]


def list_images(directory) -> list[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"directory not found: {directory}")
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in IMAGE_EXTS)


def normalize_image(rgb: np.ndarray, mean=MEAN, std=STD) -> torch.Tensor:
    """uint8 (H, W, 3) -> normalised float (3, H, W)."""
    x = torch.from_numpy(np.array(rgb, dtype=np.uint8)).float().div_(255).permute(2, 0, 1)
    return (x - torch.tensor(mean)[:, None, None]) / torch.tensor(std)[:, None, None]


def read_image(path, size: int | None = None, sample_id: str = "") -> tuple[torch.Tensor, tuple[int, int]]:
    """Load, resize bilinearly and normalise an RGB image; also returns the original (H, W)."""
    try:
        with Image.open(path) as im:
            im = im.convert("RGB")
            orig = (im.height, im.width)
            if size is not None:
                im = im.resize((size, size), Image.BILINEAR)
            rgb = np.asarray(im)
    except Exception as err:  # PIL raises several unrelated types for bad files
        raise SampleReadError(sample_id or Path(path).stem, path, str(err)) from None
    return normalize_image(rgb), orig


def read_mask(path, size: int | None = None, sample_id: str = "") -> torch.Tensor:
    try:
        with Image.open(path) as im:
            im = im.convert("L")
            if size is not None:
                im = im.resize((size, size), Image.NEAREST)
            m = np.asarray(im, dtype=np.float32) / 255.0
    except Exception as err:
        raise SampleReadError(sample_id or Path(path).stem, path, str(err)) from None
    return torch.from_numpy((m > 0.5).astype(np.float32))[None]


def load_dataset(manifest: DatasetManifest, target_size: int, augment: bool = False,
                 seed: int = 0) -> list[Sample]:
    """Load every image/mask pair at ``target_size``; optional seeded horizontal flips (p = 0.5)."""
    if target_size <= 0 or target_size % 16:
        raise ValueError(f"target size must be a positive multiple of 16, got {target_size}")
    rng = np.random.default_rng(seed)
    samples = []
    for sid, img_path, mask_path in manifest.pairs():
        image, _ = read_image(img_path, target_size, sid)
        mask = read_mask(mask_path, target_size, sid)
        samples.append(Sample(image, mask, sid))
    return augment_samples(samples, rng) if augment else samples


def augment_samples(samples: Sequence[Sample], rng: np.random.Generator) -> list[Sample]:
    out = []
    for s in samples:
        if rng.random() < 0.5:
            s = Sample(s.image.flip(-1), s.mask.flip(-1), s.id)
        out.append(s)
    return out


@dataclass
class Batch:
    images: torch.Tensor
    masks: torch.Tensor
    ids: list[str]


def batch(samples: Sequence[Sample], batch_size: int, seed: int | None = 0) -> Iterator[Batch]:
    """Seeded shuffle into fixed-size batches, keeping the last partial one. ``seed=None`` keeps order."""
    if batch_size <= 0:
        raise ValueError("batch_size must be positive")
    order = np.arange(len(samples)) if seed is None else np.random.default_rng(seed).permutation(len(samples))
    for start in range(0, len(order), batch_size):
        chunk = [samples[i] for i in order[start:start + batch_size]]
        yield Batch(
            torch.stack([s.image for s in chunk]),
            torch.stack([s.mask for s in chunk]),
            [s.id for s in chunk],
        )


def save_saliency(saliency, path) -> Path:
    """Write a [0, 1] map as an 8-bit grayscale image (values clamped first)."""
    if isinstance(saliency, torch.Tensor):
        saliency = saliency.detach().cpu().double().numpy()
    arr = np.asarray(saliency, dtype=np.float64).squeeze()
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-D map, got shape {arr.shape}")
    arr8 = np.round(np.clip(arr, 0.0, 1.0) * 255).astype(np.uint8)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr8, mode="L").save(path)
    return path


def load_saliency(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("L"), dtype=np.float64) / 255.0


def make_synthetic_samples(n: int = 8, size: int = 64, seed: int = 0) -> list[Sample]:
    """Random ellipses/rectangles in a distinct colour over a noisy background."""
    return [Sample(normalize_image(rgb), torch.from_numpy(mask)[None], sid)
            for sid, rgb, mask in _synthetic_arrays(n, size, seed)]


def write_synthetic_dataset(root, n: int = 8, size: int = 64, seed: int = 0, split: str = "train") -> Path:
    """Write a synthetic image/mask dataset plus ``manifest.json`` under ``root``; returns the manifest path."""
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    for sid, rgb, mask in _synthetic_arrays(n, size, seed):
        Image.fromarray(rgb).save(root / "images" / f"{sid}.png")
        Image.fromarray((mask * 255).astype(np.uint8), mode="L").save(root / "masks" / f"{sid}.png")
    manifest = root / "manifest.json"
    manifest.write_text(json.dumps({"split": split, "image_dir": "images", "mask_dir": "masks"}, indent=2))
    return manifest


def _synthetic_arrays(n: int, size: int, seed: int) -> Iterable[tuple[str, np.ndarray, np.ndarray]]:
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] / size
    for i in range(n):
        bg = rng.uniform(0.1, 0.5, 3)
        fg = np.clip(bg + rng.choice([-1, 1], 3) * rng.uniform(0.3, 0.5, 3), 0, 1)
        cy, cx = rng.uniform(0.3, 0.7, 2)
        ry, rx = rng.uniform(0.12, 0.28, 2)
        if i % 2 == 0:
            mask = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1
        else:
            mask = (np.abs(yy - cy) <= ry) & (np.abs(xx - cx) <= rx)
        img = np.where(mask[..., None], fg, bg) + rng.normal(0, 0.04, (size, size, 3))
        rgb = (np.clip(img, 0, 1) * 255).astype(np.uint8)
        yield f"synth_{i:03d}", rgb, mask.astype(np.float32)
