"""Dataset manifests and image/frame-sequence ingestion."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

IMAGE_SUFFIXES = (".png", ".ppm")
KINDS = ("image-set", "frame-sequence")
ROLES = ("train", "test", "calibration")
FIXTURE_DIR = Path(__file__).resolve().parents[1] / "data" / "fixture"


class DatasetError(ValueError):
    pass


@dataclass
class DatasetManifest:
    """One dataset: ``path`` is a directory of images, or of clip directories for frame sequences."""

    id: str
    role: str
    path: Path
    kind: str = "image-set"
    files: list[str] | None = None
    resolution: tuple[int, int] | None = None

    def __post_init__(self):
        self.path = Path(self.path)
        if self.kind not in KINDS:
            raise DatasetError(f"dataset {self.id}: unknown kind {self.kind!r}")
        if self.role not in ROLES:
            raise DatasetError(f"dataset {self.id}: unknown role {self.role!r}")
        if self.resolution is not None:
            self.resolution = tuple(self.resolution)

    def item_paths(self):
        if not self.path.is_dir():
            raise DatasetError(f"dataset {self.id}: {self.path} is not a directory")
        if self.files is not None:
            return [self.path / f for f in self.files]
        if self.kind == "frame-sequence":
            return sorted(p for p in self.path.iterdir() if p.is_dir())
        return sorted(p for p in self.path.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


@dataclass
class Item:
    """An image, or a clip of frames scored frame by frame."""

    id: str
    frames: list = field(default_factory=list)

    @property
    def is_clip(self):
        return len(self.frames) > 1

    @property
    def image(self):
        return self.frames[0]


@dataclass
class ImageSet:
    id: str
    role: str
    items: list[Item]

    def __len__(self):
        return len(self.items)

    def images(self):
        """Every frame of every item, in order."""
        return [f for item in self.items for f in item.frames]


def load_image(path):
    """Decode an 8-bit RGB PNG/PPM into float64 H x W x 3 in [0, 1]."""
    path = Path(path)
    try:
        with Image.open(path) as im:
            im.load()
            if im.mode not in ("RGB", "L", "P", "RGBA"):
                raise DatasetError(f"{path}: unsupported mode {im.mode}")
            arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    except (OSError, SyntaxError) as exc:
        raise DatasetError(f"{path}: cannot decode image ({exc})") from exc
    return arr / 255.0


def save_image(path, image):
    arr = np.clip(np.round(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr, "RGB").save(path)


_FRAME_RE = re.compile(r"(\d+)$")


def load_frames(clip_dir):
    """Frames named ``<prefix><index>.<ext>``; indices must be contiguous."""
    clip_dir = Path(clip_dir)
    indexed = []
    for p in clip_dir.iterdir():
        if p.suffix.lower() not in IMAGE_SUFFIXES:
            continue
        m = _FRAME_RE.search(p.stem)
        if not m:
            raise DatasetError(f"{p}: frame file name has no trailing index")
        indexed.append((int(m.group(1)), p))
    if not indexed:
        raise DatasetError(f"{clip_dir}: no frames")
    indexed.sort()
    start = indexed[0][0]
    for offset, (idx, _) in enumerate(indexed):
        if idx != start + offset:
            raise DatasetError(f"{clip_dir}: missing frame index {start + offset}")
    return [load_image(p) for _, p in indexed]


def ingest(manifest: DatasetManifest) -> ImageSet:
    items = []
    for path in manifest.item_paths():
        if manifest.kind == "frame-sequence":
            frames = load_frames(path)
        else:
            frames = [load_image(path)]
        for f in frames:
            if manifest.resolution is not None and f.shape[:2] != manifest.resolution:
                raise DatasetError(
                    f"{path}: resolution {f.shape[:2]} != declared {manifest.resolution}"
                )
        item_id = path.name if manifest.kind == "frame-sequence" else path.stem
        items.append(Item(item_id, frames))
    if not items:
        raise DatasetError(f"dataset {manifest.id}: no items under {manifest.path}")
    return ImageSet(manifest.id, manifest.role, items)


def fixture_set(name, role="test"):
    """One of the bundled 32x32 synthetic sets: calibration, test, train-a/b/c."""
    return ingest(DatasetManifest(name, role, FIXTURE_DIR / name))
