"""Dataset manifests and raster persistence: 8-bit RGB PNG, 16-bit label PNG,
and the F32M binary float-map format.

F32M layout (little-endian, bit-exact): magic bytes "F32M", u32 width,
u32 height, u32 channels, then width*height*channels f32 values, row-major
and channel-interleaved.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import BadMagic, LabelOverflow, ManifestError, ParseError

F32M_MAGIC = b"F32M"
_F32M_HEADER = struct.Struct("<4sIII")

VALID_SPLITS = ("train", "test")


@dataclass(frozen=True)
class ManifestEntry:
    image_id: str
    image_path: Path
    mask_path: Path | None = None
    organ: str | None = None
    split: str = "train"


@dataclass
class DatasetManifest:
    name: str
    entries: list[ManifestEntry] = field(default_factory=list)

    def split(self, which: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == which]

    def by_organ(self) -> dict[str, list[ManifestEntry]]:
        """Group entries that carry an organ label, keyed by organ name."""
        groups: dict[str, list[ManifestEntry]] = {}
        for e in self.entries:
            if e.organ is not None:
                groups.setdefault(e.organ, []).append(e)
        return groups


def load_manifest(path: str | Path) -> DatasetManifest:
    """Load and validate a dataset manifest.

    Validation is total: duplicate ids, missing files, and schema problems
    are all collected and reported together in one ManifestError.
    """
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or not isinstance(doc.get("entries"), list):
        raise ParseError(f"{path}: manifest must be an object with an 'entries' list")

    base = path.parent
    problems: list[str] = []
    seen: set[str] = set()
    entries: list[ManifestEntry] = []
    for i, raw in enumerate(doc["entries"]):
        if not isinstance(raw, dict) or "id" not in raw or "image" not in raw:
            problems.append(f"entry {i}: needs at least 'id' and 'image'")
            continue
        image_id = str(raw["id"])
        if image_id in seen:
            problems.append(f"duplicate id: {image_id}")
        seen.add(image_id)
        split = raw.get("split", "train")
        if split not in VALID_SPLITS:
            problems.append(f"entry {image_id}: split must be one of {VALID_SPLITS}, got {split!r}")
        image_path = _resolve(base, raw["image"])
        if not image_path.is_file():
            problems.append(f"entry {image_id}: missing file {image_path}")
        mask_path = None
        if raw.get("mask") is not None:
            mask_path = _resolve(base, raw["mask"])
            if not mask_path.is_file():
                problems.append(f"entry {image_id}: missing file {mask_path}")
        entries.append(
            ManifestEntry(
                image_id=image_id,
                image_path=image_path,
                mask_path=mask_path,
                organ=raw.get("organ"),
                split=split,
            )
        )
    if problems:
        raise ManifestError(problems)
    return DatasetManifest(name=str(doc.get("name", path.stem)), entries=entries)


def _resolve(base: Path, p: str) -> Path:
    q = Path(p)
    return q if q.is_absolute() else base / q


def save_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    """Write a manifest; file paths are stored relative to the manifest."""
    path = Path(path)
    base = path.resolve().parent

    def rel(p: Path) -> str:
        try:
            return os.path.relpath(Path(p).resolve(), base)
        except ValueError:  # different drive (Windows); keep it absolute
            return str(Path(p).resolve())

    doc = {
        "name": manifest.name,
        "entries": [
            {
                "id": e.image_id,
                "image": rel(e.image_path),
                **({"mask": rel(e.mask_path)} if e.mask_path is not None else {}),
                **({"organ": e.organ} if e.organ is not None else {}),
                "split": e.split,
            }
            for e in manifest.entries
        ],
    }
    path.write_text(json.dumps(doc, indent=2) + "\n")


# ---------------------------------------------------------------------------
# RGB images (8-bit PNG)

def read_rgb(path: str | Path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def write_rgb(img: np.ndarray, path: str | Path) -> None:
    img = np.asarray(img)
    if img.dtype != np.uint8 or img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) uint8 image, got {img.dtype} {img.shape}")
    Image.fromarray(img, mode="RGB").save(path, format="PNG")


# ---------------------------------------------------------------------------
# Instance label maps (16-bit grayscale PNG)

def read_labels(path: str | Path) -> np.ndarray:
    """Read an instance label map as int32 (0 = background)."""
    with Image.open(path) as im:
        if im.mode not in ("I", "I;16", "L", "P"):
            raise ParseError(f"{path}: unsupported label PNG mode {im.mode!r}")
        arr = np.asarray(im.convert("I"), dtype=np.int32)
    if arr.min() < 0:
        raise ParseError(f"{path}: negative label values")
    return arr


def write_labels(labels: np.ndarray, path: str | Path) -> None:
    """Write an instance label map as 16-bit grayscale PNG."""
    labels = np.asarray(labels)
    if labels.ndim != 2:
        raise ValueError(f"label map must be 2-D, got shape {labels.shape}")
    if labels.min() < 0:
        raise ValueError("label map must be non-negative")
    if labels.max() > 65535:
        raise LabelOverflow(f"instance id {int(labels.max())} exceeds 16-bit range")
    Image.fromarray(labels.astype(np.uint16)).save(path, format="PNG")


# ---------------------------------------------------------------------------
# Float maps (F32M)

def read_f32m(path: str | Path) -> np.ndarray:
    """Read an F32M file as a (H, W, C) float32 array."""
    raw = Path(path).read_bytes()
    if len(raw) < _F32M_HEADER.size:
        raise BadMagic(f"{path}: file shorter than the F32M header")
    magic, width, height, channels = _F32M_HEADER.unpack_from(raw)
    if magic != F32M_MAGIC:
        raise BadMagic(f"{path}: bad magic {magic!r}")
    expected = _F32M_HEADER.size + 4 * width * height * channels
    if len(raw) != expected:
        raise ParseError(f"{path}: expected {expected} bytes, found {len(raw)}")
    data = np.frombuffer(raw, dtype="<f4", offset=_F32M_HEADER.size)
    return data.reshape(height, width, channels).copy()


def write_f32m(arr: np.ndarray, path: str | Path) -> None:
    """Write a (H, W, C) or (H, W) float array as an F32M file."""
    arr = np.asarray(arr)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise ValueError(f"float map must be (H, W, C), got shape {arr.shape}")
    height, width, channels = arr.shape
    header = _F32M_HEADER.pack(F32M_MAGIC, width, height, channels)
    payload = np.ascontiguousarray(arr, dtype="<f4").tobytes()
    Path(path).write_bytes(header + payload)
