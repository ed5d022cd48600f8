"""Annotated scenes, density maps, and their on-disk formats.

Annotation files are JSON::

    {"id": str, "image": relative-path, "width": int, "height": int,
     "points": [[x, y], ...]}

Density maps use a small binary format: magic ``PDM1``, then height, width and
stride as little-endian u32, then height*width float32 cell values in
row-major order.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

DENSITY_MAGIC = b"PDM1"
_DENSITY_HEADER = struct.Struct("<III")  # height, width, stride


class FormatError(ValueError):
    """Malformed annotation or density file."""


@dataclass
class AnnotatedScene:
    """An image plus head-point annotations.

    Points are continuous pixel coordinates with x = column and y = row,
    origin at the top-left, over the half-open domain [0, W) x [0, H).
    """

    id: str
    image: np.ndarray  # (H, W, 3) uint8
    points: np.ndarray  # (N, 2) float64 columns (x, y)

    def __post_init__(self) -> None:
        self.image = np.asarray(self.image)
        if self.image.ndim != 3 or self.image.shape[2] != 3:
            raise ValueError("image must have shape (H, W, 3)")
        if self.image.dtype != np.uint8:
            raise ValueError("image must be uint8")
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 2)
        _check_points_in_bounds(self.points, self.width, self.height)

    @property
    def height(self) -> int:
        return self.image.shape[0]

    @property
    def width(self) -> int:
        return self.image.shape[1]

    @property
    def count(self) -> int:
        return len(self.points)


@dataclass
class DensityMap:
    """Non-negative people-per-cell grid whose total is the represented count.

    ``stride`` is the number of source-image pixels covered by one cell edge.
    """

    values: np.ndarray  # (H, W) float64
    stride: int = 1

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError("values must be a 2-D grid")
        self.stride = int(self.stride)
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("density values must be finite")
        if np.any(self.values < 0):
            raise ValueError("density values must be non-negative")

    @property
    def count(self) -> float:
        return float(self.values.sum())

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


def _check_points_in_bounds(points: np.ndarray, width: int, height: int) -> None:
    for i, (x, y) in enumerate(points):
        if not (0 <= x < width and 0 <= y < height):
            raise FormatError(
                f"point {i} out of bounds: ({x}, {y}) not in [0, {width}) x [0, {height})"
            )


def load_annotations(path: str | Path) -> AnnotatedScene:
    """Read an annotation JSON (and the image it references)."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"annotation file not found: {path}")
    try:
        payload = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"malformed JSON in {path}: {exc}") from exc
    for key in ("id", "image", "width", "height", "points"):
        if key not in payload:
            raise FormatError(f"{path}: missing key {key!r}")
    width, height = int(payload["width"]), int(payload["height"])
    points = np.asarray(payload["points"], dtype=np.float64).reshape(-1, 2)
    _check_points_in_bounds(points, width, height)
    image_path = path.parent / payload["image"]
    if not image_path.exists():
        raise FileNotFoundError(f"image not found: {image_path}")
    image = np.asarray(Image.open(image_path).convert("RGB"))
    if image.shape[:2] != (height, width):
        raise FormatError(
            f"{path}: image is {image.shape[1]}x{image.shape[0]} "
            f"but annotation says {width}x{height}"
        )
    return AnnotatedScene(id=str(payload["id"]), image=image, points=points)


def save_scene(scene: AnnotatedScene, path: str | Path) -> Path:
    """Write the annotation JSON at ``path`` and the image PNG next to it."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    image_name = path.stem + ".png"
    Image.fromarray(scene.image).save(path.parent / image_name)
    payload = {
        "id": scene.id,
        "image": image_name,
        "width": scene.width,
        "height": scene.height,
        "points": [[float(x), float(y)] for x, y in scene.points],
    }
    path.write_text(json.dumps(payload, indent=2) + "\n")
    return path


def load_manifest(path: str | Path) -> list[AnnotatedScene]:
    """Read a manifest (JSON list of annotation paths relative to it)."""
    path = Path(path)
    entries = json.loads(path.read_text())
    if not isinstance(entries, list):
        raise FormatError(f"{path}: manifest must be a JSON list")
    return [load_annotations(path.parent / entry) for entry in entries]


def save_density_map(dmap: DensityMap, path: str | Path) -> Path:
    """Serialize a density map; cell values are stored as float32."""
    path = Path(path)
    height, width = dmap.values.shape
    header = DENSITY_MAGIC + _DENSITY_HEADER.pack(height, width, dmap.stride)
    path.write_bytes(header + dmap.values.astype("<f4").tobytes())
    return path


def load_density_map(path: str | Path) -> DensityMap:
    raw = Path(path).read_bytes()
    if raw[:4] != DENSITY_MAGIC:
        raise FormatError(f"bad magic in {path}")
    if len(raw) < 4 + _DENSITY_HEADER.size:
        raise FormatError(
            f"truncated header in {path}: expected at least "
            f"{4 + _DENSITY_HEADER.size} bytes, got {len(raw)}"
        )
    height, width, stride = _DENSITY_HEADER.unpack_from(raw, 4)
    payload = raw[4 + _DENSITY_HEADER.size:]
    expected = height * width * 4
    if len(payload) != expected:
        raise FormatError(
            f"truncated payload in {path}: expected {expected} bytes, got {len(payload)}"
        )
    values = np.frombuffer(payload, dtype="<f4").reshape(height, width)
    return DensityMap(values.astype(np.float64), stride=stride)
