"""Count-preserving crops and resizes of annotated scenes.

Geometric transforms move the annotation points; density targets are always
regenerated from the transformed points downstream, never interpolated, so
the implied people count survives every transform exactly.
"""

from __future__ import annotations

import cv2
import numpy as np

from .data_io import AnnotatedScene

PORTRAIT = (1024, 768)  # (H, W) target when the input is taller than wide
LANDSCAPE = (768, 1024)


def _take(scene: AnnotatedScene, top: int, left: int, h: int, w: int, tag: str) -> AnnotatedScene:
    image = scene.image[top : top + h, left : left + w].copy()
    pts = scene.points
    inside = (
        (pts[:, 0] >= left)
        & (pts[:, 0] < left + w)
        & (pts[:, 1] >= top)
        & (pts[:, 1] < top + h)
    )
    moved = pts[inside] - np.array([left, top], dtype=np.float64)
    return AnnotatedScene(id=f"{scene.id}_{tag}", image=image, points=moved)


def five_crops(scene: AnnotatedScene, rng_seed: int = 0) -> list[AnnotatedScene]:
    """Four half-height/half-width corner tiles plus one random tile.

    With even dimensions the corner tiles partition the image (and therefore
    the points) exactly; odd dimensions use floored halves, which drops the
    middle row/column.  Points are assigned by half-open containment and
    re-based to the crop origin.
    """
    h2, w2 = scene.height // 2, scene.width // 2
    if h2 < 1 or w2 < 1:
        raise ValueError("image smaller than 2x2 cannot be cropped")
    crops = [
        _take(scene, 0, 0, h2, w2, "tl"),
        _take(scene, 0, scene.width - w2, h2, w2, "tr"),
        _take(scene, scene.height - h2, 0, h2, w2, "bl"),
        _take(scene, scene.height - h2, scene.width - w2, h2, w2, "br"),
    ]
    rng = np.random.default_rng(rng_seed)
    top = int(rng.integers(0, scene.height - h2 + 1))
    left = int(rng.integers(0, scene.width - w2 + 1))
    crops.append(_take(scene, top, left, h2, w2, "rand"))
    return crops


def resize_scene(scene: AnnotatedScene, target_h: int, target_w: int) -> AnnotatedScene:
    """Bilinear image resize with per-axis point scaling (count preserved)."""
    image = cv2.resize(scene.image, (target_w, target_h), interpolation=cv2.INTER_LINEAR)
    sx = target_w / scene.width
    sy = target_h / scene.height
    pts = scene.points * np.array([sx, sy])
    if len(pts):
        # scaling can round onto the open edge of the domain; pull back inside
        pts[:, 0] = np.minimum(pts[:, 0], np.nextafter(target_w, 0))
        pts[:, 1] = np.minimum(pts[:, 1], np.nextafter(target_h, 0))
    return AnnotatedScene(id=scene.id, image=image, points=pts)


def aspect_resize(scene: AnnotatedScene) -> AnnotatedScene:
    """Resize to 1024x768 when taller than wide, else 768x1024 (ties go landscape)."""
    target_h, target_w = PORTRAIT if scene.height > scene.width else LANDSCAPE
    return resize_scene(scene, target_h, target_w)


def nearest_legal_size(height: int, width: int, multiple: int = 32, minimum: int = 64) -> tuple[int, int]:
    """Nearest dimensions the model accepts: multiples of ``multiple``, at
    least ``minimum`` (the pyramid pooling needs stride-8 maps of size >= 8)."""
    legal_h = max(minimum, multiple * round(height / multiple))
    legal_w = max(minimum, multiple * round(width / multiple))
    return int(legal_h), int(legal_w)


def legalize(scene: AnnotatedScene, multiple: int = 32, minimum: int = 64) -> AnnotatedScene:
    """Resize a scene to the nearest legal model input size (no-op if legal)."""
    target = nearest_legal_size(scene.height, scene.width, multiple, minimum)
    if target == (scene.height, scene.width):
        return scene
    return resize_scene(scene, *target)
