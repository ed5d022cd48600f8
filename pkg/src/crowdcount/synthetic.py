"""Deterministic synthetic crowd scenes: no external datasets needed.

People are placed around a few cluster centers so each scene contains both
sparse and congested sub-regions, and the image shows a dark blob per head on
a textured background.  Everything is a pure function of the spec: per-point
random streams are keyed on (seed, index), so generation order is irrelevant.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data_io import AnnotatedScene, save_scene

PLACEMENT_RETRIES = 200
_BLOB_DARK = 25.0


@dataclass(frozen=True)
class SynthSpec:
    seed: int
    n_people: int = 50
    height: int = 256
    width: int = 256
    n_clusters: int = 3
    cluster_spread: float = 24.0
    blob_radius: float = 3.0

    def __post_init__(self) -> None:
        if self.n_people < 0:
            raise ValueError("n_people must be non-negative")
        if self.height < 64 or self.width < 64:
            raise ValueError("scene dimensions must be at least 64 px")
        if self.n_clusters < 1:
            raise ValueError("n_clusters must be >= 1")
        if self.cluster_spread <= 0 or self.blob_radius <= 0:
            raise ValueError("cluster_spread and blob_radius must be positive")


def _rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=key))


def _cluster_centers(spec: SynthSpec) -> np.ndarray:
    rng = _rng(spec.seed, 0)
    margin_x = spec.width * 0.12
    margin_y = spec.height * 0.12
    xs = rng.uniform(margin_x, spec.width - margin_x, spec.n_clusters)
    ys = rng.uniform(margin_y, spec.height - margin_y, spec.n_clusters)
    return np.stack([xs, ys], axis=1)


def _place_points(spec: SynthSpec) -> np.ndarray:
    centers = _cluster_centers(spec)
    points = np.zeros((spec.n_people, 2))
    for i in range(spec.n_people):
        rng = _rng(spec.seed, 1, i)
        cx, cy = centers[int(rng.integers(spec.n_clusters))]
        for _ in range(PLACEMENT_RETRIES):
            x = cx + rng.normal(0.0, spec.cluster_spread)
            y = cy + rng.normal(0.0, spec.cluster_spread)
            if 0 <= x < spec.width and 0 <= y < spec.height:
                points[i] = (x, y)
                break
        else:
            raise RuntimeError(
                f"could not place point {i} inside the image after "
                f"{PLACEMENT_RETRIES} draws (cluster_spread too large?)"
            )
    return points


def _render_image(spec: SynthSpec, points: np.ndarray) -> np.ndarray:
    rng = _rng(spec.seed, 2)
    block = 16
    coarse = rng.uniform(150.0, 210.0, (math.ceil(spec.height / block), math.ceil(spec.width / block)))
    base = np.kron(coarse, np.ones((block, block)))[: spec.height, : spec.width]
    base = base + rng.normal(0.0, 5.0, (spec.height, spec.width))
    canvas = np.clip(base, 0.0, 255.0)

    # Dark radial blob per head; darkest at the pixel nearest the point, so
    # blob centers match annotations to within half a pixel.
    radius = spec.blob_radius
    pad = int(math.ceil(radius)) + 2
    for x, y in points:
        r0 = max(0, int(math.floor(y)) - pad)
        r1 = min(spec.height, int(math.floor(y)) + pad + 1)
        c0 = max(0, int(math.floor(x)) - pad)
        c1 = min(spec.width, int(math.floor(x)) + pad + 1)
        rows = np.arange(r0, r1, dtype=np.float64)
        cols = np.arange(c0, c1, dtype=np.float64)
        dist = np.sqrt((rows[:, None] - y) ** 2 + (cols[None, :] - x) ** 2)
        blend = np.clip(dist / radius, 0.0, 1.0)
        window = canvas[r0:r1, c0:c1]
        canvas[r0:r1, c0:c1] = window * blend + _BLOB_DARK * (1.0 - blend)

    return np.repeat(canvas[:, :, None], 3, axis=2).astype(np.uint8)


def scene_id_for(spec: SynthSpec) -> str:
    return f"synth_{spec.seed}"


def generate_scene(spec: SynthSpec) -> AnnotatedScene:
    """Build one annotated scene; identical specs give bit-identical output."""
    points = _place_points(spec)
    image = _render_image(spec, points)
    return AnnotatedScene(id=scene_id_for(spec), image=image, points=points)


def generate_dataset(specs: list[SynthSpec], out_dir: str | Path) -> Path:
    """Write one annotation JSON + PNG per spec plus a manifest listing them."""
    ids = [scene_id_for(spec) for spec in specs]
    if len(set(ids)) != len(ids):
        raise ValueError("spec seeds must be distinct (scene ids derive from them)")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for spec in specs:
        scene = generate_scene(spec)
        annotation = out_dir / f"{scene.id}.json"
        save_scene(scene, annotation)
        entries.append(annotation.name)
    manifest = out_dir / "manifest.json"
    manifest.write_text(json.dumps(entries, indent=2) + "\n")
    return manifest
