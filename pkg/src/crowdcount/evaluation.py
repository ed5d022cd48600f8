"""Counting metrics, evaluation runs, and the benchmark reference table."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .augmentation import legalize
from .data_io import DensityMap, load_manifest


def count_from_density(dmap) -> float:
    """Crowd count implied by a density map: the sum over all cells."""
    values = dmap.values if isinstance(dmap, DensityMap) else np.asarray(dmap)
    return float(values.sum())


def _check_pair(est, gt) -> tuple[np.ndarray, np.ndarray]:
    e = np.asarray(est, dtype=np.float64).reshape(-1)
    g = np.asarray(gt, dtype=np.float64).reshape(-1)
    if e.size != g.size:
        raise ValueError(f"length mismatch: {e.size} vs {g.size}")
    if e.size == 0:
        raise ValueError("empty count lists")
    return e, g


def mae(est, gt) -> float:
    """Mean absolute counting error over a set of images."""
    e, g = _check_pair(est, gt)
    return float(np.mean(np.abs(e - g)))


def mse(est, gt) -> float:
    """Root of the mean squared counting error.

    Counting benchmarks report this root under the name "MSE"; the name is
    kept for comparability with published tables.
    """
    e, g = _check_pair(est, gt)
    return float(np.sqrt(np.mean((e - g) ** 2)))


@dataclass
class EvalRow:
    id: str
    gt_count: float
    est_count: float
    abs_err: float


@dataclass
class EvalResult:
    rows: list[EvalRow]
    mae: float
    mse: float

    def write_csv(self, path: str | Path) -> Path:
        path = Path(path)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["id", "gt_count", "est_count", "abs_err"])
            for row in self.rows:
                writer.writerow([row.id, f"{row.gt_count:.6f}", f"{row.est_count:.6f}", f"{row.abs_err:.6f}"])
        return path


def evaluate(checkpoint_path: str | Path, manifest_path: str | Path) -> EvalResult:
    """Per-image counts plus MAE/MSE for every scene in the manifest.

    Images are resized to the nearest legal model input size; the ground
    truth count is the number of annotated points (invariant under resize).
    Routing is predicted by the classifier, as at test time.
    """
    from .training import load_checkpoint  # local import to avoid a cycle

    scenes = load_manifest(manifest_path)
    if not scenes:
        raise ValueError(f"no images in manifest: {manifest_path}")
    model = load_checkpoint(checkpoint_path)
    rows = []
    for scene in scenes:
        legal = legalize(scene)
        output = model.predict(legal.image)
        est = output.dm_final.count
        gt = float(len(scene.points))
        rows.append(EvalRow(scene.id, gt, est, abs(est - gt)))
    estimates = [row.est_count for row in rows]
    truths = [row.gt_count for row in rows]
    return EvalResult(rows, mae(estimates, truths), mse(estimates, truths))


# Published results for this architecture on the standard benchmarks, kept as
# display strings so the table reproduces them verbatim.  These are
# literature values: nothing in this repository reproduces them.
LITERATURE_LABEL = "literature (reported, not reproduced)"
REFERENCE_ROWS = (
    ("ShanghaiTech-A", "58.5", "93.4"),
    ("ShanghaiTech-B", "7.1", "10.9"),
    ("WorldExpo10 avg", "6.0", "-"),
    ("UCF CC 50", "119.8", "159"),
    ("UCSD", "0.93", "1.21"),
)
WORLDEXPO_SCENE_MAE = ("1.8", "9.1", "9.6", "7.3", "2.2")


def report_payload(results: EvalResult | None = None) -> dict:
    """JSON-ready report: our rows (if any) next to the stored reference rows."""
    payload = {
        "reference": [
            {"dataset": name, "mae": mae_s, "mse": mse_s, "source": LITERATURE_LABEL}
            for name, mae_s, mse_s in REFERENCE_ROWS
        ],
        "worldexpo_scene_mae": list(WORLDEXPO_SCENE_MAE),
        "results": None,
    }
    if results is not None:
        payload["results"] = {
            "mae": results.mae,
            "mse": results.mse,
            "rows": [
                {"id": r.id, "gt_count": r.gt_count, "est_count": r.est_count, "abs_err": r.abs_err}
                for r in results.rows
            ],
        }
    return payload


def render_report(results: EvalResult | None = None) -> str:
    """Fixed-width table of our metrics next to the stored reference rows."""
    name_w = max(len("dataset"), *(len(r[0]) for r in REFERENCE_ROWS), len("this run"))
    lines = [f"{'dataset':<{name_w}}  {'MAE / MSE':<15}  source"]
    lines.append("-" * (name_w + 2 + 15 + 2 + len(LITERATURE_LABEL)))
    for name, mae_s, mse_s in REFERENCE_ROWS:
        lines.append(f"{name:<{name_w}}  {mae_s + ' / ' + mse_s:<15}  {LITERATURE_LABEL}")
    if results is not None:
        value = f"{results.mae:.2f} / {results.mse:.2f}"
        lines.append(f"{'this run':<{name_w}}  {value:<15}  evaluated here ({len(results.rows)} images)")
    return "\n".join(lines) + "\n"


def write_report(results: EvalResult | None, out_dir: str | Path) -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    text_path = out_dir / "report.txt"
    json_path = out_dir / "report.json"
    text_path.write_text(render_report(results))
    json_path.write_text(json.dumps(report_payload(results), indent=2) + "\n")
    return text_path, json_path
