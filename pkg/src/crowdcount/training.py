"""Optimization loop, checkpointing, and numerical verification harnesses."""

from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .augmentation import aspect_resize, five_crops, legalize
from .config import ModelConfig
from .data_io import AnnotatedScene, load_manifest
from .density import (
    class_label,
    default_region_threshold,
    downsample_preserving_count,
    fixed_sigma_density,
    knn_sigma,
    render_density,
    split_sparse_dense,
)
from .losses import loss_breakdown, total_loss
from .model import OUTPUT_STRIDE, CrowdDensityNet, image_to_tensor

CHECKPOINT_VERSION = 1
LOG_COLUMNS = ("iter", "loss", "loss_s", "loss_d", "loss_f", "loss_cls", "train_mae")


class TrainingDiverged(RuntimeError):
    """Raised when the loss goes non-finite; the last good checkpoint survives."""

    def __init__(self, iteration: int, checkpoint: Path | None):
        where = f"last good checkpoint: {checkpoint}" if checkpoint else "no checkpoint written yet"
        super().__init__(f"non-finite loss at iteration {iteration}; {where}")
        self.iteration = iteration
        self.checkpoint = checkpoint


class CheckpointError(RuntimeError):
    """Unreadable or incompatible checkpoint file."""


def save_checkpoint(model: CrowdDensityNet, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "version": CHECKPOINT_VERSION,
        "config": dataclasses.asdict(model.config),
        "state": model.state_dict(),
    }
    torch.save(payload, path)
    return path


def load_checkpoint(path: str | Path) -> CrowdDensityNet:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no checkpoint at {path}")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:
        raise CheckpointError(f"corrupt checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or "version" not in payload:
        raise CheckpointError(f"corrupt checkpoint {path}: missing header")
    if payload["version"] != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"checkpoint version mismatch in {path}: "
            f"got {payload['version']}, expected {CHECKPOINT_VERSION}"
        )
    model = CrowdDensityNet(ModelConfig(**payload["config"]))
    model.load_state_dict(payload["state"])
    model.eval()
    return model


def ground_truth_density(scene: AnnotatedScene, config: ModelConfig):
    """Stride-1 density map for a scene under the configured sigma mode."""
    if config.sigma_mode == "fixed":
        return fixed_sigma_density(scene.points, scene.height, scene.width, config.sigma_fixed)
    sigmas = knn_sigma(scene.points, k=config.knn_k, beta=config.beta, sigma_fixed=config.sigma_fixed)
    return render_density(scene.points, sigmas, scene.height, scene.width)


@dataclass
class TrainItem:
    scene_id: str
    image: torch.Tensor  # (3, H, W)
    gt_sparse: torch.Tensor  # (h, w) at stride 8
    gt_dense: torch.Tensor
    gt_final: torch.Tensor
    label: int
    count: float


def build_targets(scene: AnnotatedScene, config: ModelConfig, theta_cls: float) -> TrainItem:
    """Render, downsample to the output stride, split, and label one scene."""
    dm = ground_truth_density(scene, config)
    dm8 = downsample_preserving_count(dm, OUTPUT_STRIDE)
    tau = config.region_threshold
    if tau is None:
        tau = default_region_threshold(dm8)
    gt_sparse, gt_dense = split_sparse_dense(dm8, tau)
    return TrainItem(
        scene_id=scene.id,
        image=image_to_tensor(scene.image),
        gt_sparse=torch.from_numpy(gt_sparse.values).float(),
        gt_dense=torch.from_numpy(gt_dense.values).float(),
        gt_final=torch.from_numpy(dm8.values).float(),
        label=class_label(dm8, theta_cls) if dm8.count > 0 else 0,
        count=float(len(scene.points)),
    )


def _augmented_pool(scenes: list[AnnotatedScene], config: ModelConfig) -> list[AnnotatedScene]:
    pool: list[AnnotatedScene] = []
    for index, scene in enumerate(scenes):
        variants: list[AnnotatedScene] = []
        if config.use_crop_augment:
            variants.extend(five_crops(scene, rng_seed=config.seed * 1000003 + index))
        if config.use_resize_augment:
            variants.append(aspect_resize(scene))
        if not variants:
            variants = [scene]
        pool.extend(legalize(v) for v in variants)
    return pool


@torch.no_grad()
def _train_mae(model: CrowdDensityNet, eval_items: list[tuple[torch.Tensor, float]]) -> float:
    model.eval()
    errors = []
    for image, count in eval_items:
        out = model(image)  # predicted routing, as at test time
        errors.append(abs(float(out.dm_final.sum().item()) - count))
    model.train()
    return float(np.mean(errors))


@dataclass
class TrainResult:
    checkpoint: Path
    log: Path
    train_mae: float
    iterations: int


def train(
    config: ModelConfig,
    manifest_path: str | Path,
    out_dir: str | Path,
    iterations: int = 2000,
    stop_mae: float | None = None,
) -> TrainResult:
    """End-to-end training: sample a (possibly augmented) scene, derive its
    targets, forward with teacher routing, step the optimizer.

    Writes ``model.ckpt`` (refreshed each epoch) and ``train_log.csv`` with
    one row per iteration; the ``train_mae`` column carries the latest
    epoch-end value.  Deterministic given ``config.seed``.
    """
    scenes = load_manifest(manifest_path)
    if not scenes:
        raise ValueError(f"empty manifest: {manifest_path}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    torch.manual_seed(config.seed)
    model = CrowdDensityNet(config)
    model.train()
    optimizer = torch.optim.Adam(model.parameters(), lr=config.lr)

    pool = _augmented_pool(scenes, config)
    theta = config.class_threshold
    if theta is None:
        theta = max(1.0, float(np.median([len(v.points) for v in pool])))
    items = [build_targets(v, config, theta) for v in pool]

    eval_scenes = [legalize(s) for s in scenes]
    eval_items = [(image_to_tensor(s.image), float(len(s.points))) for s in eval_scenes]

    checkpoint_path = out_dir / "model.ckpt"
    log_path = out_dir / "train_log.csv"
    rng = np.random.default_rng(config.seed)
    order: list[int] = []
    train_mae = float("nan")
    iterations_run = 0

    with open(log_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(LOG_COLUMNS)
        for iteration in range(1, iterations + 1):
            if not order:
                order = [int(i) for i in rng.permutation(len(items))]
            item = items[order.pop(0)]

            optimizer.zero_grad()
            out = model(item.image, teacher_label=item.label)
            total, parts = loss_breakdown(
                out, item.gt_sparse, item.gt_dense, item.gt_final, item.label, config.loss_weights
            )
            if not torch.isfinite(total):
                fh.flush()
                raise TrainingDiverged(iteration, checkpoint_path if checkpoint_path.exists() else None)
            total.backward()
            optimizer.step()
            iterations_run = iteration

            epoch_end = not order
            if epoch_end:
                train_mae = _train_mae(model, eval_items)
                save_checkpoint(model, checkpoint_path)
            writer.writerow(
                [iteration]
                + [format(v.item(), ".17g") for v in (total, parts["loss_s"], parts["loss_d"],
                                                      parts["loss_f"], parts["loss_cls"])]
                + [format(train_mae, ".17g")]
            )
            if epoch_end and stop_mae is not None and train_mae < stop_mae:
                break

    save_checkpoint(model, checkpoint_path)
    return TrainResult(checkpoint_path, log_path, train_mae, iterations_run)


def grad_check(
    config: ModelConfig | None = None,
    eps: float = 1e-4,
    seed: int = 0,
    size: tuple[int, int] = (64, 64),
) -> float:
    """Compare the analytic gradient of the total loss against central finite
    differences, element by element, over every parameter tensor (float64).

    The rectifier makes the loss piecewise linear in each parameter, so a
    probe bracket [theta-eps, theta+eps] can straddle activation kinks, where
    a fixed-step central difference measures a secant across pieces rather
    than the derivative.  Each probe therefore starts at ``eps`` and shrinks
    its step until two successive estimates agree (step-stabilized
    differencing); float64 keeps the smallest steps above roundoff.

    Returns the maximum relative error; parameters are left untouched.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if config is None:
        config = ModelConfig(channel_multiplier=1 / 32)
    torch.manual_seed(seed)
    model = CrowdDensityNet(config).double()
    gen = torch.Generator().manual_seed(seed)
    h, w = size
    image = torch.rand((3, h, w), generator=gen, dtype=torch.float64)
    fh, fw = h // OUTPUT_STRIDE, w // OUTPUT_STRIDE
    gt_sparse = 0.1 * torch.rand((fh, fw), generator=gen, dtype=torch.float64)
    gt_dense = 0.1 * torch.rand((fh, fw), generator=gen, dtype=torch.float64)
    gt_final = gt_sparse + gt_dense
    label = 1  # routes through the dense decoder, which includes the shared sparse branch

    def loss_value() -> torch.Tensor:
        out = model(image, teacher_label=label)
        return total_loss(out, gt_sparse, gt_dense, gt_final, label, config.loss_weights)

    params = list(model.parameters())
    grads = torch.autograd.grad(loss_value(), params, allow_unused=True)

    def central(flat: torch.Tensor, idx: int, original: float, step: float) -> float:
        flat[idx] = original + step
        upper = loss_value().item()
        flat[idx] = original - step
        lower = loss_value().item()
        flat[idx] = original
        return (upper - lower) / (2.0 * step)

    max_rel = 0.0
    with torch.no_grad():
        for param, grad in zip(params, grads):
            flat = param.view(-1)
            analytic = torch.zeros_like(flat) if grad is None else grad.reshape(-1)
            for idx in range(flat.numel()):
                original = flat[idx].item()
                step = eps
                fd = central(flat, idx, original, step)
                for _ in range(4):
                    step /= 8.0
                    refined = central(flat, idx, original, step)
                    stable = abs(refined - fd) <= 2e-4 * max(abs(refined), abs(fd), 1e-6)
                    fd = refined
                    if stable:
                        break
                a = analytic[idx].item()
                rel = abs(a - fd) / max(abs(a), abs(fd), 1e-6)
                max_rel = max(max_rel, rel)
    return max_rel
