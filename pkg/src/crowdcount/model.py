"""The full crowd-density network.

A truncated VGG16 encoder produces stride-8 features; a pyramid context
module aggregates pooled multi-scale context and re-attends it; a classifier
scores the crowdedness of the scene; the features are then routed to one of
two structurally identical decoders (one trained on sparse scenes, one on
dense scenes) that each emit a sparse map and a dense map; finally the two
branch feature maps are fused through a sigmoid self-gate into the overall
density map.

Feature maps are (1, C, H, W) tensors throughout; the public ``predict``
wrapper deals in numpy images and :class:`DensityMap` values.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .attention import ChannelSpatialAttention
from .config import VGG_POOL_AFTER, ModelConfig
from .data_io import DensityMap

OUTPUT_STRIDE = 8
SPARSE_BRANCH = "sparse"
DENSE_BRANCH = "dense"


@dataclass
class NetOutput:
    """Raw forward results; the density maps are (h, w) tensors at stride 8."""

    prob: torch.Tensor
    dm_sparse: torch.Tensor
    dm_dense: torch.Tensor
    dm_final: torch.Tensor
    routed_branch: str


@dataclass
class ModelOutput:
    """Inference results with density maps materialized for downstream tools."""

    prob: float
    dm_sparse: DensityMap
    dm_dense: DensityMap
    dm_final: DensityMap
    routed_branch: str


@dataclass
class PyramidState:
    """Intermediates of the pyramid module, mostly for inspection and tests."""

    contexts: list[torch.Tensor]
    fused: torch.Tensor
    attended: torch.Tensor


def _head_conv(cin: int) -> nn.Conv2d:
    """1x1 head emitting a density map (after a rectifier).

    Weights start small and the bias slightly positive so the initial map is
    near the ground-truth scale with every cell alive; a rectified head whose
    cells all start negative would never recover (zero gradient everywhere).
    """
    conv = nn.Conv2d(cin, 1, kernel_size=1)
    nn.init.kaiming_uniform_(conv.weight, nonlinearity="relu")
    with torch.no_grad():
        conv.weight.mul_(0.1)
    nn.init.constant_(conv.bias, 0.1)
    return conv


def _feature_conv(cin: int, cout: int, kernel_size: int, gain: float = 1.0, **kwargs) -> nn.Conv2d:
    """Conv with scale-preserving (He) init so activations keep O(1) magnitude
    through the deep gated stack.

    ``gain=2`` pre-compensates the ~0.5x attenuation of a sigmoid gate applied
    right after the conv.  The small positive bias keeps rectified units off
    the exact kink when their whole receptive field is inactive.
    """
    conv = nn.Conv2d(cin, cout, kernel_size, **kwargs)
    nn.init.kaiming_uniform_(conv.weight, nonlinearity="relu")
    nn.init.constant_(conv.bias, 0.05)
    if gain != 1.0:
        with torch.no_grad():
            conv.weight.mul_(gain)
    return conv


class VggEncoder(nn.Module):
    """VGG16 front end truncated to a stride-8 feature map."""

    def __init__(self, widths, pool_after=VGG_POOL_AFTER):
        super().__init__()
        layers: list[nn.Module] = []
        cin = 3
        for i, width in enumerate(widths):
            gain = 2.0 if i == len(widths) - 1 else 1.0
            layers.append(_feature_conv(cin, width, 3, padding=1, gain=gain))
            layers.append(nn.ReLU(inplace=True))
            if i in pool_after:
                layers.append(nn.MaxPool2d(kernel_size=2, stride=2))
            cin = width
        self.features = nn.Sequential(*layers)
        self.out_channels = cin
        self.stride = 2 ** len(pool_after)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h, w = x.shape[-2:]
        if h % self.stride or w % self.stride:
            raise ValueError(f"input {h}x{w} is not divisible by the encoder stride {self.stride}")
        return self.features(x)


class ContextBlock(nn.Module):
    """Bottleneck context transform: 1x1 reduce, then a 1x1 and a dilated 3x3
    convolution summed back at full width."""

    def __init__(self, channels: int, reduced: int, dilation: int):
        super().__init__()
        self.reduce = _feature_conv(channels, reduced, 1)
        self.point = _feature_conv(reduced, channels, 1)
        self.dilated = _feature_conv(reduced, channels, 3, padding=dilation, dilation=dilation)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        r = F.relu(self.reduce(x))
        return self.point(r) + self.dilated(r)


class PyramidContext(nn.Module):
    """Multi-scale pooled context aggregation with a dual-gate attention stage.

    One shared :class:`ContextBlock` transforms the pooled map at every scale
    (that is the point: the transform sees the same statistics at all
    scales); the upsampled contexts are concatenated with the input and fused
    back to the input width.  The fused map then passes two attention
    branches, a pooled-context sigmoid gate and the channel/spatial gate pair,
    combined by element-wise max.
    """

    GATE_POOL = 4

    def __init__(self, channels: int, reduced: int, scales, dilation: int):
        super().__init__()
        scales = tuple(int(s) for s in scales)
        if not scales:
            raise ValueError("at least one pyramid scale is required")
        self.scales = scales
        self.shared_context = ContextBlock(channels, reduced, dilation)
        self.fuse_conv = _feature_conv((len(scales) + 1) * channels, channels, 1, gain=2.0)
        self.gate_context = ContextBlock(channels, reduced, dilation)
        self.attention = ChannelSpatialAttention(channels)

    def context(self, x: torch.Tensor, scale: int) -> torch.Tensor:
        h, w = x.shape[-2:]
        if scale > h or scale > w:
            raise ValueError(f"pyramid scale {scale} exceeds spatial dims {h}x{w}")
        pooled = F.adaptive_avg_pool2d(x, (h // scale, w // scale))
        transformed = self.shared_context(pooled)
        return F.interpolate(transformed, size=(h, w), mode="bilinear", align_corners=False)

    def fuse(self, x: torch.Tensor, contexts) -> torch.Tensor:
        contexts = list(contexts)
        if not contexts:
            raise ValueError("need at least one pooled context to fuse")
        if len(contexts) != len(self.scales):
            raise ValueError(f"expected {len(self.scales)} contexts, got {len(contexts)}")
        for cf in contexts:
            if cf.shape[-2:] != x.shape[-2:]:
                raise ValueError("context/input spatial shape mismatch")
        return F.relu(self.fuse_conv(torch.cat([*contexts, x], dim=1)))

    def attend(self, fused: torch.Tensor) -> torch.Tensor:
        h, w = fused.shape[-2:]
        if h % self.GATE_POOL or w % self.GATE_POOL:
            raise ValueError(f"spatial dims {h}x{w} not divisible by {self.GATE_POOL}")
        pooled = F.avg_pool2d(fused, self.GATE_POOL)
        gate = torch.sigmoid(
            F.interpolate(self.gate_context(pooled), size=(h, w), mode="bilinear", align_corners=False)
        )
        return torch.max(fused * gate, self.attention(fused))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.attend(self.fuse(x, [self.context(x, s) for s in self.scales]))

    def forward_state(self, x: torch.Tensor) -> PyramidState:
        contexts = [self.context(x, s) for s in self.scales]
        fused = self.fuse(x, contexts)
        return PyramidState(contexts, fused, self.attend(fused))


class DensityClassifier(nn.Module):
    """Global-average-pooled linear probe for the crowdedness of a feature map."""

    def __init__(self, channels: int):
        super().__init__()
        self.fc = nn.Linear(channels, 1)
        nn.init.zeros_(self.fc.bias)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        pooled = x.mean(dim=(-2, -1))
        return torch.sigmoid(self.fc(pooled)).squeeze()


class DecoderLayer(nn.Module):
    """1x1 bottleneck into a dilated 3x3, rectified then re-attended."""

    def __init__(self, cin: int, cout: int, reduced: int, dilation: int):
        super().__init__()
        self.reduce = _feature_conv(cin, reduced, 1)
        self.dilated = _feature_conv(reduced, cout, 3, padding=dilation, dilation=dilation, gain=2.0)
        self.attention = ChannelSpatialAttention(cout)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.attention(F.relu(self.dilated(self.reduce(x))))


class DecoderBranch(nn.Module):
    """Two decoder layers plus a 1x1 head emitting one non-negative map."""

    def __init__(self, cin: int, mid: int, out: int, reduced: int, dilation: int):
        super().__init__()
        self.layer_a = DecoderLayer(cin, mid, reduced, dilation)
        self.layer_b = DecoderLayer(mid, out, reduced, dilation)
        self.head = _head_conv(out)

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        feat = self.layer_b(self.layer_a(x))
        return feat, F.relu(self.head(feat))


class RoutedDecoder(nn.Module):
    """A decoder trunk (two shared layers) feeding a sparse and a dense branch.

    The sparse branch instance is passed in so the two routed decoders can
    share it: low-density regions occur in both sparse and dense scenes, so
    one set of sparse-branch weights sees all of them.
    """

    def __init__(self, in_channels: int, channels, reduced: int, dilation: int,
                 sparse_branch: DecoderBranch):
        super().__init__()
        self.layer1 = DecoderLayer(in_channels, channels[0], reduced, dilation)
        self.layer2 = DecoderLayer(channels[0], channels[1], reduced, dilation)
        self.sparse_branch = sparse_branch
        self.dense_branch = DecoderBranch(channels[1], channels[2], channels[3], reduced, dilation)

    def forward(self, x: torch.Tensor):
        trunk = self.layer2(self.layer1(x))
        feat_s, dm_s = self.sparse_branch(trunk)
        feat_d, dm_d = self.dense_branch(trunk)
        return feat_s, feat_d, dm_s, dm_d


def image_to_tensor(image: np.ndarray, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """(H, W, 3) uint8 -> (3, H, W) float in [0, 1]."""
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError("expected an (H, W, 3) image")
    scaled = image.astype(np.float32) / 255.0  # copy also drops any read-only flag
    return torch.from_numpy(scaled).permute(2, 0, 1).to(dtype)


class CrowdDensityNet(nn.Module):
    """Encoder + pyramid context + classifier + routed dual decoder + fusion."""

    def __init__(self, config: ModelConfig | None = None):
        super().__init__()
        self.config = config if config is not None else ModelConfig()
        cfg = self.config
        widths = [cfg.scaled(c) for c in cfg.backbone_channels]
        reduced = cfg.scaled(cfg.pyramid_reduced_channels)
        dec = tuple(cfg.scaled(c) for c in cfg.decoder_channels[:-1]) + (1,)
        feat_ch = widths[-1]

        self.encoder = VggEncoder(widths)
        self.encoder_attention = ChannelSpatialAttention(feat_ch) if cfg.post_attention else None
        self.pyramid = PyramidContext(feat_ch, reduced, cfg.pyramid_scales, cfg.dilation_rate)
        self.classifier = DensityClassifier(feat_ch)
        shared_sparse = DecoderBranch(dec[1], dec[2], dec[3], reduced, cfg.dilation_rate)
        self.sparse_decoder = RoutedDecoder(feat_ch, dec, reduced, cfg.dilation_rate, shared_sparse)
        self.dense_decoder = RoutedDecoder(feat_ch, dec, reduced, cfg.dilation_rate, shared_sparse)
        self.fusion_head = _head_conv(dec[3])

    def _check_input(self, image: torch.Tensor) -> torch.Tensor:
        if image.dim() == 3:
            image = image.unsqueeze(0)
        if image.dim() != 4 or image.shape[0] != 1 or image.shape[1] != 3:
            raise ValueError("expected a (3, H, W) or (1, 3, H, W) image tensor")
        h, w = image.shape[-2:]
        if h % OUTPUT_STRIDE or w % OUTPUT_STRIDE:
            raise ValueError(f"input {h}x{w} must be divisible by {OUTPUT_STRIDE}")
        fh, fw = h // OUTPUT_STRIDE, w // OUTPUT_STRIDE
        gate = PyramidContext.GATE_POOL
        if fh % gate or fw % gate:
            raise ValueError(
                f"stride-{OUTPUT_STRIDE} feature map {fh}x{fw} must be divisible by {gate} "
                f"(input dims must be multiples of {OUTPUT_STRIDE * gate})"
            )
        largest = max(self.pyramid.scales)
        if fh < largest or fw < largest:
            raise ValueError(
                f"feature map {fh}x{fw} is smaller than the largest pyramid scale {largest}"
            )
        param = next(self.parameters())
        return image.to(param.dtype)

    def forward(self, image: torch.Tensor, teacher_label: int | None = None) -> NetOutput:
        """Run the full pipeline on one image.

        With ``teacher_label`` given (training), the branch choice follows the
        label; otherwise the classifier routes: probability >= 0.5 selects the
        dense decoder (the boundary is inclusive).
        """
        x = self._check_input(image)
        feats = self.encoder(x)
        if self.encoder_attention is not None:
            feats = self.encoder_attention(feats)
        attended = self.pyramid(feats)
        prob = self.classifier(attended)
        if teacher_label is None:
            use_dense = bool(prob.detach().item() >= 0.5)
        else:
            if teacher_label not in (0, 1):
                raise ValueError("teacher_label must be 0 or 1")
            use_dense = bool(teacher_label)
        decoder = self.dense_decoder if use_dense else self.sparse_decoder
        feat_s, feat_d, dm_s, dm_d = decoder(attended)
        feat_sum = feat_s + feat_d
        fused = feat_sum * torch.sigmoid(feat_sum)
        dm_f = F.relu(self.fusion_head(fused))
        return NetOutput(
            prob=prob,
            dm_sparse=dm_s[0, 0],
            dm_dense=dm_d[0, 0],
            dm_final=dm_f[0, 0],
            routed_branch=DENSE_BRANCH if use_dense else SPARSE_BRANCH,
        )

    @torch.no_grad()
    def predict(self, image: np.ndarray | torch.Tensor, teacher_label: int | None = None) -> ModelOutput:
        """Inference wrapper: accepts an (H, W, 3) uint8 image, returns maps."""
        if isinstance(image, np.ndarray):
            param = next(self.parameters())
            image = image_to_tensor(image, dtype=param.dtype)
        out = self.forward(image, teacher_label=teacher_label)
        as_map = lambda t: DensityMap(t.detach().cpu().numpy(), stride=OUTPUT_STRIDE)
        return ModelOutput(
            prob=float(out.prob.item()),
            dm_sparse=as_map(out.dm_sparse),
            dm_dense=as_map(out.dm_dense),
            dm_final=as_map(out.dm_final),
            routed_branch=out.routed_branch,
        )
