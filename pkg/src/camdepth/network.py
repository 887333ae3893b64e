"""Encoder-decoder depth network with per-pixel camera channels.

The encoder is `levels` stride-2 3x3 conv+relu stages. Camera channels (when
enabled) are concatenated to the bottleneck features and to every skip
connection, each concatenation followed by a 3x3 conv. Those convs exist in
both variants; turning the channels on only widens their inputs by 6, which
keeps the encoder untouched and usable as a pretrained backbone either way.

The decoder upsamples x2 (bilinear), concatenates the matching skip, and
convolves. A prediction head hangs off the bottleneck and every decoder stage:
inverse depth (softplus with a 1e-4 floor, so strictly positive), confidence
(sigmoid), and, at the coarsest scale only, unit normals. With focal
normalization on, heads predict in the f_n-referenced space and metric output
is recovered by the inverse transform at prediction time.

Training: Adam on the weighted multi-scale loss, one sensor size per step in
round-robin so one parameter set serves every size in the group. Deterministic
given (seed, config, datasets). Confidence targets are computed from the
current prediction without gradient flow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import fileio
from .autodiff import Node
from .camconv import make_stack
from .camera import DEFAULT_NORMALIZED_FOCAL, CameraIntrinsics, FocalNormalization, resize_intrinsics
from .depthmap import (
    DepthMap,
    InverseDepthMap,
    confidence_target,
    denormalize_inverse_depth,
    normalize_inverse_depth,
    normals_from_depth,
    to_depth,
    to_inverse,
)
from .interp import line_positions, line_support, resample_bilinear
from .losses import LossWeights, scale_loss_terms, total_loss
from .synth import Sample, derive_view, load_dataset, sample_augmentation

XI_FLOOR = 1e-4
HEAD_FULL = "dcn"  # depth + confidence + normals
HEAD_BASE = "dc"


@dataclass(frozen=True)
class NetConfig:
    levels: int = 3
    base_channels: int = 16
    use_camconvs: bool = False
    use_focal_norm: bool = False
    f_n: float = DEFAULT_NORMALIZED_FOCAL
    heads: tuple[str, ...] | None = None  # per scale, coarsest first; derived when None
    seed: int = 0

    def __post_init__(self):
        if self.levels < 2:
            raise ValueError("need at least 2 encoder levels")
        if self.base_channels < 1:
            raise ValueError("base_channels must be positive")
        if self.f_n <= 0:
            raise ValueError("f_n must be positive")
        if self.heads is None:
            derived = (HEAD_FULL,) + (HEAD_BASE,) * self.levels
            object.__setattr__(self, "heads", derived)
        else:
            object.__setattr__(self, "heads", tuple(self.heads))
        if len(self.heads) != self.levels + 1:
            raise ValueError(f"need {self.levels + 1} head entries, got {len(self.heads)}")
        if self.heads[0] != HEAD_FULL or any(h != HEAD_BASE for h in self.heads[1:]):
            raise ValueError("coarsest head must be dcn and finer heads dc")

    def to_dict(self) -> dict:
        return {
            "levels": self.levels,
            "base_channels": self.base_channels,
            "use_camconvs": self.use_camconvs,
            "use_focal_norm": self.use_focal_norm,
            "f_n": self.f_n,
            "heads": list(self.heads),
            "seed": self.seed,
        }

    @staticmethod
    def from_dict(obj: dict) -> "NetConfig":
        return NetConfig(
            levels=int(obj["levels"]),
            base_channels=int(obj["base_channels"]),
            use_camconvs=bool(obj["use_camconvs"]),
            use_focal_norm=bool(obj["use_focal_norm"]),
            f_n=float(obj["f_n"]),
            heads=tuple(obj["heads"]),
            seed=int(obj["seed"]),
        )


def encoder_channels(cfg: NetConfig) -> list[int]:
    return [cfg.base_channels * (2 ** i) for i in range(cfg.levels)]


def parameter_shapes(cfg: NetConfig) -> dict[str, tuple[int, ...]]:
    """Every tensor's shape; kernels are (kh, kw, cin, cout), biases (1, 1, c)."""
    extra = 6 if cfg.use_camconvs else 0
    chans = encoder_channels(cfg)
    shapes: dict[str, tuple[int, ...]] = {}

    def conv(name, cin, cout):
        shapes[f"{name}.w"] = (3, 3, cin, cout)
        shapes[f"{name}.b"] = (1, 1, cout)

    cin = 3
    for l, c in enumerate(chans, start=1):
        conv(f"enc{l}", cin, c)
        cin = c
    conv("bott", chans[-1] + extra, chans[-1])
    for l in range(1, cfg.levels):
        conv(f"skip{l}", chans[l - 1] + extra, chans[l - 1])
    prev = chans[-1]
    for l in range(cfg.levels - 1, 0, -1):
        conv(f"dec{l}", prev + chans[l - 1], chans[l - 1])
        prev = chans[l - 1]
    conv("dec0", prev, prev)

    head_channels = [chans[-1]] + [chans[l - 1] for l in range(cfg.levels - 1, 0, -1)] + [prev]
    for s, (hc, layout) in enumerate(zip(head_channels, cfg.heads)):
        conv(f"head{s}.xi", hc, 1)
        conv(f"head{s}.conf", hc, 1)
        if layout == HEAD_FULL:
            conv(f"head{s}.norm", hc, 3)
    return shapes


@dataclass
class ModelParams:
    config: NetConfig
    tensors: dict[str, np.ndarray]


def build(cfg: NetConfig, dtype=np.float32) -> ModelParams:
    """Seed-deterministic He-normal kernels, zero biases."""
    shapes = parameter_shapes(cfg)
    rng = np.random.default_rng(cfg.seed)
    tensors = {}
    for name in sorted(shapes):
        shape = shapes[name]
        if name.endswith(".b"):
            tensors[name] = np.zeros(shape, dtype=dtype)
        else:
            fan_in = shape[0] * shape[1] * shape[2]
            tensors[name] = rng.normal(0.0, math.sqrt(2.0 / fan_in), size=shape).astype(dtype)
    return ModelParams(config=cfg, tensors=tensors)


def count_parameters(params: ModelParams) -> int:
    return sum(t.size for t in params.tensors.values())


def make_param_nodes(params: ModelParams) -> dict[str, Node]:
    return {name: ad.parameter(arr) for name, arr in params.tensors.items()}


def scale_sizes(cfg: NetConfig, h: int, w: int) -> list[tuple[int, int]]:
    """(h, w) of each prediction scale, coarsest first."""
    sizes = [(h >> cfg.levels, w >> cfg.levels)]
    for l in range(cfg.levels - 1, 0, -1):
        sizes.append((h >> l, w >> l))
    sizes.append((h, w))
    return sizes


def _check_input(cfg: NetConfig, rgb: np.ndarray, cam: CameraIntrinsics) -> None:
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError(f"rgb must be (h, w, 3), got {rgb.shape}")
    if rgb.shape[:2] != (cam.h, cam.w):
        raise ValueError(f"rgb {rgb.shape[:2]} does not match camera {(cam.h, cam.w)}")
    div = 1 << cfg.levels
    if cam.h % div or cam.w % div or cam.h < 2 * div or cam.w < 2 * div:
        raise ValueError(f"sensor {cam.w}x{cam.h} unsupported: needs multiples of {div}")


def forward_graph(cfg: NetConfig, nodes: dict[str, Node], rgb: np.ndarray,
                  cam: CameraIntrinsics) -> list[dict[str, Node]]:
    """Differentiable forward pass; per-scale prediction dicts, coarsest first."""
    _check_input(cfg, rgb, cam)
    dtype = nodes["enc1.w"].value.dtype
    x = ad.constant(np.ascontiguousarray(rgb, dtype=dtype))

    def conv_block(inp, name, stride=1):
        out = ad.bias_add(ad.conv2d(inp, nodes[f"{name}.w"], stride=stride), nodes[f"{name}.b"])
        return ad.relu(out)

    feats = []
    for l in range(1, cfg.levels + 1):
        x = conv_block(x, f"enc{l}", stride=2)
        feats.append(x)

    def with_camera(feat, name):
        if cfg.use_camconvs:
            h, w, _ = feat.value.shape
            stack = make_stack(cam, h, w).as_array().astype(dtype)
            feat = ad.concat_channels(feat, ad.constant(stack))
        return conv_block(feat, name)

    def head(feat, scale):
        out = {
            "xi": ad.add_scalar(ad.softplus(ad.bias_add(
                ad.conv2d(feat, nodes[f"head{scale}.xi.w"]), nodes[f"head{scale}.xi.b"])), XI_FLOOR),
            "conf": ad.sigmoid(ad.bias_add(
                ad.conv2d(feat, nodes[f"head{scale}.conf.w"]), nodes[f"head{scale}.conf.b"])),
        }
        if cfg.heads[scale] == HEAD_FULL:
            out["normals"] = ad.l2_normalize_channels(ad.bias_add(
                ad.conv2d(feat, nodes[f"head{scale}.norm.w"]), nodes[f"head{scale}.norm.b"]))
        return out

    current = with_camera(feats[-1], "bott")
    outputs = [head(current, 0)]
    scale = 1
    for l in range(cfg.levels - 1, 0, -1):
        up = ad.upsample_bilinear_x2(current)
        skip = with_camera(feats[l - 1], f"skip{l}")
        current = conv_block(ad.concat_channels(up, skip), f"dec{l}")
        outputs.append(head(current, scale))
        scale += 1
    current = conv_block(ad.upsample_bilinear_x2(current), "dec0")
    outputs.append(head(current, scale))
    return outputs


def forward(params: ModelParams, rgb: np.ndarray, cam: CameraIntrinsics) -> list[dict[str, np.ndarray]]:
    """Inference-only forward pass returning plain arrays."""
    preds = forward_graph(params.config, make_param_nodes(params), rgb, cam)
    return [{k: v.value.copy() for k, v in scale.items()} for scale in preds]


def predict_depth(params: ModelParams, sample: Sample) -> DepthMap:
    """Metric depth at the finest scale."""
    cfg = params.config
    xi = forward(params, sample.rgb, sample.cam)[-1]["xi"][:, :, 0].astype(np.float64)
    mask = np.ones(xi.shape, dtype=bool)
    if cfg.use_focal_norm:
        inv = InverseDepthMap(values=xi, mask=mask, cam=sample.cam, focal_normalized_to=cfg.f_n)
        inv = denormalize_inverse_depth(inv)
    else:
        inv = InverseDepthMap(values=xi, mask=mask, cam=sample.cam)
    return to_depth(inv)


# ---------------------------------------------------------------- training targets

def downsample_valid(values: np.ndarray, mask: np.ndarray, out_h: int, out_w: int):
    """Bilinear downsample plus a target pixel validity mask.

    A target pixel is valid only when every source pixel contributing with
    nonzero weight is valid.
    """
    out = resample_bilinear(values, out_h, out_w, mode="endpoints")
    h, w = values.shape[:2]
    i0, i1, ax = line_support(line_positions(w, out_w, "endpoints"), w)
    j0, j1, ay = line_support(line_positions(h, out_h, "endpoints"), h)
    ok = np.ones((out_h, out_w), dtype=bool)
    for rows, wr in ((j0, 1.0 - ay), (j1, ay)):
        for cols, wc in ((i0, 1.0 - ax), (i1, ax)):
            weight = wr[:, None] * wc[None, :]
            ok &= (weight == 0.0) | mask[rows[:, None], cols[None, :]]
    return out, ok


@dataclass(frozen=True)
class ScaleTarget:
    xi: np.ndarray
    mask: np.ndarray
    normals: np.ndarray | None = None
    normal_mask: np.ndarray | None = None


def make_targets(sample: Sample, cfg: NetConfig) -> list[ScaleTarget]:
    """Per-scale supervision, coarsest first, in the network's output space."""
    inv = to_inverse(sample.depth)
    if cfg.use_focal_norm:
        inv = normalize_inverse_depth(inv, FocalNormalization(f_n=cfg.f_n))
    h, w = sample.depth.values.shape
    targets = []
    for scale, (sh, sw) in enumerate(scale_sizes(cfg, h, w)):
        xi_s, ok = downsample_valid(inv.values, sample.depth.mask, sh, sw)
        normals = normal_mask = None
        if cfg.heads[scale] == HEAD_FULL:
            depth_s, dok = downsample_valid(sample.depth.values, sample.depth.mask, sh, sw)
            cam_s = resize_intrinsics(sample.cam, sw / w, sh / h).cam
            nm = normals_from_depth(DepthMap(values=depth_s, mask=dok, cam=cam_s))
            normals, normal_mask = nm.values, nm.mask
        targets.append(ScaleTarget(xi=xi_s, mask=ok, normals=normals, normal_mask=normal_mask))
    return targets


def sample_loss(cfg: NetConfig, preds: list[dict[str, Node]], targets: list[ScaleTarget],
                weights: LossWeights,
                conf_targets: list[np.ndarray] | None = None) -> Node:
    """Weighted multi-scale loss for one sample's forward pass.

    Confidence targets are derived from the current prediction with no
    gradient flow; pass `conf_targets` to pin them (finite-difference checks
    must hold them fixed while parameters are perturbed).
    """
    components = []
    for scale, (pred, tgt) in enumerate(zip(preds, targets)):
        if not tgt.mask.any():
            continue
        if conf_targets is not None:
            conf_tgt = conf_targets[scale]
        else:
            conf_tgt = confidence_target(pred["xi"].value[:, :, 0], tgt.xi)
        kwargs = {}
        if "normals" in pred and tgt.normals is not None:
            kwargs = dict(pred_normals=pred["normals"], target_normals=tgt.normals,
                          normal_mask=tgt.normal_mask)
        components.append(scale_loss_terms(pred["xi"], pred["conf"], tgt.xi, tgt.mask,
                                           conf_tgt, **kwargs))
    if not components:
        raise ValueError("sample has no valid supervision at any scale")
    return total_loss(components, weights)


# ---------------------------------------------------------------- training loop

@dataclass(frozen=True)
class TrainConfig:
    dataset_roots: tuple[str, ...]
    iterations: int = 200
    batch_size: int = 2
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    augment: bool = False
    augment_scale: tuple[float, float] = (0.7, 1.3)
    augment_shift: float = 0.15

    def __post_init__(self):
        if self.learning_rate <= 0 or self.iterations < 1 or self.batch_size < 1:
            raise ValueError("learning rate, iterations and batch size must be positive")
        if not self.dataset_roots:
            raise ValueError("no datasets given")

    def to_dict(self) -> dict:
        return {
            "dataset_roots": list(self.dataset_roots),
            "iterations": self.iterations,
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "adam_eps": self.adam_eps,
            "weights": [self.weights.depth, self.weights.grad, self.weights.conf,
                        self.weights.normal],
            "seed": self.seed,
            "augment": self.augment,
            "augment_scale": list(self.augment_scale),
            "augment_shift": self.augment_shift,
        }

    @staticmethod
    def from_dict(obj: dict) -> "TrainConfig":
        lw = obj.get("weights")
        weights = LossWeights(*lw) if lw else LossWeights()
        return TrainConfig(
            dataset_roots=tuple(obj["dataset_roots"]),
            iterations=int(obj["iterations"]),
            batch_size=int(obj["batch_size"]),
            learning_rate=float(obj["learning_rate"]),
            beta1=float(obj.get("beta1", 0.9)),
            beta2=float(obj.get("beta2", 0.999)),
            adam_eps=float(obj.get("adam_eps", 1e-8)),
            weights=weights,
            seed=int(obj.get("seed", 0)),
            augment=bool(obj.get("augment", False)),
            augment_scale=tuple(obj.get("augment_scale", (0.7, 1.3))),
            augment_shift=float(obj.get("augment_shift", 0.15)),
        )


class AdamState:
    def __init__(self, tensors: dict[str, np.ndarray]):
        self.m = {k: np.zeros_like(v) for k, v in tensors.items()}
        self.v = {k: np.zeros_like(v) for k, v in tensors.items()}
        self.t = 0

    def step(self, nodes: dict[str, Node], cfg: TrainConfig) -> None:
        self.t += 1
        b1, b2 = cfg.beta1, cfg.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for name, node in nodes.items():
            g = node.grad
            self.m[name] = b1 * self.m[name] + (1.0 - b1) * g
            self.v[name] = b2 * self.v[name] + (1.0 - b2) * g * g
            update = cfg.learning_rate * (self.m[name] / c1) / (np.sqrt(self.v[name] / c2) + cfg.adam_eps)
            node.value = (node.value - update).astype(node.value.dtype, copy=False)


def train(train_cfg: TrainConfig, net_cfg: NetConfig,
          samples: list[Sample] | None = None) -> tuple[ModelParams, list[float]]:
    """Returns trained parameters and the per-step loss curve."""
    if samples is None:
        samples = [s for root in train_cfg.dataset_roots for s in load_dataset(root)]
    if not samples:
        raise ValueError("datasets are empty")
    by_size: dict[tuple[int, int], list[Sample]] = {}
    for s in samples:
        by_size.setdefault((s.cam.h, s.cam.w), []).append(s)
    sizes = sorted(by_size)

    params = build(net_cfg)
    nodes = make_param_nodes(params)
    adam = AdamState(params.tensors)
    rng = np.random.default_rng((train_cfg.seed, net_cfg.seed))
    target_cache: dict[int, list[ScaleTarget]] = {}
    curve = []
    for step in range(train_cfg.iterations):
        size = sizes[step % len(sizes)]
        pool = by_size[size]
        picks = rng.integers(0, len(pool), size=train_cfg.batch_size)
        batch_terms = None
        for pick in picks:
            sample = pool[int(pick)]
            if train_cfg.augment:
                window, factors = sample_augmentation(
                    rng, sample.cam, sample.cam.w, sample.cam.h,
                    scale_range=train_cfg.augment_scale, max_shift=train_cfg.augment_shift)
                sample = derive_view(sample, window, factors)
                targets = make_targets(sample, net_cfg)
            else:
                key = id(sample)
                targets = target_cache.get(key)
                if targets is None:
                    targets = make_targets(sample, net_cfg)
                    target_cache[key] = targets
            preds = forward_graph(net_cfg, nodes, sample.rgb, sample.cam)
            term = sample_loss(net_cfg, preds, targets, train_cfg.weights)
            batch_terms = term if batch_terms is None else ad.add(batch_terms, term)
        loss = ad.mul_scalar(batch_terms, 1.0 / train_cfg.batch_size)
        value = loss.value.item()
        if not np.isfinite(value):
            raise RuntimeError(f"training diverged at step {step}: loss={value}")
        ad.backward(loss)
        adam.step(nodes, train_cfg)
        curve.append(value)
    trained = {name: node.value.copy() for name, node in nodes.items()}
    return ModelParams(config=net_cfg, tensors=trained), curve


# ---------------------------------------------------------------- checkpoints

def save_model(path, params: ModelParams) -> None:
    fileio.save_checkpoint(path, params.tensors, params.config.to_dict())


def load_model(path) -> ModelParams:
    tensors, cfg = fileio.load_checkpoint(path)
    return ModelParams(config=NetConfig.from_dict(cfg), tensors=tensors)
