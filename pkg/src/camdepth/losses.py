"""Training losses and evaluation metrics.

All losses exist twice: a differentiable form consuming autodiff Nodes for the
prediction (targets and masks are plain arrays) and a `*_np` form in plain
numpy for oracle testing. Sums run over valid pixels only.

The spaced gradient operator divides the h-spaced difference by the magnitude
of the h-spaced sum, which makes it invariant to positive rescaling of its
input. The denominator is floored at EPS_SIG for division safety; the floor
leaves the operator literally unchanged wherever |sum| >= EPS_SIG, so the
scale invariance is exact for well-scaled inputs.

Per-scale aggregation contract: every loss here returns a raw sum over valid
pixels; `scale_loss_terms` converts the sums to means (dividing by the scale's
valid-pixel count) and `total_loss` combines scales with equal weight.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, fields

import numpy as np

from . import autodiff as ad
from .autodiff import Node
from .depthmap import DepthMap

EPS_SIG = 1e-6
SPACINGS = (1, 2, 4, 8, 16)


@dataclass(frozen=True)
class LossWeights:
    depth: float = 150.0
    grad: float = 100.0
    conf: float = 50.0
    normal: float = 25.0

    def __post_init__(self):
        if min(self.depth, self.grad, self.conf, self.normal) < 0:
            raise ValueError("loss weights must be non-negative")


def _plane(arr: np.ndarray) -> np.ndarray:
    """Accept (h, w) or (h, w, 1), return (h, w) float64."""
    arr = np.asarray(arr)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    if arr.ndim != 2:
        raise ValueError(f"expected a single-channel map, got shape {arr.shape}")
    return arr


def _check_mask(mask: np.ndarray, shape: tuple[int, int], allow_empty: bool = False) -> np.ndarray:
    mask = np.asarray(mask)
    if mask.shape != shape or mask.dtype != bool:
        raise ValueError(f"mask must be bool of shape {shape}, got {mask.dtype} {mask.shape}")
    if not allow_empty and not mask.any():
        raise ValueError("empty valid mask")
    return mask


def _weight_node(mask: np.ndarray, dtype) -> Node:
    return ad.constant(mask.astype(dtype)[:, :, None])


# ---------------------------------------------------------------- depth data terms

def depth_loss(pred: Node, target: np.ndarray, mask: np.ndarray) -> Node:
    target = _plane(target)
    mask = _check_mask(mask, target.shape)
    # masked target pixels may hold junk; zero them so 0-weighted terms stay finite
    target = np.where(mask, target, 0.0)
    t = ad.constant(target[:, :, None].astype(pred.value.dtype))
    w = _weight_node(mask, pred.value.dtype)
    return ad.sum_all(ad.mul(ad.absval(ad.sub(pred, t)), w))


def depth_loss_np(pred: np.ndarray, target: np.ndarray, mask: np.ndarray) -> float:
    pred, target = _plane(pred), _plane(target)
    mask = _check_mask(mask, target.shape)
    return float(np.abs(pred - target)[mask].sum())


# ---------------------------------------------------------------- spaced gradients

def sig_operator(values: np.ndarray, spacing: int, mask: np.ndarray,
                 eps: float = EPS_SIG) -> tuple[np.ndarray, np.ndarray]:
    """Scale-invariant spaced gradient of a map.

    Returns (grid, valid): grid is (h, w, 2) with channel 0 the column-spaced
    component (d(i+h) - d(i)) / max(|d(i+h) + d(i)|, eps) and channel 1 the
    row-spaced one; valid marks pixels whose h-neighbor exists and is valid.
    """
    values = _plane(values)
    h_img, w_img = values.shape
    mask = _check_mask(mask, values.shape, allow_empty=True)
    grid = np.zeros((h_img, w_img, 2))
    valid = np.zeros((h_img, w_img, 2), dtype=bool)
    if spacing < 1:
        raise ValueError(f"spacing must be >= 1, got {spacing}")
    if spacing < w_img:
        a, b = values[:, :-spacing], values[:, spacing:]
        grid[:, :-spacing, 0] = (b - a) / np.maximum(np.abs(a + b), eps)
        valid[:, :-spacing, 0] = mask[:, :-spacing] & mask[:, spacing:]
    if spacing < h_img:
        a, b = values[:-spacing, :], values[spacing:, :]
        grid[:-spacing, :, 1] = (b - a) / np.maximum(np.abs(a + b), eps)
        valid[:-spacing, :, 1] = mask[:-spacing, :] & mask[spacing:, :]
    return grid, valid


def _gradient_loss_graph(pred: Node, target: np.ndarray, mask: np.ndarray,
                         spacings: tuple[int, ...], eps: float) -> Node:
    target = _plane(target)
    h_img, w_img = target.shape
    dtype = pred.value.dtype
    target = np.where(mask, target, 1.0)
    t = ad.constant(target[:, :, None].astype(dtype))
    total = None
    any_pairs = False
    for s in spacings:
        if s >= w_img or s >= h_img:
            continue
        joint = (mask[:-s, :-s] & mask[:-s, s:] & mask[s:, :-s])
        if not joint.any():
            continue
        any_pairs = True

        def spaced(node):
            ax = ad.crop(node, 0, h_img, 0, w_img - s)
            bx = ad.crop(node, 0, h_img, s, w_img)
            gx = ad.div(ad.sub(bx, ax), ad.abs_floor(ad.add(ax, bx), eps))
            ay = ad.crop(node, 0, h_img - s, 0, w_img)
            by = ad.crop(node, s, h_img, 0, w_img)
            gy = ad.div(ad.sub(by, ay), ad.abs_floor(ad.add(ay, by), eps))
            return (ad.crop(gx, 0, h_img - s, 0, w_img - s),
                    ad.crop(gy, 0, h_img - s, 0, w_img - s))

        pgx, pgy = spaced(pred)
        tgx, tgy = spaced(t)
        dx = ad.sub(pgx, tgx)
        dy = ad.sub(pgy, tgy)
        norm = ad.sqrt(ad.add(ad.square(dx), ad.square(dy)))
        term = ad.sum_all(ad.mul(norm, _weight_node(joint, dtype)))
        total = term if total is None else ad.add(total, term)
    if not any_pairs:
        raise ValueError("no valid pixel pairs at any spacing")
    return total


def gradient_loss(pred: Node, target: np.ndarray, mask: np.ndarray,
                  spacings: tuple[int, ...] = SPACINGS, eps: float = EPS_SIG) -> Node:
    mask = _check_mask(mask, _plane(target).shape, allow_empty=True)
    return _gradient_loss_graph(pred, target, mask, spacings, eps)


def gradient_loss_np(pred: np.ndarray, target: np.ndarray, mask: np.ndarray,
                     spacings: tuple[int, ...] = SPACINGS, eps: float = EPS_SIG) -> float:
    pred, target = _plane(pred), _plane(target)
    mask = _check_mask(mask, target.shape, allow_empty=True)
    h_img, w_img = target.shape
    total = 0.0
    any_pairs = False
    for s in spacings:
        if s >= w_img or s >= h_img:
            continue
        joint = (mask[:-s, :-s] & mask[:-s, s:] & mask[s:, :-s])
        if not joint.any():
            continue
        any_pairs = True
        pg, _ = sig_operator(pred, s, mask, eps)
        tg, _ = sig_operator(target, s, mask, eps)
        diff = (pg - tg)[:-s, :-s]
        norm = np.sqrt(diff[:, :, 0] ** 2 + diff[:, :, 1] ** 2)
        total += float(norm[joint].sum())
    if not any_pairs:
        raise ValueError("no valid pixel pairs at any spacing")
    return total


# ---------------------------------------------------------------- confidence

def confidence_loss(pred: Node, target: np.ndarray, mask: np.ndarray) -> Node:
    return depth_loss(pred, target, mask)


def confidence_loss_np(pred: np.ndarray, target: np.ndarray, mask: np.ndarray) -> float:
    return depth_loss_np(pred, target, mask)


# ---------------------------------------------------------------- normals

def normal_loss(pred: Node, target: np.ndarray, mask: np.ndarray) -> Node:
    target = np.asarray(target)
    if target.ndim != 3 or target.shape[2] != 3:
        raise ValueError(f"normals must be (h, w, 3), got {target.shape}")
    mask = _check_mask(mask, target.shape[:2])
    target = np.where(mask[:, :, None], target, 0.0)
    t = ad.constant(target.astype(pred.value.dtype))
    diff = ad.sub(pred, t)
    norm = ad.sqrt(ad.sum_channels(ad.square(diff)))
    return ad.sum_all(ad.mul(norm, _weight_node(mask, pred.value.dtype)))


def normal_loss_np(pred: np.ndarray, target: np.ndarray, mask: np.ndarray) -> float:
    mask = _check_mask(mask, target.shape[:2])
    norm = np.linalg.norm(pred - target, axis=2)
    return float(norm[mask].sum())


# ---------------------------------------------------------------- Eigen variance loss

def _log_safe_node(node: Node, mask: np.ndarray) -> Node:
    # substitute 1.0 outside the mask so log never sees junk; gradient there is
    # killed by the mask weight anyway
    if np.any(node.value[:, :, 0][mask] <= 0):
        raise ValueError("values must be strictly positive inside the mask")
    dtype = node.value.dtype
    w = _weight_node(mask, dtype)
    fill = ad.constant((~mask).astype(dtype)[:, :, None])
    return ad.log(ad.add(ad.mul(node, w), fill))


def eigen_scale_invariant_loss(pred: Node, target: np.ndarray, mask: np.ndarray) -> Node:
    """Variance of the log ratio: mean(z^2) - (mean z)^2, z = log pred - log gt."""
    target = _plane(target)
    mask = _check_mask(mask, target.shape)
    if np.any(target[mask] <= 0):
        raise ValueError("target must be strictly positive inside the mask")
    dtype = pred.value.dtype
    n = float(mask.sum())
    w = _weight_node(mask, dtype)
    safe_t = np.where(mask, target, 1.0)
    z = ad.sub(_log_safe_node(pred, mask), ad.constant(np.log(safe_t)[:, :, None].astype(dtype)))
    z = ad.mul(z, w)
    mean_sq = ad.mul_scalar(ad.sum_all(ad.square(z)), 1.0 / n)
    mean = ad.mul_scalar(ad.sum_all(z), 1.0 / n)
    return ad.sub(mean_sq, ad.square(mean))


def eigen_scale_invariant_loss_np(pred: np.ndarray, target: np.ndarray, mask: np.ndarray) -> float:
    pred, target = _plane(pred), _plane(target)
    mask = _check_mask(mask, target.shape)
    if np.any(pred[mask] <= 0) or np.any(target[mask] <= 0):
        raise ValueError("values must be strictly positive inside the mask")
    z = np.log(pred[mask]) - np.log(target[mask])
    return float(np.mean(z * z) - np.mean(z) ** 2)


# ---------------------------------------------------------------- totals

COMPONENT_KEYS = ("depth", "grad", "conf", "normal")


def total_loss(scale_components, weights: LossWeights) -> Node:
    """Equal-weight sum over scales of the weighted component sum.

    scale_components: sequence of dicts with keys among COMPONENT_KEYS mapping
    to scalar Nodes (normal may be absent or None on fine scales).
    """
    if not scale_components:
        raise ValueError("need at least one scale")
    lam = {"depth": weights.depth, "grad": weights.grad, "conf": weights.conf, "normal": weights.normal}
    total = None
    for comp in scale_components:
        for key in comp:
            if key not in COMPONENT_KEYS:
                raise ValueError(f"unknown loss component {key!r}")
        for key in COMPONENT_KEYS:
            node = comp.get(key)
            if node is None:
                continue
            term = ad.mul_scalar(node, lam[key])
            total = term if total is None else ad.add(total, term)
    if total is None:
        raise ValueError("no loss components supplied")
    return total


def scale_loss_terms(pred_xi: Node, pred_conf: Node, target_xi: np.ndarray, mask: np.ndarray,
                     conf_target: np.ndarray, pred_normals: Node | None = None,
                     target_normals: np.ndarray | None = None,
                     normal_mask: np.ndarray | None = None) -> dict[str, Node]:
    """Mean-normalized loss components for one prediction scale."""
    mask = _check_mask(mask, _plane(target_xi).shape)
    inv_n = 1.0 / float(mask.sum())
    comp = {
        "depth": ad.mul_scalar(depth_loss(pred_xi, target_xi, mask), inv_n),
        "grad": ad.mul_scalar(gradient_loss(pred_xi, target_xi, mask), inv_n),
        "conf": ad.mul_scalar(confidence_loss(pred_conf, conf_target, mask), inv_n),
    }
    if pred_normals is not None:
        if target_normals is None or normal_mask is None:
            raise ValueError("normal supervision needs both a target and a mask")
        if normal_mask.any():
            comp["normal"] = ad.mul_scalar(
                normal_loss(pred_normals, target_normals, normal_mask),
                1.0 / float(normal_mask.sum()),
            )
    return comp


# ---------------------------------------------------------------- metrics

@dataclass(frozen=True)
class MetricReport:
    abs_rel: float
    sq_rel: float
    rmse: float
    rmse_inv: float
    l1_inv: float
    sc_inv: float
    delta1: float
    delta2: float
    delta3: float
    n_valid: int

    def __post_init__(self):
        if not (self.delta1 <= self.delta2 <= self.delta3):
            raise ValueError("delta metrics must be monotone")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


METRIC_FIELDS = tuple(f.name for f in fields(MetricReport))


def evaluate(d_pred: DepthMap, d_gt: DepthMap) -> MetricReport:
    """All evaluation metrics over the intersection of the two validity masks."""
    if d_pred.values.shape != d_gt.values.shape:
        raise ValueError(f"shape mismatch {d_pred.values.shape} vs {d_gt.values.shape}")
    joint = d_pred.mask & d_gt.mask
    if not joint.any():
        raise ValueError("no jointly valid pixels to evaluate")
    d = d_pred.values[joint].astype(np.float64)
    g = d_gt.values[joint].astype(np.float64)
    if np.any(d <= 0) or np.any(g <= 0):
        raise ValueError("depths must be strictly positive inside the joint mask")
    diff = d - g
    z = np.log(d) - np.log(g)
    ratio = np.maximum(d / g, g / d)
    var_z = float(np.mean(z * z) - np.mean(z) ** 2)
    return MetricReport(
        abs_rel=float(np.mean(np.abs(diff) / g)),
        sq_rel=float(np.mean(diff * diff / g)),
        rmse=float(np.sqrt(np.mean(diff * diff))),
        rmse_inv=float(np.sqrt(np.mean((1.0 / d - 1.0 / g) ** 2))),
        l1_inv=float(np.mean(np.abs(1.0 / d - 1.0 / g))),
        sc_inv=float(np.sqrt(max(var_z, 0.0))),
        delta1=float(np.mean(ratio < 1.25)),
        delta2=float(np.mean(ratio < 1.25 ** 2)),
        delta3=float(np.mean(ratio < 1.25 ** 3)),
        n_valid=int(joint.sum()),
    )


def aggregate_metrics(reports) -> dict[str, dict[str, float]]:
    """Mean and median of each metric over a list of per-image reports."""
    if not reports:
        raise ValueError("nothing to aggregate")
    table = {name: np.array([getattr(r, name) for r in reports], dtype=np.float64)
             for name in METRIC_FIELDS}
    return {
        "mean": {name: float(np.mean(col)) for name, col in table.items()},
        "median": {name: float(np.median(col)) for name, col in table.items()},
    }


def write_csv(path, header: list[str], rows: list[list]) -> None:
    """RFC-4180 CSV (CRLF line endings, minimal quoting)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\r\n")
        writer.writerow(header)
        writer.writerows(rows)
