"""Finite-difference verification of every differentiable building block.

Each named check builds a scalar graph in float64, runs the reverse pass,
and compares against central differences. Inputs are sampled with a safety
margin around every non-smooth point (relu and absolute-value kinks,
division and log floors); central differences are only valid when the
perturbation cannot cross one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .camera import CameraIntrinsics
from .losses import (
    LossWeights,
    confidence_loss,
    depth_loss,
    eigen_scale_invariant_loss,
    gradient_loss,
    normal_loss,
    scale_loss_terms,
    total_loss,
)
from .network import NetConfig, build, forward_graph, make_targets, sample_loss
from .synth import generate_scene, render, sample_pose

THRESHOLD = 1e-4
STEP = 1e-5
# check-point margin from the nearest kink, in multiples of the fd step
KINK_CLEARANCE = 10.0


@dataclass(frozen=True)
class CheckResult:
    name: str
    max_rel_err: float
    threshold: float = THRESHOLD

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.threshold


def check_scalar_graph(fn, arrays, step: float = STEP) -> float:
    """Max relative error between reverse-mode and central differences.

    fn maps a list of Nodes to a scalar Node; arrays are the float64 inputs.
    """
    arrays = [np.asarray(a, dtype=np.float64) for a in arrays]
    nodes = [ad.parameter(a.copy()) for a in arrays]
    ad.backward(fn(nodes))

    def value(arrs):
        return fn([ad.constant(a) for a in arrs]).value.item()

    numeric = ad.finite_difference_grad(value, [a.copy() for a in arrays], step=step)
    return max(ad.max_rel_error(n.grad, g) for n, g in zip(nodes, numeric))


def _rng(tag: str) -> np.random.Generator:
    return np.random.default_rng(abs(hash(tag)) % (2**32))


def _signed(rng, shape, lo=0.2, hi=1.5):
    # magnitudes bounded away from zero so |.|-style kinks stay clear
    mag = rng.uniform(lo, hi, size=shape)
    return mag * np.where(rng.random(shape) < 0.5, -1.0, 1.0)


def _weight(rng, shape):
    return ad.constant(rng.normal(size=shape))


def _pull(node: ad.Node, rng) -> ad.Node:
    # random cotangent; sum-of-ones would miss sign errors that cancel
    return ad.sum_all(ad.mul(node, _weight(rng, node.value.shape)))


CHECKS: dict[str, callable] = {}


def register(name: str):
    def deco(fn):
        CHECKS[name] = fn
        return fn

    return deco


# ------------------------------------------------------------ primitives


@register("add")
def _check_add():
    rng = _rng("add")
    a, b = rng.normal(size=(4, 5, 2)), rng.normal(size=(4, 5, 2))
    return check_scalar_graph(lambda n: _pull(ad.add(n[0], n[1]), _rng("add.w")), [a, b])


@register("sub")
def _check_sub():
    rng = _rng("sub")
    a, b = rng.normal(size=(4, 5, 2)), rng.normal(size=(4, 5, 2))
    return check_scalar_graph(lambda n: _pull(ad.sub(n[0], n[1]), _rng("sub.w")), [a, b])


@register("mul")
def _check_mul():
    rng = _rng("mul")
    a, b = rng.normal(size=(4, 5, 2)), rng.normal(size=(4, 5, 2))
    return check_scalar_graph(lambda n: _pull(ad.mul(n[0], n[1]), _rng("mul.w")), [a, b])


@register("div")
def _check_div():
    rng = _rng("div")
    a = rng.normal(size=(4, 5, 2))
    b = _signed(rng, (4, 5, 2), lo=0.5, hi=2.0)
    return check_scalar_graph(lambda n: _pull(ad.div(n[0], n[1]), _rng("div.w")), [a, b])


@register("add_scalar")
def _check_add_scalar():
    a = _rng("adds").normal(size=(3, 4, 2))
    return check_scalar_graph(lambda n: _pull(ad.add_scalar(n[0], 0.37), _rng("adds.w")), [a])


@register("mul_scalar")
def _check_mul_scalar():
    a = _rng("muls").normal(size=(3, 4, 2))
    return check_scalar_graph(lambda n: _pull(ad.mul_scalar(n[0], -1.7), _rng("muls.w")), [a])


@register("relu")
def _check_relu():
    a = _signed(_rng("relu"), (5, 6, 3))
    return check_scalar_graph(lambda n: _pull(ad.relu(n[0]), _rng("relu.w")), [a])


@register("sigmoid")
def _check_sigmoid():
    a = _rng("sigm").normal(size=(5, 6, 2)) * 2.0
    return check_scalar_graph(lambda n: _pull(ad.sigmoid(n[0]), _rng("sigm.w")), [a])


@register("softplus")
def _check_softplus():
    a = _rng("soft").normal(size=(5, 6, 2)) * 3.0
    return check_scalar_graph(lambda n: _pull(ad.softplus(n[0]), _rng("soft.w")), [a])


@register("exp")
def _check_exp():
    a = _rng("exp").normal(size=(4, 4, 2))
    return check_scalar_graph(lambda n: _pull(ad.exp(n[0]), _rng("exp.w")), [a])


@register("log")
def _check_log():
    a = _rng("log").uniform(0.2, 3.0, size=(4, 4, 2))
    return check_scalar_graph(lambda n: _pull(ad.log(n[0]), _rng("log.w")), [a])


@register("sqrt")
def _check_sqrt():
    a = _rng("sqrt").uniform(0.2, 3.0, size=(4, 4, 2))
    return check_scalar_graph(lambda n: _pull(ad.sqrt(n[0]), _rng("sqrt.w")), [a])


@register("absval")
def _check_absval():
    a = _signed(_rng("abs"), (5, 5, 2))
    return check_scalar_graph(lambda n: _pull(ad.absval(n[0]), _rng("abs.w")), [a])


@register("square")
def _check_square():
    a = _rng("sq").normal(size=(5, 5, 2))
    return check_scalar_graph(lambda n: _pull(ad.square(n[0]), _rng("sq.w")), [a])


@register("abs_floor_above")
def _check_abs_floor_above():
    a = _signed(_rng("afa"), (5, 5, 2), lo=0.6, hi=1.5)
    return check_scalar_graph(lambda n: _pull(ad.abs_floor(n[0], 0.5), _rng("afa.w")), [a])


@register("abs_floor_below")
def _check_abs_floor_below():
    # inside the floor both gradients are identically zero
    a = _signed(_rng("afb"), (5, 5, 2), lo=0.05, hi=0.3)
    return check_scalar_graph(lambda n: _pull(ad.abs_floor(n[0], 0.5), _rng("afb.w")), [a])


@register("concat_channels")
def _check_concat():
    rng = _rng("cat")
    arrs = [rng.normal(size=(4, 5, c)) for c in (1, 2, 3)]
    return check_scalar_graph(
        lambda n: _pull(ad.concat_channels(*n), _rng("cat.w")), arrs
    )


@register("slice_channels")
def _check_slice():
    a = _rng("slice").normal(size=(4, 5, 6))
    return check_scalar_graph(
        lambda n: _pull(ad.slice_channels(n[0], 1, 4), _rng("slice.w")), [a]
    )


@register("crop")
def _check_crop():
    a = _rng("crop").normal(size=(6, 7, 2))
    return check_scalar_graph(
        lambda n: _pull(ad.crop(n[0], 1, 5, 2, 7), _rng("crop.w")), [a]
    )


@register("sum_channels")
def _check_sum_channels():
    a = _rng("sumc").normal(size=(4, 5, 3))
    return check_scalar_graph(
        lambda n: _pull(ad.sum_channels(n[0]), _rng("sumc.w")), [a]
    )


@register("sum_all")
def _check_sum_all():
    a = _rng("suma").normal(size=(4, 5, 3))
    return check_scalar_graph(lambda n: ad.sum_all(ad.square(n[0])), [a])


@register("l2_normalize_channels")
def _check_l2norm():
    rng = _rng("l2n")
    a = rng.normal(size=(4, 5, 3))
    a += np.where(a >= 0, 0.5, -0.5)  # per-pixel norm >= 0.5, clear of the 0 kink
    return check_scalar_graph(
        lambda n: _pull(ad.l2_normalize_channels(n[0]), _rng("l2n.w")), [a]
    )


@register("conv2d_same")
def _check_conv_same():
    rng = _rng("conv1")
    x = rng.normal(size=(6, 7, 3))
    k = rng.normal(size=(3, 3, 3, 2)) * 0.5
    return check_scalar_graph(
        lambda n: _pull(ad.conv2d(n[0], n[1], stride=1, padding="same"), _rng("conv1.w")),
        [x, k],
    )


@register("conv2d_stride2")
def _check_conv_stride2():
    rng = _rng("conv2")
    x = rng.normal(size=(8, 6, 2))
    k = rng.normal(size=(3, 3, 2, 3)) * 0.5
    return check_scalar_graph(
        lambda n: _pull(ad.conv2d(n[0], n[1], stride=2, padding="same"), _rng("conv2.w")),
        [x, k],
    )


@register("conv2d_valid")
def _check_conv_valid():
    rng = _rng("conv3")
    x = rng.normal(size=(6, 6, 2))
    k = rng.normal(size=(3, 3, 2, 2)) * 0.5
    return check_scalar_graph(
        lambda n: _pull(ad.conv2d(n[0], n[1], stride=1, padding="valid"), _rng("conv3.w")),
        [x, k],
    )


@register("bias_add")
def _check_bias_add():
    rng = _rng("bias")
    x = rng.normal(size=(5, 6, 3))
    b = rng.normal(size=(1, 1, 3))
    return check_scalar_graph(
        lambda n: _pull(ad.bias_add(n[0], n[1]), _rng("bias.w")), [x, b]
    )


@register("upsample_bilinear_x2")
def _check_upsample():
    x = _rng("ups").normal(size=(4, 5, 2))
    return check_scalar_graph(
        lambda n: _pull(ad.upsample_bilinear_x2(n[0]), _rng("ups.w")), [x]
    )


# ------------------------------------------------------------ losses


def _loss_case(tag: str, h: int, w: int):
    """Prediction, target, mask with every pointwise kink cleared by >= 0.1."""
    rng = _rng(tag)
    target = rng.uniform(0.5, 2.0, size=(h, w))
    offset = rng.uniform(0.2, 0.6, size=(h, w))
    pred = target + offset * np.where(rng.random((h, w)) < 0.5, -1.0, 1.0)
    pred = np.maximum(pred, 0.1)
    mask = rng.random((h, w)) < 0.85
    mask.flat[0] = True
    return pred[:, :, None], target, mask


@register("loss_depth")
def _check_loss_depth():
    pred, target, mask = _loss_case("ld", 6, 7)
    return check_scalar_graph(lambda n: depth_loss(n[0], target, mask), [pred])


@register("loss_gradient")
def _check_loss_gradient():
    # large enough that every spacing in {1,2,4,8,16} has pairs
    pred, target, mask = _loss_case("lg", 20, 22)
    return check_scalar_graph(lambda n: gradient_loss(n[0], target, mask), [pred])


@register("loss_confidence")
def _check_loss_confidence():
    rng = _rng("lc")
    target = rng.uniform(0.1, 0.9, size=(6, 7))
    pred = np.clip(target + _signed(rng, (6, 7), lo=0.05, hi=0.09), 0.01, 0.99)
    mask = rng.random((6, 7)) < 0.9
    mask.flat[0] = True
    return check_scalar_graph(
        lambda n: confidence_loss(n[0], target, mask), [pred[:, :, None]]
    )


@register("loss_normal")
def _check_loss_normal():
    rng = _rng("ln")
    target = rng.normal(size=(5, 6, 3))
    pred = target + _signed(rng, (5, 6, 3), lo=0.1, hi=0.4)
    mask = rng.random((5, 6)) < 0.9
    mask.flat[0] = True
    return check_scalar_graph(lambda n: normal_loss(n[0], target, mask), [pred])


@register("loss_eigen")
def _check_loss_eigen():
    pred, target, mask = _loss_case("le", 6, 7)
    return check_scalar_graph(
        lambda n: eigen_scale_invariant_loss(n[0], target, mask), [pred]
    )


@register("loss_composite")
def _check_loss_composite():
    rng = _rng("lt")
    weights = LossWeights()
    cases = [_loss_case("lt0", 18, 20), _loss_case("lt1", 9, 10)]
    conf_t = [rng.uniform(0.1, 0.9, size=c[1].shape) for c in cases]
    conf_p = [
        np.clip(t + _signed(rng, t.shape, lo=0.05, hi=0.09), 0.01, 0.99)[:, :, None]
        for t in conf_t
    ]
    nrm_t = rng.normal(size=(18, 20, 3))
    nrm_p = nrm_t + _signed(rng, nrm_t.shape, lo=0.1, hi=0.3)
    nrm_mask = rng.random((18, 20)) < 0.9
    nrm_mask.flat[0] = True

    def graph(nodes):
        terms = []
        for i, (pred, target, mask) in enumerate(cases):
            kw = {}
            if i == 0:
                kw = dict(pred_normals=nodes[4], target_normals=nrm_t, normal_mask=nrm_mask)
            terms.append(
                scale_loss_terms(nodes[2 * i], nodes[2 * i + 1], target, mask, conf_t[i], **kw)
            )
        return total_loss(terms, weights)

    arrays = [cases[0][0], conf_p[0], cases[1][0], conf_p[1], nrm_p]
    return check_scalar_graph(graph, arrays)


# ------------------------------------------------------------ full network


def _full_graph_setup(step: float):
    cfg = NetConfig(
        levels=2, base_channels=2, use_camconvs=True, use_focal_norm=True, seed=3
    )
    cam = CameraIntrinsics(f=20.0, cx=8.0, cy=8.0, w=16, h=16)
    scene = generate_scene(0)
    pose = sample_pose(scene, np.random.default_rng(0))
    sample = render(scene, cam, pose)
    params = build(cfg, dtype=np.float64)
    targets = make_targets(sample, cfg)
    names = sorted(params.tensors)
    nodes = {n: ad.parameter(params.tensors[n].copy()) for n in names}

    # record every relu input: fd is only trustworthy when no perturbed
    # pre-activation can cross zero
    relu_margins: list[float] = []
    plain_relu = ad.relu

    def spying_relu(a):
        relu_margins.append(float(np.min(np.abs(a.value))))
        return plain_relu(a)

    ad.relu = spying_relu
    try:
        preds = forward_graph(cfg, nodes, sample.rgb, sample.cam)
    finally:
        ad.relu = plain_relu

    conf_targets = [
        np.exp(-np.abs(p["xi"].value[:, :, 0] - t.xi)) for p, t in zip(preds, targets)
    ]
    guard = KINK_CLEARANCE * step
    margins = {"relu": min(relu_margins)}
    margins["l1"] = min(
        float(np.min(np.abs(p["xi"].value[:, :, 0] - t.xi)[t.mask]))
        for p, t in zip(preds, targets)
        if t.mask.any()
    )
    margins["conf"] = min(
        float(np.min(np.abs(p["conf"].value[:, :, 0] - ct)[t.mask]))
        for p, ct, t in zip(preds, conf_targets, targets)
        if t.mask.any()
    )
    for i, t in enumerate(targets):
        if t.normals is None or "normals" not in preds[i] or not t.normal_mask.any():
            continue
        diff = preds[i]["normals"].value - t.normals
        norms = np.sqrt((diff * diff).sum(axis=2))
        margins["normal"] = min(
            margins.get("normal", np.inf), float(np.min(norms[t.normal_mask]))
        )
    bad = {k: v for k, v in margins.items() if v < guard}
    if bad:
        raise RuntimeError(
            f"check point sits within {guard:g} of a kink ({bad}); "
            "pick a different init seed"
        )
    return cfg, sample, params, targets, names, nodes, preds, conf_targets


@register("network_full_graph")
def full_network_check(step: float = STEP) -> float:
    """End-to-end fd check of the total training loss on a tiny network."""
    cfg, sample, params, targets, names, nodes, preds, conf_targets = _full_graph_setup(step)
    weights = LossWeights()
    ad.backward(sample_loss(cfg, preds, targets, weights, conf_targets=conf_targets))

    def loss_value(arrays):
        consts = {n: ad.constant(a) for n, a in zip(names, arrays)}
        p = forward_graph(cfg, consts, sample.rgb, sample.cam)
        return sample_loss(cfg, p, targets, weights, conf_targets=conf_targets).value.item()

    numeric = ad.finite_difference_grad(
        loss_value, [params.tensors[n].copy() for n in names], step=step
    )
    return max(ad.max_rel_error(nodes[n].grad, g) for n, g in zip(names, numeric))


FAST_CHECKS = tuple(n for n in CHECKS if n != "network_full_graph")


def run_checks(names=None, threshold: float = THRESHOLD) -> list[CheckResult]:
    if names is None:
        names = tuple(CHECKS)
    unknown = [n for n in names if n not in CHECKS]
    if unknown:
        raise ValueError(f"unknown checks: {unknown}")
    return [CheckResult(n, float(CHECKS[n]()), threshold) for n in names]


def run_all(full: bool = True, threshold: float = THRESHOLD) -> list[CheckResult]:
    names = tuple(CHECKS) if full else FAST_CHECKS
    return run_checks(names, threshold)
