"""Loss and metric tests against scalar-loop oracles and frozen examples."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import camdepth.autodiff as ad
from camdepth.depthmap import DepthMap, confidence_target
from camdepth.losses import (
    EPS_SIG,
    SPACINGS,
    LossWeights,
    MetricReport,
    aggregate_metrics,
    confidence_loss,
    confidence_loss_np,
    depth_loss,
    depth_loss_np,
    eigen_scale_invariant_loss,
    eigen_scale_invariant_loss_np,
    evaluate,
    gradient_loss,
    gradient_loss_np,
    normal_loss,
    normal_loss_np,
    scale_loss_terms,
    sig_operator,
    total_loss,
    write_csv,
)

# ------------------------------------------------------------ scalar oracles


def oracle_l1(pred, target, mask):
    total = 0.0
    for j in range(pred.shape[0]):
        for i in range(pred.shape[1]):
            if mask[j, i]:
                total += abs(float(pred[j, i]) - float(target[j, i]))
    return total


def oracle_quotient(a, b, eps):
    return (b - a) / max(abs(a + b), eps)


def oracle_gradient_loss(pred, target, mask, spacings, eps):
    h_img, w_img = pred.shape
    total = 0.0
    found = False
    for s in spacings:
        if s >= h_img or s >= w_img:
            continue
        for j in range(h_img - s):
            for i in range(w_img - s):
                if not (mask[j, i] and mask[j, i + s] and mask[j + s, i]):
                    continue
                found = True
                dx = oracle_quotient(pred[j, i], pred[j, i + s], eps) - oracle_quotient(
                    target[j, i], target[j, i + s], eps)
                dy = oracle_quotient(pred[j, i], pred[j + s, i], eps) - oracle_quotient(
                    target[j, i], target[j + s, i], eps)
                total += math.sqrt(dx * dx + dy * dy)
    if not found:
        raise ValueError("no pairs")
    return total


def oracle_normal_loss(pred, target, mask):
    total = 0.0
    for j in range(pred.shape[0]):
        for i in range(pred.shape[1]):
            if mask[j, i]:
                total += math.sqrt(sum((float(pred[j, i, c]) - float(target[j, i, c])) ** 2
                                       for c in range(3)))
    return total


def oracle_eigen(pred, target, mask):
    zs = [math.log(float(pred[j, i])) - math.log(float(target[j, i]))
          for j in range(pred.shape[0]) for i in range(pred.shape[1]) if mask[j, i]]
    mean = sum(zs) / len(zs)
    mean_sq = sum(z * z for z in zs) / len(zs)
    return mean_sq - mean * mean


def oracle_metrics(pred, gt, mask):
    abs_rel = sq_rel = se = se_inv = l1_inv = 0.0
    zs = []
    hits = [0, 0, 0]
    n = 0
    for j in range(pred.shape[0]):
        for i in range(pred.shape[1]):
            if not mask[j, i]:
                continue
            d, g = float(pred[j, i]), float(gt[j, i])
            n += 1
            abs_rel += abs(d - g) / g
            sq_rel += (d - g) ** 2 / g
            se += (d - g) ** 2
            se_inv += (1 / d - 1 / g) ** 2
            l1_inv += abs(1 / d - 1 / g)
            zs.append(math.log(d) - math.log(g))
            ratio = max(d / g, g / d)
            for k in range(3):
                if ratio < 1.25 ** (k + 1):
                    hits[k] += 1
    mean_z = sum(zs) / n
    var = sum(z * z for z in zs) / n - mean_z ** 2
    return dict(abs_rel=abs_rel / n, sq_rel=sq_rel / n, rmse=math.sqrt(se / n),
                rmse_inv=math.sqrt(se_inv / n), l1_inv=l1_inv / n,
                sc_inv=math.sqrt(max(var, 0.0)), delta1=hits[0] / n,
                delta2=hits[1] / n, delta3=hits[2] / n, n_valid=n)


def random_case(seed, h=8, w=8, lo=0.5, hi=2.5, frac_valid=0.8):
    rng = np.random.default_rng(seed)
    pred = rng.uniform(lo, hi, size=(h, w))
    target = rng.uniform(lo, hi, size=(h, w))
    mask = rng.uniform(size=(h, w)) < frac_valid
    mask[h // 2, w // 2] = True  # never empty
    return pred, target, mask


def as_node(arr):
    return ad.parameter(arr[:, :, None].copy() if arr.ndim == 2 else arr.copy())


def fd_check(build, arrays, tol=1e-4):
    nodes = [ad.parameter(a.copy()) for a in arrays]
    ad.backward(build(nodes))
    numeric = ad.finite_difference_grad(
        lambda arrs: build([ad.constant(a) for a in arrs]).value.item(), [a.copy() for a in arrays]
    )
    for node, num in zip(nodes, numeric):
        err = ad.max_rel_error(node.grad, num)
        assert err < tol, f"gradient mismatch: {err}"


# ------------------------------------------------------------ depth loss


def test_depth_loss_zero_when_equal():
    pred, _, mask = random_case(0)
    assert depth_loss_np(pred, pred, mask) == 0.0
    assert depth_loss(as_node(pred), pred, mask).value.item() == 0.0


def test_depth_loss_single_pixel():
    mask = np.ones((1, 1), dtype=bool)
    assert depth_loss_np(np.array([[0.5]]), np.array([[0.3]]), mask) == pytest.approx(0.2)


def test_depth_loss_matches_oracle():
    pred, target, mask = random_case(1)
    want = oracle_l1(pred, target, mask)
    assert depth_loss_np(pred, target, mask) == pytest.approx(want, rel=1e-12)
    assert depth_loss(as_node(pred), target, mask).value.item() == pytest.approx(want, rel=1e-12)


def test_depth_loss_ignores_junk_outside_mask():
    pred, target, mask = random_case(2)
    target = target.copy()
    target[~mask] = np.nan
    got = depth_loss(as_node(pred), target, mask).value.item()
    assert np.isfinite(got)
    assert got == pytest.approx(oracle_l1(pred, np.where(mask, target, 0.0), mask), rel=1e-12)


def test_depth_loss_empty_mask_raises():
    pred, target, _ = random_case(3)
    with pytest.raises(ValueError):
        depth_loss_np(pred, target, np.zeros_like(pred, dtype=bool))
    with pytest.raises(ValueError):
        depth_loss(as_node(pred), target, np.zeros_like(pred, dtype=bool))


def test_depth_loss_gradient():
    rng = np.random.default_rng(4)
    target = rng.uniform(0.5, 2.5, size=(6, 7))
    # keep |pred - target| bounded away from the kink so FD is clean
    pred = target + rng.choice([-1.0, 1.0], size=target.shape) * rng.uniform(0.2, 1.0, target.shape)
    mask = rng.uniform(size=target.shape) < 0.8
    mask[3, 3] = True
    fd_check(lambda ns: depth_loss(ns[0], target, mask), [pred[:, :, None]])


# ------------------------------------------------------------ spaced gradient operator


def test_sig_operator_constant_is_zero():
    mask = np.ones((5, 6), dtype=bool)
    for s in (1, 2, 4):
        grid, valid = sig_operator(np.full((5, 6), 3.7), s, mask)
        assert np.all(grid == 0.0)
        assert valid[: 5 - s if s < 5 else 0, : 6 - s if s < 6 else 0].all()


def test_sig_operator_example():
    # column-step component: (3 - 1) / |3 + 1| = 0.5
    for s in (1, 2):
        values = np.ones((3, 4))
        values[0, s] = 3.0
        grid, valid = sig_operator(values, s, np.ones((3, 4), dtype=bool))
        assert grid[0, 0, 0] == 0.5
        assert valid[0, 0, 0] and valid[0, 0, 1]


def test_sig_operator_row_component():
    values = np.ones((4, 3))
    values[2, 0] = 3.0
    grid, _ = sig_operator(values, 2, np.ones((4, 3), dtype=bool))
    assert grid[0, 0, 1] == 0.5


def test_sig_operator_bounds_and_mask():
    values = np.ones((4, 5))
    mask = np.ones((4, 5), dtype=bool)
    mask[1, 3] = False
    grid, valid = sig_operator(values, 2, values > 0)
    assert valid[:, 3:, 0].sum() == 0 and valid[2:, :, 1].sum() == 0
    _, valid = sig_operator(values, 2, mask)
    assert not valid[1, 1, 0]  # right neighbor invalid
    assert not valid[1, 3, 0] and not valid[1, 3, 1]  # pixel itself invalid
    _, valid = sig_operator(values, 7, mask)
    assert not valid.any()


def test_sig_operator_scale_invariance_exact_for_pow2():
    pred, _, mask = random_case(5)
    base, _ = sig_operator(pred, 2, mask)
    for k in (2.0, 0.5):
        scaled, _ = sig_operator(k * pred, 2, mask)
        assert np.array_equal(scaled, base)


@given(st.floats(min_value=0.01, max_value=100.0))
@settings(max_examples=30, deadline=None)
def test_sig_operator_scale_invariance_general(k):
    pred, _, mask = random_case(6, h=5, w=5)
    base, _ = sig_operator(pred, 1, mask)
    scaled, _ = sig_operator(k * pred, 1, mask)
    assert np.max(np.abs(scaled - base)) < 1e-9


# ------------------------------------------------------------ gradient loss


def test_gradient_loss_zero_when_equal_or_scaled():
    pred, _, mask = random_case(7, h=10, w=10)
    assert gradient_loss_np(pred, pred, mask) == 0.0
    assert gradient_loss_np(2.0 * pred, pred, mask) == 0.0
    assert gradient_loss_np(0.5 * pred, pred, mask) == 0.0
    assert gradient_loss_np(10.0 * pred, pred, mask) < 1e-9
    assert gradient_loss(as_node(2.0 * pred), pred, mask).value.item() == 0.0


def test_gradient_loss_matches_oracle():
    pred, target, mask = random_case(8, h=20, w=20)
    want = oracle_gradient_loss(pred, target, mask, SPACINGS, EPS_SIG)
    assert gradient_loss_np(pred, target, mask) == pytest.approx(want, rel=1e-12)
    got = gradient_loss(as_node(pred), target, mask).value.item()
    assert got == pytest.approx(want, rel=1e-12)


def test_gradient_loss_small_image_uses_fitting_spacings_only():
    pred, target, mask = random_case(9, h=3, w=3)
    mask[:] = True
    want = oracle_gradient_loss(pred, target, mask, (1, 2), EPS_SIG)
    assert gradient_loss_np(pred, target, mask) == pytest.approx(want, rel=1e-12)


def test_gradient_loss_no_pairs_raises():
    pred, target, _ = random_case(10, h=4, w=4)
    mask = np.zeros((4, 4), dtype=bool)
    mask[1, 1] = True  # a lone pixel pairs with nothing
    with pytest.raises(ValueError):
        gradient_loss_np(pred, target, mask)
    with pytest.raises(ValueError):
        gradient_loss(as_node(pred), target, mask)
    one = np.ones((1, 1))
    with pytest.raises(ValueError):
        gradient_loss_np(one, one, np.ones((1, 1), dtype=bool))


def test_gradient_loss_gradient():
    rng = np.random.default_rng(11)
    pred = rng.uniform(0.5, 2.5, size=(7, 7))
    target = rng.uniform(0.5, 2.5, size=(7, 7))
    mask = rng.uniform(size=(7, 7)) < 0.85
    mask[2, 2] = mask[2, 3] = mask[3, 2] = True
    fd_check(lambda ns: gradient_loss(ns[0], target, mask), [pred[:, :, None]])


# ------------------------------------------------------------ confidence loss


def test_confidence_loss_examples():
    mask = np.ones((1, 1), dtype=bool)
    assert confidence_loss_np(np.array([[0.9]]), np.array([[0.5]]), mask) == pytest.approx(0.4)
    pred, target, mask = random_case(12)
    assert confidence_loss_np(pred, pred, mask) == 0.0
    want = oracle_l1(pred, target, mask)
    assert confidence_loss(as_node(pred), target, mask).value.item() == pytest.approx(want, rel=1e-12)


def test_confidence_target_pairs_with_loss():
    pred, gt, mask = random_case(13)
    tgt = confidence_target(pred, gt)
    assert confidence_loss_np(tgt, tgt, mask) == 0.0
    assert np.all(tgt <= 1.0) and np.all(tgt > 0.0)


# ------------------------------------------------------------ normal loss


def test_normal_loss_zero_and_opposite():
    n = np.zeros((2, 2, 3))
    n[:, :, 2] = -1.0
    mask = np.ones((2, 2), dtype=bool)
    assert normal_loss_np(n, n, mask) == 0.0
    flipped = n.copy()
    flipped[0, 0, 2] = 1.0
    only = np.zeros((2, 2), dtype=bool)
    only[0, 0] = True
    assert normal_loss_np(flipped, n, only) == 2.0
    assert normal_loss(as_node(flipped.copy()), n, only).value.item() == 2.0


def test_normal_loss_matches_oracle():
    rng = np.random.default_rng(14)
    pred = rng.normal(size=(6, 5, 3))
    target = rng.normal(size=(6, 5, 3))
    target /= np.linalg.norm(target, axis=2, keepdims=True)
    mask = rng.uniform(size=(6, 5)) < 0.8
    mask[0, 0] = True
    want = oracle_normal_loss(pred, target, mask)
    assert normal_loss_np(pred, target, mask) == pytest.approx(want, rel=1e-12)
    assert normal_loss(as_node(pred), target, mask).value.item() == pytest.approx(want, rel=1e-12)


def test_normal_loss_shape_check():
    with pytest.raises(ValueError):
        normal_loss_np(np.zeros((2, 2)), np.zeros((2, 2, 3)), np.ones((2, 2), dtype=bool))


def test_normal_loss_gradient():
    rng = np.random.default_rng(15)
    pred = rng.normal(size=(5, 4, 3))
    target = rng.normal(size=(5, 4, 3))
    target /= np.linalg.norm(target, axis=2, keepdims=True)
    mask = rng.uniform(size=(5, 4)) < 0.8
    mask[1, 1] = True
    fd_check(lambda ns: normal_loss(ns[0], target, mask), [pred])


# ------------------------------------------------------------ Eigen loss


def test_eigen_loss_zero_for_equal_and_scaled():
    pred, _, mask = random_case(16)
    assert eigen_scale_invariant_loss_np(pred, pred, mask) == 0.0
    assert abs(eigen_scale_invariant_loss_np(3.0 * pred, pred, mask)) < 1e-12
    node = eigen_scale_invariant_loss(as_node(3.0 * pred), pred, mask)
    assert abs(node.value.item()) < 1e-12


def test_eigen_loss_matches_oracle():
    pred, target, mask = random_case(17)
    want = oracle_eigen(pred, target, mask)
    assert eigen_scale_invariant_loss_np(pred, target, mask) == pytest.approx(want, rel=1e-10)
    got = eigen_scale_invariant_loss(as_node(pred), target, mask).value.item()
    assert got == pytest.approx(want, rel=1e-10)


def test_eigen_loss_rejects_nonpositive():
    pred, target, mask = random_case(18)
    bad = pred.copy()
    bad[tuple(np.argwhere(mask)[0])] = -1.0
    with pytest.raises(ValueError):
        eigen_scale_invariant_loss_np(bad, target, mask)
    with pytest.raises(ValueError):
        eigen_scale_invariant_loss(as_node(bad), target, mask)


def test_eigen_loss_gradient():
    pred, target, mask = random_case(19, h=6, w=6)
    fd_check(lambda ns: eigen_scale_invariant_loss(ns[0], target, mask), [pred[:, :, None]])


# ------------------------------------------------------------ totals


def scalar_node(value):
    pred = np.array([[value + 1.0]])
    return depth_loss(as_node(pred), np.array([[1.0]]), np.ones((1, 1), dtype=bool))


def test_loss_weights_defaults_and_validation():
    w = LossWeights()
    assert (w.depth, w.grad, w.conf, w.normal) == (150.0, 100.0, 50.0, 25.0)
    with pytest.raises(ValueError):
        LossWeights(depth=-1.0)


def test_total_loss_examples():
    zero = scalar_node(0.0)
    assert total_loss([{"depth": zero, "grad": zero, "conf": zero}], LossWeights()).value.item() == 0.0
    one = scalar_node(1.0)
    assert total_loss([{"depth": one}], LossWeights()).value.item() == 150.0
    single = {"depth": one, "grad": scalar_node(0.25), "conf": scalar_node(2.0)}
    once = total_loss([single], LossWeights()).value.item()
    twice = total_loss([single, dict(single)], LossWeights()).value.item()
    assert twice == 2.0 * once
    assert once == pytest.approx(150.0 + 100.0 * 0.25 + 50.0 * 2.0, rel=1e-12)


def test_total_loss_normal_component_and_errors():
    one = scalar_node(1.0)
    got = total_loss([{"normal": one}], LossWeights()).value.item()
    assert got == 25.0
    with pytest.raises(ValueError):
        total_loss([], LossWeights())
    with pytest.raises(ValueError):
        total_loss([{"bogus": one}], LossWeights())
    with pytest.raises(ValueError):
        total_loss([{"depth": None}], LossWeights())


def composite_setup(seed):
    rng = np.random.default_rng(seed)
    target = rng.uniform(0.5, 2.5, size=(6, 6))
    pred = target + rng.choice([-1.0, 1.0], size=target.shape) * rng.uniform(0.2, 0.8, target.shape)
    conf_pred = rng.uniform(0.1, 0.9, size=(6, 6))
    conf_tgt = confidence_target(pred + rng.normal(scale=0.05, size=pred.shape), target)
    normals = rng.normal(size=(6, 6, 3))
    normal_tgt = rng.normal(size=(6, 6, 3))
    normal_tgt /= np.linalg.norm(normal_tgt, axis=2, keepdims=True)
    mask = rng.uniform(size=(6, 6)) < 0.85
    mask[2, 2] = mask[2, 3] = mask[3, 2] = True
    return pred, target, conf_pred, conf_tgt, normals, normal_tgt, mask


def test_scale_loss_terms_are_means():
    pred, target, conf_pred, conf_tgt, normals, normal_tgt, mask = composite_setup(20)
    comp = scale_loss_terms(as_node(pred), as_node(conf_pred), target, mask, conf_tgt,
                            as_node(normals), normal_tgt, mask)
    n = float(mask.sum())
    assert comp["depth"].value.item() == pytest.approx(depth_loss_np(pred, target, mask) / n, rel=1e-12)
    assert comp["grad"].value.item() == pytest.approx(gradient_loss_np(pred, target, mask) / n, rel=1e-12)
    assert comp["conf"].value.item() == pytest.approx(confidence_loss_np(conf_pred, conf_tgt, mask) / n, rel=1e-12)
    assert comp["normal"].value.item() == pytest.approx(normal_loss_np(normals, normal_tgt, mask) / n, rel=1e-12)


def test_scale_loss_terms_without_normals():
    pred, target, conf_pred, conf_tgt, _, _, mask = composite_setup(21)
    comp = scale_loss_terms(as_node(pred), as_node(conf_pred), target, mask, conf_tgt)
    assert set(comp) == {"depth", "grad", "conf"}


def test_total_loss_gradient_through_all_components():
    pred, target, conf_pred, conf_tgt, normals, normal_tgt, mask = composite_setup(22)

    def build(nodes):
        comp = scale_loss_terms(nodes[0], nodes[1], target, mask, conf_tgt,
                                nodes[2], normal_tgt, mask)
        return total_loss([comp], LossWeights())

    fd_check(build, [pred[:, :, None], conf_pred[:, :, None], normals])


# ------------------------------------------------------------ metrics


def depth_pair(seed, h=16, w=16):
    rng = np.random.default_rng(seed)
    gt = rng.uniform(0.5, 8.0, size=(h, w))
    pred = gt * rng.uniform(0.7, 1.4, size=(h, w))
    mask_p = rng.uniform(size=(h, w)) < 0.9
    mask_g = rng.uniform(size=(h, w)) < 0.9
    mask_p[0, 0] = mask_g[0, 0] = True
    return pred, gt, mask_p, mask_g


def _mk(values, mask):
    from camdepth.camera import CameraIntrinsics
    h, w = values.shape
    cam = CameraIntrinsics(f=50.0, cx=(w - 1) / 2, cy=(h - 1) / 2, w=w, h=h)
    return DepthMap(values=values, mask=mask, cam=cam)


def test_evaluate_perfect_prediction():
    pred, gt, mask_p, mask_g = depth_pair(23)
    rep = evaluate(_mk(gt.copy(), mask_p), _mk(gt, mask_g))
    assert rep.abs_rel == 0.0 and rep.sq_rel == 0.0 and rep.rmse == 0.0
    assert rep.rmse_inv == 0.0 and rep.l1_inv == 0.0 and rep.sc_inv == 0.0
    assert rep.delta1 == 1.0 and rep.delta2 == 1.0 and rep.delta3 == 1.0
    assert rep.n_valid == int((mask_p & mask_g).sum())


def test_evaluate_single_pixel_example():
    mask = np.ones((1, 1), dtype=bool)
    rep = evaluate(_mk(np.array([[1.2]]), mask), _mk(np.array([[1.0]]), mask))
    assert rep.abs_rel == pytest.approx(0.2, rel=1e-12)
    assert rep.delta1 == 1.0  # 1.2 < 1.25
    rep = evaluate(_mk(np.array([[1.3]]), mask), _mk(np.array([[1.0]]), mask))
    assert rep.delta1 == 0.0 and rep.delta2 == 1.0


def test_delta_threshold_is_strict():
    mask = np.ones((1, 1), dtype=bool)
    rep = evaluate(_mk(np.array([[1.25]]), mask), _mk(np.array([[1.0]]), mask))
    assert rep.delta1 == 0.0


def test_evaluate_matches_oracle():
    pred, gt, mask_p, mask_g = depth_pair(24)
    rep = evaluate(_mk(pred, mask_p), _mk(gt, mask_g))
    want = oracle_metrics(pred, gt, mask_p & mask_g)
    for name, val in want.items():
        assert getattr(rep, name) == pytest.approx(val, rel=1e-10), name


def test_evaluate_permutation_invariant():
    pred, gt, mask_p, mask_g = depth_pair(25)
    rep = evaluate(_mk(pred, mask_p), _mk(gt, mask_g))
    joint = mask_p & mask_g
    d, g = pred[joint], gt[joint]
    order = np.random.default_rng(0).permutation(d.size)
    n = d.size
    shuffled_pred = np.full((1, n), 1.0)
    shuffled_gt = np.full((1, n), 1.0)
    shuffled_pred[0] = d[order]
    shuffled_gt[0] = g[order]
    rep2 = evaluate(_mk(shuffled_pred, np.ones((1, n), dtype=bool)),
                    _mk(shuffled_gt, np.ones((1, n), dtype=bool)))
    for name in ("abs_rel", "sq_rel", "rmse", "rmse_inv", "l1_inv", "sc_inv",
                 "delta1", "delta2", "delta3"):
        assert getattr(rep2, name) == pytest.approx(getattr(rep, name), rel=1e-12), name


def test_evaluate_mask_monotone():
    pred, gt, mask_p, mask_g = depth_pair(26)
    joint = mask_p & mask_g
    smaller = joint.copy()
    first = tuple(np.argwhere(smaller)[0])
    smaller[first] = False
    rep = evaluate(_mk(pred, smaller), _mk(gt, smaller))
    want = oracle_metrics(pred, gt, smaller)
    for name, val in want.items():
        assert getattr(rep, name) == pytest.approx(val, rel=1e-10), name


def test_evaluate_sc_inv_scale_invariant():
    pred, gt, mask_p, mask_g = depth_pair(27)
    base = evaluate(_mk(pred, mask_p), _mk(gt, mask_g)).sc_inv
    scaled = evaluate(_mk(4.0 * pred, mask_p), _mk(gt, mask_g)).sc_inv
    assert scaled == pytest.approx(base, abs=1e-12)


def test_evaluate_errors():
    pred, gt, mask_p, mask_g = depth_pair(28)
    with pytest.raises(ValueError):
        evaluate(_mk(pred, np.zeros_like(mask_p)), _mk(gt, mask_g))
    with pytest.raises(ValueError):
        evaluate(_mk(pred[:8], mask_p[:8]), _mk(gt, mask_g))
    bad = pred.copy()
    bad[tuple(np.argwhere(mask_p & mask_g)[0])] = -0.5
    with pytest.raises(ValueError):
        evaluate(_mk(bad, mask_p), _mk(gt, mask_g))


def test_metric_report_validates_monotone_deltas():
    with pytest.raises(ValueError):
        MetricReport(abs_rel=0, sq_rel=0, rmse=0, rmse_inv=0, l1_inv=0, sc_inv=0,
                     delta1=0.9, delta2=0.5, delta3=1.0, n_valid=4)


def test_report_to_dict_roundtrip():
    pred, gt, mask_p, mask_g = depth_pair(29)
    rep = evaluate(_mk(pred, mask_p), _mk(gt, mask_g))
    d = rep.to_dict()
    assert MetricReport(**d) == rep
    assert list(d) == ["abs_rel", "sq_rel", "rmse", "rmse_inv", "l1_inv", "sc_inv",
                       "delta1", "delta2", "delta3", "n_valid"]


def test_aggregate_metrics():
    reports = [evaluate(_mk(p, m), _mk(g, mg))
               for p, g, m, mg in [depth_pair(s) for s in (30, 31, 32)]]
    agg = aggregate_metrics(reports)
    rmses = sorted(r.rmse for r in reports)
    assert agg["mean"]["rmse"] == pytest.approx(sum(rmses) / 3, rel=1e-12)
    assert agg["median"]["rmse"] == pytest.approx(rmses[1], rel=1e-12)
    with pytest.raises(ValueError):
        aggregate_metrics([])


def test_write_csv_bytes(tmp_path):
    path = tmp_path / "out.csv"
    write_csv(path, ["name", "rmse"], [["a", 1.5], ["b", 2]])
    assert path.read_bytes() == b"name,rmse\r\na,1.5\r\nb,2\r\n"
