import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pesfkd import losses as L
from pesfkd import tensor as T
from pesfkd.errors import DimensionError, ParameterError
from pesfkd.gradcheck import grad_check
from pesfkd.nn import ParameterSet
from pesfkd.tensor import Tensor

from helpers import GRAD_TOL, KD_WEIGHTS, kd_fixture


def test_tempered_softmax_examples():
    np.testing.assert_allclose(L.tempered_softmax(Tensor([[0.0, 0.0, 0.0]]), 3.0).probs.data, [[1 / 3] * 3])
    e = np.e / (np.e + 1)
    np.testing.assert_allclose(L.tempered_softmax(Tensor([[1.0, 0.0]]), 1.0).probs.data, [[e, 1 - e]], atol=1e-12)
    np.testing.assert_allclose(L.tempered_softmax(Tensor([[2.0, 0.0]]), 2.0).probs.data, [[e, 1 - e]], atol=1e-12)
    assert round(e, 4) == 0.7311


@pytest.mark.parametrize("tau", [0.0, -1.0])
def test_tempered_softmax_bad_tau(tau):
    with pytest.raises(ParameterError):
        L.tempered_softmax(Tensor([[1.0, 0.0]]), tau)


@pytest.mark.parametrize("precision,tol", [("f32", 1e-6), ("f64", 1e-12)])
def test_softmax_rows_sum_to_one(precision, tol):
    z = np.random.default_rng(0).uniform(-50, 50, (200, 7))
    with T.precision(precision):
        p = L.tempered_softmax(Tensor(z), 1.0).probs.data
    assert np.all(p >= 0)
    assert np.max(np.abs(p.sum(axis=1) - 1)) < tol


def test_temperature_monotonic_smoothness():
    z = Tensor([[3.0, 1.0, -0.5, 0.2]])
    peaks = [L.tempered_softmax(z, tau).probs.data.max() for tau in (0.5, 1, 2, 4, 8, 16)]
    assert all(a > b for a, b in zip(peaks, peaks[1:]))


def test_cross_entropy_examples():
    assert L.cross_entropy(Tensor([[1.0, 0.0]]), Tensor([[1.0, 0.0]])).item() <= 1e-11
    assert L.cross_entropy(Tensor([[1.0, 0.0]]), Tensor([[0.5, 0.5]])).item() == pytest.approx(np.log(2), abs=1e-12)
    p = L.tempered_softmax(Tensor(np.zeros((4, 3))), 1.0)
    assert L.cross_entropy(L.one_hot([0, 1, 2, 2], 3), p).item() == pytest.approx(np.log(3), abs=1e-12)


def test_cross_entropy_floor_keeps_finite():
    value = L.cross_entropy(Tensor([[0.0, 1.0]]), Tensor([[1.0, 0.0]])).item()
    assert value == pytest.approx(-np.log(1e-12))
    saturated = L.tempered_softmax(Tensor([[1000.0, -1000.0]]), 1.0)
    assert np.isfinite(L.cross_entropy(Tensor([[0.0, 1.0]]), saturated).item())


def test_cross_entropy_is_batch_mean():
    y = L.one_hot([0, 1], 2)
    p = Tensor([[0.5, 0.5], [0.9, 0.1]])
    assert L.cross_entropy(y, p).item() == pytest.approx((np.log(2) - np.log(0.1)) / 2)


def test_cross_entropy_rejects_bad_targets():
    with pytest.raises(ParameterError):
        L.cross_entropy(Tensor([[0.5, 0.2]]), Tensor([[0.5, 0.5]]))
    with pytest.raises(DimensionError):
        L.cross_entropy(Tensor([[1.0, 0.0]]), Tensor([[0.2, 0.3, 0.5]]))


def test_label_smooth_examples():
    y = L.one_hot([0, 2], 4)
    np.testing.assert_array_equal(L.label_smooth(y, 0.0).data, y.data)
    np.testing.assert_allclose(L.label_smooth(y, 1.0).data, 0.25)
    np.testing.assert_allclose(L.label_smooth(Tensor([[1.0, 0.0]]), 0.1).data, [[0.95, 0.05]])
    with pytest.raises(ParameterError):
        L.label_smooth(y, 1.5)


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 1), st.integers(2, 10), st.integers(0, 9))
def test_label_smooth_constant_difference(a, k, cls):
    cls %= k
    s = L.label_smooth(L.one_hot([cls], k), a).data[0]
    others = np.delete(s, cls)
    np.testing.assert_allclose(s[cls] - others, 1 - a, atol=1e-12)
    assert s.sum() == pytest.approx(1.0)


def test_kd_kl_examples():
    z = Tensor([[1.0, -2.0, 0.5]])
    assert L.kd_kl_loss(z, z, 3.0).item() == pytest.approx(0.0, abs=1e-12)
    value = L.kd_kl_loss(Tensor([[0.0, 0.0]]), Tensor([[2.0, 0.0]]), 2.0).item()
    p = np.e / (np.e + 1)
    oracle = 4 * (p * np.log(2 * p) + (1 - p) * np.log(2 * (1 - p)))
    assert value == pytest.approx(oracle, abs=1e-12)
    assert value == pytest.approx(0.4438, abs=1e-3)


def test_kd_kl_shape_mismatch():
    with pytest.raises(DimensionError):
        L.kd_kl_loss(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 4))), 1.0)


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, (3, 4), elements=st.floats(-20, 20)),
       arrays(np.float64, (3, 4), elements=st.floats(-20, 20)), st.floats(0.1, 10))
def test_kd_kl_nonnegative(zs, zt, tau):
    assert L.kd_kl_loss(Tensor(zs), Tensor(zt), tau).item() >= -1e-12


def test_kd_kl_zero_for_shifted_logits():
    z = np.random.default_rng(0).standard_normal((5, 4))
    assert L.kd_kl_loss(Tensor(z + 3.0), Tensor(z), 2.0).item() == pytest.approx(0.0, abs=1e-12)


def test_kd_kl_gradient_reaches_both_sides_unless_detached():
    zs = Tensor([[0.0, 1.0]], requires_grad=True)
    zt = Tensor([[2.0, 0.0]], requires_grad=True)
    L.kd_kl_loss(zs, zt, 2.0).backward()
    assert zs.grad is not None and zt.grad is not None
    zs2 = Tensor([[0.0, 1.0]], requires_grad=True)
    zt2 = Tensor([[2.0, 0.0]], requires_grad=True)
    L.kd_kl_loss(zs2, zt2, 2.0, detach_teacher=True).backward()
    assert zt2.grad is None


def test_student_loss_examples():
    zs, zt, y = Tensor([[0.0, 0.0]]), Tensor([[2.0, 0.0]]), Tensor([[1.0, 0.0]])
    ce = L.cross_entropy(y, L.tempered_softmax(zs, 1.0)).item()
    kl = L.kd_kl_loss(zs, zt, 2.0).item()
    assert L.student_loss(zs, zt, y, L.LossWeights(alpha=0.0), 2.0).item() == pytest.approx(ce)
    assert L.student_loss(zs, zt, y, L.LossWeights(alpha=1.0), 2.0).item() == pytest.approx(kl)
    combo = L.student_loss(zs, zt, y, L.LossWeights(alpha=0.9), 2.0).item()
    assert combo == pytest.approx(0.9 * kl + 0.1 * ce)
    assert combo == pytest.approx(0.4687, abs=1e-3)


def test_student_loss_smoothing_toggle():
    zs, zt, y = Tensor([[0.3, -0.2, 1.0]]), Tensor([[1.0, 0.0, 0.0]]), L.one_hot([2], 3)
    w = L.LossWeights(alpha=0.0, smoothing=0.2)
    expected = L.cross_entropy(L.label_smooth(y, 0.2), L.tempered_softmax(zs, 1.0)).item()
    assert L.student_loss(zs, zt, y, w, 4.0).item() == pytest.approx(expected)


def test_teacher_loss_examples():
    zt, zs, y = Tensor([[1.5, -0.5]]), Tensor([[0.2, 0.1]]), Tensor([[1.0, 0.0]])
    ce = L.cross_entropy(y, L.tempered_softmax(zt, 1.0)).item()
    assert L.teacher_loss(zt, zs, y, L.LossWeights(teacher_task_weight=1.0), 4.0, False).item() == pytest.approx(ce)
    assert L.teacher_loss(zt, zs, y, L.LossWeights(teacher_task_weight=0.0), 4.0, False).item() == 0.0
    w = L.LossWeights(alpha=0.9, teacher_task_weight=0.5)
    assert L.teacher_loss(zt, zt, y, w, 4.0, True).item() == pytest.approx(0.5 * ce, abs=1e-12)
    kl = L.kd_kl_loss(zs, zt, 4.0).item()
    assert L.teacher_loss(zt, zs, y, w, 4.0, True).item() == pytest.approx(0.5 * ce + 0.9 * kl)


def test_teacher_feedback_flows_into_teacher_only():
    zt = Tensor([[1.5, -0.5]], requires_grad=True)
    zs = Tensor([[0.2, 0.1]], requires_grad=True)
    L.teacher_loss(zt, zs, Tensor([[1.0, 0.0]]), KD_WEIGHTS, 4.0, True).backward()
    assert zt.grad is not None and zs.grad is None


@pytest.mark.parametrize("field,value", [("alpha", -0.1), ("alpha", 1.1), ("teacher_task_weight", -1),
                                         ("smoothing", 2.0)])
def test_loss_weights_ranges(field, value):
    with pytest.raises(ParameterError):
        L.LossWeights(**{field: value})


@pytest.mark.parametrize("which", ["ce", "smoothed_ce", "kd", "student", "teacher_fb", "teacher_nofb"])
def test_loss_gradients_match_finite_differences(which):
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        params = ParameterSet()
        params.add("zs", Tensor(rng.standard_normal((6, 5)) * 2))
        params.add("zt", Tensor(rng.standard_normal((6, 5)) * 2))
        y = L.one_hot(rng.integers(0, 5, 6), 5)
        fns = {
            "ce": lambda p: L.cross_entropy(y, L.tempered_softmax(p["zs"], 1.0)),
            "smoothed_ce": lambda p: L.cross_entropy(L.label_smooth(y, 0.1), L.tempered_softmax(p["zs"], 2.0)),
            "kd": lambda p: L.kd_kl_loss(p["zs"], p["zt"], 4.0),
            "student": lambda p: L.student_loss(p["zs"], p["zt"], y, KD_WEIGHTS, 4.0, detach_teacher=False),
            "teacher_fb": lambda p: L.teacher_loss(p["zt"], p["zs"], y, KD_WEIGHTS, 4.0, True,
                                                   detach_student=False),
            "teacher_nofb": lambda p: L.teacher_loss(p["zt"], p["zs"], y, KD_WEIGHTS, 4.0, False),
        }
        worst = max(worst, grad_check(fns[which], params))
    assert worst < GRAD_TOL


def test_full_student_loss_grad_check_three_layer_network():
    fx = kd_fixture(3)
    assert grad_check(lambda p: fx.student_loss(), fx.s_params) < GRAD_TOL
