import numpy as np
import pytest

from pesfkd import nn
from pesfkd import tensor as T
from pesfkd.adapters import AdapterSpec, attach, is_adapter_param
from pesfkd.errors import DimensionError, SpecError
from pesfkd.harness.optim import sgd_step
from pesfkd.tensor import Tensor


def test_param_count_example():
    params, _ = nn.build(nn.ModelSpec(4, (8,), 3))
    assert nn.count_params(params) == 4 * 8 + 8 + 8 * 3 + 3 == 67
    assert nn.count_params(nn.ParameterSet()) == 0


def test_names_follow_layer_scheme():
    params, _ = nn.build(nn.ModelSpec(4, (8, 5), 3))
    assert params.names() == ["layer0.weight", "layer0.bias", "layer1.weight", "layer1.bias",
                              "layer2.weight", "layer2.bias"]
    assert params["layer1.weight"].shape == (8, 5)


def test_init_is_fan_in_uniform_and_deterministic():
    spec = nn.ModelSpec(4, (8,), 3, init_seed=11)
    a, _ = nn.build(spec)
    b, _ = nn.build(spec)
    for (na, ta), (nb, tb) in zip(a.items(), b.items()):
        assert na == nb
        assert ta.data.tobytes() == tb.data.tobytes()
    assert np.abs(a["layer0.weight"].data).max() <= 1 / np.sqrt(4)
    assert np.abs(a["layer1.weight"].data).max() <= 1 / np.sqrt(8)
    c, _ = nn.build(nn.ModelSpec(4, (8,), 3, init_seed=12))
    assert c["layer0.weight"].data.tobytes() != a["layer0.weight"].data.tobytes()


def test_teacher_much_larger_than_student():
    t, _ = nn.build(nn.ModelSpec(2, (256, 256), 10))
    s, _ = nn.build(nn.ModelSpec(2, (32,), 10))
    assert nn.count_params(t) > 10 * nn.count_params(s)


@pytest.mark.parametrize("kwargs", [dict(input_dim=0, hidden_dims=(4,), num_classes=3),
                                    dict(input_dim=2, hidden_dims=(0,), num_classes=3),
                                    dict(input_dim=2, hidden_dims=(4,), num_classes=1),
                                    dict(input_dim=2, hidden_dims=(4,), num_classes=3, activation="tanh")])
def test_bad_spec(kwargs):
    with pytest.raises(SpecError):
        nn.ModelSpec(**kwargs)


def test_zero_params_give_zero_logits():
    params, fwd = nn.build(nn.ModelSpec(3, (5, 4), 6))
    for _, t in params.items():
        t.data[:] = 0
    trace = fwd(params, Tensor(np.random.default_rng(0).standard_normal((7, 3))))
    np.testing.assert_array_equal(trace.logits.data, 0)
    assert trace.logits.shape == (7, 6)
    assert trace.penultimate.shape == (7, 4)
    assert len(trace.hidden) == 2


def test_width_mismatch():
    params, fwd = nn.build(nn.ModelSpec(3, (5,), 2))
    with pytest.raises(DimensionError):
        fwd(params, Tensor(np.ones((2, 4))))


def test_batch_independence():
    # A row's logits do not depend on the rest of the batch. BLAS may pick different
    # kernels for 1 vs 64 rows, so agreement is to rounding rather than bitwise.
    params, fwd = nn.build(nn.ModelSpec(2, (256, 256), 10, init_seed=3))
    x = np.random.default_rng(1).standard_normal((64, 2))
    full = fwd(params, Tensor(x)).logits.data
    for i in (0, 17, 63):
        single = fwd(params, Tensor(x[i:i + 1])).logits.data
        np.testing.assert_allclose(single[0], full[i], rtol=0, atol=1e-12)


@pytest.mark.parametrize("act", ["relu", "gelu"])
def test_forward_matches_straight_line_reimplementation(act):
    spec = nn.ModelSpec(3, (7, 5), 4, act, init_seed=5)
    params, fwd = nn.build(spec)
    x = np.random.default_rng(2).standard_normal((9, 3))

    def f(v):
        if act == "relu":
            return np.maximum(v, 0)
        return 0.5 * v * (1 + np.tanh(np.sqrt(2 / np.pi) * (v + 0.044715 * v**3)))

    W = [params[f"layer{i}.weight"].data for i in range(3)]
    b = [params[f"layer{i}.bias"].data for i in range(3)]
    h = f(x @ W[0] + b[0])
    h = f(h @ W[1] + b[1])
    z = h @ W[2] + b[2]
    np.testing.assert_allclose(fwd(params, Tensor(x)).logits.data, z, rtol=1e-12, atol=1e-12)


def _loss(params, fwd, x):
    return T.tsum(T.mul(fwd(params, x).logits, fwd(params, x).logits))


def test_freeze_all_then_step_changes_nothing():
    params, fwd = nn.build(nn.ModelSpec(3, (5,), 2))
    x = Tensor(np.ones((4, 3)))
    before = params.snapshot()
    nn.set_frozen(params, lambda n: True)
    _loss(params, fwd, x).backward()
    sgd_step(params, lr=0.1, momentum=0.9, weight_decay=0.1)
    for name, arr in before.items():
        assert params[name].data.tobytes() == arr.tobytes()
        assert params[name].grad is None
    assert nn.count_params(params, only_trainable=True) == 0


def test_freeze_none_all_trainable():
    params, _ = nn.build(nn.ModelSpec(3, (5,), 2))
    nn.set_frozen(params, lambda n: False)
    assert nn.count_params(params, only_trainable=True) == nn.count_params(params)


def test_freeze_non_adapter_counts_adapter_params():
    params, fwd = nn.build(nn.ModelSpec(3, (64,), 2))
    backbone = nn.count_params(params)
    attach(params, fwd, AdapterSpec(bottleneck=8), seed=0)
    nn.set_frozen(params, lambda n: not is_adapter_param(n))
    assert nn.count_params(params, only_trainable=True) == 2 * 64 * 8
    assert nn.count_params(params) == backbone + 1024
    assert nn.count_params(params.subset(lambda n: not is_adapter_param(n))) == backbone


def test_parameter_set_contract():
    ps = nn.ParameterSet()
    ps.add("b", Tensor([1.0]))
    ps.add("a", Tensor([2.0]), frozen=True)
    assert ps.names() == ["b", "a"]
    assert ps.is_frozen("a") and not ps.is_frozen("b")
    with pytest.raises(SpecError):
        ps.add("a", Tensor([0.0]))
    merged = nn.ParameterSet.union(t=ps)
    assert merged.names() == ["t.b", "t.a"]
    assert merged["t.b"] is ps["b"]
