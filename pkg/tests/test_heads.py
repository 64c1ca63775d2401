from math import isclose, log

import numpy as np
import pytest

from gbnet.gbutils import ConfigurationError, DimensionError, DomainError
from gbnet.grad_check import numerical_gradient
from gbnet.heads import (
    EXP_CLAMP,
    HEAD_PRESETS,
    HeadSpec,
    encode_target_batch,
    encode_targets,
    exp_clamp_count,
    gb_potential,
    head_delta,
    head_outputs,
    head_spec_from_dict,
    head_spec_from_name,
    loss_value,
    normalization_term,
    predict,
    softmax,
)
from gbnet.tensor_core import max_relative_error

EXP_GB = HeadSpec("exp_gb", alpha=0.1, target_pos=16.0, target_neg=0.0)
POW3_GB = HeadSpec("pow3_gb", alpha=0.001, beta=0.4, target_pos=10.0, target_neg=0.0)


def test_head_spec_defaults_and_validation():
    spec = HeadSpec("pow3_gb")
    assert (spec.alpha, spec.beta, spec.target_pos, spec.target_neg) == (0.001, 0.4, 10.0, 0.0)
    assert spec.is_gb
    assert not HeadSpec("tanh_mse").is_gb
    with pytest.raises(ConfigurationError):
        HeadSpec("hinge")
    with pytest.raises(ConfigurationError):
        HeadSpec("exp_gb", target_pos=0.0, target_neg=1.0)
    with pytest.raises(ConfigurationError):
        HeadSpec("exp_gb", alpha=0.0)
    with pytest.raises(ConfigurationError):
        HeadSpec("softmax_ce", target_pos=16.0)


def test_head_presets():
    assert head_spec_from_name("pow3_gb_cnn10").target_neg == -2.0
    assert head_spec_from_name("exp_gb_imagenet").alpha == 0.01
    assert head_spec_from_name("exp_gb_cnn10").target_pos == 6.0
    with pytest.raises(ConfigurationError):
        head_spec_from_name("exp")
    spec = head_spec_from_dict({"kind": "exp_gb", "alpha": 0.01})
    assert (spec.alpha, spec.target_pos) == (0.01, 16.0)
    spec = head_spec_from_dict({"kind": "pow3_gb_cnn10", "target_pos": 8.0})
    assert (spec.kind, spec.target_pos, spec.target_neg) == ("pow3_gb", 8.0, -2.0)
    with pytest.raises(ConfigurationError):
        head_spec_from_dict({"kind": "exp_gb", "gain": 2.0})


def test_encode_targets():
    spec = HeadSpec("pow3_gb", target_pos=10.0, target_neg=-2.0)
    assert np.array_equal(encode_targets(2, 4, spec).values, [-2.0, -2.0, 10.0, -2.0])
    assert np.array_equal(encode_targets(0, 3, HeadSpec("linear_mse")).values, [1.0, 0.0, 0.0])
    tv = encode_targets(1, 2, EXP_GB)
    assert np.array_equal(tv.values, [0.0, 16.0])
    assert tv.class_index == 1
    with pytest.raises(DomainError):
        encode_targets(4, 4, spec)
    batch = encode_target_batch(np.array([2, 0]), 4, spec)
    assert np.array_equal(batch[0], encode_targets(2, 4, spec).values)
    assert np.sum(batch == 10.0) == 2
    with pytest.raises(DomainError):
        encode_target_batch(np.array([0, 5]), 4, spec)


def test_softmax():
    assert np.allclose(softmax(np.array([0.0, 0.0])), [0.5, 0.5])
    assert np.allclose(softmax(np.array([log(2.0), 0.0])), [2.0 / 3.0, 1.0 / 3.0])
    big = softmax(np.array([1000.0, 0.0]))
    assert np.all(np.isfinite(big))
    assert isclose(big[0], 1.0)
    rng = np.random.default_rng(0)
    x = rng.standard_normal((5, 7)) * 3.0
    y = softmax(x)
    assert np.allclose(y.sum(axis=1), 1.0, rtol=0.0, atol=1e-12)
    assert np.allclose(softmax(x + 12.5), y, rtol=0.0, atol=1e-12)


def test_head_outputs():
    assert np.allclose(head_outputs(np.array([0.0]), EXP_GB), [0.1])
    assert np.allclose(head_outputs(np.array([10.0]), POW3_GB), [1.4])
    assert np.array_equal(head_outputs(np.array([3.0, -1.0]), HeadSpec("linear_mse")), [3.0, -1.0])
    assert np.allclose(head_outputs(np.array([0.0]), HeadSpec("sigmoid_mse")), [0.5])
    mirror = HeadSpec("mirror_exp_gb")
    y = head_outputs(np.array([-1.0, 1.0]), mirror)
    assert np.allclose(y, [-0.1, 0.1])


def test_head_delta_examples():
    d = head_delta(np.array([0.0, 0.0]), encode_targets(0, 2, HEAD_PRESETS["softmax_ce"]), HEAD_PRESETS["softmax_ce"])
    assert np.allclose(d, [-0.5, 0.5])
    d = head_delta(np.array([0.0, 0.0]), np.array([16.0, 0.0]), EXP_GB)
    assert np.allclose(d, [-15.9, 0.1])
    d = head_delta(np.array([10.0, 0.0]), np.array([10.0, 0.0]), POW3_GB)
    assert np.allclose(d, [-8.6, 0.4])
    with pytest.raises(DimensionError):
        head_delta(np.zeros(3), np.zeros(2), EXP_GB)


def test_softmax_delta_uses_unit_targets_and_is_bounded():
    rng = np.random.default_rng(1)
    spec = HEAD_PRESETS["softmax_ce"]
    x = rng.standard_normal((50, 10)) * 20.0
    t = encode_target_batch(rng.integers(10, size=50), 10, spec)
    d = head_delta(x, t, spec)
    assert np.all(d >= -1.0) and np.all(d <= 1.0)


def test_exp_gb_delta_unbounded_and_increasing():
    t = np.zeros(1)
    d = [head_delta(np.array([x]), t, EXP_GB)[0] for x in (0.0, 5.0, 10.0, 20.0)]
    assert all(a < b for a, b in zip(d, d[1:]))
    assert d[-1] > 1e7


def test_true_gradient_heads_finite_differences():
    rng = np.random.default_rng(2)
    for name in ("softmax_ce", "linear_mse", "sigmoid_mse", "tanh_mse"):
        spec = HEAD_PRESETS[name]
        for _ in range(20):
            x = rng.standard_normal(10)
            t = encode_targets(int(rng.integers(10)), 10, spec)
            numeric = numerical_gradient(lambda v: loss_value(v, t, spec), x)
            assert max_relative_error(head_delta(x, t, spec), numeric) < 1e-6


def test_gb_potentials():
    rng = np.random.default_rng(3)
    x = rng.uniform(-3.0, 3.0, 10)
    t = encode_targets(4, 10, EXP_GB).values
    # closed-form derivatives of the potentials
    assert np.allclose(head_delta(x, t, EXP_GB), 0.1 * np.exp(x) - t, rtol=0.0, atol=1e-15)
    t3 = encode_targets(4, 10, POW3_GB).values
    assert np.allclose(head_delta(x, t3, POW3_GB), 0.001 * x**3 + 0.4 - t3, rtol=0.0, atol=1e-15)
    for spec, tt in ((EXP_GB, t), (POW3_GB, t3)):
        numeric = numerical_gradient(lambda v: gb_potential(v, tt, spec), x)
        assert max_relative_error(head_delta(x, tt, spec), numeric) < 1e-6
    with pytest.raises(ConfigurationError):
        gb_potential(x, t, HEAD_PRESETS["linear_mse"])


def test_loss_value():
    t = np.array([0.3, -0.2])
    assert loss_value(t, t, HeadSpec("linear_mse")) == 0.0
    spec = HEAD_PRESETS["softmax_ce"]
    assert isclose(loss_value(np.zeros(5), encode_targets(1, 5, spec), spec), log(5.0))
    assert isclose(loss_value(np.array([0.0]), np.array([1.0]), EXP_GB), 0.405)
    with pytest.raises(ConfigurationError):
        loss_value(np.zeros(2), np.array([16.0, 0.0]), spec)


def test_exp_clamp():
    x = np.array([[EXP_CLAMP + 10.0, 0.0], [50.0, -60.0]])
    y = head_outputs(x, EXP_GB)
    assert np.all(np.isfinite(y))
    assert isclose(y[0, 0], 0.1 * np.exp(EXP_CLAMP))
    assert exp_clamp_count(x, EXP_GB) == 2
    assert exp_clamp_count(x, HeadSpec("mirror_exp_gb")) == 3
    assert exp_clamp_count(x, POW3_GB) == 0


def test_normalization_term():
    nt = normalization_term(np.zeros(10))
    assert isclose(nt.s, 10.0)
    assert isclose(nt.log_s, log(10.0))
    assert not nt.saturated
    assert isclose(normalization_term(np.array([0.0])).s, 1.0)
    assert normalization_term(np.array([0.0, -50.0])).s > 1.0
    sat = normalization_term(np.array([800.0, 0.0]))
    assert sat.saturated
    assert sat.s == float("inf")
    assert isclose(sat.log_s, 800.0)
    with pytest.raises(DomainError):
        normalization_term(np.zeros(0))
    with pytest.raises(DimensionError):
        normalization_term(np.zeros((2, 3)))


def test_predict():
    assert predict(np.array([0.2, 5.0, -1.0])) == 1
    assert predict(np.array([1.0, 1.0])) == 0
    rng = np.random.default_rng(4)
    x = rng.standard_normal((30, 6)) * 4.0
    for spec in HEAD_PRESETS.values():
        assert np.array_equal(np.argmax(head_outputs(x, spec), axis=1), predict(x, spec))
    # above the clamp the outputs tie but the prediction still follows the logits
    big = np.array([EXP_CLAMP + 1.0, EXP_CLAMP + 5.0])
    assert predict(big, EXP_GB) == 1
    out = head_outputs(big, EXP_GB)
    assert out[0] == out[1]
