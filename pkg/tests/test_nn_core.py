import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dialkit.errors import (CheckpointShapeError, CheckpointVersionError, ContractError, DimensionError,
                            NumericError, TruncatedPayloadError, ConfigurationError)
from dialkit.nn import (AdamState, ParamSpec, ParamStore, Rng, Tensor, adam_step, apply, clip_grad_norm,
                        finite_diff_check, gradient_errors, init_params, load_checkpoint, no_grad,
                        save_checkpoint, stable_hash)
from dialkit.nn import tensor as T


def leaf(a):
    return Tensor(np.asarray(a, dtype=np.float32), requires_grad=True)


# -- primitives ----------------------------------------------------------------

def test_sigmoid_at_zero():
    assert apply("sigmoid", Tensor(np.zeros(3))).data.tolist() == [0.5, 0.5, 0.5]


def test_dropout_zero_rate_is_identity():
    x = Tensor(np.arange(6.0).reshape(2, 3))
    assert np.array_equal(T.dropout(x, 0.0, Rng(1)).data, x.data)
    assert np.array_equal(T.dropout(x, 0.5, None).data, x.data)


def test_dropout_scales_kept_units():
    x = Tensor(np.ones((200, 50)))
    y = T.dropout(x, 0.25, Rng(3)).data
    kept = y[y != 0]
    assert np.allclose(kept, 1 / 0.75)
    assert abs((y == 0).mean() - 0.25) < 0.02


def test_sigmoid_chain_rule_at_origin():
    w = leaf([0.0])
    x = np.array([1.0], dtype=np.float32)
    T.sigmoid(w * x).sum().backward()
    assert w.grad[0] == pytest.approx(0.25)


def test_gelu_is_tanh_approximation():
    x = np.linspace(-3, 3, 13)
    expected = 0.5 * x * (1 + np.tanh(math.sqrt(2 / math.pi) * (x + 0.044715 * x ** 3)))
    assert np.allclose(T.gelu(Tensor(x)).data, expected, atol=1e-12)


def test_shape_mismatch_names_op():
    with pytest.raises(DimensionError, match="matmul"):
        T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2))))


def test_non_scalar_backward_rejected():
    with pytest.raises(ContractError):
        (leaf(np.ones(3)) * 2).backward()


def test_unknown_op_kind():
    with pytest.raises(ContractError):
        apply("conv3d", Tensor(np.ones(2)))


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 6), st.integers(2, 8), st.integers(0, 10_000))
def test_softmax_rows_sum_to_one(rows, cols, seed):
    x = Rng(seed).normal(0, 5, (rows, cols)).astype(np.float32)
    s = T.softmax(Tensor(x)).data
    assert np.allclose(s.sum(axis=-1), 1.0, atol=1e-5)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 5), st.integers(4, 16), st.integers(0, 10_000))
def test_layer_norm_moments(rows, cols, seed):
    x = Rng(seed).normal(3, 2, (rows, cols)).astype(np.float32)
    out = T.layer_norm(Tensor(x), Tensor(np.ones(cols)), Tensor(np.zeros(cols))).data
    assert np.all(np.abs(out.mean(axis=-1)) <= 1e-5)
    assert np.allclose(out.var(axis=-1), 1.0, atol=1e-3)


def test_max_over_time_respects_mask():
    x = Tensor(np.array([[[1.0], [9.0], [2.0]]]))
    out = T.max_over_time(x, axis=1, mask=np.array([[True, False, True]]))
    assert out.data.tolist() == [[2.0]]


def test_weighted_cross_entropy_ignores_masked():
    z = Tensor(np.zeros((1, 2, 3)))
    loss = T.weighted_cross_entropy(z, np.array([[0, 2]]), (2, 2, 1), np.array([[True, False]]))
    assert loss.item() == pytest.approx(2 * math.log(3))


def test_ops_preserve_float64():
    a = Tensor(np.ones((2, 2)), dtype=np.float64)
    assert (T.gelu(a) @ a).dtype == np.float64


def test_no_grad_builds_no_graph():
    w = leaf([1.0, 2.0])
    with no_grad():
        y = (w * w).sum()
    assert not y.requires_grad


# -- gradient checking --------------------------------------------------------

def test_linear_loss_exact():
    store = ParamStore({"w": np.array([0.3, -0.2, 0.5])})
    x = np.array([1.0, 2.0, -1.0])
    err = finite_diff_check(lambda p: (p["w"] * x).sum(), store)
    assert err < 1e-6


def test_two_layer_tanh_network():
    r = Rng(7)
    store = ParamStore({"w1": r.normal(0, 0.5, (4, 8)), "w2": r.normal(0, 0.5, (8, 4))})
    x = r.normal(0, 1, (3, 4)).astype(np.float32)
    assert store.num_values() == 64

    def loss(p):
        return T.tanh(T.tanh(Tensor(x.astype(p["w1"].dtype)) @ p["w1"]) @ p["w2"]).sum()

    errs = gradient_errors(loss, store)
    assert errs["float32"] < 1e-3
    assert errs["float64"] < 1e-4


def test_constant_loss_has_zero_gradient():
    store = ParamStore({"w": np.ones(4)})
    w = store["w"]
    (w * 0.0).sum().backward()
    assert np.all(w.grad == 0.0)


def test_gradcheck_rejects_bad_epsilon_and_nan():
    store = ParamStore({"w": np.ones(2)})
    with pytest.raises(ContractError):
        finite_diff_check(lambda p: p["w"].sum(), store, epsilon=1e-2)
    with pytest.raises(NumericError):
        finite_diff_check(lambda p: (p["w"] * np.nan).sum(), store)


def test_gradcheck_skips_relu_kink():
    # the first coordinate's stencil (+-1e-3, +-2e-3) straddles the kink at 0
    store = ParamStore({"w": np.array([0.0015, 1.0])})
    errs = gradient_errors(lambda p: T.relu(p["w"]).sum(), store)
    assert errs["kinks"] == 1
    assert errs["float64"] < 1e-8


# -- init --------------------------------------------------------------------------

def test_zero_init_and_determinism():
    specs = [ParamSpec("a", (3, 4), "zeros"), ParamSpec("b", (5,)), ParamSpec("c", (4, 4), "uniform")]
    s1, s2 = init_params(specs, Rng(11)), init_params(specs, Rng(11))
    assert np.all(s1["a"].data == 0.0)
    assert s1.bitwise_equal(s2)
    assert not s1.bitwise_equal(init_params(specs, Rng(12)))


def test_truncated_normal_statistics():
    v = init_params([ParamSpec("t", (100_000,))], Rng(5))["t"].data
    assert 0.018 <= v.std() <= 0.022
    assert np.abs(v).max() <= 0.04


def test_uniform_bound():
    v = init_params([ParamSpec("u", (64, 16), "uniform")], Rng(2))["u"].data
    assert np.abs(v).max() <= 1 / 8


def test_duplicate_names_rejected():
    with pytest.raises(ContractError):
        init_params([ParamSpec("a", (2,)), ParamSpec("a", (3,))], Rng(0))


def test_store_iterates_lexicographically():
    store = ParamStore({"b": np.ones(1), "a": np.ones(1), "c.x": np.ones(1)})
    assert list(store) == ["a", "b", "c.x"]


# -- rng ---------------------------------------------------------------------------

def test_rng_streams_reproducible():
    a, b = Rng(9).child("x", 3), Rng(9).child("x", 3)
    assert np.array_equal(a.random(5), b.random(5))
    assert not np.array_equal(Rng(9).child("x", 3).random(5), Rng(9).child("x", 4).random(5))


def test_stable_hash_is_fixed():
    # frozen when the hash was introduced; negatives and data order depend on it
    assert stable_hash("ctx", 1, 2) == 6481714860248260984
    assert stable_hash("a") != stable_hash("b")


# -- adam ----------------------------------------------------------------------------

def test_zero_gradient_fixed_point():
    store = ParamStore({"w": np.array([1.0, -2.0])})
    before = store.copy()
    adam_step(store, {"w": np.zeros(2)}, AdamState(learning_rate=1e-3))
    assert store.bitwise_equal(before)


def test_first_step_magnitude():
    store = ParamStore({"w": np.array([0.5])})
    adam_step(store, {"w": np.array([1.0])}, AdamState(learning_rate=1e-3))
    assert 0.5 - store["w"].data[0] == pytest.approx(1e-3 / (1 + 1e-8), rel=1e-4)


def test_exponential_schedule():
    st_ = AdamState(learning_rate=1e-3, schedule="exponential")
    assert st_.lr_at(5000) == pytest.approx(0.00096)
    assert st_.lr_at(4999) == pytest.approx(0.001)


def test_linear_schedule_reaches_zero():
    st_ = AdamState(learning_rate=1e-3, schedule="linear", total_steps=10)
    assert st_.lr_at(5) == pytest.approx(5e-4)
    assert st_.lr_at(10) == 0.0


def test_missing_gradient_rejected():
    store = ParamStore({"w": np.ones(2), "v": np.ones(2)})
    with pytest.raises(ContractError):
        adam_step(store, {"w": np.ones(2)}, AdamState())


def test_unknown_schedule():
    with pytest.raises(ConfigurationError):
        AdamState(schedule="cosine")


def test_decoupled_weight_decay_skips_bias():
    store = ParamStore({"w": np.ones(2), "b.bias": np.ones(2)})
    adam_step(store, {"w": np.zeros(2), "b.bias": np.zeros(2)}, AdamState(learning_rate=0.1, weight_decay=0.5))
    assert np.allclose(store["w"].data, 0.95)
    assert np.all(store["b.bias"].data == 1.0)


def test_adam_bitwise_deterministic():
    def run():
        store = ParamStore({"w": np.linspace(-1, 1, 6)})
        state = AdamState(learning_rate=1e-2, weight_decay=0.01)
        for k in range(5):
            adam_step(store, {"w": np.sin(np.arange(6) + k)}, state)
        return store
    assert run().bitwise_equal(run())


def test_clip_grad_norm():
    store = ParamStore({"w": np.zeros(2)})
    store["w"].grad = np.array([3.0, 4.0], dtype=np.float32)
    norm = clip_grad_norm(store, 1.0)
    assert norm == pytest.approx(5.0)
    assert np.linalg.norm(store["w"].grad) == pytest.approx(1.0, rel=1e-6)


# -- checkpoints ----------------------------------------------------------------

def _store():
    return init_params([ParamSpec("enc.w", (3, 5)), ParamSpec("enc.b", (5,), "zeros")], Rng(4))


def test_checkpoint_round_trip(tmp_path):
    store = _store()
    save_checkpoint(store, tmp_path / "m.dgk", {"note": "x"})
    loaded, cfg = load_checkpoint(tmp_path / "m.dgk", store.shapes())
    assert loaded.bitwise_equal(store)
    assert cfg == {"note": "x"}


def test_checkpoint_truncated(tmp_path):
    path = tmp_path / "m.dgk"
    save_checkpoint(_store(), path)
    path.write_bytes(path.read_bytes()[:-7])
    with pytest.raises(TruncatedPayloadError):
        load_checkpoint(path)


def test_checkpoint_version(tmp_path):
    path = tmp_path / "m.dgk"
    save_checkpoint(_store(), path)
    path.write_bytes(b"DGK0" + path.read_bytes()[4:])
    with pytest.raises(CheckpointVersionError):
        load_checkpoint(path)


def test_checkpoint_shape_mismatch_names_tensor(tmp_path):
    path = tmp_path / "m.dgk"
    save_checkpoint(_store(), path)
    with pytest.raises(CheckpointShapeError, match="enc.w"):
        load_checkpoint(path, {"enc.w": (3, 6), "enc.b": (5,)})
