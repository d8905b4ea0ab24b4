"""Tests for the autodiff engine: op semantics, gradients vs finite
differences, Adam, initializers, checkpoints and the RNG."""

import numpy as np
import pytest

from monoidagg import autodiff as ad
from monoidagg.autodiff import ops
from monoidagg.autodiff.engine import GraphError, ShapeError
from monoidagg.autodiff.checkpoint import CheckpointError


def _rand(prng, shape, lo=-2.0, hi=2.0):
    n = int(np.prod(shape)) if shape else 1
    return np.asarray(prng.uniform_list(n, lo, hi), dtype=np.float32).reshape(shape)


# ---------------------------------------------------------------- forward ops


def test_sigmoid_at_zero():
    out = ad.sigmoid(ad.tensor([0.0]))
    assert out.numpy()[0] == pytest.approx(0.5)


def test_gelu_fixes_zero():
    out = ad.gelu(ad.tensor([0.0]))
    assert out.numpy()[0] == 0.0


def test_matmul_identity():
    prng = ad.Prng(7)
    a = _rand(prng, (3, 3))
    eye = ad.tensor(np.eye(3, dtype=np.float32))
    out = ad.matmul(eye, ad.tensor(a))
    np.testing.assert_array_equal(out.numpy(), a)


def test_shape_mismatch_names_op_and_shapes():
    with pytest.raises(ShapeError) as exc:
        ad.matmul(ad.tensor(np.zeros((2, 3))), ad.tensor(np.zeros((4, 5))))
    msg = str(exc.value)
    assert "matmul" in msg and "(2, 3)" in msg and "(4, 5)" in msg

    with pytest.raises(ShapeError) as exc:
        ad.add(ad.tensor(np.zeros((2, 3))), ad.tensor(np.zeros((4,))))
    assert "add" in str(exc.value)


def test_empty_tensor_rejected():
    with pytest.raises(ShapeError):
        ad.square(ad.tensor(np.zeros((0,))))


def test_forward_ops_finite_on_finite_inputs():
    prng = ad.Prng(11)
    x = ad.tensor(_rand(prng, (4, 6), -80.0, 80.0))
    for out in (ad.sigmoid(x), ad.tanh_(x), ad.gelu(x), ad.square(x)):
        assert np.isfinite(out.numpy()).all()
    p = ad.sigmoid(ad.tensor(_rand(prng, (5,), -200.0, 200.0)))
    y = ad.tensor(np.asarray([0, 1, 0, 1, 1], dtype=np.float32))
    assert np.isfinite(ad.bce(p, y).item())
    assert np.isfinite(ad.sqrt0(ad.tensor([-1.0, 0.0, 4.0])).numpy()).all()


# ------------------------------------------------------------------ backward


def test_backward_square_sum():
    x = ad.tensor([1.0, 2.0, 3.0], requires_grad=True)
    loss = ad.reduce_sum(ad.mul(x, x))
    ad.backward(loss)
    np.testing.assert_allclose(x.grad, [2.0, 4.0, 6.0])


def test_backward_mse_zero_weight():
    # loss = mse(Wx, y) at W = 0 has gradient -2 y x^T / len(y)
    prng = ad.Prng(3)
    x = _rand(prng, (3,))
    y = _rand(prng, (2,))
    W = ad.tensor(np.zeros((2, 3), dtype=np.float32), requires_grad=True)
    loss = ad.mse(ad.matmul(W, ad.tensor(x)), ad.tensor(y))
    ad.backward(loss)
    expected = -2.0 * np.outer(y, x) / len(y)
    np.testing.assert_allclose(W.grad, expected, rtol=1e-5)


def test_backward_disconnected_param_gets_zeros():
    x = ad.tensor([1.0, 2.0], requires_grad=True)
    w = ad.tensor([5.0], requires_grad=True)
    _side = ad.square(w)  # on the tape, but not feeding the loss
    loss = ad.reduce_sum(ad.square(x))
    ad.backward(loss)
    np.testing.assert_array_equal(w.grad, [0.0])


def test_backward_requires_scalar_loss():
    x = ad.tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(GraphError):
        ad.backward(ad.square(x))


def test_backward_twice_without_new_forward():
    x = ad.tensor([1.0], requires_grad=True)
    loss = ad.reduce_sum(ad.square(x))
    ad.backward(loss)
    with pytest.raises(GraphError):
        ad.backward(loss)


def test_grad_accumulates_over_fanout():
    x = ad.tensor([3.0], requires_grad=True)
    y = ad.add(ad.mul(x, x), ad.mul(x, x))
    ad.backward(ad.reduce_sum(y))
    np.testing.assert_allclose(x.grad, [12.0])


# ----------------------------------------------- gradient vs finite differences


def _gc(fn, params):
    return ad.grad_check(fn, params).max_rel_err


def test_gradcheck_op_suite_random_shapes():
    """Every differentiable op against central differences on a spread of
    random shapes/inputs (about a hundred cases overall)."""
    prng = ad.Prng(123)
    shapes2 = [(2, 3), (4, 1), (1, 5), (3, 3), (5, 2)]
    worst = 0.0

    for i, shape in enumerate(shapes2):
        a = ad.tensor(_rand(prng, shape), requires_grad=True)
        b = ad.tensor(_rand(prng, shape), requires_grad=True)
        for fn in (
            lambda p: ad.reduce_mean(ad.add(p["a"], p["b"])),
            lambda p: ad.reduce_mean(ad.sub(p["a"], p["b"])),
            lambda p: ad.reduce_mean(ad.mul(p["a"], p["b"])),
            lambda p: ad.reduce_mean(ad.smul(p["a"], 1.7)),
            lambda p: ad.reduce_mean(ad.square(p["a"])),
            lambda p: ad.reduce_mean(ad.sigmoid(p["a"])),
            lambda p: ad.reduce_mean(ad.tanh_(p["a"])),
            lambda p: ad.reduce_mean(ad.gelu(p["a"])),
            lambda p: ad.reduce_mean(ad.emax(p["a"], p["b"])),
            lambda p: ad.reduce_mean(ad.square(ad.concat([p["a"], p["b"]], axis=-1))),
            lambda p: ad.reduce_mean(ad.square(ad.concat([p["a"], p["b"]], axis=0))),
            lambda p: ad.reduce_mean(ad.reduce_sum(ad.square(p["a"]), axis=i % 2)),
            lambda p: ad.reduce_mean(ad.square(ad.tree_sum(p["a"]))),
            lambda p: ad.reduce_mean(ad.square(ad.sorted_tree_sum(p["a"]))),
            lambda p: ad.reduce_mean(ad.square(ad.reduce_max0(p["a"]))),
            lambda p: ad.reduce_mean(ad.square(ad.reduce_min0(p["a"]))),
            lambda p: ad.reduce_mean(ad.sqrt0(ad.add(ad.square(p["a"]), 0.1))),
            lambda p: ad.reduce_mean(ad.square(ad.reshape(p["a"], (-1,)))),
        ):
            worst = max(worst, _gc(fn, {"a": a, "b": b}))

    for an, bn in [((3,), (3, 4)), ((2, 3), (3,)), ((4, 3), (3, 2)), ((2, 5), (5, 5)), ((1, 2), (2, 7))]:
        a = ad.tensor(_rand(prng, an), requires_grad=True)
        b = ad.tensor(_rand(prng, bn), requires_grad=True)
        worst = max(worst, _gc(lambda p: ad.reduce_mean(ad.square(ad.matmul(p["a"], p["b"]))), {"a": a, "b": b}))

    # broadcast add (bias pattern), slicing, row gather
    a = ad.tensor(_rand(prng, (4, 6)), requires_grad=True)
    b = ad.tensor(_rand(prng, (6,)), requires_grad=True)
    worst = max(worst, _gc(lambda p: ad.reduce_mean(ad.square(ad.add(p["a"], p["b"]))), {"a": a, "b": b}))
    worst = max(worst, _gc(lambda p: ad.reduce_mean(ad.square(ad.take_slice(p["a"], (slice(1, 3), slice(None))))), {"a": a}))
    idx = [2, 0, 2, 3]
    worst = max(worst, _gc(lambda p: ad.reduce_mean(ad.square(ad.gather_rows(p["a"], idx))), {"a": a}))

    # losses
    z = ad.tensor(_rand(prng, (5, 8)), requires_grad=True)
    y = ad.tensor((_rand(prng, (5, 8)) > 0).astype(np.float32))
    t = ad.tensor(_rand(prng, (5, 8)))
    worst = max(worst, _gc(lambda p: ad.bce(ad.sigmoid(p["z"]), y), {"z": z}))
    worst = max(worst, _gc(lambda p: ad.mse(p["z"], t), {"z": z}))

    assert worst < 1e-3, f"max rel err {worst}"


def test_gradcheck_dense_sigmoid_mse():
    prng = ad.Prng(5)
    x = ad.tensor(_rand(prng, (4, 6)))
    y = ad.tensor(_rand(prng, (4, 3)))
    params = {
        "w": ad.tensor(_rand(prng, (6, 3), -0.5, 0.5), requires_grad=True),
        "b": ad.tensor(_rand(prng, (3,), -0.5, 0.5), requires_grad=True),
    }

    def fn(p):
        return ad.mse(ad.sigmoid(ad.add(ad.matmul(x, p["w"]), p["b"])), y)

    report = ad.grad_check(fn, params)
    assert report.max_rel_err < 1e-3
    assert set(report.per_param) == {"w", "b"}


def test_gradcheck_constant_loss_all_zero():
    params = {"w": ad.tensor(np.zeros((3, 3), dtype=np.float32), requires_grad=True)}
    x = ad.tensor(np.ones((2, 3), dtype=np.float32))

    def fn(p):
        # multiply by zero: loss is constant in w
        h = ad.matmul(x, p["w"])
        return ad.reduce_mean(ad.smul(h, 0.0))

    report = ad.grad_check(fn, params)
    assert report.max_rel_err == 0.0


# ---------------------------------------------------------------------- adam


def test_adam_zero_gradient_keeps_params():
    store = ad.ParameterStore()
    p = store.add("p", ad.tensor([1.0, -2.0], requires_grad=True))
    p.grad = np.zeros(2, dtype=np.float32)
    ad.adam_step(store, lr=0.1)
    np.testing.assert_array_equal(p.data, [1.0, -2.0])


def test_adam_first_step_bias_corrected():
    store = ad.ParameterStore()
    p = store.add("p", ad.tensor([1.0], requires_grad=True))
    p.grad = np.ones(1, dtype=np.float32)
    ad.adam_step(store, lr=1e-4)
    assert p.data[0] == pytest.approx(1.0 - 1e-4, rel=1e-5)


def test_adam_constant_gradient_drifts_lr_per_step():
    store = ad.ParameterStore()
    p = store.add("p", ad.tensor([0.0], requires_grad=True))
    values = [0.0]
    for _ in range(50):
        p.grad = np.ones(1, dtype=np.float32)
        ad.adam_step(store, lr=1e-3)
        values.append(float(p.data[0]))
    deltas = np.diff(values)
    assert np.all(deltas < 0)  # monotone descent against +1 gradient
    np.testing.assert_allclose(-deltas[5:], 1e-3, rtol=1e-3)


def test_adam_missing_gradient_names_parameter():
    store = ad.ParameterStore()
    store.add("dangling", ad.tensor([1.0], requires_grad=True))
    with pytest.raises(Exception) as exc:
        ad.adam_step(store, lr=1e-3)
    assert "dangling" in str(exc.value)


# ---------------------------------------------------------------------- init


def test_init_zeros():
    t = ad.init_params((4,), "zeros", ad.Prng(0))
    np.testing.assert_array_equal(t.numpy(), np.zeros(4))


def test_init_glorot_bound_many_samples():
    limit = np.sqrt(6.0 / 16.0)
    prng = ad.Prng(42)
    seen = []
    # 10^4 samples across repeated draws of an 8x8 kernel
    for _ in range(157):
        seen.append(ad.init_params((8, 8), "glorot-uniform", prng).numpy())
    flat = np.concatenate([s.reshape(-1) for s in seen])
    assert flat.size >= 10_000
    assert np.all(np.abs(flat) <= limit)
    assert np.abs(flat).max() > 0.9 * limit  # actually fills the range


def test_init_deterministic_same_seed():
    a = ad.init_params((3, 5), "glorot-uniform", ad.Prng(9, stream=2)).numpy()
    b = ad.init_params((3, 5), "glorot-uniform", ad.Prng(9, stream=2)).numpy()
    np.testing.assert_array_equal(a, b)
    c = ad.init_params((3, 5), "glorot-uniform", ad.Prng(9, stream=3)).numpy()
    assert not np.array_equal(a, c)


def test_init_unknown_scheme():
    with pytest.raises(Exception):
        ad.init_params((3,), "fancy", ad.Prng(0))


def test_small_normal_scale():
    prng = ad.Prng(1)
    t = ad.init_params((64, 64), "small-normal", prng).numpy()
    assert abs(float(t.std()) - 0.02) < 0.005


# ---------------------------------------------------------------- checkpoint


def _toy_store(seed=0):
    store = ad.ParameterStore()
    prng = ad.Prng(seed)
    store.create("layer.w", (4, 3), "glorot-uniform", prng)
    store.create("layer.b", (3,), "zeros", prng)
    store.create("embed", (2, 4), "small-normal", prng)
    return store


def test_checkpoint_roundtrip_bit_exact(tmp_path):
    store = _toy_store()
    ad.save_checkpoint(store, tmp_path / "ckpt")
    loaded = ad.load_checkpoint(tmp_path / "ckpt")
    assert loaded.names() == store.names()
    for name in store.names():
        assert loaded[name].numpy().tobytes() == store[name].numpy().tobytes()


def test_checkpoint_truncated_blob(tmp_path):
    store = _toy_store()
    ad.save_checkpoint(store, tmp_path / "ckpt")
    blob = (tmp_path / "ckpt" / "weights.bin").read_bytes()
    (tmp_path / "ckpt" / "weights.bin").write_bytes(blob[:-5])
    with pytest.raises(CheckpointError):
        ad.load_checkpoint(tmp_path / "ckpt")


def test_checkpoint_duplicate_name(tmp_path):
    import json

    store = _toy_store()
    ad.save_checkpoint(store, tmp_path / "ckpt")
    manifest = json.loads((tmp_path / "ckpt" / "manifest.json").read_text())
    manifest["params"].append(dict(manifest["params"][0]))
    (tmp_path / "ckpt" / "manifest.json").write_text(json.dumps(manifest))
    with pytest.raises(CheckpointError):
        ad.load_checkpoint(tmp_path / "ckpt")


def test_checkpoint_unknown_version(tmp_path):
    import json

    store = _toy_store()
    ad.save_checkpoint(store, tmp_path / "ckpt")
    manifest = json.loads((tmp_path / "ckpt" / "manifest.json").read_text())
    manifest["version"] = 99
    (tmp_path / "ckpt" / "manifest.json").write_text(json.dumps(manifest))
    with pytest.raises(CheckpointError):
        ad.load_checkpoint(tmp_path / "ckpt")


# ----------------------------------------------------------------------- rng


def test_prng_repeatable_and_streams_distinct():
    a = [ad.Prng(5, 1).next_u64() for _ in range(8)]
    b = [ad.Prng(5, 1).next_u64() for _ in range(8)]
    c = [ad.Prng(5, 2).next_u64() for _ in range(8)]
    assert a == b
    assert a != c


def test_prng_randint_bounds_and_shuffle_bijection():
    prng = ad.Prng(77)
    draws = [prng.randint(3, 9) for _ in range(500)]
    assert min(draws) == 3 and max(draws) == 9
    perm = prng.permutation(10)
    assert sorted(perm) == list(range(10))


def test_forward_determinism_same_seed_same_trajectory():
    def run():
        prng = ad.Prng(21)
        store = ad.ParameterStore()
        w = store.create("w", (3, 3), "glorot-uniform", prng)
        x = ad.tensor(_rand(prng, (5, 3)))
        losses = []
        for _ in range(3):
            loss = ad.reduce_mean(ad.square(ad.matmul(x, w)))
            ad.backward(loss)
            ad.adam_step(store, lr=1e-2)
            losses.append(loss.item())
        return losses

    assert run() == run()
