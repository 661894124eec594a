import numpy as np
import pytest

from conftest import check_gradients
from riot import autodiff as ad
from riot.autodiff import Adam, Tensor
from riot.errors import DivergedError


# ----------------------------------------------------------------------
# matmul
# ----------------------------------------------------------------------

def test_matmul_identity():
    m = np.array([[1.5, -2.0], [0.25, 4.0]])
    out = ad.matmul(Tensor(np.eye(2)), Tensor(m))
    np.testing.assert_array_equal(out.data, m)


def test_matmul_scalar_case():
    out = ad.matmul(Tensor([[2.0]]), Tensor([[3.0]]))
    assert out.data[0, 0] == 6.0


def test_matmul_matches_triple_loop(rng):
    a = rng.normal(size=(3, 4))
    b = rng.normal(size=(4, 2))
    ref = np.zeros((3, 2))
    for i in range(3):
        for j in range(2):
            for k in range(4):
                ref[i, j] += a[i, k] * b[k, j]
    out = ad.matmul(Tensor(a), Tensor(b)).data
    assert np.abs(out - ref).max() <= 1e-12


def test_matmul_shape_mismatch():
    with pytest.raises(ValueError):
        ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
    with pytest.raises(ValueError):
        ad.matmul(Tensor(np.ones(3)), Tensor(np.ones((3, 2))))


def test_matmul_identity_associativity(rng):
    a = rng.normal(size=(4, 4))
    b = rng.normal(size=(4, 3))
    eye = np.eye(4)
    left = ad.matmul(ad.matmul(Tensor(a), Tensor(eye)), Tensor(b)).data
    right = ad.matmul(Tensor(a), ad.matmul(Tensor(eye), Tensor(b))).data
    assert np.abs(left - right).max() <= 1e-12


# ----------------------------------------------------------------------
# softmax
# ----------------------------------------------------------------------

@pytest.mark.parametrize("c", [0.0, -3.5, 1e6])
def test_softmax_equal_logits(c):
    out = ad.softmax(Tensor([c, c, c])).data
    np.testing.assert_allclose(out, [1 / 3, 1 / 3, 1 / 3], atol=1e-15)


def test_softmax_analytic_pair():
    out = ad.softmax(Tensor([0.0, np.log(2.0)])).data
    np.testing.assert_allclose(out, [1 / 3, 2 / 3], atol=1e-15)


def test_softmax_matches_reference(rng):
    x = rng.normal(size=8) * 3
    ref = np.exp(x) / np.exp(x).sum()
    out = ad.softmax(Tensor(x)).data
    assert np.abs(out - ref).max() <= 1e-12
    assert abs(out.sum() - 1.0) <= 1e-12


def test_softmax_rows_are_distributions(rng):
    x = rng.normal(size=(20, 7)) * 5
    out = ad.softmax(Tensor(x), axis=-1).data
    assert (out > 0).all()
    np.testing.assert_allclose(out.sum(axis=-1), 1.0, atol=1e-9)


def test_softmax_empty_axis():
    with pytest.raises(ValueError):
        ad.softmax(Tensor(np.zeros((3, 0))))


# ----------------------------------------------------------------------
# layer norm
# ----------------------------------------------------------------------

def test_layer_norm_constant_vector_collapses_to_zero():
    x = Tensor(np.full(6, 4.2))
    out = ad.layer_norm(x, Tensor(np.ones(6)), Tensor(np.zeros(6))).data
    np.testing.assert_allclose(out, 0.0, atol=1e-12)


def test_layer_norm_two_point():
    out = ad.layer_norm(Tensor([1.0, 3.0]), Tensor(np.ones(2)), Tensor(np.zeros(2))).data
    np.testing.assert_allclose(out, [-1.0, 1.0], atol=1e-4)


def test_layer_norm_moments(rng):
    # variance well above eps so the stabiliser bias stays below 1e-6
    x = rng.normal(size=64) * 10.0
    out = ad.layer_norm(Tensor(x), Tensor(np.ones(64)), Tensor(np.zeros(64))).data
    assert abs(out.mean()) <= 1e-9
    assert abs(out.var() - 1.0) <= 1e-6


# ----------------------------------------------------------------------
# leaky relu and elementwise
# ----------------------------------------------------------------------

@pytest.mark.parametrize("x,expected", [(2.0, 2.0), (-1.0, -0.001), (0.0, 0.0)])
def test_leaky_relu_values(x, expected):
    assert ad.leaky_relu(Tensor([x])).data[0] == pytest.approx(expected, abs=0)


def test_elementwise_basics():
    assert ad.tanh(Tensor([0.0])).data[0] == 0.0
    assert ad.sigmoid(Tensor([0.0])).data[0] == 0.5
    np.testing.assert_array_equal(
        ad.concat([Tensor([1.0, 2.0]), Tensor([3.0])]).data, [1.0, 2.0, 3.0]
    )


def test_sigmoid_extreme_inputs_finite():
    out = ad.sigmoid(Tensor([-1000.0, 1000.0])).data
    assert np.all(np.isfinite(out))
    np.testing.assert_allclose(out, [0.0, 1.0], atol=1e-12)


def test_broadcast_add_bias(rng):
    x = rng.normal(size=(4, 3))
    b = rng.normal(size=3)
    out = ad.add(Tensor(x), Tensor(b))
    np.testing.assert_array_equal(out.data, x + b)


# ----------------------------------------------------------------------
# dropout
# ----------------------------------------------------------------------

def test_dropout_p_zero_is_identity(rng):
    x = Tensor(rng.normal(size=(5, 5)))
    assert ad.dropout(x, 0.0, training=True, rng=rng) is x


def test_dropout_inference_is_identity(rng):
    x = Tensor(rng.normal(size=(5, 5)))
    out = ad.dropout(x, 0.2, training=False)
    assert out is x


def test_dropout_survivor_fraction(rng):
    x = Tensor(np.ones(100_000))
    out = ad.dropout(x, 0.2, training=True, rng=rng).data
    survivors = np.count_nonzero(out) / x.size
    assert abs(survivors - 0.8) < 0.01
    # survivors are rescaled by 1/(1-p)
    np.testing.assert_allclose(out[out != 0], 1.0 / 0.8)


@pytest.mark.parametrize("p", [-0.1, 1.0, 1.5])
def test_dropout_invalid_p(p, rng):
    with pytest.raises(ValueError):
        ad.dropout(Tensor([1.0]), p, training=True, rng=rng)


# ----------------------------------------------------------------------
# backward contract
# ----------------------------------------------------------------------

def test_backward_sum():
    w = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    ad.tsum(w).backward()
    np.testing.assert_array_equal(w.grad, [1.0, 1.0, 1.0])


def test_backward_sum_of_squares():
    w = Tensor([1.0, 2.0], requires_grad=True)
    ad.tsum(ad.mul(w, w)).backward()
    np.testing.assert_array_equal(w.grad, [2.0, 4.0])


def test_backward_requires_scalar():
    w = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ValueError):
        ad.mul(w, w).backward()


def test_backward_accumulates_through_shared_nodes():
    w = Tensor([2.0], requires_grad=True)
    y = ad.mul(w, w)          # w^2
    loss = ad.tsum(ad.add(y, y))  # 2 w^2 -> d/dw = 4w = 8
    loss.backward()
    assert w.grad[0] == pytest.approx(8.0)


# ----------------------------------------------------------------------
# finite-difference checks for every differentiable op
# ----------------------------------------------------------------------

def _weighted_sum(t, w):
    return ad.tsum(ad.mul(t, Tensor(w)))


OP_CASES = {
    "add": (lambda a, b: ad.add(a, b), 2, (3, 4)),
    "sub": (lambda a, b: ad.sub(a, b), 2, (3, 4)),
    "mul": (lambda a, b: ad.mul(a, b), 2, (3, 4)),
    "div": (lambda a, b: ad.div(a, ad.add(ad.mul(b, b), 0.5)), 2, (3, 4)),
    "neg": (lambda a: ad.neg(a), 1, (3, 4)),
    "matmul": (lambda a, b: ad.matmul(a, ad.transpose(b)), 2, (3, 4)),
    "transpose": (lambda a: ad.transpose(a), 1, (3, 4)),
    "reshape": (lambda a: ad.reshape(a, (4, 3)), 1, (3, 4)),
    "getitem": (lambda a: ad.getitem(a, (slice(1, 3), slice(None))), 1, (3, 4)),
    "concat": (lambda a, b: ad.concat([a, b], axis=0), 2, (3, 4)),
    "sum_axis": (lambda a: ad.tsum(a, axis=1, keepdims=True), 1, (3, 4)),
    "mean_axis": (lambda a: ad.tmean(a, axis=0), 1, (3, 4)),
    "exp": (lambda a: ad.exp(a), 1, (3, 4)),
    "log": (lambda a: ad.log(ad.add(ad.mul(a, a), 0.5)), 1, (3, 4)),
    "sqrt": (lambda a: ad.sqrt(ad.add(ad.mul(a, a), 0.5)), 1, (3, 4)),
    "tanh": (lambda a: ad.tanh(a), 1, (3, 4)),
    "sigmoid": (lambda a: ad.sigmoid(a), 1, (3, 4)),
    "arccos": (lambda a: ad.arccos(ad.mul(ad.tanh(a), 0.9)), 1, (3, 4)),
    "leaky_relu": (lambda a: ad.leaky_relu(ad.add(a, 0.05)), 1, (3, 4)),
    "softmax": (lambda a: ad.softmax(a, axis=-1), 1, (3, 4)),
    "clip": (lambda a: ad.clip(a, -0.4, 0.4), 1, (3, 4)),
}


@pytest.mark.parametrize("name", sorted(OP_CASES))
def test_gradient_matches_finite_differences(name, rng):
    fn, n_inputs, shape = OP_CASES[name]
    arrays = [rng.normal(size=shape) for _ in range(n_inputs)]
    if name == "clip":
        # keep sample points away from the clamp boundaries
        arrays = [np.where(np.abs(a) < 0.45, a + 0.6 * np.sign(a), a) for a in arrays]
    # random cotangent so the check exercises non-uniform upstream grads
    out_shape = fn(*[Tensor(a) for a in arrays]).data.shape
    weight = rng.normal(size=out_shape)

    def build_loss(inputs):
        tensors = [a if isinstance(a, Tensor) else Tensor(a) for a in inputs]
        loss = _weighted_sum(fn(*tensors), weight)
        return loss if isinstance(inputs[0], Tensor) else loss.item()

    check_gradients(build_loss, arrays, rel_tol=1e-4, h=1e-5)


def test_layer_norm_gradient(rng):
    x = rng.normal(size=(2, 6)) * 2
    gain = rng.normal(size=6)
    bias = rng.normal(size=6)

    def build_loss(inputs):
        if isinstance(inputs[0], Tensor):
            return ad.tsum(ad.layer_norm(inputs[0], inputs[1], inputs[2]))
        return float(ad.layer_norm(Tensor(inputs[0]), Tensor(inputs[1]),
                                   Tensor(inputs[2])).data.sum())

    check_gradients(build_loss, [x, gain, bias], rel_tol=1e-4)


# ----------------------------------------------------------------------
# ADAM
# ----------------------------------------------------------------------

def test_adam_zero_gradient_leaves_params():
    w = Tensor([1.0, -2.0], requires_grad=True)
    opt = Adam({"w": w}, lr=0.1)
    w.grad = np.zeros(2)
    before = w.data.copy()
    opt.step()
    np.testing.assert_array_equal(w.data, before)


@pytest.mark.parametrize("g", [1.0, -0.3, 250.0, 1e-3])
def test_adam_first_step_magnitude(g):
    w = Tensor([0.0], requires_grad=True)
    lr = 0.001
    opt = Adam({"w": w}, lr=lr)
    w.grad = np.array([g])
    opt.step()
    expected = lr * abs(g) / (abs(g) + 1e-8)
    assert abs(abs(w.data[0]) - expected) < 1e-15
    assert abs(w.data[0]) == pytest.approx(lr, rel=1e-4)


def test_adam_converges_on_quadratic():
    w = Tensor([0.0], requires_grad=True)
    opt = Adam({"w": w}, lr=0.05)
    for _ in range(200):
        opt.zero_grad()
        loss = ad.tsum(ad.mul(ad.sub(w, 3.0), ad.sub(w, 3.0)))
        loss.backward()
        opt.step()
    assert abs(w.data[0] - 3.0) < 1e-2


def test_adam_rejects_nan_gradient():
    w = Tensor([0.0], requires_grad=True)
    opt = Adam({"w": w})
    w.grad = np.array([np.nan])
    with pytest.raises(DivergedError):
        opt.step()


def test_adam_invalid_lr():
    with pytest.raises(ValueError):
        Adam({"w": Tensor([0.0], requires_grad=True)}, lr=0.0)


def test_adam_state_roundtrip():
    w = Tensor([1.0], requires_grad=True)
    opt = Adam({"w": w}, lr=0.01)
    for _ in range(3):
        w.grad = np.array([0.5])
        opt.step()
    state = opt.state_dict()
    opt2 = Adam({"w": Tensor(w.data.copy(), requires_grad=True)}, lr=0.01)
    opt2.load_state_dict(state)
    assert opt2.step_count == 3
    np.testing.assert_array_equal(opt2._m["w"], opt._m["w"])


# ----------------------------------------------------------------------
# determinism and persistence
# ----------------------------------------------------------------------

def _tiny_run(seed):
    rng = np.random.default_rng(seed)
    w1 = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
    w2 = Tensor(rng.normal(size=(3, 2)), requires_grad=True)
    opt = Adam({"w1": w1, "w2": w2}, lr=0.01)
    losses = []
    for _ in range(5):
        x = Tensor(rng.normal(size=(2, 4)))
        h = ad.dropout(ad.tanh(ad.matmul(x, w1)), 0.3, training=True, rng=rng)
        out = ad.matmul(h, w2)
        loss = ad.tmean(ad.mul(out, out))
        opt.zero_grad()
        loss.backward()
        opt.step()
        losses.append(loss.item())
    return losses, w1.data.copy(), w2.data.copy()


def test_seeded_run_is_bit_reproducible():
    l1, a1, b1 = _tiny_run(99)
    l2, a2, b2 = _tiny_run(99)
    assert l1 == l2
    np.testing.assert_array_equal(a1, a2)
    np.testing.assert_array_equal(b1, b2)


def test_array_checkpoint_roundtrip(tmp_path, rng):
    arrays = {"a": rng.normal(size=(3, 5)), "b.c": rng.normal(size=7)}
    meta = {"note": "probe", "epoch": 3}
    path = tmp_path / "ck.npz"
    ad.save_arrays(path, arrays, meta)
    loaded, got_meta = ad.load_arrays(path)
    assert got_meta == meta
    assert set(loaded) == {"a", "b.c"}
    for k in arrays:
        np.testing.assert_array_equal(loaded[k], arrays[k])


def test_checkpoint_reserved_key_rejected(tmp_path):
    with pytest.raises(ValueError):
        ad.save_arrays(tmp_path / "x.npz", {"__meta__": np.zeros(1)})


def test_forward_ops_finite_on_finite_inputs(rng):
    x = rng.normal(size=(6, 6)) * 3
    outs = [
        ad.softmax(Tensor(x), axis=-1).data,
        ad.layer_norm(Tensor(x), Tensor(np.ones(6)), Tensor(np.zeros(6))).data,
        ad.tanh(Tensor(x)).data,
        ad.sigmoid(Tensor(x)).data,
        ad.leaky_relu(Tensor(x)).data,
    ]
    for out in outs:
        assert np.all(np.isfinite(out))
