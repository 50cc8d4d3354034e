import numpy as np
import pytest

from mergelabel import tensor as T
from mergelabel.tensor import ShapeError, Tensor

from conftest import check_op_grad


def test_default_dtype_and_precision_switch():
    assert Tensor([1.0]).dtype == np.float32
    with T.precision(np.float64):
        assert Tensor([1.0]).dtype == np.float64
    assert Tensor([1.0]).dtype == np.float32
    with pytest.raises(ValueError):
        T.set_default_dtype(np.int32)


def test_broadcast_add_values_and_grad_shapes(f64):
    a = Tensor(np.ones((2, 3)), requires_grad=True)
    b = Tensor(np.arange(3.0), requires_grad=True)
    out = a + b
    np.testing.assert_array_equal(out.data, [[1, 2, 3], [1, 2, 3]])
    T.backward(out.sum())
    assert a.grad.shape == (2, 3) and b.grad.shape == (3,)
    np.testing.assert_array_equal(b.grad, [2, 2, 2])


def test_incompatible_broadcast_rejected():
    with pytest.raises(ShapeError):
        Tensor(np.ones((2, 3))) + Tensor(np.ones((4,)))


@pytest.mark.parametrize(
    "build,shapes",
    [
        (lambda a, b: a + b, [(3, 4), (4,)]),
        (lambda a, b: a - b, [(3, 1), (3, 4)]),
        (lambda a, b: a * b, [(2, 3, 4), (3, 1)]),
        (lambda a, b: a / (b + 3.0), [(3, 4), (3, 4)]),
        (lambda a: -a, [(5,)]),
        (lambda a: T.absolute(a), [(4, 3)]),
        (lambda a: T.maximum(a, 0.1), [(4, 3)]),
        (lambda a: T.sigmoid(a * 4), [(3, 3)]),
        (lambda a: T.selu(a), [(3, 3)]),
        (lambda a: T.softplus(a * 3), [(3, 3)]),
        (lambda a, b: T.matmul(a, b), [(2, 3, 4), (4, 5)]),
        (lambda a: T.reduce("sum", a, axis=1), [(2, 3, 4)]),
        (lambda a: T.reduce("mean", a, axis=(0, 2), keepdims=True), [(2, 3, 4)]),
        (lambda a: T.reduce("max", a, axis=-1), [(3, 5)]),
        (lambda a: T.directional_cumsum(a, "forward", axis=1), [(2, 5, 3)]),
        (lambda a: T.directional_cumsum(a, "backward", axis=1), [(2, 5, 3)]),
        (lambda a: T.reshape(a, (6, 2)), [(3, 4)]),
        (lambda a: T.broadcast_to(a, (2, 3, 4)), [(3, 1)]),
        (lambda a: T.expand_dims(a, 1), [(3, 4)]),
        (lambda a, b: T.concat([a, b], axis=1), [(2, 3), (2, 5)]),
        (lambda a, b: T.stack([a, b], axis=-1), [(2, 3), (2, 3)]),
        (lambda a: T.slice(a, 1, 1, 3), [(2, 4, 2)]),
        (lambda a: T.take(a, np.array([[0, 2], [2, 2]]), axis=1), [(2, 3, 2)]),
        (lambda a: T.take_along_batch(a, np.array([[[0, 1], [1, 1], [2, 0]]])), [(1, 3, 2)]),
    ],
)
def test_op_gradients_match_finite_differences(build, shapes):
    check_op_grad(build, *shapes)


def test_cross_entropy_gradient_and_masking(f64):
    rng = np.random.default_rng(1)
    targets = np.array([0, 2, 1, 1])
    mask = np.array([True, True, False, True])
    check_op_grad(lambda z: T.softmax_cross_entropy(z, targets, mask), (4, 3))
    logits = rng.normal(size=(4, 3))
    full = T.softmax_cross_entropy(Tensor(logits[mask]), targets[mask]).item()
    assert T.softmax_cross_entropy(Tensor(logits), targets, mask).item() == pytest.approx(full)
    with pytest.raises(ValueError):
        T.softmax_cross_entropy(Tensor(logits), targets, np.zeros(4, bool))


def test_cross_entropy_is_stable_for_large_logits(f64):
    loss = T.softmax_cross_entropy(Tensor([[1000.0, 0.0]]), [1])
    assert loss.item() == pytest.approx(1000.0)


def test_sigmoid_and_selu_values(f64):
    x = Tensor([-800.0, 0.0, 800.0])
    np.testing.assert_allclose(T.sigmoid(x).data, [0.0, 0.5, 1.0])
    np.testing.assert_allclose(T.selu(Tensor([1.0, -50.0])).data, [T.SELU_SCALE, -T.SELU_SCALE * T.SELU_ALPHA])


def test_cumsum_directions(f64):
    x = Tensor(np.array([[1.0], [2.0], [3.0]]))
    np.testing.assert_array_equal(T.directional_cumsum(x, "forward", axis=0).data.ravel(), [1, 3, 6])
    np.testing.assert_array_equal(T.directional_cumsum(x, "backward", axis=0).data.ravel(), [6, 5, 3])
    with pytest.raises(ValueError):
        T.directional_cumsum(x, "sideways")


def test_elementwise_dispatch():
    a = Tensor([1.0, -2.0])
    np.testing.assert_array_equal(T.elementwise("max-with-scalar", a, 0.0).data, [1.0, 0.0])
    np.testing.assert_array_equal(T.elementwise("mul", a, a).data, [1.0, 4.0])
    with pytest.raises(ValueError):
        T.elementwise("pow", a, a)


def test_shape_errors():
    with pytest.raises(ShapeError):
        T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2))))
    with pytest.raises(ValueError):
        T.concat([])
    with pytest.raises(ShapeError):
        T.concat([Tensor(np.ones((2, 3))), Tensor(np.ones((3, 3)))], axis=1)
    with pytest.raises(ShapeError):
        T.slice(Tensor(np.ones(3)), 0, 2, 5)
    with pytest.raises(ShapeError):
        T.reshape(Tensor(np.ones(6)), (4, 2))


def test_backward_requires_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ShapeError):
        T.backward(x * 2)


def test_gradients_accumulate_over_shared_subgraphs(f64):
    x = Tensor([2.0], requires_grad=True)
    y = x * x
    T.backward((y + y * 3).sum())
    np.testing.assert_allclose(x.grad, [16.0])


def test_no_grad_records_nothing():
    x = Tensor([1.0], requires_grad=True)
    with T.no_grad():
        y = x * 2
    assert not y.requires_grad and y._parents == ()


def test_tape_is_single_use(f64):
    x = Tensor([1.0, 2.0], requires_grad=True)
    tape = T.Tape((x * x).sum())
    assert len(tape) == 3  # leaf, product, sum
    tape.replay()
    np.testing.assert_allclose(x.grad, [2.0, 4.0])
    with pytest.raises(RuntimeError):
        tape.replay()


def test_deep_chain_does_not_hit_recursion_limit(f64):
    x = Tensor([1.0], requires_grad=True)
    y = x
    for _ in range(5000):
        y = y + 0.0
    T.backward(y.sum())
    assert x.grad[0] == 1.0
