import numpy as np
import pytest

from mergelabel import nn
from mergelabel import tensor as T
from mergelabel.tensor import ShapeError, Tensor

from conftest import check_op_grad


def test_kernel_offsets_and_slots():
    np.testing.assert_array_equal(nn.kernel_offsets(4), [-2, -1, 1, 2])
    assert [nn.kernel_slot(6, o) for o in (-3, -1, 1, 3)] == [0, 2, 3, 5]
    with pytest.raises(ValueError):
        nn.kernel_slot(4, 0)
    with pytest.raises(ValueError):
        nn.kernel_offsets(3)


def test_unfold_to_small_example(f64):
    x = Tensor(np.arange(4.0).reshape(1, 4, 1))
    view = nn.unfold_to(x, 2)
    np.testing.assert_array_equal(view.values.data[0, :, :, 0], [[0, 1], [0, 2], [1, 3], [2, 0]])
    np.testing.assert_array_equal(view.mask[0], [[False, True], [True, True], [True, True], [True, False]])


def test_unfold_to_respects_segments(f64):
    x = Tensor(np.arange(4.0).reshape(1, 4, 1))
    seg = np.array([[0, 0, 1, -1]])
    view = nn.unfold_to(x, 2, seg)
    np.testing.assert_array_equal(view.mask[0], [[False, True], [True, False], [False, False], [False, False]])
    assert np.all(view.values.data[~view.mask] == 0)


def test_unfold_from_tiles(f64):
    x = Tensor(np.arange(6.0).reshape(1, 3, 2))
    out = nn.unfold_from(x, 4)
    assert out.shape == (1, 3, 4, 2)
    assert np.all(out.data[0, 1] == [2.0, 3.0])


def test_centered_cumsum_example(f64):
    # pairs between tokens 0|1, 1|2, 2|3
    pairs = Tensor(np.array([[[1.0], [2.0], [4.0]]]))
    m = nn.centered_cumsum(pairs, 4).values.data[0, :, :, 0]
    # token 2: offsets -2, -1, +1, +2 -> 2+1, 2, 4, invalid
    np.testing.assert_array_equal(m[2], [3.0, 2.0, 4.0, 0.0])
    d = nn.centered_cumsum(pairs, 4, negate_left=True).values.data[0, :, :, 0]
    np.testing.assert_array_equal(d[2], [-3.0, -2.0, 4.0, 0.0])


def test_centered_cumsum_is_antisymmetric_between_positions(f64):
    rng = np.random.default_rng(0)
    pairs = Tensor(rng.normal(size=(1, 7, 3)))
    D = nn.centered_cumsum(pairs, 6, negate_left=True).values.data[0]
    for i in range(8):
        for o in (-3, -2, -1, 1, 2, 3):
            j = i + o
            if 0 <= j < 8:
                np.testing.assert_allclose(D[i, nn.kernel_slot(6, o)], -D[j, nn.kernel_slot(6, -o)], atol=1e-12)


def test_centered_cumsum_gradient():
    seg = np.array([[0, 0, 0, 1, 1, 1]])
    check_op_grad(lambda p: nn.centered_cumsum(p, 4, seg, negate_left=True).values, (1, 5, 2))


def test_unfold_to_gradient():
    check_op_grad(lambda x: nn.unfold_to(x, 4).values, (2, 5, 3))


def test_rewindow_pads_symmetrically(f64):
    x = Tensor(np.ones((1, 2, 2, 1)))
    out = nn.rewindow(x, 2, 6)
    assert out.shape == (1, 2, 6, 1)
    np.testing.assert_array_equal(out.data[0, 0, :, 0], [0, 0, 1, 1, 0, 0])
    with pytest.raises(ValueError):
        nn.rewindow(x, 4, 2)


def _identity_ff(in_dim, e, noise=0.0, seed=0):
    return nn.ff_init_identity_eu(in_dim, e, [e + 3, e + 2], np.random.default_rng(seed), noise=noise)


def test_identity_ff_copies_lanes_exactly(f64):
    e = 4
    for noise in (0.0, 0.01, 0.5):
        ff = _identity_ff(2 * e, e, noise)
        x = Tensor(np.random.default_rng(1).uniform(-1, 1, (3, 2 * e)))
        np.testing.assert_array_equal(ff(x).data[:, :e], x.data[:, :e])


def test_identity_ff_rejects_narrow_hidden():
    with pytest.raises(ValueError):
        nn.ff_init_identity_eu(8, 4, [3], np.random.default_rng(0))


def test_uniform_ff_range_and_shapes():
    ff = nn.ff_init_uniform([3, 5, 2], np.random.default_rng(0), scale=0.1)
    assert ff.dims == [3, 5, 2]
    assert all(np.abs(p.data).max() <= 0.1 for p in ff.parameters().values())
    with pytest.raises(ShapeError):
        ff(Tensor(np.ones((2, 4))))


def test_dropout_is_identity_in_eval_and_scales_in_training():
    x = Tensor(np.ones((1000,)))
    assert nn.dropout(x, 0.5, False) is x
    y = nn.dropout(x, 0.5, True, np.random.default_rng(0)).data
    assert set(np.unique(y)) <= {0.0, 2.0}
    assert abs(y.mean() - 1.0) < 0.1
    with pytest.raises(ValueError):
        nn.dropout(x, 0.5, True, None)


def test_embed_update_returns_input_when_proposals_agree(f64):
    e, k = 3, 4
    ff = _identity_ff(2 * e, e, noise=0.0)
    x = Tensor(np.random.default_rng(2).uniform(-1, 1, (1, 5, e)))
    view = nn.unfold_to(x, k)
    inp = T.concat([nn.unfold_from(x, k), view.values], axis=-1)
    out = nn.embed_update(inp, ff, view.mask, e)
    np.testing.assert_array_equal(out.data, x.data)


def test_embed_update_all_masked_gives_zero(f64):
    e, k = 2, 2
    ff = _identity_ff(2 * e, e, noise=0.1)
    x = Tensor(np.ones((1, 1, e)))
    view = nn.unfold_to(x, k)  # single token: every slot out of range
    inp = T.concat([nn.unfold_from(x, k), view.values], axis=-1)
    out = nn.embed_update(inp, ff, view.mask, e)
    np.testing.assert_array_equal(out.data, np.zeros((1, 1, e)))


def test_embed_update_matches_gated_mean(f64):
    rng = np.random.default_rng(3)
    e, k = 2, 4
    ff = nn.ff_init_uniform([5, 6, e + 1], rng, scale=0.5)
    inp = Tensor(rng.normal(size=(1, 3, k, 5)))
    mask = rng.random((1, 3, k)) < 0.7
    mask[0, 0] = True
    out = nn.embed_update(inp, ff, mask, e).data
    raw = ff(inp).data
    g = 1 / (1 + np.exp(-raw[..., e])) * mask
    expected = (g[..., None] * raw[..., :e]).sum(2) / np.maximum(g.sum(2), 1e-300)[..., None]
    expected[g.sum(2) == 0] = 0
    np.testing.assert_allclose(out, expected, rtol=1e-12, atol=1e-12)
    unnorm = nn.embed_update(inp, ff, mask, e, normalized=False).data
    np.testing.assert_allclose(unnorm, (g[..., None] * raw[..., :e]).sum(2), rtol=1e-12)


def test_embed_update_gradient():
    rng = np.random.default_rng(4)
    e = 2
    ff = nn.ff_init_uniform([3, 4, e + 1], rng, scale=0.5)
    mask = np.array([[[True, False, True], [False, False, False]]])
    check_op_grad(lambda x: nn.embed_update(x, ff, mask, e), (1, 2, 3, 3))


def test_embed_update_rejects_wrong_output_width():
    ff = nn.ff_init_uniform([3, 4], np.random.default_rng(0))
    with pytest.raises(ShapeError):
        nn.embed_update(Tensor(np.ones((1, 1, 2, 3))), ff, np.ones((1, 1, 2), bool), e=2)
