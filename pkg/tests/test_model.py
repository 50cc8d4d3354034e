from dataclasses import replace

import numpy as np
import pytest

from mergelabel import tensor as T
from mergelabel.model import MergeLabelModel, ModelConfig, ModelInput
from mergelabel.tensor import ShapeError, Tensor
from mergelabel.verify import gradcheck_batch, identity_deviation


def _input(cfg, s=7, seed=0, sentences=(0,)):
    rng = np.random.default_rng(seed)
    sid = np.repeat(np.array(sentences), int(np.ceil(s / len(sentences))))[:s][None]
    return ModelInput(rng.uniform(-1, 1, (1, s, cfg.e)), np.ones((1, s), bool), sid)


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(k_levels=(10, 20))  # L=3 needs three kernels
    with pytest.raises(ValueError):
        ModelConfig(k_static=5)
    with pytest.raises(ValueError):
        ModelConfig(k_levels=(20, 10, 30))
    with pytest.raises(ValueError):
        ModelConfig(ff_eu_hidden=(10,))
    assert ModelConfig().e == 320


def test_forward_shapes(tiny_config, f64):
    cfg = tiny_config
    model = MergeLabelModel(cfg)
    out = model.forward(_input(cfg, 7))
    b, s, K = 1, 7, cfg.k_max
    assert out.logits.shape == (b, s, cfg.L, cfg.n_classes)
    assert out.structure.T.shape == (b, s, cfg.e, cfg.L)
    assert out.structure.R.shape == (b, s, K, cfg.e)
    assert out.structure.D.shape == (b, s, K, cfg.d)
    assert out.structure.M.shape == (b, s - 1, cfg.L)
    assert out.X_u.shape == (b, s, cfg.e)
    assert np.all(out.structure.M.data >= 0)


def test_single_token_sequence(tiny_config, f64):
    out = MergeLabelModel(tiny_config).forward(_input(tiny_config, 1))
    assert out.structure.M.shape == (1, 0, tiny_config.L)
    assert out.logits.shape == (1, 1, tiny_config.L, tiny_config.n_classes)
    assert np.all(np.isfinite(out.logits.data))


def test_update_layer_rejects_wrong_width(tiny_config, f64):
    model = MergeLabelModel(tiny_config)
    X = Tensor(np.zeros((1, 4, tiny_config.e)))
    S = model.structure_layer(X, np.zeros((1, 4), int))
    with pytest.raises(ShapeError, match=r"e\*2 \+ d \+ a"):
        model.update_layer(X, S.R, S.D, Tensor(np.zeros((1, tiny_config.a + 1))), S.mask)


def test_forward_rejects_wrong_feature_width(tiny_config):
    model = MergeLabelModel(tiny_config)
    with pytest.raises(ShapeError):
        model.forward(ModelInput(np.zeros((1, 3, 5)), np.ones((1, 3), bool), np.zeros((1, 3), int)))


def test_article_theme_of_constant_values(tiny_config, f64):
    model = MergeLabelModel(tiny_config)
    ff = model.ff_theme
    for w in ff.weights:
        w.data[:] = 0
    ff.biases[-1].data[:] = 0.7
    A = model.article_theme(Tensor(np.random.default_rng(0).normal(size=(1, 5, tiny_config.e))), np.ones((1, 5), bool))
    np.testing.assert_allclose(A.data, 0.7)
    with pytest.raises(ValueError):
        model.article_theme(Tensor(np.zeros((1, 0, tiny_config.e))), np.ones((1, 0), bool))


def test_merged_tokens_share_entity_embedding(tiny_config, f64):
    model = MergeLabelModel(tiny_config)
    X = Tensor(np.random.default_rng(1).uniform(-1, 1, (1, 4, tiny_config.e)))
    out = model.structure_level(X, 4, np.zeros((1, 4), int), merge_override=np.array([[0.0, 0.0, 1.0]]))
    T_ = out.T.data[0]
    np.testing.assert_allclose(T_[0], T_[1], atol=1e-12)
    np.testing.assert_allclose(T_[1], T_[2], atol=1e-12)
    W = out.W.data[0, :, :4, 0]
    assert W[3].tolist() == [0.0, 0.0, 0.0, 0.0]  # token 3 takes nothing from 1 and 2 (or past the end)
    assert W[2, 2] == 0.0  # token 2 -> token 3 crosses the boundary


def test_full_split_returns_own_candidate(tiny_config, f64):
    model = MergeLabelModel(tiny_config)
    X = Tensor(np.random.default_rng(1).uniform(-1, 1, (1, 5, tiny_config.e)))
    split = model.structure_level(X, 4, np.zeros((1, 5), int), merge_override=np.full((1, 4), 1.7))
    assert np.all(split.W.data[0, :, :4] == 0)
    # with no neighbours mixed in, each position's entity embedding is its own candidate vector
    cfg = tiny_config
    from mergelabel import nn

    D = nn.centered_cumsum(Tensor(np.zeros((1, 4, cfg.d))), 4, negate_left=True)
    cand = nn.embed_update(T.concat([nn.unfold_from(X, 4), split.D], axis=-1), model.ff_comb[0], D.mask, cfg.e)
    np.testing.assert_allclose(split.T.data, cand.data, atol=1e-12)


def test_nested_forced_merges_identical_at_level_two(tiny_config, f64):
    """'The United Kingdom government': level 1 joins 1-2, level 2 joins all four."""
    model = MergeLabelModel(tiny_config)
    X = Tensor(np.random.default_rng(2).uniform(-1, 1, (1, 4, tiny_config.e)))
    seg = np.zeros((1, 4), int)
    lv1 = model.structure_level(X, 4, seg, 0, merge_override=np.array([[1.0, 0.0, 1.0]]))
    np.testing.assert_allclose(lv1.T.data[0, 1], lv1.T.data[0, 2], atol=1e-12)
    lv2 = model.structure_level(lv1.T, 6, seg, 1, merge_override=np.zeros((1, 3)))
    for i in range(1, 4):
        np.testing.assert_allclose(lv2.T.data[0, 0], lv2.T.data[0, i], atol=1e-12)


def test_single_level_structure_reduces_to_one_level(f64):
    cfg = ModelConfig(word_dim=4, cap_dim=2, d=3, a=2, L=1, u=1, k_static=2, k_levels=(4,),
                      ff_s_hidden=(4,), ff_eu_hidden=(6,), out_hidden=(4,), theme_hidden=(3,), n_classes=3)
    model = MergeLabelModel(cfg)
    X = Tensor(np.random.default_rng(0).uniform(-1, 1, (1, 5, cfg.e)))
    seg = np.zeros((1, 5), int)
    S = model.structure_layer(X, seg)
    lv = model.structure_level(X, 4, seg)
    np.testing.assert_allclose(S.D.data, lv.W.data[:, :, :4] * lv.D.data)
    np.testing.assert_allclose(S.T.data[..., 0], lv.T.data)


def test_identity_initialisation_is_exact_without_noise(tiny_config):
    xs, xu = identity_deviation(tiny_config, noise=0.0)
    assert xs == 0.0 and xu == 0.0
    xs, xu = identity_deviation(tiny_config)
    assert max(xs, xu) <= 0.05


@pytest.mark.parametrize(
    "switch",
    [
        dict(static_layer=False),
        dict(article_theme=False),
        dict(linear_combination=True),
        dict(normalized_embed_update=False),
        dict(sentence_clipping=True),
        dict(shared_levels=False),
        dict(u=0),
    ],
)
def test_ablation_switches_run(tiny_config, switch, f64):
    cfg = replace(tiny_config, **switch)
    model = MergeLabelModel(cfg)
    out = model.forward(_input(cfg, 6, sentences=(0, 1)))
    assert np.all(np.isfinite(out.logits.data))
    if not cfg.static_layer:
        assert not any(k.startswith("static.") for k in model.params)
    if not cfg.article_theme:
        assert not any(k.startswith("theme.") for k in model.params)


def test_sentence_clipping_blocks_cross_sentence_context(tiny_config, f64):
    cfg = replace(tiny_config, sentence_clipping=True, u=0, static_layer=False, article_theme=False)
    model = MergeLabelModel(cfg)
    inp = _input(cfg, 6, sentences=(0, 1))
    base = model.forward(inp).logits.data
    inp.features[0, 3:] += 1.0  # change only the second sentence
    moved = model.forward(inp).logits.data
    np.testing.assert_array_equal(base[0, :3], moved[0, :3])


def test_same_seed_same_parameters(tiny_config):
    a, b = MergeLabelModel(tiny_config, 3), MergeLabelModel(tiny_config, 3)
    c = MergeLabelModel(tiny_config, 4)
    assert all(np.array_equal(a.params[k].data, b.params[k].data) for k in a.params)
    assert any(not np.array_equal(a.params[k].data, c.params[k].data) for k in a.params)


def test_forward_counter_and_eval_determinism(tiny_config, f64):
    model = MergeLabelModel(tiny_config)
    batch = gradcheck_batch(tiny_config)
    a = model.forward(batch).logits.data
    b = model.forward(batch).logits.data
    assert model.n_forward == 2
    np.testing.assert_array_equal(a, b)


def test_every_parameter_gets_gradient_away_from_init(tiny_config, f64):
    from mergelabel.train import compute_loss

    model = MergeLabelModel(tiny_config)
    rng = np.random.default_rng(0)
    for p in model.params.values():
        p.data = p.data + rng.uniform(-0.3, 0.3, p.shape)
    batch = gradcheck_batch(tiny_config)
    T.backward(compute_loss(model.forward(batch), batch).total)
    for name, p in model.params.items():
        assert p.grad is not None and np.any(p.grad != 0), name
