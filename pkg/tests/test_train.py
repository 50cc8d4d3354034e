import numpy as np
import pytest

from mergelabel import data, synthetic
from mergelabel.model import MergeLabelModel, ModelOutput, StructureOutput
from mergelabel.tensor import ShapeError, Tensor
from mergelabel.train import AdamState, TrainingDiverged, adam_step, compute_loss, lr_schedule, train
from mergelabel.verify import check_loss, gradcheck_batch


def _out(M, logits):
    return ModelOutput(Tensor(logits), StructureOutput(None, None, None, Tensor(M), [], None), None)


def _batch(labels, merges):
    b, s, L = labels.shape
    return data.Batch(np.zeros((b, s, 1)), np.ones((b, s), bool), np.zeros((b, s), np.int64), labels=labels, merges=merges)


def test_mae_extremes(f64):
    labels = np.zeros((1, 3, 2), int)
    logits = np.zeros((1, 3, 2, 2))
    assert compute_loss(_out(np.zeros((1, 2, 2)), logits), _batch(labels, np.zeros((1, 2, 2)))).mae_m.item() == 0.0
    assert compute_loss(_out(np.zeros((1, 2, 2)), logits), _batch(labels, np.ones((1, 2, 2)))).mae_m.item() == 1.0


def test_total_is_weighted_sum(f64):
    rng = np.random.default_rng(0)
    parts = compute_loss(_out(rng.uniform(0, 2, (1, 3, 2)), rng.normal(size=(1, 4, 2, 3))),
                         _batch(rng.integers(0, 3, (1, 4, 2)), rng.integers(0, 2, (1, 3, 2)).astype(float)), w_m=0.5)
    assert parts.total.item() == pytest.approx(0.5 * parts.mae_m.item() + parts.ce_c.item())


def test_loss_matches_scalar_oracle():
    assert check_loss(n_cases=20, seed=3).passed


def test_loss_shape_mismatch_rejected(f64):
    with pytest.raises(ShapeError):
        compute_loss(_out(np.zeros((1, 3, 2)), np.zeros((1, 3, 2, 2))), _batch(np.zeros((1, 3, 2), int), np.zeros((1, 2, 2))))


def test_lr_schedule():
    assert lr_schedule(0, 0.0005, 60) == 0.0005
    assert lr_schedule(11, 0.0005, 60) == 0.0005
    assert lr_schedule(12, 0.0005, 60) == 0.00025
    assert lr_schedule(59, 0.0005, 60) == 0.0005 * 0.5**4
    assert lr_schedule(30, 0.0005, 150) == 0.00025
    assert lr_schedule(3, 0.1, 7) == 0.1 * 0.5**3  # period floors to 1


def test_adam_first_step_has_magnitude_lr(f64):
    p = {"w": Tensor(np.array([1.0, -2.0, 3.0]))}
    adam_step(p, {"w": np.array([0.5, -4.0, 1e-3])}, AdamState(), lr=0.01)
    np.testing.assert_allclose(p["w"].data, [0.99, -1.99, 2.99], atol=1e-7)


def test_adam_zero_gradient_leaves_parameter(f64):
    p = {"w": Tensor(np.array([1.0, 2.0]))}
    adam_step(p, {"w": np.zeros(2)}, AdamState(), lr=0.1)
    np.testing.assert_array_equal(p["w"].data, [1.0, 2.0])


def test_adam_minimises_quadratic(f64):
    x = {"x": Tensor(np.array([5.0]))}
    st = AdamState()
    losses = []
    for _ in range(100):
        losses.append(float((x["x"].data[0] - 1.0) ** 2))
        adam_step(x, {"x": 2 * (x["x"].data - 1.0)}, st, lr=0.1)
    assert losses[-1] < 0.05 * losses[0]
    assert all(b <= a + 1e-12 for a, b in zip(losses[:20], losses[1:20]))


def _tiny_run(synth, epochs, seed=0, **kw):
    tr, dv, _, vocab, labels = synth
    cfg = synthetic.synthetic_model_config(u=1, **kw)
    tb = data.make_batches(tr, vocab, labels, 3, 200)
    db = data.make_batches(dv, vocab, None, None, 200)
    from mergelabel.evaluate import gold_spans

    model = MergeLabelModel(cfg, seed)
    return model, train(model, tb, epochs, seed, db, gold_spans(dv), labels.names)


def test_training_is_deterministic(synth):
    _, a = _tiny_run(synth, 2, seed=4)
    _, b = _tiny_run(synth, 2, seed=4)
    assert a.log_text() == b.log_text()


def test_loss_decreases_over_first_five_epochs(synth):
    _, res = _tiny_run(synth, 5)
    losses = [r.loss for r in res.history]
    assert losses[-1] < losses[0]
    assert res.best_epoch >= 0 and res.history[res.best_epoch].dev["f1"] == res.best_f1


def test_best_dev_parameters_restored(synth):
    model, res = _tiny_run(synth, 3)
    tr, dv, _, vocab, labels = synth
    from mergelabel.evaluate import decode_all, gold_spans, predict, score

    db = data.make_batches(dv, vocab, None, None, 200)
    f1 = score(decode_all(predict(model, db), db, labels.names, model.config.cutoff), gold_spans(dv))["f1"]
    assert f1 == res.best_f1


@pytest.mark.filterwarnings("ignore:invalid value encountered:RuntimeWarning")
def test_divergence_saves_last_finite_state(tiny_config, f64):
    model = MergeLabelModel(tiny_config)
    good = gradcheck_batch(tiny_config)
    bad = gradcheck_batch(tiny_config)
    bad.features = np.full_like(bad.features, np.nan)
    saved = []
    with pytest.raises(TrainingDiverged) as info:
        train(model, [good, bad], 1, on_diverge=lambda m: saved.append({k: v.copy() for k, v in m.state_arrays().items()}))
    assert len(saved) == 1 and all(np.all(np.isfinite(v)) for v in saved[0].values())
    assert isinstance(info.value.history, list)


def test_merge_weight_zero_still_learns_labels(synth):
    _, res = _tiny_run(synth, 3, w_m=0.0)
    assert res.history[-1].ce < res.history[0].ce
    assert res.history[-1].mae > 0.2
