import numpy as np
import pytest

from mergelabel import data, synthetic
from mergelabel import tensor as T
from mergelabel.model import ModelConfig
from mergelabel.verify import gradcheck_config


def numeric_grad(f, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of the scalar function ``f`` at ``x`` (modified in place, restored)."""
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = f()
        flat[i] = orig - h
        down = f()
        flat[i] = orig
        gflat[i] = (up - down) / (2 * h)
    return g


def check_op_grad(build, *shapes, seed=0, low=-1.0, high=1.0, rtol=1e-5, atol=1e-7):
    """Compare backprop with central differences for ``sum(build(*inputs) * w)``."""
    rng = np.random.default_rng(seed)
    with T.precision(np.float64):
        xs = [T.Tensor(rng.uniform(low, high, s), requires_grad=True) for s in shapes]
        out_shape = build(*xs).shape
        w = rng.normal(size=out_shape)

        def value():
            with T.no_grad():
                return float((build(*xs).data * w).sum())

        loss = T.reduce("sum", build(*xs) * w)
        T.backward(loss)
        for x in xs:
            num = numeric_grad(value, x.data)
            np.testing.assert_allclose(x.grad, num, rtol=rtol, atol=atol)


@pytest.fixture
def f64():
    with T.precision(np.float64):
        yield


@pytest.fixture
def tiny_config() -> ModelConfig:
    return gradcheck_config()


@pytest.fixture(scope="session")
def synth():
    """Small synthetic split plus vocab and label set (shared, read-only)."""
    tr, dv, te, vecs = synthetic.generate(0, 40, 24)
    words = sorted(vecs)
    vocab = data.FeatureVocab(words, np.stack([vecs[w] for w in words]), np.mean([vecs[w] for w in words], 0), data.make_cap_table(8))
    labels = data.LabelSet.from_corpus(tr)
    return tr, dv, te, vocab, labels


@pytest.fixture
def synth_config():
    return synthetic.synthetic_model_config()


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    if mod is None or not getattr(mod, "RESULTS", None):
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
