"""Brute-force reference implementations and the verification suites.

The references here are deliberately naive (explicit Python loops over
positions, slots and cells) so they share no indexing code with the
vectorised operators they check.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import nn
from . import tensor as T
from .data import (
    OUTSIDE,
    Article,
    Corpus,
    LabelSet,
    Sentence,
    build_merge_targets,
    labels_from_spans,
    sentence_spans,
)
from .evaluate import EntitySpan, decode_arrays, strict_f1
from .model import MergeLabelModel, ModelConfig
from .tensor import Tensor

# ---------------------------------------------------------------------------
# reference implementations
# ---------------------------------------------------------------------------


def ref_offsets(k: int) -> list[int]:
    return [o for o in range(-(k // 2), k // 2 + 1) if o != 0]


def ref_valid(s: int, segments: np.ndarray | None, row: int, i: int, o: int) -> bool:
    j = i + o
    if j < 0 or j >= s:
        return False
    if segments is None:
        return True
    return segments[row, i] >= 0 and segments[row, i] == segments[row, j]


def ref_unfold_from(x: np.ndarray, k: int) -> np.ndarray:
    b, s, c = x.shape
    out = np.zeros((b, s, k, c), x.dtype)
    for r in range(b):
        for i in range(s):
            for slot in range(k):
                out[r, i, slot] = x[r, i]
    return out


def ref_unfold_to(x: np.ndarray, k: int, segments=None) -> tuple[np.ndarray, np.ndarray]:
    b, s, c = x.shape
    out = np.zeros((b, s, k, c), x.dtype)
    mask = np.zeros((b, s, k), bool)
    for r in range(b):
        for i in range(s):
            for slot, o in enumerate(ref_offsets(k)):
                if ref_valid(s, segments, r, i, o):
                    out[r, i, slot] = x[r, i + o]
                    mask[r, i, slot] = True
    return out, mask


def ref_centered_cumsum(pairs: np.ndarray, k: int, segments=None, negate_left: bool = False) -> np.ndarray:
    """Sum of the pair values crossed on the way from ``i`` to ``i+o``, nearest pair first."""
    b, s1, c = pairs.shape
    s = s1 + 1
    out = np.zeros((b, s, k, c), pairs.dtype)
    for r in range(b):
        for i in range(s):
            for slot, o in enumerate(ref_offsets(k)):
                if not ref_valid(s, segments, r, i, o):
                    continue
                acc = np.zeros(c, pairs.dtype)
                if o > 0:
                    for p in range(i, i + o):
                        acc = acc + pairs[r, p]
                else:
                    for p in range(i - 1, i + o - 1, -1):
                        acc = acc + pairs[r, p]
                    if negate_left:
                        acc = -acc
                out[r, i, slot] = acc
    return out


def ref_decode(
    merges: np.ndarray,
    classes: np.ndarray,
    label_names: Sequence[str],
    cutoff: float,
    sentence_ids: np.ndarray,
) -> set[EntitySpan]:
    """Enumerate every (start, end) candidate and keep the maximal merged runs."""
    n, L = classes.shape
    found: dict[tuple, EntitySpan] = {}
    for lvl in range(L):

        def joined(i: int) -> bool:
            if sentence_ids[i] != sentence_ids[i + 1]:
                return False
            return any(merges[i, up] < cutoff for up in range(lvl + 1))

        for a in range(n):
            for z in range(a, n):
                if a > 0 and joined(a - 1):
                    continue
                if z < n - 1 and joined(z):
                    continue
                if not all(joined(i) for i in range(a, z)):
                    continue
                counts: dict[int, int] = {}
                for t in range(a, z + 1):
                    counts[int(classes[t, lvl])] = counts.get(int(classes[t, lvl]), 0) + 1
                top = max(counts.values())
                winner = next(int(classes[t, lvl]) for t in range(a, z + 1) if counts[int(classes[t, lvl])] == top)
                label = label_names[winner]
                if label == OUTSIDE:
                    continue
                sp = EntitySpan(int(sentence_ids[a]), a, z + 1, lvl + 1, label)
                found.setdefault(sp.key(), sp)
    return set(found.values())


def ref_strict_f1(pred: Sequence, gold: Sequence) -> tuple[float, float, float]:
    pred_u, gold_u = [], []
    for p in pred:
        if p not in pred_u:
            pred_u.append(p)
    for g in gold:
        if g not in gold_u:
            gold_u.append(g)
    if not pred_u and not gold_u:
        return 1.0, 1.0, 1.0
    hit = 0
    for p in pred_u:
        for g in gold_u:
            if p == g:
                hit += 1
    prec = hit / len(pred_u) if pred_u else 0.0
    rec = hit / len(gold_u) if gold_u else 0.0
    return prec, rec, (2 * prec * rec / (prec + rec) if prec + rec else 0.0)


def ref_loss(M, M_hat, pair_mask, logits, labels, token_mask, w_m: float = 0.5) -> float:
    """``w_M * MAE + CE`` by explicit loops over every unmasked cell."""
    b, s1, L = M.shape
    total, count = 0.0, 0
    for r in range(b):
        for p in range(s1):
            if not pair_mask[r, p]:
                continue
            for l in range(L):
                total += abs(float(M[r, p, l]) - float(M_hat[r, p, l]))
                count += 1
    mae = total / count if count else 0.0
    ce, cells = 0.0, 0
    for r in range(b):
        for i in range(logits.shape[1]):
            if not token_mask[r, i]:
                continue
            for l in range(L):
                row = [float(v) for v in logits[r, i, l]]
                top = max(row)
                log_z = top + np.log(sum(np.exp(v - top) for v in row))
                ce += log_z - row[int(labels[r, i, l])]
                cells += 1
    return w_m * mae + ce / cells


# ---------------------------------------------------------------------------
# random case generators
# ---------------------------------------------------------------------------


def random_segments(rng: np.random.Generator, b: int, s: int) -> np.ndarray | None:
    if rng.random() < 0.25:
        return None
    seg = np.zeros((b, s), np.int64)
    for r in range(b):
        cuts = np.sort(rng.choice(np.arange(1, s), size=min(int(rng.integers(0, 4)), max(s - 1, 0)), replace=False)) if s > 1 else []
        seg[r] = np.searchsorted(np.asarray(cuts), np.arange(s), side="right")
        pad = int(rng.integers(0, s // 2 + 1)) if rng.random() < 0.3 else 0
        if pad:
            seg[r, s - pad :] = -1
    return seg


def random_nested_sentence(rng: np.random.Generator, n: int, n_levels: int, types: Sequence[str]) -> list:
    """Random well-nested spans: each level's spans are unions of runs one level down."""
    from .data import Span

    spans = []
    # level-1 entities: random disjoint runs
    units = []  # current-level blocks as (start, end, labelled)
    i = 0
    while i < n:
        ln = int(rng.integers(1, 4))
        end = min(i + ln, n)
        labelled = rng.random() < 0.5
        if labelled:
            spans.append(Span(i, end, 1, str(rng.choice(types))))
        units.append((i, end, labelled))
        i = end
    for lvl in range(2, n_levels + 1):
        merged, j = [], 0
        while j < len(units):
            take = int(rng.integers(1, 4))
            group = units[j : j + take]
            start, end = group[0][0], group[-1][1]
            if rng.random() < 0.4:
                spans.append(Span(start, end, lvl, str(rng.choice(types))))
                merged.append((start, end, True))
            else:
                # keep the lower blocks as they are
                for u in group:
                    if u[2]:
                        prev = [sp for sp in spans if (sp.start, sp.end) == (u[0], u[1]) and sp.level == lvl - 1]
                        spans += [sp._replace(level=lvl) for sp in prev]
                    merged.append(u)
            j += take
        units = merged
    return spans


# ---------------------------------------------------------------------------
# suites
# ---------------------------------------------------------------------------


@dataclass
class SuiteResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail} ({self.seconds:.1f}s)"


def check_unfold(n_cases: int = 1000, seed: int = 0) -> SuiteResult:
    rng = np.random.default_rng(seed)
    bad = 0
    for _ in range(n_cases):
        b, s, c = int(rng.integers(1, 4)), int(rng.integers(1, 13)), int(rng.integers(1, 5))
        k = 2 * int(rng.integers(1, 6))
        seg = random_segments(rng, b, s)
        dtype = rng.choice([np.float32, np.float64])
        x = rng.normal(size=(b, s, c)).astype(dtype)
        with T.precision(dtype):
            ok = _unfold_case(rng, x, k, seg)
        bad += not ok
    return SuiteResult("unfold/cumsum oracles", bad == 0, f"{n_cases - bad}/{n_cases} random shapes exact")


def _unfold_case(rng, x, k, seg) -> bool:
    b, s, c = x.shape
    ok = np.array_equal(nn.unfold_from(Tensor(x), k).data, ref_unfold_from(x, k))
    view = nn.unfold_to(Tensor(x), k, seg)
    ref_v, ref_m = ref_unfold_to(x, k, seg)
    ok &= np.array_equal(view.values.data, ref_v) and np.array_equal(view.mask, ref_m)
    if s > 1:
        pairs = rng.normal(size=(b, s - 1, c)).astype(x.dtype)
        neg = bool(rng.random() < 0.5)
        cs = nn.centered_cumsum(Tensor(pairs), k, seg, negate_left=neg)
        ok &= np.array_equal(cs.values.data, ref_centered_cumsum(pairs, k, seg, neg))
        ok &= np.array_equal(cs.mask, ref_m)
    return bool(ok)


def check_decode(n_cases: int = 1000, seed: int = 0) -> SuiteResult:
    rng = np.random.default_rng(seed)
    names = ["O", "GPE", "ORG", "PER"]
    bad_dec = bad_f1 = 0
    for _ in range(n_cases):
        n, L = int(rng.integers(1, 12)), int(rng.integers(1, 4))
        merges = rng.choice([0.0, 0.3, 0.74, 0.75, 0.9, 1.4], size=(max(n - 1, 0), L))
        classes = rng.integers(0, len(names), size=(n, L))
        sids = np.cumsum(rng.random(n) < 0.2)
        cutoff = float(rng.choice([0.5, 0.75, 0.95]))
        got = set(decode_arrays(merges, classes, names, cutoff, sids))
        bad_dec += got != ref_decode(merges, classes, names, cutoff, sids)
        universe = [(int(a), int(a) + 1, lab) for a in range(4) for lab in names[1:]]
        pred = [universe[i] for i in rng.integers(0, len(universe), int(rng.integers(0, 6)))]
        gold = [universe[i] for i in rng.integers(0, len(universe), int(rng.integers(0, 6)))]
        bad_f1 += strict_f1(pred, gold) != ref_strict_f1(pred, gold)
    ok = bad_dec == 0 and bad_f1 == 0
    return SuiteResult(
        "decode/F1 oracles", ok, f"decode {n_cases - bad_dec}/{n_cases}, strict F1 {n_cases - bad_f1}/{n_cases} exact"
    )


def check_roundtrip(n_corpora: int = 50, seed: int = 0) -> SuiteResult:
    """gold spans -> merge/label targets -> decode -> the same gold spans."""
    from .synthetic import SyntheticGrammar

    rng = np.random.default_rng(seed)
    bad = total = 0
    types = ["GPE", "ORG", "PER"]
    for c in range(n_corpora):
        if c % 2 == 0:
            corpus = SyntheticGrammar(seed + c).corpus(20, 0)
        else:
            corpus = Corpus([Article(f"r{c}")])
            L = int(rng.integers(1, 4))
            for _ in range(10):
                n = int(rng.integers(1, 12))
                spans = random_nested_sentence(rng, n, L, types)
                corpus.articles[0].sentences.append(Sentence([f"w{i}" for i in range(n)], labels_from_spans(spans, n, L)))
        L = corpus.n_levels
        labels = LabelSet.from_corpus(corpus)
        sents = corpus.sentences()
        tg = build_merge_targets(sents, L, labels)
        sids = np.concatenate([np.full(len(s), i) for i, s in enumerate(sents)])
        pos = np.concatenate([np.arange(len(s)) for s in sents])
        got = {sp.key() for sp in decode_arrays(tg.merges, tg.labels, labels.names, 0.75, sids, pos)}
        want = {(i, sp.start, sp.end, sp.label) for i, s in enumerate(sents) for sp in sentence_spans(s)}
        bad += got != want
        total += 1
    return SuiteResult("target round trip", bad == 0, f"{total - bad}/{total} corpora reproduced exactly")


def check_loss(n_cases: int = 50, seed: int = 0) -> SuiteResult:
    from .data import Batch
    from .model import ModelOutput, StructureOutput
    from .train import compute_loss

    rng = np.random.default_rng(seed)
    worst = 0.0
    perfect = True
    for _ in range(n_cases):
        b, s, L, C = int(rng.integers(1, 3)), int(rng.integers(2, 9)), int(rng.integers(1, 4)), int(rng.integers(2, 5))
        with T.precision(np.float64):
            M = Tensor(rng.uniform(0, 2, (b, s - 1, L)))
            logits = Tensor(rng.normal(0, 2, (b, s, L, C)))
        tok = rng.random((b, s)) < 0.8
        tok[:, 0] = True
        labels = rng.integers(0, C, (b, s, L))
        M_hat = rng.integers(0, 2, (b, s - 1, L)).astype(np.float64)
        pair = tok[:, :-1] & tok[:, 1:]
        batch = Batch(rng.normal(size=(b, s, 1)), tok, np.zeros((b, s), np.int64), labels=labels, merges=M_hat, pair_mask=pair)
        out = ModelOutput(logits, StructureOutput(None, None, None, M, [], None), None)
        got = compute_loss(out, batch, 0.5).total.item()
        want = ref_loss(M.data, M_hat, pair, logits.data, labels, tok, 0.5)
        worst = max(worst, abs(got - want))
        exact = ModelOutput(logits, StructureOutput(None, None, None, Tensor(M_hat), [], None), None)
        perfect &= compute_loss(exact, batch, 0.5).mae_m.item() == 0.0
    ok = worst <= 1e-6 and perfect
    return SuiteResult("loss oracle", ok, f"max |loss - oracle| = {worst:.2e}, perfect-merge MAE exactly 0: {perfect}")


def gradcheck_config() -> ModelConfig:
    """The tiny float64 configuration used for the full-model gradient check."""
    return ModelConfig(
        word_dim=4, cap_dim=2, d=4, a=3, L=2, u=1, k_static=4, k_levels=(4, 6),
        ff_s_hidden=(5,), ff_eu_hidden=(7,), out_hidden=(5,), theme_hidden=(4,), n_classes=3,
    )


def gradcheck_batch(config: ModelConfig, s: int = 7, seed: int = 0):
    from .data import Batch

    rng = np.random.default_rng([seed, 3])
    sid = np.array([[0] * (s // 2) + [1] * (s - s // 2)])
    return Batch(
        features=rng.uniform(-1, 1, (1, s, config.e)),
        token_mask=np.ones((1, s), bool),
        sentence_ids=sid,
        positions=np.concatenate([np.arange(s // 2), np.arange(s - s // 2)])[None],
        labels=rng.integers(0, config.n_classes, (1, s, config.L)),
        merges=rng.integers(0, 2, (1, s - 1, config.L)).astype(np.float64),
        pair_mask=np.ones((1, s - 1), bool),
    )


@dataclass
class GradCheckReport:
    n_params: int
    n_scalars: int
    failures: list[tuple[str, tuple, float, float]]
    max_abs_err: float
    seconds: float

    @property
    def passed(self) -> bool:
        return not self.failures


def gradient_check(
    config: ModelConfig | None = None,
    seed: int = 0,
    h: float = 1e-6,
    rtol: float = 1e-3,
    atol: float = 1e-5,
    perturb: float = 0.3,
) -> GradCheckReport:
    """Central differences against backprop for every scalar of every parameter.

    Parameters are first jittered by ``perturb`` so no unit sits at the
    symmetric identity point, where many gradients vanish exactly.
    """
    from .train import compute_loss

    config = config or gradcheck_config()
    start = time.perf_counter()
    with T.precision(np.float64):
        model = MergeLabelModel(config, seed)
        rng = np.random.default_rng([seed, 4])
        for p in model.params.values():
            p.data = p.data + rng.uniform(-perturb, perturb, p.shape)
        batch = gradcheck_batch(config, seed=seed)

        def loss() -> Tensor:
            return compute_loss(model.forward(batch, training=False), batch, config.w_m).total

        model.zero_grad()
        T.backward(loss())
        analytic = {k: np.zeros(p.shape) if p.grad is None else p.grad.copy() for k, p in model.params.items()}
        failures, worst, count = [], 0.0, 0
        with T.no_grad():
            for name, p in model.params.items():
                flat = p.data.reshape(-1)
                for j in range(flat.size):
                    orig = flat[j]
                    flat[j] = orig + h
                    up = loss().item()
                    flat[j] = orig - h
                    down = loss().item()
                    flat[j] = orig
                    num = (up - down) / (2 * h)
                    ana = float(analytic[name].reshape(-1)[j])
                    err = abs(num - ana)
                    worst = max(worst, err)
                    count += 1
                    if err > atol + rtol * abs(num):
                        failures.append((name, np.unravel_index(j, p.shape), num, ana))
    return GradCheckReport(len(model.params), count, failures, worst, time.perf_counter() - start)


def check_gradients(seed: int = 0) -> SuiteResult:
    rep = gradient_check(seed=seed)
    detail = f"{rep.n_scalars - len(rep.failures)}/{rep.n_scalars} scalars in {rep.n_params} tensors, max err {rep.max_abs_err:.2e}"
    return SuiteResult("gradient check", rep.passed, detail)


def identity_deviation(config: ModelConfig, noise: float | None = None, seed: int = 0, s: int = 9) -> tuple[float, float]:
    """Max |X_s - X| after the Static Layer and max |X_u - X_cur| after one Update Layer."""
    from dataclasses import replace

    cfg = config if noise is None else replace(config, identity_noise=noise)
    with T.precision(np.float64), T.no_grad():
        model = MergeLabelModel(cfg, seed)
        rng = np.random.default_rng([seed, 5])
        X = Tensor(rng.uniform(-1, 1, (1, s, cfg.e)))
        seg = np.zeros((1, s), np.int64)
        X_s = model.static_layer(X, seg)
        S = model.structure_layer(X, seg)
        A = model.article_theme(X, np.ones((1, s), bool)) if cfg.article_theme else None
        X_u = model.update_layer(X, S.R, S.D, A, S.mask)
    return float(np.abs(X_s.data - X.data).max()), float(np.abs(X_u.data - X.data).max())


def check_identity(seed: int = 0) -> SuiteResult:
    cfg = gradcheck_config()
    exact = identity_deviation(cfg, noise=0.0, seed=seed)
    noisy = identity_deviation(ModelConfig(), seed=seed)
    ok = exact == (0.0, 0.0) and max(noisy) <= 0.05
    return SuiteResult(
        "identity init", ok, f"noise 0: deviation {max(exact):.1e}; default noise: deviation {max(noisy):.4f} (<= 0.05)"
    )


def check_merge_extremes(seed: int = 0) -> SuiteResult:
    """M forced to exact 0/1 patterns: members identical, cross-boundary weights exactly 0."""
    rng = np.random.default_rng(seed)
    cfg = gradcheck_config()
    worst, leaked = 0.0, 0
    with T.precision(np.float64), T.no_grad():
        model = MergeLabelModel(cfg, seed)
        for _ in range(100):
            s = int(rng.integers(2, 10))
            k = 2 * int(rng.integers(s // 2 + 1, s + 1))  # window covers the whole row
            M = rng.integers(0, 2, (1, s - 1)).astype(np.float64)
            X = Tensor(rng.uniform(-1, 1, (1, s, cfg.e)))
            out = model.structure_level(X, k, np.zeros((1, s), np.int64), merge_override=M)
            group = np.concatenate([[0], np.cumsum(M[0])])
            W = out.W.data[0, :, :k, 0]
            for i in range(s):
                for slot, o in enumerate(ref_offsets(k)):
                    j = i + o
                    if 0 <= j < s and group[j] != group[i] and W[i, slot] != 0.0:
                        leaked += 1
                for j in range(s):
                    if group[j] == group[i]:
                        worst = max(worst, float(np.abs(out.T.data[0, i] - out.T.data[0, j]).max()))
    ok = worst <= 1e-6 and leaked == 0
    return SuiteResult("merge extremes", ok, f"max member difference {worst:.1e}, non-zero cross-boundary weights {leaked}")


SUITES: dict[str, Callable[[int], SuiteResult]] = {
    "gradient": check_gradients,
    "identity": check_identity,
    "merge-extremes": check_merge_extremes,
    "unfold": check_unfold,
    "decode": check_decode,
    "roundtrip": check_roundtrip,
    "loss": check_loss,
}


def run_suites(names: Sequence[str] | None = None, seed: int = 0) -> list[SuiteResult]:
    results = []
    for name in names or list(SUITES):
        if name not in SUITES:
            raise ValueError(f"unknown suite {name!r}; choose from {', '.join(SUITES)}")
        t0 = time.perf_counter()
        res = SUITES[name](seed=seed)
        res.seconds = time.perf_counter() - t0
        results.append(res)
    return results
