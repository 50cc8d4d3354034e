"""The Merge-and-Label network.

Static Layer -> (Structure Layer -> Update Layer) x u -> Structure Layer ->
Output Layer. The Structure Layer predicts a non-negative merge value for
every adjacent pair at each of ``L`` levels and builds entity embeddings as
clipped, normalised averages over each position's kernel window.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import nn
from . import tensor as T
from .tensor import Tensor


@dataclass
class ModelConfig:
    word_dim: int = 300
    cap_dim: int = 20
    d: int = 200
    a: int = 50
    L: int = 3
    u: int = 3
    k_static: int = 6
    k_levels: tuple[int, ...] = (10, 20, 30)
    ff_s_hidden: tuple[int, ...] = (200, 200)
    ff_eu_hidden: tuple[int, ...] = (320, 320)
    out_hidden: tuple[int, ...] = (200,)
    theme_hidden: tuple[int, ...] = (200,)
    dropout: float = 0.1
    input_dropout: float = 0.2
    n_classes: int = 2
    w_m: float = 0.5
    cutoff: float = 0.75
    lr: float = 0.0005
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    init_scale: float = 0.1
    identity_noise: float = 0.01
    # architecture switches (ablations)
    static_layer: bool = True
    article_theme: bool = True
    linear_combination: bool = False
    normalized_embed_update: bool = True
    sentence_clipping: bool = False
    shared_levels: bool = True

    def __post_init__(self):
        self.k_levels = tuple(int(k) for k in self.k_levels)
        for name in ("ff_s_hidden", "ff_eu_hidden", "out_hidden", "theme_hidden"):
            setattr(self, name, tuple(int(h) for h in getattr(self, name)))
        self.validate()

    @property
    def e(self) -> int:
        return self.word_dim + self.cap_dim

    @property
    def k_max(self) -> int:
        return self.k_levels[-1]

    def validate(self) -> None:
        if self.L < 1:
            raise ValueError(f"L must be >= 1, got {self.L}")
        if self.u < 0:
            raise ValueError(f"u must be >= 0, got {self.u}")
        if len(self.k_levels) != self.L:
            raise ValueError(f"need {self.L} level kernels, got {list(self.k_levels)}")
        for k in (self.k_static, *self.k_levels):
            if k < 2 or k % 2:
                raise ValueError(f"kernel sizes must be even and >= 2, got {k}")
        if any(b < a for a, b in zip(self.k_levels, self.k_levels[1:])):
            raise ValueError(f"level kernels must be non-decreasing, got {list(self.k_levels)}")
        if any(h < self.e for h in self.ff_eu_hidden):
            raise ValueError(f"Embed Update hidden dims {self.ff_eu_hidden} must be >= e={self.e}")
        if self.n_classes < 2:
            raise ValueError("need at least the outside class and one entity class")
        for rate in (self.dropout, self.input_dropout):
            if not 0 <= rate < 1:
                raise ValueError(f"dropout rates must lie in [0, 1), got {rate}")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def field_types(cls) -> dict[str, type]:
        return {f.name: f.type for f in dataclasses.fields(cls)}


class StructureOutput(NamedTuple):
    T: Tensor  # [b, s, e, L] entity embeddings per level
    R: Tensor  # [b, s, K, e] neighbour entity views
    D: Tensor  # [b, s, K, d] neighbour directions
    M: Tensor  # [b, s-1, L] merge values
    levels: list  # per-level LevelOutput
    mask: np.ndarray  # [b, s, K] validity of the final-kernel slots


class LevelOutput(NamedTuple):
    T: Tensor  # [b, s, e]
    D_pair: Tensor  # [b, s-1, d]
    M_pair: Tensor  # [b, s-1, 1]
    W: Tensor  # [b, s, k+1, 1]; last slot is the position itself
    D: Tensor  # [b, s, k, d]
    mask: np.ndarray  # [b, s, k]
    k: int


class ModelOutput(NamedTuple):
    logits: Tensor  # [b, s, L, C]
    structure: StructureOutput
    X_u: Tensor  # [b, s, e]


@dataclass
class ModelInput:
    """What the network needs from a batch."""

    features: np.ndarray  # [b, s, e]
    token_mask: np.ndarray  # [b, s] bool
    sentence_ids: np.ndarray  # [b, s] int, -1 on padding

    def segments(self, by_sentence: bool) -> np.ndarray:
        if by_sentence:
            return np.where(self.token_mask, self.sentence_ids, -1)
        return np.where(self.token_mask, 0, -1)


class MergeLabelModel:
    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        self.dropout_rng = np.random.default_rng([seed, 1])
        self.n_forward = 0
        self.params: dict[str, Tensor] = {}
        self._build()

    # -- construction -----------------------------------------------------

    def _uniform_ff(self, name: str, dims) -> nn.FeedForward:
        c = self.config
        ff = nn.ff_init_uniform(dims, self.rng, scale=c.init_scale, dropout=c.dropout)
        self._register(name, ff)
        return ff

    def _identity_ff(self, name: str, in_dim: int) -> nn.FeedForward:
        c = self.config
        ff = nn.ff_init_identity_eu(
            in_dim, c.e, c.ff_eu_hidden, self.rng, noise=c.identity_noise, dropout=c.dropout
        )
        self._register(name, ff)
        return ff

    def _register(self, name: str, ff: nn.FeedForward) -> None:
        for key, p in ff.parameters(prefix=f"{name}.").items():
            p.name = key
            self.params[key] = p

    def _build(self) -> None:
        c = self.config
        e, d, a = c.e, c.d, c.a
        if c.static_layer:
            pos = self.rng.uniform(-c.init_scale, c.init_scale, (c.k_static, e))
            self.pos_encoding = Tensor(pos, requires_grad=True, name="static.pos")
            self.params["static.pos"] = self.pos_encoding
            self.ff_static = self._identity_ff("static.eu", 2 * e)
        n_struct = 1 if c.shared_levels else c.L
        self.ff_s = [self._uniform_ff(f"structure.ff_s{i}", [2 * e, *c.ff_s_hidden, d + 1]) for i in range(n_struct)]
        self.ff_comb = []
        for i in range(n_struct):
            if c.linear_combination:
                lin = nn.FeedForward([Tensor(np.eye(e), requires_grad=True)], [Tensor(np.zeros(e), requires_grad=True)])
                self._register(f"structure.linear{i}", lin)
                self.ff_comb.append(lin)
            else:
                self.ff_comb.append(self._identity_ff(f"structure.eu{i}", e + d))
        z_width = 2 * e + d + (a if c.article_theme else 0)
        self.ff_update = [self._identity_ff(f"update{r}.eu", z_width) for r in range(c.u)]
        if c.article_theme:
            self.ff_theme = self._uniform_ff("theme.ff", [e, *c.theme_hidden, a + 1])
        self.ff_out = self._uniform_ff("output.ff", [e, *c.out_hidden, c.n_classes])

    def parameters(self) -> dict[str, Tensor]:
        return self.params

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {k: p.data for k, p in self.params.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for k, p in self.params.items():
            if k not in arrays:
                raise KeyError(f"missing parameter {k}")
            if arrays[k].shape != p.shape:
                raise T.ShapeError(f"parameter {k}: expected {p.shape}, got {arrays[k].shape}")
            p.data = np.array(arrays[k], dtype=p.dtype)

    # -- layers -------------------------------------------------------------

    def static_layer(self, X: Tensor, segments: np.ndarray, training: bool = False) -> Tensor:
        c = self.config
        k = c.k_static
        view = nn.unfold_to(X, k, segments)
        to_part = view.values + self.pos_encoding
        I_s = T.concat([nn.unfold_from(X, k), to_part], axis=-1)
        return nn.embed_update(
            I_s, self.ff_static, view.mask, c.e, c.normalized_embed_update, training, self.dropout_rng
        )

    def structure_level(
        self,
        X: Tensor,
        k: int,
        segments: np.ndarray,
        level: int = 0,
        training: bool = False,
        merge_override: np.ndarray | None = None,
    ) -> LevelOutput:
        """One level of merging; ``merge_override [b, s-1]`` replaces the predicted merge values."""
        c = self.config
        b, s, e = X.shape
        share = 0 if c.shared_levels else level
        if s < 2:
            empty_d = Tensor(np.zeros((b, 0, c.d), dtype=X.dtype))
            empty_m = Tensor(np.zeros((b, 0, 1), dtype=X.dtype))
            _, mask = nn.kernel_indices((b, s), k, segments)
            W = Tensor(np.concatenate([np.zeros((b, s, k, 1)), np.ones((b, s, 1, 1))], axis=2).astype(X.dtype))
            return LevelOutput(X, empty_d, empty_m, W, Tensor(np.zeros((b, s, k, c.d), dtype=X.dtype)), mask, k)

        pair_in = T.concat([T.slice(X, 1, 0, s - 1), T.slice(X, 1, 1, s)], axis=-1)
        pair_out = self.ff_s[share](pair_in, training, self.dropout_rng)
        D_pair = T.slice(pair_out, -1, 0, c.d)
        M_pair = T.softplus(T.slice(pair_out, -1, c.d, c.d + 1))
        if merge_override is not None:
            M_pair = Tensor(np.asarray(merge_override, dtype=X.dtype).reshape(b, s - 1, 1))

        D_view = nn.centered_cumsum(D_pair, k, segments, negate_left=True)
        M_view = nn.centered_cumsum(M_pair, k, segments)
        mask = D_view.mask
        m = mask[..., None].astype(X.dtype)
        W_nbr = T.maximum(1.0 - M_view.values, 0.0) * m

        if c.linear_combination:
            cand = self.ff_comb[share](X)
        else:
            eu_in = T.concat([nn.unfold_from(X, k), D_view.values], axis=-1)
            cand = nn.embed_update(
                eu_in, self.ff_comb[share], mask, e, c.normalized_embed_update, training, self.dropout_rng
            )
        nbr = nn.unfold_to(cand, k, segments).values
        slots = T.concat([nbr, T.expand_dims(cand, 2)], axis=2)
        W = T.concat([W_nbr, Tensor(np.ones((b, s, 1, 1), dtype=X.dtype))], axis=2)
        T_next = T.reduce("sum", W * slots, axis=2) / T.reduce("sum", W, axis=2)
        return LevelOutput(T_next, D_pair, M_pair, W, D_view.values, mask, k)

    def structure_layer(self, X: Tensor, segments: np.ndarray, training: bool = False) -> StructureOutput:
        c = self.config
        K = c.k_max
        levels = []
        cur = X
        for l, k in enumerate(c.k_levels):
            out = self.structure_level(cur, k, segments, l, training)
            levels.append(out)
            cur = out.T
        _, mask_K = nn.kernel_indices(X.shape[:2], K, segments)

        def nbr_weights(lv: LevelOutput) -> Tensor:
            return nn.rewindow(T.slice(lv.W, 2, 0, lv.k), lv.k, K)

        D = None
        R = None
        for l, lv in enumerate(levels):
            w_here = nbr_weights(lv)
            w_next = nbr_weights(levels[l + 1]) if l + 1 < len(levels) else w_here
            d_term = w_here * nn.rewindow(lv.D, lv.k, K)
            r_term = w_next * nn.unfold_to(lv.T, K, segments).values
            D = d_term if D is None else D + d_term
            R = r_term if R is None else R + r_term

        T_all = T.stack([lv.T for lv in levels], axis=-1)
        M = T.concat([lv.M_pair for lv in levels], axis=-1)
        return StructureOutput(T_all, R, D, M, levels, mask_K)

    def article_theme(self, X: Tensor, token_mask: np.ndarray, training: bool = False) -> Tensor:
        c = self.config
        if X.shape[1] == 0 or not np.any(token_mask):
            raise ValueError("article theme of an empty article")
        out = self.ff_theme(X, training, self.dropout_rng)
        values = T.slice(out, -1, 0, c.a)
        gates = T.sigmoid(T.slice(out, -1, c.a, c.a + 1)) * np.asarray(token_mask, dtype=X.dtype)[..., None]
        return T.reduce("sum", gates * values, axis=1) / T.reduce("sum", gates, axis=1)

    def update_layer(
        self,
        X_cur: Tensor,
        R: Tensor,
        D: Tensor,
        A: Tensor | None,
        mask: np.ndarray,
        repetition: int = 0,
        training: bool = False,
    ) -> Tensor:
        c = self.config
        b, s, e = X_cur.shape
        K = R.shape[2]
        parts = [nn.unfold_from(X_cur, K), R, D]
        if A is not None:
            parts.append(T.broadcast_to(T.reshape(A, (b, 1, 1, A.shape[-1])), (b, s, K, A.shape[-1])))
        Z = T.concat(parts, axis=-1)
        ff = self.ff_update[repetition]
        if Z.shape[-1] != ff.in_dim:
            raise T.ShapeError(
                f"Update Layer input width {Z.shape[-1]} != expected {ff.in_dim} (e*2 + d + a)"
            )
        return nn.embed_update(Z, ff, mask, e, c.normalized_embed_update, training, self.dropout_rng)

    def output_layer(self, T_all: Tensor, training: bool = False) -> Tensor:
        b, s, e, L = T_all.shape
        stacked = T.stack([T.slice(T_all, -1, l, l + 1).reshape(b, s, e) for l in range(L)], axis=2)
        return self.ff_out(stacked, training, self.dropout_rng)

    def forward(self, batch: ModelInput, training: bool = False) -> ModelOutput:
        c = self.config
        self.n_forward += 1
        X = Tensor(batch.features)
        if X.ndim != 3 or X.shape[-1] != c.e:
            raise T.ShapeError(f"features must be [b, s, {c.e}], got {X.shape}")
        if X.shape[1] == 0:
            raise ValueError("batch has no tokens")
        segments = batch.segments(c.sentence_clipping)
        X = nn.dropout(X, c.input_dropout, training, self.dropout_rng)
        cur = self.static_layer(X, segments, training) if c.static_layer else X
        A = self.article_theme(X, batch.token_mask, training) if c.article_theme else None
        for r in range(c.u):
            S = self.structure_layer(cur, segments, training)
            cur = self.update_layer(cur, S.R, S.D, A, S.mask, r, training)
        S = self.structure_layer(cur, segments, training)
        logits = self.output_layer(S.T, training)
        return ModelOutput(logits, S, cur)

    __call__ = forward
