"""Building blocks shared by every layer of the network.

Feedforward networks (uniform or identity initialised), dropout, the two
unfold operators that expose a window of ``k/2`` neighbours on each side of
every position, the centred cumulative sum used for merge distances and
directions, and the gated Embed Update combination.
"""

from __future__ import annotations

from typing import NamedTuple, Sequence

import numpy as np

from . import tensor as T
from .tensor import Tensor


class FeedForward:
    """Stack of affine maps with SELU between them.

    ``linear_lanes`` hidden units at the front of every hidden layer skip the
    nonlinearity (and dropout); identity-initialised networks route the
    embedding they must pass through unchanged along these lanes.
    """

    def __init__(
        self,
        weights: Sequence[Tensor],
        biases: Sequence[Tensor],
        activation: str = "selu",
        linear_lanes: int = 0,
        dropout: float = 0.0,
    ):
        if len(weights) != len(biases) or not weights:
            raise ValueError("need one bias per weight matrix and at least one layer")
        for i, (w, b) in enumerate(zip(weights, biases)):
            if b.shape != (w.shape[1],):
                raise T.ShapeError(f"layer {i}: bias {b.shape} does not match weight {w.shape}")
            if i and weights[i - 1].shape[1] != w.shape[0]:
                raise T.ShapeError(
                    f"layer {i} expects {w.shape[0]} inputs, previous layer gives {weights[i - 1].shape[1]}"
                )
        self.weights = list(weights)
        self.biases = list(biases)
        self.activation = activation
        self.linear_lanes = linear_lanes
        self.dropout = dropout

    @property
    def dims(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[1]

    def parameters(self, prefix: str = "") -> dict[str, Tensor]:
        params = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            params[f"{prefix}w{i}"] = w
            params[f"{prefix}b{i}"] = b
        return params

    def __call__(self, x: Tensor, training: bool = False, rng: np.random.Generator | None = None) -> Tensor:
        if x.shape[-1] != self.in_dim:
            raise T.ShapeError(f"feedforward expects last extent {self.in_dim}, got {x.shape}")
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = T.matmul(h, w) + b
            if i == last:
                break
            n = self.linear_lanes
            if n:
                lanes = T.slice(h, -1, 0, n)
                rest = T.slice(h, -1, n, h.shape[-1])
                rest = dropout(T.activation(self.activation, rest), self.dropout, training, rng)
                h = T.concat([lanes, rest], axis=-1)
            else:
                h = dropout(T.activation(self.activation, h), self.dropout, training, rng)
        return h


def ff_init_uniform(
    dims: Sequence[int],
    rng: np.random.Generator,
    activation: str = "selu",
    scale: float = 0.1,
    dropout: float = 0.0,
) -> FeedForward:
    """All weights and biases drawn i.i.d. from uniform[-scale, scale]."""
    dims = list(dims)
    if len(dims) < 2:
        raise ValueError(f"need input and output dims, got {dims}")
    weights, biases = [], []
    for d_in, d_out in zip(dims[:-1], dims[1:]):
        weights.append(Tensor(rng.uniform(-scale, scale, (d_in, d_out)), requires_grad=True))
        biases.append(Tensor(rng.uniform(-scale, scale, (d_out,)), requires_grad=True))
    return FeedForward(weights, biases, activation=activation, dropout=dropout)


def ff_init_identity_eu(
    in_dim: int,
    e: int,
    hidden_dims: Sequence[int],
    rng: np.random.Generator,
    noise: float = 0.01,
    dropout: float = 0.0,
    out_dim: int | None = None,
) -> FeedForward:
    """Network whose first ``e`` outputs copy the first ``e`` inputs at init.

    Each layer carries an ``e x e`` identity block on the lane columns; lane
    columns receive nothing else, so the copy is exact whatever the noise.
    Every other weight is uniform[-noise, noise] and biases start at zero.
    The default output width is ``e + 1`` (update vector plus gate logit).
    """
    out_dim = e + 1 if out_dim is None else out_dim
    if in_dim < e or out_dim < e:
        raise ValueError(f"identity block of size {e} needs in/out dims >= {e}")
    for h in hidden_dims:
        if h < e:
            raise ValueError(f"hidden dim {h} < e={e}: identity block cannot be embedded")
    dims = [in_dim, *hidden_dims, out_dim]
    weights, biases = [], []
    for d_in, d_out in zip(dims[:-1], dims[1:]):
        w = rng.uniform(-noise, noise, (d_in, d_out)) if noise else np.zeros((d_in, d_out))
        w[:, :e] = 0.0
        w[np.arange(e), np.arange(e)] = 1.0
        weights.append(Tensor(w, requires_grad=True))
        biases.append(Tensor(np.zeros(d_out), requires_grad=True))
    return FeedForward(weights, biases, activation="selu", linear_lanes=e, dropout=dropout)


def dropout(x: Tensor, rate: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("training-mode dropout needs a random generator")
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    return x * keep


# ---------------------------------------------------------------------------
# unfold operators
# ---------------------------------------------------------------------------


def _check_kernel(k: int) -> None:
    if k < 2 or k % 2:
        raise ValueError(f"kernel size must be even and >= 2, got {k}")


def kernel_offsets(k: int) -> np.ndarray:
    """Sequence offsets of the ``k`` slots: -k/2 .. -1, +1 .. +k/2."""
    _check_kernel(k)
    h = k // 2
    return np.concatenate([np.arange(-h, 0), np.arange(1, h + 1)])


def kernel_slot(k: int, offset: int) -> int:
    """Slot index of ``offset`` in a kernel of size ``k``."""
    h = k // 2
    if offset == 0 or abs(offset) > h:
        raise ValueError(f"offset {offset} is not a neighbour slot for kernel {k}")
    return h + offset if offset < 0 else h + offset - 1


def kernel_indices(shape: tuple[int, int], k: int, segments: np.ndarray | None = None):
    """Neighbour positions ``[b, s, k]`` (clamped to range) and their validity mask.

    ``segments[b, i]`` groups positions; neighbours in another segment, or in
    a negative (padding) segment, are invalid.
    """
    b, s = shape
    offsets = kernel_offsets(k)
    pos = np.arange(s)[:, None] + offsets[None, :]
    valid = (pos >= 0) & (pos < s)
    idx = np.clip(pos, 0, max(s - 1, 0))
    idx = np.broadcast_to(idx, (b, s, k))
    valid = np.broadcast_to(valid, (b, s, k))
    if segments is not None:
        segments = np.asarray(segments)
        seg_here = segments[:, :, None]
        seg_there = segments[np.arange(b)[:, None, None], idx]
        valid = valid & (seg_here == seg_there) & (seg_here >= 0)
    return np.ascontiguousarray(idx), np.ascontiguousarray(valid)


class KernelView(NamedTuple):
    values: Tensor  # [b, s, k, c]; invalid slots hold zeros
    mask: np.ndarray  # [b, s, k] bool
    k: int


def unfold_from(x: Tensor, k: int) -> Tensor:
    """Tile each position's vector into ``k`` slots: [b, s, c] -> [b, s, k, c]."""
    _check_kernel(k)
    b, s, c = x.shape
    return T.broadcast_to(T.expand_dims(x, 2), (b, s, k, c))


def unfold_to(x: Tensor, k: int, segments: np.ndarray | None = None) -> KernelView:
    """Gather the ``k/2`` neighbours either side of every position."""
    b, s, _ = x.shape
    idx, valid = kernel_indices((b, s), k, segments)
    vals = T.take_along_batch(x, idx) * valid[..., None].astype(x.dtype)
    return KernelView(vals, valid, k)


def rewindow(x: Tensor, k: int, k_to: int) -> Tensor:
    """Zero-pad the slot axis (axis 2) of a kernel tensor from ``k`` to ``k_to``."""
    if k == k_to:
        return x
    if k_to < k or (k_to - k) % 2:
        raise ValueError(f"cannot rewindow kernel {k} to {k_to}")
    pad = (k_to - k) // 2
    shape = list(x.shape)
    shape[2] = pad
    zeros = Tensor(np.zeros(shape, dtype=x.dtype))
    return T.concat([zeros, x, zeros], axis=2)


def rewindow_mask(mask: np.ndarray, k: int, k_to: int) -> np.ndarray:
    pad = (k_to - k) // 2
    return np.pad(mask, ((0, 0), (0, 0), (pad, pad)))


def centered_cumsum(
    pairs: Tensor, k: int, segments: np.ndarray | None = None, negate_left: bool = False
) -> KernelView:
    """Accumulate pair values from each position out to its kernel neighbours.

    ``pairs[b, p]`` sits between positions ``p`` and ``p + 1``. For position
    ``i`` and neighbour offset ``o > 0`` the slot holds the sum of pairs
    ``i .. i+o-1``; for ``o < 0`` the sum of pairs ``i+o .. i-1`` (negated
    when ``negate_left``, giving the direction pointing back to the left).
    """
    _check_kernel(k)
    b, s1, c = pairs.shape
    s = s1 + 1
    h = k // 2
    _, valid = kernel_indices((b, s), k, segments)
    if s1 == 0:
        zeros = Tensor(np.zeros((b, s, k, c), dtype=pairs.dtype))
        return KernelView(zeros, valid, k)
    i = np.arange(s)[:, None]
    left_p = i + np.arange(-h, 0)[None, :]  # pair index for offsets -h .. -1
    right_p = i + np.arange(0, h)[None, :]  # pair index for offsets +1 .. +h
    left_ok = valid[:, :, :h]
    right_ok = valid[:, :, h:]
    left_idx = np.broadcast_to(np.clip(left_p, 0, s1 - 1), (b, s, h))
    right_idx = np.broadcast_to(np.clip(right_p, 0, s1 - 1), (b, s, h))
    left = T.take_along_batch(pairs, left_idx) * left_ok[..., None].astype(pairs.dtype)
    right = T.take_along_batch(pairs, right_idx) * right_ok[..., None].astype(pairs.dtype)
    left = T.directional_cumsum(left, "backward", axis=2)
    right = T.directional_cumsum(right, "forward", axis=2)
    if negate_left:
        left = -left
    out = T.concat([left, right], axis=2) * valid[..., None].astype(pairs.dtype)
    return KernelView(out, valid, k)


# ---------------------------------------------------------------------------
# Embed Update
# ---------------------------------------------------------------------------


def embed_update(
    inputs: Tensor,
    ff: FeedForward,
    mask: np.ndarray,
    e: int,
    normalized: bool = True,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Combine ``k`` per-slot update proposals into one vector per position.

    ``ff`` maps each slot of ``inputs [b, s, k, in]`` to ``e`` update values
    and one gate logit. Gates go through a sigmoid, masked slots get weight
    zero, and the output is the gate-weighted mean of the proposals (the
    plain gate-weighted sum when ``normalized`` is off). A position whose
    slots are all masked gets the zero vector.
    """
    if ff.out_dim != e + 1:
        raise T.ShapeError(f"Embed Update network must output e+1={e + 1} values, got {ff.out_dim}")
    out = ff(inputs, training=training, rng=rng)
    proposals = T.slice(out, -1, 0, e)
    gates = T.sigmoid(T.slice(out, -1, e, e + 1))
    m = np.asarray(mask, dtype=inputs.dtype)[..., None]
    gates = gates * m
    if not normalized:
        return T.reduce("sum", gates * proposals, axis=2)
    # all-masked rows: no weight anywhere, keep the denominator away from zero
    empty = (m.sum(axis=2) == 0).astype(inputs.dtype)
    weights = gates / T.expand_dims(T.reduce("sum", gates, axis=2) + empty, 2)
    # weighted mean taken around slot 0, so identical proposals come back bit-exact
    b, s, k, _ = proposals.shape
    anchor = T.slice(proposals, 2, 0, 1)
    spread = T.reduce("sum", weights * (proposals - anchor), axis=2)
    return T.reshape(anchor, (b, s, e)) * (1.0 - empty) + spread
