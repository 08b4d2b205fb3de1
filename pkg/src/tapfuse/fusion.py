"""Fusion core: tokenizers, locality-biased cross-attention, the transient
state machine, temporal self-attention, and the pyramid decoder.

Forward passes are pure float64 functions of (inputs, weights). The two
attention blocks that feed gradient verification (CLWF and temporal
attention) also ship analytic backward passes checked against central
finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    EmptyNeighborhood,
    MissingForwardCache,
    ShapeMismatch,
    TimeRegression,
)
from .events import EventBatch
from .representations import EventTensor, sbt_time_surface
from .weights import FusionConfig, WeightBundle

_LN_EPS = 1e-6


@dataclass(frozen=True)
class Tokens:
    """Token values on a rectangular token grid, row-major order."""

    values: np.ndarray        # N x d
    grid: tuple[int, int]     # (rows, cols), N = rows * cols

    def __post_init__(self):
        rows, cols = self.grid
        if self.values.shape[0] != rows * cols:
            raise ShapeMismatch(
                f"{self.values.shape[0]} tokens on a {rows}x{cols} grid")
        if not np.all(np.isfinite(self.values)):
            raise ShapeMismatch("non-finite token values")

    @property
    def d(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class TransientState:
    """The fused token representation maintained between frames."""

    tokens: Tokens
    state_time: int
    frame_anchor_time: int

    def __post_init__(self):
        if self.state_time < self.frame_anchor_time:
            raise TimeRegression("state_time precedes frame anchor")


@dataclass(frozen=True)
class FeaturePyramid:
    """Three fused feature maps at strides (8, 4, 2) of the input."""

    levels: tuple[np.ndarray, np.ndarray, np.ndarray]
    strides: tuple[int, int, int] = (8, 4, 2)


# ---------------------------------------------------------------------------
# Tokenizers
# ---------------------------------------------------------------------------

def _patchify(image: np.ndarray, patch: int) -> tuple[np.ndarray, tuple[int, int]]:
    if image.ndim == 2:
        image = image[:, :, None]
    h, w, c = image.shape
    if h % patch or w % patch:
        raise ShapeMismatch(f"{h}x{w} not divisible by patch size {patch}")
    rows, cols = h // patch, w // patch
    flat = (image.reshape(rows, patch, cols, patch, c)
            .transpose(0, 2, 1, 3, 4)
            .reshape(rows * cols, patch * patch * c))
    return flat.astype(np.float64), (rows, cols)


def tokenize_frame(image: np.ndarray, weights: WeightBundle) -> Tokens:
    """Non-overlapping patch embedding of an intensity frame."""
    patch = weights.config.patch
    flat, grid = _patchify(np.asarray(image, dtype=np.float64), patch)
    w = weights["phi_i.w"]
    if flat.shape[1] != w.shape[0]:
        raise ShapeMismatch(
            f"patch dim {flat.shape[1]} != embedding fan-in {w.shape[0]}")
    return Tokens(values=flat @ w + weights["phi_i.b"], grid=grid)


def tokenize_events(tensor: EventTensor, weights: WeightBundle) -> Tokens:
    """Patch embedding of a dense event tensor (B input channels)."""
    patch = weights.config.patch
    flat, grid = _patchify(tensor.data, patch)
    w = weights["phi_e.w"]
    if flat.shape[1] != w.shape[0]:
        raise ShapeMismatch(
            f"event patch dim {flat.shape[1]} != embedding fan-in {w.shape[0]}")
    return Tokens(values=flat @ w + weights["phi_e.b"], grid=grid)


# ---------------------------------------------------------------------------
# Cross-modal locally weighted fusion
# ---------------------------------------------------------------------------

def _neighbor_table(grid: tuple[int, int], radius: int
                    ) -> tuple[np.ndarray, np.ndarray]:
    """(N, K) neighbor token indices and validity mask for Chebyshev
    neighborhoods of the given radius; K = (2*radius+1)**2 offsets in
    row-major offset order (matching the locality-bias table)."""
    rows, cols = grid
    rr, cc = np.meshgrid(np.arange(rows), np.arange(cols), indexing="ij")
    rr, cc = rr.ravel(), cc.ravel()
    offs = [(dy, dx) for dy in range(-radius, radius + 1)
            for dx in range(-radius, radius + 1)]
    idx = np.zeros((rows * cols, len(offs)), dtype=np.int64)
    mask = np.zeros((rows * cols, len(offs)), dtype=bool)
    for k, (dy, dx) in enumerate(offs):
        nr, nc = rr + dy, cc + dx
        ok = (nr >= 0) & (nr < rows) & (nc >= 0) & (nc < cols)
        idx[:, k] = np.where(ok, nr * cols + nc, 0)
        mask[:, k] = ok
    if not mask.any(axis=1).all():
        raise EmptyNeighborhood("a token has no neighbors")  # unreachable
    return idx, mask


def clwf_fuse(event_tokens: Tokens, image_tokens: Tokens,
              weights: WeightBundle, radius: int | None = None,
              cache: dict | None = None) -> Tokens:
    """Locality-masked cross-attention: each event token queries image
    tokens within Chebyshev distance <= radius on the shared token grid and
    adds the attention readout as a residual.
    """
    if event_tokens.grid != image_tokens.grid:
        raise ShapeMismatch(
            f"grids differ: {event_tokens.grid} vs {image_tokens.grid}")
    radius = weights.config.radius if radius is None else radius
    E, I = event_tokens.values, image_tokens.values
    d = E.shape[1]
    q = E @ weights["clwf.wq"] + weights["clwf.bq"]
    k = I @ weights["clwf.wk"] + weights["clwf.bk"]
    v = I @ weights["clwf.wv"] + weights["clwf.bv"]
    idx, mask = _neighbor_table(event_tokens.grid, radius)
    bias = weights["clwf.bias_table"]
    if bias.shape[0] != idx.shape[1]:
        raise ShapeMismatch(
            f"bias table has {bias.shape[0]} entries for {idx.shape[1]} offsets")
    logits = np.einsum("nd,nkd->nk", q, k[idx]) / np.sqrt(d) + bias[None, :]
    logits = np.where(mask, logits, -np.inf)
    a = np.exp(logits - logits.max(axis=1, keepdims=True))
    a /= a.sum(axis=1, keepdims=True)
    out = E + np.einsum("nk,nkd->nd", a, v[idx])
    if cache is not None:
        cache.update(E=E, I=I, q=q, k=k, v=v, a=a, idx=idx, mask=mask,
                     radius=radius, d=d, grid=event_tokens.grid)
    return Tokens(values=out, grid=event_tokens.grid)


def clwf_backward(cache: dict, upstream: np.ndarray,
                  weights: WeightBundle) -> dict[str, np.ndarray]:
    """Analytic gradients of the CLWF output w.r.t. inputs and parameters.

    Returns a dict with keys d_event, d_image and d_<param> for every
    clwf.* parameter.
    """
    if not cache or "a" not in cache:
        raise MissingForwardCache("run clwf_fuse with cache= first")
    E, I = cache["E"], cache["I"]
    q, k, v = cache["q"], cache["k"], cache["v"]
    a, idx, mask, d = cache["a"], cache["idx"], cache["mask"], cache["d"]
    g = np.asarray(upstream, dtype=np.float64)

    dE = g.copy()
    dv = np.zeros_like(v)
    # dv_i += sum_j a_{j,k} g_j over neighbor slots mapping to i
    np.add.at(dv, idx, a[:, :, None] * g[:, None, :])
    da = np.einsum("nd,nkd->nk", g, v[idx])
    da = np.where(mask, da, 0.0)
    dlogit = a * (da - np.sum(a * da, axis=1, keepdims=True))
    dbias = dlogit.sum(axis=0)
    dq = np.einsum("nk,nkd->nd", dlogit, k[idx]) / np.sqrt(d)
    dk = np.zeros_like(k)
    np.add.at(dk, idx, dlogit[:, :, None] * q[:, None, :] / np.sqrt(d))

    grads = {
        "d_clwf.wq": E.T @ dq, "d_clwf.bq": dq.sum(axis=0),
        "d_clwf.wk": I.T @ dk, "d_clwf.bk": dk.sum(axis=0),
        "d_clwf.wv": I.T @ dv, "d_clwf.bv": dv.sum(axis=0),
        "d_clwf.bias_table": dbias,
    }
    dE += dq @ weights["clwf.wq"].T
    dI = dk @ weights["clwf.wk"].T + dv @ weights["clwf.wv"].T
    grads["d_event"] = dE
    grads["d_image"] = dI
    return grads


# ---------------------------------------------------------------------------
# Transient state machine
# ---------------------------------------------------------------------------

def _layer_norm(x: np.ndarray, g: np.ndarray, b: np.ndarray) -> np.ndarray:
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return g * (x - mu) / np.sqrt(var + _LN_EPS) + b


def taf_init(frame: np.ndarray, frame_time: int, exposure_batch: EventBatch,
             weights: WeightBundle) -> TransientState:
    """Initialize the transient state from a frame and its exposure-window
    events: R = CLWF(Phi_E(F(events)), Phi_I(frame))."""
    frame = np.asarray(frame, dtype=np.float64)
    h, w = frame.shape[:2]
    tensor = sbt_time_surface(exposure_batch, w, h, weights.config.subwindows)
    etok = tokenize_events(tensor, weights)
    itok = tokenize_frame(frame, weights)
    fused = clwf_fuse(etok, itok, weights)
    return TransientState(tokens=fused, state_time=frame_time,
                          frame_anchor_time=frame_time)


def taf_update(state: TransientState, batch: EventBatch,
               weights: WeightBundle) -> TransientState:
    """Refine the state with one event batch through a pre-norm residual
    cross-attention block; an empty batch only advances state_time."""
    if batch.bin_end < state.state_time:
        raise TimeRegression(
            f"batch ends at {batch.bin_end} before state time {state.state_time}")
    if len(batch) == 0:
        return TransientState(tokens=state.tokens, state_time=batch.bin_end,
                              frame_anchor_time=state.frame_anchor_time)
    rows, cols = state.tokens.grid
    patch = weights.config.patch
    tensor = sbt_time_surface(batch, cols * patch, rows * patch,
                              weights.config.subwindows)
    etok = tokenize_events(tensor, weights)
    r = state.tokens.values
    hq = _layer_norm(r, weights["upd.ln_state.g"], weights["upd.ln_state.b"])
    hk = _layer_norm(etok.values, weights["upd.ln_events.g"],
                     weights["upd.ln_events.b"])
    q = hq @ weights["upd.wq"] + weights["upd.bq"]
    k = hk @ weights["upd.wk"] + weights["upd.bk"]
    v = hk @ weights["upd.wv"] + weights["upd.bv"]
    logits = q @ k.T / np.sqrt(r.shape[1])
    a = np.exp(logits - logits.max(axis=1, keepdims=True))
    a /= a.sum(axis=1, keepdims=True)
    out = r + (a @ v) @ weights["upd.wo"] + weights["upd.bo"]
    return TransientState(tokens=Tokens(values=out, grid=state.tokens.grid),
                          state_time=batch.bin_end,
                          frame_anchor_time=state.frame_anchor_time)


# ---------------------------------------------------------------------------
# Temporal self-attention
# ---------------------------------------------------------------------------

def sinusoidal_encoding(positions: np.ndarray, dim: int) -> np.ndarray:
    """Standard interleaved sin/cos encoding of scalar positions."""
    positions = np.asarray(positions, dtype=np.float64)
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / max(half, 1))
    ang = positions[..., None] * freqs
    enc = np.zeros(positions.shape + (dim,))
    enc[..., 0::2] = np.sin(ang)
    enc[..., 1::2] = np.cos(ang[..., : dim - half])
    return enc


def temporal_attention_forward(x: np.ndarray, weights: WeightBundle,
                               cache: dict | None = None) -> np.ndarray:
    """Per-token-position self-attention across time on a (T, N, d) stack.

    Temporal sinusoidal encodings of the step index are added to queries
    and keys only, so time-constant values stay time-constant; residual
    connection around the attention readout.
    """
    x = np.asarray(x, dtype=np.float64)
    t_len, n, d = x.shape
    pe = sinusoidal_encoding(np.arange(t_len), d)[:, None, :]
    xin = x + pe
    q = xin @ weights["tattn.wq"] + weights["tattn.bq"]
    k = xin @ weights["tattn.wk"] + weights["tattn.bk"]
    v = x @ weights["tattn.wv"] + weights["tattn.bv"]
    # (N, T, d) views: attend across time independently per token position
    qn, kn, vn = (m.transpose(1, 0, 2) for m in (q, k, v))
    logits = qn @ kn.transpose(0, 2, 1) / np.sqrt(d)
    a = np.exp(logits - logits.max(axis=2, keepdims=True))
    a /= a.sum(axis=2, keepdims=True)
    read = (a @ vn).transpose(1, 0, 2)
    out = x + read @ weights["tattn.wo"] + weights["tattn.bo"]
    if cache is not None:
        cache.update(x=x, xin=xin, q=q, k=k, v=v, a=a, read=read, d=d)
    return out


def temporal_attention(states: list[TransientState],
                       weights: WeightBundle) -> list[TransientState]:
    """Apply temporal self-attention across a window of states."""
    if not states:
        return []
    x = np.stack([s.tokens.values for s in states])
    out = temporal_attention_forward(x, weights)
    return [TransientState(tokens=Tokens(values=out[i], grid=s.tokens.grid),
                           state_time=s.state_time,
                           frame_anchor_time=s.frame_anchor_time)
            for i, s in enumerate(states)]


def temporal_attention_backward(cache: dict, upstream: np.ndarray,
                                weights: WeightBundle) -> dict[str, np.ndarray]:
    """Analytic gradients for temporal_attention_forward; returns d_x and
    d_<param> for every tattn.* parameter."""
    if not cache or "a" not in cache:
        raise MissingForwardCache("run temporal_attention_forward with cache= first")
    x, xin = cache["x"], cache["xin"]
    q, k, v, a, d = cache["q"], cache["k"], cache["v"], cache["a"], cache["d"]
    g = np.asarray(upstream, dtype=np.float64)

    dx = g.copy()
    dread = g @ weights["tattn.wo"].T
    dwo = cache["read"].reshape(-1, d).T @ g.reshape(-1, d)
    dbo = g.sum(axis=(0, 1))

    dreadn = dread.transpose(1, 0, 2)           # (N, T, d)
    vn = v.transpose(1, 0, 2)
    da = dreadn @ vn.transpose(0, 2, 1)          # (N, T, T)
    dvn = a.transpose(0, 2, 1) @ dreadn
    dlog = a * (da - np.sum(a * da, axis=2, keepdims=True))
    kn, qn = k.transpose(1, 0, 2), q.transpose(1, 0, 2)
    dqn = dlog @ kn / np.sqrt(d)
    dkn = dlog.transpose(0, 2, 1) @ qn / np.sqrt(d)
    dq = dqn.transpose(1, 0, 2)
    dk = dkn.transpose(1, 0, 2)
    dv = dvn.transpose(1, 0, 2)

    flat = lambda m: m.reshape(-1, d)
    grads = {
        "d_tattn.wq": flat(xin).T @ flat(dq), "d_tattn.bq": dq.sum(axis=(0, 1)),
        "d_tattn.wk": flat(xin).T @ flat(dk), "d_tattn.bk": dk.sum(axis=(0, 1)),
        "d_tattn.wv": flat(x).T @ flat(dv), "d_tattn.bv": dv.sum(axis=(0, 1)),
        "d_tattn.wo": dwo, "d_tattn.bo": dbo,
    }
    dx += dq @ weights["tattn.wq"].T + dk @ weights["tattn.wk"].T \
        + dv @ weights["tattn.wv"].T
    grads["d_x"] = dx
    return grads


# ---------------------------------------------------------------------------
# Pyramid decoder
# ---------------------------------------------------------------------------

def _upsample2(x: np.ndarray) -> np.ndarray:
    return np.repeat(np.repeat(x, 2, axis=0), 2, axis=1)


def decode_pyramid(state: TransientState,
                   skips: tuple[np.ndarray, np.ndarray, np.ndarray] | None,
                   weights: WeightBundle) -> FeaturePyramid:
    """Decode the token grid into 3 feature maps at strides 8/4/2 via
    nearest-neighbor upsampling, linear channel mixing, and skip addition."""
    rows, cols = state.tokens.grid
    x = state.tokens.values.reshape(rows, cols, -1)
    levels = []
    for lvl in range(3):
        if lvl > 0:
            x = _upsample2(x)
        x = x @ weights[f"dec.w{lvl}"] + weights[f"dec.b{lvl}"]
        if skips is not None and skips[lvl] is not None:
            skip = np.asarray(skips[lvl], dtype=np.float64)
            if skip.shape != x.shape:
                raise ShapeMismatch(
                    f"skip {lvl} shape {skip.shape} != {x.shape}")
            x = x + skip
        levels.append(x)
    return FeaturePyramid(levels=tuple(levels))
