"""Trajectory refinement and sliding-window tracking orchestration.

The refiner samples bilinear feature patches around current position
estimates on the 3-level pyramid, correlates them against the window's
anchor patch, encodes the correlation matrices with per-level MLPs, and
runs a small spatio-temporal transformer that predicts residual position
and visibility updates. track_sequence drives the transient-fusion state
machine along the query-time grid and slides W-step windows with 50%
overlap over the resulting pyramids.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import GridMismatch, QueryOutOfRange, ShapeMismatch
from .events import EventStream, Timeline, bin_events, exposure_window_events
from .fusion import (
    FeaturePyramid,
    TransientState,
    decode_pyramid,
    sinusoidal_encoding,
    taf_init,
    taf_update,
    temporal_attention,
    _layer_norm,
)
from .weights import WeightBundle


@dataclass(frozen=True)
class QueryPoint:
    t_q: int
    x: float
    y: float


@dataclass
class TrackState:
    """One query's per-window estimate: positions, visibility logits."""

    positions: np.ndarray          # W x 2
    visibility_logits: np.ndarray  # W
    window_times: np.ndarray       # W, microseconds

    def copy(self) -> "TrackState":
        return TrackState(self.positions.copy(), self.visibility_logits.copy(),
                          self.window_times.copy())


@dataclass(frozen=True)
class TrackSet:
    """Per-query trajectories on the query-time grid."""

    times: np.ndarray       # T
    positions: np.ndarray   # Q x T x 2
    visibility: np.ndarray  # Q x T in {0, 1}

    def __post_init__(self):
        if self.positions.shape[:2] != (self.positions.shape[0], len(self.times)):
            raise GridMismatch("positions/time grid mismatch")
        if self.visibility.shape != self.positions.shape[:2]:
            raise GridMismatch("visibility/positions shape mismatch")


def serialize_track_set(ts: TrackSet) -> bytes:
    """Header '# queries=Q steps=T', then one line per step:
    t_us,q0x,q0y,q0v,q1x,... with 9 significant digits."""
    q, t = ts.positions.shape[:2]
    buf = io.StringIO()
    buf.write(f"# queries={q} steps={t}\n")
    for ti in range(t):
        parts = [str(int(ts.times[ti]))]
        for qi in range(q):
            parts.append(f"{ts.positions[qi, ti, 0]:.9g}")
            parts.append(f"{ts.positions[qi, ti, 1]:.9g}")
            parts.append(f"{float(ts.visibility[qi, ti]):.9g}")
        buf.write(",".join(parts) + "\n")
    return buf.getvalue().encode("utf-8")


def parse_track_set(data: bytes) -> TrackSet:
    lines = [ln for ln in data.decode("utf-8").split("\n") if ln.strip()]
    if not lines or not lines[0].startswith("#"):
        raise GridMismatch("missing track header")
    header = dict(tok.split("=") for tok in lines[0][1:].split())
    q, t = int(header["queries"]), int(header["steps"])
    if len(lines) - 1 != t:
        raise GridMismatch(f"expected {t} step lines, got {len(lines) - 1}")
    times = np.zeros(t, dtype=np.int64)
    positions = np.zeros((q, t, 2))
    visibility = np.zeros((q, t), dtype=np.int64)
    for ti, line in enumerate(lines[1:]):
        fields = line.split(",")
        if len(fields) != 1 + 3 * q:
            raise GridMismatch(f"step {ti}: expected {1 + 3 * q} fields")
        times[ti] = int(fields[0])
        for qi in range(q):
            positions[qi, ti, 0] = float(fields[1 + 3 * qi])
            positions[qi, ti, 1] = float(fields[2 + 3 * qi])
            visibility[qi, ti] = int(float(fields[3 + 3 * qi]) > 0.5)
    return TrackSet(times=times, positions=positions, visibility=visibility)


# ---------------------------------------------------------------------------
# Patch sampling and correlation features
# ---------------------------------------------------------------------------

def sample_patch(level: np.ndarray, center: tuple[float, float], r: int,
                 stride: int = 1) -> np.ndarray:
    """Bilinear (2r+1)x(2r+1)xC patch around center (input-resolution px),
    with taps spaced by the level's stride. Out-of-bounds taps read 0."""
    level = np.asarray(level, dtype=np.float64)
    h, w, c = level.shape
    cx, cy = center[0] / stride, center[1] / stride
    offs = np.arange(-r, r + 1, dtype=np.float64)
    px = cx + offs[None, :]
    py = cy + offs[:, None]
    x0 = np.floor(px).astype(np.int64)
    y0 = np.floor(py).astype(np.int64)
    fx, fy = px - x0, py - y0
    patch = np.zeros((2 * r + 1, 2 * r + 1, c))
    for dy_i, wy in ((0, 1.0 - fy), (1, fy)):
        for dx_i, wx in ((0, 1.0 - fx), (1, fx)):
            xs, ys = x0 + dx_i, y0 + dy_i
            ok = (xs >= 0) & (xs < w) & (ys >= 0) & (ys < h)
            weight = np.where(ok, wy * wx, 0.0)
            vals = level[np.clip(ys, 0, h - 1), np.clip(xs, 0, w - 1)]
            patch += weight[:, :, None] * vals
    return patch


def _relu(x):
    return np.maximum(x, 0.0)


def correlation_features(patches_per_level: list[np.ndarray],
                         weights: WeightBundle) -> np.ndarray:
    """Encode per-frame correlation against the window anchor (frame 0).

    patches_per_level: 3 arrays of shape (W, taps, C_l) with flattened
    spatial taps. Returns (W, 3 * corr_embed) descriptors.
    """
    if len(patches_per_level) != 3:
        raise ShapeMismatch("expected patches from 3 pyramid levels")
    embeds = []
    for lvl, patches in enumerate(patches_per_level):
        patches = np.asarray(patches, dtype=np.float64)
        anchor = patches[0]                      # taps x C
        corr = patches @ anchor.T                # W x taps x taps
        flat = corr.reshape(corr.shape[0], -1)
        if flat.shape[1] != weights[f"corr.l{lvl}.w1"].shape[0]:
            raise ShapeMismatch(
                f"level {lvl}: correlation size {flat.shape[1]} != "
                f"MLP fan-in {weights[f'corr.l{lvl}.w1'].shape[0]}")
        h = _relu(flat @ weights[f"corr.l{lvl}.w1"] + weights[f"corr.l{lvl}.b1"])
        embeds.append(h @ weights[f"corr.l{lvl}.w2"] + weights[f"corr.l{lvl}.b2"])
    return np.concatenate(embeds, axis=1)


def _motion_encoding(rel: np.ndarray, n_freq: int) -> np.ndarray:
    """Sinusoidal encoding of per-step motion relative to the window anchor;
    rel is (W, 2), output (W, 4 * n_freq)."""
    enc_x = sinusoidal_encoding(rel[:, 0], 2 * n_freq)
    enc_y = sinusoidal_encoding(rel[:, 1], 2 * n_freq)
    return np.concatenate([enc_x, enc_y], axis=1)


def _refiner_transformer(x: np.ndarray, weights: WeightBundle) -> np.ndarray:
    """Pre-norm blocks of (temporal self-attention, token MLP) on (W, rw)."""
    cfg = weights.config
    rw = cfg.refiner_width
    pe = sinusoidal_encoding(np.arange(x.shape[0]), rw)
    for blk in range(cfg.refiner_blocks):
        p = f"ref.b{blk}"
        h = _layer_norm(x, weights[f"{p}.ln1.g"], weights[f"{p}.ln1.b"])
        q = (h + pe) @ weights[f"{p}.attn.wq"] + weights[f"{p}.attn.bq"]
        k = (h + pe) @ weights[f"{p}.attn.wk"] + weights[f"{p}.attn.bk"]
        v = h @ weights[f"{p}.attn.wv"] + weights[f"{p}.attn.bv"]
        logits = q @ k.T / np.sqrt(rw)
        a = np.exp(logits - logits.max(axis=1, keepdims=True))
        a /= a.sum(axis=1, keepdims=True)
        x = x + (a @ v) @ weights[f"{p}.attn.wo"] + weights[f"{p}.attn.bo"]
        h = _layer_norm(x, weights[f"{p}.ln2.g"], weights[f"{p}.ln2.b"])
        x = x + _relu(h @ weights[f"{p}.mlp.w1"] + weights[f"{p}.mlp.b1"]) \
            @ weights[f"{p}.mlp.w2"] + weights[f"{p}.mlp.b2"]
    return x


def refine_track(state: TrackState, pyramids: list[FeaturePyramid],
                 weights: WeightBundle, iterations: int | None = None
                 ) -> TrackState:
    """Iteratively apply residual (dx, dy, dv) updates to a window track."""
    cfg = weights.config
    m = cfg.iterations if iterations is None else iterations
    if m < 1:
        raise ShapeMismatch("iteration count must be >= 1")
    if len(pyramids) != len(state.window_times):
        raise ShapeMismatch("one pyramid per window step required")
    r = cfg.patch_radius
    state = state.copy()
    for _ in range(m):
        patches_per_level = []
        for lvl in range(3):
            stride = pyramids[0].strides[lvl]
            taps = []
            for t, pyr in enumerate(pyramids):
                patch = sample_patch(pyr.levels[lvl],
                                     tuple(state.positions[t]), r, stride)
                taps.append(patch.reshape(-1, patch.shape[-1]))
            patches_per_level.append(np.stack(taps))
        desc = correlation_features(patches_per_level, weights)
        rel = state.positions - state.positions[0]
        tokens = np.concatenate(
            [desc, state.visibility_logits[:, None],
             _motion_encoding(rel, cfg.motion_freqs)], axis=1)
        x = tokens @ weights["ref.in.w"] + weights["ref.in.b"]
        x = _refiner_transformer(x, weights)
        delta = x @ weights["ref.head.w"] + weights["ref.head.b"]
        state.positions = state.positions + delta[:, :2]
        state.visibility_logits = state.visibility_logits + delta[:, 2]
    return state


# ---------------------------------------------------------------------------
# Sequence orchestration
# ---------------------------------------------------------------------------

def _window_starts(n_steps: int, window: int) -> list[int]:
    if n_steps <= window:
        return [0]
    starts = list(range(0, n_steps - window + 1, window // 2))
    if starts[-1] != n_steps - window:
        starts.append(n_steps - window)
    return starts


def track_sequence(frames: np.ndarray, frame_times: list[int],
                   stream: EventStream, timeline: Timeline,
                   queries: list[QueryPoint], weights: WeightBundle,
                   counters: dict | None = None) -> TrackSet:
    """Run the full pipeline over a sequence.

    At each frame time the transient state is re-initialized from the
    frame and its exposure-window events; every other query step applies
    one event-batch update. Windows of W steps advance by W/2; estimates
    at overlapped steps are re-computed and the later window's values win.
    """
    qtimes = np.asarray(timeline.query_times, dtype=np.int64)
    n_steps = len(qtimes)
    ft = [int(t) for t in frame_times]
    if list(timeline.frame_times) != ft:
        raise GridMismatch("frame_times disagree with timeline")
    if ft[0] != int(qtimes[0]):
        raise GridMismatch("the first query step must carry a frame")
    if len(frames) != len(ft):
        raise GridMismatch("one frame per frame time required")
    qgrid = {int(t): i for i, t in enumerate(qtimes)}
    for qp in queries:
        if qp.t_q not in qgrid:
            raise QueryOutOfRange(f"query time {qp.t_q} not on the query grid")

    frame_at = {t: i for i, t in enumerate(ft)}
    batches = bin_events(stream, timeline)
    if counters is not None:
        counters.setdefault("taf_init", 0)
        counters.setdefault("taf_update", 0)

    states: list[TransientState] = []
    state = None
    for step, t in enumerate(qtimes):
        t = int(t)
        if t in frame_at:
            batch = exposure_window_events(stream, t, timeline.exposure_us)
            state = taf_init(frames[frame_at[t]], t, batch, weights)
            if counters is not None:
                counters["taf_init"] += 1
        else:
            state = taf_update(state, batches[step], weights)
            if counters is not None:
                counters["taf_update"] += 1
        states.append(state)

    w = weights.config.window
    n_q = len(queries)
    out_pos = np.zeros((n_q, n_steps, 2))
    out_logit = np.zeros((n_q, n_steps))
    active_from = [qgrid[qp.t_q] for qp in queries]
    for qi, qp in enumerate(queries):
        out_pos[qi, :, 0] = qp.x
        out_pos[qi, :, 1] = qp.y
        out_logit[qi, :] = 1.0

    for start in _window_starts(n_steps, w):
        stop = min(start + w, n_steps)
        win_states = temporal_attention(states[start:stop], weights)
        pyramids = [decode_pyramid(s, None, weights) for s in win_states]
        for qi, qp in enumerate(queries):
            if active_from[qi] >= stop:
                continue
            ts = TrackState(
                positions=out_pos[qi, start:stop].copy(),
                visibility_logits=out_logit[qi, start:stop].copy(),
                window_times=qtimes[start:stop].copy())
            # steps not yet covered by a previous window start from the
            # last carried-over estimate
            refined = refine_track(ts, pyramids, weights)
            out_pos[qi, start:stop] = refined.positions
            out_logit[qi, start:stop] = refined.visibility_logits
            # carry the freshest estimate into steps beyond this window
            if stop < n_steps:
                out_pos[qi, stop:] = refined.positions[-1]
                out_logit[qi, stop:] = refined.visibility_logits[-1]

    visibility = (out_logit > 0).astype(np.int64)
    for qi in range(n_q):
        a = active_from[qi]
        out_pos[qi, :a] = (queries[qi].x, queries[qi].y)
        visibility[qi, :a] = 0
    return TrackSet(times=qtimes, positions=out_pos, visibility=visibility)
