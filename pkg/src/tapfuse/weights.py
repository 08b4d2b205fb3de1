"""Parameter registry, seeded initialization, and weight-file I/O.

Every learnable array of the fusion network and the trajectory refiner
lives in one flat WeightBundle keyed by dotted names. Matrices are drawn
from uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) with a deterministic seeded
generator; all biases start at zero; every residual-branch output
projection starts at zero so the untrained network is an identity map on
the state and the untrained tracker is an identity tracker.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeMismatch

TFW_MAGIC = b"TFW1"


@dataclass(frozen=True)
class FusionConfig:
    d: int = 64                 # embedding width
    patch: int = 8              # token patch size, px
    radius: int = 1             # CLWF Chebyshev neighborhood radius
    subwindows: int = 5         # event-tensor channel count B
    frame_channels: int = 1
    decoder_channels: tuple[int, int, int] = (64, 32, 16)
    window: int = 16            # refiner temporal window W
    patch_radius: int = 3       # correlation patch radius r
    iterations: int = 3         # refinement iterations M
    corr_hidden: int = 64
    corr_embed: int = 32
    motion_freqs: int = 32      # rel-motion sinusoid frequency count
    refiner_width: int = 64
    refiner_blocks: int = 2


def parameter_specs(cfg: FusionConfig) -> list[tuple[str, tuple[int, ...], str]]:
    """Ordered (name, shape, init) triples; init is uniform|zeros|ones."""
    d = cfg.d
    k = (2 * cfg.radius + 1) ** 2
    taps = (2 * cfg.patch_radius + 1) ** 2
    c0, c1, c2 = cfg.decoder_channels
    rin = 3 * cfg.corr_embed + 1 + 4 * cfg.motion_freqs
    rw = cfg.refiner_width
    specs: list[tuple[str, tuple[int, ...], str]] = [
        ("phi_i.w", (cfg.patch ** 2 * cfg.frame_channels, d), "uniform"),
        ("phi_i.b", (d,), "zeros"),
        ("phi_e.w", (cfg.patch ** 2 * cfg.subwindows, d), "uniform"),
        ("phi_e.b", (d,), "zeros"),
        # CLWF: event tokens query neighboring image tokens
        ("clwf.wq", (d, d), "uniform"),
        ("clwf.wk", (d, d), "uniform"),
        ("clwf.wv", (d, d), "uniform"),
        ("clwf.bq", (d,), "zeros"),
        ("clwf.bk", (d,), "zeros"),
        ("clwf.bv", (d,), "zeros"),
        ("clwf.bias_table", (k,), "zeros"),
        # state updater: one pre-norm cross-attention block
        ("upd.ln_state.g", (d,), "ones"),
        ("upd.ln_state.b", (d,), "zeros"),
        ("upd.ln_events.g", (d,), "ones"),
        ("upd.ln_events.b", (d,), "zeros"),
        ("upd.wq", (d, d), "uniform"),
        ("upd.wk", (d, d), "uniform"),
        ("upd.wv", (d, d), "uniform"),
        ("upd.bq", (d,), "zeros"),
        ("upd.bk", (d,), "zeros"),
        ("upd.bv", (d,), "zeros"),
        ("upd.wo", (d, d), "zeros"),
        ("upd.bo", (d,), "zeros"),
        # temporal self-attention across the window
        ("tattn.wq", (d, d), "uniform"),
        ("tattn.wk", (d, d), "uniform"),
        ("tattn.wv", (d, d), "uniform"),
        ("tattn.bq", (d,), "zeros"),
        ("tattn.bk", (d,), "zeros"),
        ("tattn.bv", (d,), "zeros"),
        ("tattn.wo", (d, d), "zeros"),
        ("tattn.bo", (d,), "zeros"),
        # pyramid decoder
        ("dec.w0", (d, c0), "uniform"),
        ("dec.b0", (c0,), "zeros"),
        ("dec.w1", (c0, c1), "uniform"),
        ("dec.b1", (c1,), "zeros"),
        ("dec.w2", (c1, c2), "uniform"),
        ("dec.b2", (c2,), "zeros"),
    ]
    # per-level correlation MLPs
    for lvl in range(3):
        specs += [
            (f"corr.l{lvl}.w1", (taps * taps, cfg.corr_hidden), "uniform"),
            (f"corr.l{lvl}.b1", (cfg.corr_hidden,), "zeros"),
            (f"corr.l{lvl}.w2", (cfg.corr_hidden, cfg.corr_embed), "uniform"),
            (f"corr.l{lvl}.b2", (cfg.corr_embed,), "zeros"),
        ]
    # trajectory refiner transformer
    specs += [("ref.in.w", (rin, rw), "uniform"), ("ref.in.b", (rw,), "zeros")]
    for blk in range(cfg.refiner_blocks):
        specs += [
            (f"ref.b{blk}.ln1.g", (rw,), "ones"),
            (f"ref.b{blk}.ln1.b", (rw,), "zeros"),
            (f"ref.b{blk}.attn.wq", (rw, rw), "uniform"),
            (f"ref.b{blk}.attn.wk", (rw, rw), "uniform"),
            (f"ref.b{blk}.attn.wv", (rw, rw), "uniform"),
            (f"ref.b{blk}.attn.bq", (rw,), "zeros"),
            (f"ref.b{blk}.attn.bk", (rw,), "zeros"),
            (f"ref.b{blk}.attn.bv", (rw,), "zeros"),
            (f"ref.b{blk}.attn.wo", (rw, rw), "zeros"),
            (f"ref.b{blk}.attn.bo", (rw,), "zeros"),
            (f"ref.b{blk}.ln2.g", (rw,), "ones"),
            (f"ref.b{blk}.ln2.b", (rw,), "zeros"),
            (f"ref.b{blk}.mlp.w1", (rw, 2 * rw), "uniform"),
            (f"ref.b{blk}.mlp.b1", (2 * rw,), "zeros"),
            (f"ref.b{blk}.mlp.w2", (2 * rw, rw), "zeros"),
            (f"ref.b{blk}.mlp.b2", (rw,), "zeros"),
        ]
    specs += [("ref.head.w", (rw, 3), "zeros"), ("ref.head.b", (3,), "zeros")]
    return specs


@dataclass
class WeightBundle:
    params: dict[str, np.ndarray]
    config: FusionConfig
    seed: int

    def __getitem__(self, name: str) -> np.ndarray:
        return self.params[name]

    @classmethod
    def initialize(cls, config: FusionConfig = FusionConfig(), seed: int = 0
                   ) -> "WeightBundle":
        rng = np.random.default_rng(seed)
        params: dict[str, np.ndarray] = {}
        for name, shape, init in parameter_specs(config):
            if init == "uniform":
                bound = 1.0 / np.sqrt(shape[0])
                params[name] = rng.uniform(-bound, bound, size=shape)
            elif init == "zeros":
                params[name] = np.zeros(shape)
            elif init == "ones":
                params[name] = np.ones(shape)
            else:
                raise ValueError(init)
        return cls(params=params, config=config, seed=seed)


def save_weights(bundle: WeightBundle) -> bytes:
    """Tagged container: magic, then per-parameter records of
    (u32 name length, UTF-8 name, u32 rank, u32 dims..., f64 payload)."""
    chunks = [TFW_MAGIC]
    for name in sorted(bundle.params):
        arr = np.ascontiguousarray(bundle.params[name], dtype=np.float64)
        nb = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(nb)))
        chunks.append(nb)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes())
    return b"".join(chunks)


def load_weights(data: bytes, config: FusionConfig = FusionConfig(),
                 seed: int = 0) -> WeightBundle:
    """Parse a TFW1 container and validate shapes against the config."""
    if data[:4] != TFW_MAGIC:
        raise ShapeMismatch(f"bad weights magic {data[:4]!r}")
    pos = 4
    params: dict[str, np.ndarray] = {}
    while pos < len(data):
        (nlen,) = struct.unpack_from("<I", data, pos); pos += 4
        name = data[pos:pos + nlen].decode("utf-8"); pos += nlen
        (rank,) = struct.unpack_from("<I", data, pos); pos += 4
        dims = struct.unpack_from(f"<{rank}I", data, pos); pos += 4 * rank
        count = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=pos).copy()
        pos += 8 * count
        params[name] = arr.reshape(dims)
    expected = {name: shape for name, shape, _ in parameter_specs(config)}
    if set(params) != set(expected):
        missing = set(expected) - set(params)
        extra = set(params) - set(expected)
        raise ShapeMismatch(f"parameter set mismatch: missing={sorted(missing)} "
                            f"extra={sorted(extra)}")
    for name, arr in params.items():
        if tuple(arr.shape) != tuple(expected[name]):
            raise ShapeMismatch(
                f"{name}: shape {arr.shape} != expected {expected[name]}")
    return WeightBundle(params=params, config=config, seed=seed)
