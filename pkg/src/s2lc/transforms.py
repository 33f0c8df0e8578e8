"""Analysis/synthesis and hyper transforms.

The main transforms stack a dense-block feature enhancement, a 5x5 stride-2
convolution, and three stages of residual SwinV2 transformer blocks each
followed by a 3x3 stride-2 convolution (mirrored with transposed convolutions
on the synthesis side).  Attention uses scaled cosine similarity with a
learnable per-head temperature and a log-spaced continuous position bias.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, ShapeError
from .profiles import Profile
from .tensor import ConvSpec, activation, conv2d, layer_norm

__all__ = [
    "S2TLConfig",
    "DenseBlockParams",
    "AttnParams",
    "S2TLParams",
    "RS2TBParams",
    "TransformParams",
    "dense_block",
    "log_cpb_coords",
    "log_cpb_bias",
    "scaled_cosine_attention",
    "s2tl_forward",
    "rs2tb_forward",
    "analysis_transform",
    "synthesis_transform",
    "hyper_analysis",
    "hyper_synthesis",
    "transform_shape_entries",
    "build_transform_params",
]

TAU_MIN = 0.01
_CPB_NORM = np.log2(8.0)
_MASK_NEG = -1e9


@dataclass(frozen=True)
class ConvP:
    """A weight/bias pair (used for convolutions and token-linear layers)."""

    weight: np.ndarray
    bias: np.ndarray


@dataclass(frozen=True)
class S2TLConfig:
    window: int
    heads: int
    dim: int
    shift: int = 0
    mlp_ratio: int = 2

    def __post_init__(self):
        if self.window < 1:
            raise ConfigurationError(f"window must be >= 1, got {self.window}")
        if self.dim % self.heads != 0:
            raise ConfigurationError(f"heads {self.heads} must divide token width {self.dim}")
        if self.shift not in (0, self.window // 2):
            raise ConfigurationError(f"shift must be 0 or window/2, got {self.shift}")


@dataclass(frozen=True)
class DenseBlockParams:
    layers: tuple  # five 3x3 ConvP, each producing the growth width
    proj: ConvP  # 1x1 back to the input width


@dataclass(frozen=True)
class AttnParams:
    tau: np.ndarray  # (heads,)
    q: ConvP
    k: ConvP
    v: ConvP
    out: ConvP
    cpb_w1: np.ndarray  # (heads, hidden, 2)
    cpb_b1: np.ndarray  # (heads, hidden)
    cpb_w2: np.ndarray  # (heads, hidden)
    cpb_b2: np.ndarray  # (heads,)


@dataclass(frozen=True)
class S2TLParams:
    attn: AttnParams
    norm1_gamma: np.ndarray
    norm1_beta: np.ndarray
    norm2_gamma: np.ndarray
    norm2_beta: np.ndarray
    mlp_fc1: ConvP
    mlp_fc2: ConvP


@dataclass(frozen=True)
class RS2TBParams:
    fe: ConvP  # feature embedding projection
    fu: ConvP  # feature unembedding projection
    layers: tuple  # S2TLParams, alternating shift 0 / window//2
    window: int
    heads: int
    dim: int
    mlp_ratio: int = 2


@dataclass(frozen=True)
class TransformParams:
    enhance: DenseBlockParams
    a_down: tuple  # 4 ConvP: 5x5 then three 3x3, all stride 2
    a_blocks: tuple  # 3 RS2TBParams
    s_up: tuple  # 4 transposed ConvP
    s_blocks: tuple  # 3 RS2TBParams
    s_enhance: DenseBlockParams
    ha: tuple  # 2 ConvP
    hs: tuple  # 2 transposed ConvP
    profile: Profile


def _linear(x: np.ndarray, p: ConvP) -> np.ndarray:
    out = x.astype(np.float64) @ p.weight.astype(np.float64).T + p.bias.astype(np.float64)
    return out.astype(np.float32)


def dense_block(x: np.ndarray, params: DenseBlockParams) -> np.ndarray:
    """Five densely concatenated 3x3 conv + LeakyReLU layers, then 1x1 back.

    Layer i consumes the input concatenated with all previous layer outputs;
    the final projection restores the input width.
    """
    spec = ConvSpec(3, 3, stride=1, padding=1)
    cat = x
    for p in params.layers:
        y = activation(conv2d(cat, p.weight, p.bias, spec), "leaky_relu")
        cat = np.concatenate([cat, y], axis=1)
    return conv2d(cat, params.proj.weight, params.proj.bias, ConvSpec(1, 1))


def log_cpb_coords(window: int) -> np.ndarray:
    """Log-scaled relative coordinates, shape (2w-1, 2w-1, 2) as (dx, dy).

    Each displacement component d maps to sign(d) * log2(1 + |d|) / log2(8),
    so the extreme displacement of an 8-wide window lands exactly at 1.
    """
    d = np.arange(-(window - 1), window, dtype=np.float64)
    mapped = np.sign(d) * np.log2(1.0 + np.abs(d)) / _CPB_NORM
    dx, dy = np.meshgrid(mapped, mapped, indexing="xy")  # rows vary dy, cols dx
    return np.stack([dx, dy], axis=-1)


def _relative_index(window: int) -> np.ndarray:
    """Token-pair lookup into the (2w-1)^2 displacement table, shape (T, T)."""
    ii, jj = np.meshgrid(np.arange(window), np.arange(window), indexing="ij")
    coords = np.stack([ii.ravel(), jj.ravel()])  # (2, T) as (row, col)
    rel = coords[:, :, None] - coords[:, None, :]  # (2, T, T)
    return (rel[0] + window - 1) * (2 * window - 1) + (rel[1] + window - 1)


def log_cpb_bias(params: AttnParams, config: S2TLConfig) -> np.ndarray:
    """Per-head position bias table of shape (heads, w^2, w^2)."""
    w = config.window
    coords = log_cpb_coords(w).reshape(-1, 2)  # (n2, 2) rows ordered (dy, dx) row-major
    h1 = np.einsum("hkc,nc->hnk", params.cpb_w1.astype(np.float64), coords)
    h1 = np.maximum(h1 + params.cpb_b1.astype(np.float64)[:, None, :], 0.0)
    table = np.einsum("hnk,hk->hn", h1, params.cpb_w2.astype(np.float64))
    table = table + params.cpb_b2.astype(np.float64)[:, None]  # (heads, n2)
    idx = _relative_index(w)
    return table[:, idx].astype(np.float32)  # (heads, T, T)


def scaled_cosine_attention(q, k, v, tau, bias=None, mask=None) -> np.ndarray:
    """Cosine-similarity attention: softmax(cos(q, k)/tau + b) @ v.

    ``q``, ``k``, ``v`` are already-projected tokens of shape (..., T, C);
    heads are split per ``tau`` (one temperature per head) and re-concatenated
    in the output.  Rows with near-zero norm get cosine 0 against everything.
    ``bias`` broadcasts as (heads, T, T), ``mask`` as (..., 1, T, T) additive.
    """
    tau = np.asarray(tau, dtype=np.float64)
    if np.any(tau <= TAU_MIN):
        raise ConfigurationError(f"attention temperature must exceed {TAU_MIN}")
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    heads = tau.shape[0]
    t, c = q.shape[-2], q.shape[-1]
    if c % heads != 0:
        raise ShapeError(f"token width {c} not divisible by {heads} heads")
    d = c // heads

    def split(x):
        x = x.reshape(x.shape[:-1] + (heads, d))
        return np.moveaxis(x, -2, -3)  # (..., heads, T, d)

    qh, kh, vh = split(q), split(k), split(v)

    def unit(x):
        n = np.linalg.norm(x, axis=-1, keepdims=True)
        return np.where(n < 1e-12, 0.0, x / np.where(n < 1e-12, 1.0, n))

    sim = unit(qh) @ unit(kh).swapaxes(-1, -2) / tau[:, None, None]
    if bias is not None:
        sim = sim + np.asarray(bias, dtype=np.float64)
    if mask is not None:
        sim = sim + np.asarray(mask, dtype=np.float64)
    sim = sim - sim.max(axis=-1, keepdims=True)
    e = np.exp(sim)
    weights = e / e.sum(axis=-1, keepdims=True)
    out = weights @ vh  # (..., heads, T, d)
    out = np.moveaxis(out, -3, -2).reshape(q.shape[:-1] + (c,))
    return out.astype(np.float32)


def _window_partition(x: np.ndarray, w: int) -> np.ndarray:
    b, h, ww, c = x.shape
    x = x.reshape(b, h // w, w, ww // w, w, c)
    return x.transpose(0, 1, 3, 2, 4, 5).reshape(-1, w * w, c)


def _window_merge(wins: np.ndarray, w: int, b: int, h: int, ww: int) -> np.ndarray:
    c = wins.shape[-1]
    x = wins.reshape(b, h // w, ww // w, w, w, c)
    return x.transpose(0, 1, 3, 2, 4, 5).reshape(b, h, ww, c)


def _shift_mask(h: int, w_extent: int, window: int, shift: int) -> np.ndarray:
    """Additive mask silencing attention across cyclic-shift boundaries."""
    img = np.zeros((h, w_extent))
    region = 0
    spans = (slice(0, -window), slice(-window, -shift), slice(-shift, None))
    for hs in spans:
        for ws in spans:
            img[hs, ws] = region
            region += 1
    wins = _window_partition(img[None, :, :, None], window)[:, :, 0]  # (nW, T)
    return np.where(wins[:, None, :] != wins[:, :, None], _MASK_NEG, 0.0)


def s2tl_forward(tokens: np.ndarray, config: S2TLConfig, params: S2TLParams) -> np.ndarray:
    """One SwinV2 transformer layer over a (B, H, W, C) token grid.

    Shifted variants cyclically roll the grid before windowing and mask
    attention across the wrapped boundaries.  Post-normalization residual
    form: x += LN(Attn(x)); x += LN(MLP(x)).  Extents not divisible by the
    window are zero-padded internally and cropped on exit.
    """
    b, h, w_extent, c = tokens.shape
    win = config.window
    pad_h = (-h) % win
    pad_w = (-w_extent) % win
    x = tokens
    if pad_h or pad_w:
        x = np.pad(x, ((0, 0), (0, pad_h), (0, pad_w), (0, 0)))
    hp, wp = h + pad_h, w_extent + pad_w

    shifted = x
    mask = None
    if config.shift:
        shifted = np.roll(x, (-config.shift, -config.shift), axis=(1, 2))
        mask = _shift_mask(hp, wp, win, config.shift)
        n_win = mask.shape[0]
        mask = np.tile(mask, (b, 1, 1)).reshape(b * n_win, 1, win * win, win * win)

    wins = _window_partition(shifted, win)
    q = _linear(wins, params.attn.q)
    k = _linear(wins, params.attn.k)
    v = _linear(wins, params.attn.v)
    bias = log_cpb_bias(params.attn, config)
    attended = scaled_cosine_attention(q, k, v, params.attn.tau, bias=bias, mask=mask)
    attended = _linear(attended, params.attn.out)

    merged = _window_merge(attended, win, b, hp, wp)
    if config.shift:
        merged = np.roll(merged, (config.shift, config.shift), axis=(1, 2))
    merged = merged[:, :h, :w_extent, :]

    x = tokens + layer_norm(merged, params.norm1_gamma, params.norm1_beta)
    hidden = activation(_linear(x, params.mlp_fc1), "gelu")
    mlp_out = _linear(hidden, params.mlp_fc2)
    return x + layer_norm(mlp_out, params.norm2_gamma, params.norm2_beta)


def rs2tb_forward(feature: np.ndarray, params: RS2TBParams) -> np.ndarray:
    """Residual SwinV2 block: embed, alternating S2TLs, unembed, skip."""
    tokens = _linear(np.transpose(feature, (0, 2, 3, 1)), params.fe)
    for i, layer in enumerate(params.layers):
        shift = 0 if i % 2 == 0 else params.window // 2
        cfg = S2TLConfig(params.window, params.heads, params.dim, shift, params.mlp_ratio)
        tokens = s2tl_forward(tokens, cfg, layer)
    out = _linear(tokens, params.fu)
    return feature + np.transpose(out, (0, 3, 1, 2))


_DOWN5 = ConvSpec(5, 5, stride=2, padding=2)
_DOWN3 = ConvSpec(3, 3, stride=2, padding=1)
_UP5 = ConvSpec(5, 5, stride=2, padding=2, transposed=True)
_UP3 = ConvSpec(3, 3, stride=2, padding=1, transposed=True)


def analysis_transform(image: np.ndarray, params: TransformParams) -> np.ndarray:
    """Map a padded (1, 3, H, W) image to latents (1, M, H/16, W/16)."""
    _, _, h, w = image.shape
    if h % 64 or w % 64:
        raise ShapeError(f"analysis input sides must be multiples of 64, got {h}x{w}")
    x = image + dense_block(image, params.enhance)
    x = conv2d(x, params.a_down[0].weight, params.a_down[0].bias, _DOWN5)
    for block, down in zip(params.a_blocks, params.a_down[1:]):
        x = rs2tb_forward(x, block)
        x = conv2d(x, down.weight, down.bias, _DOWN3)
    return x


def synthesis_transform(y_hat: np.ndarray, params: TransformParams) -> np.ndarray:
    """Mirror of the analysis transform; output clamped to [0, 1]."""
    x = y_hat
    for up, block in zip(params.s_up[:3], params.s_blocks):
        x = conv2d(x, up.weight, up.bias, _UP3)
        x = rs2tb_forward(x, block)
    x = conv2d(x, params.s_up[3].weight, params.s_up[3].bias, _UP5)
    x = x + dense_block(x, params.s_enhance)
    return np.clip(x, 0.0, 1.0)


def hyper_analysis(y: np.ndarray, params: TransformParams) -> np.ndarray:
    """Two stride-2 3x3 convolutions with LeakyReLU between: y -> z."""
    x = activation(conv2d(y, params.ha[0].weight, params.ha[0].bias, _DOWN3), "leaky_relu")
    return conv2d(x, params.ha[1].weight, params.ha[1].bias, _DOWN3)


def hyper_synthesis(z_hat: np.ndarray, params: TransformParams) -> np.ndarray:
    """Mirror of hyper_analysis: z -> hyper feature with 2M channels."""
    x = activation(conv2d(z_hat, params.hs[0].weight, params.hs[0].bias, _UP3), "leaky_relu")
    return conv2d(x, params.hs[1].weight, params.hs[1].bias, _UP3)


# --- weight archive schema -------------------------------------------------


def _dense_entries(prefix: str, width: int) -> dict:
    growth = max(1, width // 2)
    entries = {}
    for i in range(5):
        entries[f"{prefix}.layer{i}.weight"] = (growth, width + i * growth, 3, 3)
        entries[f"{prefix}.layer{i}.bias"] = (growth,)
    entries[f"{prefix}.proj.weight"] = (width, width + 5 * growth, 1, 1)
    entries[f"{prefix}.proj.bias"] = (width,)
    return entries


def _rs2tb_entries(prefix: str, profile: Profile) -> dict:
    c = profile.hyper_channels
    h = profile.heads
    hid = profile.cpb_hidden
    mlp = profile.mlp_ratio * c
    entries = {
        f"{prefix}.fe.weight": (c, c), f"{prefix}.fe.bias": (c,),
        f"{prefix}.fu.weight": (c, c), f"{prefix}.fu.bias": (c,),
    }
    for k in range(2):  # one unshifted plus one shifted layer
        lp = f"{prefix}.layer{k}"
        entries.update({
            f"{lp}.attn.tau": (h,),
            f"{lp}.attn.q.weight": (c, c), f"{lp}.attn.q.bias": (c,),
            f"{lp}.attn.k.weight": (c, c), f"{lp}.attn.k.bias": (c,),
            f"{lp}.attn.v.weight": (c, c), f"{lp}.attn.v.bias": (c,),
            f"{lp}.attn.out.weight": (c, c), f"{lp}.attn.out.bias": (c,),
            f"{lp}.attn.cpb.w1": (h, hid, 2), f"{lp}.attn.cpb.b1": (h, hid),
            f"{lp}.attn.cpb.w2": (h, hid), f"{lp}.attn.cpb.b2": (h,),
            f"{lp}.norm1.gamma": (c,), f"{lp}.norm1.beta": (c,),
            f"{lp}.norm2.gamma": (c,), f"{lp}.norm2.beta": (c,),
            f"{lp}.mlp.fc1.weight": (mlp, c), f"{lp}.mlp.fc1.bias": (mlp,),
            f"{lp}.mlp.fc2.weight": (c, mlp), f"{lp}.mlp.fc2.bias": (c,),
        })
    return entries


def transform_shape_entries(profile: Profile) -> dict:
    """Expected archive entry shapes for the transform networks."""
    n, m = profile.hyper_channels, profile.latent_channels
    entries = {}
    entries.update(_dense_entries("analysis.enhance", 3))
    entries.update({"analysis.down0.weight": (n, 3, 5, 5), "analysis.down0.bias": (n,)})
    for j, out in zip(range(1, 4), (n, n, m)):
        entries[f"analysis.down{j}.weight"] = (out, n, 3, 3)
        entries[f"analysis.down{j}.bias"] = (out,)
    for j in range(3):
        entries.update(_rs2tb_entries(f"analysis.block{j}", profile))
    # synthesis mirror (transposed kernels are stored (in, out, kh, kw))
    entries.update({"synthesis.up0.weight": (m, n, 3, 3), "synthesis.up0.bias": (n,)})
    for j in (1, 2):
        entries[f"synthesis.up{j}.weight"] = (n, n, 3, 3)
        entries[f"synthesis.up{j}.bias"] = (n,)
    entries.update({"synthesis.up3.weight": (n, 3, 5, 5), "synthesis.up3.bias": (3,)})
    for j in range(3):
        entries.update(_rs2tb_entries(f"synthesis.block{j}", profile))
    entries.update(_dense_entries("synthesis.enhance", 3))
    entries.update({
        "hyper_analysis.conv0.weight": (n, m, 3, 3), "hyper_analysis.conv0.bias": (n,),
        "hyper_analysis.conv1.weight": (n, n, 3, 3), "hyper_analysis.conv1.bias": (n,),
        "hyper_synthesis.up0.weight": (n, n, 3, 3), "hyper_synthesis.up0.bias": (n,),
        "hyper_synthesis.up1.weight": (n, 2 * m, 3, 3), "hyper_synthesis.up1.bias": (2 * m,),
    })
    return entries


def _build_dense(get, prefix: str) -> DenseBlockParams:
    layers = tuple(
        ConvP(get(f"{prefix}.layer{i}.weight"), get(f"{prefix}.layer{i}.bias")) for i in range(5)
    )
    return DenseBlockParams(layers, ConvP(get(f"{prefix}.proj.weight"), get(f"{prefix}.proj.bias")))


def _build_rs2tb(get, prefix: str, profile: Profile) -> RS2TBParams:
    layers = []
    for k in range(2):
        lp = f"{prefix}.layer{k}"
        attn = AttnParams(
            tau=get(f"{lp}.attn.tau"),
            q=ConvP(get(f"{lp}.attn.q.weight"), get(f"{lp}.attn.q.bias")),
            k=ConvP(get(f"{lp}.attn.k.weight"), get(f"{lp}.attn.k.bias")),
            v=ConvP(get(f"{lp}.attn.v.weight"), get(f"{lp}.attn.v.bias")),
            out=ConvP(get(f"{lp}.attn.out.weight"), get(f"{lp}.attn.out.bias")),
            cpb_w1=get(f"{lp}.attn.cpb.w1"), cpb_b1=get(f"{lp}.attn.cpb.b1"),
            cpb_w2=get(f"{lp}.attn.cpb.w2"), cpb_b2=get(f"{lp}.attn.cpb.b2"),
        )
        layers.append(S2TLParams(
            attn=attn,
            norm1_gamma=get(f"{lp}.norm1.gamma"), norm1_beta=get(f"{lp}.norm1.beta"),
            norm2_gamma=get(f"{lp}.norm2.gamma"), norm2_beta=get(f"{lp}.norm2.beta"),
            mlp_fc1=ConvP(get(f"{lp}.mlp.fc1.weight"), get(f"{lp}.mlp.fc1.bias")),
            mlp_fc2=ConvP(get(f"{lp}.mlp.fc2.weight"), get(f"{lp}.mlp.fc2.bias")),
        ))
    return RS2TBParams(
        fe=ConvP(get(f"{prefix}.fe.weight"), get(f"{prefix}.fe.bias")),
        fu=ConvP(get(f"{prefix}.fu.weight"), get(f"{prefix}.fu.bias")),
        layers=tuple(layers),
        window=profile.window, heads=profile.heads,
        dim=profile.hyper_channels, mlp_ratio=profile.mlp_ratio,
    )


def build_transform_params(get, profile: Profile) -> TransformParams:
    """Assemble structured transform parameters from a name -> array mapping."""
    return TransformParams(
        enhance=_build_dense(get, "analysis.enhance"),
        a_down=tuple(ConvP(get(f"analysis.down{j}.weight"), get(f"analysis.down{j}.bias")) for j in range(4)),
        a_blocks=tuple(_build_rs2tb(get, f"analysis.block{j}", profile) for j in range(3)),
        s_up=tuple(ConvP(get(f"synthesis.up{j}.weight"), get(f"synthesis.up{j}.bias")) for j in range(4)),
        s_blocks=tuple(_build_rs2tb(get, f"synthesis.block{j}", profile) for j in range(3)),
        s_enhance=_build_dense(get, "synthesis.enhance"),
        ha=tuple(ConvP(get(f"hyper_analysis.conv{j}.weight"), get(f"hyper_analysis.conv{j}.bias")) for j in range(2)),
        hs=tuple(ConvP(get(f"hyper_synthesis.up{j}.weight"), get(f"hyper_synthesis.up{j}.bias")) for j in range(2)),
        profile=profile,
    )
