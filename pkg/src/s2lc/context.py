"""Context machinery for the checkerboard entropy model.

Latents are split into equal channel slices coded sequentially; each slice is
coded in two spatial passes (anchor, then non-anchor on the checkerboard).
Per slice, previously decoded slices feed two context branches, a channel
branch and a deformable-attention global branch, whose outputs are gated by
learned spatial/channel maps and summed into the channel context feature.
A masked 5x5 convolution over decoded anchors supplies the spatial context
for the non-anchor pass.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .coder import SIGMA_MIN
from .errors import ConfigurationError, ShapeError
from .profiles import Profile
from .tensor import ConvSpec, activation, bilinear_sample, conv2d, global_avg_pool
from .transforms import ConvP

__all__ = [
    "SliceLayout",
    "CheckerboardMask",
    "EntropyParams",
    "DeformableAttnParams",
    "SliceContextParams",
    "split_slices",
    "concat_slices",
    "checkerboard_mask",
    "checkerboard_split",
    "spatial_context",
    "adaptive_maps",
    "deformable_attention",
    "ag_context",
    "ac_context",
    "entropy_parameters",
    "latent_residual_prediction",
    "project_prev_slices",
    "slice_entropy_params",
    "slice_residual",
    "context_shape_entries",
    "build_context_params",
]

_1X1 = ConvSpec(1, 1)
_3X3 = ConvSpec(3, 3, stride=1, padding=1)
_5X5 = ConvSpec(5, 5, stride=1, padding=2)

# largest float32 strictly below 0.5; guards tanh saturation in float
_HALF_OPEN = np.nextafter(np.float32(0.5), np.float32(0.0))

# smallest float32 not below 0.11, so stored sigmas respect the floor exactly
_SIGMA_FLOOR = float(np.nextafter(np.float32(SIGMA_MIN), np.float32(1.0)))


@dataclass(frozen=True)
class SliceLayout:
    """Equal-width channel ranges covering [0, channels)."""

    slice_count: int
    channels: int

    def __post_init__(self):
        if self.slice_count < 1 or self.channels % self.slice_count != 0:
            raise ConfigurationError(
                f"slice count {self.slice_count} must divide channel count {self.channels}"
            )

    @property
    def slice_width(self) -> int:
        return self.channels // self.slice_count

    def ranges(self):
        w = self.slice_width
        return [(i * w, (i + 1) * w) for i in range(self.slice_count)]


def split_slices(y: np.ndarray, layout: SliceLayout):
    """Split latents into L equal channel slices; concatenation restores y."""
    if y.shape[1] != layout.channels:
        raise ShapeError(f"latent has {y.shape[1]} channels, layout expects {layout.channels}")
    return [y[:, lo:hi] for lo, hi in layout.ranges()]


def concat_slices(slices) -> np.ndarray:
    return np.concatenate(list(slices), axis=1)


@dataclass(frozen=True)
class CheckerboardMask:
    """Anchor positions are those with even (row + col) parity."""

    anchor: np.ndarray  # (H, W) bool

    @property
    def non_anchor(self) -> np.ndarray:
        return ~self.anchor


def checkerboard_mask(h: int, w: int) -> CheckerboardMask:
    rows = np.arange(h)[:, None]
    cols = np.arange(w)[None, :]
    return CheckerboardMask(((rows + cols) % 2 == 0))


def checkerboard_split(t: np.ndarray, mask: CheckerboardMask, part: str) -> np.ndarray:
    """Zero out the complementary parity class; anchor + non_anchor == t."""
    if t.shape[-2:] != mask.anchor.shape:
        raise ShapeError(
            f"tensor spatial dims {t.shape[-2:]} do not match mask {mask.anchor.shape}"
        )
    keep = mask.anchor if part == "anchor" else mask.non_anchor if part == "non_anchor" else None
    if keep is None:
        raise ValueError(f"part must be 'anchor' or 'non_anchor', got {part!r}")
    return np.where(keep, t, np.zeros((), dtype=t.dtype))


@dataclass(frozen=True)
class EntropyParams:
    """Per-element Gaussian parameters; sigma is floored at SIGMA_MIN."""

    mu: np.ndarray
    sigma: np.ndarray


@dataclass(frozen=True)
class DeformableAttnParams:
    heads: int
    points: int
    offset_scale: float
    offset: ConvP  # 3x3, C -> 2 * heads * points
    q: ConvP
    k: ConvP
    v: ConvP
    out: ConvP


@dataclass(frozen=True)
class AdaptiveMapParams:
    s_w1: ConvP  # 1x1 C -> C
    s_w2: ConvP  # 1x1 C -> 1
    c_w1: ConvP  # 1x1 C -> C (on pooled vector)
    c_w2: ConvP  # 1x1 C -> C


@dataclass(frozen=True)
class AgParams:
    deform: DeformableAttnParams
    dw: ConvP  # depth-wise 3x3
    maps: AdaptiveMapParams


@dataclass(frozen=True)
class AcParams:
    cw1: ConvP  # 1x1 C -> C
    cw2: ConvP  # 1x1 C -> C
    gate: ConvP  # 1x1 C -> C on pooled vector
    dw: ConvP
    maps: AdaptiveMapParams


@dataclass(frozen=True)
class SliceContextParams:
    index: int
    prev_proj: ConvP | None  # 1x1, index * slice_width -> ctx width; None for slice 0
    hyper_proj: ConvP  # 1x1, 2M -> ctx width
    ag: AgParams
    ac: AcParams
    spatial: ConvP  # masked 5x5, slice_width -> ctx width
    gep: tuple  # three 1x1 ConvP
    lrp: tuple  # three 3x3 ConvP
    slice_width: int
    ctx_width: int


def _checkerboard_kernel_mask(k: int = 5) -> np.ndarray:
    r = k // 2
    dr = np.arange(-r, r + 1)[:, None]
    dc = np.arange(-r, r + 1)[None, :]
    return ((dr + dc) % 2 != 0).astype(np.float32)


def spatial_context(anchor_slice: np.ndarray, conv: ConvP) -> np.ndarray:
    """Masked 5x5 convolution over decoded anchors.

    Kernel taps at even (dr + dc) offsets are structurally zero, so every
    non-anchor output position depends only on anchor-parity neighbors.
    """
    masked = conv.weight * _checkerboard_kernel_mask(conv.weight.shape[-1])
    return conv2d(anchor_slice, masked, conv.bias, _5X5)


def adaptive_maps(x: np.ndarray, maps: AdaptiveMapParams):
    """Spatial and channel sigmoid gates: (B, 1, H, W) and (B, C, 1, 1)."""
    s_hidden = activation(conv2d(x, maps.s_w1.weight, maps.s_w1.bias, _1X1), "gelu")
    s_map = activation(conv2d(s_hidden, maps.s_w2.weight, maps.s_w2.bias, _1X1), "sigmoid")
    pooled = global_avg_pool(x)
    c_hidden = activation(conv2d(pooled, maps.c_w1.weight, maps.c_w1.bias, _1X1), "gelu")
    c_map = activation(conv2d(c_hidden, maps.c_w2.weight, maps.c_w2.bias, _1X1), "sigmoid")
    return s_map, c_map


def deformable_attention(query_feat: np.ndarray, context_feat: np.ndarray,
                         params: DeformableAttnParams) -> np.ndarray:
    """Attention over a few bilinearly sampled context points per query.

    Each query's reference point is its own grid location; a small conv net
    predicts tanh-bounded offsets (in grid cells) for every head and point.
    """
    if query_feat.shape[-2:] != context_feat.shape[-2:]:
        raise ShapeError(
            f"query {query_feat.shape[-2:]} and context {context_feat.shape[-2:]} "
            "spatial dims must match"
        )
    b, c, h, w = query_feat.shape
    hd, npts = params.heads, params.points
    if c % hd != 0:
        raise ShapeError(f"feature width {c} not divisible by {hd} heads")
    d = c // hd

    raw = conv2d(query_feat, params.offset.weight, params.offset.bias, _3X3)
    offsets = np.tanh(raw.astype(np.float64)) * params.offset_scale
    offsets = offsets.reshape(b, hd, npts, 2, h, w)

    q = conv2d(query_feat, params.q.weight, params.q.bias, _1X1)
    k = conv2d(context_feat, params.k.weight, params.k.bias, _1X1)
    v = conv2d(context_feat, params.v.weight, params.v.bias, _1X1)

    cols = np.arange(w, dtype=np.float64)[None, :]
    rows = np.arange(h, dtype=np.float64)[:, None]
    heads_out = []
    for hi in range(hd):
        px = cols + offsets[:, hi, :, 0]  # (b, npts, h, w)
        py = rows + offsets[:, hi, :, 1]
        nx = 2.0 * px / (w - 1) - 1.0 if w > 1 else np.zeros_like(px)
        ny = 2.0 * py / (h - 1) - 1.0 if h > 1 else np.zeros_like(py)
        pts = np.stack([nx, ny], axis=-1).reshape(b, npts * h * w, 2)
        ks = bilinear_sample(k[:, hi * d:(hi + 1) * d], pts).reshape(b, d, npts, h * w)
        vs = bilinear_sample(v[:, hi * d:(hi + 1) * d], pts).reshape(b, d, npts, h * w)
        qh = q[:, hi * d:(hi + 1) * d].reshape(b, d, h * w).astype(np.float64)
        logits = np.einsum("bdq,bdpq->bpq", qh, ks.astype(np.float64)) / np.sqrt(d)
        logits -= logits.max(axis=1, keepdims=True)
        e = np.exp(logits)
        weights = e / e.sum(axis=1, keepdims=True)
        out = np.einsum("bpq,bdpq->bdq", weights, vs.astype(np.float64))
        heads_out.append(out.reshape(b, d, h, w))
    merged = np.concatenate(heads_out, axis=1).astype(np.float32)
    return conv2d(merged, params.out.weight, params.out.bias, _1X1)


def _depthwise(x: np.ndarray, p: ConvP) -> np.ndarray:
    return conv2d(x, p.weight, p.bias, ConvSpec(3, 3, stride=1, padding=1, groups=x.shape[1]))


def ag_context(x: np.ndarray, params: AgParams) -> np.ndarray:
    """Global-inter branch: c_map * deformable(x) + s_map * depthwise(x)."""
    g = deformable_attention(x, x, params.deform)
    d = _depthwise(x, params.dw)
    s_map, c_map = adaptive_maps(x, params.maps)
    return c_map * g + s_map * d


def ac_context(x: np.ndarray, params: AcParams) -> np.ndarray:
    """Channel branch: c_map * depthwise(x) + s_map * gated channel attention."""
    d = _depthwise(x, params.dw)
    cw = activation(conv2d(x, params.cw1.weight, params.cw1.bias, _1X1), "gelu")
    cw = conv2d(cw, params.cw2.weight, params.cw2.bias, _1X1)
    gate = activation(
        conv2d(global_avg_pool(x), params.gate.weight, params.gate.bias, _1X1), "sigmoid"
    )
    cw = cw * gate
    s_map, c_map = adaptive_maps(x, params.maps)
    return c_map * d + s_map * cw


def project_prev_slices(prev_slices, sp: SliceContextParams, spatial_shape) -> np.ndarray:
    """1x1-project decoded earlier slices to the context width (zeros for slice 0)."""
    if len(prev_slices) != sp.index:
        raise ShapeError(f"slice {sp.index} expects {sp.index} previous slices, got {len(prev_slices)}")
    if sp.index == 0:
        return np.zeros((1, sp.ctx_width) + tuple(spatial_shape), dtype=np.float32)
    cat = np.concatenate(list(prev_slices), axis=1)
    return conv2d(cat, sp.prev_proj.weight, sp.prev_proj.bias, _1X1)


def entropy_parameters(phi_hs: np.ndarray, phi_ch: np.ndarray, phi_sp: np.ndarray,
                       sp: SliceContextParams) -> EntropyParams:
    """Predict (mu, sigma) from hyper, channel, and spatial context features.

    The hyper feature is slice-projected by a 1x1 convolution, concatenated
    with the other contexts, and passed through three 1x1 convolutions with
    LeakyReLU between; sigma = max(softplus(raw), SIGMA_MIN).
    """
    hp = conv2d(phi_hs, sp.hyper_proj.weight, sp.hyper_proj.bias, _1X1)
    x = np.concatenate([hp, phi_ch, phi_sp], axis=1)
    c0, c1, c2 = sp.gep
    x = activation(conv2d(x, c0.weight, c0.bias, _1X1), "leaky_relu")
    x = activation(conv2d(x, c1.weight, c1.bias, _1X1), "leaky_relu")
    x = conv2d(x, c2.weight, c2.bias, _1X1)
    ms = sp.slice_width
    mu = x[:, :ms]
    raw = x[:, ms:].astype(np.float64)
    sigma = np.maximum(np.logaddexp(0.0, raw), _SIGMA_FLOOR).astype(np.float32)
    return EntropyParams(mu=mu, sigma=sigma)


def latent_residual_prediction(phi_hs_slice: np.ndarray, decoded_ctx: np.ndarray,
                               y_hat: np.ndarray, sp: SliceContextParams) -> np.ndarray:
    """Bounded correction in (-0.5, 0.5) added to a decoded slice before synthesis.

    Three 3x3 convolutions with LeakyReLU between, then 0.5 * tanh; the
    result is nudged off +/-0.5 where float tanh saturates, keeping the open
    interval exact.
    """
    x = np.concatenate([phi_hs_slice, decoded_ctx, y_hat], axis=1)
    c0, c1, c2 = sp.lrp
    x = activation(conv2d(x, c0.weight, c0.bias, _3X3), "leaky_relu")
    x = activation(conv2d(x, c1.weight, c1.bias, _3X3), "leaky_relu")
    x = conv2d(x, c2.weight, c2.bias, _3X3)
    out = (0.5 * np.tanh(x.astype(np.float64))).astype(np.float32)
    return np.clip(out, -_HALF_OPEN, _HALF_OPEN)


def slice_entropy_params(phi_hs: np.ndarray, prev_slices, anchor_slice,
                         sp: SliceContextParams) -> EntropyParams:
    """Entropy parameters for one coding pass of one slice.

    ``anchor_slice`` is None for the anchor pass (the spatial context is then
    a structural zero); for the non-anchor pass it carries the decoded
    anchors with non-anchor positions zeroed.
    """
    spatial_shape = phi_hs.shape[-2:]
    ctx = project_prev_slices(prev_slices, sp, spatial_shape)
    phi_ch = ac_context(ctx, sp.ac) + ag_context(ctx, sp.ag)
    if anchor_slice is None:
        phi_sp = np.zeros((phi_hs.shape[0], sp.ctx_width) + tuple(spatial_shape), dtype=np.float32)
    else:
        phi_sp = spatial_context(anchor_slice, sp.spatial)
    return entropy_parameters(phi_hs, phi_ch, phi_sp, sp)


def slice_residual(phi_hs: np.ndarray, prev_slices, y_hat: np.ndarray,
                   sp: SliceContextParams) -> np.ndarray:
    """Latent residual correction for a fully decoded slice."""
    hp = conv2d(phi_hs, sp.hyper_proj.weight, sp.hyper_proj.bias, _1X1)
    ctx = project_prev_slices(prev_slices, sp, phi_hs.shape[-2:])
    return latent_residual_prediction(hp, ctx, y_hat, sp)


# --- weight archive schema -------------------------------------------------


def _map_entries(prefix: str, c: int) -> dict:
    return {
        f"{prefix}.smap.w1.weight": (c, c, 1, 1), f"{prefix}.smap.w1.bias": (c,),
        f"{prefix}.smap.w2.weight": (1, c, 1, 1), f"{prefix}.smap.w2.bias": (1,),
        f"{prefix}.cmap.w1.weight": (c, c, 1, 1), f"{prefix}.cmap.w1.bias": (c,),
        f"{prefix}.cmap.w2.weight": (c, c, 1, 1), f"{prefix}.cmap.w2.bias": (c,),
    }


def context_shape_entries(profile: Profile) -> dict:
    """Expected archive entry shapes for the per-slice context networks."""
    ms = profile.slice_width
    c = profile.ctx_width
    m2 = 2 * profile.latent_channels
    hd, npts = profile.deform_heads, profile.deform_points
    entries = {}
    for i in range(profile.num_slices):
        p = f"entropy.slice{i}"
        if i > 0:
            entries[f"{p}.prev_proj.weight"] = (c, i * ms, 1, 1)
            entries[f"{p}.prev_proj.bias"] = (c,)
        entries[f"{p}.hyper_proj.weight"] = (c, m2, 1, 1)
        entries[f"{p}.hyper_proj.bias"] = (c,)
        entries.update({
            f"{p}.ag.offset.weight": (2 * hd * npts, c, 3, 3),
            f"{p}.ag.offset.bias": (2 * hd * npts,),
            f"{p}.ag.q.weight": (c, c, 1, 1), f"{p}.ag.q.bias": (c,),
            f"{p}.ag.k.weight": (c, c, 1, 1), f"{p}.ag.k.bias": (c,),
            f"{p}.ag.v.weight": (c, c, 1, 1), f"{p}.ag.v.bias": (c,),
            f"{p}.ag.out.weight": (c, c, 1, 1), f"{p}.ag.out.bias": (c,),
            f"{p}.ag.dw.weight": (c, 1, 3, 3), f"{p}.ag.dw.bias": (c,),
        })
        entries.update(_map_entries(f"{p}.ag", c))
        entries.update({
            f"{p}.ac.cw1.weight": (c, c, 1, 1), f"{p}.ac.cw1.bias": (c,),
            f"{p}.ac.cw2.weight": (c, c, 1, 1), f"{p}.ac.cw2.bias": (c,),
            f"{p}.ac.gate.weight": (c, c, 1, 1), f"{p}.ac.gate.bias": (c,),
            f"{p}.ac.dw.weight": (c, 1, 3, 3), f"{p}.ac.dw.bias": (c,),
        })
        entries.update(_map_entries(f"{p}.ac", c))
        entries.update({
            f"{p}.spatial.weight": (c, ms, 5, 5), f"{p}.spatial.bias": (c,),
            f"{p}.gep.conv0.weight": (4 * ms, 3 * c, 1, 1), f"{p}.gep.conv0.bias": (4 * ms,),
            f"{p}.gep.conv1.weight": (3 * ms, 4 * ms, 1, 1), f"{p}.gep.conv1.bias": (3 * ms,),
            f"{p}.gep.conv2.weight": (2 * ms, 3 * ms, 1, 1), f"{p}.gep.conv2.bias": (2 * ms,),
            f"{p}.lrp.conv0.weight": (3 * ms, 5 * ms, 3, 3), f"{p}.lrp.conv0.bias": (3 * ms,),
            f"{p}.lrp.conv1.weight": (2 * ms, 3 * ms, 3, 3), f"{p}.lrp.conv1.bias": (2 * ms,),
            f"{p}.lrp.conv2.weight": (ms, 2 * ms, 3, 3), f"{p}.lrp.conv2.bias": (ms,),
        })
    return entries


def _conv(get, name: str) -> ConvP:
    return ConvP(get(f"{name}.weight"), get(f"{name}.bias"))


def build_context_params(get, profile: Profile):
    """Assemble per-slice context parameters from a name -> array mapping."""
    out = []
    for i in range(profile.num_slices):
        p = f"entropy.slice{i}"
        maps_ag = AdaptiveMapParams(
            _conv(get, f"{p}.ag.smap.w1"), _conv(get, f"{p}.ag.smap.w2"),
            _conv(get, f"{p}.ag.cmap.w1"), _conv(get, f"{p}.ag.cmap.w2"),
        )
        maps_ac = AdaptiveMapParams(
            _conv(get, f"{p}.ac.smap.w1"), _conv(get, f"{p}.ac.smap.w2"),
            _conv(get, f"{p}.ac.cmap.w1"), _conv(get, f"{p}.ac.cmap.w2"),
        )
        deform = DeformableAttnParams(
            heads=profile.deform_heads, points=profile.deform_points,
            offset_scale=profile.offset_scale,
            offset=_conv(get, f"{p}.ag.offset"),
            q=_conv(get, f"{p}.ag.q"), k=_conv(get, f"{p}.ag.k"),
            v=_conv(get, f"{p}.ag.v"), out=_conv(get, f"{p}.ag.out"),
        )
        out.append(SliceContextParams(
            index=i,
            prev_proj=_conv(get, f"{p}.prev_proj") if i > 0 else None,
            hyper_proj=_conv(get, f"{p}.hyper_proj"),
            ag=AgParams(deform=deform, dw=_conv(get, f"{p}.ag.dw"), maps=maps_ag),
            ac=AcParams(
                cw1=_conv(get, f"{p}.ac.cw1"), cw2=_conv(get, f"{p}.ac.cw2"),
                gate=_conv(get, f"{p}.ac.gate"), dw=_conv(get, f"{p}.ac.dw"),
                maps=maps_ac,
            ),
            spatial=_conv(get, f"{p}.spatial"),
            gep=tuple(_conv(get, f"{p}.gep.conv{j}") for j in range(3)),
            lrp=tuple(_conv(get, f"{p}.lrp.conv{j}") for j in range(3)),
            slice_width=profile.slice_width,
            ctx_width=profile.ctx_width,
        ))
    return tuple(out)
