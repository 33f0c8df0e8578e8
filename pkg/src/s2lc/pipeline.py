"""End-to-end encode/decode orchestration and the bitstream container.

Container layout ("S2LC", all integers big-endian): magic, u16 version,
u32 original width, u32 original height, u8 profile id, u64 weights
checksum, then the hyper-latent stream (u32 length + bytes) and, per slice
in coding order, the anchor and non-anchor substreams (u32 length + bytes
each).  Within a coding pass, symbols run channel-major then row-major over
the active checkerboard positions.

Images are replicate-padded to multiples of 64 per side before analysis and
cropped back after synthesis; the header always stores the original size.
The encoder reconstructs latents exactly as the decoder will (including the
latent residual correction), so encode-time metrics are exact.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import coder
from .context import (
    SliceLayout,
    checkerboard_mask,
    slice_entropy_params,
    slice_residual,
    split_slices,
)
from .errors import BitstreamError, ConfigurationError
from .profiles import profile_by_id
from .transforms import (
    analysis_transform,
    hyper_analysis,
    hyper_synthesis,
    synthesis_transform,
)
from .weights import ModelWeights

__all__ = [
    "BitstreamContainer",
    "EncodeOptions",
    "EncodeResult",
    "encode_image",
    "encode_image_full",
    "decode_image",
    "decode_latents",
    "padded_size",
]

MAGIC = b"S2LC"
VERSION = 1


@dataclass(frozen=True)
class BitstreamContainer:
    version: int
    width: int
    height: int
    profile_id: int
    checksum: int
    z_stream: bytes
    slice_streams: tuple  # ((anchor_bytes, non_anchor_bytes), ...) in coding order

    def serialize(self) -> bytes:
        out = bytearray()
        out += MAGIC
        out += struct.pack(">HIIBQ", self.version, self.width, self.height,
                           self.profile_id, self.checksum)
        out += struct.pack(">I", len(self.z_stream))
        out += self.z_stream
        for anchor, non_anchor in self.slice_streams:
            out += struct.pack(">I", len(anchor))
            out += anchor
            out += struct.pack(">I", len(non_anchor))
            out += non_anchor
        return bytes(out)

    @property
    def total_bytes(self) -> int:
        return len(self.serialize())

    @classmethod
    def parse(cls, data: bytes) -> "BitstreamContainer":
        pos = 0

        def take(n):
            nonlocal pos
            if pos + n > len(data):
                raise BitstreamError("truncated stream: container ended early")
            chunk = data[pos:pos + n]
            pos += n
            return chunk

        if take(4) != MAGIC:
            raise BitstreamError("bad magic: not a codec bitstream")
        version, width, height, profile_id, checksum = struct.unpack(">HIIBQ", take(19))
        if version != VERSION:
            raise BitstreamError(f"unsupported bitstream version {version}")
        profile = profile_by_id(profile_id)
        (z_len,) = struct.unpack(">I", take(4))
        z_stream = take(z_len)
        streams = []
        for _ in range(profile.num_slices):
            (a_len,) = struct.unpack(">I", take(4))
            anchor = take(a_len)
            (n_len,) = struct.unpack(">I", take(4))
            non_anchor = take(n_len)
            streams.append((anchor, non_anchor))
        if pos != len(data):
            raise BitstreamError("trailing bytes after container")
        return cls(version, width, height, profile_id, checksum, z_stream, tuple(streams))


@dataclass(frozen=True)
class EncodeOptions:
    profile: str | None = None  # when set, must match the loaded weights


@dataclass(frozen=True)
class EncodeResult:
    container: BitstreamContainer
    latents: np.ndarray  # corrected latents, identical to the decoder's
    reconstruction: np.ndarray  # (H, W, 3) uint8, identical to decode_image


def padded_size(n: int) -> int:
    return ((n + 63) // 64) * 64


def _to_unit(pixels: np.ndarray) -> np.ndarray:
    pixels = np.asarray(pixels)
    if pixels.ndim != 3 or pixels.shape[2] != 3 or pixels.dtype != np.uint8:
        raise ConfigurationError(f"encoder expects (H, W, 3) uint8 pixels, got {pixels.shape}")
    x = (pixels.astype(np.float32) / np.float32(255.0))[None]
    return np.transpose(x, (0, 3, 1, 2))


def _to_pixels(x_hat: np.ndarray, height: int, width: int) -> np.ndarray:
    img = np.transpose(x_hat[0], (1, 2, 0))[:height, :width]
    return np.floor(img.astype(np.float64) * 255.0 + 0.5).astype(np.uint8)


def _mask_indices(mask_bool: np.ndarray):
    ys, xs = np.nonzero(mask_bool)
    return ys, xs


def _pass_cdfs(sigma_sel: np.ndarray):
    return coder.build_cdf_batch(np.zeros(sigma_sel.size), sigma_sel.ravel())


def _encode_pass(y_slice, params, mask_bool):
    """Quantize + code one checkerboard pass; returns (bytes, reconstruction)."""
    ys, xs = _mask_indices(mask_bool)
    mu_sel = params.mu[0][:, ys, xs]
    sigma_sel = params.sigma[0][:, ys, xs]
    y_sel = y_slice[0][:, ys, xs]
    symbols, recon = coder.quantize_latent(y_sel, mu_sel)
    data = coder.encode_symbols(symbols.ravel(), _pass_cdfs(sigma_sel))
    placed = np.zeros_like(y_slice)
    placed[0][:, ys, xs] = recon
    return data, placed


def _decode_pass(data, params, mask_bool, slice_shape):
    ys, xs = _mask_indices(mask_bool)
    mu_sel = params.mu[0][:, ys, xs]
    sigma_sel = params.sigma[0][:, ys, xs]
    n = mu_sel.size
    symbols = np.array(coder.decode_symbols(data, _pass_cdfs(sigma_sel), n), dtype=np.int32)
    symbols = symbols.reshape(mu_sel.shape)
    recon = (symbols.astype(np.float64) + mu_sel.astype(np.float64)).astype(np.float32)
    placed = np.zeros(slice_shape, dtype=np.float32)
    placed[0][:, ys, xs] = recon
    return symbols, placed


def encode_image(pixels: np.ndarray, weights: ModelWeights,
                 options: EncodeOptions | None = None) -> BitstreamContainer:
    """Encode 8-bit RGB pixels into a self-describing container."""
    return encode_image_full(pixels, weights, options).container


def encode_image_full(pixels: np.ndarray, weights: ModelWeights,
                      options: EncodeOptions | None = None) -> EncodeResult:
    """Encode and also return the decoder-exact latents and reconstruction."""
    profile = weights.profile
    if options is not None and options.profile is not None and options.profile != profile.name:
        raise ConfigurationError(
            f"weight/profile mismatch: weights are {profile.name!r}, requested {options.profile!r}"
        )
    height, width = pixels.shape[:2]
    x = _to_unit(pixels)
    pad_h, pad_w = padded_size(height) - height, padded_size(width) - width
    x = np.pad(x, ((0, 0), (0, 0), (0, pad_h), (0, pad_w)), mode="edge")

    tparams = weights.transform_params()
    cparams = weights.context_params()

    y = analysis_transform(x, tparams)
    z = hyper_analysis(y, tparams)
    z_symbols, z_hat = coder.quantize_latent(z, 0.0, mode="direct")
    z_stream = coder.code_z(z_symbols, weights.z_tables)
    phi_hs = hyper_synthesis(z_hat, tparams)

    layout = SliceLayout(profile.num_slices, profile.latent_channels)
    y_slices = split_slices(y, layout)
    mask = checkerboard_mask(y.shape[2], y.shape[3])

    corrected = []
    streams = []
    for i, sp in enumerate(cparams):
        y_i = y_slices[i]
        p_anchor = slice_entropy_params(phi_hs, corrected, None, sp)
        anchor_bytes, y_hat_i = _encode_pass(y_i, p_anchor, mask.anchor)
        p_non = slice_entropy_params(phi_hs, corrected, y_hat_i, sp)
        non_bytes, non_part = _encode_pass(y_i, p_non, mask.non_anchor)
        y_hat_i = y_hat_i + non_part
        correction = slice_residual(phi_hs, corrected, y_hat_i, sp)
        corrected.append(y_hat_i + correction)
        streams.append((anchor_bytes, non_bytes))

    container = BitstreamContainer(
        version=VERSION, width=width, height=height,
        profile_id=profile.profile_id, checksum=weights.checksum,
        z_stream=z_stream, slice_streams=tuple(streams),
    )
    latents = np.concatenate(corrected, axis=1)
    recon = _to_pixels(synthesis_transform(latents, tparams), height, width)
    return EncodeResult(container=container, latents=latents, reconstruction=recon)


def decode_latents(container: BitstreamContainer, weights: ModelWeights,
                   on_pass=None) -> np.ndarray:
    """Entropy-decode the container back to corrected latents.

    ``on_pass(slice_index, part, symbols)`` is invoked after each coding pass
    (part is "anchor" or "non_anchor"), before any later substream is read.
    """
    if container.checksum != weights.checksum:
        raise BitstreamError(
            "checksum mismatch: bitstream was encoded with a different weight archive"
        )
    profile = profile_by_id(container.profile_id)
    if profile.name != weights.profile.name:
        raise BitstreamError("bitstream profile does not match weight archive")

    tparams = weights.transform_params()
    cparams = weights.context_params()

    ph, pw = padded_size(container.height), padded_size(container.width)
    yh, yw = ph // 16, pw // 16
    z_shape = (1, profile.hyper_channels, yh // 4, yw // 4)
    z_symbols = coder.decode_z(container.z_stream, weights.z_tables, z_shape)
    phi_hs = hyper_synthesis(z_symbols.astype(np.float32), tparams)

    mask = checkerboard_mask(yh, yw)
    slice_shape = (1, profile.slice_width, yh, yw)

    corrected = []
    for i, sp in enumerate(cparams):
        anchor_bytes, non_bytes = container.slice_streams[i]
        p_anchor = slice_entropy_params(phi_hs, corrected, None, sp)
        a_syms, y_hat_i = _decode_pass(anchor_bytes, p_anchor, mask.anchor, slice_shape)
        if on_pass is not None:
            on_pass(i, "anchor", a_syms)
        p_non = slice_entropy_params(phi_hs, corrected, y_hat_i, sp)
        n_syms, non_part = _decode_pass(non_bytes, p_non, mask.non_anchor, slice_shape)
        if on_pass is not None:
            on_pass(i, "non_anchor", n_syms)
        y_hat_i = y_hat_i + non_part
        correction = slice_residual(phi_hs, corrected, y_hat_i, sp)
        corrected.append(y_hat_i + correction)
    return np.concatenate(corrected, axis=1)


def decode_image(container: BitstreamContainer, weights: ModelWeights) -> np.ndarray:
    """Decode a container to (H, W, 3) uint8 pixels at the original size."""
    latents = decode_latents(container, weights)
    x_hat = synthesis_transform(latents, weights.transform_params())
    return _to_pixels(x_hat, container.height, container.width)
