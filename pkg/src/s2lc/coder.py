"""Discretized-Gaussian probability tables and a lossless byte range coder.

Stream layout (normative): 64-bit low / 32-bit range coder with byte-wise
renormalization and carry propagation through the already-emitted buffer;
the final 8 bytes of the 64-bit low register are flushed big-endian.  Symbol
alphabets are [-R, R] plus one escape symbol at index 2R+1; an escape is
followed by the raw value as 32-bit two's complement big-endian, coded one
byte at a time against a uniform table.  All cumulative tables total 2**16.
"""

from __future__ import annotations

from bisect import bisect_right
from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import BitstreamError

__all__ = [
    "SIGMA_MIN",
    "CDF_TOTAL",
    "DEFAULT_RADIUS",
    "QuantizedCdf",
    "gaussian_likelihood",
    "quantize_latent",
    "build_cdf",
    "build_cdf_batch",
    "encode_symbols",
    "decode_symbols",
    "ideal_codelength",
    "code_z",
    "decode_z",
    "estimate_rate",
    "RangeEncoder",
    "RangeDecoder",
]

SIGMA_MIN = 0.11
CDF_TOTAL = 1 << 16
DEFAULT_RADIUS = 64

_TOP = 1 << 24
_MASK64 = (1 << 64) - 1
_BYPASS_CUM = tuple(range(0, CDF_TOTAL + 1, 256))  # 256 byte symbols, uniform


def gaussian_likelihood(y: np.ndarray, mu: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    """Probability mass of ``y`` under N(mu, sigma^2) convolved with U(-1/2, 1/2).

    Evaluates Phi((y - mu + 1/2)/sigma) - Phi((y - mu - 1/2)/sigma) with the
    difference taken in the nearer tail to preserve precision.
    """
    sigma = np.asarray(sigma, dtype=np.float64)
    if np.any(sigma < SIGMA_MIN - 1e-9):  # tolerance for float32-stored floors
        raise ValueError(f"sigma below floor {SIGMA_MIN}")
    d = (np.asarray(y, dtype=np.float64) - np.asarray(mu, dtype=np.float64))
    hi = (d + 0.5) / sigma
    lo = (d - 0.5) / sigma
    # reflect into the negative tail where both bounds are positive
    flip = d > 0
    hi_t = np.where(flip, -lo, hi)
    lo_t = np.where(flip, -hi, lo)
    return special.ndtr(hi_t) - special.ndtr(lo_t)


def quantize_latent(y: np.ndarray, mu: np.ndarray, mode: str = "mean_centered"):
    """Round latents to integer symbols; returns (symbols, reconstruction).

    ``mean_centered``: s = round(y - mu), reconstruction s + mu.
    ``direct``:        s = round(y),      reconstruction s.
    Rounding is half away from zero.
    """
    y64 = np.asarray(y, dtype=np.float64)
    if mode == "mean_centered":
        mu64 = np.asarray(mu, dtype=np.float64)
        centered = y64 - mu64
        symbols = _round_half_away(centered)
        recon = (symbols + mu64).astype(np.float32)
    elif mode == "direct":
        symbols = _round_half_away(y64)
        recon = symbols.astype(np.float32)
    else:
        raise ValueError(f"unknown quantization mode {mode!r}")
    return symbols.astype(np.int32), recon


def _round_half_away(x):
    return np.copysign(np.floor(np.abs(x) + 0.5), x)


@dataclass(frozen=True)
class QuantizedCdf:
    """Cumulative frequency table over symbols [-radius, radius] plus escape.

    ``cum`` has 2*radius + 3 entries, is strictly increasing, starts at 0 and
    ends at 2**16.  The escape symbol sits at index 2*radius + 1.
    """

    radius: int
    cum: tuple

    def __post_init__(self):
        n = 2 * self.radius + 2
        if len(self.cum) != n + 1:
            raise ValueError(f"cum must have {n + 1} entries, got {len(self.cum)}")
        if self.cum[0] != 0 or self.cum[-1] != CDF_TOTAL:
            raise ValueError("cum must start at 0 and end at 65536")
        if any(b <= a for a, b in zip(self.cum, self.cum[1:])):
            raise ValueError("cum must be strictly increasing (every frequency >= 1)")

    @property
    def escape_index(self) -> int:
        return 2 * self.radius + 1

    def frequency(self, index: int) -> int:
        return self.cum[index + 1] - self.cum[index]

    def symbol_index(self, symbol: int) -> int:
        """Alphabet index for a symbol, or the escape index if out of range."""
        if -self.radius <= symbol <= self.radius:
            return symbol + self.radius
        return self.escape_index


def _counts_from_pmf(pmf_rows: np.ndarray) -> np.ndarray:
    """Quantize pmf rows (tail included) to integer counts summing to 2**16.

    Largest-remainder rounding first.  Zero counts are then raised to 1 by
    draining donor symbols, lowest counts first and round-robin inside each
    equal-count group, which keeps high-probability bins untouched and
    mirror-symbol counts symmetric within one unit.
    """
    f = pmf_rows * float(CDF_TOTAL)
    base = np.floor(f).astype(np.int64)
    rem = f - base
    deficit = CDF_TOTAL - base.sum(axis=1)
    n_rows, n_sym = base.shape

    order = np.argsort(-rem, axis=1, kind="stable")
    pos = np.arange(n_sym)[None, :]
    bump = pos < deficit[:, None]
    rows = np.arange(n_rows)[:, None]
    np.add.at(base, (np.broadcast_to(rows, order.shape)[bump], order[bump]), 1)

    for i in range(n_rows):
        counts = base[i]
        zero_idx = np.nonzero(counts == 0)[0]
        need = len(zero_idx)
        if need == 0:
            continue
        counts[zero_idx] = 1
        donors = np.nonzero(counts > 1)[0]
        donors = donors[np.lexsort((donors, counts[donors]))]
        dcounts = counts[donors]
        start = 0
        while need > 0:
            level = dcounts[start]
            end = start
            while end < len(donors) and dcounts[end] == level:
                end += 1
            group = donors[start:end]
            capacity = (int(level) - 1) * len(group)
            if need >= capacity:
                counts[group] = 1
                need -= capacity
                start = end
            else:
                q, r = divmod(need, len(group))
                counts[group] -= q
                counts[group[:r]] -= 1
                need = 0
    return base


def build_cdf(mu: float, sigma: float, radius: int = DEFAULT_RADIUS) -> QuantizedCdf:
    """Quantize the discretized Gaussian on [-radius, radius] to a 16-bit table.

    The escape symbol receives the residual tail mass; every symbol keeps a
    frequency of at least 1.
    """
    return build_cdf_batch(np.array([mu]), np.array([sigma]), radius)[0]


def build_cdf_batch(mus: np.ndarray, sigmas: np.ndarray, radius: int = DEFAULT_RADIUS):
    """Vectorized :func:`build_cdf` over flat arrays of (mu, sigma) pairs."""
    mus = np.asarray(mus, dtype=np.float64).ravel()
    sigmas = np.asarray(sigmas, dtype=np.float64).ravel()
    symbols = np.arange(-radius, radius + 1, dtype=np.float64)
    pmf = gaussian_likelihood(symbols[None, :], mus[:, None], sigmas[:, None])
    tail = np.clip(1.0 - pmf.sum(axis=1, keepdims=True), 0.0, None)
    counts = _counts_from_pmf(np.concatenate([pmf, tail], axis=1))
    cums = np.concatenate(
        [np.zeros((counts.shape[0], 1), dtype=np.int64), np.cumsum(counts, axis=1)], axis=1
    )
    return [QuantizedCdf(radius, tuple(int(v) for v in row)) for row in cums]


class RangeEncoder:
    """Byte-oriented range encoder; integer arithmetic only."""

    def __init__(self):
        self._low = 0  # 64-bit; active coding window lives in bits 32..63
        self._range = 0xFFFFFFFF
        self._out = bytearray()

    def encode(self, cum_lo: int, cum_hi: int) -> None:
        """Narrow the interval to [cum_lo, cum_hi) out of CDF_TOTAL."""
        r = self._range >> 16
        low = self._low + ((cum_lo * r) << 32)
        rng = (cum_hi - cum_lo) * r
        if low > _MASK64:
            self._propagate_carry()
            low &= _MASK64
        out = self._out
        while rng < _TOP:
            out.append((low >> 56) & 0xFF)
            low = (low << 8) & _MASK64
            rng <<= 8
        self._low = low
        self._range = rng

    def encode_bypass(self, value: int) -> None:
        """Code a 32-bit two's complement value, high byte first."""
        u = value & 0xFFFFFFFF
        for shift in (24, 16, 8, 0):
            b = (u >> shift) & 0xFF
            self.encode(_BYPASS_CUM[b], _BYPASS_CUM[b + 1])

    def _propagate_carry(self):
        out = self._out
        i = len(out) - 1
        while out[i] == 0xFF:
            out[i] = 0
            i -= 1
        out[i] += 1

    def finish(self) -> bytes:
        """Flush the final 8 bytes of the low register, big-endian."""
        return bytes(self._out) + self._low.to_bytes(8, "big")


class RangeDecoder:
    """Mirror of :class:`RangeEncoder` over an immutable byte string."""

    def __init__(self, data: bytes):
        if len(data) < 8:
            raise BitstreamError("truncated stream: shorter than coder flush")
        self._data = data
        self._pos = 4
        self._code = int.from_bytes(data[:4], "big")
        self._range = 0xFFFFFFFF

    def decode(self, cum) -> int:
        """Return the alphabet index of the next symbol under ``cum``."""
        r = self._range >> 16
        t = self._code // r
        if t > CDF_TOTAL - 1:
            t = CDF_TOTAL - 1
        idx = bisect_right(cum, t) - 1
        self._code -= cum[idx] * r
        self._range = (cum[idx + 1] - cum[idx]) * r
        while self._range < _TOP:
            if self._pos >= len(self._data):
                raise BitstreamError("truncated stream: range coder ran out of bytes")
            self._code = (self._code << 8) | self._data[self._pos]
            self._pos += 1
            self._range <<= 8
        return idx

    def decode_bypass(self) -> int:
        u = 0
        for _ in range(4):
            u = (u << 8) | self.decode(_BYPASS_CUM)
        if u >= 1 << 31:
            u -= 1 << 32
        return u


def encode_symbols(symbols, cdfs) -> bytes:
    """Range-code integer symbols against per-symbol CDFs; lossless."""
    symbols = [int(s) for s in symbols]
    if len(cdfs) < len(symbols):
        raise ValueError(f"need one CDF per symbol: {len(symbols)} symbols, {len(cdfs)} CDFs")
    enc = RangeEncoder()
    for s, cdf in zip(symbols, cdfs):
        idx = cdf.symbol_index(s)
        cum = cdf.cum
        enc.encode(cum[idx], cum[idx + 1])
        if idx == cdf.escape_index:
            enc.encode_bypass(s)
    return enc.finish()


def decode_symbols(data: bytes, cdfs, count: int):
    """Inverse of :func:`encode_symbols`; the CDF sequence must be identical."""
    if count > len(cdfs):
        raise ValueError(f"cannot decode {count} symbols with {len(cdfs)} CDFs")
    dec = RangeDecoder(data)
    out = []
    for i in range(count):
        cdf = cdfs[i]
        idx = dec.decode(cdf.cum)
        if idx == cdf.escape_index:
            out.append(dec.decode_bypass())
        else:
            out.append(idx - cdf.radius)
    return out


def ideal_codelength(symbols, cdfs) -> float:
    """Sum of -log2(freq/65536) over coded symbols; escapes add 32 raw bits."""
    bits = 0.0
    for s, cdf in zip(symbols, cdfs):
        idx = cdf.symbol_index(int(s))
        bits += -np.log2(cdf.frequency(idx) / CDF_TOTAL)
        if idx == cdf.escape_index:
            bits += 32.0
    return bits


def code_z(z_hat: np.ndarray, tables) -> bytes:
    """Code integer hyper-latents channel by channel with stored tables."""
    z_hat = np.asarray(z_hat)
    n_ch = z_hat.shape[1]
    if len(tables) != n_ch:
        raise ValueError(f"need {n_ch} z tables, got {len(tables)}")
    enc = RangeEncoder()
    flat = z_hat.reshape(z_hat.shape[0] * n_ch, -1) if z_hat.ndim == 4 else z_hat.reshape(n_ch, -1)
    for c in range(n_ch):
        cdf = tables[c]
        cum = cdf.cum
        esc = cdf.escape_index
        for s in flat[c]:
            s = int(s)
            idx = cdf.symbol_index(s)
            enc.encode(cum[idx], cum[idx + 1])
            if idx == esc:
                enc.encode_bypass(s)
    return enc.finish()


def decode_z(data: bytes, tables, shape) -> np.ndarray:
    """Inverse of :func:`code_z` for a (1, C, H, W) target shape."""
    _, n_ch, h, w = shape
    if len(tables) != n_ch:
        raise ValueError(f"need {n_ch} z tables, got {len(tables)}")
    dec = RangeDecoder(data)
    out = np.empty((n_ch, h * w), dtype=np.int32)
    for c in range(n_ch):
        cdf = tables[c]
        cum = cdf.cum
        esc = cdf.escape_index
        radius = cdf.radius
        row = out[c]
        for i in range(h * w):
            idx = dec.decode(cum)
            row[i] = dec.decode_bypass() if idx == esc else idx - radius
    return out.reshape(shape)


def estimate_rate(symbols, params) -> float:
    """Ideal rate in bits: sum of -log2 p(s; 0, sigma) over mean-centered symbols.

    ``params`` may be an EntropyParams-like object (its ``sigma`` field is
    used) or a bare sigma array broadcastable against ``symbols``.
    """
    sigma = getattr(params, "sigma", params)
    p = gaussian_likelihood(np.asarray(symbols, dtype=np.float64), 0.0, sigma)
    with np.errstate(divide="ignore"):
        return float(np.sum(-np.log2(p)))
