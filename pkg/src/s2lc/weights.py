"""Model weight archive: serialization, validation, and test-weight generation.

Archive layout ("S2LW"): magic, version (u16), entry count (u32); per entry a
u16 name length, UTF-8 name, u8 rank, u32 dims, then raw little-endian float32
data; finally the hyper-latent prior tables (u32 count, then per table a u16
radius and u32 frequencies for the alphabet plus escape).  Multi-byte integers
are big-endian.  The weight generator uses its own splitmix64-based stream so
archives are byte-identical across platforms and library versions.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np

from .coder import CDF_TOTAL, QuantizedCdf, build_cdf
from .context import build_context_params, context_shape_entries
from .errors import WeightsError
from .profiles import PROFILES, Profile, profile_by_name
from .transforms import TAU_MIN, build_transform_params, transform_shape_entries

__all__ = [
    "ModelWeights",
    "expected_entries",
    "serialize_weights",
    "load_weights",
    "save_weights",
    "generate_weights",
    "weights_checksum",
]

MAGIC = b"S2LW"
VERSION = 1


@dataclass(frozen=True)
class ModelWeights:
    """Validated, immutable weight set plus hyper-latent prior tables."""

    profile: Profile
    entries: dict
    z_tables: tuple
    checksum: int

    def get(self, name: str) -> np.ndarray:
        try:
            return self.entries[name]
        except KeyError:
            raise WeightsError(f"missing entry {name!r}")

    def transform_params(self):
        return build_transform_params(self.get, self.profile)

    def context_params(self):
        return build_context_params(self.get, self.profile)


def expected_entries(profile: Profile) -> dict:
    """Full archive schema: entry name -> shape."""
    entries = transform_shape_entries(profile)
    entries.update(context_shape_entries(profile))
    return entries


def weights_checksum(data: bytes) -> int:
    """64-bit archive digest stored in bitstream headers."""
    return int.from_bytes(hashlib.blake2b(data, digest_size=8).digest(), "big")


def serialize_weights(entries: dict, z_tables) -> bytes:
    out = bytearray()
    out += MAGIC
    out += struct.pack(">HI", VERSION, len(entries))
    for name, value in entries.items():
        raw = name.encode("utf-8")
        value = np.ascontiguousarray(value, dtype=np.float32)
        out += struct.pack(">H", len(raw))
        out += raw
        out += struct.pack(">B", value.ndim)
        out += struct.pack(f">{value.ndim}I", *value.shape)
        out += value.astype("<f4").tobytes()
    out += struct.pack(">I", len(z_tables))
    for table in z_tables:
        freqs = [table.cum[i + 1] - table.cum[i] for i in range(2 * table.radius + 2)]
        out += struct.pack(">H", table.radius)
        out += struct.pack(f">{len(freqs)}I", *freqs)
    return bytes(out)


def save_weights(weights: ModelWeights) -> bytes:
    return serialize_weights(weights.entries, weights.z_tables)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise WeightsError("truncated weight archive")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_weights(data: bytes, profile: Profile | None = None) -> ModelWeights:
    """Parse and structurally validate a weight archive.

    When ``profile`` is omitted it is inferred from the first downsampling
    kernel's output width.  Every schema entry must be present with its exact
    shape, no extras are allowed, and attention temperatures must exceed the
    floor.
    """
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise WeightsError("bad magic: not a weight archive")
    version, count = r.unpack(">HI")
    if version != VERSION:
        raise WeightsError(f"unsupported weight archive version {version}")
    entries = {}
    for _ in range(count):
        (name_len,) = r.unpack(">H")
        name = r.take(name_len).decode("utf-8")
        if name in entries:
            raise WeightsError(f"duplicate entry {name!r}")
        (rank,) = r.unpack(">B")
        dims = r.unpack(f">{rank}I") if rank else ()
        n_values = int(np.prod(dims, dtype=np.int64)) if dims else 1
        raw = r.take(4 * n_values)
        entries[name] = np.frombuffer(raw, dtype="<f4").reshape(dims).astype(np.float32)
    (n_tables,) = r.unpack(">I")
    z_tables = []
    for _ in range(n_tables):
        (radius,) = r.unpack(">H")
        freqs = r.unpack(f">{2 * radius + 2}I")
        if sum(freqs) != CDF_TOTAL:
            raise WeightsError("hyper-latent table frequencies must total 65536")
        cum = [0]
        for f in freqs:
            cum.append(cum[-1] + f)
        z_tables.append(QuantizedCdf(radius, tuple(cum)))
    if r.pos != len(data):
        raise WeightsError("trailing bytes after weight archive")

    if profile is None:
        profile = _infer_profile(entries)
    schema = expected_entries(profile)
    for name, shape in schema.items():
        if name not in entries:
            raise WeightsError(f"missing entry {name!r}")
        if entries[name].shape != shape:
            raise WeightsError(
                f"entry {name!r} has shape {entries[name].shape}, expected {shape}"
            )
    extras = set(entries) - set(schema)
    if extras:
        raise WeightsError(f"unexpected entries {sorted(extras)[:3]}")
    for name, value in entries.items():
        if name.endswith(".attn.tau") and np.any(value <= TAU_MIN):
            raise WeightsError(f"entry {name!r} holds temperature <= {TAU_MIN}")
    if len(z_tables) != profile.hyper_channels:
        raise WeightsError(
            f"expected {profile.hyper_channels} hyper-latent tables, got {len(z_tables)}"
        )
    return ModelWeights(
        profile=profile, entries=entries, z_tables=tuple(z_tables),
        checksum=weights_checksum(data),
    )


def _infer_profile(entries: dict) -> Profile:
    key = "analysis.down0.weight"
    if key not in entries:
        raise WeightsError(f"missing entry {key!r}")
    width = entries[key].shape[0]
    for p in PROFILES.values():
        if p.hyper_channels == width:
            return p
    raise WeightsError(f"no profile with transform width {width}")


class _SplitMix64:
    """Tiny deterministic PRNG; avoids platform/library stream drift."""

    def __init__(self, seed: int):
        self._state = seed & 0xFFFFFFFFFFFFFFFF

    def next_u64(self) -> int:
        self._state = (self._state + 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF
        z = self._state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
        return z ^ (z >> 31)

    def uniform(self) -> float:
        return (self.next_u64() >> 11) * 2.0 ** -53

    def normal(self) -> float:
        # Irwin-Hall sum of 12 uniforms: exact float arithmetic everywhere
        return sum(self.uniform() for _ in range(12)) - 6.0

    def fill(self, shape, scale: float, offset: float = 0.0) -> np.ndarray:
        n = int(np.prod(shape, dtype=np.int64))
        vals = np.array([offset + scale * self.normal() for _ in range(n)], dtype=np.float32)
        return vals.reshape(shape)


def generate_weights(profile: Profile | str, seed: int) -> bytes:
    """Deterministic pseudo-random archive for testing; same seed, same bytes."""
    if isinstance(profile, str):
        profile = profile_by_name(profile)
    rng = _SplitMix64(seed)
    entries = {}
    for name, shape in expected_entries(profile).items():
        if name.endswith(".attn.tau"):
            entries[name] = np.ones(shape, dtype=np.float32)
        elif name.endswith(("norm1.gamma", "norm2.gamma")):
            entries[name] = rng.fill(shape, 0.05, offset=1.0)
        elif name.endswith(("norm1.beta", "norm2.beta")):
            entries[name] = rng.fill(shape, 0.05)
        elif name.endswith(".bias") or name.endswith((".cpb.b1", ".cpb.b2")):
            entries[name] = rng.fill(shape, 0.05)
        elif name.endswith((".cpb.w1", ".cpb.w2")):
            entries[name] = rng.fill(shape, 0.5)
        else:
            fan_in = int(np.prod(shape[1:], dtype=np.int64)) if len(shape) > 1 else 1
            entries[name] = rng.fill(shape, 1.0 / np.sqrt(fan_in))
    n = profile.hyper_channels
    z_tables = []
    for c in range(n):
        sigma = 0.5 + 1.5 * (c / max(1, n - 1))
        z_tables.append(build_cdf(0.0, sigma, profile.z_radius))
    return serialize_weights(entries, z_tables)
