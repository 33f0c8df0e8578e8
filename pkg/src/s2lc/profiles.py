"""Model profiles: channel widths, slice counts, and attention geometry.

The profile id is baked into the bitstream header so containers are
self-describing without shipping tensor shapes.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ConfigurationError


@dataclass(frozen=True)
class Profile:
    name: str
    profile_id: int
    hyper_channels: int  # N: hyper / intermediate transform width
    latent_channels: int  # M: latent width
    num_slices: int  # L
    window: int  # attention window side in the transforms
    heads: int  # attention heads per S2TL
    deform_heads: int
    deform_points: int = 4
    offset_scale: float = 4.0  # deformable offsets bounded to +/- this many cells
    mlp_ratio: int = 2
    cpb_hidden: int = 64
    z_radius: int = 16  # alphabet radius of the stored hyper-latent tables

    def __post_init__(self):
        if self.latent_channels % self.num_slices != 0:
            raise ConfigurationError(
                f"slice count {self.num_slices} must divide latent width {self.latent_channels}"
            )

    @property
    def slice_width(self) -> int:
        return self.latent_channels // self.num_slices

    @property
    def ctx_width(self) -> int:
        """Width of the channel/global/spatial context features per slice."""
        return 2 * self.slice_width


PROFILES = {
    "desk": Profile(
        name="desk", profile_id=0, hyper_channels=8, latent_channels=32,
        num_slices=4, window=4, heads=2, deform_heads=2,
    ),
    "full": Profile(
        name="full", profile_id=1, hyper_channels=192, latent_channels=320,
        num_slices=10, window=8, heads=6, deform_heads=4,
    ),
}


def profile_by_name(name: str) -> Profile:
    try:
        return PROFILES[name]
    except KeyError:
        raise ConfigurationError(f"unknown profile {name!r}; choose from {sorted(PROFILES)}")


def profile_by_id(profile_id: int) -> Profile:
    for p in PROFILES.values():
        if p.profile_id == profile_id:
            return p
    raise ConfigurationError(f"unknown profile id {profile_id}")
