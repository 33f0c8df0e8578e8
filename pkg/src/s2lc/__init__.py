"""Forward-inference learned image codec.

A numpy library implementing the full decode/encode path of a
transformer-based learned image codec: dense-block feature enhancement,
residual SwinV2 transformer transforms, a checkerboard entropy model with
adaptive channel-wise and deformable global-inter context, a discretized
Gaussian conditional, and a bit-exact byte range coder, plus rate-distortion
metrics and a small CLI.
"""

from .coder import (
    QuantizedCdf,
    build_cdf,
    decode_symbols,
    encode_symbols,
    estimate_rate,
    gaussian_likelihood,
    quantize_latent,
)
from .context import (
    CheckerboardMask,
    EntropyParams,
    SliceLayout,
    checkerboard_mask,
    checkerboard_split,
    split_slices,
)
from .errors import (
    BitstreamError,
    CodecError,
    ConfigurationError,
    ImageError,
    ShapeError,
    WeightsError,
)
from .imageio import read_pgm, read_ppm, write_pgm, write_ppm
from .metrics import LAMBDA_PRESETS, RdPoint, bd_rate, inspect_latents, psnr, rd_loss
from .pipeline import (
    BitstreamContainer,
    EncodeOptions,
    EncodeResult,
    decode_image,
    decode_latents,
    encode_image,
    encode_image_full,
)
from .profiles import PROFILES, Profile
from .weights import ModelWeights, generate_weights, load_weights, save_weights

__version__ = "0.1.0"

__all__ = [
    "QuantizedCdf", "build_cdf", "decode_symbols", "encode_symbols",
    "estimate_rate", "gaussian_likelihood", "quantize_latent",
    "CheckerboardMask", "EntropyParams", "SliceLayout",
    "checkerboard_mask", "checkerboard_split", "split_slices",
    "BitstreamError", "CodecError", "ConfigurationError", "ImageError",
    "ShapeError", "WeightsError",
    "read_pgm", "read_ppm", "write_pgm", "write_ppm",
    "LAMBDA_PRESETS", "RdPoint", "bd_rate", "inspect_latents", "psnr", "rd_loss",
    "BitstreamContainer", "EncodeOptions", "EncodeResult",
    "decode_image", "decode_latents", "encode_image", "encode_image_full",
    "PROFILES", "Profile",
    "ModelWeights", "generate_weights", "load_weights", "save_weights",
    "__version__",
]
