"""Command-line surface: encode, decode, inspect, metrics, bdrate, genweights.

Exit codes: 0 on success, 1 on usage errors, 2 on data errors (bad files,
truncated streams, checksum mismatches).
"""

from __future__ import annotations

import argparse
import csv
import sys

from .errors import CodecError
from .imageio import read_ppm, write_ppm
from .metrics import LAMBDA_PRESETS, bd_rate, inspect_latents, mse, psnr, rd_loss
from .pipeline import BitstreamContainer, EncodeOptions, decode_image, encode_image_full
from .profiles import PROFILES
from .weights import generate_weights, load_weights

__all__ = ["cli_main", "main"]


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="s2lc", description="Learned image codec tools")
    sub = parser.add_subparsers(dest="command", required=True)

    enc = sub.add_parser("encode", help="encode a PPM image to a bitstream")
    enc.add_argument("-i", "--input", required=True, help="input image (binary P6 PPM)")
    enc.add_argument("-w", "--weights", required=True, help="weight archive (.s2lw)")
    enc.add_argument("-o", "--output", required=True, help="output bitstream (.s2lc)")
    enc.add_argument("--profile", choices=sorted(PROFILES), default=None)
    enc.add_argument("--lambda", dest="lam", type=float, default=0.013,
                     help="rate-distortion preset used for the reported loss")

    dec = sub.add_parser("decode", help="decode a bitstream to a PPM image")
    dec.add_argument("-i", "--input", required=True)
    dec.add_argument("-w", "--weights", required=True)
    dec.add_argument("-o", "--output", required=True)

    ins = sub.add_parser("inspect", help="write the decoded latent magnitude map as PGM")
    ins.add_argument("-i", "--input", required=True)
    ins.add_argument("-w", "--weights", required=True)
    ins.add_argument("-o", "--output", required=True)

    met = sub.add_parser("metrics", help="PSNR / bpp / RD loss between two images")
    met.add_argument("--ref", required=True)
    met.add_argument("--test", required=True)
    met.add_argument("--bits", required=True, type=int, help="coded size in bits")

    bdr = sub.add_parser("bdrate", help="Bjontegaard delta rate between two RD curves")
    bdr.add_argument("--anchor", required=True, help="anchor curve CSV (bpp,psnr)")
    bdr.add_argument("--test", required=True, help="test curve CSV (bpp,psnr)")

    gen = sub.add_parser("genweights", help="generate a deterministic test weight archive")
    gen.add_argument("--profile", choices=sorted(PROFILES), default="desk")
    gen.add_argument("-o", "--output", required=True)
    gen.add_argument("--seed", type=int, default=0)
    return parser


def _read_curve(path):
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header] != ["bpp", "psnr"]:
            raise CodecError(f"{path}: expected CSV header 'bpp,psnr'")
        return [(float(row[0]), float(row[1])) for row in reader if row]


def _load_archive(path, profile_name=None):
    profile = PROFILES[profile_name] if profile_name else None
    with open(path, "rb") as f:
        return load_weights(f.read(), profile)


def _cmd_encode(args) -> int:
    if args.lam not in LAMBDA_PRESETS:
        raise _UsageError(
            f"--lambda must be one of {', '.join(str(v) for v in LAMBDA_PRESETS)}"
        )
    pixels = read_ppm(args.input)
    weights = _load_archive(args.weights, args.profile)
    result = encode_image_full(pixels, weights, EncodeOptions(profile=args.profile))
    data = result.container.serialize()
    with open(args.output, "wb") as f:
        f.write(data)
    n_pixels = pixels.shape[0] * pixels.shape[1]
    bpp = 8.0 * len(data) / n_pixels
    err = mse(pixels, result.reconstruction)
    loss = rd_loss(8.0 * len(data), n_pixels, err, args.lam)
    print(f"bytes={len(data)} bpp={bpp:.6f} psnr={psnr(pixels, result.reconstruction):.4f} "
          f"mse={err:.4f} lambda={args.lam} loss={loss:.6f}")
    return 0


def _cmd_decode(args) -> int:
    with open(args.input, "rb") as f:
        container = BitstreamContainer.parse(f.read())
    weights = _load_archive(args.weights)
    pixels = decode_image(container, weights)
    write_ppm(args.output, pixels)
    print(f"decoded {pixels.shape[1]}x{pixels.shape[0]} -> {args.output}")
    return 0


def _cmd_inspect(args) -> int:
    with open(args.input, "rb") as f:
        container = BitstreamContainer.parse(f.read())
    weights = _load_archive(args.weights)
    img = inspect_latents(container, weights, args.output)
    print(f"latent map {img.shape[1]}x{img.shape[0]} -> {args.output}")
    return 0


def _cmd_metrics(args) -> int:
    ref = read_ppm(args.ref)
    test = read_ppm(args.test)
    n_pixels = ref.shape[0] * ref.shape[1]
    err = mse(ref, test)
    print(f"psnr={psnr(ref, test):.4f}")
    print(f"bpp={args.bits / n_pixels:.6f}")
    for lam in LAMBDA_PRESETS:
        print(f"loss[lambda={lam}]={rd_loss(args.bits, n_pixels, err, lam):.6f}")
    return 0


def _cmd_bdrate(args) -> int:
    anchor = _read_curve(args.anchor)
    test = _read_curve(args.test)
    print(f"bd-rate={bd_rate(anchor, test):+.4f}%")
    return 0


def _cmd_genweights(args) -> int:
    data = generate_weights(args.profile, args.seed)
    with open(args.output, "wb") as f:
        f.write(data)
    print(f"wrote {len(data)} bytes ({args.profile}, seed {args.seed}) -> {args.output}")
    return 0


_COMMANDS = {
    "encode": _cmd_encode,
    "decode": _cmd_decode,
    "inspect": _cmd_inspect,
    "metrics": _cmd_metrics,
    "bdrate": _cmd_bdrate,
    "genweights": _cmd_genweights,
}


def cli_main(argv) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # argparse --help
        return int(exc.code or 0)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except CodecError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(cli_main(sys.argv[1:]))
