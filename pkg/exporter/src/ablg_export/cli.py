"""CLI: ablg-export --ckpt model.pt --arch arch.json --out model.ablg
                    [--manifest manifest.json]"""

import argparse
import sys

from .arch import ExportError
from .export import export


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="ablg-export",
        description="Convert a PyTorch checkpoint into the portable ABLG weight format.")
    parser.add_argument("--ckpt", required=True, help="PyTorch checkpoint (.pt)")
    parser.add_argument("--arch", required=True, help="architecture descriptor JSON")
    parser.add_argument("--out", required=True, help="output .ablg path")
    parser.add_argument("--manifest", default=None,
                        help="manifest path (default: <out>.manifest.json)")
    args = parser.parse_args(argv)
    try:
        result = export(args.ckpt, args.arch, args.out, args.manifest)
    except ExportError as e:
        print(f"export rejected: {e}", file=sys.stderr)
        return 1
    print(f"wrote {result.weights_path} and {result.manifest_path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
