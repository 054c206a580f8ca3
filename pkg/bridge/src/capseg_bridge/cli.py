"""Command line for the bridge.

    capseg-bridge dump photo.jpg -o embeddings/
    capseg-bridge serve --port 8644

``dump`` writes one ``.peg`` per resolution next to nothing else; ``serve``
blocks until interrupted.  Bad arguments exit 2, model and image failures
exit 1, both with a message on stderr.
"""

import argparse
import sys

from capseg_bridge.config import BridgeConfig
from capseg_bridge.dump import DEFAULT_RESOLUTIONS, dump_embeddings
from capseg_bridge.errors import BridgeError, ConfigError
from capseg_bridge.server import serve


def _resolutions(text: str) -> tuple[int, ...]:
    try:
        values = tuple(int(part) for part in text.split(",") if part.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad resolution list {text!r}") from None
    if not values:
        raise argparse.ArgumentTypeError("resolution list is empty")
    return values


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="capseg-bridge", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="verb", required=True)

    dump = sub.add_parser("dump", help="encode an image into .peg embedding grids")
    dump.add_argument("image", help="input image file")
    dump.add_argument("-o", "--out-dir", default=".", help="output directory (default: .)")
    dump.add_argument(
        "--resolutions",
        type=_resolutions,
        default=DEFAULT_RESOLUTIONS,
        metavar="R1,R2",
        help="encoder input resolutions (default: 384,512)",
    )
    dump.add_argument("--model", default="stub:0", help="encoder model identifier")
    dump.add_argument("--device", default="cpu")

    srv = sub.add_parser("serve", help="run the caption/segment/generate services")
    srv.add_argument("--host", default="127.0.0.1")
    srv.add_argument("--port", type=int, default=8644)
    srv.add_argument("--device", default="cpu")
    srv.add_argument("--caption-model", default="stub:0", help="empty string disables the endpoint")
    srv.add_argument("--segment-model", default="stub:0")
    srv.add_argument("--generate-model", default="stub:0")
    srv.add_argument("--quiet", action="store_true", help="no per-request log lines")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.verb == "dump":
            written = dump_embeddings(
                args.image,
                args.out_dir,
                resolutions=args.resolutions,
                encoder_model=args.model,
                device=args.device,
            )
            for path in written:
                print(path)
        else:
            cfg = BridgeConfig(
                encoder_model="",
                caption_model=args.caption_model,
                segment_model=args.segment_model,
                generate_model=args.generate_model,
                device=args.device,
                host=args.host,
                port=args.port,
            )
            serve(cfg, verbose=not args.quiet)
    except ConfigError as exc:
        print(f"capseg-bridge: {exc}", file=sys.stderr)
        return 2
    except BridgeError as exc:
        print(f"capseg-bridge: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        return 130
    return 0


if __name__ == "__main__":
    sys.exit(main())
