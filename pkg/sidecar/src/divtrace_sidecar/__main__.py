"""Command line launcher: ``divtrace-sidecar [--model TAG=SPEC ...]``."""
from __future__ import annotations

import argparse
import sys

import uvicorn

from .backends import DEFAULT_REGISTRY
from .service import SidecarConfig, create_app


def build_parser() -> argparse.ArgumentParser:
    defaults = SidecarConfig()
    parser = argparse.ArgumentParser(
        prog="divtrace-sidecar",
        description="Serve embedding and entailment scorers over the JSON wire protocol.",
    )
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=defaults.port)
    parser.add_argument("--max-batch", type=int, default=defaults.max_batch)
    parser.add_argument("--device", default=defaults.device)
    parser.add_argument("--bearer-token", default=None)
    parser.add_argument(
        "--model",
        action="append",
        metavar="TAG=SPEC",
        default=None,
        help="Serve TAG via backend SPEC (repeatable; default: %s)"
        % ", ".join(f"{t}={s}" for t, s in DEFAULT_REGISTRY.items()),
    )
    return parser


def parse_registry(entries) -> dict[str, str]:
    registry = {}
    for entry in entries:
        tag, sep, spec = entry.partition("=")
        if not sep or not tag or not spec:
            raise ValueError(f"--model expects TAG=SPEC, got {entry!r}")
        registry[tag] = spec
    return registry


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        registry = parse_registry(args.model) if args.model else dict(DEFAULT_REGISTRY)
        config = SidecarConfig(
            registry=registry,
            port=args.port,
            max_batch=args.max_batch,
            device=args.device,
            bearer_token=args.bearer_token,
        )
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    uvicorn.run(create_app(config), host=args.host, port=config.port)
    return 0


if __name__ == "__main__":
    sys.exit(main())
