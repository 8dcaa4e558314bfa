"""Launch the sidecar with uvicorn."""

from __future__ import annotations

import argparse
import os

from .app import ServeConfig, create_app


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="modelserve", description=__doc__)
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8731)
    parser.add_argument("--embed-model", choices=["toy", "clip", "none"], default="toy")
    parser.add_argument("--dim", type=int, default=512, help="toy embedder dimension")
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--max-batch", type=int, default=8)
    parser.add_argument(
        "--enable",
        nargs="+",
        choices=["embed", "caption", "generate"],
        default=["embed", "caption", "generate"],
    )
    parser.add_argument("--token", default=os.environ.get("MODELSERVE_TOKEN"))
    args = parser.parse_args(argv)

    config = ServeConfig(
        host=args.host,
        port=args.port,
        embed_model=args.embed_model,
        dim=args.dim,
        device=args.device,
        max_batch=args.max_batch,
        enable=tuple(args.enable),
        token=args.token,
    )
    import uvicorn

    uvicorn.run(create_app(config), host=config.host, port=config.port)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
