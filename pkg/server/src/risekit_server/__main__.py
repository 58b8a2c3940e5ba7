"""CLI entry point: risekit-server --model resnet50 --port 8750."""

import argparse

import uvicorn

from .app import create_app
from .model import SUPPORTED_MODELS, Classifier, ServerConfig


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="risekit-server",
        description="HTTP scorer exposing a pretrained classifier for masking probes",
    )
    parser.add_argument("--model", default="resnet50", choices=SUPPORTED_MODELS)
    parser.add_argument(
        "--weights",
        default="pretrained",
        choices=("pretrained", "random"),
        help="'random' serves a seeded untrained network (protocol testing)",
    )
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8750)
    parser.add_argument("--max-batch", type=int, default=32)
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument(
        "--logits", action="store_true", help="return raw logits instead of probabilities"
    )
    return parser


def main() -> None:
    args = build_parser().parse_args()
    config = ServerConfig(
        model_name=args.model,
        weights=args.weights,
        device=args.device,
        host=args.host,
        port=args.port,
        max_batch=args.max_batch,
        seed=args.seed,
        return_logits=args.logits,
    )
    app = create_app(Classifier(config))
    uvicorn.run(app, host=config.host, port=config.port, log_level="info")


if __name__ == "__main__":
    main()
