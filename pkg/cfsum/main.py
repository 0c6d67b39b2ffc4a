import argparse
import sys
from typing import List, Optional

import structlog

from cfsum.errors import CFSumError
from cfsum.log_config import configure_logging
from cfsum.resources.dataset import cmd_synth
from cfsum.resources.diagnostics import cmd_gradcheck
from cfsum.resources.experiment import ABLATION_ROWS, cmd_ablate, cmd_eval, cmd_params, cmd_predict, cmd_train

logger = structlog.get_logger(__name__)


def _add_ablation_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--modalities", help="enabled modalities as letters: v, va, vt or vat")
    parser.add_argument("--no-autoencoder", action="store_true", help="skip the modal autoencoder attention")
    parser.add_argument("--no-fusion-module", dest="no_fusion", action="store_true", help="skip the joint fusion stage")
    parser.add_argument(
        "--no-interaction-module", dest="no_interaction", action="store_true", help="feed fused video straight to the head"
    )


def _ablation(args) -> dict:
    return {
        "modalities": args.modalities,
        "no_autoencoder": args.no_autoencoder,
        "no_fusion": args.no_fusion,
        "no_interaction": args.no_interaction,
    }


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cfsum", description="Query-conditioned multimodal video summarization")
    commands = parser.add_subparsers(dest="command", required=True)

    synth = commands.add_parser("synth", help="write a planted-signal synthetic dataset")
    synth.add_argument("--config", required=True, help="run config JSON with a data.synth section")
    synth.add_argument("--out", required=True, help="output directory")
    synth.add_argument("--force", action="store_true", help="write into a non-empty directory")
    synth.set_defaults(handler=lambda a: cmd_synth(a.config, a.out, a.force))

    train = commands.add_parser("train", help="train a model and write checkpoint, metrics log and report")
    train.add_argument("--config", required=True)
    _add_ablation_flags(train)
    train.set_defaults(handler=lambda a: cmd_train(a.config, **_ablation(a)))

    evaluate = commands.add_parser("eval", help="evaluate a checkpoint and print mAP / HIT@1")
    evaluate.add_argument("--config", required=True)
    evaluate.add_argument("--checkpoint", help="defaults to the checkpoint in the run's output directory")
    evaluate.set_defaults(handler=lambda a: cmd_eval(a.config, a.checkpoint))

    predict = commands.add_parser("predict", help="print per-clip scores for one sample")
    predict.add_argument("--checkpoint", required=True)
    predict.add_argument("--manifest", required=True)
    predict.add_argument("--sample", required=True, help="sample_id inside the manifest")
    predict.set_defaults(handler=lambda a: cmd_predict(a.checkpoint, a.manifest, a.sample))

    ablate = commands.add_parser("ablate", help="train and evaluate the modality and module ablation rows")
    ablate.add_argument("--config", required=True)
    ablate.add_argument("--seeds", type=int, nargs="+", default=[0])
    ablate.add_argument("--rows", nargs="+", choices=list(ABLATION_ROWS))
    ablate.set_defaults(handler=lambda a: cmd_ablate(a.config, a.seeds, a.rows))

    params = commands.add_parser("params", help="print parameter counts per module")
    params.add_argument("--config", required=True)
    _add_ablation_flags(params)
    params.set_defaults(handler=lambda a: cmd_params(a.config, **_ablation(a)))

    gradcheck = commands.add_parser("gradcheck", help="finite-difference check of all gradients")
    gradcheck.add_argument("--seed", type=int, default=0)
    gradcheck.add_argument("--full", action="store_true", help="check every coordinate instead of a sample")
    gradcheck.set_defaults(handler=lambda a: cmd_gradcheck(a.seed, a.full))
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging()
    try:
        output = args.handler(args)
    except CFSumError as e:
        logger.error("Command failed", command=args.command, **e.to_dict())
        print(f"error {e.code}: {e.message}", file=sys.stderr)
        return e.exit_code
    except Exception:
        logger.error("Unexpected error", command=args.command, exc_info=True)
        return 1
    if output:
        print(output)
    return 0


if __name__ == "__main__":
    sys.exit(main())
