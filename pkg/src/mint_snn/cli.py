"""Command-line entry point: ``mint-snn <command> [options]``.

Every command accepts ``--config FILE`` with ``key = value`` lines; flags on
the command line override file values. Reports start with ``# key = value``
lines echoing the resolved configuration, followed by a CSV table whose
leading columns repeat the configuration.
"""

from __future__ import annotations

import argparse
import sys

from . import analyzers as an
from . import model_io as mio
from .datasets import DatasetFormatError, load_dataset
from .equivalence import run_equivalence
from .lif_reference import LifConfig, run_network_float
from .mint_engine import mint_forward, quantize_network
from .network import ARCHITECTURES, architecture
from .trainer import TrainConfig, TrainingDiverged, train

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NOT_FOUND = 3
EXIT_FORMAT = 4
EXIT_DIVERGED = 5
EXIT_MISMATCH = 6

DEFAULT_DATA = "synthetic:classes=4,dim=16,n=10000,seed=7"


class CommandError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _bits(text: str) -> int:
    value = int(text)
    if not 2 <= value <= 32:
        raise argparse.ArgumentTypeError(f"bit-width must be in [2, 32], got {value}")
    return value


def _positive(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {value}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mint-snn", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    parser.set_defaults(subparsers={})

    def command(name, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text)
        parser.get_default("subparsers")[name] = p
        p.add_argument("--config", help="key = value file supplying defaults")
        p.add_argument("--out", help="also write the report to this file")
        return p

    p = command("train", "train a network on a dataset and save a checkpoint")
    p.add_argument("--data", default=DEFAULT_DATA, help="IDX directory, 'images,labels', or synthetic:<spec>")
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--epochs", type=_positive, default=20)
    p.add_argument("--batch-size", type=_positive, default=64)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--timesteps", type=_positive, default=4)
    p.add_argument("--tau", type=float, default=0.5)
    p.add_argument("--vth", type=float, default=0.5)
    p.add_argument("--reset", choices=("hard", "soft"), default="hard")
    p.add_argument("--wbits", type=_bits, help="quantization-aware training weight bits")
    p.add_argument("--ubits", type=_bits, help="quantization-aware training membrane bits")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--checkpoint", required=False, default="model.mint", help="output checkpoint path")
    p.add_argument("--metrics", help="per-epoch metrics CSV path")

    p = command("quantize", "convert a float checkpoint into an integer-only checkpoint")
    p.add_argument("--checkpoint", required=False, help="float checkpoint to read")
    p.add_argument("--output", required=False, help="quantized checkpoint to write")
    p.add_argument("--wbits", type=_bits)
    p.add_argument("--ubits", type=_bits)

    p = command("eval", "run the integer engine over a dataset")
    p.add_argument("--checkpoint", required=False)
    p.add_argument("--data", default=DEFAULT_DATA)
    p.add_argument("--test-fraction", type=float, default=0.2,
                   help="evaluate on this tail fraction (1 for the whole set)")
    p.add_argument("--timesteps", type=_positive)
    p.add_argument("--batch-size", type=_positive, default=256)

    p = command("sparsity", "measure spike sparsity of a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=False)
    p.add_argument("--data", default=DEFAULT_DATA)
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--timesteps", type=_positive)
    p.add_argument("--batch-size", type=_positive, default=256)

    p = command("footprint", "weight and membrane memory of an architecture")
    p.add_argument("--arch", choices=sorted(ARCHITECTURES), default="vgg16-cifar10")
    p.add_argument("--wbits", type=_bits, default=2)
    p.add_argument("--ubits", type=_bits, default=2)
    p.add_argument("--batch", type=_positive, default=1)
    p.add_argument("--timesteps", type=_positive, default=1,
                   help="membrane slots kept per neuron (1 = state carried across steps)")

    p = command("hwcost", "relative area and power of a PE array")
    p.add_argument("--datapath", choices=an.DATAPATHS + ("all",), default="all")
    p.add_argument("--wbits", type=_bits, default=4)
    p.add_argument("--ubits", type=_bits, default=4)
    p.add_argument("--array-size", type=_positive, default=128)
    p.add_argument("--cost-table", help="key = value cost table overriding the defaults")

    p = command("equiv-check", "compare integer and simulated-quantization spike trains")
    p.add_argument("--seeds", type=_positive, default=500)
    p.add_argument("--start", type=int, default=0)
    return parser


def _apply_config(parser: argparse.ArgumentParser, argv: list) -> argparse.Namespace:
    args = parser.parse_args(argv)
    if not args.config:
        return args
    try:
        values = mio.load_config(args.config)
    except FileNotFoundError:
        raise CommandError(f"config file not found: {args.config}", EXIT_NOT_FOUND) from None
    except ValueError as exc:
        raise CommandError(str(exc), EXIT_FORMAT) from None
    subparser = args.subparsers[args.command]
    known = set(_resolved(subparser.parse_args([])))
    unknown = sorted(set(values) - known)
    if unknown:
        raise CommandError(f"unknown config keys for {args.command}: {', '.join(unknown)}", EXIT_USAGE)
    subparser.set_defaults(**values)
    return parser.parse_args(argv)


def _resolved(args) -> dict:
    return {k: v for k, v in vars(args).items() if k not in ("config", "out", "subparsers")}


def _emit(args, config: dict, rows: list, summary: list) -> None:
    header = "".join(f"# {k} = {v}\n" for k, v in config.items())
    text = header + an.csv_text(rows)
    sys.stdout.write(text)
    for line in summary:
        print(line)
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)


def _split(args):
    ds = load_dataset(args.data)
    if args.test_fraction >= 1:
        return ds, ds
    return ds.split(args.test_fraction)


def _need(path, flag):
    if not path:
        raise CommandError(f"{flag} is required", EXIT_USAGE)
    return path


def cmd_train(args) -> int:
    config = _resolved(args)
    cfg = TrainConfig(batch_size=args.batch_size, learning_rate=args.lr, timesteps=args.timesteps,
                      tau=args.tau, v_th=args.vth, reset=args.reset, epochs=args.epochs,
                      n_w=args.wbits, n_u=args.ubits, seed=args.seed)
    train_set, test_set = _split(args)
    state, metrics = train(train_set, cfg, test_set)
    ckpt = mio.Checkpoint(state.net, cfg.timesteps, cfg.v_th, cfg.reset, cfg.leak_shift, state.qparams)
    mio.save_checkpoint(args.checkpoint, ckpt)
    rows = [{**config, **m} for m in metrics]
    text = "".join(f"# {k} = {v}\n" for k, v in config.items()) + an.csv_text(rows)
    if args.metrics:
        with open(args.metrics, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    _emit(args, config, rows, [f"saved checkpoint to {args.checkpoint}"])
    return EXIT_OK


def cmd_quantize(args) -> int:
    src = mio.load_checkpoint(_need(args.checkpoint, "--checkpoint"))
    out_path = _need(args.output, "--output")
    if src.quantized:
        raise CommandError("checkpoint is already quantized", EXIT_FORMAT)
    trained = src.qparams
    n_w = args.wbits or (trained[0].n_w if trained else 8)
    n_u = args.ubits or (trained[0].n_u if trained else n_w)
    alphas = None
    if trained and all((qp.n_w, qp.n_u) == (n_w, n_u) for qp in trained):
        alphas = [qp.alpha for qp in trained]
    mint = quantize_network(src.net, n_w, n_u, src.v_th, alphas=alphas, reset=src.reset,
                            leak_shift=src.leak_shift)
    mio.save_checkpoint(out_path, mio.Checkpoint(mint, src.timesteps))
    config = {**_resolved(args), "wbits": n_w, "ubits": n_u}
    rows = [{**config, "layer": i, "alpha": qp.alpha, "theta": qp.theta}
            for i, qp in zip(mint.weighted_indices, mint.qparams())]
    _emit(args, config, rows, [f"saved quantized checkpoint to {out_path}"])
    return EXIT_OK


def _run_dataset(args, ckpt):
    timesteps = args.timesteps or ckpt.timesteps
    _, test_set = _split(args)
    correct = spikes = slots = 0
    for start in range(0, len(test_set), args.batch_size):
        x = test_set.x[start:start + args.batch_size]
        if ckpt.quantized:
            logits, record = mint_forward(ckpt.net, x, timesteps)
        else:
            lif = LifConfig(ckpt.v_th, 2.0 ** -ckpt.leak_shift, ckpt.reset, timesteps)
            logits, record = run_network_float(ckpt.net, x, lif)
        correct += int((logits.argmax(axis=1) == test_set.y[start:start + args.batch_size]).sum())
        spikes += record.total_spikes()
        slots += record.slots()
    acc = correct / len(test_set)
    sp = 1.0 - spikes / slots if slots else 1.0
    return timesteps, acc, sp


def cmd_eval(args) -> int:
    ckpt = mio.load_checkpoint(_need(args.checkpoint, "--checkpoint"))
    if not ckpt.quantized:
        raise CommandError("eval needs a quantized checkpoint; run 'quantize' first", EXIT_FORMAT)
    timesteps, acc, sp = _run_dataset(args, ckpt)
    config = {**_resolved(args), "timesteps": timesteps}
    _emit(args, config, [{**config, "accuracy": acc, "sparsity": sp}],
          [f"accuracy {acc:.4f}", f"sparsity {sp:.4f}"])
    return EXIT_OK


def cmd_sparsity(args) -> int:
    ckpt = mio.load_checkpoint(_need(args.checkpoint, "--checkpoint"))
    timesteps, _, sp = _run_dataset(args, ckpt)
    config = {**_resolved(args), "timesteps": timesteps}
    per_neuron = an.expected_spikes_per_neuron(sp, timesteps)
    _emit(args, config, [{**config, "sparsity": sp, "spikes_per_neuron": per_neuron}],
          [f"sparsity {sp:.4f}", f"expected spikes per neuron {per_neuron:.4f}"])
    return EXIT_OK


def cmd_footprint(args) -> int:
    net = architecture(args.arch)
    config = _resolved(args)
    rep = an.footprint(net, args.wbits, args.ubits, args.batch, args.timesteps)
    base = an.footprint(net, 32, 32, args.batch, args.timesteps)
    reduction = rep.reduction_vs(base)
    row = an.report_row(config, rep)
    row["reduction_vs_fp32"] = reduction
    _emit(args, config, [row], [f"total {rep.total_bytes / 2**20:.2f} MiB, "
                                f"{100 * reduction:.2f}% reduction vs fp32"])
    return EXIT_OK


def cmd_hwcost(args) -> int:
    table = an.load_cost_table(args.cost_table) if args.cost_table else an.CostTable()
    config = _resolved(args)
    paths = an.DATAPATHS if args.datapath == "all" else (args.datapath,)
    rows = []
    for dp in paths:
        rep = an.pe_cost(dp, args.wbits, args.ubits, args.array_size, table)
        rows.append({**config, "datapath": dp, "relative_area": rep.relative_area,
                     "relative_dynamic_power": rep.relative_dynamic_power,
                     "relative_static_power": rep.relative_static_power})
    _emit(args, config, rows, [])
    return EXIT_OK


def cmd_equiv_check(args) -> int:
    result = run_equivalence(args.seeds, args.start)
    config = _resolved(args)
    row = {**config, "networks": result.networks, "mismatches": result.mismatches,
           "spike_bits": result.spike_bits}
    _emit(args, config, [row], [f"{result.networks} networks, {result.mismatches} mismatches"])
    if result.mismatches:
        raise CommandError(f"mismatching seeds: {result.failing_seeds[:20]}", EXIT_MISMATCH)
    return EXIT_OK


COMMANDS = {
    "train": cmd_train, "quantize": cmd_quantize, "eval": cmd_eval, "sparsity": cmd_sparsity,
    "footprint": cmd_footprint, "hwcost": cmd_hwcost, "equiv-check": cmd_equiv_check,
}


def main(argv: list | None = None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = _apply_config(parser, argv)
        return COMMANDS[args.command](args)
    except SystemExit as exc:
        return int(exc.code or 0)
    except CommandError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename or exc}", file=sys.stderr)
        return EXIT_NOT_FOUND
    except (mio.CheckpointError, DatasetFormatError) as exc:
        print(f"error: bad file format: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except TrainingDiverged as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except ValueError as exc:
        print(f"error: invalid argument: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
