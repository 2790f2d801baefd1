"""Command-line entry point: ``tsrlab <command> ...``.

Exit status is 0 on success, 1 on a usage error and 2 when the inputs are
unreadable or malformed.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time

from . import __version__, arch, grammar, harness
from .errors import GrammarError, TsrLabError

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit with 2, which we reserve for data errors
        self.print_usage(sys.stderr)
        raise _UsageError(f"{self.prog}: error: {message}")


def default_seed() -> int:
    raw = os.environ.get("TSRLAB_SEED")
    if raw is None or raw == "":
        return 0
    try:
        return int(raw)
    except ValueError:
        raise _UsageError(f"TSRLAB_SEED must be an integer, got {raw!r}") from None


def _size(text: str) -> tuple[int, int]:
    parts = text.lower().replace("x", ",").split(",")
    try:
        dims = [int(p) for p in parts if p]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad size {text!r}") from None
    if len(dims) == 1:
        dims *= 2
    if len(dims) != 2 or min(dims) < 1:
        raise argparse.ArgumentTypeError(f"bad size {text!r}")
    return dims[0], dims[1]


# -- commands --------------------------------------------------------------


def cmd_analyze(args) -> int:
    names = arch.preset_names() if args.preset == "all" else [args.preset]
    reports = [arch.report(arch.preset(n, input_size=args.input_size), args.decode_len) for n in names]
    if args.json:
        payload = [r.to_dict() for r in reports] if len(reports) > 1 else reports[0].to_dict()
        print(json.dumps(payload, indent=2, sort_keys=True))
    else:
        print(arch.format_table(reports))
    return EXIT_OK


def cmd_teds(args) -> int:
    gt_stats, pred_stats = harness.LoadStats(), harness.LoadStats()
    gt = harness.iter_annotations(args.gt, split=args.split, stats=gt_stats)
    pred = harness.load_predictions(args.pred, stats=pred_stats)
    report = harness.evaluate(gt, pred, workers=args.workers)
    text = harness.report_json(report, per_sample=args.per_sample)
    if args.report:
        with open(args.report, "w", encoding="utf-8") as fh:
            fh.write(text)
    print(harness.format_teds(report))
    if gt_stats.skipped or pred_stats.skipped:
        print(f"skipped lines: annotations {gt_stats.skipped}, predictions {pred_stats.skipped}", file=sys.stderr)
    if args.report is None and args.print_json:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_probe_rf(args) -> int:
    from .nn.probe import empirical_rf, is_conv_stack, theoretical_box

    spec = arch.preset(args.preset, input_size=args.input_size)
    enc = spec.encoder
    g = arch.trace_geometry(enc)[-1]
    h, w = g.out_size
    positions = [tuple(args.pos)] if args.pos else sorted({(0, 0), (h // 2, w // 2), (h - 1, w - 1)})
    print(f"{spec.name} at {enc.input_size[0]}x{enc.input_size[1]}: rf {g.rf}, jump {g.jump}, feature map {h}x{w}")
    if not is_conv_stack(enc):
        print("note: max pooling is probed as average pooling")
    all_match = True
    for pos in positions:
        t0 = time.perf_counter()
        emp = empirical_rf(enc, pos, seed=args.seed)
        theo = theoretical_box(enc, pos)
        match = emp == theo
        all_match &= match
        print(
            f"  out {pos}: theoretical rows [{theo.top},{theo.bottom}) cols [{theo.left},{theo.right})"
            f"  empirical rows [{emp.top},{emp.bottom}) cols [{emp.left},{emp.right})"
            f"  {'match' if match else 'MISMATCH'} ({time.perf_counter() - t0:.1f}s)"
        )
    return EXIT_OK if all_match else EXIT_DATA


def cmd_toy_train(args) -> int:
    from .nn import instantiate
    from .nn.checkpoint import save_checkpoint
    from .nn.train import write_loss_csv
    from .nn.train import train_toy
    from .synth import toy_dataset

    data = toy_dataset(args.samples, seed=args.seed)
    model = instantiate(args.preset, seed=args.seed)
    t0 = time.perf_counter()
    curve = train_toy(model, data, args.steps, args.lr)
    elapsed = time.perf_counter() - t0
    exact = sum(model.greedy_decode(img, len(gt) + 8).ids == gt.ids for img, gt in data)
    marks = sorted({0, *range(0, args.steps, max(1, args.steps // 10)), args.steps - 1})
    for i in marks:
        print(f"step {i:5d}  loss {curve[i]:.6f}")
    print(f"final loss {curve[-1]:.6f}; exact decodes {exact}/{len(data)}; {elapsed:.1f}s")
    if args.loss_csv:
        write_loss_csv(args.loss_csv, curve)
    if args.checkpoint:
        save_checkpoint(model, args.checkpoint)
    return EXIT_OK


def cmd_tokenize(args) -> int:
    if args.manifest:
        sys.stdout.write(grammar.manifest())
        print(f"sha256 {grammar.manifest_hash()}")
        return EXIT_OK
    if args.structure is None:
        raise _UsageError("tokenize: give a structure string, '-' for stdin, or --manifest")
    text = sys.stdin.read() if args.structure == "-" else args.structure
    surfaces = grammar.split_structure(text.strip())
    seq = grammar.tokenize(surfaces, bound=max(len(surfaces), grammar.DEFAULT_MAX_LEN))
    print("ids    " + " ".join(str(i) for i in seq.ids))
    print("tokens " + json.dumps(list(seq.surfaces)))
    out = grammar.detokenize(seq)
    print("html   " + out)
    tree = grammar.parse(seq)
    print(f"class  {grammar.classify(tree).value}; nodes {tree.root.size()}")
    if out != text.strip():
        print("note: output is the canonical form of the input", file=sys.stderr)
    return EXIT_OK


# -- parser ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="tsrlab", description="Table-structure recognition toolkit.")
    p.add_argument("--version", action="version", version=f"tsrlab {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log warnings (skipped lines etc.)")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True
    presets = arch.preset_names()

    a = sub.add_parser("analyze", help="parameters, MACs, receptive field and N of a preset")
    a.add_argument("--preset", required=True, choices=[*presets, "all"], metavar="NAME", help=f"one of: {', '.join(presets)}, all")
    a.add_argument("--input-size", type=_size, default=None, help="H or HxW (default: the preset's own)")
    a.add_argument("--decode-len", type=int, default=None, help="decoder length for MACs (default 512)")
    a.add_argument("--json", action="store_true", help="emit JSON instead of a table")
    a.set_defaults(func=cmd_analyze)

    t = sub.add_parser("teds", help="score predictions against annotations")
    t.add_argument("--gt", required=True, help="annotation JSONL")
    t.add_argument("--pred", required=True, help="prediction JSONL (tokens or html per line)")
    t.add_argument("--split", choices=harness.SPLITS, default=None)
    t.add_argument("--report", default=None, help="write the JSON report here")
    t.add_argument("--per-sample", action="store_true", help="include per-sample scores in the report")
    t.add_argument("--print-json", action="store_true", help="print the JSON report when --report is not given")
    t.add_argument("--workers", type=int, default=None, help="scoring processes (default: CPU count)")
    t.set_defaults(func=cmd_teds)

    r = sub.add_parser("probe-rf", help="compare recursion RF with a gradient-support probe")
    r.add_argument("--preset", required=True, choices=presets, metavar="NAME")
    r.add_argument("--input-size", type=_size, default=None)
    r.add_argument("--pos", type=int, nargs=2, metavar=("ROW", "COL"), default=None)
    r.add_argument("--seed", type=int, default=None)
    r.set_defaults(func=cmd_probe_rf)

    tt = sub.add_parser("toy-train", help="overfit a toy model on synthetic tables")
    tt.add_argument("--preset", default="toy-linearproj", choices=[n for n in presets if n.startswith("toy-")])
    tt.add_argument("--samples", type=int, default=8)
    tt.add_argument("--steps", type=int, default=500)
    tt.add_argument("--lr", type=float, default=1e-3)
    tt.add_argument("--seed", type=int, default=None)
    tt.add_argument("--loss-csv", default=None)
    tt.add_argument("--checkpoint", default=None)
    tt.set_defaults(func=cmd_toy_train)

    k = sub.add_parser("tokenize", help="round-trip a structure string through the vocabulary")
    k.add_argument("structure", nargs="?", default=None, help="e.g. '<tr><td></td></tr>' ('-' reads stdin)")
    k.add_argument("--manifest", action="store_true", help="print the vocabulary manifest and its hash")
    k.set_defaults(func=cmd_tokenize)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "seed", 0) is None:
            args.seed = default_seed()
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING if args.verbose else logging.ERROR, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except (TsrLabError, GrammarError, OSError, ValueError) as exc:
        print(f"tsrlab: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
