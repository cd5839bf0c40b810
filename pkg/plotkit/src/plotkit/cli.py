"""Command-line renderer.

    plotkit --kind loss_curve --in runs/a/run.csv:fast \
        --in runs/b/run.csv:slow --out loss.svg

`--in` repeats; an optional `:LABEL` suffix names the series (default:
the file's directory name, falling back to the file stem). Exit codes:
0 success, 2 usage or input error.
"""

import argparse
import sys
from pathlib import Path

from . import charts, readers

# Stems every run directory shares; they make useless series labels.
_GENERIC_STEMS = {"run", "spectra", "neuron_norms", "probes", "steps_to_loss"}


def split_input(item: str):
    path, _, label = item.partition(":")
    if not label:
        stem = Path(path).stem
        parent = Path(path).parent.name
        label = parent if stem in _GENERIC_STEMS and parent else stem
    return path, label


def render(kind: str, inputs, out, metric: str, title: str) -> None:
    if kind == "efficiency_bar":
        if len(inputs) != 1:
            raise readers.InputError(
                "efficiency_bar takes exactly one --in (a steps_to_loss table)")
        path, _label = split_input(inputs[0])
        fig = charts.efficiency_bar(readers.read_steps_to_loss(path), title=title)
    elif kind == "loss_curve":
        series = [(label, readers.read_run_csv(path))
                  for path, label in map(split_input, inputs)]
        fig = charts.loss_curve(series, metric=metric, title=title)
    else:
        series = [(label, readers.read_wide_csv(path))
                  for path, label in map(split_input, inputs)]
        builder = charts.spectrum if kind == "spectrum" else charts.neuron_norms
        fig = builder(series, title=title)
    charts.save_figure(fig, out)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="plotkit", description="render training-artifact CSVs as charts")
    parser.add_argument("--kind", required=True, choices=charts.CHART_KINDS)
    parser.add_argument("--in", dest="inputs", action="append", required=True,
                        metavar="PATH[:LABEL]", help="input CSV (repeatable)")
    parser.add_argument("--out", required=True,
                        help="output image; extension picks the format")
    parser.add_argument("--metric", default="train_loss",
                        help="run.csv column for loss_curve")
    parser.add_argument("--title", default="")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        render(args.kind, args.inputs, args.out, args.metric, args.title)
    except readers.InputError as err:
        print(f"input error: {err}", file=sys.stderr)
        return 2
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
