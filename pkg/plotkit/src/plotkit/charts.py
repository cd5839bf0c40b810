"""Figure builders. Each takes parsed data plus series labels and
returns a matplotlib Figure; `save_figure` writes it deterministically
(fixed SVG hash salt, no embedded date) so identical inputs produce
identical bytes.
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

# Keep SVG text as text elements (so labels are greppable) and make
# element ids reproducible across processes.
matplotlib.rcParams["svg.fonttype"] = "none"
matplotlib.rcParams["svg.hashsalt"] = "plotkit"

from .readers import InputError, latest_rows

CHART_KINDS = ("loss_curve", "spectrum", "neuron_norms", "efficiency_bar")


def _new_axes(title, xlabel, ylabel):
    fig, ax = plt.subplots(figsize=(7.0, 4.5))
    if title:
        ax.set_title(title)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.grid(True, alpha=0.3)
    return fig, ax


def loss_curve(series, metric="train_loss", title=""):
    """Loss (log scale) against step, one line per labeled run.

    Args:
        series: list of (label, run_columns) pairs, where run_columns is
            the dict `read_run_csv` returns.
        metric: which run.csv column to plot.
    """
    fig, ax = _new_axes(title, "step", metric)
    for label, cols in series:
        if metric not in cols:
            raise InputError(f"{label}: run data has no column {metric!r}")
        ax.plot(cols["step"], cols[metric], label=label)
    ax.set_yscale("log")
    ax.legend()
    fig.tight_layout()
    return fig


def spectrum(series, title=""):
    """Singular values (log scale) by index at each file's latest step.

    Args:
        series: list of (label, wide_rows) pairs from `read_wide_csv`.
            Every row at the latest step becomes one line; its legend
            entry is "label:row_label" (just the row label when the
            series label is empty).
    """
    fig, ax = _new_axes(title, "singular value index", "singular value")
    for label, rows in series:
        for row in latest_rows(rows):
            name = f"{label}:{row.label}" if label and row.label else (label or row.label)
            ax.plot(range(1, len(row.values) + 1), row.values, marker=".", label=name)
    ax.set_yscale("log")
    ax.legend()
    fig.tight_layout()
    return fig


def neuron_norms(series, title=""):
    """Per-neuron norms at each file's latest step, sorted descending."""
    fig, ax = _new_axes(title, "neuron rank", "update row norm")
    for label, rows in series:
        for row in latest_rows(rows):
            name = f"{label}:{row.label}" if label and row.label else (label or row.label)
            values = sorted(row.values, reverse=True)
            ax.plot(range(1, len(values) + 1), values, marker=".", label=name)
    ax.legend()
    fig.tight_layout()
    return fig


def efficiency_bar(rows, title=""):
    """Steps each optimizer needed to reach the reference's final loss.

    Optimizers that never reached it get a hatched full-length bar.
    Reached bars are annotated with the percentage of steps saved.
    """
    fig, ax = _new_axes(title, "", "steps to reference loss")
    for i, row in enumerate(rows):
        if row.reached_step is None:
            ax.bar(i, row.total_steps, color="lightgray", hatch="//",
                   edgecolor="gray")
            ax.annotate("not reached", (i, row.total_steps), ha="center",
                        va="bottom")
        else:
            ax.bar(i, row.reached_step)
            if row.gain_percent is not None:
                ax.annotate(f"-{row.gain_percent:.1f}%", (i, row.reached_step),
                            ha="center", va="bottom")
    ax.set_xticks(range(len(rows)))
    ax.set_xticklabels([r.optimizer for r in rows])
    fig.tight_layout()
    return fig


def save_figure(fig, path) -> None:
    path = str(path)
    if path.endswith(".svg"):
        fig.savefig(path, metadata={"Date": None})
    else:
        fig.savefig(path)
    plt.close(fig)
