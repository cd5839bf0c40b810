"""Charts for training artifacts produced as CSV files.

The package reads the run.csv / spectra.csv / neuron_norms.csv /
steps_to_loss.csv files a training CLI writes and renders them with
matplotlib. It never imports the trainer; files are the only contract.
"""

from .charts import CHART_KINDS, efficiency_bar, loss_curve, neuron_norms, spectrum
from .readers import read_run_csv, read_steps_to_loss, read_wide_csv

__version__ = "0.1.0"

__all__ = [
    "CHART_KINDS",
    "efficiency_bar",
    "loss_curve",
    "neuron_norms",
    "spectrum",
    "read_run_csv",
    "read_steps_to_loss",
    "read_wide_csv",
    "__version__",
]
