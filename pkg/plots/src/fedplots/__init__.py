"""Figure generation for simulator metrics CSVs and sweep indexes."""

from .figures import FigureSpec, SchemaError, plot_run, plot_sweep, read_metrics

__version__ = "0.1.0"
