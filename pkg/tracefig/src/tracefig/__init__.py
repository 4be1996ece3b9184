"""Publication-style convergence figures from trace CSV logs."""

from .figures import (
    DEFAULT_LABEL_PATTERN,
    DataFormatError,
    ParameterError,
    PlotSpec,
    Y_FIELDS,
    build_figure,
    main,
    plot_traces,
    read_trace_table,
)

__version__ = "0.1.0"

__all__ = [
    "DEFAULT_LABEL_PATTERN",
    "DataFormatError",
    "ParameterError",
    "PlotSpec",
    "Y_FIELDS",
    "build_figure",
    "main",
    "plot_traces",
    "read_trace_table",
]
