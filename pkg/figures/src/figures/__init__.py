"""Static figure rendering for dpstop study CSVs."""

from .render import (
    REQUIRED_COLUMNS,
    EmptyDataError,
    FigureSpec,
    SchemaError,
    load_rows,
    render,
)

__version__ = "0.1.0"

__all__ = [
    "REQUIRED_COLUMNS",
    "EmptyDataError",
    "FigureSpec",
    "SchemaError",
    "load_rows",
    "render",
    "__version__",
]
