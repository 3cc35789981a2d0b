"""Figure generation for simulation trace CSVs."""

from .figures import FigureSpec, inequality_holds_from, plot_estimates, plot_excitation, plot_observer, render
from .traces import MissingColumn, TraceData

__version__ = "0.1.0"
