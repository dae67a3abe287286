"""Figure renderer for scheduling sweep outputs."""

from .render import FIGURES, FigureSpec, build_figure, load_aggregate, render_all

__version__ = "0.1.0"
