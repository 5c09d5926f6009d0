"""Report emission: tables, CSV/JSON exports and SVG figures."""

from .bundle import build_report, leaderboard_csv, load_runs, score_matrix_csv
from .svg import radar_svg, scatter_svg

__all__ = ["build_report", "leaderboard_csv", "load_runs", "radar_svg", "scatter_svg", "score_matrix_csv"]
