"""trajplots: renders trajectory, correlation-curve and cluster-panel figures
from gramtraj's exported tables."""

from .figures import FigureSpec, load_style, render, render_cluster_panels, render_correlation_curves, render_trajectories

__all__ = [
    "FigureSpec",
    "load_style",
    "render",
    "render_cluster_panels",
    "render_correlation_curves",
    "render_trajectories",
]
__version__ = "0.1.0"
