from .plot_scores import load_scores, plot_scores, render

__all__ = ["load_scores", "plot_scores", "render"]
