"""Figure rendering for sweep reports and image dumps.

Draws directly onto matplotlib Figure objects (no pyplot state), so
library callers and the CLI can render headless.
"""

from __future__ import annotations

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

from .types import Image

__all__ = ["render_curves", "render_image"]

_MARKERS = {"mcaol": "o", "caol": "s", "caol-pwls": "D",
            "tv": "^", "jtv": "v", "none": "x"}


def render_curves(rows, path, title: str = "") -> None:
    """Bias/noise trade-off figure: one polyline per method, ensemble
    STD on x, absolute bias on y, one marker per grid point.

    `rows` are (method, param, std, absbias) tuples, the same records
    the sweep CSV holds.  Points of a method are joined in param order.
    """
    by_method: dict = {}
    for method, param, std, bias in rows:
        by_method.setdefault(method, []).append((float(param), float(std), float(bias)))
    fig = Figure(figsize=(5.5, 4.5))
    FigureCanvasAgg(fig)
    ax = fig.subplots()
    for method in sorted(by_method):
        pts = sorted(by_method[method])
        stds = [p[1] for p in pts]
        biases = [p[2] for p in pts]
        ax.plot(stds, biases, marker=_MARKERS.get(method, "+"), label=method)
    ax.set_xlabel("STD")
    ax.set_ylabel("AbsBias")
    if title:
        ax.set_title(title)
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)


def render_image(image, path, title: str = "") -> None:
    """Grayscale dump of one image with a colorbar."""
    arr = image.array if isinstance(image, Image) else np.asarray(image)
    fig = Figure(figsize=(5.0, 4.2))
    FigureCanvasAgg(fig)
    ax = fig.subplots()
    im = ax.imshow(arr, cmap="gray", interpolation="nearest")
    ax.set_xticks([])
    ax.set_yticks([])
    if title:
        ax.set_title(title)
    fig.colorbar(im, ax=ax, fraction=0.046)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
