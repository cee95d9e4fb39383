"""Figure rendering for sweep reports.

The report path writes a structured plot description (JSON) for external
tooling and renders the same series with matplotlib next to the delimited
output.  Rendering is headless.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_SIM_SERIES = (
    ("ser_active", "simulated, source symbol", "o"),
    ("ser_backscatter", "simulated, surface symbol", "s"),
    ("ser_overall", "simulated, joint", "^"),
)
_BOUND_SERIES = (
    ("bound_active", "bound, source symbol"),
    ("bound_backscatter", "bound, surface symbol"),
    ("bound_overall", "bound, joint"),
)


def ser_plot_payload(point_dicts: list[dict], title: str = "sweep") -> dict:
    """Structured description of the log-y SER-versus-power series."""
    x = [pt["p_t_dbm"] for pt in point_dicts]
    series = []
    for key, name, marker in _SIM_SERIES:
        series.append({
            "name": name,
            "style": "marker",
            "marker": marker,
            "y": [pt[key] for pt in point_dicts],
        })
    for key, name in _BOUND_SERIES:
        series.append({
            "name": name,
            "style": "dashed",
            "y": [pt[key] for pt in point_dicts],
        })
    return {
        "title": title,
        "x_label": "transmit power (dBm)",
        "y_label": "symbol error rate",
        "log_y": True,
        "x": x,
        "series": series,
    }


def render_ser_payload(payload: dict, path: str | Path) -> Path:
    """Render a plot description to an image file."""
    path = Path(path)
    fig, ax = plt.subplots(figsize=(6.4, 4.8))
    x = np.asarray(payload["x"], dtype=float)
    for series in payload["series"]:
        y = np.asarray(series["y"], dtype=float)
        mask = np.isfinite(y) & (y > 0.0)
        if not np.any(mask):
            continue
        if series["style"] == "marker":
            ax.semilogy(x[mask], y[mask], marker=series.get("marker", "o"),
                        linestyle="-", label=series["name"])
        else:
            ax.semilogy(x[mask], y[mask], linestyle="--", label=series["name"])
    ax.set_xlabel(payload["x_label"])
    ax.set_ylabel(payload["y_label"])
    ax.set_title(payload["title"])
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def render_constellation(points: list[complex], path: str | Path,
                         title: str = "constellation") -> Path:
    """Scatter plot of constellation points on the complex plane."""
    path = Path(path)
    fig, ax = plt.subplots(figsize=(4.8, 4.8))
    re = [p.real for p in points]
    im = [p.imag for p in points]
    ax.scatter(re, im, s=24)
    ax.axhline(0.0, color="gray", lw=0.5)
    ax.axvline(0.0, color="gray", lw=0.5)
    ax.set_aspect("equal")
    ax.set_xlabel("in-phase")
    ax.set_ylabel("quadrature")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
