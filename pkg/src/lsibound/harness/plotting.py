"""PNG renderings of the figure tables. The CSV tables remain the primary output."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "figure.figsize": (4.8, 3.4),
    "figure.dpi": 120,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 9,
    "legend.fontsize": 8,
}

# table name -> (x column, y column, x label, y label)
LAYOUT = {
    "fig1_loss": ("prior_var", "mean_loss", r"prior variance $\sigma_p^2$", r"$\hat E_D\,\ell$"),
    "fig1_grad": ("prior_var", "mean_grad_sq", r"prior variance $\sigma_p^2$", r"$\hat E_D\,\|\nabla_x \ell\|^2$"),
    "fig2_lambda": ("lambda", "complexity", r"$\lambda$", r"complexity bound $C(\lambda, p)$"),
    "fig2_depth": ("depth", "complexity", "depth", r"complexity bound at $\lambda=m$"),
}


def _by_depth(rows):
    groups: dict = {}
    for r in rows:
        groups.setdefault(r.get("depth"), []).append(r)
    return groups


def plot_table(name: str, rows: list[dict], path) -> Path:
    xcol, ycol, xlabel, ylabel = LAYOUT[name]
    path = Path(path)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        if name == "fig2_depth":
            ax.plot([r[xcol] for r in rows], [r[ycol] for r in rows], "o-")
            ax.set_xticks([r[xcol] for r in rows])
        else:
            for depth, grp in sorted(_by_depth(rows).items()):
                ax.plot([r[xcol] for r in grp], [r[ycol] for r in grp], "o-", label=f"depth {depth}")
            ax.legend()
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return path


def plot_tables(tables: dict[str, list[dict]], out) -> dict[str, str]:
    """One PNG per table, written next to its CSV; keys are ``<name>_png``."""
    out = Path(out)
    return {f"{name}_png": str(plot_table(name, rows, out / f"{name}.png")) for name, rows in tables.items() if rows}
