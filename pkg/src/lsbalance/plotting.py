"""Static figures (Agg backend) for a finished run."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .output import sample_grid  # noqa: E402


def _save(fig, path):
    fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)


def plot_solution(path, u, exact=None, n: int = 256, title: str = ""):
    """Space-time colour map of ``u`` (x horizontal, t vertical) with oracle shocks overlaid."""
    rect = u.space.mesh.rect
    T, X = sample_grid(rect, n, 2 * n)
    V = u(T, X)
    fig, ax = plt.subplots(figsize=(6.4, 3.6))
    im = ax.pcolormesh(X, T, V, shading="gouraud", cmap="viridis")
    fig.colorbar(im, ax=ax, label="u")
    if exact is not None:
        for lab, t, x in exact.polylines(401):
            ax.plot(x, t, "w--", lw=0.9)
        pts = [p for p in [exact.collision, *exact.exits] if p is not None]
        if pts:
            ax.plot([p[1] for p in pts], [p[0] for p in pts], "ko", ms=4)
    ax.set_xlim(rect[2], rect[3])
    ax.set_ylim(rect[0], rect[1])
    ax.set_xlabel("x")
    ax.set_ylabel("t")
    ax.set_title(title)
    fig.tight_layout()
    _save(fig, path)


def plot_convergence(path, table, title: str = ""):
    """Log-log errors and functional differences against h, with an O(h) guide."""
    h = np.array(table.column("h"), dtype=float)
    fig, ax = plt.subplots(figsize=(5, 4))
    for name, style, label in [("l2sq", "o-", r"$\|u^h-u\|^2_{L^2}$"), ("l1sq", "s-", r"$\|u^h-u\|^2_{L^1}$"),
                               ("dMh", "^-", r"$M^h-M^{h/2}$")]:
        vals = np.array([np.nan if v is None else v for v in table.column(name)], dtype=float)
        ok = np.isfinite(vals) & (vals > 0)
        if ok.any():
            ax.loglog(h[ok], vals[ok], style, label=label)
    ref = [v for v in table.column("l2sq") if v]
    if ref:
        ax.loglog(h, ref[0] * h / h[0], "k:", label=r"$O(h)$")
    ax.invert_xaxis()
    ax.set_xlabel("h")
    ax.legend(fontsize=8)
    ax.set_title(title)
    fig.tight_layout()
    _save(fig, path)


def plot_iterations(path, reports, title: str = ""):
    """Functional value per Gauss-Newton iteration on each level."""
    fig, ax = plt.subplots(figsize=(5, 4))
    for rep in reports:
        F = np.array([r.functional for r in rep.log])
        ax.semilogy(np.arange(len(F)), np.abs(F) + 1e-300, "o-", ms=3, label=f"level {rep.level}")
    ax.set_xlabel("iteration")
    ax.set_ylabel("|functional|")
    ax.legend(fontsize=7)
    ax.set_title(title)
    fig.tight_layout()
    _save(fig, path)
