"""SVG line charts for run series, convergence ladders and identity residuals."""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

plt.rcParams.update({
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "svg.hashsalt": "hkflow",  # stable ids so reruns give identical files
    "figure.figsize": (6.0, 4.0),
})

_SERIES_LABELS = {
    "vol": "Vol",
    "r": "average scalar curvature r",
    "max_abs_R": "max |R|",
    "min_eig_g": "min eigenvalue of g",
    "mean_phi": "mean phi",
}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def series_figure(header, data, path):
    """One panel per diagnostic column against time."""
    cols = [c for c in header if c != "t"]
    t = data[:, header.index("t")]
    fig, axes = plt.subplots(len(cols), 1, sharex=True, figsize=(6.0, 1.6 * len(cols)))
    for ax, c in zip(np.atleast_1d(axes), cols):
        ax.plot(t, data[:, header.index(c)], lw=1.2)
        ax.set_ylabel(_SERIES_LABELS.get(c, c), fontsize=8)
    np.atleast_1d(axes)[-1].set_xlabel("t")
    return _save(fig, path)


def ladder_figure(spacings, errors, path, xlabel="dt", slope=None, title=None):
    """Log-log error against spacing, with a reference slope line."""
    h = np.asarray(spacings, dtype=float)
    e = np.asarray(errors, dtype=float)
    fig, ax = plt.subplots()
    ok = e > 0
    ax.loglog(h[ok], e[ok], "o-", label="measured")
    if slope is not None and np.any(ok):
        ref = e[ok][-1] * (h[ok] / h[ok][-1]) ** slope
        ax.loglog(h[ok], ref, "k--", lw=0.8, label=f"slope {slope:.2f}")
    ax.set_xlabel(xlabel)
    ax.set_ylabel("error")
    if title:
        ax.set_title(title)
    ax.legend()
    return _save(fig, path)


def identity_figure(reports, path):
    """Finest-level residual and measured order for each identity."""
    names = [r.name for r in reports]
    finest = [max(r.residual_max[-1], 1e-300) for r in reports]
    orders = [r.order if r.order is not None else np.nan for r in reports]
    y = np.arange(len(names))
    fig, (a1, a2) = plt.subplots(1, 2, sharey=True, figsize=(8.0, 0.35 * len(names) + 1.2))
    colors = ["tab:green" if r.passed else "tab:red" for r in reports]
    a1.barh(y, finest, color=colors)
    a1.set_xscale("log")
    a1.set_xlabel("finest residual (max)")
    a1.set_yticks(y, names, fontsize=7)
    a2.barh(y, orders, color=colors)
    a2.axvspan(1.8, 2.2, color="0.85", zorder=0)
    a2.set_xlabel("order")
    return _save(fig, path)
