"""Figure rendering from the emitted CSV artifacts.

Each plot reads the delimited file back in, so a figure can always be
regenerated from the data alone. Quantile bands are drawn as nested fills
from the outermost pair inward; the mean is a solid line with dashed
one-sigma companions.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

DPI = 150


def _read_csv(path: Path):
    data = np.genfromtxt(path, delimiter=",", names=True)
    return data


def _quantile_columns(names) -> list[str]:
    return sorted(n for n in names if n.startswith("q") and n[1:].isdigit())


def _band_plot(ax, x, data, names):
    qcols = _quantile_columns(names)
    n_pairs = len(qcols) // 2
    for i in range(n_pairs):
        lo = data[qcols[i]]
        hi = data[qcols[-(i + 1)]]
        ax.fill_between(x, lo, hi, color="#1f77b4",
                        alpha=min(0.04 + 0.012 * i, 0.5), linewidth=0)
    if qcols:
        ax.plot(x, data[qcols[n_pairs]], color="#08306b", lw=1.0,
                label="median")
    ax.plot(x, data["mean"], color="tab:orange", lw=1.6, label="mean")
    ax.plot(x, data["mean"] + data["std"], color="tab:orange", lw=1.0, ls="--",
            label=r"mean $\pm$ std")
    ax.plot(x, data["mean"] - data["std"], color="tab:orange", lw=1.0, ls="--")
    ax.legend(loc="best", fontsize=8)


def render_field_stats(path: Path) -> Path:
    data = _read_csv(path)
    names = data.dtype.names
    xname = names[0]
    fig, ax = plt.subplots(figsize=(7, 3.2))
    _band_plot(ax, data[xname], data, names)
    if xname == "force":
        ax.set_xlabel("applied force [N]")
        ax.set_ylabel("deflection [m]")
    else:
        ax.set_xlabel("x [m]")
        ax.set_ylabel("transverse deflection [m]")
    out = path.with_suffix(".png")
    fig.savefig(out, dpi=DPI, bbox_inches="tight")
    plt.close(fig)
    return out


def render_frf(path: Path) -> Path:
    data = _read_csv(path)
    fig, ax = plt.subplots(figsize=(7, 3.2))
    _band_plot(ax, data["frequency"], data, data.dtype.names)
    ax.set_yscale("log")
    ax.set_xlabel("frequency [Hz]")
    ax.set_ylabel("|u| [m]")
    out = path.with_suffix(".png")
    fig.savefig(out, dpi=DPI, bbox_inches="tight")
    plt.close(fig)
    return out


def render_levels(path: Path) -> Path:
    data = _read_csv(path)
    data = np.atleast_1d(data)
    fig, axes = plt.subplots(1, 2, figsize=(8, 3.0))
    lvl = data["level"]
    with np.errstate(divide="ignore"):
        axes[0].plot(lvl, np.log2(np.abs(data["meanY"])), "v-", color="tab:blue")
        axes[1].plot(lvl, np.log2(np.where(data["V"] > 0, data["V"], np.nan)),
                     "v-", color="tab:blue")
    axes[0].set_xlabel("level")
    axes[0].set_ylabel(r"$\log_2 |\mathrm{mean}\, Y_\ell|$")
    axes[1].set_xlabel("level")
    axes[1].set_ylabel(r"$\log_2 V_\ell$")
    for ax in axes:
        ax.grid(alpha=0.3)
    out = path.with_suffix(".png")
    fig.savefig(out, dpi=DPI, bbox_inches="tight")
    plt.close(fig)
    return out


def render_cost(path: Path) -> Path:
    data = np.atleast_1d(_read_csv(path))
    fig, ax = plt.subplots(figsize=(5, 3.4))
    eps = data["epsilon"]
    ax.loglog(eps, data["mlmc_norm"], "o-", label="MLMC")
    if np.any(np.isfinite(data["mc_norm"])):
        ax.loglog(eps, data["mc_norm"], "s-", label="MC")
    ax.invert_xaxis()
    ax.set_xlabel(r"tolerance $\epsilon$")
    ax.set_ylabel("normalized cost")
    ax.grid(alpha=0.3, which="both")
    ax.legend()
    out = path.with_suffix(".png")
    fig.savefig(out, dpi=DPI, bbox_inches="tight")
    plt.close(fig)
    return out


def render_samples(path: Path) -> Path:
    data = _read_csv(Path(path))
    names = data.dtype.names
    x = data[names[0]]
    fig, ax = plt.subplots(figsize=(7, 3.2))
    for name in names[1:]:
        ax.plot(x, data[name], lw=0.9)
    log_scale = names[0] == "frequency"
    if log_scale:
        ax.set_yscale("log")
        ax.set_xlabel("frequency [Hz]")
        ax.set_ylabel("|u| [m]")
    elif names[0] == "force":
        ax.set_xlabel("applied force [N]")
        ax.set_ylabel("deflection [m]")
    else:
        ax.set_xlabel("x [m]")
        ax.set_ylabel("transverse deflection [m]")
    out = Path(path).with_suffix(".png")
    fig.savefig(out, dpi=DPI, bbox_inches="tight")
    plt.close(fig)
    return out


def render_run(outdir: Path) -> list[Path]:
    """Render every recognized CSV in a run directory to PNG."""
    outdir = Path(outdir)
    rendered = []
    for path in sorted(outdir.glob("field_stats*.csv")):
        rendered.append(render_field_stats(path))
    for path in sorted(outdir.glob("frf*.csv")):
        rendered.append(render_frf(path))
    for path in sorted(outdir.glob("levels*.csv")):
        data = np.atleast_1d(_read_csv(path))
        if "frequency" not in data.dtype.names:
            rendered.append(render_levels(path))
    cost = outdir / "cost.csv"
    if cost.exists():
        data = np.atleast_1d(_read_csv(cost))
        if data.size > 0 and np.any(np.isfinite(np.atleast_1d(data["mlmc_norm"]))):
            rendered.append(render_cost(cost))
    samples = outdir / "samples.csv"
    if samples.exists():
        rendered.append(render_samples(samples))
    return rendered
