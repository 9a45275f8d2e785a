"""Figures for the sweep outputs. Uses the non-interactive Agg backend."""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

COLORS = {"EL2N": "tab:blue", "GraNd": "tab:orange", "random": "tab:gray", "full": "black"}


def _new(width=5.0, height=3.6):
    fig, ax = plt.subplots(1, 1)
    fig.set_size_inches(width, height)
    return fig, ax


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def _band(ax, x, mean, std, color, label, marker="o"):
    x, mean, std = (np.asarray(v, dtype=float) for v in (x, mean, std))
    ax.plot(x, mean, marker=marker, color=color, label=label, lw=1.5, ms=4)
    ax.fill_between(x, mean - std, mean + std, color=color, alpha=0.2, lw=0)


def _hline(ax, row, key):
    ax.axhline(row["acc_mean"], color=COLORS[key], ls="--", lw=1, label=key)


def _series(rows, kind, metric, xkey):
    sel = sorted((r for r in rows if r["policy_kind"] in kind and r["metric"] == metric), key=lambda r: r[xkey])
    return [r[xkey] for r in sel], [r["acc_mean"] for r in sel], [r["acc_std"] for r in sel]


def _metrics(rows):
    return sorted({r["metric"] for r in rows if r["metric"] != "-"})


def plot_step_sweep(rows, path):
    fig, ax = _new()
    for m in _metrics(rows):
        _band(ax, *_series(rows, ("top",), m, "step"), COLORS.get(m, None), m)
    for r in rows:
        if r["policy_kind"] in ("random", "full"):
            _hline(ax, r, r["policy_kind"])
    ax.set_xlabel("score computation step")
    ax.set_ylabel("accuracy")
    ax.legend(frameon=False)
    _save(fig, path)


def plot_fraction_sweep(rows, path):
    fig, ax = _new()
    for m in _metrics(rows):
        _band(ax, *_series(rows, ("top",), m, "keep_frac"), COLORS.get(m, None), m)
    _band(ax, *_series(rows, ("random",), "-", "keep_frac"), COLORS["random"], "random", marker="s")
    ax.set_xlabel("preserved fraction")
    ax.set_ylabel("accuracy")
    ax.legend(frameon=False)
    _save(fig, path)


def plot_delete_sweep(rows, path):
    fig, ax = _new()
    for m in _metrics(rows):
        _band(ax, *_series(rows, ("top", "window"), m, "delete_frac"), COLORS.get(m, None), m)
    for r in rows:
        if r["policy_kind"] == "full":
            _hline(ax, r, "full")
    ax.set_xlabel("deleted fraction (of full set)")
    ax.set_ylabel("accuracy")
    ax.legend(frameon=False)
    _save(fig, path)


def plot_label_distribution(hist_rows, path, label_names=()):
    metrics = sorted({r["metric"] for r in hist_rows})
    fig, axs = plt.subplots(1, len(metrics), squeeze=False)
    fig.set_size_inches(4.5 * len(metrics), 3.4)
    for ax, m in zip(axs[0], metrics):
        sel = sorted((r for r in hist_rows if r["metric"] == m), key=lambda r: r["step"])
        steps = [r["step"] for r in sel]
        fracs = np.array([r["hist"] for r in sel]).T
        names = list(label_names) or [str(k) for k in range(fracs.shape[0])]
        ax.stackplot(steps, fracs, labels=names, alpha=0.85)
        ax.set_ylim(0, 1)
        ax.set_xlabel("score computation step")
        ax.set_ylabel("label share of kept subset")
        ax.set_title(m)
        ax.legend(frameon=False, loc="lower right", fontsize=8)
    _save(fig, path)
