"""Rendering of the report datasets to matplotlib figures.

Every figure-producing CLI subcommand writes its delimited dataset first;
these helpers turn those same rows into a PNG next to the CSV.
"""

from __future__ import annotations

import math
from collections import defaultdict

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt


def _group(rows, keys):
    grouped = defaultdict(list)
    for row in rows:
        grouped[tuple(row[k] for k in keys)].append(row)
    return grouped


def _series_label(key_names, key):
    return ", ".join(f"{n}={v}" for n, v in zip(key_names, key))


def render_series(rows, path, x, y, series_keys, ylog=False,
                  yerr=None, xlabel=None, ylabel=None, title=None):
    """Generic grouped line plot: one line per distinct series-key tuple."""
    fig, ax = plt.subplots(figsize=(6.0, 4.2))
    for key, pts in sorted(_group(rows, series_keys).items(),
                           key=lambda kv: str(kv[0])):
        pts = sorted(pts, key=lambda r: r[x])
        xs = [r[x] for r in pts]
        ys = [r[y] for r in pts]
        label = _series_label(series_keys, key)
        if yerr and any(r.get(yerr) for r in pts):
            errs = [1.96 * (r.get(yerr) or 0.0) for r in pts]
            ax.errorbar(xs, ys, yerr=errs, marker="o", markersize=3,
                        capsize=2, label=label)
        else:
            ax.plot(xs, ys, marker="o", markersize=3, label=label)
    if ylog:
        ax.set_yscale("log")
    ax.set_xlabel(xlabel or x)
    ax.set_ylabel(ylabel or y)
    if title:
        ax.set_title(title)
    if len(ax.get_lines()) + len(ax.containers) > 1:
        ax.legend(fontsize=8)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_multi_panel(panel_rows, path, panels):
    """One subplot per panel spec; ``panels`` maps panel id to the kwargs of
    :func:`render_series` minus the output path."""
    n = len(panels)
    cols = min(n, 2)
    rows_ct = math.ceil(n / cols)
    fig, axes = plt.subplots(rows_ct, cols, figsize=(6.0 * cols, 4.2 * rows_ct),
                             squeeze=False)
    for ax, (panel_id, spec) in zip(axes.flat, panels.items()):
        rows = [r for r in panel_rows if r.get("panel") == panel_id]
        for key, pts in sorted(_group(rows, spec["series_keys"]).items(),
                               key=lambda kv: str(kv[0])):
            pts = sorted(pts, key=lambda r: r[spec["x"]])
            xs = [r[spec["x"]] for r in pts]
            ys = [r[spec["y"]] for r in pts]
            ax.plot(xs, ys, marker="o", markersize=3,
                    label=_series_label(spec["series_keys"], key))
        ax.set_xlabel(spec.get("xlabel", spec["x"]))
        ax.set_ylabel(spec.get("ylabel", spec["y"]))
        ax.set_title(spec.get("title", panel_id))
        if spec.get("ylog"):
            ax.set_yscale("log")
        ax.legend(fontsize=8)
        ax.grid(True, alpha=0.3)
    for ax in axes.flat[n:]:
        ax.set_visible(False)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
