"""PNG figures for fit and evaluation outputs (matplotlib, Agg backend).

Inputs are the parsed CSV rows the CLI writes, so figures can be rebuilt
from a run directory without refitting.
"""

import math
from collections import defaultdict


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def factor_stats_figure(rows, path, max_factors=None):
    """Four panels over factor rank: r_k, p_k, NB mean and VMR.

    ``rows`` are factor-report dicts; inactive factors are skipped. p_k
    and r_k are recovered from the reported mean and VMR.
    """
    plt = _pyplot()
    active = [r for r in rows if int(r["count"]) > 0 and math.isfinite(float(r["vmr"]))]
    if max_factors:
        active = active[:max_factors]
    rank = [int(r["factor_rank"]) for r in active]
    vmr = [float(r["vmr"]) for r in active]
    mean = [float(r["mean"]) for r in active]
    p = [1.0 - 1.0 / v for v in vmr]
    r_k = [m * (1.0 - q) / q if q > 0 else float("nan") for m, q in zip(mean, p)]

    fig, axes = plt.subplots(2, 2, figsize=(8, 5.5), sharex=True)
    panels = [(r_k, "$r_k$", False), (p, "$p_k$", False), (mean, "mean", True), (vmr, "VMR", True)]
    for ax, (values, label, logy) in zip(axes.flat, panels):
        ax.plot(rank, values, ".", ms=4)
        ax.set_ylabel(label)
        if logy and values:
            ax.set_yscale("log")
    for ax in axes[1]:
        ax.set_xlabel("factor rank (by assigned count)")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def _mean_rows(rows):
    return [r for r in rows if r["split_id"] == "mean" and r["variant"] != "UNIFORM"]


def perplexity_vs_k_figure(rows, path):
    """Mean held-out perplexity against K (or K_max), one line per variant."""
    plt = _pyplot()
    series = defaultdict(list)
    for r in _mean_rows(rows):
        series[(r["variant"], r["a_phi"])].append((int(r["K_or_Kmax"]), float(r["perplexity"])))
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for (variant, a_phi), pts in sorted(series.items()):
        pts.sort()
        ax.plot([k for k, _ in pts], [v for _, v in pts], "o-", ms=4, label=f"{variant} ($a_\\phi$={a_phi})")
    ax.set_xlabel("K or $K_{max}$")
    ax.set_ylabel("held-out perplexity")
    if series:
        ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def perplexity_vs_aphi_figure(rows, path):
    """Mean held-out perplexity against the loading concentration a_phi."""
    plt = _pyplot()
    series = defaultdict(list)
    for r in _mean_rows(rows):
        series[(r["variant"], r["K_or_Kmax"])].append((float(r["a_phi"]), float(r["perplexity"])))
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for (variant, k), pts in sorted(series.items()):
        pts.sort()
        ax.plot([a for a, _ in pts], [v for _, v in pts], "o-", ms=4, label=f"{variant} (K={k})")
    ax.set_xscale("log")
    ax.set_xlabel("$a_\\phi$")
    ax.set_ylabel("held-out perplexity")
    if series:
        ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
