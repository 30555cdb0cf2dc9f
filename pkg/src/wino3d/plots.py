"""Figures written next to the CSV reports."""
from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

plt.rcParams.update({
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "figure.dpi": 120,
})


def figure_path(csv_path: str | os.PathLike, suffix: str = ".png") -> str:
    root, _ = os.path.splitext(os.fspath(csv_path))
    return root + suffix


def plot_bench(rows, path) -> str:
    """Element-wise stage latency vs sparsity, with the dense Winograd and im2col levels."""
    fig, (ax_ew, ax_full) = plt.subplots(1, 2, figsize=(8, 3.2))
    sparse = sorted((r for r in rows if r.strategy == "sparse"), key=lambda r: r.sparsity)
    dense = [r for r in rows if r.strategy == "winograd"]
    im2col = [r for r in rows if r.strategy == "im2col"]
    if sparse:
        xs = [r.sparsity for r in sparse]
        ax_ew.plot(xs, [r.ew_ns_median / 1e6 for r in sparse], "o-", label="sparse")
        ax_full.plot(xs, [r.ns_median / 1e6 for r in sparse], "o-", label="sparse")
    for r in dense:
        ax_ew.axhline(r.ew_ns_median / 1e6, ls="--", color="k", lw=0.8, label="winograd")
        ax_full.axhline(r.ns_median / 1e6, ls="--", color="k", lw=0.8, label="winograd")
    for r in im2col:
        ax_full.axhline(r.ns_median / 1e6, ls=":", color="C3", lw=0.8, label="im2col")
    ax_ew.set_title("element-wise stage")
    ax_full.set_title("full forward")
    for ax in (ax_ew, ax_full):
        ax.set_xlabel("sparsity")
        ax.set_ylabel("median latency [ms]")
        ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return str(path)


def plot_spectrum(spectra: dict, path) -> str:
    fig, (ax_c, ax_i) = plt.subplots(1, 2, figsize=(8, 3.2))
    for name, sp in spectra.items():
        idx = range(1, len(sp.sigma) + 1)
        ax_c.plot(idx, sp.cumulative, label=name)
        ax_i.semilogy(idx, [max(v, 1e-18) for v in sp.individual], label=name)
    for ax in (ax_c, ax_i):
        ax.axvline(27, color="grey", lw=0.6, ls="--")
        ax.set_xlabel("singular value index")
        ax.legend(frameon=False)
    ax_c.set_ylabel("cumulative fraction")
    ax_i.set_ylabel("individual fraction")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return str(path)


def plot_training(rows, path) -> str:
    fig, (ax_l, ax_a) = plt.subplots(1, 2, figsize=(8, 3.2))
    for split in ("train", "eval"):
        sel = [r for r in rows if r["split"] == split]
        if not sel:
            continue
        ep = [r["epoch"] for r in sel]
        ax_l.plot(ep, [r["loss"] for r in sel], label=split)
        ax_a.plot(ep, [r["accuracy"] for r in sel], label=split)
    ax_l.set_ylabel("loss")
    ax_a.set_ylabel("accuracy")
    for ax in (ax_l, ax_a):
        ax.set_xlabel("epoch")
        ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return str(path)
