"""Field comparison figures, rendered headless and deterministically."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def field_panels(
    truth: np.ndarray,
    pred: np.ndarray | None = None,
    title: str = "",
    path=None,
):
    """Re(H), |H| panels for a field, plus error panels against a prediction.

    The real part uses a symmetric diverging scale so zero stays at the
    colormap center.  With ``path`` the figure is written as a PNG with
    fixed dpi and no timestamp metadata, so reruns produce identical
    bytes; otherwise the figure object is returned.
    """
    truth = np.asarray(truth)
    panels = [("Re H", truth.real, "RdBu", True), ("|H|", np.abs(truth), "magma", False)]
    if pred is not None:
        pred = np.asarray(pred)
        if pred.shape != truth.shape:
            raise ValueError("prediction and truth shapes differ")
        err = pred - truth
        panels += [
            ("Re H predicted", pred.real, "RdBu", True),
            ("|error|", np.abs(err), "magma", False),
        ]

    fig, axes = plt.subplots(1, len(panels), figsize=(4 * len(panels), 3.2))
    if len(panels) == 1:
        axes = [axes]
    for ax, (name, img, cmap, diverging) in zip(axes, panels):
        kwargs = {}
        if diverging:
            lim = float(np.abs(img).max()) or 1.0
            kwargs = {"vmin": -lim, "vmax": lim}
        im = ax.imshow(img, origin="lower", aspect="auto", cmap=cmap, **kwargs)
        ax.set_title(name, fontsize=9)
        ax.set_xticks([])
        ax.set_yticks([])
        fig.colorbar(im, ax=ax, fraction=0.046)
    if title:
        fig.suptitle(title, fontsize=10)
    fig.tight_layout()

    if path is not None:
        fig.savefig(path, dpi=110, metadata={"Software": None})
        plt.close(fig)
        return None
    return fig


def spectrum_figure(result, path=None):
    """Transmission-versus-wavelength curves of a sweep."""
    fig, ax = plt.subplots(figsize=(5, 3.2))
    wl_nm = result.wavelengths * 1e9
    for p in range(result.transmissions.shape[1]):
        ax.plot(wl_nm, result.transmissions[:, p], marker="o",
                label=f"port {p}")
    ax.set_xlabel("wavelength (nm)")
    ax.set_ylabel("transmission")
    ax.legend(fontsize=8)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    if path is not None:
        fig.savefig(path, dpi=110, metadata={"Software": None})
        plt.close(fig)
        return None
    return fig


def curves_figure(history: list[dict], path=None):
    """Train/validation learning curves."""
    fig, ax = plt.subplots(figsize=(5, 3.2))
    epochs = np.arange(len(history))
    ax.plot(epochs, [h["train_nmae"] for h in history], label="train")
    ax.plot(epochs, [h["val_nmae"] for h in history], label="val")
    ax.set_xlabel("epoch")
    ax.set_ylabel("N-MAE")
    ax.set_yscale("log")
    ax.legend(fontsize=8)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    if path is not None:
        fig.savefig(path, dpi=110, metadata={"Software": None})
        plt.close(fig)
        return None
    return fig
