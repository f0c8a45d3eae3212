"""Matplotlib figure rendering for CLI report output.

All figures go straight to files through the Agg backend; nothing here
opens a window. Figures are a human-oriented complement to the CSV/PGM
artifacts, which remain the machine-readable interface.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import io  # noqa: E402

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np  # noqa: E402

from .container import _atomic_write  # noqa: E402

# strip the metadata text chunk so identical runs give identical PNG bytes
_PNG_META = {"metadata": {"Software": None}}


def _save(fig, path: str) -> None:
    buf = io.BytesIO()
    fig.savefig(buf, format="png", dpi=110, **_PNG_META)
    plt.close(fig)
    _atomic_write(path, buf.getvalue())


def loss_curves_figure(traces: list[list[float]], path: str) -> None:
    """Per-fold mean train loss across epochs."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for j, trace in enumerate(traces):
        ax.plot(range(len(trace)), trace, label=f"fold {j}")
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean train loss")
    ax.set_title("training loss")
    if traces:
        ax.legend(fontsize=8)
    ax.grid(True, alpha=0.3)
    _save(fig, path)


def confusion_figure(matrix: np.ndarray, path: str,
                     class_names: list[str] | None = None) -> None:
    """Annotated confusion-matrix heatmap (rows true, cols predicted)."""
    matrix = np.asarray(matrix)
    k = matrix.shape[0]
    names = class_names if class_names else [str(i) for i in range(k)]
    fig, ax = plt.subplots(figsize=(4.2, 3.8))
    im = ax.imshow(matrix, cmap="Blues")
    for p in range(k):
        for q in range(k):
            ax.text(q, p, str(int(matrix[p, q])), ha="center", va="center",
                    color="black" if matrix[p, q] < matrix.max() * 0.6 else "white")
    ax.set_xticks(range(k), names)
    ax.set_yticks(range(k), names)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    ax.set_title("confusion matrix")
    fig.colorbar(im, ax=ax, shrink=0.8)
    _save(fig, path)


def power_map_figure(power: np.ndarray, path: str,
                     centroids=None) -> None:
    """Range-Doppler power in dB with optional centroid markers."""
    power = np.asarray(power)
    db = 10.0 * np.log10(np.maximum(power, power.max() * 1e-12))
    fig, ax = plt.subplots(figsize=(6.0, 4.5))
    im = ax.imshow(db, aspect="auto", origin="lower", cmap="viridis")
    if centroids:
        ax.scatter([c.k_v for c in centroids], [c.k_r for c in centroids],
                   marker="x", s=60, c="red")
    ax.set_xlabel("Doppler bin")
    ax.set_ylabel("range bin")
    ax.set_title("range-Doppler power (dB)")
    fig.colorbar(im, ax=ax, shrink=0.85)
    _save(fig, path)


def spectrogram_figure(slice2d: np.ndarray, path: str,
                       title: str = "micro-Doppler spectrogram") -> None:
    """One reduced-MDS slice: rows frequency bins, cols STFT frames."""
    fig, ax = plt.subplots(figsize=(5.5, 4.2))
    im = ax.imshow(np.asarray(slice2d), aspect="auto", origin="lower",
                   cmap="magma")
    ax.set_xlabel("frame")
    ax.set_ylabel("frequency bin")
    ax.set_title(title)
    fig.colorbar(im, ax=ax, shrink=0.85)
    _save(fig, path)


def relevance_figure(energy: np.ndarray, relevance: np.ndarray,
                     path: str) -> None:
    """Energy image with the relevance map alpha-blended on top."""
    fig, ax = plt.subplots(figsize=(5.0, 4.2))
    ax.imshow(np.asarray(energy), aspect="auto", origin="lower", cmap="gray")
    im = ax.imshow(np.asarray(relevance), aspect="auto", origin="lower",
                   cmap="inferno", alpha=0.5)
    ax.set_xlabel("angle cell")
    ax.set_ylabel("range cell")
    ax.set_title("class relevance over cell energy")
    fig.colorbar(im, ax=ax, shrink=0.85)
    _save(fig, path)
