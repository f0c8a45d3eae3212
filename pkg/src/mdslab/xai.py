"""Token relevance via Grad-CAM over transformer block activations.

The class score is the pre-softmax logit. Its gradient with respect to a
block's output activations is averaged over tokens to get per-channel
weights; the ReLU'd weighted activation sum is the token relevance, which
maps back onto the (range, angle) cell grid of the cropped cube.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .images import bilinear_resize, block_upsample, to_uint8, write_pgm, write_ppm


@dataclass
class RelevanceMap:
    """Per-token relevance for one (sample, class) pair.

    tokens: nonnegative [n_tokens] scores. spatial: the same scores
    reshaped to the (n_res_s, n_res_theta) cell grid, inverting the
    row-major slice ordering of the spectrogram reduction.
    """

    tokens: np.ndarray
    spatial: np.ndarray
    block: int
    class_k: int

    def normalized(self) -> "RelevanceMap":
        """Max-normalize scores to [0, 1] (all-zero maps stay zero)."""
        peak = self.tokens.max()
        if peak <= 0:
            return self
        return RelevanceMap(tokens=self.tokens / peak,
                            spatial=self.spatial / peak,
                            block=self.block, class_k=self.class_k)


def grad_cam(params: dict, x: np.ndarray, cfg: nn.ModelConfig, class_k: int,
             grid: tuple[int, int], block: int | None = None) -> RelevanceMap:
    """Relevance of each input token for the class-k logit.

    Args:
        params, cfg: trained model.
        x: one ReducedMds sample ([n_tokens, h, w] or [n_tokens, d_in]).
        class_k: target class whose logit is differentiated.
        grid: (n_res_s, n_res_theta); the product must equal n_tokens.
        block: 1-based block whose output activations are used; defaults
            to the last block. 0 selects the embedding tokens (only
            meaningful for a 0-block model).
    """
    if not 0 <= class_k < cfg.k_tar:
        raise ValueError(f"class {class_k} outside [0, {cfg.k_tar})")
    if grid[0] * grid[1] != cfg.n_tokens:
        raise ValueError(f"grid {grid} does not cover {cfg.n_tokens} tokens")
    for value in params.values():
        if not np.all(np.isfinite(value)):
            raise ValueError("params contain non-finite values")
    if block is None:
        block = cfg.n_blocks
    if not 0 <= block <= cfg.n_blocks:
        raise ValueError(f"block {block} outside [0, {cfg.n_blocks}]")

    logits, tape = nn.forward(params, x, cfg)
    seed = np.zeros(cfg.k_tar)
    seed[class_k] = 1.0
    if block == 0:
        _, d_act = nn.backward(params, tape, seed, cfg)
        acts = tape.tokens
    else:
        _, d_act = nn.backward(params, tape, seed, cfg, stop_block=block - 1)
        acts = tape.block_out[block - 1]
    weights = d_act.mean(axis=0)                      # [n_emb]
    tokens = np.maximum(acts @ weights, 0.0)          # [n_tokens]
    return RelevanceMap(tokens=tokens, spatial=tokens.reshape(grid),
                        block=block, class_k=class_k)


def logit_activation_grad(params: dict, x: np.ndarray, cfg: nn.ModelConfig,
                          class_k: int, block: int) -> np.ndarray:
    """d logit_k / d A^(block) as a [n_tokens, n_emb] array (for checks)."""
    _, tape = nn.forward(params, x, cfg)
    seed = np.zeros(cfg.k_tar)
    seed[class_k] = 1.0
    if block == 0:
        _, d_act = nn.backward(params, tape, seed, cfg)
    else:
        _, d_act = nn.backward(params, tape, seed, cfg, stop_block=block - 1)
    return d_act


def attention_maps(params: dict, x: np.ndarray,
                   cfg: nn.ModelConfig) -> list[np.ndarray]:
    """Raw attention weights per block, each [n_heads, n_tokens, n_tokens]."""
    _, tape = nn.forward(params, x, cfg)
    return tape.attn_weights


def mds_energy_image(x: np.ndarray, grid: tuple[int, int]) -> np.ndarray:
    """Sum each token's slice into one scalar, arranged on the cell grid,
    then block-upsampled so every cell is a slice-sized tile."""
    x = np.asarray(x)
    if x.ndim != 3:
        raise ValueError("expected a slice stack [n_tokens, h, w]")
    if grid[0] * grid[1] != x.shape[0]:
        raise ValueError(f"grid {grid} does not cover {x.shape[0]} slices")
    energy = np.abs(x).sum(axis=(1, 2)).reshape(grid)
    return block_upsample(energy, x.shape[1], x.shape[2])


def token_energy(x: np.ndarray) -> np.ndarray:
    """Per-token energy of a slice stack (used for localization checks)."""
    x = np.asarray(x)
    return np.square(np.abs(x)).sum(axis=tuple(range(1, x.ndim)))


def render_overlay(x: np.ndarray, relevance: RelevanceMap, base_path: str,
                   alpha: float = 0.5) -> dict[str, str]:
    """Write energy/relevance/overlay images next to `base_path`.

    Writes three files: <base>_energy.pgm (per-cell summed MDS energy),
    <base>_relevance.pgm (relevance bilinearly upsampled to the same
    size), and <base>_overlay.ppm where each pixel blends the grey energy
    image toward red with per-pixel opacity alpha * relevance. Zero
    relevance therefore reproduces the energy image exactly.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must be in [0, 1]")
    x = np.asarray(x)
    energy = mds_energy_image(x, relevance.spatial.shape)
    rel_norm = relevance.normalized().spatial
    rel_big = bilinear_resize(rel_norm, energy.shape[0], energy.shape[1])
    rel_big = np.clip(rel_big, 0.0, 1.0)

    grey = to_uint8(energy).astype(np.float64)
    a = alpha * rel_big
    rgb = np.stack([grey * (1 - a) + 255.0 * a,
                    grey * (1 - a),
                    grey * (1 - a)], axis=2)
    overlay = np.clip(np.rint(rgb), 0, 255).astype(np.uint8)

    paths = {
        "energy": base_path + "_energy.pgm",
        "relevance": base_path + "_relevance.pgm",
        "overlay": base_path + "_overlay.ppm",
    }
    write_pgm(paths["energy"], to_uint8(energy))
    write_pgm(paths["relevance"], to_uint8(rel_big, lo=0.0, hi=1.0))
    write_ppm(paths["overlay"], overlay)
    return paths


def relevance_csv(relevance: RelevanceMap) -> str:
    """Token relevance as CSV rows (token, n_s, n_theta, score)."""
    n_s, n_theta = relevance.spatial.shape
    lines = ["token,n_s,n_theta,relevance"]
    for t, score in enumerate(relevance.tokens):
        lines.append(f"{t},{t // n_theta},{t % n_theta},{score:.10g}")
    return "\n".join(lines) + "\n"
