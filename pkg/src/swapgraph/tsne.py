"""Exact t-SNE (no tree approximation) and a deterministic scatter exporter.

Pairwise affinities in the input space use per-row Gaussian bandwidths found
by binary search to a bits-entropy target; the 2-D map uses Student-t
affinities and plain momentum gradient descent with early exaggeration.
Everything is a pure function of (inputs, seed), so rerenders are
byte-identical.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import ConfigError

_P_FLOOR = 1e-12


def _pairwise_sq_dists(x: np.ndarray) -> np.ndarray:
    sq = (x * x).sum(axis=1)
    d = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    np.fill_diagonal(d, 0.0)
    return np.maximum(d, 0.0)


def _row_affinities(dist_row: np.ndarray, beta: float) -> tuple[np.ndarray, float]:
    """Unnormalized Gaussian affinities for one row and its bits-entropy."""
    shifted = dist_row - dist_row.min()
    s = np.exp(-beta * shifted)
    z = s.sum()
    p = s / z
    h_nats = beta * float((p * shifted).sum()) + np.log(z)
    return p, h_nats / np.log(2.0)


def conditional_probs(
    x: np.ndarray, perplexity: float, tol: float = 1e-4, max_iter: int = 300
) -> tuple[np.ndarray, np.ndarray]:
    """Per-row conditional distributions calibrated so each row's entropy (in
    bits) is within ``tol`` of log2(perplexity).  Returns (P_conditional,
    entropy residuals)."""
    n = x.shape[0]
    dists = _pairwise_sq_dists(x)
    target = np.log2(perplexity)
    p_cond = np.zeros((n, n))
    residuals = np.zeros(n)
    others = np.arange(n)
    for i in range(n):
        row = dists[i, others != i]
        beta, beta_lo, beta_hi = 1.0, 0.0, np.inf
        for _ in range(max_iter):
            p, h_bits = _row_affinities(row, beta)
            diff = h_bits - target
            if abs(diff) < tol:
                break
            if diff > 0:  # too spread out -> sharpen
                beta_lo = beta
                beta = beta * 2.0 if beta_hi == np.inf else (beta + beta_hi) / 2.0
            else:
                beta_hi = beta
                beta = beta / 2.0 if beta_lo == 0.0 else (beta + beta_lo) / 2.0
        p_cond[i, others != i] = p
        residuals[i] = abs(h_bits - target)
    return p_cond, residuals


def _joint_probs(x: np.ndarray, perplexity: float) -> np.ndarray:
    p_cond, _ = conditional_probs(x, perplexity)
    p = (p_cond + p_cond.T) / (2.0 * x.shape[0])
    return np.maximum(p, _P_FLOOR)


def _student_q(y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    num = 1.0 / (1.0 + _pairwise_sq_dists(y))
    np.fill_diagonal(num, 0.0)
    q = num / num.sum()
    return np.maximum(q, _P_FLOOR), num


def kl_divergence(p: np.ndarray, q: np.ndarray) -> float:
    mask = ~np.eye(p.shape[0], dtype=bool)
    return float((p[mask] * np.log(p[mask] / q[mask])).sum())


def _pca_init(x: np.ndarray, seed: int) -> np.ndarray:
    centered = x - x.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    coords = centered @ vt[:2].T
    if coords.shape[1] < 2:
        coords = np.pad(coords, ((0, 0), (0, 2 - coords.shape[1])))
    std = coords[:, 0].std()
    coords = coords / (std if std > 1e-12 else 1.0) * 1e-4
    jitter = np.random.default_rng(seed).normal(0.0, 1e-6, size=coords.shape)
    return coords + jitter


def tsne_embed(
    features: np.ndarray,
    perplexity: float = 10.0,
    iters: int = 500,
    seed: int = 0,
    learning_rate: float = 100.0,
    return_kl: bool = False,
):
    """Embed (n, d) features into 2-D.

    Early exaggeration multiplies P by 4 for the first 100 iterations;
    momentum steps from 0.5 to 0.8 at iteration 250; coordinates start at the
    top-2 principal components (tiny seeded jitter breaks exact ties).
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2:
        raise ConfigError(f"features must be a 2-D array, got shape {x.shape}")
    n = x.shape[0]
    if n < 3 * perplexity:
        raise ConfigError(
            f"need at least 3*perplexity={3 * perplexity:.0f} samples, got {n}"
        )
    if n > 2000:
        raise ConfigError(f"exact embedding caps at 2000 samples, got {n}")

    p = _joint_probs(x, perplexity)
    y = _pca_init(x, seed)
    q0, _ = _student_q(y)
    kl_initial = kl_divergence(p, q0)

    velocity = np.zeros_like(y)
    for it in range(iters):
        p_eff = p * 4.0 if it < 100 else p
        q, num = _student_q(y)
        coeff = (p_eff - q) * num
        # grad_i = 4 sum_j coeff_ij (y_i - y_j)
        grad = 4.0 * (coeff.sum(axis=1)[:, None] * y - coeff @ y)
        momentum = 0.5 if it < 250 else 0.8
        velocity = momentum * velocity - learning_rate * grad
        y = y + velocity
        y = y - y.mean(axis=0)

    q_final, _ = _student_q(y)
    kl_final = kl_divergence(p, q_final)
    if return_kl:
        return y, kl_initial, kl_final
    return y


# ---------------------------------------------------------------------------
# scatter export

_PALETTE = ("#d62728", "#1f77b4", "#2ca02c", "#9467bd",
            "#ff7f0e", "#8c564b", "#e377c2", "#7f7f7f")


def export_scatter(coords, labels, domains, path) -> tuple[Path, Path]:
    """Write an SVG scatter (color = class, circle = source, plus = target)
    and a CSV sidecar with columns x,y,label,domain.  Deterministic: the same
    inputs always produce byte-identical files."""
    coords = np.asarray(coords, dtype=np.float64)
    labels = np.asarray(labels)
    domains = list(domains)
    if coords.ndim != 2 or coords.shape[1] != 2:
        raise ValueError(f"coords must be (n, 2), got {coords.shape}")
    if not (coords.shape[0] == len(labels) == len(domains)):
        raise ValueError("coords, labels, and domains must have equal lengths")
    if not np.all(np.isfinite(coords)):
        raise ValueError("coordinates must be finite")

    svg_path = Path(path)
    csv_path = svg_path.with_suffix(".csv")

    size, margin = 640.0, 40.0
    lo = coords.min(axis=0)
    hi = coords.max(axis=0)
    span = np.maximum(hi - lo, 1e-9)

    def to_px(pt):
        sx = margin + (pt[0] - lo[0]) / span[0] * (size - 2 * margin)
        sy = size - margin - (pt[1] - lo[1]) / span[1] * (size - 2 * margin)
        return sx, sy

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size:.0f}" '
        f'height="{size:.0f}" viewBox="0 0 {size:.0f} {size:.0f}">',
        f'<rect width="{size:.0f}" height="{size:.0f}" fill="white"/>',
    ]
    for i in range(coords.shape[0]):
        sx, sy = to_px(coords[i])
        color = _PALETTE[int(labels[i]) % len(_PALETTE)]
        if str(domains[i]) == "target":
            r = 4.0
            parts.append(
                f'<path d="M {sx - r:.6f} {sy:.6f} H {sx + r:.6f} '
                f'M {sx:.6f} {sy - r:.6f} V {sy + r:.6f}" '
                f'stroke="{color}" stroke-width="1.6" fill="none"/>'
            )
        else:
            parts.append(
                f'<circle cx="{sx:.6f}" cy="{sy:.6f}" r="3" fill="{color}" '
                f'fill-opacity="0.75"/>'
            )
    parts.append("</svg>")
    svg_path.write_text("\n".join(parts) + "\n", encoding="utf-8", newline="\n")

    lines = ["x,y,label,domain"]
    for i in range(coords.shape[0]):
        lines.append(
            f"{coords[i, 0]:.9g},{coords[i, 1]:.9g},{labels[i]},{domains[i]}"
        )
    csv_path.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")
    return svg_path, csv_path
