"""Low-rank denoising of explanation components.

Components at the last conv layer are reshaped to a (channels x pixels)
matrix, row-centered, reduced to their leading singular vectors, and
reconstructed with the row means restored.  Matrices here are small (at
most a few hundred by a few dozen), so the SVD is a one-sided Jacobi
iteration on the smaller dimension.
"""

from dataclasses import dataclass

import numpy as np

from .cam_backends import RelevanceStack
from .errors import ShapeError


@dataclass
class SvdResult:
    """Thin SVD factors: matrix = U @ diag(singular_values) @ V.T."""

    U: np.ndarray
    singular_values: np.ndarray
    V: np.ndarray


def _jacobi_columns(a: np.ndarray, tol: float = 1e-12,
                    max_sweeps: int = 60) -> tuple[np.ndarray, np.ndarray]:
    """Orthogonalize the columns of ``a`` (m x n, m >= n) by plane
    rotations; returns (rotated matrix, accumulated right rotations)."""
    a = a.copy()
    n = a.shape[1]
    v = np.eye(n)
    for _ in range(max_sweeps):
        rotated = False
        for p in range(n - 1):
            for q in range(p + 1, n):
                cp = a[:, p]
                cq = a[:, q]
                apq = cp @ cq
                app = cp @ cp
                aqq = cq @ cq
                if abs(apq) <= tol * np.sqrt(app * aqq):
                    continue
                rotated = True
                theta = 0.5 * np.arctan2(2.0 * apq, app - aqq)
                c = np.cos(theta)
                s = np.sin(theta)
                a_p = c * cp + s * cq
                a_q = -s * cp + c * cq
                a[:, p] = a_p
                a[:, q] = a_q
                v_p = c * v[:, p] + s * v[:, q]
                v_q = -s * v[:, p] + c * v[:, q]
                v[:, p] = v_p
                v[:, q] = v_q
        if not rotated:
            break
    return a, v


def svd_small(matrix: np.ndarray) -> SvdResult:
    """Thin SVD of a small dense matrix via one-sided Jacobi rotations."""
    if matrix.ndim != 2:
        raise ShapeError(f"svd_small expects a matrix, got shape {matrix.shape}")
    if not np.isfinite(matrix).all():
        raise ValueError("svd_small: matrix contains non-finite entries")
    m64 = matrix.astype(np.float64)
    transposed = m64.shape[0] < m64.shape[1]
    work = m64.T if transposed else m64
    rotated, right = _jacobi_columns(work)
    norms = np.sqrt((rotated * rotated).sum(axis=0))
    order = np.argsort(-norms, kind="stable")
    s = norms[order]
    cutoff = s[0] * 1e-13 if s.size and s[0] > 0 else 0.0
    left = np.where(s > cutoff, rotated[:, order] / np.maximum(s, 1e-300), 0.0)
    right = right[:, order]
    if transposed:
        u, v = right, left
    else:
        u, v = left, right
    return SvdResult(U=u.astype(np.float32),
                     singular_values=s.astype(np.float32),
                     V=v.astype(np.float32))


def denoise_components(components: RelevanceStack,
                       keep_fraction: float = 0.10) -> RelevanceStack:
    """Reconstruct the components from their leading singular values.

    Keeps r = max(1, round(keep_fraction * min(C, K))) values, where the
    component tensor (C, H, W) is viewed as a C x K matrix with K = H*W.
    Row means are subtracted before the decomposition and added back
    after, so per-channel levels are preserved.
    """
    if not 0.0 < keep_fraction <= 1.0:
        raise ValueError(f"keep_fraction must lie in (0, 1], got {keep_fraction}")
    c, h, w = components.values.shape
    k = h * w
    m = components.values.reshape(c, k).astype(np.float64)
    row_means = m.mean(axis=1, keepdims=True)
    centered = m - row_means
    svd = svd_small(centered.astype(np.float32))
    rank = min(c, k)
    r = min(rank, max(1, int(np.floor(keep_fraction * rank + 0.5))))
    u = svd.U[:, :r].astype(np.float64)
    s = svd.singular_values[:r].astype(np.float64)
    v = svd.V[:, :r].astype(np.float64)
    recon = (u * s) @ v.T + row_means
    return RelevanceStack(layer=components.layer,
                          values=recon.reshape(c, h, w).astype(np.float32),
                          signed=components.signed)
