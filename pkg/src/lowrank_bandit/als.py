"""Alternating ridge least squares on a partially observed user x item table."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

RIDGE_FLOOR = 1e-6


@dataclass(frozen=True)
class AlsConfig:
    rank: int = 3
    iterations: int = 20
    ridge: float = 1e-3
    init_scale: float = 0.1

    def __post_init__(self):
        if self.rank < 1 or self.iterations < 0 or self.ridge < 0 or self.init_scale <= 0:
            raise ValueError("invalid ALS configuration")


def _solve_rows(F: np.ndarray, Y: np.ndarray, W: np.ndarray, ridge: float) -> np.ndarray:
    """For each row r: argmin_x sum_j W[r,j] (Y[r,j] - F[j] x)^2 + ridge |x|^2."""
    k = F.shape[1]
    G = np.einsum("rj,jp,jq->rpq", W, F, F) + ridge * np.eye(k)
    rhs = (W * Y) @ F
    # degenerate normal equations get a small ridge floor
    smallest = np.linalg.eigvalsh(G)[:, 0]
    bad = smallest < RIDGE_FLOOR
    if bad.any():
        G[bad] += RIDGE_FLOOR * np.eye(k)
    return np.linalg.solve(G, rhs[..., None])[..., 0]


def als_sweeps(Y: np.ndarray, mask: np.ndarray, item_f: np.ndarray, user_f: np.ndarray,
               iterations: int, ridge: float) -> tuple[np.ndarray, np.ndarray]:
    """Run ``iterations`` alternating sweeps on the ``B x A`` table ``Y``.

    ``mask`` weights each entry (0 = unobserved). Returns updated
    ``(item_f, user_f)`` with shapes ``A x k`` and ``B x k``; ``Y`` is
    approximated by ``user_f @ item_f.T``.
    """
    W = np.asarray(mask, dtype=float)
    Y = np.where(W > 0, Y, 0.0)
    for _ in range(iterations):
        user_f = _solve_rows(item_f, Y, W, ridge)
        item_f = _solve_rows(user_f, Y.T, W.T, ridge)
    return item_f, user_f
