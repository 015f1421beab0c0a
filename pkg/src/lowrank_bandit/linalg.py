"""Dense symmetric matrix and symmetric third-order tensor primitives.

Matrices and tensors are plain ``numpy`` arrays; the helpers here validate
and canonicalise them at the boundaries so downstream code can assume exact
symmetry.
"""

from __future__ import annotations

from functools import lru_cache
from typing import NamedTuple

import numpy as np


class EigenSolverError(RuntimeError):
    """Raised when the eigensolver result fails its residual check."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual={residual:.3e})")
        self.residual = residual


class EigPairs(NamedTuple):
    values: np.ndarray  # descending
    vectors: np.ndarray  # dim x k, orthonormal columns


def as_sym_matrix(M, atol: float = 0.0) -> np.ndarray:
    """Return ``M`` as a float array with exactly symmetric storage.

    Asymmetry larger than ``atol`` (relative to the largest entry) raises.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {M.shape}")
    scale = max(1.0, float(np.max(np.abs(M)))) if M.size else 1.0
    if np.max(np.abs(M - M.T), initial=0.0) > atol * scale:
        raise ValueError("matrix is not symmetric")
    upper = np.triu(M)
    return upper + np.triu(M, 1).T


@lru_cache(maxsize=16)
def _canonical_index(d: int) -> np.ndarray:
    # flat index of the sorted triple (i <= j <= k) for every (i, j, k)
    idx = np.indices((d, d, d)).reshape(3, -1)
    s = np.sort(idx, axis=0)
    out = (s[0] * d + s[1]) * d + s[2]
    out.flags.writeable = False
    return out.reshape(d, d, d)


def canonicalize3(T: np.ndarray) -> np.ndarray:
    """Copy the value at each sorted index triple to all its permutations.

    Makes storage exactly symmetric without altering entries that are
    already symmetric bit-for-bit.
    """
    d = T.shape[0]
    return T.reshape(-1)[_canonical_index(d)]


def symmetrize3(T: np.ndarray) -> np.ndarray:
    """Average over the six index permutations, then canonicalise."""
    T = np.asarray(T, dtype=float)
    S = (
        T
        + T.transpose(0, 2, 1)
        + T.transpose(1, 0, 2)
        + T.transpose(1, 2, 0)
        + T.transpose(2, 0, 1)
        + T.transpose(2, 1, 0)
    ) / 6.0
    return canonicalize3(S)


def as_sym_tensor3(T, atol: float = 1e-12) -> np.ndarray:
    T = np.asarray(T, dtype=float)
    if T.ndim != 3 or not (T.shape[0] == T.shape[1] == T.shape[2]):
        raise ValueError(f"expected a cubical 3-tensor, got shape {T.shape}")
    scale = max(1.0, float(np.max(np.abs(T)))) if T.size else 1.0
    for perm in ((0, 2, 1), (1, 0, 2), (2, 1, 0)):
        if np.max(np.abs(T - T.transpose(perm)), initial=0.0) > atol * scale:
            raise ValueError("tensor is not symmetric")
    return canonicalize3(T)


def rank1_tensor(u: np.ndarray, weight: float = 1.0) -> np.ndarray:
    """``weight * u (x) u (x) u``."""
    u = np.asarray(u, dtype=float)
    return weight * np.einsum("i,j,k->ijk", u, u, u)


def _fix_signs(vectors: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    # first coordinate with |x| > tol made positive, per column
    out = vectors.copy()
    for c in range(out.shape[1]):
        col = out[:, c]
        nz = np.flatnonzero(np.abs(col) > tol)
        if nz.size and col[nz[0]] < 0:
            out[:, c] = -col
    return out


def sym_eig_topk(M, k: int) -> EigPairs:
    """Top-``k`` (algebraically largest) eigenpairs of a symmetric matrix.

    Backed by LAPACK's symmetric driver (Householder tridiagonalisation),
    which is deterministic for a fixed input. Eigenvectors follow the
    first-nonzero-coordinate-positive sign convention.
    """
    M = as_sym_matrix(M, atol=1e-10)
    d = M.shape[0]
    if not 1 <= k <= d:
        raise ValueError(f"k must be in [1, {d}], got {k}")
    try:
        w, Q = np.linalg.eigh(M)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - LAPACK failure
        raise EigenSolverError(f"eigensolver did not converge: {exc}", float("nan"))
    order = np.argsort(w, kind="stable")[::-1][:k]
    values = w[order]
    vectors = _fix_signs(Q[:, order])
    resid = np.linalg.norm(M @ vectors - vectors * values, axis=0)
    bound = 1e-8 * np.maximum(1.0, np.abs(values))
    # allow for the unavoidable backward error on very large matrices
    bound = np.maximum(bound, 64 * d * np.finfo(float).eps * np.abs(w).max(initial=0.0))
    if np.any(resid > bound):
        raise EigenSolverError("eigenpair residual check failed", float(resid.max()))
    return EigPairs(values, vectors)


def multilinear_map(T, W) -> np.ndarray:
    """``T(W, W, W)`` for a symmetric ``a x a x a`` tensor and ``a x b`` matrix."""
    T = np.asarray(T, dtype=float)
    W = np.asarray(W, dtype=float)
    if W.ndim != 2 or T.ndim != 3 or W.shape[0] != T.shape[0]:
        raise ValueError(
            f"dimension mismatch: tensor {T.shape} vs matrix {W.shape}"
        )
    a, b = W.shape
    # contract the last mode first; each stage is a single BLAS call
    out = T.reshape(a * a, a) @ W  # (j1 j2) i3
    out = np.tensordot(W, out.reshape(a, a, b), axes=([0], [1]))  # i2 j1 i3
    out = np.tensordot(W, out, axes=([0], [1]))  # i1 i2 i3
    return canonicalize3(np.ascontiguousarray(out))


def tensor_contract(T, theta) -> tuple[np.ndarray, float]:
    """Return ``(T(I, theta, theta), T(theta, theta, theta))``."""
    T = np.asarray(T, dtype=float)
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (T.shape[0],):
        raise ValueError(f"dimension mismatch: tensor {T.shape} vs vector {theta.shape}")
    if abs(np.linalg.norm(theta) - 1.0) > 1e-10:
        raise ValueError("theta must be a unit vector")
    vec = (T @ theta) @ theta
    return vec, float(theta @ vec)


def power_iterate(T: np.ndarray, starts: np.ndarray, iters: int,
                  tol: float) -> tuple[np.ndarray, np.ndarray]:
    """Batched power iteration ``theta <- T(I,theta,theta)/|T(I,theta,theta)|``.

    All rows step together until every row moves less than ``tol`` in one
    step, or ``iters`` steps are done. A row whose image is numerically zero
    (``|T(I,theta,theta)| < 1e-14``) is frozen and flagged in the returned
    mask.
    """
    d = T.shape[0]
    Tm = np.ascontiguousarray(T.reshape(d, d * d).T)
    theta = starts / np.linalg.norm(starts, axis=1, keepdims=True)
    degenerate = np.zeros(theta.shape[0], dtype=bool)
    tol2 = tol * tol
    for _ in range(iters):
        v = (theta[:, :, None] * theta[:, None, :]).reshape(-1, d * d) @ Tm
        nrm = np.sqrt(np.einsum("li,li->l", v, v))
        bad = nrm < 1e-14
        if bad.any():
            degenerate |= bad
            v[degenerate] = theta[degenerate]
            nrm[degenerate] = 1.0
        v /= nrm[:, None]
        diff = v - theta
        theta = v
        if np.einsum("li,li->l", diff, diff).max() < tol2:
            break
    return theta, degenerate


def tensor_op_norm(T, restarts: int = 20, *, iters: int = 200, tol: float = 1e-10,
                   seed: int = 0) -> float:
    """Lower bound on ``max_{|theta|=1} |T(theta,theta,theta)|``.

    Multi-start shifted power iteration
    ``theta <- (T(I,theta,theta) + s theta) / |...|`` with the shift
    ``s = 2 |T|_F`` large enough to make every step increase
    ``T(theta,theta,theta)``, so runs settle on local maxima instead of
    cycling. Starts are the signed coordinate axes followed by a prefix of
    one fixed seeded draw (each with both signs); more restarts only add
    candidates, so the estimate is nondecreasing in ``restarts``.
    """
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    T = np.asarray(T, dtype=float)
    d = T.shape[0]
    fro = float(np.linalg.norm(T))
    if fro == 0.0:
        return 0.0
    rng = np.random.Generator(np.random.Philox(seed))
    G = rng.standard_normal((restarts, d))
    starts = np.vstack([np.eye(d), -np.eye(d), G, -G])
    starts /= np.linalg.norm(starts, axis=1, keepdims=True)
    Tm = T.reshape(d, d * d).T
    shift = 2.0 * fro
    theta = starts
    best = np.abs(np.einsum("li,li->l", (theta[:, :, None] * theta[:, None, :])
                            .reshape(-1, d * d) @ Tm, theta))
    for _ in range(iters):
        v = (theta[:, :, None] * theta[:, None, :]).reshape(-1, d * d) @ Tm
        vals = np.einsum("li,li->l", v, theta)
        best = np.maximum(best, np.abs(vals))
        v += shift * theta
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        diff = v - theta
        theta = v
        if np.einsum("li,li->l", diff, diff).max() < tol * tol:
            break
    final = np.einsum("ijk,li,lj,lk->l", T, theta, theta, theta)
    return float(max(best.max(), np.abs(final).max()))
