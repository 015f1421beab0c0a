"""Robust tensor power method with random restarts and deflation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import as_sym_tensor3, canonicalize3, power_iterate


class RtpDegenerateError(RuntimeError):
    pass


@dataclass(frozen=True)
class RtpConfig:
    factors: int
    restarts: int = 100  # L
    power_iters: int = 100  # N
    seed: int = 0
    convergence_tol: float = 1e-12

    def __post_init__(self):
        if self.restarts < 1 or self.power_iters < 1 or self.factors < 1:
            raise ValueError("restarts, power_iters and factors must be >= 1")
        if not self.convergence_tol > 0:
            raise ValueError("convergence_tol must be positive")


@dataclass(frozen=True)
class RobustEigPair:
    lam: float
    phi: np.ndarray


def _starts(cfg: RtpConfig, dim: int) -> np.ndarray:
    # one draw indexed by (round, restart): any evaluation order of the
    # restarts sees the same start vectors
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(int(cfg.seed))))
    return rng.standard_normal((cfg.factors, cfg.restarts, dim))


def rtp_decompose(T, cfg: RtpConfig) -> list[RobustEigPair]:
    """Extract ``cfg.factors`` robust eigenpairs of the symmetric tensor ``T``.

    Each round runs ``restarts`` power iterations of ``power_iters`` steps,
    keeps the start maximising ``T(theta, theta, theta)``, refines it with
    another ``power_iters`` steps and deflates. Output is sorted by
    eigenvalue, largest first.
    """
    T = as_sym_tensor3(T, atol=1e-10).copy()
    dim = T.shape[0]
    if cfg.factors > dim:
        raise ValueError(f"factors={cfg.factors} exceeds tensor dimension {dim}")
    starts = _starts(cfg, dim)
    pairs: list[RobustEigPair] = []
    for r in range(cfg.factors):
        theta, degenerate = power_iterate(T, starts[r], cfg.power_iters, cfg.convergence_tol)
        vals = np.einsum("ijk,li,lj,lk->l", T, theta, theta, theta)
        vals[degenerate] = -np.inf
        if not np.isfinite(vals).any():
            raise RtpDegenerateError("tensor numerically zero")
        best = int(np.argmax(vals))
        refined, degenerate = power_iterate(T, theta[best:best + 1], cfg.power_iters,
                                            cfg.convergence_tol)
        phi = refined[0]
        lam = float(np.einsum("ijk,i,j,k->", T, phi, phi, phi))
        pairs.append(RobustEigPair(lam, phi))
        T = canonicalize3(T - lam * np.einsum("i,j,k->ijk", phi, phi, phi))
    pairs.sort(key=lambda p: -p.lam)
    return pairs


def reconstruct(pairs: list[RobustEigPair]) -> np.ndarray:
    """``sum_c lam_c phi_c^{(x)3}``."""
    dim = pairs[0].phi.shape[0]
    out = np.zeros((dim, dim, dim))
    for p in pairs:
        out += p.lam * np.einsum("i,j,k->ijk", p.phi, p.phi, p.phi)
    return out
