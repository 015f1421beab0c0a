"""Feature recovery from moment estimates (whitening + robust tensor power)
and the accompanying recovery-bound diagnostics."""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .linalg import multilinear_map, sym_eig_topk
from .moments import MomentEstimates
from .rtp import RobustEigPair, RtpConfig, rtp_decompose

#: robust eigenvalues at or below this are treated as failed factors
LAMBDA_FLOOR = 1e-9
#: smallest admissible whitening eigenvalue
EIG_FLOOR = 1e-12


class RankDeficientError(ValueError):
    """The second moment has fewer than C clearly positive eigenvalues."""


@dataclass
class FeatureEstimate:
    u_bar: np.ndarray  # A x C
    v_bar: np.ndarray  # C, lam^-2 (0 where invalid)
    eigpairs: list[RobustEigPair]
    whitener: np.ndarray  # A x C
    n: int
    valid: np.ndarray = field(default=None)  # C bools

    def __post_init__(self):
        if self.valid is None:
            self.valid = np.ones(self.u_bar.shape[1], dtype=bool)

    @property
    def lambdas(self) -> np.ndarray:
        return np.array([p.lam for p in self.eigpairs])

    def to_json(self) -> str:
        return json.dumps({
            "n": int(self.n),
            "lambda": [float(x) for x in self.lambdas],
            "u_bar": [[float(x) for x in row] for row in self.u_bar],
            "v_bar": [float(x) for x in self.v_bar],
            "valid": [bool(x) for x in self.valid],
            "phi": [[float(x) for x in p.phi] for p in self.eigpairs],
            "whitener": [[float(x) for x in row] for row in self.whitener],
        })

    @classmethod
    def from_json(cls, text: str) -> "FeatureEstimate":
        d = json.loads(text)
        lam = d["lambda"]
        phis = d.get("phi") or [[math.nan] * len(lam)] * len(lam)
        u_bar = np.array(d["u_bar"], dtype=float)
        pairs = [RobustEigPair(float(l), np.array(p, dtype=float)) for l, p in zip(lam, phis)]
        whitener = np.array(d.get("whitener", np.zeros_like(u_bar)), dtype=float)
        valid = np.array(d.get("valid", [True] * len(lam)), dtype=bool)
        return cls(u_bar, np.array(d["v_bar"], dtype=float), pairs, whitener, int(d["n"]), valid)


def estimate_features_from(m2, m3, C: int, cfg: RtpConfig, n: int = 0,
                           m3_scale: float = 1.0) -> FeatureEstimate:
    """Whiten ``m2``, decompose ``m3(W, W, W)`` and un-whiten the factors.

    ``m3`` is used as ``m3_scale * m3``, which lets callers pass running
    sums without materialising the scaled tensor.
    """
    m2 = np.asarray(m2, dtype=float)
    if not np.all(np.isfinite(m2)) or not np.any(m2):
        raise RankDeficientError("rank-deficient second moment")
    if C > m2.shape[0]:
        raise RankDeficientError(f"rank-deficient second moment ({C} factors, {m2.shape[0]} actions)")
    eig = sym_eig_topk(m2, C)
    if eig.values[-1] <= EIG_FLOOR:
        raise RankDeficientError(
            f"rank-deficient second moment (eigenvalue {eig.values[-1]:.3e} <= {EIG_FLOOR})"
        )
    sqrt_d = np.sqrt(eig.values)
    W = eig.vectors / sqrt_d
    T_hat = multilinear_map(m3, W)
    if m3_scale != 1.0:
        T_hat *= m3_scale
    if cfg.factors != C:
        cfg = RtpConfig(C, cfg.restarts, cfg.power_iters, cfg.seed, cfg.convergence_tol)
    pairs = rtp_decompose(T_hat, cfg)
    lam = np.array([p.lam for p in pairs])
    phi = np.column_stack([p.phi for p in pairs])
    # (W^T)^+ = U_hat D^{1/2}
    u_bar = (eig.vectors * sqrt_d) @ phi * lam
    valid = lam > LAMBDA_FLOOR
    u_bar[:, ~valid] = 0.0
    v_bar = np.zeros(C)
    v_bar[valid] = lam[valid] ** -2.0
    return FeatureEstimate(u_bar, v_bar, pairs, W, n, valid)


def estimate_features(moments: MomentEstimates, C: int, cfg: RtpConfig) -> FeatureEstimate:
    if moments.n < 1:
        raise RankDeficientError("rank-deficient second moment (no sessions)")
    return estimate_features_from(moments.m2, moments.s3, C, cfg, moments.n,
                                  m3_scale=1.0 / moments.n)


# -- column alignment -------------------------------------------------------

def _signed_column_errors(u_true: np.ndarray, u_est: np.ndarray):
    # err[c, d, s]: |u_true[:, c] - s * u_est[:, d]| for s in (+1, -1)
    plus = np.linalg.norm(u_true[:, :, None] - u_est[:, None, :], axis=0)
    minus = np.linalg.norm(u_true[:, :, None] + u_est[:, None, :], axis=0)
    return plus, minus


def align_columns(u_true, u_est, max_exact: int = 8) -> tuple[tuple[int, ...], np.ndarray, float]:
    """Permutation and signs minimising the worst column distance.

    Returns ``(perm, signs, max_err)`` with ``perm[c]`` the estimated column
    matched to true column ``c``.
    """
    u_true = np.asarray(u_true, dtype=float)
    u_est = np.asarray(u_est, dtype=float)
    if u_true.shape != u_est.shape:
        raise ValueError(f"shape mismatch {u_true.shape} vs {u_est.shape}")
    C = u_true.shape[1]
    if C > max_exact:
        raise ValueError(
            f"C={C} too large for exhaustive matching; use align_columns_assignment"
        )
    plus, minus = _signed_column_errors(u_true, u_est)
    best = np.minimum(plus, minus)
    best_perm, best_err = None, math.inf
    for perm in itertools.permutations(range(C)):
        err = max(best[c, perm[c]] for c in range(C)) if C else 0.0
        if err < best_err:
            best_perm, best_err = perm, err
    signs = np.array([1.0 if plus[c, best_perm[c]] <= minus[c, best_perm[c]] else -1.0
                      for c in range(C)])
    return tuple(best_perm), signs, float(best_err)


def align_columns_assignment(u_true, u_est) -> tuple[tuple[int, ...], np.ndarray, float]:
    """Column matching by linear assignment on signed pairwise distances."""
    u_true = np.asarray(u_true, dtype=float)
    u_est = np.asarray(u_est, dtype=float)
    plus, minus = _signed_column_errors(u_true, u_est)
    cost = np.minimum(plus, minus)
    rows, cols = linear_sum_assignment(cost)
    perm = tuple(int(c) for c in cols[np.argsort(rows)])
    signs = np.array([1.0 if plus[c, perm[c]] <= minus[c, perm[c]] else -1.0
                      for c in range(len(perm))])
    return perm, signs, float(max(cost[c, perm[c]] for c in range(len(perm))))


# -- bound constants ---------------------------------------------------------

@dataclass(frozen=True)
class ModelConstants:
    v_min: float
    sigma_min: float
    sigma_max: float
    Gamma: float
    u_max: float
    C1: float = 1.0

    def __post_init__(self):
        for name in ("v_min", "sigma_min", "sigma_max", "Gamma", "u_max", "C1"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.sigma_min > self.sigma_max:
            raise ValueError("sigma_min must not exceed sigma_max")


def aleph(mc: ModelConstants) -> float:
    return 1.0 + 10.0 * (1.0 / mc.Gamma + 1.0 / mc.sigma_min) * (1.0 + mc.u_max ** 3)


def diamond(mc: ModelConstants, A: int, C: int) -> float:
    """Problem-dependent constant of the column recovery bound."""
    m = min(mc.Gamma, mc.sigma_min)
    s_max, s_min = mc.sigma_max, mc.sigma_min
    al = aleph(mc)
    first = (C * A / s_min) ** 1.5 * (
        13.0 * math.sqrt(s_max)
        + 4.0 * math.sqrt(2.0 * m)
        + 5.0 * (s_max / mc.Gamma + 1.0 / (2.0 * s_max)) * m
    ) * al
    second = (2.0 * s_max / mc.Gamma + 1.0 / s_max) / mc.v_min ** 2
    third = (5.0 * math.sqrt(3.0 / 8.0) * (math.sqrt(s_max) + math.sqrt(m / 2.0))
             * (2.0 * C * A / s_min) ** 3 * al ** 2 * m)
    return first + second + third


def diamond_asymptotic(mc: ModelConstants, A: int, C: int) -> float:
    """Leading constant of the recovery bound when ``sum(gamma^-2)/n^2 -> 0``."""
    return (13.0 * math.sqrt(mc.sigma_max) * (C * A / mc.sigma_min) ** 1.5 * aleph(mc)
            + (2.0 * mc.sigma_max / mc.Gamma + 1.0 / mc.sigma_max) / mc.v_min ** 2)


def _gamma_sum(n: int, gammas, delta: float) -> float:
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    g = np.asarray(gammas, dtype=float)
    if n < 1 or g.size < n:
        raise ValueError("need n >= 1 and at least n exploration rates")
    g = g[:n]
    if np.any(~((g > 0) & (g <= 1))):
        raise ValueError("exploration rates must lie in (0, 1]")
    return float(np.sum(g ** -2.0))


def recovery_bound(mc: ModelConstants, A: int, C: int, n: int, gammas, delta: float,
                   *, asymptotic: bool = False) -> float:
    """High-probability bound on ``|u_c - u_bar_{pi(c)}|`` after ``n`` sessions."""
    s = _gamma_sum(n, gammas, delta)
    const = diamond_asymptotic(mc, A, C) if asymptotic else diamond(mc, A, C)
    return const * A ** 3 * math.sqrt(s * C * math.log(4 * A ** 3 / delta) / (2.0 * n * n))


def recovery_threshold(mc: ModelConstants, A: int, C: int, delta: float) -> float:
    """Minimum ``n^2 / sum(gamma^-2)`` under which the recovery bound holds."""
    m = min(mc.Gamma, mc.sigma_min)
    b1 = 2 * A ** 6 * math.log(4 * A ** 2 / delta) / m ** 2
    b2 = (A ** 9 * aleph(mc) ** 2 * C ** 5 * math.log(4 * A ** 3 / delta)
          / (2 * mc.C1 ** 2 * mc.sigma_min ** 3))
    return max(b1, b2)


def hexagon_branches(mc: ModelConstants, A: int, B: int, C: int, delta: float,
                     v_b, g_b: float, alpha_star: float) -> tuple[float, float]:
    """The two terms whose maximum is the per-user exploration threshold.

    The second term is the product of the feature-recovery factor and the
    critical-radius factor, as the threshold is printed.
    """
    if not g_b > 0:
        raise ValueError("no unique optimal action for user (gap <= 0)")
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    if B < 1:
        raise ValueError("B must be >= 1")
    v2 = float(np.sum(np.asarray(v_b, dtype=float) ** 2))
    m = min(mc.Gamma, mc.sigma_min)
    log2 = math.log(4 * A ** 2 / delta)
    log3 = math.log(4 * A ** 3 / delta)
    first = 2 * A ** 6 * log2 / m ** 2
    rtp_term = (A ** 9 * aleph(mc) ** 2 * C ** 5 * log3
                / (2 * mc.C1 ** 2 * mc.sigma_min ** 3))
    radius_term = diamond(mc, A, C) ** 2 * A ** 6 * C ** 2 * log3 * max(
        2 * alpha_star ** 2,
        8 * A * v2 / g_b ** 2,
        2 ** 7 * alpha_star ** 2 * C * mc.u_max ** 2 * v2 / g_b ** 2 + 0.5,
    )
    return first, rtp_term * radius_term


def hexagon_threshold(mc: ModelConstants, A: int, B: int, C: int, delta: float,
                      v_b, g_b: float, alpha_star: float) -> float:
    return max(hexagon_branches(mc, A, B, C, delta, v_b, g_b, alpha_star))


@dataclass(frozen=True)
class AssumptionCheck:
    """Constants of the separation assumption measured on a known model."""

    sigmas: np.ndarray  # descending
    v_min: float
    Gamma: float  # +inf when C = 1
    u_max: float
    degenerate: tuple[str, ...]

    @property
    def sigma_min(self) -> float:
        return float(self.sigmas.min())

    @property
    def sigma_max(self) -> float:
        return float(self.sigmas.max())

    def constants(self, C1: float = 1.0) -> ModelConstants:
        if self.degenerate:
            raise ValueError("assumption violated: " + ", ".join(self.degenerate))
        return ModelConstants(self.v_min, self.sigma_min, self.sigma_max, self.Gamma,
                              self.u_max, C1)


def assumption_constants(U, V, beta, rel_tol: float = 1e-9) -> AssumptionCheck:
    """``sigma_c = sqrt(lambda_c(M2))`` with ``M2`` built from the true factors,
    their minimum gap, the smallest mixture weight and the largest ``|u|``."""
    U = np.asarray(U, dtype=float)
    V = np.asarray(V, dtype=float)
    C = U.shape[1]
    w = np.asarray(beta, dtype=float) @ V
    m2 = (U * w) @ U.T
    lam = np.linalg.eigvalsh((m2 + m2.T) / 2.0)[::-1][:C]
    # eigenvalues at rounding level are exact zeros of a rank-deficient M2
    lam = np.where(lam > rel_tol * max(float(lam[0]), 1.0), lam, 0.0)
    sig = np.sqrt(lam)
    Gamma = float((-np.diff(sig)).min()) if C > 1 else math.inf
    v_min = float(V.min())
    tol = math.sqrt(rel_tol) * max(float(sig[0]), 1.0)
    bad = []
    if v_min <= 0:
        bad.append("v_min")
    if sig.min() <= 0:
        bad.append("sigma_min")
    if Gamma <= tol:
        bad.append("Gamma")
    return AssumptionCheck(sig, v_min, Gamma, float(np.abs(U).max()), tuple(bad))
