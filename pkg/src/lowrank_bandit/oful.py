"""OFUL over a finite arm set, plus perturbation-robustness diagnostics."""

from __future__ import annotations

import enum
import itertools
import math
import warnings
from dataclasses import dataclass, field

import numpy as np


class Mode(str, enum.Enum):
    REGULARIZED = "Regularized"
    UNREGULARIZED = "Unregularized"


class UninitializedDesignError(RuntimeError):
    pass


@dataclass(frozen=True)
class OfulParams:
    lam: float = 1.0
    R_theta: float = 1.0
    R_noise: float = 0.5
    delta: float = 0.1
    mode: Mode = Mode.REGULARIZED
    # unregularized radius: finite-arm form unless general_radius is set
    general_radius: bool = False
    R_X: float | None = None  # feature norm bound, general unregularized form
    lambda0: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        if not 0.0 < self.delta < 1.0:
            raise ValueError("delta must lie in (0, 1)")
        if self.R_theta <= 0 or self.R_noise <= 0:
            raise ValueError("R_theta and R_noise must be positive")
        if self.mode is Mode.REGULARIZED and self.lam <= 0:
            raise ValueError("regularized mode needs lam > 0")
        if self.lam < 0:
            raise ValueError("lam must be nonnegative")

    def check_robust_regime(self, R_X: float) -> bool:
        """Warn when ``lam`` is below the level the robustness guarantee assumes."""
        need = max(1.0, R_X ** 2, 1.0 / (4.0 * self.R_theta ** 2))
        if self.mode is Mode.REGULARIZED and self.lam < need:
            warnings.warn(f"lam={self.lam} < {need:.4g}; robustness guarantee not claimed",
                          stacklevel=2)
            return False
        return True


@dataclass
class OfulState:
    gram: np.ndarray
    xy_sum: np.ndarray
    t: int = 0
    v_hat: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.v_hat is None:
            self.v_hat = np.zeros(self.gram.shape[0])

    @classmethod
    def initial(cls, C: int, params: OfulParams) -> "OfulState":
        lam = params.lam if params.mode is Mode.REGULARIZED else 0.0
        return cls(lam * np.eye(C), np.zeros(C))

    def copy(self) -> "OfulState":
        return OfulState(self.gram.copy(), self.xy_sum.copy(), self.t, self.v_hat.copy())


def _solve(gram: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.solve(gram, rhs)
    except np.linalg.LinAlgError:
        return np.linalg.lstsq(gram, rhs, rcond=None)[0]


def oful_update(state: OfulState, feature, reward: float) -> OfulState:
    """Rank-one design update; mutates ``state`` and returns it."""
    u = np.asarray(feature, dtype=float)
    state.gram += np.outer(u, u)
    state.xy_sum += reward * u
    state.t += 1
    state.v_hat = _solve(state.gram, state.xy_sum)
    return state


def confidence_radius(state: OfulState, params: OfulParams, A: int) -> float:
    """Ellipsoid radius in the ``|v - v_hat|_gram`` norm."""
    C = state.gram.shape[0]
    if params.mode is Mode.REGULARIZED:
        logdet = float(np.sum(np.log(np.linalg.eigvalsh(state.gram))))
        arg = 0.5 * logdet - 0.5 * C * math.log(params.lam) - math.log(params.delta)
        return params.R_noise * math.sqrt(2.0 * max(arg, 0.0)) + math.sqrt(params.lam) * params.R_theta
    t = max(state.t, 1)
    R2 = params.R_noise ** 2
    if params.general_radius:
        if params.R_X is None or params.lambda0 is None:
            raise ValueError("general unregularized radius needs R_X and lambda0")
        c = 36.0 * params.R_X ** 2 / params.lambda0
        D = (16.0 * R2 * (1.0 + math.log(1.0 + c))
             * (C * math.log(max(c * t, 1.0)) + math.log(1.0 / params.delta)) * math.log(t))
    else:
        D = 4.0 * R2 * (A * math.log(t) + math.log(A / params.delta))
    return math.sqrt(D)


def oful_scores(state: OfulState, features, params: OfulParams) -> np.ndarray:
    """Optimistic value ``u_a^T v_hat + D |u_a|_{gram^-1}`` of every arm."""
    U = np.asarray(features, dtype=float)
    A = U.shape[0]
    if params.mode is Mode.UNREGULARIZED:
        if state.t < A or np.linalg.eigvalsh(state.gram)[0] <= 0:
            raise UninitializedDesignError("uninitialized design: play every arm once first")
    D = confidence_radius(state, params, A)
    G_inv_U = np.linalg.solve(state.gram, U.T)  # C x A
    width = np.sqrt(np.maximum(np.einsum("ac,ca->a", U, G_inv_U), 0.0))
    return U @ state.v_hat + D * width


def oful_select(state: OfulState, features, params: OfulParams) -> int:
    """Arm maximising the optimistic value; ties go to the lowest index."""
    U = np.asarray(features, dtype=float)
    if U.shape[0] == 1:
        return 0
    return int(np.argmax(oful_scores(state, U, params)))


def in_confidence_set(state: OfulState, v, params: OfulParams, A: int) -> bool:
    d = np.asarray(v, dtype=float) - state.v_hat
    return float(d @ state.gram @ d) <= confidence_radius(state, params, A) ** 2


# -- robustness diagnostics ---------------------------------------------------

def _stacked(features) -> np.ndarray:
    U = np.asarray(features, dtype=float).reshape(-1, np.shape(features)[-1])
    return np.vstack([U, np.eye(U.shape[1])])


def _min_singular_values(blocks: np.ndarray) -> np.ndarray:
    return np.linalg.svd(blocks, compute_uv=False)[:, -1]


def alpha_of(features, max_c: int = 4, chunk: int = 200_000) -> float:
    """Largest ``|A_J^{-1}|_2`` over invertible C-row subsets of ``[features; I_C]``."""
    M = _stacked(features)
    C = M.shape[1]
    if C > max_c:
        raise ValueError(
            f"C={C} exceeds the exact-enumeration cap {max_c}; use alpha_lower_bound"
        )
    rows = M.shape[0]
    scale = max(1.0, float(np.abs(M).max()))
    tol = C * np.finfo(float).eps * scale * 16
    best = 0.0
    it = itertools.combinations(range(rows), C)
    while True:
        idx = np.array(list(itertools.islice(it, chunk)), dtype=np.intp)
        if idx.size == 0:
            break
        smin = _min_singular_values(M[idx])
        smin = smin[smin > tol]
        if smin.size:
            best = max(best, float(1.0 / smin.min()))
    return best


def alpha_lower_bound(features, samples: int, rng: np.random.Generator) -> float:
    """Sampled-subset lower bound on :func:`alpha_of` for large ``C``."""
    M = _stacked(features)
    C = M.shape[1]
    idx = np.stack([rng.choice(M.shape[0], size=C, replace=False) for _ in range(samples)])
    smin = _min_singular_values(M[idx])
    tol = C * np.finfo(float).eps * max(1.0, float(np.abs(M).max())) * 16
    smin = smin[smin > tol]
    # always include the identity block
    return float(max(1.0, (1.0 / smin).max() if smin.size else 1.0))


def _unique_argmax(values: np.ndarray, what: str) -> int:
    a = int(np.argmax(values))
    if np.sum(values == values[a]) > 1:
        raise ValueError(f"no critical radius (tied optimum in {what})")
    return a


def critical_radius(features, v_circ, alpha: float | None = None) -> float:
    """Largest deviation from linearity that provably keeps the optimal arm."""
    U = np.asarray(features, dtype=float)
    v = np.asarray(v_circ, dtype=float)
    lin = U @ v
    star = _unique_argmax(lin, "linear approximation")
    if alpha is None:
        alpha = alpha_of(U)
    others = np.arange(U.shape[0]) != star
    if not others.any():
        return math.inf
    gaps = lin[star] - lin[others]
    dist = np.linalg.norm(U[star] - U[others], axis=1)
    return float(np.min(gaps / (2.0 * alpha * dist)))


def rho_prime(m, features, v_circ) -> float:
    """Worst ratio of true reward gaps to linear-approximation gaps (at least 1)."""
    m = np.asarray(m, dtype=float)
    lin = np.asarray(features, dtype=float) @ np.asarray(v_circ, dtype=float)
    star = int(np.argmax(m))
    others = np.arange(m.size) != star
    if not others.any():
        return 1.0
    denom = lin[star] - lin[others]
    if np.any(denom <= 0):
        raise ValueError("outside robustness regime (nonpositive linear gap)")
    return float(max(1.0, np.max((m[star] - m[others]) / denom)))


class OfulLearner:
    """OFUL instance bound to a feature matrix, with optional initial sweep.

    In unregularized mode the learner first plays every arm once.
    """

    def __init__(self, features, params: OfulParams):
        self.features = np.asarray(features, dtype=float)
        self.params = params
        self.state = OfulState.initial(self.features.shape[1], params)

    def select(self) -> int:
        if self.params.mode is Mode.UNREGULARIZED and self.state.t < self.features.shape[0]:
            return self.state.t
        return oful_select(self.state, self.features, self.params)

    def update(self, arm: int, reward: float) -> None:
        oful_update(self.state, self.features[arm], reward)
