"""Latent-mixture bandit environment: arrivals, class draws, rewards, regret."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np

from . import rng as rngmod


@dataclass(frozen=True)
class GeneratorSpec:
    u_low: float = 0.0
    u_high: float = 1.0
    dirichlet_alpha: float = 1.0
    v_min: float = 0.0
    beta: tuple[float, ...] | None = None  # uniform when None
    R_noise: float = 0.1
    ell: int = 3

    def __post_init__(self):
        if self.u_high < self.u_low:
            raise ValueError("u_high < u_low")
        if self.dirichlet_alpha <= 0:
            raise ValueError("dirichlet_alpha must be positive")
        if self.v_min < 0:
            raise ValueError("v_min must be nonnegative")
        if self.ell < 3:
            raise ValueError("ell must be >= 3")
        if self.R_noise < 0:
            raise ValueError("R_noise must be nonnegative")
        if self.beta is not None:
            object.__setattr__(self, "beta", tuple(float(x) for x in self.beta))


@dataclass
class LatentModel:
    U: np.ndarray  # A x C
    V: np.ndarray  # B x C, rows on the simplex
    beta: np.ndarray  # B
    R_noise: float = 0.1
    ell: int = 3
    seed: int | None = None
    generator: GeneratorSpec | None = None
    _means: np.ndarray | None = field(default=None, init=False, repr=False)

    def __post_init__(self):
        self.U = np.asarray(self.U, dtype=float)
        self.V = np.asarray(self.V, dtype=float)
        self.beta = np.asarray(self.beta, dtype=float)
        if self.U.ndim != 2 or self.V.ndim != 2 or self.U.shape[1] != self.V.shape[1]:
            raise ValueError("U must be A x C and V must be B x C")
        if self.beta.shape != (self.V.shape[0],):
            raise ValueError("beta must have one entry per user")
        if np.any(self.V < 0) or np.any(np.abs(self.V.sum(axis=1) - 1.0) > 1e-12):
            raise ValueError("rows of V must lie on the probability simplex")
        if np.any(self.beta < 0) or abs(self.beta.sum() - 1.0) > 1e-12:
            raise ValueError("beta must be a probability vector")
        if self.ell < 3:
            raise ValueError("mini-sessions need ell >= 3")
        if self.R_noise < 0:
            raise ValueError("R_noise must be nonnegative")

    A = property(lambda self: self.U.shape[0])
    B = property(lambda self: self.V.shape[0])
    C = property(lambda self: self.U.shape[1])

    @property
    def u_max(self) -> float:
        return float(np.abs(self.U).max())

    @property
    def means(self) -> np.ndarray:
        """``A x B`` table of mixture-expected rewards ``u_a^T v_b``."""
        if self._means is None:
            self._means = self.U @ self.V.T
        return self._means

    @property
    def v_beta(self) -> np.ndarray:
        return self.beta @ self.V

    def best_value(self, b: int) -> float:
        return float(self.means[:, b].max())

    def regret(self, b: int, a: int) -> float:
        col = self.means[:, b]
        return float(col.max() - col[a])

    def to_dict(self) -> dict:
        return {
            "U": self.U.tolist(),
            "V": self.V.tolist(),
            "beta": self.beta.tolist(),
            "R": self.R_noise,
            "ell": self.ell,
            "seed": self.seed,
            "generator": None if self.generator is None else asdict(self.generator),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "LatentModel":
        gen = d.get("generator")
        return cls(
            np.array(d["U"], dtype=float),
            np.array(d["V"], dtype=float),
            np.array(d["beta"], dtype=float),
            float(d.get("R", 0.0)),
            int(d.get("ell", 3)),
            d.get("seed"),
            None if gen is None else GeneratorSpec(**gen),
        )

    @classmethod
    def from_json(cls, text: str) -> "LatentModel":
        return cls.from_dict(json.loads(text))

    def digest(self) -> str:
        h = hashlib.sha256()
        for arr in (self.U, self.V, self.beta):
            h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        h.update(repr((float(self.R_noise), int(self.ell))).encode())
        return h.hexdigest()[:16]


def generate_instance(A: int, B: int, C: int, gen: GeneratorSpec | None = None,
                      seed: int = 0) -> LatentModel:
    """Random instance: uniform ``U`` entries and Dirichlet user mixtures."""
    gen = gen or GeneratorSpec()
    if not (A >= C >= 1 and B >= 1):
        raise ValueError("need A >= C >= 1 and B >= 1")
    if C > 1 and gen.v_min >= 1.0 / C:
        raise ValueError(f"v_min={gen.v_min} infeasible for C={C} (must be < 1/C)")
    r = rngmod.stream(seed, "model")
    U = r.uniform(gen.u_low, gen.u_high, size=(A, C))
    if C == 1:
        V = np.ones((B, 1))
    else:
        V = r.dirichlet(np.full(C, gen.dirichlet_alpha), size=B)
        if gen.v_min > 0:
            mix = C * gen.v_min
            V = (1.0 - mix) * V + mix / C
        V = V / V.sum(axis=1, keepdims=True)
    if gen.beta is None:
        beta = np.full(B, 1.0 / B)
    else:
        beta = np.asarray(gen.beta, dtype=float)
        if beta.shape != (B,):
            raise ValueError("beta length must equal B")
        beta = beta / beta.sum()
    return LatentModel(U, V, beta, gen.R_noise, gen.ell, seed, gen)


# -- sessions -----------------------------------------------------------------

class SessionPolicy(Protocol):
    def start(self, n: int, b: int) -> None: ...
    def choose(self, l: int) -> int: ...
    def observe(self, l: int, a: int, y: float) -> None: ...
    def finish(self) -> list: ...


class CallbackPolicy:
    """Adapter for a plain ``f(b, history) -> action`` callable."""

    def __init__(self, fn: Callable[[int, list[tuple[int, float]]], int]):
        self.fn = fn
        self.b = -1
        self.history: list[tuple[int, float]] = []

    def start(self, n: int, b: int) -> None:
        self.b, self.history = b, []

    def choose(self, l: int) -> int:
        return self.fn(self.b, list(self.history))

    def observe(self, l: int, a: int, y: float) -> None:
        self.history.append((a, y))

    def finish(self) -> list:
        return []


class EnvStreams:
    """Arrival and noise draws, pre-sampled in blocks.

    Draws depend only on the seed and session index, never on the actions
    the policy takes.
    """

    BLOCK = 1024

    def __init__(self, model: LatentModel, seed: int):
        self.model = model
        self._arrival = rngmod.stream(seed, "arrival")
        self._noise = rngmod.stream(seed, "noise")
        self._cumV = np.cumsum(model.V, axis=1)
        self._cumV[:, -1] = 1.0
        self._cumB = np.cumsum(model.beta)
        self._cumB[-1] = 1.0
        self._buf: tuple[np.ndarray, np.ndarray, np.ndarray] | None = None
        self._pos = self.BLOCK

    def _refill(self) -> None:
        k, m = self.BLOCK, self.model
        ub = self._arrival.random(k)
        uc = self._arrival.random(k)
        b = np.searchsorted(self._cumB, ub, side="right")
        b = np.minimum(b, m.B - 1)
        c = (uc[:, None] >= self._cumV[b]).sum(axis=1)
        c = np.minimum(c, m.C - 1)
        noise = m.R_noise * self._noise.standard_normal((k, m.ell))
        self._buf = (b, c, noise)
        self._pos = 0

    def next_session(self) -> tuple[int, int, np.ndarray]:
        if self._pos >= self.BLOCK:
            self._refill()
        b, c, noise = self._buf
        i = self._pos
        self._pos += 1
        return int(b[i]), int(c[i]), noise[i]


def run_mini_session(model: LatentModel, n: int, policy: SessionPolicy,
                     streams: EnvStreams) -> tuple[list, np.ndarray]:
    """Play one mini-session; returns the policy's records and per-step regret."""
    b, c, noise = streams.next_session()
    policy.start(n, b)
    col = model.means[:, b]
    best = col.max()
    regret = np.empty(model.ell)
    for l in range(model.ell):
        a = policy.choose(l)
        if not (isinstance(a, (int, np.integer)) and 0 <= a < model.A):
            raise ValueError(f"policy returned invalid action {a!r} at session {n}, step {l + 1}")
        y = model.U[a, c] + noise[l]
        policy.observe(l, int(a), float(y))
        regret[l] = best - col[a]
    return policy.finish(), regret


@dataclass
class RegretLedger:
    increments: list[float] = field(default_factory=list)
    per_user: dict[int, float] = field(default_factory=dict)

    def add(self, b: int, regret: Sequence[float]) -> None:
        self.increments.extend(float(r) for r in regret)
        self.per_user[b] = self.per_user.get(b, 0.0) + float(np.sum(regret))

    @property
    def cumulative(self) -> np.ndarray:
        return np.cumsum(np.asarray(self.increments, dtype=float))


def expected_uniform_regret(model: LatentModel) -> float:
    """Per-step regret of uniform play, averaged over user arrivals."""
    M = model.means
    return float(model.beta @ (M.max(axis=0) - M.mean(axis=0)))
