"""Importance-weighted second and third moment estimates from exploration sessions."""

from __future__ import annotations

import csv
import enum
import io
import math
from dataclasses import dataclass, field
from itertools import permutations
from typing import Iterable, Sequence

import numpy as np

from .linalg import canonicalize3


class Kind(str, enum.Enum):
    EXPLORE = "Explore"
    EXPLOIT = "Exploit"


@dataclass(frozen=True)
class InteractionRecord:
    n: int  # mini-session, 1-based
    l: int  # step within the session, 1-based
    b: int  # user, 0-based
    a: int  # action, 0-based
    x: float
    kind: Kind
    gamma: float

    CSV_HEADER = ("n", "l", "b", "a", "x", "kind", "gamma")

    def to_row(self) -> list[str]:
        return [str(self.n), str(self.l), str(self.b), str(self.a),
                f"{self.x:.17g}", self.kind.value, f"{self.gamma:.17g}"]

    @classmethod
    def from_row(cls, row: Sequence[str]) -> "InteractionRecord":
        n, l, b, a, x, kind, gamma = row
        return cls(int(n), int(l), int(b), int(a), float(x), Kind(kind), float(gamma))


def write_records_csv(records: Iterable[InteractionRecord], fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(InteractionRecord.CSV_HEADER)
    for r in records:
        w.writerow(r.to_row())


def read_records_csv(fh) -> list[InteractionRecord]:
    rows = csv.reader(fh)
    header = next(rows)
    if tuple(header) != InteractionRecord.CSV_HEADER:
        raise ValueError(f"unexpected header {header}")
    return [InteractionRecord.from_row(r) for r in rows]


def records_to_csv(records: Iterable[InteractionRecord]) -> str:
    buf = io.StringIO()
    write_records_csv(records, buf)
    return buf.getvalue()


_PERMS = tuple(permutations(range(3)))


@dataclass
class MomentEstimates:
    """Running importance-weighted sums of reward products.

    The sums are accumulated already symmetrised: a triple contributes a
    sixth of its weight to each of its six index permutations (a pair, half
    to each of two), processed in a fixed order so storage stays exactly
    symmetric. ``m2``/``m3`` divide by the total session count ``n``.
    """

    A: int
    s2: np.ndarray = field(repr=False)
    s3: np.ndarray = field(repr=False)
    n: int = 0
    gamma_history: list[float] = field(default_factory=list)

    @classmethod
    def empty(cls, A: int) -> "MomentEstimates":
        if A < 1:
            raise ValueError("A must be positive")
        return cls(A, np.zeros((A, A)), np.zeros((A, A, A)))

    @property
    def m2(self) -> np.ndarray:
        if self.n == 0:
            return np.zeros_like(self.s2)
        return self.s2 / self.n

    @property
    def m3(self) -> np.ndarray:
        if self.n == 0:
            return np.zeros_like(self.s3)
        return self.s3 / self.n

    @property
    def explore_sessions(self) -> int:
        return sum(1 for g in self.gamma_history if g > 0)

    def _add_triples(self, actions: np.ndarray, weights2: np.ndarray,
                     weights3: np.ndarray) -> None:
        # actions: (k, 3); order of np.add.at is the index order, which is
        # triple-major so every permuted position sees the same sequence
        a = actions
        i2 = np.stack([a[:, [0, 1]], a[:, [1, 0]]], axis=1).reshape(-1, 2)
        w2 = np.repeat(weights2 / 2.0, 2)
        np.add.at(self.s2, (i2[:, 0], i2[:, 1]), w2)
        i3 = np.stack([a[:, list(p)] for p in _PERMS], axis=1).reshape(-1, 3)
        w3 = np.repeat(weights3 / 6.0, 6)
        np.add.at(self.s3, (i3[:, 0], i3[:, 1], i3[:, 2]), w3)

    def ingest_session(self, session: Sequence[InteractionRecord]) -> "MomentEstimates":
        """Fold one mini-session into the running sums (in place; returns self)."""
        if not session:
            raise ValueError("empty session")
        n0, b0 = session[0].n, session[0].b
        if any(r.n != n0 or r.b != b0 for r in session):
            raise ValueError("records of one session must share (n, b)")
        for r in session:
            if not 0 <= r.a < self.A:
                raise ValueError(f"action {r.a} out of range for A={self.A}")
        kind = session[0].kind
        if any(r.kind != kind for r in session):
            raise ValueError("mixed session kinds")
        if kind is Kind.EXPLORE:
            gamma = session[0].gamma
            if not (0.0 < gamma <= 1.0) or math.isnan(gamma):
                raise ValueError(f"gamma must lie in (0, 1], got {gamma}")
            steps = sorted(session, key=lambda r: r.l)
            if len(steps) < 3:
                raise ValueError("an exploration session needs at least 3 steps")
            k = len(steps) // 3
            acts = np.array([r.a for r in steps[: 3 * k]], dtype=np.intp).reshape(k, 3)
            xs = np.array([r.x for r in steps[: 3 * k]]).reshape(k, 3)
            self._ingest_arrays(acts, xs, np.full(k, gamma))
            self.gamma_history.append(gamma)
        else:
            self.gamma_history.append(0.0)
        self.n += 1
        return self

    def _ingest_arrays(self, acts: np.ndarray, xs: np.ndarray, gammas: np.ndarray) -> None:
        A = self.A
        w2 = xs[:, 0] * xs[:, 1] * (A * A / gammas)
        w3 = xs[:, 0] * xs[:, 1] * xs[:, 2] * (A ** 3 / gammas)
        self._add_triples(acts, w2, w3)

    def ingest_batch(self, actions: np.ndarray, rewards: np.ndarray,
                     gammas: np.ndarray, explore: np.ndarray | None = None) -> "MomentEstimates":
        """Vectorised equivalent of ingesting ``len(actions)`` sessions in order.

        ``actions`` and ``rewards`` have shape ``(sessions, ell)``; sessions
        with ``explore`` False contribute nothing but still count in ``n``.
        """
        actions = np.asarray(actions, dtype=np.intp)
        rewards = np.asarray(rewards, dtype=float)
        gammas = np.broadcast_to(np.asarray(gammas, dtype=float), actions.shape[:1])
        if explore is None:
            explore = np.ones(actions.shape[0], dtype=bool)
        explore = np.asarray(explore, dtype=bool)
        if actions.shape != rewards.shape or actions.ndim != 2 or actions.shape[1] < 3:
            raise ValueError("actions/rewards must be (sessions, ell>=3) arrays")
        if actions.size and (actions.min() < 0 or actions.max() >= self.A):
            raise ValueError("action index out of range")
        g = gammas[explore]
        if np.any(~((g > 0) & (g <= 1))):
            raise ValueError("gamma must lie in (0, 1]")
        k = actions.shape[1] // 3
        acts = actions[explore, : 3 * k].reshape(-1, 3)
        xs = rewards[explore, : 3 * k].reshape(-1, 3)
        self._ingest_arrays(acts, xs, np.repeat(g, k))
        self.gamma_history.extend(np.where(explore, gammas, 0.0).tolist())
        self.n += actions.shape[0]
        return self


def population_moments(U: np.ndarray, weights: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``sum_c w_c u_c u_c^T`` and ``sum_c w_c u_c^{(x)3}`` for columns ``u_c`` of ``U``."""
    U = np.asarray(U, dtype=float)
    w = np.asarray(weights, dtype=float)
    m2 = np.einsum("c,ac,bc->ab", w, U, U)
    m3 = np.einsum("c,ac,bc,dc->abd", w, U, U, U)
    return (m2 + m2.T) / 2.0, canonicalize3(m3)


def _validate_bound_args(n: int, gammas, delta: float, A: int) -> np.ndarray:
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    if n < 1:
        raise ValueError("n must be >= 1")
    if A < 1:
        raise ValueError("A must be >= 1")
    g = np.asarray(gammas, dtype=float)
    if g.ndim != 1 or g.size < n:
        raise ValueError("need at least n exploration rates")
    g = g[:n]
    if np.any(~((g > 0) & (g <= 1))):
        raise ValueError("exploration rates must lie in (0, 1]")
    return g


def entrywise_bounds(n: int, gammas, delta: float, A: int) -> tuple[float, float]:
    """Per-entry deviation bounds for the second and third moment estimates.

    Hoeffding with sampling-probability floors ``gamma_i/A^2`` and
    ``gamma_i/A^3``, simultaneously over all entries with probability
    at least ``1 - delta``.
    """
    g = _validate_bound_args(n, gammas, delta, A)
    s = float(np.sum(g ** -2.0))
    e2 = A ** 2 * math.sqrt(s * math.log(4 * A ** 2 / delta) / (2 * n * n))
    e3 = A ** 3 * math.sqrt(s * math.log(4 * A ** 3 / delta) / (2 * n * n))
    return e2, e3


def concentration_bounds(n: int, gammas, delta: float, A: int) -> tuple[float, float]:
    """Operator-norm bounds on the second and third moment estimation errors."""
    g = _validate_bound_args(n, gammas, delta, A)
    s = float(np.sum(g ** -2.0))
    e2 = A ** 3 * math.sqrt(s * math.log(4 * A ** 2 / delta) / (2 * n * n))
    e3 = A ** 4.5 * math.sqrt(s * math.log(4 * A ** 3 / delta) / (2 * n * n))
    return e2, e3
