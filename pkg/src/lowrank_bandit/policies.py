"""Per-user OFUL with exploration, and the baselines it is compared against.

All policies implement the session protocol of :mod:`lowrank_bandit.env`
(``start``/``choose``/``observe``/``finish``) and are driven by
:func:`run_policy`.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import rng as rngmod
from .als import AlsConfig, als_sweeps
from .env import EnvStreams, LatentModel, RegretLedger, run_mini_session
from .features import FeatureEstimate, RankDeficientError, estimate_features
from .linalg import EigenSolverError
from .moments import InteractionRecord, Kind, MomentEstimates
from .oful import Mode, OfulParams, OfulState, oful_select, oful_update
from .rtp import RtpConfig, RtpDegenerateError

log = logging.getLogger(__name__)


class PolicyKind(str, enum.Enum):
    RTP_OFUL = "RtpOful"
    UCB_PER_USER = "UcbPerUser"
    ORACLE_OFUL = "OracleOful"
    ALS_OFUL = "AlsOful"


class ScheduleKind(str, enum.Enum):
    SQRT = "Sqrt"
    CUBE_ROOT = "CubeRoot"
    HEXAGON_AWARE = "HexagonAware"
    CONSTANT = "Constant"


@dataclass(frozen=True)
class Schedule:
    kind: ScheduleKind = ScheduleKind.SQRT
    gamma: float | None = None  # Constant
    hexagon: float | None = None  # HexagonAware

    def __post_init__(self):
        object.__setattr__(self, "kind", ScheduleKind(self.kind))
        if self.kind is ScheduleKind.CONSTANT:
            if self.gamma is None or not 0.0 <= self.gamma <= 1.0:
                raise ValueError("Constant schedule needs gamma in [0, 1]")
        if self.kind is ScheduleKind.HEXAGON_AWARE and self.hexagon is not None and self.hexagon <= 0:
            raise ValueError("hexagon must be positive")


def gamma_value(schedule: Schedule, n: int, hexagon: float | None = None) -> float:
    """Exploration rate for mini-session ``n`` (1-based)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    kind = schedule.kind
    if kind is ScheduleKind.SQRT:
        return min(1.0, math.sqrt(math.log(n + 1) / n))
    if kind is ScheduleKind.CUBE_ROOT:
        return min(1.0, (math.log(n + 1) / n) ** (1.0 / 3.0))
    if kind is ScheduleKind.HEXAGON_AWARE:
        h = hexagon if hexagon is not None else schedule.hexagon
        if h is None:
            raise ValueError("HexagonAware schedule needs the threshold value")
        return min(1.0, math.sqrt(h / n))
    return float(schedule.gamma)


@dataclass(frozen=True)
class PolicySpec:
    kind: PolicyKind
    name: str = ""
    schedule: Schedule = field(default_factory=Schedule)
    oful: OfulParams = field(default_factory=OfulParams)
    rtp: RtpConfig = field(default_factory=lambda: RtpConfig(factors=1))
    als: AlsConfig = field(default_factory=AlsConfig)
    warmup: int = 25  # exploration sessions before the first feature refresh
    literal_gate: bool = False
    rebuild_on_refresh: bool = False
    ucb_scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", PolicyKind(self.kind))
        if not self.name:
            object.__setattr__(self, "name", self.kind.value)
        if self.warmup < 1:
            raise ValueError("warmup must be >= 1")


@dataclass
class RunResult:
    ledger: RegretLedger
    records: list[InteractionRecord]
    feature_snapshots: list[tuple[int, FeatureEstimate]]
    seed: int
    spec: PolicySpec
    user_states: dict[int, OfulState] = field(default_factory=dict)

    @property
    def cumulative_regret(self) -> np.ndarray:
        return self.ledger.cumulative


# -- shared pieces --------------------------------------------------------------

class _PerUserOful:
    """One OFUL state per user, fed with features as they were at play time."""

    def __init__(self, C: int, params: OfulParams):
        self.C = C
        self.params = params
        self.states: dict[int, OfulState] = {}
        self.logs: dict[int, list[tuple[int, float]]] = {}

    def state(self, b: int) -> OfulState:
        st = self.states.get(b)
        if st is None:
            st = self.states[b] = OfulState.initial(self.C, self.params)
            self.logs[b] = []
        return st

    def select(self, b: int, features: np.ndarray) -> int:
        st = self.state(b)
        if self.params.mode is Mode.UNREGULARIZED and st.t < features.shape[0]:
            return st.t  # initial sweep over all arms
        return oful_select(st, features, self.params)

    def update(self, b: int, features: np.ndarray, a: int, y: float) -> None:
        oful_update(self.state(b), features[a], y)
        self.logs[b].append((a, y))

    def rebuild(self, features: np.ndarray) -> None:
        for b, entries in self.logs.items():
            st = OfulState.initial(self.C, self.params)
            for a, y in entries:
                oful_update(st, features[a], y)
            self.states[b] = st


class _SessionPolicy:
    kind_label = ""

    def __init__(self, A: int, C: int, spec: PolicySpec, seed: int):
        self.A, self.C = A, C
        self.spec = spec
        self.seed = seed
        self.rng = rngmod.stream(seed, "policy")
        self.records: list[InteractionRecord] = []
        self.snapshots: list[tuple[int, FeatureEstimate]] = []
        self._session: list[InteractionRecord] = []

    def start(self, n: int, b: int) -> None:
        self.n, self.b = n, b
        self._session = []

    def _record(self, l: int, a: int, y: float, kind: Kind, gamma: float) -> None:
        self._session.append(InteractionRecord(self.n, l + 1, self.b, a, y, kind, gamma))

    def finish(self) -> list[InteractionRecord]:
        self.records.extend(self._session)
        return self._session

    @property
    def user_states(self) -> dict[int, OfulState]:
        return {}


class _GatedPolicy(_SessionPolicy):
    """Bernoulli exploration gate shared by the RTP and ALS policies."""

    def __init__(self, A: int, C: int, ell: int, spec: PolicySpec, seed: int):
        super().__init__(A, C, spec, seed)
        self.ell = ell
        self.features: np.ndarray | None = None
        self.oful = _PerUserOful(C, spec.oful)
        self.explore_count = 0

    def start(self, n: int, b: int) -> None:
        super().start(n, b)
        g = gamma_value(self.spec.schedule, n)
        self.gamma = g
        p_explore = 1.0 - g if self.spec.literal_gate else g
        u = self.rng.random()
        self.exploring = u < p_explore
        self.p_explore = p_explore
        if self.exploring or self.features is None:
            self._uniform = self.rng.integers(self.A, size=self.ell)

    def choose(self, l: int) -> int:
        if self.exploring or self.features is None:
            return int(self._uniform[l])
        return self.oful.select(self.b, self.features)

    def observe(self, l: int, a: int, y: float) -> None:
        if self.exploring:
            self._record(l, a, y, Kind.EXPLORE, self.p_explore)
            return
        self._record(l, a, y, Kind.EXPLOIT, self.gamma)
        if self.features is not None:
            self.oful.update(self.b, self.features, a, y)

    def finish(self) -> list[InteractionRecord]:
        session = super().finish()
        self.on_session(session)
        if self.exploring:
            self.explore_count += 1
            if self.explore_count >= self.spec.warmup:
                self.refresh()
        return session

    def on_session(self, session: list[InteractionRecord]) -> None:
        pass

    def refresh(self) -> None:
        raise NotImplementedError

    def _set_features(self, features: np.ndarray) -> None:
        self.features = features
        if self.spec.rebuild_on_refresh:
            self.oful.rebuild(features)

    @property
    def user_states(self) -> dict[int, OfulState]:
        return self.oful.states


class RtpOfulPolicy(_GatedPolicy):
    def __init__(self, A: int, C: int, ell: int, spec: PolicySpec, seed: int):
        super().__init__(A, C, ell, spec, seed)
        self.moments = MomentEstimates.empty(A)
        self.refreshes = 0

    def on_session(self, session: list[InteractionRecord]) -> None:
        self.moments.ingest_session(session)

    def refresh(self) -> None:
        cfg = replace(self.spec.rtp, factors=self.C,
                      seed=rngmod.derive_seed(self.seed, 7, self.refreshes))
        self.refreshes += 1
        try:
            fe = estimate_features(self.moments, self.C, cfg)
        except (RankDeficientError, RtpDegenerateError, EigenSolverError) as exc:
            log.debug("feature refresh skipped at n=%d: %s", self.n, exc)
            return
        self.snapshots.append((self.n, fe))
        self._set_features(fe.u_bar)


class AlsOfulPolicy(_GatedPolicy):
    def __init__(self, A: int, C: int, ell: int, B: int, spec: PolicySpec, seed: int):
        super().__init__(A, C, ell, spec, seed)
        k = spec.als.rank
        self.sums = np.zeros((B, A))
        self.counts = np.zeros((B, A))
        init = rngmod.stream(seed, "policy", 1)
        self.item_f = spec.als.init_scale * init.standard_normal((A, k))
        self.user_f = spec.als.init_scale * init.standard_normal((B, k))

    def on_session(self, session: list[InteractionRecord]) -> None:
        if self.exploring:
            for r in session:
                self.sums[r.b, r.a] += r.x
                self.counts[r.b, r.a] += 1

    def refresh(self) -> None:
        cfg = self.spec.als
        if cfg.iterations > 0:
            mask = (self.counts > 0).astype(float)
            Y = np.divide(self.sums, self.counts, out=np.zeros_like(self.sums),
                          where=self.counts > 0)
            self.item_f, self.user_f = als_sweeps(Y, mask, self.item_f, self.user_f,
                                                  cfg.iterations, cfg.ridge)
        self._set_features(self.item_f.copy())


class OracleOfulPolicy(_SessionPolicy):
    def __init__(self, U: np.ndarray, spec: PolicySpec, seed: int):
        super().__init__(U.shape[0], U.shape[1], spec, seed)
        self.features = np.asarray(U, dtype=float)
        self.oful = _PerUserOful(self.C, spec.oful)

    def choose(self, l: int) -> int:
        return self.oful.select(self.b, self.features)

    def observe(self, l: int, a: int, y: float) -> None:
        self._record(l, a, y, Kind.EXPLOIT, 1.0)
        self.oful.update(self.b, self.features, a, y)

    @property
    def user_states(self) -> dict[int, OfulState]:
        return self.oful.states


class UcbPerUserPolicy(_SessionPolicy):
    """UCB1 run independently for every user."""

    def __init__(self, A: int, B: int, spec: PolicySpec, seed: int):
        super().__init__(A, 0, spec, seed)
        self.counts = np.zeros((B, A))
        self.sums = np.zeros((B, A))
        self.steps = np.zeros(B, dtype=np.int64)

    def choose(self, l: int) -> int:
        b = self.b
        counts = self.counts[b]
        unplayed = np.flatnonzero(counts == 0)
        if unplayed.size:
            return int(unplayed[0])
        t = self.steps[b]
        bonus = self.spec.ucb_scale * np.sqrt(2.0 * math.log(t) / counts)
        return int(np.argmax(self.sums[b] / counts + bonus))

    def observe(self, l: int, a: int, y: float) -> None:
        self._record(l, a, y, Kind.EXPLOIT, 1.0)
        self.counts[self.b, a] += 1
        self.sums[self.b, a] += y
        self.steps[self.b] += 1


def make_policy(model: LatentModel, spec: PolicySpec, seed: int) -> _SessionPolicy:
    A, B, C, ell = model.A, model.B, model.C, model.ell
    if spec.kind is PolicyKind.RTP_OFUL:
        return RtpOfulPolicy(A, C, ell, spec, seed)
    if spec.kind is PolicyKind.ALS_OFUL:
        return AlsOfulPolicy(A, spec.als.rank, ell, B, spec, seed)
    if spec.kind is PolicyKind.ORACLE_OFUL:
        return OracleOfulPolicy(model.U, spec, seed)
    return UcbPerUserPolicy(A, B, spec, seed)


def run_policy(model: LatentModel, N: int, spec: PolicySpec, seed: int) -> RunResult:
    """Simulate ``N`` mini-sessions of ``spec`` against ``model``."""
    if N < 1:
        raise ValueError("N must be >= 1")
    policy = make_policy(model, spec, seed)
    streams = EnvStreams(model, seed)
    ledger = RegretLedger()
    for n in range(1, N + 1):
        _, regret = run_mini_session(model, n, policy, streams)
        ledger.add(policy.b, regret)
    return RunResult(ledger, policy.records, policy.snapshots, seed, spec, policy.user_states)


def run_rtp_oful(model: LatentModel, N: int, spec: PolicySpec, seed: int) -> RunResult:
    if spec.kind is not PolicyKind.RTP_OFUL:
        raise ValueError("spec.kind must be RtpOful")
    return run_policy(model, N, spec, seed)


def run_ucb_per_user(model: LatentModel, N: int, seed: int,
                     spec: PolicySpec | None = None) -> RunResult:
    return run_policy(model, N, spec or PolicySpec(PolicyKind.UCB_PER_USER), seed)


def run_oracle_oful(model: LatentModel, N: int, spec: PolicySpec, seed: int) -> RunResult:
    return run_policy(model, N, replace(spec, kind=PolicyKind.ORACLE_OFUL), seed)


def run_als_oful(model: LatentModel, N: int, spec: PolicySpec, seed: int) -> RunResult:
    if spec.als.rank != model.C:
        raise ValueError("ALS rank must equal the number of classes")
    return run_policy(model, N, replace(spec, kind=PolicyKind.ALS_OFUL), seed)
