import math

import numpy as np
import pytest

from lowrank_bandit.als import AlsConfig, als_sweeps
from lowrank_bandit.env import (
    EnvStreams,
    GeneratorSpec,
    LatentModel,
    expected_uniform_regret,
    generate_instance,
    run_mini_session,
)
from lowrank_bandit.moments import Kind
from lowrank_bandit.oful import OfulParams, OfulState, oful_update
from lowrank_bandit.policies import (
    PolicyKind,
    PolicySpec,
    Schedule,
    ScheduleKind,
    gamma_value,
    make_policy,
    run_als_oful,
    run_oracle_oful,
    run_policy,
    run_rtp_oful,
    run_ucb_per_user,
)
from lowrank_bandit.rtp import RtpConfig


def rtp_spec(schedule=Schedule(), **kw):
    return PolicySpec(PolicyKind.RTP_OFUL, schedule=schedule, rtp=RtpConfig(3, restarts=20),
                      **kw)


# -- schedules ----------------------------------------------------------------------

def test_sqrt_first_value():
    assert gamma_value(Schedule(ScheduleKind.SQRT), 1) == pytest.approx(math.sqrt(math.log(2)))
    assert gamma_value(Schedule(ScheduleKind.SQRT), 1) == pytest.approx(0.8326, abs=1e-4)


def test_hexagon_aware_values():
    s = Schedule(ScheduleKind.HEXAGON_AWARE, hexagon=4.0)
    assert [gamma_value(s, n) for n in range(1, 5)] == [1.0] * 4
    for n in (5, 9, 100):
        assert gamma_value(s, n) == pytest.approx(2 / math.sqrt(n))
    with pytest.raises(ValueError, match="threshold"):
        gamma_value(Schedule(ScheduleKind.HEXAGON_AWARE), 3)


@pytest.mark.parametrize("sched", [Schedule(ScheduleKind.SQRT), Schedule(ScheduleKind.CUBE_ROOT),
                                   Schedule(ScheduleKind.HEXAGON_AWARE, hexagon=7.5),
                                   Schedule(ScheduleKind.CONSTANT, gamma=0.3)])
def test_schedule_range_and_monotone(sched):
    vals = np.array([gamma_value(sched, n) for n in range(1, 5000)])
    assert np.all((vals > 0) & (vals <= 1))
    assert np.all(np.diff(vals[2:]) <= 0)


def test_schedule_validation():
    with pytest.raises(ValueError):
        Schedule(ScheduleKind.CONSTANT)
    with pytest.raises(ValueError):
        Schedule(ScheduleKind.CONSTANT, gamma=1.5)
    with pytest.raises(ValueError):
        gamma_value(Schedule(), 0)


def test_sqrt_exploration_mass_growth():
    s = Schedule(ScheduleKind.SQRT)
    g = np.array([gamma_value(s, n) for n in range(1, 1_000_001)])
    mass = np.cumsum(g)
    # sum_n sqrt(log n / n) ~ 2 sqrt(N log N), approached slowly from below
    ratios = [mass[N - 1] / (2 * math.sqrt(N * math.log(N))) for N in (10_000, 100_000, 1_000_000)]
    assert ratios == sorted(ratios) and 0.85 <= ratios[0] and ratios[-1] <= 1.0
    slope = math.log(mass[-1] / mass[9_999]) / math.log(100)
    assert 0.5 <= slope <= 0.57


# -- gated policies ---------------------------------------------------------------------

@pytest.fixture(scope="module")
def small_model():
    return generate_instance(12, 4, 3, GeneratorSpec(R_noise=0.1, ell=3), seed=2)


def test_always_explore(small_model):
    res = run_rtp_oful(small_model, 400, rtp_spec(Schedule(ScheduleKind.CONSTANT, gamma=1.0)), 0)
    assert all(r.kind is Kind.EXPLORE for r in res.records)
    assert res.user_states == {}
    per_step = res.cumulative_regret[-1] / 1200
    assert per_step == pytest.approx(expected_uniform_regret(small_model), rel=0.15)


def test_never_explore(small_model):
    res = run_rtp_oful(small_model, 400, rtp_spec(Schedule(ScheduleKind.CONSTANT, gamma=0.0)), 0)
    assert all(r.kind is Kind.EXPLOIT for r in res.records)
    assert res.feature_snapshots == [] and res.user_states == {}
    c = res.cumulative_regret
    # linear growth: second half accrues about as much as the first
    assert (c[-1] - c[599]) / c[599] == pytest.approx(1.0, abs=0.2)


def test_literal_gate_flips_polarity(small_model):
    spec = rtp_spec(Schedule(ScheduleKind.CONSTANT, gamma=1.0), literal_gate=True)
    res = run_rtp_oful(small_model, 50, spec, 0)
    assert all(r.kind is Kind.EXPLOIT for r in res.records)


def test_exploration_count_matches_schedule(small_model):
    N = 2000
    res = run_rtp_oful(small_model, N, rtp_spec(), 3)
    explored = len({r.n for r in res.records if r.kind is Kind.EXPLORE})
    g = np.array([gamma_value(Schedule(), n) for n in range(1, N + 1)])
    assert abs(explored - g.sum()) <= 4 * math.sqrt(np.sum(g * (1 - g)))
    assert len(res.feature_snapshots) == explored - 24


def test_deterministic_replay(small_model):
    a = run_rtp_oful(small_model, 300, rtp_spec(), 5)
    b = run_rtp_oful(small_model, 300, rtp_spec(), 5)
    assert a.records == b.records
    assert np.array_equal(a.cumulative_regret, b.cumulative_regret)
    c = run_rtp_oful(small_model, 300, rtp_spec(), 6)
    assert c.records != a.records


def test_per_user_oful_sees_only_own_exploit_sessions(small_model):
    spec = rtp_spec(rebuild_on_refresh=True)
    pol = make_policy(small_model, spec, 4)
    streams = EnvStreams(small_model, 4)
    for n in range(1, 601):
        run_mini_session(small_model, n, pol, streams)
    feats = pol.features
    first = pol.snapshots[0][0]
    assert pol.oful.states
    for b, st in pol.oful.states.items():
        mine = [(r.a, r.x) for r in pol.records
                if r.b == b and r.kind is Kind.EXPLOIT and r.n > first]
        assert pol.oful.logs[b] == mine
        ref = OfulState.initial(3, spec.oful)
        for a, y in mine:
            oful_update(ref, feats[a], y)
        assert np.allclose(st.gram, ref.gram, atol=1e-9)
        assert np.allclose(st.v_hat, ref.v_hat, atol=1e-9)


def test_rank_deficient_start_falls_back_to_uniform():
    # two arms cannot support three factors, so every refresh is skipped
    m = LatentModel(np.array([[1.0, 0.0, 0.5], [0.0, 1.0, 0.5]]),
                    np.array([[1 / 3, 1 / 3, 1 / 3]]), [1.0], R_noise=0.1)
    with pytest.raises(ValueError):
        generate_instance(2, 1, 3)
    res = run_rtp_oful(m, 200, rtp_spec(warmup=1), 0)
    assert res.feature_snapshots == []
    assert res.user_states == {}


# -- baselines --------------------------------------------------------------------------

def test_ucb_single_arm():
    m = LatentModel(np.array([[0.5]]), np.ones((2, 1)), [0.5, 0.5], R_noise=0.2)
    assert run_ucb_per_user(m, 50, 0).cumulative_regret[-1] == 0.0


def test_ucb_noise_free():
    u = np.array([1.0, 0.3, 0.0])
    m = LatentModel(u[:, None], np.ones((1, 1)), [1.0], R_noise=0.0)
    res = run_ucb_per_user(m, 100, 0)
    assert [r.a for r in res.records[:3]] == [0, 1, 2]
    T = 300
    plays = np.bincount([r.a for r in res.records], minlength=3)
    assert plays[0] > 0.8 * T
    gaps = 1.0 - u[1:]
    bound = np.sum(8 * math.log(T) / gaps + (1 + math.pi ** 2 / 3) * gaps)
    assert res.cumulative_regret[-1] <= bound


def test_ucb_users_are_independent():
    m = generate_instance(5, 3, 2, seed=1)
    res = run_ucb_per_user(m, 60, 0)
    for b in range(3):
        firsts = [r.a for r in res.records if r.b == b][:5]
        assert firsts == [0, 1, 2, 3, 4]


def test_oracle_noise_free_settles():
    m = generate_instance(5, 1, 2, GeneratorSpec(R_noise=0.0), seed=3)
    res = run_oracle_oful(m, 200, PolicySpec(PolicyKind.ORACLE_OFUL), 0)
    inc = np.asarray(res.ledger.increments)
    assert np.any(inc[:20] == 0.0)
    assert np.mean(inc[300:] == 0.0) >= 0.9


def test_oracle_records_are_exploit_only(small_model):
    res = run_oracle_oful(small_model, 50, PolicySpec(PolicyKind.ORACLE_OFUL), 0)
    assert all(r.kind is Kind.EXPLOIT and r.gamma == 1.0 for r in res.records)


def test_als_fits_complete_table():
    rng = np.random.default_rng(0)
    U = rng.uniform(0, 1, (8, 3))
    V = rng.dirichlet(np.ones(3), 6)
    Y = V @ U.T
    item, user = als_sweeps(Y, np.ones_like(Y), 0.1 * rng.standard_normal((8, 3)),
                            0.1 * rng.standard_normal((6, 3)), 50, 0.0)
    assert np.abs(user @ item.T - Y).max() <= 1e-6


def test_als_without_fitting_is_near_uniform():
    m = generate_instance(20, 5, 3, seed=1)
    u = expected_uniform_regret(m)
    raw = run_als_oful(m, 2000, PolicySpec(PolicyKind.ALS_OFUL, als=AlsConfig(3, iterations=0)), 0)
    fit = run_als_oful(m, 2000, PolicySpec(PolicyKind.ALS_OFUL, als=AlsConfig(3, iterations=20)), 0)
    raw_rate = np.mean(raw.ledger.increments)
    assert raw_rate >= 0.5 * u
    assert np.mean(fit.ledger.increments) < raw_rate


def test_als_rank_must_match():
    m = generate_instance(6, 2, 2, seed=0)
    with pytest.raises(ValueError):
        run_als_oful(m, 10, PolicySpec(PolicyKind.ALS_OFUL, als=AlsConfig(3)), 0)


def test_run_policy_rejects_empty_horizon(small_model):
    with pytest.raises(ValueError):
        run_policy(small_model, 0, rtp_spec(), 0)


def test_ledger_length(small_model):
    for kind in PolicyKind:
        spec = PolicySpec(kind, rtp=RtpConfig(3), als=AlsConfig(3), oful=OfulParams())
        assert len(run_policy(small_model, 30, spec, 1).ledger.increments) == 90
