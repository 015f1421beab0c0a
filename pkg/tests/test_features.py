import math

import numpy as np
import pytest

from lowrank_bandit.env import GeneratorSpec, generate_instance
from lowrank_bandit.features import (
    FeatureEstimate,
    ModelConstants,
    RankDeficientError,
    align_columns,
    align_columns_assignment,
    aleph,
    assumption_constants,
    diamond,
    diamond_asymptotic,
    estimate_features,
    estimate_features_from,
    hexagon_branches,
    hexagon_threshold,
    recovery_bound,
)
from lowrank_bandit.linalg import rank1_tensor
from lowrank_bandit.moments import MomentEstimates, population_moments
from lowrank_bandit.rtp import RtpConfig

ONES = ModelConstants(1.0, 1.0, 1.0, 1.0, 1.0)


def random_factors(seed, A, C):
    rng = np.random.default_rng(seed)
    U = rng.uniform(0, 1, (A, C))
    w = rng.dirichlet(np.ones(C))
    return U, w


def aligned_weights(fe, perm):
    return np.array([fe.v_bar[perm[c]] for c in range(len(perm))])


def test_exact_population_moments_recover_factors():
    U, w = random_factors(0, 6, 2)
    m2, m3 = population_moments(U, w)
    fe = estimate_features_from(m2, m3, 2, RtpConfig(2))
    perm, signs, err = align_columns(U, fe.u_bar)
    assert err <= 1e-6
    assert np.allclose(aligned_weights(fe, perm), w, atol=1e-6)
    # well separated positive eigenvalues fix the sign
    assert np.all(signs == 1)
    # reconstruct the moments from the output
    Ub = fe.u_bar
    assert np.allclose((Ub * fe.v_bar) @ Ub.T, m2, atol=1e-8)
    r3 = sum(rank1_tensor(Ub[:, c], fe.v_bar[c]) for c in range(2))
    assert np.allclose(r3, m3, atol=1e-8)


def test_single_factor_closed_form():
    u = np.array([0.3, 0.9, 0.5, 0.1])
    v = 0.7
    m2 = v * np.outer(u, u)
    m3 = rank1_tensor(u, v)
    fe = estimate_features_from(m2, m3, 1, RtpConfig(1))
    assert min(np.linalg.norm(fe.u_bar[:, 0] - u), np.linalg.norm(fe.u_bar[:, 0] + u)) <= 1e-8
    assert fe.v_bar[0] == pytest.approx(v, abs=1e-8)
    assert fe.lambdas[0] == pytest.approx(v ** -0.5, rel=1e-10)


def test_zero_m2_is_rank_deficient():
    with pytest.raises(RankDeficientError, match="rank-deficient second moment"):
        estimate_features_from(np.zeros((3, 3)), np.zeros((3, 3, 3)), 2, RtpConfig(2))


def test_too_many_factors_is_rank_deficient():
    U, w = random_factors(1, 5, 2)
    m2, m3 = population_moments(U, w)
    with pytest.raises(RankDeficientError):
        estimate_features_from(m2, m3, 3, RtpConfig(3))


def test_no_sessions_is_rank_deficient():
    with pytest.raises(RankDeficientError):
        estimate_features(MomentEstimates.empty(4), 2, RtpConfig(2))


def test_whitening_and_pseudo_inverse_identities():
    model = generate_instance(10, 4, 3, seed=2)
    m = MomentEstimates.empty(10)
    rng = np.random.default_rng(0)
    acts = rng.integers(10, size=(20_000, 3))
    c = rng.integers(3, size=20_000)
    m.ingest_batch(acts, model.U[acts, c[:, None]], 1.0)
    fe = estimate_features(m, 3, RtpConfig(3))
    W = fe.whitener
    assert np.allclose(W.T @ m.m2 @ W, np.eye(3), atol=1e-8)
    d = np.linalg.norm(W, axis=0) ** -2  # eigenvalues of m2 along W's columns
    pinv = W * d  # U_hat D^{1/2} = W D
    assert np.allclose(W.T @ pinv, np.eye(3), atol=1e-10)
    assert np.allclose(pinv, np.linalg.pinv(W.T), atol=1e-8)


def test_invalid_lambda_columns_are_zeroed():
    # the second direction carries (almost) no third-moment mass
    u1, u2 = np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0])
    m2 = np.outer(u1, u1) + np.outer(u2, u2)
    m3 = rank1_tensor(u1) + rank1_tensor(u2, 1e-12)
    fe = estimate_features_from(m2, m3, 2, RtpConfig(2))
    assert fe.valid.tolist().count(False) == 1
    bad = int(np.flatnonzero(~fe.valid)[0])
    assert not fe.u_bar[:, bad].any() and fe.v_bar[bad] == 0.0


def test_feature_estimate_json_round_trip():
    U, w = random_factors(3, 5, 2)
    fe = estimate_features_from(*population_moments(U, w), 2, RtpConfig(2), n=17)
    back = FeatureEstimate.from_json(fe.to_json())
    assert back.n == 17
    assert np.array_equal(back.u_bar, fe.u_bar) and np.array_equal(back.v_bar, fe.v_bar)
    assert np.array_equal(back.lambdas, fe.lambdas)
    assert np.array_equal(back.whitener, fe.whitener)


# -- alignment --------------------------------------------------------------------

def test_align_identity():
    U = np.random.default_rng(0).standard_normal((5, 3))
    perm, signs, err = align_columns(U, U)
    assert perm == (0, 1, 2) and np.all(signs == 1) and err == 0.0


def test_align_swap_and_sign():
    U = np.random.default_rng(1).standard_normal((4, 2))
    est = np.column_stack([U[:, 1], -U[:, 0]])
    perm, signs, err = align_columns(U, est)
    assert perm == (1, 0) and signs.tolist() == [-1.0, 1.0] and err == 0.0


def test_align_small_perturbation():
    rng = np.random.default_rng(2)
    U = rng.standard_normal((6, 3))
    G = rng.standard_normal((6, 3))
    G /= np.linalg.norm(G, axis=0)
    _, _, err = align_columns(U, U + 1e-3 * G)
    assert 0 <= err <= 1e-3 + 1e-15


def test_align_refuses_large_C_and_assignment_agrees():
    rng = np.random.default_rng(3)
    U = rng.standard_normal((12, 9))
    with pytest.raises(ValueError, match="assignment"):
        align_columns(U, U)
    p = rng.permutation(9)
    perm, signs, err = align_columns_assignment(U, -U[:, p])
    assert err == 0.0 and np.all(signs == -1)
    assert all(p[perm[c]] == c for c in range(9))


# -- bound constants ----------------------------------------------------------------

def test_aleph_all_ones():
    # 1 + 10 * (1 + 1) * (1 + 1)
    assert aleph(ONES) == 41.0


def test_diamond_all_ones_by_hand():
    A, C = 2, 1
    al = 41.0
    first = (C * A) ** 1.5 * (13 + 4 * math.sqrt(2) + 5 * 1.5) * al
    second = 3.0
    third = 5 * math.sqrt(3 / 8) * (1 + math.sqrt(0.5)) * (2 * C * A) ** 3 * al ** 2
    assert diamond(ONES, A, C) == pytest.approx(first + second + third, rel=1e-14)
    assert diamond_asymptotic(ONES, A, C) == pytest.approx(13 * 2 ** 1.5 * al + 3, rel=1e-14)


def test_recovery_bound_scaling():
    a = recovery_bound(ONES, 3, 2, 100, np.ones(100), 0.1)
    b = recovery_bound(ONES, 3, 2, 400, np.ones(400), 0.1)
    assert b == pytest.approx(a / 2, rel=1e-12)


def test_recovery_bound_formula():
    g = np.array([0.5, 1.0, 0.25])
    n, A, C, d = 3, 4, 2, 0.2
    s = (4 + 1 + 16) * C * math.log(4 * A ** 3 / d) / (2 * n * n)
    assert recovery_bound(ONES, A, C, n, g, d) == pytest.approx(
        diamond(ONES, A, C) * A ** 3 * math.sqrt(s), rel=1e-14)


def test_diamond_positive_and_nonincreasing_in_sigma_min():
    vals = [diamond(ModelConstants(0.2, s, 2.0, 0.3, 1.0), 10, 3)
            for s in np.linspace(0.05, 2.0, 40)]
    assert all(v > 0 for v in vals)
    assert all(b <= a for a, b in zip(vals, vals[1:]))


def test_constants_validation():
    with pytest.raises(ValueError):
        ModelConstants(0.0, 1, 1, 1, 1)
    with pytest.raises(ValueError):
        ModelConstants(1, 2, 1, 1, 1)


def hex_args(A=4, g_b=0.2):
    return (ModelConstants(0.1, 0.5, 2.0, 0.3, 1.0), A, 5, 2, 0.1,
            np.array([0.6, 0.4]), g_b, 1.5)


def test_hexagon_is_max_of_branches():
    b1, b2 = hexagon_branches(*hex_args())
    assert hexagon_threshold(*hex_args()) == max(b1, b2)
    m = 0.3
    assert b1 == pytest.approx(2 * 4 ** 6 * math.log(4 * 16 / 0.1) / m ** 2, rel=1e-14)


def test_hexagon_monotone_sweeps():
    by_A = [hexagon_threshold(*hex_args(A=A)) for A in (2, 4, 8)]
    assert by_A == sorted(by_A)
    by_g = [hexagon_threshold(*hex_args(g_b=g)) for g in (0.1, 0.2, 0.4)]
    assert by_g == sorted(by_g, reverse=True)


def test_hexagon_needs_positive_gap():
    with pytest.raises(ValueError, match="no unique optimal action"):
        hexagon_threshold(*hex_args(g_b=0.0))


def test_assumption_constants_known_model():
    U = np.eye(3)[:, :2] * [2.0, 1.0]
    V = np.array([[0.5, 0.5]])
    chk = assumption_constants(U, V, [1.0])
    # M2 = diag(0.5*4, 0.5*1, 0)
    assert np.allclose(chk.sigmas, [math.sqrt(2.0), math.sqrt(0.5)])
    assert chk.Gamma == pytest.approx(math.sqrt(2.0) - math.sqrt(0.5))
    assert chk.v_min == 0.5 and chk.u_max == 2.0 and not chk.degenerate


def test_assumption_constants_duplicated_class():
    model = generate_instance(6, 3, 3, seed=4)
    U = model.U.copy()
    U[:, 2] = U[:, 1]
    chk = assumption_constants(U, model.V, model.beta)
    assert chk.sigma_min == 0.0 and "sigma_min" in chk.degenerate


def test_assumption_constants_single_class():
    model = generate_instance(5, 2, 1, seed=1)
    chk = assumption_constants(model.U, model.V, model.beta)
    assert math.isinf(chk.Gamma) and not chk.degenerate
    assert math.isfinite(aleph(chk.constants()))


def test_recovery_error_shrinks_with_sessions():
    model = generate_instance(5, 3, 2, GeneratorSpec(v_min=0.1), seed=8)
    errs = []
    for k, seed in ((4_000, 1), (64_000, 2), (1_000_000, 3)):
        rng = np.random.default_rng(seed)
        b = rng.choice(model.B, size=k, p=model.beta)
        c = (rng.random(k)[:, None] > np.cumsum(model.V[b], axis=1)).sum(1).clip(max=1)
        acts = rng.integers(5, size=(k, 3))
        xs = model.U[acts, c[:, None]] + 0.1 * rng.standard_normal((k, 3))
        m = MomentEstimates.empty(5).ingest_batch(acts, xs, 1.0)
        fe = estimate_features(m, 2, RtpConfig(2))
        errs.append(align_columns(model.U, fe.u_bar)[2])
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] <= 0.05
