import numpy as np
import pytest

from lowrank_bandit.env import (
    CallbackPolicy,
    EnvStreams,
    GeneratorSpec,
    LatentModel,
    RegretLedger,
    expected_uniform_regret,
    generate_instance,
    run_mini_session,
)
from lowrank_bandit.rng import derive_seed, stream


def test_generator_shapes_and_simplex():
    m = generate_instance(7, 4, 3, seed=1)
    assert m.U.shape == (7, 3) and m.V.shape == (4, 3) and m.beta.shape == (4,)
    assert np.all((m.U >= 0) & (m.U <= 1))
    assert np.allclose(m.V.sum(1), 1, atol=1e-12) and np.all(m.V >= 0)
    assert np.allclose(m.beta, 0.25)


def test_single_class_is_all_ones():
    m = generate_instance(4, 3, 1, GeneratorSpec(dirichlet_alpha=0.3, v_min=0.5), seed=2)
    assert np.array_equal(m.V, np.ones((3, 1)))


def test_generator_deterministic():
    a, b = generate_instance(5, 3, 2, seed=9), generate_instance(5, 3, 2, seed=9)
    assert a.digest() == b.digest()
    assert a.digest() != generate_instance(5, 3, 2, seed=10).digest()


def test_floor_respected():
    m = generate_instance(4, 1000, 3, GeneratorSpec(v_min=0.1, dirichlet_alpha=0.2), seed=3)
    assert m.V.min() >= 0.1 - 1e-12


def test_infeasible_floor():
    with pytest.raises(ValueError, match="infeasible"):
        generate_instance(4, 2, 3, GeneratorSpec(v_min=1 / 3))


def test_model_validation():
    with pytest.raises(ValueError):
        LatentModel(np.ones((2, 2)), np.array([[0.6, 0.6]]), [1.0])
    with pytest.raises(ValueError):
        LatentModel(np.ones((2, 1)), np.ones((1, 1)), [1.0], ell=2)
    with pytest.raises(ValueError):
        GeneratorSpec(ell=2)


def test_json_round_trip():
    m = generate_instance(4, 2, 2, GeneratorSpec(R_noise=0.3, ell=4), seed=5)
    back = LatentModel.from_json(m.to_json())
    assert back.digest() == m.digest() and back.generator == m.generator


def simple_model(R=0.0):
    return LatentModel(np.array([[1.0], [0.3]]), np.ones((1, 1)), [1.0], R_noise=R, ell=3)


def test_session_hand_example():
    m = simple_model()
    streams = EnvStreams(m, 0)
    seen = []
    pol = CallbackPolicy(lambda b, hist: len(hist) % 2)
    orig = pol.observe
    pol.observe = lambda l, a, y: (seen.append((a, y)), orig(l, a, y))
    _, regret = run_mini_session(m, 1, pol, streams)
    assert seen == [(0, 1.0), (1, 0.3), (0, 1.0)]
    assert regret == pytest.approx([0.0, 0.7, 0.0])


def test_invalid_action_aborts():
    m = simple_model()
    with pytest.raises(ValueError, match="invalid action 5 at session 1"):
        run_mini_session(m, 1, CallbackPolicy(lambda b, h: 5), EnvStreams(m, 0))


def test_best_policy_has_zero_regret():
    m = generate_instance(6, 4, 2, seed=4)
    best = m.means.argmax(axis=0)
    pol = CallbackPolicy(lambda b, h: int(best[b]))
    streams = EnvStreams(m, 1)
    ledger = RegretLedger()
    for n in range(1, 201):
        _, r = run_mini_session(m, n, pol, streams)
        ledger.add(0, r)
    assert ledger.cumulative[-1] == 0.0 and len(ledger.cumulative) == 600


def test_uniform_regret_monte_carlo():
    m = generate_instance(8, 5, 3, seed=6)
    rng = np.random.default_rng(0)
    pol = CallbackPolicy(lambda b, h: int(rng.integers(8)))
    streams = EnvStreams(m, 2)
    inc = []
    for n in range(1, 100_001):
        inc.extend(run_mini_session(m, n, pol, streams)[1])
    inc = np.asarray(inc)
    se = inc.std(ddof=1) / np.sqrt(inc.size)
    assert abs(inc.mean() - expected_uniform_regret(m)) <= 3 * se


def test_class_and_noise_draws_ignore_actions():
    """Arrivals and noise depend on the seed only, so two policies see the same users."""
    m = generate_instance(5, 3, 2, GeneratorSpec(R_noise=0.2), seed=7)
    a, b = EnvStreams(m, 11), EnvStreams(m, 11)
    for _ in range(3000):
        x, y = a.next_session(), b.next_session()
        assert x[0] == y[0] and x[1] == y[1] and np.array_equal(x[2], y[2])


def test_class_frequencies_follow_mixture():
    m = generate_instance(3, 2, 3, seed=8)
    streams = EnvStreams(m, 3)
    counts = np.zeros((2, 3))
    for _ in range(60_000):
        b, c, _ = streams.next_session()
        counts[b, c] += 1
    freq = counts / counts.sum(1, keepdims=True)
    assert np.abs(freq - m.V).max() <= 0.02
    assert abs(counts.sum(1)[0] / 60_000 - 0.5) <= 0.01


def test_regret_ledger_nondecreasing_and_per_user():
    led = RegretLedger()
    led.add(0, [0.1, 0.0, 0.2])
    led.add(1, [0.5, 0.0, 0.0])
    assert np.all(np.diff(led.cumulative) >= 0)
    assert led.per_user == pytest.approx({0: 0.3, 1: 0.5})


def test_streams_independent():
    x = stream(5, "noise").random(4)
    y = stream(5, "noise").random(4)
    z = stream(5, "arrival").random(4)
    assert np.array_equal(x, y) and not np.array_equal(x, z)
    assert derive_seed(1, 2, 3) == derive_seed(1, 2, 3) != derive_seed(1, 2, 4)
    with pytest.raises(KeyError):
        stream(0, "nope")
