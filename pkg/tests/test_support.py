import itertools
import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import dense_ln_z, dense_weights, random_moment_vectors
from valse.hyperparams import Hyperparams
from valse.support import (
    SupportState,
    activation_threshold,
    all_deltas,
    apply_activate,
    apply_deactivate,
    build_gram,
    delta_activate,
    delta_deactivate,
    ln_Z,
    maximize_support,
    weights_posterior,
)


def random_problem(rng, N, M=None, nu=None, signal=True):
    M = M or N + 3
    A = random_moment_vectors(rng, N, M)
    y = rng.normal(size=M) + 1j * rng.normal(size=M)
    if signal:
        picks = rng.choice(N, size=min(3, N), replace=False)
        y = y + A[:, picks] @ (3 * (rng.normal(size=picks.size) + 1j * rng.normal(size=picks.size)))
    beta = Hyperparams(
        nu if nu is not None else rng.uniform(0.2, 2.0),
        rng.uniform(0.05, 0.6),
        rng.uniform(0.5, 10.0),
    )
    return A, y, build_gram(A, y), beta


def flip(s, k):
    s = s.copy()
    s[k] = not s[k]
    return s


# Gram data


def test_gram_of_zero_vectors():
    gram = build_gram(np.zeros((5, 3)), np.ones(5))
    np.testing.assert_array_equal(gram.J, 5 * np.eye(3))
    np.testing.assert_array_equal(gram.h, 0)


def test_gram_of_steering_vectors():
    idx = np.array([0, 1, 3, 4, 8])
    thetas = np.array([0.3, -1.0, 2.2])
    A = np.exp(1j * np.outer(idx, thetas))
    gram = build_gram(A, np.zeros(idx.size))
    for i, j in itertools.product(range(3), repeat=2):
        expected = idx.size if i == j else np.sum(np.exp(1j * idx * (thetas[j] - thetas[i])))
        assert gram.J[i, j] == pytest.approx(expected, abs=1e-12)


def test_gram_random_matches_naive_and_is_hermitian():
    rng = np.random.default_rng(0)
    A = random_moment_vectors(rng, 6, 9)
    y = rng.normal(size=9) + 1j * rng.normal(size=9)
    gram = build_gram([A[:, i] for i in range(6)], y)
    np.testing.assert_allclose(gram.J, gram.J.conj().T)
    np.testing.assert_array_equal(np.diag(gram.J), 9)
    for i in range(6):
        assert gram.h[i] == pytest.approx(np.sum(np.conj(A[:, i]) * y))
    assert np.all(np.abs(gram.J) <= 9 + 1e-12)
    with pytest.raises(ValueError):
        build_gram([np.ones(3)], np.ones(4))


# ln Z


def test_ln_z_empty_and_single():
    rng = np.random.default_rng(1)
    _, _, gram, beta = random_problem(rng, 5)
    assert ln_Z(np.zeros(5), gram, beta) == 0.0
    s = np.zeros(5, bool)
    s[2] = True
    nu, rho, tau, M = beta.nu, beta.rho, beta.tau, gram.M
    expected = (
        -math.log(M + nu / tau)
        + abs(gram.h[2]) ** 2 / (nu * (M + nu / tau))
        + math.log(rho * nu / ((1 - rho) * tau))
    )
    assert ln_Z(s, gram, beta) == pytest.approx(expected, rel=1e-13)


def test_ln_z_matches_dense_oracle():
    rng = np.random.default_rng(2)
    for _ in range(30):
        _, _, gram, beta = random_problem(rng, 8)
        s = rng.random(8) < 0.5
        expected = dense_ln_z(s, gram.J, gram.h, beta.nu, beta.rho, beta.tau)
        assert ln_Z(s, gram, beta) == pytest.approx(expected, rel=1e-10, abs=1e-10)


# single-flip deltas


def test_delta_activate_from_empty():
    rng = np.random.default_rng(3)
    _, _, gram, beta = random_problem(rng, 6)
    state = SupportState.empty(6)
    delta, u, v = delta_activate(4, state, gram, beta)
    assert v == pytest.approx(beta.nu / (gram.M + beta.nu / beta.tau))
    assert u == pytest.approx(v * gram.h[4] / beta.nu)


def test_log_odds_term_vanishes_at_half():
    rng = np.random.default_rng(4)
    _, _, gram, beta = random_problem(rng, 6)
    half = beta.replace(rho=0.5)
    state = SupportState.empty(6)
    d_half, u, v = delta_activate(1, state, gram, half)
    assert d_half == pytest.approx(math.log(v / half.tau) + abs(u) ** 2 / v, rel=1e-14)


def test_deltas_match_ln_z_differences():
    rng = np.random.default_rng(5)
    for _ in range(40):
        N = int(rng.integers(2, 11))
        _, _, gram, beta = random_problem(rng, N)
        s = rng.random(N) < 0.4
        state = weights_posterior(s, gram, beta)
        base = dense_ln_z(s, gram.J, gram.h, beta.nu, beta.rho, beta.tau)
        for k in range(N):
            after = dense_ln_z(flip(s, k), gram.J, gram.h, beta.nu, beta.rho, beta.tau)
            if s[k]:
                delta = delta_deactivate(k, state, beta)
            else:
                delta = delta_activate(k, state, gram, beta)[0]
            assert delta == pytest.approx(after - base, rel=1e-8, abs=1e-9)


def test_activate_then_deactivate_is_identity():
    rng = np.random.default_rng(6)
    _, _, gram, beta = random_problem(rng, 7)
    empty = SupportState.empty(7)
    d_act, u, v = delta_activate(3, empty, gram, beta)
    state = apply_activate(3, u, v, empty, gram, beta)
    assert d_act + delta_deactivate(3, state, beta) == pytest.approx(0.0, abs=1e-10)

    base = weights_posterior(np.array([1, 0, 1, 0, 0, 1, 0], bool), gram, beta)
    _, u, v = delta_activate(4, base, gram, beta)
    back = apply_deactivate(4, apply_activate(4, u, v, base, gram, beta))
    np.testing.assert_array_equal(back.active, base.active)
    np.testing.assert_allclose(back.w, base.w, atol=1e-9)
    np.testing.assert_allclose(back.C, base.C, atol=1e-9)


def test_strong_component_has_negative_deactivation_delta():
    beta = Hyperparams(1.0, 0.1, 1.0)
    state = SupportState(np.array([True]), np.array([0]), np.array([10.0 + 0j]), np.array([[0.01 + 0j]]))
    assert delta_deactivate(0, state, beta) < -1000


def test_flip_arguments_are_checked():
    rng = np.random.default_rng(7)
    _, _, gram, beta = random_problem(rng, 4)
    state = weights_posterior(np.array([1, 0, 0, 0], bool), gram, beta)
    with pytest.raises(ValueError):
        delta_activate(0, state, gram, beta)
    with pytest.raises(ValueError):
        delta_deactivate(2, state, beta)


# rank-one updates against the direct solve


def test_activation_from_empty_is_scalar_solve():
    rng = np.random.default_rng(8)
    _, _, gram, beta = random_problem(rng, 5)
    _, u, v = delta_activate(2, SupportState.empty(5), gram, beta)
    state = apply_activate(2, u, v, SupportState.empty(5), gram, beta)
    assert state.w[0] == pytest.approx(beta.tau * gram.h[2] / (beta.tau * gram.M + beta.nu))
    assert state.C[0, 0] == pytest.approx(beta.nu / (gram.M + beta.nu / beta.tau))


def assert_matches_direct(state, gram, beta, rtol=1e-8):
    idx, w, C = dense_weights(state.s, gram.J, gram.h, beta.nu, beta.tau)
    ordered = state.sorted()
    np.testing.assert_array_equal(ordered.active, idx)
    scale_w = max(np.max(np.abs(w), initial=0.0), 1e-300)
    scale_C = max(np.max(np.abs(C), initial=0.0), 1e-300)
    assert np.max(np.abs(ordered.w - w), initial=0.0) <= rtol * scale_w
    assert np.max(np.abs(ordered.C - C), initial=0.0) <= rtol * scale_C


def test_random_flip_walk_matches_direct_solve():
    rng = np.random.default_rng(9)
    N = 12
    _, _, gram, beta = random_problem(rng, N)
    state = SupportState.empty(N)
    for _ in range(20):
        k = int(rng.integers(N))
        if state.s[k]:
            state = apply_deactivate(k, state)
        else:
            _, u, v = delta_activate(k, state, gram, beta)
            state = apply_activate(k, u, v, state, gram, beta)
        assert_matches_direct(state, gram, beta)
        np.testing.assert_allclose(state.C, state.C.conj().T, atol=1e-12)
        assert np.all(np.real(np.diag(state.C)) > 0)


def test_deactivate_only_component():
    rng = np.random.default_rng(10)
    _, _, gram, beta = random_problem(rng, 3)
    state = weights_posterior(np.array([0, 1, 0], bool), gram, beta)
    empty = apply_deactivate(1, state)
    assert empty.size == 0 and empty.w.size == 0 and empty.C.shape == (0, 0)


def test_long_walk_bookkeeping_stays_consistent():
    rng = np.random.default_rng(11)
    N = 16
    _, _, gram, beta = random_problem(rng, N)
    state = SupportState.empty(N)
    running = 0.0
    for _ in range(50):
        k = int(rng.integers(N))
        if state.s[k]:
            running += delta_deactivate(k, state, beta)
            state = apply_deactivate(k, state)
        else:
            d, u, v = delta_activate(k, state, gram, beta)
            running += d
            state = apply_activate(k, u, v, state, gram, beta)
    assert running == pytest.approx(ln_Z(state.s, gram, beta), abs=1e-6)
    assert_matches_direct(state, gram, beta, rtol=1e-6)


# weight posterior


def test_weights_posterior_empty_and_single():
    rng = np.random.default_rng(12)
    _, _, gram, beta = random_problem(rng, 4)
    empty = weights_posterior(np.zeros(4), gram, beta)
    assert empty.w.size == 0 and empty.C.size == 0
    single = weights_posterior(np.array([0, 0, 1, 0]), gram, beta)
    assert single.w[0] == pytest.approx(beta.tau * gram.h[2] / (beta.tau * gram.M + beta.nu))


def test_weights_posterior_large_tau_is_least_squares():
    rng = np.random.default_rng(13)
    A = np.exp(1j * np.outer(np.arange(20), [0.0, 1.0, 2.5]))
    y = rng.normal(size=20) + 1j * rng.normal(size=20)
    gram = build_gram(A, y)
    state = weights_posterior(np.ones(3), gram, Hyperparams(0.5, 0.5, 1e12))
    ls = np.linalg.lstsq(A, y, rcond=None)[0]
    np.testing.assert_allclose(state.w, ls, rtol=1e-9)


# greedy maximization


def test_maximize_support_ignores_pure_noise():
    rng = np.random.default_rng(14)
    gram = build_gram(random_moment_vectors(rng, 6, 8), np.zeros(8))
    state = maximize_support(np.zeros(6), gram, Hyperparams(1.0, 0.05, 1.0))
    assert state.size == 0


def test_maximize_support_reaches_local_maximum():
    rng = np.random.default_rng(15)
    for _ in range(30):
        N = int(rng.integers(2, 13))
        _, _, gram, beta = random_problem(rng, N)
        s0 = rng.random(N) < 0.3
        state = maximize_support(s0, gram, beta)
        best = dense_ln_z(state.s, gram.J, gram.h, beta.nu, beta.rho, beta.tau)
        start = dense_ln_z(s0, gram.J, gram.h, beta.nu, beta.rho, beta.tau)
        assert best >= start - 1e-9
        for k in range(N):
            assert dense_ln_z(flip(state.s, k), gram.J, gram.h, beta.nu, beta.rho, beta.tau) <= best + 1e-9
        assert_matches_direct(state, gram, beta, rtol=1e-6)


def test_maximize_support_is_exhaustive_optimum_on_easy_problem():
    # nearly orthogonal columns: greedy ascent finds the global maximum
    N = 6
    A = np.exp(1j * np.outer(np.arange(24), 2 * np.pi * np.arange(N) / 24 * 4))
    rng = np.random.default_rng(16)
    y = A[:, [1, 4]] @ np.array([3.0, -2.0j]) + 0.3 * (rng.normal(size=24) + 1j * rng.normal(size=24))
    gram = build_gram(A, y)
    beta = Hyperparams(0.1, 0.2, 5.0)
    state = maximize_support(np.zeros(N), gram, beta)
    scores = {
        bits: dense_ln_z(np.array(bits, bool), gram.J, gram.h, beta.nu, beta.rho, beta.tau)
        for bits in itertools.product([0, 1], repeat=N)
    }
    best = max(scores, key=scores.get)
    np.testing.assert_array_equal(state.s, np.array(best, bool))
    assert state.flips == 2


def test_maximize_support_warm_start_at_optimum_flips_nothing():
    rng = np.random.default_rng(17)
    _, _, gram, beta = random_problem(rng, 10)
    first = maximize_support(np.zeros(10), gram, beta)
    again = maximize_support(first.s, gram, beta)
    assert again.flips == 0
    np.testing.assert_array_equal(again.s, first.s)


def test_each_accepted_flip_increases_ln_z():
    rng = np.random.default_rng(18)
    _, _, gram, beta = random_problem(rng, 12)
    state = weights_posterior(np.zeros(12), gram, beta)
    prev = ln_Z(state.s, gram, beta)
    while True:
        delta, u, v = all_deltas(state, gram, beta)
        k = int(np.argmax(delta))
        if delta[k] <= 1e-12:
            break
        state = apply_deactivate(k, state) if state.s[k] else apply_activate(k, u[k], v[k], state, gram, beta)
        cur = ln_Z(state.s, gram, beta)
        assert cur > prev
        assert cur - prev == pytest.approx(delta[k], rel=1e-8)
        prev = cur
    np.testing.assert_array_equal(state.s, maximize_support(np.zeros(12), gram, beta).s)


def test_flip_budget_warns(monkeypatch, caplog):
    import valse.support as support

    rng = np.random.default_rng(19)
    _, _, gram, beta = random_problem(rng, 8, nu=0.01)
    monkeypatch.setattr(support, "FLIP_BUDGET_PER_COMPONENT", 0)
    with caplog.at_level(logging.WARNING, logger="valse.support"):
        state = support.maximize_support(np.zeros(8), gram, beta)
    assert state.flips == 0
    assert "support search stopped" in caplog.text


# activation threshold


def test_activation_threshold_values():
    assert activation_threshold(1.0, 0.5, 1.0) == pytest.approx(2 * math.log(2))
    # smaller variance needs a higher SNR to pass
    grid = np.linspace(1e-3, 1.0, 500)
    for rho in (0.43, 0.5):
        assert np.all(np.diff(activation_threshold(1.0, rho, grid)) < 0)
    # for sparse priors the curve turns upward before C~ reaches tau: the
    # slope at C~ = tau is (ln(2 (1 - rho) / rho) - 1) / tau
    small = np.linspace(1e-3, 0.1, 500)
    for rho in (0.01, 0.1, 0.3):
        assert np.all(np.diff(activation_threshold(1.0, rho, small)) < 0)
    assert activation_threshold(1.0, 0.01, 1.0) > activation_threshold(1.0, 0.01, 0.5)


@settings(max_examples=60, deadline=None)
@given(
    tau=st.floats(0.1, 10),
    rho=st.floats(0.01, 0.9),
    c_tilde=st.floats(0.01, 10),
    phase=st.floats(-np.pi, np.pi),
)
def test_threshold_boundary_has_zero_deactivation_delta(tau, rho, c_tilde, phase):
    thr = activation_threshold(tau, rho, c_tilde)
    if thr <= 0:
        return
    w_tilde = math.sqrt(thr * c_tilde) * np.exp(1j * phase)
    c_hat = 1.0 / (1.0 / c_tilde + 1.0 / tau)
    w_hat = c_hat * w_tilde / c_tilde
    state = SupportState(np.array([True]), np.array([0]), np.array([w_hat]), np.array([[c_hat + 0j]]))
    assert delta_deactivate(0, state, Hyperparams(1.0, rho, tau)) == pytest.approx(0.0, abs=1e-10 * max(1.0, thr))
