import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import cycle, flip, random_stochastic
from restless_lab import chain
from restless_lab.chain import ChainError, TransitionMatrix


def stationary_by_eig(P):
    w, v = np.linalg.eig(np.asarray(P).T)
    x = np.real(v[:, np.argmin(np.abs(w - 1))])
    return x / x.sum()


@st.composite
def chains(draw, min_n=2, max_n=5):
    n = draw(st.integers(min_n, max_n))
    seed = draw(st.integers(0, 2**32 - 1))
    return random_stochastic(np.random.default_rng(seed), n, density=0.6)


class TestValidation:
    def test_row_sum_rejected(self):
        with pytest.raises(ChainError):
            TransitionMatrix([[0.5, 0.4], [0.5, 0.5]])

    def test_tiny_drift_renormalized(self):
        tm = TransitionMatrix([[0.5, 0.5 + 1e-12], [0.5, 0.5]])
        assert np.allclose(tm.matrix.sum(axis=1), 1.0, atol=1e-15)

    def test_reducible_rejected(self):
        with pytest.raises(ChainError):
            TransitionMatrix([[1.0, 0.0], [0.5, 0.5]])

    def test_negative_rejected(self):
        with pytest.raises(ChainError):
            TransitionMatrix([[1.1, -0.1], [0.5, 0.5]])


class TestStationary:
    @pytest.mark.parametrize("p", [0.01, 0.3, 0.95])
    def test_flip_is_uniform(self, p):
        assert np.allclose(chain.stationary_distribution(flip(p)), [0.5, 0.5])

    def test_two_cycle(self):
        assert np.allclose(chain.stationary_distribution([[0, 1], [1, 0]]), [0.5, 0.5])

    def test_detailed_balance_example(self):
        assert np.allclose(chain.stationary_distribution([[0.9, 0.1], [0.2, 0.8]]), [2 / 3, 1 / 3], atol=1e-12)

    @given(chains())
    def test_matches_eigenvector(self, P):
        mu = chain.stationary_distribution(P)
        assert abs(mu.sum() - 1) < 1e-9
        assert np.all(mu > 0)
        assert np.allclose(mu @ P, mu, atol=1e-8)
        assert np.allclose(mu, stationary_by_eig(P), atol=1e-8)

    def test_monte_carlo_frequencies(self):
        P = np.array([[0.9, 0.1, 0.0], [0.2, 0.5, 0.3], [0.3, 0.0, 0.7]])
        rng = np.random.default_rng(5)
        cum = np.cumsum(P, axis=1)
        n = 10**6
        u = rng.random(n)
        s, counts = 0, np.zeros(3)
        for x in u:
            counts[s] += 1
            s = int(np.searchsorted(cum[s], x, side="right"))
        assert np.abs(counts / n - chain.stationary_distribution(P)).max() < 5e-3


class TestPowers:
    def test_first_power(self):
        P = flip(0.2)
        assert np.allclose(chain.n_step_matrix(P, 1), P)

    def test_two_cycle_squared(self):
        assert np.allclose(chain.n_step_matrix([[0, 1], [1, 0]], 2), np.eye(2))

    def test_flip_squared(self):
        assert np.allclose(chain.n_step_matrix(flip(0.05), 2), [[0.905, 0.095], [0.095, 0.905]])

    def test_zero_is_identity(self):
        assert np.allclose(chain.n_step_matrix(flip(0.3), 0), np.eye(2))

    @given(chains(), st.integers(1, 30))
    def test_matches_matrix_power(self, P, n):
        assert np.allclose(chain.n_step_matrix(P, n), np.linalg.matrix_power(P, n), atol=1e-12)


class TestDistance:
    def test_one_step_mixing(self):
        assert chain.variation_distance_at([[0.5, 0.5], [0.5, 0.5]], 1) == pytest.approx(0.0, abs=1e-15)

    @pytest.mark.parametrize("t", [1, 2, 7, 30])
    def test_flip_closed_form(self, t):
        assert chain.variation_distance_at(flip(0.05), t) == pytest.approx(0.9**t, rel=1e-9)

    def test_hand_example(self):
        P = np.array([[0.9, 0.1], [0.2, 0.8]])
        mu = np.array([2 / 3, 1 / 3])
        expected = max(abs(0.9 - mu[0]) + abs(0.1 - mu[1]), abs(0.2 - mu[0]) + abs(0.8 - mu[1]))
        assert chain.variation_distance_at(P, 1) == pytest.approx(expected)

    def test_periodic_rejected(self):
        with pytest.raises(ChainError):
            chain.variation_distance_at([[0, 1], [1, 0]], 3)

    @given(chains())
    def test_monotone(self, P):
        if chain.period(P) != 1:
            return
        d = [chain.variation_distance_at(P, t) for t in range(1, 25)]
        assert all(b <= a + 1e-9 for a, b in zip(d, d[1:]))
        assert all(0 <= x <= 2 + 1e-12 for x in d)

    def test_periodic_distance_of_cycle_is_zero(self):
        assert chain.periodic_variation_distance_at(cycle(3), 1) == pytest.approx(0.0)


class TestMixingTime:
    def test_immediate(self):
        assert chain.mixing_time([[0.5, 0.5], [0.5, 0.5]], 0.25) == 1

    def test_flip_quarter(self):
        assert chain.mixing_time(flip(0.05), 0.25) == 14
        assert 0.9**14 <= 0.25 < 0.9**13

    @pytest.mark.parametrize("eps", [1 / 8, 1 / 16, 1 / 64, 1e-3])
    def test_flip_matches_closed_form(self, eps):
        assert chain.mixing_time(flip(0.05), eps) == math.ceil(math.log(eps) / math.log(0.9))

    @given(chains(), st.sampled_from([1 / 8, 1 / 16, 1 / 64]))
    def test_log_bound(self, P, eps):
        if chain.period(P) != 1:
            return
        assert chain.mixing_time(P, eps) <= math.ceil(math.log2(1 / eps)) * chain.mixing_time(P, 0.25)

    def test_cap_exceeded(self):
        with pytest.raises(ChainError, match="cap"):
            chain.mixing_time(flip(1e-4), 1e-3, cap=10)

    def test_periodic_needs_flag(self):
        with pytest.raises(ChainError):
            chain.mixing_time(cycle(3), 0.25)
        assert chain.mixing_time(cycle(3), 0.25, periodic=True) == 1


class TestHitting:
    @pytest.mark.parametrize("m", [2, 3, 5])
    def test_cycle_diameter(self, m):
        assert chain.diameter(cycle(m)) == pytest.approx(m - 1)

    @pytest.mark.parametrize("p", [0.05, 0.2, 0.7])
    def test_flip_diameter(self, p):
        assert chain.diameter(flip(p)) == pytest.approx(1 / p)

    def test_twenty(self):
        assert chain.diameter(flip(0.05)) == pytest.approx(20.0)

    def test_single_state(self):
        assert chain.diameter([[1.0]]) == 0.0

    @given(chains())
    def test_return_time_duality(self, P):
        mu = chain.stationary_distribution(P)
        assert np.allclose(mu * chain.return_times(P), 1.0, atol=1e-6)

    @given(chains())
    def test_hitting_times_solve_equations(self, P):
        h = chain.hitting_times(P, 0)
        assert h[0] == 0
        Q = np.asarray(P)
        for s in range(1, len(h)):
            assert h[s] == pytest.approx(1 + Q[s] @ h, rel=1e-9)
        assert chain.diameter(P) >= 1


class TestPeriod:
    def test_two_cycle(self):
        assert chain.period([[0, 1], [1, 0]]) == 2

    @pytest.mark.parametrize("m", [3, 4, 6])
    def test_cycle(self, m):
        assert chain.period(cycle(m)) == m

    @given(chains())
    def test_self_loop_means_aperiodic(self, P):
        P = P.copy()
        P[0, 0] += 0.1
        P /= P.sum(axis=1, keepdims=True)
        assert chain.period(P) == 1

    def test_period_divides_cycles(self):
        # states 0->1->2->0 and 0->3->0: cycle lengths 3 and 2, gcd 1
        P = np.zeros((4, 4))
        P[0, 1] = P[0, 3] = 0.5
        P[1, 2] = P[2, 0] = P[3, 0] = 1.0
        assert chain.period(P) == 1
        # lengths 4 and 2 give period 2
        P = np.zeros((4, 4))
        P[0, 1] = P[0, 3] = 0.5
        P[1, 2] = P[2, 3] = 1.0
        P[3, 0] = 1.0
        assert chain.period(P) == 2


def test_profile_fields():
    prof = chain.profile(flip(0.05))
    assert prof.mix_quarter == 14
    assert prof.period == 1
    assert prof.diameter == pytest.approx(20)
    assert np.allclose(prof.stationary, [0.5, 0.5])
