import numpy as np
import pytest
from scipy import stats

from conftest import example1, flip
from restless_lab import chain
from restless_lab.env import ArmSpec, BanditInstance, reset


def play(env, actions):
    return [env.step(a) for a in actions]


class TestArmSpec:
    def test_reward_range(self):
        with pytest.raises(ValueError):
            ArmSpec(flip(0.1), [0.0, 1.5])

    def test_reward_count(self):
        with pytest.raises(ValueError):
            ArmSpec(flip(0.1), [0.0])

    def test_noise_tag(self):
        with pytest.raises(ValueError):
            ArmSpec(flip(0.1), [0.0, 1.0], noise="gaussian")

    def test_iid_is_single_state(self):
        arm = ArmSpec.iid(0.3)
        assert arm.n_states == 1 and arm.stationary_mean == pytest.approx(0.3)


class TestReset:
    def test_determinism(self):
        inst = example1()
        acts = np.random.default_rng(0).integers(0, 2, size=500).tolist()
        assert play(reset(inst, 7), acts) == play(reset(inst, 7), acts)

    def test_point_mass_initial(self):
        inst = BanditInstance(example1().arms, initial=([0.0, 1.0], [1.0, 0.0]))
        for seed in range(20):
            assert reset(inst, seed).hidden == [1, 0]

    def test_stationary_initial(self):
        P = np.array([[0.9, 0.1], [0.2, 0.8]])
        inst = BanditInstance((ArmSpec(P, [0.0, 1.0]),))
        freq = np.mean([reset(inst, s).hidden[0] for s in range(10_000)])
        assert abs(freq - 1 / 3) < 3e-2


class TestStep:
    def test_deterministic_reward(self):
        env = reset(BanditInstance((ArmSpec.iid(0.5, noise="deterministic"),)), 0)
        assert all(o.reward == 0.5 for o in play(env, [0] * 100))

    def test_bernoulli_rewards_binary(self):
        env = reset(example1(0.3), 1)
        assert {o.reward for o in play(env, [0, 1] * 500)} <= {0.0, 1.0}

    def test_bernoulli_reward_mean(self):
        env = reset(BanditInstance((ArmSpec.iid(0.3),)), 2)
        assert abs(np.mean([o.reward for o in play(env, [0] * 20_000)]) - 0.3) < 0.015

    def test_index_error(self):
        with pytest.raises(IndexError):
            reset(example1(), 0).step(2)

    def test_flip_frequency(self):
        env = reset(example1(0.05), 3)
        states = [o.state for o in play(env, [0] * 100_000)]
        flips = np.mean(np.diff(states) != 0)
        assert abs(flips - 0.05) < 0.005

    def test_observe_then_transition(self):
        env = reset(example1(0.5), 4)
        before = list(env.hidden)
        obs = env.step(1)
        assert obs.state == before[1] and obs.t == 1 and env.t == 2

    def test_gap_law(self):
        # arm 0 sits idle for n steps, then its observed state follows P^n from the last observation
        P = np.array([[0.8, 0.2], [0.3, 0.7]])
        inst = BanditInstance((ArmSpec(P, [0.0, 1.0]), ArmSpec.iid(0.5)))
        n = 3
        counts = np.zeros((2, 2))
        for seed in range(10_000):
            env = reset(inst, seed)
            s0 = env.step(0).state
            for _ in range(n - 1):
                env.step(1)
            counts[s0, env.step(0).state] += 1
        Pn = chain.n_step_matrix(P, n)
        for s in range(2):
            emp = counts[s] / counts[s].sum()
            assert np.abs(emp - Pn[s]).sum() < 0.05
            _, pval = stats.chisquare(counts[s], counts[s].sum() * Pn[s])
            assert pval > 0.01


class TestRestless:
    def test_trajectories_do_not_depend_on_actions(self):
        inst = example1(0.2)
        a, b = reset(inst, 11), reset(inst, 11)
        ha, hb = [], []
        rng = np.random.default_rng(1)
        for _ in range(300):
            a.step(0)
            b.step(int(rng.integers(0, 2)))
            ha.append(list(a.hidden))
            hb.append(list(b.hidden))
        assert ha == hb


class TestSummary:
    def test_before_sweep(self):
        env = reset(example1(), 0)
        env.step(0)
        with pytest.raises(RuntimeError):
            env.last_observation_summary()

    def test_after_sweep(self):
        env = reset(example1(), 0)
        env.step(0)
        env.step(1)
        assert env.last_observation_summary().gaps == (2, 1)

    def test_repeat_pull(self):
        env = reset(example1(), 0)
        play(env, [0, 1, 0])
        assert env.last_observation_summary().gaps == (1, 2)

    def test_exactly_one_fresh(self):
        env = reset(BanditInstance(example1().arms + (ArmSpec.iid(0.2),)), 0)
        rng = np.random.default_rng(0)
        play(env, [0, 1, 2])
        for _ in range(200):
            env.step(int(rng.integers(0, 3)))
            gaps = env.last_observation_summary().gaps
            assert gaps.count(1) == 1 and len(set(gaps)) == 3
