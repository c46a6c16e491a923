import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_belief, random_model
from nvipomdp.domains.tiger import HEAR_LEFT, LISTEN, OPEN_LEFT
from nvipomdp.exceptions import InvalidModel, ZeroProbabilityObservation
from nvipomdp.pomdp import (
    ExplicitDomain,
    ExplicitPomdp,
    belief_reward,
    belief_update,
    load_explicit_pomdp,
    obs_probability,
    save_explicit_pomdp,
)


def _deterministic_model():
    # one action; state 0 emits o0, state 1 emits o1; states stay put
    return ExplicitPomdp(
        states=["x", "y"],
        actions=["stay"],
        observations=["o0", "o1"],
        transition=np.eye(2)[:, None, :],
        observation_fn=np.eye(2)[None, :, :],
        reward=[[1.0], [2.0]],
        discount=0.9,
        initial_belief=[0.5, 0.5],
    )


class TestModelValidation:
    def test_tiger_tables_are_stochastic(self, tiger):
        np.testing.assert_allclose(tiger.transition.sum(axis=2), 1.0, atol=1e-12)
        np.testing.assert_allclose(tiger.observation_fn.sum(axis=2), 1.0, atol=1e-12)

    def test_rejects_bad_rows(self):
        with pytest.raises(InvalidModel):
            ExplicitPomdp(["a"], ["u"], ["o"], [[[0.5]]], [[[1.0]]], [[0.0]], 0.9, [1.0])

    def test_rejects_discount_one(self):
        with pytest.raises(InvalidModel):
            ExplicitPomdp(["a"], ["u"], ["o"], [[[1.0]]], [[[1.0]]], [[0.0]], 1.0, [1.0])

    def test_rejects_negative_probabilities(self):
        T = np.array([[[1.5, -0.5]], [[0.0, 1.0]]])
        with pytest.raises(InvalidModel):
            ExplicitPomdp(["a", "b"], ["u"], ["o"], T, [[[1.0], [1.0]]], [[0.0], [0.0]], 0.9, [0.5, 0.5])

    def test_tables_are_read_only(self, tiger):
        with pytest.raises(ValueError):
            tiger.transition[0, 0, 0] = 0.3


class TestBeliefUpdate:
    def test_tiger_listen_hear_left(self, tiger):
        b = belief_update(tiger, [0.5, 0.5], LISTEN, HEAR_LEFT)
        np.testing.assert_allclose(b, [0.85, 0.15], atol=1e-12)

    def test_uninformative_observation_keeps_belief(self):
        m = ExplicitPomdp(
            ["a", "b", "c"], ["u"], ["o0", "o1"],
            np.eye(3)[:, None, :], np.full((1, 3, 2), 0.5), np.zeros((3, 1)), 0.9, [1 / 3] * 3,
        )
        b = np.array([0.2, 0.3, 0.5])
        np.testing.assert_allclose(belief_update(m, b, 0, 1), b, atol=1e-12)

    def test_deterministic_observation_gives_point_mass(self):
        m = _deterministic_model()
        np.testing.assert_array_equal(belief_update(m, [0.3, 0.7], 0, 1), [0.0, 1.0])

    def test_zero_probability_observation_raises(self):
        m = _deterministic_model()
        with pytest.raises(ZeroProbabilityObservation):
            belief_update(m, [1.0, 0.0], 0, 1)


class TestObsProbability:
    def test_tiger_uniform_listen(self, tiger):
        assert obs_probability(tiger, [0.5, 0.5], LISTEN, HEAR_LEFT) == pytest.approx(0.5, abs=1e-12)

    def test_tiger_certain_left(self, tiger):
        assert obs_probability(tiger, [1.0, 0.0], LISTEN, HEAR_LEFT) == pytest.approx(0.85, abs=1e-12)

    def test_deterministic_emission(self):
        m = ExplicitPomdp(["a"], ["u"], ["o0", "o1"], [[[1.0]]], [[[1.0, 0.0]]], [[0.0]], 0.9, [1.0])
        assert obs_probability(m, [1.0], 0, 0) == 1.0


class TestBeliefReward:
    def test_tiger_open_left_uniform(self, tiger):
        assert belief_reward(tiger, [0.5, 0.5], OPEN_LEFT) == pytest.approx(-45.0)

    def test_constant_reward(self):
        m = ExplicitPomdp(["a", "b"], ["u"], ["o"], np.eye(2)[:, None, :], np.ones((1, 2, 1)), [[3.0], [3.0]], 0.9, [0.5, 0.5])
        assert belief_reward(m, [0.1, 0.9], 0) == pytest.approx(3.0)

    def test_point_mass(self, tiger):
        assert belief_reward(tiger, [0.0, 1.0], OPEN_LEFT) == tiger.reward[1, OPEN_LEFT]


class TestBeliefProperties:
    @settings(max_examples=60, deadline=None)
    @given(seed=st.integers(0, 10_000), n_states=st.integers(1, 5), n_obs=st.integers(1, 4))
    def test_posteriors_are_beliefs(self, seed, n_states, n_obs):
        rng = np.random.default_rng(seed)
        m = random_model(rng, n_states, 2, n_obs)
        b = random_belief(rng, n_states)
        total = 0.0
        for a in range(m.n_actions):
            for o in range(m.n_observations):
                p = obs_probability(m, b, a, o)
                total += p
                post = belief_update(m, b, a, o)
                assert (post >= 0).all()
                assert post.sum() == pytest.approx(1.0, abs=1e-12)
        assert total == pytest.approx(m.n_actions, abs=1e-10)

    @settings(max_examples=60, deadline=None)
    @given(seed=st.integers(0, 10_000), n_states=st.integers(1, 6), n_obs=st.integers(1, 4))
    def test_chapman_kolmogorov(self, seed, n_states, n_obs):
        rng = np.random.default_rng(seed)
        m = random_model(rng, n_states, 3, n_obs)
        b = random_belief(rng, n_states)
        for a in range(m.n_actions):
            mix = sum(obs_probability(m, b, a, o) * belief_update(m, b, a, o) for o in range(n_obs))
            np.testing.assert_allclose(mix, m.predict_states(b, a), atol=1e-10)


class TestModelFiles:
    def test_round_trip(self, tiger, tmp_path):
        path = tmp_path / "tiger.json"
        save_explicit_pomdp(tiger, path)
        m = load_explicit_pomdp(path)
        assert m.states == tiger.states and m.actions == tiger.actions
        np.testing.assert_array_equal(m.transition, tiger.transition)
        np.testing.assert_array_equal(m.observation_fn, tiger.observation_fn)
        np.testing.assert_array_equal(m.reward, tiger.reward)
        assert m.discount == tiger.discount

    def test_named_initial_belief(self, tmp_path):
        path = tmp_path / "m.json"
        path.write_text(
            '{"states":["a","b"],"actions":["u"],"observations":["o"],"discount":0.5,'
            '"initial_belief":{"b":1.0},"transition":[[[1,0]],[[0,1]]],'
            '"observation":[[[1],[1]]],"reward":[[0],[1]]}'
        )
        np.testing.assert_array_equal(load_explicit_pomdp(path).initial_belief, [0.0, 1.0])


class TestExplicitDomain:
    def test_replay_determinism(self, tiger_gen):
        def run(seed):
            rng = np.random.default_rng(seed)
            s = tiger_gen.sample_initial(50, rng)
            out = []
            for a in (0, 0, 1, 0, 2):
                s, o, r = tiger_gen.step(s, a, rng)
                out.append((s.copy(), o.copy(), r.copy()))
            return out

        for (s1, o1, r1), (s2, o2, r2) in zip(run(4), run(4)):
            np.testing.assert_array_equal(s1, s2)
            np.testing.assert_array_equal(o1, o2)
            np.testing.assert_array_equal(r1, r2)

    def test_sampling_matches_tables(self, tiger):
        dom = ExplicitDomain(tiger)
        rng = np.random.default_rng(0)
        s = np.zeros((200_000, 1))
        _, o, r = dom.step(s, LISTEN, rng)
        assert (o == HEAR_LEFT).mean() == pytest.approx(0.85, abs=0.005)
        np.testing.assert_array_equal(r, -1.0)

    def test_one_hot_features(self, tiger_gen):
        np.testing.assert_array_equal(tiger_gen.vectorize(np.array([[1.0], [0.0]])), [[0, 1], [1, 0]])
        assert tiger_gen.feature_dim == 2

    def test_feature_table_shape_checked(self, tiger):
        with pytest.raises(InvalidModel):
            ExplicitDomain(tiger, features=np.ones((3, 2)))
