import warnings

import numpy as np
import pytest

from nvipomdp.domains import (
    KMeansDiscretizer,
    kmeans_discretize,
    lightdark,
    make_domain,
    parse_domain_spec,
    rocksample,
)
from nvipomdp.domains.lightdark import LEFT, RIGHT, STOP, noise_std
from nvipomdp.domains.rocksample import (
    BAD,
    EAST,
    GOOD,
    SAMPLE,
    load_rocksample_instance,
    save_rocksample_instance,
    sensor_accuracy,
)
from nvipomdp.exact import expectimax_oracle, pbvi_solve, reachable_beliefs, value
from nvipomdp.exceptions import DegenerateInputWarning, InvalidConfiguration
from nvipomdp.pomdp import obs_probability


@pytest.fixture(scope="module")
def ld():
    return lightdark(seed=0)


class TestTiger:
    def test_rows_sum_to_one(self, tiger):
        np.testing.assert_allclose(tiger.transition.sum(axis=2), 1.0)

    def test_uniform_listen_symmetry(self, tiger):
        assert obs_probability(tiger, [0.5, 0.5], 0, 0) == pytest.approx(0.5)

    def test_optimal_value_against_oracle(self, tiger):
        res = pbvi_solve(tiger, reachable_beliefs(tiger, 5), epsilon=1e-6)
        v = value(res.alpha_set, [0.5, 0.5])[0]
        oracle = expectimax_oracle(tiger, [0.5, 0.5], 30)
        tail = tiger.discount**30 * 100 / (1 - tiger.discount)
        assert oracle <= v <= oracle + tail
        assert v == pytest.approx(19.3714, abs=1e-3)


class TestRockSample:
    def test_action_count_rs78(self):
        assert rocksample(7, 8, seed=0).n_actions == 13

    def test_observation_count(self):
        assert rocksample(5, 3, seed=0).n_observations == 3

    def test_sensor_exact_at_zero_distance(self):
        dom = rocksample(4, 1, rock_positions=[(1, 1)])
        s = np.array([[1, 1, 0, 1.0], [1, 1, 0, 0.0]])
        _, o, _ = dom.step(np.repeat(s, 500, axis=0), 5, np.random.default_rng(0))
        assert (o[:500] == GOOD).all() and (o[500:] == BAD).all()

    def test_accuracy_monotone(self):
        d = np.linspace(0, 50, 200)
        acc = sensor_accuracy(d)
        assert (np.diff(acc) <= 0).all()
        assert (acc > 0.5).all() and (acc <= 1.0).all()

    def test_sample_good_rock(self):
        dom = rocksample(4, 1, rock_positions=[(2, 2)])
        s2, _, r = dom.step(np.array([[2, 2, 0, 1.0]]), SAMPLE, np.random.default_rng(0))
        assert r[0] == 10.0 and s2[0, 3] == 0.0
        _, _, r2 = dom.step(s2, SAMPLE, np.random.default_rng(0))
        assert r2[0] == -10.0

    def test_exit_east(self):
        dom = rocksample(4, 1, rock_positions=[(2, 2)])
        s2, _, r = dom.step(np.array([[4, 3, 0, 1.0]]), EAST, np.random.default_rng(0))
        assert r[0] == 10.0 and dom.is_terminal(s2)[0]

    def test_terminal_absorbing(self):
        dom = rocksample(4, 2, seed=1)
        s = np.array([[4, 3, 1, 1.0, 0.0]])
        for a in range(dom.n_actions):
            s2, _, r = dom.step(s, a, np.random.default_rng(a))
            assert r[0] == 0.0 and dom.is_terminal(s2)[0]

    def test_start_position(self):
        s = rocksample(7, 8, seed=2).sample_initial(10, np.random.default_rng(0))
        np.testing.assert_array_equal(s[:, :2], 1.0)

    def test_invalid_rocks(self):
        with pytest.raises(InvalidConfiguration):
            rocksample(3, 1, rock_positions=[(4, 1)])
        with pytest.raises(InvalidConfiguration):
            rocksample(3, 2, rock_positions=[(1, 1), (1, 1)])

    def test_instance_file_round_trip(self, tmp_path):
        dom = rocksample(5, 3, seed=4)
        path = tmp_path / "rs.json"
        save_rocksample_instance(dom, path)
        back = load_rocksample_instance(path)
        np.testing.assert_array_equal(back.rocks, dom.rocks)
        assert back.describe() == dom.describe()

    def test_mdp_bound_dominates_returns(self):
        dom = rocksample(4, 2, seed=3)
        rng = np.random.default_rng(0)
        s = dom.sample_initial(200, rng)
        ub = dom.mdp_q(s).max(axis=1)
        total = np.zeros(len(s))
        disc = 1.0
        for _ in range(60):
            a = int(rng.integers(dom.n_actions))
            s, _, r = dom.step(s, a, rng)
            total += disc * r
            disc *= dom.discount
        assert (total <= ub + 1e-9).all()


    def test_sample_states_cover_grid(self):
        d = rocksample(7, 8, seed=0)
        s = d.sample_states(5000, np.random.default_rng(0))
        assert not d.is_terminal(s).any()
        assert set(s[:, 0].astype(int)) == set(range(1, 8))
        assert set(s[:, 1].astype(int)) == set(range(1, 8))
        assert set(np.unique(s[:, 3:])) == {0.0, 1.0}

    def test_features_one_hot_position(self):
        d = rocksample(7, 8, seed=0)
        s = d.sample_states(20, np.random.default_rng(1))
        f = d.vectorize(s)
        assert f.shape == (20, d.feature_dim) == (20, 2 * 7 + 1 + 8)
        np.testing.assert_array_equal(f[:, :7].argmax(axis=1) + 1, s[:, 0])
        np.testing.assert_array_equal(f[:, 7:14].argmax(axis=1) + 1, s[:, 1])
        np.testing.assert_array_equal(f[:, :14].sum(axis=1), 2.0)
        np.testing.assert_array_equal(f[:, 14:], s[:, 2:])


class TestLightDark:
    def test_action_count(self, ld):
        assert ld.n_actions == 3
        assert ld.n_observations == 20

    def test_noise_at_light(self):
        assert noise_std(10.0) == pytest.approx(0.01)

    def test_noise_monotone_in_distance(self):
        d = np.linspace(0, 30, 100)
        assert (np.diff(noise_std(10 + d)) > 0).all()
        assert (np.diff(noise_std(10 - d)) > 0).all()

    def test_stop_at_origin(self, ld):
        s2, _, r = ld.step(np.array([[0.0, 0.0]]), STOP, np.random.default_rng(0))
        assert r[0] == 100.0 and ld.is_terminal(s2)[0]

    def test_stop_away_from_goal(self, ld):
        _, _, r = ld.step(np.array([[5.0, 0.0]]), STOP, np.random.default_rng(0))
        assert r[0] == -100.0

    def test_moves(self, ld):
        s = np.array([[2.0, 0.0]])
        assert ld.step(s, LEFT, np.random.default_rng(0))[0][0, 0] == 1.0
        assert ld.step(s, RIGHT, np.random.default_rng(0))[0][0, 0] == 3.0

    def test_terminal_absorbing(self, ld):
        s = np.array([[0.3, 1.0]])
        for a in range(3):
            s2, _, r = ld.step(s, a, np.random.default_rng(0))
            assert r[0] == 0.0 and ld.is_terminal(s2)[0]

    def test_replay_determinism(self):
        a, b = lightdark(seed=3), lightdark(seed=3)
        np.testing.assert_array_equal(a.quantizer.cluster_centers_, b.quantizer.cluster_centers_)
        s = a.sample_initial(100, np.random.default_rng(1))
        np.testing.assert_array_equal(a.step(s, RIGHT, np.random.default_rng(2))[1], b.step(s, RIGHT, np.random.default_rng(2))[1])

    def test_mdp_values(self, ld):
        assert ld.mdp_values(0.5) == 100.0
        assert ld.mdp_values(3.2) == pytest.approx(100 * 0.95**3)


class TestKMeans:
    def test_single_cluster_is_mean(self):
        X = np.random.default_rng(0).normal(size=(500, 1))
        q = kmeans_discretize(X, 1)
        assert q.cluster_centers_[0, 0] == pytest.approx(X.mean(), abs=1e-12)

    def test_two_blobs(self):
        rng = np.random.default_rng(0)
        X = np.concatenate([rng.normal(-5, 0.3, 500), rng.normal(4, 0.3, 500)])[:, None]
        c = kmeans_discretize(X, 2, seed=1).cluster_centers_[:, 0]
        np.testing.assert_allclose(c, [-5, 4], atol=0.1)

    def test_few_distinct_points(self):
        X = np.array([[0.0], [1.0], [1.0], [2.0]])
        with warnings.catch_warnings(record=True) as w:
            warnings.simplefilter("always")
            q = kmeans_discretize(X, 5)
        assert any(issubclass(x.category, DegenerateInputWarning) for x in w)
        assert q.quantization_error(X) == 0.0
        np.testing.assert_array_equal(q.cluster_centers_[:, 0], [0, 1, 2])

    def test_transform_is_nearest_centroid(self):
        rng = np.random.default_rng(0)
        q = KMeansDiscretizer(n_clusters=6, random_state=0).fit(rng.normal(size=300))
        z = rng.normal(size=1000) * 2
        brute = np.abs(z[:, None] - q.cluster_centers_[:, 0][None]).argmin(axis=1)
        np.testing.assert_array_equal(q.transform(z), brute)

    def test_multidimensional(self):
        rng = np.random.default_rng(0)
        X = rng.normal(size=(300, 2))
        q = KMeansDiscretizer(n_clusters=4, random_state=0).fit(X)
        idx = q.transform(X)
        d = ((X[:, None] - q.cluster_centers_[None]) ** 2).sum(-1)
        np.testing.assert_array_equal(idx, d.argmin(axis=1))


class TestDomainSpecs:
    def test_parse(self):
        assert parse_domain_spec("rocksample:n=7,k=8,seed=3") == ("rocksample", {"n": "7", "k": "8", "seed": "3"})
        assert parse_domain_spec("tiger") == ("tiger", {})

    def test_make(self):
        assert make_domain("tiger").n_actions == 3
        assert make_domain("rocksample:n=4,k=2,seed=1").n_actions == 7

    def test_errors(self):
        for spec in ("nope", "rocksample:n=4", "rocksample:n=4,k=x", "tiger:foo=1", "tiger:bad"):
            with pytest.raises(InvalidConfiguration):
                make_domain(spec)

    def test_explicit_file(self, tiger, tmp_path):
        from nvipomdp.pomdp import save_explicit_pomdp

        path = tmp_path / "t.json"
        save_explicit_pomdp(tiger, path)
        dom = make_domain(f"explicit:file={path}")
        assert dom.n_observations == 2
