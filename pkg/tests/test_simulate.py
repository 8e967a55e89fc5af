import json
import math

import numpy as np
import pytest

from rfda.errors import RfdaError
from rfda.manifold import SPD, Sphere
from rfda.mean import FrechetOptions
from rfda.simulate import (
    CSV_COLUMNS,
    UNIFORM_HALF_WIDTH,
    SimConfig,
    Truth,
    aggregate,
    fourier_basis,
    gen_dataset,
    mixing_matrix,
    run_experiment,
    run_replicate,
    table_configs,
    true_eigenfields,
    true_mean_curve,
)
from rfda.tensor_hilbert import TimeGrid

SMALL = dict(M=31, n_train=20, n_test=40)


class TestConfig:
    def test_defaults(self):
        c = SimConfig()
        assert c.n_valid == c.n_train == 50
        assert c.score_dist == "uniform"
        assert SimConfig(manifold=SPD(3)).score_dist == "normal"

    @pytest.mark.parametrize(
        "kw",
        [dict(n_train=1), dict(snr=0.0), dict(noise_dist="cauchy"), dict(noise_dist="student_t", noise_df=2.0),
         dict(replicates=0), dict(K_slope=25), dict(manifold=SPD(3), score_dist="laplace")],
    )
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            SimConfig(**kw)

    def test_eigenvalues_and_variance(self):
        c = SimConfig()
        np.testing.assert_allclose(c.eigenvalues[:3], 2 * np.arange(1, 4) ** -1.2)
        assert c.score_variance == pytest.approx(math.pi**2 / 48)
        assert SimConfig(manifold=SPD(3)).score_variance == 1.0

    def test_student_variance(self):
        assert SimConfig(noise_dist="student_t").noise_variance_factor() == pytest.approx(21.0)

    def test_json_round_trip(self, tmp_path):
        c = SimConfig(manifold=SPD(3), n_train=150, tuning_grid=(1, 3, 5))
        p = tmp_path / "c.json"
        p.write_text(json.dumps(c.to_dict()))
        back = SimConfig.from_json(p)
        assert back == c and back.digest() == c.digest()

    def test_unknown_field(self):
        with pytest.raises(ValueError, match="unknown config"):
            SimConfig.from_dict({"n_train": 10, "bogus": 1})


class TestTruth:
    def test_sphere_mean_at_zero(self):
        mu = true_mean_curve(SimConfig())
        s, c = math.sin(0.5), math.cos(0.5)
        np.testing.assert_allclose(mu.values[0], [s * c, s * s, c], atol=1e-15)

    def test_spd_mean_at_one(self):
        mu = true_mean_curve(SimConfig(manifold=SPD(3)))
        np.testing.assert_allclose(mu.values[-1], [[1, 0.5, 0.1], [0.5, 1, 0.5], [0.1, 0.5, 1]], atol=1e-15)

    @pytest.mark.parametrize("m", [Sphere(2), SPD(3)])
    def test_mean_on_manifold(self, m):
        mu = true_mean_curve(SimConfig(manifold=m))
        if m.kind == "sphere":
            np.testing.assert_allclose(np.linalg.norm(mu.values, axis=1), 1.0, atol=1e-15)
        else:
            assert np.linalg.eigvalsh(mu.values).min() > 0

    def test_fourier_orthonormal(self):
        g = TimeGrid.uniform(101)
        f = fourier_basis(12, g.times)
        gram = np.einsum("am,bm,m->ab", f, f, g.weights)
        np.testing.assert_allclose(gram, np.eye(12), atol=1e-10)

    @pytest.mark.parametrize("m", [Sphere(2), SPD(3)])
    def test_eigenfields_orthonormal(self, m):
        e = true_eigenfields(SimConfig(manifold=m))
        np.testing.assert_allclose(e.gram(), np.eye(20), atol=1e-8)

    def test_scalar_reduction(self):
        # with A = I the coordinate fields of a 2-dim frame are f_{2k-1}, f_{2k} over sqrt2
        c = SimConfig()
        f = fourier_basis(4, c.grid.times)
        from rfda import simulate

        orig = simulate.mixing_matrix
        simulate.mixing_matrix = lambda cfg: np.eye(2)
        try:
            e = true_eigenfields(c)
        finally:
            simulate.mixing_matrix = orig
        np.testing.assert_allclose(e.eigenfuncs[1], f[2:4].T / math.sqrt(2), atol=1e-14)

    def test_mixing_orthogonal_and_seeded(self):
        a, b = mixing_matrix(SimConfig()), mixing_matrix(SimConfig(seed=7))
        np.testing.assert_allclose(a @ a.T, np.eye(2), atol=1e-14)
        assert not np.allclose(a, b)
        ea, eb = true_eigenfields(SimConfig()), true_eigenfields(SimConfig(seed=7))
        np.testing.assert_array_equal(ea.eigenvalues, eb.eigenvalues)

    def test_slope_coordinates(self):
        c = SimConfig(**SMALL)
        t = Truth.build(c)
        expected = np.einsum("k,kmd->md", 1.5 * np.arange(1, 21, dtype=float) ** -2, t.eigen.eigenfuncs)
        np.testing.assert_allclose(t.slope_coords, expected, atol=1e-14)


class TestGenerator:
    def test_deterministic(self):
        c = SimConfig(**SMALL)
        a, b = gen_dataset(c, 3), gen_dataset(c, 3)
        np.testing.assert_array_equal(a.train.sample.values, b.train.sample.values)
        np.testing.assert_array_equal(a.test.z, b.test.z)
        assert not np.array_equal(a.train.sample.values, gen_dataset(c, 4).train.sample.values)

    def test_zero_variance(self):
        c = SimConfig(lambda_scale=0.0, **SMALL)
        d = gen_dataset(c)
        mu = d.truth.mean.values
        np.testing.assert_allclose(d.train.sample.values, np.broadcast_to(mu, d.train.sample.values.shape), atol=1e-15)
        assert np.abs(d.train.signal).max() <= 1e-15
        # zero signal variance makes the noise scale zero as well
        np.testing.assert_allclose(d.train.dataset(c).responses, 0.0, atol=1e-15)

    def test_sphere_score_bound(self):
        c = SimConfig(**SMALL)
        truth = Truth.build(c)
        lam = c.eigenvalues
        phi_norm = np.linalg.norm(truth.eigen.eigenfuncs, axis=2)  # (K, M) pointwise norms
        bound = UNIFORM_HALF_WIDTH * np.einsum("k,km->m", np.sqrt(lam), phi_norm)
        d = gen_dataset(c)
        dist = c.manifold.dist(truth.mean.values[None], d.train.sample.values)
        assert np.all(dist <= bound + 1e-12)
        # the bound itself exceeds pi at some t, so it does not certify injectivity;
        # the logs of every generated curve are still defined (no cut-locus point)
        c.manifold.log(truth.mean.values[None], d.train.sample.values)

    def test_signal_variance_matches_empirical(self):
        c = SimConfig(M=31, n_train=20, n_test=4000)
        d = gen_dataset(c)
        assert np.var(d.test.signal) == pytest.approx(c.signal_variance, rel=0.1)

    def test_noise_scaling(self):
        c = SimConfig(M=31, n_train=20, n_test=20000)
        d = gen_dataset(c)
        sd = math.sqrt(c.signal_variance / c.snr)
        eps = d.test.dataset(c, "normal").responses - d.test.signal
        assert np.std(eps) == pytest.approx(sd, rel=0.03)
        t = d.test.dataset(c, "student_t").responses - d.test.signal
        raw = d.test.z / np.sqrt(d.test.chi2 / 2.1)
        np.testing.assert_allclose(t, sd * raw / math.sqrt(21.0), rtol=1e-12)

    def test_common_draws_across_noise(self):
        c = SimConfig(**SMALL)
        d = gen_dataset(c)
        a = d.train.dataset(c, "normal").responses - d.train.signal
        b = d.train.dataset(c, "student_t").responses - d.train.signal
        np.testing.assert_array_equal(np.sign(a), np.sign(b))


class TestReplicates:
    def test_single_replicate_sd_zero(self):
        c = SimConfig(replicates=1, **SMALL)
        rows = aggregate(c, run_experiment(c, regression=True), table="x")
        assert rows and all(r["sd"] == 0.0 for r in rows)
        assert set(rows[0]) == set(CSV_COLUMNS)

    def test_threads_bit_identical(self):
        c = SimConfig(replicates=3, **SMALL)
        a = aggregate(c, run_experiment(c, regression=True, threads=1))
        b = aggregate(c, run_experiment(c, regression=True, threads=3))
        assert a == b

    def test_replicate_result_fields(self):
        c = SimConfig(**SMALL)
        r = run_replicate(c, 0, noises=("normal", "student_t"))
        assert len(r.irmise_sq) == c.n_eval_components and len(r.armise_sq) == c.n_eval_components
        assert all(0 <= v for v in r.irmise_sq + r.armise_sq + [r.mean_ise])
        assert set(r.pred_rmse) == {"normal", "student_t"}
        assert 1 <= r.chosen_k["normal"] <= max(c.tuning_grid)

    def test_spd_has_no_ambient(self):
        c = SimConfig(manifold=SPD(3), **SMALL)
        r = run_replicate(c, 0, regression=False)
        assert r.armise_sq is None and r.pred_rmse == {}

    def test_failure_names_replicate(self):
        # a two-iteration budget cannot reach the gradient tolerance
        c = SimConfig(replicates=2, **SMALL)
        with pytest.raises(RfdaError, match="replicate 0 failed.*did not reach"):
            run_experiment(c, opts=FrechetOptions(max_iters=2))

    def test_root_aggregation(self):
        c = SimConfig(**SMALL)
        results = [run_replicate(c, r, regression=False) for r in range(3)]
        rows = {(x["metric"], x["k"]): x for x in aggregate(c, results)}
        sq = np.array([r.irmise_sq[0] for r in results])
        assert rows[("irmise", 1)]["mean"] == pytest.approx(math.sqrt(sq.mean()), rel=1e-14)
        assert rows[("irmise", 1)]["sd"] == pytest.approx(np.std(np.sqrt(sq), ddof=1), rel=1e-12)


class TestTableConfigs:
    def test_table1(self):
        out = table_configs("table1")
        assert [cfg.n_train for cfg, *_ in out] == [50, 150, 500]
        assert all(cfg.manifold.kind == "sphere" and cfg.replicates == 25 for cfg, *_ in out)

    def test_table2_desk_skips_large_sphere(self):
        out = table_configs("table2")
        cells = [(cfg.manifold.kind, cfg.n_train) for cfg, *_ in out]
        assert ("sphere", 500) not in cells and ("spd", 500) in cells
        assert ("sphere", 500) in [(c.manifold.kind, c.n_train) for c, *_ in table_configs("table2", include_sphere_500=True)]

    def test_table3_noises(self):
        for cfg, regression, noises, *_ in table_configs("table3"):
            assert regression and tuple(noises) == ("normal", "student_t") and cfg.n_test == 1000

    def test_full_profile(self):
        cfg = table_configs("table3", profile="full")[0][0]
        assert cfg.replicates == 100 and cfg.n_test == 5000

    def test_unknown(self):
        with pytest.raises(ValueError):
            table_configs("table9")
