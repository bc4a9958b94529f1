import copy

import numpy as np
import pytest

from dpstop import experiments as ex
from dpstop import make_model, trace_posterior_cov


def small_cfg(**kw):
    base = dict(n_grid=[256, 1024], replicates=4, seed=3)
    base.update(kw)
    return ex.StudyConfig(**base)


def csv_bytes(tmp_path, name, report):
    path = tmp_path / name
    ex.write_csv(path, report.columns, report.rows)
    return path.read_bytes()


class TestConfigs:
    def test_n_grid_must_increase(self):
        with pytest.raises(ValueError, match="strictly increasing"):
            ex.StudyConfig(n_grid=[256, 256])

    def test_replicates_positive(self):
        with pytest.raises(ValueError):
            ex.StudyConfig(replicates=0)

    def test_dt_list_alignment(self):
        with pytest.raises(ValueError, match="align"):
            ex.StudyConfig(noise_levels=[0.1, 0.01], dt_list=[1.0])

    def test_demo_dt_growth(self):
        cfg = ex.StudyConfig(noise_levels=[0.1, 0.01], base_dt=2.0)
        assert cfg.demo_dt(0) == 2.0
        assert cfg.demo_dt(1) == pytest.approx(2.0 * 10 ** (8.0 / 3.0))


class TestRateStudy:
    def test_theory_slope_value(self):
        rep = ex.rate_study(small_cfg(replicates=1))
        assert rep.theory_slope == pytest.approx(-4.0 / 7.0)

    def test_degenerate_fit_absent(self):
        rep = ex.rate_study(ex.StudyConfig(n_grid=[256], replicates=1, seed=0))
        assert rep.fitted_slope is None
        assert all(row["fitted_slope"] is None for row in rep.rows)

    def test_rows_belong_to_grid(self):
        cfg = small_cfg()
        rep = ex.rate_study(cfg)
        assert {row["n"] for row in rep.rows} == set(cfg.n_grid)
        assert all(row["mse_theta"] >= 0 for row in rep.rows)
        assert len(rep.rows) == len(cfg.n_grid) * cfg.replicates

    def test_replicate_rows_exchangeable(self):
        rep = ex.rate_study(small_cfg())
        for n in (256, 1024):
            block = [r["mse_theta"] for r in rep.rows if r["n"] == n]
            assert np.mean(block) == pytest.approx(np.mean(sorted(block)))

    def test_threads_do_not_change_rows(self):
        a = ex.rate_study(small_cfg(threads=1))
        b = ex.rate_study(small_cfg(threads=4))
        assert a.rows == b.rows

    def test_monte_carlo_se_scaling(self):
        # doubling replicates shrinks the fitted slope's spread by ~sqrt(2)
        slopes = {8: [], 16: []}
        for reps, batches in ((8, 40), (16, 40)):
            for b in range(batches):
                cfg = ex.StudyConfig(
                    n_grid=[256, 1024], replicates=reps, seed=1000 + 97 * b + reps
                )
                slopes[reps].append(ex.rate_study(cfg).fitted_slope)
        ratio = np.std(slopes[8]) / np.std(slopes[16])
        assert 1.05 <= ratio <= 1.9


class TestStoppingStudy:
    def test_fraction_columns(self):
        rep = ex.stopping_time_study(small_cfg())
        for row in rep.rows:
            assert row["fraction"] == rep.summary["fractions"][row["n"]]
            assert row["exceeds"] in (True, False)

    def test_single_replicate_fraction_degenerate(self):
        rep = ex.stopping_time_study(small_cfg(replicates=1))
        assert set(rep.summary["fractions"].values()) <= {0.0, 1.0}

    def test_larger_kappa_stops_earlier(self):
        lo = ex.stopping_time_study(small_cfg(C=0.5))
        hi = ex.stopping_time_study(small_cfg(C=1.0))
        for a, b in zip(lo.rows, hi.rows):
            assert b["tau_dp"] <= a["tau_dp"] + 1e-12


class TestContractionStudy:
    def test_ratio_finite_and_positive(self):
        rep = ex.contraction_study(small_cfg())
        assert all(np.isfinite(row["ratio"]) and row["ratio"] > 0 for row in rep.rows)

    def test_trace_below_trace_at_tau_max(self):
        cfg = small_cfg()
        rep = ex.contraction_study(cfg)
        from dpstop import truncation_dim

        for row in rep.rows:
            D = truncation_dim(row["n"], cfg.p)
            m = make_model(cfg.p, cfg.alpha, D)
            assert row["trace_cov"] < trace_posterior_cov(m, cfg.tau_max, row["n"])

    def test_mean_trace_decreases(self):
        rep = ex.contraction_study(small_cfg(replicates=20))
        means = {}
        for row in rep.rows:
            means.setdefault(row["n"], []).append(row["trace_cov"])
        vals = [np.mean(means[n]) for n in sorted(means)]
        assert vals[-1] < vals[0]
        assert rep.fitted_slope < 0


class TestCoverageStudy:
    def test_coverage_is_proportion(self):
        rep = ex.coverage_study(small_cfg(C=0.5))
        for cov in rep.summary["coverage"].values():
            assert 0.0 <= cov <= 1.0

    def test_radius_shrinks_with_n(self):
        cfg = ex.StudyConfig(n_grid=[2**10, 2**14], replicates=30, C=0.5, seed=5)
        rep = ex.coverage_study(cfg)
        radii = {}
        for row in rep.rows:
            radii.setdefault(row["n"], []).append(row["radius"])
        assert np.mean(radii[2**14]) < np.mean(radii[2**10])

    def test_beta_prime_must_exceed_beta(self):
        with pytest.raises(ValueError, match="beta_prime"):
            ex.coverage_study(small_cfg(beta_prime=0.5))

    def test_covered_consistent_with_row(self):
        rep = ex.coverage_study(small_cfg(C=0.5))
        for row in rep.rows:
            assert row["covered"] == (row["err_norm"] <= row["radius"])


@pytest.fixture(scope="module")
def demo():
    cfg = ex.StudyConfig(
        seed=11, demo_dim=60, ensemble_size=40, k_max=1500,
        noise_levels=[1e-1, 1e-2], base_dt=20.0,
    )
    return cfg, ex.linear_demo(cfg)


class TestLinearDemo:
    def test_both_kinds_present(self, demo):
        _, rep = demo
        assert {row["signal"] for row in rep.rows} == {"rough", "smooth"}

    def test_mean_mostly_inside_band(self, demo):
        _, rep = demo
        rows = [
            r for r in rep.rows if r["signal"] == "smooth" and r["noise"] == 1e-2
        ]
        inside = [r["q025"] <= r["mean"] <= r["q975"] for r in rows]
        assert np.mean(inside) >= 0.9

    def test_bands_narrow_with_noise(self, demo):
        _, rep = demo
        widths = {}
        for r in rep.rows:
            if r["signal"] == "rough":
                widths.setdefault(r["noise"], []).append(r["q975"] - r["q025"])
        assert np.mean(widths[1e-2]) < np.mean(widths[1e-1])

    def test_rows_per_cell(self, demo):
        cfg, rep = demo
        assert len(rep.rows) == 2 * len(cfg.noise_levels) * cfg.demo_dim


class TestNonlinearDemo:
    def small(self, seed=4):
        return ex.SchrodingerConfig(
            Dg=16, noise_levels=[0.2, 0.05], dt_list=[0.5, 2.0],
            J=6, k_max=15, replicates=2, seed=seed,
        )

    def test_block_structure(self):
        rep = ex.nonlinear_demo(self.small())
        assert {row["noise"] for row in rep.rows} == {0.2, 0.05}
        assert len(rep.rows) == 2 * 2 * 17

    def test_byte_determinism(self, tmp_path):
        a = csv_bytes(tmp_path, "a.csv", ex.nonlinear_demo(self.small()))
        b = csv_bytes(tmp_path, "b.csv", ex.nonlinear_demo(self.small()))
        assert a == b

    def test_rmse_constant_within_cell(self):
        rep = ex.nonlinear_demo(self.small())
        per_cell = {}
        for row in rep.rows:
            per_cell.setdefault((row["noise"], row["replicate"]), set()).add(row["rmse"])
        assert all(len(v) == 1 for v in per_cell.values())


class TestEnkfRun:
    def test_trace_columns_and_threshold(self):
        cfg = ex.StudyConfig(seed=2, demo_dim=40, ensemble_size=30, k_max=800,
                             noise_levels=[1e-1], base_dt=20.0)
        rep = ex.enkf_run(cfg)
        assert rep.columns == ["k", "t", "residual", "kappa"]
        ks = [row["k"] for row in rep.rows]
        assert ks == list(range(len(ks)))
        if rep.summary["converged"]:
            assert rep.rows[-1]["residual"] <= rep.rows[-1]["kappa"]


class TestCsvDeterminism:
    def test_all_studies_byte_identical(self, tmp_path):
        cfg = small_cfg()
        cov_cfg = small_cfg(C=0.5)
        demo_cfg = ex.StudyConfig(
            seed=11, demo_dim=30, ensemble_size=20, k_max=300, noise_levels=[1e-1],
        )
        nl = ex.SchrodingerConfig(
            Dg=12, noise_levels=[0.2], dt_list=[0.5], J=5, k_max=5, replicates=1, seed=6
        )
        pairs = [
            (ex.rate_study, cfg),
            (ex.stopping_time_study, cfg),
            (ex.contraction_study, cfg),
            (ex.coverage_study, cov_cfg),
            (ex.linear_demo, demo_cfg),
            (ex.enkf_run, demo_cfg),
            (ex.nonlinear_demo, nl),
        ]
        for idx, (study, c) in enumerate(pairs):
            a = csv_bytes(tmp_path, f"{idx}_a.csv", study(copy.deepcopy(c)))
            b = csv_bytes(tmp_path, f"{idx}_b.csv", study(copy.deepcopy(c)))
            assert a == b, study.__name__


class TestWriteCsv:
    def test_formatting(self, tmp_path):
        path = tmp_path / "x.csv"
        ex.write_csv(path, ["a", "b", "c", "d"], [{"a": 1, "b": 0.1, "c": True, "d": None}])
        text = path.read_text()
        lines = text.splitlines()
        assert lines[0] == "a,b,c,d"
        assert lines[1] == "1,0.1,1,"
