import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dpstop import (
    generate_observation,
    make_model,
    sobolev_norm_sq,
    test_signal,
    truncation_dim,
)


class TestMakeModel:
    def test_sigma_power_law(self):
        m = make_model(p=0.5, alpha=1.0, D=4)
        assert np.allclose(m.sigma, [1.0, 2**-0.5, 3**-0.5, 0.5], rtol=0, atol=1e-15)

    def test_lambda_power_law(self):
        m = make_model(p=0.5, alpha=1.0, D=3)
        assert np.allclose(m.lam, [1.0, 2**-3.0, 3**-3.0], rtol=0, atol=1e-15)

    def test_identity_case(self):
        m = make_model(p=0.5, alpha=1.0, D=1)
        assert m.sigma[0] == 1.0 and m.lam[0] == 1.0

    def test_monotone_spectra(self):
        m = make_model(p=0.7, alpha=1.3, D=50)
        assert np.all(np.diff(m.sigma) < 0) and np.all(m.sigma > 0)
        assert np.all(np.diff(m.lam) < 0) and np.all(m.lam > 0)

    @pytest.mark.parametrize("kwargs", [
        dict(p=0.0, alpha=1.0, D=3),
        dict(p=-1.0, alpha=1.0, D=3),
        dict(p=0.5, alpha=0.0, D=3),
        dict(p=0.5, alpha=1.0, D=0),
    ])
    def test_rejects_bad_args(self, kwargs):
        with pytest.raises(ValueError):
            make_model(**kwargs)


class TestTruncationDim:
    def test_perfect_square(self):
        assert truncation_dim(1024, 0.5) == 32

    def test_identity(self):
        assert truncation_dim(1, 1.0) == 1

    def test_ceil(self):
        assert truncation_dim(100, 1.0) == 5

    def test_cap_at_n(self):
        assert truncation_dim(2, 0.001) == 2

    @given(
        n1=st.integers(1, 10**6),
        n2=st.integers(1, 10**6),
        p=st.floats(0.1, 3.0),
    )
    @settings(max_examples=80)
    def test_monotone_in_n(self, n1, n2, p):
        lo, hi = sorted((n1, n2))
        assert truncation_dim(lo, p) <= truncation_dim(hi, p)

    @given(
        n=st.integers(1, 10**6),
        p1=st.floats(0.1, 3.0),
        p2=st.floats(0.1, 3.0),
    )
    @settings(max_examples=80)
    def test_non_increasing_in_p(self, n, p1, p2):
        lo, hi = sorted((p1, p2))
        assert truncation_dim(n, lo) >= truncation_dim(n, hi)


class TestSobolevNorm:
    def test_first_coordinate(self):
        assert sobolev_norm_sq([1.0, 0.0, 0.0], 2.0) == 1.0

    def test_second_coordinate(self):
        assert sobolev_norm_sq([0.0, 1.0], 1.0) == 4.0

    def test_brute_force_oracle(self):
        # independent plain-Python summation against the vectorised path
        D = 100
        coeffs = [5.0 * np.exp(-(k + 1)) for k in range(D)]
        expected = sum((k + 1) ** 2 * c**2 for k, c in enumerate(coeffs))
        got = sobolev_norm_sq(np.array(coeffs), 1.0)
        assert abs(got - expected) <= 1e-12 * expected

    @given(st.lists(st.floats(-10, 10), min_size=1, max_size=20))
    @settings(max_examples=60)
    def test_beta_zero_is_euclidean(self, values):
        arr = np.array(values)
        assert np.isclose(sobolev_norm_sq(arr, 0.0), float(arr @ arr), rtol=1e-12, atol=1e-12)

    def test_negative_beta_rejected(self):
        with pytest.raises(ValueError):
            sobolev_norm_sq([1.0], -0.5)


class TestTestSignal:
    def test_rough(self):
        s = test_signal("rough", 2)
        assert np.allclose(s.coeffs, [5 * np.sin(0.5), 5 * np.sin(1.0) / 2], atol=1e-15)

    def test_smooth(self):
        s = test_signal("smooth", 1)
        assert np.allclose(s.coeffs, [5 * np.exp(-1.0)], atol=1e-15)

    def test_power(self):
        s = test_signal("power", 3, beta=1.0, scale=1.0)
        assert np.allclose(s.coeffs, [1.0, 2**-1.51, 3**-1.51], atol=1e-15)

    def test_unknown_kind(self):
        with pytest.raises(ValueError, match="unknown signal kind"):
            test_signal("spiky", 4)

    def test_radius_matches_declared_ball(self):
        s = test_signal("power", 30, beta=1.5, scale=2.0)
        assert np.isclose(s.radius**2, sobolev_norm_sq(s.coeffs, 1.5), rtol=1e-12)


class TestGenerateObservation:
    def test_noiseless_limit(self):
        m = make_model(0.5, 1.0, 6)
        s = test_signal("rough", 6)
        obs = generate_observation(m, s, n=4, nu=1e-300, seed=1)
        rel = np.abs(obs.y - m.sigma * s.coeffs) / np.abs(m.sigma * s.coeffs)
        assert np.all(rel < 1e-12)

    def test_seed_determinism(self):
        m = make_model(0.5, 1.0, 8)
        s = test_signal("smooth", 8)
        a = generate_observation(m, s, 100, 1.0, seed=42)
        b = generate_observation(m, s, 100, 1.0, seed=42)
        assert np.array_equal(a.y, b.y)

    def test_monte_carlo_mean(self):
        # mean over replicate seeds approaches the noiseless forward map
        m = make_model(0.5, 1.0, 3)
        s = test_signal("rough", 3)
        n, reps = 25, 10**4
        ys = np.empty((reps, 3))
        for r in range(reps):
            ys[r] = generate_observation(m, s, n, 1.0, seed=r).y
        delta = 1.0 / np.sqrt(n)
        tol = 4.0 * delta / np.sqrt(reps)
        assert np.all(np.abs(ys.mean(axis=0) - m.sigma * s.coeffs) < tol)

    def test_zero_noise_rejected(self):
        m = make_model(0.5, 1.0, 3)
        with pytest.raises(ValueError):
            generate_observation(m, test_signal("rough", 3), 10, 0.0, seed=0)

    def test_dimension_mismatch(self):
        m = make_model(0.5, 1.0, 3)
        with pytest.raises(ValueError, match="does not match"):
            generate_observation(m, test_signal("rough", 4), 10, 1.0, seed=0)

    def test_delta(self):
        m = make_model(0.5, 1.0, 3)
        obs = generate_observation(m, test_signal("rough", 3), 16, 2.0, seed=0)
        assert obs.delta == 0.5
