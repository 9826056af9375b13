import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from radardiff.denoisers import AnalyticGaussianDenoiser
from radardiff.diffusion import (
    CountingDenoiser,
    NoiseSchedule,
    add_noise,
    denoising_score,
    heun_sample,
    karras_sigmas,
    sample_training_sigma,
    write_trace_csv,
)
from radardiff.errors import ConfigurationError, DomainError, NumericError


def exact_flow(x_init, mu, var, sigma_from, sigma_to):
    """Closed-form probability-flow ODE solution for Gaussian data."""
    return mu + (x_init - mu) * np.sqrt((var + sigma_to**2) / (var + sigma_from**2))


def test_schedule_defaults():
    s = NoiseSchedule()
    assert (s.sigma_min, s.sigma_max, s.rho, s.n_steps, s.sigma_data) == (0.002, 80.0, 7.0, 80, 0.5)
    grid = s.sigmas()
    assert len(grid) == 81 and grid[0] == 80.0 and grid[-2] == 0.002 and grid[-1] == 0.0
    assert np.all(np.diff(grid) < 0)


@pytest.mark.parametrize("n", [2, 3, 18, 80])
def test_karras_grid_formula(n):
    i = np.arange(n)
    expected = (80 ** (1 / 7) + i / (n - 1) * (0.002 ** (1 / 7) - 80 ** (1 / 7))) ** 7
    np.testing.assert_allclose(karras_sigmas(n), expected, rtol=1e-12)


def test_karras_single_point():
    assert karras_sigmas(1).tolist() == [80.0]


@pytest.mark.parametrize("kw", [{"n_steps": 0}, {"sigma_min": 0.0}, {"sigma_min": 100.0}])
def test_schedule_validation(kw):
    with pytest.raises(ConfigurationError):
        NoiseSchedule(**kw)


def test_schedule_hash_tracks_fields():
    assert NoiseSchedule().hash() == NoiseSchedule().hash()
    assert NoiseSchedule().hash() != NoiseSchedule(n_steps=40).hash()


def test_add_noise_statistics_and_per_sample_sigma():
    rng = np.random.default_rng(0)
    x0 = np.zeros((4, 20000))
    y = add_noise(x0, np.array([0.0, 0.5, 1.0, 2.0]), rng)
    np.testing.assert_allclose(y.std(axis=1), [0.0, 0.5, 1.0, 2.0], rtol=0.03)
    with pytest.raises(DomainError):
        add_noise(x0, -1.0, rng)


def test_training_sigma_lognormal():
    s = sample_training_sigma(np.random.default_rng(1), 100_000)
    assert np.log(s).mean() == pytest.approx(-1.2, abs=0.02)
    assert np.log(s).std() == pytest.approx(1.2, abs=0.02)


def test_score_matches_closed_form():
    """Relative error below 1e-12 on a log grid of sigma.

    ``(D - x) / sigma^2`` cancels catastrophically as sigma -> 0, so the
    grid stops at 0.05 where float64 still leaves ample headroom.
    """
    d = AnalyticGaussianDenoiser(0.3, 0.4)
    rng = np.random.default_rng(2)
    for sigma in np.geomspace(0.05, 80, 25):
        x = 0.3 + np.sqrt(0.4 + sigma**2) * rng.standard_normal(1000)
        got = denoising_score(d, x, sigma)
        ref = d.score(x, sigma)
        assert np.linalg.norm(got - ref) / np.linalg.norm(ref) < 1e-12


def test_score_undefined_at_zero():
    with pytest.raises(DomainError):
        denoising_score(AnalyticGaussianDenoiser(0, 1), np.zeros(3), 0.0)


def test_heun_matches_exact_flow():
    mu, var = 0.5, 0.25
    d = AnalyticGaussianDenoiser(mu, var)
    x_init = 80 * np.random.default_rng(3).standard_normal(500)
    out = heun_sample(d, schedule=NoiseSchedule(n_steps=160), x_init=x_init)
    ref = d.predict(exact_flow(x_init, mu, var, 80.0, 0.002), 0.002)
    assert np.max(np.abs(out - ref)) < 2e-3


def test_heun_second_order_convergence():
    mu, var = 0.5, 0.25
    d = AnalyticGaussianDenoiser(mu, var)
    x_init = 80 * np.random.default_rng(4).standard_normal(500)
    ref = d.predict(exact_flow(x_init, mu, var, 80.0, 0.002), 0.002)
    errs = [np.max(np.abs(heun_sample(d, schedule=NoiseSchedule(n_steps=n), x_init=x_init) - ref)) for n in (20, 40, 80)]
    ratios = np.array(errs[:-1]) / np.array(errs[1:])
    # a first-order method would give 2
    assert np.all(ratios > 3.5) and np.all(ratios < 5.5)


def test_heun_nfe_count():
    d = CountingDenoiser(AnalyticGaussianDenoiser(0, 1))
    heun_sample(d, schedule=NoiseSchedule(n_steps=80), rng=np.random.default_rng(0), shape=(3,))
    assert d.calls == 2 * 79 + 1


def test_heun_is_deterministic_given_rng():
    d = AnalyticGaussianDenoiser(np.zeros(4), np.ones(4))
    a = heun_sample(d, rng=np.random.default_rng(9))
    b = heun_sample(d, rng=np.random.default_rng(9))
    assert np.array_equal(a, b)


def test_heun_trace(tmp_path):
    trace = []
    heun_sample(AnalyticGaussianDenoiser(0, 1), schedule=NoiseSchedule(n_steps=5), rng=np.random.default_rng(0), shape=(8,), trace=trace)
    assert [row[0] for row in trace] == list(range(5))
    assert trace[0][1] == 80.0
    write_trace_csv(trace, tmp_path / "t.csv")
    assert (tmp_path / "t.csv").read_text().startswith("step,sigma,x_norm,denoised_norm")


class _Exploding:
    def predict(self, x, sigma, c=None):
        return x * np.inf if sigma < 1 else x


def test_heun_reports_non_finite_step():
    with pytest.raises(NumericError, match="step"):
        heun_sample(_Exploding(), schedule=NoiseSchedule(n_steps=10), x_init=np.ones(3))


@settings(max_examples=20, deadline=None)
@given(mu=st.floats(-2, 2), var=st.floats(0.05, 4.0))
def test_analytic_denoiser_limits(mu, var):
    d = AnalyticGaussianDenoiser(mu, var)
    x = np.linspace(-3, 3, 7)
    np.testing.assert_allclose(d.predict(x, 1e-8), x, atol=1e-12)
    np.testing.assert_allclose(d.predict(x, 1e8), mu, atol=1e-9)
