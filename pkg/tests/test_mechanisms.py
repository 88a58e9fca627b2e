import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from rootguard.errors import DomainError
from rootguard.mechanisms import (
    Grid, MechanismKind, NoiseParams, evaluation_positions, expected_abs_index_noise, expected_abs_noise,
    from_index, log_pmf_matrix, log_pmf_vector, pmf, pmf_vector, sample, sample_index, staircase_gamma, to_index,
)
from rootguard.rng import root_stream, stream

KINDS = list(MechanismKind)
HB = Grid(6.4, 19.387, 1000)


# ---------------------------------------------------------------- index space

def test_endpoints_map_to_grid_ends():
    g = Grid(2.0, 7.0, 1000)
    assert to_index(2.0, g) == 0.0
    assert to_index(7.0, g) == 999.0
    assert from_index(0, g) == 2.0
    assert from_index(999, g) == 7.0


def test_hemoglobin_spacing():
    assert HB.delta == pytest.approx(0.013, abs=1e-12)
    assert HB.width == pytest.approx(12.99, abs=0.005)
    assert to_index(HB.lower + 0.013, HB) == pytest.approx(1.0)


def test_round_trip_within_half_spacing_exhaustive():
    g = Grid(-3.0, 5.0, 100)
    for x in np.linspace(g.lower, g.upper, 10_001):
        back = from_index(int(round(to_index(x, g))), g)
        assert abs(back - x) <= g.delta / 2 + 1e-12


def test_out_of_domain_raises_with_details():
    g = Grid(0.0, 1.0, 10)
    with pytest.raises(DomainError) as exc:
        to_index(1.5, g)
    assert exc.value.value == 1.5 and exc.value.bounds == (0.0, 1.0)
    for bad in (-1, 10, 2.5):
        with pytest.raises(IndexError):
            from_index(bad, g)


@pytest.mark.parametrize("args", [(1.0, 1.0, 10), (2.0, 1.0, 10), (0.0, 1.0, 1), (0.0, math.inf, 10)])
def test_grid_validation(args):
    with pytest.raises(ValueError):
        Grid(*args)


def test_zero_epsilon_rejected_but_limit_constructor_allowed():
    with pytest.raises(ValueError):
        NoiseParams("exp", 0.0)
    p = NoiseParams.limit("exp", 1e-12)
    np.testing.assert_allclose(pmf_vector(p, 123.4, 200), 1 / 200, rtol=1e-9)


def test_kind_aliases():
    assert MechanismKind.parse("Bounded-Laplace") is MechanismKind.BOUNDED_LAPLACE
    assert MechanismKind.parse("stair") is MechanismKind.STAIRCASE
    with pytest.raises(ValueError):
        MechanismKind.parse("gaussian")


# ---------------------------------------------------------------- PMFs

@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("eps", [0.005, 0.1, 1.0, 8.0])
def test_pmf_normalised_at_reference_positions(kind, eps):
    m = 1000
    for t in (0.0, (m - 1) / 2, m - 1.0):
        assert pmf_vector(NoiseParams(kind, eps), t, m).sum() == pytest.approx(1.0, abs=1e-12)


@given(kind=st.sampled_from(KINDS), eps=st.floats(1e-3, 20.0), m=st.integers(2, 400), frac=st.floats(0, 1))
def test_pmf_normalised_anywhere(kind, eps, m, frac):
    t = frac * (m - 1)
    p = pmf_vector(NoiseParams(kind, eps), t, m)
    assert np.all(p >= 0)
    assert p.sum() == pytest.approx(1.0, abs=1e-12)


def test_exponential_mode_at_integer_position():
    for eps in (0.01, 0.5, 3.0):
        p = pmf_vector(NoiseParams("exp", eps), 321.0, 1000)
        assert int(np.argmax(p)) == 321
        assert np.sum(p == p.max()) == 1


def test_blap_boundary_absorption_closed_form():
    # P(Z < 1/2) for Z ~ Laplace(0, 10): 1 - exp(-0.05) / 2
    value = pmf(NoiseParams("blap", 0.1), 0, 0.0, Grid(0, 1, 1000))
    assert value == pytest.approx(0.5243852877496430, abs=1e-12)
    assert value > 0.5


def _laplace_oracle(t, m, eps):
    edges = np.concatenate([[-np.inf], np.arange(m - 1) + 0.5, [np.inf]])
    return np.diff(stats.laplace.cdf(edges, loc=t, scale=1 / eps))


def _staircase_oracle(t, m, eps, steps=4000):
    """Interval masses from the step law, summed step by step."""
    p = np.zeros(m)
    lo = np.concatenate([[-np.inf], np.arange(m - 1) + 0.5])
    hi = np.concatenate([np.arange(m - 1) + 0.5, [np.inf]])
    for g in range(steps):
        w = 0.5 * (1 - math.exp(-eps)) * math.exp(-eps * g)
        if w < 1e-300:
            break
        for a, b in ((t + g, t + g + 1), (t - g - 1, t - g)):
            overlap = np.clip(np.minimum(hi, b) - np.maximum(lo, a), 0, None)
            p += w * overlap
    return p


@pytest.mark.parametrize("eps", [0.1, 0.7, 2.0])
@pytest.mark.parametrize("t", [0.0, 3.3, 25.0, 49.0])
def test_blap_and_staircase_match_independent_oracles(eps, t):
    m = 50
    np.testing.assert_allclose(pmf_vector(NoiseParams("blap", eps), t, m), _laplace_oracle(t, m, eps), atol=1e-12)
    np.testing.assert_allclose(pmf_vector(NoiseParams("staircase", eps), t, m), _staircase_oracle(t, m, eps),
                               atol=1e-12)


def test_pmf_rejects_out_of_range():
    g = Grid(0, 1, 10)
    with pytest.raises(IndexError):
        pmf(NoiseParams("exp", 1.0), 10, 3.0, g)
    with pytest.raises(IndexError):
        pmf(NoiseParams("exp", 1.0), 3, 9.5, g)


def test_log_pmf_matrix_is_read_only_and_consistent():
    p = NoiseParams("staircase", 0.4)
    mat = log_pmf_matrix(p, 60)
    assert not mat.flags.writeable
    np.testing.assert_allclose(mat[17], log_pmf_vector(p, 17.0, 60))


# ---------------------------------------------------------------- mDP ratio

@given(eps=st.sampled_from([0.1, 0.5, 1.0]), t1=st.floats(0, 999), t2=st.floats(0, 999), s=st.integers(0, 999),
       kind=st.sampled_from([MechanismKind.EXPONENTIAL, MechanismKind.BOUNDED_LAPLACE]))
def test_mdp_ratio_random_positions_m1000(eps, t1, t2, s, kind):
    p = NoiseParams(kind, eps)
    l1 = log_pmf_vector(p, t1, 1000)[s]
    l2 = log_pmf_vector(p, t2, 1000)[s]
    assert l1 - l2 <= eps * abs(t1 - t2) + 1e-9


@pytest.mark.parametrize("eps", [0.1, 0.5, 1.0])
def test_staircase_adjacent_ratio(eps):
    mat = log_pmf_matrix(NoiseParams("staircase", eps), 101)
    assert np.abs(np.diff(mat, axis=0)).max() <= eps + 1e-9


# ---------------------------------------------------------------- sampling

def test_exponential_concentrates_at_large_epsilon():
    draws = sample(NoiseParams("exp", 50.0), 500.0, Grid(0, 1, 1000), stream(1, "conc"), size=10_000)
    assert np.mean(draws == 500) >= 0.999


def test_staircase_gamma_value():
    assert staircase_gamma(0.1) == pytest.approx(0.48750260351578966, abs=1e-14)


def _chi2_pvalue(draws, probs, min_expected=5.0):
    n = draws.size
    counts = np.bincount(draws, minlength=probs.size).astype(float)
    expected = probs * n
    # merge sparse bins from the tails inward
    obs_b, exp_b, acc_o, acc_e = [], [], 0.0, 0.0
    for o, e in zip(counts, expected):
        acc_o += o
        acc_e += e
        if acc_e >= min_expected:
            obs_b.append(acc_o)
            exp_b.append(acc_e)
            acc_o = acc_e = 0.0
    if acc_e > 0:
        obs_b[-1] += acc_o
        exp_b[-1] += acc_e
    return stats.chisquare(obs_b, exp_b).pvalue


@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("eps", [0.1, 0.5, 1.0])
def test_sampler_matches_pmf(kind, eps):
    m, t = 1000, 499.5
    p = NoiseParams(kind, eps)
    draws = sample_index(p, t, m, stream(11, kind.value, int(eps * 10)), size=100_000)
    assert _chi2_pvalue(draws, pmf_vector(p, t, m)) > 0.001


@pytest.mark.parametrize("kind", KINDS)
def test_sampler_at_boundary_matches_pmf(kind):
    p = NoiseParams(kind, 0.3)
    draws = sample_index(p, 0.0, 200, stream(5, "edge", kind.value), size=50_000)
    assert _chi2_pvalue(draws, pmf_vector(p, 0.0, 200)) > 0.001


@pytest.mark.parametrize("kind", KINDS)
def test_same_stream_same_output(kind):
    p = NoiseParams(kind, 0.2)
    a = sample_index(p, 321.7, 1000, root_stream(42, "HOMA", 7, 1, 0), size=50)
    b = sample_index(p, 321.7, 1000, root_stream(42, "HOMA", 7, 1, 0), size=50)
    c = sample_index(p, 321.7, 1000, root_stream(42, "HOMA", 7, 1, 1), size=50)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_known_stream_output_is_stable():
    # frozen from a reference run; guards against silent changes to stream derivation
    assert sample_index(NoiseParams("exp", 0.5), 500.0, 1000, stream(2024, "HOMA", 3, 0, 1, 0)) == 501


# ---------------------------------------------------------------- expected noise

def test_evaluation_positions_m1000():
    assert evaluation_positions(1000) == (0, 250, 500, 749, 999)


def test_exponential_laplace_limit_at_center():
    g = Grid(0.0, 999.0, 1000)
    p = NoiseParams("exp", 0.5)
    center = expected_abs_index_noise(p, 1000, t=499.5) * g.delta
    assert center == pytest.approx(2 * g.delta / 0.5, rel=0.02)


@pytest.mark.parametrize("kind", KINDS)
def test_expected_noise_decreases_with_epsilon(kind):
    g = Grid(0.0, 1.0, 1000)
    vals = [expected_abs_noise(NoiseParams(kind, e), g) for e in (0.1, 0.2, 0.5)]
    assert vals[0] > vals[1] > vals[2]
    lattice = np.geomspace(1e-3, 30, 60)
    curve = [expected_abs_index_noise(NoiseParams(kind, e), 1000) for e in lattice]
    assert np.all(np.diff(curve) < 0)


@pytest.mark.parametrize("kind", [MechanismKind.EXPONENTIAL, MechanismKind.BOUNDED_LAPLACE])
def test_expected_noise_vanishes_for_large_epsilon(kind):
    assert expected_abs_index_noise(NoiseParams(kind, 60.0), 1000) < 1e-9


def test_staircase_expected_noise_has_half_step_floor():
    # the magnitude is uniform inside its step, so E|noise| cannot drop below about 1/2
    vals = [expected_abs_index_noise(NoiseParams("staircase", e), 1000) for e in (5.0, 20.0, 60.0)]
    assert all(0.45 < v < 0.55 for v in vals)
