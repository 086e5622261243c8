import math
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from uwoc.ber import (
    BerError,
    avg_q_over_lognormal,
    ber_mimo_exact,
    ber_mimo_fw,
    ber_mimo_fw_upper,
    ber_mimo_upper,
    ber_siso_exact,
    ber_siso_upper,
    ghq_rule,
    power_for_ber,
)
from uwoc.fading import FadingSpec
from uwoc.link import GammaSet, MimoScenario, gaussian_q

RULE = ghq_rule(30)
STRONG = FadingSpec.from_sigma(0.4)
WEAK = FadingSpec.from_sigma(0.1)


def direct_average(C, spec):
    """Adaptive quadrature of E[Q(C h)] over the Gaussian log-amplitude."""
    s = spec.sigma_X
    mu = spec.mu_X
    f = lambda x: gaussian_q(C * math.exp(2 * x)) * math.exp(-((x - mu) ** 2) / (2 * s * s)) / (  # noqa: E731
        math.sqrt(2 * math.pi) * s
    )
    pts = [mu + k * s for k in range(-12, 13, 3)]
    total = 0.0
    for a, b in zip(pts[:-1], pts[1:]):
        total += integrate.quad(f, a, b, epsabs=0, epsrel=1e-13, limit=400)[0]
    return total


def test_ghq_low_orders():
    r1 = ghq_rule(1)
    assert r1.nodes.tolist() == [0.0]
    assert r1.weights[0] == pytest.approx(math.sqrt(math.pi), rel=1e-15)
    r2 = ghq_rule(2)
    np.testing.assert_allclose(r2.nodes, [-1 / math.sqrt(2), 1 / math.sqrt(2)], rtol=1e-15)
    np.testing.assert_allclose(r2.weights, [math.sqrt(math.pi) / 2] * 2, rtol=1e-15)


def test_ghq_even_moments_exact_to_degree():
    r = ghq_rule(30)
    for k in range(30):
        exact = math.gamma(k + 0.5)  # integral of x^(2k) exp(-x^2)
        got = math.fsum(r.weights * r.nodes ** (2 * k))
        assert got == pytest.approx(exact, rel=1e-11), k


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 128))
def test_ghq_invariants(order):
    r = ghq_rule(order)
    assert math.fsum(r.weights) == pytest.approx(math.sqrt(math.pi), abs=1e-10)
    if order >= 2:
        assert math.fsum(r.weights * r.nodes**2) == pytest.approx(math.sqrt(math.pi) / 2, abs=1e-10)
    np.testing.assert_allclose(r.nodes, -r.nodes[::-1], atol=1e-13)
    assert np.all(np.diff(r.nodes) > 0)
    # independent eigenvalue-based reference
    x, w = np.polynomial.hermite.hermgauss(order)
    np.testing.assert_allclose(r.nodes, x, atol=1e-12)
    np.testing.assert_allclose(r.weights, w, rtol=1e-11, atol=1e-300)


def test_ghq_weight_formula():
    # weights from the Hermite-polynomial closed form
    U = 12
    r = ghq_rule(U)
    H = np.polynomial.hermite.Hermite.basis(U - 1)
    w = 2 ** (U - 1) * math.factorial(U) * math.sqrt(math.pi) / (U**2 * H(r.nodes) ** 2)
    np.testing.assert_allclose(r.weights, w, rtol=1e-12)


def test_ghq_order_bounds():
    for bad in (0, 129):
        with pytest.raises(BerError):
            ghq_rule(bad)


def test_avg_q_no_fading():
    for C in (0.3, 2.0, 7.5):
        assert avg_q_over_lognormal(C, FadingSpec(0.0), RULE) == gaussian_q(C)
    with pytest.raises(ValueError):
        avg_q_over_lognormal(0.0, STRONG, RULE)


def test_avg_q_matches_adaptive_quadrature():
    got = avg_q_over_lognormal(1.0, STRONG, RULE)
    assert got == pytest.approx(direct_average(1.0, STRONG), rel=1e-6)


@pytest.mark.parametrize("C", [5.0, 10.0, 20.0])
def test_fading_hurts_at_high_snr(C):
    assert avg_q_over_lognormal(C, STRONG, RULE) > avg_q_over_lognormal(C, WEAK, RULE)


def test_siso_no_isi_reductions():
    g = GammaSet(4.0)
    assert ber_siso_exact(g, FadingSpec(0.0), 1.0, RULE).ber == gaussian_q(2.0)
    assert ber_siso_exact(g, STRONG, 1.0, RULE).ber == avg_q_over_lognormal(2.0, STRONG, RULE)
    assert ber_siso_upper(g, STRONG, 1.0, RULE).ber == ber_siso_exact(g, STRONG, 1.0, RULE).ber


def test_siso_exact_closed_form_without_fading():
    g = GammaSet(5.0, [0.6, 0.2])
    expected = 0.0
    for b1 in (0, 1):
        for b2 in (0, 1):
            isi = 0.6 * b1 + 0.2 * b2
            expected += 0.5 * gaussian_q(2.5 - isi) + 0.5 * gaussian_q(2.5 + isi)
    assert ber_siso_exact(g, FadingSpec(0.0), 1.0, RULE).ber == pytest.approx(expected / 4, rel=1e-14)


def test_siso_memory_cap():
    g = GammaSet(1.0, np.full(15, 1e-3))
    with pytest.raises(BerError, match="upper bound"):
        ber_siso_exact(g, STRONG, 1.0, RULE)
    ber_siso_upper(g, STRONG, 1.0, RULE)  # still available


def test_severe_isi_floor():
    g = GammaSet(1.0, [0.8])
    res = ber_siso_upper(g, FadingSpec(0.0), 1e-3, RULE)
    assert res.ber >= 0.25


gamma_sets = st.builds(
    lambda s, isi: GammaSet(s, isi),
    st.floats(0.5, 50.0),
    st.lists(st.floats(0.0, 0.3), min_size=1, max_size=6),
)


@settings(max_examples=100, deadline=None)
@given(gamma_sets, st.sampled_from([0.0, 0.1, 0.4]), st.floats(0.3, 3.0))
def test_siso_upper_dominates_exact(g, sigma, sigma_Tb):
    spec = FadingSpec.from_sigma(sigma)
    up = ber_siso_upper(g, spec, sigma_Tb, RULE).ber
    ex = ber_siso_exact(g, spec, sigma_Tb, RULE).ber
    assert up >= ex * (1 - 1e-12)


def _scenario(M, N, gamma_s, isi, sigma, sigma_Tb=1.0):
    g = GammaSet(gamma_s, isi)
    return MimoScenario(
        M, N, [[g] * N for _ in range(M)], [[FadingSpec.from_sigma(sigma)] * N for _ in range(M)], sigma_Tb=sigma_Tb
    )


def test_mimo_degenerate_equals_siso():
    g = GammaSet(6.0, [0.4, 0.1])
    scn = MimoScenario(1, 1, [[g]], [[STRONG]], sigma_Tb=1.0)
    assert ber_mimo_exact(scn, RULE).ber == pytest.approx(ber_siso_exact(g, STRONG, 1.0, RULE).ber, rel=1e-12)
    assert ber_mimo_upper(scn, RULE).ber == pytest.approx(ber_siso_upper(g, STRONG, 1.0, RULE).ber, rel=1e-12)


def test_miso_fading_free_closed_form():
    scn = _scenario(2, 1, 3.0, [0.5], 0.0)
    worst = gaussian_q((6.0 - 2 * 1.0) / 2)
    best = gaussian_q(6.0 / 2)
    assert ber_mimo_upper(scn, RULE).ber == pytest.approx(0.5 * worst + 0.5 * best, rel=1e-12)
    exact = 0.5 * (0.5 * gaussian_q(3.0) + 0.5 * gaussian_q(3.0)) + 0.5 * (
        0.5 * gaussian_q((6.0 - 2.0) / 2) + 0.5 * gaussian_q((6.0 + 2.0) / 2)
    )
    assert ber_mimo_exact(scn, RULE).ber == pytest.approx(exact, rel=1e-12)


def test_simo_noise_scales_with_receivers():
    # two identical receivers double the signal and sqrt(2) the noise std
    scn = _scenario(1, 2, 3.0, [], 0.0)
    assert ber_mimo_exact(scn, RULE).ber == pytest.approx(gaussian_q(6.0 / (2 * math.sqrt(2))), rel=1e-12)


def test_tensor_dimension_cap():
    scn = _scenario(3, 3, 1.0, [], 0.1)
    with pytest.raises(BerError, match="fw"):
        ber_mimo_exact(scn, RULE)
    with pytest.raises(BerError):
        ber_mimo_upper(scn, RULE)
    assert 0 < ber_mimo_fw(scn, RULE).ber < 0.5


def test_fw_single_link_is_exact():
    g = GammaSet(8.0, [0.5, 0.2])
    scn = MimoScenario(1, 1, [[g]], [[STRONG]], sigma_Tb=1.0)
    assert ber_mimo_fw(scn, RULE).ber == pytest.approx(ber_siso_exact(g, STRONG, 1.0, RULE).ber, rel=1e-10)


def test_fw_falls_back_on_non_positive_weights():
    scn = _scenario(2, 1, 1.0, [0.7], 0.4, sigma_Tb=0.2)
    res = ber_mimo_fw(scn, RULE)
    assert res.diagnostics["fallback_terms"] > 0
    assert res.ber == pytest.approx(ber_mimo_exact(scn, RULE).ber, rel=0.5)


def test_simo_fw_discrepancy_reported():
    scn = MimoScenario(
        1, 3,
        [[GammaSet(10.0, [0.2]), GammaSet(0.8, [0.2]), GammaSet(0.8, [0.2])]],
        [[STRONG] * 3],
        sigma_Tb=1.0,
    )
    ex = ber_mimo_exact(scn, RULE).ber
    fw = ber_mimo_fw(scn, RULE).ber
    print(f"SIMO 1x3 heterogeneous weights: exact={ex:.3e} fw={fw:.3e} ratio={fw / ex:.3f}")
    assert fw > 0 and ex > 0


mimo_st = st.builds(
    lambda dims, gs, isi, sigma, tb: _scenario(dims[0], dims[1], gs, isi, sigma, tb),
    st.sampled_from([(1, 1), (2, 1), (1, 2), (3, 1), (1, 3)]),
    st.floats(1.0, 20.0),
    st.lists(st.floats(0.0, 0.2), min_size=1, max_size=3),
    st.sampled_from([0.0, 0.1, 0.4]),
    st.floats(0.5, 3.0),
)


@settings(max_examples=100, deadline=None)
@given(mimo_st)
def test_mimo_upper_dominates_exact(scn):
    up = ber_mimo_upper(scn, RULE, per_dim_order=8).ber
    ex = ber_mimo_exact(scn, RULE, per_dim_order=8).ber
    assert up >= ex * (1 - 1e-12)


def test_link_order_is_bitwise_irrelevant():
    a = GammaSet(4.0, [0.3])
    b = GammaSet(2.5, [0.1])
    s1 = MimoScenario(2, 1, [[a], [b]], [[STRONG], [WEAK]], sigma_Tb=1.0)
    s2 = MimoScenario(2, 1, [[b], [a]], [[WEAK], [STRONG]], sigma_Tb=1.0)
    assert ber_mimo_exact(s1, RULE).ber == ber_mimo_exact(s2, RULE).ber


def test_fsum_accumulation_is_order_free():
    from uwoc.ber import _csum

    rng = random.Random(5)
    terms = [10.0 ** rng.uniform(-40, -1) for _ in range(1 << 10)]
    ref = _csum(terms)
    for _ in range(5):
        rng.shuffle(terms)
        assert _csum(terms) == ref


@pytest.mark.parametrize("method", ["siso_exact", "siso_upper", "mimo_exact", "mimo_upper", "fw"])
def test_ber_monotone_in_power(method):
    g = GammaSet(1.0, [0.08, 0.02])
    base = MimoScenario(2, 1, [[g], [g]], [[STRONG], [STRONG]], sigma_Tb=1.0)
    vals = []
    for db in np.arange(0, 30, 1.5):
        c = 10 ** (db / 10)
        if method == "siso_exact":
            v = ber_siso_exact(g.scaled(c), STRONG, 1.0, RULE).ber
        elif method == "siso_upper":
            v = ber_siso_upper(g.scaled(c), STRONG, 1.0, RULE).ber
        elif method == "mimo_exact":
            v = ber_mimo_exact(base.scaled(c), RULE).ber
        elif method == "mimo_upper":
            v = ber_mimo_upper(base.scaled(c), RULE).ber
        else:
            v = ber_mimo_fw(base.scaled(c), RULE).ber
        vals.append(v)
    assert all(b <= a for a, b in zip(vals, vals[1:]))
    assert 0 <= min(vals) and max(vals) <= 0.5 + 1e-12


def test_ghq_order_convergence_on_coastal_link(coastal):
    # order 30 vs 60 across BER 1e-3..1e-12 on the 25 m coastal SISO link
    worst = 0.0
    for sigma in (0.1, 0.4):
        scn = coastal(1, 1, sigma)
        g, f = scn.gammas[0][0], scn.fading[0][0]
        for target in (1e-3, 1e-6, 1e-9, 1e-12):
            db = power_for_ber(lambda c: ber_siso_exact(g.scaled(c), f, scn.noise_std, ghq_rule(60)).ber, target, -40, 20)
            c = 10 ** (db / 10)
            lo = ber_siso_exact(g.scaled(c), f, scn.noise_std, ghq_rule(30)).ber
            hi = ber_siso_exact(g.scaled(c), f, scn.noise_std, ghq_rule(60)).ber
            worst = max(worst, abs(lo - hi) / hi)
    assert worst <= 1e-6, f"max relative U=30 vs U=60 difference {worst:.3e}"


def test_coastal_exact_below_upper_with_small_gap(coastal):
    scn = coastal(1, 1, 0.4)
    g, f, s = scn.gammas[0][0], scn.fading[0][0], scn.noise_std
    for db in np.arange(-30, 10, 2.0):
        c = 10 ** (db / 10)
        assert ber_siso_exact(g.scaled(c), f, s, RULE).ber <= ber_siso_upper(g.scaled(c), f, s, RULE).ber
    p_ex = power_for_ber(lambda c: ber_siso_exact(g.scaled(c), f, s, RULE).ber, 1e-6, -40, 20)
    p_up = power_for_ber(lambda c: ber_siso_upper(g.scaled(c), f, s, RULE).ber, 1e-6, -40, 20)
    assert 0 <= p_up - p_ex < 0.5


def test_fw_upper_bound_variant():
    scn = _scenario(2, 1, 5.0, [0.2], 0.4)
    res = ber_mimo_fw_upper(scn, RULE)
    assert res.diagnostics["bound"] and res.ber >= ber_mimo_fw(scn, RULE).ber * (1 - 1e-12)


def test_power_for_ber_bracket():
    g = GammaSet(1.0)
    f = lambda c: ber_siso_exact(g.scaled(c), FadingSpec(0.0), 1.0, RULE).ber  # noqa: E731
    db = power_for_ber(f, 1e-6, 0, 30)
    assert gaussian_q(10 ** (db / 10) / 2) == pytest.approx(1e-6, rel=1e-3)
    with pytest.raises(BerError):
        power_for_ber(f, 1e-6, 0, 5)
