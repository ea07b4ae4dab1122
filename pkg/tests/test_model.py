import math
import warnings
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate, optimize

from qnls.model import (BoxTooSmall, DegenerateExponent, GaussianPotential, GaussianRecipe,
                        GridSpec, InsufficientData, NonlinearitySpec, NoPotential,
                        PowerLawPotential, RingRecipe, TablePotential, UnsupportedDimension,
                        check_C1, check_C2, critical_mass, decay_case_conditions, exponents,
                        global_by_critical_mass, make_initial_data, parse_initial,
                        parse_nonlinearity, parse_potential, remark51_potential)


def exponent_oracle(N, alpha):
    """Exact rational evaluation of the closed forms."""
    N, alpha = Fraction(N), Fraction(alpha)
    two_star = 2 * N / (N - 2)
    D = max(2 * alpha, Fraction(1)) * two_star - 2
    m = max(alpha, Fraction(1, 2))
    return {"q_c": two_star / D, "p_c": N * D / two_star,
            "q_s": max(m * two_star / D, Fraction(1)), "p_s": N * min(D / (m * two_star), Fraction(1))}


# --- exponents --------------------------------------------------------------

def test_exponents_zero_nonlinearity_N3():
    rep = exponents(3, NonlinearitySpec.zero())
    assert (rep.q_c, rep.q_s, rep.p_c, rep.p_s) == (1.5, 0.75, 2.0, 4.0)
    assert rep.k == -0.5
    assert rep.two_star == 6.0


def test_exponents_zero_nonlinearity_N4():
    rep = exponents(4, NonlinearitySpec.zero())
    assert rep.q_c == 2.0 and rep.p_c == 2.0
    assert rep.q_s == 1.0 and rep.p_s == 4.0


def test_exponents_power_alpha_06():
    rep = exponents(3, NonlinearitySpec.power(1.0, 0.6))
    ref = exponent_oracle(3, Fraction(3, 5))
    assert rep.q_c == pytest.approx(float(ref["q_c"]), rel=1e-15)
    assert rep.q_c == pytest.approx(6 / 5.2, rel=1e-15)
    assert rep.p_c == pytest.approx(2.6, rel=1e-15)
    assert rep.q_s == pytest.approx(float(ref["q_s"]), rel=1e-15)
    assert rep.p_s == pytest.approx(float(ref["p_s"]), rel=1e-15)
    assert rep.k == pytest.approx(-0.4, abs=1e-15)


@pytest.mark.parametrize("N", [1, 2])
def test_exponents_low_dimension(N):
    with pytest.raises(UnsupportedDimension):
        exponents(N, NonlinearitySpec.zero())


@given(st.fractions(min_value=Fraction(1, 100), max_value=Fraction(199, 300)))
def test_exponents_match_rational_oracle(alpha):
    rep = exponents(3, NonlinearitySpec.power(1.0, float(alpha)))
    ref = exponent_oracle(3, Fraction(float(alpha)))
    for k, v in ref.items():
        assert getattr(rep, k) == pytest.approx(float(v), rel=1e-12)


@given(st.integers(3, 6), st.floats(0.01, 0.99))
def test_exponent_ordering(N, frac):
    alpha = frac * (N - 1) / N
    rep = exponents(N, NonlinearitySpec.power(1.0, alpha))
    assert rep.q_s < rep.q_c
    assert rep.p_c < rep.p_s


@given(st.floats(0.05, 0.6), st.floats(1.01, 5.0))
def test_holder_pair(alpha, qfac):
    nl = NonlinearitySpec.power(1.0, alpha)
    q = exponents(3, nl).q_c * qfac
    rep = exponents(3, nl, q=q)
    D = max(2 * alpha, 1) * 6 - 2
    A = (2 * q - 1) * D
    assert rep.tau1 == pytest.approx(A / (A - 2), rel=1e-12)
    assert 1 / rep.tau1 + 1 / rep.tau2 == pytest.approx(1.0, rel=1e-12)


# --- critical mass ----------------------------------------------------------

def _coef(nl, q, N, C_s, norm):
    two_star = 2 * N / (N - 2)
    return nl.a ** 2 * 2 ** (((q - 1) * N + 2 * q) / (q * N)) * C_s ** (2 / two_star) * norm


def test_critical_mass_collapses_to_one():
    nl = NonlinearitySpec.power(1.0, 0.6)
    q = exponents(3, nl).q_c
    norm = 1.0 / _coef(nl, q, 3, 1.0, 1.0)
    assert critical_mass(nl, q, 3, 1.0, norm) == pytest.approx(1.0, rel=1e-14)
    assert global_by_critical_mass(nl, q, 3, 1.0, norm, 1.0) == "watershed"
    assert global_by_critical_mass(nl, q, 3, 1.0, norm, 0.9) == "global"
    assert global_by_critical_mass(nl, q, 3, 1.0, norm, 1.1) == "undetermined"


def test_critical_mass_root_finder_oracle():
    nl = NonlinearitySpec.power(1.0, 0.6)
    q = exponents(3, nl).q_c
    C_s, norm = 0.0585, 3.7
    e = min(4 - 4 * 0.6, 2)
    coef = _coef(nl, q, 3, C_s, norm)
    m_ref = optimize.brentq(lambda m: coef * m ** e - 1.0, 1e-6, 1e6, xtol=1e-15, rtol=1e-15)
    assert critical_mass(nl, q, 3, C_s, norm) == pytest.approx(m_ref, rel=1e-12)


@given(st.floats(0.05, 0.6), st.floats(1e-2, 1e2))
def test_critical_mass_doubling(alpha, norm):
    nl = NonlinearitySpec.power(1.0, alpha)
    q = exponents(3, nl).q_c
    e = min(4 - 4 * alpha, 2)
    m1 = critical_mass(nl, q, 3, 0.05, norm)
    m2 = critical_mass(nl, q, 3, 0.05, 2 * norm)
    assert m2 / m1 == pytest.approx(2 ** (-1 / e), rel=1e-12)


def test_critical_mass_degenerate():
    nl = NonlinearitySpec.power(1.0, 1.0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        with pytest.raises(DegenerateExponent):
            critical_mass(nl, 1.0, 3, 1.0, 1.0)


def test_critical_mass_off_watershed_warns():
    nl = NonlinearitySpec.power(1.0, 0.6)
    with pytest.warns(UserWarning):
        critical_mass(nl, 2.0, 3, 1.0, 1.0)


# --- nonlinearity -----------------------------------------------------------

@given(st.floats(0.05, 3.0), st.floats(0.1, 5.0))
def test_k_condition_power(alpha, b):
    nl = NonlinearitySpec.power(b, alpha)
    assert nl.k == pytest.approx(alpha - 1)
    assert nl.k_condition_holds()


@given(st.floats(0.05, 0.999), st.floats(0.05, 5.0))
def test_growth_condition(alpha, b):
    assert NonlinearitySpec.power(b, alpha).growth_condition_holds()


def test_zero_nonlinearity():
    nl = NonlinearitySpec.zero()
    s = np.logspace(-5, 5, 11)
    assert nl.k == -0.5
    assert not np.any(nl.h(s)) and not np.any(nl.dh(s)) and not np.any(nl.d2h(s))
    assert NonlinearitySpec.power(0.0, 0.7).is_zero


def test_eps_floor_only_for_negative_exponent():
    nl = NonlinearitySpec.power(1.0, 0.5, eps_floor=1e-4)
    assert nl.dh(0.0) == pytest.approx(0.5 * 1e-4 ** -0.5)
    assert nl.h(0.0) == 0.0
    nl2 = NonlinearitySpec.power(1.0, 2.0, eps_floor=1e-4)
    assert nl2.dh(0.0) == 0.0


def test_invalid_nonlinearity():
    with pytest.raises(ValueError):
        NonlinearitySpec("power", b=-1.0, alpha=0.5)
    with pytest.raises(ValueError):
        NonlinearitySpec("cubic")


# --- potentials -------------------------------------------------------------

def _fd_check(W, radii):
    h = 1e-6
    for r in radii:
        fd = r * (W.value(r * (1 + h)) - W.value(r * (1 - h))) / (2 * r * h)
        assert float(W.r_dW(r)) == pytest.approx(float(fd), rel=1e-4)


@pytest.mark.parametrize("W", [PowerLawPotential(1.0, 4.0), PowerLawPotential(3.0, 6.0),
                               PowerLawPotential(1.0, 5.0, negative=True), GaussianPotential(-0.7, 1.3),
                               remark51_potential(0.55)])
def test_xgradW_matches_finite_difference(W):
    _fd_check(W, [0.05, 0.3, 0.9, 1.2, 1.5, 1.9, 2.5, 7.0])


def test_powerlaw_pieces_and_evenness():
    W = PowerLawPotential(1.5, 4.0)
    assert W.value(0.5) == pytest.approx(0.5 ** -1.5)
    assert W.value(3.0) == pytest.approx(3.0 ** -4)
    assert W.value(1.0) == pytest.approx(1.0) and W.value(2.0) == pytest.approx(2.0 ** -4)
    g = GridSpec(3, 4.0, 8)
    k, _ = W.kernel_arrays(g)
    assert np.array_equal(k, np.roll(np.flip(k), 1, axis=(0, 1, 2)))
    N = PowerLawPotential(1.0, 5.0, negative=True)
    assert N.sign == "nonpos" and np.all(N.value(np.logspace(-2, 2, 50)) < 0)


def test_powerlaw_bridge_validation():
    with pytest.raises(ValueError):
        PowerLawPotential(2.0, 1.0)
    bad = (lambda r: np.asarray(r) ** 0 * 1.0, lambda r: 0 * np.asarray(r))
    with pytest.raises(ValueError):
        PowerLawPotential(1.0, 4.0, bridge=bad)


def test_origin_cell_average_preserves_integral():
    W = PowerLawPotential(1.0, 4.0)
    a = 0.1
    avg = W.ball_average(3, a)
    ref = integrate.quad(lambda r: r ** -1.0 * r * r, 0, a)[0] * 3 / a ** 3
    assert avg == pytest.approx(ref, rel=1e-12)


def test_check_C1_powerlaws():
    assert check_C1(PowerLawPotential(1.0, 4.0), 1.2, 3).in_L1
    assert not check_C1(PowerLawPotential(3.0, 4.0), 1.2, 3).in_L1


def test_check_C1_gaussian_closed_form():
    W = GaussianPotential(1.0, 1.0)
    rep = check_C1(W, 2.0, 3)
    assert rep.normL1 == pytest.approx(math.pi ** 1.5, rel=1e-6)
    assert rep.normL1 == pytest.approx(W.l1_norm(3), rel=1e-6)
    inner = 4 * math.pi * integrate.quad(lambda r: math.exp(-2 * r * r) * r * r, 0, 1)[0]
    assert rep.normLq_inner == pytest.approx(math.sqrt(inner), rel=1e-8)
    assert rep.supnorm_outer == pytest.approx(math.exp(-1.0))


def test_check_C1_powerlaw_l1_value():
    W = PowerLawPotential(1.0, 4.0)
    rep = check_C1(W, 1.2, 3)
    f = lambda r: abs(float(W.value(r))) * r * r
    ref = 4 * math.pi * (integrate.quad(f, 0, 1)[0] + integrate.quad(f, 1, 2)[0]
                         + integrate.quad(f, 2, np.inf)[0])
    assert rep.normL1 == pytest.approx(ref, rel=1e-8)


def test_check_C1_table_needs_samples():
    with pytest.raises(InsufficientData):
        check_C1(TablePotential([1.0, 2.0, 3.0], [1.0, 0.5, 0.1]), 2.0, 3)


def test_check_C2_examples():
    assert check_C2(PowerLawPotential(3.0, 4.0), -0.5, 3).holds
    assert not check_C2(PowerLawPotential(1.5, 4.0), -0.5, 3).holds
    const = TablePotential(np.linspace(0, 1e7, 5), np.full(5, 2.0))
    assert not check_C2(const, -0.5, 3).holds


@given(st.floats(0.5, 4.5), st.floats(0.1, 2.0))
def test_check_C2_monotone_in_p(p0, dp):
    if check_C2(PowerLawPotential(p0, 6.0), -0.5, 3).holds:
        assert check_C2(PowerLawPotential(p0 + dp, 6.0 + dp), -0.5, 3).holds


def test_check_C2_threshold_is_two():
    assert check_C2(PowerLawPotential(2.0, 4.0), -0.5, 3).holds
    assert not check_C2(PowerLawPotential(1.99, 4.0), -0.5, 3).holds


def test_decay_case_predicates():
    c1 = decay_case_conditions(PowerLawPotential(2.5, 4.0, negative=True), 3)
    assert c1["nonneg"]
    c2 = decay_case_conditions(PowerLawPotential(1.5, 4.0, negative=True), 3, c=0.5)
    assert c2["lower_c"] and not c2["nonneg"]


def test_remark51_constants():
    W = remark51_potential(0.55)
    assert W.p == pytest.approx(2.4) and W.C == pytest.approx(4.8)
    r = np.logspace(-3, 3, 400)
    ratio = -W.r_dW(r) / 2 / W.value(r)
    assert np.all(ratio >= W.L - 1e-12) and np.all(ratio <= W.upper + 1e-12)


# --- grid and initial data --------------------------------------------------

def test_grid_spec():
    g = GridSpec(3, 8.0, 48)
    assert g.dx == pytest.approx(16 / 48)
    assert g.size == 48 ** 3 and g.shape == (48, 48, 48)
    k = g.wavenumbers()[0].ravel()
    assert k[1] == pytest.approx(math.pi / 8.0)
    r = GridSpec(3, 10.0, 64, radial=True)
    assert r.shape == (64,) and r.axes == 1
    assert r.volume == pytest.approx(4 * math.pi * 1000 / 3)
    for bad in [dict(N=4, extent=1.0, points=8), dict(N=3, extent=-1.0, points=8),
                dict(N=3, extent=1.0, points=7), dict(N=2, extent=1.0, points=8, radial=True)]:
        with pytest.raises(ValueError):
            GridSpec(**bad)


def test_initial_gaussian_mass_N1():
    g = GridSpec(1, 12.0, 256)
    st0, d = make_initial_data(g, GaussianRecipe(1.0, 1.0, 0.0))
    assert d.l2 ** 2 == pytest.approx(math.sqrt(math.pi / 2), rel=1e-12)
    assert d.y0 == 0.0 or abs(d.y0) < 1e-14
    assert d.admissible and st0.t == 0.0


@given(st.floats(0.05, 2.0), st.floats(0.6, 1.5))
def test_initial_chirp_virial(beta, sigma):
    g = GridSpec(1, 12.0, 512)
    _, d = make_initial_data(g, GaussianRecipe(0.8, sigma, beta))
    assert d.y0 > 0
    assert d.y0 == pytest.approx(2 * beta * d.moment2, rel=1e-8)


def test_initial_chirp_virial_3d():
    g = GridSpec(3, 8.0, 48)
    _, d = make_initial_data(g, GaussianRecipe(1.0, 1.5, 0.5))
    assert d.y0 == pytest.approx(2 * 0.5 * d.moment2, rel=1e-6)


def test_box_too_small():
    with pytest.raises(BoxTooSmall):
        make_initial_data(GridSpec(1, 3.0, 64), GaussianRecipe(1.0, 2.0))


def test_ring_recipe():
    g = GridSpec(2, 10.0, 64)
    u = RingRecipe(1.0, 3.0, 0.5).sample(g)
    assert np.abs(u).max() == pytest.approx(1.0, abs=0.05)


# --- presets ----------------------------------------------------------------

def test_parsers():
    nl = parse_nonlinearity("power:b=1,alpha=0.6")
    assert (nl.b, nl.alpha) == (1.0, 0.6)
    assert parse_nonlinearity("zero").is_zero
    W = parse_potential("plaw:p=3,C=6")
    assert (W.p, W.C, W.negative) == (3.0, 6.0, False)
    assert parse_potential("neg_plaw:m=1,M=5").negative
    assert isinstance(parse_potential("none"), NoPotential)
    assert parse_potential("gaussian:A=2,sigma=1").A == 2.0
    r = parse_initial("gaussian:A=2,sigma=1,beta=0.5")
    assert (r.A, r.sigma, r.beta) == (2.0, 1.0, 0.5)
    for bad in ["plaw:p=3", "plaw:p=3,C=6,z=1", "wobble", "plaw:p"]:
        with pytest.raises(ValueError):
            parse_potential(bad)


def test_preset_strings_round_trip():
    for text in ["power:b=1.0,alpha=0.6", "zero"]:
        assert parse_nonlinearity(text).preset_string() == text
    for text in ["plaw:p=3.0,C=6.0", "neg_plaw:m=1.0,M=5.0", "gaussian:A=0.1,sigma=3.0"]:
        assert parse_potential(text).preset_string() == text
