import numpy as np
import pytest

from mjspectra.errors import TruncationOverflow
from mjspectra.series import (FourierTaylorSeries, series_from_entries,
                              series_to_entries)


# --- oracle: naive double-loop evaluation ---------------------------------

def naive_eval(terms, x, xi):
    total = 0.0 + 0.0j
    for (k, a), c in terms.items():
        phase = sum(kj * xj for kj, xj in zip(k, x))
        mono = 1.0
        for aj, xij in zip(a, xi):
            mono *= xij ** aj
        total += c * np.exp(1j * phase) * mono
    return total


def random_series(rng, dim=2, n_terms=12, k_max=5, deg_max=4, hermitian=False,
                  k_gen=None, a_gen=2):
    """Random series with caps (k_max, deg_max); terms drawn within |k| <= k_gen."""
    k_gen = k_max if k_gen is None else k_gen
    s = FourierTaylorSeries(dim, k_max=k_max, deg_max=deg_max)
    for _ in range(n_terms):
        k = tuple(int(v) for v in rng.integers(-k_gen, k_gen + 1, size=dim))
        a = tuple(int(v) for v in rng.integers(0, a_gen + 1, size=dim))
        if sum(a) > deg_max:
            continue
        c = complex(rng.normal(), rng.normal())
        s.add_term(k, a, c)
        if hermitian:
            s.add_term(tuple(-v for v in k), a, np.conj(c))
    return s


def test_eval_matches_naive_evaluator():
    rng = np.random.default_rng(7)
    for _ in range(5):
        s = random_series(rng)
        x = rng.uniform(0, 2 * np.pi, size=(11, 2))
        xi = rng.normal(size=(11, 2))
        got = s.eval(x, xi)
        want = np.array([naive_eval(s.terms, xr, xir) for xr, xir in zip(x, xi)])
        assert np.allclose(got, want, atol=1e-12)


def test_eval_broadcasts_and_handles_empty():
    s = FourierTaylorSeries(2)
    assert s.eval(np.zeros(2), np.zeros(2)) == 0
    s.set_term((1, 0), (0, 1), 2.0)
    x = np.zeros((3, 4, 2))
    xi = np.ones((3, 4, 2))
    assert s.eval(x, xi).shape == (3, 4)


def test_addition_and_scalar_algebra():
    rng = np.random.default_rng(3)
    a = random_series(rng)
    b = random_series(rng)
    x = rng.uniform(0, 2 * np.pi, size=(6, 2))
    xi = rng.normal(size=(6, 2))
    assert np.allclose((a + b).eval(x, xi), a.eval(x, xi) + b.eval(x, xi))
    assert np.allclose((a - b).eval(x, xi), a.eval(x, xi) - b.eval(x, xi))
    assert np.allclose((2.5 * a).eval(x, xi), 2.5 * a.eval(x, xi))
    assert np.allclose((a + 1.5).eval(x, xi), a.eval(x, xi) + 1.5)


def test_product_matches_pointwise_product():
    rng = np.random.default_rng(11)
    a = random_series(rng, n_terms=6, k_max=3, deg_max=2)
    b = random_series(rng, n_terms=6, k_max=3, deg_max=2)
    prod = a * b  # caps are merged, here 3 / 2: high modes get truncated
    full = FourierTaylorSeries(2, k_max=6, deg_max=4)
    for (k1, a1), c1 in a.terms.items():
        for (k2, a2), c2 in b.terms.items():
            full.add_term(tuple(p + q for p, q in zip(k1, k2)),
                          tuple(p + q for p, q in zip(a1, a2)), c1 * c2)
    # compare on the retained block only
    for key, c in prod.terms.items():
        assert abs(full.get(*key) - c) < 1e-12
    for (k, aa), c in full.terms.items():
        if max(abs(v) for v in k) <= prod.k_max and sum(aa) <= prod.deg_max:
            assert abs(prod.get(k, aa) - c) < 1e-12


def test_derivatives_match_finite_differences():
    rng = np.random.default_rng(5)
    s = random_series(rng, n_terms=8)
    x = rng.uniform(0, 2 * np.pi, size=2)
    xi = rng.normal(size=2)
    h = 1e-6
    for j in range(2):
        ex = np.zeros(2)
        ex[j] = h
        fd_phi = (s.eval(x + ex, xi) - s.eval(x - ex, xi)) / (2 * h)
        fd_iota = (s.eval(x, xi + ex) - s.eval(x, xi - ex)) / (2 * h)
        assert abs(s.dphi(j).eval(x, xi) - fd_phi) < 1e-7
        assert abs(s.diota(j).eval(x, xi) - fd_iota) < 1e-7


def test_grad_eval_matches_term_derivatives():
    rng = np.random.default_rng(13)
    s = random_series(rng, n_terms=10)
    x = rng.uniform(0, 2 * np.pi, size=(7, 2))
    xi = rng.normal(size=(7, 2))
    gx, gxi = s.grad_eval(x, xi)
    for j in range(2):
        assert np.allclose(gx[..., j], s.dphi(j).eval(x, xi), atol=1e-12)
        assert np.allclose(gxi[..., j], s.diota(j).eval(x, xi), atol=1e-12)


def test_poisson_bracket_hand_example():
    # f = iota_1, g = e^{i phi_1}: {f, g} = d_iota f * d_phi g = i e^{i phi_1}
    f = FourierTaylorSeries.monomial(2, (0, 0), (1, 0), 1.0)
    g = FourierTaylorSeries.monomial(2, (1, 0), (0, 0), 1.0)
    br = f.poisson(g)
    assert len(br.terms) == 1
    assert abs(br.get((1, 0), (0, 0)) - 1j) < 1e-15
    # antisymmetry
    br2 = g.poisson(f)
    assert abs(br2.get((1, 0), (0, 0)) + 1j) < 1e-15


def test_poisson_bracket_matches_finite_differences():
    rng = np.random.default_rng(17)
    # terms generated well inside the caps so the bracket is not truncated
    f = random_series(rng, n_terms=6, k_max=5, deg_max=4, k_gen=2, a_gen=1)
    g = random_series(rng, n_terms=6, k_max=5, deg_max=4, k_gen=2, a_gen=1)
    br = f.poisson(g)
    x = rng.uniform(0, 2 * np.pi, size=2)
    xi = rng.normal(size=2)
    h = 1e-6
    want = 0.0
    for j in range(2):
        ex = np.zeros(2)
        ex[j] = h
        df_i = (f.eval(x, xi + ex) - f.eval(x, xi - ex)) / (2 * h)
        dg_p = (g.eval(x + ex, xi) - g.eval(x - ex, xi)) / (2 * h)
        df_p = (f.eval(x + ex, xi) - f.eval(x - ex, xi)) / (2 * h)
        dg_i = (g.eval(x, xi + ex) - g.eval(x, xi - ex)) / (2 * h)
        want += df_i * dg_p - df_p * dg_i
    assert abs(br.eval(x, xi) - want) < 1e-5


def test_structure_selectors():
    rng = np.random.default_rng(23)
    s = random_series(rng)
    avg = s.angle_average()
    osc = s.oscillating()
    assert all(k == (0, 0) for (k, _) in avg.terms)
    assert all(k != (0, 0) for (k, _) in osc.terms)
    assert len(avg.terms) + len(osc.terms) == len(s.terms)
    deg2 = s.taylor_part(2)
    assert all(sum(a) == 2 for (_, a) in deg2.terms)
    upto = s.taylor_up_to(1)
    assert all(sum(a) <= 1 for (_, a) in upto.terms)


def test_caps_enforced():
    s = FourierTaylorSeries(2, k_max=4, deg_max=3)
    with pytest.raises(TruncationOverflow):
        s.set_term((5, 0), (0, 0), 1.0)
    with pytest.raises(TruncationOverflow):
        s.set_term((0, 0), (2, 2), 1.0)
    with pytest.raises(TruncationOverflow):
        FourierTaylorSeries(2, k_max=65)
    with pytest.raises(TruncationOverflow):
        FourierTaylorSeries(2, deg_max=13)


def test_product_truncates_to_caps():
    a = FourierTaylorSeries.monomial(2, (3, 0), (1, 0), 1.0, k_max=4, deg_max=2)
    b = FourierTaylorSeries.monomial(2, (2, 0), (1, 0), 1.0, k_max=4, deg_max=2)
    prod = a * b  # mode (5, 0) and degree 2 both allowed? mode 5 > 4: dropped
    assert len(prod.terms) == 0


def test_hermitian_series_evaluates_real():
    rng = np.random.default_rng(29)
    s = random_series(rng, hermitian=True)
    assert s.is_hermitian()
    x = rng.uniform(0, 2 * np.pi, size=(9, 2))
    xi = rng.normal(size=(9, 2))
    vals = s.eval(x, xi)
    assert np.max(np.abs(vals.imag)) < 1e-12
    skew = random_series(rng)
    sym = skew.hermitized()
    assert sym.is_hermitian()


def test_linear_actions_and_constant():
    s = FourierTaylorSeries.linear_actions([1.0, 0.5])
    xi = np.array([2.0, 4.0])
    assert abs(s.eval(np.zeros(2), xi) - 4.0) < 1e-15
    c = FourierTaylorSeries.constant(2, 3.25)
    assert abs(c.eval(np.ones(2), np.ones(2)) - 3.25) < 1e-15


def test_eval_mode_consistency():
    rng = np.random.default_rng(31)
    s = random_series(rng)
    x = rng.uniform(0, 2 * np.pi, size=2)
    xi = rng.normal(size=2)
    total = sum(s.eval_mode(k, xi) * np.exp(1j * np.dot(k, x)) for k in s.modes())
    assert abs(total - s.eval(x, xi)) < 1e-12


def test_entries_round_trip():
    rng = np.random.default_rng(37)
    s = random_series(rng, hermitian=True).chop(1e-14)
    entries = series_to_entries(s)
    back = series_from_entries(2, entries, k_max=s.k_max, deg_max=s.deg_max)
    assert set(back.terms) == set(s.terms)
    for key, c in s.terms.items():
        assert abs(back.terms[key] - c) < 1e-12


def test_entries_scalar_means_cosine():
    s = series_from_entries(2, [[[1, 0], [0, 0], 2.0]])
    x = np.array([0.7, 0.0])
    assert abs(s.eval(x, np.zeros(2)) - 2.0 * np.cos(0.7)) < 1e-14
