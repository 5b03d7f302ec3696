import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pseudomatch.fixpoint import GridFunction, iterate_fixpoint
from pseudomatch.operators import (
    I_value,
    _tail_integral,
    apply_operator,
    build_density,
    build_operator,
    choose_m,
    compose_norm,
    continuous_mass_near_right,
    default_K,
    diag_envelope,
    empirical_alpha,
    marginal_J,
    neumann_psi,
    neumann_series,
    right_endpoint_limit,
    tail_factor,
)
from pseudomatch.randomness import Params


def test_density_nonnegative_and_supported(fp_half):
    rng = np.random.default_rng(0)
    h = fp_half.params.half
    for z in rng.uniform(-h, h, 20):
        d = build_density(fp_half.F_A, z)
        t = rng.uniform(-2 * h, 2 * h, 50)
        vals = d.density(t)
        assert np.all(vals >= 0)
        lo, hi = d.support
        assert np.all(vals[(t < lo) | (t > hi)] == 0)
        assert d.atom > 0 and d.continuous_mass > 0


def test_density_rejects_outside(fp_half):
    with pytest.raises(ValueError):
        build_density(fp_half.F_A, 0.6)


def test_left_end_mass_vanishes(fp_half):
    # inside the first grid cell the mass is exactly eps^q times the cell's slope
    p = fp_half.params
    h, q = p.half, p.q
    eps = np.array([1e-4, 1e-5, 1e-6])
    masses = np.array([build_density(fp_half.F_A, -h + e).continuous_mass for e in eps])
    np.testing.assert_allclose(masses / eps**q, -fp_half.F_A.slopes[-1], rtol=1e-6)
    assert I_value(fp_half, "A", -h) == 0.0


def test_continuous_mass_envelope(fp_half):
    p = fp_half.params
    alpha = empirical_alpha(fp_half, "A")
    z = np.linspace(-p.half, p.half, 97)[1:-1] + 1e-3
    mass = np.array([build_density(fp_half.F_A, zz).continuous_mass for zz in z])
    assert math.isfinite(alpha)
    assert np.all(mass <= 1.05 * alpha * diag_envelope(p, z))


def test_I_interior_below_one(fp_half):
    h = fp_half.params.half
    for z in np.linspace(-h, h, 11)[1:-1]:
        assert 0.0 <= I_value(fp_half, "B", z) < 1.0


def test_operator_invariants(ops_half):
    for K in ops_half:
        W = K.kernel_weights
        assert np.all(W >= 0)
        np.testing.assert_allclose(W.sum(axis=1), 1.0, atol=1e-6)
        assert np.all((K.I_values >= 0) & (K.I_values <= 1))
        assert K.I_values[0] == 0.0


def test_apply_to_constants_and_identity(ops_half):
    KA, _ = ops_half
    grid = KA.grid
    ones = apply_operator(KA, np.ones_like(grid)).values
    np.testing.assert_allclose(ones, KA.I_values, rtol=0, atol=1e-12)
    lin = apply_operator(KA, grid).values
    h = KA.params.half
    assert np.all(lin >= -h - 1e-12) and np.all(lin <= h + 1e-12)


@given(st.lists(st.floats(-5, 5), min_size=2, max_size=2), st.integers(0, 10**6))
@settings(max_examples=25, deadline=None)
def test_linearity_positivity_and_S_contraction(ops_half, coef, seed):
    KA, KB = ops_half
    rng = np.random.default_rng(seed)
    h1 = rng.normal(size=KA.grid.size)
    h2 = rng.uniform(0, 1, KA.grid.size)
    a, b = coef
    lhs = apply_operator(KB, a * h1 + b * h2).values
    rhs = a * apply_operator(KB, h1).values + b * apply_operator(KB, h2).values
    assert np.abs(lhs - rhs).max() <= 1e-10 * (1 + np.abs(rhs).max())
    assert np.all(apply_operator(KA, h2).values >= 0)
    assert KA.S(h1).max() <= h1.max() + 1e-12


def test_grid_mismatch(ops_half, fp_small):
    KA, _ = ops_half
    with pytest.raises(ValueError):
        apply_operator(KA, fp_small.F_A)
    with pytest.raises(ValueError):
        compose_norm(build_operator("B", fp_small), KA)


def _direct_T(fp, player, h, z):
    """Ratio of the diagonal integrals at z by quadrature in u = (z+t)^q."""
    F = fp.anti_cdf(player)
    p = fp.params
    q, half = p.q, p.half
    dens = -F.slopes
    lo, hi = max(0.0, z - half), z + half
    nodes = sorted({lo**q, hi**q} | {(z + g) ** q for g in F.grid if lo < z + g < hi})

    def piece(u, with_h):
        t = float(u ** (1 / mpmath.mpf(q))) - z
        k = min(max(np.searchsorted(F.grid, t, side="right") - 1, 0), F.n - 1)
        return dens[k] * (np.interp(t, F.grid, h) if with_h else 1.0)

    num = float(mpmath.quad(lambda u: piece(u, True), nodes))
    cont = float(mpmath.quad(lambda u: piece(u, False), nodes))
    atom = q * (z + half) ** (q - 1) * F.values[-1]
    return num / (atom + cont)


def test_operator_matches_direct_quadrature(fp_small):
    K = build_operator("A", fp_small)
    rng = np.random.default_rng(3)
    h = rng.normal(size=K.grid.size)
    out = apply_operator(K, h).values
    for i in rng.choice(np.arange(1, K.n), 10, replace=False):
        want = _direct_T(fp_small, "A", h, K.grid[i])
        assert out[i] == pytest.approx(want, rel=1e-6, abs=1e-9)


def test_norm_bounds(ops_half):
    KA, KB = ops_half
    norm = compose_norm(KB, KA)
    assert 0.0 < norm < 1.0
    assert norm <= KB.I_values.max() * KA.I_values.max() + 1e-12


def test_marginal_J(fp_half):
    p = fp_half.params
    assert marginal_J(-p.half, "A", fp_half) == math.inf
    for z in (-0.3, 0.0, 0.2):
        d = build_density(fp_half.F_A, z)
        assert marginal_J(z, "A", fp_half) == pytest.approx(d.total_mass, rel=1e-12)
    beyond = marginal_J(np.array([0.7, 1.0, 1.4]), "A", fp_half)
    assert np.all(np.isfinite(beyond)) and np.all(beyond >= 0)
    with pytest.raises(ValueError):
        marginal_J(2.0, "A", fp_half)


def test_right_endpoint_dichotomy():
    low = iterate_fixpoint(Params(0.4, 1.0), N=512)
    lim = right_endpoint_limit(low, "A")
    assert lim.divergent and lim.I_value == 1.0
    high = iterate_fixpoint(Params(0.7, 1.0), N=512)
    lim = right_endpoint_limit(high, "A")
    assert not lim.divergent and 0.0 < lim.I_value < 1.0
    assert np.all(np.diff(lim.masses) > 0)


@pytest.mark.parametrize("eps", [0.45, 0.3, 0.25, 0.1])
def test_near_right_mass_agrees_with_grid_density(fp_half, eps):
    # analytic -F' against the grid's piecewise-constant -F'
    grid_mass = build_density(fp_half.F_A, fp_half.params.half - eps).continuous_mass
    assert continuous_mass_near_right(fp_half, "A", eps) == pytest.approx(grid_mass, rel=1e-3)


@pytest.mark.parametrize("z", [-0.5, -0.2, 0.0, 0.3, 0.5])
@pytest.mark.parametrize("m", [1.0, 8.0])
def test_tail_integral_matches_quadrature(z, m):
    p = Params(0.5, 1.0)
    h, q = p.half, p.q

    def f(x):
        return ((x + h) ** (q - 1) + abs(x - h) ** (q - 1)) * mpmath.exp(m * (z - x))

    pts = [z] + ([h] if z < h else []) + [mpmath.inf]
    with mpmath.workdps(20):
        want = float(mpmath.quad(f, pts))
    assert _tail_integral(p, m, z) == pytest.approx(want, rel=1e-6)


def test_choose_m_smallest_on_ladder():
    p = Params(0.5, 1.0)
    m, eps = choose_m(p, 0.2, 0.25)
    assert eps < 0.5
    smaller = [c / p.lam for c in (1, 2, 4, 8, 16) if c / p.lam < m]
    assert all(tail_factor(p, s, 0.2, 0.25) >= 0.5 for s in smaller)


def test_neumann_psi(ops_half):
    KA, KB = ops_half
    p = KA.params
    norm = compose_norm(KB, KA)
    K = default_K(p)
    assert K == 2 * (2 + p.lam**p.q)
    series = neumann_series(KB, KA)
    for t in (0.0, 0.5, 2.0):
        psi = neumann_psi(t, KB, KA, m=2.0, series=series)
        base = K * math.exp(2.0 * t)
        assert np.all(psi.values >= base)
        assert psi.values.max() <= base / (1 - norm) * (1 + 1e-12)
        lhs = apply_operator(KB, apply_operator(KA, psi)).values
        assert np.abs(lhs - (psi.values - base)).max() < 1e-8
    with pytest.raises(ValueError):
        neumann_psi(3 * p.lam, KB, KA)
