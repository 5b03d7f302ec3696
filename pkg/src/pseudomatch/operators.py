"""Diagonal densities, the transition operators L_A / L_B and their contraction.

For a fixed point ``(F_A, F_B)`` the operator ``L_X`` maps a function of a
child's game value to the expected value given the parent's game value:

    L_X(h)(z) = int h(t) rho_X^z(t) dt / (q (z+lam/2)^(q-1) F_X(lam/2) + int rho_X^z),
    rho_X^z(t) = q (z+t)_+^(q-1) (-F_X'(t)).

It factors as ``D_X o S_X``: ``S_X`` averages against the normalised
kernel ``kappa_X^z`` (rows summing to one) and ``D_X`` multiplies by
``I_X(z)``, the share of the diagonal mass that is continuous. Densities
are integrated against the Stieltjes measure of the grid function ``F_X``
(piecewise-constant ``-F_X'``), segment by segment in closed form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, special

from .fixpoint import (
    FixedPoint,
    GridFunction,
    _atom_kernel,
    derivative_at,
    discretization_for,
    hat_matrix,
    segment_weights,
)
from .randomness import Params

ROW_SUM_TOL = 1e-6
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(24)


@dataclass
class DiagonalDensity:
    """Diagonal ``ell - f = z`` of the ell-f square: continuous part plus right atom."""

    params: Params
    z: float
    grid: np.ndarray
    segment_density: np.ndarray  # -F' on each segment
    segment_mass: np.ndarray  # int over segment of q (z+t)_+^(q-1) (-F'(t)) dt
    atom: float  # q (z+lam/2)^(q-1) F(lam/2), sitting at t = lam/2

    @property
    def continuous_mass(self) -> float:
        return float(self.segment_mass.sum())

    @property
    def total_mass(self) -> float:
        return self.continuous_mass + self.atom

    @property
    def support(self) -> tuple[float, float]:
        return max(-self.params.half, -self.z), self.params.half

    def density(self, t):
        t = np.asarray(t, dtype=np.float64)
        k = np.clip(np.searchsorted(self.grid, t, side="right") - 1, 0, len(self.segment_density) - 1)
        s = self.z + t
        q = self.params.q
        with np.errstate(divide="ignore"):
            kern = np.where(s > 0, q * np.where(s > 0, s, 1.0) ** (q - 1.0), 0.0)
        inside = (t >= -self.params.half) & (t <= self.params.half)
        return np.where(inside, kern * self.segment_density[k], 0.0)


def _segment_density(F: GridFunction) -> np.ndarray:
    return np.maximum(-F.slopes, 0.0)


def build_density(F: GridFunction, z: float) -> DiagonalDensity:
    p = F.params
    if not (-p.half <= z <= p.half):
        raise ValueError("z must lie in [-lam/2, lam/2]")
    d = _segment_density(F)
    left, right = segment_weights(F.grid, [z], p.q)
    mass = (left[0] + right[0]) * d
    atom = float(_atom_kernel(p, z) * F.values[-1])
    return DiagonalDensity(p, float(z), F.grid, d, mass, atom)


# -- continuous extension at the right endpoint -------------------------------------


def _analytic_neg_derivative(fp: FixedPoint, player: str, t: np.ndarray) -> np.ndarray:
    """``-F_X'(t)`` from the Stieltjes derivative formula (resolves the pole at -lam/2)."""
    return -derivative_at(fp.other(player), t)


def _panels(a: float, b: float):
    return 0.5 * (b - a) * _GL_NODES + 0.5 * (b + a), 0.5 * (b - a) * _GL_WEIGHTS


def continuous_masses_near_right(fp: FixedPoint, player: str, eps) -> np.ndarray:
    """``int rho_X^z`` at ``z = lam/2 - eps`` for each ``eps``, using the analytic ``F_X'``.

    Works in ``u = t + lam/2 in [eps, lam]``: Gauss-Jacobi on ``[eps, min(2 eps, lam/2)]``
    for the kernel pole, Gauss-Legendre panels doubling in length up to
    ``lam/2``, then panels halving towards ``u = lam`` (shared by all ``eps``).
    """
    p = fp.params
    q, lam = p.q, p.lam
    mid = 0.5 * lam
    eps = np.asarray(eps, dtype=np.float64)
    if np.any(eps <= 0) or np.any(eps >= mid):
        raise ValueError("eps must lie in (0, lam/2)")
    xj, wj = special.roots_jacobi(len(_GL_NODES), 0.0, q - 1.0)
    right_u, right_w = [], []
    a = mid
    while lam - a > 1e-12 * lam:
        b = a + 0.5 * (lam - a)
        u, w = _panels(a, b)
        right_u.append(u)
        right_w.append(w)
        a = b
    right_u = np.concatenate(right_u)
    right_w = np.concatenate(right_w)
    blocks = [right_u]
    layout = []
    for e in eps:
        a = min(2.0 * e, mid)
        half_len = 0.5 * (a - e)
        us = [e + (xj + 1.0) * half_len]
        ws = [half_len**q * wj]
        while a < mid:
            b = min(2.0 * a, mid)
            u, w = _panels(a, b)
            us.append(u)
            ws.append(w * (u - e) ** (q - 1.0))
            a = b
        u = np.concatenate(us)
        blocks.append(u)
        layout.append((u.size, np.concatenate(ws)))
    phi = _analytic_neg_derivative(fp, player, np.concatenate(blocks) - mid)
    phi_right = phi[: right_u.size]
    out = np.empty(eps.size)
    pos = right_u.size
    for i, (e, (size, w)) in enumerate(zip(eps, layout)):
        tail = np.sum(right_w * (right_u - e) ** (q - 1.0) * phi_right)
        out[i] = q * (np.sum(w * phi[pos:pos + size]) + tail)
        pos += size
    return out


def continuous_mass_near_right(fp: FixedPoint, player: str, eps: float) -> float:
    return float(continuous_masses_near_right(fp, player, [eps])[0])


@dataclass
class EndpointLimit:
    """Outcome of extrapolating ``int rho^z`` as ``z -> lam/2``."""

    divergent: bool
    limit: float  # inf when divergent
    I_value: float
    eps: list = field(default_factory=list)
    masses: list = field(default_factory=list)
    ratio: float = math.nan  # last ratio of successive increments


def right_endpoint_limit(fp: FixedPoint, player: str, levels: int = 10, factor: float = 4.0,
                         divergence_ratio: float = 0.999) -> EndpointLimit:
    """Continuous extension of ``I_X`` at ``lam/2``.

    Evaluates the continuous diagonal mass on ``eps_k = lam / factor**k``.
    Increments that stop shrinking (ratio >= ``divergence_ratio``) mean the
    mass diverges and ``I = 1``; otherwise the geometric tail is summed
    (Aitken / Richardson with the observed ratio).
    """
    p = fp.params
    eps = [p.lam / factor**k for k in range(1, levels + 1)]
    masses = list(continuous_masses_near_right(fp, player, eps))
    inc = np.diff(masses)
    ratios = inc[1:] / inc[:-1]
    r = float(ratios[-1])
    atom = float(p.q * p.lam ** (p.q - 1.0) * fp.anti_cdf(player).values[-1])
    if r >= divergence_ratio or (inc[-1] > 0 and inc[-1] >= inc[-2]):
        return EndpointLimit(True, math.inf, 1.0, eps, masses, r)
    limit = masses[-1] + inc[-1] * r / (1.0 - r)
    return EndpointLimit(False, float(limit), float(limit / (atom + limit)), eps, masses, r)


# -- operators ---------------------------------------------------------------------


@dataclass
class KernelOperator:
    """Discretised ``L_X = D_X o S_X`` on the grid of a fixed point."""

    player: str
    params: Params
    grid: np.ndarray
    kernel_weights: np.ndarray  # row i: weights of kappa^{z_i} on the grid nodes
    I_values: np.ndarray
    continuous_mass: np.ndarray
    atom: np.ndarray
    right_limit: EndpointLimit | None = None

    @property
    def n(self) -> int:
        return len(self.grid) - 1

    @property
    def matrix(self) -> np.ndarray:
        return self.I_values[:, None] * self.kernel_weights

    def S(self, h: np.ndarray) -> np.ndarray:
        return self.kernel_weights @ h

    def D(self, h: np.ndarray) -> np.ndarray:
        return self.I_values * h


def I_value(fp: FixedPoint, player: str, z: float, right_limit: EndpointLimit | None = None) -> float:
    """``I_X(z)`` with its continuous extensions at both endpoints."""
    p = fp.params
    if z <= -p.half:
        return 0.0
    if z >= p.half:
        lim = right_limit or right_endpoint_limit(fp, player)
        return lim.I_value
    dens = build_density(fp.anti_cdf(player), z)
    return dens.continuous_mass / dens.total_mass


def build_operator(player: str, fp: FixedPoint, right_limit: EndpointLimit | None = None) -> KernelOperator:
    """Assemble kernel rows and ``I`` for player ``"A"`` or ``"B"``.

    Interior rows integrate ``rho^z`` against the hat basis exactly. The row
    at ``-lam/2`` (where ``I = 0``) is the limit point mass at ``lam/2``;
    the row at ``lam/2`` is the limit point mass at ``-lam/2`` when the
    diagonal mass diverges there, and the grid row otherwise.
    """
    if player not in ("A", "B"):
        raise ValueError("player must be 'A' or 'B'")
    F = fp.anti_cdf(player)
    p = fp.params
    disc = discretization_for(F)
    d = _segment_density(F)
    raw = hat_matrix(disc.left * d, disc.right * d)
    mass = raw.sum(axis=1)
    atom = _atom_kernel(p, disc.grid) * F.values[-1]
    n = disc.n
    with np.errstate(invalid="ignore", divide="ignore"):
        kappa = raw / mass[:, None]
        I = mass / (atom + mass)
    bad = ~(mass > 0)
    kappa[bad] = 0.0
    kappa[bad, n] = 1.0
    I[bad] = 0.0
    kappa[0] = 0.0
    kappa[0, n] = 1.0
    I[0] = 0.0
    lim = right_limit or right_endpoint_limit(fp, player)
    I[n] = lim.I_value
    if lim.divergent:
        kappa[n] = 0.0
        kappa[n, 0] = 1.0
        mass[n] = np.inf
    else:
        mass[n] = lim.limit
    dev = np.abs(kappa.sum(axis=1) - 1.0).max()
    if dev > ROW_SUM_TOL or np.any(kappa < 0):
        raise ArithmeticError(f"kernel row normalisation failed (max deviation {dev:.2e})")
    return KernelOperator(player, p, disc.grid.copy(), kappa, I, mass, atom, lim)


def _values(K: KernelOperator, h) -> np.ndarray:
    if isinstance(h, GridFunction):
        if h.grid.shape != K.grid.shape or not np.array_equal(h.grid, K.grid):
            raise ValueError("grid mismatch between operator and function")
        return h.values
    h = np.asarray(h, dtype=np.float64)
    if h.shape != K.grid.shape:
        raise ValueError("grid mismatch between operator and function")
    return h


def apply_operator(K: KernelOperator, h) -> GridFunction:
    """``L(h) = D(S(h))``."""
    return GridFunction(K.params, K.grid, K.D(K.S(_values(K, h))))


def compose_norm(K_B: KernelOperator, K_A: KernelOperator) -> float:
    """``||L_B o L_A||`` in the sup norm, i.e. ``sup (L_B o L_A)(1)`` for positive operators."""
    if not np.array_equal(K_A.grid, K_B.grid):
        raise ValueError("operators live on different grids")
    ones = np.ones_like(K_A.grid)
    return float(np.max(K_B.D(K_B.S(K_A.D(K_A.S(ones))))))


def marginal_J(z, player: str, fp: FixedPoint):
    """Total ``mu_X`` mass of the diagonal ``ell - f = z`` (continuous part plus atom).

    Valid for ``z`` in [-lam/2, 3 lam/2]; edge costs are capped at ``lam``.
    At ``z = -lam/2`` the atom term is infinite for ``q < 1``.
    """
    cont = continuous_J(z, player, fp)
    p = fp.params
    zz = np.atleast_1d(np.asarray(z, dtype=np.float64))
    F = fp.anti_cdf(player)
    atom = np.where(zz <= p.half, _atom_kernel(p, np.minimum(zz, p.half)) * F.values[-1], 0.0)
    out = cont + atom
    return float(out[0]) if np.ndim(z) == 0 else out


def continuous_J(z, player: str, fp: FixedPoint):
    """Continuous part of :func:`marginal_J`."""
    p = fp.params
    zz = np.atleast_1d(np.asarray(z, dtype=np.float64))
    if np.any(zz < -p.half - 1e-12) or np.any(zz > 3 * p.half + 1e-12):
        raise ValueError("z must lie in [-lam/2, 3*lam/2]")
    F = fp.anti_cdf(player)
    left, right = segment_weights(F.grid, zz, p.q, s_max=p.lam)
    out = (left + right) @ _segment_density(F)
    return float(out[0]) if np.ndim(z) == 0 else out


def diag_envelope(params: Params, z):
    """``max((z+lam/2)^(2q-1), |z-lam/2|^(q-1))``."""
    z = np.asarray(z, dtype=np.float64)
    q = params.q
    with np.errstate(divide="ignore"):
        a = np.abs(z + params.half) ** (2 * q - 1)
        b = np.abs(z - params.half) ** (q - 1)
    return np.maximum(a, b)


def tail_envelope(params: Params, z):
    """``(z+lam/2)^(q-1) + |z-lam/2|^(q-1)``, the integrand used for the tail factor."""
    z = np.asarray(z, dtype=np.float64)
    q = params.q
    with np.errstate(divide="ignore"):
        return np.abs(z + params.half) ** (q - 1) + np.abs(z - params.half) ** (q - 1)


def empirical_alpha(fp: FixedPoint, player: str, z=None, total: bool = False) -> float:
    """Sup of the diagonal mass over its envelope on a z-sweep.

    With ``total=False`` the continuous mass is compared to
    :func:`diag_envelope`; with ``total=True`` the full marginal (atom
    included) is compared to :func:`tail_envelope`.
    """
    p = fp.params
    if z is None:
        z = np.linspace(-p.half, 3 * p.half, 801)[1:]
        z = z[np.abs(z - p.half) > 1e-12]
    if total:
        return float(np.max(marginal_J(z, player, fp) / tail_envelope(p, z)))
    return float(np.max(continuous_J(z, player, fp) / diag_envelope(p, z)))


# -- Neumann majorant ----------------------------------------------------------------


def _tail_integral(params: Params, m: float, z: float) -> float:
    """``int_z^inf [(x+lam/2)^(q-1) + |x-lam/2|^(q-1)] exp(m (z-x)) dx``."""
    q, h = params.q, params.half
    c = z + h
    d = h - z
    total = 0.0
    # first term, y = x - z >= 0
    if c == 0.0:
        total += math.gamma(q) * m ** (-q)
    else:
        total += integrate.quad(lambda y: (y + c) ** (q - 1) * math.exp(-m * y), 0, np.inf, limit=200)[0]
    # second term, pole at y = d
    if d > 0:
        total += integrate.quad(lambda y: math.exp(-m * y), 0, d, weight="alg", wvar=(0.0, q - 1.0))[0]
        total += math.gamma(q) * m ** (-q) * math.exp(-m * d)
    else:
        total += integrate.quad(lambda y: (y - d) ** (q - 1) * math.exp(-m * y), 0, np.inf, limit=200)[0]
    return total


def tail_factor(params: Params, m: float, alpha: float, norm: float, z=None) -> float:
    """Numerical ``eps_m = alpha / (1 - norm) * sup_z int_z^inf envelope(x) e^{m(z-x)} dx``."""
    if z is None:
        z = np.linspace(-params.half, params.half, 41)
    worst = max(_tail_integral(params, m, float(zz)) for zz in z)
    return alpha / (1.0 - norm) * worst


def choose_m(params: Params, alpha: float, norm: float, ladder=(1, 2, 4, 8, 16),
             max_doublings: int = 16) -> tuple[float, float]:
    """Smallest ``m`` on ``ladder / lam`` (extended by doubling) with ``eps_m < 1/2``."""
    steps = [c / params.lam for c in ladder]
    m = steps[-1]
    for _ in range(max_doublings):
        m *= 2.0
        steps.append(m)
    for m in steps:
        eps = tail_factor(params, m, alpha, norm)
        if eps < 0.5:
            return m, eps
    raise ArithmeticError("no m on the ladder brings the tail factor below 1/2")


def neumann_series(K_B: KernelOperator, K_A: KernelOperator, tol: float = 1e-15,
                   max_terms: int = 100000) -> np.ndarray:
    """``sum_k (L_B o L_A)^k (1)`` summed until the increment's sup norm is below ``tol``."""
    if compose_norm(K_B, K_A) >= 1.0:
        raise ArithmeticError("||L_B o L_A|| >= 1: Neumann series diverges")
    term = np.ones_like(K_A.grid)
    total = term.copy()
    for _ in range(max_terms):
        term = K_B.D(K_B.S(K_A.D(K_A.S(term))))
        total += term
        if np.max(np.abs(term)) < tol:
            return total
    raise ArithmeticError("Neumann series did not converge within max_terms")


def default_K(params: Params) -> float:
    return 2.0 * (2.0 + params.lam**params.q)


def neumann_psi(t: float, K_B: KernelOperator, K_A: KernelOperator, K_const: float | None = None,
                m: float = 1.0, series: np.ndarray | None = None) -> GridFunction:
    """``Psi_t = K exp(m t) sum_k (L_B o L_A)^k (1)``."""
    p = K_A.params
    if not (0.0 <= t <= 2 * p.lam):
        raise ValueError("t must lie in [0, 2 lam]")
    K = default_K(p) if K_const is None else K_const
    s = neumann_series(K_B, K_A) if series is None else series
    return GridFunction(p, K_A.grid, K * math.exp(m * t) * s)
