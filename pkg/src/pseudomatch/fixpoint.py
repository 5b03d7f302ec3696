"""Piecewise-linear function calculus on [-lam/2, lam/2] and the game-value fixed point.

The map iterated here is

    V(G)(z) = exp(-int q (z+t)_+^(q-1) G(t) dt),

whose even and odd iterates from ``F_0 = 0`` converge to the anti-CDFs
``F_A`` and ``F_B`` of the root game value. All integrals against the
singular kernel ``q s^(q-1)`` are done per grid segment in closed form
(the interpolant is linear there), never by sampling the kernel.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .randomness import Params

_SERIES_R = 0.1
_SERIES_TERMS = 18
_ROW_CHUNK = 256


class FixedPointNotConverged(RuntimeError):
    def __init__(self, message, result):
        super().__init__(message)
        self.result = result


def uniform_grid(params: Params, n: int) -> np.ndarray:
    if n < 2:
        raise ValueError("grid needs at least 2 segments")
    g = np.linspace(-params.half, params.half, n + 1)
    g[0], g[-1] = -params.half, params.half
    return g


def graded_grid(params: Params, n: int, power: float | None = None) -> np.ndarray:
    """Grid clustered towards both endpoints like ``distance ** power``.

    ``power`` defaults to ``1/q`` capped at 3 (stronger grading runs into
    round-off at N in the thousands).
    """
    if n < 2 or n % 2:
        raise ValueError("graded grid needs an even number (>= 2) of segments")
    p = min(1.0 / params.q, 3.0) if power is None else float(power)
    u = np.linspace(-1.0, 1.0, n + 1)
    g = params.half * np.sign(u) * (1.0 - (1.0 - np.abs(u)) ** p)
    g[0], g[n // 2], g[-1] = -params.half, 0.0, params.half
    return g


@dataclass
class GridFunction:
    """Piecewise-linear interpolant of ``values`` on ``grid``."""

    params: Params
    grid: np.ndarray
    values: np.ndarray
    anti_cdf: bool = False

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.grid.shape != self.values.shape or self.grid.ndim != 1:
            raise ValueError("grid and values must be 1-D arrays of equal length")
        if np.any(np.diff(self.grid) <= 0):
            raise ValueError("grid must be strictly increasing")
        h = self.params.half
        if self.grid[0] != -h or self.grid[-1] != h:
            raise ValueError("grid endpoints must be exactly -lam/2 and lam/2")
        if self.anti_cdf:
            v = self.values
            if np.any(v < 0) or np.any(v > 1) or np.any(np.diff(v) > 0):
                raise ValueError("anti-CDF values must be non-increasing and within [0, 1]")

    @property
    def n(self) -> int:
        return len(self.grid) - 1

    def __call__(self, z):
        return np.interp(z, self.grid, self.values)

    @property
    def slopes(self) -> np.ndarray:
        return np.diff(self.values) / np.diff(self.grid)

    def with_values(self, values, anti_cdf=None) -> "GridFunction":
        return GridFunction(self.params, self.grid, values,
                            self.anti_cdf if anti_cdf is None else anti_cdf)

    @classmethod
    def constant(cls, params: Params, grid, c: float, anti_cdf=False) -> "GridFunction":
        grid = np.asarray(grid, dtype=np.float64)
        return cls(params, grid, np.full(grid.shape, float(c)), anti_cdf)


@dataclass
class StieltjesMeasure:
    """``dG``: segment densities ``-G'`` plus the atom of mass ``-G(lam/2)`` at ``lam/2``.

    Following the sign convention of ``dG`` for a non-increasing ``G``, both
    the continuous part and the atom are non-positive measures; ``densities``
    and ``atom_mass`` store the (non-negative) magnitudes.
    """

    base: GridFunction

    @property
    def densities(self) -> np.ndarray:
        return -self.base.slopes

    @property
    def atom_mass(self) -> float:
        return float(self.base.values[-1])


def _pow_diff(a, b, q):
    """``b**q - a**q`` for ``0 <= a <= b`` without catastrophic cancellation."""
    out = b**q
    pos = a > 0
    if np.any(pos):
        ap = a[pos]
        out[pos] = ap**q * np.expm1(q * np.log1p((b[pos] - ap) / ap))
    return out


def _series_coefficients(q):
    c = np.empty(_SERIES_TERMS + 1)
    c[0] = 0.0
    c[1] = 1.0
    for k in range(2, _SERIES_TERMS + 1):
        c[k] = c[k - 1] * (q + 2 - k) / k
    return c


def _lower_moment(a, b, q):
    """``int_a^b q s^(q-1) (b - s) ds = int_a^b (s^q - a^q) ds`` for ``0 <= a <= b``."""
    out = b ** (q + 1) / (q + 1)
    pos = a > 0
    if np.any(pos):
        ap = a[pos]
        r = (b[pos] - ap) / ap
        small = r < _SERIES_R
        p = np.empty_like(r)
        rs = r[~small]
        p[~small] = np.expm1((q + 1) * np.log1p(rs)) / (q + 1) - rs
        if np.any(small):
            c = _series_coefficients(q)
            rr = r[small]
            acc = np.zeros_like(rr)
            for k in range(_SERIES_TERMS, 1, -1):
                acc = (acc + c[k]) * rr
            p[small] = acc * rr
        out[pos] = ap ** (q + 1) * p
    return out


def segment_weights(grid, z, q: float, s_max: float = np.inf):
    """Hat-function moments of the kernel ``q (z+t)_+^(q-1)`` on every grid segment.

    Returns ``(left, right)`` of shape ``(len(z), N)``: ``left[i, k]`` is
    ``int_seg_k q (z_i+t)_+^(q-1) (t_{k+1}-t)/h_k dt`` and ``right`` the
    same with the rising hat. Their sum is the plain kernel mass of the
    segment. ``s_max`` caps ``z + t`` (used to keep edge costs <= lam).
    """
    if not q > 0:
        raise ValueError(f"q must be positive, got {q}")
    grid = np.asarray(grid, dtype=np.float64)
    z = np.atleast_1d(np.asarray(z, dtype=np.float64))
    h = np.diff(grid)
    left = np.zeros((z.size, h.size))
    right = np.zeros((z.size, h.size))
    for lo in range(0, z.size, _ROW_CHUNK):
        zc = z[lo:lo + _ROW_CHUNK, None]
        s0 = zc + grid[None, :-1]
        s1 = zc + grid[None, 1:]
        a = np.clip(s0, 0.0, s_max)
        b = np.clip(s1, 0.0, s_max)
        act = b > a
        if not act.any():
            continue
        aa, bb = a[act], b[act]
        m0 = _pow_diff(aa, bb, q)
        s1a = s1[act]
        hh = np.broadcast_to(h, s0.shape)[act]
        lw = ((s1a - bb) * m0 + _lower_moment(aa, bb, q)) / hh
        lblock = np.zeros(s0.shape)
        rblock = np.zeros(s0.shape)
        lblock[act] = lw
        rblock[act] = m0 - lw
        left[lo:lo + _ROW_CHUNK] = lblock
        right[lo:lo + _ROW_CHUNK] = rblock
    return left, right


def hat_matrix(left, right) -> np.ndarray:
    """Assemble node weights from segment hat moments."""
    w = np.zeros((left.shape[0], left.shape[1] + 1))
    w[:, :-1] += left
    w[:, 1:] += right
    return w


class Discretization:
    """Grid plus the precomputed kernel moments for ``z`` on the grid itself."""

    def __init__(self, params: Params, grid: np.ndarray):
        self.params = params
        self.grid = np.asarray(grid, dtype=np.float64)
        self.left, self.right = segment_weights(self.grid, self.grid, params.q)
        self.mass = self.left + self.right
        self.weights = hat_matrix(self.left, self.right)

    @property
    def n(self) -> int:
        return len(self.grid) - 1

    def V(self, values: np.ndarray) -> np.ndarray:
        return np.exp(-(self.weights @ values))


@lru_cache(maxsize=8)
def _cached_discretization(q, lam, grid_bytes):
    return Discretization(Params(q, lam), np.frombuffer(grid_bytes, dtype=np.float64).copy())


def discretization_for(G: GridFunction) -> Discretization:
    return _cached_discretization(G.params.q, G.params.lam, G.grid.tobytes())


def _atom_kernel(params: Params, z):
    """``q (z + lam/2)^(q-1)`` with the value ``inf`` at ``z = -lam/2`` when ``q < 1``."""
    s = np.asarray(z, dtype=np.float64) + params.half
    with np.errstate(divide="ignore"):
        return np.where(s > 0, params.q * np.where(s > 0, s, 1.0) ** (params.q - 1.0),
                        np.inf if params.q < 1 else 1.0)


def _check_z(params: Params, z: np.ndarray) -> None:
    if np.any(z < -params.half - 1e-12) or np.any(z > 3 * params.half + 1e-12):
        raise ValueError("z must lie in [-lam/2, 3*lam/2]")


def _against_dG(G: GridFunction, z, left, right):
    g_end = G.values[-1]
    atom = _atom_kernel(G.params, z) * g_end if g_end != 0 else np.zeros_like(z)
    return (left + right) @ G.slopes - atom


def kernel_integral(G: GridFunction, z, mode: str = "G"):
    """``int q (z+t)_+^(q-1) G(t) dt`` (``mode="G"``) or ``int q (z+t)_+^(q-1) dG(t)`` (``mode="dG"``).

    ``z`` may lie anywhere in [-lam/2, 3*lam/2]. In ``"dG"`` mode the atom
    of ``dG`` at ``lam/2`` contributes ``-q (z+lam/2)^(q-1) G(lam/2)``.
    """
    if mode not in ("G", "dG"):
        raise ValueError(f"unknown mode {mode!r}")
    scalar = np.ndim(z) == 0
    z = np.atleast_1d(np.asarray(z, dtype=np.float64))
    _check_z(G.params, z)
    left, right = segment_weights(G.grid, z, G.params.q)
    if mode == "G":
        out = hat_matrix(left, right) @ G.values
    else:
        out = _against_dG(G, z, left, right)
    return float(out[0]) if scalar else out


def apply_V(G: GridFunction) -> GridFunction:
    disc = discretization_for(G)
    return G.with_values(disc.V(G.values), anti_cdf=True)


def V_at(G: GridFunction, z):
    """``V(G)`` at arbitrary points (not only grid nodes)."""
    return np.exp(-kernel_integral(G, z, "G"))


def derivative_at(G: GridFunction, z, VG=None):
    """Analytic ``d/dz V(G)(z) = V(G)(z) * int q (z+t)_+^(q-1) dG(t)`` at arbitrary ``z``."""
    scalar = np.ndim(z) == 0
    z = np.atleast_1d(np.asarray(z, dtype=np.float64))
    _check_z(G.params, z)
    left, right = segment_weights(G.grid, z, G.params.q)
    vz = np.exp(-(hat_matrix(left, right) @ G.values)) if VG is None else VG
    with np.errstate(invalid="ignore"):
        out = vz * _against_dG(G, z, left, right)
    return float(out[0]) if scalar else out


def derivative_of_V(G: GridFunction, VG: GridFunction) -> GridFunction:
    """Derivative of ``VG = V(G)`` on the grid, from the Stieltjes form.

    For ``q < 1`` the endpoint values are singular and are stored as NaN;
    only interior nodes carry data.
    """
    vals = derivative_at(G, G.grid, VG.values)
    if G.params.q < 1:
        vals = vals.copy()
        vals[0] = vals[-1] = np.nan
    return G.with_values(vals, anti_cdf=False)


@dataclass
class FixedPoint:
    params: Params
    F_A: GridFunction
    F_B: GridFunction
    history: list = field(default_factory=list)  # sup|F_k - F_{k-2}| for k = 2, 3, ...
    iterations: int = 0
    converged: bool = False
    tol: float = 1e-8

    @property
    def grid(self) -> np.ndarray:
        return self.F_A.grid

    @property
    def residual(self) -> float:
        """``max(sup|V(F_B) - F_A|, sup|V(F_A) - F_B|)``."""
        disc = discretization_for(self.F_A)
        return float(max(np.abs(disc.V(self.F_B.values) - self.F_A.values).max(),
                         np.abs(disc.V(self.F_A.values) - self.F_B.values).max()))

    def derivative(self, player: str) -> GridFunction:
        """``F'_A`` (from ``V(F_B)``) or ``F'_B`` (from ``V(F_A)``)."""
        if player == "A":
            return derivative_of_V(self.F_B, self.F_A)
        if player == "B":
            return derivative_of_V(self.F_A, self.F_B)
        raise ValueError("player must be 'A' or 'B'")

    def anti_cdf(self, player: str) -> GridFunction:
        return {"A": self.F_A, "B": self.F_B}[player]

    def other(self, player: str) -> GridFunction:
        return {"A": self.F_B, "B": self.F_A}[player]


def fixpoint_iterates(params: Params, grid: np.ndarray):
    """Yield ``F_0 = 0, F_1 = V(F_0), F_2 = V(F_1), ...`` as value arrays."""
    disc = _cached_discretization(params.q, params.lam, np.asarray(grid, np.float64).tobytes())
    f = np.zeros(disc.n + 1)
    yield f
    while True:
        f = disc.V(f)
        yield f


def iterate_fixpoint(
    params: Params,
    N: int = 2048,
    tol: float = 1e-8,
    max_iter: int = 500,
    grid: np.ndarray | None = None,
    raise_on_failure: bool = True,
) -> FixedPoint:
    """Iterate ``F_{k+1} = V(F_k)`` from ``F_0 = 0`` until both parities settle.

    Stops once ``sup|F_k - F_{k-2}| < tol`` for two consecutive ``k`` (one
    even, one odd). ``F_A`` is the last even iterate and ``F_B`` the last odd one.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    grid = uniform_grid(params, N) if grid is None else np.asarray(grid, dtype=np.float64)
    prev = []
    history = []
    converged = False
    k = -1
    for k, f in enumerate(fixpoint_iterates(params, grid)):
        if len(prev) == 2:
            history.append(float(np.abs(f - prev[0]).max()))
        prev = (prev + [f])[-2:]
        if len(history) >= 2 and history[-1] < tol and history[-2] < tol:
            converged = True
            break
        if k >= max_iter:
            break
    even, odd = (prev[1], prev[0]) if k % 2 == 0 else (prev[0], prev[1])
    fp = FixedPoint(
        params=params,
        F_A=GridFunction(params, grid, np.clip(even, 0.0, 1.0), anti_cdf=True),
        F_B=GridFunction(params, grid, np.clip(odd, 0.0, 1.0), anti_cdf=True),
        history=history,
        iterations=k,
        converged=converged,
        tol=tol,
    )
    if not converged and raise_on_failure:
        raise FixedPointNotConverged(
            f"fixed point not converged after {k} iterations, last gap {history[-1]:.3e}", fp)
    return fp


def bound_profile(params: Params, z) -> np.ndarray:
    """``g(z) = (lam/2 - |z|)_+^(q-1)``."""
    d = params.half - np.abs(np.asarray(z, dtype=np.float64))
    with np.errstate(divide="ignore"):
        return np.where(d > 0, np.where(d > 0, d, 1.0) ** (params.q - 1.0), np.inf)


def derivative_bound_ratio(Fprime: GridFunction) -> float:
    """``sup`` over interior nodes of ``-F'(z) / g(z)``."""
    z = Fprime.grid[1:-1]
    return float(np.max(-Fprime.values[1:-1] / bound_profile(Fprime.params, z)))


def verify_derivative_bound(
    Fprime: GridFunction, params: Params, refined: GridFunction | None = None, rel_tol: float = 0.05
) -> tuple[float, bool]:
    """Empirical constant ``a_hat`` in ``-F'(z) <= a_hat (lam/2-|z|)^(q-1)``.

    Passes when ``a_hat`` is finite and, if a derivative from a doubled
    grid is supplied, the two estimates agree within ``rel_tol``.
    """
    a_hat = derivative_bound_ratio(Fprime)
    ok = bool(np.isfinite(a_hat))
    if refined is not None:
        a_fine = derivative_bound_ratio(refined)
        ok = ok and np.isfinite(a_fine) and abs(a_fine - a_hat) <= rel_tol * abs(a_fine)
    return a_hat, ok
