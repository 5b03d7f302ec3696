"""Random game trees, extremal valuations, game play and reasonable subtrees.

Trees live in flat arrays built level by level, so the children of any node
occupy a contiguous index range and each level is a contiguous block. Two
samplers are provided: the plain edge-weighted Galton-Watson tree, and the
labelled tree that draws each node's game value first and generates the
offspring conditionally on it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .fixpoint import FixedPoint, GridFunction, _atom_kernel, segment_weights
from .randomness import Params, SeedSpec, arrival_times, derive_stream, uniform_open

DELTA_TOL = 1e-9
DEFAULT_NODE_CAP = 10**6


@dataclass
class GameTree:
    """Arena of nodes; node 0 is the root.

    ``expanded[i]`` is False for truncation-frontier nodes whose offspring
    were never generated. An expanded node without children is a true leaf.
    """

    params: Params
    parent: np.ndarray
    cost: np.ndarray  # cost of the edge to the parent (0 at the root)
    depth: np.ndarray
    first_child: np.ndarray
    n_children: np.ndarray
    expanded: np.ndarray
    depth_cap: int
    node_cap_hit: bool = False
    labels: dict = field(default_factory=dict)

    @property
    def size(self) -> int:
        return len(self.parent)

    @property
    def frontier(self) -> np.ndarray:
        return ~self.expanded

    def children(self, u: int) -> range:
        s = int(self.first_child[u])
        return range(s, s + int(self.n_children[u]))

    def level_bounds(self) -> np.ndarray:
        """``bounds[d]:bounds[d+1]`` is the index range of depth ``d``."""
        return np.searchsorted(self.depth, np.arange(int(self.depth.max()) + 2))

    def truncate(self, depth: int) -> "GameTree":
        """Copy keeping depths ``<= depth``; expanded nodes at the cut become frontier."""
        keep = int(np.searchsorted(self.depth, depth, side="right"))
        expanded = self.expanded[:keep].copy()
        n_children = self.n_children[:keep].copy()
        cut = (self.depth[:keep] == depth) & (n_children > 0)
        expanded[cut] = False
        n_children[self.depth[:keep] == depth] = 0
        return GameTree(
            self.params,
            self.parent[:keep].copy(),
            self.cost[:keep].copy(),
            self.depth[:keep].copy(),
            self.first_child[:keep].copy(),
            n_children,
            expanded,
            min(depth, self.depth_cap),
            self.node_cap_hit,
            {k: v[:keep].copy() for k, v in self.labels.items()},
        )


class _Builder:
    def __init__(self, params: Params):
        self.params = params
        self.parent = [np.array([-1], dtype=np.int64)]
        self.cost = [np.zeros(1)]
        self.depth = [np.zeros(1, dtype=np.int64)]
        self.labels: dict[str, list] = {}
        self.count = 1

    def add_level(self, parents, costs, d):
        self.parent.append(np.asarray(parents, dtype=np.int64))
        self.cost.append(np.asarray(costs, dtype=np.float64))
        self.depth.append(np.full(len(parents), d, dtype=np.int64))
        self.count += len(parents)

    def finish(self, expanded, depth_cap, cap_hit, labels=None) -> GameTree:
        parent = np.concatenate(self.parent)
        n = len(parent)
        n_children = np.bincount(parent[1:], minlength=n).astype(np.int64)
        first_child = np.ones(n, dtype=np.int64)
        first_child[1:] += np.cumsum(n_children)[:-1]
        return GameTree(self.params, parent, np.concatenate(self.cost), np.concatenate(self.depth),
                        first_child, n_children, expanded, depth_cap, cap_hit, labels or {})


def _group_sort(owner: np.ndarray, values: np.ndarray):
    order = np.lexsort((values, owner))
    return owner[order], values[order], order


def sample_tree(params: Params, depth_cap: int, rng: np.random.Generator,
                node_cap: int = DEFAULT_NODE_CAP) -> GameTree:
    """Galton-Watson tree with Poisson(``q t^(q-1)`` on [0, lam]) offspring, to ``depth_cap``.

    If generating the next level would exceed ``node_cap`` the current
    level is left unexpanded and ``node_cap_hit`` is set.
    """
    if depth_cap < 0 or node_cap < 1:
        raise ValueError("depth_cap must be >= 0 and node_cap >= 1")
    b = _Builder(params)
    expanded = [np.zeros(1, dtype=bool)]
    level = np.array([0], dtype=np.int64)
    cap_hit = False
    for d in range(1, depth_cap + 1):
        if level.size == 0:
            break
        counts = rng.poisson(params.mean_offspring, size=level.size)
        total = int(counts.sum())
        if b.count + total > node_cap:
            cap_hit = True
            break
        expanded[-1][:] = True
        owner = np.repeat(level, counts)
        owner, costs, _ = _group_sort(owner, arrival_times(params, total, rng))
        start = b.count
        b.add_level(owner, costs, d)
        level = np.arange(start, start + total, dtype=np.int64)
        expanded.append(np.zeros(total, dtype=bool))
    return b.finish(np.concatenate(expanded), depth_cap, cap_hit)


# -- valuations ----------------------------------------------------------------------


def _back_propagate(tree: GameTree, frontier_values: np.ndarray) -> np.ndarray:
    half = tree.params.half
    h = np.where(tree.expanded, half, frontier_values)
    bounds = tree.level_bounds()
    for d in range(len(bounds) - 3, -1, -1):
        lo, hi = bounds[d], bounds[d + 1]
        clo, chi = bounds[d + 1], bounds[d + 2]
        if chi == clo:
            continue
        vals = tree.cost[clo:chi] - h[clo:chi]
        nc = tree.n_children[lo:hi]
        has = np.flatnonzero(nc > 0)
        if has.size == 0:
            continue
        starts = tree.first_child[lo:hi][has] - clo
        best = np.minimum.reduceat(vals, starts)
        h[lo + has] = np.minimum(half, best)
    return h


def extremal_valuations(tree: GameTree) -> tuple[np.ndarray, np.ndarray]:
    """The two extreme valuations ``(f_A, f_B)`` compatible with the truncation.

    Frontier nodes are pinned to ``-lam/2`` or ``+lam/2`` by depth parity so
    that ``f_A <= f_B`` at even depth and ``f_A >= f_B`` at odd depth;
    true leaves always get ``lam/2``. The results are also stored in
    ``tree.labels``.
    """
    half = tree.params.half
    even = tree.depth % 2 == 0
    f_A = _back_propagate(tree, np.where(even, -half, half))
    f_B = _back_propagate(tree, np.where(even, half, -half))
    tree.labels["f_A"] = f_A
    tree.labels["f_B"] = f_B
    return f_A, f_B


def root_gap(tree: GameTree) -> float:
    """``f_B(root) - f_A(root) >= 0``; zero iff the truncation pins the root value."""
    if "f_A" not in tree.labels:
        extremal_valuations(tree)
    return float(tree.labels["f_B"][0] - tree.labels["f_A"][0])


def delta_labels(tree: GameTree, f_A: np.ndarray | None = None) -> np.ndarray:
    """``delta(v) = cost(u, v) - f_A(u) - f_A(v)`` for every non-root ``v`` (root gets 0)."""
    f = tree.labels["f_A"] if f_A is None else np.asarray(f_A, dtype=np.float64)
    delta = np.zeros(tree.size)
    delta[1:] = tree.cost[1:] - f[tree.parent[1:]] - f[1:]
    tree.labels["delta"] = delta
    return delta


# -- game play ------------------------------------------------------------------------


@dataclass
class GameRecord:
    path: list  # node indices from the root
    payoff_L: float  # Alice's total payoff
    delta_sum: float
    terminator: str  # "Alice", "Bob", or "frontier" for an incomplete game
    complete: bool


def play_game(tree: GameTree, f_A: np.ndarray | None = None, f_B: np.ndarray | None = None) -> GameRecord:
    """Alice plays f_A-optimally from even depth, Bob f_B-optimally from odd depth.

    A player quits when their valuation of the current node is ``lam/2``.
    Reaching an unexpanded frontier node ends the record as incomplete.
    """
    fa = tree.labels["f_A"] if f_A is None else f_A
    fb = tree.labels["f_B"] if f_B is None else f_B
    delta = tree.labels.get("delta")
    if delta is None:
        delta = delta_labels(tree, fa)
    half = tree.params.half
    u = 0
    path = [0]
    L = 0.0
    dsum = 0.0
    while True:
        alice = tree.depth[u] % 2 == 0
        if not tree.expanded[u]:
            return GameRecord(path, L, dsum, "frontier", False)
        f = fa if alice else fb
        if f[u] >= half:
            L += -half if alice else half
            return GameRecord(path, L, dsum, "Alice" if alice else "Bob", True)
        kids = np.arange(tree.first_child[u], tree.first_child[u] + tree.n_children[u])
        v = int(kids[np.argmin(tree.cost[kids] - f[kids])])
        L += -tree.cost[v] if alice else tree.cost[v]
        dsum += delta[v]
        path.append(v)
        u = v


# -- labelled tree ----------------------------------------------------------------------


def sample_values(F: GridFunction, rng: np.random.Generator, size: int,
                  lo: float | None = None, hi: float | None = None) -> np.ndarray:
    """Draws from the law with anti-CDF ``F`` (atom ``F(lam/2)`` at ``lam/2``) by inversion.

    With ``lo``/``hi`` the draw is conditioned on ``lo <= X <= hi``.
    """
    h = F.params.half
    top = 1.0 if lo is None or lo <= -h else float(F(lo))
    bottom = 0.0 if hi is None or hi >= h else float(F(hi))
    if not top > bottom:
        raise ValueError("conditioning interval has zero probability")
    u = bottom + (top - bottom) * uniform_open(rng, size)
    out = np.interp(u, F.values[::-1], F.grid[::-1])
    out[u <= F.values[-1]] = h
    return out


@dataclass
class _DiagonalTable:
    masses: np.ndarray  # (n_z, N) continuous diagonal mass per segment
    atom: np.ndarray  # (n_z,)


def _diagonal_table(F: GridFunction, z: np.ndarray) -> _DiagonalTable:
    d = np.maximum(-F.slopes, 0.0)
    left, right = segment_weights(F.grid, z, F.params.q)
    with np.errstate(invalid="ignore"):
        atom = np.where(z > -F.params.half, _atom_kernel(F.params, z) * F.values[-1], np.inf)
    return _DiagonalTable((left + right) * d, atom)


def _sample_on_segment(grid, k, z, q, rng) -> float:
    a = max(0.0, z + grid[k])
    b = z + grid[k + 1]
    s = (a**q + uniform_open(rng) * (b**q - a**q)) ** (1.0 / q)
    return float(np.clip(s - z, grid[k], grid[k + 1]))


def _offspring(fp: FixedPoint, player: str, z: float, masses: np.ndarray, atom: float,
               rng: np.random.Generator):
    """Offspring points ``(cost, label)`` of a node with label ``z`` under ``mu_player``."""
    p = fp.params
    F = fp.anti_cdf(player)
    n = int(rng.poisson(p.mean_offspring))
    ell = arrival_times(p, n, rng)
    f = sample_values(F, rng, n)
    keep = ell - f > z
    ell, f = list(ell[keep]), list(f[keep])
    if z < p.half:
        cont = float(masses.sum())
        total = cont + atom
        if total > 0 and uniform_open(rng) * total < cont:
            cdf = np.cumsum(masses)
            k = int(min(np.searchsorted(cdf, uniform_open(rng) * cdf[-1], side="right"), len(masses) - 1))
            t = _sample_on_segment(F.grid, k, z, p.q, rng)
        else:
            t = p.half
        ell.append(z + t)
        f.append(t)
    return np.asarray(ell), np.asarray(f)


def sample_labeled_tree(fp: FixedPoint, depth_cap: int, rng: np.random.Generator,
                        root_label: float | None = None, budget: float | None = None,
                        node_cap: int = DEFAULT_NODE_CAP) -> GameTree:
    """Tree built from the root's game value downwards, carrying ``f_A`` labels.

    Each node with label ``z`` gets the points of a Poisson measure on
    ``{cost - label > z}`` plus one point on the diagonal ``cost - label = z``
    (drawn from the normalised diagonal marginal, whose atom sits at label
    ``lam/2``). Even-depth nodes use the ``B`` measures, odd-depth nodes
    the ``A`` measures. A node labelled ``lam/2`` has no diagonal point.

    With ``budget`` only the reasonable subtree is generated: a child is
    kept iff its cumulative ``delta`` stays within ``budget`` and moves out
    of even nodes have ``delta = 0``.
    """
    if depth_cap < 0:
        raise ValueError("depth_cap must be >= 0")
    p = fp.params
    if root_label is None:
        root_label = float(sample_values(fp.F_A, rng, 1)[0])
    b = _Builder(p)
    labels = [np.array([root_label])]
    cum = [np.zeros(1)]
    deltas = [np.zeros(1)]
    expanded = [np.zeros(1, dtype=bool)]
    level = np.array([0], dtype=np.int64)
    cap_hit = False
    for d in range(1, depth_cap + 1):
        if level.size == 0:
            break
        player = "B" if (d - 1) % 2 == 0 else "A"
        zs = labels[-1]
        table = _diagonal_table(fp.anti_cdf(player), zs)
        owners, costs, labs, dl, cl = [], [], [], [], []
        for i, u in enumerate(level):
            ell, f = _offspring(fp, player, float(zs[i]), table.masses[i], float(table.atom[i]), rng)
            delta = ell - zs[i] - f
            delta[np.abs(delta) <= DELTA_TOL] = 0.0
            c = cum[-1][i] + delta
            if budget is not None:
                ok = c <= budget
                if (d - 1) % 2 == 0:
                    ok &= delta == 0.0
                ell, f, delta, c = ell[ok], f[ok], delta[ok], c[ok]
            order = np.argsort(ell, kind="stable")
            owners.append(np.full(len(ell), u, dtype=np.int64))
            costs.append(ell[order])
            labs.append(f[order])
            dl.append(delta[order])
            cl.append(c[order])
        total = sum(len(o) for o in owners)
        if b.count + total > node_cap:
            cap_hit = True
            break
        expanded[-1][:] = True
        start = b.count
        b.add_level(np.concatenate(owners), np.concatenate(costs), d)
        labels.append(np.concatenate(labs))
        deltas.append(np.concatenate(dl))
        cum.append(np.concatenate(cl))
        expanded.append(np.zeros(total, dtype=bool))
        level = np.arange(start, start + total, dtype=np.int64)
    tree = b.finish(np.concatenate(expanded), depth_cap, cap_hit)
    tree.labels["f_A"] = np.concatenate(labels)
    tree.labels["delta"] = np.concatenate(deltas)
    return tree


def expected_offdiagonal_count(fp: FixedPoint, player: str, z: float) -> float:
    """``mu_player({cost - label > z})`` for a parent label ``z`` in [-lam/2, lam/2]."""
    from .fixpoint import kernel_integral

    p = fp.params
    return p.mean_offspring - float(kernel_integral(fp.anti_cdf(player), z))


# -- reasonable subtrees -------------------------------------------------------------


@dataclass
class ReasonableTree:
    nodes: np.ndarray
    edges: int  # |Delta| counts edges
    frontier_hit: bool  # an unexpanded node inside the depth range: size is a lower bound


def reasonable_tree(tree: GameTree, u: int, t: float, k: int) -> ReasonableTree:
    """``Delta^k_t(u)``: union of paths from ``u`` of at most ``k`` edges whose
    moves from even (relative) depth have ``delta = 0`` (within ``1e-9``) and
    whose cumulative ``delta`` is at most ``t``."""
    if tree.depth[u] % 2:
        raise ValueError("u must be at even depth")
    if t < 0 or k < 0:
        raise ValueError("t and k must be non-negative")
    delta = tree.labels.get("delta")
    if delta is None:
        delta = delta_labels(tree)
    nodes = [u]
    frontier = False
    stack = [(u, 0.0, 0)]
    while stack:
        v, c, r = stack.pop()
        if r == k:
            continue
        if not tree.expanded[v]:
            frontier = True
            continue
        s = int(tree.first_child[v])
        for w in range(s, s + int(tree.n_children[v])):
            dw = delta[w]
            if r % 2 == 0:
                if dw > DELTA_TOL:
                    continue
                dw = 0.0
            cw = c + dw
            if cw <= t:
                nodes.append(w)
                stack.append((w, cw, r + 1))
    nodes = np.sort(np.asarray(nodes, dtype=np.int64))
    return ReasonableTree(nodes, len(nodes) - 1, frontier)


@dataclass
class RBin:
    lo: float
    hi: float
    count: int
    mean: float
    ci_low: float
    ci_high: float
    frontier_hits: int

    @property
    def center(self) -> float:
        return 0.5 * (self.lo + self.hi)

    @property
    def empty(self) -> bool:
        return self.count < 10


def _summarise(lo, hi, sizes, hits=0) -> RBin:
    sizes = np.asarray(sizes, dtype=np.float64)
    n = sizes.size
    if n < 10:
        return RBin(lo, hi, n, math.nan, math.nan, math.nan, hits)
    m = float(sizes.mean())
    half = 1.96 * float(sizes.std(ddof=1)) / math.sqrt(n)
    return RBin(lo, hi, n, m, m - half, m + half, hits)


def reasonable_sizes(fp: FixedPoint, ts, ks, samples: int, seed: SeedSpec, tag: int = 0):
    """Root labels and ``|Delta^k_t(root)|`` for every ``t`` in ``ts`` and ``k`` in ``ks``.

    Each sample is one labelled tree, generated to depth ``max(ks)`` and
    pruned with budget ``max(ts)`` (which keeps every smaller ``Delta``), so
    sizes are coupled across ``t`` and ``k``. Returns ``(roots, sizes,
    frontier_hits)`` with ``sizes`` of shape ``(samples, len(ts), len(ks))``.
    """
    ts = [float(t) for t in np.atleast_1d(ts)]
    ks = [int(k) for k in np.atleast_1d(ks)]
    sizes = np.empty((samples, len(ts), len(ks)))
    roots = np.empty(samples)
    hits = 0
    for i in range(samples):
        rng = derive_stream(seed, 7, tag, i)
        tree = sample_labeled_tree(fp, max(ks), rng, budget=max(ts))
        roots[i] = tree.labels["f_A"][0]
        hits += tree.node_cap_hit
        for a, t in enumerate(ts):
            for b, k in enumerate(ks):
                res = reasonable_tree(tree, 0, t, k)
                sizes[i, a, b] = res.edges
                hits += res.frontier_hit
    return roots, sizes, hits


def bin_by_root(roots, sizes, edges, half: float) -> list[RBin]:
    """Per-bin summaries; root labels equal to ``half`` (the atom) get their own last bin."""
    edges = np.asarray(edges, dtype=np.float64)
    if edges.ndim != 1 or edges.size < 2 or np.any(np.diff(edges) <= 0):
        raise ValueError("z_bins must be increasing bin edges")
    atom = roots >= half
    out = []
    for j in range(edges.size - 1):
        lo, hi = edges[j], edges[j + 1]
        last = j == edges.size - 2
        sel = ~atom & (roots >= lo) & ((roots <= hi) if last else (roots < hi))
        out.append(_summarise(float(lo), float(hi), sizes[sel]))
    out.append(_summarise(half, half, sizes[atom]))
    return out


def estimate_R(fp: FixedPoint, t: float, k: int, z_bins, samples: int, seed: SeedSpec) -> list[RBin]:
    """Per-bin mean of ``|Delta^k_t(root)|`` given the root label, with 95% intervals.

    Root labels are drawn from ``F_A`` and binned afterwards; labels
    exactly ``lam/2`` form a final bin ``[lam/2, lam/2]``. Bins with fewer
    than 10 samples are reported empty.
    """
    if k % 2 or k < 0:
        raise ValueError("k must be even and non-negative")
    if samples < 100:
        raise ValueError("need at least 100 samples")
    roots, sizes, _ = reasonable_sizes(fp, [t], [k], samples, seed)
    return bin_by_root(roots, sizes[:, 0, 0], z_bins, fp.params.half)


# -- distribution checks -------------------------------------------------------------


def ks_against_anti_cdf(samples, F: GridFunction) -> float:
    """One-sample Kolmogorov-Smirnov distance to the law with anti-CDF ``F`` (atom at ``lam/2``)."""
    x = np.sort(np.asarray(samples, dtype=np.float64))
    n = x.size
    if n == 0:
        raise ValueError("no samples")
    h = F.params.half
    below = 1.0 - F(x)  # P(X < x)
    at = np.where(x >= h, 1.0, below)  # P(X <= x)
    e_le = np.searchsorted(x, x, side="right") / n
    e_lt = np.searchsorted(x, x, side="left") / n
    return float(max(np.max(np.abs(e_le - at)), np.max(np.abs(e_lt - below))))


def ks_two_sample(a, b) -> float:
    return float(stats.ks_2samp(a, b).statistic)


def root_values(params: Params, depth: int, samples: int, seed: SeedSpec, tag: int = 0):
    """``(f_A(root), f_B(root))`` for ``samples`` trees truncated at ``depth``."""
    fa = np.empty(samples)
    fb = np.empty(samples)
    for i in range(samples):
        tree = sample_tree(params, depth, derive_stream(seed, 11, tag, i))
        a, b = extremal_valuations(tree)
        fa[i], fb[i] = a[0], b[0]
    return fa, fb


def gap_by_depth(params: Params, depths, samples: int, seed: SeedSpec) -> dict[int, np.ndarray]:
    """Root gaps ``f_B - f_A`` for the same trees truncated at each depth in ``depths``."""
    depths = sorted(int(d) for d in depths)
    out = {d: np.empty(samples) for d in depths}
    for i in range(samples):
        tree = sample_tree(params, depths[-1], derive_stream(seed, 13, i))
        for d in depths:
            out[d][i] = root_gap(tree.truncate(d))
    return out


def depth_labels(params: Params, depth: int, level: int, trees: int, seed: SeedSpec) -> np.ndarray:
    """Midpoint ``f_A`` labels of all nodes at ``level`` in trees truncated at ``depth``."""
    out = []
    for i in range(trees):
        tree = sample_tree(params, depth, derive_stream(seed, 17, i))
        a, b = extremal_valuations(tree)
        sel = tree.depth == level
        out.append(0.5 * (a[sel] + b[sel]))
    return np.concatenate(out)


def labeled_depth_labels(fp: FixedPoint, level: int, trees: int, seed: SeedSpec) -> np.ndarray:
    """Labels of all nodes at ``level`` in labelled trees."""
    out = []
    for i in range(trees):
        tree = sample_labeled_tree(fp, level, derive_stream(seed, 19, i))
        out.append(tree.labels["f_A"][tree.depth == level])
    return np.concatenate(out)


def complete_games(params: Params, depth: int, games: int, seed: SeedSpec, max_trees: int | None = None):
    """Play on fresh trees until ``games`` complete records are collected.

    Returns ``(records, root f_A, root f_B, incomplete count)``.
    """
    max_trees = 20 * games if max_trees is None else max_trees
    records, fa, fb = [], [], []
    incomplete = 0
    for i in range(max_trees):
        if len(records) == games:
            break
        tree = sample_tree(params, depth, derive_stream(seed, 23, i))
        a, b = extremal_valuations(tree)
        delta_labels(tree)
        rec = play_game(tree)
        if not rec.complete:
            incomplete += 1
            continue
        records.append(rec)
        fa.append(a[0])
        fb.append(b[0])
    return records, np.asarray(fa), np.asarray(fb), incomplete
