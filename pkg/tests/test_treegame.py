import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, stats

from pseudomatch.randomness import Params, SeedSpec, derive_stream
from pseudomatch.treegame import (
    _Builder,
    bin_by_root,
    complete_games,
    delta_labels,
    estimate_R,
    expected_offdiagonal_count,
    extremal_valuations,
    ks_against_anti_cdf,
    ks_two_sample,
    play_game,
    reasonable_sizes,
    reasonable_tree,
    root_gap,
    sample_labeled_tree,
    sample_tree,
    sample_values,
)


def build(params, levels, expanded=None):
    """Tree from per-level ``(parents, costs)`` lists; parents must be non-decreasing."""
    b = _Builder(params)
    for d, (parents, costs) in enumerate(levels, start=1):
        b.add_level(parents, costs, d)
    n = b.count
    exp = np.ones(n, dtype=bool) if expanded is None else np.asarray(expanded, dtype=bool)
    return b.finish(exp, len(levels), False)


def recursive_value(tree, u, frontier_value):
    """Plain recursion: ``h(u) = min(lam/2, min_v cost(v) - h(v))``."""
    half = tree.params.half
    if not tree.expanded[u]:
        return frontier_value(u)
    best = half
    for v in tree.children(u):
        best = min(best, tree.cost[v] - recursive_value(tree, v, frontier_value))
    return best


def test_depth_zero_is_single_root():
    tree = sample_tree(Params(0.5, 2.0), 0, np.random.default_rng(0))
    assert tree.size == 1 and not tree.expanded[0]
    fa, fb = extremal_valuations(tree)
    assert fa[0] == -1.0 and fb[0] == 1.0


def test_offspring_counts():
    p = Params(0.5, 2.0)
    rng = np.random.default_rng(1)
    n = 10_000
    root, second = np.empty(n), np.empty(n)
    for i in range(n):
        t = sample_tree(p, 2, rng)
        root[i] = t.n_children[0]
        second[i] = np.sum(t.depth == 2)
    mu = p.lam**p.q
    assert abs(root.mean() - mu) < 3 * math.sqrt(mu / n)
    # depth-2 count is compound Poisson: variance mu^2 + mu^3
    assert abs(second.mean() - mu**2) < 4 * math.sqrt((mu**2 + mu**3) / n)


def test_children_are_sorted_and_within_range():
    p = Params(0.7, 1.5)
    tree = sample_tree(p, 5, np.random.default_rng(2))
    for u in range(tree.size):
        c = tree.cost[list(tree.children(u))]
        assert np.all(np.diff(c) >= 0) and np.all((c >= 0) & (c <= p.lam))
        assert all(tree.parent[v] == u for v in tree.children(u))


def test_single_leaf_values():
    tree = build(Params(0.5, 2.0), [])
    tree.expanded[:] = True
    fa, fb = extremal_valuations(tree)
    assert fa[0] == fb[0] == 1.0


def test_hand_built_chain():
    tree = build(Params(0.5, 2.0), [([0], [0.1]), ([1], [0.2])])
    fa, fb = extremal_valuations(tree)
    np.testing.assert_allclose(fa, [0.9, -0.8, 1.0])
    np.testing.assert_allclose(fb, fa)


def test_hand_built_quit_cap():
    # the only child is worth -1 to its owner, so moving there costs Alice 2.9 > 1
    tree = build(Params(0.5, 2.0), [([0], [1.9]), ([1], [0.0])])
    fa, _ = extremal_valuations(tree)
    assert fa[0] == 1.0
    rec = play_game(tree)
    assert rec.complete and rec.terminator == "Alice" and rec.payoff_L == -1.0 and rec.path == [0]


@given(st.integers(0, 10**6), st.integers(1, 7))
@settings(max_examples=30, deadline=None)
def test_valuations_match_recursion(seed, depth):
    p = Params(0.5, 2.0)
    tree = sample_tree(p, depth, np.random.default_rng(seed), node_cap=5000)
    fa, fb = extremal_valuations(tree)
    h = p.half
    for f, sign in ((fa, -1.0), (fb, 1.0)):
        pin = lambda u: sign * h if tree.depth[u] % 2 == 0 else -sign * h  # noqa: E731
        assert recursive_value(tree, 0, pin) == pytest.approx(f[0], abs=1e-12)


def test_parity_ordering():
    p = Params(0.5, 2.0)
    rng = np.random.default_rng(4)
    for _ in range(200):
        tree = sample_tree(p, 8, rng)
        fa, fb = extremal_valuations(tree)
        even = tree.depth % 2 == 0
        assert np.all(fa[even] <= fb[even] + 1e-12)
        assert np.all(fa[~even] >= fb[~even] - 1e-12)
        assert np.all(np.abs(fa) <= p.half) and np.all(np.abs(fb) <= p.half)
        assert root_gap(tree) >= 0


def test_gap_shrinks_with_depth():
    p = Params(0.5, 2.0)
    rng = np.random.default_rng(5)
    for _ in range(100):
        tree = sample_tree(p, 10, rng)
        gaps = [root_gap(tree.truncate(d)) for d in (2, 4, 6, 8, 10)]
        assert all(b <= a + 1e-12 for a, b in zip(gaps, gaps[1:]))


def test_delta_nonnegative_and_zero_at_argmin():
    p = Params(0.5, 2.0)
    rng = np.random.default_rng(6)
    for _ in range(1000):
        tree = sample_tree(p, 6, rng)
        fa, _ = extremal_valuations(tree)
        full = tree.expanded.copy()
        delta = delta_labels(tree)
        assert np.all(delta >= -1e-12)
        for u in np.flatnonzero(full & (tree.n_children > 0))[:5]:
            kids = list(tree.children(u))
            if fa[u] < p.half:
                assert np.min(delta[kids]) == pytest.approx(0.0, abs=1e-12)


def test_single_node_game():
    tree = build(Params(0.5, 2.0), [])
    tree.expanded[:] = True
    extremal_valuations(tree)
    rec = play_game(tree)
    assert rec.payoff_L == -1.0 and rec.delta_sum == 0.0 and rec.complete


def test_complete_games_pin_root_value():
    p = Params(0.5, 2.0)
    records, fa, fb, _ = complete_games(p, 12, 200, SeedSpec(3))
    assert len(records) == 200
    L = np.array([r.payoff_L for r in records])
    np.testing.assert_allclose(fa, -L, atol=1e-12)
    np.testing.assert_allclose(fb, -L, atol=1e-12)
    assert all(r.terminator in ("Alice", "Bob") for r in records)
    assert max(r.delta_sum for r in records) <= 2 * p.lam


def test_root_sampler_matches_anti_cdf(fp_half):
    x = sample_values(fp_half.F_A, np.random.default_rng(7), 10_000)
    assert ks_against_anti_cdf(x, fp_half.F_A) < 0.02
    atom = np.mean(x == fp_half.params.half)
    assert abs(atom - fp_half.F_A.values[-1]) < 4 * math.sqrt(atom * (1 - atom) / x.size)


def test_conditioned_sampler_stays_inside(fp_half):
    x = sample_values(fp_half.F_A, np.random.default_rng(8), 1000, lo=-0.2, hi=0.1)
    assert np.all((x >= -0.2 - 1e-12) & (x <= 0.1 + 1e-12))
    with pytest.raises(ValueError):
        sample_values(fp_half.F_A, np.random.default_rng(8), 10, lo=0.2, hi=0.1)


def test_ks_helpers():
    rng = np.random.default_rng(9)
    a, b = rng.normal(size=2000), rng.normal(size=2000)
    assert ks_two_sample(a, b) == pytest.approx(stats.ks_2samp(a, b).statistic)
    assert ks_two_sample(a, a + 3) > 0.8


@pytest.mark.parametrize("z", [-0.3, 0.0, 0.25])
def test_expected_offdiagonal_count(fp_small, z):
    # independent oracle: mu({l - f > z}) = int_0^lam q l^(q-1) P(f < l - z) dl
    p = fp_small.params
    F = fp_small.F_A
    h = p.half

    def prob_below(x):
        if x <= -h:
            return 0.0
        if x > h:
            return 1.0
        return 1.0 - float(F(x))

    # substitute u = l^q to remove the pole at l = 0; breakpoints at every kink of F
    pts = [(z + g) ** p.q for g in F.grid if 0 < z + g < p.lam]
    want, _ = integrate.quad(lambda u: prob_below(u ** (1 / p.q) - z), 0, p.mean_offspring,
                             points=pts, limit=500)
    assert expected_offdiagonal_count(fp_small, "A", z) == pytest.approx(want, rel=1e-5)


def test_labeled_offdiagonal_mean(fp_small):
    p = fp_small.params
    z = 0.0
    rng = np.random.default_rng(10)
    counts = []
    for _ in range(4000):
        tree = sample_labeled_tree(fp_small, 1, rng, root_label=z)
        kids = list(tree.children(0))
        gap = tree.cost[kids] - tree.labels["f_A"][kids] - z
        counts.append(np.sum(gap > 1e-9))
    want = expected_offdiagonal_count(fp_small, "B", z)
    assert abs(np.mean(counts) - want) < 4 * math.sqrt(want / len(counts))


def test_labeled_tree_has_one_diagonal_child(fp_small):
    rng = np.random.default_rng(11)
    for _ in range(200):
        tree = sample_labeled_tree(fp_small, 3, rng)
        f = tree.labels["f_A"]
        for u in np.flatnonzero(tree.expanded):
            kids = list(tree.children(u))
            d = tree.cost[kids] - f[kids] - f[u]
            on_diag = np.sum(np.abs(d) <= 1e-9)
            assert on_diag == (0 if f[u] >= fp_small.params.half else 1)
            assert np.all(d >= -1e-9)


def test_zero_budget_keeps_a_single_path(fp_small):
    rng = np.random.default_rng(12)
    for _ in range(100):
        tree = sample_labeled_tree(fp_small, 6, rng)
        r = reasonable_tree(tree, 0, 0.0, 6)
        # only diagonal children survive, and each node has at most one
        assert np.all(np.bincount(tree.depth[r.nodes]) == 1)


def test_budgeted_tree_matches_pruned_full_tree(fp_small):
    for i in range(50):
        full = sample_labeled_tree(fp_small, 4, derive_stream(SeedSpec(1), i))
        r = reasonable_tree(full, 0, 0.5, 4)
        assert r.edges <= full.size - 1
        pruned = sample_labeled_tree(fp_small, 4, derive_stream(SeedSpec(1), i), budget=0.5)
        assert reasonable_tree(pruned, 0, 0.5, 4).edges == pruned.size - 1


def test_game_path_inside_reasonable_tree():
    p = Params(0.5, 2.0)
    rng = np.random.default_rng(13)
    seen = 0
    for _ in range(200):
        tree = sample_tree(p, 12, rng)
        extremal_valuations(tree)
        delta_labels(tree)
        rec = play_game(tree)
        if rec.complete:
            seen += 1
            nodes = set(reasonable_tree(tree, 0, 2 * p.lam, 12).nodes.tolist())
            assert set(rec.path) <= nodes
    assert seen > 50


def test_reasonable_tree_argument_checks():
    tree = build(Params(0.5, 2.0), [([0], [0.1])])
    extremal_valuations(tree)
    with pytest.raises(ValueError):
        reasonable_tree(tree, 1, 1.0, 2)
    with pytest.raises(ValueError):
        reasonable_tree(tree, 0, -1.0, 2)


def test_sizes_monotone_in_t_and_k(fp_small):
    roots, sizes, _ = reasonable_sizes(fp_small, [0.0, 0.5, 1.0], [2, 4, 6], 60, SeedSpec(2))
    assert np.all(np.diff(sizes, axis=1) >= 0)
    assert np.all(np.diff(sizes, axis=2) >= 0)
    assert np.all(np.abs(roots) <= fp_small.params.half)


def test_atom_bin_is_zero(fp_small):
    h = fp_small.params.half
    roots, sizes, _ = reasonable_sizes(fp_small, [1.0], [4], 300, SeedSpec(3))
    bins = bin_by_root(roots, sizes[:, 0, 0], np.linspace(-h, h, 4), h)
    atom = bins[-1]
    assert atom.lo == atom.hi == h
    assert np.all(sizes[roots >= h] == 0)
    assert sum(b.count for b in bins) == roots.size


def test_estimate_R_arguments(fp_small):
    with pytest.raises(ValueError):
        estimate_R(fp_small, 1.0, 3, [-0.75, 0.75], 200, SeedSpec(1))
    with pytest.raises(ValueError):
        estimate_R(fp_small, 1.0, 2, [-0.75, 0.75], 50, SeedSpec(1))
    with pytest.raises(ValueError):
        bin_by_root(np.zeros(3), np.zeros(3), [0.5, 0.1], 0.75)


def test_truncate_semantics():
    p = Params(0.5, 2.0)
    tree = sample_tree(p, 6, np.random.default_rng(14))
    cut = tree.truncate(3)
    assert cut.depth.max() <= 3
    at = cut.depth == 3
    assert np.all(cut.n_children[at] == 0)
    np.testing.assert_array_equal(~cut.expanded[at], tree.n_children[: cut.size][at] > 0)
    assert not np.any(cut.expanded[at] & (tree.n_children[: cut.size][at] > 0))
    inner = cut.depth < 3
    np.testing.assert_array_equal(cut.n_children[inner], tree.n_children[: cut.size][inner])
