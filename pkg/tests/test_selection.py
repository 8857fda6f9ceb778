import itertools

import numpy as np
import pytest
from scipy import stats

from conftest import path_graph, random_graph, star_graph
from seaer.graph import Graph, coverage_radius, multi_source_bfs
from seaer.selection import (ExperienceBuffer, Strategy, select, select_baseline, select_degree_distance,
                             select_kcenter_greedy, select_kcenter_sampling, stratify_by_class)


def optimal_radius(g: Graph, candidates, b: int) -> int:
    return min(coverage_radius(g, candidates, list(s)) for s in itertools.combinations(candidates, b))


def connected(g: Graph) -> bool:
    return multi_source_bfs(g, [int(g.vertex_ids[0])]).reachable.all()


def random_connected_graph(rng, n_max: int) -> Graph:
    while True:
        n = int(rng.integers(2, n_max + 1))
        g = random_graph(n, float(rng.uniform(0.15, 0.6)), rng)
        if connected(g):
            return g


class TestGreedy:
    def test_budget_covers_all(self):
        assert select_kcenter_greedy(path_graph(4), [0, 2, 3], 5).tolist() == [0, 2, 3]

    def test_star_picks_center(self):
        g = star_graph(5)
        p = select_kcenter_greedy(g, range(6), 1)
        assert p.tolist() == [0]
        assert coverage_radius(g, range(6), p) == 1

    def test_ties_to_smallest_id(self):
        # path 0-1-2-3-4: start at 1 (first max degree), farthest is 4, then 3 vs... ties resolve low
        assert select_kcenter_greedy(path_graph(5), range(5), 2).tolist() == [1, 4]

    def test_empty_candidates(self):
        with pytest.raises(ValueError):
            select_kcenter_greedy(path_graph(3), [], 1)

    def test_prefers_unreachable(self):
        g = Graph.from_edges(range(4), [(0, 1), (1, 2)])
        assert 3 in select_kcenter_greedy(g, range(4), 2)

    @pytest.mark.parametrize("seed", range(40))
    def test_two_approximation(self, seed):
        rng = np.random.default_rng(seed)
        g = random_connected_graph(rng, 9)
        cand = list(range(g.num_vertices))
        for b in range(1, min(3, len(cand)) + 1):
            greedy = coverage_radius(g, cand, select_kcenter_greedy(g, cand, b))
            assert greedy <= 2 * optimal_radius(g, cand, b)

    def test_radius_monotone_in_budget(self, rng):
        g = random_connected_graph(rng, 12)
        cand = list(range(g.num_vertices))
        radii = [coverage_radius(g, cand, select_kcenter_greedy(g, cand, b)) for b in range(1, len(cand) + 1)]
        assert all(a >= c for a, c in zip(radii, radii[1:]))


class TestSampling:
    def test_single_candidate(self):
        assert select_kcenter_sampling(path_graph(3), [2], 1, seed=5).tolist() == [2]

    def test_deterministic_in_seed(self, rng):
        g = random_graph(25, 0.15, rng)
        a = select_kcenter_sampling(g, range(25), 6, seed=3)
        assert np.array_equal(a, select_kcenter_sampling(g, range(25), 6, seed=3))

    def test_symmetric_pair_chi_square(self):
        # star with two leaves: centre goes first, the leaves are interchangeable
        g = star_graph(2)
        picks = [int(select_kcenter_sampling(g, [0, 1, 2], 2, seed=s)[1]) for s in range(10_000)]
        counts = np.bincount(picks, minlength=3)[1:]
        assert stats.chisquare(counts).pvalue > 1e-3

    def test_sole_positive_mass(self):
        # every other candidate sits on the centre's component at distance 0 except one
        g = Graph.from_edges(range(3), [(0, 1), (1, 2)])
        for s in range(50):
            assert select_kcenter_sampling(g, [1, 2], 2, seed=s).tolist() == [1, 2]

    def test_unreachable_still_selectable(self):
        g = Graph.from_edges(range(5), [(0, 1), (1, 2), (2, 3)])
        hits = sum(4 in select_kcenter_sampling(g, range(5), 2, seed=s) for s in range(300))
        assert hits > 0


class TestDegreeDistance:
    def test_odds_one_to_three(self):
        # candidates 0 (degree 1) and 1 (degree 3) only, b = 1: first draw is degree-proportional
        g = Graph.from_edges(range(6), [(0, 2), (1, 3), (1, 4), (1, 5)])
        n = 10_000
        hits = sum(int(select_degree_distance(g, [0, 1], 1, seed=s)[0]) == 1 for s in range(n))
        assert abs(hits / n - 0.75) < 4 * np.sqrt(0.75 * 0.25 / n)

    def test_zero_distance_never_reselected(self):
        g = path_graph(4)
        for s in range(50):
            p = select_degree_distance(g, range(4), 3, seed=s)
            assert len(set(p.tolist())) == 3

    def test_full_budget(self):
        assert select_degree_distance(path_graph(4), range(4), 4).tolist() == [0, 1, 2, 3]


class TestBaselines:
    def test_top_degree_star(self):
        assert select_baseline("top_degree", star_graph(4), range(5), 1).tolist() == [0]

    def test_top_degree_ties(self):
        assert select_baseline("top_degree", path_graph(5), range(5), 2).tolist() == [1, 2]

    def test_full_budget(self):
        assert select_baseline("random", path_graph(3), range(3), 3).tolist() == [0, 1, 2]

    def test_random_uniform_inclusion(self):
        g = path_graph(10)
        n = 10_000
        counts = np.zeros(10)
        for s in range(n):
            counts[select_baseline(Strategy.RANDOM, g, range(10), 3, seed=s)] += 1
        p = 0.3
        assert np.all(np.abs(counts / n - p) < 4 * np.sqrt(p * (1 - p) / n))

    def test_representation_needs_embeddings(self):
        with pytest.raises(ValueError, match="embeddings"):
            select_baseline("representation", path_graph(3), range(3), 1)

    def test_representation_picks_central_per_class(self):
        g = path_graph(6)
        emb = np.array([[0.0], [1.0], [2.0], [10.0], [11.0], [15.0]])
        labels = np.array([0, 0, 0, 1, 1, 1])
        # class means 1.0 and 12.0: closest are vertex 1 and vertex 4 (11 vs 10 is |1| vs |2|)
        p = select_baseline("representation", g, range(6), 2, embeddings=emb, labels=labels)
        assert p.tolist() == [1, 4]

    def test_not_a_baseline(self):
        with pytest.raises(ValueError):
            select_baseline("kcenter_greedy", path_graph(3), range(3), 1)


class TestStratify:
    def test_two_classes(self):
        assert stratify_by_class(range(6), [0, 0, 0, 1, 1, 1], 4) == {0: 2, 1: 2}

    def test_three_classes_remainder_to_low_ids(self):
        assert stratify_by_class(range(9), [0, 1, 2] * 3, 4) == {0: 2, 1: 1, 2: 1}

    def test_too_small(self):
        with pytest.raises(ValueError):
            stratify_by_class(range(4), [0, 1, 2, 3], 3)

    def test_spill(self):
        assert stratify_by_class(range(5), [0, 1, 1, 1, 1], 4) == {0: 1, 1: 3}

    @pytest.mark.parametrize("seed", range(10))
    def test_conserves_budget(self, seed):
        rng = np.random.default_rng(seed)
        labels = rng.integers(0, 4, 30)
        b = int(rng.integers(len(np.unique(labels)), 31))
        budgets = stratify_by_class(range(30), labels, b)
        assert sum(budgets.values()) == b
        assert all(v >= 1 for v in budgets.values())

    @pytest.mark.parametrize("strategy", list(Strategy))
    def test_every_class_represented(self, strategy, rng):
        g = random_graph(30, 0.2, rng)
        labels = rng.integers(0, 3, 30)
        emb = rng.standard_normal((30, 4))
        p = select(strategy, g, range(30), 5, seed=1, labels=labels, embeddings=emb, stratify=True)
        assert len(p) == 5
        assert set(labels[p]) == set(labels)


class TestBuffer:
    def test_disjoint(self):
        buf = ExperienceBuffer()
        buf.add(1, [1, 2], 0)
        with pytest.raises(ValueError, match="overlaps"):
            buf.add(2, [2, 3], 0)

    def test_all_vertices_in_task_order(self):
        buf = ExperienceBuffer()
        buf.add(2, [7, 8], 0)
        buf.add(1, [1], 0)
        assert buf.all_vertices().tolist() == [1, 7, 8]
        assert len(buf) == 3

    def test_empty(self):
        assert ExperienceBuffer().all_vertices().size == 0


def test_unknown_strategy():
    with pytest.raises(ValueError, match="unknown"):
        Strategy.parse("influence")


@pytest.mark.parametrize("strategy", list(Strategy))
def test_all_strategies_deterministic(strategy, rng):
    g = random_graph(20, 0.2, rng)
    emb = rng.standard_normal((20, 3))
    runs = [select(strategy, g, range(20), 4, seed=9, embeddings=emb) for _ in range(2)]
    assert np.array_equal(*runs)
    assert len(runs[0]) == 4
