import math

import numpy as np
import pytest

from cpnav.world import (KnownMap, Map, MapGenerationError, Obstacle, experimental_map, first_intersection,
                         generate_random_map, load_map, map_from_dict, map_to_dict, min_clearance,
                         point_is_free, save_map, segment_is_clear, visible_obstacles)


def _map(*poles, r=0.15):
    return Map((-10, -10, 10, 10), tuple(Obstacle(i, p, r) for i, p in enumerate(poles)))


def brute_first_hit(a, b, world, inflation, n=10_000):
    """First obstacle a densely sampled segment enters, by direct inside-disk tests."""
    s = np.linspace(0.0, 1.0, n)[:, None]
    pts = np.asarray(a) + s * (np.asarray(b) - np.asarray(a))
    d = np.linalg.norm(pts[:, None, :] - world.centers[None], axis=2)
    inside = d < (world.radii + inflation)[None]
    rows = np.flatnonzero(inside.any(axis=1))
    if len(rows) == 0:
        return None
    return int(world.ids[np.argmax(inside[rows[0]])])


class TestFirstIntersection:
    def test_experimental_line_hits_origin_pole(self):
        hit = first_intersection([-2, 0], [2, -0.2], experimental_map(), 0.28)
        assert hit is not None and hit[0] == 0
        # closed-form point-to-line distance of the origin from the start->goal line
        a, b = np.array([-2.0, 0.0]), np.array([2.0, -0.2])
        u = (b - a) / np.linalg.norm(b - a)
        dist = abs(u[0] * -a[1] - u[1] * -a[0])
        assert dist == pytest.approx(0.0999, abs=1e-4)
        assert dist < 0.43

    def test_far_obstacle_is_missed(self):
        assert first_intersection([-2, 0], [-1, 0], _map((5, 5)), 0.28) is None

    def test_nearest_entry_wins(self):
        world = _map((3, 0), (1, 0), (6, 0))
        hit = first_intersection([-1, 0], [8, 0], world, 0.28)
        assert hit[0] == 1
        assert hit[1] == pytest.approx(2.0 - 0.43, abs=1e-9)

    def test_tangent_segment_does_not_intersect(self):
        world = _map((0, 0.43))
        assert first_intersection([-1, 0], [1, 0], world, 0.28) is None

    def test_zero_length_segment(self):
        world = _map((0, 0))
        assert first_intersection([3, 3], [3, 3], world, 0.28) is None
        hit = first_intersection([0.1, 0], [0.1, 0], world, 0.28)
        assert hit == (0, 0.0)

    def test_agrees_with_brute_force_sampler(self):
        rng = np.random.default_rng(11)
        disagreements = 0
        for _ in range(1000):
            n = int(rng.integers(1, 6))
            centers = rng.uniform(-4, 4, size=(n, 2))
            world = _map(*[tuple(c) for c in centers], r=float(rng.uniform(0.1, 0.4)))
            a, b = rng.uniform(-5, 5, size=2), rng.uniform(-5, 5, size=2)
            hit = first_intersection(a, b, world, 0.28)
            ref = brute_first_hit(a, b, world, 0.28)
            if (hit[0] if hit else None) != ref:
                # sampling can only miss a grazing chord shorter than the sample spacing
                assert hit is not None and ref is None
                disagreements += 1
        assert disagreements <= 2


class TestVisibility:
    def test_boundary_inclusive(self):
        world = _map((3, 4))
        known = visible_obstacles([0, 0], 5.0, world, KnownMap.empty_like(world))
        assert [o.id for o in known.obstacles] == [0]

    def test_just_out_of_range(self):
        world = _map((3.1, 4))
        known = visible_obstacles([0, 0], 5.0, world, KnownMap.empty_like(world))
        assert known.obstacles == ()

    def test_empty_map_and_monotone_growth(self):
        empty = _map()
        k0 = KnownMap.empty_like(empty)
        assert visible_obstacles([0, 0], 5.0, empty, k0).obstacles == ()
        world = _map((1, 0), (8, 0))
        k1 = visible_obstacles([0, 0], 5.0, world, KnownMap.empty_like(world))
        k2 = visible_obstacles([-9, 0], 5.0, world, k1)
        assert {o.id for o in k1.obstacles} <= {o.id for o in k2.obstacles}

    def test_range_must_be_positive(self):
        world = _map((1, 0))
        with pytest.raises(ValueError):
            visible_obstacles([0, 0], 0.0, world, KnownMap.empty_like(world))


class TestClearance:
    def test_line_past_pole(self):
        xs = np.linspace(-2, 2, 4001)
        pts = np.column_stack((xs, np.full_like(xs, 0.5)))
        assert min_clearance(pts, _map((0, 0)), 0.28) == pytest.approx(0.07, abs=1e-9)

    def test_on_boundary_is_zero(self):
        assert min_clearance([[0.43, 0.0]], _map((0, 0)), 0.28) == pytest.approx(0.0, abs=1e-12)

    def test_excluded_only_gives_infinity(self):
        assert min_clearance([[1.0, 0.0]], _map((0, 0)), 0.28, exclude={0}) == math.inf

    def test_adding_an_obstacle_never_increases_clearance(self):
        rng = np.random.default_rng(3)
        pts = rng.uniform(-5, 5, size=(50, 2))
        poles = [tuple(p) for p in rng.uniform(-5, 5, size=(8, 2))]
        prev = math.inf
        for k in range(1, len(poles) + 1):
            c = min_clearance(pts, _map(*poles[:k]), 0.28)
            assert c <= prev
            prev = c

    def test_empty_samples_rejected(self):
        with pytest.raises(ValueError):
            min_clearance(np.zeros((0, 2)), _map((0, 0)), 0.28)


class TestRandomMaps:
    def test_lab_configuration(self):
        world = generate_random_map((20, 20), 30, 0.3, 2.5, seed=1)
        assert len(world.obstacles) == 30
        d = np.linalg.norm(world.centers[:, None] - world.centers[None], axis=2)
        np.fill_diagonal(d, np.inf)
        assert d.min() >= 2.5
        assert all(world.contains(c) for c in world.centers)
        for p in (world.start, world.goal):
            assert point_is_free(p, world, 0.28)
            assert np.linalg.norm(world.centers - np.asarray(p), axis=1).min() >= 0.3 + 0.28 + 0.5

    def test_zero_obstacles(self):
        assert generate_random_map((20, 20), 0, 0.3, 2.5, seed=7).obstacles == ()

    def test_deterministic_per_seed(self):
        a = map_to_dict(generate_random_map(seed=5))
        b = map_to_dict(generate_random_map(seed=5))
        assert a == b
        assert a != map_to_dict(generate_random_map(seed=6))

    def test_clearance_below_diameter_rejected(self):
        with pytest.raises(ValueError):
            generate_random_map(min_center_clearance=0.5, radius=0.3)

    def test_impossible_packing_raises(self):
        with pytest.raises(MapGenerationError):
            generate_random_map((4, 4), 50, 0.3, 2.5, seed=0)


def test_map_file_roundtrip(tmp_path):
    world = generate_random_map(seed=2)
    path = tmp_path / "m.json"
    save_map(world, path)
    back = load_map(path)
    assert map_to_dict(back) == map_to_dict(world)
    assert map_from_dict(map_to_dict(experimental_map())).obstacles == experimental_map().obstacles


def test_duplicate_ids_rejected():
    with pytest.raises(ValueError):
        Map((0, 0, 1, 1), (Obstacle(0, (0.5, 0.5), 0.1), Obstacle(0, (0.2, 0.2), 0.1)))


def test_segment_is_clear_matches_first_intersection():
    world = experimental_map()
    assert not segment_is_clear([-2, 0], [2, -0.2], world, 0.28)
    assert segment_is_clear([-2, -1.2], [2, -1.2], world, 0.0)
