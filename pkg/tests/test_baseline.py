import numpy as np
import pytest
from scipy.stats import ks_2samp

from mazegaze import baseline as bl
from mazegaze.eyedata import DEG_PER_PX
from mazegaze.maze import gen_maze, render


@pytest.fixture
def dist():
    rng = np.random.default_rng(0)
    amps = rng.gamma(4.0, 0.8, 500)
    angles = rng.uniform(-np.pi, np.pi, 500)
    return bl.from_polar(amps, angles, rng.integers(3, 12, 200))


def test_single_saccade_distribution():
    d = bl.fit_distribution([[2.0, 0.0]], [1])
    rng = np.random.default_rng(1)
    for _ in range(20):
        pts = bl.sample_path(d, (5.0, 5.0), rng).eye_array()
        np.testing.assert_allclose(pts[1] - pts[0], [2.0 / DEG_PER_PX, 0.0], atol=1e-12)


def test_fit_drops_zero_vectors_and_rejects_empty():
    d = bl.fit_distribution([[0.0, 0.0], [0.0, 1.0]], [1, 2])
    assert d.amplitudes.tolist() == [1.0]
    assert d.angles[0] == pytest.approx(np.pi / 2)
    with pytest.raises(ValueError):
        bl.fit_distribution([], [1])
    with pytest.raises(ValueError):
        bl.fit_distribution([[1.0, 0.0]], [])


def test_invalid_distributions():
    with pytest.raises(ValueError):
        bl.SaccadeDistribution([0.0], [0.0], [1])
    with pytest.raises(ValueError):
        bl.SaccadeDistribution([1.0], [0.0], [0])


def test_counts_are_resampled_from_the_list():
    d = bl.from_polar([1.0], [0.0], [5, 7])
    rng = np.random.default_rng(2)
    lengths = {len(bl.sample_path(d, (0, 0), rng).eye_positions) - 1 for _ in range(200)}
    assert lengths == {5, 7}


def test_one_saccade_path_is_vector_addition():
    d = bl.from_polar([3.0], [0.7], [1])
    pts = bl.sample_path(d, (10.0, 20.0), np.random.default_rng(0)).eye_array()
    assert len(pts) == 2
    expected = np.array([10.0, 20.0]) + 3.0 / DEG_PER_PX * np.array([np.cos(0.7), np.sin(0.7)])
    np.testing.assert_allclose(pts[1], expected, atol=1e-12)


def test_resampled_marginals_match_the_source(dist):
    # 10^4 paths; amplitude, angle and count marginals each within KS 0.02
    rng = np.random.default_rng(3)
    pts, lengths = bl._sample_candidates(dist, (0.0, 0.0), rng, 10_000)
    steps = np.diff(pts, axis=1)
    active = np.arange(steps.shape[1])[None, :] < lengths[:, None]
    amps = np.hypot(steps[..., 0], steps[..., 1])[active] * DEG_PER_PX
    angles = np.arctan2(steps[..., 1], steps[..., 0])[active]
    assert ks_2samp(amps, dist.amplitudes).statistic < 0.02
    assert ks_2samp(angles, dist.angles).statistic < 0.02
    assert ks_2samp(lengths, dist.path_lengths).statistic < 0.02


def test_ks_round_trip_1e5_draws():
    rng = np.random.default_rng(4)
    src = rng.gamma(3.0, 1.0, 2_000)
    d = bl.fit_distribution(np.column_stack([src, np.zeros_like(src)]), [1])
    pts, _ = bl._sample_candidates(d, (0.0, 0.0), rng, 100_000)
    amps = np.linalg.norm(pts[:, 1] - pts[:, 0], axis=1) * DEG_PER_PX
    assert ks_2samp(amps, src).statistic < 0.02


def test_solve_is_the_argmin(dist):
    m = render(gen_maze(np.random.default_rng(5), 20))
    best = bl.solve(m, dist, 500, np.random.default_rng(6))
    ends, _, _ = bl.final_points(dist, m.entrance_px, np.random.default_rng(6), 500)
    d = np.linalg.norm(ends - m.exit_px, axis=1)
    got = np.linalg.norm(best.eye_array()[-1] - m.exit_px)
    assert got == d.min()
    assert np.all(got <= d)


def test_single_candidate_is_the_sample(dist):
    m = render(gen_maze(np.random.default_rng(7), 20))
    a = bl.solve(m, dist, 1, np.random.default_rng(8)).eye_array()
    b = bl.sample_path(dist, m.entrance_px, np.random.default_rng(8)).eye_array()
    np.testing.assert_array_equal(a, b)


def test_candidates_are_prefix_stable(dist):
    a, la = bl._sample_candidates(dist, (0, 0), np.random.default_rng(9), 50)
    b, lb = bl._sample_candidates(dist, (0, 0), np.random.default_rng(9), 2000)
    np.testing.assert_array_equal(a, b[:50])
    np.testing.assert_array_equal(la, lb[:50])


def test_success_is_monotone_in_candidates(dist):
    mazes = [render(gen_maze(np.random.default_rng(100 + i), 20)) for i in range(30)]
    rates = []
    for n in (1, 10, 100, 1000):
        hits = 0
        for i, m in enumerate(mazes):
            end = bl.solve(m, dist, n, np.random.default_rng([i, 1])).eye_array()[-1]
            hits += np.linalg.norm(end - m.exit_px) <= 5.0
        rates.append(hits)
    assert rates == sorted(rates)


def test_paths_start_at_the_entrance(dist):
    pts, _ = bl._sample_candidates(dist, (3.0, 4.0), np.random.default_rng(0), 100)
    assert np.all(pts[:, 0] == [3.0, 4.0])


def test_joint_sampling_keeps_pairs():
    d = bl.from_polar([1.0, 2.0], [0.0, np.pi / 2], [3])
    pts, _ = bl._sample_candidates(d, (0, 0), np.random.default_rng(1), 200, joint=True)
    steps = np.diff(pts, axis=1).reshape(-1, 2) * DEG_PER_PX
    ok = np.isclose(steps, [1.0, 0.0]).all(axis=1) | np.isclose(steps, [0.0, 2.0], atol=1e-12).all(axis=1)
    assert ok.all()
    with pytest.raises(ValueError):
        bl._sample_candidates(bl.from_polar([1.0, 2.0], [0.0], [1]), (0, 0), np.random.default_rng(0), 5, joint=True)


def test_determinism(dist):
    m = render(gen_maze(np.random.default_rng(11), 20))
    a = bl.solve(m, dist, 300, np.random.default_rng(12)).eye_array()
    b = bl.solve(m, dist, 300, np.random.default_rng(12)).eye_array()
    assert a.tobytes() == b.tobytes()
