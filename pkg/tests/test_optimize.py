import math

import numpy as np
import pytest

from cqrelay.optimize import OptimizerConfig, grid_size, maximize, product_grid, simplex_grid


def test_simplex_grid_counts_and_sums():
    for k, r in [(1, 5), (2, 17), (3, 9), (4, 5)]:
        g = simplex_grid(k, r)
        assert g.shape == (math.comb(r - 1 + k - 1, k - 1), k)
        assert np.allclose(g.sum(axis=1), 1.0) and g.min() >= 0
        assert len({tuple(row) for row in g}) == len(g)


def test_product_grid_size():
    assert product_grid((2, 3), 5).shape == (grid_size((2, 3), 5), 5)


def test_maximize_finds_interior_optimum():
    target = np.array([0.137, 0.5, 0.363])

    def obj(X):
        return -np.sum((X - target) ** 2, axis=1)

    res = maximize(obj, (3,), OptimizerConfig(resolution=9, rounds=8))
    assert np.allclose(res.x, target, atol=2e-3)
    assert res.diagnostics["refinement_gain"] >= 0


def test_warm_start_wins_ties():
    res = maximize(lambda X: np.zeros(len(X)), (2,), OptimizerConfig(resolution=5, rounds=0),
                   extra=[[0.3, 0.7]])
    assert np.allclose(res.x, [0.3, 0.7])


def test_grid_cap_lowers_resolution():
    res = maximize(lambda X: X[:, 0], (4,), OptimizerConfig(resolution=30, max_grid=100, rounds=0))
    assert res.diagnostics["resolution"] < 30
    assert res.diagnostics["candidates"] <= 100


def test_restarts_are_seeded():
    cfg = OptimizerConfig(resolution=3, rounds=0, restarts=5, seed=4)
    f = lambda X: -np.abs(X[:, 0] - 0.41)  # noqa: E731
    assert maximize(f, (2,), cfg).x.tolist() == maximize(f, (2,), cfg).x.tolist()


def test_config_validation():
    with pytest.raises(ValueError):
        OptimizerConfig(resolution=1)
    with pytest.raises(ValueError):
        OptimizerConfig(rounds=-1)
