"""Grid search plus local refinement over products of probability simplices.

Objectives are batched: they take a ``(K, n)`` array of candidate points
(concatenated simplex blocks) and return a length-``K`` array of values.
The search is deterministic: candidates are visited in a fixed order and
ties go to the earliest candidate.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

IMPROVE_TOL = 1e-13


@dataclass(frozen=True)
class OptimizerConfig:
    """Grid resolution per simplex axis, refinement rounds, random restarts.

    ``resolution`` points per axis means a lattice step of
    ``1 / (resolution - 1)``.  Each refinement round hill-climbs with a move
    size half that of the previous round, starting at half the lattice step.
    ``max_grid`` caps the number of lattice candidates; above it the
    resolution is lowered and the reduction is reported.
    """

    resolution: int = 17
    rounds: int = 2
    restarts: int = 0
    seed: int = 0
    max_grid: int = 50000
    max_moves: int = 200
    tolerance: float = 0.01

    def __post_init__(self):
        if self.resolution < 2:
            raise ValueError("resolution must be at least 2")
        if self.rounds < 0:
            raise ValueError("rounds must be non-negative")
        if self.restarts < 0:
            raise ValueError("restarts must be non-negative")
        if self.max_grid < 1 or self.max_moves < 0:
            raise ValueError("max_grid must be positive and max_moves non-negative")


def simplex_grid(k: int, resolution: int) -> np.ndarray:
    """All points of the k-simplex with coordinates in multiples of ``1/(resolution-1)``.

    Rows come in lexicographically decreasing order of the first coordinate,
    which is the stars-and-bars enumeration order.
    """
    n = resolution - 1
    if k == 1:
        return np.ones((1, 1))
    rows = []
    for bars in itertools.combinations(range(n + k - 1), k - 1):
        prev = -1
        counts = []
        for b in bars:
            counts.append(b - prev - 1)
            prev = b
        counts.append(n + k - 2 - prev)
        rows.append(counts)
    return np.array(rows, dtype=float) / n


def grid_size(blocks, resolution: int) -> int:
    n = resolution - 1
    return int(np.prod([math.comb(n + k - 1, k - 1) for k in blocks]))


def product_grid(blocks, resolution: int) -> np.ndarray:
    grids = [simplex_grid(k, resolution) for k in blocks]
    if len(grids) == 1:
        return grids[0]
    idx = np.array(list(itertools.product(*(range(len(g)) for g in grids))))
    return np.concatenate([g[idx[:, i]] for i, g in enumerate(grids)], axis=1)


def fit_resolution(blocks, resolution: int, max_grid: int) -> int:
    r = resolution
    while r > 2 and grid_size(blocks, r) > max_grid:
        r -= 1
    return r


def _neighbours(x: np.ndarray, blocks, h: float) -> np.ndarray:
    out = []
    start = 0
    for k in blocks:
        for i in range(k):
            xi = x[start + i]
            if xi <= 0.0:
                continue
            d = min(h, xi)
            for j in range(k):
                if j == i:
                    continue
                y = x.copy()
                y[start + i] -= d
                y[start + j] += d
                if d == xi:
                    y[start + i] = 0.0
                out.append(y)
        start += k
    return np.array(out) if out else np.empty((0, x.size))


@dataclass
class SearchResult:
    x: np.ndarray
    value: float
    diagnostics: dict = field(default_factory=dict)


def maximize(objective, blocks, cfg: OptimizerConfig, extra=None, grid=None) -> SearchResult:
    """Maximise a batched objective over the product of simplices ``blocks``.

    ``extra`` are warm-start points evaluated ahead of the grid, so they win
    ties.  ``grid`` replaces the lattice candidates when given.
    """
    blocks = tuple(int(k) for k in blocks)
    total = sum(blocks)
    diag = {"requested_resolution": cfg.resolution}
    if grid is None:
        r = fit_resolution(blocks, cfg.resolution, cfg.max_grid)
        grid = product_grid(blocks, r)
        diag["resolution"] = r
    else:
        diag["resolution"] = cfg.resolution
    pools = []
    if extra is not None and len(extra):
        pools.append(np.asarray(extra, dtype=float).reshape(-1, total))
    pools.append(grid)
    if cfg.restarts:
        rng = np.random.default_rng(cfg.seed)
        pools.append(np.concatenate([rng.dirichlet(np.ones(k), size=cfg.restarts) for k in blocks], axis=1))
    cand = np.concatenate(pools, axis=0)
    vals = np.asarray(objective(cand), dtype=float)
    best = int(np.argmax(vals))
    x, fx = cand[best].copy(), float(vals[best])
    diag["candidates"] = int(cand.shape[0])
    diag["grid_value"] = fx
    evals = cand.shape[0]
    moves = 0
    step = 1.0 / (diag["resolution"] - 1)
    h = step / 2.0
    for _ in range(cfg.rounds):
        for _ in range(cfg.max_moves):
            nb = _neighbours(x, blocks, h)
            if nb.shape[0] == 0:
                break
            v = np.asarray(objective(nb), dtype=float)
            evals += nb.shape[0]
            j = int(np.argmax(v))
            if v[j] > fx + IMPROVE_TOL:
                x, fx = nb[j], float(v[j])
                moves += 1
            else:
                break
        h /= 2.0
    diag.update(evaluations=int(evals), moves=moves, final_step=h * 2.0 if cfg.rounds else 0.0,
                refinement_gain=fx - diag["grid_value"])
    return SearchResult(x, fx, diag)
