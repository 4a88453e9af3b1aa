"""Hot numeric kernels with a numba path and a pure-numpy fallback.

Every kernel exists twice: ``np_<name>`` is vectorized numpy, ``nb_<name>``
is the same algorithm written as explicit loops for ``numba.njit``.  The
public ``<name>`` is bound to the numba version unless numba is missing or
the environment variable ``CQRELAY_DISABLE_NUMBA`` is set to a non-empty,
non-"0" value.  Integer-valued kernels agree bit for bit across the two
paths, float kernels agree to rounding; ``tests/test_kernels.py`` checks both.
"""

import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is an optional accelerator
    numba = None

_flag = os.environ.get("CQRELAY_DISABLE_NUMBA", "")
USE_NUMBA = numba is not None and _flag in ("", "0")

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_INV53 = 1.0 / 9007199254740992.0  # 2**-53
ZERO_EIG = 1e-12


# ---------------------------------------------------------------------------
# keyed counter-based uniforms (splitmix64 finalizer chained over the key)
# ---------------------------------------------------------------------------

def _np_mix(z):
    z = (z ^ (z >> _S30)) * _MIX1
    z = (z ^ (z >> _S27)) * _MIX2
    return z ^ (z >> _S31)


def np_keyed_uniforms(seed, stream, counters):
    """Uniform doubles in [0, 1) keyed by ``(seed, stream, counter)``."""
    counters = np.ascontiguousarray(counters, dtype=np.uint64)
    with np.errstate(over="ignore"):
        h = _np_mix(np.array([seed], dtype=np.uint64) + _GOLDEN)
        h = _np_mix(h ^ (np.array([stream], dtype=np.uint64) + _GOLDEN))
        h = _np_mix(h ^ (counters + _GOLDEN))
    return (h >> _S11).astype(np.float64) * _INV53


def _nb_mix_py(z):
    z = (z ^ (z >> _S30)) * _MIX1
    z = (z ^ (z >> _S27)) * _MIX2
    return z ^ (z >> _S31)


def _nb_keyed_uniforms_py(seed, stream, counters):
    out = np.empty(counters.shape[0], dtype=np.float64)
    h0 = _nb_mix(np.uint64(seed) + _GOLDEN)
    h0 = _nb_mix(h0 ^ (np.uint64(stream) + _GOLDEN))
    for i in range(counters.shape[0]):
        h = _nb_mix(h0 ^ (np.uint64(counters[i]) + _GOLDEN))
        out[i] = np.float64(h >> _S11) * _INV53
    return out


# ---------------------------------------------------------------------------
# inverse-CDF categorical sampling
# ---------------------------------------------------------------------------

def np_sample_rows(cdf, u):
    """Index of the first entry of each CDF row exceeding ``u``."""
    k = cdf.shape[1]
    idx = (u[:, None] >= cdf).sum(axis=1)
    return np.minimum(idx, k - 1).astype(np.int64)


def _nb_sample_rows_py(cdf, u):
    n, k = cdf.shape
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        j = 0
        while j < k - 1 and u[i] >= cdf[i, j]:
            j += 1
        out[i] = j
    return out


# ---------------------------------------------------------------------------
# Neyman-Pearson fractional knapsack for commuting pairs
# ---------------------------------------------------------------------------

def np_neyman_pearson(p, q, alpha):
    """Minimal ``sum(pi * q)`` subject to ``sum(pi * p) >= alpha``, ``0 <= pi <= 1``.

    Returns ``(type2, pi)``.  The optimum is a likelihood-ratio threshold test
    with at most one fractional entry.
    """
    n = p.shape[0]
    pi = np.zeros(n)
    pos = np.flatnonzero(p > 0.0)
    if pos.size == 0 or alpha <= 0.0:
        return 0.0, pi
    ratio = q[pos] / p[pos]
    order = pos[np.argsort(ratio, kind="mergesort")]
    cum = np.cumsum(p[order])
    k = int(np.searchsorted(cum, alpha, side="left"))
    if k >= order.size:
        k = order.size - 1
    pi[order[:k]] = 1.0
    before = cum[k - 1] if k > 0 else 0.0
    frac = (alpha - before) / p[order[k]]
    pi[order[k]] = min(max(frac, 0.0), 1.0)
    type2 = float(np.cumsum(pi * q)[-1])
    return type2, pi


def _nb_neyman_pearson_py(p, q, alpha):
    n = p.shape[0]
    pi = np.zeros(n)
    m = 0
    for i in range(n):
        if p[i] > 0.0:
            m += 1
    if m == 0 or alpha <= 0.0:
        return 0.0, pi
    pos = np.empty(m, dtype=np.int64)
    ratio = np.empty(m)
    c = 0
    for i in range(n):
        if p[i] > 0.0:
            pos[c] = i
            ratio[c] = q[i] / p[i]
            c += 1
    order = pos[np.argsort(ratio, kind="mergesort")]
    acc = 0.0
    for t in range(m):
        i = order[t]
        nxt = acc + p[i]
        if nxt >= alpha or t == m - 1:
            frac = (alpha - acc) / p[i]
            pi[i] = min(max(frac, 0.0), 1.0)
            break
        pi[i] = 1.0
        acc = nxt
    type2 = 0.0
    for i in range(n):
        type2 += pi[i] * q[i]
    return type2, pi


# ---------------------------------------------------------------------------
# batched entropy from eigenvalues
# ---------------------------------------------------------------------------

def np_entropy_rows(evals):
    """Row-wise ``-sum(l * log2 l)`` with eigenvalues clipped at zero."""
    lam = np.clip(evals, 0.0, None)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(lam > 0.0, lam * np.log2(np.where(lam > 0.0, lam, 1.0)), 0.0)
    return -np.cumsum(terms, axis=-1)[..., -1]


def _nb_entropy_rows_py(evals):
    g, d = evals.shape
    out = np.empty(g)
    for i in range(g):
        s = 0.0
        for j in range(d):
            lam = evals[i, j]
            if lam > 0.0:
                s -= lam * np.log2(lam)
        out[i] = s
    return out


if numba is not None:
    _nb_mix = numba.njit(cache=True)(_nb_mix_py)
    nb_keyed_uniforms = numba.njit(cache=True)(_nb_keyed_uniforms_py)
    nb_sample_rows = numba.njit(cache=True)(_nb_sample_rows_py)
    nb_neyman_pearson = numba.njit(cache=True)(_nb_neyman_pearson_py)
    nb_entropy_rows = numba.njit(cache=True)(_nb_entropy_rows_py)
else:  # pragma: no cover
    _nb_mix = _nb_mix_py
    nb_keyed_uniforms = _nb_keyed_uniforms_py
    nb_sample_rows = _nb_sample_rows_py
    nb_neyman_pearson = _nb_neyman_pearson_py
    nb_entropy_rows = _nb_entropy_rows_py


def keyed_uniforms(seed, stream, counters):
    counters = np.ascontiguousarray(counters, dtype=np.uint64)
    if USE_NUMBA:
        return nb_keyed_uniforms(np.uint64(seed), np.uint64(stream), counters)
    return np_keyed_uniforms(seed, stream, counters)


def sample_rows(cdf, u):
    cdf = np.ascontiguousarray(cdf, dtype=np.float64)
    u = np.ascontiguousarray(u, dtype=np.float64)
    if USE_NUMBA:
        return nb_sample_rows(cdf, u)
    return np_sample_rows(cdf, u)


def neyman_pearson(p, q, alpha):
    p = np.ascontiguousarray(p, dtype=np.float64)
    q = np.ascontiguousarray(q, dtype=np.float64)
    if USE_NUMBA:
        t2, pi = nb_neyman_pearson(p, q, float(alpha))
        return float(t2), pi
    return np_neyman_pearson(p, q, float(alpha))


def entropy_rows(evals):
    evals = np.ascontiguousarray(evals, dtype=np.float64)
    if evals.ndim == 1:
        evals = evals[None, :]
    if USE_NUMBA:
        return nb_entropy_rows(evals)
    return np_entropy_rows(evals)
