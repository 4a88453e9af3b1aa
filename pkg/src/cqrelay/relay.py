"""Classical-quantum relay channels: capacity bounds, finite-block error
bounds and the partial decode-forward rate region.

A relay channel maps inputs ``(x1, x2)`` to a state on ``B2 B3`` (relay and
receiver outputs).  Five single-letter bounds are computed by maximising over
input distributions with :mod:`cqrelay.optimize`:

* cutset: ``min{I(X1X2;B3), I(X1;B2B3|X2)}`` over joint inputs (upper bound)
* multihop: ``min{I(X1;B2|X2), I(X2;B3)}`` over product inputs
* coherent multihop: the multihop objective over joint inputs
* decode-forward: ``min{I(X1;B2|X2), I(X1X2;B3)}``
* partial decode-forward: ``min{I(X1;B3|UX2) + I(U;B2|X2), I(X1X2;B3)}``
  over ``p(u, x1, x2)``

Entropies are in bits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .entropic import (
    psd_power,
    cmi,
    dh_cq,
    entropy,
    relative_entropy,
    sandwich_constants,
)
from .netgen import MultiplexBayesNet, f_k_eps
from .optimize import OptimizerConfig, maximize, product_grid, fit_resolution
from .qcore import (
    CqState,
    DensityOperator,
    StateError,
    assemble_cq,
    check_density,
    marginal_product_cq,
    marginalize,
    partial_trace_matrix,
    permute_subsystems,
    random_density,
    reduce_quantum,
)

SCHEMES = ("multihop", "coherent-multihop", "decode-forward", "partial-decode-forward")
EXACT_DIM_CAP = 512
PRODUCT_TOL = 1e-10


# ---------------------------------------------------------------------------
# channel model
# ---------------------------------------------------------------------------

class RelayChannel:
    """Family ``(x1, x2) -> rho_{B2 B3}`` stored as an ``(n1, n2, D, D)`` array."""

    def __init__(self, family, dims, validate: bool = True):
        family = np.asarray(family, dtype=np.complex128)
        dims = tuple(int(d) for d in dims)
        if family.ndim != 4 or family.shape[2] != family.shape[3]:
            raise StateError(f"family must have shape (n1, n2, D, D), got {family.shape}")
        if len(dims) != 2 or dims[0] * dims[1] != family.shape[2]:
            raise StateError(f"dims {dims} do not factor the output dimension {family.shape[2]}")
        if validate:
            for x1, x2 in np.ndindex(family.shape[:2]):
                try:
                    check_density(family[x1, x2])
                except StateError as exc:
                    raise StateError(f"channel output at (x1, x2) = ({x1}, {x2}): {exc}") from None
        family.setflags(write=False)
        self.family = family
        self.dims = dims
        self.family_b2 = self._reduce(0)
        self.family_b3 = self._reduce(1)

    def _reduce(self, keep):
        n1, n2 = self.sizes
        out = np.stack([partial_trace_matrix(self.family[a, b], self.dims, [keep])
                        for a, b in np.ndindex(n1, n2)])
        d = self.dims[keep]
        out = out.reshape(n1, n2, d, d)
        out.setflags(write=False)
        return out

    @property
    def sizes(self):
        return self.family.shape[:2]

    @property
    def d2(self):
        return self.dims[0]

    @property
    def d3(self):
        return self.dims[1]

    def __repr__(self):
        return f"RelayChannel(sizes={self.sizes}, dims={self.dims})"


def product_channel(states_b2, states_b3) -> RelayChannel:
    """Channel with ``rho^(x1x2) = states_b2[x1,x2] (x) states_b3[x1,x2]``."""
    s2 = np.asarray(states_b2, dtype=np.complex128)
    s3 = np.asarray(states_b3, dtype=np.complex128)
    n1, n2 = s2.shape[:2]
    fam = np.stack([np.kron(s2[a, b], s3[a, b]) for a, b in np.ndindex(n1, n2)])
    d = fam.shape[-1]
    return RelayChannel(fam.reshape(n1, n2, d, d), (s2.shape[-1], s3.shape[-1]))


def _ket(i, d):
    v = np.zeros((d, d), dtype=np.complex128)
    v[i, i] = 1.0
    return v


def classical_copy_channel() -> RelayChannel:
    """Binary inputs; ``rho^(x1x2) = |x1><x1| (x) |x2><x2|``."""
    s2 = [[_ket(a, 2) for b in range(2)] for a in range(2)]
    s3 = [[_ket(b, 2) for b in range(2)] for a in range(2)]
    return product_channel(s2, s3)


def constant_channel(d2: int = 2, d3: int = 2, n1: int = 2, n2: int = 2) -> RelayChannel:
    """Output ``I/d2 (x) I/d3`` regardless of the inputs."""
    rho = np.eye(d2 * d3, dtype=np.complex128) / (d2 * d3)
    return RelayChannel(np.broadcast_to(rho, (n1, n2, d2 * d3, d2 * d3)), (d2, d3))


def point_to_point_channel(states_b3) -> RelayChannel:
    """Trivial relay (``d2 = 1``); ``B3`` depends on ``x1`` only, one relay letter."""
    s3 = np.asarray(states_b3, dtype=np.complex128)
    n1, d3 = s3.shape[0], s3.shape[-1]
    fam = s3.reshape(n1, 1, d3, d3)
    return RelayChannel(fam, (1, d3))


def random_channel(rng, n1=2, n2=2, d2=2, d3=2, rank=None) -> RelayChannel:
    d = d2 * d3
    fam = np.stack([random_density(d, rng, rank) for _ in range(n1 * n2)])
    return RelayChannel(fam.reshape(n1, n2, d, d), (d2, d3))


def semideterministic_channel(rng, relay_map=None, d3=2) -> RelayChannel:
    """``B2 = |g(x1,x2)><g|`` for a deterministic ``g`` and random states on ``B3``.

    The default ``g`` is ``x1 xor x2`` on binary inputs.
    """
    g = np.array([[0, 1], [1, 0]]) if relay_map is None else np.asarray(relay_map)
    n1, n2 = g.shape
    d2 = int(g.max()) + 1
    s2 = [[_ket(int(g[a, b]), d2) for b in range(n2)] for a in range(n1)]
    s3 = [[random_density(d3, rng) for b in range(n2)] for a in range(n1)]
    return product_channel(s2, s3)


def induced_state(ch: RelayChannel, dist) -> CqState:
    """cq state over ``(U,) X1, X2`` and ``B2 B3`` for an input distribution.

    ``dist`` has shape ``(n1, n2)`` or ``(|U|, n1, n2)``; in the latter case the
    output does not depend on ``u``.
    """
    dist = np.asarray(dist, dtype=float)
    n1, n2 = ch.sizes
    if dist.shape == (n1, n2):
        return CqState(("X1", "X2"), dist, ch.family, ch.dims)
    if dist.ndim == 3 and dist.shape[1:] == (n1, n2):
        fam = np.broadcast_to(ch.family, dist.shape[:1] + ch.family.shape)
        return CqState(("U", "X1", "X2"), dist, fam, ch.dims)
    raise StateError(f"distribution shape {dist.shape} does not match channel alphabets {(n1, n2)}")


def tensor_power_channel(ch: RelayChannel, n: int) -> RelayChannel:
    """``n`` uses as one channel: letters are row-major tuples, outputs ordered ``B2^n B3^n``."""
    if n < 1:
        raise ValueError("n must be positive")
    n1, n2 = ch.sizes
    d2, d3 = ch.dims
    out = np.empty((n1 ** n, n2 ** n, (d2 * d3) ** n, (d2 * d3) ** n), dtype=np.complex128)
    order = [2 * i for i in range(n)] + [2 * i + 1 for i in range(n)]
    dims = [d2, d3] * n
    for a in range(n1 ** n):
        xa = np.unravel_index(a, (n1,) * n)
        for b in range(n2 ** n):
            xb = np.unravel_index(b, (n2,) * n)
            m = np.ones((1, 1), dtype=np.complex128)
            for i in range(n):
                m = np.kron(m, ch.family[xa[i], xb[i]])
            out[a, b] = permute_subsystems(m, dims, order)
    return RelayChannel(out, (d2 ** n, d3 ** n), validate=False)


def tensor_power_dist(dist, n: int) -> np.ndarray:
    """i.i.d. law of ``n`` letters, indexed like :func:`tensor_power_channel`."""
    dist = np.asarray(dist, dtype=float)
    n1, n2 = dist.shape
    out = np.ones((1, 1))
    for _ in range(n):
        out = np.einsum("ab,cd->acbd", out, dist).reshape(out.shape[0] * n1, out.shape[1] * n2)
    return out


# ---------------------------------------------------------------------------
# batched entropic terms
# ---------------------------------------------------------------------------

def _entropies(mats: np.ndarray) -> np.ndarray:
    d = mats.shape[-1]
    ev = np.linalg.eigvalsh(mats.reshape(-1, d, d))
    return _kernels.entropy_rows(ev).reshape(mats.shape[:-2])


def _cond_entropy(P: np.ndarray, F: np.ndarray, groups: np.ndarray, G: int) -> np.ndarray:
    """``H(B | g(cell))`` for each row of ``P`` (cells), states ``F[cell]``."""
    K, m = P.shape
    W = np.zeros((K, G, m))
    W[:, groups, np.arange(m)] = P
    Pg = W.sum(axis=-1)
    mats = np.einsum("kgm,mij->kgij", W, F)
    safe = np.where(Pg > 0.0, Pg, 1.0)
    mats = mats / safe[..., None, None]
    return (Pg * _entropies(mats)).sum(axis=-1)


class _Evaluator:
    """Precomputed channel data for evaluating mutual-information terms on batches."""

    def __init__(self, ch: RelayChannel, u_size: int = 1):
        n1, n2 = ch.sizes
        self.n1, self.n2, self.u = n1, n2, u_size
        m = u_size * n1 * n2
        self.m = m
        tile = lambda f: np.broadcast_to(f, (u_size,) + f.shape).reshape((m,) + f.shape[2:])
        self.F = tile(ch.family)
        self.F2 = tile(ch.family_b2)
        self.F3 = tile(ch.family_b3)
        self.S = _entropies(self.F)
        self.S2 = _entropies(self.F2)
        self.S3 = _entropies(self.F3)
        u, x1, x2 = np.unravel_index(np.arange(m), (u_size, n1, n2))
        self.g_x2 = x2
        self.g_ux2 = u * n2 + x2
        self.g_none = np.zeros(m, dtype=int)

    def h(self, P, which, groups, G):
        F = {"B": self.F, "B2": self.F2, "B3": self.F3}[which]
        return _cond_entropy(P, F, groups, G)

    def h_full(self, P, which):
        S = {"B": self.S, "B2": self.S2, "B3": self.S3}[which]
        return P @ S

    def terms(self, P, names):
        out = {}
        cache = {}

        def H(key):
            if key not in cache:
                which, cond = key
                if cond == "all":
                    cache[key] = self.h_full(P, which)
                elif cond == "none":
                    cache[key] = self.h(P, which, self.g_none, 1)
                elif cond == "x2":
                    cache[key] = self.h(P, which, self.g_x2, self.n2)
                else:
                    cache[key] = self.h(P, which, self.g_ux2, self.u * self.n2)
            return cache[key]

        for name in names:
            if name == "I(X1X2;B3)":
                out[name] = H(("B3", "none")) - H(("B3", "all"))
            elif name == "I(X1;B2B3|X2)":
                out[name] = H(("B", "x2")) - H(("B", "all"))
            elif name == "I(X1;B2|X2)":
                out[name] = H(("B2", "x2")) - H(("B2", "all"))
            elif name == "I(X2;B3)":
                out[name] = H(("B3", "none")) - H(("B3", "x2"))
            elif name == "I(X1;B3|UX2)":
                out[name] = H(("B3", "ux2")) - H(("B3", "all"))
            elif name == "I(U;B2|X2)":
                out[name] = H(("B2", "x2")) - H(("B2", "ux2"))
            else:  # pragma: no cover
                raise KeyError(name)
        return out


_OBJECTIVES = {
    "cutset": ("I(X1X2;B3)", "I(X1;B2B3|X2)"),
    "multihop": ("I(X1;B2|X2)", "I(X2;B3)"),
    "coherent-multihop": ("I(X1;B2|X2)", "I(X2;B3)"),
    "decode-forward": ("I(X1;B2|X2)", "I(X1X2;B3)"),
    "partial-decode-forward": ("I(X1;B3|UX2)", "I(U;B2|X2)", "I(X1X2;B3)"),
}


def _objective_value(scheme, terms):
    if scheme == "partial-decode-forward":
        return np.minimum(terms["I(X1;B3|UX2)"] + terms["I(U;B2|X2)"], terms["I(X1X2;B3)"])
    a, b = _OBJECTIVES[scheme]
    return np.minimum(terms[a], terms[b])


# ---------------------------------------------------------------------------
# bounds
# ---------------------------------------------------------------------------

@dataclass
class BoundReport:
    scheme: str
    value: float
    argmax: np.ndarray
    terms: dict
    diagnostics: dict = field(default_factory=dict)

    def recomputed_value(self) -> float:
        if self.scheme == "partial-decode-forward":
            t = self.terms
            return min(t["I(X1;B3|UX2)"] + t["I(U;B2|X2)"], t["I(X1X2;B3)"])
        return min(self.terms.values())

    def to_json(self) -> dict:
        return {
            "scheme": self.scheme,
            "value": float(self.value),
            "argmax": np.asarray(self.argmax).tolist(),
            "terms": {k: float(v) for k, v in self.terms.items()},
            "diagnostics": {k: (float(v) if isinstance(v, (float, np.floating)) else v)
                            for k, v in self.diagnostics.items()},
        }


def _report(scheme, ev, P_flat, shape, diag):
    names = _OBJECTIVES[scheme]
    t = ev.terms(P_flat[None, :], names)
    terms = {k: float(v[0]) for k, v in t.items()}
    value = float(_objective_value(scheme, {k: np.array([v]) for k, v in terms.items()})[0])
    arg = P_flat.reshape(shape).copy()
    return BoundReport(scheme, value, arg, terms, diag)


def _joint_search(scheme, ch, cfg, warm_start):
    cfg = cfg or OptimizerConfig()
    ev = _Evaluator(ch)
    names = _OBJECTIVES[scheme]
    n1, n2 = ch.sizes
    extra = None
    if warm_start is not None and len(warm_start):
        extra = np.concatenate([np.asarray(w, dtype=float).reshape(-1, n1 * n2) for w in warm_start])

    def objective(X):
        return _objective_value(scheme, ev.terms(X, names))

    res = maximize(objective, (n1 * n2,), cfg, extra=extra)
    return _report(scheme, ev, res.x, (n1, n2), res.diagnostics)


def cutset_bound(ch: RelayChannel, cfg: OptimizerConfig | None = None, warm_start=None) -> BoundReport:
    """Upper bound: max over ``p(x1,x2)`` of ``min{I(X1X2;B3), I(X1;B2B3|X2)}``."""
    return _joint_search("cutset", ch, cfg, warm_start)


def coherent_multihop_rate(ch, cfg=None, warm_start=None) -> BoundReport:
    """Max over joint ``p(x1,x2)`` of ``min{I(X1;B2|X2), I(X2;B3)}``."""
    return _joint_search("coherent-multihop", ch, cfg, warm_start)


def decode_forward_rate(ch, cfg=None, warm_start=None) -> BoundReport:
    """Max over ``p(x1,x2)`` of ``min{I(X1;B2|X2), I(X1X2;B3)}``."""
    return _joint_search("decode-forward", ch, cfg, warm_start)


def multihop_rate(ch: RelayChannel, cfg: OptimizerConfig | None = None) -> BoundReport:
    """Max over product inputs ``p(x1)p(x2)`` of ``min{I(X1;B2|X2), I(X2;B3)}``."""
    cfg = cfg or OptimizerConfig()
    ev = _Evaluator(ch)
    names = _OBJECTIVES["multihop"]
    n1, n2 = ch.sizes

    def lift(X):
        return np.einsum("ka,kb->kab", X[:, :n1], X[:, n1:]).reshape(len(X), n1 * n2)

    def objective(X):
        return _objective_value("multihop", ev.terms(lift(X), names))

    res = maximize(objective, (n1, n2), cfg)
    rep = _report("multihop", ev, lift(res.x[None, :])[0], (n1, n2), res.diagnostics)
    rep.diagnostics["marginals"] = [res.x[:n1].tolist(), res.x[n1:].tolist()]
    return rep


def product_lattice(ch: RelayChannel, cfg: OptimizerConfig) -> np.ndarray:
    """Product-distribution lattice points as joint tables (warm starts for joint searches)."""
    n1, n2 = ch.sizes
    r = fit_resolution((n1, n2), cfg.resolution, cfg.max_grid)
    X = product_grid((n1, n2), r)
    return np.einsum("ka,kb->kab", X[:, :n1], X[:, n1:])


def set_partitions(m: int, max_blocks: int):
    """Restricted growth strings of length ``m`` using at most ``max_blocks`` labels."""
    def rec(prefix, top):
        if len(prefix) == m:
            yield tuple(prefix)
            return
        for lab in range(min(top + 2, max_blocks)):
            yield from rec(prefix + [lab], max(top, lab))
    if m == 0:
        return
    yield from rec([0], 0)


def _embed(P_joint: np.ndarray, g: np.ndarray, u_size: int) -> np.ndarray:
    """``p(u,x1,x2) = p(x1,x2) [u = g(x1,x2)]`` for rows of flattened ``P_joint``."""
    K, m = P_joint.shape
    out = np.zeros((K, u_size, m))
    out[:, np.asarray(g).ravel(), np.arange(m)] = P_joint
    return out.reshape(K, u_size * m)


def partial_decode_forward_rate(ch: RelayChannel, cfg: OptimizerConfig | None = None,
                                u_size: int | None = None, embedding=None,
                                warm_start=None) -> BoundReport:
    """Max over ``p(u,x1,x2)`` of ``min{I(X1;B3|UX2) + I(U;B2|X2), I(X1X2;B3)}``.

    With ``embedding`` (an ``(n1, n2)`` integer map ``g``) the search is
    restricted to ``u = g(x1, x2)`` and runs over ``p(x1, x2)`` only.
    Otherwise every deterministic map ``u = g(x1, x2)`` (up to relabelling)
    is crossed with the input lattice and the best point is refined over the
    full ``p(u, x1, x2)`` simplex.  ``warm_start`` takes ``p(u,x1,x2)`` tables.
    """
    cfg = cfg or OptimizerConfig()
    n1, n2 = ch.sizes
    m = n1 * n2
    if embedding is not None:
        g = np.asarray(embedding, dtype=int)
        if g.shape != (n1, n2) or g.min() < 0:
            raise ValueError(f"embedding must be a non-negative integer map of shape {(n1, n2)}")
        u_size = int(g.max()) + 1 if u_size is None else u_size
        if g.max() >= u_size:
            raise ValueError("embedding uses more labels than u_size")
    u_size = m if u_size is None else int(u_size)
    if u_size < 1:
        raise ValueError("u_size must be at least 1")
    ev = _Evaluator(ch, u_size)
    names = _OBJECTIVES["partial-decode-forward"]

    def full_objective(X):
        return _objective_value("partial-decode-forward", ev.terms(X, names))

    extra = None
    if warm_start is not None and len(warm_start):
        extra = np.concatenate([np.asarray(w, dtype=float).reshape(-1, u_size * m) for w in warm_start])

    if embedding is not None:
        def objective(X):
            return full_objective(_embed(X, g, u_size))

        emb_extra = None
        if extra is not None:
            # keep only warm starts consistent with the embedding
            cols = [w.reshape(u_size, m).sum(axis=0) for w in extra
                    if np.allclose(_embed(w.reshape(u_size, m).sum(axis=0)[None], g, u_size)[0], w)]
            emb_extra = np.array(cols) if cols else None
        res = maximize(objective, (m,), cfg, extra=emb_extra)
        x = _embed(res.x[None, :], g, u_size)[0]
        rep = _report("partial-decode-forward", ev, x, (u_size, n1, n2), res.diagnostics)
        rep.diagnostics["embedding"] = g.tolist()
        return rep

    parts = list(set_partitions(m, u_size))
    r = fit_resolution((m,), cfg.resolution, max(1, cfg.max_grid // len(parts)))
    base = product_grid((m,), r)
    truncated = False
    if len(parts) * len(base) > cfg.max_grid:
        keep = max(1, cfg.max_grid // len(base))
        truncated = len(parts) > keep
        parts = parts[:keep]
    grid = np.concatenate([_embed(base, np.array(p), u_size) for p in parts])
    res = maximize(full_objective, (u_size * m,), cfg, extra=extra, grid=grid)
    res.diagnostics.update(resolution=r, maps=len(parts), maps_truncated=truncated)
    return _report("partial-decode-forward", ev, res.x, (u_size, n1, n2), res.diagnostics)


def all_bounds(ch: RelayChannel, cfg: OptimizerConfig | None = None, u_size: int | None = None) -> dict:
    """All five bounds, each search warm-started from the previous argmax.

    Warm starts make the ordering multihop <= coherent multihop <=
    decode-forward <= cutset hold exactly on the searched points, and put
    decode-forward's optimum (via ``U = X1``) into the partial decode-forward
    search when ``u_size >= |X1|``.
    """
    cfg = cfg or OptimizerConfig()
    n1, n2 = ch.sizes
    mh = multihop_rate(ch, cfg)
    warm = np.concatenate([mh.argmax[None], product_lattice(ch, cfg)])
    cmh = coherent_multihop_rate(ch, cfg, warm_start=warm)
    df = decode_forward_rate(ch, cfg, warm_start=[cmh.argmax])
    cs = cutset_bound(ch, cfg, warm_start=[df.argmax])
    u = n1 * n2 if u_size is None else u_size
    pdf_warm = None
    if u >= n1:
        emb = np.zeros((u, n1, n2))
        for a in range(n1):
            emb[a, a] = df.argmax[a]
        pdf_warm = [emb]
    pdf = partial_decode_forward_rate(ch, cfg, u_size=u, warm_start=pdf_warm)
    return {
        "multihop": mh,
        "coherent-multihop": cmh,
        "decode-forward": df,
        "cutset": cs,
        "partial-decode-forward": pdf,
    }


# ---------------------------------------------------------------------------
# scheme networks
# ---------------------------------------------------------------------------

def _conditional(joint: np.ndarray) -> np.ndarray:
    """Row-normalise over the last axis; zero rows become uniform."""
    s = joint.sum(axis=-1, keepdims=True)
    k = joint.shape[-1]
    return np.where(s > 0, joint / np.where(s > 0, s, 1.0), 1.0 / k)


def scheme_network(scheme: str, b: int, dist, size: int, size_q: int = 1) -> MultiplexBayesNet:
    """Multiplex Bayesian network that generates the scheme's codebook.

    ``dist`` is ``p(x1, x2)`` (or ``p(u, x1, x2)`` for partial decode-forward).
    Message parts are the integers ``0..b`` (``("P", j)``/``("Q", j)`` for
    partial decode-forward); ``M_0`` is a singleton, and so is ``M_b`` for the
    backward-decoding schemes.
    """
    if b < 1:
        raise ValueError("b must be at least 1")
    dist = np.asarray(dist, dtype=float)
    blocks = range(1, b + 1)
    if scheme == "multihop":
        n1, n2 = dist.shape
        p1, p2 = dist.sum(axis=1), dist.sum(axis=0)
        vertices = [f"{v}_{j}" for j in blocks for v in ("X1", "X2")]
        return MultiplexBayesNet(
            alphabets={v: (n1 if v.startswith("X1") else n2) for v in vertices},
            edges=[],
            cpds={v: (p1 if v.startswith("X1") else p2) for v in vertices},
            msg_sizes={0: 1, **{j: size for j in blocks}},
            ind={**{f"X1_{j}": {j} for j in blocks}, **{f"X2_{j}": {j - 1} for j in blocks}},
            vertices=tuple(vertices),
        )
    if scheme in ("coherent-multihop", "decode-forward"):
        n1, n2 = dist.shape
        p2 = dist.sum(axis=0)
        p1_given_2 = _conditional(dist.T)
        vertices = [f"{v}_{j}" for j in blocks for v in ("X2", "X1")]
        sizes = {0: 1, **{j: size for j in blocks}}
        if scheme == "decode-forward":
            sizes[b] = 1
        return MultiplexBayesNet(
            alphabets={v: (n1 if v.startswith("X1") else n2) for v in vertices},
            edges=[(f"X2_{j}", f"X1_{j}") for j in blocks],
            cpds={v: (p1_given_2 if v.startswith("X1") else p2) for v in vertices},
            msg_sizes=sizes,
            ind={**{f"X1_{j}": {j - 1, j} for j in blocks}, **{f"X2_{j}": {j - 1} for j in blocks}},
            vertices=tuple(vertices),
        )
    if scheme == "partial-decode-forward":
        nu, n1, n2 = dist.shape
        p2 = dist.sum(axis=(0, 1))
        pu_given_2 = _conditional(dist.sum(axis=1).T)                     # (x2, u)
        p1_given_u2 = _conditional(np.transpose(dist, (0, 2, 1)))           # (u, x2, x1)
        vertices = [f"{v}_{j}" for j in blocks for v in ("X2", "U", "X1")]
        alph = {"X2": n2, "U": nu, "X1": n1}
        cpd = {"X2": p2, "U": pu_given_2, "X1": p1_given_u2}
        edges = []
        for j in blocks:
            edges += [(f"X2_{j}", f"U_{j}"), (f"U_{j}", f"X1_{j}"), (f"X2_{j}", f"X1_{j}")]
        P = lambda j: ("P", j)
        Q = lambda j: ("Q", j)
        sizes = {P(0): 1, **{P(j): (1 if j == b else size) for j in blocks},
                 **{Q(j): (1 if j == b else size_q) for j in blocks}}
        ind = {}
        for j in blocks:
            ind[f"X2_{j}"] = {P(j - 1)}
            ind[f"U_{j}"] = {P(j - 1), P(j)}
            ind[f"X1_{j}"] = {P(j - 1), P(j), Q(j)}
        return MultiplexBayesNet(
            alphabets={v: alph[v.split("_")[0]] for v in vertices},
            edges=edges,
            cpds={v: cpd[v.split("_")[0]] for v in vertices},
            msg_sizes=sizes,
            ind=ind,
            vertices=tuple(vertices),
        )
    raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")


# ---------------------------------------------------------------------------
# finite-block error bounds
# ---------------------------------------------------------------------------

@dataclass
class DeltaReport:
    scheme: str
    value: float
    raw: float
    terms: dict
    divergences: dict
    mode: str = "exact"
    substitutions: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "scheme": self.scheme,
            "value": float(self.value),
            "raw": float(self.raw),
            "terms": {k: float(v) for k, v in self.terms.items()},
            "divergences": {k: float(v) for k, v in self.divergences.items()},
            "mode": self.mode,
            "substitutions": list(self.substitutions),
        }


def _pow_term(rate: float, dh: float) -> float:
    if math.isinf(dh):
        return 0.0
    e = rate - dh
    return math.inf if e > 1023 else 2.0 ** e


def _dh_pair(state: CqState, severed, eps, **kw) -> float:
    return dh_cq(state, marginal_product_cq(state, severed), eps, **kw).value


def block_power_state(state: CqState, b: int) -> CqState:
    """``state`` tensored ``b`` times; labels get suffixes ``_1 .. _b``."""
    labels = tuple(f"{l}_{j}" for j in range(1, b + 1) for l in state.labels)
    m = int(np.prod(state.sizes))
    d = state.d_b
    P = state.dist.ravel()
    F = state.family.reshape(m, d, d)
    dist, fam = P, F
    for _ in range(b - 1):
        dist = np.multiply.outer(dist, P).ravel()
        fam = np.einsum("aij,bkl->abikjl", fam, F)
        dd = fam.shape[2] * fam.shape[3]
        fam = fam.reshape(-1, dd, dd)
    sizes = tuple(state.sizes) * b
    dd = fam.shape[-1]
    return CqState(labels, dist.reshape(sizes), fam.reshape(sizes + (dd, dd)),
                   tuple(state.dims) * b, validate=False)


def _pdf_block_kinds(Jp, Jq, b):
    """Per-block severed labels of the ``(J_p, J_q)`` packing term."""
    Jp, Jq = set(Jp), set(Jq)
    Jp_shift = {j + 1 for j in Jp}
    kinds = []
    for j in range(1, b + 1):
        if j in Jp_shift:
            kinds.append(("U", "X1", "X2"))
        elif j in Jp:
            kinds.append(("U", "X1"))
        elif j in Jq:
            kinds.append(("X1",))
        else:
            kinds.append(())
    return kinds


def _subsets(n):
    items = tuple(range(1, n + 1))
    for mask in range(1 << n):
        yield tuple(i for k, i in enumerate(items) if mask >> k & 1)


def pdf_pairs(b: int):
    """``(J_p, J_q)`` over subsets of ``[b-1]``, excluding both empty."""
    for Jp in _subsets(b - 1):
        for Jq in _subsets(b - 1):
            if Jp or Jq:
                yield Jp, Jq


def finite_delta(scheme: str, ch: RelayChannel, dist, rate, eps: float, b: int,
                 exact_dim_cap: int = EXACT_DIM_CAP, **dh_kw) -> DeltaReport:
    """Error bound ``delta`` of the scheme's one-shot block-Markov code.

    ``rate`` is ``R`` (the log of each message-set size), or ``(R_p, R_q)``
    for partial decode-forward.  The result is clipped to 1; ``raw`` keeps the
    unclipped sum.  For partial decode-forward, packing terms whose joint
    ``b``-block operator exceeds ``exact_dim_cap`` use the lower bound
    ``max(D - F1, -log2(1 - eps))`` on ``D_H`` instead of the exact value,
    which only increases ``delta``; such terms are listed in
    ``substitutions`` and ``mode`` becomes ``"bound"``.
    """
    if not 0.0 < eps < 1.0:
        raise ValueError("eps must lie in (0, 1)")
    if b < 1:
        raise ValueError("b must be at least 1")
    dist = np.asarray(dist, dtype=float)
    terms, divs = {}, {}
    subs = []
    if scheme in ("multihop", "coherent-multihop", "decode-forward"):
        R = float(rate)
        if dist.shape != ch.sizes:
            raise ValueError(f"{scheme} needs a p(x1,x2) table of shape {ch.sizes}")
        if scheme == "multihop":
            prod = np.outer(dist.sum(axis=1), dist.sum(axis=0))
            if np.max(np.abs(prod - dist)) > PRODUCT_TOL:
                raise ValueError("multihop needs a product distribution p(x1)p(x2)")
        st = induced_state(ch, dist)
        st2 = reduce_quantum(st, [0])
        st3 = reduce_quantum(st, [1])
        divs["relay"] = _dh_pair(st2, ("X1",), eps, **dh_kw)
        terms["relay"] = 4.0 * _pow_term(R, divs["relay"])
        if scheme == "decode-forward":
            divs["receiver"] = _dh_pair(st3, ("X1", "X2"), eps, **dh_kw)
            terms["f"] = 2.0 * f_k_eps(2, eps)
        else:
            st23 = marginalize(st3, ("X2",))
            divs["receiver"] = _dh_pair(st23, ("X2",), eps, **dh_kw)
            terms["f"] = f_k_eps(1, eps) + f_k_eps(2, eps)
        terms["receiver"] = 4.0 * _pow_term(R, divs["receiver"])
        raw = b * (terms["f"] + terms["relay"] + terms["receiver"])
    elif scheme == "partial-decode-forward":
        Rp, Rq = (float(r) for r in rate)
        if dist.ndim != 3 or dist.shape[1:] != ch.sizes:
            raise ValueError("partial decode-forward needs a p(u,x1,x2) table")
        st = induced_state(ch, dist)
        st2 = marginalize(reduce_quantum(st, [0]), ("U", "X2"))
        divs["relay"] = _dh_pair(st2, ("U",), eps, **dh_kw)
        relay = b * (f_k_eps(2, eps) + 4.0 * _pow_term(Rp, divs["relay"]))
        st3 = reduce_quantum(st, [1])
        cells = int(np.prod(st3.sizes))
        exact = (cells * st3.d_b) ** b <= exact_dim_cap
        power = block_power_state(st3, b) if exact else None
        pack = 0.0
        for Jp, Jq in pdf_pairs(b):
            kinds = _pdf_block_kinds(Jp, Jq, b)
            key = f"Jp={list(Jp)},Jq={list(Jq)}"
            if exact:
                severed = [f"{l}_{j}" for j, k in enumerate(kinds, start=1) for l in k]
                dh = _dh_pair(power, severed, eps, **dh_kw)
            else:
                dh = _composite_dh_lower(st3, kinds, eps)
                subs.append(key)
            divs[key] = dh
            t = 4.0 * _pow_term(len(Jp) * Rp + len(Jq) * Rq, dh)
            terms[key] = t
            pack += t
        terms["relay"] = relay
        terms["f"] = f_k_eps(3 * b, eps)
        raw = relay + terms["f"] + pack
    else:
        raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
    value = min(max(raw, 0.0), 1.0) if not math.isnan(raw) else 1.0
    return DeltaReport(scheme, value, raw, terms, divs, "bound" if subs else "exact", subs)


def _composite_dh_lower(state: CqState, kinds, eps: float) -> float:
    """Lower bound on ``D_H`` of a tensor product of per-block cq pairs.

    Uses ``D_H >= D - F1`` on one copy of the composite pair, with ``D`` and
    the two traces inside ``eta`` multiplied out block by block, together
    with the trivial ``D_H >= -log2(1 - eps)``.
    """
    trivial = -math.log2(1.0 - eps)
    r = assemble_cq(state).matrix
    r32, r12 = psd_power(r, 1.5), psd_power(r, 0.5)
    D, a, c = 0.0, 1.0, 1.0
    for k in kinds:
        if not k:
            continue
        s = assemble_cq(marginal_product_cq(state, k)).matrix
        d = relative_entropy(r, s)
        if math.isinf(d):
            return trivial
        D += d
        a *= float(np.real(np.trace(r32 @ psd_power(s, -0.5))))
        c *= float(np.real(np.trace(r12 @ psd_power(s, 0.5))))
    f1, _ = sandwich_constants(eps, 1.0 + a + c)
    return max(D - f1, trivial)


# ---------------------------------------------------------------------------
# partial decode-forward region
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PdfInequality:
    Jp: tuple
    Jq: tuple
    jp: int
    jq: int
    threshold: float


@dataclass
class PdfRegion:
    """``S(b)``: ``j_p R_p + j_q R_q < threshold`` for every stored inequality.

    ``simplified`` holds the two thresholds of ``S``:
    ``R_q < I(X1;B3|UX2)`` and ``R_p + R_q < I(X1X2;B3)``.
    """

    b: int
    inequalities: list
    simplified: tuple
    quantities: dict

    def in_s(self, rp, rq):
        rp, rq = np.asarray(rp, dtype=float), np.asarray(rq, dtype=float)
        q, s = self.simplified
        return (rp >= 0) & (rq >= 0) & (rq < q) & (rp + rq < s)

    def in_sb(self, rp, rq):
        rp, rq = np.asarray(rp, dtype=float), np.asarray(rq, dtype=float)
        ok = (rp >= 0) & (rq >= 0)
        for ineq in self.inequalities:
            ok = ok & (ineq.jp * rp + ineq.jq * rq < ineq.threshold)
        return ok

    def sum_rate_slack(self) -> float:
        """Sum-rate bound of ``J_p = J_q = [b-1]`` minus that of ``S``."""
        full = tuple(range(1, self.b))
        for ineq in self.inequalities:
            if ineq.Jp == full and ineq.Jq == full:
                return ineq.threshold / (self.b - 1) - self.simplified[1]
        raise ValueError("region has no full inequality")  # pragma: no cover

    def grid(self, n: int = 50, rp_max: float | None = None, rq_max: float | None = None):
        q, s = self.simplified
        rp_max = s if rp_max is None else rp_max
        rq_max = max(q, 1e-12) if rq_max is None else rq_max
        rp, rq = np.meshgrid(np.linspace(0.0, rp_max, n), np.linspace(0.0, rq_max, n), indexing="ij")
        return rp, rq, self.in_s(rp, rq), self.in_sb(rp, rq)


def _pdf_b3_state(state: CqState) -> CqState:
    if set(state.labels) != {"U", "X1", "X2"}:
        raise StateError(f"expected labels U, X1, X2; got {state.labels}")
    if len(state.dims) == 2:
        state = reduce_quantum(state, [1])
    return marginalize(state, ("U", "X1", "X2"))


def pdf_region(b: int, state: CqState, max_pairs: int = 1 << 16) -> PdfRegion:
    """Partial decode-forward region ``S(b)`` and its limit ``S``.

    ``state`` is the ``U X1 X2 B2 B3`` state (or already reduced to ``B3``).
    Each ``b``-block threshold is a sum of single-block terms, because the
    ``b``-block state is a tensor power and conditioning on other blocks
    drops out:

    * blocks in ``J_p + 1`` contribute ``I(U X1 X2; B3)``
    * other blocks in ``J_p`` contribute ``I(X1 U; B3 | X2)``
    * other blocks in ``J_q`` contribute ``I(X1; B3 | U X2)``
    """
    if b < 2:
        raise ValueError("b must be at least 2")
    n_pairs = 4 ** (b - 1) - 1
    if n_pairs > max_pairs:
        raise ValueError(f"b = {b} gives {n_pairs} inequalities, above the cap {max_pairs}")
    st = _pdf_b3_state(state)
    q = {
        "I(UX1X2;B3)": cmi(st, ("U", "X1", "X2")),
        "I(X1U;B3|X2)": cmi(st, ("X1", "U"), ("X2",)),
        "I(X1;B3|UX2)": cmi(st, ("X1",), ("U", "X2")),
        "I(X1X2;B3)": cmi(st, ("X1", "X2")),
        "I(X1;B3|X2)": cmi(st, ("X1",), ("X2",)),
    }
    per_kind = {
        ("U", "X1", "X2"): q["I(UX1X2;B3)"],
        ("U", "X1"): q["I(X1U;B3|X2)"],
        ("X1",): q["I(X1;B3|UX2)"],
        (): 0.0,
    }
    ineqs = []
    for Jp, Jq in pdf_pairs(b):
        thr = float(sum(per_kind[k] for k in _pdf_block_kinds(Jp, Jq, b)))
        ineqs.append(PdfInequality(Jp, Jq, len(Jp), len(Jq), thr))
    return PdfRegion(b, ineqs, (q["I(X1;B3|UX2)"], q["I(X1X2;B3)"]), q)


# ---------------------------------------------------------------------------
# conditioning removal on tensor powers
# ---------------------------------------------------------------------------

def cmi_tensor_zero_check(rho, m: int, B, Bp, C=(), require_disjoint_factors: bool = True) -> float:
    """``I(B; B' | C)`` on an ``n``-fold tensor power of an ``m``-partite state.

    Subsystem ``i`` of ``rho`` lives on tensor factor ``i // m``.  When ``B``
    and ``B'`` sit on disjoint factors the value is zero; pass
    ``require_disjoint_factors=False`` to evaluate other configurations.
    """
    dims = tuple(rho.dims) if isinstance(rho, DensityOperator) else None
    mat = rho.matrix if isinstance(rho, DensityOperator) else np.asarray(rho)
    if dims is None:
        raise ValueError("rho must carry subsystem dims")
    if len(dims) % m:
        raise ValueError(f"{len(dims)} subsystems is not a multiple of m = {m}")
    B, Bp, C = set(B), set(Bp), set(C)
    if not B or not Bp:
        raise ValueError("B and B' must be nonempty")
    if B & Bp or B & C or Bp & C:
        raise ValueError("B, B' and C must be disjoint")
    if not (B | Bp | C) <= set(range(len(dims))):
        raise ValueError("subsystem index out of range")
    if require_disjoint_factors and {i // m for i in B} & {i // m for i in Bp}:
        raise ValueError("B and B' share a tensor factor")

    def S(keep):
        if not keep:
            return 0.0
        return entropy(partial_trace_matrix(mat, dims, sorted(keep)))

    return float(S(B | C) + S(Bp | C) - S(B | Bp | C) - S(C))
