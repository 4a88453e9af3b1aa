"""Multiplex Bayesian networks, random codebooks and packing constraints.

A network is a DAG over classical codeword components ``X_v``, a set of
message parts ``J`` with sizes ``|M_j|``, and a map ``ind`` saying which
message parts each component depends on.  :func:`generate_codebook` draws a
codebook by ancestral sampling over the DAG, one cell per ``(v, m_v)`` with
``m_v`` ranging over ``M_ind(v)``.  Randomness is keyed on
``(seed, vertex, cell)``, so the draw does not depend on evaluation order.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Hashable, Mapping, Sequence

import numpy as np

from . import _kernels
from .entropic import cmi, dh_cq
from .qcore import CqState, marginal_product_cq

CPD_TOL = 1e-10


class NetworkError(ValueError):
    pass


@dataclass(frozen=True)
class ValidationReport:
    ok: bool
    kind: str = ""
    message: str = ""

    def __bool__(self):
        return self.ok


@dataclass
class MultiplexBayesNet:
    """DAG ``vertices``/``edges`` with CPDs, message parts and the ``ind`` map.

    ``cpds[v]`` has one axis per parent (in ``parents(v)`` order) followed by
    the axis of ``X_v`` itself.  Message parts are ordered as listed in
    ``msg_sizes``; messages inside ``M_j`` are ``0 .. |M_j|-1``.
    """

    alphabets: dict
    edges: list
    cpds: dict
    msg_sizes: dict
    ind: dict
    vertices: tuple = field(default=())

    def __post_init__(self):
        if not self.vertices:
            self.vertices = tuple(self.alphabets)
        self.alphabets = {v: int(self.alphabets[v]) for v in self.vertices}
        self.edges = [tuple(e) for e in self.edges]
        self.msg_sizes = {j: int(s) for j, s in self.msg_sizes.items()}
        self.ind = {v: frozenset(self.ind.get(v, ())) for v in self.vertices}
        self.cpds = {v: np.asarray(self.cpds[v], dtype=float) for v in self.vertices if v in self.cpds}

    @property
    def J(self) -> tuple:
        return tuple(self.msg_sizes)

    def parents(self, v) -> tuple:
        return tuple(a for a, b in self.edges if b == v)

    def ordered_ind(self, v) -> tuple:
        """``ind(v)`` in the declared order of ``J``."""
        return tuple(j for j in self.J if j in self.ind[v])

    def topological_order(self) -> tuple:
        indeg = {v: 0 for v in self.vertices}
        for a, b in self.edges:
            indeg[b] += 1
        ready = [v for v in self.vertices if indeg[v] == 0]
        out = []
        while ready:
            v = ready.pop(0)
            out.append(v)
            for a, b in self.edges:
                if a == v:
                    indeg[b] -= 1
                    if indeg[b] == 0:
                        ready.append(b)
        if len(out) != len(self.vertices):
            raise NetworkError("graph has a cycle")
        return tuple(out)

    def joint_distribution(self) -> np.ndarray:
        """``p_X`` over ``vertices`` order, the product of CPDs."""
        order = self.topological_order()
        axes = {v: i for i, v in enumerate(self.vertices)}
        shape = tuple(self.alphabets[v] for v in self.vertices)
        p = np.ones(shape)
        for v in order:
            pa = self.parents(v)
            cpd = self.cpds[v]
            src = [axes[u] for u in pa] + [axes[v]]
            expand = np.moveaxis(
                cpd.reshape(cpd.shape + (1,) * (len(shape) - cpd.ndim)),
                list(range(cpd.ndim)),
                src,
            )
            p = p * expand
        return p


def validate(net: MultiplexBayesNet) -> ValidationReport:
    for v in net.vertices:
        if net.alphabets[v] < 1:
            return ValidationReport(False, "alphabet", f"vertex {v!r} has empty alphabet")
    for a, b in net.edges:
        if a not in net.alphabets or b not in net.alphabets:
            return ValidationReport(False, "edge", f"edge ({a!r}, {b!r}) names an unknown vertex")
    try:
        net.topological_order()
    except NetworkError:
        return ValidationReport(False, "cycle", "graph is not acyclic")
    for j, s in net.msg_sizes.items():
        if s < 1:
            return ValidationReport(False, "messages", f"|M_{j}| = {s} < 1")
    for v in net.vertices:
        unknown = net.ind[v] - set(net.J)
        if unknown:
            return ValidationReport(False, "ind", f"ind({v!r}) names unknown message parts {sorted(map(str, unknown))}")
    for a, b in net.edges:
        if not net.ind[a] <= net.ind[b]:
            return ValidationReport(
                False, "ind-condition",
                f"edge ({a!r}, {b!r}): ind({a!r}) = {sorted(map(str, net.ind[a]))} is not a subset of "
                f"ind({b!r}) = {sorted(map(str, net.ind[b]))}",
            )
    for v in net.vertices:
        if v not in net.cpds:
            return ValidationReport(False, "cpd", f"vertex {v!r} has no CPD")
        cpd = net.cpds[v]
        want = tuple(net.alphabets[u] for u in net.parents(v)) + (net.alphabets[v],)
        if cpd.shape != want:
            return ValidationReport(False, "cpd", f"CPD of {v!r} has shape {cpd.shape}, expected {want}")
        if np.any(cpd < -CPD_TOL):
            return ValidationReport(False, "cpd", f"CPD of {v!r} has a negative entry")
        sums = cpd.sum(axis=-1)
        bad = np.argwhere(np.abs(sums - 1.0) > CPD_TOL)
        if bad.size:
            row = tuple(int(i) for i in bad[0])
            return ValidationReport(False, "cpd", f"CPD of {v!r} at parent values {row} sums to {sums[row]!r}")
    return ValidationReport(True)


# ---------------------------------------------------------------------------
# codebooks
# ---------------------------------------------------------------------------

@dataclass
class Codebook:
    """``entries[v]`` is an int array over ``M_ind(v)`` axes (``ordered_ind(v)`` order)."""

    net: MultiplexBayesNet
    entries: dict
    seed: int

    def codeword(self, v, m: Mapping[Hashable, int]) -> int:
        idx = tuple(int(m[j]) for j in self.net.ordered_ind(v))
        return int(self.entries[v][idx])

    def lookup(self, m: Mapping[Hashable, int]) -> tuple:
        """``x(m)`` for a full message ``m`` (a mapping ``j -> m_j``)."""
        return tuple(self.codeword(v, m) for v in self.net.vertices)

    def to_json(self) -> dict:
        return {
            "seed": int(self.seed),
            "vertices": [str(v) for v in self.net.vertices],
            "entries": {
                str(v): {
                    "ind": [str(j) for j in self.net.ordered_ind(v)],
                    "table": self.entries[v].tolist(),
                }
                for v in self.net.vertices
            },
        }


def _vertex_stream(net: MultiplexBayesNet, v) -> int:
    return net.vertices.index(v)


def generate_codebook(net: MultiplexBayesNet, seed: int, check: bool = True) -> Codebook:
    """Random codebook by ancestral sampling over the multiplex network.

    Cell ``(v, m_v)`` uses the keyed uniform at
    ``(seed, index of v, row-major index of m_v)`` and inverts the CPD row
    selected by the parents' codewords restricted to ``m_v``.
    """
    if check:
        rep = validate(net)
        if not rep:
            raise NetworkError(rep.message)
    entries = {}
    for v in net.topological_order():
        own = net.ordered_ind(v)
        shape = tuple(net.msg_sizes[j] for j in own)
        ncell = int(np.prod(shape)) if shape else 1
        u = _kernels.keyed_uniforms(seed, _vertex_stream(net, v), np.arange(ncell, dtype=np.uint64))
        cpd = net.cpds[v]
        pa = net.parents(v)
        if pa:
            # parent codewords broadcast onto v's message axes
            parent_vals = []
            for w in pa:
                wind = net.ordered_ind(w)
                arr = entries[w]
                src = [own.index(j) for j in wind]
                arr = arr.reshape(arr.shape + (1,) * (len(own) - arr.ndim))
                arr = np.moveaxis(arr, list(range(len(wind))), src)
                parent_vals.append(np.broadcast_to(arr, shape).ravel())
            rows = cpd[tuple(parent_vals)]
        else:
            rows = np.broadcast_to(cpd, (ncell, cpd.shape[-1]))
        if np.any(np.abs(rows.sum(axis=-1) - 1.0) > CPD_TOL):
            raise NetworkError(f"CPD row of {v!r} reached by sampling is not normalised")
        cdf = np.cumsum(rows, axis=-1)
        entries[v] = _kernels.sample_rows(cdf, u).reshape(shape)
    return Codebook(net, entries, int(seed))


def all_messages(net: MultiplexBayesNet):
    """Every full message as a dict, in lexicographic order over ``J``."""
    J = net.J
    for combo in itertools.product(*(range(net.msg_sizes[j]) for j in J)):
        yield dict(zip(J, combo))


# ---------------------------------------------------------------------------
# ancestral subgraphs and packing constraints
# ---------------------------------------------------------------------------

def ancestral_subgraph(net: MultiplexBayesNet, V_H: Sequence):
    """Induced network on ``V_H`` plus ``J_H`` and the sizes of ``M_H``."""
    V_H = tuple(v for v in net.vertices if v in set(V_H))
    missing = set(V_H) - set(net.vertices)
    if missing:
        raise NetworkError(f"unknown vertices {missing}")
    for v in V_H:
        for u in net.parents(v):
            if u not in V_H:
                raise NetworkError(f"not ancestral: parent {u!r} of {v!r} is missing")
    J_H = tuple(j for j in net.J if any(j in net.ind[v] for v in V_H))
    sub = MultiplexBayesNet(
        alphabets={v: net.alphabets[v] for v in V_H},
        edges=[e for e in net.edges if e[0] in V_H and e[1] in V_H],
        cpds={v: net.cpds[v] for v in V_H if v in net.cpds},
        msg_sizes={j: net.msg_sizes[j] for j in J_H},
        ind={v: net.ind[v] for v in V_H},
        vertices=V_H,
    )
    M_H = {j: net.msg_sizes[j] for j in J_H}
    return sub, J_H, M_H


def s_t(net: MultiplexBayesNet, V_H: Sequence, T) -> tuple:
    """Vertices of ``V_H`` whose codewords depend on some message part in ``T``."""
    _, J_H, _ = ancestral_subgraph(net, V_H)
    T = set(T)
    if not T:
        raise NetworkError("T must be nonempty")
    if not T <= set(J_H):
        raise NetworkError(f"T = {sorted(map(str, T))} is not contained in J_H = {list(J_H)}")
    return tuple(v for v in net.vertices if v in set(V_H) and net.ind[v] & T)


def nonempty_subsets(D: Sequence):
    D = tuple(D)
    for r in range(1, len(D) + 1):
        yield from itertools.combinations(D, r)


@dataclass
class PackingConstraint:
    subset: tuple
    rate_sum: float
    threshold: float
    s_t: tuple

    @property
    def satisfied(self) -> bool:
        return self.rate_sum < self.threshold


def _check_decoding(net, V_H, D, state: CqState):
    _, J_H, _ = ancestral_subgraph(net, V_H)
    if not set(D) <= set(J_H):
        raise NetworkError(f"D = {list(D)} is not contained in J_H = {list(J_H)}")
    names = tuple(str(v) for v in net.vertices if v in set(V_H))
    if set(state.labels) != set(names):
        raise NetworkError(f"state labels {state.labels} do not match V_H {names}")
    return names


def asymptotic_constraints(net, V_H, D, state: CqState) -> list:
    """One constraint ``sum_{t in T} R_t < I(X_{S_T}; B | X_{rest})`` per nonempty ``T``."""
    names = _check_decoding(net, V_H, D, state)
    out = []
    for T in nonempty_subsets(D):
        S = s_t(net, V_H, T)
        S_names = tuple(str(v) for v in S)
        rest = tuple(l for l in names if l not in S_names)
        thr = cmi(state, S_names, rest)
        rate = sum(math.log2(net.msg_sizes[t]) for t in T)
        out.append(PackingConstraint(tuple(T), rate, thr, S))
    return out


def f_k_eps(k: int, eps: float) -> float:
    """``eps + 2^(k/2+2) eps^(1/4) (2^(2^(k+3) - 1/2) + 1)``; ``inf`` on overflow."""
    if eps <= 0.0:
        return 0.0
    log2_eps = math.log2(eps)
    big = 2.0 ** (k + 3) - 0.5
    # log2(2^big + 1) without overflow
    log_inner = big + math.log2(1.0 + 2.0 ** -big) if big < 60 else big
    log_term = k / 2.0 + 2.0 + 0.25 * log2_eps + log_inner
    if log_term > 1023.0:
        return math.inf
    return eps + 2.0 ** log_term


@dataclass
class OneShotBound:
    value: float
    f_term: float
    terms: dict
    divergences: dict
    clipped: bool


def one_shot_error_bound(net, V_H, D, state: CqState, eps: float, clip: bool = False,
                         **dh_kw) -> OneShotBound:
    """Packing-lemma bound on the expected decoding error of the random code."""
    names = _check_decoding(net, V_H, D, state)
    k = len(names)
    f = f_k_eps(k, eps)
    terms, divs = {}, {}
    total = f
    for T in nonempty_subsets(D):
        S = tuple(str(v) for v in s_t(net, V_H, T))
        rate = sum(math.log2(net.msg_sizes[t]) for t in T)
        dh = dh_cq(state, marginal_product_cq(state, S), eps, **dh_kw).value
        term = 4.0 * 2.0 ** (rate - dh) if not math.isinf(dh) else 0.0
        terms[T] = term
        divs[T] = dh
        total += term
    clipped = False
    if clip and total > 1.0:
        total, clipped = 1.0, True
    return OneShotBound(total, f, terms, divs, clipped)


# ---------------------------------------------------------------------------
# fixtures
# ---------------------------------------------------------------------------

FIG2_CPDS = {
    "X1": np.array([0.6, 0.4]),
    "X2": np.array([[0.7, 0.3], [0.2, 0.8]]),
    "X3": np.array([[[0.9, 0.1], [0.5, 0.5]], [[0.3, 0.7], [0.15, 0.85]]]),
}


def fig2_network(msg_sizes=(2, 2, 2), cpds=None) -> MultiplexBayesNet:
    """Chain ``X1 -> X2 -> X3`` (plus ``X1 -> X3``) with ``ind = {1}, {1,2}, {1,2,3}`` and binary alphabets."""
    cpds = FIG2_CPDS if cpds is None else cpds
    return MultiplexBayesNet(
        alphabets={"X1": 2, "X2": 2, "X3": 2},
        edges=[("X1", "X2"), ("X1", "X3"), ("X2", "X3")],
        cpds=dict(cpds),
        msg_sizes={1: msg_sizes[0], 2: msg_sizes[1], 3: msg_sizes[2]},
        ind={"X1": {1}, "X2": {1, 2}, "X3": {1, 2, 3}},
    )


def network_state(net: MultiplexBayesNet, family: np.ndarray, dims=None) -> CqState:
    """cq state with ``p_X`` from the network's CPDs and the given family."""
    return CqState(tuple(str(v) for v in net.vertices), net.joint_distribution(), family, dims)
