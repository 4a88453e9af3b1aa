"""Entropies, divergences and the hypothesis-testing relative entropy (bits)."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _kernels
from .qcore import CqState, DensityOperator, condition_on, marginalize

ZERO_EIG = _kernels.ZERO_EIG
COMMUTE_TOL = 1e-10
DH_GAP_TOL = 1e-6
DH_MAX_ITER = 10_000


class SolverError(RuntimeError):
    """The D_H solver stopped before reaching its gap tolerance."""

    def __init__(self, msg, result=None):
        super().__init__(msg)
        self.result = result


def _mat(rho) -> np.ndarray:
    return rho.matrix if isinstance(rho, DensityOperator) else np.asarray(rho, dtype=np.complex128)


def _herm(m):
    return 0.5 * (m + m.conj().T)


def entropy(rho) -> float:
    """Von Neumann entropy in bits."""
    lam = np.linalg.eigvalsh(_herm(_mat(rho)))
    return float(_kernels.entropy_rows(lam)[0])


def entropy_batch(mats: np.ndarray) -> np.ndarray:
    """Entropies of a stack ``(..., d, d)`` of density matrices."""
    mats = np.asarray(mats)
    lead = mats.shape[:-2]
    d = mats.shape[-1]
    if d == 1:
        return np.zeros(lead)
    lam = np.linalg.eigvalsh(mats.reshape((-1, d, d)))
    return _kernels.entropy_rows(lam).reshape(lead)


def relative_entropy(rho, sigma) -> float:
    """``tr rho (log rho - log sigma)`` in bits, ``inf`` off the support of sigma."""
    r = _herm(_mat(rho))
    s = _herm(_mat(sigma))
    if r.shape != s.shape:
        raise ValueError(f"dimension mismatch {r.shape} vs {s.shape}")
    lr, vr = np.linalg.eigh(r)
    ls, vs = np.linalg.eigh(s)
    ker = vs[:, ls <= ZERO_EIG]
    if ker.shape[1] and np.real(np.trace(ker.conj().T @ r @ ker)) > ZERO_EIG:
        return math.inf
    lr = np.clip(lr, 0.0, None)
    pos_r = lr > 0
    t1 = float(np.sum(lr[pos_r] * np.log2(lr[pos_r])))
    sup = ls > ZERO_EIG
    # tr(rho log sigma) = sum_ij |<s_j|r_i>|^2 l_i log s_j
    overlap = np.abs(vs[:, sup].conj().T @ vr) ** 2  # (supp_s, d)
    t2 = float(np.log2(ls[sup]) @ overlap @ lr)
    d = t1 - t2
    # rounding can leave a tiny negative value for rho == sigma
    return 0.0 if -1e-12 < d < 0.0 else d


def holevo(weights: np.ndarray, states: np.ndarray) -> float:
    """``H(sum_i w_i rho_i) - sum_i w_i H(rho_i)`` for a flat ensemble."""
    w = np.asarray(weights, dtype=float).ravel()
    st = np.asarray(states).reshape((w.size,) + states.shape[-2:])
    avg = np.tensordot(w, st, axes=1)
    return float(entropy(avg) - w @ entropy_batch(st))


def mutual_information(state: CqState) -> float:
    """``I(X; B)`` of a cq state over all of its classical labels."""
    return holevo(state.dist, state.family)


def cmi(state: CqState, S: Sequence[str], cond: Sequence[str] = ()) -> float:
    """``I(X_S; B | X_cond)`` in bits.

    Labels outside ``S`` and ``cond`` are traced out first.
    """
    S, cond = tuple(S), tuple(cond)
    if set(S) & set(cond):
        raise ValueError(f"S {S} and cond {cond} overlap")
    if not S:
        return 0.0
    st = marginalize(state, S + cond) if set(S + cond) != set(state.labels) else state
    dec = condition_on(st, cond)
    return float(sum(w * mutual_information(sub) for w, sub in dec.table.values()))


# ---------------------------------------------------------------------------
# hypothesis-testing relative entropy
# ---------------------------------------------------------------------------

@dataclass
class DivergenceResult:
    value: float
    certificate: np.ndarray | None = None
    gap: float = 0.0
    method: str = "exact"
    type2: float = 0.0


def _neglog2(x: float) -> float:
    return math.inf if x <= 0.0 else -math.log2(x)


def codiagonalize(r: np.ndarray, s: np.ndarray, tol: float = COMMUTE_TOL):
    """Common eigenbasis of commuting Hermitian ``r`` and ``s``, or ``None``."""
    if np.max(np.abs(r @ s - s @ r)) > tol:
        return None
    # a generic combination separates joint eigenspaces
    _, v = np.linalg.eigh(r + 0.6180339887498949 * s)
    rd = v.conj().T @ r @ v
    sd = v.conj().T @ s @ v
    off = max(np.max(np.abs(rd - np.diag(np.diag(rd)))), np.max(np.abs(sd - np.diag(np.diag(sd)))))
    if off > 1e-8:
        return None
    return v, np.diag(rd).real.copy(), np.diag(sd).real.copy()


def dh_commuting(p: np.ndarray, q: np.ndarray, eps: float):
    """Exact D_H for diagonal pairs; returns ``(value, pi, type2)``."""
    p = np.where(p > ZERO_EIG, p, 0.0)
    q = np.where(q > ZERO_EIG, q, 0.0)
    type2, pi = _kernels.neyman_pearson(p, q, 1.0 - eps)
    return _neglog2(type2), pi, type2


def _positive_projector(blocks_r, blocks_s, mu):
    """Projectors onto the positive part of ``mu*r - s`` block by block."""
    projs = []
    tr_r = 0.0
    tr_s = 0.0
    pos_part = 0.0
    for r, s in zip(blocks_r, blocks_s):
        lam, v = np.linalg.eigh(mu * r - s)
        keep = lam > 0
        vk = v[:, keep]
        P = vk @ vk.conj().T
        projs.append(P)
        tr_r += float(np.real(np.vdot(P, r)))
        tr_s += float(np.real(np.vdot(P, s)))
        pos_part += float(lam[keep].sum())
    return projs, tr_r, tr_s, pos_part


def dh_blocks(blocks_r, blocks_s, eps: float, gap_tol: float = DH_GAP_TOL,
              max_iter: int = DH_MAX_ITER, strict: bool = False) -> DivergenceResult:
    """D_H for block-diagonal pairs sharing a block structure.

    Commuting blocks are solved exactly by a joint Neyman-Pearson test.
    Otherwise the scalar Lagrange dual ``g(mu) = mu(1-eps) - tr(mu r - s)_+``
    is maximised by bisection on its supergradient; the primal test is the
    convex combination of the two bracketing spectral projectors that meets
    the type-I constraint with equality.
    """
    if not 0.0 < eps < 1.0:
        raise ValueError("eps must lie in (0, 1)")
    blocks_r = [_herm(np.asarray(b, dtype=np.complex128)) for b in blocks_r]
    blocks_s = [_herm(np.asarray(b, dtype=np.complex128)) for b in blocks_s]
    alpha = 1.0 - eps

    diag = [codiagonalize(r, s) for r, s in zip(blocks_r, blocks_s)]
    if all(d is not None for d in diag):
        p = np.concatenate([d[1] for d in diag])
        q = np.concatenate([d[2] for d in diag])
        val, pi, t2 = dh_commuting(p, q, eps)
        cert, off = [], 0
        for v, pd, _ in diag:
            k = pd.size
            cert.append((v * pi[off:off + k]) @ v.conj().T)
            off += k
        return DivergenceResult(val, cert, 0.0, "neyman-pearson", t2)

    # tests supported on ker(s) cost nothing
    ker_weight = 0.0
    for r, s in zip(blocks_r, blocks_s):
        ls, vs = np.linalg.eigh(s)
        k = vs[:, ls <= ZERO_EIG]
        ker_weight += float(np.real(np.trace(k.conj().T @ r @ k)))
    if ker_weight >= alpha - 1e-14:
        cert = []
        for r, s in zip(blocks_r, blocks_s):
            ls, vs = np.linalg.eigh(s)
            k = vs[:, ls <= ZERO_EIG]
            cert.append(k @ k.conj().T)
        return DivergenceResult(math.inf, cert, 0.0, "kernel", 0.0)

    def dual(mu, pos_part):
        return mu * alpha - pos_part

    lo, hi = 0.0, 1.0
    P_hi, r_hi, s_hi, pp_hi = _positive_projector(blocks_r, blocks_s, hi)
    it = 0
    while r_hi < alpha:
        lo = hi
        hi *= 2.0
        P_hi, r_hi, s_hi, pp_hi = _positive_projector(blocks_r, blocks_s, hi)
        it += 1
        if it > 200:
            raise SolverError("could not bracket the dual optimum")
    P_lo, r_lo, s_lo, pp_lo = _positive_projector(blocks_r, blocks_s, lo)
    best_dual = max(dual(lo, pp_lo), dual(hi, pp_hi), 0.0)

    def primal():
        if r_hi - r_lo <= 0:
            t = 1.0
        else:
            t = min(max((alpha - r_lo) / (r_hi - r_lo), 0.0), 1.0)
        t2 = (1 - t) * s_lo + t * s_hi
        cert = [(1 - t) * a + t * b for a, b in zip(P_lo, P_hi)]
        return t2, cert

    gap = math.inf
    t2, cert = primal()
    for it in range(max_iter):
        t2, cert = primal()
        gap = _neglog2(best_dual) - _neglog2(t2) if best_dual > 0 else math.inf
        if gap <= gap_tol:
            break
        mid = 0.5 * (lo + hi)
        P_m, r_m, s_m, pp_m = _positive_projector(blocks_r, blocks_s, mid)
        best_dual = max(best_dual, dual(mid, pp_m))
        if r_m >= alpha:
            hi, P_hi, r_hi, s_hi = mid, P_m, r_m, s_m
        else:
            lo, P_lo, r_lo, s_lo = mid, P_m, r_m, s_m
        if hi - lo <= 1e-15 * max(hi, 1.0):
            t2, cert = primal()
            gap = _neglog2(best_dual) - _neglog2(t2) if best_dual > 0 else math.inf
            break
    res = DivergenceResult(_neglog2(t2), cert, max(gap, 0.0), "dual-bisection", t2)
    if gap > gap_tol and strict:
        raise SolverError(f"D_H gap {gap:.3g} above tolerance", res)
    return res


def dh_divergence(rho, sigma, eps: float, gap_tol: float = DH_GAP_TOL,
                  max_iter: int = DH_MAX_ITER, strict: bool = False) -> DivergenceResult:
    """Hypothesis-testing relative entropy ``D_H^eps(rho || sigma)`` in bits.

    ``max -log2 tr(Pi sigma)`` over tests ``0 <= Pi <= I`` with
    ``tr(Pi rho) >= 1 - eps``.  The returned certificate is the optimal
    test as a dense matrix.
    """
    r, s = _mat(rho), _mat(sigma)
    if r.shape != s.shape:
        raise ValueError(f"dimension mismatch {r.shape} vs {s.shape}")
    res = dh_blocks([r], [s], eps, gap_tol, max_iter, strict)
    res.certificate = res.certificate[0]
    return res


def dh_cq(state: CqState, surrogate: CqState, eps: float, **kw) -> DivergenceResult:
    """D_H between two cq states with the same classical table, solved block-wise."""
    p = state.dist.ravel()
    fr = state.family.reshape((-1,) + state.family.shape[-2:])
    fs = surrogate.family.reshape((-1,) + surrogate.family.shape[-2:])
    keep = np.flatnonzero(p > 0)
    res = dh_blocks([p[i] * fr[i] for i in keep], [p[i] * fs[i] for i in keep], eps, **kw)
    res.certificate = None
    return res


# ---------------------------------------------------------------------------
# finite-n sandwich
# ---------------------------------------------------------------------------

@dataclass
class DhFiniteBounds:
    lower: float
    upper: float
    f1: float
    f2: float
    eta: float
    relative_entropy: float


def psd_power(m: np.ndarray, power: float, support_only: bool = True) -> np.ndarray:
    lam, v = np.linalg.eigh(_herm(m))
    out = np.zeros_like(lam)
    pos = lam > ZERO_EIG
    out[pos] = lam[pos] ** power
    return (v * out) @ v.conj().T


def eta_constant(rho, sigma) -> float:
    """``1 + tr rho^{3/2} sigma^{-1/2} + tr rho^{1/2} sigma^{1/2}`` (inverse on supp sigma)."""
    r, s = _mat(rho), _mat(sigma)
    a = np.real(np.trace(psd_power(r, 1.5) @ psd_power(s, -0.5)))
    b = np.real(np.trace(psd_power(r, 0.5) @ psd_power(s, 0.5)))
    return float(1.0 + a + b)


def sandwich_constants(eps: float, eta: float) -> tuple[float, float]:
    log_eta = math.log2(eta)
    f1 = 4.0 * math.sqrt(2.0) * math.log2(1.0 / eps) * log_eta
    f2 = 4.0 * math.sqrt(2.0) * math.log2(1.0 / (1.0 - eps)) * log_eta
    return f1, f2


def dh_finite_bounds(rho, sigma, eps: float, n: int) -> DhFiniteBounds:
    """Interval ``[D - F1/sqrt(n), D + F2/sqrt(n)]`` containing ``(1/n) D_H(rho^n || sigma^n)``.

    All logarithms, including those inside ``F1``, ``F2`` and ``eta``, are base 2.
    """
    if not 0.0 < eps < 1.0:
        raise ValueError("eps must lie in (0, 1)")
    if n < 1:
        raise ValueError("n must be a positive integer")
    d = relative_entropy(rho, sigma)
    if math.isinf(d):
        raise ValueError("relative entropy is infinite; the sandwich bounds do not apply")
    eta = eta_constant(rho, sigma)
    f1, f2 = sandwich_constants(eps, eta)
    rt = math.sqrt(n)
    return DhFiniteBounds(d - f1 / rt, d + f2 / rt, f1, f2, eta, d)
