"""Monte Carlo simulation of block-Markov relay codes with pretty-good measurements.

Each trial draws a fresh random codebook from the scheme's multiplex
Bayesian network, sends uniformly random messages over ``b`` blocks and runs
the relay and receiver decoders.  The relay measures its ``B2`` share of the
joint ``B2 B3`` output, so the receiver sees the post-measurement ``B3``
state.  Randomness for trial ``t`` comes from ``SeedSequence([seed, t])``,
which makes trials independent of execution order.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .entropic import psd_power
from .netgen import generate_codebook, validate
from .qcore import partial_trace_matrix
from .relay import (
    RelayChannel,
    product_channel,
    scheme_network,
    tensor_power_channel,
    tensor_power_dist,
)

SIM_SCHEMES = ("multihop", "coherent-multihop", "decode-forward")
POVM_TOL = 1e-8
PROB_TOL = 1e-10
SUPPORT_EIG = 1e-12
ABSTAIN = "abstain"


@dataclass
class Povm:
    elements: np.ndarray
    labels: list

    def __post_init__(self):
        self.elements = np.asarray(self.elements, dtype=np.complex128)
        if len(self.labels) != len(self.elements):
            raise ValueError("one label per element required")

    @property
    def dim(self) -> int:
        return self.elements.shape[-1]

    def completeness_error(self) -> float:
        return float(np.max(np.abs(self.elements.sum(axis=0) - np.eye(self.dim))))

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.elements).min())

    def probabilities(self, rho: np.ndarray) -> np.ndarray:
        return np.real(np.einsum("kij,ji->k", self.elements, rho))


def build_pgm(states, weights=None) -> Povm:
    """Square-root measurement ``Q_i = S^{-1/2} w_i rho_i S^{-1/2}``, ``S = sum_j w_j rho_j``.

    The inverse root is taken on the support of ``S``; the complement
    projector is the final ``"abstain"`` element.
    """
    states = np.asarray(states, dtype=np.complex128)
    n, d = states.shape[0], states.shape[-1]
    w = np.full(n, 1.0 / n) if weights is None else np.asarray(weights, dtype=float)
    if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-10:
        raise ValueError("weights must be a probability vector")
    S = np.einsum("k,kij->ij", w, states)
    lam, V = np.linalg.eigh((S + S.conj().T) / 2)
    supp = lam > SUPPORT_EIG * max(1.0, lam.max())
    inv_sqrt = np.zeros_like(lam)
    inv_sqrt[supp] = lam[supp] ** -0.5
    R = (V * inv_sqrt) @ V.conj().T
    Q = np.einsum("ij,kjl,lm->kim", R, w[:, None, None] * states, R)
    Q = (Q + np.conj(np.swapaxes(Q, -1, -2))) / 2
    P_supp = (V[:, supp]) @ V[:, supp].conj().T
    abstain = np.eye(d) - P_supp
    return Povm(np.concatenate([Q, abstain[None]]), list(range(n)) + [ABSTAIN])


def exact_success(states, weights=None) -> float:
    """``sum_m w_m tr(Q_m rho_m)`` for the pretty-good measurement of the ensemble."""
    states = np.asarray(states, dtype=np.complex128)
    n = states.shape[0]
    w = np.full(n, 1.0 / n) if weights is None else np.asarray(weights, dtype=float)
    povm = build_pgm(states, w)
    return float(sum(w[i] * np.real(np.trace(povm.elements[i] @ states[i])) for i in range(n)))


def measure(povm: Povm, rho, rng, dims=None, subsystem: int = 0):
    """Sample an outcome and return ``(label, post_state)``.

    Without ``dims`` the POVM acts on all of ``rho``.  With ``dims`` it acts
    on subsystem ``subsystem`` only and the Kraus update
    ``(sqrt(Q) (x) I) rho (sqrt(Q) (x) I) / p`` is applied to the whole state.
    """
    rho = np.asarray(rho.matrix if hasattr(rho, "matrix") else rho, dtype=np.complex128)
    if dims is None:
        dims = (rho.shape[0],)
        subsystem = 0
    dims = tuple(dims)
    if dims[subsystem] != povm.dim:
        raise ValueError(f"POVM dimension {povm.dim} does not match subsystem dimension {dims[subsystem]}")
    local = partial_trace_matrix(rho, dims, [subsystem]) if len(dims) > 1 else rho
    p = povm.probabilities(local)
    if p.min() < -PROB_TOL:
        raise ValueError(f"negative outcome probability {p.min()!r}")
    p = np.clip(p, 0.0, None)
    cdf = np.cumsum(p) / p.sum()
    k = min(int(np.searchsorted(cdf, rng.random(), side="right")), len(p) - 1)
    K = psd_power(povm.elements[k], 0.5)
    left = int(np.prod(dims[:subsystem]))
    right = int(np.prod(dims[subsystem + 1:]))
    K = np.kron(np.kron(np.eye(left), K), np.eye(right))
    post = K @ rho @ K.conj().T / p[k]
    return povm.labels[k], post


# ---------------------------------------------------------------------------
# protocol simulation
# ---------------------------------------------------------------------------

@dataclass
class SimReport:
    scheme: str
    rate: float
    realized_rate: float
    msg_size: int
    n: int
    blocks: int
    trials: int
    errors: int
    error_rate: float
    stderr: float
    seed: int
    per_block_errors: list = field(default_factory=list)
    first_trial: int = 0

    def to_json(self) -> dict:
        return asdict(self)

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, indent=2)

    def csv_row(self) -> dict:
        return {"rate": self.rate, "n": self.n, "error": self.error_rate, "stderr": self.stderr}


CSV_HEADER = ("rate", "n", "error", "stderr")


def message_size(rate: float, n: int = 1) -> int:
    """``max(1, round(2^(n R)))``."""
    return max(1, int(round(2.0 ** (n * rate))))


def depolarized_copy_channel(p: float, d: int = 2) -> RelayChannel:
    """``d``-ary inputs; ``B2`` holds ``x1`` and ``B3`` holds ``x2``, each through a depolarizing map."""
    def dep(i):
        k = np.zeros((d, d), dtype=np.complex128)
        k[i, i] = 1.0
        return (1 - p) * k + p * np.eye(d) / d
    s2 = [[dep(a) for b in range(d)] for a in range(d)]
    s3 = [[dep(b) for b in range(d)] for a in range(d)]
    return product_channel(s2, s3)


def _b3_average(ch: RelayChannel, dist: np.ndarray) -> np.ndarray:
    """``rho_B3^(x2) = sum_x1 p(x1|x2) rho_B3^(x1 x2)`` for every ``x2``."""
    p2 = dist.sum(axis=0)
    cond = np.where(p2 > 0, dist / np.where(p2 > 0, p2, 1.0), 1.0 / dist.shape[0])
    return np.einsum("ab,abij->bij", cond, ch.family_b3)


def _run_trial(scheme, ch, dist, net, b, size, rng_cb, rng):
    cb = generate_codebook(net, int(rng_cb.integers(0, 2 ** 63)), check=False)
    msgs = [0] + [int(rng.integers(0, net.msg_sizes[j])) for j in range(1, b + 1)]
    if scheme == "decode-forward":
        msgs[b] = 0

    def x1_of(j, prev, cur):
        return cb.codeword(f"X1_{j}", {j - 1: prev, j: cur})

    def x2_of(j, prev):
        return cb.codeword(f"X2_{j}", {j - 1: prev})

    F2, dims = ch.family_b2, ch.dims
    relay_est = [0] * (b + 1)
    b3_states = [None] * (b + 1)
    for j in range(1, b + 1):
        x1 = x1_of(j, msgs[j - 1], msgs[j])
        x2 = x2_of(j, relay_est[j - 1])
        rho = ch.family[x1, x2]
        if j < b and net.msg_sizes[j] > 1:
            cands = [F2[x1_of(j, relay_est[j - 1], m), x2] for m in range(net.msg_sizes[j])]
            label, post = measure(build_pgm(cands), rho, rng, dims, 0)
            relay_est[j] = 0 if label == ABSTAIN else int(label)
            rho = post
        b3_states[j] = partial_trace_matrix(rho, dims, [1])

    est = [0] * (b + 1)
    if scheme == "decode-forward":
        for j in range(b, 1, -1):
            size_prev = net.msg_sizes[j - 1]
            if size_prev == 1:
                continue
            cands = [ch.family_b3[x1_of(j, m, est[j]), x2_of(j, m)] for m in range(size_prev)]
            label, _ = measure(build_pgm(cands), b3_states[j], rng)
            est[j - 1] = 0 if label == ABSTAIN else int(label)
    else:
        avg = _b3_average(ch, dist)
        for j in range(2, b + 1):
            size_prev = net.msg_sizes[j - 1]
            if size_prev == 1:
                continue
            cands = [avg[x2_of(j, m)] for m in range(size_prev)]
            label, _ = measure(build_pgm(cands), b3_states[j], rng)
            est[j - 1] = 0 if label == ABSTAIN else int(label)
    return [est[j] != msgs[j] for j in range(1, b)]


def simulate(scheme: str, ch: RelayChannel, dist, rate: float, b: int, trials: int, seed: int,
             n: int = 1, msg_size: int | None = None, max_dim: int = 4096,
             first_trial: int = 0) -> SimReport:
    """Empirical block error of the scheme's random code.

    ``n`` channel uses per block are realised as the tensor-power channel
    with i.i.d. letters.  Message sets have ``max(1, round(2^(n R)))``
    elements unless ``msg_size`` overrides it; ``realized_rate`` is
    ``log2 |M| / n``.  A trial fails when any of ``m_1 .. m_{b-1}`` is
    decoded wrongly.  Trials ``first_trial .. first_trial + trials - 1`` are
    run, so disjoint chunks can be simulated separately and their error
    counts added.
    """
    if scheme not in SIM_SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}; expected one of {SIM_SCHEMES}")
    if b < 2:
        raise ValueError("b must be at least 2")
    if trials < 1:
        raise ValueError("trials must be positive")
    if n < 1:
        raise ValueError("n must be positive")
    dist = np.asarray(dist, dtype=float)
    if dist.shape != tuple(ch.sizes):
        raise ValueError(f"dist shape {dist.shape} does not match channel alphabets {tuple(ch.sizes)}")
    if scheme == "multihop":
        prod = np.outer(dist.sum(axis=1), dist.sum(axis=0))
        if np.max(np.abs(prod - dist)) > 1e-10:
            raise ValueError("multihop needs a product distribution")
    if (ch.d2 * ch.d3) ** n > max_dim:
        raise ValueError(f"output dimension {(ch.d2 * ch.d3) ** n} exceeds the cap {max_dim}")
    if n > 1:
        ch = tensor_power_channel(ch, n)
        dist = tensor_power_dist(dist, n)
    size = message_size(rate, n) if msg_size is None else int(msg_size)
    if size < 1:
        raise ValueError("msg_size must be positive")
    net = scheme_network(scheme, b, dist, size)
    rep = validate(net)
    if not rep:
        raise ValueError(rep.message)
    errors = 0
    per_block = [0] * (b - 1)
    for t in range(first_trial, first_trial + trials):
        cb_ss, run_ss = np.random.SeedSequence([int(seed), t]).spawn(2)
        wrong = _run_trial(scheme, ch, dist, net, b, size, np.random.default_rng(cb_ss),
                           np.random.default_rng(run_ss))
        errors += any(wrong)
        for i, w in enumerate(wrong):
            per_block[i] += int(w)
    p = errors / trials
    return SimReport(
        scheme=scheme,
        rate=float(rate),
        realized_rate=math.log2(size) / n,
        msg_size=size,
        n=n,
        blocks=b,
        trials=trials,
        errors=errors,
        error_rate=p,
        stderr=math.sqrt(p * (1 - p) / trials),
        seed=int(seed),
        per_block_errors=per_block,
        first_trial=int(first_trial),
    )


def sweep(scheme, ch, dist, rates, ns, b, trials, seed, **kw) -> list:
    return [simulate(scheme, ch, dist, r, b, trials, seed, n=n, **kw) for n in ns for r in rates]


def sweep_csv(reports) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_HEADER, lineterminator="\n")
    w.writeheader()
    for r in reports:
        w.writerow(r.csv_row())
    return buf.getvalue()
