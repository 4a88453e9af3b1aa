"""Invariant suites run by ``cqrelay check``.

Each check returns the worst measured deviation alongside its tolerance so
the summary doubles as a tolerance printout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import entropic, netgen, relay, sim
from .optimize import OptimizerConfig
from .qcore import assemble_cq, marginal_product, random_cq_state, random_density

SUITES = ("entropic", "netgen", "relay", "sim")


@dataclass
class CheckResult:
    suite: str
    name: str
    passed: bool
    deviation: float
    tolerance: float
    detail: str = ""

    def to_json(self) -> dict:
        return {
            "suite": self.suite,
            "name": self.name,
            "passed": bool(self.passed),
            "deviation": float(self.deviation),
            "tolerance": float(self.tolerance),
            "detail": self.detail,
        }


def _result(suite, name, dev, tol, detail=""):
    return CheckResult(suite, name, bool(dev <= tol), float(dev), float(tol), detail)


def check_entropic(seed: int = 0):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(50):
        k = int(rng.integers(1, 4))
        sizes = tuple(int(s) for s in rng.integers(1, 4, size=k))
        st = random_cq_state(rng, sizes, int(rng.integers(1, 4)))
        S = tuple(l for l in st.labels if rng.random() < 0.5) or st.labels[:1]
        rest = tuple(l for l in st.labels if l not in S)
        d = entropic.relative_entropy(assemble_cq(st), marginal_product(st, S))
        worst = max(worst, abs(d - entropic.cmi(st, S, rest)))
    out = [_result("entropic", "cmi-identity", worst, 1e-9)]
    rho = np.diag([0.3, 0.7]).astype(complex)
    dev = max(abs(entropic.dh_divergence(rho, rho, e).value + math.log2(1 - e)) for e in (0.01, 0.1, 0.5))
    out.append(_result("entropic", "dh-self", dev, 1e-8))
    viol = 0.0
    for _ in range(20):
        p, q = rng.dirichlet(np.ones(4)), rng.dirichlet(np.ones(4))
        vals = [entropic.dh_divergence(np.diag(p), np.diag(q), e).value for e in (0.05, 0.2, 0.5)]
        viol = max(viol, vals[0] - vals[1], vals[1] - vals[2], 0.0)
    out.append(_result("entropic", "dh-monotone-eps", viol, 1e-8))
    return out


def check_netgen(net=None, seed: int = 0):
    out = []
    fig2 = netgen.fig2_network()
    rep = netgen.validate(fig2)
    out.append(CheckResult("netgen", "fig2-valid", rep.ok, 0.0, 0.0, rep.message))
    rows = {(2,): ("X2", "X3"), (3,): ("X3",), (2, 3): ("X2", "X3")}
    bad = sum(netgen.s_t(fig2, fig2.vertices, T) != want for T, want in rows.items())
    out.append(_result("netgen", "table-I", float(bad), 0.0))
    cb = netgen.generate_codebook(fig2, seed)
    mismatch = 0
    for m in netgen.all_messages(fig2):
        for v in fig2.vertices:
            for m3 in range(fig2.msg_sizes[3]):
                other = {**m, 3: m3}
                if 3 not in fig2.ind[v] and cb.codeword(v, other) != cb.codeword(v, m):
                    mismatch += 1
    out.append(_result("netgen", "codeword-sharing", float(mismatch), 0.0))
    if net is not None:
        rep = netgen.validate(net)
        out.append(CheckResult("netgen", "input-network-valid", rep.ok, 0.0, 0.0,
                               rep.message or "ok"))
    return out


def check_relay(seed: int = 0, channels: int = 5):
    rng = np.random.default_rng(seed)
    cfg = OptimizerConfig(resolution=9, rounds=1)
    order_viol, report_dev = 0.0, 0.0
    for _ in range(channels):
        ch = relay.random_channel(rng)
        b = relay.all_bounds(ch, cfg)
        v = [b[k].value for k in ("multihop", "coherent-multihop", "decode-forward", "cutset")]
        order_viol = max(order_viol, v[0] - v[1], v[1] - v[2], v[2] - v[3], 0.0)
        for r in b.values():
            report_dev = max(report_dev, abs(r.value - r.recomputed_value()))
    out = [_result("relay", "bound-ordering", order_viol, 1e-9),
           _result("relay", "report-min-of-terms", report_dev, 1e-9)]
    worst = 0
    for _ in range(2):
        ch = relay.random_channel(rng)
        p = rng.dirichlet(np.ones(8)).reshape(2, 2, 2)
        for b in (2, 3):
            reg = relay.pdf_region(b, relay.induced_state(ch, p))
            _, _, s, sb = reg.grid(50)
            worst = max(worst, int(np.sum(s & ~sb)))
    out.append(_result("relay", "region-containment", float(worst), 0.0))
    return out


def check_sim(seed: int = 0):
    rng = np.random.default_rng(seed)
    out = []
    states = np.stack([random_density(3, rng) for _ in range(4)])
    povm = sim.build_pgm(states)
    out.append(_result("sim", "pgm-completeness", povm.completeness_error(), 1e-8))
    out.append(_result("sim", "pgm-positivity", max(0.0, -povm.min_eigenvalue()), 1e-10))
    ket0 = np.diag([1.0, 0.0]).astype(complex)
    plus = np.full((2, 2), 0.5, dtype=complex)
    dev = abs(sim.exact_success([ket0, plus]) - (1 + 2 ** -0.5) / 2)
    out.append(_result("sim", "pgm-two-state", dev, 1e-12))
    return out


def run(suite: str = "all", net=None, seed: int = 0):
    if suite not in SUITES + ("all",):
        raise ValueError(f"unknown suite {suite!r}")
    chosen = SUITES if suite == "all" else (suite,)
    results = []
    for s in chosen:
        if s == "entropic":
            results += check_entropic(seed)
        elif s == "netgen":
            results += check_netgen(net, seed)
        elif s == "relay":
            results += check_relay(seed)
        else:
            results += check_sim(seed)
    return results
