import math

import numpy as np
import pytest
from scipy.optimize import linprog

from cqrelay import relay as R
from cqrelay.entropic import cmi, holevo
from cqrelay.netgen import f_k_eps, validate
from cqrelay.optimize import OptimizerConfig
from cqrelay.qcore import DensityOperator, StateError, assemble_cq, marginalize, random_density

FAST = OptimizerConfig(resolution=9, rounds=2)


def lp_type2(p, q, eps):
    res = linprog(q, A_ub=[-p], b_ub=[-(1 - eps)], bounds=[(0, 1)] * p.size, method="highs")
    return res.fun


def test_channel_validation_names_cell():
    fam = np.broadcast_to(np.eye(4) / 4, (2, 2, 4, 4)).copy()
    fam[1, 0] = np.diag([1.0, 0.5, -0.5, 0.0])
    with pytest.raises(StateError, match=r"\(x1, x2\) = \(1, 0\)"):
        R.RelayChannel(fam, (2, 2))


def test_induced_state_copy_channel():
    ch = R.classical_copy_channel()
    st = R.induced_state(ch, np.full((2, 2), 0.25))
    joint = assemble_cq(st).matrix
    assert np.allclose(np.diag(joint).real.reshape(4, 4).sum(axis=0), 0.25)
    assert np.count_nonzero(np.abs(joint) > 1e-12) == 4
    point = np.zeros((2, 2))
    point[1, 0] = 1.0
    assert np.allclose(assemble_cq(R.induced_state(ch, point)).eigvalsh().max(), 1.0)


def test_u_extension_independent_u_recovers_plain_state(rng):
    ch = R.random_channel(rng)
    p = rng.dirichlet(np.ones(4)).reshape(2, 2)
    st = R.induced_state(ch, np.multiply.outer([0.3, 0.7], p))
    m = marginalize(st, ("X1", "X2"))
    assert np.allclose(m.dist, p) and np.allclose(m.family, ch.family)


def test_copy_channel_bounds():
    b = R.all_bounds(R.classical_copy_channel(), FAST)
    for rep in b.values():
        assert rep.value == pytest.approx(1.0, abs=1e-9)


def test_constant_channel_bounds():
    for rep in R.all_bounds(R.constant_channel(), FAST).values():
        assert abs(rep.value) < 1e-12


def test_point_to_point_cutset():
    plus = np.full((2, 2), 0.5)
    ch = R.point_to_point_channel([np.diag([1.0, 0.0]), plus])
    want = holevo(np.array([0.5, 0.5]), np.stack([np.diag([1.0, 0.0]), plus]))
    assert want == pytest.approx(0.6009, abs=1e-4)
    assert R.cutset_bound(ch, FAST).value == pytest.approx(want, abs=0.02)


def test_ordering_and_report_consistency(rng):
    for _ in range(4):
        b = R.all_bounds(R.random_channel(rng), FAST)
        v = [b[k].value for k in ("multihop", "coherent-multihop", "decode-forward", "cutset")]
        assert v[0] <= v[1] + 1e-9 and v[1] <= v[2] + 1e-9 and v[2] <= v[3] + 1e-9
        assert b["partial-decode-forward"].value >= b["decode-forward"].value - 1e-9
        for rep in b.values():
            assert rep.value == pytest.approx(rep.recomputed_value(), abs=1e-9)
            assert rep.argmax.sum() == pytest.approx(1.0)


def test_pdf_trivial_u_is_direct_transmission(rng):
    ch = R.random_channel(rng)
    rep = R.partial_decode_forward_rate(ch, FAST, u_size=1)
    p = rep.argmax[0]
    st = R.induced_state(ch, p)
    st3 = R.reduce_quantum(st, [1])
    direct = min(cmi(st3, ["X1"], ["X2"]), cmi(st3, ["X1", "X2"]))
    assert rep.value == pytest.approx(direct, abs=1e-9)


def test_pdf_u_equals_x1_matches_decode_forward(rng):
    ch = R.random_channel(rng)
    df = R.decode_forward_rate(ch, FAST)
    emb = R.partial_decode_forward_rate(ch, FAST, embedding=[[0, 0], [1, 1]])
    assert emb.terms["I(X1;B3|UX2)"] == pytest.approx(0.0, abs=1e-9)
    assert emb.value == pytest.approx(df.value, abs=1e-9)


def test_semideterministic_pdf_equals_cutset(rng):
    ch = R.semideterministic_channel(rng)
    pdf = R.partial_decode_forward_rate(ch, OptimizerConfig(), embedding=[[0, 1], [1, 0]])
    cs = R.cutset_bound(ch, OptimizerConfig())
    assert abs(pdf.value - cs.value) <= 0.02


def test_scheme_networks_validate():
    p = np.array([[0.1, 0.2], [0.3, 0.4]])
    prod = np.outer(p.sum(1), p.sum(0))
    for b in (1, 2, 4):
        assert validate(R.scheme_network("multihop", b, prod, 3))
        assert validate(R.scheme_network("coherent-multihop", b, p, 3))
        assert validate(R.scheme_network("decode-forward", b, p, 3))
        assert validate(R.scheme_network("partial-decode-forward", b, np.multiply.outer([0.5, 0.5], p), 2, 2))
    with pytest.raises(ValueError):
        R.scheme_network("amplify", 2, p, 2)


def test_tensor_power_channel_is_kron():
    ch = R.classical_copy_channel()
    tp = R.tensor_power_channel(ch, 2)
    assert tp.sizes == (4, 4) and tp.dims == (4, 4)
    # letters (1, 0) and (0, 1): B2^2 = |10>, B3^2 = |01>
    want = np.kron(np.kron(np.diag([0, 1.0]), np.diag([1.0, 0])), np.kron(np.diag([1.0, 0]), np.diag([0, 1.0])))
    assert np.allclose(tp.family[2, 1], want)
    assert np.allclose(R.tensor_power_dist(np.full((2, 2), 0.25), 2), 1 / 16)


def test_multihop_delta_hand_assembled():
    ch = R.classical_copy_channel()
    p = np.full((2, 2), 0.25)
    eps, rate, b = 0.1, 0.5, 2
    # relay: X1 X2 B2 with B2 = x1 against B2 = I/2; receiver: X2 B3 with B3 = x2 against I/2
    relay_p = np.array([0.25 * (bb == a) for a in range(2) for x2 in range(2) for bb in range(2)])
    relay_q = np.full(8, 0.125)
    recv_p = np.array([0.5 * (bb == x2) for x2 in range(2) for bb in range(2)])
    recv_q = np.full(4, 0.25)
    d_relay = -math.log2(lp_type2(relay_p, relay_q, eps))
    d_recv = -math.log2(lp_type2(recv_p, recv_q, eps))
    raw = b * (f_k_eps(1, eps) + f_k_eps(2, eps) + 4 * 2 ** (rate - d_relay) + 4 * 2 ** (rate - d_recv))
    rep = R.finite_delta("multihop", ch, p, rate, eps, b)
    assert rep.divergences["relay"] == pytest.approx(d_relay, abs=1e-10)
    assert rep.divergences["receiver"] == pytest.approx(d_recv, abs=1e-10)
    assert rep.raw == pytest.approx(raw, rel=1e-12)
    assert rep.value == 1.0


def test_delta_small_eps_and_rate_terms():
    ch = R.classical_copy_channel()
    rep = R.finite_delta("decode-forward", ch, np.full((2, 2), 0.25), 0.0, 1e-3, 3)
    assert rep.raw == pytest.approx(3 * (rep.terms["f"] + rep.terms["relay"] + rep.terms["receiver"]))
    assert 0.0 <= rep.value <= 1.0


def test_delta_clips_for_huge_rate():
    ch = R.classical_copy_channel()
    for scheme in ("multihop", "coherent-multihop", "decode-forward"):
        assert R.finite_delta(scheme, ch, np.full((2, 2), 0.25), 5000.0, 0.1, 2).value == 1.0


def test_pdf_delta_bound_mode_is_conservative(rng):
    ch = R.random_channel(rng)
    p = rng.dirichlet(np.ones(8)).reshape(2, 2, 2)
    exact = R.finite_delta("partial-decode-forward", ch, p, (0.2, 0.1), 0.1, 2)
    bound = R.finite_delta("partial-decode-forward", ch, p, (0.2, 0.1), 0.1, 2, exact_dim_cap=1)
    assert exact.mode == "exact" and bound.mode == "bound"
    assert len(bound.substitutions) == 3
    for k in bound.substitutions:
        assert bound.divergences[k] <= exact.divergences[k] + 1e-9
    assert bound.raw >= exact.raw


def test_pdf_region_identities(rng):
    ch = R.random_channel(rng)
    p = rng.dirichlet(np.ones(8)).reshape(2, 2, 2)
    st = R.induced_state(ch, p)
    for b in (2, 3, 4):
        reg = R.pdf_region(b, st)
        assert len(reg.inequalities) == 4 ** (b - 1) - 1
        q = reg.quantities
        full = [i for i in reg.inequalities if i.jp == i.jq == b - 1][0]
        assert full.threshold == pytest.approx(b * q["I(UX1X2;B3)"] - cmi(R.reduce_quantum(st, [1]), ["X2"]), abs=1e-9)
        for ineq in reg.inequalities:
            if ineq.jp == 0:
                assert ineq.threshold == pytest.approx(ineq.jq * q["I(X1;B3|UX2)"], abs=1e-12)
        assert reg.sum_rate_slack() == pytest.approx(q["I(X1;B3|X2)"] / (b - 1), abs=1e-9)
        _, _, s, sb = reg.grid(50)
        assert not np.any(s & ~sb)
    with pytest.raises(ValueError, match="cap"):
        R.pdf_region(6, st, max_pairs=100)


def test_pdf_thresholds_match_materialized_state(rng):
    ch = R.random_channel(rng, d2=1)
    p = rng.dirichlet(np.ones(8)).reshape(2, 2, 2)
    st3 = R.reduce_quantum(R.induced_state(ch, p), [1])
    big = R.block_power_state(st3, 2)
    reg = R.pdf_region(2, st3)
    for ineq in reg.inequalities:
        kinds = R._pdf_block_kinds(ineq.Jp, ineq.Jq, 2)
        S = [f"{l}_{j}" for j, k in enumerate(kinds, start=1) for l in k]
        rest = [l for l in big.labels if l not in S]
        assert ineq.threshold == pytest.approx(cmi(big, S, rest), abs=1e-9)


def test_cmi_tensor_zero_check(rng):
    rho = random_density(4, rng)
    rr = DensityOperator(np.kron(rho, rho), (2, 2, 2, 2))
    assert abs(R.cmi_tensor_zero_check(rr, 2, [0], [2])) < 1e-9
    assert abs(R.cmi_tensor_zero_check(rr, 2, [0], [2], C=[1, 3])) < 1e-9
    assert R.cmi_tensor_zero_check(rr, 2, [0], [1], require_disjoint_factors=False) > 1e-3
    with pytest.raises(ValueError):
        R.cmi_tensor_zero_check(rr, 2, [0], [1])
