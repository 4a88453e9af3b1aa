import math

import numpy as np
import pytest

from cqrelay import netgen, relay, sim
from cqrelay.qcore import partial_trace_matrix, random_density
from conftest import three_sigma

KET0 = np.diag([1.0, 0.0]).astype(complex)
KET1 = np.diag([0.0, 1.0]).astype(complex)
PLUS = np.full((2, 2), 0.5, dtype=complex)


def test_pgm_orthogonal_states_is_projective():
    povm = sim.build_pgm([KET0, KET1])
    assert np.allclose(povm.elements[0], KET0) and np.allclose(povm.elements[1], KET1)
    assert sim.exact_success([KET0, KET1]) == pytest.approx(1.0)


def test_pgm_identical_states():
    povm = sim.build_pgm([KET0, KET0])
    assert np.allclose(povm.elements[0], KET0 / 2) and np.allclose(povm.elements[1], KET0 / 2)
    assert np.allclose(povm.elements[2], KET1)
    assert povm.labels[-1] == sim.ABSTAIN
    assert sim.exact_success([KET0, KET0]) == pytest.approx(0.5)


def test_pgm_two_pure_states_closed_form():
    assert sim.exact_success([KET0, PLUS]) == pytest.approx((1 + 2**-0.5) / 2, abs=1e-12)


def test_pgm_completeness_and_positivity(rng):
    states = np.stack([random_density(3, rng, rank=1) for _ in range(2)])
    povm = sim.build_pgm(states, [0.3, 0.7])
    assert povm.completeness_error() < 1e-8
    assert povm.min_eigenvalue() > -1e-10
    with pytest.raises(ValueError):
        sim.build_pgm(states, [0.5, 0.6])


def test_measure_eigenstate_deterministic(rng):
    povm = sim.build_pgm([KET0, KET1])
    for _ in range(20):
        label, post = sim.measure(povm, KET1, rng)
        assert label == 1 and np.allclose(post, KET1)


def test_measure_statistics_multinomial(rng):
    povm = sim.build_pgm(np.stack([random_density(3, rng) for _ in range(3)]))
    rho = random_density(3, rng)
    probs = povm.probabilities(rho)
    n = 10_000
    counts = np.zeros(len(probs))
    for _ in range(n):
        label, _ = sim.measure(povm, rho, rng)
        counts[povm.labels.index(label)] += 1
    for c, p in zip(counts, probs):
        assert abs(c / n - p) <= three_sigma(p, n)


def test_maximally_mixed_fifty_fifty(rng):
    povm = sim.build_pgm([KET0, KET1])
    n = 10_000
    zeros = sum(sim.measure(povm, np.eye(2) / 2, rng)[0] == 0 for _ in range(n))
    assert abs(zeros / n - 0.5) <= three_sigma(0.5, n)


def test_no_back_action_on_product_states(rng):
    r2, r3 = random_density(2, rng), random_density(3, rng)
    povm = sim.build_pgm(np.stack([random_density(2, rng) for _ in range(2)]))
    for _ in range(10):
        _, post = sim.measure(povm, np.kron(r2, r3), rng, dims=(2, 3), subsystem=0)
        assert np.allclose(partial_trace_matrix(post, (2, 3), [1]), r3, atol=1e-12)


def test_back_action_on_entangled_output(rng):
    bell = np.zeros((4, 4), dtype=complex)
    bell[np.ix_([0, 3], [0, 3])] = 0.5
    label, post = sim.measure(sim.build_pgm([KET0, KET1]), bell, rng, dims=(2, 2), subsystem=0)
    want = KET0 if label == 0 else KET1
    assert np.allclose(partial_trace_matrix(post, (2, 2), [1]), want)


def test_measure_rejects_negative_probability(rng):
    bad = sim.Povm(np.stack([np.diag([1.5, 0.0]), np.diag([-0.5, 1.0])]), [0, 1])
    with pytest.raises(ValueError, match="negative"):
        sim.measure(bad, KET0, rng)


def test_one_block_error_matches_exact(rng):
    states = np.stack([random_density(2, rng) for _ in range(3)])
    exact = 1 - sim.exact_success(states)
    povm = sim.build_pgm(states)
    n = 6000
    wrong = 0
    for _ in range(n):
        m = int(rng.integers(3))
        wrong += sim.measure(povm, states[m], rng)[0] != m
    assert abs(wrong / n - exact) <= three_sigma(exact, n)


def test_constant_channel_error():
    ch = relay.constant_channel()
    p = np.full((2, 2), 0.25)
    b, n = 3, 2000
    rep = sim.simulate("multihop", ch, p, 1.0, b, n, seed=3)
    want = 1 - 2.0 ** -(b - 1)
    assert abs(rep.error_rate - want) <= three_sigma(want, n)


def test_noiseless_copy_errors_come_only_from_collisions():
    ch = relay.classical_copy_channel()
    p = np.full((2, 2), 0.25)
    b = 3
    net = relay.scheme_network("multihop", b, p, 2)
    clean = 0
    for t in range(300):
        cb_ss, run_ss = np.random.SeedSequence([8, t]).spawn(2)
        cb = netgen.generate_codebook(net, int(np.random.default_rng(cb_ss).integers(0, 2**63)), check=False)
        distinct = all(cb.codeword(f"X1_{j}", {j: 0}) != cb.codeword(f"X1_{j}", {j: 1}) for j in range(1, b)) and \
            all(cb.codeword(f"X2_{j}", {j - 1: 0}) != cb.codeword(f"X2_{j}", {j - 1: 1}) for j in range(2, b + 1))
        if distinct:
            clean += 1
            wrong = sim._run_trial("multihop", ch, p, net, b, 2, np.random.default_rng(cb_ss),
                                   np.random.default_rng(run_ss))
            assert not any(wrong)
    assert clean > 0


def test_single_message_is_error_free():
    ch = relay.classical_copy_channel()
    for scheme in sim.SIM_SCHEMES:
        assert sim.simulate(scheme, ch, np.full((2, 2), 0.25), 0.0, 3, 50, seed=1).errors == 0


def test_error_non_increasing_in_n():
    ch = sim.depolarized_copy_channel(0.1)
    p = np.full((2, 2), 0.25)
    trials = 1000
    reps = [sim.simulate("multihop", ch, p, 0.0, 3, trials, seed=11, n=n, msg_size=2) for n in (1, 2, 3)]
    for a, b in zip(reps, reps[1:]):
        assert b.error_rate <= a.error_rate + 3 * math.hypot(a.stderr, b.stderr)
    assert reps[-1].error_rate < reps[0].error_rate


def test_decode_forward_runs_and_reports():
    ch = sim.depolarized_copy_channel(0.05)
    p = np.array([[0.4, 0.1], [0.1, 0.4]])
    rep = sim.simulate("decode-forward", ch, p, 1.0, 3, 100, seed=2)
    assert 0.0 <= rep.error_rate <= 1.0 and len(rep.per_block_errors) == 2
    assert rep.realized_rate == 1.0 and rep.msg_size == 2


def test_chunks_reproduce_sequential_run():
    ch = sim.depolarized_copy_channel(0.2)
    p = np.full((2, 2), 0.25)
    whole = sim.simulate("coherent-multihop", ch, p, 1.0, 3, 60, seed=9)
    parts = [sim.simulate("coherent-multihop", ch, p, 1.0, 3, 20, seed=9, first_trial=s) for s in (0, 20, 40)]
    assert whole.errors == sum(r.errors for r in parts)
    assert whole.per_block_errors == [sum(x) for x in zip(*(r.per_block_errors for r in parts))]


def test_report_serialization():
    rep = sim.simulate("multihop", relay.constant_channel(), np.full((2, 2), 0.25), 1.0, 2, 10, seed=0)
    again = sim.simulate("multihop", relay.constant_channel(), np.full((2, 2), 0.25), 1.0, 2, 10, seed=0)
    assert rep.dumps() == again.dumps()
    csv_text = sim.sweep_csv([rep])
    assert csv_text.splitlines()[0] == "rate,n,error,stderr"


def test_simulate_input_errors():
    ch = relay.classical_copy_channel()
    p = np.full((2, 2), 0.25)
    with pytest.raises(ValueError):
        sim.simulate("partial-decode-forward", ch, p, 1.0, 3, 10, 0)
    with pytest.raises(ValueError, match="product"):
        sim.simulate("multihop", ch, np.array([[0.5, 0], [0, 0.5]]), 1.0, 3, 10, 0)
    with pytest.raises(ValueError, match="cap"):
        sim.simulate("multihop", ch, p, 1.0, 3, 10, 0, n=4, max_dim=64)
