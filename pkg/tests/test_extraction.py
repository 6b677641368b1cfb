import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qcsdp.extraction import (EXTRACTION_COLUMNS, AssignmentSampler, MarginalPovm, SamplingError,
                              chi_square_uniform, exact_distribution, extraction_csv, marginals,
                              sample_assignment, soundness_check)
from qcsdp.games import (CspInstance, Strategy, chsh, commutator_report, honest_strategy,
                         make_clause, mixed_honest_strategy, oracularize, strategy_value)
from qcsdp.hierarchy import build_word_index
from qcsdp.rounding import round_solution
from qcsdp.solver import gram_from_strategy
from scipy.stats import chi2


def parity_csp():
    """x0 xor x1 xor x2 = 0 and x1 xor x2 xor x3 = 0, equal weights."""
    even = [t for t in itertools.product((0, 1), repeat=3) if sum(t) % 2 == 0]
    return CspInstance(4, (make_clause((0, 1, 2), even, 0.5), make_clause((1, 2, 3), even, 0.5)))


def contradiction_csp():
    """x0 = 0 from one clause, x0 = 1 from the other."""
    zero = [t for t in itertools.product((0, 1), repeat=3) if t[0] == 0]
    one = [t for t in itertools.product((0, 1), repeat=3) if t[0] == 1]
    return CspInstance(4, (make_clause((0, 1, 2), zero, 0.5), make_clause((0, 1, 3), one, 0.5)))


def uniform_answer_strategy(g, d=1):
    pa = np.broadcast_to(np.eye(d) / g.ax, (g.qx, g.ax, d, d)).copy()
    pb = np.broadcast_to(np.eye(d) / g.ay, (g.qy, g.ay, d, d)).copy()
    return Strategy(pa, pb, np.eye(d) / d)


def random_binary_povms(rng, nvars, d):
    out = np.zeros((nvars, 2, d, d), dtype=complex)
    for i in range(nvars):
        m = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
        h = m @ m.conj().T
        c0 = h / (np.linalg.eigvalsh(h)[-1] * 1.01)
        out[i, 0], out[i, 1] = c0, np.eye(d) - c0
    return MarginalPovm(out)


def random_povm(rng, n, d):
    gs = []
    for _ in range(n):
        m = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
        gs.append(m @ m.conj().T)
    w, u = np.linalg.eigh(sum(gs))
    inv = (u / np.sqrt(w)) @ u.conj().T
    return np.stack([inv @ e @ inv for e in gs])


def random_state(rng, d):
    m = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
    rho = m @ m.conj().T
    return rho / np.trace(rho).real


# marginal POVMs

def test_honest_marginals_are_deterministic():
    csp = parity_csp()
    g = oracularize(csp)
    z = (1, 1, 0, 1)
    marg = marginals(g, honest_strategy(g, z), csp.nvars)
    for i, zi in enumerate(z):
        assert marg.elements[i, zi, 0, 0] == 1.0
        assert marg.elements[i, 1 - zi, 0, 0] == 0.0


def test_question_ignoring_strategy_gives_half_identity():
    csp = parity_csp()
    g = oracularize(csp)
    marg = marginals(g, uniform_answer_strategy(g, 2), csp.nvars)
    np.testing.assert_allclose(marg.elements, np.broadcast_to(np.eye(2) / 2, (4, 2, 2, 2)),
                               atol=1e-15)


def test_perturbed_honest_strategy_has_nearly_deterministic_marginals():
    csp = parity_csp()
    g = oracularize(csp)
    z = (0, 1, 1, 0)
    h = honest_strategy(g, z)
    rng = np.random.default_rng(0)
    t = 1e-3
    d = 2
    pa = np.einsum("xaij,kl->xaikjl", h.povm_a, np.eye(d)).reshape(g.qx, g.ax, d, d)
    pb = np.einsum("xaij,kl->xaikjl", h.povm_b, np.eye(d)).reshape(g.qy, g.ay, d, d)
    pa = (1 - t) * pa + t * np.stack([random_povm(rng, g.ax, d) for _ in range(g.qx)])
    pb = (1 - t) * pb + t * np.stack([random_povm(rng, g.ay, d) for _ in range(g.qy)])
    s = Strategy(pa, pb, np.eye(d) / d)
    delta = commutator_report(s).delta_max
    assert 0 < delta <= 2 * t
    marg = marginals(g, s, csp.nvars)
    dev = max(np.linalg.norm(marg.elements[i, z[i]] - np.eye(d), 2) for i in range(4))
    assert 0 < dev <= t


def test_marginals_reject_non_pair_questions():
    with pytest.raises(ValueError, match="pair questions"):
        marginals(chsh(), uniform_answer_strategy(chsh()), 2)


def test_incomplete_marginal_povm_is_rejected():
    with pytest.raises(ValueError, match="not complete"):
        MarginalPovm(np.zeros((1, 2, 1, 1)))


def test_non_psd_marginal_povm_is_rejected():
    with pytest.raises(ValueError, match="not PSD"):
        MarginalPovm(np.array([[[[2.0]], [[-1.0]]]]))


# sampling

def test_honest_sampler_returns_the_assignment():
    csp = parity_csp()
    g = oracularize(csp)
    z = (1, 0, 1, 1)
    sampler = AssignmentSampler(marginals(g, honest_strategy(g, z), 4), np.ones((1, 1)), seed=7)
    assert {sample_assignment(sampler) for _ in range(200)} == {z}
    assert exact_distribution(sampler)[z] == 1.0


def test_half_identity_marginals_sample_uniformly():
    marg = MarginalPovm(np.broadcast_to(np.eye(2) / 2, (4, 2, 2, 2)).copy())
    sampler = AssignmentSampler(marg, np.eye(2) / 2, seed=3)
    samples = 10_000
    freq = {}
    for _ in range(samples):
        z = sampler.sample()
        freq[z] = freq.get(z, 0) + 1
    stat, dof = chi_square_uniform(freq, 4, samples)
    assert chi2.sf(stat, dof) > 1e-3


def test_sampling_is_deterministic_given_seed():
    rng = np.random.default_rng(1)
    marg = random_binary_povms(rng, 5, 3)
    rho = random_state(rng, 3)
    s1, s2 = AssignmentSampler(marg, rho, seed=11), AssignmentSampler(marg, rho, seed=11)
    assert [s1.sample() for _ in range(50)] == [s2.sample() for _ in range(50)]


def test_empirical_frequencies_match_exact_branches():
    rng = np.random.default_rng(2)
    marg = random_binary_povms(rng, 3, 2)
    rho = random_state(rng, 2)
    sampler = AssignmentSampler(marg, rho, seed=5)
    exact = exact_distribution(sampler)
    assert len(exact) == 8
    assert math.fsum(exact.values()) == pytest.approx(1.0, abs=1e-8)
    # direct matrix products as an independent oracle
    for z, p in exact.items():
        k = np.eye(2)
        for i, c in enumerate(z):
            w, u = np.linalg.eigh(marg.elements[i, c])
            k = (u * np.sqrt(np.clip(w, 0, None))) @ u.conj().T @ k
        assert np.trace(k @ rho @ k.conj().T).real == pytest.approx(p, abs=1e-12)
    samples = 10_000
    counts = {z: 0 for z in exact}
    for _ in range(samples):
        counts[sampler.sample()] += 1
    for z, p in exact.items():
        sigma = math.sqrt(samples * p * (1 - p))
        assert abs(counts[z] - samples * p) <= 3 * sigma


@settings(max_examples=25)
@given(st.integers(0, 2**32 - 1), st.integers(1, 6), st.integers(1, 4))
def test_branch_probabilities_sum_to_one(seed, nvars, d):
    rng = np.random.default_rng(seed)
    marg = random_binary_povms(rng, nvars, d)
    sampler = AssignmentSampler(marg, random_state(rng, d), seed=seed)
    exact = exact_distribution(sampler)
    assert all(p >= -1e-12 for p in exact.values())
    assert math.fsum(exact.values()) == pytest.approx(1.0, abs=1e-8)
    # every prefix splits into branches that sum to the parent weight
    sigma = sampler.rho
    for i in range(nvars):
        post, probs = sampler.branch(sigma, i)
        assert probs.min() >= -1e-12
        assert probs.sum() == pytest.approx(np.trace(sigma).real, abs=1e-8)
        c = int(rng.integers(0, 2))
        if probs[c] <= 1e-12:
            break
        sigma = post[c] / probs[c]


def test_drift_aborts_sampling():
    marg = MarginalPovm(np.broadcast_to(np.eye(2) / 2, (2, 2, 2, 2)).copy())
    sampler = AssignmentSampler(marg, np.eye(2), seed=0)  # trace 2
    with pytest.raises(SamplingError):
        sampler.sample()


def test_sampler_rejects_wrong_state_dimension():
    marg = MarginalPovm(np.broadcast_to(np.eye(2) / 2, (2, 2, 2, 2)).copy())
    with pytest.raises(ValueError):
        AssignmentSampler(marg, np.eye(3) / 3)


# end-to-end

def test_honest_strategy_satisfies_everything():
    csp = parity_csp()
    g = oracularize(csp)
    z = (1, 1, 0, 1)
    rep = soundness_check(csp, honest_strategy(g, z), samples=500)
    assert rep.gameValue == 1.0
    assert rep.eps == 0.0
    assert rep.deltaMax == 0.0
    assert rep.satProb == 1.0
    assert rep.satProbExact == 1.0
    assert rep.within_budget


def test_commuting_mixture_of_satisfying_assignments():
    csp = parity_csp()
    g = oracularize(csp)
    s = mixed_honest_strategy(g, csp.satisfying_assignments())
    rep = soundness_check(csp, s, samples=2000, seed=4)
    assert rep.gameValue == pytest.approx(1.0, abs=1e-15)
    assert rep.satProb == 1.0
    assert rep.satProbExact == pytest.approx(1.0, abs=1e-12)
    assert len(rep.frequencies) > 1


def test_unsatisfiable_instance_reports_losses():
    csp = contradiction_csp()
    assert csp.satisfying_assignments() == []
    g = oracularize(csp)
    best = max(itertools.product((0, 1), repeat=4), key=csp.satisfied_weight)
    rep = soundness_check(csp, honest_strategy(g, best), samples=500)
    assert rep.gameValue < 1.0 and rep.satProb < 1.0
    assert rep.satProb == pytest.approx(0.5)
    assert rep.gameValue == pytest.approx(strategy_value(g, honest_strategy(g, best)))


def test_rounded_level2_strategy_row_is_populated():
    csp = parity_csp()
    g = oracularize(csp)
    mix = mixed_honest_strategy(g, csp.satisfying_assignments())
    gs = gram_from_strategy(build_word_index(g, 2), mix)
    s = round_solution(gs).to_strategy()
    rep = soundness_check(csp, s, samples=300, seed=1)
    cells = rep.cells()
    assert len(cells) == len(EXTRACTION_COLUMNS)
    assert all(c is not None for c in cells)
    assert 0.0 <= rep.satProb <= 1.0
    assert rep.gameValue == pytest.approx(1.0, abs=1e-6)
    text = extraction_csv([rep])
    assert text.splitlines()[0] == ",".join(EXTRACTION_COLUMNS)


def test_mismatched_strategy_is_rejected():
    with pytest.raises(ValueError, match="does not match"):
        soundness_check(parity_csp(), uniform_answer_strategy(chsh()), samples=10)


def test_sample_budget_is_enforced():
    csp = parity_csp()
    g = oracularize(csp)
    with pytest.raises(ValueError, match="samples"):
        soundness_check(csp, honest_strategy(g, (0, 0, 0, 0)), samples=0)
    with pytest.raises(ValueError, match="samples"):
        soundness_check(csp, honest_strategy(g, (0, 0, 0, 0)), samples=10**8)
