import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qcsdp.games import Game, chsh, chsh_optimal_strategy, random_game, strategy_value, trivial_game
from qcsdp.hierarchy import (FAMILIES, WORD_CAP, Alphabet, SizeCapError, build_level,
                             build_word_index, constraint_audit, game_hash, reduce_problem,
                             strategy_moment_matrix, word_count)

# constraint counts of the CHSH level-2 system, frozen from the first audited build
CHSH_LEVEL2_COUNTS = {"normalization": 1, "shifting": 288, "commutation": 576, "sum_p": 1314,
                      "sum_q": 1314, "orth_p": 162, "orth_q": 162}
CHSH_LEVEL2_TOTAL = 3817


def expand(rp, p, h):
    z = rp.word_map(p.index.words)
    return z @ h @ z.T


# word index

def test_single_letter_game_words():
    idx = build_word_index(trivial_game(), 1)
    alph = idx.alphabet
    assert idx.words == ((), (alph.p(0, 0),), (alph.q(0, 0),))
    assert alph.size == 2 and alph.is_p(alph.p(0, 0)) and not alph.is_p(alph.q(0, 0))


@pytest.mark.parametrize("n,size", [(1, 9), (2, 73), (3, 585)])
def test_chsh_word_counts(n, size):
    idx = build_word_index(chsh(), n)
    assert idx.size == size == word_count(8, n)
    assert idx.words[0] == ()


def test_word_order_is_by_length_then_lexicographic():
    idx = build_word_index(chsh(), 2)
    keys = [(len(w), w) for w in idx.words]
    assert keys == sorted(keys)
    assert all(idx.position[w] == i for i, w in enumerate(idx.words))


def test_reversal_is_an_involution_on_words():
    idx = build_word_index(chsh(), 3)
    for w in idx.words:
        assert w[::-1] in idx.position
        assert w[::-1][::-1] == w


def test_word_cap_is_enforced():
    assert WORD_CAP == 20000
    with pytest.raises(SizeCapError):
        build_word_index(chsh(), 5)
    with pytest.raises(SizeCapError):
        build_word_index(chsh(), 2, cap=50)


def test_level_must_be_positive():
    with pytest.raises(ValueError):
        build_word_index(chsh(), 0)


def test_alphabet_orders_first_prover_letters_first():
    alph = Alphabet.of(chsh())
    assert alph.size == 8
    assert [alph.p(x, a) for x in range(2) for a in range(2)] == [0, 1, 2, 3]
    assert [alph.q(y, b) for y in range(2) for b in range(2)] == [4, 5, 6, 7]


# literal constraint system

def test_chsh_level1_audit():
    rep = constraint_audit(build_level(chsh(), 1))
    assert rep.ok
    assert rep.normalization_count == 1
    assert rep.counts["shifting"] == 0  # every shifting instance is a tautology at level 1
    assert rep.keys_in_range


def test_chsh_level2_counts_are_frozen():
    rep = constraint_audit(build_level(chsh(), 2))
    assert rep.counts == CHSH_LEVEL2_COUNTS
    assert rep.total == CHSH_LEVEL2_TOTAL
    assert rep.duplicates == 0 and rep.ok


def test_constraint_build_is_deterministic():
    a = build_level(chsh(), 2).constraints
    b = build_level(chsh(), 2).constraints
    assert a == b


def test_every_constraint_family_is_known():
    p = build_level(chsh(), 2)
    assert {c.family for c in p.constraints} == set(FAMILIES)


def test_objective_uses_length_one_words():
    p = build_level(chsh(), 2)
    for (i, j), w in p.objective:
        assert len(p.index.words[i]) == 1 and len(p.index.words[j]) == 1
        assert w == pytest.approx(0.25)
    assert len(p.objective) == 8


def test_trivial_game_forces_all_ones_gram():
    p = build_level(trivial_game(), 1)
    ones = np.ones((3, 3))
    assert all(v == 0 for v in p.residuals(ones).values())
    assert p.objective_value(ones) == 1.0
    rp = reduce_problem(trivial_game(), 1)
    assert rp.n_vars == 0  # no freedom left
    np.testing.assert_array_equal(expand(rp, p, rp.matrix(np.zeros(0))), ones)


def test_invalid_game_is_rejected():
    g = chsh()
    with pytest.raises(ValueError, match="invalid game"):
        build_level(Game(2, 2, 2, 2, g.mu * 2, g.predicate), 1)


def test_game_hash_tracks_content():
    assert game_hash(chsh()) == game_hash(chsh())
    assert game_hash(chsh()) != game_hash(trivial_game())


def test_complex_mode_keeps_both_triangles():
    p = build_level(chsh(), 1, complex_mode=True)
    s, t = (0,), (5,)
    assert p.key(s, t) != p.key(t, s)
    q = build_level(chsh(), 1)
    assert q.key(s, t) == q.key(t, s)


# reduced formulation

@pytest.mark.parametrize("n", [1, 2])
@settings(max_examples=10)
@given(seed=st.integers(0, 2**32 - 1))
def test_reduced_matrices_satisfy_every_literal_constraint(n, seed):
    r = np.random.default_rng(seed)
    g = random_game(r)
    p = build_level(g, n)
    rp = reduce_problem(g, n)
    gamma = expand(rp, p, rp.matrix(r.standard_normal(rp.n_vars)))
    res = p.residuals(gamma)
    assert max(res.values()) <= 1e-12


@pytest.mark.parametrize("n,r", [(1, 5), (2, 13), (3, 25), (4, 41)])
def test_chsh_reduced_sizes(n, r):
    assert reduce_problem(chsh(), n).dim == r


def test_reduced_objective_matches_literal_objective():
    r = np.random.default_rng(2)
    g = random_game(r, qx=2, qy=3, ax=3, ay=2)
    p = build_level(g, 2)
    rp = reduce_problem(g, 2)
    z = r.standard_normal(rp.n_vars)
    assert rp.objective(z) == pytest.approx(p.objective_value(expand(rp, p, rp.matrix(z))),
                                            abs=1e-12)


def test_qubit_strategy_gives_feasible_moment_point():
    g = chsh()
    rp = reduce_problem(g, 2)
    s = chsh_optimal_strategy()
    h = strategy_moment_matrix(rp, s)
    z = rp.project(h)
    np.testing.assert_allclose(rp.matrix(z), h, atol=1e-12)
    assert np.linalg.eigvalsh(h)[0] >= -1e-12
    assert rp.objective(z) == pytest.approx(strategy_value(g, s), abs=1e-12)


def test_idempotence_is_derivable_at_feasible_points():
    g = chsh()
    p = build_level(g, 2)
    rp = reduce_problem(g, 2)
    gamma = expand(rp, p, rp.matrix(np.random.default_rng(0).standard_normal(rp.n_vars)))
    alph = p.index.alphabet
    for c in alph.letters():
        for s in p.index.up_to(1):
            # Gamma[s C, C] == Gamma[s, C]
            assert gamma[p.key(s + (c,), (c,))] == pytest.approx(gamma[p.key(s, (c,))], abs=1e-12)


def test_orthogonal_outcomes_vanish_in_reduced_point():
    g = chsh()
    p = build_level(g, 2)
    rp = reduce_problem(g, 2)
    gamma = expand(rp, p, rp.matrix(np.ones(rp.n_vars)))
    alph = p.index.alphabet
    for x in range(2):
        assert gamma[p.key((alph.p(x, 0),), (alph.p(x, 1),))] == 0.0
    for y in range(2):
        assert gamma[p.key((alph.q(y, 0),), (alph.q(y, 1),))] == 0.0
