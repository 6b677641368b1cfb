import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import rounded, solved
from qcsdp.games import CspInstance, chsh, make_clause, random_game, strategy_value
from qcsdp.hierarchy import build_level
from qcsdp.io import (GAMMA_TEXT_MAX_DIM, FormatError, csp_from_dict, csp_to_dict, format_number,
                      game_from_dict, game_to_dict, load_csp, load_game, load_problem,
                      load_rounded_strategy, load_solution, parse_number, problem_from_text,
                      problem_to_text, save_csp, save_game, save_problem, save_rounded,
                      save_solution, solution_from_text, solution_to_text, table_csv)
from qcsdp.solver import solve


def chsh_dict():
    return {"qx": 2, "qy": 2, "ax": 2, "ay": 2,
            "mu": [["1/4", "1/4"], ["1/4", "1/4"]],
            "accept": [[x, y, a, b] for x in range(2) for y in range(2)
                       for a in range(2) for b in range(2) if (a ^ b) == (x & y)]}


# numbers and tables

@pytest.mark.parametrize("text,value", [("1/4", 0.25), (" 3/8 ", 0.375), ("0.5", 0.5), ("2", 2.0)])
def test_parse_number_accepts_fractions(text, value):
    assert parse_number(text, "f") == value


@pytest.mark.parametrize("bad", ["1/0", "abc", True, None, [1]])
def test_parse_number_rejects_garbage(bad):
    with pytest.raises(FormatError) as info:
        parse_number(bad, "mu[0][1]")
    assert info.value.field == "mu[0][1]"


def test_format_number_uses_nine_significant_digits():
    assert format_number(0.853553390593) == "0.853553391"
    assert format_number(1.0) == "1"
    assert format_number(np.int64(7)) == "7"
    assert format_number(None) == ""
    assert format_number("size-cap") == "size-cap"


def test_table_csv_layout():
    text = table_csv(["a", "b"], [(1, 0.5), (None, "x")])
    assert text == "a,b\n1,0.5\n,x\n"


# games

def test_fractional_game_file_matches_builtin(tmp_path):
    path = tmp_path / "g.json"
    path.write_text(json.dumps(chsh_dict()))
    g = load_game(path)
    np.testing.assert_array_equal(g.mu, chsh().mu)
    np.testing.assert_array_equal(g.predicate, chsh().predicate)


@given(st.integers(0, 2**32 - 1))
def test_game_dict_round_trip(seed):
    g = random_game(np.random.default_rng(seed))
    h = game_from_dict(json.loads(json.dumps(game_to_dict(g))))
    np.testing.assert_array_equal(h.mu, g.mu)
    np.testing.assert_array_equal(h.predicate, g.predicate)


def test_game_file_round_trip(tmp_path):
    g = random_game(np.random.default_rng(4), qx=3, qy=2, ax=2, ay=3)
    save_game(g, tmp_path / "g.json")
    h = load_game(tmp_path / "g.json")
    assert (h.qx, h.qy, h.ax, h.ay) == (3, 2, 2, 3)
    np.testing.assert_array_equal(h.predicate, g.predicate)


@pytest.mark.parametrize("edit,field", [
    (lambda d: d.pop("mu"), "mu"),
    (lambda d: d.update(qx=0), "qx"),
    (lambda d: d.update(ax="two"), "ax"),
    (lambda d: d["mu"][1].append("0"), "mu[1]"),
    (lambda d: d["mu"][0].__setitem__(1, "x/y"), "mu[0][1]"),
    (lambda d: d["mu"][0].__setitem__(0, "1/2"), "mu"),
    (lambda d: d["accept"].append([0, 0, 2, 0]), "accept[8]"),
    (lambda d: d["accept"].append([0, 0, 1]), "accept[8]"),
    (lambda d: d.update(x_labels=["only one"]), "x_labels"),
])
def test_malformed_game_names_the_field(edit, field):
    d = chsh_dict()
    edit(d)
    with pytest.raises(FormatError) as info:
        game_from_dict(d)
    assert info.value.field == field
    assert str(info.value).startswith(field)


def test_unreadable_game_file(tmp_path):
    path = tmp_path / "g.json"
    path.write_text("{not json")
    with pytest.raises(FormatError, match="not valid JSON"):
        load_game(path)
    with pytest.raises(FormatError):
        load_game(tmp_path / "missing.json")


# constraint systems

def parity_csp_dict():
    even = [[a, b, c] for a in (0, 1) for b in (0, 1) for c in (0, 1) if (a + b + c) % 2 == 0]
    return {"nvars": 4, "clauses": [{"vars": [0, 1, 2], "accept": even, "weight": "1/2"},
                                    {"vars": [1, 2, 3], "accept": even, "weight": "1/2"}]}


def same_csp(a, b):
    return a.nvars == b.nvars and a.clauses == b.clauses


def test_csp_round_trip(tmp_path):
    csp = csp_from_dict(parity_csp_dict())
    save_csp(csp, tmp_path / "c.json")
    again = load_csp(tmp_path / "c.json")
    assert same_csp(again, csp)
    assert same_csp(csp_from_dict(csp_to_dict(csp)), csp)


def test_csp_helpers_agree_with_file_format():
    even = [t for t in np.ndindex(2, 2, 2) if sum(t) % 2 == 0]
    built = CspInstance(4, (make_clause((0, 1, 2), even, 0.5), make_clause((1, 2, 3), even, 0.5)))
    assert same_csp(csp_from_dict(parity_csp_dict()), built)


@pytest.mark.parametrize("edit,field", [
    (lambda d: d.pop("nvars"), "nvars"),
    (lambda d: d.update(nvars=2), "nvars"),
    (lambda d: d.update(clauses=[]), "clauses"),
    (lambda d: d["clauses"][0].pop("weight"), "clauses[0].weight"),
    (lambda d: d["clauses"][1].update(vars=[1, 1, 2]), "clauses[1].vars"),
    (lambda d: d["clauses"][1].update(vars=[1, 2, 9]), "clauses[1].vars"),
    (lambda d: d["clauses"][0]["accept"].append([0, 2, 0]), "clauses[0].accept"),
    (lambda d: d["clauses"][0].update(weight="-1/2"), "clauses[0].weight"),
    (lambda d: d["clauses"][0].update(weight="1/4"), "clauses"),
])
def test_malformed_csp_names_the_field(edit, field):
    d = parity_csp_dict()
    edit(d)
    with pytest.raises(FormatError) as info:
        csp_from_dict(d)
    assert info.value.field == field


# moment problems and solutions

def test_problem_text_round_trip(tmp_path):
    p = build_level(chsh(), 2)
    save_problem(p, tmp_path / "p.txt")
    q = load_problem(tmp_path / "p.txt")
    assert q.constraints == p.constraints
    assert q.objective == p.objective
    assert solve(q).optimum == pytest.approx(solve(p).optimum, abs=1e-9)


def test_problem_text_rejects_tampering():
    text = problem_to_text(build_level(chsh(), 1))
    with pytest.raises(FormatError, match="header"):
        problem_from_text("garbage\n" + text)
    lines = text.splitlines()
    lines[-1] = lines[-1] + " 7"
    with pytest.raises(FormatError) as info:
        problem_from_text("\n".join(lines))
    assert info.value.field == "constraints"


@pytest.mark.parametrize("n", [1, 2])
def test_solution_text_round_trip(tmp_path, n):
    sol = solved("chsh", n)
    save_solution(sol, tmp_path / "s.txt")
    back = load_solution(tmp_path / "s.txt")
    assert back.optimum == sol.optimum
    np.testing.assert_array_equal(back.z, sol.z)
    np.testing.assert_array_equal(back.gamma, sol.gamma)
    assert back.status == sol.status and back.gapEstimate == sol.gapEstimate


def test_solution_text_contains_gamma_lower_triangle():
    sol = solved("chsh", 1)
    lines = solution_to_text(sol).splitlines()
    k = lines.index(f"gamma {sol.problem.dim}")
    assert sol.problem.dim <= GAMMA_TEXT_MAX_DIM
    rows = lines[k + 1:]
    assert [len(r.split()) for r in rows] == list(range(1, sol.problem.dim + 1))


def test_solution_hash_mismatch_is_rejected():
    text = solution_to_text(solved("chsh", 1))
    lines = [("hash deadbeef" if r.startswith("hash ") else r) for r in text.splitlines()]
    with pytest.raises(FormatError) as info:
        solution_from_text("\n".join(lines))
    assert info.value.field == "hash"


def test_rounded_strategy_files(tmp_path):
    run = rounded("chsh", 2)
    save_rounded(run.strategy, tmp_path / "r")
    manifest = json.loads((tmp_path / "r" / "manifest.json").read_text())
    assert manifest["dim"] == run.strategy.dim and manifest["level"] == 2
    assert len(manifest["blocks"]) == 2 * (2 * 2 + 2)
    s = load_rounded_strategy(tmp_path / "r")
    ref = run.strategy.to_strategy()
    np.testing.assert_array_equal(s.povm_a, ref.povm_a)
    np.testing.assert_array_equal(s.povm_b, ref.povm_b)
    assert strategy_value(chsh(), s) == pytest.approx(run.value.rounded_value, abs=1e-12)


def test_rounded_manifest_missing_field(tmp_path):
    save_rounded(rounded("chsh", 2).strategy, tmp_path / "r")
    path = tmp_path / "r" / "manifest.json"
    m = json.loads(path.read_text())
    del m["qy"]
    path.write_text(json.dumps(m))
    with pytest.raises(FormatError) as info:
        load_rounded_strategy(tmp_path / "r")
    assert info.value.field == "manifest.qy"
