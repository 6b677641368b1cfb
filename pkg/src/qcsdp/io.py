"""Reading and writing games, constraint systems, problems, solutions and strategies."""
from __future__ import annotations

import csv
import io
import json
import os
from fractions import Fraction
from pathlib import Path

import numpy as np

from .games import Clause, CspInstance, Game, Strategy, validate_game
from .hierarchy import Constraint, MomentProblem, build_level, game_hash

PROBLEM_MAGIC = "moment-problem 1"
SOLUTION_MAGIC = "moment-solution 1"
# Gamma is written out only up to this dimension; larger files would be huge.
GAMMA_TEXT_MAX_DIM = 2000


class FormatError(ValueError):
    """Malformed input file; ``field`` names the offending entry."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


# --------------------------------------------------------------------------
# Numbers


def parse_number(v, field: str) -> float:
    """A decimal number or a ``"num/den"`` string."""
    if isinstance(v, bool):
        raise FormatError(field, f"expected a number, got {v!r}")
    if isinstance(v, (int, float)):
        return float(v)
    if isinstance(v, str):
        try:
            return float(Fraction(v.strip()))
        except (ValueError, ZeroDivisionError) as exc:
            raise FormatError(field, f"cannot parse {v!r} as a number") from exc
    raise FormatError(field, f"expected a number, got {type(v).__name__}")


def _int(v, field: str, minimum: int | None = None) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        raise FormatError(field, f"expected an integer, got {v!r}")
    if minimum is not None and v < minimum:
        raise FormatError(field, f"must be >= {minimum} (got {v})")
    return v


def _read_json(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise FormatError("file", str(exc)) from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError("file", f"not valid JSON ({exc.msg} at line {exc.lineno})") from exc
    if not isinstance(data, dict):
        raise FormatError("file", "top level must be an object")
    return data


def write_atomic(path, text: str) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


# --------------------------------------------------------------------------
# Tables


def format_number(v) -> str:
    """Nine significant digits, locale independent; blanks for missing values."""
    if v is None:
        return ""
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return f"{float(v):.9g}"


def table_csv(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([format_number(v) for v in r])
    return buf.getvalue()


# --------------------------------------------------------------------------
# Games


def game_from_dict(d: dict) -> Game:
    for name in ("qx", "qy", "ax", "ay", "mu", "accept"):
        if name not in d:
            raise FormatError(name, "missing")
    qx, qy, ax, ay = (_int(d[k], k, 1) for k in ("qx", "qy", "ax", "ay"))
    mu_raw = d["mu"]
    if not isinstance(mu_raw, list) or len(mu_raw) != qx:
        raise FormatError("mu", f"expected {qx} rows")
    mu = np.zeros((qx, qy))
    for x, row in enumerate(mu_raw):
        if not isinstance(row, list) or len(row) != qy:
            raise FormatError(f"mu[{x}]", f"expected {qy} entries")
        for y, v in enumerate(row):
            mu[x, y] = parse_number(v, f"mu[{x}][{y}]")
    if np.any(mu < 0):
        raise FormatError("mu", "entries must be nonnegative")
    if abs(mu.sum() - 1.0) > 1e-12:
        raise FormatError("mu", f"entries sum to {mu.sum():.15g}, expected 1")
    acc = d["accept"]
    if not isinstance(acc, list):
        raise FormatError("accept", "expected a list of [x, y, a, b] tuples")
    pred = np.zeros((qx, qy, ax, ay), dtype=bool)
    for k, t in enumerate(acc):
        if not isinstance(t, list) or len(t) != 4:
            raise FormatError(f"accept[{k}]", "expected [x, y, a, b]")
        vals = [_int(v, f"accept[{k}]", 0) for v in t]
        for v, lim, nm in zip(vals, (qx, qy, ax, ay), "xyab"):
            if v >= lim:
                raise FormatError(f"accept[{k}]", f"{nm}={v} out of range [0, {lim})")
        pred[tuple(vals)] = True
    labels = {}
    for name, n in (("x_labels", qx), ("y_labels", qy)):
        if name in d:
            lab = d[name]
            if not isinstance(lab, list) or len(lab) != n:
                raise FormatError(name, f"expected {n} labels")
            labels[name] = tuple(tuple(v) if isinstance(v, list) else v for v in lab)
    g = Game(qx, qy, ax, ay, mu, pred, **labels)
    problems = validate_game(g)
    if problems:
        raise FormatError("game", "; ".join(problems))
    return g


def game_to_dict(g: Game) -> dict:
    d = {"qx": g.qx, "qy": g.qy, "ax": g.ax, "ay": g.ay,
         "mu": [[float(v) for v in row] for row in g.mu],
         "accept": [[int(v) for v in t] for t in np.argwhere(g.predicate)]}
    if g.x_labels is not None:
        d["x_labels"] = [list(v) if isinstance(v, tuple) else v for v in g.x_labels]
    if g.y_labels is not None:
        d["y_labels"] = [list(v) if isinstance(v, tuple) else v for v in g.y_labels]
    return d


def load_game(path) -> Game:
    return game_from_dict(_read_json(path))


def save_game(g: Game, path) -> None:
    write_atomic(path, json.dumps(game_to_dict(g)) + "\n")


# --------------------------------------------------------------------------
# Constraint systems


def csp_from_dict(d: dict) -> CspInstance:
    if "nvars" not in d:
        raise FormatError("nvars", "missing")
    if "clauses" not in d:
        raise FormatError("clauses", "missing")
    n = _int(d["nvars"], "nvars", 3)
    if not isinstance(d["clauses"], list) or not d["clauses"]:
        raise FormatError("clauses", "expected a non-empty list")
    clauses = []
    for k, c in enumerate(d["clauses"]):
        where = f"clauses[{k}]"
        if not isinstance(c, dict):
            raise FormatError(where, "expected an object")
        for name in ("vars", "accept", "weight"):
            if name not in c:
                raise FormatError(f"{where}.{name}", "missing")
        vs = c["vars"]
        if not isinstance(vs, list) or len(vs) != 3:
            raise FormatError(f"{where}.vars", "expected three variable indices")
        vs = tuple(_int(v, f"{where}.vars", 0) for v in vs)
        if any(v >= n for v in vs):
            raise FormatError(f"{where}.vars", f"index out of range [0, {n})")
        if len(set(vs)) != 3:
            raise FormatError(f"{where}.vars", "repeated variable index")
        acc = set()
        if not isinstance(c["accept"], list):
            raise FormatError(f"{where}.accept", "expected a list of bit triples")
        for t in c["accept"]:
            if not isinstance(t, list) or len(t) != 3 or any(b not in (0, 1) or isinstance(b, bool)
                                                             for b in t):
                raise FormatError(f"{where}.accept", f"malformed bit triple {t!r}")
            acc.add(tuple(t))
        w = parse_number(c["weight"], f"{where}.weight")
        if w < 0:
            raise FormatError(f"{where}.weight", "must be nonnegative")
        clauses.append(Clause(vs, frozenset(acc), w))
    total = sum(c.weight for c in clauses)
    if abs(total - 1.0) > 1e-9:
        raise FormatError("clauses", f"weights sum to {total:.12g}, expected 1")
    return CspInstance(n, tuple(clauses))


def csp_to_dict(csp: CspInstance) -> dict:
    return {"nvars": csp.nvars,
            "clauses": [{"vars": list(c.vars), "accept": sorted(list(t) for t in c.accept),
                         "weight": c.weight} for c in csp.clauses]}


def load_csp(path) -> CspInstance:
    return csp_from_dict(_read_json(path))


def save_csp(csp: CspInstance, path) -> None:
    write_atomic(path, json.dumps(csp_to_dict(csp)) + "\n")


# --------------------------------------------------------------------------
# Moment problems (sparse triplet text)


def problem_to_text(p: MomentProblem) -> str:
    """Header, game, objective triplets, then one constraint per line.

    Constraint lines read ``family rhs k i1 j1 c1 ... ik jk ck`` with
    0-based upper-triangle entries of the word Gram matrix.
    """
    lines = [PROBLEM_MAGIC,
             f"dim {p.dim} level {p.level} hash {p.game_hash} complex {int(p.complex_mode)}",
             "game " + json.dumps(game_to_dict(p.game)),
             f"objective {len(p.objective)}"]
    lines += [f"{i} {j} {w!r}" for (i, j), w in p.objective]
    cons = p.constraints
    lines.append(f"constraints {len(cons)}")
    for c in cons:
        body = " ".join(f"{i} {j} {coef!r}" for (i, j), coef in c.terms)
        lines.append(f"{c.family} {float(c.rhs)!r} {len(c.terms)} {body}")
    return "\n".join(lines) + "\n"


def problem_from_text(text: str) -> MomentProblem:
    rows = text.splitlines()
    if not rows or rows[0] != PROBLEM_MAGIC:
        raise FormatError("header", f"expected {PROBLEM_MAGIC!r}")
    try:
        head = rows[1].split()
        meta = dict(zip(head[::2], head[1::2]))
        dim, level = int(meta["dim"]), int(meta["level"])
        complex_mode = bool(int(meta["complex"]))
    except (IndexError, KeyError, ValueError) as exc:
        raise FormatError("header", "malformed dimension line") from exc
    if not rows[2].startswith("game "):
        raise FormatError("game", "missing game line")
    g = game_from_dict(json.loads(rows[2][5:]))
    p = build_level(g, level, complex_mode=complex_mode)
    if p.dim != dim or p.game_hash != meta.get("hash"):
        raise FormatError("header", "dimension or game hash does not match the embedded game")
    pos = 3
    try:
        n_obj = int(rows[pos].split()[1])
        obj = []
        for r in rows[pos + 1:pos + 1 + n_obj]:
            i, j, w = r.split()
            obj.append(((int(i), int(j)), float(w)))
        pos += 1 + n_obj
        n_cons = int(rows[pos].split()[1])
        cons = []
        for r in rows[pos + 1:pos + 1 + n_cons]:
            parts = r.split()
            fam, rhs, k = parts[0], float(parts[1]), int(parts[2])
            vals = parts[3:]
            if len(vals) != 3 * k:
                raise ValueError(f"constraint line has {len(vals)} values, expected {3 * k}")
            terms = tuple(((int(vals[3 * t]), int(vals[3 * t + 1])), float(vals[3 * t + 2]))
                          for t in range(k))
            cons.append(Constraint(terms, rhs, fam))
    except (IndexError, ValueError) as exc:
        raise FormatError("constraints", str(exc)) from exc
    if len(cons) != n_cons:
        raise FormatError("constraints", f"expected {n_cons} rows, found {len(cons)}")
    p.objective = tuple(obj)
    p._loaded_constraints = tuple(cons)
    return p


def save_problem(p: MomentProblem, path) -> None:
    write_atomic(path, problem_to_text(p))


def load_problem(path) -> MomentProblem:
    return problem_from_text(Path(path).read_text())


# --------------------------------------------------------------------------
# Solutions


def solution_to_text(sol, residual_max: float | None = None) -> str:
    """Metadata, the reduced variables and (for moderate sizes) Gamma.

    Gamma is written as the lower triangle, one row per line.
    """
    p = sol.problem
    lines = [SOLUTION_MAGIC,
             f"level {p.level}", f"dim {p.dim}", f"hash {p.game_hash}",
             f"optimum {sol.optimum!r}", f"gap {sol.gapEstimate!r}",
             f"status {sol.status}", f"iterations {sol.iterations}", f"tol {sol.tol!r}",
             f"primal_infeas {sol.primal_infeas!r}", f"dual_infeas {sol.dual_infeas!r}"]
    if residual_max is not None:
        lines.append(f"residual_max {residual_max!r}")
    lines.append("game " + json.dumps(game_to_dict(p.game)))
    lines.append(f"z {len(sol.z)}")
    lines.append(" ".join(repr(float(v)) for v in sol.z))
    if p.dim <= GAMMA_TEXT_MAX_DIM:
        gm = sol.gamma
        lines.append(f"gamma {p.dim}")
        for i in range(p.dim):
            lines.append(" ".join(repr(float(v)) for v in gm[i, :i + 1]))
    else:
        lines.append("gamma omitted")
    return "\n".join(lines) + "\n"


def solution_from_text(text: str):
    from .hierarchy import reduce_problem
    from .solver import SdpSolution

    rows = text.splitlines()
    if not rows or rows[0] != SOLUTION_MAGIC:
        raise FormatError("header", f"expected {SOLUTION_MAGIC!r}")
    meta = {}
    k = 1
    while k < len(rows) and not rows[k].startswith("game "):
        key, _, val = rows[k].partition(" ")
        meta[key] = val
        k += 1
    if k == len(rows):
        raise FormatError("game", "missing game line")
    g = game_from_dict(json.loads(rows[k][5:]))
    try:
        level = int(meta["level"])
        m = int(rows[k + 1].split()[1])
        z = np.array([float(v) for v in rows[k + 2].split()]) if m else np.zeros(0)
    except (KeyError, IndexError, ValueError) as exc:
        raise FormatError("z", "malformed solution variables") from exc
    p = build_level(g, level)
    if p.game_hash != meta.get("hash"):
        raise FormatError("hash", "game hash does not match the embedded game")
    rp = reduce_problem(g, level)
    if len(z) != rp.n_vars:
        raise FormatError("z", f"expected {rp.n_vars} values, found {len(z)}")
    return SdpSolution(problem=p, reduced=rp, h=rp.matrix(z), z=z, optimum=rp.objective(z),
                       gapEstimate=float(meta.get("gap", "nan")),
                       iterations=int(meta.get("iterations", 0)),
                       status=meta.get("status", "solved"),
                       primal_infeas=float(meta.get("primal_infeas", 0.0)),
                       dual_infeas=float(meta.get("dual_infeas", 0.0)),
                       tol=float(meta.get("tol", 1e-8)))


def save_solution(sol, path, residual_max: float | None = None) -> None:
    write_atomic(path, solution_to_text(sol, residual_max))


def load_solution(path):
    return solution_from_text(Path(path).read_text())


# --------------------------------------------------------------------------
# Rounded strategies


def save_rounded(rs, directory) -> Path:
    """Dense blocks in ``strategy.npz`` plus ``manifest.json`` naming each block."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    blocks = {}
    entries = []
    qx, ax = rs.p_tilde.shape[:2]
    qy, ay = rs.q_tilde.shape[:2]
    for x in range(qx):
        for a in range(ax):
            key = f"P_{x}_{a}"
            blocks[key] = rs.p_tilde[x, a]
            entries.append({"key": key, "prover": "A", "x": x, "a": a})
        key = f"P_{x}_garbage"
        blocks[key] = rs.p_garbage[x]
        entries.append({"key": key, "prover": "A", "x": x, "a": "garbage"})
    for y in range(qy):
        for b in range(ay):
            key = f"Q_{y}_{b}"
            blocks[key] = rs.q_tilde[y, b]
            entries.append({"key": key, "prover": "B", "y": y, "b": b})
        key = f"Q_{y}_garbage"
        blocks[key] = rs.q_garbage[y]
        entries.append({"key": key, "prover": "B", "y": y, "b": "garbage"})
    blocks["rho"] = rs.rho
    blocks["v_phi"] = rs.v_phi
    blocks["weights_p"] = np.asarray(rs.weights_p)
    blocks["weights_q"] = np.asarray(rs.weights_q)
    tmp = directory / "strategy.tmp.npz"
    np.savez(tmp, **blocks)
    os.replace(tmp, directory / "strategy.npz")
    manifest = {"dim": rs.dim, "level": rs.level, "qx": qx, "ax": ax, "qy": qy, "ay": ay,
                "blocks": entries}
    write_atomic(directory / "manifest.json", json.dumps(manifest, indent=1) + "\n")
    return directory


def load_rounded_strategy(directory) -> Strategy:
    """Strategy with garbage merged into outcome 0, read from :func:`save_rounded` output."""
    directory = Path(directory)
    man = _read_json(directory / "manifest.json")
    try:
        data = np.load(directory / "strategy.npz")
    except OSError as exc:
        raise FormatError("strategy.npz", str(exc)) from exc
    try:
        d, qx, ax, qy, ay = (int(man[k]) for k in ("dim", "qx", "ax", "qy", "ay"))
    except KeyError as exc:
        raise FormatError(f"manifest.{exc.args[0]}", "missing") from exc
    pa = np.zeros((qx, ax, d, d), dtype=data["rho"].dtype)
    pb = np.zeros((qy, ay, d, d), dtype=data["rho"].dtype)
    for e in man["blocks"]:
        m = data[e["key"]]
        if e["prover"] == "A":
            a = 0 if e["a"] == "garbage" else e["a"]
            pa[e["x"], a] = pa[e["x"], a] + m
        else:
            b = 0 if e["b"] == "garbage" else e["b"]
            pb[e["y"], b] = pb[e["y"], b] + m
    return Strategy(pa, pb, data["rho"])
