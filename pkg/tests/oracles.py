"""Independent reference computations used only by the tests."""
import itertools

import numpy as np


def literal_sdp_value(problem, solver="SCS", **opts):
    """Solve the literal constraint system with cvxpy (symmetric Gram variable)."""
    import cvxpy as cp

    n = problem.dim
    g = cp.Variable((n, n), symmetric=True)
    cons = [g >> 0]
    rows, cols, vals, rhs = [], [], [], []
    for k, c in enumerate(problem.constraints):
        for (i, j), coef in c.terms:
            rows.append(k)
            cols.append(i * n + j)
            vals.append(coef)
        rhs.append(c.rhs)
    import scipy.sparse as sp
    a = sp.csr_matrix((vals, (rows, cols)), shape=(len(rhs), n * n))
    cons.append(a @ cp.vec(g, order="C") == np.array(rhs))
    obj = sum(w * g[i, j] for (i, j), w in problem.objective)
    prob = cp.Problem(cp.Maximize(obj), cons)
    if solver == "SCS":
        opts = {"eps_abs": 1e-9, "eps_rel": 1e-9, "max_iters": 200000, **opts}
    prob.solve(solver=solver, **opts)
    return prob.value, g.value


def chsh_deterministic_values():
    """Win probability of all 16 deterministic CHSH strategies."""
    out = []
    for a0, a1, b0, b1 in itertools.product(range(2), repeat=4):
        a, b = (a0, a1), (b0, b1)
        wins = sum(((a[x] ^ b[y]) == (x & y)) for x in range(2) for y in range(2))
        out.append(wins / 4)
    return out


def tsirelson_value():
    return (2 + np.sqrt(2)) / 4
