"""Graded rounding of a Gram solution into an approximately commuting strategy.

For Gram vectors ``v_s`` of a level-N solution the rounded measurement
elements are ::

    P~_x^a = sum_i p_i  Pi_{<=i} Pi_{P_x^a} Pi_{<=i}

with ``Pi_{<=i}`` the projector onto the span of vectors of words of length
at most ``i`` and ``Pi_{P_x^a}`` the projector onto the span of
``v_{P_x^a s}`` for words ``s`` of length below N. The shared state is
``|v_phi><v_phi|``.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .games import Game, Strategy
from .hierarchy import WORD_CAP, Alphabet, SizeCapError, build_level, word_count
from .linalg import commutator, operator_norm, subspace_projector
from .solver import GramSolution, SdpSolution, extract_gram, regularize, solve

# Explicit constant in ||[P~, Q~]|| <= C0 / sqrt(N - 1) for uniform weights.
# The expansion of the commutator leaves 2 sum p_i q_i + 2 sqrt(sum p_i^2)
# + 2 sqrt(sum q_i^2) = 2/(N-1) + 4/sqrt(N-1) <= 6/sqrt(N-1).
COMMUTATOR_CONSTANT = 6.0
# Admissible weight profiles need max(sum p^2, sum q^2, sum p q) <= WEIGHT_CONSTANT / N.
WEIGHT_CONSTANT = 3.0

__all__ = [
    "COMMUTATOR_CONSTANT", "WEIGHT_CONSTANT", "WeightError", "ProjectorFamily",
    "build_projectors", "IdentityReport", "verify_identities", "uniform_weights",
    "check_weights", "commutator_bound", "RoundedStrategy", "round_solution",
    "ValueReport", "verify_value", "solution_correlations", "CommutatorBoundReport",
    "verify_commutators", "RoundingRun", "rounding_pipeline", "STUDY_COLUMNS", "StudyRow", "study_convergence",
]

IDENTITY_TOL = 1e-5
LEVEL_TOL = 1e-7


class WeightError(ValueError):
    pass


# --------------------------------------------------------------------------
# Projectors


@dataclass(eq=False)
class ProjectorFamily:
    level_projectors: list  # index j = 0..N, entry 0 is the zero matrix
    label_p: np.ndarray  # (qx, ax, d, d)
    label_q: np.ndarray  # (qy, ay, d, d)
    dim: int
    level: int

    def eq(self, i: int) -> np.ndarray:
        """Projector onto words of length exactly ``i`` (difference of nested ones)."""
        if i == 0:
            return self.level_projectors[0]
        return self.level_projectors[i] - self.level_projectors[i - 1]


def build_projectors(gs: GramSolution, strict: bool = False,
                     rel_cutoff: float = 1e-8) -> ProjectorFamily:
    idx = gs.index
    n = idx.level
    alph: Alphabet = idx.alphabet
    d = gs.rank
    if d == 0:
        raise ValueError("Gram solution has rank 0")
    lengths = np.array([len(w) for w in idx.words])
    levels = [np.zeros((d, d))]
    for j in range(1, n + 1):
        levels.append(subspace_projector(gs.vectors[lengths <= j], dim=d, rel_cutoff=rel_cutoff))
    short = idx.up_to(n - 1)
    pos = idx.position

    def label_proj(c):
        rows = [pos[(c,) + s] for s in short]
        vecs = gs.vectors[rows]
        if not np.any(vecs):
            return np.zeros((d, d))
        return subspace_projector(vecs, dim=d, rel_cutoff=rel_cutoff)

    lp = np.stack([[label_proj(alph.p(x, a)) for a in range(alph.ax)] for x in range(alph.qx)])
    lq = np.stack([[label_proj(alph.q(y, b)) for b in range(alph.ay)] for y in range(alph.qy)])
    pf = ProjectorFamily(levels, lp, lq, d, n)
    if strict:
        rep = verify_identities(pf, gs)
        if not rep.passed:
            worst = max(rep.residuals, key=rep.residuals.get)
            raise ValueError(f"projector identity {worst} has residual {rep.residuals[worst]:.3e}")
    return pf


@dataclass
class IdentityReport:
    residuals: dict
    tolerances: dict

    @property
    def passed(self) -> bool:
        return all(self.residuals[k] <= self.tolerances[k] for k in self.residuals)

    @property
    def max_residual(self) -> float:
        return max(self.residuals.values())


def verify_identities(pf: ProjectorFamily, gs: GramSolution) -> IdentityReport:
    """Residuals of the vector and projector identities of a level-N solution."""
    idx = gs.index
    n = idx.level
    alph = idx.alphabet
    pos = idx.position
    vec = gs.vectors
    eye = np.eye(pf.dim)
    short = idx.up_to(n - 1)
    short_rows = np.array([pos[s] for s in short])
    res = {}

    # sum over answers of v_{P s} reproduces v_s
    worst = 0.0
    groups = [[alph.p(x, a) for a in range(alph.ax)] for x in range(alph.qx)]
    groups += [[alph.q(y, b) for b in range(alph.ay)] for y in range(alph.qy)]
    for grp in groups:
        total = sum(vec[[pos[(c,) + s] for s in short]] for c in grp)
        worst = max(worst, float(np.max(np.linalg.norm(vec[short_rows] - total, axis=1))))
    res["vector_sum"] = worst

    # label projector sends v_s to v_{P s}
    worst = 0.0
    labels = [(alph.p(x, a), pf.label_p[x, a]) for x in range(alph.qx) for a in range(alph.ax)]
    labels += [(alph.q(y, b), pf.label_q[y, b]) for y in range(alph.qy) for b in range(alph.ay)]
    for c, proj in labels:
        target = vec[[pos[(c,) + s] for s in short]]
        got = vec[short_rows] @ proj.T
        worst = max(worst, float(np.max(np.linalg.norm(got - target, axis=1))))
    res["projector_action"] = worst

    # projectors are Hermitian idempotents
    worst = 0.0
    for proj in pf.level_projectors + [m for _, m in labels]:
        worst = max(worst, float(np.max(np.abs(proj - proj.conj().T))),
                    operator_norm(proj @ proj - proj))
    res["idempotence"] = worst

    # nesting of the length filtration
    worst = 0.0
    lv = pf.level_projectors
    for i in range(n + 1):
        for j in range(n + 1):
            lo = lv[min(i, j)]
            worst = max(worst, operator_norm(lv[i] @ lv[j] - lo), operator_norm(lv[j] @ lv[i] - lo))
            perp = eye - lv[max(i, j)]
            worst = max(worst, operator_norm((eye - lv[i]) @ (eye - lv[j]) - perp))
            if i >= j:
                worst = max(worst, operator_norm(lv[j] @ (eye - lv[i])),
                            operator_norm((eye - lv[i]) @ lv[j]))
    res["level_identities"] = worst

    # commutation cancels between low-length subspaces
    worst = 0.0
    for p_proj in pf.label_p.reshape(-1, pf.dim, pf.dim):
        for q_proj in pf.label_q.reshape(-1, pf.dim, pf.dim):
            comm = commutator(p_proj, q_proj)
            for i in range(n):
                for j in range(n):
                    worst = max(worst, operator_norm(lv[i] @ comm @ lv[j]))
    res["commutation_cancellation"] = worst

    # a label projector raises the length by at most one
    worst = 0.0
    for _, proj in labels:
        for j in range(n):
            worst = max(worst, operator_norm((eye - lv[j + 1]) @ proj @ lv[j]))
    res["one_shift"] = worst

    tols = {k: IDENTITY_TOL for k in res}
    tols["level_identities"] = LEVEL_TOL
    return IdentityReport(res, tols)


# --------------------------------------------------------------------------
# Rounding


def uniform_weights(n: int) -> np.ndarray:
    if n < 2:
        raise WeightError("uniform weights need at least one interior level (N >= 2)")
    w = np.zeros(n + 1)
    w[1:n] = 1.0 / (n - 1)
    return w


def check_weights(p, q, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Validate a pair of weight profiles on levels ``0..n``."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    for name, w in (("p", p), ("q", q)):
        if w.shape != (n + 1,):
            raise WeightError(f"weights {name} must have {n + 1} entries (levels 0..{n})")
        if np.any(w < 0):
            raise WeightError(f"weights {name} have a negative entry")
        if w[0] != 0 or w[n] != 0:
            raise WeightError(f"weights {name} must vanish at levels 0 and {n}")
        if abs(w.sum() - 1.0) > 1e-12:
            raise WeightError(f"weights {name} sum to {w.sum():.12g}, not 1")
    spread = max(np.sum(p * p), np.sum(q * q), np.sum(p * q))
    if spread > WEIGHT_CONSTANT / n + 1e-12:
        raise WeightError(f"max(sum p^2, sum q^2, sum pq) = {spread:.6g} exceeds "
                          f"{WEIGHT_CONSTANT:g}/N = {WEIGHT_CONSTANT / n:.6g}")
    return p, q


def commutator_bound(p, q) -> float:
    """Bound on ``||[P~, Q~]||`` for the given weights."""
    p = np.asarray(p)
    q = np.asarray(q)
    return float(2 * np.sum(p * q) + 2 * np.sqrt(np.sum(p * p)) + 2 * np.sqrt(np.sum(q * q)))


@dataclass(eq=False)
class RoundedStrategy:
    p_tilde: np.ndarray  # (qx, ax, d, d)
    q_tilde: np.ndarray  # (qy, ay, d, d)
    p_garbage: np.ndarray  # (qx, d, d)
    q_garbage: np.ndarray  # (qy, d, d)
    rho: np.ndarray
    v_phi: np.ndarray
    weights_p: np.ndarray
    weights_q: np.ndarray
    level: int
    projectors: ProjectorFamily | None = field(default=None, repr=False)

    @property
    def dim(self) -> int:
        return self.rho.shape[0]

    def full_povms(self) -> tuple[np.ndarray, np.ndarray]:
        """POVMs with the garbage element appended as the last outcome."""
        pa = np.concatenate([self.p_tilde, self.p_garbage[:, None]], axis=1)
        pb = np.concatenate([self.q_tilde, self.q_garbage[:, None]], axis=1)
        return pa, pb

    def to_strategy(self) -> Strategy:
        """Strategy for the original game with garbage merged into outcome 0."""
        pa = self.p_tilde.copy()
        pb = self.q_tilde.copy()
        pa[:, 0] += self.p_garbage
        pb[:, 0] += self.q_garbage
        return Strategy(pa, pb, self.rho)


def round_solution(gs: GramSolution, weights=None, pf: ProjectorFamily | None = None,
                   strict: bool = False) -> RoundedStrategy:
    """Round a Gram solution into a measurement strategy.

    ``weights`` is ``None`` (uniform on interior levels) or a pair ``(p, q)``
    of arrays over levels ``0..N``.
    """
    n = gs.index.level
    if n < 2:
        raise WeightError("rounding needs N >= 2: there are no interior weight levels at N = 1")
    if weights is None:
        p = q = uniform_weights(n)
    else:
        p, q = weights
    p, q = check_weights(p, q, n)
    if pf is None:
        pf = build_projectors(gs, strict=strict)
    lv = pf.level_projectors
    d = pf.dim

    def graded(labels, w):
        out = np.zeros_like(labels)
        for i in range(1, n):
            if w[i]:
                out += w[i] * np.matmul(np.matmul(lv[i], labels), lv[i])
        return (out + np.swapaxes(out.conj(), -1, -2)) / 2

    pt = graded(pf.label_p, p)
    qt = graded(pf.label_q, q)
    eye = np.eye(d)
    pg = eye - pt.sum(axis=1)
    qg = eye - qt.sum(axis=1)
    v = gs.vec(())
    rho = np.outer(v, v.conj())
    return RoundedStrategy(pt, qt, pg, qg, rho, v, p, q, n, pf)


round = round_solution  # noqa: A001  public name of the operation


# --------------------------------------------------------------------------
# Verification


@dataclass
class ValueReport:
    value_ab: float
    value_ba: float
    sdp_value: float
    value_error: float
    entry_error: float
    garbage_max: float
    min_eigenvalue: float
    subpovm_excess: float

    @property
    def rounded_value(self) -> float:
        return max(self.value_ab, self.value_ba)

    @property
    def passed(self) -> bool:
        return (self.value_error <= 1e-6 and self.entry_error <= 1e-6
                and self.garbage_max <= 1e-8 and self.min_eigenvalue >= -1e-8
                and self.subpovm_excess <= 1e-8)


def verify_value(g: Game, rs: RoundedStrategy, sol: SdpSolution | None = None,
                 moments: np.ndarray | None = None) -> ValueReport:
    """Compare the rounded strategy's value and correlations with the solution.

    ``moments[x, y, a, b]`` are the solution's ``<v_{P_x^a} | v_{Q_y^b}>``;
    taken from ``sol`` when not supplied.
    """
    v = rs.v_phi
    pv = np.einsum("xaij,j->xai", rs.p_tilde, v)
    qv = np.einsum("ybij,j->ybi", rs.q_tilde, v)
    pgv = rs.p_garbage @ v
    qgv = rs.q_garbage @ v
    ab = np.einsum("xai,ybi->xyab", pv.conj(), qv)  # <v| P Q |v>
    ba = np.einsum("ybi,xai->xyab", qv.conj(), pv)  # <v| Q P |v>
    w = g.weights
    val_ab = float(abs(np.sum(w * ab)))
    val_ba = float(abs(np.sum(w * ba)))
    if moments is None and sol is not None:
        moments = solution_correlations(sol)
    if sol is not None:
        sdp = sol.optimum
    elif moments is not None:
        sdp = float(np.sum(w * moments))
    else:
        sdp = float("nan")
    entry_err = float(np.max(np.abs(ab - moments))) if moments is not None else float("nan")
    garb = [np.abs(np.einsum("xi,ybi->xyb", pgv.conj(), qv)).max(initial=0.0),
            np.abs(np.einsum("xai,yi->xya", pv.conj(), qgv)).max(initial=0.0),
            np.abs(pgv.conj() @ qgv.T).max(initial=0.0),
            np.abs(np.einsum("yi,xai->xya", qgv.conj(), pv)).max(initial=0.0),
            np.abs(np.einsum("ybi,xi->xyb", qv.conj(), pgv)).max(initial=0.0),
            np.abs(qgv.conj() @ pgv.T).max(initial=0.0)]
    pa, pb = rs.full_povms()
    mins = min(np.linalg.eigvalsh(e)[0] for e in itertools.chain(
        pa.reshape(-1, rs.dim, rs.dim), pb.reshape(-1, rs.dim, rs.dim)))
    excess = max(np.linalg.eigvalsh(s)[-1] - 1.0 for s in
                 list(rs.p_tilde.sum(axis=1)) + list(rs.q_tilde.sum(axis=1)))
    return ValueReport(val_ab, val_ba, sdp, abs(max(val_ab, val_ba) - sdp), entry_err,
                       float(max(garb)), float(mins), float(max(excess, 0.0)))


def solution_correlations(sol: SdpSolution) -> np.ndarray:
    """``<v_{P_x^a} | v_{Q_y^b}>`` from a solved problem."""
    g = sol.problem.game
    rp = sol.reduced
    alph = sol.problem.index.alphabet
    words = [(alph.p(x, a),) for x in range(g.qx) for a in range(g.ax)]
    words += [(alph.q(y, b),) for y in range(g.qy) for b in range(g.ay)]
    z = rp.word_map(words)
    gram = z @ sol.h @ z.T
    k = g.qx * g.ax
    return gram[:k, k:].reshape(g.qx, g.ax, g.qy, g.ay).transpose(0, 2, 1, 3)


@dataclass
class CommutatorBoundReport:
    max_commutator: float
    max_garbage_p: float  # [P~garbage, Q~_y^b]
    max_garbage_q: float  # [P~_x^a, Q~garbage]
    max_garbage_both: float
    bound: float
    weight_bound: float
    level: int
    ax: int
    ay: int
    table: np.ndarray = field(repr=False)

    @property
    def max_garbage(self) -> float:
        return max(self.max_garbage_p, self.max_garbage_q, self.max_garbage_both)

    @property
    def holds(self) -> bool:
        return self.max_commutator <= self.bound + 1e-9

    @property
    def garbage_holds(self) -> bool:
        b = self.bound
        return (self.max_garbage_p <= self.ax * b + 1e-9
                and self.max_garbage_q <= self.ay * b + 1e-9
                and self.max_garbage_both <= self.ax * self.ay * b + 1e-9)


def verify_commutators(rs: RoundedStrategy) -> CommutatorBoundReport:
    """Operator norms of all cross commutators, with the explicit bounds."""
    qx, ax = rs.p_tilde.shape[:2]
    qy, ay = rs.q_tilde.shape[:2]
    n = rs.level
    table = np.zeros((qx, ax, qy, ay))
    for x, a, y, b in itertools.product(range(qx), range(ax), range(qy), range(ay)):
        table[x, a, y, b] = operator_norm(commutator(rs.p_tilde[x, a], rs.q_tilde[y, b]))
    gp = max(operator_norm(commutator(rs.p_garbage[x], rs.q_tilde[y, b]))
             for x in range(qx) for y in range(qy) for b in range(ay))
    gq = max(operator_norm(commutator(rs.p_tilde[x, a], rs.q_garbage[y]))
             for x in range(qx) for a in range(ax) for y in range(qy))
    gb = max(operator_norm(commutator(rs.p_garbage[x], rs.q_garbage[y]))
             for x in range(qx) for y in range(qy))
    wb = commutator_bound(rs.weights_p, rs.weights_q)
    uniform = (np.allclose(rs.weights_p, uniform_weights(n))
               and np.allclose(rs.weights_q, uniform_weights(n)))
    bound = COMMUTATOR_CONSTANT / math.sqrt(n - 1) if uniform else wb
    return CommutatorBoundReport(float(table.max()), float(gp), float(gq), float(gb),
                                 bound, wb, n, ax, ay, table)


@dataclass
class RoundingRun:
    """Everything produced by :func:`rounding_pipeline`."""

    solution: SdpSolution
    point: SdpSolution  # the regularized point that was factored
    gram: GramSolution
    projectors: ProjectorFamily
    strategy: RoundedStrategy
    identities: IdentityReport
    value: ValueReport
    commutators: CommutatorBoundReport


def rounding_pipeline(sol: SdpSolution, weights=None, eta: float = 1e-6,
                      seed: int = 0) -> RoundingRun:
    """Regularize, factor, round and verify a solved relaxation.

    Interior-point optima carry eigenvalues spread all the way down to
    machine precision, so no clamp separates signal from noise. Mixing in
    ``eta`` of a strictly feasible point lifts every eigenvalue above the
    round-off level; the factorization then keeps the full rank (clamp 0)
    and the exact linear relations between word vectors survive. Value
    errors are measured against the unregularized optimum, entry errors
    against the point that was factored.
    """
    point = regularize(sol, eta=eta, seed=seed)
    gs = extract_gram(point, clamp=0.0)
    pf = build_projectors(gs)
    rs = round_solution(gs, weights=weights, pf=pf)
    vr = verify_value(sol.problem.game, rs, sol, moments=solution_correlations(point))
    return RoundingRun(sol, point, gs, pf, rs, verify_identities(pf, gs), vr,
                       verify_commutators(rs))


# --------------------------------------------------------------------------
# Level sweep


STUDY_COLUMNS = ("N", "sdpValue", "roundedValue", "maxCommutator",
                 "maxGarbageCommutator", "identityResidualMax")


@dataclass
class StudyRow:
    N: int
    sdpValue: float | None = None
    roundedValue: float | None = None
    maxCommutator: float | None = None
    maxGarbageCommutator: float | None = None
    identityResidualMax: float | None = None
    marker: str | None = None  # "size-cap", "solver-failure", ...
    status: str = ""

    def cells(self) -> list:
        out = [self.N]
        for name in STUDY_COLUMNS[1:]:
            out.append(getattr(self, name))
        if self.marker is not None:
            out[1] = self.marker
        return out


def study_convergence(g: Game, levels, tol: float = 1e-8, cap: int = WORD_CAP,
                      weights=None) -> list[StudyRow]:
    """Solve, round and verify at each level; failures are recorded per row."""
    rows = []
    alph = Alphabet.of(g)
    for n in levels:
        row = StudyRow(N=int(n))
        rows.append(row)
        if n < 1:
            row.marker = "bad-level"
            continue
        if word_count(alph.size, n) > cap:
            row.marker = "size-cap"
            continue
        try:
            sol = solve(build_level(g, n, cap=cap), tol=tol)
        except SizeCapError:
            row.marker = "size-cap"
            continue
        except Exception as exc:  # keep sweeping
            row.marker = "solver-failure"
            row.status = str(exc)
            continue
        row.sdpValue = sol.optimum
        row.status = sol.status
        if sol.status != "solved":
            row.marker = "solver-failure"
            continue
        if n < 2:
            continue
        try:
            run = rounding_pipeline(sol, weights=weights)
            row.roundedValue = run.value.rounded_value
            row.maxCommutator = run.commutators.max_commutator
            row.maxGarbageCommutator = run.commutators.max_garbage
            row.identityResidualMax = run.identities.max_residual
        except Exception as exc:
            row.status = f"rounding failed: {exc}"
    return rows
