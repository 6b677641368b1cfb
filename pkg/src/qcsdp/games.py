"""Two-prover one-round games, strategies and their evaluation."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .linalg import commutator, operator_norm, psd_sqrt

BRUTE_FORCE_LIMIT = 10**7


@dataclass(frozen=True, eq=False)
class Game:
    """A two-prover game.

    ``mu[x, y]`` is the question distribution and ``predicate[x, y, a, b]``
    the boolean accept table. ``x_labels``/``y_labels`` optionally name the
    questions (used by oracularized games).
    """

    qx: int
    qy: int
    ax: int
    ay: int
    mu: np.ndarray
    predicate: np.ndarray
    x_labels: tuple | None = None
    y_labels: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "mu", np.asarray(self.mu, dtype=float))
        object.__setattr__(self, "predicate", np.asarray(self.predicate, dtype=bool))

    @property
    def weights(self) -> np.ndarray:
        """``mu(x, y) * V(x, y, a, b)`` as a (qx, qy, ax, ay) array."""
        return self.mu[:, :, None, None] * self.predicate


def validate_game(g: Game) -> list[str]:
    """Return a list of violated invariants (empty when ``g`` is valid)."""
    out = []
    for name in ("qx", "qy", "ax", "ay"):
        if getattr(g, name) < 1:
            out.append(f"count {name} must be >= 1 (got {getattr(g, name)})")
    if out:
        return out
    if g.mu.shape != (g.qx, g.qy):
        out.append(f"mu shape {g.mu.shape} != ({g.qx}, {g.qy})")
    else:
        neg = np.argwhere(g.mu < 0)
        for x, y in neg:
            out.append(f"mu entry ({x}, {y}) is negative")
        total = g.mu.sum()
        if abs(total - 1.0) > 1e-12:
            out.append(f"mu sums to {total:.12g}")
    expected = g.qx * g.qy * g.ax * g.ay
    if g.predicate.size != expected:
        out.append(f"predicate size {g.predicate.size} != {expected}")
    elif g.predicate.shape != (g.qx, g.qy, g.ax, g.ay):
        out.append(f"predicate shape {g.predicate.shape} != ({g.qx}, {g.qy}, {g.ax}, {g.ay})")
    return out


def chsh() -> Game:
    """CHSH: win iff ``a xor b == x and y``."""
    pred = np.zeros((2, 2, 2, 2), dtype=bool)
    for x, y, a, b in itertools.product(range(2), repeat=4):
        pred[x, y, a, b] = (a ^ b) == (x & y)
    return Game(2, 2, 2, 2, np.full((2, 2), 0.25), pred)


def trivial_game(accept: bool = True) -> Game:
    """One question, one answer per prover; ``V`` is constant."""
    return Game(1, 1, 1, 1, np.ones((1, 1)), np.full((1, 1, 1, 1), accept))


def random_game(rng: np.random.Generator, qx: int = 2, qy: int = 2, ax: int = 2,
                ay: int = 2) -> Game:
    """Game with Dirichlet question distribution and uniform random predicate."""
    mu = rng.dirichlet(np.ones(qx * qy)).reshape(qx, qy)
    pred = rng.random((qx, qy, ax, ay)) < 0.5
    return Game(qx, qy, ax, ay, mu, pred)


# --------------------------------------------------------------------------
# Strategies


@dataclass(frozen=True, eq=False)
class Strategy:
    """POVMs ``povm_a[x, a]``, ``povm_b[y, b]`` and a state ``rho`` on C^dim."""

    povm_a: np.ndarray
    povm_b: np.ndarray
    rho: np.ndarray

    def __post_init__(self):
        for name in ("povm_a", "povm_b", "rho"):
            object.__setattr__(self, name, np.asarray(getattr(self, name)))
        if self.povm_a.ndim != 4 or self.povm_b.ndim != 4:
            raise ValueError("POVM arrays must have shape (questions, answers, d, d)")

    @property
    def dim(self) -> int:
        return self.rho.shape[0]

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return (self.povm_a.shape[0], self.povm_b.shape[0],
                self.povm_a.shape[1], self.povm_b.shape[1])


def validate_strategy(s: Strategy, tol: float = 1e-10) -> list[str]:
    out = []
    d = s.dim
    if s.rho.shape != (d, d):
        return [f"rho shape {s.rho.shape} is not square"]
    for label, povm in (("A", s.povm_a), ("B", s.povm_b)):
        if povm.shape[2:] != (d, d):
            out.append(f"povm {label} elements have shape {povm.shape[2:]}, expected ({d}, {d})")
            continue
        for q in range(povm.shape[0]):
            for a in range(povm.shape[1]):
                e = povm[q, a]
                if np.max(np.abs(e - e.conj().T)) > tol:
                    out.append(f"povm {label}[{q},{a}] not Hermitian")
                elif np.linalg.eigvalsh(e)[0] < -tol:
                    out.append(f"povm {label}[{q},{a}] not PSD")
            if np.max(np.abs(povm[q].sum(axis=0) - np.eye(d))) > tol:
                out.append(f"povm {label}[{q}] does not sum to identity")
    if np.max(np.abs(s.rho - s.rho.conj().T)) > tol or np.linalg.eigvalsh(s.rho)[0] < -tol:
        out.append("rho not Hermitian PSD")
    if abs(np.trace(s.rho) - 1.0) > tol:
        out.append("rho trace != 1")
    return out


def _check_dims(g: Game, s: Strategy) -> None:
    if s.shape != (g.qx, g.qy, g.ax, g.ay):
        raise ValueError(f"strategy shape {s.shape} does not match game "
                         f"({g.qx}, {g.qy}, {g.ax}, {g.ay})")
    d = s.dim
    if s.povm_a.shape[2:] != (d, d) or s.povm_b.shape[2:] != (d, d):
        raise ValueError("POVM element dimension does not match rho")


def correlation_tables(s: Strategy) -> tuple[np.ndarray, np.ndarray]:
    """``Tr(A B rho)`` and ``Tr(B A rho)`` indexed ``[x, y, a, b]``."""
    ab = np.einsum("xaij,ybjk,ki->xyab", s.povm_a, s.povm_b, s.rho, optimize=True)
    ba = np.einsum("ybij,xajk,ki->xyab", s.povm_b, s.povm_a, s.rho, optimize=True)
    return ab, ba


def ordered_values(g: Game, s: Strategy) -> tuple[float, float]:
    """Values for the (A then B) and (B then A) orderings, before the max."""
    _check_dims(g, s)
    ab, ba = correlation_tables(s)
    w = g.weights
    # Correctly rounded sums, divided by the (equally rounded) mass of mu:
    # a deterministic strategy that always wins then scores exactly 1 even
    # when the entries of mu only sum to 1 up to round-off.
    total = math.fsum(g.mu.ravel().tolist())
    return _exact_abs_sum(w * ab) / total, _exact_abs_sum(w * ba) / total


def _exact_abs_sum(t: np.ndarray) -> float:
    t = t.ravel()
    re = math.fsum(np.real(t).tolist())
    im = math.fsum(np.imag(t).tolist()) if np.iscomplexobj(t) else 0.0
    return float(abs(complex(re, im)))


def strategy_value(g: Game, s: Strategy) -> float:
    """Success probability, maximized over the two prover orderings."""
    return max(ordered_values(g, s))


def classical_value(g: Game) -> float:
    """Exact classical value by enumerating first-prover answer functions.

    For each deterministic first-prover strategy the second prover's best
    response is taken question by question, which is the maximum over all
    deterministic pairs.
    """
    if g.ax ** g.qx * g.ay ** g.qy > BRUTE_FORCE_LIMIT:
        raise ValueError(f"game too large for brute force: "
                         f"{g.ax}^{g.qx} * {g.ay}^{g.qy} > {BRUTE_FORCE_LIMIT}")
    w = g.weights  # (qx, qy, ax, ay)
    best = 0.0
    xs = np.arange(g.qx)
    chunk = 1 << 14
    funcs = itertools.product(range(g.ax), repeat=g.qx)
    while True:
        block = np.array(list(itertools.islice(funcs, chunk)), dtype=int)
        if block.size == 0:
            break
        # (n, qx, qy, ay) -> sum over x -> (n, qy, ay)
        gathered = w[xs[None, :], :, block, :].sum(axis=1)
        vals = gathered.max(axis=2).sum(axis=1)
        best = max(best, float(vals.max()))
    return best


def deterministic_strategy(answers_a: Sequence[int], answers_b: Sequence[int],
                           ax: int, ay: int) -> Strategy:
    """One-dimensional strategy answering ``answers_a[x]`` and ``answers_b[y]``."""
    pa = np.zeros((len(answers_a), ax, 1, 1))
    pb = np.zeros((len(answers_b), ay, 1, 1))
    pa[np.arange(len(answers_a)), list(answers_a)] = 1.0
    pb[np.arange(len(answers_b)), list(answers_b)] = 1.0
    return Strategy(pa, pb, np.ones((1, 1)))


def chsh_optimal_strategy() -> Strategy:
    """EPR pair with measurement angles 0, pi/4 (first) and +-pi/8 (second)."""

    def proj(theta):
        v0 = np.array([np.cos(theta), np.sin(theta)])
        v1 = np.array([-np.sin(theta), np.cos(theta)])
        return np.stack([np.outer(v0, v0), np.outer(v1, v1)])

    eye = np.eye(2)
    pa = np.stack([[np.kron(e, eye) for e in proj(t)] for t in (0.0, np.pi / 4)])
    pb = np.stack([[np.kron(eye, e) for e in proj(t)] for t in (np.pi / 8, -np.pi / 8)])
    psi = np.array([1.0, 0.0, 0.0, 1.0]) / np.sqrt(2)
    return Strategy(pa, pb, np.outer(psi, psi))


@dataclass(frozen=True)
class CommutatorReport:
    delta_max: float
    table: np.ndarray = field(repr=False)  # [x, a, y, b]


def commutator_report(s: Strategy) -> CommutatorReport:
    """Operator norms of all cross-prover commutators ``[A_x^a, B_y^b]``."""
    d = s.dim
    if s.povm_a.shape[2:] != (d, d) or s.povm_b.shape[2:] != (d, d):
        raise ValueError("POVM element dimension does not match rho")
    qx, ax = s.povm_a.shape[:2]
    qy, ay = s.povm_b.shape[:2]
    table = np.zeros((qx, ax, qy, ay))
    for x, a, y, b in itertools.product(range(qx), range(ax), range(qy), range(ay)):
        table[x, a, y, b] = operator_norm(commutator(s.povm_a[x, a], s.povm_b[y, b]))
    return CommutatorReport(delta_max=float(table.max(initial=0.0)), table=table)


# --------------------------------------------------------------------------
# Projective dilation


def _dilation_reflection(povm: np.ndarray, rel_cutoff: float = 1e-12) -> np.ndarray:
    """Unitary ``U`` on C^d (x) C^n with ``U (psi (x) |0>) = sum_a sqrt(E_a) psi (x) |a>``.

    ``U`` is the block Householder reflection ``1 - 2 P`` with ``P`` the
    projector onto the range of ``J0 - V``; ``J0^H V = sqrt(E_0)`` is
    Hermitian, which is what makes the reflection send ``J0`` to ``V``.
    """
    n, d = povm.shape[0], povm.shape[1]
    roots = []
    for e in povm:
        w = np.linalg.eigvalsh(e)
        if w[0] < -1e-9:
            raise ValueError(f"POVM element has eigenvalue {w[0]:.3e}; square root unstable")
        roots.append(psd_sqrt(e))
    # isometry H -> H (x) C^n, ordering (h, a) -> h * n + a
    v = np.zeros((d * n, d), dtype=np.result_type(povm, float))
    j0 = np.zeros((d * n, d))
    for a in range(n):
        v[a::n, :] = roots[a]
    j0[0::n, :] = np.eye(d)
    z = j0 - v
    u, s, _ = np.linalg.svd(z, full_matrices=False)
    if s.size == 0 or s[0] <= rel_cutoff:
        return np.eye(d * n, dtype=v.dtype)
    basis = u[:, s > rel_cutoff * max(1.0, s[0])]
    return np.eye(d * n, dtype=v.dtype) - 2.0 * basis @ basis.conj().T


def dilate_to_projective(s: Strategy) -> Strategy:
    """Naimark dilation onto C^d (x) C^|A| (x) C^|B| with ancillas in |0>.

    Each POVM is replaced by ``U^H (1 (x) |a><a|) U`` on the system plus its
    own ancilla and acts trivially on the other prover's ancilla.
    """
    d = s.dim
    qx, ax = s.povm_a.shape[:2]
    qy, ay = s.povm_b.shape[:2]
    dtype = np.result_type(s.povm_a, s.povm_b, s.rho, float)
    eye_a, eye_b = np.eye(ax), np.eye(ay)
    pa = np.zeros((qx, ax, d * ax * ay, d * ax * ay), dtype=dtype)
    pb = np.zeros((qy, ay, d * ax * ay, d * ax * ay), dtype=dtype)
    for x in range(qx):
        u = _dilation_reflection(s.povm_a[x])
        for a in range(ax):
            proj = np.kron(np.eye(d), np.outer(eye_a[a], eye_a[a]))
            pa[x, a] = np.kron(u.conj().T @ proj @ u, eye_b)
    # second prover acts on H (x) C^|B|; reorder to H (x) C^|A| (x) C^|B|
    for y in range(qy):
        u = _dilation_reflection(s.povm_b[y])
        for b in range(ay):
            proj = np.kron(np.eye(d), np.outer(eye_b[b], eye_b[b]))
            op = (u.conj().T @ proj @ u).reshape(d, ay, d, ay)
            full = np.einsum("ibjc,ae->iabjec", op, eye_a).reshape(d * ax * ay, d * ax * ay)
            pb[y, b] = full
    anc = np.zeros(ax * ay)
    anc[0] = 1.0
    rho = np.kron(s.rho, np.outer(anc, anc))
    return Strategy(pa, pb, rho)


# --------------------------------------------------------------------------
# Three-query constraint systems and their two-prover game


@dataclass(frozen=True)
class Clause:
    vars: tuple[int, int, int]
    accept: frozenset  # of 3-bit tuples (b1, b2, b3) aligned with ``vars``
    weight: float


@dataclass(frozen=True, eq=False)
class CspInstance:
    nvars: int
    clauses: tuple[Clause, ...]

    def __post_init__(self):
        object.__setattr__(self, "clauses", tuple(self.clauses))
        problems = validate_csp(self)
        if problems:
            raise ValueError("; ".join(problems))

    def satisfied_weight(self, z: Sequence[int]) -> float:
        """Total weight of clauses satisfied by the assignment ``z``."""
        return sum(c.weight for c in self.clauses
                   if tuple(int(z[i]) for i in c.vars) in c.accept)

    def satisfying_assignments(self) -> list[tuple[int, ...]]:
        if self.nvars > 20:
            raise ValueError("too many variables to enumerate assignments")
        return [z for z in itertools.product((0, 1), repeat=self.nvars)
                if self.satisfied_weight(z) >= 1.0 - 1e-12]

    def variable_marginals(self) -> np.ndarray:
        """Probability that each variable is among the queried triple's positions.

        Averaged over the three coordinates, so a uniform answer is
        ``1/nvars`` for every variable.
        """
        out = np.zeros(self.nvars)
        for c in self.clauses:
            for i in c.vars:
                out[i] += c.weight / 3.0
        return out


def make_clause(vars_, accept, weight) -> Clause:
    acc = frozenset(tuple(int(b) for b in t) for t in accept)
    return Clause(tuple(int(v) for v in vars_), acc, float(weight))


def validate_csp(csp: CspInstance) -> list[str]:
    out = []
    if csp.nvars < 3:
        out.append(f"nvars must be >= 3 (got {csp.nvars})")
    if not csp.clauses:
        out.append("no clauses")
    total = 0.0
    for k, c in enumerate(csp.clauses):
        if len(c.vars) != 3:
            out.append(f"clause {k} does not have 3 variables")
            continue
        if any(v < 0 or v >= csp.nvars for v in c.vars):
            out.append(f"clause {k} has a variable index outside [0, {csp.nvars})")
        if len(set(c.vars)) != 3:
            out.append(f"clause {k} repeats a variable index")
        for t in c.accept:
            if len(t) != 3 or any(b not in (0, 1) for b in t):
                out.append(f"clause {k} has a malformed accept tuple {t}")
        if c.weight < 0:
            out.append(f"clause {k} has negative weight")
        total += c.weight
    if csp.clauses and abs(total - 1.0) > 1e-9:
        out.append(f"clause weights sum to {total:.12g}")
    return out


def marginal_deviation(csp: CspInstance) -> float:
    """Largest gap between a variable's query marginal and ``1/nvars``."""
    return float(np.max(np.abs(csp.variable_marginals() - 1.0 / csp.nvars)))


def balance_weights(csp: CspInstance) -> tuple[CspInstance, float]:
    """Reweight clauses so the query marginal is as close to uniform as possible.

    Solves a nonnegative least-squares problem for the weights and returns
    the reweighted instance plus its remaining marginal deviation. Clauses
    whose weight becomes zero are kept (with weight 0) so question sets do
    not change.
    """
    from scipy.optimize import nnls

    m = len(csp.clauses)
    a = np.zeros((csp.nvars + 1, m))
    for k, c in enumerate(csp.clauses):
        for i in c.vars:
            a[i, k] += 1.0 / 3.0
    a[csp.nvars, :] = 10.0  # soft normalization row
    rhs = np.concatenate([np.full(csp.nvars, 1.0 / csp.nvars), [10.0]])
    w, _ = nnls(a, rhs)
    if w.sum() <= 0:
        return csp, marginal_deviation(csp)
    w = w / w.sum()
    out = CspInstance(csp.nvars, tuple(Clause(c.vars, c.accept, float(wk))
                                        for c, wk in zip(csp.clauses, w)))
    return out, marginal_deviation(out)


def _triple_bits(a: int) -> tuple[int, int, int]:
    # big-endian: first (smallest) variable is the most significant bit
    return ((a >> 2) & 1, (a >> 1) & 1, a & 1)


def oracularize(csp: CspInstance) -> Game:
    """Two-prover game of the triple/pair consistency protocol.

    First prover: sorted triples, answers are 3 bits in sorted variable order
    (answer ``a`` has bit ``k`` equal to ``(a >> (2 - k)) & 1``).
    Second prover: ordered pairs ``(i, j)`` over all variables, question
    index ``i * nvars + j``, answer ``b = 2 b_i + b_j``.
    """
    problems = validate_csp(csp)
    if problems:
        raise ValueError("; ".join(problems))
    n = csp.nvars
    # merge clauses on the same variable set
    merged: dict[tuple[int, int, int], list] = {}
    for c in csp.clauses:
        order = sorted(range(3), key=lambda k: c.vars[k])
        key = tuple(c.vars[k] for k in order)
        acc = frozenset(tuple(t[k] for k in order) for t in c.accept)
        if key in merged:
            if merged[key][0] != acc:
                raise ValueError(f"clauses on variables {key} have different accept sets")
            merged[key][1] += c.weight
        else:
            merged[key] = [acc, c.weight]
    triples = sorted(merged)
    qx, qy = len(triples), n * n
    mu = np.zeros((qx, qy))
    pred = np.zeros((qx, qy, 8, 4), dtype=bool)
    for x, t in enumerate(triples):
        acc, w = merged[t]
        for k, i in enumerate(t):
            for j in range(n):
                y = i * n + j
                mu[x, y] += w / (3.0 * n)
                for a in range(8):
                    bits = _triple_bits(a)
                    if bits not in acc:
                        continue
                    for b in range(4):
                        if bits[k] == (b >> 1):
                            pred[x, y, a, b] = True
    # drop the constraint on pairs that are never asked; keep the table full
    y_labels = tuple((i, j) for i in range(n) for j in range(n))
    return Game(qx, qy, 8, 4, mu, pred, x_labels=tuple(triples), y_labels=y_labels)


def honest_strategy(game: Game, z: Sequence[int]) -> Strategy:
    """Deterministic one-dimensional strategy answering from assignment ``z``."""
    if game.x_labels is None or game.y_labels is None:
        raise ValueError("game does not carry oracularized question labels")
    ans_a = [4 * z[t[0]] + 2 * z[t[1]] + z[t[2]] for t in game.x_labels]
    ans_b = [2 * z[i] + z[j] for i, j in game.y_labels]
    return deterministic_strategy(ans_a, ans_b, game.ax, game.ay)


def mixed_honest_strategy(game: Game, assignments: Sequence[Sequence[int]]) -> Strategy:
    """Uniform mixture of honest strategies as a diagonal (commuting) strategy."""
    k = len(assignments)
    if k == 0:
        raise ValueError("need at least one assignment")
    parts = [honest_strategy(game, z) for z in assignments]
    pa = np.zeros((game.qx, game.ax, k, k))
    pb = np.zeros((game.qy, game.ay, k, k))
    for m, s in enumerate(parts):
        pa[:, :, m, m] = s.povm_a[:, :, 0, 0]
        pb[:, :, m, m] = s.povm_b[:, :, 0, 0]
    return Strategy(pa, pb, np.eye(k) / k)


# --------------------------------------------------------------------------
# Random strategies


def _random_unitary(rng: np.random.Generator, d: int) -> np.ndarray:
    z = (rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    return q * (np.diag(r) / np.abs(np.diag(r)))


def _random_povm(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    """Random POVM: ``S^-1/2 G_a S^-1/2`` with ``G_a`` random PSD."""
    gs = []
    for _ in range(n):
        m = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
        gs.append(m @ m.conj().T)
    s = sum(gs)
    w, u = np.linalg.eigh(s)
    inv = (u / np.sqrt(w)) @ u.conj().T
    return np.stack([inv @ g @ inv for g in gs])


def _random_state(rng: np.random.Generator, d: int) -> np.ndarray:
    m = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
    rho = m @ m.conj().T
    return rho / np.trace(rho).real


def random_ac_strategy(rng: np.random.Generator, g: Game, da: int, db: int,
                       noise: float = 0.0) -> Strategy:
    """Random strategy on C^da (x) C^db, rotated by ``exp(i noise H)``.

    ``noise = 0`` gives an exactly commuting (tensor product) strategy;
    small ``noise`` gives a delta-AC strategy with small delta.
    """
    d = da * db
    pa = np.stack([[np.kron(e, np.eye(db)) for e in _random_povm(rng, g.ax, da)]
                   for _ in range(g.qx)])
    pb = np.stack([[np.kron(np.eye(da), e) for e in _random_povm(rng, g.ay, db)]
                   for _ in range(g.qy)])
    if noise:
        h = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
        h = (h + h.conj().T) / 2
        h /= np.linalg.norm(h, 2)
        w, u = np.linalg.eigh(h)
        rot = (u * np.exp(1j * noise * w)) @ u.conj().T
        pb = np.einsum("ij,ybjk,lk->ybil", rot, pb, rot.conj())
    return Strategy(pa, pb, _random_state(rng, d))
