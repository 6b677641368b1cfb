"""Word sets and the level-N moment problem of a two-prover game.

Letters are integers: ``P_x^a`` is ``x * ax + a`` and ``Q_y^b`` is
``qx * ax + y * ay + b``. A word is a tuple of letters, the empty tuple
being the empty word. ``Gamma[s, t]`` stands for the moment of the word
``s t``; as a matrix entry it lives at ``(rev(s), t)`` of the Gram matrix
``G[u, t] = <v_u | v_t>`` where ``v_{L w} = L v_w``.

Two formulations are provided:

* :func:`build_level` emits every linear constraint literally over the full
  word set (only practical for small levels, used for audits and residual
  checks);
* :func:`reduce_problem` compiles the same relaxation into a much smaller
  linear matrix inequality over the Gram matrix of canonical words
  (products ``p q`` of a reduced first-prover word and a reduced
  second-prover word), which is what the solver works on.
"""
from __future__ import annotations

import hashlib
import itertools
import json
from collections import Counter
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Iterator

import numpy as np

from .games import Game, validate_game

Word = tuple
WORD_CAP = 20000
FAMILIES = ("normalization", "shifting", "commutation", "sum_p", "sum_q", "orth_p", "orth_q")


class SizeCapError(ValueError):
    """Raised when a word set would exceed the configured cap."""


# --------------------------------------------------------------------------
# Alphabet and word index


@dataclass(frozen=True)
class Alphabet:
    qx: int
    qy: int
    ax: int
    ay: int

    @classmethod
    def of(cls, g: Game) -> "Alphabet":
        return cls(g.qx, g.qy, g.ax, g.ay)

    @property
    def size(self) -> int:
        return self.qx * self.ax + self.qy * self.ay

    @property
    def n_p(self) -> int:
        return self.qx * self.ax

    def p(self, x: int, a: int) -> int:
        return x * self.ax + a

    def q(self, y: int, b: int) -> int:
        return self.n_p + y * self.ay + b

    def decode(self, letter: int) -> tuple[str, int, int]:
        if letter < self.n_p:
            return ("P", letter // self.ax, letter % self.ax)
        k = letter - self.n_p
        return ("Q", k // self.ay, k % self.ay)

    def label(self, letter: int) -> str:
        side, q, a = self.decode(letter)
        return f"{side}{q}_{a}"

    def group(self, letter: int) -> int:
        """Question index shared by all outcomes of one measurement."""
        if letter < self.n_p:
            return letter // self.ax
        return self.qx + (letter - self.n_p) // self.ay

    def is_p(self, letter: int) -> bool:
        return letter < self.n_p

    def is_last(self, letter: int) -> bool:
        if letter < self.n_p:
            return letter % self.ax == self.ax - 1
        return (letter - self.n_p) % self.ay == self.ay - 1

    def group_letters(self, group: int) -> list[int]:
        if group < self.qx:
            return [self.p(group, a) for a in range(self.ax)]
        return [self.q(group - self.qx, b) for b in range(self.ay)]

    def letters(self) -> range:
        return range(self.size)


def word_label(word: Word, alph: Alphabet) -> str:
    return "".join(alph.label(c) for c in word) if word else "phi"


def word_count(n_letters: int, n: int) -> int:
    return sum(n_letters ** i for i in range(n + 1))


@dataclass(frozen=True, eq=False)
class WordIndex:
    alphabet: Alphabet
    level: int
    words: tuple
    position: dict = field(repr=False)

    @property
    def size(self) -> int:
        return len(self.words)

    def of_length(self, k: int) -> list:
        return [w for w in self.words if len(w) == k]

    def up_to(self, k: int) -> list:
        return [w for w in self.words if len(w) <= k]


def build_word_index(g: Game, n: int, cap: int = WORD_CAP) -> WordIndex:
    """All words of length at most ``n``, empty word first, then by length
    and lexicographically within a length."""
    if n < 1:
        raise ValueError(f"level must be >= 1 (got {n})")
    alph = Alphabet.of(g)
    total = word_count(alph.size, n)
    if total > cap:
        raise SizeCapError(f"word set has {total} words, above the cap of {cap}")
    words = [()]
    for k in range(1, n + 1):
        words.extend(itertools.product(range(alph.size), repeat=k))
    pos = {w: i for i, w in enumerate(words)}
    return WordIndex(alph, n, tuple(words), pos)


# --------------------------------------------------------------------------
# Literal constraint system


@dataclass(frozen=True)
class Constraint:
    terms: tuple  # ((i, j), coef) with entry keys sorted
    rhs: float
    family: str


def _normalize(terms: Iterable, rhs: float):
    acc: dict = {}
    for key, c in terms:
        acc[key] = acc.get(key, 0) + c
    items = tuple(sorted((k, c) for k, c in acc.items() if c != 0))
    if not items:
        return None, rhs
    if items[0][1] < 0:
        items = tuple((k, -c) for k, c in items)
        rhs = -rhs
    return items, rhs


def game_hash(g: Game) -> str:
    payload = {
        "qx": g.qx, "qy": g.qy, "ax": g.ax, "ay": g.ay,
        "mu": [[float(v).hex() for v in row] for row in g.mu],
        "accept": [list(map(int, t)) for t in np.argwhere(g.predicate)],
    }
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


class MomentProblem:
    """Level-``n`` relaxation of ``game`` over the word Gram matrix.

    Constraints are generated on first access of :attr:`constraints`
    (the full system grows like ``|A|^(2n)``).
    """

    def __init__(self, game: Game, level: int, index: WordIndex, complex_mode: bool = False):
        self.game = game
        self.level = level
        self.index = index
        self.complex_mode = complex_mode
        self.dim = index.size
        self.game_hash = game_hash(game)
        self.objective = self._objective()
        self._loaded_constraints = None

    def key(self, s: Word, t: Word) -> tuple[int, int]:
        """Matrix entry holding ``Gamma[s, t]``."""
        pos = self.index.position
        i, j = pos[s[::-1]], pos[t]
        if self.complex_mode or i <= j:
            return (i, j)
        return (j, i)

    def _objective(self) -> tuple:
        g, alph = self.game, self.index.alphabet
        out = {}
        for x, y, a, b in itertools.product(range(g.qx), range(g.qy), range(g.ax), range(g.ay)):
            w = g.mu[x, y] * g.predicate[x, y, a, b]
            if w:
                k = self.key((alph.p(x, a),), (alph.q(y, b),))
                out[k] = out.get(k, 0.0) + float(w)
        return tuple(sorted(out.items()))

    @cached_property
    def constraints(self) -> tuple:
        if self._loaded_constraints is not None:
            return self._loaded_constraints
        seen: dict = {}
        self.dropped_trivial = Counter()
        for fam, terms, rhs in self._raw():
            items, rhs = _normalize(terms, rhs)
            if items is None:
                if abs(rhs) > 0:
                    raise ValueError(f"inconsistent constraint in family {fam}")
                self.dropped_trivial[fam] += 1
                continue
            seen.setdefault((items, float(rhs)), fam)
        return tuple(Constraint(items, rhs, fam) for (items, rhs), fam in seen.items())

    def _raw(self) -> Iterator:
        n, alph, idx = self.level, self.index.alphabet, self.index
        key = self.key
        short = idx.up_to(n - 1)
        full = idx.words
        yield "normalization", [(key((), ()), 1)], 1.0
        for c in alph.letters():
            for s in short:
                for t in short:
                    yield "shifting", [(key(s + (c,), t), 1), (key(s, (c,) + t), -1)], 0.0
        ps = [alph.p(x, a) for x in range(alph.qx) for a in range(alph.ax)]
        qs = [alph.q(y, b) for y in range(alph.qy) for b in range(alph.ay)]
        for p in ps:
            for q in qs:
                for s in short:
                    for t in short:
                        yield "commutation", [(key(s + (p,), (q,) + t), 1),
                                              (key(s + (q,), (p,) + t), -1)], 0.0
        for fam, nq, na, mk in (("sum_p", alph.qx, alph.ax, alph.p),
                                ("sum_q", alph.qy, alph.ay, alph.q)):
            for x in range(nq):
                for s in short:
                    for t in full:
                        terms = [(key(s + (mk(x, a),), t), 1) for a in range(na)]
                        terms.append((key(s, t), -1))
                        yield fam, terms, 0.0
        for fam, nq, na, mk in (("orth_p", alph.qx, alph.ax, alph.p),
                                ("orth_q", alph.qy, alph.ay, alph.q)):
            for x in range(nq):
                for a, a2 in itertools.permutations(range(na), 2):
                    for s in short:
                        for t in short:
                            yield fam, [(key(s + (mk(x, a),), (mk(x, a2),) + t), 1)], 0.0

    def residuals(self, gram: np.ndarray) -> dict:
        """Largest constraint violation per family for a candidate Gram matrix."""
        out = {f: 0.0 for f in FAMILIES}
        for c in self.constraints:
            val = sum(coef * gram[i, j] for (i, j), coef in c.terms) - c.rhs
            out[c.family] = max(out[c.family], abs(val))
        return out

    def objective_value(self, gram: np.ndarray) -> float:
        return float(sum(w * gram[i, j].real for (i, j), w in self.objective))


def build_level(g: Game, n: int, cap: int = WORD_CAP, complex_mode: bool = False) -> MomentProblem:
    problems = validate_game(g)
    if problems:
        raise ValueError("invalid game: " + "; ".join(problems))
    return MomentProblem(g, n, build_word_index(g, n, cap), complex_mode)


@dataclass(frozen=True)
class AuditReport:
    counts: dict
    total: int
    dropped_trivial: dict
    duplicates: int
    normalization_count: int
    objective_ok: bool
    keys_in_range: bool

    @property
    def ok(self) -> bool:
        return (self.duplicates == 0 and self.normalization_count == 1
                and self.objective_ok and self.keys_in_range)


def constraint_audit(p: MomentProblem) -> AuditReport:
    cons = p.constraints
    counts = Counter(c.family for c in cons)
    forms = Counter((c.terms, c.rhs) for c in cons)
    dup = sum(v - 1 for v in forms.values())
    norm = sum(1 for c in cons if c.family == "normalization")
    words = p.index.words
    obj_ok = True
    for (i, j), _ in p.objective:
        if len(words[i]) != 1 or len(words[j]) != 1:
            obj_ok = False
    in_range = all(0 <= i < p.dim and 0 <= j < p.dim for c in cons for (i, j), _ in c.terms)
    return AuditReport(
        counts={f: counts.get(f, 0) for f in FAMILIES}, total=len(cons),
        dropped_trivial=dict(getattr(p, "dropped_trivial", {})), duplicates=dup,
        normalization_count=norm, objective_ok=obj_ok, keys_in_range=in_range)


# --------------------------------------------------------------------------
# Normal form in the free product of the measurement algebras


ZERO = None  # marker for the zero word


class Algebra:
    """Words modulo idempotence, orthogonality and completeness of each measurement.

    A reduced word uses only non-last outcomes and never has two adjacent
    letters from the same measurement. Every word expands uniquely into a
    combination of reduced words.
    """

    def __init__(self, alph: Alphabet):
        self.alph = alph
        self._group = [alph.group(c) for c in alph.letters()]
        self._last = [alph.is_last(c) for c in alph.letters()]
        self._siblings = [[c2 for c2 in alph.group_letters(self._group[c]) if not self._last[c2]]
                          for c in alph.letters()]
        self._nf_cache: dict = {}

    def group(self, c: int) -> int:
        return self._group[c]

    def push(self, word: Word, c: int):
        """Reduced word times a non-last letter: a word or ZERO."""
        if word and self._group[word[-1]] == self._group[c]:
            return word if word[-1] == c else ZERO
        return word + (c,)

    def concat(self, u: Word, v: Word):
        """Product of two reduced words."""
        if not u or not v:
            return u + v
        if self._group[u[-1]] != self._group[v[0]]:
            return u + v
        if u[-1] == v[0]:
            return u + v[1:]
        return ZERO

    def reduce_sequence(self, letters: Iterable[int]):
        """Product of non-last letters in order."""
        out: Word = ()
        for c in letters:
            out = self.push(out, c)
            if out is ZERO:
                return ZERO
        return out

    def nf(self, word: Word) -> dict:
        """Expansion of an arbitrary word into reduced words."""
        hit = self._nf_cache.get(word)
        if hit is not None:
            return hit
        poly = {(): 1}
        for c in word:
            nxt: dict = {}
            if self._last[c]:
                for r, coef in poly.items():
                    nxt[r] = nxt.get(r, 0) + coef
                    for c2 in self._siblings[c]:
                        w = self.push(r, c2)
                        if w is not ZERO:
                            nxt[w] = nxt.get(w, 0) - coef
            else:
                for r, coef in poly.items():
                    w = self.push(r, c)
                    if w is not ZERO:
                        nxt[w] = nxt.get(w, 0) + coef
            poly = {r: v for r, v in nxt.items() if v != 0}
        self._nf_cache[word] = poly
        return poly

    def reduced_words(self, max_len: int, letters: Iterable[int] | None = None) -> list:
        """Reduced words of length at most ``max_len`` over ``letters``."""
        pool = [c for c in (self.alph.letters() if letters is None else letters)
                if not self._last[c]]
        out = [()]
        frontier = [()]
        for _ in range(max_len):
            new = []
            for w in frontier:
                for c in pool:
                    if not w or self._group[w[-1]] != self._group[c]:
                        new.append(w + (c,))
            out.extend(new)
            frontier = new
        return out

    def canonical(self, word: Word):
        """First-prover letters then second-prover letters, reduced."""
        ps = [c for c in word if self.alph.is_p(c)]
        qs = [c for c in word if not self.alph.is_p(c)]
        p = self.reduce_sequence(ps)
        if p is ZERO:
            return ZERO
        q = self.reduce_sequence(qs)
        if q is ZERO:
            return ZERO
        return p + q


class _UnionFind:
    def __init__(self):
        self.parent: dict = {}

    def find(self, a):
        parent = self.parent
        root = a
        while parent.get(root, root) != root:
            root = parent[root]
        while parent.get(a, a) != root:
            parent[a], a = root, parent[a]
        return root

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            # keep the special markers as roots
            if rb in ("ZERO", ()):
                ra, rb = rb, ra
            self.parent[rb] = ra


ONE_CLASS = -2
ZERO_CLASS = -1


class InfeasibleError(ValueError):
    pass


@dataclass(eq=False)
class ReducedProblem:
    """Linear matrix inequality ``F0 + sum_c z_c F_c >= 0`` maximizing ``b.z + const``.

    ``basis`` lists the canonical words indexing rows/columns of ``H``;
    ``entry_class[i, j]`` is the free-variable index of ``H[i, j]`` or one
    of ``ONE_CLASS`` / ``ZERO_CLASS``.
    """

    game: Game
    level: int
    algebra: Algebra
    basis: list
    entry_class: np.ndarray
    n_vars: int
    b: np.ndarray
    const: float
    class_words: list = field(repr=False)

    @property
    def dim(self) -> int:
        return len(self.basis)

    @cached_property
    def basis_pos(self) -> dict:
        return {w: i for i, w in enumerate(self.basis)}

    @cached_property
    def f0(self) -> np.ndarray:
        return (self.entry_class == ONE_CLASS).astype(float)

    @cached_property
    def fs(self) -> np.ndarray:
        r, m = self.dim, self.n_vars
        out = np.zeros((m, r, r))
        ii, jj = np.nonzero(self.entry_class >= 0)
        out[self.entry_class[ii, jj], ii, jj] = 1.0
        return out

    def matrix(self, z: np.ndarray) -> np.ndarray:
        """``H(z)``."""
        h = self.f0.copy()
        mask = self.entry_class >= 0
        h[mask] = np.asarray(z)[self.entry_class[mask]]
        return h

    def project(self, h: np.ndarray) -> np.ndarray:
        """Average of ``h`` over each variable class (least-squares ``z``)."""
        mask = self.entry_class >= 0
        cls = self.entry_class[mask]
        sums = np.bincount(cls, weights=h[mask].real, minlength=self.n_vars)
        cnt = np.bincount(cls, minlength=self.n_vars)
        return sums / np.maximum(cnt, 1)

    def objective(self, z: np.ndarray) -> float:
        return float(self.b @ z + self.const)

    def word_map(self, words: Iterable[Word]) -> np.ndarray:
        """Row ``k`` expresses ``v_{words[k]}`` in the canonical basis."""
        words = list(words)
        pos = self.basis_pos
        z = np.zeros((len(words), self.dim))
        for k, w in enumerate(words):
            for r, coef in self.algebra.nf(w).items():
                c = self.algebra.canonical(r)
                if c is not ZERO:
                    z[k, pos[c]] += coef
        return z


def reduce_problem(g: Game, n: int) -> ReducedProblem:
    """Compile level ``n`` into a linear matrix inequality on canonical words.

    Moment variables are reduced words modulo: reversal (real moments);
    swapping adjacent first/second-prover letters inside the commutation
    range; and agreement of every inner product with the one between the
    canonical representatives of the two vectors.
    """
    problems = validate_game(g)
    if problems:
        raise ValueError("invalid game: " + "; ".join(problems))
    if n < 1:
        raise ValueError(f"level must be >= 1 (got {n})")
    alph = Alphabet.of(g)
    alg = Algebra(alph)
    p_letters = [c for c in alph.letters() if alph.is_p(c)]
    q_letters = [c for c in alph.letters() if not alph.is_p(c)]
    p_words = alg.reduced_words(n, p_letters)
    q_words = alg.reduced_words(n, q_letters)
    basis = [p + q for p in p_words for q in q_words if len(p) + len(q) <= n]
    basis.sort(key=lambda w: (len(w), w))

    uf = _UnionFind()
    seen: set = set()

    def link(u, v):
        u = "ZERO" if u is ZERO else u
        v = "ZERO" if v is ZERO else v
        seen.add(u)
        seen.add(v)
        uf.union(u, v)

    # commutation inside the range
    shorter = alg.reduced_words(n - 1)
    pl = [c for c in p_letters if not alph.is_last(c)]
    ql = [c for c in q_letters if not alph.is_last(c)]
    for s in shorter:
        for p in pl:
            sp = alg.push(s, p)
            for q in ql:
                sq = alg.push(s, q)
                spq = ZERO if sp is ZERO else alg.push(sp, q)
                sqp = ZERO if sq is ZERO else alg.push(sq, p)
                for t in shorter:
                    left = ZERO if spq is ZERO else alg.concat(spq, t)
                    right = ZERO if sqp is ZERO else alg.concat(sqp, t)
                    link(left, right)
    # inner products agree with those of canonical representatives
    vec_words = alg.reduced_words(n)
    canon = {u: alg.canonical(u) for u in vec_words}
    for u in vec_words:
        ru = u[::-1]
        cu = canon[u]
        for v in vec_words:
            cv = canon[v]
            if cu is ZERO or cv is ZERO:
                link(alg.concat(ru, v), ZERO)
            else:
                link(alg.concat(ru, v), alg.concat(cu[::-1], cv))

    r = len(basis)
    entry_words = [[alg.concat(basis[i][::-1], basis[j]) for j in range(r)] for i in range(r)]
    obj_terms = []
    for x, y, a, bb in itertools.product(range(g.qx), range(g.qy), range(g.ax), range(g.ay)):
        w = g.mu[x, y] * g.predicate[x, y, a, bb]
        if w:
            for word, coef in alg.nf((alph.p(x, a), alph.q(y, bb))).items():
                obj_terms.append((word, w * coef))
    for row in entry_words:
        seen.update(w for w in row if w is not ZERO)
    seen.update(w for w, _ in obj_terms)
    # reversal (real moments)
    for w in list(seen):
        if w != "ZERO":
            uf.union(w, w[::-1])
    if uf.find(()) == uf.find("ZERO"):
        raise InfeasibleError("normalization forced to zero")

    ids: dict = {}
    class_words: list = []
    entry = np.empty((r, r), dtype=int)

    def class_of(w):
        if w is ZERO:
            return ZERO_CLASS
        root = uf.find(w)
        if root == "ZERO":
            return ZERO_CLASS
        if root == ():
            return ONE_CLASS
        if root not in ids:
            ids[root] = len(ids)
            class_words.append(w)
        return ids[root]

    for i in range(r):
        for j in range(i, r):
            entry[i, j] = entry[j, i] = class_of(entry_words[i][j])

    b = np.zeros(len(ids))
    const = 0.0
    for word, wt in obj_terms:
        k = class_of(word)
        if k == ONE_CLASS:
            const += wt
        elif k >= 0:
            if k >= len(b):
                raise RuntimeError("objective word outside the moment matrix")
            b[k] += wt
    return ReducedProblem(g, n, alg, basis, entry, len(ids), b, float(const), class_words)


def reduced_gram(rp: ReducedProblem, h: np.ndarray, index: WordIndex) -> np.ndarray:
    """Full word Gram matrix ``Z H Z^T`` of a reduced solution."""
    z = rp.word_map(index.words)
    return z @ h @ z.T


def moment_matrix(rp: ReducedProblem, povm_a: np.ndarray, povm_b: np.ndarray,
                  psi: np.ndarray) -> np.ndarray:
    """Real part of the canonical-word Gram matrix of ``(A, B, psi)``.

    ``psi`` is a unit vector on the space the operators act on (purify a
    mixed state first). The real part is again a valid point whenever the
    complex one is.
    """
    vecs = canonical_vectors(rp, povm_a, povm_b, psi)
    return (vecs.conj() @ vecs.T).real


def canonical_vectors(rp: ReducedProblem, povm_a, povm_b, psi) -> np.ndarray:
    """Rows are ``w psi`` for the canonical words ``w``."""
    alph = rp.algebra.alph
    ops = []
    for c in alph.letters():
        side, q, a = alph.decode(c)
        ops.append(povm_a[q, a] if side == "P" else povm_b[q, a])
    out = np.zeros((rp.dim, psi.shape[0]), dtype=np.result_type(povm_a, povm_b, psi))
    for k, w in enumerate(rp.basis):
        v = psi
        for c in reversed(w):
            v = ops[c] @ v
        out[k] = v
    return out


def purify(rho: np.ndarray) -> tuple[np.ndarray, int]:
    """Unit vector on ``C^d (x) C^k`` whose reduced state is ``rho``."""
    w, u = np.linalg.eigh(rho)
    keep = w > 1e-14 * max(w[-1], 1e-300)
    w, u = w[keep], u[:, keep]
    k = len(w)
    psi = np.zeros((rho.shape[0], k), dtype=u.dtype)
    for i in range(k):
        psi[:, i] = np.sqrt(w[i]) * u[:, i]
    return psi.reshape(-1), k


def strategy_moment_matrix(rp: ReducedProblem, s) -> np.ndarray:
    """Canonical-word moment matrix of a strategy (state purified first)."""
    psi, k = purify(s.rho)
    eye = np.eye(k)
    pa = np.einsum("xaij,kl->xaikjl", s.povm_a, eye).reshape(*s.povm_a.shape[:2], s.dim * k, s.dim * k)
    pb = np.einsum("xaij,kl->xaikjl", s.povm_b, eye).reshape(*s.povm_b.shape[:2], s.dim * k, s.dim * k)
    return moment_matrix(rp, pa, pb, psi)
