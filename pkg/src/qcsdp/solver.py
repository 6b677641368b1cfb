"""Interior-point solver for the moment problem and Gram-vector extraction."""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np
import scipy.linalg as sla

from .hierarchy import (MomentProblem, ReducedProblem, WordIndex, build_word_index,
                        reduce_problem, strategy_moment_matrix)
from .linalg import Factorization, gram_vectors

STEP_FRACTION = 0.98
DENSE_SCHUR_LIMIT = 2 * 10**7
SIGMA_FLOOR = 0.5


class SolverError(RuntimeError):
    """Numerical breakdown inside the interior-point iteration."""


@dataclass
class IpmResult:
    z: np.ndarray
    x: np.ndarray
    primal_obj: float
    dual_obj: float
    gap: float
    primal_infeas: float
    dual_infeas: float
    iterations: int
    status: str
    history: list = field(default_factory=list, repr=False)


def _max_step(m: np.ndarray, dm: np.ndarray) -> float:
    """Largest ``alpha <= 1`` keeping ``m + alpha dm`` positive definite."""
    try:
        lo = np.linalg.cholesky(m)
    except np.linalg.LinAlgError:
        return 0.0
    t = sla.solve_triangular(lo, dm, lower=True)
    t = sla.solve_triangular(lo, t.T, lower=True).T
    lam = np.linalg.eigvalsh((t + t.T) / 2)[0]
    if lam >= 0:
        return 1.0
    return min(1.0, -1.0 / lam)


def _schur(x, sinv, fs, fmat, entries):
    """``M_cd = Tr(F_c X F_d S^-1)``."""
    m, r = fs.shape[0], fs.shape[1]
    if entries is None:
        xfs = np.matmul(np.matmul(x[None], fs), sinv[None])  # X F_d S^-1
        return fmat @ xfs.reshape(m, r * r).T
    out = np.empty((m, m))
    for d, (ll, mm) in enumerate(entries):
        prod = x[:, ll] @ sinv[mm, :]
        out[:, d] = fmat @ prod.reshape(-1)
    return out


def lmi_ipm(f0: np.ndarray, fs: np.ndarray, b: np.ndarray, tol: float = 1e-8,
            max_iter: int = 100) -> IpmResult:
    """Maximize ``b.z`` subject to ``f0 + sum_c z_c fs[c] >= 0``.

    Dense primal-dual path following with the HKM direction and Mehrotra
    predictor-corrector, started from ``X = S = I`` (infeasible start).
    The LMI is the dual of ``min <f0, X>`` s.t. ``<fs[c], X> = -b_c``.
    """
    r = f0.shape[0]
    m = len(b)
    fmat = fs.reshape(m, r * r)
    entries = None
    if m * r * r > DENSE_SCHUR_LIMIT:
        entries = [np.nonzero(f) for f in fs]
    def a_op(x):  # <A_c, X> with A_c = -F_c
        return -(fmat @ x.reshape(-1))

    def a_adj(y):
        return -(y @ fmat).reshape(r, r)

    x = np.eye(r)
    s = np.eye(r)
    z = np.zeros(m)
    bnorm = 1.0 + np.linalg.norm(b)
    cnorm = 1.0 + np.linalg.norm(f0)
    history = []
    status = "max-iter"
    for it in range(1, max_iter + 1):
        rp = b - a_op(x)
        rd = f0 - a_adj(z) - s
        mu = np.sum(x * s) / r
        pobj = np.sum(f0 * x)
        dobj = b @ z
        gap = abs(pobj - dobj) / (1.0 + abs(pobj) + abs(dobj))
        pinf = np.linalg.norm(rp) / bnorm
        dinf = np.linalg.norm(rd) / cnorm
        history.append((it, pobj, dobj, gap, pinf, dinf))
        if gap <= tol and pinf <= tol and dinf <= tol:
            status = "solved"
            break
        if np.linalg.norm(x) > 1e12 or np.linalg.norm(z) > 1e12:
            status = "infeasible-detected"
            break
        try:
            sinv = np.linalg.inv(s)
        except np.linalg.LinAlgError as exc:
            raise SolverError(f"slack matrix singular at iteration {it}") from exc
        sinv = (sinv + sinv.T) / 2
        schur = _schur(x, sinv, fs, fmat, entries)
        schur = (schur + schur.T) / 2
        try:
            fac = sla.cho_factor(schur)
            msolve = lambda v, fac=fac: sla.cho_solve(fac, v)
        except np.linalg.LinAlgError:
            # near the optimum M can lose definiteness in floating point
            lu = sla.lu_factor(schur)
            if not np.all(np.isfinite(lu[0])) or np.min(np.abs(np.diag(lu[0]))) == 0.0:
                raise SolverError(f"Schur complement singular at iteration {it}")
            msolve = lambda v, lu=lu: sla.lu_solve(lu, v)
        rprim = b - a_op(x)

        def direction(sigma, corr):
            rhs = b - sigma * mu * a_op(sinv) + a_op(x @ rd @ sinv)
            if corr is not None:
                rhs = rhs - a_op(corr)
            dz = msolve(rhs)

            def build(dz):
                ds = rd - a_adj(dz)
                dx = sigma * mu * sinv - x - x @ ds @ sinv
                if corr is not None:
                    dx = dx + corr
                return (dx + dx.T) / 2, ds

            # refinement against the operator itself: d A(dX) / d dz = M
            for _ in range(2):
                dx, ds = build(dz)
                dz = dz + msolve(rprim - a_op(dx))
            dx, ds = build(dz)
            return dz, dx, ds

        dz, dx, ds = direction(0.0, None)
        ap = _max_step(x, dx)
        ad = _max_step(s, ds)
        mu_aff = np.sum((x + ap * dx) * (s + ad * ds)) / r
        sigma = min(1.0, (max(mu_aff, 0.0) / mu) ** 3)
        if pinf > 10.0 * gap:
            # keep the barrier from collapsing before the equalities are met
            sigma = max(sigma, SIGMA_FLOOR)
        corr = -dx @ ds @ sinv
        dz, dx, ds = direction(sigma, corr)
        ap = min(1.0, STEP_FRACTION * _max_step(x, dx))
        ad = min(1.0, STEP_FRACTION * _max_step(s, ds))
        if ap == 0.0 and ad == 0.0:
            raise SolverError(f"zero step length at iteration {it}")
        x = x + ap * dx
        x = (x + x.T) / 2
        z = z + ad * dz
        s = s + ad * ds
        s = (s + s.T) / 2
    it_done = history[-1][0]
    _, pobj, dobj, gap, pinf, dinf = history[-1]
    return IpmResult(z=z, x=x, primal_obj=float(pobj), dual_obj=float(dobj), gap=float(gap),
                     primal_infeas=float(pinf), dual_infeas=float(dinf), iterations=it_done,
                     status=status, history=history)


# --------------------------------------------------------------------------


@dataclass(eq=False)
class SdpSolution:
    """Solved relaxation.

    ``h`` is the Gram matrix of the canonical words; :attr:`gamma` expands
    it to the full word Gram matrix (built on demand).
    """

    problem: MomentProblem
    reduced: ReducedProblem
    h: np.ndarray
    z: np.ndarray
    optimum: float
    gapEstimate: float
    iterations: int
    status: str
    primal_infeas: float = 0.0
    dual_infeas: float = 0.0
    tol: float = 1e-8
    lower_bound: float | None = None
    seconds: float = 0.0

    @cached_property
    def word_map(self) -> np.ndarray:
        return self.reduced.word_map(self.problem.index.words)

    @cached_property
    def gamma(self) -> np.ndarray:
        zm = self.word_map
        g = zm @ self.h @ zm.T
        return (g + g.T) / 2

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.h)[0])

    def residuals(self) -> dict:
        """Literal constraint residuals per family (builds the full system)."""
        return self.problem.residuals(self.gamma)


Backend = Callable[[ReducedProblem, float], tuple]


def solve(p: MomentProblem, tol: float = 1e-8, max_iter: int = 100,
          backend: Backend | None = None) -> SdpSolution:
    """Solve the relaxation ``p``.

    The bundled interior-point method runs on the reduced formulation. A
    ``backend`` may be supplied instead: it receives the reduced problem and
    the tolerance and returns ``(z, status, gap, iterations)``.
    """
    if not 1e-10 <= tol <= 1e-4:
        raise ValueError(f"tolerance {tol} outside [1e-10, 1e-4]")
    if p.complex_mode:
        raise NotImplementedError("complex moment matrices are not supported by the solver")
    t0 = time.perf_counter()
    rp = reduce_problem(p.game, p.level)
    pinf = dinf = 0.0
    if rp.n_vars == 0:
        z = np.zeros(0)
        status, gap, iters = "solved", 0.0, 0
        if np.linalg.eigvalsh(rp.f0)[0] < -1e-9:
            status = "infeasible-detected"
    elif backend is not None:
        z, status, gap, iters = backend(rp, tol)
    else:
        res = lmi_ipm(rp.f0, rp.fs, rp.b, tol=tol, max_iter=max_iter)
        z, status, gap, iters = res.z, res.status, res.gap, res.iterations
        pinf, dinf = res.primal_infeas, res.dual_infeas
    h = rp.matrix(z)
    sol = SdpSolution(problem=p, reduced=rp, h=h, z=z, optimum=rp.objective(z),
                      gapEstimate=float(gap), iterations=int(iters), status=status,
                      primal_infeas=pinf, dual_infeas=dinf, tol=tol)
    # deterministic strategies give certified feasible points
    sol.lower_bound = classical_lower_bound(rp)
    sol.seconds = time.perf_counter() - t0
    return sol


def solve_game(g, n: int, tol: float = 1e-8, **kw) -> SdpSolution:
    from .hierarchy import build_level
    return solve(build_level(g, n), tol=tol, **kw)


def classical_lower_bound(rp: ReducedProblem) -> float | None:
    """Objective at the best deterministic strategy, when cheap to find."""
    from .games import classical_value
    try:
        return classical_value(rp.game)
    except ValueError:
        return None


def classical_point(rp: ReducedProblem, answers_a, answers_b) -> np.ndarray:
    """Moment matrix of a deterministic strategy; always feasible."""
    from .games import deterministic_strategy
    g = rp.game
    return strategy_moment_matrix(rp, deterministic_strategy(answers_a, answers_b, g.ax, g.ay))


# --------------------------------------------------------------------------


@dataclass(eq=False)
class GramSolution:
    """Vectors ``v_s`` (rows of ``vectors``) for all words of ``index``."""

    index: WordIndex
    vectors: np.ndarray
    factorization: Factorization
    word_map: np.ndarray = field(repr=False)

    @property
    def rank(self) -> int:
        return self.vectors.shape[1]

    def vec(self, word) -> np.ndarray:
        return self.vectors[self.index.position[tuple(word)]]

    def gram(self) -> np.ndarray:
        return self.vectors @ self.vectors.conj().T


def extract_gram(sol: SdpSolution, clamp: float = 1e-9) -> GramSolution:
    """Gram vectors of the word Gram matrix.

    The canonical-word matrix is factored as ``H = L L^T`` and each word
    vector is ``Z_s L``, so the linear relations between word vectors hold
    exactly rather than up to factorization error.
    """
    if sol.status != "solved":
        raise ValueError(f"solution status is {sol.status}")
    fac = gram_vectors(sol.h, clamp=clamp)
    zm = sol.word_map
    return GramSolution(index=sol.problem.index, vectors=zm @ fac.vectors,
                        factorization=fac, word_map=zm)


def gram_from_matrix(rp: ReducedProblem, h: np.ndarray, index: WordIndex | None = None,
                     clamp: float = 1e-9) -> GramSolution:
    """Gram solution of an arbitrary feasible canonical-word matrix ``h``."""
    if index is None:
        index = build_word_index(rp.game, rp.level)
    fac = gram_vectors(h, clamp=clamp)
    zm = rp.word_map(index.words)
    return GramSolution(index=index, vectors=zm @ fac.vectors, factorization=fac, word_map=zm)


def gram_from_strategy(index: WordIndex, s, rel_cutoff: float = 1e-12) -> GramSolution:
    """Gram solution realized by a strategy: ``v_w = W psi`` for every word.

    The state is purified first. Complex vectors are embedded as real ones
    (real and imaginary parts stacked), which realizes the real part of the
    Gram matrix, and then expressed in an orthonormal basis of their span so
    every linear relation between them is kept exactly.
    """
    from .hierarchy import purify

    alph = index.alphabet
    psi, k = purify(s.rho)
    eye = np.eye(k)
    ops = []
    for c in alph.letters():
        side, q, a = alph.decode(c)
        m = s.povm_a[q, a] if side == "P" else s.povm_b[q, a]
        ops.append(np.kron(m, eye))
    vecs = {(): psi}
    rows = []
    for w in index.words:
        if w not in vecs:
            vecs[w] = ops[w[0]] @ vecs[w[1:]]
        rows.append(vecs[w])
    v = np.array(rows)
    if np.iscomplexobj(v):
        v = np.concatenate([v.real, v.imag], axis=1)
    u, sv, vt = np.linalg.svd(v, full_matrices=False)
    keep = sv > rel_cutoff * sv[0]
    basis = vt[keep].T
    out = v @ basis
    fac = Factorization(vectors=out, rank=int(keep.sum()), clamp_threshold=0.0,
                        eigenvalues=sv[keep] ** 2)
    return GramSolution(index=index, vectors=out, factorization=fac, word_map=None)


# --------------------------------------------------------------------------
# Strictly feasible points


def _random_projective(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    cuts = np.sort(rng.integers(0, d + 1, size=n - 1))
    return np.stack([q[:, i] @ q[:, i].T for i in np.split(np.arange(d), cuts)])


def interior_point(rp: ReducedProblem, seed: int = 0, samples: int | None = None) -> np.ndarray:
    """Full-rank feasible canonical-word matrix.

    Average of the moment matrices of random real projective tensor-product
    strategies. Generic such mixtures have no kernel, which also certifies
    that the reduced problem keeps no hidden equalities.
    """
    g = rp.game
    rng = np.random.Generator(np.random.Philox(seed))
    da = max(6, 2 * g.ax)
    db = max(6, 2 * g.ay)
    k = samples or 3 * rp.dim
    h = np.zeros((rp.dim, rp.dim))
    from .hierarchy import moment_matrix
    for _ in range(k):
        pa = np.stack([[np.kron(e, np.eye(db)) for e in _random_projective(rng, g.ax, da)]
                       for _ in range(g.qx)])
        pb = np.stack([[np.kron(np.eye(da), e) for e in _random_projective(rng, g.ay, db)]
                       for _ in range(g.qy)])
        psi = rng.standard_normal(da * db)
        psi /= np.linalg.norm(psi)
        h += moment_matrix(rp, pa, pb, psi)
    h /= k
    return analytic_center(rp, rp.project(h))


def analytic_center(rp: ReducedProblem, z0: np.ndarray, max_iter: int = 60) -> np.ndarray:
    """Maximizer of ``log det H(z)`` by damped Newton from a strictly feasible ``z0``."""
    fs = rp.fs
    m, r = fs.shape[0], fs.shape[1]
    fmat = fs.reshape(m, r * r)
    entries = [np.nonzero(f) for f in fs] if m * r * r > DENSE_SCHUR_LIMIT else None
    z = np.array(z0, dtype=float)
    for _ in range(max_iter):
        h = rp.matrix(z)
        try:
            hinv = np.linalg.inv(np.linalg.cholesky(h))
        except np.linalg.LinAlgError as exc:
            raise SolverError("starting point is not strictly feasible") from exc
        hinv = hinv.T @ hinv
        grad = -(fmat @ hinv.reshape(-1))
        hess = _schur(hinv, hinv, fs, fmat, entries)
        hess = (hess + hess.T) / 2
        step = -np.linalg.solve(hess, grad)
        dec = float(-grad @ step)
        if dec < 1e-12:
            break
        z = z + step / (1.0 + np.sqrt(dec))
    return rp.matrix(z)


def regularize(sol: SdpSolution, eta: float = 1e-6, seed: int = 0) -> SdpSolution:
    """Feasible point ``(1 - eta) H + eta H_c`` with ``H_c`` strictly feasible.

    The objective moves by at most ``eta`` times the value spread, while
    every eigenvalue becomes at least about ``eta * lambda_min(H_c)``; this
    gives the Gram vectors a clean numerical rank.
    """
    hc = interior_point(sol.reduced, seed=seed)
    zc = sol.reduced.project(hc)
    z = (1 - eta) * sol.z + eta * zc
    rp = sol.reduced
    out = SdpSolution(problem=sol.problem, reduced=rp, h=rp.matrix(z), z=z,
                      optimum=rp.objective(z), gapEstimate=sol.gapEstimate,
                      iterations=sol.iterations, status=sol.status,
                      primal_infeas=sol.primal_infeas, dual_infeas=sol.dual_infeas,
                      tol=sol.tol, lower_bound=sol.lower_bound, seconds=sol.seconds)
    out.regularization = eta
    return out

