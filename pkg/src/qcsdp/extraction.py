"""Assignment extraction from a strategy for the triple/pair consistency game.

The second prover, asked the pair ``(i, j)``, answers two bits. Averaging
over the dummy index ``j`` gives a binary POVM per variable ::

    C_i^c = (1/n) sum_j sum_c' B_{(i,j)}^{2c + c'}

and measuring these in ascending variable order with square-root updates
defines a distribution over assignments ::

    Prob(c) = Tr( sqrt(C_n^c_n) ... sqrt(C_1^c_1) rho sqrt(C_1^c_1) ... sqrt(C_n^c_n) )
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .games import CspInstance, Game, Strategy, commutator_report, marginal_deviation, \
    oracularize, strategy_value
from .io import table_csv
from .linalg import psd_sqrt

EXACT_MAX_VARS = 12
MAX_SAMPLES = 10**7
BRANCH_TOL = 1e-8
DRIFT_TOL = 1e-6
EXTRACTION_COLUMNS = ("nvars", "gameValue", "eps", "deltaMax", "samples", "satProb",
                      "satProbExact")


class SamplingError(RuntimeError):
    """Probability bookkeeping broke down during sequential measurement."""


@dataclass(eq=False)
class MarginalPovm:
    """Binary POVMs ``elements[i, c]`` on the second prover's space."""

    elements: np.ndarray  # (nvars, 2, d, d)

    def __post_init__(self):
        e = np.asarray(self.elements)
        if e.ndim != 4 or e.shape[1] != 2 or e.shape[2] != e.shape[3]:
            raise ValueError(f"expected shape (nvars, 2, d, d), got {e.shape}")
        d = e.shape[2]
        for i in range(e.shape[0]):
            if np.max(np.abs(e[i, 0] + e[i, 1] - np.eye(d))) > 1e-9:
                raise ValueError(f"marginal POVM of variable {i} is not complete")
            for c in range(2):
                if np.linalg.eigvalsh((e[i, c] + e[i, c].conj().T) / 2)[0] < -1e-9:
                    raise ValueError(f"element C_{i}^{c} is not PSD")
        self.elements = e

    @property
    def nvars(self) -> int:
        return self.elements.shape[0]

    @property
    def dim(self) -> int:
        return self.elements.shape[2]


def _check_pair_questions(g: Game, nvars: int) -> None:
    if g.qy != nvars * nvars or g.ay != 4:
        raise ValueError(f"second prover has {g.qy} questions and {g.ay} answers; "
                         f"expected {nvars * nvars} pair questions with 4 answers")
    if g.y_labels is not None:
        expected = tuple((i, j) for i in range(nvars) for j in range(nvars))
        if tuple(tuple(t) for t in g.y_labels) != expected:
            raise ValueError("second prover questions are not the ordered pairs over the variables")


def marginals(g: Game, s: Strategy, nvars: int) -> MarginalPovm:
    """Per-variable binary POVMs averaged over the dummy index."""
    _check_pair_questions(g, nvars)
    if s.povm_b.shape[:2] != (g.qy, g.ay):
        raise ValueError(f"strategy has second-prover shape {s.povm_b.shape[:2]}, "
                         f"game expects {(g.qy, g.ay)}")
    b = s.povm_b.reshape(nvars, nvars, 2, 2, s.dim, s.dim)  # i, j, c, c'
    c = b.sum(axis=3).mean(axis=1)
    return MarginalPovm(c)


class AssignmentSampler:
    """Sequential two-outcome measurement of ``C_1, ..., C_n`` on ``rho``."""

    def __init__(self, marg: MarginalPovm, rho: np.ndarray, seed: int = 0):
        rho = np.asarray(rho)
        if rho.shape != (marg.dim, marg.dim):
            raise ValueError(f"state has shape {rho.shape}, POVMs act on dimension {marg.dim}")
        self.marginals = marg
        self.order = tuple(range(marg.nvars))
        self.roots = np.stack([[psd_sqrt(marg.elements[i, c]) for c in (0, 1)]
                               for i in self.order])
        self.rho = rho
        self.seed = seed
        self.rng = np.random.Generator(np.random.Philox(seed))

    @property
    def nvars(self) -> int:
        return len(self.order)

    def branch(self, sigma: np.ndarray, i: int) -> tuple[np.ndarray, np.ndarray]:
        """Unnormalized post-measurement states and probabilities for variable ``i``."""
        post = np.stack([r @ sigma @ r.conj().T for r in self.roots[i]])
        probs = np.real(np.trace(post, axis1=1, axis2=2))
        return post, probs

    def sample(self) -> tuple[int, ...]:
        sigma = self.rho
        out = []
        for i in self.order:
            post, probs = self.branch(sigma, i)
            total = probs.sum()
            if abs(total - 1.0) > DRIFT_TOL or probs.min() < -DRIFT_TOL:
                raise SamplingError(f"branch probabilities {probs.tolist()} at variable {i} "
                                    f"sum to {total:.3e}")
            probs = np.clip(probs, 0.0, None) / total
            c = 0 if self.rng.random() < probs[0] else 1
            out.append(c)
            sigma = post[c] / probs[c] / total
        return tuple(out)


def sample_assignment(sampler: AssignmentSampler) -> tuple[int, ...]:
    """One assignment drawn from the sequential-measurement distribution."""
    return sampler.sample()


def exact_distribution(sampler: AssignmentSampler) -> dict:
    """Probability of every assignment by walking the full branch tree.

    Only for ``nvars <= 12``. Probabilities are unnormalized traces, so
    they sum to ``Tr(rho)`` up to round-off.
    """
    if sampler.nvars > EXACT_MAX_VARS:
        raise ValueError(f"exact enumeration limited to {EXACT_MAX_VARS} variables")
    out = {}

    def walk(sigma, prefix):
        i = len(prefix)
        if i == sampler.nvars:
            out[prefix] = float(np.real(np.trace(sigma)))
            return
        post, probs = sampler.branch(sigma, i)
        for c in (0, 1):
            walk(post[c], prefix + (c,))

    walk(sampler.rho, ())
    return out


@dataclass
class SoundnessReport:
    nvars: int
    gameValue: float
    eps: float
    deltaMax: float
    samples: int
    satProb: float
    satProbExact: float | None
    budget: float
    marginalDeviation: float
    frequencies: dict = field(default_factory=dict, repr=False)

    @property
    def bound(self) -> float:
        return 1.0 - self.budget

    @property
    def within_budget(self) -> bool:
        return self.satProb >= self.bound

    def cells(self) -> list:
        return [self.nvars, self.gameValue, self.eps, self.deltaMax, self.samples,
                self.satProb, self.satProbExact]


def _sat_fraction(csp: CspInstance, z) -> float:
    total = math.fsum(c.weight for c in csp.clauses)
    hit = math.fsum(c.weight for c in csp.clauses if tuple(z[i] for i in c.vars) in c.accept)
    return hit / total


def soundness_check(csp: CspInstance, s: Strategy, samples: int = 10_000, seed: int = 0,
                    budget: float = 0.1, game: Game | None = None) -> SoundnessReport:
    """Play ``s`` on the consistency game of ``csp`` and score extracted assignments.

    ``satProb`` is the Monte-Carlo mean of the satisfied clause weight;
    ``satProbExact`` is the same expectation under the exact branch
    distribution when ``nvars`` is small enough to enumerate. ``budget``
    only sets the reported threshold ``1 - budget``.
    """
    if samples < 1 or samples > MAX_SAMPLES:
        raise ValueError(f"samples must be in [1, {MAX_SAMPLES}]")
    g = game if game is not None else oracularize(csp)
    if s.povm_a.shape[:2] != (g.qx, g.ax) or s.povm_b.shape[:2] != (g.qy, g.ay):
        raise ValueError("strategy shape does not match the consistency game of the instance")
    value = strategy_value(g, s)
    delta = commutator_report(s).delta_max
    sampler = AssignmentSampler(marginals(g, s, csp.nvars), s.rho, seed)
    freq: dict = {}
    acc = 0.0
    for _ in range(samples):
        z = sampler.sample()
        freq[z] = freq.get(z, 0) + 1
    acc = math.fsum(_sat_fraction(csp, z) * k for z, k in freq.items())
    exact = None
    if csp.nvars <= EXACT_MAX_VARS:
        dist = exact_distribution(sampler)
        exact = math.fsum(p * _sat_fraction(csp, z) for z, p in dist.items())
    return SoundnessReport(nvars=csp.nvars, gameValue=value, eps=1.0 - value, deltaMax=delta,
                           samples=samples, satProb=acc / samples, satProbExact=exact,
                           budget=budget, marginalDeviation=marginal_deviation(csp),
                           frequencies=freq)


def extraction_csv(reports) -> str:
    return table_csv(EXTRACTION_COLUMNS, [r.cells() for r in reports])


def chi_square_uniform(freq: dict, nvars: int, samples: int) -> tuple[float, int]:
    """Pearson statistic of ``freq`` against the uniform law on ``{0,1}^nvars``."""
    k = 2**nvars
    expected = samples / k
    stat = sum((freq.get(z, 0) - expected) ** 2 / expected
               for z in itertools.product((0, 1), repeat=nvars))
    return float(stat), k - 1
