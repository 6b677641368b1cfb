"""Randomized verification suites and the clock/shift commutator table.

Every suite draws from a counter-based generator seeded by a single
integer, so results are reproducible across platforms.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .games import (Strategy, commutator_report, dilate_to_projective, random_ac_strategy,
                    random_game, strategy_value)
from .linalg import check_com_power_bound, check_sq_bound, commutator, operator_norm, \
    psd_power, voiculescu_pair

COM_POWER_EXPONENTS = (0.125, 0.25, 0.5)


def philox(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed))


@dataclass
class SuiteResult:
    name: str
    trials: int
    failures: int
    worst: float  # largest lhs / rhs ratio seen
    details: list = field(default_factory=list, repr=False)

    @property
    def passed(self) -> bool:
        return self.failures == 0 and self.trials > 0


def voiculescu_table(dims) -> list[tuple[int, float, float]]:
    """Rows ``(d, ||[U1, U2]||, 2 sin(pi/d))``."""
    rows = []
    for d in dims:
        u1, u2 = voiculescu_pair(d)
        rows.append((d, operator_norm(commutator(u1, u2)), 2.0 * np.sin(np.pi / d)))
    return rows


def _random_psd(rng, d, rank=None):
    k = d if rank is None else rank
    m = rng.standard_normal((d, k)) + 1j * rng.standard_normal((d, k))
    return m @ m.conj().T


def com_power_suite(trials: int = 1000, seed: int = 0, max_dim: int = 16,
                    form: str = "stated") -> SuiteResult:
    """Commutator/power inequality on random PSD pairs.

    ``A`` is a full-rank Wishart matrix and ``B`` one of random rank, both
    unnormalized, with ``d`` uniform in ``[2, max_dim]`` and ``r`` cycling
    through 1/8, 1/4, 1/2. ``form="stated"`` checks
    ``||[A, B^r]|| <= 2 ||B||^(1-r) ||[A, B]||^r``; ``form="homogeneous"``
    checks ``||[A, B^r]|| <= ||A||^(1-r) ||[A, B]||^r``, the version that is
    invariant under rescaling ``A`` and ``B`` separately.
    """
    if form not in ("stated", "homogeneous"):
        raise ValueError(f"unknown form {form!r}")
    rng = philox(seed)
    fails, worst, details = 0, 0.0, []
    for k in range(trials):
        d = int(rng.integers(2, max_dim + 1))
        r = COM_POWER_EXPONENTS[k % len(COM_POWER_EXPONENTS)]
        a = _random_psd(rng, d)
        b = _random_psd(rng, d, int(rng.integers(1, d + 1)))
        if form == "stated":
            res = check_com_power_bound(a, b, r)
            lhs, rhs, ok = res.lhs, res.rhs, res.holds
        else:
            lhs = operator_norm(commutator(a, psd_power(b, r)))
            rhs = operator_norm(a) ** (1 - r) * operator_norm(commutator(a, b)) ** r
            ok = lhs <= rhs + 1e-9
        if rhs > 0:
            worst = max(worst, lhs / rhs)
        if not ok:
            fails += 1
            details.append((k, d, r, lhs, rhs))
    return SuiteResult(f"com-power-{form}", trials, fails, worst, details)


def _near_commuting_families(rng, d, m, theta):
    """Two ``m``-outcome POVMs that commute up to a rotation by ``theta``."""
    q, _ = np.linalg.qr(rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d)))
    # diagonal POVM in the basis q, then a rotated copy of a nearby one
    raw = rng.uniform(0.05, 1.0, (m, d))
    raw /= raw.sum(axis=0)
    fam_a = [(q * raw[i]) @ q.conj().T for i in range(m)]
    jitter = raw + rng.uniform(0, 0.05, (m, d))
    jitter /= jitter.sum(axis=0)
    h = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
    h = (h + h.conj().T) / 2
    w, u = np.linalg.eigh(h / np.linalg.norm(h, 2))
    rot = (u * np.exp(1j * theta * w)) @ u.conj().T
    fam_b = [rot @ ((q * jitter[i]) @ q.conj().T) @ rot.conj().T for i in range(m)]
    v = rng.standard_normal(d) + 1j * rng.standard_normal(d)
    rho = 0.7 * np.outer(v, v.conj()) / np.vdot(v, v).real + 0.3 * np.eye(d) / d
    return fam_a, fam_b, rho


def sq_bound_suite(families: int = 100, seed: int = 0, max_dim: int = 8) -> SuiteResult:
    """Square-root closeness bounds on structured near-commuting POVM pairs."""
    rng = philox(seed)
    fails, worst, details = 0, 0.0, []
    for k in range(families):
        d = int(rng.integers(2, max_dim + 1))
        m = int(rng.integers(2, 5))
        theta = 10 ** rng.uniform(-6, -1)
        fa, fb, rho = _near_commuting_families(rng, d, m, theta)
        rep = check_sq_bound(fa, fb, rho)
        worst = max(worst, rep.lhs_sq / rep.rhs_sq, rep.lhs_trace / rep.rhs_trace)
        if not rep.holds:
            fails += 1
            details.append((k, d, m, theta, rep))
    return SuiteResult("sq-bound", families, fails, worst, details)


@dataclass
class DilationCheck:
    delta: float
    dilated_delta: float
    projective_residual: float
    value_change: float
    bound: float

    @property
    def holds(self) -> bool:
        return (self.projective_residual <= 1e-9 and self.value_change <= 1e-9
                and self.dilated_delta <= self.bound + 1e-9)


def check_dilation(g, s: Strategy) -> DilationCheck:
    t = dilate_to_projective(s)
    delta = commutator_report(s).delta_max
    elems = list(t.povm_a.reshape(-1, t.dim, t.dim)) + list(t.povm_b.reshape(-1, t.dim, t.dim))
    proj = max(float(np.max(np.abs(e @ e - e))) for e in elems)
    dv = abs(strategy_value(g, s) - strategy_value(g, t))
    return DilationCheck(delta, commutator_report(t).delta_max, proj, dv,
                         g.ax * g.ay * delta)


def dilation_suite(count: int = 100, seed: int = 0, max_dim: int = 8) -> SuiteResult:
    """Dilate random delta-AC strategies (``d <= max_dim``) and check the guarantees."""
    rng = philox(seed)
    fails, worst, details = 0, 0.0, []
    for k in range(count):
        g = random_game(rng, qx=int(rng.integers(1, 3)), qy=int(rng.integers(1, 3)),
                        ax=int(rng.integers(2, 4)), ay=int(rng.integers(2, 4)))
        da = int(rng.integers(1, 3))
        db = int(rng.integers(2, max_dim // da + 1))
        s = random_ac_strategy(rng, g, da, db, noise=10 ** rng.uniform(-5, -1))
        chk = check_dilation(g, s)
        if chk.bound > 0:
            worst = max(worst, chk.dilated_delta / chk.bound)
        if not chk.holds:
            fails += 1
            details.append((k, chk))
    return SuiteResult("dilation", count, fails, worst, details)
