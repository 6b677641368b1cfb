"""Dense linear algebra kernels and commutator inequality checkers.

Matrices are plain ``numpy.ndarray`` objects (real or complex, 2-D).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SVD_MAX_DIM = 512

# Constant in front of delta**(1/8) * M in the square-root closeness bound.
SQ_BOUND_CONSTANT = 12.0
# Trace-norm version: ||.||_1 <= 2 sqrt(S) with S the left side above, hence
# 2 sqrt(2 eps + K d^(1/8) M) <= 2 sqrt(2 eps) + 2 sqrt(K) d^(1/16) M^(1/2).
TRACE_BOUND_CONSTANT = 2.0 * np.sqrt(SQ_BOUND_CONSTANT)


def _as_matrix(m) -> np.ndarray:
    m = np.asarray(m)
    if m.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix has non-finite entries")
    return m


def commutator(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a @ b - b @ a


def is_hermitian(m: np.ndarray, tol: float = 1e-10) -> bool:
    m = np.asarray(m)
    return m.shape[0] == m.shape[1] and np.max(np.abs(m - m.conj().T), initial=0.0) <= tol


def operator_norm(m, tol: float = 1e-12, max_iter: int = 10_000) -> float:
    """Largest singular value of ``m``.

    Uses a full SVD up to dimension 512 and power iteration on ``m^H m``
    above that.
    """
    m = _as_matrix(m)
    if m.size == 0:
        return 0.0
    if max(m.shape) <= SVD_MAX_DIM:
        return float(np.linalg.svd(m, compute_uv=False)[0])
    return _power_norm(m, tol, max_iter)


def _power_norm(m: np.ndarray, tol: float, max_iter: int) -> float:
    rng = np.random.default_rng(0)
    v = rng.standard_normal(m.shape[1]).astype(m.dtype)
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(max_iter):
        w = m.conj().T @ (m @ v)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        v = w / nw
        if abs(nw - est) <= tol * nw:
            est = nw
            break
        est = nw
    return float(np.sqrt(est))


def _hermitian_eig(m: np.ndarray, tol: float):
    m = _as_matrix(m)
    if m.shape[0] != m.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    if not is_hermitian(m, tol):
        raise ValueError("matrix is not Hermitian within tolerance")
    return np.linalg.eigh((m + m.conj().T) / 2)


def psd_power(m, r: float, herm_tol: float = 1e-10, neg_tol: float = 1e-9) -> np.ndarray:
    """Fractional power ``m**r`` of a Hermitian PSD matrix (``r >= 0``).

    Eigenvalues in ``[-neg_tol, 0)`` are clamped to zero. By convention
    ``m**0`` is the identity.
    """
    w, u = _hermitian_eig(m, herm_tol)
    if w.size and w[0] < -neg_tol:
        raise ValueError(f"matrix has eigenvalue {w[0]:.3e} below -{neg_tol:g}")
    if r == 0:
        return np.eye(m.shape[0], dtype=np.result_type(m, float))
    w = np.clip(w, 0.0, None)
    return (u * w**r) @ u.conj().T


def psd_sqrt(m) -> np.ndarray:
    """Hermitian PSD square root of a Hermitian PSD matrix."""
    return psd_power(m, 0.5)


@dataclass(frozen=True)
class Factorization:
    """Gram factorization: ``vectors @ vectors.conj().T`` reproduces the input.

    Row ``s`` of ``vectors`` is the vector attached to index ``s``.
    """

    vectors: np.ndarray
    rank: int
    clamp_threshold: float
    eigenvalues: np.ndarray = field(repr=False, default=None)

    def gram(self) -> np.ndarray:
        return self.vectors @ self.vectors.conj().T


def gram_vectors(gamma, clamp: float = 1e-9, psd_tol: float = 1e-8) -> Factorization:
    """Eigendecomposition-based Gram factorization of a PSD matrix.

    Eigenvalues below ``clamp * lambda_max`` are dropped; what remains gives
    one vector per row of ``gamma`` of length equal to the retained rank.
    """
    gamma = _as_matrix(gamma)
    w, u = _hermitian_eig(gamma, max(psd_tol, 1e-10))
    lmax = float(w[-1]) if w.size else 0.0
    scale = max(lmax, 1.0)
    if w.size and w[0] < -psd_tol * scale:
        raise ValueError(f"matrix is not PSD: min eigenvalue {w[0]:.3e}")
    threshold = clamp * lmax if lmax > 0 else 0.0
    keep = w > threshold
    vecs = u[:, keep] * np.sqrt(w[keep])
    # largest eigenvalue first
    vecs = vecs[:, ::-1]
    return Factorization(vectors=vecs, rank=int(keep.sum()), clamp_threshold=threshold,
                         eigenvalues=w)


def subspace_projector(vectors, dim: int | None = None, rel_cutoff: float = 1e-8) -> np.ndarray:
    """Orthogonal projector onto the span of ``vectors``.

    ``vectors`` is a sequence of 1-D arrays (or a 2-D array whose rows are the
    vectors). The rank is decided by singular values above
    ``rel_cutoff * sigma_max``. An empty collection gives the zero projector,
    in which case ``dim`` must be supplied.
    """
    vecs = np.asarray(vectors)
    if vecs.size == 0:
        if dim is None:
            raise ValueError("dimension required for an empty vector list")
        return np.zeros((dim, dim))
    if vecs.ndim == 1:
        vecs = vecs[None, :]
    n = vecs.shape[1]
    if dim is not None and dim != n:
        raise ValueError(f"vectors have length {n}, expected {dim}")
    u, s, _ = np.linalg.svd(vecs.T, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        return np.zeros((n, n), dtype=vecs.dtype)
    basis = u[:, s > rel_cutoff * s[0]]
    return basis @ basis.conj().T


@dataclass(frozen=True)
class ComPowerCheck:
    lhs: float
    rhs: float
    holds: bool


def check_com_power_bound(a, b, r: float, atol: float = 1e-9) -> ComPowerCheck:
    """Check ``||[A, B^r]|| <= 2 ||B||^(1-r) ||[A, B]||^r`` for PSD ``A, B``."""
    if not 0.0 <= r <= 1.0:
        raise ValueError(f"exponent r={r} outside [0, 1]")
    a = _as_matrix(a)
    b = _as_matrix(b)
    for name, m in (("A", a), ("B", b)):
        w, _ = _hermitian_eig(m, 1e-10)
        if w.size and w[0] < -1e-9:
            raise ValueError(f"{name} is not PSD")
    lhs = operator_norm(commutator(a, psd_power(b, r)))
    rhs = 2.0 * operator_norm(b) ** (1.0 - r) * operator_norm(commutator(a, b)) ** r
    return ComPowerCheck(lhs=lhs, rhs=rhs, holds=lhs <= rhs + atol)


@dataclass(frozen=True)
class SqBoundReport:
    eps: float
    delta: float
    m: int
    lhs_sq: float
    rhs_sq: float
    lhs_trace: float
    rhs_trace: float
    holds_sq: bool
    holds_trace: bool

    @property
    def holds(self) -> bool:
        return self.holds_sq and self.holds_trace


def trace_norm(m: np.ndarray) -> float:
    return float(np.linalg.svd(m, compute_uv=False).sum())


def check_sq_bound(as_, bs, rho, sq_constant: float = SQ_BOUND_CONSTANT,
                   trace_constant: float = TRACE_BOUND_CONSTANT,
                   atol: float = 1e-9) -> SqBoundReport:
    """Check the square-root closeness bounds for two delta-AC families.

    With ``eps = 1 - sum_i Tr(A_i sqrt(B_i) rho sqrt(B_i))`` and ``delta`` the
    largest ``||[A_i, B_j]||``::

        sum_i Tr((A_i^1/2 - B_i^1/2)^2 rho) <= 2 eps + sq_constant d^(1/8) M
        ||sum_i A_i^1/2 rho A_i^1/2 - B_i^1/2 rho B_i^1/2||_1
            <= 2 sqrt(2 eps) + trace_constant d^(1/16) M^(1/2)
    """
    as_ = [_as_matrix(a) for a in as_]
    bs = [_as_matrix(b) for b in bs]
    rho = _as_matrix(rho)
    if len(as_) != len(bs) or not as_:
        raise ValueError("families must be non-empty and of equal length")
    d = rho.shape[0]
    eye = np.eye(d)
    for name, fam in (("A", as_), ("B", bs)):
        w, _ = _hermitian_eig(eye - sum(fam), 1e-9)
        if w[0] < -1e-9:
            raise ValueError(f"sum of {name} family exceeds the identity")
    w, _ = _hermitian_eig(rho, 1e-10)
    if w[0] < -1e-9 or abs(np.trace(rho).real - 1.0) > 1e-9:
        raise ValueError("rho is not a density matrix")

    sa = [psd_sqrt(a) for a in as_]
    sb = [psd_sqrt(b) for b in bs]
    m = len(as_)
    eps = 1.0 - sum(np.trace(a @ s @ rho @ s).real for a, s in zip(as_, sb))
    delta = max(operator_norm(commutator(a, b)) for a in as_ for b in bs)
    lhs_sq = sum(np.trace((x - y) @ (x - y) @ rho).real for x, y in zip(sa, sb))
    rhs_sq = 2.0 * eps + sq_constant * delta ** 0.125 * m
    diff = sum(x @ rho @ x for x in sa) - sum(y @ rho @ y for y in sb)
    lhs_tr = trace_norm(diff)
    rhs_tr = 2.0 * np.sqrt(2.0 * max(eps, 0.0)) + trace_constant * delta ** (1 / 16) * np.sqrt(m)
    return SqBoundReport(eps=float(eps), delta=float(delta), m=m,
                         lhs_sq=float(lhs_sq), rhs_sq=float(rhs_sq),
                         lhs_trace=lhs_tr, rhs_trace=float(rhs_tr),
                         holds_sq=lhs_sq <= rhs_sq + atol,
                         holds_trace=lhs_tr <= rhs_tr + atol)


def voiculescu_pair(d: int) -> tuple[np.ndarray, np.ndarray]:
    """Cyclic shift and root-of-unity clock matrix of dimension ``d``."""
    if d < 2:
        raise ValueError("dimension must be at least 2")
    shift = np.roll(np.eye(d), 1, axis=0).astype(complex)
    clock = np.diag(np.exp(2j * np.pi * np.arange(d) / d))
    return shift, clock


def hermitian_quadratures(u) -> tuple[np.ndarray, np.ndarray]:
    """Split a unitary into the Hermitian parts ``(U+U^H)/2`` and ``-i(U-U^H)/2``."""
    u = _as_matrix(u)
    if u.shape[0] != u.shape[1]:
        raise ValueError("expected a square matrix")
    if np.max(np.abs(u @ u.conj().T - np.eye(u.shape[0]))) > 1e-10:
        raise ValueError("matrix is not unitary")
    ud = u.conj().T
    return (u + ud) / 2, -0.5j * (u - ud)
