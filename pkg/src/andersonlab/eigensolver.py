"""Symmetric eigensolver and inertia-based eigenvalue counting.

The native path reduces the matrix to tridiagonal form with Householder
reflections and then runs implicitly shifted QL sweeps on the tridiagonal
matrix. ``method="lapack"`` delegates to ``numpy.linalg`` and exists for
high-throughput Monte Carlo runs; both return the same types.
"""
from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np
from scipy import sparse
from scipy.sparse.linalg import norm as sparse_norm

from .lattice import HamiltonianMatrix, LatticeGeometry, Provenance

MAX_SWEEPS = 50
PIVOT_RTOL = 1e-12
SHIFT_RTOL = 1e-10
MAX_SHIFT_RETRIES = 8


class ConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class SpectrumSample:
    eigenvalues: np.ndarray
    geometry: LatticeGeometry | None = None
    provenance: Provenance = Provenance()

    @property
    def volume(self) -> int:
        return self.geometry.site_count if self.geometry is not None else len(self.eigenvalues)


@dataclass(frozen=True, eq=False)
class EigenPairs:
    spectrum: SpectrumSample
    eigenvectors: np.ndarray

    @property
    def eigenvalues(self) -> np.ndarray:
        return self.spectrum.eigenvalues


@numba.njit(cache=True, fastmath=True)
def _householder_lower(a, vs):
    """In-place Householder reduction working on the lower triangle of ``a``.

    Reflector ``k`` (scaled so ``v.v = 2``) is stored in ``vs[k, k+1:]``.
    """
    n = a.shape[0]
    p = np.empty(n)
    w = np.empty(n)
    for k in range(n - 2):
        alpha = 0.0
        for i in range(k + 1, n):
            alpha += a[i, k] * a[i, k]
        alpha = np.sqrt(alpha)
        if alpha == 0.0:
            continue
        if a[k + 1, k] > 0:
            alpha = -alpha
        for i in range(k + 1, n):
            vs[k, i] = a[i, k]
        vs[k, k + 1] -= alpha
        vnorm2 = 0.0
        for i in range(k + 1, n):
            vnorm2 += vs[k, i] * vs[k, i]
        if vnorm2 == 0.0:
            continue
        scale = np.sqrt(2.0 / vnorm2)
        for i in range(k + 1, n):
            vs[k, i] *= scale
        # p = A_sub v using the lower triangle only
        for i in range(k + 1, n):
            p[i] = 0.0
        for i in range(k + 1, n):
            vi = vs[k, i]
            acc = a[i, i] * vi
            for j in range(k + 1, i):
                acc += a[i, j] * vs[k, j]
                p[j] += a[i, j] * vi
            p[i] += acc
        kappa = 0.0
        for i in range(k + 1, n):
            kappa += vs[k, i] * p[i]
        kappa *= 0.5
        for i in range(k + 1, n):
            w[i] = p[i] - kappa * vs[k, i]
        for i in range(k + 1, n):
            vi = vs[k, i]
            wi = w[i]
            for j in range(k + 1, i + 1):
                a[i, j] -= vi * w[j] + wi * vs[k, j]
        a[k + 1, k] = alpha
        for i in range(k + 2, n):
            a[i, k] = 0.0


@numba.njit(cache=True, fastmath=True)
def _accumulate_q(vs):
    n = vs.shape[0]
    q = np.eye(n)
    u = np.empty(n)
    for k in range(n - 3, -1, -1):
        for j in range(k + 1, n):
            u[j] = 0.0
        for i in range(k + 1, n):
            vi = vs[k, i]
            if vi != 0.0:
                for j in range(k + 1, n):
                    u[j] += vi * q[i, j]
        for i in range(k + 1, n):
            vi = vs[k, i]
            if vi != 0.0:
                for j in range(k + 1, n):
                    q[i, j] -= vi * u[j]
    return q


def householder_tridiagonalize(a: np.ndarray, want_q: bool = False):
    """Reduce symmetric ``a`` to tridiagonal ``(diag, offdiag)``.

    Returns ``(d, e, q)`` with ``a = q @ T @ q.T``; ``q`` is ``None`` unless requested.
    ``e[i]`` couples ``d[i]`` and ``d[i+1]``. Only the lower triangle of ``a`` is read.
    """
    work = np.array(a, dtype=float, order="C", copy=True)
    n = work.shape[0]
    vs = np.zeros((n, n)) if n > 2 else np.zeros((max(n, 1), max(n, 1)))
    _householder_lower(work, vs)
    d = np.diag(work).copy()
    e = np.zeros(n)
    if n > 1:
        e[:-1] = np.diag(work, -1)
    q = _accumulate_q(vs) if want_q else None
    return d, e, q


@numba.njit(cache=True)
def _tridiagonal_ql(d, e, z, want_vectors):
    """Implicit-shift QL on a symmetric tridiagonal matrix, in place.

    Returns 0 on success, or ``l + 1`` if eigenvalue ``l`` hit the sweep cap.
    """
    n = d.shape[0]
    eps = np.finfo(np.float64).eps
    for l in range(n):
        sweeps = 0
        while True:
            m = l
            while m < n - 1:
                dd = abs(d[m]) + abs(d[m + 1])
                if abs(e[m]) <= eps * dd:
                    break
                m += 1
            if m == l:
                break
            sweeps += 1
            if sweeps > MAX_SWEEPS:
                return l + 1
            g = (d[l + 1] - d[l]) / (2.0 * e[l])
            r = np.hypot(g, 1.0)
            g = d[m] - d[l] + e[l] / (g + (r if g >= 0 else -r))
            s = 1.0
            c = 1.0
            p = 0.0
            underflow = False
            i = m - 1
            while i >= l:
                f = s * e[i]
                b = c * e[i]
                r = np.hypot(f, g)
                e[i + 1] = r
                if r == 0.0:
                    d[i + 1] -= p
                    e[m] = 0.0
                    underflow = True
                    break
                s = f / r
                c = g / r
                g = d[i + 1] - p
                r = (d[i] - g) * s + 2.0 * c * b
                p = s * r
                d[i + 1] = g + p
                g = c * r - b
                if want_vectors:
                    # z holds eigenvector columns as rows
                    for k in range(z.shape[1]):
                        f = z[i + 1, k]
                        z[i + 1, k] = s * z[i, k] + c * f
                        z[i, k] = c * z[i, k] - s * f
                i -= 1
            if underflow:
                continue
            d[l] -= p
            e[l] = g
            e[m] = 0.0
    return 0


def tridiagonal_eigh(d, e, z=None):
    """Eigenvalues (and rotated ``z`` columns if given) of the tridiagonal ``(d, e)``."""
    d = np.array(d, dtype=float, copy=True)
    e = np.array(e, dtype=float, copy=True)
    if e.shape[0] < d.shape[0]:
        e = np.concatenate([e, np.zeros(d.shape[0] - e.shape[0])])
    want = z is not None
    zt = np.ascontiguousarray(np.asarray(z, dtype=float).T) if want else np.zeros((0, 0))
    status = _tridiagonal_ql(d, e, zt, want)
    if status:
        raise ConvergenceError(f"eigenvalue {status - 1} did not converge in {MAX_SWEEPS} sweeps")
    order = np.argsort(d, kind="stable")
    return d[order], (np.ascontiguousarray(zt[order].T) if want else None)


def _as_matrix(h) -> tuple[np.ndarray, LatticeGeometry | None, Provenance]:
    if isinstance(h, HamiltonianMatrix):
        return h.matrix, h.geometry, h.provenance
    m = np.asarray(h, dtype=float)
    return m, None, Provenance()


def _check_square(m: np.ndarray):
    if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] < 1:
        raise ValueError("expected a nonempty square matrix")


def eigenvalues_symmetric(h, method: str = "native") -> SpectrumSample:
    m, geom, prov = _as_matrix(h)
    _check_square(m)
    if method == "native":
        d, e, _ = householder_tridiagonalize(m)
        vals, _ = tridiagonal_eigh(d, e)
    elif method == "lapack":
        vals = np.linalg.eigvalsh(m)
    else:
        raise ValueError(f"unknown method {method!r}")
    return SpectrumSample(vals, geom, prov)


def eigenpairs_symmetric(h, method: str = "native") -> EigenPairs:
    m, geom, prov = _as_matrix(h)
    _check_square(m)
    if method == "native":
        d, e, q = householder_tridiagonalize(m, want_q=True)
        vals, vecs = tridiagonal_eigh(d, e, q)
    elif method == "lapack":
        vals, vecs = np.linalg.eigh(m)
    else:
        raise ValueError(f"unknown method {method!r}")
    return EigenPairs(SpectrumSample(vals, geom, prov), vecs)


def _ldl_negative_pivots(a: np.ndarray, tol: float) -> int | None:
    """Count negative pivots of an unpivoted LDL^T; ``None`` if a pivot is tiny."""
    a = a.copy()
    n = a.shape[0]
    negatives = 0
    for k in range(n):
        piv = a[k, k]
        if abs(piv) < tol:
            return None
        if piv < 0:
            negatives += 1
        if k + 1 < n:
            col = a[k + 1:, k]
            nz = np.flatnonzero(col)
            if nz.size > (n - k) // 4:
                a[k + 1:, k + 1:] -= np.outer(col / piv, col)
            elif nz.size:
                # sparse column (banded or periodic-banded matrices): touch only the fill block
                rows = nz + k + 1
                a[np.ix_(rows, rows)] -= np.outer(col[nz] / piv, col[nz])
    return negatives


@numba.njit(cache=True)
def _band_ldl(band, tol):
    """In-place LDL^T of a symmetric band matrix stored as ``band[k, j] = A[k, k + j]``.

    On return ``band[k, 0]`` holds ``D[k]`` and ``band[k, j]`` holds ``L[k + j, k]``.
    Returns the number of negative pivots, or -1 when a pivot falls below ``tol``.
    """
    n, w = band.shape
    b = w - 1
    negatives = 0
    for k in range(n):
        piv = band[k, 0]
        if abs(piv) < tol:
            return -1
        if piv < 0:
            negatives += 1
        for i in range(1, b + 1):
            if k + i >= n:
                break
            aik = band[k, i]
            if aik == 0.0:
                continue
            li = aik / piv
            for j in range(i, b + 1):
                if k + j >= n:
                    break
                band[k + i, j - i] -= li * band[k, j]
        for i in range(1, b + 1):
            if k + i < n:
                band[k, i] /= piv
    return negatives


@numba.njit(cache=True)
def _band_ldl_solve(band, rhs):
    """Solve ``L D L^T x = rhs`` in place for factors from ``_band_ldl``."""
    n, w = band.shape
    b = w - 1
    for k in range(n):
        for i in range(1, b + 1):
            if k + i >= n:
                break
            lik = band[k, i]
            if lik != 0.0:
                rhs[k + i, :] -= lik * rhs[k, :]
    for k in range(n):
        rhs[k, :] /= band[k, 0]
    for k in range(n - 1, -1, -1):
        for i in range(1, b + 1):
            if k + i >= n:
                break
            lik = band[k, i]
            if lik != 0.0:
                rhs[k, :] -= lik * rhs[k + i, :]
    return rhs


def _border_split(m) -> tuple[int, int]:
    """Border width ``w`` and half-bandwidth ``b`` of the leading block of a sparse matrix.

    Couplings longer than half the matrix (the wrap of a torus along its slowest
    axis) are moved into a trailing border of ``w`` rows so that the leading
    ``n - w`` block is banded.
    """
    coo = m.tocoo()
    n = m.shape[0]
    i, j = coo.row, coo.col
    far = np.abs(i - j) > n // 2
    w = int((n - np.maximum(i, j)[far]).max()) if far.any() else 0
    inner = (i < n - w) & (j < n - w)
    b = int(np.abs(i - j)[inner].max()) if inner.any() else 0
    return w, b


def _sparse_negatives(m, e: float, tol: float, w: int, b: int) -> int | None:
    """Negative eigenvalues of ``m - e`` from a band LDL^T of the leading block plus the
    inertia of the border Schur complement (Haynsworth additivity)."""
    n = m.shape[0]
    k = n - w
    lead = m[:k, :k].tocoo()
    band = np.zeros((k, b + 1))
    up = lead.col >= lead.row
    band[lead.row[up], (lead.col - lead.row)[up]] = lead.data[up]
    band[:, 0] -= e
    neg = _band_ldl(band, tol)
    if neg < 0:
        return None
    if w == 0:
        return int(neg)
    coupling = m[:k, k:].toarray()
    schur = m[k:, k:].toarray() - e * np.eye(w) - coupling.T @ _band_ldl_solve(band, coupling.copy())
    ev = np.linalg.eigvalsh((schur + schur.T) / 2)
    if np.min(np.abs(ev)) < tol:
        return None
    return int(neg) + int(np.count_nonzero(ev < 0))


def count_below(h, energy: float) -> int:
    """Number of eigenvalues ``<= energy`` from the inertia of ``H - energy``.

    A pivot smaller than ``1e-12 * ||H||_F`` means ``energy`` sits (numerically) on an
    eigenvalue; the energy is then nudged upward by a relative ``1e-10`` (doubling on
    each further retry) and the factorization repeated.

    ``h`` may also be a scipy sparse matrix (e.g. from ``sparse_hamiltonian``): the
    leading block is then factored in band storage and the long torus couplings are
    handled through a small Schur complement, so large 1D volumes cost O(|V|).
    """
    if sparse.issparse(h):
        m = h.tocsr().astype(float)
        _check_square(m)
        fro = float(sparse_norm(m))
        w, b = _border_split(m)

        def count(e):
            return _sparse_negatives(m, e, tol, w, b)

    else:
        m, _, _ = _as_matrix(h)
        _check_square(m)
        fro = float(np.linalg.norm(m))

        def count(e):
            return _ldl_negative_pivots(m - e * np.eye(m.shape[0]), tol)

    if not np.isfinite(energy):
        raise ValueError("energy must be finite")
    tol = PIVOT_RTOL * fro if fro > 0 else PIVOT_RTOL
    step = SHIFT_RTOL * max(abs(energy), fro, 1.0)
    e = float(energy)
    for _ in range(MAX_SHIFT_RETRIES + 1):
        neg = count(e)
        if neg is not None:
            return neg
        # doubling steps escape cancellation on structurally singular shifts
        e += step
        step *= 2
    raise ConvergenceError(f"inertia count at E={energy} failed after {MAX_SHIFT_RETRIES} shifts")
