"""Dense linear algebra and seeded random generation shared by the package.

Matrices are plain ``numpy.ndarray`` objects of dtype ``float64`` stored in
C (row-major) order, so CSV dumps list entries row by row.

Random streams come from :class:`numpy.random.Generator` backed by the
PCG64 bit generator. Normal variates use numpy's ziggurat sampler. Child
streams for parallel runs are derived from ``(master_seed, run_index)``
through :class:`numpy.random.SeedSequence`, so run ``i`` of a sweep draws
the same numbers whether it runs alone or alongside others.
"""

import numpy as np

__all__ = [
    "as_matrix",
    "make_rng",
    "child_rng",
    "frobenius_norm",
    "jacobi_eigenvalues",
    "smallest_singular_value",
    "gaussian_matrix",
]


def as_matrix(a):
    """Return ``a`` as a finite 2-D float64 array (1-D input becomes a row)."""
    m = np.array(a, dtype=np.float64, order="C", ndmin=2)
    if m.ndim != 2:
        raise ValueError("expected a 2-D array, got shape %r" % (m.shape,))
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix has non-finite entries")
    return m


def make_rng(seed):
    """Seeded generator; identical seeds give identical streams."""
    return np.random.Generator(np.random.PCG64(int(seed)))


def child_rng(master_seed, index):
    """Independent stream for run ``index`` of a sweep keyed by ``master_seed``."""
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=(int(index),))
    return np.random.Generator(np.random.PCG64(ss))


def frobenius_norm(M):
    M = np.asarray(M, dtype=np.float64)
    return float(np.sqrt(np.sum(M * M)))


def jacobi_eigenvalues(S, tol=1e-15, max_sweeps=100):
    """Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.

    Returns the eigenvalues in ascending order. Each sweep annihilates every
    off-diagonal pair once; iteration stops when the off-diagonal mass falls
    below ``tol`` times the Frobenius norm of ``S``.
    """
    A = np.array(S, dtype=np.float64)
    n = A.shape[0]
    if A.shape != (n, n):
        raise ValueError("jacobi_eigenvalues needs a square matrix")
    if n == 0:
        raise ValueError("empty matrix")
    scale = frobenius_norm(A)
    if scale == 0.0:
        return np.zeros(n)
    for _ in range(max_sweeps):
        off = np.sqrt(max(np.sum(A * A) - np.sum(np.diag(A) ** 2), 0.0))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                t = 1.0 if theta == 0.0 else np.sign(theta) / (abs(theta) + np.hypot(theta, 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                # rotate rows/cols p and q
                ap = A[:, p].copy()
                aq = A[:, q].copy()
                A[:, p] = c * ap - s * aq
                A[:, q] = s * ap + c * aq
                ap = A[p, :].copy()
                aq = A[q, :].copy()
                A[p, :] = c * ap - s * aq
                A[q, :] = s * ap + c * aq
    return np.sort(np.diag(A))


def smallest_singular_value(M):
    """Smallest singular value of ``M``.

    Computed from the Jacobi spectrum of the smaller Gram matrix
    (``M Mᵀ`` for wide input, ``Mᵀ M`` for tall input).
    """
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2 or M.size == 0:
        raise ValueError("smallest_singular_value needs a nonempty 2-D matrix")
    rows, cols = M.shape
    G = M @ M.T if rows <= cols else M.T @ M
    lam = jacobi_eigenvalues(G)[0]
    return float(np.sqrt(max(lam, 0.0)))


def gaussian_matrix(rng, rows, cols, scale=1.0):
    """``rows x cols`` matrix of i.i.d. N(0, scale²) entries."""
    if not scale > 0:
        raise ValueError("scale must be positive")
    return scale * rng.standard_normal((rows, cols))
