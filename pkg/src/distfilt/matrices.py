"""Dense symmetric-matrix kernels: vectorization, PSD projection, norms.

Everything here operates on plain ``numpy.ndarray`` values and is pure, so
all functions are safe to call concurrently.  Matrices stay small (tens of
rows), hence dense LAPACK routines throughout.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "symmetrize",
    "vec",
    "unvec",
    "trace_inner",
    "sym_eigen",
    "project_psd",
    "norms",
    "pack_symmetric",
    "unpack_symmetric",
    "pack_weights",
]


def symmetrize(a):
    """Return the symmetric part ``(a + a.T) / 2``.

    The result is exactly symmetric entry-for-entry (float addition is
    commutative), which downstream cone projections rely on.
    """
    a = np.asarray(a, dtype=float)
    return 0.5 * (a + a.T)


def vec(m):
    """Stack the columns of ``m`` into a 1-d vector (column-major order)."""
    return np.asarray(m, dtype=float).reshape(-1, order="F").copy()


def unvec(v, rows, cols):
    """Inverse of :func:`vec` for a ``rows x cols`` matrix."""
    v = np.asarray(v, dtype=float)
    if v.size != rows * cols:
        raise ValueError(f"cannot reshape {v.size} entries into {rows}x{cols}")
    return v.reshape((rows, cols), order="F").copy()


def trace_inner(a, b):
    """Trace inner product ``tr(a.T @ b)``.

    Equals ``vec(a) @ vec(b)``; raises on shape mismatch.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.tensordot(a, b, axes=2))


def sym_eigen(s):
    """Eigendecomposition of a symmetric matrix.

    Returns ``(values, vectors)`` with eigenvalues in ascending order and
    orthonormal eigenvectors in the columns, so that
    ``vectors @ diag(values) @ vectors.T`` reconstructs the symmetrized
    input.  A LAPACK convergence failure propagates as ``LinAlgError``,
    which usually signals a badly conditioned input.
    """
    w, v = np.linalg.eigh(symmetrize(s))
    return w, v


def project_psd(s):
    """Frobenius-nearest positive semidefinite matrix.

    Negative eigenvalues are clamped to zero.  If the (symmetrized) input
    is already PSD it is returned unchanged, making the projection exactly
    idempotent.
    """
    sym = symmetrize(s)
    w, v = np.linalg.eigh(sym)
    if w[0] >= 0.0:
        return sym
    return symmetrize((v * np.maximum(w, 0.0)) @ v.T)


def norms(m):
    """Return ``(frobenius, spectral)`` norms of a matrix."""
    m = np.asarray(m, dtype=float)
    fro = float(np.linalg.norm(m))
    spectral = float(np.linalg.norm(m, 2)) if m.size else 0.0
    return fro, spectral


# -- packed storage for symmetric matrices ----------------------------------
#
# The conic solver flattens symmetric decision variables into their upper
# triangle (row-major over i <= j).  pack/unpack round-trip exactly; the
# weight vector carries the factor 2 that off-diagonal entries contribute
# to trace inner products and Frobenius norms.


def pack_symmetric(s):
    """Upper-triangle entries of a symmetric matrix as a flat vector."""
    s = np.asarray(s, dtype=float)
    iu = np.triu_indices(s.shape[0])
    return s[iu].copy()


def unpack_symmetric(v, n):
    """Rebuild the full symmetric matrix from packed upper-triangle entries."""
    v = np.asarray(v, dtype=float)
    if v.size != n * (n + 1) // 2:
        raise ValueError(f"expected {n * (n + 1) // 2} packed entries, got {v.size}")
    out = np.zeros((n, n))
    iu = np.triu_indices(n)
    out[iu] = v
    out.T[iu] = v
    return out


def pack_weights(n):
    """Inner-product weights for packed symmetric storage (1 diag, 2 off)."""
    w = np.full(n * (n + 1) // 2, 2.0)
    iu = np.triu_indices(n)
    w[iu[0] == iu[1]] = 1.0
    return w
