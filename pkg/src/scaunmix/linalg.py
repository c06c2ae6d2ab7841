"""Small dense linear-algebra kernels on float64 numpy arrays.

A "matrix" here is a 2-D C-contiguous float64 ``numpy.ndarray``.  Products
go through numpy; the determinant, the LU solve and the symmetric
eigensolver are written out so their behaviour (pivoting, convergence test,
clamping) is pinned down rather than inherited from LAPACK.
"""
from __future__ import annotations

import numpy as np

__all__ = [
    "ContractError",
    "SingularMatrixError",
    "as_matrix",
    "matmul",
    "frobenius_norm",
    "lu_factor",
    "det",
    "solve",
    "jacobi_eigh",
    "top_k_singular_values",
    "tail_energy",
    "right_pseudo_inverse",
]

JACOBI_TOL = 1e-12
JACOBI_MAX_SWEEPS = 100
PINV_MAX_COND = 1e12


class ContractError(ValueError):
    """An operation was called outside its stated preconditions."""


class SingularMatrixError(ArithmeticError):
    """A matrix that must be invertible is (numerically) singular."""


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Coerce ``a`` to a finite 2-D float64 array (copying only if needed)."""
    m = np.ascontiguousarray(a, dtype=np.float64)
    if m.ndim == 1:
        m = m.reshape(1, -1)
    if m.ndim != 2:
        raise ContractError(f"{name} must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ContractError(f"{name} contains non-finite entries")
    return m


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ContractError(f"cannot multiply {a.shape[0]}x{a.shape[1]} by {b.shape[0]}x{b.shape[1]}")
    return a @ b


def frobenius_norm(a) -> float:
    a = np.asarray(a, dtype=np.float64)
    return float(np.sqrt(np.sum(a * a)))


def lu_factor(g) -> tuple[np.ndarray, np.ndarray, int]:
    """Partial-pivoting LU of a square matrix.

    Returns ``(lu, perm, sign)`` where ``lu`` packs unit-lower L below the
    diagonal and U on/above it, ``perm`` is the row order, and ``sign`` is the
    parity of the permutation.  A zero pivot is left in place (det = 0).
    """
    lu = np.array(g, dtype=np.float64)
    if lu.ndim != 2 or lu.shape[0] != lu.shape[1]:
        raise ContractError(f"LU needs a square matrix, got shape {lu.shape}")
    n = lu.shape[0]
    perm = np.arange(n)
    sign = 1
    for j in range(n):
        p = j + int(np.argmax(np.abs(lu[j:, j])))
        if p != j:
            lu[[j, p]] = lu[[p, j]]
            perm[[j, p]] = perm[[p, j]]
            sign = -sign
        pivot = lu[j, j]
        if pivot == 0.0:
            continue
        lu[j + 1 :, j] /= pivot
        lu[j + 1 :, j + 1 :] -= np.outer(lu[j + 1 :, j], lu[j, j + 1 :])
    return lu, perm, sign


def det(g) -> float:
    g = as_matrix(g, "g")
    if g.shape[0] != g.shape[1]:
        raise ContractError(f"det needs a square matrix, got {g.shape[0]}x{g.shape[1]}")
    lu, _, sign = lu_factor(g)
    return float(sign * np.prod(np.diag(lu)))


def solve(g, b) -> np.ndarray:
    """Solve ``g x = b`` for square ``g`` via :func:`lu_factor`."""
    g = as_matrix(g, "g")
    b = np.asarray(b, dtype=np.float64)
    lu, perm, _ = lu_factor(g)
    if np.any(np.diag(lu) == 0.0):
        raise SingularMatrixError("matrix is exactly singular")
    n = g.shape[0]
    x = b[perm].astype(np.float64, copy=True)
    for i in range(n):
        x[i] -= lu[i, :i] @ x[:i]
    for i in range(n - 1, -1, -1):
        x[i] = (x[i] - lu[i, i + 1 :] @ x[i + 1 :]) / lu[i, i]
    return x


def jacobi_eigh(s, tol: float = JACOBI_TOL, max_sweeps: int = JACOBI_MAX_SWEEPS, relative: bool = False):
    """Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.

    Sweeps over all (p, q) pairs in row order until the off-diagonal
    Frobenius mass drops below ``tol * ||s||_F``.  Returns ``(w, v)`` with
    eigenvalues sorted in descending order and eigenvectors in the columns
    of ``v``.

    With ``relative=True`` a pair is rotated whenever
    ``|a_pq| > tol * sqrt(a_pp * a_qq)`` and sweeping stops once a full sweep
    rotates nothing; this resolves small eigenvalues to high relative
    accuracy when the matrix is already nearly diagonal.
    """
    a = as_matrix(s, "s").copy()
    n = a.shape[0]
    if a.shape[1] != n:
        raise ContractError(f"jacobi_eigh needs a square matrix, got {a.shape}")
    v = np.eye(n)
    scale = frobenius_norm(a)
    threshold = tol * scale
    for _ in range(max_sweeps):
        if not relative:
            off = frobenius_norm(a[~np.eye(n, dtype=bool)])
            if off <= threshold:
                break
        rotated = False
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                if relative and abs(apq) <= tol * np.sqrt(abs(a[p, p] * a[q, q])):
                    continue
                rotated = True
                diff = a[q, q] - a[p, p]
                if abs(diff) + 1e8 * abs(apq) == abs(diff):
                    # theta^2 would overflow; t -> 1 / (2 theta)
                    t = apq / diff
                else:
                    theta = diff / (2.0 * apq)
                    t = np.copysign(1.0, theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                sn = t * c
                col_p = a[:, p].copy()
                col_q = a[:, q]
                a[:, p] = c * col_p - sn * col_q
                a[:, q] = sn * col_p + c * col_q
                row_p = a[p, :].copy()
                row_q = a[q, :]
                a[p, :] = c * row_p - sn * row_q
                a[q, :] = sn * row_p + c * row_q
                a[p, q] = a[q, p] = 0.0
                vp = v[:, p].copy()
                vq = v[:, q]
                v[:, p] = c * vp - sn * vq
                v[:, q] = sn * vp + c * vq
        if relative and not rotated:
            break
    w = np.diag(a).copy()
    order = np.argsort(-w, kind="stable")
    return w[order], v[:, order]


def _gram_basis(y: np.ndarray) -> tuple[np.ndarray, bool]:
    """Eigenvectors of the smaller Gram matrix, leading first.

    Returns ``(basis, right)``: right singular directions (F x F) when
    ``right`` is true, else left ones (N x N).
    """
    rows, cols = y.shape
    right = cols <= rows
    _, basis = jacobi_eigh(y.T @ y if right else y @ y.T)
    # Second pass on the rotated Gram: rounding in y^T y tilts the trailing
    # vectors toward the leading ones by ~eps * cond^2; re-diagonalising
    # (y V)^T (y V) removes that tilt.
    z = y @ basis if right else basis.T @ y
    _, w = jacobi_eigh(z.T @ z if right else z @ z.T, tol=1e-15, relative=True)
    return basis @ w, right


def _projection_norms(y: np.ndarray, basis: np.ndarray, right: bool) -> np.ndarray:
    # norms of y along each basis direction; exact-zero directions stay at
    # ~1e-16 * ||y|| instead of the ~1e-8 * ||y|| that sqrt(eigenvalue) gives
    proj = y @ basis if right else basis.T @ y
    return np.sqrt(np.sum(proj * proj, axis=0 if right else 1))


def _check_rank_arg(y: np.ndarray, k: int) -> None:
    if not 1 <= k <= min(y.shape):
        raise ContractError(f"k={k} outside [1, {min(y.shape)}] for a {y.shape[0]}x{y.shape[1]} matrix")


def top_k_singular_values(y, k: int) -> np.ndarray:
    """The ``k`` largest singular values of ``y`` in descending order."""
    y = as_matrix(y, "y")
    _check_rank_arg(y, k)
    basis, right = _gram_basis(y)
    sv = _projection_norms(y, basis[:, :k], right)
    return np.sort(sv)[::-1]


def tail_energy(y, k: int) -> float:
    """Frobenius residual of the best rank-``k`` approximation of ``y``.

    Measured as the energy of ``y`` along the trailing Gram eigenvectors, so
    the rank-``k`` reconstruction itself is never formed.
    """
    y = as_matrix(y, "y")
    _check_rank_arg(y, k)
    basis, right = _gram_basis(y)
    trailing = basis[:, k:]
    if trailing.shape[1] == 0:
        return 0.0
    return frobenius_norm(y @ trailing if right else trailing.T @ y)


def right_pseudo_inverse(e) -> np.ndarray:
    """``E^T (E E^T)^{-1}`` for a K x F matrix of full row rank (K <= F)."""
    e = as_matrix(e, "e")
    k, f = e.shape
    if k > f:
        raise ContractError(f"right pseudo-inverse needs K <= F, got {k}x{f}")
    gram = e @ e.T
    w = np.linalg.eigvalsh(gram)
    if w[0] <= 0.0 or w[-1] / w[0] > PINV_MAX_COND:
        raise SingularMatrixError(f"E E^T is rank deficient (condition estimate {w[-1] / max(w[0], 1e-300):.3g})")
    # (E E^T)^{-1} E, transposed: solve against each column of E
    return solve(gram, e).T
