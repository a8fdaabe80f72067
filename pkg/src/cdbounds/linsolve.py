"""Sparse LU factorization with a residual certificate on every solve."""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import SingularMatrix

RESIDUAL_FACTOR = 1e-10


@dataclass
class SparseFactor:
    lu: object
    matrix: object
    norm_inf: float


def _pivot_index(a):
    """First zero pivot of a dense LU; best effort for the error report."""
    n = a.shape[0]
    if n > 4000:
        return n - 1
    from scipy.linalg import lu as dense_lu
    _, _, u = dense_lu(a.toarray())
    d = np.abs(np.diag(u))
    bad = np.flatnonzero(d <= 1e-14 * max(d.max(), 1.0))
    return int(bad[0]) if bad.size else n - 1


def factor(system):
    """LU-factor a LinearSystem or sparse matrix."""
    a = system.matrix if hasattr(system, "matrix") else system
    a = sp.csc_matrix(a)
    if a.shape[0] != a.shape[1]:
        raise ValueError("matrix must be square")
    try:
        lu = spla.splu(a)
    except RuntimeError as exc:
        raise SingularMatrix(str(exc), _pivot_index(a)) from None
    norm_inf = float(np.abs(a).sum(axis=1).max())
    u_diag = np.abs(lu.U.diagonal())
    if u_diag.min() <= 1e-300:
        raise SingularMatrix("zero pivot", int(np.argmin(u_diag)))
    return SparseFactor(lu, a, norm_inf)


def solve(fac, b):
    """Solve with one step of iterative refinement; certifies the residual."""
    b = np.asarray(b, float)
    x = fac.lu.solve(b)
    r = b - fac.matrix @ x
    bound = RESIDUAL_FACTOR * (fac.norm_inf * np.abs(x).max() + np.abs(b).max())
    if np.abs(r).max() > bound:
        x = x + fac.lu.solve(r)
        r = b - fac.matrix @ x
        bound = RESIDUAL_FACTOR * (fac.norm_inf * np.abs(x).max() + np.abs(b).max())
        if np.abs(r).max() > bound:
            raise SingularMatrix(
                f"solve residual {np.abs(r).max():.3e} exceeds bound {bound:.3e}")
    return x


def solve_system(system):
    return solve(factor(system), system.rhs)
