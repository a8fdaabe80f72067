"""Quadrature rules on the reference interval [0,1] and reference triangle."""

import numpy as np


def gauss01(n):
    """n-point Gauss-Legendre rule on [0,1]."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def interval_rule(degree):
    """Points (n,1) and weights exact for polynomials up to `degree` on [0,1]."""
    n = max(1, (degree + 2) // 2)
    x, w = gauss01(n)
    return x.reshape(-1, 1), w


def triangle_rule(degree):
    """Collapsed product rule on the triangle {x,y >= 0, x+y <= 1}.

    Positive weights; exact for total degree `degree` (the Duffy map adds one
    degree in the first direction, covered by the point count).
    """
    n = max(1, (degree + 3) // 2)
    x, wx = gauss01(n)
    y, wy = gauss01(n)
    xi, eta = np.meshgrid(x, y, indexing="ij")
    pts = np.column_stack([xi.ravel(), (eta * (1.0 - xi)).ravel()])
    wts = (wx[:, None] * wy[None, :] * (1.0 - xi)).ravel()
    return pts, wts


def reference_rule(dim, degree):
    if dim == 1:
        return interval_rule(degree)
    if dim == 2:
        return triangle_rule(degree)
    raise ValueError(f"unsupported dimension {dim}")
