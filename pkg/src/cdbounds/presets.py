"""Benchmark problem definitions with exact or reference solutions."""

from dataclasses import dataclass

import numpy as np

from . import assembly, fem
from .assembly import (FULL_DIRICHLET, MIXED, NO_STAB, SUPG, ExactSolution,
                       ProblemSpec)
from .mesh import DIRICHLET, NEUMANN, ROBIN, interval_mesh, rectangle_mesh

STATIC = "static"
SPACETIME = "spacetime"


@dataclass
class Preset:
    name: str
    kind: str
    spec: ProblemSpec
    mesh_factory: callable
    deg_v: int = 1
    flux_kind: str = "rt1"
    deg_flux: int = 2
    deg_w: int = 3
    stabilization: str = NO_STAB
    theta: float = 0.3
    mu_mode: str = "opt"

    def base_mesh(self):
        return self.mesh_factory()


# ---------------------------------------------------------------------------
# One-dimensional boundary layer, pure convection-diffusion

def example1():
    """-eps u'' + u' = 0 on (0,1), u(0)=0, u(1)=1-exp(-1/eps); layer at x=1."""
    eps = 1e-2

    def u(p):
        x = p[..., 0]
        return np.exp((x - 1.0) / eps) - np.exp(-1.0 / eps)

    def du(p):
        x = p[..., 0]
        return (np.exp((x - 1.0) / eps) / eps)[..., None]

    def d2u(p):
        x = p[..., 0]
        return np.exp((x - 1.0) / eps) / eps ** 2

    spec = ProblemSpec(
        epsilon=eps, drift=1.0, drift_div=0.0, reaction=0.0, rhs=0.0,
        bc_layout=FULL_DIRICHLET, dirichlet_data=u,
        exact_solution=ExactSolution(u, du, d2u))
    return Preset("example1", STATIC, spec, lambda: interval_mesh(8),
                  deg_v=1, flux_kind="rt1", deg_w=3, theta=0.3)


# ---------------------------------------------------------------------------
# Two-dimensional layer problem without a closed-form solution; the reference
# is a sine expansion in y with one-dimensional solves per mode.

_EX2_CACHE = {}


def example2_reference(n_modes=301, n_cells=2048, quadrature_degree=6):
    """Reference solution of example 2 as an odd sine series in y.

    Writing u(x,y) = sum_k c_k(x) sin(k pi y) over odd k turns the problem
    into decoupled one-dimensional problems -eps c'' - (x c)' + c + eps (k
    pi)^2 c = b_k x with b_k = 4/(k pi) and zero endpoint values. Each mode
    is solved with quadratic elements on a uniform fine grid; values and x
    derivatives are tabulated and interpolated. The series tail and the
    per-mode discretization error are both far below the coarsest target
    accuracy.
    """
    key = (n_modes, n_cells)
    if key in _EX2_CACHE:
        return _EX2_CACHE[key]
    eps = 1e-3
    ks = 2 * np.arange(n_modes) + 1
    m1 = interval_mesh(n_cells)
    V = fem.lagrange_space(m1, 2, constraint=fem.ZERO_ON_DIRICHLET)
    ngrid = 2 * n_cells + 1
    U = np.empty((n_modes, ngrid))
    Ux = np.empty((n_modes, ngrid))
    half = np.array([[0.5]])
    left = np.array([[0.0]])
    right = np.array([[1.0]])
    for i, k in enumerate(ks):
        bk = 4.0 / (np.pi * k)
        spec1 = ProblemSpec(
            epsilon=eps, drift=lambda p: -p[..., :1], drift_div=-1.0,
            reaction=1.0 + eps * (k * np.pi) ** 2,
            rhs=lambda p, b=bk: b * p[..., 0],
            bc_layout=FULL_DIRICHLET, dirichlet_data=0.0,
            quadrature_degree=quadrature_degree)
        w = assembly.solve_static(spec1, V)
        U[i, 0:-1:2] = fem.eval_field(w, left)[:, 0]
        U[i, 1::2] = fem.eval_field(w, half)[:, 0]
        U[i, -1] = fem.eval_field(w, right)[-1, 0]
        Ux[i, 0:-1:2] = fem.eval_field_grad(w, left)[:, 0, 0]
        Ux[i, 1::2] = fem.eval_field_grad(w, half)[:, 0, 0]
        Ux[i, -1] = fem.eval_field_grad(w, right)[-1, 0, 0]
    kpi = ks * np.pi

    def _interp(tab, xf):
        pos = np.clip(xf, 0.0, 1.0) * (ngrid - 1)
        i0 = np.minimum(pos.astype(np.int64), ngrid - 2)
        t = pos - i0
        return tab[:, i0] * (1.0 - t) + tab[:, i0 + 1] * t

    def _sum(xf, yf, want_grad):
        # structured meshes repeat few distinct coordinates, so tabulating
        # per distinct value removes most of the transcendental work; fall
        # back to direct evaluation when the tables would grow too large
        out = np.empty(xf.shape + ((2,) if want_grad else ()))
        xu, xi = np.unique(np.round(xf, 12), return_inverse=True)
        yu, yi = np.unique(np.round(yf, 12), return_inverse=True)
        if (xu.size + 2 * yu.size) * kpi.size > 2e7:
            xu = None
        elif want_grad:
            ax = _interp(Ux, xu)
            ak = _interp(U, xu) * kpi[:, None]
            sy_u = np.sin(np.outer(kpi, yu))
            cy_u = np.cos(np.outer(kpi, yu))
        else:
            au = _interp(U, xu)
            sy_u = np.sin(np.outer(kpi, yu))
        step = 16384
        for lo in range(0, xf.size, step):
            sl = slice(lo, lo + step)
            if xu is not None:
                if want_grad:
                    out[sl, 0] = np.einsum("kb,kb->b", ax[:, xi[sl]],
                                           sy_u[:, yi[sl]])
                    out[sl, 1] = np.einsum("kb,kb->b", ak[:, xi[sl]],
                                           cy_u[:, yi[sl]])
                else:
                    out[sl] = np.einsum("kb,kb->b", au[:, xi[sl]],
                                        sy_u[:, yi[sl]])
                continue
            sy = np.sin(np.outer(kpi, yf[sl]))
            if want_grad:
                out[sl, 0] = np.einsum("kb,kb->b", _interp(Ux, xf[sl]), sy)
                cy = np.cos(np.outer(kpi, yf[sl]))
                out[sl, 1] = np.einsum("kb,kb->b",
                                       _interp(U, xf[sl]) * kpi[:, None], cy)
            else:
                out[sl] = np.einsum("kb,kb->b", _interp(U, xf[sl]), sy)
        return out

    def value(p):
        xf, yf = p[..., 0].ravel(), p[..., 1].ravel()
        return _sum(xf, yf, False).reshape(p.shape[:-1])

    def gradient(p):
        xf, yf = p[..., 0].ravel(), p[..., 1].ravel()
        return _sum(xf, yf, True).reshape(p.shape[:-1] + (2,))

    ref = ExactSolution(value, gradient)
    _EX2_CACHE[key] = ref
    return ref


def example2(with_reference=True):
    """-eps Lap(u) - x u_x = x on the unit square, u = 0 on the boundary."""
    spec = ProblemSpec(
        epsilon=1e-3, drift=lambda p: np.stack(
            [-p[..., 0], np.zeros_like(p[..., 0])], axis=-1),
        drift_div=-1.0, reaction=1.0, rhs=lambda p: p[..., 0],
        bc_layout=FULL_DIRICHLET, dirichlet_data=0.0,
        exact_solution=example2_reference() if with_reference else None)
    return Preset("example2", STATIC, spec, lambda: rectangle_mesh(4, 4),
                  deg_v=1, flux_kind="rt1", deg_w=3,
                  stabilization=SUPG, theta=0.3)


def reference_by_refinement(spec, mesh, degree, extra_refs=2,
                            stabilization=NO_STAB):
    """Reference field from a solve with extra uniform refinements and one
    degree more; a generic stand-in when no closed form is available."""
    from .mesh import refine_uniform
    fine = mesh
    for _ in range(extra_refs):
        fine = refine_uniform(fine)
    space = fem.lagrange_space(fine, degree + 1,
                               constraint=fem.ZERO_ON_DIRICHLET)
    w = assembly.solve_static(spec, space, stabilization)
    return w


# ---------------------------------------------------------------------------
# Parametric layer problem driving the diffusion homotopy

def example4(epsilon=1e-3):
    """-eps Lap(u) + u_x = f with layer factor exp((x-1)/eps), parametric."""
    eps = float(epsilon)

    def layer(x):
        return np.exp((x - 1.0) / eps)

    def u(p):
        x, y = p[..., 0], p[..., 1]
        return (x ** 2 - layer(x)) * y * (1.0 - y)

    def du(p):
        x, y = p[..., 0], p[..., 1]
        g = y * (1.0 - y)
        return np.stack([(2.0 * x - layer(x) / eps) * g,
                         (x ** 2 - layer(x)) * (1.0 - 2.0 * y)], axis=-1)

    def f(p):
        x, y = p[..., 0], p[..., 1]
        return (2.0 * (x - eps) * y * (1.0 - y)
                + 2.0 * eps * (x ** 2 - layer(x)))

    spec = ProblemSpec(
        epsilon=eps, drift=(1.0, 0.0), drift_div=0.0, reaction=0.0, rhs=f,
        bc_layout=FULL_DIRICHLET, dirichlet_data=u,
        exact_solution=ExactSolution(u, du))
    return Preset("example4", STATIC, spec, lambda: rectangle_mesh(8, 8),
                  deg_v=1, flux_kind="p2", deg_w=3, theta=0.1)


# ---------------------------------------------------------------------------
# Layer at x = 1 with reaction, exact solution known

def example5():
    eps = 1e-3
    c = np.exp(-1.0 / eps)

    def X(x):
        return x + (np.exp((x - 1.0) / eps) - c) / (c - 1.0)

    def Xp(x):
        return 1.0 + np.exp((x - 1.0) / eps) / (eps * (c - 1.0))

    def u(p):
        x, y = p[..., 0], p[..., 1]
        return X(x) * y * (1.0 - y)

    def du(p):
        x, y = p[..., 0], p[..., 1]
        return np.stack([Xp(x) * y * (1.0 - y),
                         X(x) * (1.0 - 2.0 * y)], axis=-1)

    def f(p):
        x, y = p[..., 0], p[..., 1]
        g = y * (1.0 - y)
        return g + X(x) * (2.0 * eps + g)

    spec = ProblemSpec(
        epsilon=eps, drift=(1.0, 0.0), drift_div=0.0, reaction=1.0, rhs=f,
        bc_layout=FULL_DIRICHLET, dirichlet_data=0.0,
        exact_solution=ExactSolution(u, du))
    return Preset("example5", STATIC, spec, lambda: rectangle_mesh(4, 4),
                  deg_v=1, flux_kind="rt1", deg_w=3, theta=0.3)


# ---------------------------------------------------------------------------
# Two boundary layers, strong drift (2,3)

def example6():
    eps = 1e-4

    def E2(x):
        return np.exp(2.0 * (x - 1.0) / eps)

    def E3(y):
        return np.exp(3.0 * (y - 1.0) / eps)

    def u(p):
        x, y = p[..., 0], p[..., 1]
        return (x - E2(x)) * (y ** 2 - E3(y))

    def du(p):
        x, y = p[..., 0], p[..., 1]
        return np.stack([
            (1.0 - 2.0 * E2(x) / eps) * (y ** 2 - E3(y)),
            (x - E2(x)) * (2.0 * y - 3.0 * E3(y) / eps)], axis=-1)

    def f(p):
        x, y = p[..., 0], p[..., 1]
        return (2.0 * (y ** 2 - E3(y))
                + (x - E2(x)) * (6.0 * y - 2.0 * eps + y ** 2 - E3(y)))

    spec = ProblemSpec(
        epsilon=eps, drift=(2.0, 3.0), drift_div=0.0, reaction=1.0, rhs=f,
        bc_layout=FULL_DIRICHLET, dirichlet_data=u,
        exact_solution=ExactSolution(u, du))
    return Preset("example6", STATIC, spec, lambda: rectangle_mesh(8, 8),
                  deg_v=1, flux_kind="rt1", deg_w=3, theta=0.3)


# ---------------------------------------------------------------------------
# Space-time family on (0,1) x (0,2): drift 1, three reaction profiles

def _qt_tag(m):
    if m[1] < 1e-9:
        return DIRICHLET
    if m[1] > 2.0 - 1e-9:
        return NEUMANN
    if m[0] < 1e-9:
        return ROBIN
    return NEUMANN


def _qt_mesh():
    return rectangle_mesh(8, 16, 0.0, 1.0, 0.0, 2.0, tag=_qt_tag)


def _T(t):
    return t * np.cos(2.0 * t) + 1.0


def _Tp(t):
    return np.cos(2.0 * t) - 2.0 * t * np.sin(2.0 * t)


def _u0(p):
    return np.sin(2.0 * np.pi) + np.cos(np.pi * p[..., 0])


def _example7(name, reaction):
    def u(p):
        return _u0(p) * _T(p[..., 1])

    def du(p):
        x, t = p[..., 0], p[..., 1]
        return np.stack([-np.pi * np.sin(np.pi * x) * _T(t),
                         _u0(p) * _Tp(t)], axis=-1)

    def uxx(p):
        return -np.pi ** 2 * np.cos(np.pi * p[..., 0]) * _T(p[..., 1])

    def f(p):
        x, t = p[..., 0], p[..., 1]
        return (_u0(p) * _Tp(t)
                + (np.pi ** 2 * np.cos(np.pi * x) - np.pi * np.sin(np.pi * x)
                   + reaction(p) * _u0(p)) * _T(t))

    spec = ProblemSpec(
        epsilon=1.0, drift=1.0, drift_div=0.0, reaction=reaction, rhs=f,
        bc_layout=MIXED, robin_data=lambda p: -_T(p[..., 1]),
        neumann_data=0.0, u0=_u0, t_final=2.0,
        exact_solution=ExactSolution(u, du, uxx))
    return Preset(name, SPACETIME, spec, _qt_mesh, deg_v=1, deg_flux=2,
                  deg_w=2, theta=0.6, mu_mode="opt")


def example7a():
    scale = 1.0 / (0.05 * np.sqrt(2.0 * np.pi))

    def lam(p):
        return scale * np.exp(-200.0 * (p[..., 0] - 0.2) ** 2)

    return _example7("example7a", lam)


def example7b():
    def lam(p):
        x, t = p[..., 0], p[..., 1]
        return 0.001 * (x + 0.001) * (t * np.sin(t) + 1.0)

    return _example7("example7b", lam)


def example7c():
    def lam(p):
        x, t = p[..., 0], p[..., 1]
        return 1000.0 * (x + 0.001) * (t * np.sin(t) + 1.0)

    return _example7("example7c", lam)


def _qt_tag_diff(m):
    if m[1] < 1e-9:
        return DIRICHLET
    return NEUMANN


def example7diff():
    """Heat-equation variant: no drift, no reaction, natural lateral faces."""
    def u(p):
        return _u0(p) * _T(p[..., 1])

    def du(p):
        x, t = p[..., 0], p[..., 1]
        return np.stack([-np.pi * np.sin(np.pi * x) * _T(t),
                         _u0(p) * _Tp(t)], axis=-1)

    def uxx(p):
        return -np.pi ** 2 * np.cos(np.pi * p[..., 0]) * _T(p[..., 1])

    def f(p):
        x, t = p[..., 0], p[..., 1]
        return (_u0(p) * _Tp(t)
                + np.pi ** 2 * np.cos(np.pi * x) * _T(t))

    spec = ProblemSpec(
        epsilon=1.0, rhs=f, bc_layout=MIXED, neumann_data=0.0,
        u0=_u0, t_final=2.0, exact_solution=ExactSolution(u, du, uxx))
    return Preset(
        "example7diff", SPACETIME, spec,
        lambda: rectangle_mesh(8, 16, 0.0, 1.0, 0.0, 2.0, tag=_qt_tag_diff),
        deg_v=2, deg_flux=2, deg_w=3, theta=0.6, mu_mode="opt")


PRESETS = {
    "example1": example1,
    "example2": example2,
    "example4": example4,
    "example5": example5,
    "example6": example6,
    "example7a": example7a,
    "example7b": example7b,
    "example7c": example7c,
    "example7diff": example7diff,
}


def get_preset(name, **kwargs):
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; choose from "
                       f"{sorted(PRESETS)}")
    return PRESETS[name](**kwargs)
