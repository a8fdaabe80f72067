"""Problem data and system assembly.

Static problems discretize -div(eps grad u) + div(F u) + lam u = f with an
optional streamline-diffusion stabilization. Parabolic problems treat the
space-time cylinder as a 2D (x,t) mesh, last coordinate t, and discretize
u_t plus the same spatial operator in one shot. Estimator quadratics over
flux spaces are assembled as SPD normal equations.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import fem
from .errors import (IncomingFluxViolated, IndefiniteSystem, NonMatchingSpaces,
                     SingularReaction)
from .fem import (LAGRANGE, LAGRANGE_VEC, RAVIART_THOMAS, affine_geometry,
                  facet_quadrature, map_points, rt_cell_setup,
                  tabulate_lagrange)
from .linsolve import factor, solve
from .mesh import DIRICHLET, NEUMANN, ROBIN, cell_diameters
from .quadrature import reference_rule

MIXED = "mixed"
ROBIN_LAYOUT = "robin"
FULL_DIRICHLET = "full_dirichlet"

NO_STAB = "none"
SUPG = "supg"

CHUNK = 16384


@dataclass
class ExactSolution:
    value: callable
    gradient: callable = None
    laplacian: callable = None


@dataclass
class ProblemSpec:
    epsilon: float
    drift: object = None
    drift_div: object = None
    reaction: object = None
    rhs: object = 0.0
    bc_layout: str = FULL_DIRICHLET
    dirichlet_data: object = None
    neumann_data: object = None
    robin_data: object = None
    u0: object = None
    t_final: float = None
    exact_solution: ExactSolution = None
    quadrature_degree: int = 8

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("diffusion coefficient must be positive")


def as_scalar(c):
    if c is None:
        return lambda p: np.zeros(p.shape[:-1])
    if callable(c):
        return c
    v = float(c)
    return lambda p: np.full(p.shape[:-1], v)


def as_vector(c, dim):
    if c is None:
        return lambda p: np.zeros(p.shape[:-1] + (dim,))
    if callable(c):
        return c
    v = np.asarray(c, float).reshape(dim)
    return lambda p: np.broadcast_to(v, p.shape[:-1] + (dim,)).copy()


def scalar_at(c, pts):
    vals = np.asarray(as_scalar(c)(pts), float)
    return np.broadcast_to(vals, pts.shape[:-1])


def vector_at(c, pts, dim=None):
    dim = dim if dim is not None else pts.shape[-1]
    vals = np.asarray(as_vector(c, dim)(pts), float)
    if vals.ndim == pts.ndim - 1:
        vals = vals[..., None]
    return np.broadcast_to(vals, pts.shape[:-1] + (dim,))


@dataclass
class LinearSystem:
    matrix: object
    rhs: np.ndarray
    n_dofs: int
    constrained: np.ndarray = field(default_factory=lambda: np.empty(0, np.int64))

    def __post_init__(self):
        m = sp.csr_matrix(self.matrix)
        m.sort_indices()
        if m.shape != (self.n_dofs, self.n_dofs):
            raise ValueError("matrix/dof mismatch")
        if np.any(np.diff(m.indptr) == 0):
            raise ValueError("structurally empty row in assembled system")
        self.matrix = m
        self.rhs = np.asarray(self.rhs, float)


def _chunks(n, size=CHUNK):
    for lo in range(0, n, size):
        yield slice(lo, min(lo + size, n))


def _scatter(dof_map, local, n_dofs):
    nloc = dof_map.shape[1]
    rows = np.repeat(dof_map, nloc, axis=1).ravel()
    cols = np.tile(dof_map, (1, nloc)).ravel()
    return sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n_dofs, n_dofs))


def _apply_dirichlet(mat, rhs, dofs, values):
    if len(dofs) == 0:
        return sp.csr_matrix(mat), rhs
    mat = sp.lil_matrix(mat)
    mat[dofs, :] = 0.0
    mat[dofs, dofs] = 1.0
    rhs = rhs.copy()
    rhs[dofs] = values
    return sp.csr_matrix(mat), rhs


def check_incoming_flux(spec, mesh, lateral_only=False):
    """Drift orientation on the flux boundary; raises on violation.

    Static layouts require inflow (F.n <= 0) on every facet that carries a
    total-flux condition. On a space-time cylinder only lateral facets are
    checked: Robin facets must be inflow, Neumann facets outflow, otherwise
    the convective boundary term loses its sign.
    """
    tags = (ROBIN,) if spec.bc_layout == ROBIN_LAYOUT else (NEUMANN, ROBIN)
    fids, _, _, _ = fem.boundary_facet_info(mesh, tags)
    if len(fids) == 0:
        return
    fq = facet_quadrature(mesh, fids, spec.quadrature_degree)
    nrm, pts = fq["normal"], fq["points"]
    tagsel = mesh.btags[fids]
    if lateral_only:
        keep = np.abs(nrm[:, 1]) < 0.5
        if not keep.any():
            return
        nrm, pts, tagsel = nrm[keep], pts[keep], tagsel[keep]
        fn = vector_at(spec.drift, pts, 1)[..., 0] * nrm[:, None, 0]
        if ((fn < -1e-12) & (tagsel == NEUMANN)[:, None]).any():
            raise IncomingFluxViolated(
                "drift enters through a lateral Neumann boundary")
        if ((fn > 1e-12) & (tagsel == ROBIN)[:, None]).any():
            raise IncomingFluxViolated(
                "drift exits through a lateral flux boundary")
        return
    F = vector_at(spec.drift, pts, mesh.dim)
    fn = np.einsum("fqi,fi->fq", F, nrm)
    if (fn > 1e-12).any():
        raise IncomingFluxViolated("drift exits through a flux boundary")


def _check_reaction(lam_vals):
    if lam_vals.size and lam_vals.min() < -1e-12:
        raise SingularReaction("negative reaction coefficient")


def _dirichlet_values(spec, space):
    dofs = space.dirichlet_dofs
    if len(dofs) == 0:
        return dofs, np.empty(0)
    pts = fem.dof_points(space)[dofs]
    g = spec.dirichlet_data
    if g is None and spec.exact_solution is not None:
        g = spec.exact_solution.value
    return dofs, scalar_at(g, pts)


def supg_parameters(eps, h, fmax):
    """Cellwise stabilization weights from the mesh Peclet switch."""
    peclet = fmax * h / (2 * eps)
    delta = np.where(peclet > 1.0, 0.5 * h / np.maximum(fmax, 1e-300),
                     0.25 * h * h / eps)
    delta = np.where(fmax < 1e-14, 0.0, delta)
    return delta, peclet


def drift_cell_max(spec, mesh, degree=None):
    """Max |F| over quadrature points, per cell."""
    deg = degree or spec.quadrature_degree
    rp, _ = reference_rule(mesh.dim, deg)
    geo = affine_geometry(mesh)
    out = np.empty(mesh.n_cells)
    for ch in _chunks(mesh.n_cells):
        pts = map_points(mesh, rp, geo, np.arange(ch.start, ch.stop))
        F = vector_at(spec.drift, pts, mesh.dim)
        out[ch] = np.linalg.norm(F, axis=2).max(axis=1)
    return out


def assemble_static(spec, space, stabilization=NO_STAB):
    mesh = space.mesh
    if space.family != LAGRANGE:
        raise NonMatchingSpaces("static solves use scalar Lagrange spaces")
    if spec.bc_layout != FULL_DIRICHLET:
        check_incoming_flux(spec, mesh)
    deg = spec.quadrature_degree
    rp, rw = reference_rule(mesh.dim, deg)
    geo = affine_geometry(mesh)
    need_hess = stabilization == SUPG and space.degree >= 2
    tab = tabulate_lagrange(mesh.dim, space.degree, rp, hessian=need_hess)
    vals, grads = tab[0], tab[1]
    hess = tab[2] if need_hess else None
    n = space.n_dofs
    eps = spec.epsilon
    if stabilization == SUPG:
        delta_all, _ = supg_parameters(eps, cell_diameters(mesh),
                                       drift_cell_max(spec, mesh))

    blocks, rhs = [], np.zeros(n)
    for ch in _chunks(mesh.n_cells):
        dm = space.dof_map[ch]
        detJ = geo["detJ"][ch]
        invJT = geo["invJT"][ch]
        pts = map_points(mesh, rp, geo, np.arange(ch.start, ch.stop))
        F = vector_at(spec.drift, pts, mesh.dim)
        divF = scalar_at(spec.drift_div, pts)
        lam = scalar_at(spec.reaction, pts)
        _check_reaction(lam)
        fv = scalar_at(spec.rhs, pts)
        g = np.einsum("cik,bpk->cbpi", invJT, grads)
        wdet = rw[None, :] * detJ[:, None]
        loc = eps * np.einsum("capi,cbpi,cp->cab", g, g, wdet)
        loc -= np.einsum("cpi,bp,capi,cp->cab", F, vals, g, wdet)
        loc += np.einsum("cp,ap,bp,cp->cab", lam, vals, vals, wdet)
        rloc = np.einsum("cp,ap,cp->ca", fv, vals, wdet)
        if stabilization == SUPG:
            delta = delta_all[ch]
            sdir = np.einsum("cpi,cbpi->cbp", F, g)
            strong = sdir + (divF + lam)[:, None, :] * vals[None, :, :]
            if need_hess:
                hg = np.einsum("cik,bpkl,cjl->cbpij", invJT, hess, invJT)
                strong = strong - eps * np.trace(hg, axis1=3, axis2=4)
            loc += np.einsum("c,cbp,cap,cp->cab", delta, strong, sdir, wdet)
            rloc += np.einsum("c,cp,cap,cp->ca", delta, fv, sdir, wdet)
        blocks.append(_scatter(dm, loc, n))
        np.add.at(rhs, dm.ravel(), rloc.ravel())
    mat = sum(blocks).tocsr()

    if spec.bc_layout == MIXED and spec.neumann_data is not None:
        rhs -= boundary_functional(space, spec.neumann_data, (NEUMANN,), deg)
    elif spec.bc_layout == ROBIN_LAYOUT and spec.robin_data is not None:
        rhs -= boundary_functional(space, spec.robin_data, (ROBIN,), deg)

    dofs, vals_d = _dirichlet_values(spec, space)
    mat, rhs = _apply_dirichlet(mat, rhs, dofs, vals_d)

    if spec.bc_layout == ROBIN_LAYOUT and space.constraint == fem.ZERO_MEAN:
        m = _mean_vector(space, deg)
        mat = sp.bmat([[mat, m[:, None]], [m[None, :], None]], format="csr")
        rhs = np.concatenate([rhs, [0.0]])
        return LinearSystem(mat, rhs, n + 1, dofs)
    return LinearSystem(mat, rhs, n, dofs)


def boundary_functional(space, data, tags, degree=8):
    """Global vector of integral(data * basis) over tagged boundary facets."""
    mesh = space.mesh
    out = np.zeros(space.n_dofs)
    fids, _, _, _ = fem.boundary_facet_info(mesh, tags)
    if len(fids) == 0:
        return out
    fq = facet_quadrature(mesh, fids, degree)
    gv = scalar_at(data, fq["points"])
    dm = space.dof_map[fq["adj"]]
    w, meas = fq["weights"], fq["measure"]
    for f in range(len(fids)):
        bvals, _ = tabulate_lagrange(mesh.dim, space.degree, fq["ref"][f])
        np.add.at(out, dm[f], meas[f] * np.einsum("q,bq,q->b", w, bvals, gv[f]))
    return out


def _mean_vector(space, deg):
    mesh = space.mesh
    rp, rw = reference_rule(mesh.dim, deg)
    geo = affine_geometry(mesh)
    vals, _ = tabulate_lagrange(mesh.dim, space.degree, rp)
    out = np.zeros(space.n_dofs)
    contrib = np.einsum("bq,q,c->cb", vals, rw, geo["detJ"])
    np.add.at(out, space.dof_map.ravel(), contrib.ravel())
    return out


def solve_static(spec, space, stabilization=NO_STAB):
    system = assemble_static(spec, space, stabilization)
    x = solve(factor(system), system.rhs)
    return fem.DiscreteField(space, x[: space.n_dofs])


# ---------------------------------------------------------------------------
# Space-time assembly

def assemble_spacetime(spec, trial, test):
    if trial.mesh is not test.mesh or trial.degree != test.degree \
            or trial.family != LAGRANGE or test.family != LAGRANGE:
        raise NonMatchingSpaces("trial and test must share mesh and degree")
    mesh = trial.mesh
    if mesh.dim != 2:
        raise NonMatchingSpaces("space-time solves need a 2D (x,t) mesh")
    check_incoming_flux(spec, mesh, lateral_only=True)
    deg = spec.quadrature_degree
    rp, rw = reference_rule(2, deg)
    geo = affine_geometry(mesh)
    vals, grads = tabulate_lagrange(2, trial.degree, rp)
    n = trial.n_dofs
    eps = spec.epsilon

    blocks, rhs = [], np.zeros(n)
    for ch in _chunks(mesh.n_cells):
        dm = trial.dof_map[ch]
        detJ = geo["detJ"][ch]
        invJT = geo["invJT"][ch]
        pts = map_points(mesh, rp, geo, np.arange(ch.start, ch.stop))
        F = vector_at(spec.drift, pts, 1)[..., 0]
        divF = scalar_at(spec.drift_div, pts)
        lam = scalar_at(spec.reaction, pts)
        _check_reaction(lam)
        fv = scalar_at(spec.rhs, pts)
        g = np.einsum("cik,bpk->cbpi", invJT, grads)
        wdet = rw[None, :] * detJ[:, None]
        loc = eps * np.einsum("cap,cbp,cp->cab", g[..., 0], g[..., 0], wdet)
        loc += np.einsum("cp,cbp,ap,cp->cab", F, g[..., 0], vals, wdet)
        loc += np.einsum("cbp,ap,cp->cab", g[..., 1], vals, wdet)
        loc += np.einsum("cp,ap,bp,cp->cab", divF + lam, vals, vals, wdet)
        rloc = np.einsum("cp,ap,cp->ca", fv, vals, wdet)
        blocks.append(_scatter(dm, loc, n))
        np.add.at(rhs, dm.ravel(), rloc.ravel())
    mat = sum(blocks).tocsr()

    mat, rhs = _spacetime_boundary(spec, trial, mat, rhs)
    dofs, vals_d = _spacetime_essential(spec, trial)
    mat, rhs = _apply_dirichlet(mat, rhs, dofs, vals_d)
    return LinearSystem(mat, rhs, n, dofs)


def lateral_facets(mesh, tags, degree=8):
    """Facet quadrature restricted to lateral (space-like normal) facets."""
    fids, _, _, _ = fem.boundary_facet_info(mesh, tags)
    if len(fids) == 0:
        return None
    fq = facet_quadrature(mesh, fids, degree)
    keep = np.abs(fq["normal"][:, 1]) < 0.5
    if not keep.any():
        return None
    return {"adj": fq["adj"][keep], "normal": fq["normal"][keep],
            "measure": fq["measure"][keep], "points": fq["points"][keep],
            "ref": fq["ref"][keep], "weights": fq["weights"],
            "fids": fids[keep]}


def _spacetime_boundary(spec, space, mat, rhs):
    """Lateral flux terms. A Robin facet prescribes the total flux, so the
    convective part stays in the bilinear form; a Neumann facet prescribes
    only the diffusive flux."""
    mesh = space.mesh
    deg = spec.quadrature_degree
    n = space.n_dofs
    fq = lateral_facets(mesh, (ROBIN,), deg)
    if fq is not None:
        dm = space.dof_map[fq["adj"]]
        fn = vector_at(spec.drift, fq["points"], 1)[..., 0] \
            * fq["normal"][:, None, 0]
        w = fq["weights"]
        gv = scalar_at(spec.robin_data, fq["points"]) \
            if spec.robin_data is not None else None
        rows, cols, dat = [], [], []
        for f in range(len(dm)):
            bvals, _ = tabulate_lagrange(2, space.degree, fq["ref"][f])
            loc = -fq["measure"][f] * np.einsum("q,aq,bq,q->ab", w, bvals,
                                                bvals, fn[f])
            rows.append(np.repeat(dm[f], len(dm[f])))
            cols.append(np.tile(dm[f], len(dm[f])))
            dat.append(loc.ravel())
            if gv is not None:
                np.add.at(rhs, dm[f], -fq["measure"][f]
                          * np.einsum("q,bq,q->b", w, bvals, gv[f]))
        extra = sp.coo_matrix((np.concatenate(dat),
                               (np.concatenate(rows), np.concatenate(cols))),
                              shape=(n, n))
        mat = (mat + extra.tocsr()).tocsr()
    fq = lateral_facets(mesh, (NEUMANN,), deg)
    if fq is not None and spec.neumann_data is not None:
        dm = space.dof_map[fq["adj"]]
        w = fq["weights"]
        gv = scalar_at(spec.neumann_data, fq["points"])
        for f in range(len(dm)):
            bvals, _ = tabulate_lagrange(2, space.degree, fq["ref"][f])
            np.add.at(rhs, dm[f], fq["measure"][f]
                      * np.einsum("q,bq,q->b", w, bvals, gv[f]))
    return mat, rhs


def _spacetime_essential(spec, space):
    """Dofs pinned at t=0 (initial data) and on lateral Dirichlet faces."""
    mesh = space.mesh
    t0 = mesh.vertices[:, 1].min()
    dd = fem._dirichlet_dofs(mesh, space.degree, space.dof_map, (DIRICHLET,))
    pts = fem.dof_points(space)[dd]
    vals = np.empty(len(dd))
    bottom = np.abs(pts[:, 1] - t0) < 1e-12
    vals[bottom] = scalar_at(spec.u0, pts[bottom])
    if (~bottom).any():
        g = spec.dirichlet_data
        if g is None and spec.exact_solution is not None:
            g = spec.exact_solution.value
        vals[~bottom] = scalar_at(g, pts[~bottom])
    return dd, vals


def solve_spacetime(spec, trial, test=None):
    test = test or trial
    system = assemble_spacetime(spec, trial, test)
    x = solve(factor(system), system.rhs)
    return fem.DiscreteField(trial, x)


# ---------------------------------------------------------------------------
# Flux quadratic for the static bound

def flux_basis(flux_space, ref_pts, geo, cells, rt=None):
    """Values (nc,nq,nloc,dim) and divergences (nc,nq,nloc) of flux basis."""
    mesh = flux_space.mesh
    if flux_space.family == RAVIART_THOMAS and mesh.dim == 2:
        rt = rt or rt_cell_setup(mesh)
        C = rt["C"][cells]
        centers = rt["centers"][cells]
        h = rt["h"][cells]
        pts = map_points(mesh, ref_pts, geo, cells)
        xh = (pts - centers[:, None, :]) / h[:, None, None]
        mono = fem._rt_mono_vals(xh)
        mdiv = fem._rt_mono_divs(xh, h[:, None])
        vals = np.einsum("cqmi,cmk->cqki", mono, C)
        divs = np.einsum("cqm,cmk->cqk", mdiv, C)
        return vals, divs
    bv, bg = tabulate_lagrange(mesh.dim, flux_space.degree, ref_pts)
    invJT = geo["invJT"][cells]
    gg = np.einsum("cik,bpk->cbpi", invJT, bg)
    if mesh.dim == 1 or flux_space.family == LAGRANGE:
        nc = len(cells)
        vals = np.broadcast_to(bv.T[None, :, :, None],
                               (nc, bv.shape[1], bv.shape[0], 1))
        divs = np.transpose(gg[..., 0], (0, 2, 1))
        return vals, divs
    nb, nq = bv.shape
    nc = len(cells)
    vals = np.zeros((nc, nq, 2 * nb, 2))
    vals[:, :, 0::2, 0] = bv.T[None]
    vals[:, :, 1::2, 1] = bv.T[None]
    divs = np.zeros((nc, nq, 2 * nb))
    divs[:, :, 0::2] = np.transpose(gg[..., 0], (0, 2, 1))
    divs[:, :, 1::2] = np.transpose(gg[..., 1], (0, 2, 1))
    return vals, divs


def _definiteness_probe(mat, seed=0):
    dense = mat.toarray() if sp.issparse(mat) else np.asarray(mat)
    scale = max(np.abs(dense).max(), 1e-300)
    if np.abs(dense - dense.T).max() > 1e-10 * scale:
        raise IndefiniteSystem("flux normal matrix is not symmetric")
    rng = np.random.default_rng(seed)
    for _ in range(4):
        x = rng.standard_normal(dense.shape[0])
        q = x @ (dense @ x)
        if q < -1e-10 * scale * (x @ x):
            raise IndefiniteSystem("flux normal matrix has negative curvature")


def estimator_boundary_tags(spec):
    if spec.bc_layout == MIXED:
        return (NEUMANN,)
    if spec.bc_layout == ROBIN_LAYOUT:
        return (ROBIN,)
    return ()


def majorant_constants(spec, mesh):
    """(Friedrichs-type constant, gradient-trace constant) for the layout."""
    ec = fem.embedding_constants(mesh, spec.bc_layout)
    if spec.bc_layout == ROBIN_LAYOUT:
        c_f = ec.c_poincare
        c_tg = ec.c_trace * np.sqrt(1 + ec.c_poincare ** 2)
    else:
        c_f = ec.c_friedrichs
        c_tg = ec.c_trace * np.sqrt(1 + min(ec.c_friedrichs, 1e150) ** 2)
    return c_f, c_tg


def weight_delta_sq(spec):
    """Zero-order weight of the error measure: reaction plus half the drift
    divergence."""
    lam = as_scalar(spec.reaction)
    dv = as_scalar(spec.drift_div)
    return lambda p: lam(p) + 0.5 * dv(p)


class MajorantFluxOperator:
    """Normal equations minimizing the upper-bound quadratic over the flux,
    reusable across parameter sweeps.

    Basis tabulations, the flux mass matrix and the residual data do not
    depend on the sweep parameters, so they are computed once; system()
    reassembles only the weighted divergence part for new parameters.
    """

    def __init__(self, v, spec, flux_space, constants=None):
        mesh = flux_space.mesh
        deg = spec.quadrature_degree
        eps = spec.epsilon
        rp, rw = reference_rule(mesh.dim, deg)
        geo = affine_geometry(mesh)
        rt = rt_cell_setup(mesh) if (flux_space.family == RAVIART_THOMAS
                                     and mesh.dim == 2) else None
        if constants is None:
            constants = majorant_constants(spec, mesh)
        self.c_f, self.c_tg = constants
        self.eps = eps
        self.n = flux_space.n_dofs
        nc = mesh.n_cells
        nq = len(rw)
        nloc = flux_space.dof_map.shape[1]
        self.dy = np.empty((nc, nq, nloc))
        self.g0 = np.empty((nc, nq))
        self.dsq = np.empty((nc, nq))
        self.wdet = np.empty((nc, nq))
        mass_blocks = []
        r0 = np.zeros(self.n)
        for ch in _chunks(nc, 8192):
            cells = np.arange(ch.start, ch.stop)
            dm = flux_space.dof_map[ch]
            pts = map_points(mesh, rp, geo, cells)
            Y, DY = flux_basis(flux_space, rp, geo, cells, rt)
            gv = fem.eval_field_grad(v, rp, geo, cells)
            vv = fem.eval_field(v, rp, geo, cells)
            F = vector_at(spec.drift, pts, mesh.dim)
            divF = scalar_at(spec.drift_div, pts)
            lam = scalar_at(spec.reaction, pts)
            fv = scalar_at(spec.rhs, pts)
            wdet = rw[None, :] * geo["detJ"][ch][:, None]
            self.dy[ch] = DY
            self.dsq[ch] = lam + 0.5 * divF
            self.wdet[ch] = wdet
            self.g0[ch] = fv - np.einsum("cqi,cqi->cq", F, gv) \
                - (divF + lam) * vv
            mass_blocks.append(_scatter(
                dm, np.einsum("cqai,cqbi,cq->cab", Y, Y, wdet), self.n))
            np.add.at(r0, dm.ravel(),
                      np.einsum("cqai,cqi,cq->ca", Y, gv, wdet).ravel())
        self.mass = sum(mass_blocks).tocsr()
        self.r0 = r0
        dm = flux_space.dof_map
        self.rows = np.repeat(dm, nloc, axis=1).ravel()
        self.cols = np.repeat(dm[:, None, :], nloc, axis=1).ravel()
        self.dmflat = dm.ravel()
        self._boundary_tabs(v, spec, flux_space, geo, rt)

    def _boundary_tabs(self, v, spec, flux_space, geo, rt):
        self.btabs = None
        mesh = flux_space.mesh
        tags = estimator_boundary_tags(spec)
        if not tags:
            return
        fids, _, _, _ = fem.boundary_facet_info(mesh, tags)
        if len(fids) == 0:
            return
        fq = facet_quadrature(mesh, fids, spec.quadrature_degree)
        adj, ref, nrm = fq["adj"], fq["ref"], fq["normal"]
        F = vector_at(spec.drift, fq["points"], mesh.dim)
        fn = np.einsum("fqi,fi->fq", F, nrm)
        gdata = scalar_at(spec.neumann_data if spec.bc_layout == MIXED
                          else spec.robin_data, fq["points"])
        yn, gG, dms = [], [], []
        for f in range(len(adj)):
            c = np.array([adj[f]])
            Yc, _ = flux_basis(flux_space, ref[f], geo, c, rt)
            yn.append(np.einsum("qki,i->qk", Yc[0], nrm[f]))
            vv = fem.eval_field(v, ref[f], geo, c)[0]
            gG.append(fn[f] * vv - gdata[f])
            dms.append(flux_space.dof_map[adj[f]])
        self.btabs = {"yn": yn, "gG": gG, "dms": dms, "chi2": -0.5 * fn,
                      "meas": fq["measure"], "w": fq["weights"]}

    def system(self, beta, zeta, mu, theta):
        """Assemble the normal equations at the given sweep parameters.

        mu is a per-volume-quadrature-point array (or scalar), theta a
        per-boundary-quadrature-point array (or scalar); both must match
        the rules induced by spec.quadrature_degree.
        """
        eps = self.eps
        kmass = (1.0 + beta) / eps
        keq = (1 + 1 / beta) * (1 + zeta) * self.c_f ** 2 / eps
        mu_arr = np.asarray(mu, float)
        mu_b = mu_arr if mu_arr.ndim else np.broadcast_to(mu_arr,
                                                          self.dsq.shape)
        pos = self.dsq > 1e-12
        w_eq = keq * (1 - mu_b) ** 2 \
            + np.where(pos, mu_b ** 2 / np.where(pos, self.dsq, 1.0), 0.0)
        ww = w_eq * self.wdet
        loc = np.matmul((self.dy * ww[:, :, None]).transpose(0, 2, 1),
                        self.dy)
        mat = kmass * self.mass + sp.coo_matrix(
            (loc.ravel(), (self.rows, self.cols)),
            shape=(self.n, self.n)).tocsr()
        rhs = kmass * eps * self.r0.copy()
        np.subtract.at(rhs, self.dmflat,
                       np.einsum("cq,cqa->ca", ww * self.g0,
                                 self.dy).ravel())
        if self.btabs is not None:
            bt = self.btabs
            chi2, w, meas = bt["chi2"], bt["w"], bt["meas"]
            theta_arr = np.asarray(theta, float)
            th = theta_arr if theta_arr.ndim \
                else np.broadcast_to(theta_arr, chi2.shape)
            ktr = (1 + 1 / beta) * (1 + 1 / zeta) * self.c_tg ** 2 / eps
            bpos = chi2 > 1e-12
            w_g = ktr * (1 - th) ** 2 \
                + np.where(bpos, th ** 2 / np.where(bpos, chi2, 1.0), 0.0)
            rows, cols, dat = [], [], []
            for f in range(len(bt["dms"])):
                Yn, dm = bt["yn"][f], bt["dms"][f]
                loc = meas[f] * np.einsum("q,qa,qb,q->ab", w, Yn, Yn, w_g[f])
                rows.append(np.repeat(dm, len(dm)))
                cols.append(np.tile(dm, len(dm)))
                dat.append(loc.ravel())
                np.add.at(rhs, dm, meas[f] * np.einsum(
                    "q,qa,q,q->a", w, Yn, w_g[f], bt["gG"][f]))
            mat = (mat + sp.coo_matrix(
                (np.concatenate(dat), (np.concatenate(rows),
                                       np.concatenate(cols))),
                shape=(self.n, self.n)).tocsr()).tocsr()
        system = LinearSystem(mat, rhs, self.n)
        k = min(self.n, 200)
        _definiteness_probe(system.matrix[:k, :k])
        return system


def assemble_majorant_flux_system(v, spec, flux_space, beta, zeta, mu, theta,
                                  constants=None):
    """Normal equations minimizing the upper-bound quadratic over the flux."""
    op = MajorantFluxOperator(v, spec, flux_space, constants)
    return op.system(beta, zeta, mu, theta)
