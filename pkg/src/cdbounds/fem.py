"""Finite element spaces, field evaluation, integration, embedding constants.

Lagrange P1/P2/P3 on intervals and triangles, the first-order Raviart-Thomas
space for flux reconstruction (its 1D counterpart is the continuous quadratic
space), and a vector Lagrange alternative. All evaluation is vectorized over
cells.
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import eigh

from .errors import UnsupportedDomain
from .mesh import DIRICHLET, NEUMANN, ROBIN, Mesh, _cell_edges
from .quadrature import gauss01, reference_rule

LAGRANGE = "lagrange"
LAGRANGE_VEC = "lagrange_vec"
RAVIART_THOMAS = "raviart_thomas"

NONE = "none"
ZERO_ON_DIRICHLET = "zero_on_dirichlet"
ZERO_MEAN = "zero_mean"


# ---------------------------------------------------------------------------
# Lagrange bases as barycentric monomials: lists of (coef, exponent tuple)

def _bary_basis(dim, degree):
    if dim == 1:
        if degree == 1:
            return [[(1.0, (1, 0))], [(1.0, (0, 1))]]
        if degree == 2:
            return [
                [(2.0, (2, 0)), (-1.0, (1, 0))],
                [(2.0, (0, 2)), (-1.0, (0, 1))],
                [(4.0, (1, 1))],
            ]
        if degree == 3:
            v = lambda i: [(4.5, tuple(3 * e for e in i)),
                           (-4.5, tuple(2 * e for e in i)),
                           (1.0, i)]
            return [
                v((1, 0)), v((0, 1)),
                [(13.5, (2, 1)), (-4.5, (1, 1))],
                [(13.5, (1, 2)), (-4.5, (1, 1))],
            ]
    if dim == 2:
        e = {0: (1, 0, 0), 1: (0, 1, 0), 2: (0, 0, 1)}
        if degree == 1:
            return [[(1.0, e[i])] for i in range(3)]
        if degree == 2:
            out = [[(2.0, tuple(2 * a for a in e[i])), (-1.0, e[i])] for i in range(3)]
            for i, j in ((0, 1), (1, 2), (2, 0)):
                out.append([(4.0, tuple(a + b for a, b in zip(e[i], e[j])))])
            return out
        if degree == 3:
            out = [[(4.5, tuple(3 * a for a in e[i])),
                    (-4.5, tuple(2 * a for a in e[i])),
                    (1.0, e[i])] for i in range(3)]
            for i, j in ((0, 1), (1, 2), (2, 0)):
                ij = tuple(a + b for a, b in zip(e[i], e[j]))
                out.append([(13.5, tuple(a + b for a, b in zip(ij, e[i]))),
                            (-4.5, ij)])
                out.append([(13.5, tuple(a + b for a, b in zip(ij, e[j]))),
                            (-4.5, ij)])
            out.append([(27.0, (1, 1, 1))])
            return out
    raise ValueError(f"no Lagrange basis for dim={dim} degree={degree}")


def _ref_nodes(dim, degree):
    if dim == 1:
        return {1: [[0.0], [1.0]],
                2: [[0.0], [1.0], [0.5]],
                3: [[0.0], [1.0], [1 / 3], [2 / 3]]}[degree]
    verts = [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)]
    nodes = list(verts)
    if degree >= 2:
        for i, j in ((0, 1), (1, 2), (2, 0)):
            a, b = np.array(verts[i]), np.array(verts[j])
            if degree == 2:
                nodes.append(tuple(0.5 * (a + b)))
            else:
                nodes.append(tuple(a + (b - a) / 3))
                nodes.append(tuple(a + 2 * (b - a) / 3))
    if degree == 3:
        nodes.append((1 / 3, 1 / 3))
    return [list(n) for n in nodes]


_LAM_GRAD = {1: np.array([[-1.0], [1.0]]),
             2: np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])}


def tabulate_lagrange(dim, degree, pts, hessian=False):
    """Values (nb,np), ref gradients (nb,np,dim), optionally ref hessians."""
    pts = np.asarray(pts, float)
    lam = np.empty((dim + 1, len(pts)))
    lam[0] = 1.0 - pts.sum(axis=1)
    for k in range(dim):
        lam[k + 1] = pts[:, k]
    L = _LAM_GRAD[dim]
    basis = _bary_basis(dim, degree)
    nb = len(basis)
    vals = np.zeros((nb, len(pts)))
    grads = np.zeros((nb, len(pts), dim))
    hess = np.zeros((nb, len(pts), dim, dim)) if hessian else None

    def lam_pow(exps):
        out = np.ones(len(pts))
        for i, p in enumerate(exps):
            if p:
                out = out * lam[i] ** p
        return out

    for b, monos in enumerate(basis):
        for coef, exps in monos:
            vals[b] += coef * lam_pow(exps)
            for i, p in enumerate(exps):
                if p == 0:
                    continue
                de = list(exps)
                de[i] -= 1
                base = coef * p * lam_pow(de)
                grads[b] += base[:, None] * L[i]
                if hessian:
                    for j, q in enumerate(de):
                        if q == 0:
                            continue
                        dde = list(de)
                        dde[j] -= 1
                        term = coef * p * q * lam_pow(dde)
                        hess[b] += term[:, None, None] * np.einsum(
                            "k,l->kl", L[i], L[j])
    return (vals, grads, hess) if hessian else (vals, grads)


# ---------------------------------------------------------------------------
# Spaces

@dataclass(frozen=True)
class FeSpace:
    mesh: Mesh
    family: str
    degree: int
    constraint: str
    dof_map: np.ndarray
    n_dofs: int
    dirichlet_dofs: np.ndarray
    edge_ids: np.ndarray = None  # per-cell canonical edge ids (2D)

    @property
    def n_components(self):
        if self.family == LAGRANGE:
            return 1
        return max(self.mesh.dim, 1)


def _lagrange_dof_map(mesh, degree):
    nv = mesh.n_vertices
    cells = mesh.cells
    if mesh.dim == 1:
        if degree == 1:
            return cells.copy(), nv, None
        ni = degree - 1
        extra = nv + ni * np.arange(mesh.n_cells)[:, None] + np.arange(ni)
        return np.hstack([cells, extra]), nv + ni * mesh.n_cells, None
    edges, cell_eids = _cell_edges(cells)
    ne = len(edges)
    if degree == 1:
        return cells.copy(), nv, cell_eids
    if degree == 2:
        return np.hstack([cells, nv + cell_eids]), nv + ne, cell_eids
    # degree 3: two dofs per edge ordered along the global edge direction,
    # one interior dof per cell
    dm = np.empty((mesh.n_cells, 10), np.int64)
    dm[:, :3] = cells
    for k, (i, j) in enumerate(((0, 1), (1, 2), (2, 0))):
        eid = cell_eids[:, k]
        fwd = cells[:, i] < cells[:, j]
        lo = nv + 2 * eid
        dm[:, 3 + 2 * k] = np.where(fwd, lo, lo + 1)
        dm[:, 4 + 2 * k] = np.where(fwd, lo + 1, lo)
    dm[:, 9] = nv + 2 * ne + np.arange(mesh.n_cells)
    return dm, nv + 2 * ne + mesh.n_cells, cell_eids


def _dirichlet_dofs(mesh, degree, dof_map, tags):
    sel = np.isin(mesh.btags, tags)
    facets = mesh.bfacets[sel]
    if facets.size == 0:
        return np.empty(0, np.int64)
    dofs = [facets[:, 0]]
    if mesh.dim == 2:
        dofs.append(facets[:, 1])
        if degree >= 2:
            # collect edge dofs sitting on tagged boundary edges
            pairs = np.sort(facets, axis=1)
            edges, cell_eids = _cell_edges(mesh.cells)
            mult = edges.max() + 2
            eid = np.searchsorted(edges[:, 0] * mult + edges[:, 1],
                                  pairs[:, 0] * mult + pairs[:, 1])
            nv = mesh.n_vertices
            if degree == 2:
                dofs.append(nv + eid)
            else:
                dofs.append(nv + 2 * eid)
                dofs.append(nv + 2 * eid + 1)
    return np.unique(np.concatenate(dofs))


def lagrange_space(mesh, degree, constraint=NONE, dirichlet_tags=(DIRICHLET,)):
    dm, nd, eids = _lagrange_dof_map(mesh, degree)
    dd = (_dirichlet_dofs(mesh, degree, dm, dirichlet_tags)
          if constraint == ZERO_ON_DIRICHLET else np.empty(0, np.int64))
    return FeSpace(mesh, LAGRANGE, degree, constraint, dm, nd, dd, eids)


def vector_lagrange_space(mesh, degree):
    dm, nd, eids = _lagrange_dof_map(mesh, degree)
    nloc = dm.shape[1]
    vdm = np.empty((mesh.n_cells, 2 * nloc), np.int64)
    vdm[:, 0::2] = 2 * dm
    vdm[:, 1::2] = 2 * dm + 1
    return FeSpace(mesh, LAGRANGE_VEC, degree, NONE, vdm, 2 * nd,
                   np.empty(0, np.int64), eids)


def rt_space(mesh):
    """First-order Raviart-Thomas flux space; continuous P2 on intervals."""
    if mesh.dim == 1:
        # on intervals the space is continuous P2; store the Lagrange degree
        dm, nd, _ = _lagrange_dof_map(mesh, 2)
        return FeSpace(mesh, RAVIART_THOMAS, 2, NONE, dm, nd,
                       np.empty(0, np.int64), None)
    edges, cell_eids = _cell_edges(mesh.cells)
    ne = len(edges)
    nc = mesh.n_cells
    dm = np.empty((nc, 8), np.int64)
    dm[:, 0:6:2] = 2 * cell_eids
    dm[:, 1:6:2] = 2 * cell_eids + 1
    dm[:, 6] = 2 * ne + 2 * np.arange(nc)
    dm[:, 7] = 2 * ne + 2 * np.arange(nc) + 1
    return FeSpace(mesh, RAVIART_THOMAS, 1, NONE, dm, 2 * ne + 2 * nc,
                   np.empty(0, np.int64), cell_eids)


def flux_space(mesh, kind="rt1"):
    if kind == "rt1":
        return rt_space(mesh)
    if kind in ("p2", "p3"):
        deg = int(kind[1])
        if mesh.dim == 1:
            dm, nd, _ = _lagrange_dof_map(mesh, deg)
            return FeSpace(mesh, RAVIART_THOMAS, deg, NONE, dm, nd,
                           np.empty(0, np.int64), None)
        return vector_lagrange_space(mesh, deg)
    raise ValueError(f"unknown flux space kind {kind!r}")


@dataclass
class DiscreteField:
    space: FeSpace
    coefficients: np.ndarray


@dataclass(frozen=True)
class EmbeddingConstants:
    c_friedrichs: float
    c_poincare: float
    c_trace: float


# ---------------------------------------------------------------------------
# Geometry

def affine_geometry(mesh):
    """Per-cell Jacobians, inverse transposes, measures."""
    v = mesh.vertices[mesh.cells]
    if mesh.dim == 1:
        J = (v[:, 1] - v[:, 0])[:, :, None]
        detJ = J[:, 0, 0]
        invJT = (1.0 / detJ)[:, None, None]
        return {"v0": v[:, 0], "J": J, "detJ": detJ, "invJT": invJT}
    J = np.stack([v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]], axis=2)
    detJ = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
    inv = np.empty_like(J)
    inv[:, 0, 0] = J[:, 1, 1]
    inv[:, 0, 1] = -J[:, 0, 1]
    inv[:, 1, 0] = -J[:, 1, 0]
    inv[:, 1, 1] = J[:, 0, 0]
    inv /= detJ[:, None, None]
    invJT = np.transpose(inv, (0, 2, 1))
    return {"v0": v[:, 0], "J": J, "detJ": detJ, "invJT": invJT}


def map_points(mesh, ref_pts, geo=None, cells=None):
    """Global coordinates (nc, np, dim) of reference points on each cell."""
    geo = geo or affine_geometry(mesh)
    v0, J = geo["v0"], geo["J"]
    if cells is not None:
        v0, J = v0[cells], J[cells]
    return v0[:, None, :] + np.einsum("cij,pj->cpi", J, np.asarray(ref_pts, float))


# ---------------------------------------------------------------------------
# Raviart-Thomas cell bases (2D)

_RT_IJ = ((0, 1), (1, 2), (2, 0))


def _rt_mono_vals(xh):
    """Monomial fields at scaled-local points (..., 2) -> (..., 8, 2)."""
    x, y = xh[..., 0], xh[..., 1]
    z = np.zeros_like(x)
    o = np.ones_like(x)
    mx = np.stack([o, x, y, z, z, z, x * x, x * y], axis=-1)
    my = np.stack([z, z, z, o, x, y, x * y, y * y], axis=-1)
    return np.stack([mx, my], axis=-1)


def _rt_mono_divs(xh, h):
    x, y = xh[..., 0], xh[..., 1]
    z = np.zeros_like(x)
    o = np.ones_like(x)
    return np.stack([z, o, z, z, z, o, 3 * x, 3 * y], axis=-1) / h[..., None]


def rt_cell_setup(mesh):
    """Per-cell dual-basis inversion; returns coefficients and local frames."""
    v = mesh.vertices[mesh.cells]
    centers = v.mean(axis=1)
    from .mesh import cell_diameters
    h = cell_diameters(mesh)
    nc = mesh.n_cells
    D = np.zeros((nc, 8, 8))
    gx, gw = gauss01(3)
    for k, (i, j) in enumerate(_RT_IJ):
        a, b = v[:, i], v[:, j]
        ga, gb = mesh.cells[:, i], mesh.cells[:, j]
        fwd = ga < gb
        lo = np.where(fwd[:, None], a, b)
        hi = np.where(fwd[:, None], b, a)
        tang = hi - lo
        elen = np.linalg.norm(tang, axis=1)
        nrm = np.stack([tang[:, 1], -tang[:, 0]], axis=1) / elen[:, None]
        pts = lo[:, None, :] + gx[None, :, None] * tang[:, None, :]
        xh = (pts - centers[:, None, :]) / h[:, None, None]
        mono = _rt_mono_vals(xh)                       # (nc, nq, 8, 2)
        mn = np.einsum("cqmi,ci->cqm", mono, nrm)
        psi_lo, psi_hi = 1.0 - gx, gx
        w = gw * 1.0
        D[:, 2 * k] = np.einsum("q,cqm->cm", w * psi_lo, mn) * elen[:, None]
        D[:, 2 * k + 1] = np.einsum("q,cqm->cm", w * psi_hi, mn) * elen[:, None]
    rp, rw = reference_rule(2, 3)
    geo = affine_geometry(mesh)
    pts = map_points(mesh, rp, geo)
    xh = (pts - centers[:, None, :]) / h[:, None, None]
    mono = _rt_mono_vals(xh)
    area = geo["detJ"]
    # interior dofs are reference-cell averages; interpolate() must match
    for comp in (0, 1):
        D[:, 6 + comp] = np.einsum("q,cqm->cm", rw, mono[..., comp])
    C = np.linalg.inv(D)
    return {"C": C, "centers": centers, "h": h}


# ---------------------------------------------------------------------------
# Field evaluation (vectorized over cells)

def eval_field(field, ref_pts, geo=None, cells=None, rt=None):
    sp = field.space
    mesh = sp.mesh
    dm = sp.dof_map if cells is None else sp.dof_map[cells]
    coefs = field.coefficients[dm]                      # (nc, nloc)
    if sp.family == LAGRANGE:
        vals, _ = tabulate_lagrange(mesh.dim, sp.degree, ref_pts)
        return np.einsum("cb,bp->cp", coefs, vals)
    if sp.family == LAGRANGE_VEC:
        vals, _ = tabulate_lagrange(mesh.dim, sp.degree, ref_pts)
        out = np.empty((coefs.shape[0], vals.shape[1], 2))
        out[..., 0] = np.einsum("cb,bp->cp", coefs[:, 0::2], vals)
        out[..., 1] = np.einsum("cb,bp->cp", coefs[:, 1::2], vals)
        return out
    if mesh.dim == 1:
        vals, _ = tabulate_lagrange(1, sp.degree, ref_pts)
        return np.einsum("cb,bp->cp", coefs, vals)[..., None]
    rt = rt or rt_cell_setup(mesh)
    C, centers, h = rt["C"], rt["centers"], rt["h"]
    if cells is not None:
        C, centers, h = C[cells], centers[cells], h[cells]
    pts = map_points(mesh, ref_pts, geo, cells)
    xh = (pts - centers[:, None, :]) / h[:, None, None]
    mono = _rt_mono_vals(xh)                            # (nc, np, 8, 2)
    mcoef = np.einsum("cmk,ck->cm", C, coefs)
    return np.einsum("cqmi,cm->cqi", mono, mcoef)


def eval_field_grad(field, ref_pts, geo=None, cells=None):
    sp = field.space
    if sp.family not in (LAGRANGE,) and not (sp.family == RAVIART_THOMAS and sp.mesh.dim == 1):
        raise ValueError("gradient evaluation is for scalar fields")
    mesh = sp.mesh
    geo = geo or affine_geometry(mesh)
    dm = sp.dof_map if cells is None else sp.dof_map[cells]
    invJT = geo["invJT"] if cells is None else geo["invJT"][cells]
    coefs = field.coefficients[dm]
    _, grads = tabulate_lagrange(mesh.dim, sp.degree, ref_pts)
    gref = np.einsum("cb,bpk->cpk", coefs, grads)
    return np.einsum("cik,cpk->cpi", invJT, gref)


def eval_field_div(field, ref_pts, geo=None, cells=None, rt=None):
    sp = field.space
    mesh = sp.mesh
    geo = geo or affine_geometry(mesh)
    if sp.family == RAVIART_THOMAS and mesh.dim == 1:
        return eval_field_grad(field, ref_pts, geo, cells)[..., 0]
    if sp.family == LAGRANGE_VEC:
        dm = sp.dof_map if cells is None else sp.dof_map[cells]
        invJT = geo["invJT"] if cells is None else geo["invJT"][cells]
        coefs = field.coefficients[dm]
        _, grads = tabulate_lagrange(mesh.dim, sp.degree, ref_pts)
        gx = np.einsum("cb,bpk->cpk", coefs[:, 0::2], grads)
        gy = np.einsum("cb,bpk->cpk", coefs[:, 1::2], grads)
        return (np.einsum("ck,cpk->cp", invJT[:, 0, :], gx)
                + np.einsum("ck,cpk->cp", invJT[:, 1, :], gy))
    if sp.family == RAVIART_THOMAS:
        rt = rt or rt_cell_setup(mesh)
        C, centers, h = rt["C"], rt["centers"], rt["h"]
        if cells is not None:
            C, centers, h = C[cells], centers[cells], h[cells]
        dm = sp.dof_map if cells is None else sp.dof_map[cells]
        coefs = field.coefficients[dm]
        pts = map_points(mesh, ref_pts, geo, cells)
        xh = (pts - centers[:, None, :]) / h[:, None, None]
        divs = _rt_mono_divs(xh, h[:, None])
        mcoef = np.einsum("cmk,ck->cm", C, coefs)
        return np.einsum("cqm,cm->cq", divs, mcoef)
    raise ValueError("divergence evaluation is for flux fields")


def eval_field_laplacian(field, ref_pts, geo=None, cells=None):
    sp = field.space
    mesh = sp.mesh
    geo = geo or affine_geometry(mesh)
    dm = sp.dof_map if cells is None else sp.dof_map[cells]
    invJT = geo["invJT"] if cells is None else geo["invJT"][cells]
    coefs = field.coefficients[dm]
    _, _, hess = tabulate_lagrange(mesh.dim, sp.degree, ref_pts, hessian=True)
    href = np.einsum("cb,bpkl->cpkl", coefs, hess)
    hglob = np.einsum("cik,cpkl,cjl->cpij", invJT, href, invJT)
    return np.trace(hglob, axis1=2, axis2=3)


def evaluate(field, cell, bary):
    """Point evaluation from barycentric coordinates on one cell."""
    bary = np.asarray(bary, float)
    ref = bary[1:].reshape(1, -1)
    out = eval_field(field, ref, cells=np.array([cell]))
    val = out[0, 0]
    return float(val) if np.ndim(val) == 0 else np.asarray(val)


# ---------------------------------------------------------------------------
# Interpolation

def dof_points(space):
    """Nodal coordinates per scalar dof (vector spaces share node layout)."""
    mesh = space.mesh
    nodes = np.asarray(_ref_nodes(mesh.dim, space.degree))
    geo = affine_geometry(mesh)
    pts = map_points(mesh, nodes, geo)
    if space.family == LAGRANGE_VEC:
        dm, nd = space.dof_map[:, 0::2] // 2, space.n_dofs // 2
    else:
        dm, nd = space.dof_map, space.n_dofs
    out = np.empty((nd, mesh.dim))
    out[dm.ravel()] = pts.reshape(-1, mesh.dim)
    return out


def interpolate(space, fn):
    """Nodal (Lagrange) or moment (RT) interpolation of a callable."""
    if space.family == LAGRANGE or (space.family == RAVIART_THOMAS
                                    and space.mesh.dim == 1):
        pts = dof_points(space)
        vals = np.asarray(fn(pts), float)
        if vals.ndim == 2:
            vals = vals[:, 0]
        return DiscreteField(space, vals)
    if space.family == LAGRANGE_VEC:
        pts = dof_points(space)
        vals = np.asarray(fn(pts), float)
        coefs = np.empty(space.n_dofs)
        coefs[0::2], coefs[1::2] = vals[:, 0], vals[:, 1]
        return DiscreteField(space, coefs)
    mesh = space.mesh
    v = mesh.vertices[mesh.cells]
    coefs = np.zeros(space.n_dofs)
    gx, gw = gauss01(4)
    for k, (i, j) in enumerate(_RT_IJ):
        ga, gb = mesh.cells[:, i], mesh.cells[:, j]
        fwd = ga < gb
        lo = np.where(fwd[:, None], v[:, i], v[:, j])
        hi = np.where(fwd[:, None], v[:, j], v[:, i])
        tang = hi - lo
        elen = np.linalg.norm(tang, axis=1)
        nrm = np.stack([tang[:, 1], -tang[:, 0]], axis=1) / elen[:, None]
        pts = lo[:, None, :] + gx[None, :, None] * tang[:, None, :]
        g = np.asarray(fn(pts.reshape(-1, 2)), float).reshape(len(v), len(gx), 2)
        gn = np.einsum("cqi,ci->cq", g, nrm)
        coefs[space.dof_map[:, 2 * k]] = elen * np.einsum("q,cq->c", gw * (1 - gx), gn)
        coefs[space.dof_map[:, 2 * k + 1]] = elen * np.einsum("q,cq->c", gw * gx, gn)
    rp, rw = reference_rule(2, 4)
    geo = affine_geometry(mesh)
    pts = map_points(mesh, rp, geo)
    g = np.asarray(fn(pts.reshape(-1, 2)), float).reshape(mesh.n_cells, len(rw), 2)
    for comp in (0, 1):
        coefs[space.dof_map[:, 6 + comp]] = np.einsum("q,cq->c", rw, g[..., comp])
    return DiscreteField(space, coefs)


# ---------------------------------------------------------------------------
# Integration

def integrate(mesh, fn, degree=8):
    """Integral over the mesh of fn(points (nc,nq,dim)) -> (nc,nq)."""
    rp, rw = reference_rule(mesh.dim, degree)
    geo = affine_geometry(mesh)
    pts = map_points(mesh, rp, geo)
    vals = np.asarray(fn(pts), float)
    return float(np.einsum("cq,q,c->", vals, rw, geo["detJ"]))


def boundary_facet_info(mesh, tags=None):
    """Facet ids, adjacent cells, outward normals, measures for tagged facets."""
    if tags is None:
        fids = np.arange(len(mesh.bfacets))
    else:
        fids = np.flatnonzero(np.isin(mesh.btags, np.atleast_1d(tags)))
    facets = mesh.bfacets[fids]
    if mesh.dim == 1:
        vid = facets[:, 0]
        adj = np.empty(len(fids), np.int64)
        nrm = np.empty((len(fids), 1))
        for k, vtx in enumerate(vid):
            c0 = np.flatnonzero(mesh.cells[:, 0] == vtx)
            c1 = np.flatnonzero(mesh.cells[:, 1] == vtx)
            if c0.size and not c1.size:
                adj[k], nrm[k, 0] = c0[0], -1.0
            elif c1.size and not c0.size:
                adj[k], nrm[k, 0] = c1[0], 1.0
            else:
                raise ValueError("facet vertex is not a boundary endpoint")
        meas = np.ones(len(fids))
        return fids, adj, nrm, meas
    edges, cell_eids = _cell_edges(mesh.cells)
    mult = edges.max() + 2
    keys = edges[:, 0] * mult + edges[:, 1]
    pairs = np.sort(facets, axis=1)
    eid = np.searchsorted(keys, pairs[:, 0] * mult + pairs[:, 1])
    owner = np.full(len(edges), -1, np.int64)
    for k in range(3):
        owner[cell_eids[:, k]] = np.arange(mesh.n_cells)
    adj = owner[eid]
    a = mesh.vertices[facets[:, 0]]
    b = mesh.vertices[facets[:, 1]]
    tang = b - a
    meas = np.linalg.norm(tang, axis=1)
    nrm = np.stack([tang[:, 1], -tang[:, 0]], axis=1) / meas[:, None]
    # orient outward: normal must point away from the cell centroid
    cent = mesh.vertices[mesh.cells[adj]].mean(axis=1)
    flip = np.einsum("fi,fi->f", 0.5 * (a + b) - cent, nrm) < 0
    nrm[flip] *= -1
    return fids, adj, nrm, meas


def facet_quadrature(mesh, fids, degree=8):
    """Global points, cell-reference points, and weights on boundary facets."""
    geo = affine_geometry(mesh)
    _, adj, nrm, meas = boundary_facet_info(mesh)
    adj, nrm, meas = adj[fids], nrm[fids], meas[fids]
    facets = mesh.bfacets[fids]
    if mesh.dim == 1:
        pts = mesh.vertices[facets[:, 0]][:, None, :]
        w = np.ones(1)
    else:
        gx, gw = gauss01(max(1, (degree + 2) // 2))
        a = mesh.vertices[facets[:, 0]][:, None, :]
        b = mesh.vertices[facets[:, 1]][:, None, :]
        pts = a + gx[None, :, None] * (b - a)
        w = gw
    v0 = geo["v0"][adj][:, None, :]
    invJ = np.transpose(geo["invJT"][adj], (0, 2, 1))
    ref = np.einsum("cij,cpj->cpi", invJ, pts - v0)
    return {"adj": adj, "normal": nrm, "measure": meas, "points": pts,
            "ref": ref, "weights": w}


def integrate_boundary(mesh, fn, degree=8, tags=None):
    fids, adj, nrm, meas = boundary_facet_info(mesh, tags)
    if len(fids) == 0:
        return 0.0
    fq = facet_quadrature(mesh, fids, degree)
    vals = np.asarray(fn(fq["points"], fq["normal"]), float)
    return float(np.einsum("fq,q,f->", vals, fq["weights"], fq["measure"]))


def field_mean(field, degree=8):
    mesh = field.space.mesh
    rp, rw = reference_rule(mesh.dim, degree)
    geo = affine_geometry(mesh)
    vals = eval_field(field, rp, geo)
    vol = float(np.abs(geo["detJ"]).sum()) if mesh.dim == 1 else float(geo["detJ"].sum())
    return float(np.einsum("cq,q,c->", vals, rw, geo["detJ"])) / vol


# ---------------------------------------------------------------------------
# Embedding constants

def domain_box(mesh):
    lo = mesh.vertices.min(axis=0)
    hi = mesh.vertices.max(axis=0)
    from .mesh import cell_measures
    vol = float(cell_measures(mesh).sum())
    if abs(vol - np.prod(hi - lo)) > 1e-10 * max(np.prod(hi - lo), 1.0):
        raise UnsupportedDomain("mesh does not tile an axis-aligned box")
    return lo, hi


def _axis_tag_layout(mesh):
    """Which of {DIRICHLET} tags sit on each box face; faces keyed by axis/side."""
    lo, hi = domain_box(mesh)
    _, _, nrm, _ = boundary_facet_info(mesh)
    out = {}
    for axis in range(mesh.dim):
        for side, sgn in ((0, -1.0), (1, 1.0)):
            sel = np.abs(nrm[:, axis] - sgn) < 1e-9
            tags = set(int(t) for t in mesh.btags[sel])
            out[(axis, side)] = tags
    return out


def friedrichs_constant(mesh):
    """1/sqrt of the first eigenvalue of the Laplacian with the mesh's
    essential boundary; np.inf when no Dirichlet part exists."""
    lo, hi = domain_box(mesh)
    L = hi - lo
    layout = _axis_tag_layout(mesh)
    lam = 0.0
    for axis in range(mesh.dim):
        d0 = DIRICHLET in layout[(axis, 0)]
        d1 = DIRICHLET in layout[(axis, 1)]
        if d0 and d1:
            lam += (np.pi / L[axis]) ** 2
        elif d0 or d1:
            lam += (np.pi / (2 * L[axis])) ** 2
    return float(1.0 / np.sqrt(lam)) if lam > 0 else np.inf


def poincare_constant(mesh):
    lo, hi = domain_box(mesh)
    return float((hi - lo).max() / np.pi)


def _p1_matrices(mesh, tags):
    """P1 stiffness, mass, and boundary mass on tagged facets (dense)."""
    geo = affine_geometry(mesh)
    rp, rw = reference_rule(mesh.dim, 2)
    vals, grads = tabulate_lagrange(mesh.dim, 1, rp)
    g = np.einsum("cik,bpk->cbpi", geo["invJT"], grads)
    K = np.einsum("capi,cbpi,p,c->cab", g, g, rw, geo["detJ"])
    M = np.einsum("ap,bp,p,c->cab", vals, vals, rw, geo["detJ"])
    n = mesh.n_vertices
    Kd = np.zeros((n, n))
    Md = np.zeros((n, n))
    cells = mesh.cells
    for a in range(mesh.dim + 1):
        for b in range(mesh.dim + 1):
            np.add.at(Kd, (cells[:, a], cells[:, b]), K[:, a, b])
            np.add.at(Md, (cells[:, a], cells[:, b]), M[:, a, b])
    B = np.zeros((n, n))
    fids = np.flatnonzero(np.isin(mesh.btags, np.atleast_1d(tags)))
    if mesh.dim == 1:
        for f in fids:
            v = mesh.bfacets[f, 0]
            B[v, v] += 1.0
    else:
        facets = mesh.bfacets[fids]
        a = mesh.vertices[facets[:, 0]]
        b = mesh.vertices[facets[:, 1]]
        elen = np.linalg.norm(b - a, axis=1)
        for (va, vb), le in zip(facets, elen):
            B[va, va] += le / 3
            B[vb, vb] += le / 3
            B[va, vb] += le / 6
            B[vb, va] += le / 6
    return Kd, Md, B


def trace_constant(mesh, tags, resolution=None):
    """Largest boundary-to-H1 norm ratio from a discrete eigenproblem on a
    structured probe mesh of the same box, padded by 5 percent."""
    from .mesh import interval_mesh, rectangle_mesh
    lo, hi = domain_box(mesh)
    if mesh.dim == 1:
        n = resolution or 128
        ends = mesh.vertices[mesh.bfacets[:, 0], 0]
        probe_tags = tuple(
            int(mesh.btags[np.argmin(np.abs(ends - c))]) for c in (lo[0], hi[0]))
        probe = interval_mesh(n, lo[0], hi[0], tags=probe_tags)
    else:
        n = resolution or 24
        layout = _axis_tag_layout(mesh)

        def tagger(m):
            for axis in range(2):
                for side, pos in ((0, lo[axis]), (1, hi[axis])):
                    if abs(m[axis] - pos) < 1e-12:
                        return sorted(layout[(axis, side)])[0]
            return NEUMANN

        probe = rectangle_mesh(n, n, lo[0], hi[0], lo[1], hi[1], tag=tagger)
    K, M, B = _p1_matrices(probe, tags)
    w = eigh(B, K + M, eigvals_only=True)
    return float(1.05 * np.sqrt(max(w.max(), 0.0)))


def embedding_constants(mesh, bc_layout="full_dirichlet"):
    domain_box(mesh)
    cf = friedrichs_constant(mesh)
    cp = poincare_constant(mesh)
    if bc_layout == "robin":
        ct = trace_constant(mesh, (ROBIN,))
    elif bc_layout == "mixed":
        tags = (NEUMANN, ROBIN)
        have = np.isin(mesh.btags, tags).any()
        ct = trace_constant(mesh, tags) if have else 0.0
    else:
        ct = trace_constant(mesh, (DIRICHLET,))
    return EmbeddingConstants(cf, cp, ct)


# ---------------------------------------------------------------------------
# Field snapshots

def save_field(field, path, mesh_path=None):
    with open(path, "w") as fh:
        fh.write("dof_index,value\n")
        for i, v in enumerate(field.coefficients):
            fh.write(f"{i},{v!r}\n")
    with open(str(path) + ".meta", "w") as fh:
        fh.write(f"family {field.space.family}\n")
        fh.write(f"degree {field.space.degree}\n")
        fh.write(f"constraint {field.space.constraint}\n")
        fh.write(f"mesh {mesh_path or ''}\n")


def load_field(space, path):
    vals = np.loadtxt(path, delimiter=",", skiprows=1)[:, 1]
    return DiscreteField(space, vals)
