"""Two-sided error bounds on the space-time cylinder.

The mesh discretizes Q_T = (x0,x1) x (0,T); coordinate 0 is space, coordinate 1
is time. The trial field v lives on the cylinder mesh, the auxiliary flux y is
a scalar Lagrange field approximating the spatial flux eps*v_x, and the
minorant test field eta is a richer Lagrange field on the same mesh.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import fem
from .assembly import (LinearSystem, _chunks, _definiteness_probe, _scatter,
                       check_incoming_flux, scalar_at, vector_at)
from .errors import (LambdaZeroWithMuOne, NoReference, NonMatchingSpaces,
                     RegularityViolated, UnsupportedDomain)
from .estimate_static import PARAM_LO, PARAM_HI, _clip, _require_richer
from .fem import (LAGRANGE, affine_geometry, boundary_facet_info, domain_box,
                  eval_field, eval_field_grad, facet_quadrature,
                  map_points, tabulate_lagrange, trace_constant)
from .linsolve import solve_system
from .mesh import DIRICHLET, NEUMANN, ROBIN, interval_mesh
from .quadrature import reference_rule

MU_OPT = "opt"
MU_ONE = "one"
FLUX_TAGS = (NEUMANN, ROBIN)


@dataclass
class SpaceTimeCertificate:
    majorant: float = None
    minorant: float = None
    error_upper_measure: float = None
    error_lower_measure: float = None
    alpha1: float = None
    alpha2: float = None
    alpha3: float = None
    beta: float = None
    gamma: float = None
    mu: np.ndarray = None
    eid: float = None
    indicators: np.ndarray = None
    parameters: dict = None
    history: list = field(default_factory=list)
    ieff_majorant: float = None
    ieff_minorant: float = None


def spacetime_flux_space(mesh, degree=2):
    """Scalar Lagrange ansatz for the spatial flux over the cylinder mesh."""
    return fem.lagrange_space(mesh, degree)


def _facet_sets(mesh, degree):
    """Boundary quadrature split into bottom, top, and lateral facets."""
    fids, _, nrm, _ = boundary_facet_info(mesh)
    fq = facet_quadrature(mesh, fids, degree)
    out = {}
    for name, keep in (("bottom", nrm[:, 1] < -0.5), ("top", nrm[:, 1] > 0.5),
                       ("lateral", np.abs(nrm[:, 1]) < 0.5)):
        if not keep.any():
            out[name] = None
            continue
        out[name] = {"adj": fq["adj"][keep], "normal": fq["normal"][keep],
                     "measure": fq["measure"][keep],
                     "points": fq["points"][keep], "ref": fq["ref"][keep],
                     "weights": fq["weights"], "tags": mesh.btags[fids][keep]}
    return out


def _facet_values(v, fq):
    adj, ref = fq["adj"], fq["ref"]
    out = np.empty(ref.shape[:2])
    for f in range(len(adj)):
        out[f] = eval_field(v, ref[f], cells=np.array([adj[f]]))[0]
    return out


def _facet_grads(v, fq):
    adj, ref = fq["adj"], fq["ref"]
    out = np.empty(ref.shape[:2] + (2,))
    for f in range(len(adj)):
        out[f] = eval_field_grad(v, ref[f], cells=np.array([adj[f]]))[0]
    return out


def _facet_integral(fq, vals):
    return float(np.einsum("fq,q,f->", vals, fq["weights"], fq["measure"]))


def _lateral_tag_sides(mesh):
    """Boundary tag on each lateral face of the box, keyed by side 0/1."""
    lo, hi = domain_box(mesh)
    fids, _, nrm, _ = boundary_facet_info(mesh)
    tags = {}
    for side, sgn in ((0, -1.0), (1, 1.0)):
        sel = np.abs(nrm[:, 0] - sgn) < 1e-9
        if sel.any():
            tags[side] = int(mesh.btags[fids][sel][0])
    return tags


def parabolic_constants(spec, mesh):
    """Spatial Friedrichs constant and the composed lateral trace constant.

    Friedrichs uses the x-extent and the lateral Dirichlet layout; with no
    lateral Dirichlet face the interval constant L/pi is kept as a working
    value. The trace constant combines a one-dimensional boundary-to-H1
    constant on the spatial interval with the Friedrichs constant.
    """
    lo, hi = domain_box(mesh)
    length = hi[0] - lo[0]
    sides = _lateral_tag_sides(mesh)
    n_dir = sum(1 for s in sides.values() if s == DIRICHLET)
    if n_dir == 2:
        c_f = length / np.pi
    elif n_dir == 1:
        c_f = 2.0 * length / np.pi
    else:
        c_f = length / np.pi
    flux = tuple(sorted({s for s in sides.values() if s in FLUX_TAGS}))
    if not flux:
        return c_f, 0.0
    probe = interval_mesh(8, lo[0], hi[0],
                          tags=(sides.get(0, NEUMANN), sides.get(1, NEUMANN)))
    c_tr = trace_constant(probe, flux)
    return c_f, float(c_tr * np.sqrt(1.0 + c_f ** 2))


def _spatial_drift(spec, pts):
    return vector_at(spec.drift, pts, 1)[..., 0]


def parabolic_error_norm(v, spec, gamma=1.0):
    """Upper- and lower-measure norms of u - v over the cylinder."""
    ex = spec.exact_solution
    if ex is None or ex.value is None or ex.gradient is None:
        raise NoReference("error norms need an exact solution with a gradient")
    mesh = v.space.mesh
    deg = spec.quadrature_degree
    eps = spec.epsilon
    rp, rw = reference_rule(2, deg)
    geo = affine_geometry(mesh)
    pts = map_points(mesh, rp, geo)
    wdet = rw[None, :] * geo["detJ"][:, None]

    e = scalar_at(ex.value, pts) - eval_field(v, rp, geo)
    ex_x = vector_at(ex.gradient, pts, 2)[..., 0]
    e_x = ex_x - eval_field_grad(v, rp, geo)[..., 0]
    F = _spatial_drift(spec, pts)
    divF = scalar_at(spec.drift_div, pts)
    lam = scalar_at(spec.reaction, pts)

    up = float(np.sum(wdet * (0.5 * eps * e_x ** 2
                              + (divF + (2.0 - 1.0 / gamma) * lam) * e ** 2)))
    low = 0.5 * float(np.sum(wdet * (eps * e_x ** 2
                                     + (F ** 2 / eps + divF + lam + 1.0)
                                     * e ** 2)))

    sets = _facet_sets(mesh, deg)
    top = sets["top"]
    if top is not None:
        et2 = (scalar_at(ex.value, top["points"]) - _facet_values(v, top)) ** 2
        up += _facet_integral(top, et2)
        low += 0.5 * _facet_integral(top, et2)
    lat = sets["lateral"]
    if lat is not None:
        keep = np.isin(lat["tags"], FLUX_TAGS)
        if keep.any():
            sub = {k: (val[keep] if isinstance(val, np.ndarray)
                       and val.shape[:1] == lat["adj"].shape else val)
                   for k, val in lat.items()}
            el2 = (scalar_at(ex.value, sub["points"])
                   - _facet_values(v, sub)) ** 2
            fn = np.abs(_spatial_drift(spec, sub["points"])
                        * sub["normal"][:, None, 0])
            up += _facet_integral(sub, fn * el2)
            robin = sub["tags"] == ROBIN
            if robin.any():
                low += 0.5 * float(np.einsum(
                    "fq,q,f->", (fn * el2)[robin], sub["weights"],
                    sub["measure"][robin]))
    return float(np.sqrt(max(up, 0.0))), float(np.sqrt(max(low, 0.0)))


# ---------------------------------------------------------------------------
# Majorant

def _volume_caches(v, spec):
    mesh = v.space.mesh
    deg = spec.quadrature_degree
    rp, rw = reference_rule(2, deg)
    geo = affine_geometry(mesh)
    pts = map_points(mesh, rp, geo)
    wdet = rw[None, :] * geo["detJ"][:, None]
    vv = eval_field(v, rp, geo)
    vg = eval_field_grad(v, rp, geo)
    F = _spatial_drift(spec, pts)
    divF = scalar_at(spec.drift_div, pts)
    lam = scalar_at(spec.reaction, pts)
    g0 = (scalar_at(spec.rhs, pts) - vg[..., 1] - F * vg[..., 0]
          - (divF + lam) * vv)
    return {"rp": rp, "geo": geo, "wdet": wdet, "g0": g0, "vx": vg[..., 0],
            "lam": lam, "mesh": mesh}


def _initial_mismatch(v, spec, sets):
    """Squared L2 distance of v(.,0) from the initial datum, per bottom facet."""
    bot = sets["bottom"]
    if bot is None:
        return 0.0, None, None
    d2 = (scalar_at(spec.u0, bot["points"]) - _facet_values(v, bot)) ** 2
    per = np.einsum("fq,q->f", d2, bot["weights"]) * bot["measure"]
    return float(per.sum()), bot["adj"], per


def _lateral_flux_data(v, spec, sets):
    """Per-facet data for the boundary residual (F.n) v - y.n - g on the
    lateral flux faces; the y-independent part s0 and the normal component."""
    lat = sets["lateral"]
    if lat is None:
        return None
    keep = np.isin(lat["tags"], FLUX_TAGS)
    if not keep.any():
        return None
    sub = {k: (val[keep] if isinstance(val, np.ndarray)
               and val.shape[:1] == lat["adj"].shape else val)
           for k, val in lat.items()}
    nx = sub["normal"][:, 0]
    vvals = _facet_values(v, sub)
    s0 = np.empty_like(vvals)
    robin = sub["tags"] == ROBIN
    if robin.any():
        fn = _spatial_drift(spec, sub["points"][robin]) * nx[robin, None]
        gr = scalar_at(spec.robin_data, sub["points"][robin]) \
            if spec.robin_data is not None else 0.0
        s0[robin] = fn * vvals[robin] - gr
    if (~robin).any():
        gn = scalar_at(spec.neumann_data, sub["points"][~robin]) \
            if spec.neumann_data is not None else 0.0
        s0[~robin] = np.broadcast_to(gn, vvals[~robin].shape)
    sub["nx"] = nx
    sub["s0"] = s0
    return sub


def _mu_weights(lam, beta, gamma, eps, c_f, mu_mode):
    """Pointwise mu and the reaction-balanced weight on r_eq squared."""
    if mu_mode == MU_ONE:
        if not np.all(lam > 0.0):
            raise LambdaZeroWithMuOne(
                "mu = 1 requires a strictly positive reaction coefficient")
        return np.ones_like(lam), gamma / lam
    a = (1.0 + beta) * c_f ** 2
    d = beta * gamma * eps
    mu = np.clip(a * lam / (d + a * lam), 0.0, 1.0)
    w = ((1.0 + 1.0 / beta) * (c_f ** 2 / eps) * d ** 2
         + gamma * a ** 2 * lam) / (d + a * lam) ** 2
    return mu, w


def _flux_system(v, spec, flux_space, beta, gamma, mu_mode, caches, constants):
    """Normal equations of the weighted least-squares flux objective."""
    if flux_space.mesh is not v.space.mesh:
        raise NonMatchingSpaces("flux space must live on the mesh of v")
    if flux_space.family != LAGRANGE:
        raise NonMatchingSpaces(
            "the space-time flux is a scalar Lagrange field")
    mesh = flux_space.mesh
    eps = spec.epsilon
    c_f, c_tg = constants
    rp = caches["rp"]
    geo = caches["geo"]
    vals, grads = tabulate_lagrange(2, flux_space.degree, rp)
    n = flux_space.n_dofs
    kmass = (1.0 + beta) / eps
    _, w_eq = _mu_weights(caches["lam"], beta, gamma, eps, c_f, mu_mode)

    blocks, rhs = [], np.zeros(n)
    for ch in _chunks(mesh.n_cells, 8192):
        dm = flux_space.dof_map[ch]
        invJT = geo["invJT"][ch]
        wdet = caches["wdet"][ch]
        gx = np.einsum("cik,bpk->cbpi", invJT, grads)[..., 0]
        loc = kmass * np.einsum("ap,bp,cp->cab", vals, vals, wdet)
        loc += np.einsum("cp,cap,cbp,cp->cab", w_eq[ch], gx, gx, wdet)
        rloc = (1.0 + beta) * np.einsum("cp,ap,cp->ca", caches["vx"][ch],
                                        vals, wdet)
        rloc -= np.einsum("cp,cp,cap,cp->ca", w_eq[ch], caches["g0"][ch],
                          gx, wdet)
        blocks.append(_scatter(dm, loc, n))
        np.add.at(rhs, dm.ravel(), rloc.ravel())
    mat = sum(blocks).tocsr()

    lat = caches["lateral"]
    if lat is not None and c_tg > 0.0:
        w_b = 2.0 * c_tg ** 2 / eps
        dm = flux_space.dof_map[lat["adj"]]
        w = lat["weights"]
        rows, cols, dat = [], [], []
        for f in range(len(dm)):
            bvals, _ = tabulate_lagrange(2, flux_space.degree, lat["ref"][f])
            loc = w_b * lat["measure"][f] * np.einsum("q,aq,bq->ab", w,
                                                      bvals, bvals)
            rows.append(np.repeat(dm[f], len(dm[f])))
            cols.append(np.tile(dm[f], len(dm[f])))
            dat.append(loc.ravel())
            np.add.at(rhs, dm[f], w_b * lat["measure"][f] * lat["nx"][f]
                      * np.einsum("q,aq,q->a", w, bvals, lat["s0"][f]))
        extra = sp.coo_matrix((np.concatenate(dat),
                               (np.concatenate(rows), np.concatenate(cols))),
                              shape=(n, n))
        mat = (mat + extra.tocsr()).tocsr()
    _definiteness_probe(mat[:200, :200])
    return LinearSystem(mat, rhs, n)


def _qt_objective(caches, spec, y, beta, gamma, mu_mode, constants, e0):
    """Per-cell indicator densities; their sum is the squared majorant."""
    mesh = caches["mesh"]
    eps = spec.epsilon
    c_f, c_tg = constants
    rp = caches["rp"]
    geo = caches["geo"]
    wdet = caches["wdet"]
    yv = eval_field(y, rp, geo)
    yx = eval_field_grad(y, rp, geo)[..., 0]
    r_eq = caches["g0"] + yx
    r_d = yv - eps * caches["vx"]
    _, w_eq = _mu_weights(caches["lam"], beta, gamma, eps, c_f, mu_mode)
    ind = np.einsum("cq,cq->c", wdet,
                    (1.0 + beta) / eps * r_d ** 2 + w_eq * r_eq ** 2)
    lat = caches["lateral"]
    if lat is not None and c_tg > 0.0:
        yb = _facet_values(y, lat)
        rs2 = (lat["s0"] - lat["nx"][:, None] * yb) ** 2
        per = (2.0 * c_tg ** 2 / eps) * lat["measure"] \
            * np.einsum("fq,q->f", rs2, lat["weights"])
        np.add.at(ind, lat["adj"], per)
    e0_total, e0_adj, e0_per = e0
    if e0_adj is not None:
        np.add.at(ind, e0_adj, e0_per)
    return ind, r_eq, r_d


def majorant_spacetime_value(v, spec, y, beta=1.0, gamma=1.0,
                             mu_mode=MU_OPT):
    """Majorant for a given flux field and beta; tests the guaranteed bound."""
    constants = parabolic_constants(spec, v.space.mesh)
    caches = _volume_caches(v, spec)
    sets = _facet_sets(v.space.mesh, spec.quadrature_degree)
    caches["lateral"] = _lateral_flux_data(v, spec, sets)
    e0 = _initial_mismatch(v, spec, sets)
    ind, _, _ = _qt_objective(caches, spec, y, beta, gamma, mu_mode,
                              constants, e0)
    return float(np.sqrt(ind.sum()))


def majorant_spacetime(v, spec, flux_space, gamma=1.0, mu_mode=MU_OPT,
                       n_sweeps=3):
    """Minimized space-time majorant with reaction balancing.

    Each sweep solves the flux normal equations at the current parameters,
    then updates beta by its closed-form minimizer and the balance field mu
    pointwise. Recorded values decrease monotonically.
    """
    mesh = v.space.mesh
    if spec.u0 is None or spec.t_final is None:
        raise UnsupportedDomain("space-time bounds need u0 and t_final")
    check_incoming_flux(spec, mesh, lateral_only=True)
    eps = spec.epsilon
    constants = parabolic_constants(spec, mesh)
    c_f, _ = constants
    caches = _volume_caches(v, spec)
    sets = _facet_sets(mesh, spec.quadrature_degree)
    caches["lateral"] = _lateral_flux_data(v, spec, sets)
    e0 = _initial_mismatch(v, spec, sets)
    if mu_mode not in (MU_OPT, MU_ONE):
        raise ValueError("mu_mode must be 'opt' or 'one'")

    beta = 1.0
    history = []
    best = None
    for _ in range(n_sweeps):
        system = _flux_system(v, spec, flux_space, beta, gamma, mu_mode,
                              caches, constants)
        y = fem.DiscreteField(flux_space, solve_system(system))
        yv = eval_field(y, caches["rp"], caches["geo"])
        yx = eval_field_grad(y, caches["rp"], caches["geo"])[..., 0]
        r_eq = caches["g0"] + yx
        r_d = yv - eps * caches["vx"]
        mu, _ = _mu_weights(caches["lam"], beta, gamma, eps, c_f, mu_mode)
        rr = float(np.sum(caches["wdet"] * (1.0 - mu) ** 2 * r_eq ** 2))
        dd = float(np.sum(caches["wdet"] * r_d ** 2) / eps)
        rnorm = c_f / np.sqrt(eps) * np.sqrt(rr)
        dnorm = np.sqrt(dd)
        if dnorm == 0.0:
            beta = PARAM_HI if rnorm > 0.0 else 1.0
        else:
            beta = _clip(rnorm / dnorm)
        indicators, r_eq, r_d = _qt_objective(caches, spec, y, beta, gamma,
                                              mu_mode, constants, e0)
        val = float(np.sqrt(indicators.sum()))
        # keep the best iterate so an ill-conditioned flux solve cannot
        # spoil the recorded sequence
        if best is not None and val > best[0]:
            break
        best = (val, indicators, beta)
        history.append(val)

    beta = best[2]
    mu, _ = _mu_weights(caches["lam"], beta, gamma, eps, c_f, mu_mode)
    cert = SpaceTimeCertificate(
        majorant=best[0], alpha1=1.0 + beta, alpha2=1.0 + 1.0 / beta,
        alpha3=2.0, beta=beta, gamma=gamma, mu=mu, indicators=best[1],
        parameters={"beta": beta, "gamma": gamma, "mu_mode": mu_mode,
                    "c_f": constants[0], "c_tg": constants[1]},
        history=history)
    try:
        up, low = parabolic_error_norm(v, spec, gamma)
    except NoReference:
        return cert
    cert.error_upper_measure = up
    cert.error_lower_measure = low
    if up > 0.0:
        cert.ieff_majorant = cert.majorant / up
    return cert


# ---------------------------------------------------------------------------
# Minorant

def minorant_forms_spacetime(v, spec, eta_space):
    """Quadratic form S and functional L whose maximum L.x - 0.5 x.S.x over
    admissible eta bounds the squared lower error measure from below."""
    mesh = eta_space.mesh
    if mesh is not v.space.mesh:
        raise ValueError("auxiliary space must live on the mesh of v")
    deg = spec.quadrature_degree
    eps = spec.epsilon
    rp, rw = reference_rule(2, deg)
    geo = affine_geometry(mesh)
    pts = map_points(mesh, rp, geo)
    wdet = rw[None, :] * geo["detJ"][:, None]
    vals, grads = tabulate_lagrange(2, eta_space.degree, rp)
    n = eta_space.n_dofs

    vv = eval_field(v, rp, geo)
    vg = eval_field_grad(v, rp, geo)
    F = _spatial_drift(spec, pts)
    lam = scalar_at(spec.reaction, pts)
    fv = scalar_at(spec.rhs, pts)

    blocks, L = [], np.zeros(n)
    for ch in _chunks(mesh.n_cells):
        dm = eta_space.dof_map[ch]
        invJT = geo["invJT"][ch]
        w = wdet[ch]
        g = np.einsum("cik,bpk->cbpi", invJT, grads)
        loc = eps * np.einsum("capi,cbpi,cp->cab", g[..., :1], g[..., :1], w)
        loc += np.einsum("cap,cbp,cp->cab", g[..., 1], g[..., 1], w)
        loc += np.einsum("cp,ap,bp,cp->cab", lam[ch], vals, vals, w)
        rloc = np.einsum("cp,ap,cp->ca", fv[ch] - lam[ch] * vv[ch], vals, w)
        rloc += np.einsum("cp,cap,cp->ca", vv[ch], g[..., 1], w)
        rloc += np.einsum("cp,cap,cp->ca",
                          F[ch] * vv[ch] - eps * vg[ch, ..., 0],
                          g[..., 0], w)
        blocks.append(_scatter(dm, loc, n))
        np.add.at(L, dm.ravel(), rloc.ravel())
    S = sum(blocks).tocsr()

    sets = _facet_sets(mesh, deg)
    rows, cols, dat = [], [], []

    def add_facets(fq, quad, lin):
        dm = eta_space.dof_map[fq["adj"]]
        w = fq["weights"]
        for f in range(len(dm)):
            bvals, _ = tabulate_lagrange(2, eta_space.degree, fq["ref"][f])
            if quad is not None:
                loc = fq["measure"][f] * np.einsum("q,aq,bq,q->ab", w, bvals,
                                                   bvals, quad[f])
                rows.append(np.repeat(dm[f], len(dm[f])))
                cols.append(np.tile(dm[f], len(dm[f])))
                dat.append(loc.ravel())
            if lin is not None:
                np.add.at(L, dm[f], fq["measure"][f]
                          * np.einsum("q,aq,q->a", w, bvals, lin[f]))

    top = sets["top"]
    if top is not None:
        ones = np.ones(top["ref"].shape[:2])
        add_facets(top, ones, -_facet_values(v, top))
    bot = sets["bottom"]
    if bot is not None:
        add_facets(bot, None, scalar_at(spec.u0, bot["points"]))
    lat = sets["lateral"]
    if lat is not None:
        robin = lat["tags"] == ROBIN
        if robin.any():
            sub = {k: (val[robin] if isinstance(val, np.ndarray)
                       and val.shape[:1] == lat["adj"].shape else val)
                   for k, val in lat.items()}
            gr = scalar_at(spec.robin_data, sub["points"]) \
                if spec.robin_data is not None \
                else np.zeros(sub["ref"].shape[:2])
            add_facets(sub, None, -gr)
        neu = lat["tags"] == NEUMANN
        if neu.any():
            sub = {k: (val[neu] if isinstance(val, np.ndarray)
                       and val.shape[:1] == lat["adj"].shape else val)
                   for k, val in lat.items()}
            fn = _spatial_drift(spec, sub["points"]) * sub["normal"][:, None, 0]
            gn = scalar_at(spec.neumann_data, sub["points"]) \
                if spec.neumann_data is not None \
                else np.zeros(sub["ref"].shape[:2])
            add_facets(sub, fn, gn - fn * _facet_values(v, sub))
    if rows:
        extra = sp.coo_matrix((np.concatenate(dat),
                               (np.concatenate(rows), np.concatenate(cols))),
                              shape=(n, n))
        S = (S + extra.tocsr()).tocsr()

    keep = np.ones(n)
    lat_dofs = _lateral_dirichlet_dofs(eta_space)
    if len(lat_dofs):
        keep[lat_dofs] = 0.0
        D = sp.diags(keep)
        S = (D @ S @ D + sp.diags(1.0 - keep)).tocsr()
        L = L * keep
    return S, L


def _lateral_dirichlet_dofs(space):
    """Dofs sitting on lateral Dirichlet faces of the cylinder."""
    mesh = space.mesh
    sides = _lateral_tag_sides(mesh)
    lo, hi = domain_box(mesh)
    pts = fem.dof_points(space)
    sel = np.zeros(len(pts), bool)
    if sides.get(0) == DIRICHLET:
        sel |= np.abs(pts[:, 0] - lo[0]) < 1e-12
    if sides.get(1) == DIRICHLET:
        sel |= np.abs(pts[:, 0] - hi[0]) < 1e-12
    return np.flatnonzero(sel)


def minorant_spacetime_value(v, spec, eta):
    """Lower-bound value for a given test field; tests the guarantee."""
    S, L = minorant_forms_spacetime(v, spec, eta.space)
    x = eta.coefficients
    return float(max(L @ x - 0.5 * x @ (S @ x), 0.0))


def minorant_spacetime(v, spec, eta_space):
    """Maximized space-time minorant; one SPD solve on the richer space."""
    _require_richer(v.space, eta_space)
    S, L = minorant_forms_spacetime(v, spec, eta_space)
    _definiteness_probe(S[:200, :200])
    x = solve_system(LinearSystem(S, L, eta_space.n_dofs))
    return float(np.sqrt(max(0.5 * float(L @ x), 0.0)))


# ---------------------------------------------------------------------------
# Error identity for the diffusion-only problem

def _is_diffusion_only(spec, mesh):
    rp, _ = reference_rule(2, 2)
    geo = affine_geometry(mesh)
    pts = map_points(mesh, rp, geo)
    fmax = float(np.abs(_spatial_drift(spec, pts)).max()) \
        if spec.drift is not None else 0.0
    lmax = float(np.abs(scalar_at(spec.reaction, pts)).max()) \
        if spec.reaction is not None else 0.0
    return fmax < 1e-14 and lmax < 1e-14


def _field_xx(v, rp, geo, chunk):
    """Second x-derivative of a Lagrange field on a cell chunk."""
    dm = v.space.dof_map[chunk]
    invJT = geo["invJT"][chunk]
    coefs = v.coefficients[dm]
    _, _, hess = tabulate_lagrange(2, v.space.degree, rp, hessian=True)
    href = np.einsum("cb,bpkl->cpkl", coefs, hess)
    return np.einsum("ck,cpkl,cl->cp", invJT[:, 0, :], href, invJT[:, 0, :])


def _initial_slope(spec, pts, h=1e-5):
    """Spatial derivative of the initial datum by central differences."""
    shift = np.zeros_like(pts)
    shift[..., 0] = h
    return (scalar_at(spec.u0, pts - 2 * shift)
            - 8.0 * scalar_at(spec.u0, pts - shift)
            + 8.0 * scalar_at(spec.u0, pts + shift)
            - scalar_at(spec.u0, pts + 2 * shift)) / (12.0 * h)


def error_identity(v, spec):
    """Residual-based identity value and the strong error norm it equals.

    The identity is certified only for trial fields with square-integrable
    second space derivatives; degree-1 input triggers a warning and the
    returned value is informational.
    """
    mesh = v.space.mesh
    if not _is_diffusion_only(spec, mesh):
        raise UnsupportedDomain(
            "the error identity holds for the diffusion-only problem")
    if v.space.degree < 2:
        warnings.warn(RegularityViolated(
            "degree-1 trial fields lack the regularity behind the identity"))
    ex = spec.exact_solution
    if ex is None or ex.gradient is None or ex.laplacian is None:
        raise NoReference("the strong norm needs gradient and second "
                          "x-derivative of the exact solution")
    deg = spec.quadrature_degree
    eps = spec.epsilon
    rp, rw = reference_rule(2, deg)
    geo = affine_geometry(mesh)
    eid_sq = 0.0
    strong_sq = 0.0
    for ch in _chunks(mesh.n_cells):
        pts = map_points(mesh, rp, geo, np.arange(ch.start, ch.stop))
        wdet = rw[None, :] * geo["detJ"][ch][:, None]
        vxx = _field_xx(v, rp, geo, ch)
        vg = eval_field_grad(v, rp, geo=geo, cells=np.arange(ch.start, ch.stop))
        fv = scalar_at(spec.rhs, pts)
        resid = eps * vxx + fv - vg[..., 1]
        eid_sq += float(np.sum(wdet * resid ** 2))
        uxx = scalar_at(ex.laplacian, pts)
        ug = vector_at(ex.gradient, pts, 2)
        strong_sq += float(np.sum(wdet * (eps ** 2 * (uxx - vxx) ** 2
                                          + (ug[..., 1] - vg[..., 1]) ** 2)))
    sets = _facet_sets(mesh, deg)
    bot = sets["bottom"]
    if bot is not None:
        slope = _initial_slope(spec, bot["points"])
        ex0 = _facet_grads(v, bot)[..., 0]
        eid_sq += eps * _facet_integral(bot, (slope - ex0) ** 2)
    top = sets["top"]
    if top is not None:
        exT = vector_at(ex.gradient, top["points"], 2)[..., 0]
        vxT = _facet_grads(v, top)[..., 0]
        strong_sq += eps * _facet_integral(top, (exT - vxT) ** 2)
    return float(np.sqrt(eid_sq)), float(np.sqrt(strong_sq))


def two_sided_spacetime(v, spec, flux_space, eta_space, gamma=1.0,
                        mu_mode=MU_OPT, n_sweeps=3):
    """Majorant and minorant certificate; adds the identity value when the
    problem is diffusion-only and a reference solution is available."""
    cert = majorant_spacetime(v, spec, flux_space, gamma, mu_mode, n_sweeps)
    cert.minorant = minorant_spacetime(v, spec, eta_space)
    if cert.error_lower_measure is not None and cert.error_lower_measure > 0:
        cert.ieff_minorant = cert.minorant / cert.error_lower_measure
    if _is_diffusion_only(spec, v.space.mesh) \
            and spec.exact_solution is not None \
            and spec.exact_solution.laplacian is not None:
        cert.eid, _ = error_identity(v, spec)
    return cert
