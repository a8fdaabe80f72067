"""Simplicial meshes in 1D/2D with uniform and marked-bisection refinement.

Cells are vertex-index tuples with positive orientation. In 2D the first two
vertices of a cell span its refinement edge; bisection inserts the midpoint
there and recurses, which keeps the mesh conforming and shape regular.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyMarkSet, MeshError

DIRICHLET = 1
NEUMANN = 2
ROBIN = 3

TAG_NAMES = {DIRICHLET: "dirichlet", NEUMANN: "neumann", ROBIN: "robin"}
TAG_IDS = {v: k for k, v in TAG_NAMES.items()}


@dataclass(frozen=True)
class Mesh:
    dim: int
    vertices: np.ndarray
    cells: np.ndarray
    bfacets: np.ndarray
    btags: np.ndarray
    parents: np.ndarray = field(default=None)

    def __post_init__(self):
        v = np.ascontiguousarray(np.atleast_2d(np.asarray(self.vertices, float)))
        c = np.ascontiguousarray(np.asarray(self.cells, np.int64))
        f = np.ascontiguousarray(np.atleast_2d(np.asarray(self.bfacets, np.int64)))
        t = np.ascontiguousarray(np.asarray(self.btags, np.int64))
        p = self.parents
        p = np.full(len(c), -1, np.int64) if p is None else np.asarray(p, np.int64)
        for name, arr in (("vertices", v), ("cells", c), ("bfacets", f),
                          ("btags", t), ("parents", p)):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def n_vertices(self):
        return self.vertices.shape[0]

    @property
    def n_cells(self):
        return self.cells.shape[0]


def interval_mesh(n_cells, a=0.0, b=1.0, tags=(DIRICHLET, DIRICHLET)):
    x = np.linspace(a, b, n_cells + 1).reshape(-1, 1)
    cells = np.column_stack([np.arange(n_cells), np.arange(1, n_cells + 1)])
    bfacets = np.array([[0], [n_cells]])
    return Mesh(1, x, cells, bfacets, np.array(tags))


def rectangle_mesh(nx, ny, x0=0.0, x1=1.0, y0=0.0, y1=1.0, tag=DIRICHLET):
    """Structured triangulation of a box; each quad split along one diagonal.

    `tag` is an int or a callable mapping facet midpoints (n,2) to tags.
    """
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    verts = np.column_stack([X.ravel(), Y.ravel()])
    iy, ix = np.meshgrid(np.arange(ny), np.arange(nx), indexing="ij")
    v00 = (iy * (nx + 1) + ix).ravel()
    v10, v01 = v00 + 1, v00 + nx + 1
    v11 = v01 + 1
    # refinement edge of both children = the diagonal (longest edge)
    cells = np.concatenate([np.column_stack([v11, v00, v10]),
                            np.column_stack([v00, v11, v01])])
    bf = []
    for i in range(nx):
        bf.append((i, i + 1))
        bf.append((ny * (nx + 1) + i + 1, ny * (nx + 1) + i))
    for j in range(ny):
        bf.append(((j + 1) * (nx + 1), j * (nx + 1)))
        bf.append((j * (nx + 1) + nx, (j + 1) * (nx + 1) + nx))
    bfacets = np.array(bf)
    if callable(tag):
        mids = 0.5 * (verts[bfacets[:, 0]] + verts[bfacets[:, 1]])
        btags = np.array([tag(m) for m in mids])
    else:
        btags = np.full(len(bfacets), tag)
    return Mesh(2, verts, cells, bfacets, btags)


@dataclass(frozen=True)
class RefinementPlan:
    marked_cells: np.ndarray
    closure_cells: np.ndarray


def _cell_edges(cells):
    """Per-cell edge list, refinement edge first; canonical ids over the mesh."""
    pairs = cells[:, [[0, 1], [1, 2], [2, 0]]].reshape(-1, 2)
    pairs = np.sort(pairs, axis=1)
    uniq, inv = np.unique(pairs, axis=0, return_inverse=True)
    return uniq, inv.reshape(-1, 3)


def plan_refinement(mesh, marked_cells):
    marked = np.unique(np.asarray(marked_cells, np.int64))
    if marked.size == 0:
        raise EmptyMarkSet("no cells marked")
    if marked.min() < 0 or marked.max() >= mesh.n_cells:
        raise MeshError("marked cell index out of range")
    if mesh.dim == 1:
        return RefinementPlan(marked, np.empty(0, np.int64))
    edges, cell_eids = _cell_edges(mesh.cells)
    edge_marked = np.zeros(len(edges), bool)
    edge_marked[cell_eids[marked, 0]] = True
    while True:
        hit = edge_marked[cell_eids].any(axis=1)
        need = hit & ~edge_marked[cell_eids[:, 0]]
        if not need.any():
            break
        edge_marked[cell_eids[need, 0]] = True
    split = np.flatnonzero(edge_marked[cell_eids].any(axis=1))
    closure = np.setdiff1d(split, marked)
    return RefinementPlan(marked, closure)


def refine_marked(mesh, plan):
    if plan.marked_cells.size == 0:
        raise EmptyMarkSet("no cells marked")
    if mesh.dim == 1:
        return _bisect_1d(mesh, plan.marked_cells)
    return _bisect_2d(mesh, plan)


def _bisect_1d(mesh, marked):
    marked = np.unique(marked)
    cells = mesh.cells
    mids = 0.5 * (mesh.vertices[cells[marked, 0]] + mesh.vertices[cells[marked, 1]])
    new_ids = mesh.n_vertices + np.arange(len(marked))
    verts = np.vstack([mesh.vertices, mids])
    keep = np.setdiff1d(np.arange(mesh.n_cells), marked)
    child = np.concatenate([
        np.column_stack([cells[marked, 0], new_ids]),
        np.column_stack([new_ids, cells[marked, 1]]),
    ])
    parents = np.concatenate([keep, marked, marked])
    new_cells = np.vstack([cells[keep], child])
    return Mesh(1, verts, new_cells, mesh.bfacets, mesh.btags, parents)


def _bisect_2d(mesh, plan):
    edges, cell_eids = _cell_edges(mesh.cells)
    edge_marked = np.zeros(len(edges), bool)
    to_split = np.union1d(plan.marked_cells, plan.closure_cells)
    edge_marked[cell_eids[to_split, 0]] = True
    while True:
        hit = edge_marked[cell_eids].any(axis=1)
        need = hit & ~edge_marked[cell_eids[:, 0]]
        if not need.any():
            break
        edge_marked[cell_eids[need, 0]] = True

    midpoint_of = np.full(len(edges), -1, np.int64)
    idx = np.flatnonzero(edge_marked)
    midpoint_of[idx] = mesh.n_vertices + np.arange(len(idx))
    verts = np.vstack([mesh.vertices,
                       0.5 * (mesh.vertices[edges[idx, 0]] + mesh.vertices[edges[idx, 1]])])

    c = mesh.cells
    m = edge_marked[cell_eids]
    M = midpoint_of[cell_eids]
    out_cells, out_parents = [], []

    def emit(sel, *children):
        ids = np.flatnonzero(sel)
        for ch in children:
            out_cells.append(np.column_stack(ch(ids)))
            out_parents.append(ids)

    none = ~m[:, 0]
    out_cells.append(c[none])
    out_parents.append(np.flatnonzero(none))
    p100 = m[:, 0] & ~m[:, 1] & ~m[:, 2]
    emit(p100,
         lambda i: (c[i, 2], c[i, 0], M[i, 0]),
         lambda i: (c[i, 1], c[i, 2], M[i, 0]))
    p110 = m[:, 0] & m[:, 1] & ~m[:, 2]
    emit(p110,
         lambda i: (c[i, 2], c[i, 0], M[i, 0]),
         lambda i: (M[i, 0], c[i, 1], M[i, 1]),
         lambda i: (c[i, 2], M[i, 0], M[i, 1]))
    p101 = m[:, 0] & ~m[:, 1] & m[:, 2]
    emit(p101,
         lambda i: (M[i, 0], c[i, 2], M[i, 2]),
         lambda i: (c[i, 0], M[i, 0], M[i, 2]),
         lambda i: (c[i, 1], c[i, 2], M[i, 0]))
    p111 = m[:, 0] & m[:, 1] & m[:, 2]
    emit(p111,
         lambda i: (M[i, 0], c[i, 2], M[i, 2]),
         lambda i: (c[i, 0], M[i, 0], M[i, 2]),
         lambda i: (M[i, 0], c[i, 1], M[i, 1]),
         lambda i: (c[i, 2], M[i, 0], M[i, 1]))
    new_cells = np.vstack(out_cells)
    parents = np.concatenate(out_parents)

    bf, bt = _split_bfacets(mesh, edges, edge_marked, midpoint_of)
    return Mesh(2, verts, new_cells, bf, bt, parents)


def _split_bfacets(mesh, edges, edge_marked, midpoint_of):
    pairs = np.sort(mesh.bfacets, axis=1)
    # canonical edge rows come lexsorted out of np.unique
    mult = edges.max() + 2
    eids = np.searchsorted(edges[:, 0] * mult + edges[:, 1],
                           pairs[:, 0] * mult + pairs[:, 1])
    bf, bt = [], []
    for k in range(len(pairs)):
        a, b = mesh.bfacets[k]
        if edge_marked[eids[k]]:
            mid = midpoint_of[eids[k]]
            bf.extend([(a, mid), (mid, b)])
            bt.extend([mesh.btags[k], mesh.btags[k]])
        else:
            bf.append((a, b))
            bt.append(mesh.btags[k])
    return np.array(bf), np.array(bt)


def refine_uniform(mesh):
    if mesh.dim == 1:
        return _bisect_1d(mesh, np.arange(mesh.n_cells))
    edges, cell_eids = _cell_edges(mesh.cells)
    mid_ids = mesh.n_vertices + np.arange(len(edges))
    verts = np.vstack([mesh.vertices,
                       0.5 * (mesh.vertices[edges[:, 0]] + mesh.vertices[edges[:, 1]])])
    a, b, c = mesh.cells.T
    mab = mid_ids[cell_eids[:, 0]]
    mbc = mid_ids[cell_eids[:, 1]]
    mca = mid_ids[cell_eids[:, 2]]
    new_cells = np.concatenate([
        np.column_stack([a, mab, mca]),
        np.column_stack([mab, b, mbc]),
        np.column_stack([mca, mbc, c]),
        np.column_stack([mbc, mca, mab]),
    ])
    parents = np.tile(np.arange(mesh.n_cells), 4)
    bf, bt = _split_bfacets(mesh, edges, np.ones(len(edges), bool), mid_ids)
    return Mesh(2, verts, new_cells, bf, bt, parents)


def cell_measures(mesh):
    v = mesh.vertices[mesh.cells]
    if mesh.dim == 1:
        return v[:, 1, 0] - v[:, 0, 0]
    d1, d2 = v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]
    return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


def cell_diameters(mesh):
    v = mesh.vertices[mesh.cells]
    if mesh.dim == 1:
        return np.abs(v[:, 1, 0] - v[:, 0, 0])
    e = [np.linalg.norm(v[:, i] - v[:, j], axis=1) for i, j in ((0, 1), (1, 2), (2, 0))]
    return np.max(e, axis=0)


def min_cell_diameter(mesh):
    return float(cell_diameters(mesh).min())


def validate_mesh(mesh):
    """Conformity and orientation scan; raises MeshError on violation."""
    if cell_measures(mesh).min() <= 0:
        raise MeshError("non-positive cell measure")
    if mesh.dim == 1:
        return True
    edges, cell_eids = _cell_edges(mesh.cells)
    counts = np.bincount(cell_eids.ravel(), minlength=len(edges))
    if counts.max() > 2:
        raise MeshError("facet shared by more than two cells")
    # T-junction scan: no vertex may lie strictly inside another cell's edge
    border = np.flatnonzero(counts == 1)
    pairs = set(map(tuple, edges[border]))
    bset = set(map(tuple, np.sort(mesh.bfacets, axis=1)))
    if pairs != bset:
        raise MeshError("boundary facets do not match mesh border")
    return True


def write_mesh(mesh, path):
    with open(path, "w") as fh:
        fh.write(f"{mesh.dim} {mesh.n_vertices} {mesh.n_cells} {len(mesh.bfacets)}\n")
        for v in mesh.vertices:
            fh.write(" ".join("%.17g" % x for x in v) + "\n")
        for c in mesh.cells:
            fh.write(" ".join(str(i) for i in c) + "\n")
        for f, t in zip(mesh.bfacets, mesh.btags):
            fh.write(" ".join(str(i) for i in f) + f" {TAG_NAMES[int(t)]}\n")


def read_mesh(path):
    with open(path) as fh:
        dim, nv, nc, nf = map(int, fh.readline().split())
        verts = np.array([[float(x) for x in fh.readline().split()] for _ in range(nv)])
        cells = np.array([[int(x) for x in fh.readline().split()] for _ in range(nc)])
        bf, bt = [], []
        for _ in range(nf):
            parts = fh.readline().split()
            bf.append([int(x) for x in parts[:-1]])
            bt.append(TAG_IDS[parts[-1]])
    return Mesh(dim, verts, cells, np.array(bf), np.array(bt))
