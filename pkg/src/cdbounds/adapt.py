"""Adaptive refinement driver: bulk marking, study records, CSV output."""

import time
from dataclasses import dataclass

import numpy as np

from .errors import AllZeroIndicators
from .mesh import min_cell_diameter, plan_refinement, refine_marked


@dataclass
class StudyRecord:
    ref_index: int
    dof_count: int
    err_up: float = None
    err_low: float = None
    majorant: float = None
    minorant: float = None
    ieff_majorant: float = None
    ieff_minorant: float = None
    eoc: float = None
    h_min: float = None
    wall_time: float = None
    eid: float = None


def bulk_mark(indicators, theta):
    """Smallest set of cells whose squared indicators reach the bulk fraction.

    Cells are ranked by decreasing indicator, ties broken by cell index; the
    shortest prefix with sum >= theta * total is returned.
    """
    ind = np.asarray(indicators, float)
    if not 0.0 < theta <= 1.0:
        raise ValueError("bulk fraction must lie in (0, 1]")
    if ind.ndim != 1 or ind.size == 0:
        raise ValueError("indicator vector must be non-empty and flat")
    if np.any(ind < 0):
        raise ValueError("squared indicators cannot be negative")
    total = float(ind.sum())
    if total <= 0.0:
        raise AllZeroIndicators("all refinement indicators vanish")
    order = np.argsort(-ind, kind="stable")
    csum = np.cumsum(ind[order])
    k = int(np.searchsorted(csum, theta * total * (1.0 - 1e-12))) + 1
    return np.sort(order[:min(k, ind.size)])


def compute_eoc(errors, dofs, dim):
    """Rates ln(e_i/e_{i+1}) / ln(N_i^{-1/d} / N_{i+1}^{-1/d}), aligned with
    the finer level; the first entry is nan."""
    e = np.asarray(errors, float)
    n = np.asarray(dofs, float)
    out = np.full(e.shape, np.nan)
    for i in range(1, len(e)):
        if e[i - 1] > 0 and e[i] > 0 and n[i] != n[i - 1]:
            out[i] = (np.log(e[i - 1] / e[i])
                      / np.log((n[i - 1] / n[i]) ** (-1.0 / dim)))
    return out


def adaptive_loop(mesh, estimate, theta, n_steps):
    """Run solve-estimate-mark-refine for n_steps refinements.

    estimate(mesh, k) returns (record, indicators); the driver fills in
    ref_index, h_min, wall time, and the rate, then marks and refines.
    Returns (records, final_mesh).
    """
    records = []
    for k in range(n_steps + 1):
        t0 = time.perf_counter()
        rec, indicators = estimate(mesh, k)
        rec.ref_index = k
        rec.wall_time = time.perf_counter() - t0
        rec.h_min = min_cell_diameter(mesh)
        if rec.err_up is not None and rec.err_up > 0 and rec.majorant is not None:
            rec.ieff_majorant = rec.majorant / rec.err_up
        if rec.err_low is not None and rec.err_low > 0 and rec.minorant is not None:
            rec.ieff_minorant = rec.minorant / rec.err_low
        records.append(rec)
        if k == n_steps:
            break
        marked = bulk_mark(indicators, theta)
        mesh = refine_marked(mesh, plan_refinement(mesh, marked))
    errs = [r.err_up if r.err_up is not None else np.nan for r in records]
    ns = [r.dof_count for r in records]
    rates = compute_eoc(errs, ns, mesh.dim)
    for r, rate in zip(records, rates):
        r.eoc = None if np.isnan(rate) else float(rate)
    return records, mesh


def _fmt(x):
    if x is None or (isinstance(x, float) and np.isnan(x)):
        return "nan"
    return "%.6e" % x


def write_study(records, path, include_eid=False):
    """Study table in CSV form; one row per refinement level."""
    cols = ["ref", "dof", "err_up", "majorant", "ieff_maj", "err_low",
            "minorant", "ieff_min"]
    if include_eid:
        cols.append("eid")
    lines = [",".join(cols)]
    for r in records:
        row = [str(r.ref_index), str(r.dof_count), _fmt(r.err_up),
               _fmt(r.majorant), _fmt(r.ieff_majorant), _fmt(r.err_low),
               _fmt(r.minorant), _fmt(r.ieff_minorant)]
        if include_eid:
            row.append(_fmt(r.eid))
        lines.append(",".join(row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
