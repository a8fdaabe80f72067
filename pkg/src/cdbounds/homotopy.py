"""Diffusion homotopy: solve a sequence of problems with decreasing epsilon
on a mesh that carries over between levels."""

import os
import time
from dataclasses import dataclass

from .adapt import bulk_mark, write_study
from .errors import StepCapExceeded
from .mesh import min_cell_diameter, plan_refinement, refine_marked

FIXED_STEPS = "fixed_steps"
HMIN_RESOLVED = "hmin_resolved"


@dataclass
class HomotopySchedule:
    epsilon_start: float = 1.0
    epsilon_target: float = 1e-3
    decay: float = 10.0
    switch: str = FIXED_STEPS
    n_ref: int = 4
    layer_resolution_factor: float = 1.0
    step_cap: int = 25

    def __post_init__(self):
        if not self.epsilon_target > 0:
            raise ValueError("target diffusion must be positive")
        if self.epsilon_start < self.epsilon_target:
            raise ValueError("homotopy walks epsilon downward")
        if not self.decay > 1:
            raise ValueError("decay factor must exceed 1")
        if self.switch not in (FIXED_STEPS, HMIN_RESOLVED):
            raise ValueError("unknown switch policy")


def levels(schedule):
    """Decreasing epsilon values, ending exactly at the target."""
    out = []
    eps = float(schedule.epsilon_start)
    while eps > schedule.epsilon_target * (1.0 + 1e-12):
        out.append(eps)
        eps /= schedule.decay
    out.append(float(schedule.epsilon_target))
    return out


def _finish(rec, index, mesh, t0):
    rec.ref_index = index
    rec.h_min = min_cell_diameter(mesh)
    rec.wall_time = time.perf_counter() - t0
    if rec.err_up is not None and rec.err_up > 0 and rec.majorant is not None:
        rec.ieff_majorant = rec.majorant / rec.err_up
    if rec.err_low is not None and rec.err_low > 0 \
            and rec.minorant is not None:
        rec.ieff_minorant = rec.minorant / rec.err_low
    return rec


def run_homotopy(spec_factory, schedule, mesh, theta, step, out_dir=None):
    """Walk epsilon down over the level list, adapting the mesh per level.

    spec_factory(eps) builds the level problem; step(spec, mesh) returns
    (record, indicators). FIXED_STEPS runs n_ref solve-mark-refine rounds
    per level. HMIN_RESOLVED records until the smallest cell resolves the
    layer width (h_min <= factor * eps), refining in between, then performs
    one refinement before the next level; exceeding the step cap raises
    StepCapExceeded with the partial records attached.
    Returns (list of (eps, records), final mesh).
    """
    out = []
    seq = levels(schedule)
    for li, eps in enumerate(seq):
        spec = spec_factory(eps)
        records = []
        if schedule.switch == FIXED_STEPS:
            for j in range(schedule.n_ref):
                t0 = time.perf_counter()
                rec, ind = step(spec, mesh)
                records.append(_finish(rec, j, mesh, t0))
                marked = bulk_mark(ind, theta)
                mesh = refine_marked(mesh, plan_refinement(mesh, marked))
        else:
            resolved = False
            ind = None
            for j in range(schedule.step_cap):
                t0 = time.perf_counter()
                rec, ind = step(spec, mesh)
                records.append(_finish(rec, j, mesh, t0))
                if records[-1].h_min \
                        <= schedule.layer_resolution_factor * eps:
                    resolved = True
                    break
                marked = bulk_mark(ind, theta)
                mesh = refine_marked(mesh, plan_refinement(mesh, marked))
            if not resolved:
                out.append((eps, records))
                raise StepCapExceeded(
                    f"level eps={eps:g} did not resolve the layer within "
                    f"{schedule.step_cap} steps", records=out)
            if ind is not None and li + 1 < len(seq):
                marked = bulk_mark(ind, theta)
                mesh = refine_marked(mesh, plan_refinement(mesh, marked))
        out.append((eps, records))
        if out_dir is not None:
            write_study(records,
                        os.path.join(out_dir, f"homotopy_eps_{eps:g}.csv"))
    return out, mesh
