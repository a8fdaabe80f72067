"""Command line front end: config files, presets, study output."""

import argparse
import os
import sys
from dataclasses import dataclass

import numpy as np

from . import adapt, assembly, estimate_spacetime, estimate_static, fem
from . import homotopy as homotopy_mod
from . import presets as presets_mod
from .adapt import StudyRecord, adaptive_loop, write_study
from .assembly import NO_STAB, ProblemSpec
from .errors import (AllZeroIndicators, EmptyMarkSet, IncomingFluxViolated,
                     IndefiniteSystem, LambdaZeroWithMuOne, MeshError,
                     NoReference, NonMatchingSpaces, SingularMatrix,
                     SingularReaction, SpaceNotRicher, StepCapExceeded,
                     ZeroMeanViolated)
from .expressions import parse_coefficient
from .mesh import (min_cell_diameter, rectangle_mesh, refine_uniform,
                   write_mesh)
from .presets import SPACETIME, STATIC, get_preset

UNIFORM = "uniform"
ADAPTIVE = "adaptive"
HOMOTOPY = "homotopy"
SPACETIME_MODE = "spacetime"
MODES = (UNIFORM, ADAPTIVE, HOMOTOPY, SPACETIME_MODE)

NUMERICAL_ERRORS = (IndefiniteSystem, SingularMatrix, SingularReaction,
                    IncomingFluxViolated, ZeroMeanViolated,
                    AllZeroIndicators, StepCapExceeded, LambdaZeroWithMuOne,
                    MeshError, EmptyMarkSet, NoReference,
                    np.linalg.LinAlgError)
CONFIG_ERRORS = (SyntaxError, KeyError, ValueError, TypeError, OSError,
                 SpaceNotRicher, NonMatchingSpaces)


@dataclass
class RunConfig:
    preset: str = None
    mode: str = ADAPTIVE
    steps: int = 6
    theta: float = None
    deg_v: int = None
    deg_flux: int = None
    deg_w: int = None
    mu: str = None
    eps0: float = 1.0
    eps: float = None
    switch: str = homotopy_mod.FIXED_STEPS
    out: str = "."
    n_sweeps: int = 3
    inline: dict = None

    def __post_init__(self):
        self.mode = str(self.mode).lower()
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        self.switch = str(self.switch).lower()
        if self.switch not in (homotopy_mod.FIXED_STEPS,
                               homotopy_mod.HMIN_RESOLVED):
            raise ValueError("switch must be fixed_steps or hmin_resolved")
        if self.steps < 0:
            raise ValueError("steps must be non-negative")
        if self.mu is not None and self.mu not in ("opt", "one"):
            raise ValueError("mu must be 'opt' or 'one'")


def read_config(path):
    """Flat key = value file; later keys win, '#' starts a comment."""
    out = {}
    with open(path) as fh:
        for ln, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{ln}: expected key = value")
            key, val = line.split("=", 1)
            out[key.strip()] = val.strip()
    return out


_INT_KEYS = {"steps", "deg_v", "deg_flux", "deg_w", "n_sweeps", "nx", "ny"}
_FLOAT_KEYS = {"theta", "eps0", "eps", "x0", "x1", "y0", "y1"}
_INLINE_KEYS = {"epsilon", "drift_x", "drift_y", "drift_div", "reaction",
                "rhs", "nx", "ny", "x0", "x1", "y0", "y1", "dim"}


def build_config(raw, overrides=None):
    merged = dict(raw)
    for k, v in (overrides or {}).items():
        if v is not None:
            merged[k.replace("-", "_")] = v
    fields = {}
    inline = {}
    for key, val in merged.items():
        if key in _INLINE_KEYS:
            inline[key] = val
            continue
        if key not in RunConfig.__dataclass_fields__:
            raise KeyError(f"unknown config key {key!r}")
        if key in _INT_KEYS:
            val = int(val)
        elif key in _FLOAT_KEYS:
            val = float(val)
        fields[key] = val
    cfg = RunConfig(**fields)
    cfg.inline = inline or None
    return cfg


def inline_problem(inline):
    """Problem built from coefficient expressions on a rectangle, with
    homogeneous Dirichlet data everywhere."""
    dim = int(inline.get("dim", 2))
    if dim != 2:
        raise ValueError("inline problems are two-dimensional")
    eps = float(inline.get("epsilon", 1.0))
    fx = parse_coefficient(inline.get("drift_x", "0"))
    fy = parse_coefficient(inline.get("drift_y", "0"))
    if "drift_div" in inline:
        fdiv = parse_coefficient(inline["drift_div"])
    else:
        dx, dy = fx.derivative("x"), fy.derivative("y")

        def fdiv(p):
            return dx(p) + dy(p)
    lam = parse_coefficient(inline.get("reaction", "0"))
    rhs = parse_coefficient(inline.get("rhs", "0"))

    def drift(p):
        return np.stack([np.broadcast_to(fx(p), p.shape[:-1]),
                         np.broadcast_to(fy(p), p.shape[:-1])], axis=-1)

    spec = ProblemSpec(epsilon=eps, drift=drift, drift_div=fdiv,
                       reaction=lam, rhs=rhs,
                       bc_layout=assembly.FULL_DIRICHLET, dirichlet_data=0.0)
    nx = int(inline.get("nx", 4))
    ny = int(inline.get("ny", 4))
    box = [float(inline.get(k, d)) for k, d in
           (("x0", 0.0), ("x1", 1.0), ("y0", 0.0), ("y1", 1.0))]

    def mesh_factory():
        return rectangle_mesh(nx, ny, *box)

    return presets_mod.Preset("inline", STATIC, spec, mesh_factory,
                              deg_v=1, flux_kind="rt1", deg_w=3, theta=0.3)


def _static_flux_kind(preset, deg_flux):
    if deg_flux is None:
        return preset.flux_kind
    return {1: "rt1", 2: "p2", 3: "p3"}[deg_flux]


def resolve_preset(cfg):
    if cfg.preset is not None:
        if cfg.preset == "example4" and cfg.eps is not None:
            return get_preset("example4", epsilon=cfg.eps)
        return get_preset(cfg.preset)
    if cfg.inline:
        return inline_problem(cfg.inline)
    raise ValueError("either a preset or inline problem keys are required")


def make_static_step(preset, deg_v, flux_kind, deg_w, n_sweeps):
    def step(spec, mesh):
        V = fem.lagrange_space(mesh, deg_v,
                               constraint=fem.ZERO_ON_DIRICHLET)
        stab = preset.stabilization if deg_v == 1 else NO_STAB
        v = assembly.solve_static(spec, V, stab)
        Y = fem.flux_space(mesh, flux_kind)
        W = fem.lagrange_space(mesh, deg_w,
                               constraint=fem.ZERO_ON_DIRICHLET)
        cert = estimate_static.two_sided(v, spec, Y, W, n_sweeps)
        rec = StudyRecord(
            0, V.n_dofs, err_up=cert.error_upper_measure,
            err_low=cert.error_lower_measure, majorant=cert.majorant,
            minorant=cert.minorant)
        return rec, cert.indicators
    return step


def make_spacetime_step(preset, deg_v, deg_flux, deg_w, mu_mode, gamma,
                        n_sweeps):
    def step(spec, mesh):
        V = fem.lagrange_space(mesh, deg_v)
        v = assembly.solve_spacetime(spec, V)
        Y = estimate_spacetime.spacetime_flux_space(mesh, deg_flux)
        W = fem.lagrange_space(mesh, deg_w)
        cert = estimate_spacetime.two_sided_spacetime(
            v, spec, Y, W, gamma=gamma, mu_mode=mu_mode, n_sweeps=n_sweeps)
        rec = StudyRecord(
            0, V.n_dofs, err_up=cert.error_upper_measure,
            err_low=cert.error_lower_measure, majorant=cert.majorant,
            minorant=cert.minorant, eid=cert.eid)
        return rec, cert.indicators
    return step


def write_plot(records, path):
    lines = ["# dof err_up majorant minorant"]
    for r in records:
        lines.append("%d %s %s %s" % (r.dof_count, adapt._fmt(r.err_up),
                                      adapt._fmt(r.majorant),
                                      adapt._fmt(r.minorant)))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def run_config(cfg):
    preset = resolve_preset(cfg)
    theta = cfg.theta if cfg.theta is not None else preset.theta
    deg_v = cfg.deg_v if cfg.deg_v is not None else preset.deg_v
    deg_w = cfg.deg_w if cfg.deg_w is not None else preset.deg_w
    mu_mode = cfg.mu if cfg.mu is not None else preset.mu_mode
    os.makedirs(cfg.out, exist_ok=True)

    if cfg.mode == HOMOTOPY:
        if preset.name != "example4":
            raise ValueError("homotopy mode drives the parametric preset "
                             "example4")
        target = cfg.eps if cfg.eps is not None else preset.spec.epsilon
        schedule = homotopy_mod.HomotopySchedule(
            epsilon_start=cfg.eps0, epsilon_target=target,
            switch=cfg.switch, n_ref=max(cfg.steps, 1))
        flux_kind = _static_flux_kind(preset, cfg.deg_flux)
        base = make_static_step(preset, deg_v, flux_kind, deg_w,
                                cfg.n_sweeps)
        counter = [0]

        def step(spec, mesh):
            write_mesh(mesh, os.path.join(cfg.out,
                                          f"mesh_ref{counter[0]}.txt"))
            counter[0] += 1
            return base(spec, mesh)

        levels_records, _ = homotopy_mod.run_homotopy(
            lambda e: get_preset("example4", epsilon=e).spec,
            schedule, preset.base_mesh(), theta, step, out_dir=cfg.out)
        flat = [r for _, recs in levels_records for r in recs]
        write_study(flat, os.path.join(cfg.out, "study.csv"))
        write_plot(flat, os.path.join(cfg.out, "plot.dat"))
        return flat

    if preset.kind == SPACETIME:
        deg_flux = cfg.deg_flux if cfg.deg_flux is not None \
            else preset.deg_flux
        base = make_spacetime_step(preset, deg_v, deg_flux, deg_w, mu_mode,
                                   1.0, cfg.n_sweeps)
    else:
        flux_kind = _static_flux_kind(preset, cfg.deg_flux)
        base = make_static_step(preset, deg_v, flux_kind, deg_w,
                                cfg.n_sweeps)
    spec = preset.spec

    def estimate(mesh, k):
        write_mesh(mesh, os.path.join(cfg.out, f"mesh_ref{k}.txt"))
        return base(spec, mesh)

    if cfg.mode == UNIFORM:
        records = []
        mesh = preset.base_mesh()
        for k in range(cfg.steps + 1):
            rec, _ = estimate(mesh, k)
            rec.ref_index = k
            rec.h_min = min_cell_diameter(mesh)
            if rec.err_up is not None and rec.err_up > 0 \
                    and rec.majorant is not None:
                rec.ieff_majorant = rec.majorant / rec.err_up
            if rec.err_low is not None and rec.err_low > 0 \
                    and rec.minorant is not None:
                rec.ieff_minorant = rec.minorant / rec.err_low
            records.append(rec)
            if k < cfg.steps:
                mesh = refine_uniform(mesh)
        errs = [r.err_up if r.err_up is not None else np.nan
                for r in records]
        rates = adapt.compute_eoc(errs, [r.dof_count for r in records],
                                  mesh.dim)
        for r, rate in zip(records, rates):
            r.eoc = None if np.isnan(rate) else float(rate)
    else:
        records, _ = adaptive_loop(preset.base_mesh(), estimate, theta,
                                   cfg.steps)
    include_eid = preset.kind == SPACETIME
    write_study(records, os.path.join(cfg.out, "study.csv"),
                include_eid=include_eid)
    write_plot(records, os.path.join(cfg.out, "plot.dat"))
    return records


def run(config_path=None, overrides=None):
    """Execute a study; returns the process exit code."""
    try:
        raw = read_config(config_path) if config_path else {}
        cfg = build_config(raw, overrides)
    except CONFIG_ERRORS as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        run_config(cfg)
    except CONFIG_ERRORS as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    return 0


def main(argv=None):
    ap = argparse.ArgumentParser(
        prog="cdbounds",
        description="Two-sided error bounds for convection-diffusion "
                    "problems")
    ap.add_argument("config", nargs="?", help="flat key = value file")
    ap.add_argument("--preset")
    ap.add_argument("--mode", choices=MODES)
    ap.add_argument("--steps", type=int)
    ap.add_argument("--theta", type=float)
    ap.add_argument("--deg-v", type=int, dest="deg_v")
    ap.add_argument("--deg-flux", type=int, dest="deg_flux")
    ap.add_argument("--deg-w", type=int, dest="deg_w")
    ap.add_argument("--mu", choices=("opt", "one"))
    ap.add_argument("--eps0", type=float)
    ap.add_argument("--eps", type=float)
    ap.add_argument("--switch", choices=(homotopy_mod.FIXED_STEPS,
                                         homotopy_mod.HMIN_RESOLVED))
    ap.add_argument("--out")
    args = ap.parse_args(argv)
    overrides = {k: v for k, v in vars(args).items() if k != "config"}
    return run(args.config, overrides)


if __name__ == "__main__":
    sys.exit(main())
