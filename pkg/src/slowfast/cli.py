"""Command-line front end: ``slowfast {manifold,fibers,curvature,compare,project}``."""
from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from typing import Dict, List, Optional

import numpy as np

from . import curvature, dynamics, fibers, manifold, projection
from .core import GridSpec
from .errors import SingularSylvester, SlowFastError
from .report import (ConfigError, ReductionReport, RunConfig, comparison_csv, config_echo,
                     load_config_file, projection_csv)
from .systems import PRESET_NAMES, SystemPreset, get_preset

log = logging.getLogger("slowfast")

COMMANDS = ("manifold", "fibers", "curvature", "compare", "project")
DEFAULT_S = [0.5, 0.75, 1.0, 1.5, 2.5, 4.0, 6.5, 10.0]
SAMPLE_STRIDE = 5


def _floats(text: str) -> List[float]:
    try:
        return [float(v) for v in text.replace(" ", "").split(",") if v]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="slowfast",
                                description="Slow manifolds, fibers and fiber curvature "
                                            "for slow-fast ODE presets.")
    sub = p.add_subparsers(dest="command", required=True)
    S = argparse.SUPPRESS
    for name in COMMANDS:
        sp = sub.add_parser(name, argument_default=S)
        sp.add_argument("--config", help="JSON file of run settings (flags override it)")
        sp.add_argument("--system", choices=PRESET_NAMES)
        sp.add_argument("--eps", type=float)
        sp.add_argument("--kappa", type=float)
        sp.add_argument("--lambda", dest="lam", type=float)
        sp.add_argument("--grid-lo", dest="grid_lo", type=float)
        sp.add_argument("--grid-hi", dest="grid_hi", type=float)
        sp.add_argument("--grid-h", dest="grid_h", type=float, help="grid spacing (default 0.01)")
        sp.add_argument("--n1", type=int, help="straightening-out steps")
        sp.add_argument("--n2", type=int, help="fiber steps after the first solve")
        sp.add_argument("--n3", type=int, help="curvature layers")
        sp.add_argument("--xb0", type=float, help="base point of the comparison runs")
        sp.add_argument("--s-values", dest="s_values", type=_floats)
        sp.add_argument("--eps-values", dest="eps_values", type=_floats)
        sp.add_argument("--point", type=_floats, help="x,y point to project")
        sp.add_argument("--rtol", type=float)
        sp.add_argument("--atol", type=float)
        sp.add_argument("--format", choices=("json", "csv"))
        sp.add_argument("--out", help="output file (default stdout)")
        sp.add_argument("--plot-dir", dest="plot_dir", help="write PNG figures here")
        sp.add_argument("--timings", action="store_true", help="record wall-clock timings")
        sp.add_argument("-v", "--verbose", action="store_true")
    return p


def resolve_config(ns: argparse.Namespace) -> RunConfig:
    values = {}
    if getattr(ns, "config", None):
        values.update(load_config_file(ns.config))
    for k, v in vars(ns).items():
        if k not in ("config", "verbose"):
            values[k] = v
    values["command"] = ns.command
    try:
        cfg = RunConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    return cfg.validate()


def make_preset(cfg: RunConfig, eps: Optional[float] = None) -> SystemPreset:
    eps = cfg.eps if eps is None else eps
    grid = None
    if cfg.system == "neishtadt":
        if cfg.grid_lo is not None or cfg.grid_hi is not None:
            raise ConfigError("grid_lo/grid_hi: the neishtadt preset lives on the circle")
    else:
        base = get_preset(cfg.system, eps, cfg.kappa, cfg.lam).grid
        lo = base.lo[0] if cfg.grid_lo is None else cfg.grid_lo
        hi = base.hi[0] if cfg.grid_hi is None else cfg.grid_hi
        grid = GridSpec((lo,), (hi,), cfg.grid_h)
    return get_preset(cfg.system, eps, cfg.kappa, cfg.lam, grid)


def working_system(preset: SystemPreset):
    # MMH runs in deviation coordinates, where its series oracles are written
    return preset.deviation if preset.deviation is not None else preset.system


class Pipeline:
    """Builds the requested stages once and records timings and warnings."""

    def __init__(self, cfg: RunConfig, eps: Optional[float] = None):
        self.cfg = cfg
        self.preset = make_preset(cfg, eps)
        self.system = working_system(self.preset)
        self.timings: Dict[str, float] = {}
        self.warnings: List[str] = []
        self.man = self.fib = self.quad = None

    def _timed(self, key, fn):
        t0 = time.perf_counter()
        out = fn()
        self.timings[key] = time.perf_counter() - t0
        return out

    def build(self, depth: str):
        cfg = self.cfg
        self.man = self._timed("manifold", lambda: manifold.build_manifold(
            self.system, self.preset.grid, cfg.n1, seed=self.preset.seed))
        self.warnings += self.man.warnings
        if depth == "manifold":
            return self
        self.fib = self._timed("fibers", lambda: fibers.build_phi(self.man, cfg.n2))
        self.warnings += self.fib.warnings
        if depth == "fibers":
            return self
        self.quad = self._timed("curvature", lambda: curvature.build_psi(self.fib, max(cfg.n3, 1)))
        self.warnings += self.quad.warnings
        return self

    def reduction(self) -> dynamics.Reduction:
        return dynamics.Reduction(self.man, self.fib, self.quad)


def sample_maps(maps: Dict[str, object]) -> Dict[str, list]:
    """Every ``SAMPLE_STRIDE``-th node valid for all ``maps``, with their values there."""
    grids = list(maps.values())
    valid = np.logical_and.reduce([g.valid for g in grids])
    sel = np.zeros(valid.shape, dtype=bool)
    sel[::SAMPLE_STRIDE] = True
    sel &= valid
    out = {"x": grids[0].spec.nodes()[sel].tolist()}
    for key, g in maps.items():
        out[key] = g.values[sel].tolist()
    return out


def manifold_section(man):
    return {"n_layers": man.n_layers, "residual_history": man.residual_history,
            "E_eta": man.E_eta, "stagnated": man.stagnated, "masked_nodes": man.masked_nodes,
            "valid_interval": list(man.graph.valid_bounds()[0])}


def fibers_section(fib):
    return {"n_layers": len(fib.phi_layers), "residual_history": fib.residual_history,
            "mu_history": fib.mu_history, "E_phi": fib.E_phi, "stagnated": fib.stagnated,
            "valid_interval": list(fib.phi.valid_bounds()[0])}


def curvature_section(quad):
    return {"n_layers": len(quad.psi_layers), "Q_history": quad.Q_history,
            "spectral_gap_min": curvature.check_spectral_gap(quad.fibermap.quantities),
            "valid_interval": list(quad.psi.valid_bounds()[0])}


def _reduction_report(cfg: RunConfig, depth: str) -> ReductionReport:
    pipe = Pipeline(cfg).build(depth)
    results = {"manifold": manifold_section(pipe.man)}
    maps = {"eta": pipe.man.graph}
    if depth in ("fibers", "curvature"):
        results["fibers"] = fibers_section(pipe.fib)
        maps["phi"] = pipe.fib.phi
    if depth == "curvature":
        results["curvature"] = curvature_section(pipe.quad)
        maps["psi"] = pipe.quad.psi
    results["samples"] = sample_maps(maps)
    results["system_form"] = pipe.system.name
    rep = _finish(cfg, results, pipe.warnings, pipe.timings)
    for sec in ("fibers", "curvature"):
        if sec not in results:
            rep.set_null(sec, "not-requested")
    return rep


def _finish(cfg, results, warnings, timings) -> ReductionReport:
    return ReductionReport(cfg.command, config_echo(cfg), results, list(warnings),
                           timings=dict(timings) if cfg.timings else None)


def cmd_manifold(cfg):
    return _reduction_report(cfg, "manifold")


def cmd_fibers(cfg):
    return _reduction_report(cfg, "fibers")


def cmd_curvature(cfg):
    return _reduction_report(cfg, "curvature")


def _comparison_dict(rep: dynamics.ComparisonReport):
    return {"sweep": rep.sweep, "values": rep.values.tolist(),
            "upsilon": {k: v.tolist() for k, v in rep.upsilon.items()},
            "fits": {k: {"slope": f[0], "intercept": f[1], "rms": f[2]} for k, f in rep.fits.items()}}


def _wants_quadratic(cfg):
    return cfg.n3 > 0


def cmd_compare(cfg):
    depth = "curvature" if _wants_quadratic(cfg) else "fibers"
    warnings: List[str] = []
    timings: Dict[str, float] = {}
    if cfg.eps_values:
        s = cfg.s_values[0] if cfg.s_values else 0.5

        def build(eps):
            pipe = Pipeline(cfg, eps).build(depth)
            warnings.extend(pipe.warnings)
            return pipe.reduction()

        t0 = time.perf_counter()
        rep = dynamics.compare_eps(build, [cfg.xb0], s, cfg.eps_values, cfg.rtol, cfg.atol)
        timings["compare"] = time.perf_counter() - t0
        form = working_system(make_preset(cfg)).name
    else:
        pipe = Pipeline(cfg).build(depth)
        warnings += pipe.warnings
        timings.update(pipe.timings)
        s_values = cfg.s_values or DEFAULT_S
        t0 = time.perf_counter()
        rep = dynamics.compare_offsets(pipe.fib, [cfg.xb0], s_values, pipe.quad, cfg.rtol, cfg.atol)
        timings["compare"] = time.perf_counter() - t0
        form = pipe.system.name
    results = {"comparison": _comparison_dict(rep), "system_form": form}
    out = _finish(cfg, results, sorted(set(warnings), key=warnings.index), timings)
    if "quadratic" not in rep.upsilon:
        out.set_null("comparison.upsilon.quadratic", "not-requested")
        out.set_null("comparison.fits.quadratic", "not-requested")
    return out


def cmd_project(cfg):
    if not cfg.point:
        raise ConfigError("point: project needs --point x,y")
    pipe = Pipeline(cfg).build("curvature" if _wants_quadratic(cfg) else "fibers")
    n_s = pipe.system.n_slow
    pt = np.asarray(cfg.point, dtype=float)
    if pt.size != n_s + pipe.system.n_fast:
        raise ConfigError(f"point: expected {n_s + pipe.system.n_fast} numbers, got {pt.size}")
    x0, y0 = pt[:n_s], pt[n_s:]
    rows = [projection.naive_project(pipe.man, x0, y0), projection.linear_project(pipe.fib, x0, y0)]
    if pipe.quad is not None:
        rows.append(projection.quadratic_project(pipe.quad, x0, y0))
    table = [{"method": r.method, "base_x": r.base_x.tolist(), "base_y": r.base_y.tolist(),
              "iterations": r.iterations, "residual": r.residual} for r in rows]
    results = {"projection": table, "system_form": pipe.system.name}
    return _finish(cfg, results, pipe.warnings, pipe.timings)


HANDLERS = {"manifold": cmd_manifold, "fibers": cmd_fibers, "curvature": cmd_curvature,
            "compare": cmd_compare, "project": cmd_project}


def render(cfg: RunConfig, report: ReductionReport) -> str:
    if cfg.format == "csv":
        if "comparison" in report.results:
            return comparison_csv(report.to_dict()["results"]["comparison"])
        if "projection" in report.results:
            return projection_csv(report.to_dict()["results"]["projection"])
        raise ConfigError("format: csv output is available for compare and project only")
    return report.to_json()


def run(argv=None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if getattr(ns, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(ns)
        report = HANDLERS[cfg.command](cfg)
        text = render(cfg, report)
        if cfg.out:
            with open(cfg.out, "w", encoding="utf-8") as fh:
                fh.write(text)
        else:
            sys.stdout.write(text)
        if cfg.plot_dir:
            from .plotting import write_figures
            stem = os.path.splitext(os.path.basename(cfg.out))[0] if cfg.out else cfg.command
            write_figures(report.to_dict()["results"], cfg.plot_dir, stem)
    except SingularSylvester as exc:
        print(f"error: curvature refused, spectral gap condition fails: "
              f"σ(A)∩σ(−A)≠∅ ({exc})", file=sys.stderr)
        return 1
    except (SlowFastError, OSError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    for w in report.warnings:
        print(f"warning: {w}", file=sys.stderr)
    return 2 if any("masked" in w for w in report.warnings) else 0


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
