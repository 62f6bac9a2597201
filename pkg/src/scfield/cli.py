"""Command-line driver: ``scfield {polarizability,solve,compare,emit} --config FILE``.

Exit status 0 on success, 1 for invalid input (scenario, mesh, ensemble or
regime refusal), 2 for numerical failure.
"""

from __future__ import annotations

import argparse
import contextlib
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import scipy.fft

from .acoustic_continuum import schrodinger_residual, solve_hard, solve_impedance_continuum, solve_soft
from .acoustic_discrete import solve_discrete
from .config import ConfigError, Scenario, load_scenario
from .electrostatics import ElectrostaticsError, PolarizabilityResult, polarizability
from .em_scattering import EMRegimeError, body_tensors, solve_em_continuum, solve_em_discrete
from .ensemble import (
    Box,
    DensityFields,
    EnsembleError,
    Grid,
    ParticleEnsemble,
    bin_densities,
    ensemble_from_template,
    read_ensemble,
    sample_positions,
    stratified_positions,
)
from .geometry import MeshError, SurfaceMesh, generate_box, generate_ellipsoid, generate_sphere, load_mesh
from .homogenization import compare_soft, face_probes, gaussian_density, probe_offset
from .io import LineSampler, PlaneSampler, emit_plot_data, sample_solution, write_csv, write_json
from .linsolve import SolverError

logger = logging.getLogger("scfield")

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_NUMERICAL = 2

SOLVE_MODES = ("polarizability", "acoustic-discrete", "acoustic-continuum", "em-discrete", "em-continuum")


@dataclass
class RunResult:
    """What a scenario run produced: written files and summary rows."""

    files: list[Path] = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    solution: object = None


# ---------------------------------------------------------------------------
# Pipeline stages
# ---------------------------------------------------------------------------


def build_mesh(s: Scenario) -> SurfaceMesh:
    b = s.body
    if b.shape == "sphere":
        mesh = generate_sphere(b.radius, b.refinement)
    elif b.shape == "ellipsoid":
        mesh = generate_ellipsoid(b.semiaxes, b.refinement)
    elif b.shape == "box":
        mesh = generate_box(b.sides or (1.0, 1.0, 1.0), b.divisions)
    else:
        mesh = load_mesh(b.mesh)
    return mesh.scaled(b.scale) if b.scale != 1.0 else mesh


def preflight(s: Scenario, mesh: SurfaceMesh) -> None:
    """Checks that need the body size; run before any solve."""
    if s.mode in ("polarizability", "compare") or s.ensemble.file is not None:
        return
    a = mesh.radius
    if s.ensemble.count > 0 and s.ensemble.placement == "dart" and s.ensemble.min_separation <= s.numerics.a_safety * a:
        raise ConfigError(
            f"ensemble.min_separation = {s.ensemble.min_separation:.4g} must exceed "
            f"a_safety * body radius = {s.numerics.a_safety * a:.4g}"
        )


def region_of(s: Scenario) -> Box:
    return Box(s.ensemble.region.lower, s.ensemble.region.upper)


def build_ensemble(s: Scenario, template: PolarizabilityResult, em: bool = False) -> ParticleEnsemble:
    p = s.physics
    region = region_of(s)
    physics = dict(boundary_kind=p.boundary, wavenumber=p.k, direction=p.direction)
    if s.ensemble.file is not None:
        return read_ensemble(s.ensemble.file, region, **physics)
    count = s.ensemble.count
    if count == 0:
        pos = np.zeros((0, 3))
    elif s.ensemble.placement == "stratified":
        pos = stratified_positions(region, count, s.ensemble.min_separation, s.seed)
    else:
        pos = sample_positions(region, count, s.ensemble.min_separation, s.seed)
    extra = {}
    if em:
        alpha, beta_tilde = body_tensors(
            template.b_tensors, template.volume, p.eps, p.mu, s.numerics.order, p.eps0, p.mu0,
            sigma=p.sigma, omega=p.omega, use_conductivity=p.use_conductivity,
        )
        extra = {"alpha": alpha, "beta_tilde": beta_tilde}
    return ensemble_from_template(pos, template, region, h=p.h, **physics, **extra)


def continuum_fields(s: Scenario, template: Optional[PolarizabilityResult], ensemble: Optional[ParticleEnsemble]) -> DensityFields:
    grid = Grid(region_of(s), s.numerics.grid)
    d = s.density
    if d.kind == "binned":
        return bin_densities(ensemble, grid)
    if d.kind == "uniform":
        def fn(x):
            return np.full(len(np.atleast_2d(x)), d.amplitude)
    else:
        fn = gaussian_density(d.amplitude, d.width, d.center)
    kind = s.physics.boundary
    if kind == "dirichlet":
        return DensityFields.from_functions(grid, capacitance=fn)
    if kind == "impedance":
        return DensityFields.from_functions(grid, impedance=fn)
    return DensityFields.from_functions(grid, volume=fn, beta=template.beta)


def probe_points(s: Scenario) -> np.ndarray:
    pts = [np.asarray(s.output.probes, float).reshape(-1, 3)]
    if s.output.probe_faces:
        region = region_of(s)
        pts.append(face_probes(region, s.output.probe_offset or probe_offset(region)))
    return np.concatenate(pts)


def _out(s: Scenario, out_dir: Optional[Path]) -> Path:
    return Path(out_dir) if out_dir is not None else Path(s.output.directory)


def _write_probes(s: Scenario, solution, out: Path, result: RunResult) -> None:
    pts = probe_points(s)
    if len(pts) and "csv" in s.output.formats:
        header, rows = sample_solution(solution, pts)
        result.files.append(write_csv(header, rows, out / "probes.csv"))


def _write_plots(s: Scenario, solution, out: Path, result: RunResult) -> None:
    region = region_of(s)
    for line in s.output.lines:
        sampler = LineSampler(line.start, line.end, line.samples)
        result.files.append(emit_plot_data(solution, sampler, out / f"{line.name}.csv", region))
    for plane in s.output.planes:
        sampler = PlaneSampler(plane.axis, plane.value, plane.shape, plane.lower, plane.upper)
        result.files.append(emit_plot_data(solution, sampler, out / f"{plane.name}.csv", region))


def run_polarizability(s: Scenario, out: Path, result: RunResult) -> PolarizabilityResult:
    mesh = build_mesh(s)
    mesh.validate()
    preflight(s, mesh)
    pol = polarizability(mesh, s.physics.gamma, s.numerics.order, eps0=s.physics.eps0)
    if "json" in s.output.formats:
        result.files.append(write_json(pol.to_dict(), out / "polarizability.json"))
    result.summary.update({
        "capacitance": pol.capacitance,
        "volume": pol.volume,
        "convergence_ratio": pol.convergence_ratio,
        "convergence_reliable": pol.convergence_reliable,
    })
    return pol


def _solve(s: Scenario, out: Path, result: RunResult):
    pol = run_polarizability(s, out, result)
    p, num = s.physics, s.numerics
    if s.mode == "polarizability":
        return None
    if s.mode == "acoustic-discrete":
        ens = build_ensemble(s, pol)
        sol = solve_discrete(ens, tol=num.tol)
        doc = sol.to_dict()
        result.summary.update({"bodies": len(ens), "residual": sol.info.residual, "solver": sol.info.method})
        if sol.regime is not None:
            result.summary["regime_ok"] = sol.regime["ok"]
            for key in ("ka", "a_over_d", "kd", "volume_fraction"):
                result.summary[key] = sol.regime[key]
    elif s.mode == "acoustic-continuum":
        ens = build_ensemble(s, pol) if s.density.kind == "binned" else None
        fields = continuum_fields(s, pol, ens)
        solver = {"dirichlet": solve_soft, "impedance": solve_impedance_continuum, "neumann": solve_hard}[p.boundary]
        sol = solver(fields, p.k, p.direction, tol=num.continuum_tol, dense_limit=num.dense_limit)
        header = sol.header()
        if p.boundary == "dirichlet" and min(fields.grid.shape) >= 5:
            header["schrodinger_residual"] = schrodinger_residual(sol, fields, p.k)
            result.summary["schrodinger_residual"] = header["schrodinger_residual"]
        doc = header
        result.summary.update({"nodes": fields.grid.size, "residual": sol.info.residual, "solver": sol.info.method})
        if "csv" in s.output.formats:
            cols = ["x", "y", "z", "re_u", "im_u"]
            if sol.grad is not None:
                cols += [f"{part}_grad_{ax}" for ax in "xyz" for part in ("re", "im")]
            result.files.append(write_csv(cols, sol.to_rows(), out / "grid.csv"))
    else:
        ens = build_ensemble(s, pol, em=True)
        if s.mode == "em-discrete":
            sol = solve_em_discrete(ens, p.polarization, eps0=p.eps0, mu0=p.mu0, allow_near_zone=num.allow_near_zone,
                                    em_safety=num.em_safety, tol=num.tol)
        else:
            fields = bin_densities(ens, Grid(region_of(s), num.grid))
            sol = solve_em_continuum(fields, p.k, p.direction, p.polarization, eps0=p.eps0, mu0=p.mu0,
                                     tol=num.continuum_tol, dense_limit=num.dense_limit)
            result.summary["self_cell_estimate"] = sol.metadata["self_cell_estimate"]
        doc = sol.to_dict()
        result.summary.update({"sites": len(sol.positions), "residual": sol.info.residual, "solver": sol.info.method})
    if "json" in s.output.formats:
        result.files.append(write_json(doc, out / "solution.json"))
    _write_probes(s, sol, out, result)
    return sol


def _compare(s: Scenario, out: Path, result: RunResult) -> None:
    region = region_of(s)
    d = s.density
    if d.kind == "uniform":
        def density(x):
            return np.full(len(np.atleast_2d(x)), d.amplitude)
    else:
        density = gaussian_density(d.amplitude, d.width, d.center)
    probes = probe_points(s)
    if len(probes) == 0:
        probes = face_probes(region, s.output.probe_offset or probe_offset(region))
    seeds = list(range(s.seed, s.seed + s.ensemble.seeds))
    report = compare_soft(density, region, s.ensemble.counts, seeds, s.physics.k, s.physics.direction,
                          s.numerics.grid, probes, s.numerics.separation_fraction, tol=s.numerics.continuum_tol)
    result.files.append(write_json(report.to_dict(), out / "compare.json"))
    for count, dist in zip(report.counts, report.distances):
        result.summary[f"L2 distance J={count}"] = dist
    result.summary["monotone"] = report.monotone
    result.summary["seconds"] = report.seconds


def run_scenario(scenario: Scenario, command: str = "solve", out_dir: Optional[Path] = None) -> RunResult:
    """Execute ``command`` for a validated scenario and write its outputs."""
    out = _out(scenario, out_dir)
    out.mkdir(parents=True, exist_ok=True)
    result = RunResult()
    if command == "polarizability":
        run_polarizability(scenario, out, result)
    elif command == "compare":
        if scenario.mode != "compare":
            raise ConfigError(f"'compare' needs mode = \"compare\", scenario has {scenario.mode!r}")
        _compare(scenario, out, result)
    elif command in ("solve", "emit"):
        if scenario.mode == "compare":
            raise ConfigError("compare scenarios run with the 'compare' subcommand")
        if command == "emit" and not (scenario.output.lines or scenario.output.planes):
            raise ConfigError("'emit' needs at least one [[output.lines]] or [[output.planes]] entry")
        if command == "emit" and scenario.mode == "polarizability":
            raise ConfigError("'emit' needs a field-solving mode")
        sol = _solve(scenario, out, result)
        result.solution = sol
        if sol is not None:
            _write_plots(scenario, sol, out, result)
    else:
        raise ConfigError(f"unknown command {command!r}")
    return result


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def _threads(n: Optional[int]):
    stack = contextlib.ExitStack()
    if n is None:
        return stack
    from threadpoolctl import threadpool_limits

    stack.enter_context(threadpool_limits(limits=n))
    stack.enter_context(scipy.fft.set_workers(n))
    return stack


def _print_summary(result: RunResult, stream=sys.stdout) -> None:
    if not result.summary:
        return
    width = max(len(k) for k in result.summary)
    print("-" * (width + 26), file=stream)
    for key, value in result.summary.items():
        text = f"{value:.6g}" if isinstance(value, float) else str(value)
        print(f"{key:<{width}}  {text}", file=stream)
    print("-" * (width + 26), file=stream)
    for path in result.files:
        print(f"wrote {path}", file=stream)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scfield", description="Self-consistent fields in media of small scatterers.")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "polarizability": "capacitance and polarizability tensors of the configured body",
        "solve": "run the configured scenario",
        "compare": "discrete-versus-continuum comparison",
        "emit": "solve and write line/plane plot data",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", required=True, type=Path, help="scenario TOML file")
        p.add_argument("--seed", type=int, default=None, help="override the scenario seed")
        p.add_argument("--out", type=Path, default=None, help="output directory")
        p.add_argument("--threads", type=int, default=None, help="cap BLAS/FFT threads")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.seed is not None and args.seed < 0:
            raise ConfigError("--seed must be >= 0")
        if args.threads is not None and args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        scenario = load_scenario(args.config).with_seed(args.seed)
        with _threads(args.threads):
            result = run_scenario(scenario, args.command, args.out)
    except (ConfigError, MeshError, EnsembleError, EMRegimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (SolverError, ElectrostaticsError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    _print_summary(result)
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
