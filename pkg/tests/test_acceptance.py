"""Acceptance criteria 1-10, each reported as one PASS/FAIL line.

Run under pytest (lines are printed even with output capture on) or
directly with ``python tests/test_acceptance.py``.
"""

from __future__ import annotations

import math
import sys
import time
import warnings

import numpy as np
import pytest

from scfield.acoustic_continuum import (
    first_born,
    schrodinger_residual,
    solve_hard,
    solve_impedance_continuum,
    solve_soft,
)
from scfield.acoustic_discrete import (
    RegimeWarning,
    cross_section,
    evaluate_field,
    plane_wave,
    solve_dirichlet,
    solve_impedance,
    solve_neumann,
)
from scfield.electrostatics import (
    SeriesOperators,
    alpha_series,
    beta_tensor,
    capacitance,
    convergence_estimate,
    polarizability,
    richardson,
)
from scfield.em_scattering import (
    body_tensors,
    build_smatrix,
    dipole_far_fields,
    electric_moment,
    first_born_em,
    magnetic_moment,
    solve_em_continuum,
)
from scfield.ensemble import Box, DensityFields, Grid, ParticleEnsemble
from scfield.geometry import generate_sphere
from scfield.homogenization import compare_soft, face_probes, gaussian_density, probe_offset

MACHINE = 1e-13


class Check:
    """Collects named conditions for one criterion."""

    def __init__(self, number: int, title: str):
        self.number, self.title = number, title
        self.items: list[tuple[bool, str]] = []
        self.start = time.perf_counter()

    def add(self, ok, detail: str) -> None:
        self.items.append((bool(ok), detail))

    @property
    def ok(self) -> bool:
        return all(ok for ok, _ in self.items)

    def line(self) -> str:
        failed = [d for ok, d in self.items if not ok]
        shown = failed if failed else [d for _, d in self.items]
        status = "PASS" if self.ok else "FAIL"
        return f"criterion {self.number:>2} {status}  {self.title}: " + "; ".join(shown)


def _soft(positions, C, k=1.0, nu=(0, 0, 1), region=Box.cube(20.0)):
    pos = np.asarray(positions, float).reshape(-1, 3)
    return ParticleEnsemble(pos, C, 0.0, 1.0, np.zeros((3, 3)), 0.0, 1e-3, region, wavenumber=k, direction=nu)


def criterion_1() -> Check:
    c = Check(1, "sphere capacitance")
    values = [capacitance(generate_sphere(1.0, r)) for r in (2, 3, 4)]
    ref3 = abs(values[1] / (4 * math.pi) - 1)
    c.add(ref3 < 0.01, f"refinement 3 error {ref3:.2e} (< 1e-2)")
    limit, order = richardson(values)
    ext = abs(limit / (4 * math.pi) - 1)
    c.add(ext < 0.002, f"extrapolated error {ext:.2e} (< 2e-3), observed order {order:.2f}")
    elapsed = time.perf_counter() - c.start
    c.add(elapsed < 10, f"{elapsed:.1f} s (< 10 s)")
    return c


def criterion_2() -> Check:
    c = Check(2, "polarizability series on the unit sphere")
    mesh = generate_sphere(1.0, 3)
    ops = SeriesOperators(mesh)
    tensors = [ops.b_tensor(m) for m in range(9)]
    for gamma in (0.3, -0.5, -1.0):
        alpha = alpha_series(mesh, gamma, 6, ops)
        target = 6 * gamma / (3 - gamma)
        err = np.abs(alpha - target * np.eye(3)).max() / abs(target)
        c.add(err < 0.03, f"gamma={gamma:+.1f} rel err {err:.2e}")
        q = convergence_estimate(tensors, gamma, mesh.volume).ratio
        c.add(0 < q < 1, f"ratio {q:.3f}")
    elapsed = time.perf_counter() - c.start
    c.add(elapsed < 60, f"{elapsed:.1f} s (< 60 s)")
    return c


def criterion_3() -> Check:
    c = Check(3, "closed-form first order")
    mesh = generate_sphere(1.0, 3)
    ops = SeriesOperators(mesh)
    b1, v = ops.b_tensor(1), mesh.volume
    worst = 0.0
    for gamma in (0.3, -0.5, 0.9, -1.0):
        expected = 2 * (gamma + gamma**2) * np.eye(3) - gamma**2 * b1 / (math.pi * v)
        worst = max(worst, np.abs(alpha_series(mesh, gamma, 1, ops) - expected).max() / np.abs(expected).max())
    c.add(worst < MACHINE, f"alpha^(1) max rel diff {worst:.1e}")
    c.add(np.array_equal(beta_tensor(mesh, 1, ops), -b1 / (math.pi * v)), "beta^(1) bit-identical")
    return c


def criterion_4() -> Check:
    c = Check(4, "discrete solver identities")
    x = np.array([[1.0, -2.0, 3.0], [4.0, 4.0, -1.0]])
    empty = solve_dirichlet(_soft(np.zeros((0, 3)), 0.0))
    c.add(np.array_equal(evaluate_field(empty, x), plane_wave(x, 1.0, np.array([0, 0, 1.0]))), "J=0 identity")
    s1 = np.array([0.3, 0.2, -0.4])
    one = solve_dirichlet(_soft([s1], 0.7))
    u0 = np.exp(1j * s1[2])
    c.add(one.u[0] == u0 and abs(one.charges[0] + 0.7 * u0) < 1e-15, "J=1 closed form")
    pair = np.array([[0.4, 0.1, -0.5], [-0.3, 0.2, 0.6]])
    c1, c2, k = 0.2, 0.35, 1.7
    two = solve_dirichlet(_soft(pair, np.array([c1, c2]), k=k))
    r = np.linalg.norm(pair[0] - pair[1])
    g = np.exp(1j * k * r) / (4 * math.pi * r)
    a, b = np.exp(1j * k * pair[0, 2]), np.exp(1j * k * pair[1, 2])
    det = 1 - g * g * c1 * c2
    err2 = max(abs(two.u[0] - (a - g * c2 * b) / det), abs(two.u[1] - (b - g * c1 * a) / det))
    c.add(err2 < 1e-12, f"J=2 oracle diff {err2:.1e}")
    rng = np.random.default_rng(7)
    pos = rng.uniform(-4, 4, (5, 3))
    soft = solve_dirichlet(_soft(pos, 0.8))
    imp_ens = ParticleEnsemble(pos, 0.8, 0.0, 0.5, np.zeros((3, 3)), 1e12, 1e-3, Box.cube(20.0),
                               boundary_kind="impedance")
    imp = solve_impedance(imp_ens)
    d = np.linalg.norm(imp.u - soft.u) / np.linalg.norm(soft.u)
    c.add(d < 1e-6, f"h->inf vs soft {d:.1e}")
    worst = 0.0
    for seed in range(3):
        rng = np.random.default_rng(seed)
        pos = rng.uniform(-4, 4, (5, 3))
        C = rng.uniform(0.5, 2.0, 5)
        nu, n = (v / np.linalg.norm(v) for v in rng.normal(size=(2, 3)))
        fwd = cross_section(solve_dirichlet(_soft(pos, C, 1.5, nu)), n)[0]
        back = cross_section(solve_dirichlet(_soft(pos, C, 1.5, -n)), -nu)[0]
        worst = max(worst, abs(fwd - back) / abs(fwd))
    c.add(worst < 1e-6, f"reciprocity {worst:.1e} over 3 seeds")
    return c


def criterion_5() -> Check:
    c = Check(5, "hard/soft magnitude ordering")
    body = polarizability(generate_sphere(1.0, 1), gamma=0.0, order=2)
    ka = 0.01
    k = ka / body.radius
    kw = dict(region=Box.cube(4.0), wavenumber=k)
    hard = solve_neumann(ParticleEnsemble([[0, 0, 0]], body.capacitance, body.volume, body.area, body.beta, 0.0,
                                          body.radius, boundary_kind="neumann", **kw))
    soft = solve_dirichlet(ParticleEnsemble([[0, 0, 0]], body.capacitance, body.volume, body.area, body.beta, 0.0,
                                            body.radius, **kw))
    dirs = np.array([[0, 0, 1.0], [0, 0, -1.0], [1.0, 0, 0]])
    ratio = max(abs(hard.strength(n)[0]) for n in dirs) / abs(soft.charges[0])
    c.add(ratio < 10 * ka**2, f"|Q_hard|/|Q_soft| = {ratio:.2e} (< {10 * ka**2:.0e})")
    elapsed = time.perf_counter() - c.start
    c.add(elapsed < 1.0, f"{elapsed:.2f} s (< 1 s)")
    return c


def criterion_6() -> Check:
    c = Check(6, "discrete-to-continuum homogenization")
    region = Box.cube(10.0)
    density = gaussian_density(0.4, 2.0)
    probes = face_probes(region, probe_offset(region))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RegimeWarning)
        rep = compare_soft(density, region, [250, 500, 1000, 2000], range(5), 0.3, (0, 0, 1), (32, 32, 32), probes)
    text = ", ".join(f"J={j}: {d:.4f}" for j, d in zip(rep.counts, rep.distances))
    c.add(rep.monotone, f"monotone ({text})")
    c.add(rep.distances[-1] <= 0.05, f"J=2000 distance {rep.distances[-1]:.4f} (<= 0.05)")
    c.add(rep.seconds < 600, f"{rep.seconds:.0f} s (< 600 s)")
    return c


def criterion_7() -> Check:
    c = Check(7, "Schrodinger residual")
    region, k = Box.cube(10.0), 0.3
    grid = Grid(region, (32, 32, 32))
    fields = DensityFields.from_functions(grid, capacitance=gaussian_density(0.4, 2.0))
    res = schrodinger_residual(solve_soft(fields, k, (0, 0, 1)), fields, k)
    c.add(res < 0.05, f"32^3 smooth C residual {res:.2e} (< 5e-2)")
    control = []
    for n in (16, 32):
        empty = DensityFields.empty(Grid(region, (n, n, n)))
        control.append(schrodinger_residual(solve_soft(empty, k, (0, 0, 1)), empty, k))
    ratio = control[0] / control[1]
    c.add(3.6 < ratio < 4.4, f"C=0 control ratio under halving {ratio:.2f} (about 4)")
    return c


def criterion_8() -> Check:
    c = Check(8, "EM structural identities")
    rng = np.random.default_rng(11)
    trans = pair = two_path = 0.0
    for _ in range(100):
        eps0, mu0 = rng.uniform(0.5, 3.0, 2)
        k, vol = rng.uniform(0.1, 4.0), rng.uniform(0.1, 2.0)
        n = rng.normal(size=3)
        n /= np.linalg.norm(n)
        P, M = rng.normal(size=(2, 3)) + 1j * rng.normal(size=(2, 3))
        e, h = dipole_far_fields(P, M, n, k, eps0, mu0)
        trans = max(trans, abs(n @ e) / np.linalg.norm(e))
        pair = max(pair, np.linalg.norm(h - math.sqrt(eps0 / mu0) * np.cross(n, e)) / np.linalg.norm(h))
        alpha, bt = rng.normal(size=(2, 3, 3))
        U = rng.normal(size=6) + 1j * rng.normal(size=6)
        s = build_smatrix(alpha, bt, vol, n, k, eps0, mu0).apply(U)
        ref = np.concatenate(dipole_far_fields(electric_moment(alpha, vol, U[:3], eps0),
                                               magnetic_moment(bt, vol, U[3:], mu0), n, k, eps0, mu0))
        two_path = max(two_path, np.linalg.norm(s - ref) / np.linalg.norm(ref))
    c.add(trans < MACHINE, f"transversality {trans:.1e}")
    c.add(pair < MACHINE, f"H/E pairing {pair:.1e}")
    c.add(two_path < MACHINE, f"two-path S-matrix {two_path:.1e}")
    mesh = generate_sphere(1.0, 2)
    ops = SeriesOperators(mesh)
    tensors = [ops.b_tensor(m) for m in range(5)]
    _, bt = body_tensors(tensors, mesh.volume, eps=4.0, mu=1.0, n=4)
    c.add(np.array_equal(bt, alpha_series(mesh, -1.0, 4, ops)), "gamma~=0 gives beta~=beta exactly")
    return c


def _born_ratios(full, born, amplitudes):
    errs = []
    for amp in amplitudes:
        f, b = full(amp), born(amp)
        errs.append(np.linalg.norm(f - b) / np.linalg.norm(f))
    return [errs[0] / errs[1], errs[1] / errs[2]]


def criterion_9() -> Check:
    c = Check(9, "Born consistency")
    region, k, nu = Box.cube(10.0), 1.0, np.array([0.0, 0.6, 0.8])
    grid = Grid(region, (10, 10, 10))
    amps = (0.04, 0.02, 0.01)

    def acoustic(amp):
        dens = gaussian_density(amp, 1.5)
        return DensityFields.from_functions(grid, capacitance=dens, impedance=dens, volume=dens,
                                            beta=np.diag([-1.5, -1.0, -0.5]))

    solvers = {"soft": solve_soft, "impedance": solve_impedance_continuum, "hard": solve_hard}
    for kind, solver in solvers.items():
        ratios = _born_ratios(lambda a: solver(acoustic(a), k, nu, tol=1e-12).u,
                              lambda a: first_born(acoustic(a), k, nu, kind).u, amps)
        c.add(all(3.6 < r < 4.4 for r in ratios), f"{kind} " + "/".join(f"{r:.2f}" for r in ratios))

    em_grid = Grid(region, (6, 6, 6))

    def em(amp):
        w = gaussian_density(amp, 1.5)(em_grid.centers)
        f = DensityFields.empty(em_grid)
        f.alpha_v = w[:, None, None] * np.diag([2.0, 1.5, 1.0])
        f.beta_tilde_v = w[:, None, None] * (-1.5 * np.eye(3))
        return f

    ratios = _born_ratios(lambda a: solve_em_continuum(em(a), k, nu, tol=1e-12).U,
                          lambda a: first_born_em(em(a), k, nu).U, amps)
    c.add(all(3.6 < r < 4.4 for r in ratios), "EM " + "/".join(f"{r:.2f}" for r in ratios))
    return c


def criterion_10() -> Check:
    c = Check(10, "hard solve with beta=0 reduces to soft")
    region, k = Box.cube(10.0), 1.3
    grid = Grid(region, (8, 8, 8))
    vol = gaussian_density(0.05, 1.5)
    hard = solve_hard(DensityFields.from_functions(grid, volume=vol, beta=np.zeros((3, 3))), k, (0, 0, 1), tol=1e-12)
    soft = solve_soft(DensityFields.from_functions(grid, capacitance=lambda x: k * k * vol(x)), k, (0, 0, 1), tol=1e-12)
    d = np.linalg.norm(hard.u - soft.u) / np.linalg.norm(soft.u)
    c.add(d < 1e-8, f"relative difference {d:.1e} (< 1e-8)")
    return c


CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5,
            criterion_6, criterion_7, criterion_8, criterion_9, criterion_10]


@pytest.mark.parametrize("criterion", CRITERIA, ids=[f"criterion_{i}" for i in range(1, 11)])
def test_criterion(criterion, capsys):
    check = criterion()
    with capsys.disabled():
        print("\n" + check.line())
    assert check.ok, check.line()


if __name__ == "__main__":
    failures = 0
    for crit in CRITERIA:
        result = crit()
        print(result.line(), flush=True)
        failures += not result.ok
    sys.exit(1 if failures else 0)
