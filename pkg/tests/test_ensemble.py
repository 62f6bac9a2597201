import math

import numpy as np
import pytest

from scfield.electrostatics import polarizability
from scfield.ensemble import (
    Box,
    DensityFields,
    EnsembleError,
    Grid,
    ParticleEnsemble,
    bin_densities,
    check_regime,
    density_ensemble,
    ensemble_from_template,
    impedance_weight,
    read_ensemble,
    sample_ensemble,
    sample_positions,
    strata_shape,
    stratified_positions,
    write_ensemble,
)
from scfield.geometry import generate_sphere


@pytest.fixture(scope="module")
def template():
    return polarizability(generate_sphere(0.01, 1), gamma=0.0, order=1)


@pytest.fixture
def box():
    return Box.cube(10.0)


def min_distance(p):
    d = np.linalg.norm(p[:, None] - p[None], axis=-1)
    d[np.diag_indices(len(p))] = np.inf
    return d.min()


class TestBox:
    def test_geometry(self):
        b = Box((0, 0, 0), (1, 2, 4))
        assert b.volume == 8.0
        assert np.array_equal(b.size, [1, 2, 4])
        assert b.contains([[0.5, 1, 2], [2, 0, 0]]).tolist() == [True, False]

    def test_invalid(self):
        with pytest.raises(ValueError):
            Box((0, 0, 0), (1, 0, 1))


class TestDartPlacement:
    def test_separation_and_inside(self, box):
        p = sample_positions(box, 300, 0.8, seed=3)
        assert p.shape == (300, 3)
        assert min_distance(p) >= 0.8
        assert box.contains(p).all()

    def test_deterministic(self, box):
        assert np.array_equal(sample_positions(box, 100, 0.5, 7), sample_positions(box, 100, 0.5, 7))
        assert not np.array_equal(sample_positions(box, 100, 0.5, 7), sample_positions(box, 100, 0.5, 8))

    def test_infeasible_packing(self, box):
        with pytest.raises(EnsembleError, match="infeasible"):
            sample_positions(box, 400, 1.0, 0)

    def test_attempt_budget(self, box):
        with pytest.raises(EnsembleError, match="placement failed"):
            sample_positions(box, 200, 1.0, 0, max_attempts=50)

    def test_zero_count(self, box):
        assert sample_positions(box, 0, 1.0, 0).shape == (0, 3)

    def test_intensity_thinning(self, box):
        p = sample_positions(box, 400, 0.3, 1, intensity=lambda x: (x[:, 0] > 0).astype(float))
        assert np.all(p[:, 0] > 0)


class TestStratified:
    @pytest.mark.parametrize("count,expected", [(8, (2, 2, 2)), (250, (5, 5, 10)), (1000, (10, 10, 10))])
    def test_strata_shape_cube(self, box, count, expected):
        assert sorted(strata_shape(box, count)) == sorted(expected)
        assert math.prod(strata_shape(box, count)) == count

    def test_strata_shape_elongated(self):
        assert strata_shape(Box((0, 0, 0), (4, 1, 1)), 4) == (4, 1, 1)

    def test_one_point_per_cell(self, box):
        p = stratified_positions(box, 64, 0.5, seed=0)
        cells = np.floor((p - box.lo) / 2.5).astype(int)
        assert len({tuple(c) for c in cells}) == 64
        assert min_distance(p) >= 0.5

    def test_deterministic(self, box):
        assert np.array_equal(stratified_positions(box, 27, 0.3, 5), stratified_positions(box, 27, 0.3, 5))

    def test_infeasible(self, box):
        with pytest.raises(EnsembleError):
            stratified_positions(box, 1000, 1.5, 0)

    def test_density_ensemble_weights(self, box):
        p = stratified_positions(box, 125, 0.5, 2)
        ens = density_ensemble(p, lambda x: np.full(len(x), 0.2), box, wavenumber=0.5)
        assert np.allclose(ens.capacitance, 0.2 * 1000 / 125)
        assert ens.capacitance.sum() == pytest.approx(0.2 * box.volume)
        assert np.allclose(ens.radius, ens.capacitance / (4 * math.pi))
        assert ens.boundary_kind == "dirichlet"

    def test_density_ensemble_rejects_negative(self, box):
        with pytest.raises(EnsembleError):
            density_ensemble(np.zeros((2, 3)), lambda x: -np.ones(len(x)), box)


class TestParticleEnsemble:
    def test_template_broadcast(self, box, template):
        ens = ensemble_from_template(np.zeros((3, 3)) + [[0, 0, 0], [1, 0, 0], [0, 2, 0]], template, box)
        assert len(ens) == 3
        assert np.all(ens.capacitance == template.capacitance)
        assert ens.beta.shape == (3, 3, 3)
        assert ens.min_separation() == pytest.approx(1.0)

    def test_direction_normalized(self, box, template):
        ens = ensemble_from_template(np.zeros((1, 3)), template, box, direction=(0, 3, 4))
        assert np.allclose(ens.nu, [0, 0.6, 0.8])

    def test_outside_rejected(self, box, template):
        with pytest.raises(EnsembleError):
            ensemble_from_template([[6.0, 0, 0]], template, box)

    def test_bad_kind(self, box, template):
        with pytest.raises(EnsembleError):
            ensemble_from_template(np.zeros((1, 3)), template, box, boundary_kind="rigid")

    def test_without(self, box, template):
        ens = sample_ensemble(box, 5, 1.0, template, seed=0)
        sub = ens.without(2)
        assert len(sub) == 4
        assert np.array_equal(sub.positions, np.delete(ens.positions, 2, axis=0))

    def test_complex_alpha_kept(self, box, template):
        a = np.eye(3) * (1 + 0.5j)
        ens = ensemble_from_template(np.zeros((2, 3)) + [[0, 0, 0], [1, 1, 1]], template, box, alpha=a)
        assert np.iscomplexobj(ens.alpha)


def test_impedance_weight_limits():
    c = np.array([2.0, 2.0, 2.0])
    w = impedance_weight(np.array([0.0, 1e12, np.inf]), np.array([1.0, 1.0, 1.0]), c)
    assert w[0] == 0.0
    assert w[1] == pytest.approx(2.0, rel=1e-10)
    assert w[2] == 2.0
    # small h: h|S|
    assert impedance_weight(1e-6, 3.0, 2.0) == pytest.approx(3e-6, rel=1e-5)


class TestRegime:
    def test_flags(self, box, template):
        ens = sample_ensemble(box, 20, 1.0, template, seed=0, wavenumber=0.5)
        diag = check_regime(ens)
        assert diag.ka == pytest.approx(0.5 * template.radius)
        assert diag.flags["ka_small"] and diag.flags["a_over_d_small"]
        em = check_regime(ens, "em")
        assert em.flags["far_zone"] == (em.kd > 2 * math.pi)

    def test_not_small(self, box):
        big = polarizability(generate_sphere(1.0, 1), order=1)
        ens = ensemble_from_template([[0, 0, 0], [1.5, 0, 0]], big, box, wavenumber=1.0)
        diag = check_regime(ens)
        assert not diag.ok
        assert any("not small" in m for m in diag.messages)

    def test_empty(self, box, template):
        with pytest.raises(EnsembleError):
            check_regime(ensemble_from_template(np.zeros((0, 3)), template, box))


class TestBinning:
    def test_totals_conserved(self, box, template):
        ens = sample_ensemble(box, 200, 0.5, template, seed=4, h=3.0, alpha=np.eye(3))
        f = bin_densities(ens, (5, 5, 5))
        t = f.totals()
        assert t["capacitance"] == pytest.approx(ens.capacitance.sum(), rel=1e-12)
        assert t["volume"] == pytest.approx(ens.volume.sum(), rel=1e-12)
        assert t["impedance"] == pytest.approx(ens.impedance_weights().sum(), rel=1e-12)
        assert f.counts.sum() == 200
        assert f.alpha_v.sum(axis=0)[0, 0] * f.grid.cell_volume == pytest.approx(ens.volume.sum())

    def test_beta_recovered(self, box, template):
        ens = sample_ensemble(box, 50, 0.5, template, seed=1)
        f = bin_densities(ens, (4, 4, 4))
        occ = f.counts > 0
        assert np.allclose(f.beta[occ], template.beta)
        assert np.all(f.beta[~occ] == 0)

    def test_cell_index_boundary(self, box):
        g = Grid(box, (4, 4, 4))
        idx = g.cell_index(np.array([box.lo, box.hi]))
        assert idx.tolist() == [0, g.size - 1]

    def test_from_functions(self, box):
        g = Grid(box, (8, 8, 8))
        f = DensityFields.from_functions(g, capacitance=lambda x: np.full(len(x), 0.5))
        assert f.totals()["capacitance"] == pytest.approx(0.5 * box.volume)


class TestFiles:
    def test_round_trip(self, tmp_path, box, template):
        ens = sample_ensemble(box, 10, 1.0, template, seed=2, h=np.inf,
                              alpha=np.eye(3) * (2 - 1j), beta_tilde=-np.eye(3))
        path = tmp_path / "ens.json"
        write_ensemble(ens, path)
        back = read_ensemble(path, box)
        assert np.array_equal(back.positions, ens.positions)
        assert np.array_equal(back.capacitance, ens.capacitance)
        assert np.all(np.isinf(back.h))
        assert np.array_equal(back.alpha, ens.alpha)
        assert np.array_equal(back.beta_tilde, ens.beta_tilde)

    def test_missing_key(self, tmp_path, box):
        path = tmp_path / "bad.json"
        path.write_text('[{"position": [0, 0, 0], "C": 1}]')
        with pytest.raises(EnsembleError, match="missing"):
            read_ensemble(path, box)

    def test_not_json(self, tmp_path, box):
        path = tmp_path / "bad.json"
        path.write_text("{")
        with pytest.raises(EnsembleError):
            read_ensemble(path, box)
