import csv

import numpy as np
import pytest

from gradconstraint.dual_solver import FlowParams, run_flow
from gradconstraint.duality import marini_reconstruct
from gradconstraint.energy import dphi_star
from gradconstraint.errors import NonConvergenceError, ParameterError
from gradconstraint.experiments import (CSV_COLUMNS, ConvergenceTable, ManufacturedCase, StudyConfig,
                                        active_set_report, exact_solution, run_aposteriori_study,
                                        run_apriori_study, run_study)
from gradconstraint.mesh import build_disk_mesh
from gradconstraint.spaces import RTFunction, cr_interpolate


class TestExactSolution:
    def test_examples(self):
        u, grad_u, z = exact_solution(ManufacturedCase(2.0))
        assert u(np.zeros(2)) == pytest.approx(0.5, abs=1e-15)
        u, grad_u, z = exact_solution(ManufacturedCase(10.0))
        assert u(np.zeros(2)) == pytest.approx(0.9, abs=1e-15)
        assert u(np.array([0.5, 0.0])) == pytest.approx(0.5, abs=1e-15)
        np.testing.assert_allclose(z(np.array([0.2, 0.0])), [-1.0, 0.0], atol=1e-15)

    def test_outer_gradient_unit(self):
        case = ManufacturedCase(10.0)
        rng = np.random.default_rng(0)
        rad = rng.uniform(0.2, 1.0, 200)
        ang = rng.uniform(0, 2 * np.pi, 200)
        x = np.stack([rad * np.cos(ang), rad * np.sin(ang)], axis=1)
        np.testing.assert_allclose(np.linalg.norm(case.grad_u(x), axis=1), 1.0, atol=1e-15)
        assert np.all(case.active(x))

    @pytest.mark.parametrize("C", [2.5, 4.0, 10.0])
    def test_continuity(self, C):
        case = ManufacturedCase(C)
        ang = np.linspace(0, 2 * np.pi, 100, endpoint=False)
        unit = np.stack([np.cos(ang), np.sin(ang)], axis=1)
        k = case.kink_radius
        inner = case.u(unit * k * (1 - 1e-15))
        outer = case.u(unit * k)
        assert np.abs(inner - outer).max() <= 1e-13
        np.testing.assert_allclose(np.linalg.norm(case.z(unit * 0.3), axis=1), C / 2 * 0.3, rtol=1e-15)

    @pytest.mark.parametrize("C", [2.0, 2.5, 10.0])
    def test_optimality_relation(self, C):
        case = ManufacturedCase(C)
        rng = np.random.default_rng(1)
        x = rng.uniform(-0.7, 0.7, (1000, 2))
        np.testing.assert_allclose(dphi_star(case.z(x), 1.0), case.grad_u(x), atol=1e-13)

    def test_gradient_matches_finite_differences(self):
        case = ManufacturedCase(10.0)
        x = np.array([[0.1, 0.05], [0.5, -0.3], [-0.6, 0.2]])
        h = 1e-6
        fd = np.stack([(case.u(x + h * e) - case.u(x - h * e)) / (2 * h) for e in np.eye(2)], axis=1)
        np.testing.assert_allclose(fd, case.grad_u(x), atol=1e-8)

    def test_regime(self):
        assert ManufacturedCase(2.0).inactive
        assert not ManufacturedCase(2.5).inactive
        assert ManufacturedCase(4.0, r=0.5).inactive
        assert ManufacturedCase(10.0).kink_radius == pytest.approx(0.2)

    @pytest.mark.parametrize("kwargs", [{"C": 0.0}, {"C": -1.0}, {"C": 1.0, "r": 0.0},
                                        {"C": float("inf")}])
    def test_rejects(self, kwargs):
        with pytest.raises(ParameterError):
            ManufacturedCase(**kwargs)


class TestConfig:
    def test_from_dict(self):
        cfg = StudyConfig.from_dict({"case": {"C": 2.5}, "levels": [1, 2],
                                     "flow": {"tau": 0.5, "eps_stop": 1e-6, "max_iter": 50},
                                     "study": "aposteriori", "out": "x.csv"})
        assert cfg.case == ManufacturedCase(2.5, 1.0)
        assert cfg.levels == (1, 2)
        assert (cfg.flow.tau, cfg.flow.eps_stop, cfg.flow.max_iter) == (0.5, 1e-6, 50)
        assert cfg.study == "aposteriori" and cfg.out == "x.csv"

    def test_defaults(self):
        cfg = StudyConfig(ManufacturedCase(10.0))
        assert cfg.levels == (1, 2, 3, 4, 5)
        assert cfg.flow.eps_stop == 1e-8 and cfg.flow.tau == 1.0

    @pytest.mark.parametrize("raw", [{"levels": [2, 1]}, {"levels": [1, 1]}, {"levels": []},
                                     {"levels": [-1, 0]}, {"study": "bogus"},
                                     {"flow": {"tau": -1.0}}, {"flow": {"omega": 1}},
                                     {"case": {"C": -2}}])
    def test_rejects(self, raw):
        with pytest.raises(ParameterError):
            StudyConfig.from_dict(raw)


class TestTable:
    def rows(self):
        return [{"level": 1, "h": 0.2, "N": 10, "e_tot": 1e-2, "e_gap": 1e-2},
                {"level": 2, "h": 0.1, "N": 40, "e_tot": 2.5e-3, "e_gap": 2.5e-3 * (1 + 1e-9)}]

    def test_columns(self):
        t = ConvergenceTable(self.rows())
        assert t.column("eoc_tot")[0] is None
        assert t.column("eoc_tot")[1] == pytest.approx(2.0)
        assert t.column("identity_gap")[1] == pytest.approx(1e-9, rel=1e-6)
        assert t.mean_eoc("eoc_gap") == pytest.approx(2.0, abs=1e-8)

    def test_csv(self, tmp_path):
        t = ConvergenceTable(self.rows())
        path = tmp_path / "t.csv"
        t.write_csv(path)
        rows = list(csv.reader(path.open()))
        assert rows[0] == CSV_COLUMNS
        assert rows[1][CSV_COLUMNS.index("eoc_tot")] == ""
        assert float(rows[2][CSV_COLUMNS.index("e_tot")]) == 2.5e-3

    def test_increasing_h_rejected(self):
        rows = self.rows()[::-1]
        with pytest.raises(ParameterError):
            ConvergenceTable(rows)

    def test_zero_gap(self):
        rows = self.rows()
        rows[0]["e_gap"] = 0.0
        rows[0]["e_tot"] = 3e-17
        t = ConvergenceTable(rows)
        assert t.column("identity_gap")[0] == 3e-17
        assert t.column("eoc_gap") == [None, None]


class TestStudies:
    def test_affine_regime(self):
        table = run_apriori_study(StudyConfig(ManufacturedCase(2.0), levels=(0, 1, 2)))
        assert max(table.column("e_gap")) <= 1e-12
        assert max(table.column("e_tot")) <= 1e-12

    def test_apriori_small(self, tmp_path):
        cfg = StudyConfig(ManufacturedCase(10.0), levels=(1, 2, 3), out=str(tmp_path / "a.csv"))
        table = run_apriori_study(cfg)
        assert max(table.column("identity_gap")) <= 1e-8
        assert all(e > 0 for e in table.column("e_gap"))
        assert all(r["flags"] == () for r in table.rows)
        first = (tmp_path / "a.csv").read_bytes()
        run_study(cfg)
        assert (tmp_path / "a.csv").read_bytes() == first

    def test_aposteriori_small(self):
        cfg = StudyConfig(ManufacturedCase(10.0), levels=(1, 2), study="aposteriori")
        table = run_study(cfg)
        assert all(e >= 0 for e in table.column("e_gap"))
        assert all(r["eta_gap_B"] == 0.0 for r in table.rows)
        assert table.rows[1]["e_gap"] < table.rows[0]["e_gap"]

    def test_parallel_matches_serial(self):
        base = StudyConfig(ManufacturedCase(2.5), levels=(0, 1))
        serial = run_apriori_study(base).to_csv()
        parallel = run_apriori_study(StudyConfig(ManufacturedCase(2.5), levels=(0, 1), jobs=2)).to_csv()
        assert serial == parallel

    def test_nonconvergence_names_level(self):
        flow = FlowParams(eps_stop=1e-12, max_iter=2)
        with pytest.raises(NonConvergenceError, match="level 1"):
            run_apriori_study(StudyConfig(ManufacturedCase(10.0), levels=(1,), flow=flow))

    def test_dof_growth(self):
        sizes = []
        for level in range(1, 5):
            mesh = build_disk_mesh(1.0, level)
            sizes.append((mesh.h, mesh.n_sides + mesh.n_elements))
        for (h0, n0), (h1, n1) in zip(sizes, sizes[1:]):
            assert 1.8 <= h0 / h1 <= 2.2
            assert 3.5 <= n1 / n0 <= 4.5


class TestActiveSet:
    def test_inactive(self, disk):
        case = ManufacturedCase(2.0)
        data = case.data(disk(2))
        report = run_flow(data, FlowParams(eps_stop=1e-8))
        u, _ = marini_reconstruct(report.z, report.lam, data)
        rep = active_set_report(u, report.z, data)
        assert rep["n_active_primal"] == rep["n_active_dual"] == 0

    def test_reconstruction_agrees(self, disk):
        case = ManufacturedCase(10.0)
        data = case.data(disk(2))
        report = run_flow(data, FlowParams(eps_stop=1e-8, warm_start=True))
        u, _ = marini_reconstruct(report.z, report.lam, data)
        rep = active_set_report(u, report.z, data)
        assert rep["n_disagree"] == 0 and rep["n_active_dual"] > 0
        assert rep["n_elements"] == data.mesh.n_elements

    def test_counts(self, disk):
        m = disk(1)
        data = ManufacturedCase(10.0).data(m)
        v = cr_interpolate(lambda x: 2 * x[:, 0], m)
        rep = active_set_report(v, RTFunction(m, np.zeros(m.n_sides)), data)
        assert rep == {"n_active_primal": m.n_elements, "n_active_dual": 0,
                       "n_disagree": m.n_elements, "n_elements": m.n_elements}
