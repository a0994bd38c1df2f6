"""End-to-end acceptance checks, one test class per criterion."""

import math
import os
import random
import time

import numpy as np
import pytest

from loadsim.analysis import (PerformancePoint, dominates, load_results, pareto_front,
                              select_poi, trend_tests)
from loadsim.config import ActionParams, build_parameter_grid, enumerate_campaign, \
    reference_grid_values
from loadsim.engine import compute_metrics, run_loading_cycle
from loadsim.sweep import ResultStore, execute_campaign, throughput_report
from loadsim.terrain import passive_wedge_coefficients

WORKERS = os.cpu_count() or 1
SUBSAMPLE_SEED = 2024

# selected loadings on 30 degree piles: soil, marker, m_load t, t_load s, P_p kg/s, P_e kg/kJ
REFERENCE_ROWS = [
    ("gravel", "circle", 3.40, 24.5, 139, 11.27), ("gravel", "triangle", 2.15, 10.3, 207, 9.82),
    ("gravel", "diamond", 2.51, 12.3, 203, 10.68), ("gravel", "square", 3.41, 25.1, 136, 10.53),
    ("dirt", "circle", 2.81, 11.7, 240, 11.80), ("dirt", "triangle", 2.92, 11.3, 257, 11.13),
    ("dirt", "diamond", 2.76, 11.2, 245, 11.14), ("dirt", "square", 4.12, 32.7, 126, 9.09),
    ("sand", "circle", 2.43, 10.5, 232, 12.16), ("sand", "triangle", 2.98, 11.6, 257, 11.48),
    ("sand", "diamond", 2.80, 11.2, 248, 11.83), ("sand", "square", 3.65, 25.5, 143, 10.12),
]


def reintegrated_work(series, dt):
    p = series.power(dt)
    return np.concatenate([[0.0], np.cumsum(0.5 * (p[1:] + p[:-1]) * dt * 1e-3)])


def oracle_front(points):
    return {p.run_id for p in points if not any(dominates(q, p) for q in points)}


def read_bytes(root):
    return (root / "results.csv").read_bytes()


@pytest.fixture(scope="module")
def grid(cfg):
    return cfg.grid()


@pytest.fixture(scope="module")
def subsample(grid):
    rng = random.Random(SUBSAMPLE_SEED)
    return [grid[i] for i in sorted(rng.sample(range(len(grid)), 1000))]


@pytest.fixture(scope="module")
def slope_campaign(cfg, subsample, tmp_path_factory):
    piles = [cfg.pile(f"gravel-{s}") for s in (10, 20, 30, 40)]
    manifest = enumerate_campaign(piles, subsample, cfg.machine)
    root = tmp_path_factory.mktemp("slopes")
    execute_campaign(manifest, WORKERS, ResultStore(root), machine=cfg.machine,
                     control=cfg.control)
    return load_results(root)


@pytest.mark.criterion(1, "grid and campaign sizes")
class TestGridFidelity:
    def test_sizes_and_time(self, cfg):
        t0 = time.perf_counter()
        grid = build_parameter_grid(reference_grid_values())
        manifest = enumerate_campaign(cfg.piles("reference"), grid, cfg.machine)
        elapsed = time.perf_counter() - t0
        assert len(grid) == 45_000
        assert len(manifest) == 270_000
        assert elapsed < 1.0


@pytest.mark.criterion(2, "productivity arithmetic on the reference rows")
class TestMetricArithmetic:
    @pytest.mark.parametrize("soil,marker,m,t,p_p,p_e", REFERENCE_ROWS)
    def test_row(self, soil, marker, m, t, p_p, p_e):
        mass = m * 1000.0
        _, recomputed, _, _ = compute_metrics(mass, t, mass / p_e, 1.0, 0.0, 3.0)
        assert recomputed == pytest.approx(p_p, rel=0.015)


@pytest.mark.criterion(3, "mass conservation and work re-integration")
class TestConservation:
    def test_random_actions(self, cfg, gravel30, grid):
        rng = random.Random(3)
        dt = cfg.control.dt
        for idx in rng.sample(range(len(grid)), 100):
            rec = run_loading_cycle(gravel30, cfg.machine, grid[idx], cfg.control,
                                    log_series=True, check_conservation=True)
            assert max(rec.series.conservation) <= 1e-9
            cum = reintegrated_work(rec.series, dt)
            assert cum[-1] == pytest.approx(rec.series.W_accum[-1], rel=1e-6, abs=1e-12)
            ev = dict(rec.events)
            if "contact" not in ev:
                assert rec.W == 0.0
                continue
            start = int(round(ev["contact"] / dt))
            end = int(round(ev["Reverse"] / dt)) if "Reverse" in ev else len(cum) - 1
            assert rec.W == pytest.approx(cum[end] - cum[start], rel=1e-6, abs=1e-12)


@pytest.mark.criterion(4, "byte-identical results across workers and resume")
class TestDeterminism:
    def test_mini_campaign(self, cfg, grid, tmp_path):
        rng = random.Random(4)
        actions = [grid[i] for i in rng.sample(range(len(grid)), 34)]
        full = enumerate_campaign(cfg.piles("reference"), actions, cfg.machine)
        manifest = full.subset(sorted(r.run_id for r in full.rows)[:200])
        assert len(manifest) == 200
        outputs = []
        for workers in (1, 2, 8):
            root = tmp_path / f"w{workers}"
            execute_campaign(manifest, workers, ResultStore(root), machine=cfg.machine,
                             control=cfg.control)
            outputs.append(read_bytes(root))
        root = tmp_path / "resumed"
        first = execute_campaign(manifest, 2, ResultStore(root), machine=cfg.machine,
                                 control=cfg.control, max_runs=77)
        assert not first.finished
        with (root / "results.partial.csv").open("a") as fh:
            fh.write("torn,line")
        second = execute_campaign(manifest, 2, ResultStore(root), machine=cfg.machine,
                                  control=cfg.control, resume=True)
        assert second.finished and second.skipped == 77
        outputs.append(read_bytes(root))
        assert all(o == outputs[0] for o in outputs[1:])


@pytest.mark.criterion(5, "median load mass increases with gravel slope")
class TestSlopeTrend:
    def test_monotone_median(self, slope_campaign):
        report = trend_tests(slope_campaign)
        medians = list(report.median_mass["gravel"].values())
        print("median m_load by slope:", report.median_mass["gravel"])
        assert len(medians) == 4
        assert all(b > a for a, b in zip(medians, medians[1:]))


@pytest.mark.criterion(6, "dig speed trades efficiency for productivity")
class TestSpeedTrend:
    def test_spearman_signs(self, slope_campaign):
        report = trend_tests(slope_campaign)
        rho_e = report.rho_alpha2_efficiency["gravel-30"]
        rho_p = report.rho_alpha2_productivity["gravel-30"]
        print(f"gravel-30: rho(alpha2, P_e) = {rho_e:.3f}, rho(alpha2, P_p) = {rho_p:.3f}, "
              f"{report.completed['gravel-30']} completed runs")
        assert rho_e < 0.0
        assert rho_p > 0.0


@pytest.mark.criterion(7, "Pareto front and points of interest")
class TestPareto:
    def test_front_against_oracle(self):
        rng = np.random.default_rng(7)
        for k in range(100):
            n = int(rng.integers(0, 1001))
            if k % 2:
                vals = rng.integers(0, 15, size=(n, 2)).astype(float)
            else:
                vals = rng.uniform(0, 1, size=(n, 2))
            pts = [PerformancePoint(f"r{i:04d}", a * 300, b * 12, 1.0)
                   for i, (a, b) in enumerate(vals)]
            assert {p.run_id for p in pareto_front(pts)} == oracle_front(pts)

    @pytest.mark.parametrize("soil", ["gravel", "dirt", "sand"])
    def test_reference_markers(self, soil):
        rows = [r for r in REFERENCE_ROWS if r[0] == soil]
        pts = [PerformancePoint(marker, p_p, p_e, m * 1000.0)
               for _, marker, m, _, p_p, p_e in rows]
        poi = select_poi(pts)
        assert poi.best_efficiency.run_id == "circle"
        assert poi.best_productivity.run_id == "triangle"
        assert poi.best_mass.run_id == "square"
        assert poi.pareto_choice.run_id in oracle_front(pts)
        assert "diamond" in oracle_front(pts)
        if soil == "gravel":
            assert poi.pareto_choice.run_id == "diamond"
        assert select_poi(pts, pareto_override="diamond").pareto_choice.run_id == "diamond"


@pytest.mark.criterion(8, "wedge factors against a fine brute-force scan")
class TestWedgeOracle:
    def test_grid(self):
        for phi in (25.0, 30.0, 35.0, 40.0, 45.0):
            delta = 2.0 * phi / 3.0
            for rake in (30.0, 45.0, 60.0, 75.0, 85.0):
                n_gamma, n_c = passive_wedge_coefficients(phi, delta, rake)
                beta = np.radians(np.arange(1, 90_000) * 0.001)
                p, d, a = map(math.radians, (phi, delta, rake))
                den = math.cos(a + d) + math.sin(a + d) / np.tan(beta + p)
                ok = den > 0.0
                g = ((1.0 / math.tan(a) + 1.0 / np.tan(beta)) / (2.0 * den))[ok].min()
                c = ((1.0 + 1.0 / (np.tan(beta) * np.tan(beta + p))) / den)[ok].min()
                assert n_gamma == pytest.approx(g, rel=1e-3)
                assert n_c == pytest.approx(c, rel=1e-3)


@pytest.mark.criterion(9, "controller latches, brake length and reverse distance")
class TestControllerConformance:
    def test_scripted_cycle(self, cfg, gravel30):
        action = ActionParams(0.6, 0.4, 0.0, 0.0, 0.8, 0.6, -30.0, 45.0)
        rec = run_loading_cycle(gravel30, cfg.machine, action, cfg.control, log_series=True)
        ev = dict(rec.events)
        assert ev["lift_trigger"] == ev["contact"]
        assert ev["tilt_trigger"] == ev["contact"]
        assert rec.series.phase.count("Brake") == 100
        assert ev["Reverse"] - ev["Brake"] == pytest.approx(1.0, abs=1e-9)
        entry_x = rec.series.x[int(round(ev["contact"] / cfg.control.dt))]
        assert rec.series.phase[-1] == "Done"
        assert abs(entry_x - rec.series.x[-1] - 5.0) <= 0.05


@pytest.mark.criterion(10, "throughput of at least 2000 cycles per CPU-hour")
class TestThroughput:
    def test_floor(self, cfg, grid, tmp_path):
        rng = random.Random(10)
        actions = [grid[i] for i in rng.sample(range(len(grid)), 10)]
        manifest = enumerate_campaign(cfg.piles("reference"), actions, cfg.machine)
        summary = execute_campaign(manifest, WORKERS, ResultStore(tmp_path),
                                   machine=cfg.machine, control=cfg.control)
        report = throughput_report(summary)
        print(report)
        assert report.runs == 60
        assert report.runs_per_cpu_hour >= 2000.0
