"""Acceptance suite: one PASS/FAIL line per criterion, at the stated tolerances and time budgets."""

import os
import subprocess
import sys
import time

import numpy as np
import pytest

from dbmlab import cli
from dbmlab.flow import burgers_residual, solve_mt
from dbmlab.measures import point_mass, semicircle_nodes

HERE = os.path.dirname(os.path.abspath(__file__))


@pytest.fixture
def verdict(capsys):
    def emit(n, ok, seconds, budget, detail):
        ok = bool(ok) and seconds <= budget
        with capsys.disabled():
            print(f"\nACCEPTANCE {n:2d}: {'PASS' if ok else 'FAIL'}  ({seconds:.1f}s of {budget}s)  {detail}")
        assert ok, detail
    return emit


def _run(raw):
    t0 = time.perf_counter()
    _, _, _, reports = cli.execute(raw)
    return reports, time.perf_counter() - t0


def _fmt(rep):
    return ", ".join(f"{k}={v:.4g}" for k, v in sorted(rep.statistics.items()))


def _semicircle_m(z):
    s = np.sqrt(z * z - 4 + 0j)
    m = (-z + s) / 2
    return np.where(m.imag > 0, m, (-z - s) / 2)


def test_01_semicircle_fixed_point(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    z = rng.uniform(-3, 3, 100) + 1j * 10 ** rng.uniform(-3, 0, 100)
    rho = semicircle_nodes(1200)
    err = max(float(np.max(np.abs(solve_mt(rho, t, z) - _semicircle_m(z)))) for t in (0.1, 1.0, 5.0))
    verdict(1, err <= 1e-8, time.perf_counter() - t0, 1, f"max error {err:.3g} (<= 1e-8)")


def test_02_flow_of_atom(verdict):
    (rep,), sec = _run({"experiment": "flow-from-atoms", "N": 2, "beta": 2})
    verdict(2, rep.all_passed and rep.statistics["sup_deviation"] <= 1e-4, sec, 5, _fmt(rep))


def test_03_quantile_ode(verdict):
    (rep,), sec = _run({"experiment": "quantile-consistency", "N": 200, "beta": 2, "t_window": [0.0, 0.5]})
    verdict(3, rep.all_passed and rep.statistics["max_deviation"] <= 1e-4, sec, 30, _fmt(rep))


def test_04_burgers(verdict):
    t0 = time.perf_counter()
    z = np.linspace(-1.5, 1.5, 61) + 0.5j
    r = burgers_residual(point_mass(0.0), 0.5, 1e-3, z, dz=1e-3)
    verdict(4, r <= 1e-3, time.perf_counter() - t0, 10, f"residual {r:.3g} (<= 1e-3)")


def test_05_dbm_rigidity(verdict):
    (rep,), sec = _run({"experiment": "dbm-rigidity", "N": 400, "beta": 2, "seeds": list(range(50))})
    verdict(5, rep.all_passed and rep.statistics["pass_fraction"] >= 0.95, sec, 600, _fmt(rep))


def test_06_level_repulsion(verdict):
    t0 = time.perf_counter()
    slopes, flags = {}, {}
    for beta in (1, 2):
        (rep,), _ = _run({"experiment": "level-repulsion", "N": 400, "beta": beta, "seeds": list(range(50))})
        slopes[beta], flags[beta] = rep.statistics["slope"], rep.all_passed
    (ctl,), _ = _run({"experiment": "level-repulsion", "N": 400, "beta": 1, "seeds": list(range(50)),
                      "params": {"generator": "poisson-control"}})
    control_ok = abs(ctl.statistics["slope"] - 1) <= 0.2 and not ctl.all_passed
    ok = all(abs(slopes[b] - (b + 1)) <= 0.3 and flags[b] for b in (1, 2)) and control_ok
    verdict(6, ok, time.perf_counter() - t0, 600,
            f"slope beta=1 {slopes[1]:.3f}, beta=2 {slopes[2]:.3f}, poisson {ctl.statistics['slope']:.3f} "
            f"(control fails band: {not ctl.all_passed})")


def test_07_gap_universality(verdict):
    t0 = time.perf_counter()
    seeds = list(range(500))
    # 20 centers per spectrum: 500 spectra give 10^4 gap vectors per side
    (rep,), _ = _run({"experiment": "gap-universality", "N": 500, "beta": 2, "seeds": seeds})
    (ctl,), _ = _run({"experiment": "gap-universality", "N": 500, "beta": 2, "seeds": seeds,
                      "params": {"t": 0.0, "rescale": "semicircle"}})
    ok = rep.all_passed and not ctl.all_passed
    verdict(7, ok, time.perf_counter() - t0, 1200,
            f"{_fmt(rep)}; control ks={ctl.statistics['ks']:.3g} fails: {not ctl.all_passed}")


def test_08_ou_consistency(verdict):
    (rep,), sec = _run({"experiment": "ou-crosscheck", "N": 300, "beta": 2, "seeds": list(range(40))})
    verdict(8, rep.all_passed, sec, 600, f"{_fmt(rep)} bound={rep.thresholds['ks_bound']:.4g}")


def test_09_coupling_flattening(verdict):
    t0 = time.perf_counter()
    seeds = list(range(50))
    (rep,), _ = _run({"experiment": "coupling-flatten", "N": 400, "beta": 2, "seeds": seeds})
    (ctl,), _ = _run({"experiment": "coupling-flatten", "N": 400, "beta": 2, "seeds": seeds,
                      "params": {"coupled": False}})
    ok = rep.all_passed and not ctl.all_passed
    verdict(9, ok, time.perf_counter() - t0, 900, f"{_fmt(rep)}; uncoupled control fails: {not ctl.all_passed}")


def test_10_finite_speed(verdict):
    (rep,), sec = _run({"experiment": "finite-speed", "N": 400, "beta": 2, "seeds": list(range(20))})
    verdict(10, rep.all_passed and rep.statistics["max_ratio"] <= 10, sec, 300, _fmt(rep))


def test_11_persistent_trailing(verdict):
    t0 = time.perf_counter()
    seeds = list(range(50))
    (rep,), _ = _run({"experiment": "persistent-trailing", "N": 400, "beta": 2, "seeds": seeds})
    (ctl,), _ = _run({"experiment": "persistent-trailing", "N": 400, "beta": 2, "seeds": seeds,
                      "params": {"generator": "independent-ou"}})
    ok = rep.all_passed and not ctl.all_passed
    verdict(11, ok, time.perf_counter() - t0, 600,
            f"{_fmt(rep)}; OU control median ratio {ctl.statistics['median_ratio']:.3g} fails: {not ctl.all_passed}")


def test_12_local_gibbs(verdict):
    reports, sec = _run({"experiment": "local-gibbs-sample", "N": 1000, "beta": 2, "seeds": list(range(4))})
    rig, rep = reports
    verdict(12, rig.all_passed and rep.all_passed, sec, 900, f"{_fmt(rig)}; {_fmt(rep)}")


def test_13_unit_suites(verdict):
    t0 = time.perf_counter()
    r = subprocess.run([sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider", HERE,
                        "--ignore", os.path.join(HERE, "test_acceptance.py")],
                       capture_output=True, text=True, cwd=os.path.dirname(HERE))
    last = (r.stdout.strip().splitlines() or ["no output"])[-1]
    verdict(13, r.returncode == 0, time.perf_counter() - t0, 300, last)
