"""End-to-end acceptance criteria.

Each test emits exactly one PASS/FAIL line (run with -s or read the
captured output).  Three sub-checks are known to fail and are kept
faithful to their stated tolerances rather than weakened:

* the every-node cross-method agreement and the raw residual bound
  cannot hold near t = T, where the gain has a boundary layer of width
  b/psi = 1e-3 whose curvature dominates any fixed-step finite
  difference (see the riccati module tests for the attainable t = 0
  statements);
* the wide-band sweep at impact_h = 10 runs into a genuine finite-time
  blow-up of the gain ODE because the effective terminal penalty
  phi - h/2 = -4 is negative there (the mechanism is demonstrated at
  impact_h = 2 in the cli tests instead).
"""
import json
import math
import os
import subprocess
import sys
import time

import numpy as np
import pytest

from brokergame import (BlowUp, GateauxConfig, ModelParams, PicardConfig,
                        TimeGrid, assemble_matrices, existence_bound,
                        feedback_trajectory, picard_solve, run_gateaux_checks,
                        simulate_equilibrium, solve_offset_odes,
                        solve_riccati, solve_riccati_direct,
                        solve_riccati_linearized, spectral_norm)
from brokergame.offset import build_fundamental_solution, ell_quadrature
from brokergame.riccati import RiccatiGrid


def _report(label, ok, detail):
    line = "%s: %s -- %s" % ("PASS" if ok else "FAIL", label, detail)
    print(line)
    assert ok, line


@pytest.fixture(scope="module")
def grid4():
    return TimeGrid(1.0, 10_000)


@pytest.fixture(scope="module")
def solved4(mat5, grid4):
    direct = solve_riccati_direct(mat5, grid4)
    linearized, pair = solve_riccati_linearized(mat5, grid4)
    return direct, linearized, pair


@pytest.fixture(scope="module")
def sim_grid(p5, mat5):
    grid = TimeGrid(1.0, 2000)
    P = solve_riccati(mat5, grid, p5)
    L = solve_offset_odes(P, p5, mat=mat5)
    return P, L


def test_criterion_01_norm_reproduction(mat5):
    t0 = time.perf_counter()
    norms = tuple(spectral_norm(M) for M in
                  (mat5.A, mat5.B, mat5.A_hat, mat5.B_hat))
    elapsed = time.perf_counter() - t0
    targets = (0.0, 1.618, 1.0, 0.5)
    worst = max(abs(n - t) for n, t in zip(norms, targets))
    _report("criterion 1 (norm reproduction)",
            worst <= 1e-3 and elapsed < 1.0,
            "norms=%s, max dev %.2g, %.3fs" % (np.round(norms, 4).tolist(),
                                               worst, elapsed))


def test_criterion_02a_terminal_condition(solved4, mat5):
    direct, linearized, _ = solved4
    ok = (direct.P[-1].tobytes() == mat5.G.tobytes()
          and linearized.P[-1].tobytes() == mat5.G.tobytes())
    _report("criterion 2a (P(T) = G exactly)", ok, "bitwise comparison")


def test_criterion_02b_cross_method_every_node(solved4):
    direct, linearized, _ = solved4
    gap = float(np.abs(direct.P - linearized.P).max())
    # known failure: the terminal boundary layer (width b/psi = 1e-3)
    # leaves the direct solver ~1e-3 off on the last few nodes; at t = 0
    # the methods agree to ~1.5e-9
    _report("criterion 2b (cross-method <= 1e-6 at every node)",
            gap <= 1e-6, "max entrywise gap %.3g at 10^4 steps" % gap)


def test_criterion_02c_residual(solved4):
    direct, _, _ = solved4
    # known failure: the centered-difference residual of the *exact*
    # solution is ~1.3e4 inside the terminal layer, so no solver output
    # can meet 1e-5 on this grid
    _report("criterion 2c (residual <= 1e-5)",
            direct.max_residual <= 1e-5,
            "max interior residual %.3g at 10^4 steps" % direct.max_residual)


def test_criterion_02d_fourth_order(mat5, fine_riccati_p0):
    t0 = time.perf_counter()
    ref = fine_riccati_p0(1_000_000)
    gaps = [float(np.abs(solve_riccati_direct(mat5, TimeGrid(1.0, n)).P[0]
                         - ref).max()) for n in (10_000, 20_000)]
    elapsed = time.perf_counter() - t0
    ratio = gaps[0] / gaps[1]
    _report("criterion 2d (4th-order convergence, runtime < 10s)",
            ratio >= 8.0 and elapsed < 10.0,
            "gap ratio %.1f on step halving, %.1fs" % (ratio, elapsed))


def test_criterion_03_no_decay_structure(p5, solved4, sim_grid):
    direct, _, _ = solved4
    third = float(np.abs(direct.P[:, :, 2]).max())
    P, L = sim_grid
    r1, _ = simulate_equilibrium(p5, P, L, n_paths=200, seed=1,
                                 log_processes=("nu", "eta"),
                                 return_ensembles=True)
    Pmod = P.P.copy()
    Pmod[:, 2, :] += 7.0
    P2 = RiccatiGrid(grid=P.grid, P=Pmod, method=P.method,
                     max_residual=P.max_residual)
    r2, _ = simulate_equilibrium(p5, P2, L, n_paths=200, seed=1,
                                 log_processes=("nu", "eta"),
                                 return_ensembles=True)
    inert = (r1.ensembles["nu"].tobytes() == r2.ensembles["nu"].tobytes()
             and r1.ensembles["eta"].tobytes()
             == r2.ensembles["eta"].tobytes())
    _report("criterion 3 (no-decay structure)",
            third <= 1e-10 and inert,
            "third column max %.2g, f-row perturbation inert: %s"
            % (third, inert))


def test_criterion_04_offset_consistency(p5, mat5, sim_grid):
    P, L = sim_grid
    fs = build_fundamental_solution(P, mat5, p5)
    rng = np.random.default_rng(404)
    worst = 0.0
    for _ in range(20):
        k = int(rng.integers(0, P.grid.n_steps + 1))
        al = float(rng.normal(scale=2.0))
        xv = float(rng.normal(scale=100.0))
        q = ell_quadrature(fs, P.grid.nodes[k], al, xv, p5)
        o = L.ell(k, al, xv)
        worst = max(worst, float(np.abs(q - o).max()
                                 / (1.0 + np.abs(o).max())))
    terminal_zero = bool(np.all(L.L[-1] == 0.0))
    _report("criterion 4 (offset consistency)",
            worst <= 1e-5 and terminal_zero,
            "worst relative gap %.3g over 20 states, terminal zero: %s"
            % (worst, terminal_zero))


def test_criterion_05_picard_oracle(p5):
    q = p5.replace(phi=p5.impact_h / 2, psi=0.0, horizon_T=0.1,
                   sigma_S=0.0, sigma_alpha=0.0, sigma_xi=0.0,
                   alpha0=1.0, xi0=50.0, qB0=1.0, qI0=-1.0)
    assert existence_bound(q).satisfied  # T = 0.1 < 1/sqrt(30)
    mat = assemble_matrices(q)
    t0 = time.perf_counter()
    res = picard_solve(mat, q, PicardConfig(n_steps=2000, tol=1e-12))
    grid = TimeGrid(0.1, 2000)
    P = solve_riccati_direct(mat, grid)
    L = solve_offset_odes(P, q, mat=mat)
    X, Y = feedback_trajectory(q, mat, P, L)
    elapsed = time.perf_counter() - t0
    sup = float(max(np.abs(res.X_path - X).max(),
                    np.abs(res.Y_path - Y).max()))
    ok = (res.contraction_estimate < 1.0 and sup <= 1e-5 and elapsed < 5.0)
    _report("criterion 5 (Picard oracle)", ok,
            "contraction %.3g, sup gap %.3g, %d iters, %.2fs"
            % (res.contraction_estimate, sup, res.iterations, elapsed))


def test_criterion_06_best_response(p5, mat5):
    grid = TimeGrid(1.0, 500)
    P = solve_riccati(mat5, grid, p5)
    L = solve_offset_odes(P, p5, mat=mat5)
    t0 = time.perf_counter()
    checks = run_gateaux_checks(p5, P, L,
                                GateauxConfig(n_paths=10_000, seed=7,
                                              n_directions=5))
    elapsed = time.perf_counter() - t0
    fails = [c["check"] for c in checks if not c["pass"]]
    _report("criterion 6 (best-response optimality)",
            not fails and elapsed < 120.0,
            "%d/%d checks pass (zero-derivative, concavity, perturbed "
            "strictly worse), %.1fs%s"
            % (len(checks) - len(fails), len(checks), elapsed,
               "; failing: %s" % fails if fails else ""))


def test_criterion_07_terminal_feedback(p5, sim_grid):
    P, L = sim_grid
    report, _ = simulate_equilibrium(p5, P, L, n_paths=10_000, seed=21)
    _report("criterion 7 (terminal feedback conditions)",
            report.terminal_violation <= 1e-6,
            "max normalized violation %.3g over 10^4 paths"
            % report.terminal_violation)


def test_criterion_08_representation_equivalence(p5, mat5):
    gaps, ses = [], []
    for n in (500, 1000, 2000):
        grid = TimeGrid(1.0, n)
        P = solve_riccati(mat5, grid, p5)
        L = solve_offset_odes(P, p5, mat=mat5)
        report, _ = simulate_equilibrium(p5, P, L, n_paths=10_000, seed=8)
        gaps.append(report.gap_JB_mean)
        ses.append(report.gap_JB_se)
    halving = gaps[0] / gaps[1] > 1.5 and gaps[1] / gaps[2] > 1.5
    # O(dt) fit from the coarser grids predicts the finest gap
    within_fit = gaps[2] <= 0.6 * gaps[1] + 3 * ses[2]
    _report("criterion 8 (performance representation equivalence)",
            halving and within_fit,
            "mean |terminal - integral| gaps %s at 500/1000/2000 steps"
            % [round(g, 4) for g in gaps])


def test_criterion_09_band_width_sweep(p5, mat5):
    q0 = p5.replace(impact_h=10.0)
    widths = {}
    failure = None
    t0 = time.perf_counter()
    for p in (0.0, 4.0, 8.0, 16.0):
        q = q0.replace(decay_p=p)
        try:
            grid = TimeGrid(1.0, 2000)
            P = solve_riccati(assemble_matrices(q), grid, q)
            L = solve_offset_odes(P, q)
            report, _ = simulate_equilibrium(q, P, L, n_paths=10_000,
                                             seed=2, log_processes=("qB",))
            band = report.bands["qB"]
            widths[p] = float(band[2, 1000] - band[0, 1000])
        except BlowUp as e:
            failure = "decay %g: %s" % (p, e)
            break
    elapsed = time.perf_counter() - t0
    # known failure: with impact_h = 10 the effective terminal penalty is
    # phi - h/2 = -4 < 0 and the gain ODE blows up in finite time; the
    # same monotonicity holds and is tested at impact_h = 2 in test_cli
    vals = [widths[p] for p in sorted(widths)]
    ok = (failure is None and elapsed < 300.0
          and all(w1 >= w2 for w1, w2 in zip(vals, vals[1:])))
    _report("criterion 9 (band width non-increasing in decay, h = 10)", ok,
            failure if failure else "widths %s, %.0fs" % (vals, elapsed))


def test_criterion_10_determinism(tmp_path):
    cfg = {"n_steps": 500, "n_paths": 2000, "seed": 77,
           "log_processes": ["qB", "qI"], "outputs": str(tmp_path / "out")}
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(cfg))
    blobs = []
    for threads in ("1", "8"):
        env = dict(os.environ, OMP_NUM_THREADS=threads,
                   OPENBLAS_NUM_THREADS=threads)
        r = subprocess.run([sys.executable, "-m", "brokergame.cli",
                            "simulate", "--config", str(cfg_path)],
                           env=env, capture_output=True)
        assert r.returncode == 0, r.stderr
        with open(tmp_path / "out" / "report.json", "rb") as f:
            blobs.append(f.read())
    _report("criterion 10 (bit-identical reports across thread counts)",
            blobs[0] == blobs[1],
            "%d-byte reports, equal: %s" % (len(blobs[0]),
                                            blobs[0] == blobs[1]))
