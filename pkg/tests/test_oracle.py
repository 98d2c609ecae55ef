"""Zero-noise Picard fixed-point oracle and finite-difference directional
derivative checks."""
import numpy as np
import pytest

from brokergame import (GateauxConfig, ModelParams, NoConvergence,
                        PicardConfig, TimeGrid, assemble_matrices,
                        existence_bound, feedback_trajectory, gateaux_broker,
                        gateaux_informed, picard_solve, run_gateaux_checks,
                        solve_offset_odes, solve_riccati,
                        solve_riccati_direct)
from brokergame.oracle import picard_residual


@pytest.fixture(scope="module")
def small_T_params(p5):
    # zero terminal gain and T = 0.1 inside the contraction bound
    return p5.replace(phi=p5.impact_h / 2, psi=0.0, horizon_T=0.1,
                      sigma_S=0.0, sigma_alpha=0.0, sigma_xi=0.0,
                      alpha0=1.0, xi0=50.0, qB0=1.0, qI0=-1.0)


@pytest.fixture(scope="module")
def picard_small_T(small_T_params):
    mat = assemble_matrices(small_T_params)
    cfg = PicardConfig(n_steps=2000, tol=1e-12)
    return picard_solve(mat, small_T_params, cfg), mat, cfg


class TestPicard:
    def test_zero_data_fixed_in_one_iteration(self, p5):
        q = p5.replace(phi=p5.impact_h / 2, psi=0.0, sigma_S=0.0,
                       sigma_alpha=0.0, sigma_xi=0.0)
        res = picard_solve(assemble_matrices(q), q, PicardConfig(n_steps=500))
        assert res.iterations == 1
        assert np.array_equal(res.X_path, np.zeros_like(res.X_path))
        assert np.array_equal(res.Y_path, np.zeros_like(res.Y_path))

    def test_requires_zero_noise(self, p5):
        with pytest.raises(ValueError):
            picard_solve(assemble_matrices(p5), p5, PicardConfig())

    def test_converges_inside_bound(self, small_T_params, picard_small_T):
        res, _, _ = picard_small_T
        br = existence_bound(small_T_params)
        assert br.satisfied  # T = 0.1 < t_star ~ 0.1826
        assert res.contraction_estimate < 1.0
        # gaps decrease monotonically after the first iteration
        gaps = res.gaps[1:]
        assert all(g2 < g1 for g1, g2 in zip(gaps, gaps[1:]) if g1 > 0)

    def test_fixed_point_residual(self, small_T_params, picard_small_T):
        res, mat, cfg = picard_small_T
        assert picard_residual(res, mat, small_T_params) <= 10 * cfg.tol

    def test_matches_closed_form_trajectory(self, small_T_params,
                                            picard_small_T):
        res, mat, cfg = picard_small_T
        grid = TimeGrid(small_T_params.horizon_T, cfg.n_steps)
        P = solve_riccati_direct(mat, grid)
        L = solve_offset_odes(P, small_T_params)
        X, Y = feedback_trajectory(small_T_params, mat, P, L)
        assert np.abs(res.X_path - X).max() <= 1e-5
        assert np.abs(res.Y_path - Y).max() <= 1e-5

    def test_outside_bound_recorded_not_asserted(self, small_T_params):
        # the contraction condition is sufficient only: the iteration may
        # or may not converge at T = 1, both outcomes are acceptable
        q = small_T_params.replace(horizon_T=1.0)
        assert not existence_bound(q).satisfied
        try:
            res = picard_solve(assemble_matrices(q), q,
                               PicardConfig(n_steps=500, max_iters=50))
            assert np.all(np.isfinite(res.X_path))
        except NoConvergence as exc:
            assert exc.final_gap > 0

    def test_config_validation(self):
        with pytest.raises(ValueError):
            PicardConfig(tol=0.0)
        with pytest.raises(ValueError):
            PicardConfig(damping=0.0)
        with pytest.raises(ValueError):
            GateauxConfig(epsilon_list=(1e-2, 0.0))


@pytest.fixture(scope="module")
def small_run(p5):
    cfg = GateauxConfig(n_paths=2000, seed=7, n_directions=2)
    grid = TimeGrid(1.0, 300)
    # coarse grid: the direct method cannot resolve the terminal layer
    # here, the linearized default can
    P = solve_riccati(assemble_matrices(p5), grid, p5)
    L = solve_offset_odes(P, p5)
    return p5, P, L, cfg


class TestGateaux:
    def test_zero_direction_is_exactly_zero(self, small_run):
        p5, P, L, cfg = small_run
        from brokergame import simulate_equilibrium
        report, _ = simulate_equilibrium(
            p5, P, L, n_paths=500, seed=3,
            log_processes=("alpha", "xi", "nu", "eta"), return_ensembles=True)
        ens = report.ensembles
        zero = np.zeros(P.grid.n_steps + 1)
        gi = gateaux_informed(ens["nu"], ens["eta"], zero, p5, cfg,
                              ens["alpha"], ens["xi"], dt=P.grid.dt)
        gb = gateaux_broker(ens["nu"], ens["eta"], zero, p5, cfg,
                            ens["alpha"], ens["xi"], dt=P.grid.dt)
        assert gi.estimate == 0.0 and gi.standard_error == 0.0
        assert gb.estimate == 0.0 and gb.standard_error == 0.0

    def test_all_checks_pass_at_small_scale(self, small_run):
        p5, P, L, cfg = small_run
        checks = run_gateaux_checks(p5, P, L, cfg)
        assert len(checks) == 6 * cfg.n_directions
        for c in checks:
            assert set(c) == {"check", "statistic", "standard_error", "pass"}
            assert c["pass"], "%s: %g (se %g)" % (c["check"], c["statistic"],
                                                  c["standard_error"])

    def test_bit_for_bit_reproducible(self, small_run):
        p5, P, L, cfg = small_run
        a = run_gateaux_checks(p5, P, L, cfg)
        b = run_gateaux_checks(p5, P, L, cfg)
        assert a == b
