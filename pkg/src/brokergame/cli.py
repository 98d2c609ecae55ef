"""Command-line front end: solve | simulate | verify | sweep.

Orchestrates the solve -> verify -> simulate pipeline and emits CSV/JSON
artifacts.  Every output embeds the fully resolved config and seed so
runs are self-describing.  Exit codes: 0 success, 1 verification
failure, 2 config error, 3 numerical failure.

Parallelism is delegated to the numerics; the only environment knob is
the BLAS thread count (e.g. OMP_NUM_THREADS), which never changes
results.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from .config import ConfigError, ExperimentConfig
from .model import assemble_matrices, existence_bound, validate_params
from .offset import (build_fundamental_solution, ell_quadrature,
                     solve_offset_odes)
from .oracle import (GateauxConfig, NoConvergence, PicardConfig,
                     feedback_trajectory, picard_solve, run_gateaux_checks)
from .riccati import (BlowUp, SingularR, TimeGrid, read_riccati_csv,
                      solve_riccati, solve_riccati_direct,
                      solve_riccati_linearized, verify_freiling_conditions)
from .simulate import simulate_equilibrium

EXIT_OK = 0
EXIT_VERIFY = 1
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def _write_json(path, payload: dict, cfg: ExperimentConfig) -> None:
    doc = {"config": cfg.to_dict(), "seed": cfg.seed}
    doc.update(payload)
    with open(path, "w") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")


def _solve_pipeline(cfg: ExperimentConfig):
    params = cfg.params
    mat = assemble_matrices(params)
    grid = TimeGrid(t1=params.horizon_T, n_steps=cfg.n_steps)
    rg = solve_riccati(mat, grid, params)
    og = solve_offset_odes(rg, params, mat=mat)
    return params, mat, grid, rg, og


def cmd_solve(cfg: ExperimentConfig) -> int:
    rep = validate_params(cfg.params)
    if not rep.positivity_ok:
        for name, msg in rep.messages.items():
            if not name.startswith("concavity"):
                print("config error: %s" % msg, file=sys.stderr)
        return EXIT_CONFIG
    out = cfg.outputs
    os.makedirs(out, exist_ok=True)
    try:
        params, mat, grid, rg, og = _solve_pipeline(cfg)
    except (BlowUp, SingularR) as e:
        print("numerical failure: %s" % e, file=sys.stderr)
        return EXIT_NUMERIC
    rg.write_csv(os.path.join(out, "riccati.csv"))
    og.write_csv(os.path.join(out, "offset.csv"))
    _write_json(os.path.join(out, "bound_report.json"),
                {"bound": existence_bound(params).to_dict(),
                 "assumptions": {"checks": rep.checks,
                                 "messages": rep.messages}}, cfg)
    cond = verify_freiling_conditions(mat)
    _write_json(os.path.join(out, "conditions.json"),
                {"cdg_matrix": cond.cdg_matrix.tolist(),
                 "cdg_positive_definite": cond.cdg_positive_definite,
                 "L_sym_negative_semidefinite":
                     cond.L_sym_negative_semidefinite,
                 "riccati_method": rg.method,
                 "max_residual": rg.max_residual}, cfg)
    print("wrote riccati.csv, offset.csv, bound_report.json, conditions.json "
          "to %s" % out)
    return EXIT_OK


def _write_bands_csv(path, nodes, bands: dict) -> None:
    names = sorted(bands)
    header = ["t"]
    for name in names:
        header += ["%s_q05" % name, "%s_q50" % name, "%s_q95" % name]
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        for k, t in enumerate(nodes):
            row = [repr(float(t))]
            for name in names:
                b = bands[name]
                row += [repr(float(b[0][k])), repr(float(b[1][k])),
                        repr(float(b[2][k]))]
            w.writerow(row)


def cmd_simulate(cfg: ExperimentConfig) -> int:
    rep = validate_params(cfg.params)
    if not rep.positivity_ok:
        print("config error: %s" % "; ".join(rep.messages.values()),
              file=sys.stderr)
        return EXIT_CONFIG
    out = cfg.outputs
    os.makedirs(out, exist_ok=True)
    try:
        params, mat, grid, rg, og = _solve_pipeline(cfg)
        report, bundle = simulate_equilibrium(
            params, rg, og, n_paths=cfg.n_paths, seed=cfg.seed,
            log_processes=tuple(cfg.log_processes), n_sample_paths=1)
    except (BlowUp, SingularR) as e:
        print("numerical failure: %s" % e, file=sys.stderr)
        return EXIT_NUMERIC
    _write_json(os.path.join(out, "report.json"), report.to_dict(), cfg)
    if bundle is not None:
        bundle.write_csv(os.path.join(out, "paths.csv"), index=0)
    if report.bands:
        _write_bands_csv(os.path.join(out, "quantile_bands.csv"),
                         grid.nodes, report.bands)
    print("simulated %d paths on %d steps; J^B = %.6g (%.2g), "
          "J^I = %.6g (%.2g)"
          % (cfg.n_paths, cfg.n_steps, report.JB_terminal_mean,
             report.JB_terminal_se, report.JI_terminal_mean,
             report.JI_terminal_se))
    if report.n_nonfinite > 0.001 * cfg.n_paths:
        print("numerical failure: %d of %d paths went non-finite"
              % (report.n_nonfinite, cfg.n_paths), file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_verify(cfg: ExperimentConfig) -> int:
    rep = validate_params(cfg.params)
    if not rep.positivity_ok:
        print("config error: %s" % "; ".join(rep.messages.values()),
              file=sys.stderr)
        return EXIT_CONFIG
    out = cfg.outputs
    os.makedirs(out, exist_ok=True)
    params = cfg.params
    mat = assemble_matrices(params)
    checks = []

    def add(name, stat, se, ok):
        checks.append({"check": name, "statistic": float(stat),
                       "standard_error": float(se), "pass": bool(ok)})

    try:
        # cross-method agreement at t = 0 (away from the terminal layer,
        # where both solvers resolve the solution at full order)
        grid = TimeGrid(t1=params.horizon_T, n_steps=cfg.n_steps)
        rg_d = solve_riccati_direct(mat, grid)
        rg_l, pair = solve_riccati_linearized(mat, grid)
        gap0 = float(np.abs(rg_d.P[0] - rg_l.P[0]).max())
        add("riccati_cross_method_t0", gap0, 0.0, gap0 <= 1e-6)
        add("riccati_min_condition_R", pair.min_condition_R, 0.0,
            pair.min_condition_R > 1e-12)

        # consistency of a previously written riccati.csv (detects
        # corruption: the recorded grid must match a fresh solve exactly)
        csv_path = os.path.join(out, "riccati.csv")
        if os.path.exists(csv_path):
            loaded = read_riccati_csv(csv_path)
            fresh = solve_riccati(mat, loaded.grid, params)
            diff = float(np.abs(loaded.P - fresh.P).max())
            add("riccati_csv_consistency", diff, 0.0, diff <= 1e-8)

        # offset: coefficient ODEs vs conditional-expectation quadrature
        rg = solve_riccati(mat, grid, params)
        og = solve_offset_odes(rg, params, mat=mat)
        fs = build_fundamental_solution(rg, mat, params)
        rng = np.random.Generator(np.random.Philox(key=cfg.seed ^ 0xA5A5))
        worst = 0.0
        for _ in range(20):
            k = int(rng.integers(0, cfg.n_steps + 1))
            al = float(rng.normal())
            xv = float(rng.normal() * 50)
            ell_q = ell_quadrature(fs, grid.nodes[k], al, xv, params)
            ell_o = og.ell(k, al, xv)
            worst = max(worst, float(np.abs(ell_q - ell_o).max()
                                     / (1.0 + np.abs(ell_o).max())))
        add("offset_quadrature", worst, 0.0, worst <= 1e-5)
        add("offset_terminal_zero", float(np.abs(og.L[-1]).max()), 0.0,
            np.all(og.L[-1] == 0.0))

        # Picard oracle on the zero-noise sub-config, when supplied
        if cfg.picard_subconfig is not None:
            sub = dict(cfg.picard_subconfig)
            n_sub = int(sub.pop("n_steps", 2000))
            tol = float(sub.pop("tol", 1e-12))
            p2 = params.replace(**sub)
            if p2.sigma_alpha != 0 or p2.sigma_xi != 0 or p2.sigma_S != 0:
                print("config error: picard_subconfig must set all "
                      "volatilities to 0", file=sys.stderr)
                return EXIT_CONFIG
            mat2 = assemble_matrices(p2)
            grid2 = TimeGrid(t1=p2.horizon_T, n_steps=n_sub)
            try:
                res = picard_solve(mat2, p2,
                                   PicardConfig(n_steps=n_sub, tol=tol))
                rg2 = solve_riccati(mat2, grid2, p2)
                og2 = solve_offset_odes(rg2, p2, mat=mat2)
                Xc, Yc = feedback_trajectory(p2, mat2, rg2, og2)
                sup = float(max(np.abs(res.X_path - Xc).max(),
                                np.abs(res.Y_path - Yc).max()))
                add("picard_vs_closed_form", sup, 0.0, sup <= 1e-5)
                add("picard_contraction", res.contraction_estimate, 0.0,
                    res.contraction_estimate < 1.0)
            except NoConvergence as e:
                add("picard_vs_closed_form", e.final_gap, 0.0, False)

        # best-response optimality by finite differences; a coarser time
        # grid keeps the full control ensembles in memory
        n_fd = min(cfg.n_steps, 500)
        grid_fd = TimeGrid(t1=params.horizon_T, n_steps=n_fd)
        rg_fd = solve_riccati(mat, grid_fd, params)
        og_fd = solve_offset_odes(rg_fd, params, mat=mat)
        gcfg = GateauxConfig(n_paths=cfg.n_paths, seed=cfg.seed,
                             n_directions=3)
        checks.extend(run_gateaux_checks(params, rg_fd, og_fd, gcfg))
    except (BlowUp, SingularR) as e:
        print("numerical failure: %s" % e, file=sys.stderr)
        return EXIT_NUMERIC

    _write_json(os.path.join(out, "verify_report.json"),
                {"checks": checks,
                 "all_pass": all(c["pass"] for c in checks)}, cfg)
    for c in checks:
        print("%s %s: statistic=%.6g se=%.3g"
              % ("PASS" if c["pass"] else "FAIL", c["check"],
                 c["statistic"], c["standard_error"]))
    return EXIT_OK if all(c["pass"] for c in checks) else EXIT_VERIFY


def cmd_sweep(cfg: ExperimentConfig) -> int:
    if not cfg.sweep:
        print("config error: sweep requires a 'sweep' entry",
              file=sys.stderr)
        return EXIT_CONFIG
    if len(cfg.sweep) != 1:
        print("config error: exactly one sweep dimension is supported",
              file=sys.stderr)
        return EXIT_CONFIG
    name, values = cfg.sweep[0]
    out = cfg.outputs
    os.makedirs(out, exist_ok=True)
    logs = tuple(cfg.log_processes)
    if "qB" not in logs:
        logs = logs + ("qB",)
    summary = []
    for v in values:
        sub_out = os.path.join(out, "%s_%g" % (name, v))
        sub = cfg.replace(outputs=sub_out, sweep=None,
                          log_processes=list(logs), **{name: v})
        rc = cmd_simulate(sub)
        if rc != EXIT_OK:
            print("sweep aborted at %s = %g" % (name, v), file=sys.stderr)
            return rc
        with open(os.path.join(sub_out, "report.json")) as f:
            rep = json.load(f)
        band = np.array(rep["bands"]["qB"])
        mid = band.shape[1] // 2
        summary.append({"value": v,
                        "qB_band_width_mid": float(band[2, mid]
                                                   - band[0, mid])})
    _write_json(os.path.join(out, "sweep_summary.json"),
                {"parameter": name, "runs": summary}, cfg)
    print("sweep complete: %s over %s" % (name, list(values)))
    return EXIT_OK


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="brokergame",
        description="Closed-form broker/informed-trader equilibrium: "
                    "solve, verify, and simulate.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, fn in (("solve", cmd_solve), ("simulate", cmd_simulate),
                     ("verify", cmd_verify), ("sweep", cmd_sweep)):
        p = sub.add_parser(name)
        p.add_argument("--config", help="path to a JSON experiment config")
        p.add_argument("--out", help="output directory (overrides config)")
        p.add_argument("--seed", type=int, help="RNG seed (overrides config)")
        p.add_argument("--paths", type=int, help="number of Monte Carlo paths")
        p.add_argument("--steps", type=int, help="number of time steps")
        p.set_defaults(fn=fn)
    return ap


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = (ExperimentConfig.load(args.config) if args.config
               else ExperimentConfig())
        overrides = {}
        if args.out is not None:
            overrides["outputs"] = args.out
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.paths is not None:
            overrides["n_paths"] = args.paths
        if args.steps is not None:
            overrides["n_steps"] = args.steps
        if overrides:
            cfg = cfg.replace(**overrides)
    except (ConfigError, OSError) as e:
        print("config error: %s" % e, file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.fn(cfg)
    except ConfigError as e:
        print("config error: %s" % e, file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
