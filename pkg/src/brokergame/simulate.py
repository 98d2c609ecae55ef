"""Monte Carlo simulation of the equilibrium under the closed-form feedback.

Per path: the drift signal alpha and the uninformed flow xi advance by
exact OU transitions, the midprice martingale by Gaussian increments; at
each node the controls are read off the feedback rule
(nu, eta, Z) = ell_t + P_t (qB, qI, Y) and the impact, inventories and
cash advance by explicit Euler.  The midprice is reconstructed from its
decomposition S_t = S0 + int alpha + (Y_t - Y0 e^{-p t}) + M^S_t, i.e.
the decaying initial impact is removed so that S_0 = S0.

The generator is a single counter-based Philox stream keyed by the seed,
drawn in fixed (3, n_paths) blocks per step, so results are bit-identical
for a given (seed, n_paths, grid) regardless of thread count.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .model import ModelParams
from .offset import GridMismatch, OffsetGrid
from .riccati import RiccatiGrid

__all__ = [
    "PathBundle",
    "MonteCarloReport",
    "simulate_equilibrium",
    "evaluate_performance",
    "quantile_bands",
    "CSV_COLUMNS",
]

CSV_COLUMNS = ("t", "alpha", "xi", "S", "Y", "qB", "qI", "nu", "eta", "Z",
               "XB", "XI", "mtmB", "mtmI")

# processes that can be logged as full ensembles / quantile bands
PROCESS_NAMES = ("alpha", "xi", "S", "Y", "qB", "qI", "nu", "eta", "Z",
                 "XB", "XI", "mtmB", "mtmI", "MS")


@dataclass(frozen=True)
class PathBundle:
    """Complete trajectories of all model processes for a (small) sample
    of paths; each array has shape (n_nodes,) or (n_nodes, m)."""

    t: np.ndarray
    alpha: np.ndarray
    xi: np.ndarray
    S: np.ndarray
    Y: np.ndarray
    qB: np.ndarray
    qI: np.ndarray
    nu: np.ndarray
    eta: np.ndarray
    Z: np.ndarray
    XB: np.ndarray
    XI: np.ndarray
    mtmB: np.ndarray
    mtmI: np.ndarray
    MS: np.ndarray | None = None  # midprice martingale component

    def n_paths(self) -> int:
        return 1 if self.alpha.ndim == 1 else self.alpha.shape[1]

    def write_csv(self, path, index: int = 0) -> None:
        cols = []
        for name in CSV_COLUMNS:
            arr = getattr(self, name)
            if name != "t" and arr.ndim == 2:
                arr = arr[:, index]
            cols.append(arr)
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(CSV_COLUMNS)
            for row in zip(*cols):
                w.writerow([repr(float(x)) for x in row])


@dataclass(frozen=True)
class MonteCarloReport:
    n_paths: int
    n_steps: int
    seed: int
    n_nonfinite: int
    JI_terminal_mean: float
    JI_terminal_se: float
    JI_integral_mean: float
    JI_integral_se: float
    JB_terminal_mean: float
    JB_terminal_se: float
    JB_integral_mean: float
    JB_integral_se: float
    gap_JI_mean: float  # ensemble mean of the per-path |terminal - integral|
    gap_JI_se: float
    gap_JB_mean: float
    gap_JB_se: float
    terminal_violation: float
    bands: dict = field(default_factory=dict)  # name -> (3, n+1) [q05,q50,q95]
    ensembles: dict = field(default_factory=dict)  # name -> (n+1, n_paths)

    def to_dict(self) -> dict:
        d = {
            "n_paths": self.n_paths, "n_steps": self.n_steps,
            "seed": self.seed, "n_nonfinite": self.n_nonfinite,
            "JI": {"terminal": [self.JI_terminal_mean, self.JI_terminal_se],
                   "integral": [self.JI_integral_mean, self.JI_integral_se]},
            "JB": {"terminal": [self.JB_terminal_mean, self.JB_terminal_se],
                   "integral": [self.JB_integral_mean, self.JB_integral_se]},
            "representation_gap": {
                "JI": [self.gap_JI_mean, self.gap_JI_se],
                "JB": [self.gap_JB_mean, self.gap_JB_se]},
            "terminal_violation": self.terminal_violation,
            "bands": {name: np.asarray(b).tolist()
                      for name, b in self.bands.items()},
        }
        return d


def quantile_bands(ensemble: np.ndarray, probs=(0.05, 0.95)) -> np.ndarray:
    """Nodewise order-statistic quantiles (linear interpolation); ensemble
    has shape (n_nodes, n_paths), result (len(probs), n_nodes)."""
    ensemble = np.asarray(ensemble)
    if ensemble.ndim != 2 or ensemble.shape[1] < 2:
        raise ValueError("need an (n_nodes, n_paths) ensemble with >= 2 paths")
    return np.quantile(ensemble, list(probs), axis=1)


def _mean_se(x: np.ndarray) -> tuple[float, float]:
    m = float(np.mean(x))
    se = float(np.std(x, ddof=1) / math.sqrt(len(x))) if len(x) > 1 else 0.0
    return m, se


def simulate_equilibrium(params: ModelParams, P: RiccatiGrid, L: OffsetGrid,
                         n_paths: int, seed: int,
                         log_processes: tuple = (),
                         n_sample_paths: int = 0,
                         antithetic: bool = False,
                         return_ensembles: bool = False,
                         ) -> tuple[MonteCarloReport, PathBundle | None]:
    """Simulate the equilibrium ensemble and aggregate the report.

    log_processes selects which processes get full (n+1, n_paths) storage
    for quantile bands (memory: n_paths x n_nodes doubles per process);
    everything needed for the performance statistics is accumulated
    online.  n_sample_paths > 0 additionally returns a PathBundle with
    complete trajectories of the first paths.  With antithetic=True the
    second half of the paths reuses the first half's normals with flipped
    sign (n_paths must then be even).
    """
    if P.grid.n_steps != L.grid.n_steps or P.grid.t1 != L.grid.t1:
        raise GridMismatch("Riccati and offset grids differ")
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    if antithetic and n_paths % 2:
        raise ValueError("antithetic pairing needs an even n_paths")
    unknown = set(log_processes) - set(PROCESS_NAMES)
    if unknown:
        raise ValueError("unknown process names: %s" % sorted(unknown))

    n = P.grid.n_steps
    dt = P.grid.dt
    N = int(n_paths)
    m = min(int(n_sample_paths), N)
    pr = params
    rng = np.random.Generator(np.random.Philox(key=int(seed)))

    ea = math.exp(-pr.kappa_alpha * dt)
    va = (pr.sigma_alpha * math.sqrt((1 - math.exp(-2 * pr.kappa_alpha * dt))
                                     / (2 * pr.kappa_alpha))
          if pr.kappa_alpha > 0 else pr.sigma_alpha * math.sqrt(dt))
    ex = math.exp(-pr.kappa_xi * dt)
    vx = (pr.sigma_xi * math.sqrt((1 - math.exp(-2 * pr.kappa_xi * dt))
                                  / (2 * pr.kappa_xi))
          if pr.kappa_xi > 0 else pr.sigma_xi * math.sqrt(dt))
    sS_dt = pr.sigma_S * math.sqrt(dt)

    alpha = np.full(N, pr.alpha0)
    xi = np.full(N, pr.xi0)
    Y = np.full(N, pr.Y0)
    qB = np.full(N, pr.qB0)
    qI = np.full(N, pr.qI0)
    XB = np.zeros(N)
    XI = np.zeros(N)
    IA = np.zeros(N)   # integrated signal
    MS = np.zeros(N)   # midprice martingale
    alive = np.ones(N, dtype=bool)

    logged = {name: np.empty((n + 1, N)) for name in log_processes}
    sample = ({name: np.empty((n + 1, m)) for name in
               ("alpha", "xi", "S", "Y", "qB", "qI", "nu", "eta", "Z",
                "XB", "XI", "mtmB", "mtmI", "MS")} if m else None)

    # online trapezoid accumulators (weight dt applied at the end)
    run_qI2 = np.zeros(N)
    run_qB2 = np.zeros(N)
    int_I = np.zeros(N)
    int_B = np.zeros(N)
    mart_I = np.zeros(N)
    mart_B = np.zeros(N)
    viol = 0.0
    term = {}

    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(n + 1):
            tk = k * dt
            S = pr.S0 + IA + Y - pr.Y0 * math.exp(-pr.decay_p * tk) + MS
            ell = L.L[k] @ np.vstack([alpha, xi])
            ctr = P.P[k] @ np.vstack([qB, qI, Y]) + ell
            nu, eta, Z = ctr

            w = 0.5 if k in (0, n) else 1.0
            run_qI2 += w * qI * qI
            run_qB2 += w * qB * qB
            drift_S = alpha + pr.impact_h * nu - pr.decay_p * Y
            int_I += w * (-pr.b * eta ** 2
                          + qI * (drift_S - 2 * pr.psi * eta - pr.rI * qI))
            int_B += w * (-pr.a * nu ** 2 + pr.b * eta ** 2 + pr.c * xi ** 2
                          + qB * (drift_S - 2 * pr.phi * (nu - eta - xi)
                                  - pr.rB * qB))

            if logged or sample is not None:
                mtmB = XB + qB * S
                mtmI = XI + qI * S
                local = {"alpha": alpha, "xi": xi, "S": S, "Y": Y, "qB": qB,
                         "qI": qI, "nu": nu, "eta": eta, "Z": Z, "XB": XB,
                         "XI": XI, "mtmB": mtmB, "mtmI": mtmI, "MS": MS}
                for name, arr in logged.items():
                    arr[k] = local[name]
                if sample is not None:
                    for name, arr in sample.items():
                        arr[k] = local[name][:m]

            if k == n:
                vB = np.abs(nu + (2 * pr.phi - pr.impact_h) / (2 * pr.a) * qB) \
                    / (1.0 + np.abs(qB))
                vI = np.abs(eta + pr.psi / pr.b * qI) / (1.0 + np.abs(qI))
                ok = alive & np.isfinite(vB) & np.isfinite(vI)
                viol = float(np.maximum(vB, vI)[ok].max()) if ok.any() else float("nan")
                term = {"S": S, "qB": qB, "qI": qI, "XB": XB, "XI": XI}
                break

            if antithetic:
                half = rng.standard_normal((3, N // 2))
                zn = np.concatenate([half, -half], axis=1)
            else:
                zn = rng.standard_normal((3, N))

            dMS = sS_dt * zn[2]
            # Ito left-point martingale term of the integral representation
            mart_I += qI * dMS
            mart_B += qB * dMS

            XB = XB + (-(S + pr.a * nu) * nu + (S + pr.b * eta) * eta
                       + (S + pr.c * xi) * xi) * dt
            XI = XI + (-(S + pr.b * eta) * eta) * dt
            qB = qB + (nu - eta - xi) * dt
            qI = qI + eta * dt
            Y = Y + (pr.impact_h * nu - pr.decay_p * Y) * dt
            IA = IA + alpha * dt

            alpha = alpha * ea + va * zn[0]
            xi = xi * ex + vx * zn[1]
            MS = MS + dMS

            combined = qB + qI + Y + XB + XI + alpha + xi + MS + IA
            bad = alive & ~np.isfinite(combined)
            if bad.any():
                alive &= ~bad
                for arr in (alpha, xi, Y, qB, qI, XB, XI, IA, MS):
                    arr[bad] = 0.0

    dead = int(N - alive.sum())
    JI_term = term["XI"] + term["qI"] * term["S"] - pr.psi * term["qI"] ** 2 \
        - pr.rI * run_qI2 * dt
    JB_term = term["XB"] + term["qB"] * term["S"] - pr.phi * term["qB"] ** 2 \
        - pr.rB * run_qB2 * dt
    S0I = pr.S0  # S_0 equals S0 by construction of the decomposition
    JI_int = S0I * pr.qI0 - pr.psi * pr.qI0 ** 2 + int_I * dt + mart_I
    JB_int = S0I * pr.qB0 - pr.phi * pr.qB0 ** 2 + int_B * dt + mart_B

    JI_t_m, JI_t_s = _mean_se(JI_term[alive])
    JI_i_m, JI_i_s = _mean_se(JI_int[alive])
    JB_t_m, JB_t_s = _mean_se(JB_term[alive])
    JB_i_m, JB_i_s = _mean_se(JB_int[alive])
    gI_m, gI_s = _mean_se(np.abs(JI_term - JI_int)[alive])
    gB_m, gB_s = _mean_se(np.abs(JB_term - JB_int)[alive])

    bands = {}
    for name, arr in logged.items():
        use = arr[:, alive] if dead else arr
        bands[name] = np.quantile(use, [0.05, 0.5, 0.95], axis=1)

    report = MonteCarloReport(
        n_paths=N, n_steps=n, seed=int(seed), n_nonfinite=dead,
        JI_terminal_mean=JI_t_m, JI_terminal_se=JI_t_s,
        JI_integral_mean=JI_i_m, JI_integral_se=JI_i_s,
        JB_terminal_mean=JB_t_m, JB_terminal_se=JB_t_s,
        JB_integral_mean=JB_i_m, JB_integral_se=JB_i_s,
        gap_JI_mean=gI_m, gap_JI_se=gI_s,
        gap_JB_mean=gB_m, gap_JB_se=gB_s,
        terminal_violation=viol, bands=bands,
        ensembles=logged if return_ensembles else {})

    bundle = None
    if sample is not None:
        bundle = PathBundle(t=P.grid.nodes, **sample)
    return report, bundle


def evaluate_performance(pb: PathBundle, params: ModelParams,
                         form: str = "terminal") -> tuple[np.ndarray, np.ndarray]:
    """Per-path performance criteria (JI, JB) from a stored bundle.

    form="terminal": cash + inventory marked at the terminal midprice,
    minus terminal and running inventory penalties.
    form="integral": the equivalent integral representation (plus the
    discretized martingale term, recovered from the stored M^S when
    available), equal to the terminal form up to O(dt) per path.
    Both use trapezoidal quadrature in time.
    """
    t = pb.t
    dt = float(t[1] - t[0])
    pr = params

    def trapz(F):
        return (F[0] / 2 + F[1:-1].sum(axis=0) + F[-1] / 2) * dt

    if form == "terminal":
        JI = pb.XI[-1] + pb.qI[-1] * pb.S[-1] - pr.psi * pb.qI[-1] ** 2 \
            - pr.rI * trapz(pb.qI ** 2)
        JB = pb.XB[-1] + pb.qB[-1] * pb.S[-1] - pr.phi * pb.qB[-1] ** 2 \
            - pr.rB * trapz(pb.qB ** 2)
        return np.asarray(JI), np.asarray(JB)
    if form != "integral":
        raise ValueError("form must be 'terminal' or 'integral'")

    drift_S = pb.alpha + pr.impact_h * pb.nu - pr.decay_p * pb.Y
    integrand_I = -pr.b * pb.eta ** 2 + pb.qI * (
        drift_S - 2 * pr.psi * pb.eta - pr.rI * pb.qI)
    integrand_B = (-pr.a * pb.nu ** 2 + pr.b * pb.eta ** 2
                   + pr.c * pb.xi ** 2
                   + pb.qB * (drift_S - 2 * pr.phi * (pb.nu - pb.eta - pb.xi)
                              - pr.rB * pb.qB))
    if pb.MS is not None:
        dMS = np.diff(pb.MS, axis=0)
        mart_I = (pb.qI[:-1] * dMS).sum(axis=0)
        mart_B = (pb.qB[:-1] * dMS).sum(axis=0)
    else:
        mart_I = mart_B = 0.0
    S0 = pb.S[0]
    JI = S0 * pb.qI[0] - pr.psi * pb.qI[0] ** 2 + trapz(integrand_I) + mart_I
    JB = S0 * pb.qB[0] - pr.phi * pb.qB[0] ** 2 + trapz(integrand_B) + mart_B
    return np.asarray(JI), np.asarray(JB)
