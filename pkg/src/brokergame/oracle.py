"""Independent verification oracles for the closed-form equilibrium.

Two families of checks, both independent of the Riccati/offset pipeline:

1. A Picard fixed-point solver for the zero-noise FBSDE.  With all
   volatilities at zero the conditional expectations are identities and
   the contraction map reduces to deterministic integral equations

       X <- X_0 + int_0^t (A X + B Y + b_s) ds,
       Y <- G X_T - int_t^T (A_hat X + B_hat Y + b_hat_s) ds,

   with the deterministic drivers alpha_t = alpha_0 e^{-ka t},
   xi_t = xi_0 e^{-kx t}.  Inside the small-horizon bound the map is a
   contraction and its fixed point must match the feedback trajectory.

2. Finite-difference directional (Gateaux) derivatives of the two
   performance criteria, estimated by Monte Carlo with common random
   numbers.  At the equilibrium both derivatives vanish; perturbed
   strategies score strictly lower.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .model import ModelParams, SystemMatrices
from .offset import OffsetGrid, _source_columns
from .riccati import RiccatiGrid, TimeGrid, _rk4_step

__all__ = [
    "PicardConfig",
    "PicardResult",
    "GateauxConfig",
    "GateauxEstimate",
    "NoConvergence",
    "picard_solve",
    "picard_residual",
    "feedback_trajectory",
    "gateaux_informed",
    "gateaux_broker",
    "run_gateaux_checks",
]


class NoConvergence(RuntimeError):
    def __init__(self, final_gap: float, iterations: int):
        self.final_gap = final_gap
        self.iterations = iterations
        super().__init__("Picard iteration did not converge: gap %g after %d "
                         "iterations" % (final_gap, iterations))


@dataclass(frozen=True)
class PicardConfig:
    n_steps: int = 2000
    max_iters: int = 200
    tol: float = 1e-12  # sup-norm over the grid of the 6-vector (X, Y)
    damping: float = 1.0  # 1.0 is plain Picard

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError("tol must be > 0")
        if not (0.0 < self.damping <= 1.0):
            raise ValueError("damping must be in (0, 1]")


@dataclass(frozen=True)
class PicardResult:
    X_path: np.ndarray  # (n+1, 3)
    Y_path: np.ndarray  # (n+1, 3)
    iterations: int
    final_gap: float
    contraction_estimate: float  # observed per-iteration gap ratio
    gaps: tuple = ()


def _deterministic_drivers(params: ModelParams, nodes: np.ndarray):
    alpha = params.alpha0 * np.exp(-params.kappa_alpha * nodes)
    xi = params.xi0 * np.exp(-params.kappa_xi * nodes)
    bvec = np.zeros((len(nodes), 3))
    bvec[:, 0] = -xi
    bhat = np.zeros((len(nodes), 3))
    bhat[:, 0] = -(alpha + params.impact_h * xi) / (2.0 * params.a)
    bhat[:, 1] = -alpha / (2.0 * params.b)
    return alpha, xi, bvec, bhat


def _gamma_map(X, Y, mat, X0, bvec, bhat, dt):
    """One application of the deterministic contraction map."""
    def cumtrapz(f):
        out = np.zeros_like(f)
        out[1:] = np.cumsum((f[1:] + f[:-1]) / 2 * dt, axis=0)
        return out

    FX = X @ mat.A.T + Y @ mat.B.T + bvec
    Xn = X0 + cumtrapz(FX)
    FY = X @ mat.A_hat.T + Y @ mat.B_hat.T + bhat
    cF = cumtrapz(FY)
    Yn = mat.G @ X[-1] - (cF[-1] - cF)
    return Xn, Yn


def picard_solve(mat: SystemMatrices, params: ModelParams,
                 cfg: PicardConfig) -> PicardResult:
    """Iterate the zero-noise contraction map until the sup-norm gap of
    the (X, Y) pair drops below tol.

    Requires sigma_alpha = sigma_xi = sigma_S = 0 (the map only has a
    pointwise meaning when conditioning is trivial).  Raises
    NoConvergence after max_iters.
    """
    if params.sigma_alpha != 0 or params.sigma_xi != 0 or params.sigma_S != 0:
        raise ValueError("picard_solve requires a zero-noise parameter set")
    grid = TimeGrid(t1=params.horizon_T, n_steps=cfg.n_steps)
    nodes = grid.nodes
    dt = grid.dt
    _, _, bvec, bhat = _deterministic_drivers(params, nodes)
    X0 = np.array([params.qB0, params.qI0, params.Y0])

    X = np.tile(X0, (len(nodes), 1))
    Y = np.zeros((len(nodes), 3))
    gaps = []
    for it in range(1, cfg.max_iters + 1):
        Xn, Yn = _gamma_map(X, Y, mat, X0, bvec, bhat, dt)
        if cfg.damping < 1.0:
            Xn = (1 - cfg.damping) * X + cfg.damping * Xn
            Yn = (1 - cfg.damping) * Y + cfg.damping * Yn
        gap = float(np.sqrt(((Xn - X) ** 2).sum(1)
                            + ((Yn - Y) ** 2).sum(1)).max())
        gaps.append(gap)
        X, Y = Xn, Yn
        if gap <= cfg.tol:
            ratios = [gaps[i + 1] / gaps[i]
                      for i in range(1, len(gaps) - 1) if gaps[i] > 0]
            return PicardResult(X_path=X, Y_path=Y, iterations=it,
                                final_gap=gap,
                                contraction_estimate=max(ratios) if ratios
                                else 0.0,
                                gaps=tuple(gaps))
    raise NoConvergence(gaps[-1], cfg.max_iters)


def picard_residual(res: PicardResult, mat: SystemMatrices,
                    params: ModelParams) -> float:
    """Sup-norm defect of the fixed point under one more map application."""
    n = len(res.X_path) - 1
    grid = TimeGrid(t1=params.horizon_T, n_steps=n)
    _, _, bvec, bhat = _deterministic_drivers(params, grid.nodes)
    X0 = np.array([params.qB0, params.qI0, params.Y0])
    Xn, Yn = _gamma_map(res.X_path, res.Y_path, mat, X0, bvec, bhat, grid.dt)
    return float(max(np.abs(Xn - res.X_path).max(),
                     np.abs(Yn - res.Y_path).max()))


def feedback_trajectory(params: ModelParams, mat: SystemMatrices,
                        P: RiccatiGrid, L: OffsetGrid
                        ) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic (zero-noise) trajectory under the closed-form
    feedback: forward RK4 of dX = (A + B P_t) X + B ell_t + b_t with
    exact drivers, then Y_t = ell_t + P_t X_t.  Used as the oracle target
    for the Picard fixed point."""
    grid = P.grid
    n = grid.n_steps
    dt = grid.dt
    nodes = grid.nodes
    ka, kx = params.kappa_alpha, params.kappa_xi
    a0, x0 = params.alpha0, params.xi0

    def drivers(t):
        return a0 * math.exp(-ka * t), x0 * math.exp(-kx * t)

    kap = np.diag([ka, kx])

    def L_rhs(Lm, Pm):
        return _source_columns(Pm, params) + (mat.B_hat - Pm @ mat.B) @ Lm \
            + Lm @ kap

    def rhs(x, Pm, Lm, t):
        al, xv = drivers(t)
        ell = Lm @ np.array([al, xv])
        return mat.A @ x + mat.B @ (ell + Pm @ x) + np.array([-xv, 0.0, 0.0])

    X = np.empty((n + 1, 3))
    X[0] = [params.qB0, params.qI0, params.Y0]
    for k in range(n):
        s = dt
        Pk, Pk1 = P.P[k], P.P[k + 1]
        Pm = _rk4_step(mat, Pk, s / 2)
        # midpoint offset by a half RK4 step of the coefficient ODE
        y = L.L[k]
        q = _rk4_step(mat, Pk, s / 4)
        k1 = L_rhs(y, Pk)
        k2 = L_rhs(y + s / 4 * k1, q)
        k3 = L_rhs(y + s / 4 * k2, q)
        k4 = L_rhs(y + s / 2 * k3, Pm)
        Lmid = y + s / 12 * (k1 + 2 * k2 + 2 * k3 + k4)
        t = nodes[k]
        x = X[k]
        k1 = rhs(x, Pk, L.L[k], t)
        k2 = rhs(x + s / 2 * k1, Pm, Lmid, t + s / 2)
        k3 = rhs(x + s / 2 * k2, Pm, Lmid, t + s / 2)
        k4 = rhs(x + s * k3, Pk1, L.L[k + 1], t + s)
        X[k + 1] = x + s / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    al = a0 * np.exp(-ka * nodes)
    xv = x0 * np.exp(-kx * nodes)
    ell = np.einsum("kij,kj->ki", L.L, np.stack([al, xv], axis=1))
    Y = ell + np.einsum("kij,kj->ki", P.P, X)
    return X, Y


@dataclass(frozen=True)
class GateauxConfig:
    epsilon_list: tuple = (1e-2, 1e-3)
    n_directions: int = 5
    n_paths: int = 10_000
    seed: int = 0

    def __post_init__(self):
        if any(e <= 0 for e in self.epsilon_list):
            raise ValueError("all epsilons must be > 0")


@dataclass(frozen=True)
class GateauxEstimate:
    """Forward-difference directional derivative at the smallest epsilon,
    with the per-epsilon table for Richardson comparison and a
    second-difference concavity diagnostic."""

    epsilon: float
    estimate: float
    standard_error: float
    by_epsilon: dict = field(default_factory=dict)  # eps -> (est, se)
    second_difference: float = 0.0
    second_difference_se: float = 0.0


def _euler_cumsum(f: np.ndarray, x0: float, dt: float) -> np.ndarray:
    """x_{k+1} = x_k + f_k dt, matching the simulator's explicit Euler."""
    out = np.empty_like(f)
    out[0] = x0
    out[1:] = x0 + np.cumsum(f[:-1] * dt, axis=0)
    return out


def _impact_path(nu: np.ndarray, Y0: float, h: float, p: float,
                 dt: float) -> np.ndarray:
    if p == 0.0:
        return _euler_cumsum(h * nu, Y0, dt)
    out = np.empty_like(nu)
    out[0] = Y0
    for k in range(len(nu) - 1):
        out[k + 1] = out[k] + (h * nu[k] - p * out[k]) * dt
    return out


def _trapz(F: np.ndarray, dt: float) -> np.ndarray:
    return (F[0] / 2 + F[1:-1].sum(axis=0) + F[-1] / 2) * dt


def _JI(eta, nu, Y, alpha, params: ModelParams, dt: float) -> np.ndarray:
    """Informed trader's criterion per path, integral representation
    (expectation form, without the mean-zero martingale term)."""
    pr = params
    qI = _euler_cumsum(eta, pr.qI0, dt)
    integ = -pr.b * eta ** 2 + qI * (
        alpha + pr.impact_h * nu - pr.decay_p * Y
        - 2 * pr.psi * eta - pr.rI * qI)
    return pr.S0 * pr.qI0 - pr.psi * pr.qI0 ** 2 + _trapz(integ, dt)


def _JB(nu, eta, xi, alpha, params: ModelParams, dt: float) -> np.ndarray:
    """Broker's criterion per path, integral representation."""
    pr = params
    qB = _euler_cumsum(nu - eta - xi, pr.qB0, dt)
    Y = _impact_path(nu, pr.Y0, pr.impact_h, pr.decay_p, dt)
    integ = (-pr.a * nu ** 2 + pr.b * eta ** 2 + pr.c * xi ** 2
             + qB * (alpha + pr.impact_h * nu - pr.decay_p * Y
                     - 2 * pr.phi * (nu - eta - xi) - pr.rB * qB))
    return pr.S0 * pr.qB0 - pr.phi * pr.qB0 ** 2 + _trapz(integ, dt)


def _finite_diff(J0, J_of, epsilon_list, n_paths):
    by_eps = {}
    for eps in sorted(epsilon_list, reverse=True):
        d = (J_of(eps) - J0) / eps
        by_eps[eps] = (float(d.mean()),
                       float(d.std(ddof=1) / math.sqrt(n_paths)))
    eps0 = min(epsilon_list)
    sd = (J_of(eps0) + J_of(-eps0) - 2 * J0) / eps0 ** 2
    est, se = by_eps[eps0]
    return GateauxEstimate(
        epsilon=eps0, estimate=est, standard_error=se, by_epsilon=by_eps,
        second_difference=float(sd.mean()),
        second_difference_se=float(sd.std(ddof=1) / math.sqrt(n_paths)))


def gateaux_informed(nu, eta, direction, params: ModelParams,
                     cfg: GateauxConfig, alpha, xi=None,
                     dt: float | None = None) -> GateauxEstimate:
    """MC estimate of eps -> (J^I(nu, eta + eps n) - J^I(nu, eta)) / eps.

    nu, eta, alpha are (n+1, n_paths) ensembles on a common grid with
    common random numbers; direction is (n+1,) or (n+1, n_paths).  The
    broker's impact path is rebuilt from nu once (it does not depend on
    eta).  Bit-reproducible given (seed, n_paths, grid).
    """
    if dt is None:
        raise ValueError("dt is required")
    direction = np.asarray(direction)
    dirs = direction[:, None] if direction.ndim == 1 else direction
    Y = _impact_path(nu, params.Y0, params.impact_h, params.decay_p, dt)
    J0 = _JI(eta, nu, Y, alpha, params, dt)

    def J_of(eps):
        return _JI(eta + eps * dirs, nu, Y, alpha, params, dt)

    return _finite_diff(J0, J_of, cfg.epsilon_list, nu.shape[1])


def gateaux_broker(nu, eta, direction, params: ModelParams,
                   cfg: GateauxConfig, alpha, xi,
                   dt: float | None = None) -> GateauxEstimate:
    """MC estimate of eps -> (J^B(nu + eps n, eta) - J^B(nu, eta)) / eps;
    the perturbation feeds through the broker's inventory and the
    transient impact."""
    if dt is None:
        raise ValueError("dt is required")
    direction = np.asarray(direction)
    dirs = direction[:, None] if direction.ndim == 1 else direction
    J0 = _JB(nu, eta, xi, alpha, params, dt)

    def J_of(eps):
        return _JB(nu + eps * dirs, eta, xi, alpha, params, dt)

    return _finite_diff(J0, J_of, cfg.epsilon_list, nu.shape[1])


def random_directions(nodes: np.ndarray, n_directions: int, seed: int,
                      scale: float = 0.5) -> list[np.ndarray]:
    """Smooth deterministic-in-time perturbation directions with a
    guaranteed constant component (so the terminal-penalty curvature is
    exercised) plus random sine and ramp parts."""
    rng = np.random.Generator(np.random.Philox(key=int(seed)))
    T = nodes[-1]
    out = []
    for _ in range(n_directions):
        sgn = 1.0 if rng.random() < 0.5 else -1.0
        c0 = sgn * (0.6 + 0.4 * rng.random())
        c1 = (rng.random() - 0.5) * 0.6
        c2 = (rng.random() - 0.5) * 0.6
        out.append(scale * (c0 + c1 * np.sin(np.pi * nodes / T)
                            + c2 * nodes / T))
    return out


def run_gateaux_checks(params: ModelParams, P: RiccatiGrid, L: OffsetGrid,
                       cfg: GateauxConfig) -> list[dict]:
    """Simulate the equilibrium ensemble once with common random numbers
    and run the optimality checks for both players over n_directions
    random directions.

    Emitted checks per direction and player:
      * zero directional derivative at the equilibrium (|est| <= 3 SE),
      * strictly lower J for the strategy perturbed by 0.5 * direction
        (beyond 3 SE),
      * non-positive second difference (concavity, within 3 SE).
    Returns a list of {check, statistic, standard_error, pass} dicts.
    """
    from .simulate import simulate_equilibrium

    report, _ = simulate_equilibrium(
        params, P, L, n_paths=cfg.n_paths, seed=cfg.seed,
        log_processes=("alpha", "xi", "nu", "eta"), return_ensembles=True)
    ens = report.ensembles
    nu, eta = ens["nu"], ens["eta"]
    alpha, xi = ens["alpha"], ens["xi"]
    dt = P.grid.dt
    nodes = P.grid.nodes
    dirs = random_directions(nodes, cfg.n_directions, cfg.seed ^ 0x9E3779B9)

    checks = []

    def add(name, stat, se, ok):
        checks.append({"check": name, "statistic": float(stat),
                       "standard_error": float(se), "pass": bool(ok)})

    Yimp = _impact_path(nu, params.Y0, params.impact_h, params.decay_p, dt)
    JI0 = _JI(eta, nu, Yimp, alpha, params, dt)
    JB0 = _JB(nu, eta, xi, alpha, params, dt)
    N = cfg.n_paths
    for j, d in enumerate(dirs):
        gi = gateaux_informed(nu, eta, d, params, cfg, alpha, xi, dt=dt)
        add("gateaux_informed_dir%d" % j, gi.estimate, gi.standard_error,
            abs(gi.estimate) <= 3 * gi.standard_error)
        add("concavity_informed_dir%d" % j, gi.second_difference,
            gi.second_difference_se,
            gi.second_difference <= 3 * gi.second_difference_se)
        gb = gateaux_broker(nu, eta, d, params, cfg, alpha, xi, dt=dt)
        add("gateaux_broker_dir%d" % j, gb.estimate, gb.standard_error,
            abs(gb.estimate) <= 3 * gb.standard_error)
        add("concavity_broker_dir%d" % j, gb.second_difference,
            gb.second_difference_se,
            gb.second_difference <= 3 * gb.second_difference_se)

        dd = d[:, None]
        dJI = _JI(eta + 0.5 * dd, nu, Yimp, alpha, params, dt) - JI0
        mi, si = float(dJI.mean()), float(dJI.std(ddof=1) / math.sqrt(N))
        add("perturbed_informed_dir%d" % j, mi, si, mi < -3 * si)
        dJB = _JB(nu + 0.5 * dd, eta, xi, alpha, params, dt) - JB0
        mb, sb = float(dJB.mean()), float(dJB.std(ddof=1) / math.sqrt(N))
        add("perturbed_broker_dir%d" % j, mb, sb, mb < -3 * sb)
    return checks
