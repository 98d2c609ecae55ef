"""Backward solvers for the 3x3 non-Hermitian matrix Riccati ODE.

The equilibrium feedback gain P_t solves

    P' = A_hat + B_hat P - P A - P B P,   P(T) = G,

integrated backward on a uniform grid.  Two independent methods are
provided: a direct 4th-order one-step integration of the quadratic ODE,
and the linearization P = T R^{-1} where (R; T) solves the linear 6x3
terminal-value system d/dt (R; T) = [[A, B], [A_hat, B_hat]] (R; T) from
(I; G).  The linearized route is the proved-safe one when decay_p = 0 and
rB = 0; the direct route works everywhere but can escape in finite time,
which is reported as BlowUp.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .model import ModelParams, SystemMatrices

__all__ = [
    "TimeGrid",
    "RiccatiGrid",
    "LinearizationPair",
    "ConditionReport",
    "BlowUp",
    "SingularR",
    "solve_riccati_direct",
    "solve_riccati_linearized",
    "solve_riccati",
    "riccati_residual",
    "verify_freiling_conditions",
    "read_riccati_csv",
]

BLOWUP_CAP = 1e12
RCOND_FLOOR = 1e-12


class BlowUp(RuntimeError):
    """Riccati flow escaped (entry above the cap) at time t."""

    def __init__(self, t: float):
        self.t = t
        super().__init__("Riccati solution blew up near t = %g" % t)


class SingularR(RuntimeError):
    """R factor of the linearization became numerically singular at time t."""

    def __init__(self, t: float, rcond: float):
        self.t = t
        self.rcond = rcond
        super().__init__("R is numerically singular at t = %g (rcond = %g)"
                         % (t, rcond))


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid 0 = t_0 < ... < t_n = T."""

    t1: float
    n_steps: int

    def __post_init__(self):
        if not (self.t1 > 0):
            raise ValueError("t1 must be > 0")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ValueError("n_steps must be a positive integer")

    @property
    def t0(self) -> float:
        return 0.0

    @property
    def dt(self) -> float:
        return self.t1 / self.n_steps

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(0.0, self.t1, self.n_steps + 1)

    def __len__(self) -> int:
        return self.n_steps + 1


# named entries of P: rows give the nu/eta/Z feedback, columns multiply
# (qB, qI, Y)
_ENTRY_NAMES = ("gB", "gI", "gY", "hB", "hI", "hY", "fB", "fI", "fY")


@dataclass(frozen=True)
class RiccatiGrid:
    """P_t on a time grid, with residual diagnostics.

    Accessors gB..fY return the per-node entry series: row 1 of P is
    (gB, gI, gY), row 2 (hB, hI, hY), row 3 (fB, fI, fY).
    """

    grid: TimeGrid
    P: np.ndarray  # (n+1, 3, 3)
    method: str  # "direct" | "linearized" | "loaded"
    max_residual: float

    def __getattr__(self, name):
        if name in _ENTRY_NAMES:
            i = _ENTRY_NAMES.index(name)
            return self.P[:, i // 3, i % 3]
        raise AttributeError(name)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(("t",) + _ENTRY_NAMES)
            for t, Pk in zip(self.grid.nodes, self.P):
                w.writerow([repr(float(t))] + [repr(float(x))
                                               for x in Pk.ravel()])


@dataclass(frozen=True)
class LinearizationPair:
    """R and T factors of P = T R^{-1} on the grid."""

    R: np.ndarray  # (n+1, 3, 3)
    Tmat: np.ndarray  # (n+1, 3, 3)
    min_condition_R: float  # smallest reciprocal condition number seen


def riccati_rhs(mat: SystemMatrices, P: np.ndarray) -> np.ndarray:
    return mat.A_hat + mat.B_hat @ P - P @ mat.A - P @ mat.B @ P


def _rk4_step(mat: SystemMatrices, P: np.ndarray, s: float) -> np.ndarray:
    k1 = riccati_rhs(mat, P)
    k2 = riccati_rhs(mat, P + s / 2 * k1)
    k3 = riccati_rhs(mat, P + s / 2 * k2)
    k4 = riccati_rhs(mat, P + s * k3)
    return P + s / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def solve_riccati_direct(mat: SystemMatrices, grid: TimeGrid) -> RiccatiGrid:
    """Integrate the quadratic ODE backward from P(T) = G with classical RK4.

    Raises BlowUp when any entry exceeds 1e12 in magnitude (finite-time
    escape of the Riccati flow) or turns non-finite.
    """
    if grid.n_steps < 100:
        raise ValueError("solve_riccati_direct requires n_steps >= 100")
    n = grid.n_steps
    dt = grid.dt
    P = np.empty((n + 1, 3, 3))
    P[n] = mat.G.copy()
    for k in range(n, 0, -1):
        Pk = _rk4_step(mat, P[k], -dt)
        if not np.all(np.isfinite(Pk)) or np.abs(Pk).max() > BLOWUP_CAP:
            raise BlowUp((k - 1) * dt)
        P[k - 1] = Pk
    rg = RiccatiGrid(grid=grid, P=P, method="direct", max_residual=0.0)
    return RiccatiGrid(grid=grid, P=P, method="direct",
                       max_residual=riccati_residual(rg, mat))


def solve_riccati_linearized(mat: SystemMatrices, grid: TimeGrid
                             ) -> tuple[RiccatiGrid, LinearizationPair]:
    """Solve via the linear 6x3 system and recover P = T R^{-1} nodewise.

    Intended regime decay_p = rB = 0 where R is provably invertible;
    callable outside it.  Raises SingularR when the reciprocal condition
    number of R drops below 1e-12.
    """
    n = grid.n_steps
    dt = grid.dt
    M = np.block([[mat.A, mat.B], [mat.A_hat, mat.B_hat]])
    U = np.empty((n + 1, 6, 3))
    U[n] = np.vstack([np.eye(3), mat.G])
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(n, 0, -1):
            y = U[k]
            s = -dt
            k1 = M @ y
            k2 = M @ (y + s / 2 * k1)
            k3 = M @ (y + s / 2 * k2)
            k4 = M @ (y + s * k3)
            U[k - 1] = y + s / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            if not np.all(np.isfinite(U[k - 1])):
                # the linear factors grow like exp(|M| (T-t)) and can
                # overflow long before P = T R^{-1} itself misbehaves
                raise SingularR((k - 1) * dt, 0.0)

    P = np.empty((n + 1, 3, 3))
    P[n] = mat.G.copy()  # exact terminal condition, no solve round-off
    min_rcond = 1.0
    for k in range(n + 1):
        R = U[k][:3]
        Tm = U[k][3:]
        rcond = 1.0 / np.linalg.cond(R)
        if not np.isfinite(rcond) or rcond < RCOND_FLOOR:
            raise SingularR(k * dt, rcond)
        min_rcond = min(min_rcond, rcond)
        if k < n:
            # P^T = solve(R^T, T^T) avoids forming R^{-1}
            P[k] = np.linalg.solve(R.T, Tm.T).T
    rg = RiccatiGrid(grid=grid, P=P, method="linearized", max_residual=0.0)
    rg = RiccatiGrid(grid=grid, P=P, method="linearized",
                     max_residual=riccati_residual(rg, mat))
    pair = LinearizationPair(R=U[:, :3, :].copy(), Tmat=U[:, 3:, :].copy(),
                             min_condition_R=min_rcond)
    return rg, pair


def solve_riccati(mat: SystemMatrices, grid: TimeGrid,
                  params: ModelParams) -> RiccatiGrid:
    """Default method selection: linearized in the proved regime
    (decay_p = rB = 0), direct otherwise."""
    if params.decay_p == 0.0 and params.rB == 0.0:
        try:
            rg, _ = solve_riccati_linearized(mat, grid)
            return rg
        except SingularR:
            # linear-factor overflow for large system norms; the direct
            # integration of the bounded P is still well posed
            pass
    return solve_riccati_direct(mat, grid)


def riccati_residual(rg: RiccatiGrid, mat: SystemMatrices) -> float:
    """Max interior-node residual |P' + PA + PBP - A_hat - B_hat P| by
    centered differences.  Endpoints are excluded (one-sided differences
    would pollute the order)."""
    P = rg.P
    if len(P) < 3:
        raise ValueError("need at least 3 nodes for centered differences")
    dt = rg.grid.dt
    dP = (P[2:] - P[:-2]) / (2.0 * dt)
    Pi = P[1:-1]
    res = (dP + Pi @ mat.A + (Pi @ mat.B) @ Pi
           - mat.A_hat - np.einsum("ij,kjl->kil", mat.B_hat, Pi))
    return float(np.abs(res).max())


@dataclass(frozen=True)
class ConditionReport:
    """Sufficient conditions for global existence of the Riccati solution
    in the decay_p = rB = 0 regime."""

    cdg_matrix: np.ndarray
    cdg_positive_definite: bool
    L_sym_negative_semidefinite: bool


def verify_freiling_conditions(mat: SystemMatrices,
                               tol: float = 1e-10) -> ConditionReport:
    """Check C + DG + G^T D^T > 0 (Sylvester's criterion) and
    L + L^T <= 0 (eigenvalue signs) for the printed constant C, D and the
    block matrix L built from the system matrices."""
    C = np.diag([0.0, 0.0, 1.0])
    D = np.diag([-1.0, -1.0, 0.0])
    cdg = C + D @ mat.G + mat.G.T @ D.T
    # Sylvester: all leading principal minors strictly positive
    minors = [np.linalg.det(cdg[:k, :k]) for k in (1, 2, 3)]
    cdg_pd = all(m > 0 for m in minors)
    Z = np.zeros((3, 3))
    L = np.block([
        [C @ mat.A + D @ mat.A_hat, C @ mat.B + mat.A.T @ D + D @ mat.B_hat],
        [Z, mat.B.T @ D],
    ])
    eigs = np.linalg.eigvalsh(L + L.T)
    return ConditionReport(cdg_matrix=cdg,
                           cdg_positive_definite=bool(cdg_pd),
                           L_sym_negative_semidefinite=bool(eigs.max() <= tol))


def read_riccati_csv(path) -> RiccatiGrid:
    """Load a grid previously written by RiccatiGrid.write_csv.

    The residual is not recomputed here (no matrices at hand); it is set
    to nan and callers recompute it via riccati_residual.
    """
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if rows[0] != ["t"] + list(_ENTRY_NAMES):
        raise ValueError("unexpected riccati CSV header")
    data = np.array([[float(x) for x in row] for row in rows[1:]])
    t = data[:, 0]
    n = len(t) - 1
    grid = TimeGrid(t1=float(t[-1]), n_steps=n)
    if not np.allclose(t, grid.nodes, rtol=0, atol=1e-12 * max(1.0, t[-1])):
        raise ValueError("riccati CSV nodes are not a uniform grid from 0")
    P = data[:, 1:].reshape(n + 1, 3, 3)
    return RiccatiGrid(grid=grid, P=P, method="loaded",
                       max_residual=float("nan"))
