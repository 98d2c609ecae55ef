"""Affine offset of the equilibrium feedback strategy.

On top of the linear gain P_t, the equilibrium controls carry an affine
offset ell_t that is linear in the current signal and uninformed-flow
values:

    ell_t = (g1 alpha + g2 xi,  h1 alpha + h2 xi,  f1 alpha + f2 xi).

The six coefficient functions solve a linear terminal-value ODE system
with the P entries as time-varying coefficients.  In matrix form, with
L = [[g1, g2], [h1, h2], [f1, f2]], kappa = diag(kappa_alpha, kappa_xi)
and Lambda_t = B_hat - P_t B:

    L' = Ca(t) + Lambda_t L + L kappa,   L(T) = 0,

where the columns of Ca(t) are the affine coefficients of
a_t = b_hat_t - P_t b_t:
    coef_alpha = (-1/(2a), -1/(2b), 0),
    coef_xi    = (-h/(2a), 0, 0) + P_t e1.

An independent cross-check evaluates ell_t directly as the conditional
expectation  ell_t = -int_t^T zeta_t^{-1} zeta_u a_u du  with the OU
conditional means, where zeta solves d zeta = -zeta Lambda dt, zeta_0 = I
(3x3).
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .model import ModelParams, SystemMatrices, assemble_matrices
from .riccati import RiccatiGrid, TimeGrid, _rk4_step

__all__ = [
    "OffsetGrid",
    "FundamentalSolution",
    "GridMismatch",
    "NotOnGrid",
    "solve_offset_odes",
    "build_fundamental_solution",
    "ell_quadrature",
    "read_offset_csv",
]


class GridMismatch(ValueError):
    pass


class NotOnGrid(ValueError):
    pass


_COEF_NAMES = ("g1", "g2", "h1", "h2", "f1", "f2")


@dataclass(frozen=True)
class OffsetGrid:
    """The six offset coefficients per node; L has shape (n+1, 3, 2) with
    rows (g1, g2), (h1, h2), (f1, f2)."""

    grid: TimeGrid
    L: np.ndarray

    def __getattr__(self, name):
        if name in _COEF_NAMES:
            i = _COEF_NAMES.index(name)
            return self.L[:, i // 2, i % 2]
        raise AttributeError(name)

    def ell(self, k: int, alpha: float, xi: float) -> np.ndarray:
        """Offset vector at node k given current signal and flow values."""
        return self.L[k] @ np.array([alpha, xi])

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(("t",) + _COEF_NAMES)
            for t, Lk in zip(self.grid.nodes, self.L):
                w.writerow([repr(float(t))] + [repr(float(x))
                                               for x in Lk.ravel()])


@dataclass(frozen=True)
class FundamentalSolution:
    """zeta_t with d zeta = -zeta Lambda dt, zeta_0 = I, plus the cached
    Lambda_t and affine coefficients of a_t = b_hat_t - P_t b_t."""

    grid: TimeGrid
    zeta: np.ndarray      # (n+1, 3, 3)
    Lambda: np.ndarray    # (n+1, 3, 3)
    coef_alpha: np.ndarray  # (n+1, 3)
    coef_xi: np.ndarray     # (n+1, 3)


def _source_columns(P: np.ndarray, params: ModelParams) -> np.ndarray:
    """Affine coefficients Ca of a_t = b_hat_t - P_t b_t, for stacked or
    single P.  Column 0 multiplies alpha, column 1 multiplies xi."""
    single = P.ndim == 2
    Pk = P[None] if single else P
    out = np.empty(Pk.shape[:-2] + (3, 2))
    out[..., 0, 0] = -1.0 / (2.0 * params.a)
    out[..., 1, 0] = -1.0 / (2.0 * params.b)
    out[..., 2, 0] = 0.0
    out[..., :, 1] = Pk[..., :, 0]
    out[..., 0, 1] += -params.impact_h / (2.0 * params.a)
    return out[0] if single else out


def _check_same_grid(P: RiccatiGrid, grid: TimeGrid | None) -> None:
    if grid is not None and (grid.n_steps != P.grid.n_steps
                             or grid.t1 != P.grid.t1):
        raise GridMismatch("Riccati grid does not match the requested grid")


def solve_offset_odes(P: RiccatiGrid, params: ModelParams,
                      grid: TimeGrid | None = None,
                      mat: SystemMatrices | None = None) -> OffsetGrid:
    """Integrate the coefficient ODEs backward from L(T) = 0 with RK4.

    Midpoint values of P needed by RK4 are produced by a half step of the
    Riccati flow from the right node, keeping the overall scheme 4th
    order.  The result depends on kappa_alpha/kappa_xi but not on the
    noise volatilities.
    """
    _check_same_grid(P, grid)
    if mat is None:
        mat = assemble_matrices(params)
    n = P.grid.n_steps
    dt = P.grid.dt
    kap = np.diag([params.kappa_alpha, params.kappa_xi])
    B, Bh = mat.B, mat.B_hat

    def rhs(Lm, Pm):
        return _source_columns(Pm, params) + (Bh - Pm @ B) @ Lm + Lm @ kap

    L = np.empty((n + 1, 3, 2))
    L[n] = 0.0
    for k in range(n, 0, -1):
        s = -dt
        Pk = P.P[k]
        Pmid = _rk4_step(mat, Pk, s / 2)
        y = L[k]
        k1 = rhs(y, Pk)
        k2 = rhs(y + s / 2 * k1, Pmid)
        k3 = rhs(y + s / 2 * k2, Pmid)
        k4 = rhs(y + s * k3, P.P[k - 1])
        L[k - 1] = y + s / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return OffsetGrid(grid=P.grid, L=L)


def build_fundamental_solution(P: RiccatiGrid, mat: SystemMatrices,
                               params: ModelParams) -> FundamentalSolution:
    """Forward-integrate d zeta = -zeta Lambda_t dt from zeta_0 = I and
    cache Lambda_t and the affine coefficients of a_t."""
    n = P.grid.n_steps
    dt = P.grid.dt
    B, Bh = mat.B, mat.B_hat
    Lam = Bh - P.P @ B
    Ca = _source_columns(P.P, params)

    zeta = np.empty((n + 1, 3, 3))
    zeta[0] = np.eye(3)
    for k in range(n):
        s = dt
        Pmid = _rk4_step(mat, P.P[k], s / 2)
        Lmid = Bh - Pmid @ B
        y = zeta[k]
        k1 = -y @ Lam[k]
        k2 = -(y + s / 2 * k1) @ Lmid
        k3 = -(y + s / 2 * k2) @ Lmid
        k4 = -(y + s * k3) @ Lam[k + 1]
        zeta[k + 1] = y + s / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return FundamentalSolution(grid=P.grid, zeta=zeta, Lambda=Lam,
                               coef_alpha=Ca[:, :, 0], coef_xi=Ca[:, :, 1])


def _composite_simpson(vals: np.ndarray, dt: float) -> np.ndarray:
    """Composite Simpson over the leading axis; odd interval counts use
    the 3/8 rule on the last three intervals, a single interval falls
    back to the trapezoid."""
    m = len(vals) - 1
    if m == 0:
        return np.zeros(vals.shape[1:])
    if m == 1:
        return dt / 2 * (vals[0] + vals[1])
    if m % 2 == 0:
        w = np.ones(m + 1)
        w[1:-1:2] = 4.0
        w[2:-1:2] = 2.0
        return dt / 3 * np.tensordot(w, vals, axes=1)
    head = _composite_simpson(vals[:m - 2], dt)
    tail = 3 * dt / 8 * (vals[m - 3] + 3 * vals[m - 2]
                         + 3 * vals[m - 1] + vals[m])
    return head + tail


def ell_quadrature(fs: FundamentalSolution, t: float, alpha_t: float,
                   xi_t: float, params: ModelParams) -> np.ndarray:
    """Evaluate ell_t by quadrature of the conditional-expectation formula.

    ell_t = -int_t^T zeta_t^{-1} zeta_u (coef_alpha(u) e^{-ka (u-t)} alpha_t
            + coef_xi(u) e^{-kx (u-t)} xi_t) du,
    composite Simpson on the grid nodes.  t must be a grid node.
    """
    nodes = fs.grid.nodes
    dt = fs.grid.dt
    k = int(round(t / dt))
    if k < 0 or k > fs.grid.n_steps or abs(nodes[k] - t) > 1e-9 * max(1.0, fs.grid.t1):
        raise NotOnGrid("t = %g is not a grid node" % t)
    u = nodes[k:]
    decay_a = np.exp(-params.kappa_alpha * (u - nodes[k]))
    decay_x = np.exp(-params.kappa_xi * (u - nodes[k]))
    a_cond = (fs.coef_alpha[k:] * (decay_a * alpha_t)[:, None]
              + fs.coef_xi[k:] * (decay_x * xi_t)[:, None])
    integrand = np.einsum("uij,uj->ui", fs.zeta[k:], a_cond)
    I = _composite_simpson(integrand, dt)
    return -np.linalg.solve(fs.zeta[k], I)


def read_offset_csv(path) -> OffsetGrid:
    """Load a grid previously written by OffsetGrid.write_csv."""
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if rows[0] != ["t"] + list(_COEF_NAMES):
        raise ValueError("unexpected offset CSV header")
    data = np.array([[float(x) for x in row] for row in rows[1:]])
    t = data[:, 0]
    n = len(t) - 1
    grid = TimeGrid(t1=float(t[-1]), n_steps=n)
    if not np.allclose(t, grid.nodes, rtol=0, atol=1e-12 * max(1.0, t[-1])):
        raise ValueError("offset CSV nodes are not a uniform grid from 0")
    return OffsetGrid(grid=grid, L=data[:, 1:].reshape(n + 1, 3, 2))
