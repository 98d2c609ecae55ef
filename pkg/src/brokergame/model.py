"""Model parameters, FBSDE system matrices, and the existence bound.

The game couples a broker (speed nu, quadratic cost a, transient impact
with push h and resilience p) with an informed client (speed eta, cost b)
and an exogenous uninformed flow xi.  The equilibrium is characterized by
a linear FBSDE for the forward state X = (qB, qI, Y) and backward process
Y = (nu, eta, Z) with terminal condition Y_T = G X_T.  This module holds
the parameter set, assembles the five constant 3x3 matrices and the
affine drivers, and evaluates the small-horizon contraction bound that
guarantees a unique FBSDE solution.

The time-dependent loading matrix that multiplies the driving martingales
in the backward equation contains e^{p t} factors.  It only enters the
martingale representation, never the feedback strategies, so it is
documented here but intentionally not constructed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

import numpy as np

__all__ = [
    "ModelParams",
    "ValidationReport",
    "SystemMatrices",
    "BoundReport",
    "validate_params",
    "assemble_matrices",
    "spectral_norm",
    "bound_from_matrices",
    "existence_bound",
]


@dataclass(frozen=True)
class ModelParams:
    """All market, impact, penalty, signal, and flow parameters.

    Defaults reproduce the reference experiment: one-day horizon,
    permanent impact (decay_p = 0), OU drift signal alpha and OU
    uninformed flow xi started at zero.
    """

    a: float = 1.2e-3          # broker's instantaneous cost per speed^2
    b: float = 1e-3            # informed trader's cost per speed^2
    c: float = 1e-3            # uninformed flow's cost per speed^2
    impact_h: float = 1e-3     # instantaneous price impact (price per unit speed)
    decay_p: float = 0.0       # impact resilience rate (1/time)
    phi: float = 1.0           # broker terminal inventory penalty
    psi: float = 1.0           # informed terminal inventory penalty
    rB: float = 0.0            # broker running inventory penalty
    rI: float = 0.0            # informed running inventory penalty
    horizon_T: float = 1.0
    qB0: float = 0.0
    qI0: float = 0.0
    Y0: float = 0.0
    S0: float = 100.0
    sigma_S: float = 1.0
    kappa_alpha: float = 5.0
    sigma_alpha: float = 1.0
    alpha0: float = 0.0
    kappa_xi: float = 15.0
    sigma_xi: float = 100.0
    xi0: float = 0.0

    @property
    def varphi(self) -> float:
        """Effective broker terminal penalty phi - h/2."""
        return self.phi - self.impact_h / 2.0

    def replace(self, **kw) -> "ModelParams":
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d.update(kw)
        return ModelParams(**d)


@dataclass(frozen=True)
class ValidationReport:
    """Per-assumption pass/fail.  Positivity failures are hard errors for
    downstream solvers; concavity failures only void the optimality
    guarantees, the closed-form pipeline still runs."""

    checks: dict = field(default_factory=dict)  # name -> bool
    messages: dict = field(default_factory=dict)  # name -> str (failures only)

    @property
    def positivity_ok(self) -> bool:
        return all(ok for name, ok in self.checks.items()
                   if not name.startswith("concavity"))

    @property
    def concavity_ok(self) -> bool:
        return all(ok for name, ok in self.checks.items()
                   if name.startswith("concavity"))

    @property
    def all_ok(self) -> bool:
        return all(self.checks.values())


def validate_params(params: ModelParams) -> ValidationReport:
    """Check the standing assumptions of the model.

    Returns a report; never raises.  Callers must refuse to proceed when
    positivity fails.  The two concavity conditions (varphi >= 0 and
    a > p*h*T) are reported as "concavity not guaranteed" when violated.
    """
    checks: dict = {}
    messages: dict = {}

    def add(name, ok, msg):
        checks[name] = bool(ok)
        if not ok:
            messages[name] = msg

    vals = {f.name: getattr(params, f.name) for f in fields(params)}
    finite = all(math.isfinite(v) for v in vals.values())
    add("finite", finite, "non-finite parameter value")
    add("a_positive", params.a > 0, "a must be > 0")
    add("b_positive", params.b > 0, "b must be > 0")
    add("c_positive", params.c > 0, "c must be > 0")
    add("horizon_positive", params.horizon_T > 0, "horizon_T must be > 0")
    add("penalties_nonnegative",
        params.phi >= 0 and params.psi >= 0 and params.rB >= 0 and params.rI >= 0,
        "phi, psi, rB, rI must be >= 0")
    add("impact_nonnegative", params.impact_h >= 0 and params.decay_p >= 0,
        "impact_h and decay_p must be >= 0")
    add("vols_nonnegative",
        params.sigma_S >= 0 and params.sigma_alpha >= 0 and params.sigma_xi >= 0
        and params.kappa_alpha >= 0 and params.kappa_xi >= 0,
        "volatilities and mean-reversion rates must be >= 0")
    add("concavity_varphi", params.varphi >= 0,
        "concavity not guaranteed: phi - h/2 = %g < 0" % params.varphi)
    add("concavity_a_phT",
        params.a > params.decay_p * params.impact_h * params.horizon_T,
        "concavity not guaranteed: a = %g <= p*h*T = %g"
        % (params.a, params.decay_p * params.impact_h * params.horizon_T))
    return ValidationReport(checks=checks, messages=messages)


@dataclass(frozen=True)
class SystemMatrices:
    """The five constant 3x3 matrices of the linear FBSDE and the affine
    driver maps.  State order is (qB, qI, Y); control order (nu, eta, Z)."""

    A: np.ndarray
    B: np.ndarray
    A_hat: np.ndarray
    B_hat: np.ndarray
    G: np.ndarray
    _a: float
    _b: float
    _h: float

    def driver_b(self, xi: float) -> np.ndarray:
        """Forward-equation affine driver b_t = (-xi, 0, 0)."""
        return np.array([-xi, 0.0, 0.0])

    def driver_b_hat(self, alpha: float, xi: float) -> np.ndarray:
        """Backward-equation affine driver (-(alpha+h*xi)/(2a), -alpha/(2b), 0)."""
        return np.array([-(alpha + self._h * xi) / (2.0 * self._a),
                         -alpha / (2.0 * self._b), 0.0])


def assemble_matrices(params: ModelParams) -> SystemMatrices:
    """Build A, B, A_hat, B_hat, G for the given parameters.

    Deterministic and pure: identical inputs give bit-identical outputs.
    Raises ValueError on non-finite or non-positive cost parameters.
    """
    rep = validate_params(params)
    if not rep.positivity_ok:
        bad = [rep.messages[k] for k in rep.messages if not k.startswith("concavity")]
        raise ValueError("invalid parameters: " + "; ".join(bad))

    a, b = params.a, params.b
    h, p = params.impact_h, params.decay_p
    rB, rI = params.rB, params.rI

    A = np.array([[0.0, 0.0, 0.0],
                  [0.0, 0.0, 0.0],
                  [0.0, 0.0, -p]])
    B = np.array([[1.0, -1.0, 0.0],
                  [0.0, 1.0, 0.0],
                  [h, 0.0, 0.0]])
    A_hat = np.array([[(2.0 * rB + p * h) / (2.0 * a), 0.0, p / (2.0 * a)],
                      [0.0, rI / b, p / (2.0 * b)],
                      [-1.0, 0.0, 0.0]])
    B_hat = np.array([[0.0, -h / (2.0 * a), -p * p * h / (2.0 * a)],
                      [-h / (2.0 * b), 0.0, 0.0],
                      [0.0, 0.0, p]])
    G = np.diag([-params.varphi / a, -params.psi / b, 0.0])
    for M in (A, B, A_hat, B_hat, G):
        M.setflags(write=False)
    return SystemMatrices(A=A, B=B, A_hat=A_hat, B_hat=B_hat, G=G,
                          _a=a, _b=b, _h=h)


def spectral_norm(M: np.ndarray) -> float:
    """Operator 2-norm (largest singular value) of a 3x3 real matrix.

    Diagonal matrices are handled exactly (the norm is the largest entry
    magnitude, no round-off); everything else goes through SVD.
    """
    M = np.asarray(M, dtype=float)
    if M.shape != (3, 3):
        raise ValueError("spectral_norm expects a 3x3 matrix")
    if not np.all(np.isfinite(M)):
        raise ValueError("spectral_norm expects finite entries")
    if np.array_equal(M, np.diag(np.diag(M))):
        return float(np.abs(np.diag(M)).max())
    return float(np.linalg.svd(M, compute_uv=False)[0])


@dataclass(frozen=True)
class BoundReport:
    """Norms of the system matrices and the small-horizon contraction bound."""

    norm_A: float
    norm_B: float
    norm_A_hat: float
    norm_B_hat: float
    norm_G: float
    lhs_max: float
    satisfied: bool
    t_star: float | None  # largest horizon satisfying the bound when |G| = 0

    def to_dict(self) -> dict:
        return {
            "norm_A": self.norm_A, "norm_B": self.norm_B,
            "norm_A_hat": self.norm_A_hat, "norm_B_hat": self.norm_B_hat,
            "norm_G": self.norm_G, "lhs_max": self.lhs_max,
            "satisfied": self.satisfied, "t_star": self.t_star,
        }


def bound_from_matrices(A, B, A_hat, B_hat, G, T: float) -> BoundReport:
    """Contraction bound evaluated directly on the five matrices.

    lhs_max = max{12|G|^2 + T^2(2|A|^2 + 30|A_hat|^2),
                  T^2(2|B|^2 + 30|B_hat|^2)} must be < 1.
    When |G| = 0 the bound reduces to a pure horizon restriction and the
    report carries t_star = 1/sqrt(max{2|A|^2+30|A_hat|^2,
    2|B|^2+30|B_hat|^2}), the largest horizon satisfying it.
    """
    nA = spectral_norm(A)
    nB = spectral_norm(B)
    nAh = spectral_norm(A_hat)
    nBh = spectral_norm(B_hat)
    nG = spectral_norm(G)
    cX = 2.0 * nA ** 2 + 30.0 * nAh ** 2
    cY = 2.0 * nB ** 2 + 30.0 * nBh ** 2
    lhs_max = max(12.0 * nG ** 2 + T ** 2 * cX, T ** 2 * cY)
    t_star = None
    if nG == 0.0:
        denom = max(cX, cY)
        t_star = math.inf if denom == 0.0 else 1.0 / math.sqrt(denom)
    return BoundReport(norm_A=nA, norm_B=nB, norm_A_hat=nAh, norm_B_hat=nBh,
                       norm_G=nG, lhs_max=lhs_max, satisfied=lhs_max < 1.0,
                       t_star=t_star)


def existence_bound(params: ModelParams) -> BoundReport:
    """Evaluate the sufficient condition for a unique FBSDE solution."""
    mat = assemble_matrices(params)
    return bound_from_matrices(mat.A, mat.B, mat.A_hat, mat.B_hat, mat.G,
                               params.horizon_T)
