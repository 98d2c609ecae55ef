"""Shared fixtures and independent numerical oracles."""
import numpy as np
import pytest

from brokergame import ModelParams, assemble_matrices


@pytest.fixture(scope="session")
def p5() -> ModelParams:
    """The reference parameter set used throughout the experiments."""
    return ModelParams()


@pytest.fixture(scope="session")
def mat5(p5):
    return assemble_matrices(p5)


def sphere_norm_oracle(M: np.ndarray, seed: int = 0) -> float:
    """Brute-force operator-norm oracle: maximize |Mx| over unit vectors
    on a fine sphere grid, with two rounds of local cap refinement.
    Accuracy well below 1e-6 relative."""
    rng = np.random.default_rng(seed)
    pts = rng.standard_normal((200_000, 3))
    pts /= np.linalg.norm(pts, axis=1, keepdims=True)
    best = pts[np.argmax(np.linalg.norm(pts @ M.T, axis=1))]
    spread = 0.05
    for _ in range(4):
        cap = best + spread * rng.standard_normal((200_000, 3))
        cap /= np.linalg.norm(cap, axis=1, keepdims=True)
        cap = np.vstack([cap, best])
        best = cap[np.argmax(np.linalg.norm(cap @ M.T, axis=1))]
        spread /= 10.0
    return float(np.linalg.norm(M @ best))


@pytest.fixture(scope="session")
def fine_riccati_p0(p5, mat5):
    """Frozen brute-force reference: P at t = 0 for the reference
    parameters from a 10^6-step backward RK4 integration (jit-compiled,
    independent of the library code paths)."""
    from numba import njit

    @njit(cache=True)
    def rk4_backward(A, B, Ah, Bh, G, T, n):
        dt = T / n
        P = G.copy()
        for _ in range(n):
            s = -dt
            k1 = Ah + Bh @ P - P @ A - P @ B @ P
            y = P + s / 2 * k1
            k2 = Ah + Bh @ y - y @ A - y @ B @ y
            y = P + s / 2 * k2
            k3 = Ah + Bh @ y - y @ A - y @ B @ y
            y = P + s * k3
            k4 = Ah + Bh @ y - y @ A - y @ B @ y
            P = P + s / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        return P

    def run(n_steps: int) -> np.ndarray:
        return rk4_backward(np.ascontiguousarray(mat5.A),
                            np.ascontiguousarray(mat5.B),
                            np.ascontiguousarray(mat5.A_hat),
                            np.ascontiguousarray(mat5.B_hat),
                            np.ascontiguousarray(mat5.G),
                            p5.horizon_T, n_steps)

    run(1000)  # trigger compilation outside any timed section
    return run
