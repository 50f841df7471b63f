# agepop/oracle.py
"""
Reference discretization of the transport–renewal system by the method of lines.

First-order upwind in age, the newborn value u_0 eliminated through the birth
quadrature. Nothing here touches the propagator, the renewal equation or the
characteristics formula, so it serves as an independent check of them.
"""

from __future__ import annotations

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import expm_multiply

from .constants.defaults import CONDITION_LIMIT, ORACLE_DENSE_CAP
from .errors import ModelValidationError, OracleSizeError
from .model import system_condition
from .semigroup import check_density, make_density
from .serializers import ModelSpec, OracleMatrix, PopulationDensity
from .services.logging_service import LoggingUtility

logging_utility = LoggingUtility()


def assemble_oracle(m: ModelSpec) -> OracleMatrix:
    """Sparse generator G of du_k/dt = −(u_k − u_{k−1})/Δa − A(a_k)u_k, k ≥ 1."""
    n, K, da = m.n, m.K, m.grid.da
    w = m.grid.weights
    b = m.birth.b
    eye = np.eye(n)

    newborn = eye - w[0] * b[0]
    condition = system_condition(newborn)
    if not np.isfinite(condition) or condition > CONDITION_LIMIT:
        raise ModelValidationError(
            f"newborn elimination is singular (cond={condition:.3g}); refine the age grid"
        )
    weighted = (w[1:, None, None] * b[1:]).transpose(1, 0, 2).reshape(n, K * n)
    slave = np.linalg.solve(newborn, weighted)

    diagonal = sparse.block_diag([-m.gen.A[k] - eye / da for k in range(1, K + 1)])
    upwind = sparse.kron(sparse.eye(K, k=-1), eye / da)
    inflow = sparse.vstack(
        [sparse.csr_matrix(slave / da), sparse.csr_matrix((n * (K - 1), n * K))]
    )
    G = (diagonal + upwind + inflow).tocsr()

    logging_utility.info("Oracle assembled: N=%d, nnz=%d", G.shape[0], G.nnz)
    return OracleMatrix(G=G, slave=slave, grid=m.grid, n=n)


def _lift(oracle: OracleMatrix, interior: np.ndarray) -> np.ndarray:
    """Full node values from the interior unknowns."""
    rows = interior.reshape(oracle.grid.K, oracle.n)
    return np.vstack([oracle.slave @ interior, rows])


def oracle_evolve(
    oracle: OracleMatrix, phi: PopulationDensity, t: float
) -> PopulationDensity:
    """e^{tG} applied to φ(a_1), …, φ(a_K)."""
    if t < 0:
        raise ModelValidationError(f"oracle time must be nonnegative, got {t}")
    if phi.grid != oracle.grid or phi.n != oracle.n:
        raise ModelValidationError("density does not live on the oracle's grid")
    if t == 0:
        return phi
    x0 = np.asarray(phi.values[1:]).reshape(-1)
    x = expm_multiply(oracle.G * t, x0)
    return make_density(oracle.grid, _lift(oracle, x))


def oracle_from_model(m: ModelSpec, phi: PopulationDensity, t: float) -> PopulationDensity:
    check_density(m, phi)
    return oracle_evolve(assemble_oracle(m), phi, t)


def rightmost_eigenvalue(oracle: OracleMatrix) -> float:
    """Largest real part in the spectrum of G (dense solve)."""
    if oracle.size > ORACLE_DENSE_CAP:
        raise OracleSizeError(
            f"dense eigensolve needs N ≤ {ORACLE_DENSE_CAP}, got N={oracle.size}"
        )
    eigenvalues = np.linalg.eigvals(oracle.G.toarray())
    return float(np.max(eigenvalues.real))
