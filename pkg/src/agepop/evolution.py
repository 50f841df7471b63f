# agepop/evolution.py
"""
Evolution operator Π(a, σ) of dφ/da = −A(a)φ on the age grid.

Each grid interval is split into ``substeps`` pieces, and each piece is advanced with
exp(−h·A(midpoint)) (midpoint Magnus, scaling-and-squaring Padé via scipy). The
exponential of a negated Metzler matrix is entrywise nonnegative, so every step
operator is positive.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Optional, Union

import numpy as np
from scipy.linalg import expm

from .constants.defaults import DEFAULT_SUBSTEPS, MAX_WORKERS
from .errors import ModelValidationError, PropagatorError
from .serializers import DecayEstimate, ModelSpec, Propagator
from .services.logging_service import LoggingUtility

logging_utility = LoggingUtility()

_BLOCK_CACHE_LIMIT = 4096
_POSITIVITY_SLACK = 1e-12


def generator_at(m: ModelSpec, a: float) -> np.ndarray:
    """A(a) by linear interpolation between the node values."""
    da = m.grid.da
    pos = min(max(a / da, 0.0), float(m.K))
    k = min(int(np.floor(pos)), m.K - 1)
    theta = pos - k
    return (1.0 - theta) * m.gen.A[k] + theta * m.gen.A[k + 1]


def _interval_step(m: ModelSpec, k: int, substeps: int) -> np.ndarray:
    da = m.grid.da
    h = da / substeps
    a_k = k * da
    S = np.eye(m.n)
    for j in range(substeps):
        S = expm(-h * generator_at(m, a_k + (j + 0.5) * h)) @ S

    interval = (a_k, a_k + da)
    if not np.all(np.isfinite(S)):
        logging_utility.error("Non-finite step exponential on [%.6g, %.6g]", *interval)
        raise PropagatorError(
            f"non-finite matrix exponential on age interval [{interval[0]:.6g}, {interval[1]:.6g}]",
            interval=interval,
        )
    scale = max(float(np.max(np.abs(S))), 1.0)
    if S.min() < -_POSITIVITY_SLACK * scale:
        raise PropagatorError(
            f"step on [{interval[0]:.6g}, {interval[1]:.6g}] lost positivity (min {S.min():.3g})",
            interval=interval,
        )
    return np.clip(S, 0.0, None)


def build_propagator(
    m: ModelSpec,
    substeps: int = DEFAULT_SUBSTEPS,
    max_workers: Optional[int] = None,
) -> Propagator:
    """Step operators S_k and prefix products P_k = S_{k−1}···S_0."""
    if substeps < 1:
        raise ModelValidationError(f"substeps must be at least 1, got {substeps}")
    off = m.gen.A[:, ~np.eye(m.n, dtype=bool)]
    if np.any(off > 0):
        raise ModelValidationError(
            "A(a) has positive off-diagonal entries; Π(a, σ) would not be positive"
        )

    workers = max_workers or MAX_WORKERS
    indices = range(m.K)
    if workers > 1 and m.K > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            steps = list(pool.map(lambda k: _interval_step(m, k, substeps), indices))
    else:
        steps = [_interval_step(m, k, substeps) for k in indices]

    prefix = [np.eye(m.n)]
    for S in steps:
        prefix.append(S @ prefix[-1])

    logging_utility.info(
        "Propagator built: K=%d, n=%d, substeps=%d", m.K, m.n, substeps
    )
    return Propagator(steps=np.stack(steps), prefix=np.stack(prefix), dt=m.grid.da)


def propagate(p: Propagator, j: int, i: int) -> np.ndarray:
    """Π(a_j, a_i) = S_{j−1}···S_i as an ordered step product."""
    if not (0 <= i <= j <= p.K):
        raise ModelValidationError(
            f"propagate needs 0 ≤ i ≤ j ≤ {p.K}, got i={i}, j={j}"
        )
    if i == j:
        return np.eye(p.n)

    key = (j, i)
    with p._lock:
        cached = p._block_cache.get(key)
    if cached is not None:
        return cached.copy()

    result = p.steps[i].copy()
    for k in range(i + 1, j):
        result = p.steps[k] @ result

    with p._lock:
        if len(p._block_cache) >= _BLOCK_CACHE_LIMIT:
            p._block_cache.clear()
        p._block_cache[key] = result
    return result.copy()


def twisted_propagate(
    p: Propagator, lam: Union[float, complex], j: int, i: int
) -> np.ndarray:
    """Π_λ(a_j, a_i) = e^{−λ(a_j − a_i)}·Π(a_j, a_i)."""
    block = propagate(p, j, i)
    return np.exp(-lam * (j - i) * p.dt) * block


def advance_characteristics(p: Propagator, X: np.ndarray, m: int) -> np.ndarray:
    """Move data one step along the characteristics.

    ``X[k]`` holds Π(a_{k+m−1}, a_k)·φ(a_k) for k = 0..K−m+1; the result holds
    Π(a_{k+m}, a_k)·φ(a_k) for k = 0..K−m.
    """
    count = p.K - m + 1
    return np.einsum("kij,kj->ki", p.steps[m - 1 : m - 1 + count], X[:count])


def decay_estimate(p: Propagator) -> DecayEstimate:
    """Fit ‖Π(a, 0)‖ ≤ M̂·e^{−ϖ̂a} on the grid (operator 2-norm)."""
    norms = np.linalg.norm(p.prefix, ord=2, axis=(1, 2))
    ages = np.arange(p.K + 1) * p.dt
    tail = slice(p.K // 2, p.K + 1)
    y = -np.log(np.maximum(norms[tail], np.finfo(float).tiny))
    varpi = float(np.polyfit(ages[tail], y, 1)[0])
    # P_0 = I pins the maximum to at least 1
    M_hat = float(np.max(norms * np.exp(varpi * ages)))
    logging_utility.debug("Decay estimate: M̂=%.6g, ϖ̂=%.6g", M_hat, varpi)
    return DecayEstimate(M_hat=M_hat, varpi_hat=varpi)
