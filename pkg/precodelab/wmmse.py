# --------------------------------------------------------------------------------------------
# Copyright (c) Microsoft Corporation. All rights reserved.
# Licensed under the MIT License. See LICENSE.txt in the project root for license information.
# --------------------------------------------------------------------------------------------
"""
This module implements the weighted minimum mean square error (WMMSE) sum-rate solver.
Each iteration updates the receiver gains `u` and user weights `v` from the current precoder
and then solves the precoder subproblem, where the Lagrange multiplier `mu` of the total power
constraint is found by bisection on the monotone power-versus-mu curve.
"""
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, eigh

from precodelab.check_inputs import (
    ConfigurationError,
    NumericFailureError,
    check_channel,
    check_positive,
    check_precoder,
    warn_precoding,
)
from precodelab.precoding import (
    _gains,
    _signal_and_interference,
    mrt_precoder,
    project_power,
    sum_rate,
)

__all__ = [
    "WmmseState",
    "wmmse_update_uv",
    "wmmse_w_step",
    "wmmse_solve",
    "wmmse_mean_iterations",
]


@dataclass
class WmmseState:
    """
    Solver state: receiver gains `u`, user weights `v` and multiplier `mu` that produced the
    returned precoder, the iteration count and the sum rate recorded at every iteration
    (entry 0 is the rate of the initial precoder).
    """
    u: np.ndarray
    v: np.ndarray
    mu: float
    iterations: int = 0
    rate_trace: list = field(default_factory=list)
    converged: bool = False


def wmmse_update_uv(H, W, sigma2: float):
    """
    Name
    ----
    wmmse_update_uv

    Description
    -----------
    Receiver gain and weight update for a fixed precoder:
    v_k = (sum_j |h_k^H w_j|^2 + sigma2) / (sum_{j != k} |h_k^H w_j|^2 + sigma2)
    u_k = h_k^H w_k / (sum_j |h_k^H w_j|^2 + sigma2)

    Parameters
    ----------
    H : numpy.ndarray
        Complex channel matrix (n_tx, n_users).
    W : numpy.ndarray
        Current complex precoder (n_tx, n_users).
    sigma2 : float
        Noise variance.

    Returns
    -------
    tuple
        (u, v): complex receiver gains and real weights (v >= 1), both of length n_users.
    """
    check_positive(sigma2, "sigma2")
    H = check_channel(H)
    W = check_precoder(H, W)

    signal, interference = _signal_and_interference(H, W)
    denominator = interference + sigma2
    received = signal + denominator

    u = np.diagonal(_gains(H, W)) / received
    v = received / denominator
    return u, v


def _power_curve(eigvals, projected):
    """Returns power(mu) = sum_i |z_i|^2 / (lambda_i + mu)^2 on the eigenbasis of A."""
    weight = np.sum(np.abs(projected) ** 2, axis=1)
    scale = max(float(eigvals.max(initial=0.0)), 1.0)
    null = eigvals <= 1e-12 * scale

    def power(mu):
        if mu == 0.0:
            # pseudo-inverse limit: components in the null space of A are dropped
            return float(np.sum(weight[~null] / eigvals[~null] ** 2))
        return float(np.sum(weight / (eigvals + mu) ** 2))

    return power, null


def wmmse_w_step(H, u, v, sigma2: float, p_max: float,
                 power_tol: float = 1e-6,
                 max_doublings: int = 200,
                 max_bisections: int = 200):
    """
    Name
    ----
    wmmse_w_step

    Description
    -----------
    Precoder update w_k = conj(u_k) v_k A^{-1} h_k with
    A = sum_j v_j |u_j|^2 h_j h_j^H + mu I, where mu is the smallest non-negative value for
    which the total power does not exceed `p_max`. When mu = 0 is feasible the minimum-norm
    solution is used. Otherwise mu is bracketed by doubling from 1 and refined by bisection
    until the power lies within `power_tol` (relative) below `p_max`.

    Parameters
    ----------
    H : numpy.ndarray
        Complex channel matrix (n_tx, n_users).
    u : numpy.ndarray
        Complex receiver gains (n_users,).
    v : numpy.ndarray
        Non-negative user weights (n_users,).
    sigma2 : float
        Noise variance (kept for signature symmetry with the u/v update).
    p_max : float
        Total power budget.
    power_tol : float
        Relative power tolerance of the bisection. Defaults to 1e-6.
    max_doublings : int
        Cap on the number of bracket doublings. Defaults to 200.
    max_bisections : int
        Cap on the number of bisection steps. Defaults to 200.

    Returns
    -------
    tuple
        (W, mu): the new precoder and the Lagrange multiplier.

    Raises
    ------
    NumericFailureError
        When no feasible upper bracket is found within `max_doublings`.
    """
    check_positive(sigma2, "sigma2")
    check_positive(p_max, "p_max")
    H = check_channel(H)
    u = np.asarray(u, dtype=np.complex128)
    v = np.asarray(v, dtype=float)
    if np.any(v < 0):
        raise NumericFailureError("Error: user weights must be non-negative")

    active = np.linalg.norm(H, axis=0) > 0.0
    weights = v * np.abs(u) ** 2
    A = (H * weights) @ np.conj(H.T)
    B = H * (np.conj(u) * v)
    B[:, ~active] = 0.0

    eigvals, Q = eigh(A)
    eigvals = np.clip(eigvals, 0.0, None)
    projected = np.conj(Q.T) @ B
    power, null = _power_curve(eigvals, projected)

    if power(0.0) <= p_max:
        inverse = np.zeros_like(eigvals)
        inverse[~null] = 1.0 / eigvals[~null]
        W = Q @ (inverse[:, None] * projected)
        return project_power(W, p_max), 0.0

    hi = 1.0
    doublings = 0
    while power(hi) > p_max:
        hi *= 2.0
        doublings += 1
        if doublings > max_doublings:
            raise NumericFailureError("Error: could not bracket the Lagrange multiplier within the doubling cap")
    lo = hi / 2.0 if doublings > 0 else 0.0

    for _ in range(max_bisections):
        if (p_max - power(hi)) / p_max <= power_tol:
            break
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if power(mid) > p_max:
            lo = mid
        else:
            hi = mid

    mu = hi
    factor = cho_factor(A + mu * np.eye(A.shape[0]), lower=True)
    W = cho_solve(factor, B)
    W[:, ~active] = 0.0
    return project_power(W, p_max), float(mu)


def wmmse_solve(H, sigma2: float, p_max: float,
                tol: float = 1e-3,
                max_iter: int = 100,
                power_tol: float = 1e-10):
    """
    Name
    ----
    wmmse_solve

    Description
    -----------
    Runs the WMMSE iteration from the matched-filter precoder scaled to `p_max` until the
    relative change of the sum rate between two iterations drops below `tol` or `max_iter`
    iterations have run. Users with an all-zero channel receive a zero precoder column.

    Parameters
    ----------
    H : numpy.ndarray
        Complex channel matrix (n_tx, n_users).
    sigma2 : float
        Noise variance.
    p_max : float
        Total power budget.
    tol : float
        Relative sum-rate change that stops the iteration. Defaults to 1e-3.
    max_iter : int
        Maximum number of iterations. Defaults to 100.
    power_tol : float
        Relative power tolerance passed to the bisection of every precoder step.

    Returns
    -------
    tuple
        (W, state): the final precoder and a `WmmseState`.

    Example
    -------
    >>> H = np.array([[1.0, 0.3j], [0.2, 1.0], [0.5j, 0.4]])
    >>> W, state = wmmse_solve(H, sigma2 = 1e-2, p_max = 1.0)
    >>> bool(total_power(W) <= 1.0 + 1e-9)
    True
    """
    check_positive(tol, "tol")
    if int(max_iter) < 1:
        raise ConfigurationError("Error: max_iter must be at least 1")
    H = check_channel(H)

    W = mrt_precoder(H, p_max)
    rate = sum_rate(H, W, sigma2)
    state = WmmseState(u=np.zeros(H.shape[1], dtype=np.complex128),
                       v=np.ones(H.shape[1]),
                       mu=0.0,
                       rate_trace=[rate])

    for iteration in range(1, int(max_iter) + 1):
        u, v = wmmse_update_uv(H, W, sigma2)
        W, mu = wmmse_w_step(H, u, v, sigma2, p_max, power_tol=power_tol)
        new_rate = sum_rate(H, W, sigma2)

        state.u, state.v, state.mu = u, v, mu
        state.iterations = iteration
        state.rate_trace.append(new_rate)

        change = abs(new_rate - rate) / max(abs(rate), np.finfo(float).tiny)
        rate = new_rate
        if change < tol:
            state.converged = True
            break

    if not state.converged:
        warn_precoding(f"WMMSE stopped after {state.iterations} iterations without reaching tol = {tol}")
    return W, state


def wmmse_mean_iterations(H, sigma2: float, p_max: float, tol: float = 1e-3, max_iter: int = 100):
    """Average number of WMMSE iterations over a stack of channels (batch, n_tx, n_users)."""
    H = check_channel(H)
    if H.ndim == 2:
        H = H[None]
    counts = [wmmse_solve(h, sigma2, p_max, tol, max_iter)[1].iterations for h in H]
    return float(np.mean(counts))
