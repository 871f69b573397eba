# --------------------------------------------------------------------------------------------
# Copyright (c) Microsoft Corporation. All rights reserved.
# Licensed under the MIT License. See LICENSE.txt in the project root for license information.
# --------------------------------------------------------------------------------------------
"""
This module evaluates linear downlink precoders for a single-cell multi-user MIMO system.
It computes per-user SINR and the achievable sum rate, enforces the total transmit power
constraint, and provides the matched-filter (MRT) and zero-forcing (ZF) precoders.

Channels are complex arrays of shape (n_tx, n_users) whose k-th column is user k's channel;
every function also accepts a stack of channels with a leading batch axis.
"""
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from precodelab.check_inputs import (
    ConfigurationError,
    DegenerateInputError,
    SingularChannelError,
    check_channel,
    check_positive,
    check_precoder,
)

__all__ = [
    "SystemConfig",
    "total_power",
    "sinr_per_user",
    "sum_rate",
    "batch_sum_rate",
    "project_power",
    "mrt_precoder",
    "zf_precoder",
]


@dataclass(frozen=True)
class SystemConfig:
    """
    Antenna count `n_tx`, user count `n_users` and total transmit power `p_max` (linear).
    """
    n_tx: int = 64
    n_users: int = 4
    p_max: float = 1.0

    def __post_init__(self):
        if int(self.n_tx) < 1 or int(self.n_users) < 1:
            raise ConfigurationError("Error: n_tx and n_users must be positive integers")
        if self.n_users > self.n_tx:
            raise ConfigurationError(f"Error: n_users ({self.n_users}) cannot exceed n_tx ({self.n_tx})")
        check_positive(self.p_max, "p_max")


def _gains(H, W):
    # G[..., k, j] = h_k^H w_j
    return np.conj(np.swapaxes(H, -1, -2)) @ W


def _signal_and_interference(H, W):
    """Returns |h_k^H w_k|^2 and sum_{j != k} |h_k^H w_j|^2 for every user."""
    power = np.abs(_gains(H, W)) ** 2
    off_diagonal = 1.0 - np.eye(power.shape[-1])
    signal = np.diagonal(power, axis1=-2, axis2=-1)
    interference = np.sum(power * off_diagonal, axis=-1)
    return signal, interference


def total_power(W):
    """Total transmit power sum_k ||w_k||^2 (per sample for a stack)."""
    W = np.asarray(W)
    return np.sum(np.abs(W) ** 2, axis=(-2, -1))


def sinr_per_user(H, W, sigma2: float):
    """
    Name
    ----
    sinr_per_user

    Description
    -----------
    Signal-to-interference-plus-noise ratio of every user under precoder `W`:
    |h_k^H w_k|^2 / (sum_{j != k} |h_k^H w_j|^2 + sigma2).

    Parameters
    ----------
    H : numpy.ndarray
        Complex channel matrix (n_tx, n_users), or a stack (batch, n_tx, n_users).
    W : numpy.ndarray
        Complex precoding matrix with the same shape as `H`.
    sigma2 : float
        Noise variance, strictly positive.

    Returns
    -------
    numpy.ndarray
        Real array of shape (n_users,) (or (batch, n_users)) with non-negative entries.

    Example
    -------
    >>> sinr_per_user(np.ones((1, 1)), np.ones((1, 1)), sigma2 = 1.0)
    array([1.])
    """
    check_positive(sigma2, "sigma2")
    H = check_channel(H)
    W = check_precoder(H, W)

    signal, interference = _signal_and_interference(H, W)
    return signal / (interference + sigma2)


def sum_rate(H, W, sigma2: float):
    """
    Name
    ----
    sum_rate

    Description
    -----------
    Achievable sum rate sum_k log2(1 + SINR_k) in bits/s/Hz.

    Parameters
    ----------
    H : numpy.ndarray
        Complex channel matrix (n_tx, n_users).
    W : numpy.ndarray
        Complex precoding matrix (n_tx, n_users).
    sigma2 : float
        Noise variance.

    Returns
    -------
    float
        The sum rate (non-negative). For stacked inputs use `batch_sum_rate`.
    """
    rates = np.log2(1.0 + sinr_per_user(H, W, sigma2))
    return float(np.sum(rates)) if np.ndim(rates) == 1 else np.sum(rates, axis=-1)


def batch_sum_rate(H, W, sigma2: float):
    """Per-sample sum rates of a stack of channels and precoders, shape (batch,)."""
    H = np.asarray(H)
    if H.ndim != 3:
        raise ConfigurationError(f"Error: batch_sum_rate expects a stack of channels, got shape {H.shape}")
    return np.sum(np.log2(1.0 + sinr_per_user(H, W, sigma2)), axis=-1)


def project_power(W, p_max: float, strict: bool = False):
    """
    Name
    ----
    project_power

    Description
    -----------
    Enforces the total power constraint. By default `W` is returned unchanged when its power
    is within `p_max` and scaled by sqrt(p_max / power) otherwise. With `strict = True` the
    precoder is always rescaled to exactly `p_max`.

    Parameters
    ----------
    W : numpy.ndarray
        Complex precoding matrix (or stack of matrices).
    p_max : float
        Total power budget.
    strict : bool
        Normalise to exactly `p_max` instead of only scaling down. Defaults to False.

    Returns
    -------
    numpy.ndarray
        The projected precoder.

    Raises
    ------
    DegenerateInputError
        When `strict` is set and a precoder has zero power.
    """
    check_positive(p_max, "p_max")
    W = np.asarray(W, dtype=np.complex128)
    power = np.asarray(total_power(W), dtype=float)

    if strict:
        if np.any(power <= 0.0):
            raise DegenerateInputError("Error: cannot normalise an all-zero precoder")
        scale = np.sqrt(p_max / power)
    else:
        scale = np.ones_like(power)
        over = power > p_max
        scale[over] = np.sqrt(p_max / power[over])
        if not np.any(over):
            return W
    return W * scale[..., None, None]


def mrt_precoder(H, p_max: float):
    """Matched filter W proportional to H, scaled to total power `p_max` (zero stays zero)."""
    H = check_channel(H)
    check_positive(p_max, "p_max")
    power = np.asarray(total_power(H), dtype=float)
    scale = np.zeros_like(power)
    nonzero = power > 0.0
    scale[nonzero] = np.sqrt(p_max / power[nonzero])
    return H * scale[..., None, None]


def zf_precoder(H, p_max: float, cond_threshold: float = 1e12):
    """
    Name
    ----
    zf_precoder

    Description
    -----------
    Zero-forcing precoder W proportional to H (H^H H)^{-1}, scaled so that the total power
    equals `p_max`. Inter-user interference h_k^H w_j vanishes for j != k.

    Parameters
    ----------
    H : numpy.ndarray
        Complex channel matrix (n_tx, n_users) with full column rank.
    p_max : float
        Total power budget.
    cond_threshold : float
        Largest accepted condition number of H^H H. Defaults to 1e12.

    Returns
    -------
    numpy.ndarray
        The zero-forcing precoder.

    Raises
    ------
    SingularChannelError
        When H^H H is rank deficient or too ill-conditioned.

    Example
    -------
    >>> H = np.eye(4, 2)
    >>> float(total_power(zf_precoder(H, p_max = 2.0)))
    2.0
    """
    H = check_channel(H)
    check_positive(p_max, "p_max")
    if H.ndim == 3:
        return np.stack([zf_precoder(h, p_max, cond_threshold) for h in H])

    gram = np.conj(H.T) @ H
    if not np.isfinite(np.linalg.cond(gram)) or np.linalg.cond(gram) > cond_threshold:
        raise SingularChannelError("Error: channel Gram matrix is singular; zero-forcing is undefined")

    # W = H G^{-1} = (G^{-1} H^H)^H since G is Hermitian
    W = np.conj(cho_solve(cho_factor(gram, lower=True), np.conj(H.T)).T)
    return W * np.sqrt(p_max / total_power(W))
