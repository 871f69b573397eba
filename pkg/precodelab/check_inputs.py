# --------------------------------------------------------------------------------------------
# Copyright (c) Microsoft Corporation. All rights reserved.
# Licensed under the MIT License. See LICENSE.txt in the project root for license information.
# --------------------------------------------------------------------------------------------
'''
The functions in this module check that channel matrices, precoders and scalar settings are
consistent before any computation runs, and define the errors raised across the package.
'''
import warnings

import numpy as np

__all__ = [
    "PrecodeLabError",
    "ConfigurationError",
    "DegenerateInputError",
    "SingularChannelError",
    "NumericFailureError",
    "DatasetIOError",
    "PrecodingWarning",
    "check_positive",
    "check_channel",
    "check_precoder",
    "check_permutation",
    "warn_precoding",
]


class PrecodeLabError(Exception):
    """Base class of every error raised by precodelab."""


class ConfigurationError(PrecodeLabError, ValueError):
    """Inputs or settings that do not fit together (shapes, sizes, unknown keys)."""


class DegenerateInputError(PrecodeLabError, ValueError):
    """An all-zero precoder was given where a strict normalisation is required."""


class SingularChannelError(PrecodeLabError, ArithmeticError):
    """The channel Gram matrix is too ill-conditioned to invert."""


class NumericFailureError(PrecodeLabError, ArithmeticError):
    """A numerical routine failed (bracketing, factorisation, non-finite loss)."""


class DatasetIOError(PrecodeLabError, OSError):
    """A dataset, checkpoint or configuration file is missing, unreadable or corrupt."""


class PrecodingWarning(UserWarning):
    """Recoverable numerical condition worth surfacing to the user."""


def warn_precoding(message: str):
    warnings.warn(message, PrecodingWarning, stacklevel=3)


def check_positive(value, name: str, allow_zero: bool = False):
    """
    Name
    -----
    check_positive

    Description
    -----------
    Checks that a scalar setting is finite and strictly positive (or non-negative when
    `allow_zero` is set) and raises a `ConfigurationError` otherwise.

    Parameters
    ----------
    value : float
        The value to check.
    name : str
        Name used in the error message.
    allow_zero : bool
        Accept zero as a valid value. Defaults to False.

    Example
    -------
    >>> check_positive(1e-3, "sigma2")
    0.001
    """
    if value is None or not np.isfinite(value):
        raise ConfigurationError(f"Error: {name} must be a finite number, got {value}")
    if allow_zero and value < 0:
        raise ConfigurationError(f"Error: {name} must be >= 0, got {value}")
    if not allow_zero and value <= 0:
        raise ConfigurationError(f"Error: {name} must be > 0, got {value}")
    return float(value)


def check_channel(H, n_tx: int = None, n_users: int = None):
    """
    Name
    -----
    check_channel

    Description
    -----------
    Checks that `H` is a finite complex matrix of shape (n_tx, n_users) (or a stack of such
    matrices with a leading batch axis) and returns it as a complex128 array.

    Parameters
    ----------
    H : array-like
        Channel matrix whose k-th column is user k's channel.
    n_tx : int, optional
        Expected antenna count.
    n_users : int, optional
        Expected user count.

    Returns
    -------
    numpy.ndarray of complex128.
    """
    H = np.asarray(H, dtype=np.complex128)
    if H.ndim not in (2, 3):
        raise ConfigurationError(f"Error: channel must be a matrix or a stack of matrices, got shape {H.shape}")
    if n_tx is not None and H.shape[-2] != n_tx:
        raise ConfigurationError(f"Error: channel has {H.shape[-2]} antenna rows, expected {n_tx}")
    if n_users is not None and H.shape[-1] != n_users:
        raise ConfigurationError(f"Error: channel has {H.shape[-1]} user columns, expected {n_users}")
    if H.shape[-1] > H.shape[-2]:
        raise ConfigurationError(f"Error: {H.shape[-1]} users exceed {H.shape[-2]} antennas")
    if not np.all(np.isfinite(H)):
        raise ConfigurationError("Error: channel contains non-finite entries")
    return H


def check_precoder(H, W):
    """Checks that `W` has the same shape as `H` and returns it as complex128."""
    W = np.asarray(W, dtype=np.complex128)
    if W.shape != np.shape(H):
        raise ConfigurationError(f"Error: precoder shape {W.shape} does not match channel shape {np.shape(H)}")
    if not np.all(np.isfinite(W)):
        raise ConfigurationError("Error: precoder contains non-finite entries")
    return W


def check_permutation(perm, n_users: int):
    """Checks that `perm` is a bijection on {0, ..., n_users - 1}."""
    perm = np.asarray(perm)
    if perm.ndim != 1 or perm.shape[0] != n_users or not np.issubdtype(perm.dtype, np.integer):
        raise ConfigurationError(f"Error: permutation must list {n_users} integer user indices")
    if not np.array_equal(np.sort(perm), np.arange(n_users)):
        raise ConfigurationError(f"Error: {perm.tolist()} is not a permutation of {n_users} users")
    return perm
