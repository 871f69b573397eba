# --------------------------------------------------------------------------------------------
# Copyright (c) Microsoft Corporation. All rights reserved.
# Licensed under the MIT License. See LICENSE.txt in the project root for license information.
# --------------------------------------------------------------------------------------------
"""
Closed-form counts of real multiplications per channel realisation for WMMSE, zero forcing,
the deployed student network (PaPP) and a MAML-trained CNN baseline, and a report comparing
them. Counts are exact `fractions.Fraction` values because the formulas contain thirds.
"""
from dataclasses import dataclass
from fractions import Fraction

import pandas as pd
import toml

from precodelab.check_inputs import ConfigurationError, check_positive, warn_precoding

__all__ = [
    "ComplexityConfig",
    "ComplexityReport",
    "wmmse_mult_count",
    "zf_mult_count",
    "papp_mult_count",
    "maml_cnn_mult_count",
    "complexity_report",
    "format_count",
]

DEFAULT_C_IN = 2
DEFAULT_KERNEL = 3
REPORT_COLUMNS = ["method", "n_tx", "n_users", "params", "mult_count", "ratio_vs_wmmse"]


def _exact(value, name):
    check_positive(value, name)
    return Fraction(str(value)) if isinstance(value, float) else Fraction(value)


def wmmse_mult_count(n_tx, n_users, iterations):
    """
    Name
    ----
    wmmse_mult_count

    Description
    -----------
    4 I (2/3 N_T^3 N_U + N_T^2 N_U + 2 N_T (2 N_U^2 + N_U) + N_U^2 + 14/3 N_U) for I
    iterations; the count is exactly linear in I.

    Parameters
    ----------
    n_tx : int
        Antenna count N_T.
    n_users : int
        User count N_U.
    iterations : float
        Average iteration count I (may be fractional).

    Returns
    -------
    fractions.Fraction

    Example
    -------
    >>> format_count(wmmse_mult_count(64, 4, 12.5))
    '36.0 M'
    """
    N, K, I = _exact(n_tx, "n_tx"), _exact(n_users, "n_users"), _exact(iterations, "iterations")
    per_iteration = (Fraction(2, 3) * N ** 3 * K + N ** 2 * K + 2 * N * (2 * K ** 2 + K)
                     + K ** 2 + Fraction(14, 3) * K)
    return 4 * I * per_iteration


def zf_mult_count(n_tx, n_users):
    """8 N_U^2 N_T + 8/3 N_U^3."""
    N, K = _exact(n_tx, "n_tx"), _exact(n_users, "n_users")
    return 8 * K ** 2 * N + Fraction(8, 3) * K ** 3


def papp_mult_count(n_tx, n_users, c_in, c_out, kernel, fc_sizes):
    """
    Name
    ----
    papp_mult_count

    Description
    -----------
    Deployed student network: convolution, then FC1, FC2, FC3 and the two output heads,
    C_out N_T N_U C_in k^2 + C_out N_T N_U D_FC1 + D_FC1 D_FC2 + D_FC2 D_FC3
    + D_FC3 D_FC4r + D_FC3 D_FC4i.

    Parameters
    ----------
    n_tx, n_users : int
        System dimensions.
    c_in, c_out : int
        Convolution input and output channels.
    kernel : int
        Kernel size k.
    fc_sizes : tuple
        (D_FC1, D_FC2, D_FC3, D_FC4r, D_FC4i).

    Returns
    -------
    fractions.Fraction
    """
    if len(fc_sizes) != 5:
        raise ConfigurationError("Error: fc_sizes must list (FC1, FC2, FC3, FC4r, FC4i)")
    N, K = _exact(n_tx, "n_tx"), _exact(n_users, "n_users")
    C_in, C_out, k = _exact(c_in, "c_in"), _exact(c_out, "c_out"), _exact(kernel, "kernel")
    fc1, fc2, fc3, fc4r, fc4i = (_exact(size, "fc_sizes") for size in fc_sizes)
    cells = C_out * N * K
    return cells * C_in * k ** 2 + cells * fc1 + fc1 * fc2 + fc2 * fc3 + fc3 * fc4r + fc3 * fc4i


def maml_cnn_mult_count(n_tx, n_users, c_in, c_out, kernel):
    """
    C_out N_T N_U C_in k^2 + C_out N_T N_U (3 N_U + 1)
    + 8 (4/3 N_T^3 + N_T^2 (3 N_U + 2) + N_T (2 N_U + 3)); the last term is the matrix
    inversion that rebuilds the precoder.
    """
    N, K = _exact(n_tx, "n_tx"), _exact(n_users, "n_users")
    C_in, C_out, k = _exact(c_in, "c_in"), _exact(c_out, "c_out"), _exact(kernel, "kernel")
    cells = C_out * N * K
    inversion = 8 * (Fraction(4, 3) * N ** 3 + N ** 2 * (3 * K + 2) + N * (2 * K + 3))
    return cells * C_in * k ** 2 + cells * (3 * K + 1) + inversion


def format_count(count):
    """Short rendering such as "36.0 M" or "8.4 K"."""
    value = float(count)
    for threshold, suffix in ((1e9, "G"), (1e6, "M"), (1e3, "K")):
        if abs(value) >= threshold:
            return f"{value / threshold:.1f} {suffix}"
    return f"{value:.1f}"


@dataclass(frozen=True)
class ComplexityConfig:
    """
    Inputs of the complexity comparison. `c_in` and `kernel` of None take the defaults 2 and 3
    (noted in the report); `fc_sizes` of None means (64, 64, 512, N_T N_U, N_T N_U).
    """
    n_tx: int = 64
    n_users: int = 4
    iterations: float = 12.5
    c_in: int = None
    c_out: int = 32
    kernel: int = None
    fc_sizes: tuple = None

    def resolved(self):
        fc_sizes = self.fc_sizes
        if fc_sizes is None:
            fc_sizes = (64, 64, 512, self.n_tx * self.n_users, self.n_tx * self.n_users)
        return {
            "n_tx": self.n_tx,
            "n_users": self.n_users,
            "iterations": self.iterations,
            "c_in": DEFAULT_C_IN if self.c_in is None else self.c_in,
            "c_out": self.c_out,
            "kernel": DEFAULT_KERNEL if self.kernel is None else self.kernel,
            "fc_sizes": tuple(fc_sizes),
        }


@dataclass
class ComplexityReport:
    """Counts per method (exact), pairwise ratios, the parameters used and footnotes."""
    params: dict
    counts: dict
    ratios: dict
    notes: list

    def to_frame(self):
        """One row per method with the CSV columns `REPORT_COLUMNS`."""
        wmmse = self.counts["WMMSE"]
        method_params = {
            "WMMSE": f"I={self.params['iterations']}",
            "ZF": "",
            "PaPP": (f"C_in={self.params['c_in']};C_out={self.params['c_out']};k={self.params['kernel']};"
                     f"FC={'/'.join(str(s) for s in self.params['fc_sizes'])}"),
            "MAML-CNN": f"C_in={self.params['c_in']};C_out={self.params['c_out']};k={self.params['kernel']}",
        }
        rows = [{
            "method": method,
            "n_tx": self.params["n_tx"],
            "n_users": self.params["n_users"],
            "params": method_params[method],
            "mult_count": float(count),
            "ratio_vs_wmmse": float(wmmse / count),
        } for method, count in self.counts.items()]
        return pd.DataFrame(rows, columns=REPORT_COLUMNS)

    def to_toml(self):
        document = {
            "params": {key: (list(value) if isinstance(value, tuple) else value) for key, value in self.params.items()},
            "counts": {method: float(count) for method, count in self.counts.items()},
            "counts_exact": {method: str(count) for method, count in self.counts.items()},
            "display": {method: format_count(count) for method, count in self.counts.items()},
            "ratios": {name: float(value) for name, value in self.ratios.items()},
            "notes": list(self.notes),
        }
        return toml.dumps(document)


def complexity_report(config: ComplexityConfig = None, warn: bool = True):
    """
    Name
    ----
    complexity_report

    Description
    -----------
    Evaluates all four counts for one configuration and the ratios WMMSE/ZF, WMMSE/PaPP,
    WMMSE/MAML-CNN and MAML-CNN/PaPP. The input parameters are echoed unchanged; using the
    default kernel or input-channel count adds a note and a `PrecodingWarning`.

    Parameters
    ----------
    config : ComplexityConfig, optional
        Sizes to evaluate; the published configuration by default.
    warn : bool
        Emit a warning when defaults are used. Defaults to True.

    Returns
    -------
    ComplexityReport

    Example
    -------
    >>> report = complexity_report(ComplexityConfig(), warn = False)
    >>> format_count(report.counts["WMMSE"]), format_count(report.counts["ZF"])
    ('36.0 M', '8.4 K')
    """
    config = ComplexityConfig() if config is None else config
    params = config.resolved()
    notes = []
    if config.c_in is None or config.kernel is None:
        notes.append(f"default C_in={DEFAULT_C_IN} and k={DEFAULT_KERNEL} used; set complexity.c_in and complexity.kernel to override")
        if warn:
            warn_precoding(notes[-1])

    counts = {
        "WMMSE": wmmse_mult_count(params["n_tx"], params["n_users"], params["iterations"]),
        "ZF": zf_mult_count(params["n_tx"], params["n_users"]),
        "PaPP": papp_mult_count(params["n_tx"], params["n_users"], params["c_in"], params["c_out"],
                                params["kernel"], params["fc_sizes"]),
        "MAML-CNN": maml_cnn_mult_count(params["n_tx"], params["n_users"], params["c_in"], params["c_out"],
                                        params["kernel"]),
    }
    ratios = {
        "WMMSE/ZF": counts["WMMSE"] / counts["ZF"],
        "WMMSE/PaPP": counts["WMMSE"] / counts["PaPP"],
        "WMMSE/MAML-CNN": counts["WMMSE"] / counts["MAML-CNN"],
        "MAML-CNN/PaPP": counts["MAML-CNN"] / counts["PaPP"],
    }
    return ComplexityReport(params=params, counts=counts, ratios=ratios, notes=notes)
