# --------------------------------------------------------------------------------------------
# Copyright (c) Microsoft Corporation. All rights reserved.
# Licensed under the MIT License. See LICENSE.txt in the project root for license information.
# --------------------------------------------------------------------------------------------
"""
This module imports evaluation result tables written by `precodelab eval` from .csv files and
merges several of them for comparison. Column names are stripped and cleaned the same way for
every file, so tables edited by hand still line up.
"""
import os
import re

import pandas as pd

from precodelab.check_inputs import ConfigurationError, DatasetIOError

__all__ = ["RESULT_COLUMNS", "import_results", "compare_results"]

RESULT_COLUMNS = ["method", "site", "snr_db", "mean_rate", "std", "n"]


def import_results(x: str, encoding: str = "utf-8"):
    """
    Name
    ----
    import_results

    Description
    -----------
    Reads an evaluation CSV, removes leading and trailing spaces from column names, replaces
    spaces and special characters with underscores and checks that the result columns
    (method, site, snr_db, mean_rate, std, n) are present.

    Parameters
    ----------
    x : str
        File name or path of the CSV file.
    encoding : str, optional
        Character encoding of the file. Defaults to 'utf-8'.

    Returns
    -------
    pandas.DataFrame

    Example
    -------
    >>> results = import_results("runs/eval/eval_results.csv")
    """
    if not x.lower().endswith(".csv"):
        raise ConfigurationError("Error: the input must be a .csv file")
    if not os.path.isfile(x):
        raise DatasetIOError(f"Error: input file {x} does not exist")
    try:
        data = pd.read_csv(x, encoding=encoding, delimiter=",")
    except (OSError, ValueError) as error:
        raise DatasetIOError(f"Error: something went wrong when reading {x}: {error}") from error

    data.columns = [re.sub("[^a-zA-Z0-9_]", "_", c.strip()) for c in data.columns]
    missing = [c for c in RESULT_COLUMNS if c not in data.columns]
    if missing:
        raise ConfigurationError(f"Error: {x} is missing result columns {missing}")
    return data


def compare_results(paths, labels=None, encoding: str = "utf-8"):
    """
    Name
    ----
    compare_results

    Description
    -----------
    Stacks several evaluation tables into one long table with a `run` column, followed by a
    `ratio_vs_wmmse` column: each row's mean rate divided by the WMMSE mean rate of the same
    run, site and SNR (NaN where that run has no WMMSE row).

    Parameters
    ----------
    paths : list of str
        Evaluation CSV files.
    labels : list of str, optional
        Run names; defaults to the name of the directory holding each file.

    Returns
    -------
    pandas.DataFrame
        Columns: run, method, site, snr_db, mean_rate, std, n, ratio_vs_wmmse.
    """
    if not paths:
        raise ConfigurationError("Error: compare needs at least one results file")
    if labels is None:
        labels = [os.path.basename(os.path.dirname(os.path.abspath(p))) or p for p in paths]
    if len(labels) != len(paths):
        raise ConfigurationError("Error: labels and paths must have the same length")
    if len(set(labels)) != len(labels):
        labels = [f"{label}#{i}" for i, label in enumerate(labels)]

    frames = []
    for label, path in zip(labels, paths):
        frame = import_results(path, encoding=encoding)[RESULT_COLUMNS].copy()
        frame.insert(0, "run", label)
        frames.append(frame)
    merged = pd.concat(frames, ignore_index=True)

    reference = (merged[merged["method"] == "WMMSE"][["run", "site", "snr_db", "mean_rate"]]
                 .rename(columns={"mean_rate": "wmmse_rate"}))
    merged = merged.merge(reference, on=["run", "site", "snr_db"], how="left")
    merged["ratio_vs_wmmse"] = merged["mean_rate"] / merged["wmmse_rate"]
    return merged.drop(columns="wmmse_rate")
