# --------------------------------------------------------------------------------------------
# Copyright (c) Microsoft Corporation. All rights reserved.
# Licensed under the MIT License. See LICENSE.txt in the project root for license information.
# --------------------------------------------------------------------------------------------
"""
This module accepts a data frame, a report object or a plain dictionary and exports it using the
specified format. Data frames are written as CSV without the index; reports and dictionaries are
written as TOML.
"""
import os
from datetime import datetime

import pandas as pd
import toml

from precodelab.check_inputs import ConfigurationError, DatasetIOError

__all__ = ["export", "export_frame", "export_toml"]


def _target(path, extension, timestamp):
    # Create timestamped path (if applicable)
    if timestamp:
        path = f"{path} {datetime.now().strftime('%Y-%m-%d %H-%M-%S')}"
    if not path.endswith(f".{extension}"):
        path = f"{path}.{extension}"
    directory = os.path.dirname(os.path.abspath(path))
    try:
        os.makedirs(directory, exist_ok=True)
    except OSError as error:
        raise DatasetIOError(f"Error: could not create output directory {directory}: {error}") from error
    return path


def export_frame(x: pd.DataFrame, path: str, timestamp: bool = False, verbose: bool = True):
    """Writes a data frame to `<path>.csv` (index dropped) and returns the file name."""
    if not isinstance(x, pd.DataFrame):
        raise ConfigurationError("Error: csv export needs a pandas DataFrame")
    newpath = _target(path, "csv", timestamp)
    if verbose:
        print(f"Exporting to {newpath}...")
    try:
        x.to_csv(newpath, index=False)
    except OSError as error:
        raise DatasetIOError(f"Error: could not write {newpath}: {error}") from error
    return newpath


def export_toml(x, path: str, timestamp: bool = False, verbose: bool = True):
    """Writes a dict, or any object with a `to_toml()` method, to `<path>.toml`."""
    if hasattr(x, "to_toml"):
        text = x.to_toml()
    elif isinstance(x, dict):
        text = toml.dumps(x)
    else:
        raise ConfigurationError("Error: toml export needs a dict or an object with to_toml()")
    newpath = _target(path, "toml", timestamp)
    if verbose:
        print(f"Exporting to {newpath}...")
    try:
        with open(newpath, "w", encoding="utf-8") as handle:
            handle.write(text)
    except OSError as error:
        raise DatasetIOError(f"Error: could not write {newpath}: {error}") from error
    return newpath


def export(x, file_format: str = "csv", path: str = "precodelab export", timestamp: bool = False,
           verbose: bool = True):
    """
    Name
    ----
    export

    Description
    -----------
    Exports the data to the specified file format and saves it to the specified filename.
    A general use function to write 'precodelab' outputs: evaluation tables, training
    histories and complexity reports. Data frames go to CSV; reports with a `to_toml()`
    method and plain dictionaries go to TOML. Objects with a `to_frame()` method (such as
    `TrainReport` or `ComplexityReport`) can be exported as CSV directly.

    Parameters
    ----------
    x : pandas.DataFrame, report object or dict
        The object to export.
    file_format : str
        "csv" or "toml". Defaults to "csv".
    path : str, optional
        Path and file name without extension. Defaults to "precodelab export".
    timestamp : bool, optional
        Include a timestamp in the file name. Defaults to False, since timestamped names
        break byte-identical reruns.
    verbose : bool, optional
        Print the "Exporting to ..." line. Defaults to True.

    Returns
    -------
    str
        The written file name.

    Example
    -------
    >>> from precodelab import complexity_report
    >>> export(complexity_report(), "csv", path="out/complexity")
    """
    if file_format == "csv":
        frame = x.to_frame() if hasattr(x, "to_frame") else x
        return export_frame(frame, path, timestamp=timestamp, verbose=verbose)
    elif file_format == "toml":
        return export_toml(x, path, timestamp=timestamp, verbose=verbose)
    else:
        raise ConfigurationError(f"Error: unsupported export format '{file_format}'; use 'csv' or 'toml'")
