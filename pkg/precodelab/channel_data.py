# --------------------------------------------------------------------------------------------
# Copyright (c) Microsoft Corporation. All rights reserved.
# Licensed under the MIT License. See LICENSE.txt in the project root for license information.
# --------------------------------------------------------------------------------------------
"""
Per-site channel datasets: generation from a `SiteProfile`, normalisation to unit mean entry
power, a self-describing binary file format, WMMSE reference-rate sidecars and dataset
manifests.

The binary file holds an 8-byte magic, a little-endian uint32 header length, a JSON header
(magic, version, n_tx, n_users, count, site_id, seed, scale) and then, row-major, the complex
channels as little-endian complex128, the per-user LOS flags as uint8 and the user distances
and azimuths as little-endian float64.
"""
import hashlib
import json
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import pandas as pd
from tqdm import tqdm

from precodelab.channel_sim import ArrayGeometry, SiteProfile, draw_channel, noise_for_snr
from precodelab.check_inputs import ConfigurationError, DatasetIOError, DegenerateInputError, check_channel
from precodelab.precoding import SystemConfig
from precodelab.wmmse import wmmse_solve

__all__ = [
    "Sample",
    "Dataset",
    "generate_site_dataset",
    "save_dataset",
    "load_dataset",
    "dataset_checksum",
    "reference_rates",
    "write_rate_sidecar",
    "read_rate_sidecar",
    "sidecar_path",
    "rates_for_snr",
    "write_manifest",
    "read_manifest",
]

MAGIC = b"PCLDSET1"
FORMAT_VERSION = 1
SIDECAR_COLUMNS = ["sample", "snr_db", "r_wmmse", "iterations", "dataset_sha256"]
MANIFEST_COLUMNS = ["site_id", "dataset_file", "sidecar_file", "count", "n_tx", "n_users", "seed", "sha256"]


@dataclass
class Sample:
    """One channel realisation with its users' LOS flags and (distance, azimuth) positions."""
    H: np.ndarray
    site_id: str
    los: np.ndarray = None
    distance: np.ndarray = None
    azimuth: np.ndarray = None


class Dataset:
    """
    Ordered collection of channel samples from one site, stored as stacked arrays.

    `channels` has shape (count, n_tx, n_users) and is already normalised: `normalization`
    is the scale that was applied to the raw draws so that the mean entry power is 1.
    """

    def __init__(self, channels, config: SystemConfig, site_id: str, seed: int = 0,
                 normalization: float = 1.0, los=None, distance=None, azimuth=None):
        channels = check_channel(channels, n_tx=config.n_tx, n_users=config.n_users)
        if channels.ndim != 3 or channels.shape[0] < 1:
            raise ConfigurationError("Error: a dataset needs a non-empty stack of channels")
        count = channels.shape[0]
        self.channels = channels
        self.config = config
        self.site_id = str(site_id)
        self.seed = int(seed)
        self.normalization = float(normalization)
        self.los = np.zeros((count, config.n_users), dtype=bool) if los is None else np.asarray(los, dtype=bool)
        self.distance = np.zeros((count, config.n_users)) if distance is None else np.asarray(distance, dtype=float)
        self.azimuth = np.zeros((count, config.n_users)) if azimuth is None else np.asarray(azimuth, dtype=float)
        for name in ("los", "distance", "azimuth"):
            if getattr(self, name).shape != (count, config.n_users):
                raise ConfigurationError(f"Error: dataset field '{name}' must have shape {(count, config.n_users)}")

    def __len__(self):
        return self.channels.shape[0]

    def __getitem__(self, index):
        return Sample(H=self.channels[index], site_id=self.site_id, los=self.los[index],
                      distance=self.distance[index], azimuth=self.azimuth[index])

    @property
    def samples(self):
        return [self[i] for i in range(len(self))]

    def subset(self, indices):
        """New dataset holding the samples at `indices`, in that order."""
        indices = np.asarray(indices, dtype=int)
        return Dataset(self.channels[indices], self.config, self.site_id, self.seed, self.normalization,
                       self.los[indices], self.distance[indices], self.azimuth[indices])

    def mean_entry_power(self):
        return float(np.mean(np.abs(self.channels) ** 2))


def _draw_sample(profile, config, geom, seed_sequence):
    rng = np.random.default_rng(seed_sequence)
    return draw_channel(profile, config, rng, geom=geom, return_type="sample")


def generate_site_dataset(profile: SiteProfile,
                          n: int,
                          config: SystemConfig,
                          geom: ArrayGeometry = None,
                          threads: int = 1,
                          verbose: bool = False):
    """
    Name
    ----
    generate_site_dataset

    Description
    -----------
    Draws `n` channel samples of a site and normalises the whole dataset to unit mean entry
    power. Sample i uses its own random stream, the i-th child of `SeedSequence(profile.seed)`,
    so the result does not depend on `threads` or on execution order.

    Parameters
    ----------
    profile : SiteProfile
        The site to simulate.
    n : int
        Number of samples, at least 1.
    config : SystemConfig
        System dimensions.
    geom : ArrayGeometry, optional
        Array geometry; the most square factorisation of `config.n_tx` by default.
    threads : int
        Worker threads used for drawing. Defaults to 1.
    verbose : bool
        Show a progress bar. Defaults to False.

    Returns
    -------
    Dataset

    Example
    -------
    >>> from precodelab import get_site_profile, SystemConfig
    >>> generate_site_dataset(get_site_profile("ericsson"), 100, SystemConfig(16, 2))
    """
    if int(n) < 1:
        raise ConfigurationError("Error: a dataset needs at least one sample")
    if int(threads) < 1:
        raise ConfigurationError("Error: threads must be >= 1")
    if geom is None:
        geom = ArrayGeometry.for_antennas(config.n_tx)
    children = np.random.SeedSequence(profile.seed).spawn(int(n))

    progress = tqdm(total=int(n), desc=f"Generating {profile.site_id}", disable=not verbose)
    if int(threads) == 1:
        draws = []
        for child in children:
            draws.append(_draw_sample(profile, config, geom, child))
            progress.update(1)
    else:
        with ThreadPoolExecutor(max_workers=int(threads)) as pool:
            draws = list(pool.map(lambda child: _draw_sample(profile, config, geom, child), children))
        progress.update(int(n))
    progress.close()

    channels = np.stack([draw["H"] for draw in draws])
    mean_power = float(np.mean(np.abs(channels) ** 2))
    if mean_power <= 0.0:
        raise DegenerateInputError(f"Error: site {profile.site_id} produced all-zero channels")
    scale = 1.0 / np.sqrt(mean_power)

    return Dataset(channels * scale, config, profile.site_id, profile.seed, scale,
                   los=np.stack([draw["los"] for draw in draws]),
                   distance=np.stack([draw["distance"] for draw in draws]),
                   azimuth=np.stack([draw["azimuth"] for draw in draws]))


def _serialize(dataset: Dataset):
    header = {
        "magic": MAGIC.decode("ascii"),
        "version": FORMAT_VERSION,
        "n_tx": dataset.config.n_tx,
        "n_users": dataset.config.n_users,
        "count": len(dataset),
        "site_id": dataset.site_id,
        "seed": dataset.seed,
        "scale": dataset.normalization,
        "p_max": dataset.config.p_max,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    return b"".join([
        MAGIC,
        struct.pack("<I", len(header_bytes)),
        header_bytes,
        np.ascontiguousarray(dataset.channels, dtype="<c16").tobytes(),
        np.ascontiguousarray(dataset.los, dtype=np.uint8).tobytes(),
        np.ascontiguousarray(dataset.distance, dtype="<f8").tobytes(),
        np.ascontiguousarray(dataset.azimuth, dtype="<f8").tobytes(),
    ])


def dataset_checksum(dataset):
    """sha256 hex digest of a dataset file, or of the bytes a `Dataset` would be saved as."""
    if isinstance(dataset, Dataset):
        return hashlib.sha256(_serialize(dataset)).hexdigest()
    if not os.path.isfile(dataset):
        raise DatasetIOError(f"Error: dataset file {dataset} does not exist")
    digest = hashlib.sha256()
    with open(dataset, "rb") as handle:
        for block in iter(lambda: handle.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def save_dataset(dataset: Dataset, path: str, verbose: bool = False):
    """Writes `dataset` to `path` in the binary format and returns its sha256 checksum."""
    payload = _serialize(dataset)
    directory = os.path.dirname(os.path.abspath(path))
    try:
        os.makedirs(directory, exist_ok=True)
        with open(path, "wb") as handle:
            handle.write(payload)
    except OSError as error:
        raise DatasetIOError(f"Error: could not write dataset {path}: {error}") from error
    if verbose:
        print(f"Exporting to {path}...")
    return hashlib.sha256(payload).hexdigest()


def load_dataset(path: str, expected_checksum: str = None):
    """
    Name
    ----
    load_dataset

    Description
    -----------
    Reads a dataset written by `save_dataset`. The reload is bit-exact.

    Parameters
    ----------
    path : str
        Path of the dataset file.
    expected_checksum : str, optional
        sha256 the file must have (e.g. from a manifest).

    Returns
    -------
    Dataset

    Raises
    ------
    DatasetIOError
        When the file is missing, truncated, has a bad magic or version, or fails the checksum.
    """
    if not os.path.isfile(path):
        raise DatasetIOError(f"Error: dataset file {path} does not exist")
    with open(path, "rb") as handle:
        payload = handle.read()

    if expected_checksum is not None and hashlib.sha256(payload).hexdigest() != expected_checksum:
        raise DatasetIOError(f"Error: checksum mismatch for dataset {path}")
    if payload[:len(MAGIC)] != MAGIC:
        raise DatasetIOError(f"Error: {path} is not a precodelab dataset file")

    try:
        offset = len(MAGIC)
        (header_length,) = struct.unpack_from("<I", payload, offset)
        offset += 4
        header = json.loads(payload[offset:offset + header_length].decode("utf-8"))
        offset += header_length
    except (struct.error, ValueError) as error:
        raise DatasetIOError(f"Error: corrupt header in dataset {path}") from error
    if header.get("version") != FORMAT_VERSION:
        raise DatasetIOError(f"Error: unsupported dataset version {header.get('version')} in {path}")

    count, n_tx, n_users = header["count"], header["n_tx"], header["n_users"]
    sizes = [count * n_tx * n_users * 16, count * n_users, count * n_users * 8, count * n_users * 8]
    if len(payload) != offset + sum(sizes):
        raise DatasetIOError(f"Error: dataset {path} is truncated or has trailing bytes")

    def take(dtype, size, shape):
        nonlocal offset
        block = np.frombuffer(payload, dtype=dtype, count=int(np.prod(shape)), offset=offset).reshape(shape)
        offset += size
        return block.copy()

    channels = take("<c16", sizes[0], (count, n_tx, n_users)).astype(np.complex128)
    los = take(np.uint8, sizes[1], (count, n_users)).astype(bool)
    distance = take("<f8", sizes[2], (count, n_users)).astype(float)
    azimuth = take("<f8", sizes[3], (count, n_users)).astype(float)

    config = SystemConfig(n_tx=n_tx, n_users=n_users, p_max=header.get("p_max", 1.0))
    return Dataset(channels, config, header["site_id"], header["seed"], header["scale"],
                   los=los, distance=distance, azimuth=azimuth)


def reference_rates(dataset: Dataset,
                    snr_db,
                    p_max: float = None,
                    tol: float = 1e-3,
                    max_iter: int = 100,
                    threads: int = 1,
                    verbose: bool = False):
    """
    Name
    ----
    reference_rates

    Description
    -----------
    Runs `wmmse_solve` on every sample at every requested SNR and tabulates the converged sum
    rates (`r_wmmse`), which the student loss compares against.

    Parameters
    ----------
    dataset : Dataset
        Channels to solve.
    snr_db : float or list of float
        SNR values in dB.
    p_max : float, optional
        Power budget; defaults to the dataset's `config.p_max`.
    tol : float
        WMMSE stopping tolerance. Defaults to 1e-3.
    max_iter : int
        WMMSE iteration cap. Defaults to 100.
    threads : int
        Worker threads; rows are always returned in (snr_db, sample) order.
    verbose : bool
        Show a progress bar. Defaults to False.

    Returns
    -------
    pandas.DataFrame
        Columns `sample`, `snr_db`, `r_wmmse`, `iterations`.
    """
    p_max = dataset.config.p_max if p_max is None else p_max
    snr_list = [float(s) for s in np.atleast_1d(snr_db)]
    jobs = [(snr, i) for snr in snr_list for i in range(len(dataset))]

    def solve(job):
        snr, i = job
        _, state = wmmse_solve(dataset.channels[i], noise_for_snr(snr, p_max), p_max, tol=tol, max_iter=max_iter)
        return state.rate_trace[-1], state.iterations

    if int(threads) > 1:
        with ThreadPoolExecutor(max_workers=int(threads)) as pool:
            results = list(tqdm(pool.map(solve, jobs), total=len(jobs), desc="WMMSE reference", disable=not verbose))
    else:
        results = [solve(job) for job in tqdm(jobs, desc="WMMSE reference", disable=not verbose)]

    return pd.DataFrame({
        "sample": [i for _, i in jobs],
        "snr_db": [snr for snr, _ in jobs],
        "r_wmmse": [rate for rate, _ in results],
        "iterations": [iterations for _, iterations in results],
    })


def sidecar_path(dataset_path: str):
    root, _ = os.path.splitext(dataset_path)
    return f"{root}.rates.csv"


def write_rate_sidecar(rates: pd.DataFrame, dataset_path: str, checksum: str = None, verbose: bool = False):
    """Writes the reference-rate table next to its dataset file, tagged with the dataset checksum."""
    checksum = dataset_checksum(dataset_path) if checksum is None else checksum
    table = rates.copy()
    table["dataset_sha256"] = checksum
    path = sidecar_path(dataset_path)
    try:
        table[SIDECAR_COLUMNS].to_csv(path, index=False)
    except OSError as error:
        raise DatasetIOError(f"Error: could not write sidecar {path}: {error}") from error
    if verbose:
        print(f"Exporting to {path}...")
    return path


def read_rate_sidecar(dataset_path: str, checksum: str = None):
    """
    Reads the reference-rate sidecar of a dataset file. Raises `DatasetIOError` when the
    sidecar is missing or was computed for different dataset bytes.
    """
    path = sidecar_path(dataset_path)
    if not os.path.isfile(path):
        raise DatasetIOError(f"Error: reference-rate sidecar {path} does not exist")
    table = pd.read_csv(path, dtype={"dataset_sha256": str})
    missing = set(SIDECAR_COLUMNS) - set(table.columns)
    if missing:
        raise DatasetIOError(f"Error: sidecar {path} lacks columns {sorted(missing)}")
    checksum = dataset_checksum(dataset_path) if checksum is None else checksum
    if not (table["dataset_sha256"] == checksum).all():
        raise DatasetIOError(f"Error: sidecar {path} is stale for the current dataset bytes")
    return table


def rates_for_snr(rates: pd.DataFrame, snr_db: float, count: int):
    """r_wmmse of samples 0..count-1 at `snr_db` as an array."""
    rows = rates[np.isclose(rates["snr_db"].astype(float), float(snr_db))].sort_values("sample")
    if len(rows) != count or not np.array_equal(rows["sample"].to_numpy(), np.arange(count)):
        raise ConfigurationError(f"Error: no complete reference rates at {snr_db} dB; regenerate the dataset sidecar")
    return rows["r_wmmse"].to_numpy(dtype=float)


def write_manifest(entries, out_dir: str, verbose: bool = False):
    """Writes `manifest.csv` (one row per site dataset) into `out_dir` and returns its path."""
    table = pd.DataFrame(entries, columns=MANIFEST_COLUMNS)
    path = os.path.join(out_dir, "manifest.csv")
    try:
        table.to_csv(path, index=False)
    except OSError as error:
        raise DatasetIOError(f"Error: could not write manifest {path}: {error}") from error
    if verbose:
        print(f"Exporting to {path}...")
    return path


def read_manifest(data_dir: str):
    """Reads `manifest.csv` from `data_dir`; file columns are resolved relative to it."""
    path = os.path.join(data_dir, "manifest.csv")
    if not os.path.isfile(path):
        raise DatasetIOError(f"Error: manifest {path} does not exist")
    table = pd.read_csv(path, dtype={"site_id": str, "sha256": str})
    missing = set(MANIFEST_COLUMNS) - set(table.columns)
    if missing:
        raise DatasetIOError(f"Error: manifest {path} lacks columns {sorted(missing)}")
    return table
