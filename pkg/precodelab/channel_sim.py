# --------------------------------------------------------------------------------------------
# Copyright (c) Microsoft Corporation. All rights reserved.
# Licensed under the MIT License. See LICENSE.txt in the project root for license information.
# --------------------------------------------------------------------------------------------
"""
Simulate downlink channels for a base station with a uniform planar array (UPA) serving
single-antenna users placed on a ring grid around it. Each deployment site is described by a
`SiteProfile` (share of line-of-sight users, number of scattered paths, angle spread, Rician
factor, path-loss exponent), which is what distinguishes one site's channel distribution from
another's. The module also provides the SNR-to-noise convention and user permutations.
"""
import math
from dataclasses import dataclass, field

import numpy as np

from precodelab.check_inputs import ConfigurationError, check_channel, check_permutation, check_positive
from precodelab.precoding import SystemConfig

__all__ = [
    "ArrayGeometry",
    "SiteProfile",
    "steering_vector",
    "steering_vectors",
    "draw_users",
    "draw_channel",
    "noise_for_snr",
    "permute_users",
    "augment_permutations",
]


@dataclass(frozen=True)
class ArrayGeometry:
    """Uniform planar array with `rows` x `cols` elements spaced `spacing` wavelengths apart."""
    rows: int = 8
    cols: int = 8
    spacing: float = 0.5

    def __post_init__(self):
        if int(self.rows) < 1 or int(self.cols) < 1:
            raise ConfigurationError("Error: array rows and cols must be positive")
        check_positive(self.spacing, "spacing")

    @property
    def n_elements(self):
        return self.rows * self.cols

    @classmethod
    def for_antennas(cls, n_tx: int, spacing: float = 0.5):
        """Most square rows x cols factorisation of `n_tx` (8 x 8 for 64 antennas)."""
        rows = int(math.isqrt(n_tx))
        while n_tx % rows:
            rows -= 1
        return cls(rows=rows, cols=n_tx // rows, spacing=spacing)


@dataclass(frozen=True)
class SiteProfile:
    """
    Distribution parameters of one deployment site.

    The link-budget fields (`carrier_ghz`, `tx_power_w`, `margin_db`) document the simulated
    deployment; `bs_height_m` sets the elevation angle of every user.
    """
    site_id: str
    los_probability: float = 0.5
    path_count_range: tuple = (2, 6)
    angle_spread_deg: float = 10.0
    rician_k_db: float = 6.0
    pathloss_exponent: float = 3.0
    user_ring: tuple = (50.0, 350.0, 10.0)
    radial_step_m: float = 50.0
    seed: int = 0
    carrier_ghz: float = 2.0
    bs_height_m: float = 20.0
    tx_power_w: float = 20.0
    margin_db: float = 10.0
    description: str = field(default="", compare=False)

    def __post_init__(self):
        if not 0.0 <= self.los_probability <= 1.0:
            raise ConfigurationError(f"Error: los_probability of site {self.site_id} must lie in [0, 1]")
        low, high = self.path_count_range
        if int(low) < 1 or int(high) < int(low):
            raise ConfigurationError(f"Error: invalid path_count_range {self.path_count_range} for site {self.site_id}")
        min_distance, max_distance, angular_step = self.user_ring
        if not 0.0 < min_distance < max_distance:
            raise ConfigurationError(f"Error: user ring of site {self.site_id} needs 0 < min_distance < max_distance")
        check_positive(angular_step, "angular_step_deg")
        check_positive(self.radial_step_m, "radial_step_m")
        if self.angle_spread_deg < 0:
            raise ConfigurationError("Error: angle_spread_deg must be >= 0")

    @property
    def n_rings(self):
        min_distance, max_distance, _ = self.user_ring
        return max(1, int(round((max_distance - min_distance) / self.radial_step_m)))

    @property
    def n_angles(self):
        return max(1, int(round(360.0 / self.user_ring[2])))

    def rician_shares(self):
        """Power shares (los, scattered) of a line-of-sight user."""
        if math.isinf(self.rician_k_db) and self.rician_k_db > 0:
            return 1.0, 0.0
        k = 10.0 ** (self.rician_k_db / 10.0)
        return k / (k + 1.0), 1.0 / (k + 1.0)


def steering_vectors(geom: ArrayGeometry, azimuth_rad, elevation_rad):
    """Array responses for arrays of angles, shape (n_elements, n_angles)."""
    azimuth_rad = np.atleast_1d(np.asarray(azimuth_rad, dtype=float))
    elevation_rad = np.atleast_1d(np.asarray(elevation_rad, dtype=float))
    row, col = np.meshgrid(np.arange(geom.rows), np.arange(geom.cols), indexing="ij")
    row = row.reshape(-1, 1)
    col = col.reshape(-1, 1)
    phase = 2.0 * np.pi * geom.spacing * (
        row * (np.sin(azimuth_rad) * np.cos(elevation_rad))[None, :]
        + col * np.sin(elevation_rad)[None, :]
    )
    return np.exp(1j * phase) / np.sqrt(geom.n_elements)


def steering_vector(geom: ArrayGeometry, azimuth_rad: float, elevation_rad: float):
    """
    Name
    ----
    steering_vector

    Description
    -----------
    Planar-wavefront response of a uniform planar array. Element (m, n) has phase
    2 pi d (m sin(az) cos(el) + n sin(el)); every entry has modulus 1 / sqrt(n_elements) and
    elements are ordered row-major.

    Parameters
    ----------
    geom : ArrayGeometry
        Array geometry.
    azimuth_rad : float
        Azimuth angle in radians (0 is broadside).
    elevation_rad : float
        Elevation angle in radians.

    Returns
    -------
    numpy.ndarray
        Complex vector of length rows * cols.

    Example
    -------
    >>> steering_vector(ArrayGeometry(8, 8), 0.0, 0.0).shape
    (64,)
    """
    if not (np.isfinite(azimuth_rad) and np.isfinite(elevation_rad)):
        raise ConfigurationError("Error: steering angles must be finite")
    return steering_vectors(geom, azimuth_rad, elevation_rad)[:, 0]


def draw_users(profile: SiteProfile, n_users: int, rng: np.random.Generator):
    """
    Places `n_users` users in distinct cells of the ring grid and jitters each one uniformly
    within its (distance, angle) cell. Returns distances (m) and azimuths (rad).
    """
    n_cells = profile.n_rings * profile.n_angles
    if n_users > n_cells:
        raise ConfigurationError(f"Error: {n_users} users do not fit on a ring grid with {n_cells} cells")
    min_distance, max_distance, angular_step = profile.user_ring
    ring_width = (max_distance - min_distance) / profile.n_rings

    cells = rng.choice(n_cells, size=n_users, replace=False)
    ring, sector = np.divmod(cells, profile.n_angles)
    distance = min_distance + (ring + rng.random(n_users)) * ring_width
    azimuth_deg = (sector + rng.random(n_users)) * angular_step - 180.0
    return distance, np.deg2rad(azimuth_deg)


def draw_channel(profile: SiteProfile,
                 config: SystemConfig,
                 rng: np.random.Generator,
                 geom: ArrayGeometry = None,
                 return_type: str = "channel"):
    """
    Name
    ----
    draw_channel

    Description
    -----------
    Draws one channel matrix for `config.n_users` users of a site. A user is line-of-sight
    with probability `los_probability`; its column is then the Rician mix of a LOS steering
    vector and scattered paths, otherwise scattered paths only. The scattered part sums a
    uniformly drawn number of paths with complex Gaussian gains around the user direction.
    Each column is scaled by the path loss (d / d_min)^(-exponent), so the mean entry power of
    a user is its path-loss gain divided by the number of antennas.

    Parameters
    ----------
    profile : SiteProfile
        Site distribution parameters.
    config : SystemConfig
        System dimensions.
    rng : numpy.random.Generator
        Random source; the draw is a deterministic function of its state.
    geom : ArrayGeometry, optional
        Array geometry. Defaults to the most square factorisation of `config.n_tx`.
    return_type : str
        - "channel" (default): the channel matrix only.
        - "sample": a dict with keys `H`, `los`, `distance`, `azimuth`.

    Returns
    -------
    numpy.ndarray or dict
        Complex (n_tx, n_users) channel matrix, or the dict described above.
    """
    if geom is None:
        geom = ArrayGeometry.for_antennas(config.n_tx)
    if geom.n_elements != config.n_tx:
        raise ConfigurationError(f"Error: array has {geom.n_elements} elements but n_tx = {config.n_tx}")

    n_users = config.n_users
    distance, azimuth = draw_users(profile, n_users, rng)
    elevation = -np.arctan2(profile.bs_height_m, distance)
    gain = (distance / profile.user_ring[0]) ** (-profile.pathloss_exponent)
    los = rng.random(n_users) < profile.los_probability
    los_share, scattered_share = profile.rician_shares()
    spread = np.deg2rad(profile.angle_spread_deg)
    low, high = profile.path_count_range

    H = np.zeros((config.n_tx, n_users), dtype=np.complex128)
    for k in range(n_users):
        n_paths = int(rng.integers(low, high + 1))
        path_gains = (rng.standard_normal(n_paths) + 1j * rng.standard_normal(n_paths)) / np.sqrt(2.0)
        path_azimuth = azimuth[k] + spread * rng.standard_normal(n_paths)
        path_elevation = elevation[k] + 0.5 * spread * rng.standard_normal(n_paths)
        los_phase = np.exp(2j * np.pi * rng.random())

        scattered = steering_vectors(geom, path_azimuth, path_elevation) @ path_gains / np.sqrt(n_paths)
        if los[k]:
            direct = los_phase * steering_vectors(geom, azimuth[k], elevation[k])[:, 0]
            column = np.sqrt(los_share) * direct + np.sqrt(scattered_share) * scattered
        else:
            column = scattered
        H[:, k] = np.sqrt(gain[k]) * column

    if return_type == "channel":
        return H
    elif return_type == "sample":
        return {"H": H, "los": los, "distance": distance, "azimuth": azimuth}
    else:
        raise ConfigurationError("Error: `return_type` must be 'channel' or 'sample'")


def noise_for_snr(snr_db: float, p_max: float):
    """
    Noise variance for an average SNR of `snr_db`, defined as p_max / sigma2 on channels
    normalised to unit mean entry power.

    Example
    -------
    >>> noise_for_snr(40, 1.0)
    0.0001
    """
    check_positive(p_max, "p_max")
    return float(p_max / 10.0 ** (snr_db / 10.0))


def permute_users(H, perm):
    """Reorders the user columns of `H`: column k of the result is column perm[k] of `H`."""
    H = check_channel(H)
    perm = check_permutation(perm, H.shape[-1])
    return H[..., perm]


def augment_permutations(H, n_permutations: int, rng: np.random.Generator):
    """
    Name
    ----
    augment_permutations

    Description
    -----------
    Enlarges a batch of channels with `n_permutations` user-permuted copies of every sample.
    The originals come first, followed by one block of permuted copies per round, so the
    returned batch has batch * (1 + n_permutations) samples.

    Parameters
    ----------
    H : numpy.ndarray
        Complex channel stack (batch, n_tx, n_users).
    n_permutations : int
        Number of permuted copies per sample.
    rng : numpy.random.Generator
        Random source for the permutations.

    Returns
    -------
    numpy.ndarray
        The augmented stack.
    """
    H = check_channel(H)
    if H.ndim != 3:
        raise ConfigurationError("Error: augment_permutations expects a stack of channels")
    if int(n_permutations) < 0:
        raise ConfigurationError("Error: n_permutations must be >= 0")
    blocks = [H]
    for _ in range(int(n_permutations)):
        perms = np.argsort(rng.random((H.shape[0], H.shape[2])), axis=1)
        blocks.append(np.take_along_axis(H, perms[:, None, :], axis=2))
    return np.concatenate(blocks, axis=0)
