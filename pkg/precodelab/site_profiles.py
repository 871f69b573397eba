# --------------------------------------------------------------------------------------------
# Copyright (c) Microsoft Corporation. All rights reserved.
# Licensed under the MIT License. See LICENSE.txt in the project root for license information.
# --------------------------------------------------------------------------------------------
"""
Named deployment sites shipped with the package and the TOML profile file format.

Seven training sites cover a range of line-of-sight shares and scattering conditions; three
held-out sites (`ericsson`, `decarie`, `sainte-catherine`) are reserved for zero-shot and
fine-tuning evaluation with 75%, 50% and 25% line-of-sight users respectively.
"""
import os
from dataclasses import asdict, fields

import toml

from precodelab.channel_sim import SiteProfile
from precodelab.check_inputs import ConfigurationError, DatasetIOError

__all__ = [
    "TRAINING_SITES",
    "HELD_OUT_SITES",
    "default_site_profiles",
    "get_site_profile",
    "load_site_profiles",
    "dump_site_profiles",
]

TRAINING_SITES = ["universite", "parc", "rachel", "cathcart", "old-port", "sherbrooke", "okapark"]
HELD_OUT_SITES = ["ericsson", "decarie", "sainte-catherine"]

# site_id: (los_probability, path_count_range, angle_spread_deg, rician_k_db, pathloss_exponent, description)
_DEFAULTS = {
    "universite": (0.60, (3, 8), 12.0, 6.0, 3.0, "campus avenue with mid-rise buildings"),
    "parc": (0.85, (2, 4), 6.0, 9.0, 2.4, "open park frontage"),
    "rachel": (0.40, (4, 10), 15.0, 4.0, 3.3, "narrow residential street"),
    "cathcart": (0.30, (6, 12), 18.0, 3.0, 3.6, "dense downtown block"),
    "old-port": (0.70, (2, 6), 8.0, 8.0, 2.7, "waterfront with low buildings"),
    "sherbrooke": (0.50, (4, 8), 12.0, 5.0, 3.1, "wide arterial with tall buildings"),
    "okapark": (0.90, (1, 3), 5.0, 10.0, 2.2, "stadium parking lot"),
    "ericsson": (0.75, (2, 6), 9.0, 7.0, 2.8, "office park, mostly line-of-sight users"),
    "decarie": (0.50, (3, 9), 13.0, 5.0, 3.2, "highway interchange, mixed users"),
    "sainte-catherine": (0.25, (5, 12), 17.0, 3.0, 3.5, "commercial street, mostly non-line-of-sight users"),
}


def default_site_profiles():
    """
    Name
    ----
    default_site_profiles

    Description
    -----------
    Builds the ten default site profiles. Each site gets its own seed (its position in the
    list) so that the datasets of two sites never share a random stream.

    Returns
    -------
    dict
        Mapping site_id -> SiteProfile, training sites first.
    """
    profiles = {}
    for seed, site_id in enumerate(TRAINING_SITES + HELD_OUT_SITES):
        los, paths, spread, k_db, exponent, description = _DEFAULTS[site_id]
        profiles[site_id] = SiteProfile(site_id=site_id,
                                        los_probability=los,
                                        path_count_range=paths,
                                        angle_spread_deg=spread,
                                        rician_k_db=k_db,
                                        pathloss_exponent=exponent,
                                        seed=1000 + seed,
                                        description=description)
    return profiles


def get_site_profile(site_id: str, profiles: dict = None):
    """Looks up a site by name in `profiles` (the defaults when omitted)."""
    profiles = default_site_profiles() if profiles is None else profiles
    if site_id not in profiles:
        raise ConfigurationError(f"Error: unknown site '{site_id}'. Available sites: {', '.join(profiles)}")
    return profiles[site_id]


def _profile_from_table(site_id, table):
    known = {f.name for f in fields(SiteProfile)} - {"site_id"}
    unknown = set(table) - known
    if unknown:
        raise ConfigurationError(f"Error: unknown keys {sorted(unknown)} in profile of site '{site_id}'")
    values = dict(table)
    for key in ("path_count_range", "user_ring"):
        if key in values:
            values[key] = tuple(values[key])
    return SiteProfile(site_id=site_id, **values)


def load_site_profiles(path: str):
    """
    Name
    ----
    load_site_profiles

    Description
    -----------
    Reads site profiles from a TOML file with one table per site, e.g.

        [ericsson]
        los_probability = 0.75
        path_count_range = [2, 6]
        seed = 7

    Keys left out take the `SiteProfile` defaults; unknown keys are rejected.

    Parameters
    ----------
    path : str
        Path of the TOML file.

    Returns
    -------
    dict
        Mapping site_id -> SiteProfile in file order.
    """
    if not os.path.isfile(path):
        raise DatasetIOError(f"Error: profile file {path} does not exist")
    try:
        document = toml.load(path)
    except toml.TomlDecodeError as error:
        raise ConfigurationError(f"Error: could not parse profile file {path}: {error}") from error

    profiles = {}
    for site_id, table in document.items():
        if not isinstance(table, dict):
            raise ConfigurationError(f"Error: entry '{site_id}' of {path} must be a table")
        profiles[site_id] = _profile_from_table(site_id, table)
    return profiles


def dump_site_profiles(profiles, path: str):
    """Writes profiles (a dict or a list of SiteProfile) to a TOML file readable by `load_site_profiles`."""
    if isinstance(profiles, dict):
        profiles = list(profiles.values())
    document = {}
    for profile in profiles:
        table = asdict(profile)
        table.pop("site_id")
        table["path_count_range"] = list(table["path_count_range"])
        table["user_ring"] = list(table["user_ring"])
        document[profile.site_id] = table
    try:
        with open(path, "w", encoding="utf-8") as handle:
            toml.dump(document, handle)
    except OSError as error:
        raise DatasetIOError(f"Error: could not write profile file {path}: {error}") from error
    return path
