# --------------------------------------------------------------------------------------------
# Copyright (c) Microsoft Corporation. All rights reserved.
# Licensed under the MIT License. See LICENSE.txt in the project root for license information.
# --------------------------------------------------------------------------------------------
"""
Named parameter groups for the precoding network, their initialisation, the plain gradient
step and the checkpoint file format.

A checkpoint holds an 8-byte magic, a little-endian uint32 header length, a JSON header (groups
with the name, kind and shape of every tensor in declaration order, free-form metadata and the
sha256 of the payload) and the payload: every tensor as little-endian float64, row-major.
"""
import hashlib
import json
import os
import struct

import numpy as np

from precodelab.autodiff import variable
from precodelab.check_inputs import ConfigurationError, DatasetIOError

__all__ = [
    "ParameterSet",
    "glorot_uniform",
    "sgd_step",
    "save_checkpoint",
    "load_checkpoint",
]

CHECKPOINT_MAGIC = b"PCLCKPT1"
CHECKPOINT_VERSION = 1


class ParameterSet:
    """
    Name
    ----
    ParameterSet

    Description
    -----------
    Ordered collection of trainable arrays (`params`) plus non-trainable arrays (`buffers`,
    the batch-norm running statistics) belonging to one group of the model. `snapshot` and
    `restore` copy every array, so a restore reproduces the snapshot bit for bit.

    Parameters
    ----------
    group : str
        Group name ("feature", "teacher" or "student").
    params : dict, optional
        Mapping name -> array of trainable values.
    buffers : dict, optional
        Mapping name -> array of running statistics.

    Example
    -------
    >>> ps = ParameterSet("student", {"fc1.weight": np.zeros((4, 2))})
    >>> saved = ps.snapshot()
    >>> ps.restore(saved)
    """

    def __init__(self, group: str, params: dict = None, buffers: dict = None):
        self.group = group
        self.params = {name: np.array(value, dtype=float) for name, value in (params or {}).items()}
        self.buffers = {name: np.array(value, dtype=float) for name, value in (buffers or {}).items()}

    def __len__(self):
        return len(self.params)

    def __getitem__(self, name):
        return self.params[name]

    def __contains__(self, name):
        return name in self.params

    def __repr__(self):
        return f"ParameterSet('{self.group}', {len(self.params)} params, {self.size()} values)"

    @property
    def names(self):
        return list(self.params)

    def size(self):
        return int(np.sum([value.size for value in self.params.values()]))

    def bind(self):
        """Fresh leaf nodes holding copies of the current values, one per parameter."""
        return {name: variable(value, name=f"{self.group}.{name}") for name, value in self.params.items()}

    def snapshot(self):
        return ParameterSet(self.group, self.params, self.buffers)

    copy = snapshot

    def restore(self, snapshot):
        if snapshot.names != self.names or list(snapshot.buffers) != list(self.buffers):
            raise ConfigurationError(f"Error: snapshot does not match parameter group '{self.group}'")
        for name, value in snapshot.params.items():
            self.params[name] = value.copy()
        for name, value in snapshot.buffers.items():
            self.buffers[name] = value.copy()

    def zeros(self):
        return {name: np.zeros_like(value) for name, value in self.params.items()}

    def check_aligned(self, grads):
        """Raises `ConfigurationError` unless `grads` has exactly this group's names and shapes."""
        if set(grads) != set(self.names):
            raise ConfigurationError(f"Error: gradient names do not match parameter group '{self.group}'")
        for name, value in self.params.items():
            if np.shape(grads[name]) != value.shape:
                raise ConfigurationError(f"Error: gradient of {self.group}.{name} has shape "
                                         f"{np.shape(grads[name])}, expected {value.shape}")

    def apply_buffer_updates(self, updates, momentum: float = 0.9):
        """
        Folds batch statistics recorded by training-mode batch norm into the running
        statistics, in the order given: running = momentum * running + (1 - momentum) * batch.
        Only updates whose key starts with "<group>." are used.
        """
        prefix = f"{self.group}."
        for key, batch_mean, batch_var in updates:
            if not key.startswith(prefix):
                continue
            layer = key[len(prefix):]
            self.buffers[f"{layer}.running_mean"] = momentum * self.buffers[f"{layer}.running_mean"] + (1.0 - momentum) * batch_mean
            self.buffers[f"{layer}.running_var"] = momentum * self.buffers[f"{layer}.running_var"] + (1.0 - momentum) * batch_var

    def checksum(self):
        """sha256 over names and values of params and buffers."""
        digest = hashlib.sha256(self.group.encode("utf-8"))
        for kind, table in (("param", self.params), ("buffer", self.buffers)):
            for name, value in table.items():
                digest.update(f"{kind}:{name}:{value.shape}".encode("utf-8"))
                digest.update(np.ascontiguousarray(value, dtype="<f8").tobytes())
        return digest.hexdigest()


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int):
    """Uniform draw in +/- sqrt(6 / (fan_in + fan_out))."""
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def sgd_step(params: ParameterSet, grads: dict, lr: float):
    """
    Name
    ----
    sgd_step

    Description
    -----------
    Plain gradient step p <- p - lr * g for every parameter. Returns a new ParameterSet;
    buffers are carried over unchanged.

    Parameters
    ----------
    params : ParameterSet
        Current parameters.
    grads : dict
        Mapping name -> gradient, aligned with `params`.
    lr : float
        Step size (>= 0).

    Returns
    -------
    ParameterSet

    Example
    -------
    >>> sgd_step(ParameterSet("g", {"p": 1.0}), {"p": 2.0}, 0.1)["p"]
    array(0.8)
    """
    if lr is None or not np.isfinite(lr) or lr < 0:
        raise ConfigurationError(f"Error: learning rate must be a finite number >= 0, got {lr}")
    params.check_aligned(grads)
    updated = {name: value - lr * np.asarray(grads[name], dtype=float) for name, value in params.params.items()}
    return ParameterSet(params.group, updated, params.buffers)


def save_checkpoint(path: str, groups, metadata: dict = None, verbose: bool = False):
    """
    Writes parameter groups (a list of ParameterSet) with optional JSON-serialisable
    `metadata`. Returns the payload sha256.
    """
    entries = []
    blocks = []
    for params in groups:
        tensors = []
        for kind, table in (("param", params.params), ("buffer", params.buffers)):
            for name, value in table.items():
                tensors.append({"name": name, "kind": kind, "shape": list(value.shape)})
                blocks.append(np.ascontiguousarray(value, dtype="<f8").tobytes())
        entries.append({"group": params.group, "tensors": tensors})

    payload = b"".join(blocks)
    checksum = hashlib.sha256(payload).hexdigest()
    header = {
        "version": CHECKPOINT_VERSION,
        "groups": entries,
        "metadata": metadata or {},
        "sha256": checksum,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    try:
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, "wb") as handle:
            handle.write(CHECKPOINT_MAGIC + struct.pack("<I", len(header_bytes)) + header_bytes + payload)
    except OSError as error:
        raise DatasetIOError(f"Error: could not write checkpoint {path}: {error}") from error
    if verbose:
        print(f"Exporting to {path}...")
    return checksum


def load_checkpoint(path: str):
    """
    Name
    ----
    load_checkpoint

    Description
    -----------
    Reads a checkpoint written by `save_checkpoint` and verifies its content checksum.

    Parameters
    ----------
    path : str
        Checkpoint file.

    Returns
    -------
    tuple
        (groups, metadata): a dict group -> ParameterSet in file order and the metadata dict.

    Raises
    ------
    DatasetIOError
        Missing file, bad magic, truncated payload or checksum mismatch.
    """
    if not os.path.isfile(path):
        raise DatasetIOError(f"Error: checkpoint {path} does not exist")
    with open(path, "rb") as handle:
        content = handle.read()
    if content[:len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise DatasetIOError(f"Error: {path} is not a precodelab checkpoint")
    try:
        offset = len(CHECKPOINT_MAGIC)
        (header_length,) = struct.unpack_from("<I", content, offset)
        offset += 4
        header = json.loads(content[offset:offset + header_length].decode("utf-8"))
        offset += header_length
    except (struct.error, ValueError) as error:
        raise DatasetIOError(f"Error: corrupt checkpoint header in {path}") from error
    if header.get("version") != CHECKPOINT_VERSION:
        raise DatasetIOError(f"Error: unsupported checkpoint version {header.get('version')} in {path}")

    payload = content[offset:]
    if hashlib.sha256(payload).hexdigest() != header["sha256"]:
        raise DatasetIOError(f"Error: checksum mismatch in checkpoint {path}")

    groups = {}
    position = 0
    for entry in header["groups"]:
        params, buffers = {}, {}
        for tensor in entry["tensors"]:
            shape = tuple(tensor["shape"])
            count = int(np.prod(shape)) if shape else 1
            if position + 8 * count > len(payload):
                raise DatasetIOError(f"Error: checkpoint {path} is truncated")
            value = np.frombuffer(payload, dtype="<f8", count=count, offset=position).reshape(shape).astype(float)
            position += 8 * count
            (params if tensor["kind"] == "param" else buffers)[tensor["name"]] = value
        groups[entry["group"]] = ParameterSet(entry["group"], params, buffers)
    if position != len(payload):
        raise DatasetIOError(f"Error: checkpoint {path} has trailing bytes")
    return groups, header["metadata"]
