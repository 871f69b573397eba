# --------------------------------------------------------------------------------------------
# Copyright (c) Microsoft Corporation. All rights reserved.
# Licensed under the MIT License. See LICENSE.txt in the project root for license information.
# --------------------------------------------------------------------------------------------
"""
The teacher-student precoding network.

A shared convolutional feature extractor reads the channel as a two-channel image (real and
imaginary parts). The teacher maps the features to the WMMSE variables (u, v, mu) and
rebuilds a precoder with one differentiable WMMSE precoder update; the student maps the same
features straight to a precoder through fully connected layers and is the only part kept at
deployment. Hidden layers are Linear -> BatchNorm -> ReLU -> Dropout.
"""
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from precodelab import autodiff as ad
from precodelab.autodiff import ComplexPair, Mode
from precodelab.check_inputs import ConfigurationError, check_channel, check_positive, warn_precoding
from precodelab.parameters import ParameterSet, glorot_uniform
from precodelab.precoding import SystemConfig, batch_sum_rate

__all__ = [
    "ModelConfig",
    "ModelParameters",
    "ForwardPass",
    "init_model",
    "channel_input",
    "feature_forward",
    "teacher_forward",
    "reconstruct_precoder",
    "student_forward",
    "sum_rate_node",
    "teacher_loss",
    "student_loss",
    "papp_forward",
    "predict_precoder",
]


@dataclass(frozen=True)
class ModelConfig:
    """
    Network sizes and layer settings. `u_head_scale` of None means 1 / n_tx.
    """
    c_in: int = 2
    c_out: int = 32
    kernel: int = 3
    student_fc: tuple = (64, 64, 512)
    teacher_trunk: tuple = (512, 512)
    dropout: float = 0.15
    bn_momentum: float = 0.9
    bn_eps: float = 1e-8
    u_head_scale: float = None

    def __post_init__(self):
        if self.c_in != 2:
            raise ConfigurationError("Error: the network reads real and imaginary parts, so c_in must be 2")
        if int(self.c_out) < 1 or int(self.kernel) < 1 or self.kernel % 2 == 0:
            raise ConfigurationError("Error: c_out must be positive and kernel a positive odd number")
        if len(self.student_fc) != 3 or any(int(size) < 1 for size in self.student_fc):
            raise ConfigurationError("Error: student_fc must list three positive layer sizes")
        if len(self.teacher_trunk) < 1 or any(int(size) < 1 for size in self.teacher_trunk):
            raise ConfigurationError("Error: teacher_trunk must list positive layer sizes")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigurationError("Error: dropout must lie in [0, 1)")
        if not 0.0 <= self.bn_momentum < 1.0:
            raise ConfigurationError("Error: bn_momentum must lie in [0, 1)")
        check_positive(self.bn_eps, "bn_eps")

    def u_scale(self, system: SystemConfig):
        return 1.0 / system.n_tx if self.u_head_scale is None else float(self.u_head_scale)

    def feature_size(self, system: SystemConfig):
        return self.c_out * system.n_tx * system.n_users


@dataclass
class ModelParameters:
    """The three disjoint parameter groups: feature extractor, teacher and student."""
    feature: ParameterSet
    teacher: ParameterSet
    student: ParameterSet

    def groups(self):
        return [self.feature, self.teacher, self.student]

    def group(self, name: str):
        if name not in ("feature", "teacher", "student"):
            raise ConfigurationError(f"Error: unknown parameter group '{name}'")
        return getattr(self, name)

    def snapshot(self):
        return ModelParameters(self.feature.snapshot(), self.teacher.snapshot(), self.student.snapshot())

    def restore(self, snapshot):
        for current, saved in zip(self.groups(), snapshot.groups()):
            current.restore(saved)

    def apply_buffer_updates(self, updates, momentum: float):
        for params in self.groups():
            params.apply_buffer_updates(updates, momentum)

    def checksum(self):
        return ":".join(params.checksum() for params in self.groups())

    @classmethod
    def from_groups(cls, groups: dict):
        missing = {"feature", "teacher", "student"} - set(groups)
        if missing:
            raise ConfigurationError(f"Error: checkpoint lacks parameter groups {sorted(missing)}")
        return cls(groups["feature"], groups["teacher"], groups["student"])


class ForwardPass(NamedTuple):
    """Everything one forward pass produces; `nodes` maps group -> leaf nodes."""
    nodes: dict
    features: ad.Node
    u: ComplexPair
    v: ad.Node
    mu: ad.Node
    W_T: ComplexPair
    W: ComplexPair
    degenerate: np.ndarray


def _dense(rng, name, fan_in, fan_out, params, buffers=None):
    params[f"{name}.weight"] = glorot_uniform(rng, (fan_in, fan_out), fan_in, fan_out)
    params[f"{name}.bias"] = np.zeros(fan_out)
    if buffers is not None:
        params[f"{name}.gamma"] = np.ones(fan_out)
        params[f"{name}.beta"] = np.zeros(fan_out)
        buffers[f"{name}.running_mean"] = np.zeros(fan_out)
        buffers[f"{name}.running_var"] = np.ones(fan_out)


def init_model(config: ModelConfig, system: SystemConfig, seed: int = 0):
    """
    Name
    ----
    init_model

    Description
    -----------
    Builds freshly initialised parameters: weights uniform in +/- sqrt(6 / (fan_in + fan_out)),
    biases zero, batch-norm scale one and shift zero, running mean zero and variance one.
    Each group draws from its own child of `SeedSequence(seed)`.

    Parameters
    ----------
    config : ModelConfig
        Network sizes.
    system : SystemConfig
        Antenna and user counts.
    seed : int
        Initialisation seed.

    Returns
    -------
    ModelParameters
    """
    feature_rng, teacher_rng, student_rng = (np.random.default_rng(child)
                                             for child in np.random.SeedSequence(seed).spawn(3))
    k, n_tx, n_users = config.kernel, system.n_tx, system.n_users

    feature = {
        "conv.weight": glorot_uniform(feature_rng, (config.c_out, config.c_in, k, k),
                                      config.c_in * k * k, config.c_out * k * k),
        "conv.bias": np.zeros(config.c_out),
        "bn.gamma": np.ones(config.c_out),
        "bn.beta": np.zeros(config.c_out),
    }
    feature_buffers = {"bn.running_mean": np.zeros(config.c_out), "bn.running_var": np.ones(config.c_out)}

    teacher, teacher_buffers = {}, {}
    width = config.feature_size(system)
    for i, size in enumerate(config.teacher_trunk):
        _dense(teacher_rng, f"trunk{i}", width, size, teacher, teacher_buffers)
        width = size
    _dense(teacher_rng, "head_v", width, n_users, teacher)
    _dense(teacher_rng, "head_u", width, 2 * n_users, teacher)
    _dense(teacher_rng, "head_mu", width, 1, teacher)

    student, student_buffers = {}, {}
    width = config.feature_size(system)
    for i, size in enumerate(config.student_fc):
        _dense(student_rng, f"fc{i + 1}", width, size, student, student_buffers)
        width = size
    _dense(student_rng, "fc4r", width, n_tx * n_users, student)
    _dense(student_rng, "fc4i", width, n_tx * n_users, student)

    return ModelParameters(ParameterSet("feature", feature, feature_buffers),
                           ParameterSet("teacher", teacher, teacher_buffers),
                           ParameterSet("student", student, student_buffers))


def _hidden(x, nodes, params: ParameterSet, layer: str, mode: Mode, eps: float):
    h = ad.matmul(x, nodes[f"{layer}.weight"]) + nodes[f"{layer}.bias"]
    h = ad.batch_norm(h, nodes[f"{layer}.gamma"], nodes[f"{layer}.beta"],
                      params.buffers[f"{layer}.running_mean"], params.buffers[f"{layer}.running_var"],
                      mode, key=f"{params.group}.{layer}", eps=eps)
    return ad.dropout(ad.relu(h), mode, key=f"{params.group}.{layer}")


def _linear(x, nodes, layer: str):
    return ad.matmul(x, nodes[f"{layer}.weight"]) + nodes[f"{layer}.bias"]


def _batched(H, system: SystemConfig):
    H = check_channel(H, n_tx=system.n_tx, n_users=system.n_users)
    return H[None] if H.ndim == 2 else H


def channel_input(H, system: SystemConfig):
    """Stacks real and imaginary parts into a (batch, 2, n_tx, n_users) array."""
    H = _batched(H, system)
    return np.stack([H.real, H.imag], axis=1)


def feature_forward(H, feature: ParameterSet, mode: Mode, config: ModelConfig, system: SystemConfig, nodes=None):
    """
    Name
    ----
    feature_forward

    Description
    -----------
    Shared feature extractor: "same" convolution over the (real, imag) channel image, batch
    norm and ReLU.

    Parameters
    ----------
    H : numpy.ndarray
        Channel (n_tx, n_users) or stack (batch, n_tx, n_users).
    feature : ParameterSet
        Feature-extractor parameters.
    mode : Mode
        Training or evaluation settings.
    config : ModelConfig
        Network sizes.
    system : SystemConfig
        Expected dimensions of `H`.
    nodes : dict, optional
        Leaf nodes bound from `feature`; bound afresh when omitted.

    Returns
    -------
    Node of shape (batch, c_out, n_tx, n_users).
    """
    nodes = feature.bind() if nodes is None else nodes
    x = ad.constant(channel_input(H, system))
    h = ad.conv2d(x, nodes["conv.weight"], nodes["conv.bias"])
    h = ad.batch_norm(h, nodes["bn.gamma"], nodes["bn.beta"],
                      feature.buffers["bn.running_mean"], feature.buffers["bn.running_var"],
                      mode, key="feature.bn", eps=config.bn_eps)
    return ad.relu(h)


def teacher_forward(features, teacher: ParameterSet, mode: Mode, config: ModelConfig, system: SystemConfig, nodes=None):
    """
    Name
    ----
    teacher_forward

    Description
    -----------
    Teacher trunk and heads. The v-head ends in softplus + 1 (so v >= 1), the u-head is
    linear and scaled by `config.u_scale` with the first n_users outputs read as real parts
    and the rest as imaginary parts, and the mu-head ends in softplus (so mu >= 0).

    Returns
    -------
    tuple
        (u, v, mu): ComplexPair (batch, n_users), Node (batch, n_users), Node (batch,).
    """
    nodes = teacher.bind() if nodes is None else nodes
    h = ad.flatten(features)
    for i in range(len(config.teacher_trunk)):
        h = _hidden(h, nodes, teacher, f"trunk{i}", mode, config.bn_eps)

    n_users = system.n_users
    v = ad.softplus(_linear(h, nodes, "head_v")) + 1.0
    raw_u = _linear(h, nodes, "head_u") * config.u_scale(system)
    u = ComplexPair(ad.matmul(raw_u, ad.constant(np.eye(2 * n_users, n_users))),
                    ad.matmul(raw_u, ad.constant(np.eye(2 * n_users, n_users, k=-n_users))))
    mu = ad.reshape(ad.softplus(_linear(h, nodes, "head_mu")), (h.shape[0],))
    return u, v, mu


def _as_pair(z, batch):
    if isinstance(z, ComplexPair):
        return z
    z = np.asarray(z, dtype=np.complex128)
    if z.ndim == 1:
        z = np.broadcast_to(z, (batch,) + z.shape)
    return ComplexPair.from_complex(z)


def _as_batched_node(x, shape):
    if isinstance(x, ad.Node):
        return x
    return ad.constant(np.broadcast_to(np.asarray(x, dtype=float), shape).copy())


def reconstruct_precoder(H, u, v, mu, p_max: float, on_failure: str = "zero"):
    """
    Name
    ----
    reconstruct_precoder

    Description
    -----------
    One differentiable WMMSE precoder update:
    w_k = conj(u_k) v_k A^{-1} h_k with A = sum_j v_j |u_j|^2 h_j h_j^H + mu I, solved by
    `hermitian_solve`, then scaled down to the power budget when it exceeds `p_max`.
    Samples whose A cannot be factorised (u = 0 together with mu = 0) get a zero precoder
    and are flagged.

    Parameters
    ----------
    H : numpy.ndarray
        Channel (n_tx, n_users) or stack (batch, n_tx, n_users).
    u : ComplexPair or numpy.ndarray
        Receiver gains (batch, n_users) or (n_users,).
    v : Node or numpy.ndarray
        Weights (batch, n_users) or (n_users,).
    mu : Node or float or numpy.ndarray
        Multiplier per sample.
    p_max : float
        Power budget.
    on_failure : str
        "zero" (default) or "raise", see `hermitian_solve`.

    Returns
    -------
    tuple
        (W, degenerate): a ComplexPair (batch, n_tx, n_users) and a boolean array (batch,).

    Example
    -------
    >>> W, flags = reconstruct_precoder(H, state.u, state.v, state.mu, p_max = 1.0)
    >>> W.value[0]
    """
    check_positive(p_max, "p_max")
    H = check_channel(H)
    H = H[None] if H.ndim == 2 else H
    batch, n_tx, n_users = H.shape

    u = _as_pair(u, batch)
    v = _as_batched_node(v, (batch, n_users))
    mu = _as_batched_node(mu, (batch,))
    if np.any(v.value < 0) or np.any(mu.value < 0):
        raise ConfigurationError("Error: reconstruct_precoder needs v >= 0 and mu >= 0")

    channel = ComplexPair.from_complex(H)
    weights = ad.reshape(v * (ad.square(u.re) + ad.square(u.im)), (batch, 1, n_users))
    scaled = ComplexPair(channel.re * weights, channel.im * weights)
    A = ad.complex_matmul(scaled, ad.complex_hermitian(channel))
    A = ComplexPair(A.re + ad.reshape(mu, (batch, 1, 1)) * ad.constant(np.eye(n_tx)), A.im)

    coefficient = ComplexPair(ad.reshape(u.re * v, (batch, 1, n_users)),
                              ad.reshape(-(u.im * v), (batch, 1, n_users)))
    rhs = ad.complex_multiply(channel, coefficient)
    X, degenerate = ad.hermitian_solve(A, rhs, on_failure=on_failure)
    if np.any(degenerate):
        warn_precoding(f"{int(np.sum(degenerate))} teacher precoder(s) degenerate; returned as zero")

    power = ad.sum(ad.square(X.re) + ad.square(X.im), axis=(1, 2))
    scale = ad.reshape(ad.power_scale(power, p_max, strict=False), (batch, 1, 1))
    return ComplexPair(X.re * scale, X.im * scale), degenerate


def student_forward(features, student: ParameterSet, mode: Mode, config: ModelConfig, system: SystemConfig,
                    nodes=None):
    """
    Name
    ----
    student_forward

    Description
    -----------
    Student precoder: FC1 -> FC2 -> FC3 hidden layers, then the FC4r / FC4i heads reshaped
    into the real and imaginary parts of an (n_tx, n_users) matrix and normalised to total
    power exactly `system.p_max`.

    Returns
    -------
    ComplexPair of shape (batch, n_tx, n_users).

    Raises
    ------
    DegenerateInputError
        When a raw output is all zero.
    """
    nodes = student.bind() if nodes is None else nodes
    h = ad.flatten(features)
    for i in range(len(config.student_fc)):
        h = _hidden(h, nodes, student, f"fc{i + 1}", mode, config.bn_eps)

    shape = (h.shape[0], system.n_tx, system.n_users)
    re = ad.reshape(_linear(h, nodes, "fc4r"), shape)
    im = ad.reshape(_linear(h, nodes, "fc4i"), shape)
    power = ad.sum(ad.square(re) + ad.square(im), axis=(1, 2))
    scale = ad.reshape(ad.power_scale(power, system.p_max, strict=True), (shape[0], 1, 1))
    return ComplexPair(re * scale, im * scale)


def sum_rate_node(H, W: ComplexPair, sigma2: float):
    """Per-sample sum rates (batch,) of a precoder node, differentiable with respect to W."""
    check_positive(sigma2, "sigma2")
    H = check_channel(H)
    H = H[None] if H.ndim == 2 else H
    n_users = H.shape[-1]

    gains = ad.complex_matmul(ad.complex_hermitian(ComplexPair.from_complex(H)), W)
    power = ad.square(gains.re) + ad.square(gains.im)
    received = ad.sum(power, axis=-1) + sigma2
    interference = ad.sum(power * ad.constant(1.0 - np.eye(n_users)), axis=-1) + sigma2
    return ad.sum(ad.log(received) - ad.log(interference), axis=-1) * (1.0 / math.log(2.0))


def teacher_loss(H, W_T: ComplexPair, sigma2: float):
    """Batch mean of -R(W_T)."""
    return -ad.mean(sum_rate_node(H, W_T, sigma2))


def student_loss(W: ComplexPair, W_T, H, sigma2: float, r_wmmse, lam: float = 0.1, threshold: float = 0.8):
    """
    Name
    ----
    student_loss

    Description
    -----------
    Distillation loss of the student. Per sample,
    L_MSE = (1 / (n_tx n_users)) sum_ij |W_T,ij - W_ij|^2, and the loss is L_MSE when the
    teacher's rate R(W_T) is below `threshold` * r_wmmse, else L_MSE - lam * R(W). The
    teacher precoder is a fixed target; the branch depends on W_T and r_wmmse only. The
    batch loss is the mean over samples.

    Parameters
    ----------
    W : ComplexPair
        Student precoder (batch, n_tx, n_users).
    W_T : ComplexPair or numpy.ndarray
        Teacher precoder; its value is used, never its graph.
    H : numpy.ndarray
        Channels.
    sigma2 : float
        Noise variance.
    r_wmmse : float or numpy.ndarray
        WMMSE reference rate per sample (>= 0).
    lam : float
        Weight of the rate term. Defaults to 0.1.
    threshold : float
        Rate ratio that switches the rate term on. Defaults to 0.8.

    Returns
    -------
    Node (scalar).
    """
    H = check_channel(H)
    H = H[None] if H.ndim == 2 else H
    batch, n_tx, n_users = H.shape
    r_wmmse = np.broadcast_to(np.asarray(r_wmmse, dtype=float), (batch,))
    if np.any(r_wmmse < 0) or not np.all(np.isfinite(r_wmmse)):
        raise ConfigurationError("Error: r_wmmse must be finite and >= 0")

    target = W_T.value if isinstance(W_T, ComplexPair) else np.asarray(W_T, dtype=np.complex128)
    target = target.reshape(W.re.shape)
    diff_re = W.re - ad.constant(target.real)
    diff_im = W.im - ad.constant(target.imag)
    mse = ad.sum(ad.square(diff_re) + ad.square(diff_im), axis=(1, 2)) * (1.0 / (n_tx * n_users))

    teacher_rate = batch_sum_rate(H, target, sigma2)
    rate_on = (teacher_rate >= threshold * r_wmmse).astype(float)
    if not np.any(rate_on):
        return ad.mean(mse)
    return ad.mean(mse - ad.constant(lam * rate_on) * sum_rate_node(H, W, sigma2))


def papp_forward(params: ModelParameters, H, mode: Mode, config: ModelConfig, system: SystemConfig,
                 on_failure: str = "zero"):
    """
    Runs feature extractor, teacher with reconstruction, and student on one batch. The
    student reads detached features, so student losses never reach the feature extractor.
    """
    nodes = {params.feature.group: params.feature.bind(),
             params.teacher.group: params.teacher.bind(),
             params.student.group: params.student.bind()}
    features = feature_forward(H, params.feature, mode, config, system, nodes["feature"])
    u, v, mu = teacher_forward(features, params.teacher, mode, config, system, nodes["teacher"])
    W_T, degenerate = reconstruct_precoder(H, u, v, mu, system.p_max, on_failure=on_failure)
    W = student_forward(ad.detach(features), params.student, mode, config, system, nodes["student"])
    return ForwardPass(nodes, features, u, v, mu, W_T, W, degenerate)


def predict_precoder(params: ModelParameters, H, config: ModelConfig, system: SystemConfig):
    """Deployed student precoder in evaluation mode, as a complex array (batch, n_tx, n_users)."""
    mode = Mode.eval()
    features = feature_forward(H, params.feature, mode, config, system)
    return student_forward(features, params.student, mode, config, system).value
