# --------------------------------------------------------------------------------------------
# Copyright (c) Microsoft Corporation. All rights reserved.
# Licensed under the MIT License. See LICENSE.txt in the project root for license information.
# --------------------------------------------------------------------------------------------
"""
Training and evaluation of the teacher-student precoder.

Backbone training follows meta-learning domain generalisation with first-order updates. Every
epoch the source sites are split at random into a meta-train set and a meta-test set. Per
step, the meta-train gradients of the teacher loss (teacher and feature extractor) and of the
student loss (student only) are averaged over sites and used for a trial step; the same losses
are differentiated again at the trial parameters on the meta-test sites; the two gradient sets
are combined in the meta-update.

Every random draw (split, batches, dropout masks) comes from a generator keyed by
(seed, epoch, step, site), so results do not depend on thread scheduling and a run resumed
from a checkpoint continues exactly like an unbroken one.
"""
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import pandas as pd
import toml
from tqdm import tqdm

from precodelab import autodiff as ad
from precodelab.autodiff import Mode
from precodelab.channel_data import Dataset
from precodelab.channel_sim import augment_permutations, noise_for_snr
from precodelab.check_inputs import ConfigurationError, NumericFailureError, check_positive
from precodelab.papp_model import (
    ModelConfig,
    ModelParameters,
    feature_forward,
    init_model,
    papp_forward,
    predict_precoder,
    student_forward,
    student_loss,
    sum_rate_node,
    teacher_loss,
)
from precodelab.parameters import ParameterSet, sgd_step
from precodelab.precoding import SystemConfig, batch_sum_rate, mrt_precoder, zf_precoder
from precodelab.wmmse import wmmse_solve

__all__ = [
    "LearningRates",
    "TrainConfig",
    "FineTuneConfig",
    "Domain",
    "TrainReport",
    "derived_rng",
    "split_domains",
    "draw_batches",
    "domain_gradients",
    "meta_train_phase",
    "meta_test_phase",
    "meta_update",
    "plain_sgd_step",
    "train_backbone",
    "fine_tune",
    "train_single_site",
    "evaluate",
    "evaluate_baseline",
]

# stream tags for derived_rng
_SPLIT, _BATCH, _DROPOUT, _AUGMENT, _EVAL = range(5)
_META_TRAIN, _META_TEST = 0, 1

_HISTORY_COLUMNS = ["epoch", "teacher_train_loss", "student_train_loss", "teacher_gen_loss", "student_gen_loss",
                    "eval_rate", "train_sites", "gen_sites", "wall_clock_s"]


@dataclass(frozen=True)
class LearningRates:
    """
    Step sizes per parameter group: trial step `alpha`, meta-test weight `beta` and
    meta-update step `eps` for the teacher (t), feature extractor (f) and student (s).
    """
    alpha_t: float = 1e-1
    beta_t: float = 1e-2
    eps_t: float = 1e-2
    alpha_f: float = 1e-1
    beta_f: float = 1e-2
    eps_f: float = 1e-2
    alpha_s: float = 1e-2
    beta_s: float = 1e-3
    eps_s: float = 1e-3

    def __post_init__(self):
        for name, value in vars(self).items():
            check_positive(value, name, allow_zero=True)


@dataclass(frozen=True)
class TrainConfig:
    """Backbone and single-site training settings; defaults follow the published hyperparameters."""
    mode: str = "backbone"
    epochs: int = 50
    steps_per_epoch: int = None
    batch_size: int = 1000
    lam: float = 0.1
    rate_threshold: float = 0.8
    rates: LearningRates = field(default_factory=LearningRates)
    n_train: int = 5
    n_gen: int = 2
    train_snr_db: float = 20.0
    single_site_lr: float = 1e-2
    eval_samples: int = 256
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.mode not in ("backbone", "single-site"):
            raise ConfigurationError("Error: train mode must be 'backbone' or 'single-site'")
        if int(self.epochs) < 0 or int(self.batch_size) < 1:
            raise ConfigurationError("Error: epochs must be >= 0 and batch_size >= 1")
        if self.steps_per_epoch is not None and int(self.steps_per_epoch) < 1:
            raise ConfigurationError("Error: steps_per_epoch must be >= 1")
        if int(self.n_train) < 1 or int(self.n_gen) < 0:
            raise ConfigurationError("Error: n_train must be >= 1 and n_gen >= 0")
        check_positive(self.lam, "lam", allow_zero=True)
        check_positive(self.rate_threshold, "rate_threshold", allow_zero=True)
        check_positive(self.single_site_lr, "single_site_lr", allow_zero=True)


@dataclass(frozen=True)
class FineTuneConfig:
    """Self-supervised fine-tuning on a deployment site."""
    epochs: int = 20
    lr: float = 1e-3
    augment: bool = True
    n_permutations: int = 4
    batch_size: int = 64
    snr_db: float = 20.0
    steps_per_epoch: int = None

    def __post_init__(self):
        if int(self.epochs) < 0 or int(self.batch_size) < 1 or int(self.n_permutations) < 0:
            raise ConfigurationError("Error: epochs and n_permutations must be >= 0 and batch_size >= 1")
        check_positive(self.lr, "lr", allow_zero=True)


class Domain(NamedTuple):
    """One source site: its dataset and the WMMSE reference rate of every sample at the training SNR."""
    site_id: str
    dataset: Dataset
    r_wmmse: np.ndarray


@dataclass
class TrainReport:
    """
    Per-epoch metrics (`history`, one row per epoch), the seed, a checksum of the final
    parameters and instrumentation counters. `student_feature_updates` counts steps in which
    the student loss produced a non-zero feature-extractor gradient; it stays 0.
    """
    history: pd.DataFrame
    seed: int
    mode: str
    checksum: str = ""
    student_feature_updates: int = 0
    samples_seen: int = 0
    effective_batch_sizes: list = field(default_factory=list)

    def to_frame(self, include_timing: bool = True):
        if include_timing or "wall_clock_s" not in self.history:
            return self.history.copy()
        return self.history.drop(columns=["wall_clock_s"])

    def to_toml(self, include_timing: bool = True):
        summary = {
            "seed": int(self.seed),
            "mode": self.mode,
            "epochs": int(len(self.history)),
            "checksum": self.checksum,
            "student_feature_updates": int(self.student_feature_updates),
            "samples_seen": int(self.samples_seen),
        }
        frame = self.to_frame(include_timing)
        epochs = [{key: (value.item() if hasattr(value, "item") else value) for key, value in row.items()}
                  for row in frame.to_dict(orient="records")]
        return toml.dumps({"report": summary, "epoch": epochs})


def derived_rng(seed: int, *keys):
    """Generator keyed by (seed, *keys); equal keys give equal streams."""
    return np.random.default_rng(np.random.SeedSequence([int(seed)] + [int(k) for k in keys]))


def split_domains(domains, rng: np.random.Generator, n_train: int = None, n_gen: int = 2):
    """
    Name
    ----
    split_domains

    Description
    -----------
    Random disjoint split of the source sites into a meta-train and a meta-test set that
    together cover every site. Both sets list their sites in the original order.

    Parameters
    ----------
    domains : list
        Source sites (at least two, or one when `n_gen` is 0).
    rng : numpy.random.Generator
        Random source.
    n_train : int, optional
        Size of the meta-train set; defaults to len(domains) - n_gen.
    n_gen : int
        Size of the meta-test set. Defaults to 2.

    Returns
    -------
    tuple
        (train_indices, gen_indices) as lists of positions in `domains`.

    Example
    -------
    >>> train, gen = split_domains(list(range(7)), np.random.default_rng(0), 5, 2)
    >>> len(train), len(gen)
    (5, 2)
    """
    count = len(domains)
    n_train = count - int(n_gen) if n_train is None else int(n_train)
    if n_train < 1 or int(n_gen) < 0:
        raise ConfigurationError("Error: the meta-train set needs at least one site")
    if n_train + int(n_gen) > count:
        raise ConfigurationError(f"Error: split sizes ({n_train}, {n_gen}) exceed the {count} available sites")
    if n_train + int(n_gen) < count:
        raise ConfigurationError(f"Error: split sizes ({n_train}, {n_gen}) do not cover all {count} sites")
    order = rng.permutation(count)
    return sorted(order[:n_train].tolist()), sorted(order[n_train:].tolist())


def _steps(dataset_sizes, batch_size, steps_per_epoch):
    if steps_per_epoch is not None:
        return int(steps_per_epoch)
    return max(1, min(dataset_sizes) // int(batch_size))


def draw_batches(seed: int, epoch: int, step: int, domains, batch_size: int, indices=None):
    """Sample indices of one step for each site position in `indices` (all sites by default)."""
    indices = range(len(domains)) if indices is None else indices
    batches = {}
    for d in indices:
        size = len(domains[d].dataset)
        rng = derived_rng(seed, _BATCH, epoch, step, d)
        batches[d] = np.sort(rng.choice(size, size=min(int(batch_size), size), replace=False))
    return batches


def _group_grads(loss, nodes, groups):
    wrt = {(group, name): node for group in groups for name, node in nodes[group].items()}
    flat = ad.backward(loss, wrt)
    return {group: {name: flat[(group, name)] for name in nodes[group]} for group in groups}


def _check_finite(value, what, where):
    if not np.isfinite(value):
        error = NumericFailureError(f"Error: {what} became non-finite at {where}")
        error.diagnostic = {"what": what, "value": str(value), **where}
        raise error


def domain_gradients(params: ModelParameters, domain: Domain, batch, sigma2: float, train: TrainConfig,
                     model: ModelConfig, system: SystemConfig, rng: np.random.Generator, where: dict = None):
    """
    Name
    ----
    domain_gradients

    Description
    -----------
    Teacher and student gradients of one site's batch. The teacher loss is differentiated
    with respect to the teacher and the feature extractor; the student loss with respect to
    the student, with the teacher precoder as a fixed target. The student path reads detached
    features, which is checked: `feature_leak` is True if the student loss still produced a
    non-zero feature gradient.

    Returns
    -------
    dict
        Keys `teacher` (group -> name -> gradient for "teacher" and "feature"), `student`
        (same for "student"), `teacher_loss`, `student_loss`, `buffer_updates`, `feature_leak`.
    """
    where = where or {}
    H = domain.dataset.channels[batch]
    mode = Mode.train(rng, dropout_rate=model.dropout)
    forward = papp_forward(params, H, mode, model, system)

    loss_t = teacher_loss(H, forward.W_T, sigma2)
    loss_s = student_loss(forward.W, forward.W_T, H, sigma2, domain.r_wmmse[batch],
                          lam=train.lam, threshold=train.rate_threshold)
    _check_finite(float(loss_t.value), "teacher loss", {"site": domain.site_id, **where})
    _check_finite(float(loss_s.value), "student loss", {"site": domain.site_id, **where})

    grads_t = _group_grads(loss_t, forward.nodes, ("teacher", "feature"))
    grads_s = _group_grads(loss_s, forward.nodes, ("student", "feature"))
    leak = any(np.any(g != 0.0) for g in grads_s.pop("feature").values())
    return {
        "teacher": grads_t,
        "student": grads_s,
        "teacher_loss": float(loss_t.value),
        "student_loss": float(loss_s.value),
        "buffer_updates": mode.buffer_updates,
        "feature_leak": leak,
    }


def _average(grad_sets):
    """Mean of group -> name -> array dicts, summed in list order."""
    total = {}
    for grads in grad_sets:
        for group, table in grads.items():
            target = total.setdefault(group, {})
            for name, value in table.items():
                target[name] = target[name] + value if name in target else value.copy()
    count = len(grad_sets)
    return {group: {name: value / count for name, value in table.items()} for group, table in total.items()}


def _zeros(params: ModelParameters, groups):
    return {group: params.group(group).zeros() for group in groups}


def _run_domains(params, domains, positions, batches, sigma2, train, model, system, seed, epoch, step, phase, threads):
    def job(d):
        rng = derived_rng(seed, _DROPOUT, epoch, step, d, phase)
        return domain_gradients(params, domains[d], batches[d], sigma2, train, model, system, rng,
                                where={"epoch": int(epoch), "step": int(step)})

    if int(threads) > 1 and len(positions) > 1:
        with ThreadPoolExecutor(max_workers=int(threads)) as pool:
            return list(pool.map(job, positions))
    return [job(d) for d in positions]


def meta_train_phase(params: ModelParameters, domains, positions, batches, sigma2: float, train: TrainConfig,
                     model: ModelConfig, system: SystemConfig, seed: int = 0, epoch: int = 0, step: int = 0,
                     threads: int = 1):
    """
    Name
    ----
    meta_train_phase

    Description
    -----------
    Averages the per-site gradients over the meta-train sites and takes the trial step
    teacher' = teacher - alpha_t delta_T, feature' = feature - alpha_f delta_T,
    student' = student - alpha_s delta_S.

    Parameters
    ----------
    params : ModelParameters
        Current parameters (read only).
    domains : list of Domain
        All source sites.
    positions : list of int
        Meta-train site positions in `domains`.
    batches : dict
        Site position -> sample indices.
    sigma2 : float
        Noise variance.
    train, model, system
        Training, network and system settings.
    seed, epoch, step : int
        Keys of the dropout streams.
    threads : int
        Worker threads for the per-site passes; averaging is always in site order.

    Returns
    -------
    tuple
        (primed, delta_T, delta_S, results): trial parameters, the averaged gradients
        (group -> name -> array) and the per-site results of `domain_gradients`.
    """
    if len(positions) == 0:
        raise ConfigurationError("Error: the meta-train set is empty")
    for d in positions:
        if len(batches[d]) == 0:
            raise ConfigurationError(f"Error: site {domains[d].site_id} contributed an empty batch")
    results = _run_domains(params, domains, positions, batches, sigma2, train, model, system,
                           seed, epoch, step, _META_TRAIN, threads)
    delta_t = _average([r["teacher"] for r in results])
    delta_s = _average([r["student"] for r in results])

    rates = train.rates
    primed = ModelParameters(sgd_step(params.feature, delta_t["feature"], rates.alpha_f),
                             sgd_step(params.teacher, delta_t["teacher"], rates.alpha_t),
                             sgd_step(params.student, delta_s["student"], rates.alpha_s))
    return primed, delta_t, delta_s, results


def meta_test_phase(primed: ModelParameters, domains, positions, batches, sigma2: float, train: TrainConfig,
                    model: ModelConfig, system: SystemConfig, seed: int = 0, epoch: int = 0, step: int = 0,
                    threads: int = 1):
    """
    Gradients of the same losses at the trial parameters, averaged over the meta-test sites.
    An empty meta-test set yields zero gradients. Returns (delta_T', delta_S', results).
    """
    if len(positions) == 0:
        return _zeros(primed, ("teacher", "feature")), _zeros(primed, ("student",)), []
    results = _run_domains(primed, domains, positions, batches, sigma2, train, model, system,
                           seed, epoch, step, _META_TEST, threads)
    return _average([r["teacher"] for r in results]), _average([r["student"] for r in results]), results


def _combine(params: ParameterSet, delta, delta_prime, eps, beta):
    params.check_aligned(delta)
    params.check_aligned(delta_prime)
    grads = {name: delta[name] + beta * delta_prime[name] for name in params.names}
    return sgd_step(params, grads, eps)


def meta_update(params: ModelParameters, delta_t, delta_s, delta_t_prime, delta_s_prime, rates: LearningRates):
    """
    Name
    ----
    meta_update

    Description
    -----------
    teacher <- teacher - eps_t (delta_T + beta_t delta_T')
    feature <- feature - eps_f (delta_T + beta_f delta_T')
    student <- student - eps_s (delta_S + beta_s delta_S')
    The feature extractor only ever moves with teacher gradients.

    Returns
    -------
    ModelParameters

    Raises
    ------
    ConfigurationError
        When a gradient set is misaligned or a student gradient set carries feature gradients.
    """
    if "feature" in delta_s or "feature" in delta_s_prime:
        raise ConfigurationError("Error: student gradients must not update the feature extractor")
    for name, table in (("delta_T", delta_t), ("delta_T'", delta_t_prime)):
        if set(table) != {"teacher", "feature"}:
            raise ConfigurationError(f"Error: {name} must hold exactly the teacher and feature groups")
    for name, table in (("delta_S", delta_s), ("delta_S'", delta_s_prime)):
        if set(table) != {"student"}:
            raise ConfigurationError(f"Error: {name} must hold exactly the student group")
    return ModelParameters(
        _combine(params.feature, delta_t["feature"], delta_t_prime["feature"], rates.eps_f, rates.beta_f),
        _combine(params.teacher, delta_t["teacher"], delta_t_prime["teacher"], rates.eps_t, rates.beta_t),
        _combine(params.student, delta_s["student"], delta_s_prime["student"], rates.eps_s, rates.beta_s),
    )


def plain_sgd_step(params: ModelParameters, domains, positions, batches, sigma2: float, train: TrainConfig,
                   model: ModelConfig, system: SystemConfig, seed: int = 0, epoch: int = 0, step: int = 0):
    """
    Reference multi-site gradient step without meta-testing: per-site gradients averaged in
    site order, then teacher -= eps_t g_T, feature -= eps_f g_T, student -= eps_s g_S, then the
    batch-norm statistics folded in.
    """
    teacher_sets, student_sets, updates = [], [], []
    for d in positions:
        rng = derived_rng(seed, _DROPOUT, epoch, step, d, _META_TRAIN)
        result = domain_gradients(params, domains[d], batches[d], sigma2, train, model, system, rng)
        teacher_sets.append(result["teacher"])
        student_sets.append(result["student"])
        updates.extend(result["buffer_updates"])
    g_t, g_s = _average(teacher_sets), _average(student_sets)
    rates = train.rates
    stepped = ModelParameters(sgd_step(params.feature, g_t["feature"], rates.eps_f),
                              sgd_step(params.teacher, g_t["teacher"], rates.eps_t),
                              sgd_step(params.student, g_s["student"], rates.eps_s))
    stepped.apply_buffer_updates(updates, model.bn_momentum)
    return stepped


def _eval_rate(params, domains, sigma2, train, model, system):
    if int(train.eval_samples) <= 0:
        return float("nan")
    rates = []
    for domain in domains:
        H = domain.dataset.channels[:int(train.eval_samples)]
        rates.append(batch_sum_rate(H, predict_precoder(params, H, model, system), sigma2))
    return float(np.mean(np.concatenate(rates)))


def train_backbone(domains, train: TrainConfig, model: ModelConfig, system: SystemConfig, seed: int = 0,
                   params: ModelParameters = None, start_epoch: int = 0, threads: int = 1,
                   checkpoint_fn=None, verbose: bool = False):
    """
    Name
    ----
    train_backbone

    Description
    -----------
    The full backbone epoch loop: split, then per step meta-train, meta-test and meta-update,
    then the batch-norm statistics of both phases folded in site order. Losses are averaged
    per epoch over steps and sites of each set; `eval_rate` is the evaluation-mode student
    sum rate on the first `train.eval_samples` samples of every source site.

    Parameters
    ----------
    domains : list of Domain
        Source sites (at least two unless `train.n_gen` is 0).
    train : TrainConfig
        Training settings; `train.epochs` is the total epoch count.
    model : ModelConfig
        Network settings.
    system : SystemConfig
        System dimensions.
    seed : int
        Run seed for initialisation and every random draw.
    params : ModelParameters, optional
        Parameters to continue from; a fresh initialisation by default.
    start_epoch : int
        First epoch to run (for resuming). Defaults to 0.
    threads : int
        Worker threads for per-site passes.
    checkpoint_fn : callable, optional
        Called as checkpoint_fn(params, epoch) every `train.checkpoint_every` epochs.
    verbose : bool
        Show a progress bar. Defaults to False.

    Returns
    -------
    tuple
        (params, TrainReport).

    Raises
    ------
    NumericFailureError
        When a loss becomes non-finite; the exception carries a `diagnostic` dict.
    DegenerateInputError
        When the student emits an all-zero precoder for some sample, which a narrow student
        with dropout can do while its output biases are still zero.
    """
    if len(domains) < 2 and int(train.n_gen) > 0:
        raise ConfigurationError("Error: backbone training needs at least two source sites")
    params = init_model(model, system, seed) if params is None else params.snapshot()
    sigma2 = noise_for_snr(train.train_snr_db, system.p_max)
    steps = _steps([len(d.dataset) for d in domains], train.batch_size, train.steps_per_epoch)
    n_train = len(domains) - int(train.n_gen)

    rows, leaks = [], 0
    for epoch in tqdm(range(int(start_epoch), int(train.epochs)), desc="Backbone", disable=not verbose):
        started = time.perf_counter()
        train_pos, gen_pos = split_domains(domains, derived_rng(seed, _SPLIT, epoch), n_train, train.n_gen)
        losses = {"teacher_train": [], "student_train": [], "teacher_gen": [], "student_gen": []}

        for step in range(steps):
            batches = draw_batches(seed, epoch, step, domains, train.batch_size)
            primed, delta_t, delta_s, train_results = meta_train_phase(
                params, domains, train_pos, batches, sigma2, train, model, system, seed, epoch, step, threads)
            delta_t_prime, delta_s_prime, gen_results = meta_test_phase(
                primed, domains, gen_pos, batches, sigma2, train, model, system, seed, epoch, step, threads)
            params_next = meta_update(params, delta_t, delta_s, delta_t_prime, delta_s_prime, train.rates)

            updates = [u for r in train_results + gen_results for u in r["buffer_updates"]]
            params_next.apply_buffer_updates(updates, model.bn_momentum)
            params = params_next

            leaks += sum(int(r["feature_leak"]) for r in train_results + gen_results)
            losses["teacher_train"] += [r["teacher_loss"] for r in train_results]
            losses["student_train"] += [r["student_loss"] for r in train_results]
            losses["teacher_gen"] += [r["teacher_loss"] for r in gen_results]
            losses["student_gen"] += [r["student_loss"] for r in gen_results]

        row = {"epoch": epoch}
        for key, values in losses.items():
            row[f"{key}_loss"] = float(np.mean(values)) if values else float("nan")
        row["eval_rate"] = _eval_rate(params, domains, sigma2, train, model, system)
        row["train_sites"] = ";".join(domains[d].site_id for d in train_pos)
        row["gen_sites"] = ";".join(domains[d].site_id for d in gen_pos)
        row["wall_clock_s"] = time.perf_counter() - started
        rows.append(row)

        if checkpoint_fn is not None and int(train.checkpoint_every) > 0 and (epoch + 1) % int(train.checkpoint_every) == 0:
            checkpoint_fn(params, epoch + 1)

    report = TrainReport(history=pd.DataFrame(rows, columns=_HISTORY_COLUMNS), seed=seed, mode="backbone",
                         checksum=params.checksum(), student_feature_updates=leaks)
    return params, report


def _self_supervised(params: ModelParameters, dataset: Dataset, epochs: int, lr: float, batch_size: int,
                     steps_per_epoch, sigma2: float, model: ModelConfig, system: SystemConfig, seed: int,
                     augment: bool, n_permutations: int, mode_name: str, verbose: bool):
    if dataset is None or len(dataset) == 0:
        raise ConfigurationError("Error: self-supervised training needs a non-empty dataset")
    steps = _steps([len(dataset)], batch_size, steps_per_epoch)
    domains = [Domain(dataset.site_id, dataset, np.zeros(len(dataset)))]
    params = params.snapshot()
    rows, sizes, seen = [], [], 0

    for epoch in tqdm(range(int(epochs)), desc=mode_name, disable=not verbose):
        started = time.perf_counter()
        losses = []
        for step in range(steps):
            H = dataset.channels[draw_batches(seed, epoch, step, domains, batch_size)[0]]
            if augment:
                H = augment_permutations(H, n_permutations, derived_rng(seed, _AUGMENT, epoch, step))
            sizes.append(H.shape[0])
            seen += H.shape[0]

            mode = Mode.train(derived_rng(seed, _DROPOUT, epoch, step, 0, _META_TRAIN), dropout_rate=model.dropout)
            nodes = {"feature": params.feature.bind(), "student": params.student.bind()}
            features = feature_forward(H, params.feature, mode, model, system, nodes["feature"])
            W = student_forward(features, params.student, mode, model, system, nodes["student"])
            loss = -ad.mean(sum_rate_node(H, W, sigma2))
            _check_finite(float(loss.value), "self-supervised loss", {"epoch": epoch, "step": step})

            # lr = 0 leaves the running statistics frozen too
            if lr != 0.0:
                grads = _group_grads(loss, nodes, ("feature", "student"))
                params = ModelParameters(sgd_step(params.feature, grads["feature"], lr), params.teacher,
                                         sgd_step(params.student, grads["student"], lr))
                params.apply_buffer_updates(mode.buffer_updates, model.bn_momentum)
            losses.append(float(loss.value))

        rows.append({"epoch": epoch, "loss": float(np.mean(losses)),
                     "eval_rate": float(np.mean(evaluate(params, dataset, None, model, system, sigma2=sigma2)[1])),
                     "wall_clock_s": time.perf_counter() - started})

    history = pd.DataFrame(rows, columns=["epoch", "loss", "eval_rate", "wall_clock_s"])
    return params, TrainReport(history=history, seed=seed, mode=mode_name, checksum=params.checksum(),
                               samples_seen=seen, effective_batch_sizes=sizes)


def fine_tune(params: ModelParameters, dataset: Dataset, finetune: FineTuneConfig, model: ModelConfig,
              system: SystemConfig, seed: int = 0, verbose: bool = False):
    """
    Name
    ----
    fine_tune

    Description
    -----------
    Self-supervised adaptation of the feature extractor and student on a deployment site with
    loss -R(W); the teacher is not used. With `finetune.augment` set, every batch of b
    samples is enlarged with `n_permutations` user-permuted copies, giving
    b * (1 + n_permutations) samples per step (counted in the report).

    Parameters
    ----------
    params : ModelParameters
        Backbone parameters.
    dataset : Dataset
        Local site data.
    finetune : FineTuneConfig
        Epochs, learning rate, augmentation and batch settings.
    model, system
        Network and system settings.
    seed : int
        Seed of the batch, augmentation and dropout streams.
    verbose : bool
        Show a progress bar.

    Returns
    -------
    tuple
        (params, TrainReport) with the teacher group unchanged.
        With `finetune.lr` equal to 0 the returned parameters, batch-norm statistics
        included, equal the input.

    Raises
    ------
    NumericFailureError
        When the loss becomes non-finite.
    DegenerateInputError
        When the student emits an all-zero precoder for some sample.
    """
    sigma2 = noise_for_snr(finetune.snr_db, system.p_max)
    return _self_supervised(params, dataset, finetune.epochs, finetune.lr, finetune.batch_size,
                            finetune.steps_per_epoch, sigma2, model, system, seed,
                            finetune.augment, finetune.n_permutations, "fine-tune", verbose)


def train_single_site(dataset: Dataset, train: TrainConfig, model: ModelConfig, system: SystemConfig,
                      seed: int = 0, verbose: bool = False):
    """
    Trains feature extractor and student from a fresh initialisation on one site with the
    self-supervised loss -R(W) only (no teacher, no meta-learning) at `train.single_site_lr`.
    Returns (params, TrainReport).
    """
    params = init_model(model, system, seed)
    sigma2 = noise_for_snr(train.train_snr_db, system.p_max)
    return _self_supervised(params, dataset, train.epochs, train.single_site_lr, train.batch_size,
                            train.steps_per_epoch, sigma2, model, system, seed, False, 0, "single-site", verbose)


def _evaluate_precoder(precoder_fn, dataset: Dataset, sigma2: float, batch_size: int):
    rates = []
    for start in range(0, len(dataset), int(batch_size)):
        H = dataset.channels[start:start + int(batch_size)]
        rates.append(batch_sum_rate(H, precoder_fn(H), sigma2))
    rates = np.concatenate(rates)
    return float(np.mean(rates)), rates


def evaluate(params: ModelParameters, dataset: Dataset, snr_db, model: ModelConfig, system: SystemConfig,
             batch_size: int = 256, sigma2: float = None):
    """
    Name
    ----
    evaluate

    Description
    -----------
    Student sum rate on every sample of `dataset` in evaluation mode (dropout off, running
    batch-norm statistics); repeated calls give identical results.

    Parameters
    ----------
    params : ModelParameters
        Trained parameters.
    dataset : Dataset
        Evaluation data.
    snr_db : float
        SNR defining the noise variance; ignored when `sigma2` is given.
    model, system
        Network and system settings.
    batch_size : int
        Samples per forward pass. Defaults to 256.
    sigma2 : float, optional
        Explicit noise variance.

    Returns
    -------
    tuple
        (mean_rate, per_sample_rates).
    """
    sigma2 = noise_for_snr(snr_db, system.p_max) if sigma2 is None else sigma2
    return _evaluate_precoder(lambda H: predict_precoder(params, H, model, system), dataset, sigma2, batch_size)


def evaluate_baseline(method: str, dataset: Dataset, snr_db: float, p_max: float = None, tol: float = 1e-3,
                      max_iter: int = 100, batch_size: int = 256):
    """
    Sum rates of a classical precoder ("zf", "wmmse" or "mrt") through the same harness as
    `evaluate`. Returns (mean_rate, per_sample_rates).
    """
    p_max = dataset.config.p_max if p_max is None else p_max
    sigma2 = noise_for_snr(snr_db, p_max)

    def wmmse(H):
        return np.stack([wmmse_solve(h, sigma2, p_max, tol=tol, max_iter=max_iter)[0] for h in H])

    precoders = {
        "zf": lambda H: zf_precoder(H, p_max),
        "mrt": lambda H: mrt_precoder(H, p_max),
        "wmmse": wmmse,
    }
    if method.lower() not in precoders:
        raise ConfigurationError(f"Error: unknown baseline '{method}'; use 'zf', 'wmmse' or 'mrt'")
    return _evaluate_precoder(precoders[method.lower()], dataset, sigma2, batch_size)
