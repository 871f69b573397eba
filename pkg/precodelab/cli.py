# --------------------------------------------------------------------------------------------
# Copyright (c) Microsoft Corporation. All rights reserved.
# Licensed under the MIT License. See LICENSE.txt in the project root for license information.
# --------------------------------------------------------------------------------------------
"""
Command-line experiment runner.

    precodelab gen-data          site datasets, WMMSE reference-rate sidecars and a manifest
    precodelab train             backbone (or single-site) training, checkpoints and epoch metrics
    precodelab finetune          self-supervised adaptation of the backbone on each held-out site
    precodelab eval              sum-rate table per method, site and SNR
    precodelab bench-complexity  multiplication counts of every method
    precodelab compare           merges evaluation tables of several runs

Every command reads an optional TOML run file (`--config`), applies the common flags
`--seed`, `--deterministic`, `--threads` and `--output-dir`, and writes
`resolved_config.toml` next to its outputs. Exit status: 0 success, 2 configuration error,
3 I/O error, 4 numeric failure (which also leaves `diagnostic.toml` in the output directory).
"""
import argparse
import dataclasses
import os
import sys

import numpy as np
import pandas as pd
import toml

from precodelab.channel_data import (
    generate_site_dataset,
    load_dataset,
    rates_for_snr,
    read_manifest,
    read_rate_sidecar,
    reference_rates,
    save_dataset,
    sidecar_path,
    write_manifest,
    write_rate_sidecar,
)
from precodelab.check_inputs import (
    ConfigurationError,
    DatasetIOError,
    DegenerateInputError,
    NumericFailureError,
    PrecodeLabError,
    SingularChannelError,
)
from precodelab.complexity import complexity_report
from precodelab.export import export_frame, export_toml
from precodelab.import_results import RESULT_COLUMNS, compare_results
from precodelab.mldg_train import (
    Domain,
    evaluate,
    evaluate_baseline,
    fine_tune,
    train_backbone,
    train_single_site,
)
from precodelab.papp_model import ModelParameters
from precodelab.parameters import load_checkpoint, save_checkpoint
from precodelab.run_config import RunConfig, dump_run_config, load_run_config, output_root, resolve_output_dir
from precodelab.site_profiles import default_site_profiles, get_site_profile, load_site_profiles

__all__ = [
    "EXIT_OK",
    "EXIT_CONFIG",
    "EXIT_IO",
    "EXIT_NUMERIC",
    "build_parser",
    "cmd_gen_data",
    "cmd_train",
    "cmd_finetune",
    "cmd_eval",
    "cmd_bench_complexity",
    "cmd_compare",
    "main",
]

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4

DATASET_SUFFIX = ".pcld"
BACKBONE_CHECKPOINT = "backbone.ckpt"
EVAL_RESULTS = "eval_results.csv"

_BASELINES = {"ZF": "zf", "WMMSE": "wmmse", "MRT": "mrt"}


def _data_dir(config: RunConfig):
    return config.data.data_dir or os.path.join(output_root(), "gen-data")


def _dataset_file(data_dir, site_id):
    return os.path.join(data_dir, f"{site_id}{DATASET_SUFFIX}")


def _profiles(config: RunConfig):
    if config.data.profile_file:
        return load_site_profiles(config.data.profile_file)
    return default_site_profiles()


def _metadata(config: RunConfig, **extra):
    metadata = {
        "seed": int(config.run.seed),
        "n_tx": int(config.system.n_tx),
        "n_users": int(config.system.n_users),
        "model": {k: (list(v) if isinstance(v, tuple) else v)
                  for k, v in dataclasses.asdict(config.model).items() if v is not None},
    }
    metadata.update(extra)
    return metadata


def _read_params(path: str):
    groups, metadata = load_checkpoint(path)
    return ModelParameters.from_groups(groups), metadata


def _load_site(config: RunConfig, site_id: str):
    """The site's dataset and its file path, verified against the manifest checksum."""
    data_dir = _data_dir(config)
    manifest = read_manifest(data_dir)
    rows = manifest[manifest["site_id"] == site_id]
    if rows.empty:
        raise DatasetIOError(f"Error: site '{site_id}' is not listed in the manifest of {data_dir}")
    row = rows.iloc[0]
    path = os.path.join(data_dir, row["dataset_file"])
    dataset = load_dataset(path, expected_checksum=row["sha256"])
    if (dataset.config.n_tx, dataset.config.n_users) != (config.system.n_tx, config.system.n_users):
        raise ConfigurationError(f"Error: dataset {path} has {dataset.config.n_tx} x {dataset.config.n_users} "
                                 f"channels, the run expects {config.system.n_tx} x {config.system.n_users}")
    return dataset, path, row["sha256"]


def _adapt_and_eval_split(config: RunConfig, dataset):
    """First `held_out_adapt_samples` samples adapt, the rest evaluate; 0 uses all samples for both."""
    n_adapt = int(config.data.held_out_adapt_samples)
    if n_adapt <= 0:
        return dataset, dataset
    if n_adapt >= len(dataset):
        raise ConfigurationError(f"Error: held_out_adapt_samples ({n_adapt}) leaves no evaluation samples "
                                 f"in site '{dataset.site_id}' ({len(dataset)} samples)")
    return dataset.subset(np.arange(n_adapt)), dataset.subset(np.arange(n_adapt, len(dataset)))


def _history(report, config: RunConfig):
    return report.to_frame(include_timing=not config.run.deterministic)


def _write_report(report, config: RunConfig, out_dir: str, name: str):
    verbose = config.run.verbose
    export_frame(_history(report, config), os.path.join(out_dir, f"{name}_history"), verbose=verbose)
    path = os.path.join(out_dir, f"{name}_report.toml")
    try:
        with open(path, "w", encoding="utf-8") as handle:
            handle.write(report.to_toml(include_timing=not config.run.deterministic))
    except OSError as error:
        raise DatasetIOError(f"Error: could not write {path}: {error}") from error
    if verbose:
        print(f"Exporting to {path}...")


def cmd_gen_data(config: RunConfig, out_dir: str):
    """
    Name
    ----
    cmd_gen_data

    Description
    -----------
    Generates one dataset file per training site (`data.samples_per_site` samples) and per
    held-out site (`data.held_out_samples`), a WMMSE reference-rate sidecar for each at every
    `data.reference_snr_db`, and `manifest.csv` with the sha256 of every dataset file.

    Parameters
    ----------
    config : RunConfig
        Resolved run configuration.
    out_dir : str
        Output directory; becomes the data directory of later commands.

    Returns
    -------
    pandas.DataFrame
        The manifest.
    """
    profiles = _profiles(config)
    system, geom = config.system.system(), config.system.geometry()
    plan = [(site, config.data.samples_per_site) for site in config.data.sites]
    plan += [(site, config.data.held_out_samples) for site in config.data.held_out_sites
             if site not in config.data.sites]
    if not plan:
        raise ConfigurationError("Error: no sites to generate")

    entries = []
    for site_id, count in plan:
        profile = get_site_profile(site_id, profiles)
        dataset = generate_site_dataset(profile, count, system, geom=geom, threads=config.run.threads,
                                        verbose=config.run.verbose)
        path = _dataset_file(out_dir, site_id)
        checksum = save_dataset(dataset, path, verbose=config.run.verbose)
        rates = reference_rates(dataset, list(config.data.reference_snr_db), tol=config.data.wmmse_tol,
                                max_iter=config.data.wmmse_max_iter, threads=config.run.threads,
                                verbose=config.run.verbose)
        write_rate_sidecar(rates, path, checksum=checksum, verbose=config.run.verbose)
        entries.append({
            "site_id": site_id,
            "dataset_file": os.path.basename(path),
            "sidecar_file": os.path.basename(sidecar_path(path)),
            "count": len(dataset),
            "n_tx": system.n_tx,
            "n_users": system.n_users,
            "seed": profile.seed,
            "sha256": checksum,
        })
    write_manifest(entries, out_dir, verbose=config.run.verbose)
    return read_manifest(out_dir)


def cmd_train(config: RunConfig, out_dir: str, resume: str = None):
    """
    Name
    ----
    cmd_train

    Description
    -----------
    Backbone mode trains on the `data.sites` datasets with their reference rates at
    `train.train_snr_db` and writes `backbone.ckpt`, periodic `checkpoint_epoch<e>.ckpt`
    files, `train_history.csv` and `train_report.toml`. With `resume`, training continues
    from the checkpoint's epoch with the same seed. Single-site mode trains one model per
    held-out site on its adaptation samples and writes `single_site_<site>.ckpt`.

    Parameters
    ----------
    config : RunConfig
        Resolved run configuration.
    out_dir : str
        Output directory.
    resume : str, optional
        Backbone checkpoint to continue from.

    Returns
    -------
    dict
        Mapping checkpoint name -> TrainReport.
    """
    system, seed = config.system.system(), int(config.run.seed)
    reports = {}

    if config.train.mode == "single-site":
        for site_id in config.data.held_out_sites:
            dataset, _, _ = _load_site(config, site_id)
            adapt, _ = _adapt_and_eval_split(config, dataset)
            params, report = train_single_site(adapt, config.train, config.model, system, seed=seed,
                                               verbose=config.run.verbose)
            name = f"single_site_{site_id}"
            save_checkpoint(os.path.join(out_dir, f"{name}.ckpt"), params.groups(),
                            _metadata(config, epoch=int(config.train.epochs), site_id=site_id, mode="single-site"),
                            verbose=config.run.verbose)
            _write_report(report, config, out_dir, name)
            reports[name] = report
        return reports

    domains = []
    for site_id in config.data.sites:
        dataset, path, checksum = _load_site(config, site_id)
        rates = read_rate_sidecar(path, checksum=checksum)
        domains.append(Domain(site_id, dataset, rates_for_snr(rates, config.train.train_snr_db, len(dataset))))

    params, start_epoch = None, 0
    if resume is not None:
        params, metadata = _read_params(resume)
        start_epoch = int(metadata.get("epoch", 0))
        if int(metadata.get("seed", seed)) != seed:
            raise ConfigurationError(f"Error: checkpoint {resume} was trained with seed {metadata.get('seed')}, "
                                     f"the run uses seed {seed}")

    def checkpoint_fn(current, epoch):
        save_checkpoint(os.path.join(out_dir, f"checkpoint_epoch{epoch:04d}.ckpt"), current.groups(),
                        _metadata(config, epoch=epoch, mode="backbone"), verbose=config.run.verbose)

    params, report = train_backbone(domains, config.train, config.model, system, seed=seed, params=params,
                                    start_epoch=start_epoch, threads=config.run.threads,
                                    checkpoint_fn=checkpoint_fn, verbose=config.run.verbose)
    save_checkpoint(os.path.join(out_dir, BACKBONE_CHECKPOINT), params.groups(),
                    _metadata(config, epoch=max(int(config.train.epochs), start_epoch), mode="backbone"),
                    verbose=config.run.verbose)
    _write_report(report, config, out_dir, "train")
    reports["backbone"] = report
    return reports


def _backbone_path(config: RunConfig):
    return config.eval.backbone_checkpoint or os.path.join(output_root(), "train", BACKBONE_CHECKPOINT)


def cmd_finetune(config: RunConfig, out_dir: str):
    """
    Fine-tunes the backbone checkpoint (`eval.backbone_checkpoint`, default
    <output root>/train/backbone.ckpt) on the adaptation samples of every held-out site and
    writes `finetuned_<site>.ckpt` with its history. Returns mapping site -> TrainReport.
    """
    backbone, _ = _read_params(_backbone_path(config))
    system, reports = config.system.system(), {}
    for site_id in config.data.held_out_sites:
        dataset, _, _ = _load_site(config, site_id)
        adapt, _ = _adapt_and_eval_split(config, dataset)
        params, report = fine_tune(backbone, adapt, config.finetune, config.model, system,
                                   seed=int(config.run.seed), verbose=config.run.verbose)
        name = f"finetuned_{site_id}"
        save_checkpoint(os.path.join(out_dir, f"{name}.ckpt"), params.groups(),
                        _metadata(config, epoch=int(config.finetune.epochs), site_id=site_id, mode="fine-tune"),
                        verbose=config.run.verbose)
        _write_report(report, config, out_dir, name)
        reports[site_id] = report
    return reports


def _method_params(config: RunConfig, method: str, site_id: str):
    if method == "PaPP-zero-shot":
        path = _backbone_path(config)
    elif method == "PaPP-FT":
        directory = config.eval.finetuned_checkpoint or config.eval.finetuned_dir or os.path.join(output_root(), "finetune")
        path = directory if directory.endswith(".ckpt") else os.path.join(directory, f"finetuned_{site_id}.ckpt")
    else:
        directory = config.eval.single_site_checkpoint or os.path.join(output_root(), "train")
        path = directory if directory.endswith(".ckpt") else os.path.join(directory, f"single_site_{site_id}.ckpt")
    return _read_params(path)[0]


def cmd_eval(config: RunConfig, out_dir: str):
    """
    Name
    ----
    cmd_eval

    Description
    -----------
    Sum rate of every method in `eval.methods` on the evaluation samples of every site in
    `eval.sites` at every SNR in `eval.snr_db`. Classical precoders go through
    `evaluate_baseline`, network checkpoints through `evaluate`. Rows are written to
    `eval_results.csv` in (site, snr_db, method) order.

    Parameters
    ----------
    config : RunConfig
        Resolved run configuration.
    out_dir : str
        Output directory.

    Returns
    -------
    pandas.DataFrame
        Columns method, site, snr_db, mean_rate, std, n.
    """
    system, rows = config.system.system(), []
    if not config.eval.snr_db:
        raise ConfigurationError("Error: eval.snr_db is empty")
    for site_id in config.eval.sites:
        dataset, _, _ = _load_site(config, site_id)
        _, held = _adapt_and_eval_split(config, dataset)
        if config.eval.max_samples is not None:
            held = held.subset(np.arange(min(int(config.eval.max_samples), len(held))))
        networks = {m: _method_params(config, m, site_id) for m in config.eval.methods if m not in _BASELINES}
        for snr_db in config.eval.snr_db:
            for method in config.eval.methods:
                if method in _BASELINES:
                    _, rates = evaluate_baseline(_BASELINES[method], held, snr_db, p_max=system.p_max,
                                                 tol=config.data.wmmse_tol, max_iter=config.data.wmmse_max_iter,
                                                 batch_size=config.eval.batch_size)
                else:
                    _, rates = evaluate(networks[method], held, snr_db, config.model, system,
                                        batch_size=config.eval.batch_size)
                rows.append({"method": method, "site": site_id, "snr_db": float(snr_db),
                             "mean_rate": float(np.mean(rates)), "std": float(np.std(rates)), "n": int(len(rates))})
    results = pd.DataFrame(rows, columns=RESULT_COLUMNS)
    export_frame(results, os.path.join(out_dir, os.path.splitext(EVAL_RESULTS)[0]), verbose=config.run.verbose)
    return results


def cmd_bench_complexity(config: RunConfig, out_dir: str):
    """Writes `complexity_report.csv` and `complexity_report.toml`; returns the ComplexityReport."""
    report = complexity_report(config.complexity)
    export_frame(report.to_frame(), os.path.join(out_dir, "complexity_report"), verbose=config.run.verbose)
    export_toml(report, os.path.join(out_dir, "complexity_report"), verbose=config.run.verbose)
    return report


def cmd_compare(config: RunConfig, out_dir: str, paths, labels=None):
    """Merges evaluation tables into `comparison.csv` (see `compare_results`)."""
    merged = compare_results(paths, labels)
    export_frame(merged, os.path.join(out_dir, "comparison"), verbose=config.run.verbose)
    return merged


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML run file")
    common.add_argument("--seed", type=int, help="run seed")
    determinism = common.add_mutually_exclusive_group()
    determinism.add_argument("--deterministic", dest="deterministic", action="store_const", const=True,
                             help="byte-identical outputs (timings left out of CSVs); the default")
    determinism.add_argument("--no-deterministic", dest="deterministic", action="store_const", const=False,
                             help="record wall-clock timings")
    common.add_argument("--threads", type=int, help="worker threads")
    common.add_argument("--output-dir", help="output directory (default: $PRECODELAB_OUTPUT_ROOT/<command>)")
    common.add_argument("--quiet", action="store_true", help="no progress bars or export messages")

    parser = argparse.ArgumentParser(prog="precodelab", description="Multi-user MIMO precoding experiments.")
    commands = parser.add_subparsers(dest="command", required=True)

    gen = commands.add_parser("gen-data", parents=[common], help="generate site datasets")
    gen.add_argument("--sites", help="comma-separated training sites")
    gen.add_argument("--held-out-sites", help="comma-separated held-out sites (empty for none)")
    gen.add_argument("--samples", type=int, help="samples per training site")

    train = commands.add_parser("train", parents=[common], help="train the backbone or single-site models")
    train.add_argument("--data-dir")
    train.add_argument("--mode", choices=["backbone", "single-site"])
    train.add_argument("--epochs", type=int)
    train.add_argument("--resume", help="backbone checkpoint to continue from")

    finetune = commands.add_parser("finetune", parents=[common], help="fine-tune on held-out sites")
    finetune.add_argument("--data-dir")
    finetune.add_argument("--checkpoint", help="backbone checkpoint")
    finetune.add_argument("--epochs", type=int)

    evaluation = commands.add_parser("eval", parents=[common], help="evaluate precoders")
    evaluation.add_argument("--data-dir")
    evaluation.add_argument("--checkpoint", help="backbone checkpoint")
    evaluation.add_argument("--finetuned-dir")
    evaluation.add_argument("--snr", type=float, nargs="+", help="SNR values in dB")
    evaluation.add_argument("--methods", nargs="+")

    bench = commands.add_parser("bench-complexity", parents=[common], help="multiplication counts")
    bench.add_argument("--n-tx", type=int)
    bench.add_argument("--n-users", type=int)
    bench.add_argument("--iterations", type=float)

    compare = commands.add_parser("compare", parents=[common], help="merge evaluation tables")
    compare.add_argument("results", nargs="+", help="eval_results.csv files")
    compare.add_argument("--labels", nargs="+")
    return parser


def _split_list(value):
    if value is None:
        return None
    return [item.strip() for item in value.split(",") if item.strip()]


def _overrides(args):
    overrides = {
        "run": {"seed": args.seed, "deterministic": args.deterministic, "threads": args.threads,
                "output_dir": args.output_dir, "verbose": False if args.quiet else None},
    }
    def get(name):
        return getattr(args, name, None)

    overrides["data"] = {"data_dir": get("data_dir"), "sites": _split_list(get("sites")),
                         "held_out_sites": _split_list(get("held_out_sites")), "samples_per_site": get("samples")}
    if args.command == "train":
        overrides["train"] = {"mode": get("mode"), "epochs": get("epochs")}
    if args.command == "finetune":
        overrides["finetune"] = {"epochs": get("epochs")}
    overrides["eval"] = {"backbone_checkpoint": get("checkpoint"), "finetuned_dir": get("finetuned_dir"),
                         "snr_db": get("snr"), "methods": get("methods")}
    overrides["complexity"] = {"n_tx": get("n_tx"), "n_users": get("n_users"), "iterations": get("iterations")}
    return overrides


def _write_diagnostic(out_dir, command, error):
    document = {"command": command, "error": type(error).__name__, "message": str(error)}
    document.update({key: (value if isinstance(value, (int, float, str, bool)) else str(value))
                     for key, value in getattr(error, "diagnostic", {}).items()})
    try:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "diagnostic.toml"), "w", encoding="utf-8") as handle:
            toml.dump(document, handle)
    except OSError:
        pass


def main(argv=None):
    """
    Name
    ----
    main

    Description
    -----------
    Entry point of the `precodelab` command. Parses `argv`, resolves the run configuration,
    writes `resolved_config.toml` into the output directory and runs the subcommand.

    Parameters
    ----------
    argv : list of str, optional
        Arguments without the program name; `sys.argv[1:]` by default.

    Returns
    -------
    int
        Exit status: 0 success, 2 configuration error, 3 I/O error, 4 numeric failure.

    Example
    -------
    >>> main(["bench-complexity", "--output-dir", "out"])
    0
    """
    args = build_parser().parse_args(argv)
    out_dir = None
    try:
        config = load_run_config(args.config, _overrides(args))
        out_dir = resolve_output_dir(config, args.command)
        dump_run_config(config, out_dir)
        if args.command == "gen-data":
            cmd_gen_data(config, out_dir)
        elif args.command == "train":
            cmd_train(config, out_dir, resume=args.resume)
        elif args.command == "finetune":
            cmd_finetune(config, out_dir)
        elif args.command == "eval":
            cmd_eval(config, out_dir)
        elif args.command == "bench-complexity":
            cmd_bench_complexity(config, out_dir)
        elif args.command == "compare":
            cmd_compare(config, out_dir, args.results, args.labels)
    except (NumericFailureError, SingularChannelError, DegenerateInputError) as error:
        print(error, file=sys.stderr)
        if out_dir is not None:
            _write_diagnostic(out_dir, args.command, error)
        return EXIT_NUMERIC
    except DatasetIOError as error:
        print(error, file=sys.stderr)
        return EXIT_IO
    except (ConfigurationError, PrecodeLabError) as error:
        print(error, file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK
