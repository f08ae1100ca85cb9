"""
Command-line front end: ``ocql train | tune | eval | compare | inspect``.

Every subcommand accepts hydra overrides after its flags, e.g.
``ocql train --out runs/cs2 env=cs2 agent.iterations=300``.
"""
import argparse
import logging
import logging.config
import os
import sys
from typing import List, Optional, Sequence

import h5py
import numpy as np
import pandas as pd

from ocql.agent import PolicyBundle, TrainingBuffers, TrainingLog, greedy_policy, train
from ocql.calibrate import broyden_tune
from ocql.config import ExperimentConfig, load_config, to_yaml
from ocql.envs import make_env
from ocql.errors import ConfigError, OcqlError
from ocql.evaluate import compare_reports, evaluate_policy, load_report, save_report, write_comparison
from ocql.nmpc import nmpc_policy

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NOT_CONVERGED = 3
EXIT_RUNTIME = 4

# independent streams per command, all derived from the experiment seed
TRAIN_STREAM, TUNE_STREAM, EVAL_STREAM = 0, 1, 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ocql", description="Oracle-assisted constrained Q-learning.")
    commands = parser.add_subparsers(dest="command", required=True)

    def common(sub):
        sub.add_argument("--config", type=str, default=None, help="experiment YAML file")
        sub.add_argument("--out", type=str, default=None, help="output directory")
        sub.add_argument("--seed", type=int, default=None)
        sub.add_argument("overrides", nargs="*", help="hydra overrides, key=value")

    train_parser = commands.add_parser("train", help="train Q and constraint networks")
    train_parser.add_argument("--resume", type=str, default=None,
                              help="run directory holding bundle/, buffers.h5 and train_log.jsonl to continue")
    common(train_parser)

    tune = commands.add_parser("tune", help="tune deployment backoffs of a trained bundle")
    tune.add_argument("--bundle", type=str, required=True)
    tune.add_argument("--omega", type=float, default=None)
    common(tune)

    evaluate = commands.add_parser("eval", help="Monte Carlo evaluation of a bundle or of NMPC")
    source = evaluate.add_mutually_exclusive_group(required=True)
    source.add_argument("--bundle", type=str)
    source.add_argument("--nmpc", action="store_true")
    evaluate.add_argument("--n-eval", type=int, default=None)
    evaluate.add_argument("--name", type=str, default=None, help="algorithm label in the report")
    common(evaluate)

    compare = commands.add_parser("compare", help="tabulate two or more evaluation reports")
    compare.add_argument("reports", nargs="+")
    compare.add_argument("--out", type=str, default=".")

    inspect = commands.add_parser("inspect", help="list the datasets of an HDF5 file")
    inspect.add_argument("path", type=str)
    return parser


def _overrides(args) -> List[str]:
    overrides = list(args.overrides)
    out = args.out if args.out is not None else getattr(args, "resume", None)
    if out is not None:
        overrides.append("out_dir='{}'".format(out))
    if args.seed is not None:
        overrides.append("seed={}".format(args.seed))
    if getattr(args, "omega", None) is not None:
        overrides.append("calibrate.omega={}".format(args.omega))
    if getattr(args, "n_eval", None) is not None:
        overrides.append("eval.n_eval={}".format(args.n_eval))
    return overrides


def setup(args) -> ExperimentConfig:
    config = load_config(args.config, _overrides(args))
    os.makedirs(config.out_dir, exist_ok=True)
    logging.config.dictConfig(config.job_logging)
    with open(os.path.join(config.out_dir, "config.yaml"), 'w') as config_file:
        config_file.write(to_yaml(config))
    return config


def _make_env(config: ExperimentConfig):
    return make_env(config.env.id, **config.env.params)


def cmd_train(args) -> int:
    config = setup(args)
    env = _make_env(config)
    log_path = os.path.join(config.out_dir, "train_log.jsonl")
    rng = np.random.default_rng([config.seed, TRAIN_STREAM])
    bundle, buffers, last_record = None, TrainingBuffers.empty(env.process_spec.n_g, config.agent), None
    if args.resume is not None:
        bundle, buffers, last_record = _load_run(args.resume)
        _check_bundle(bundle, config)
        # a resumed run draws its episodes from a stream keyed on where it restarts
        rng = np.random.default_rng([config.seed, TRAIN_STREAM, int(last_record["iteration"])])
    same_dir = args.resume is not None and os.path.samefile(args.resume, config.out_dir)
    training_log = TrainingLog(log_path, keep_existing=same_dir)
    bundle = train(env, config.agent, rng,
                   env_id=config.env.id,
                   training_log=training_log,
                   buffers=buffers,
                   constraint_scales=config.env.constraint_scales,
                   progress=config.progress,
                   workers=config.workers,
                   bundle=bundle,
                   resume_record=last_record)
    bundle.save(os.path.join(config.out_dir, "bundle"))
    buffers.dump(os.path.join(config.out_dir, "buffers.h5"))
    log.info("saved bundle and training log to %s", config.out_dir)
    return EXIT_OK


def _load_run(run_dir: str):
    """Bundle, buffers and last training record of an earlier ``train`` run."""
    records = TrainingLog.read(os.path.join(run_dir, "train_log.jsonl"))
    if not records:
        raise ConfigError("{} has no completed training iteration".format(run_dir), key="resume")
    bundle = PolicyBundle.load(os.path.join(run_dir, "bundle"))
    buffers = TrainingBuffers.load(os.path.join(run_dir, "buffers.h5"))
    return bundle, buffers, records[-1]


def cmd_tune(args) -> int:
    config = setup(args)
    env = _make_env(config)
    bundle = PolicyBundle.load(args.bundle)
    _check_bundle(bundle, config)
    settings = config.calibrate
    result = broyden_tune(env, bundle, config.omega, settings.n_samples, settings.tol, settings.max_iter,
                          np.random.default_rng([config.seed, TUNE_STREAM]),
                          allocation=settings.allocation,
                          smoothing=settings.smoothing,
                          es_config=config.agent.es,
                          fd_fraction=settings.fd_fraction,
                          damping_fraction=settings.damping_fraction,
                          progress=config.progress,
                          workers=config.workers)
    bundle.save(os.path.join(config.out_dir, "bundle_tuned"))
    result.save(os.path.join(config.out_dir, "tune_report.yaml"))
    pd.DataFrame(result.history).to_csv(os.path.join(config.out_dir, "tune_history.csv"), index=False)
    log.info("tuned backoffs %s, marginals %s, joint %.4f", result.backoffs.tolist(),
             result.estimate.marginals.tolist(), result.estimate.joint)
    return EXIT_OK if result.converged else EXIT_NOT_CONVERGED


def cmd_eval(args) -> int:
    config = setup(args)
    env = _make_env(config)
    if args.nmpc:
        policy = nmpc_policy(env, config.nmpc)
        name, backoffs = args.name or "NMPC", None
    else:
        bundle = PolicyBundle.load(args.bundle)
        _check_bundle(bundle, config)
        policy = greedy_policy(bundle, config.agent.es, seed=config.seed)
        backoffs = bundle.backoffs.tolist()
        name = args.name or ("RL with backoffs" if np.any(bundle.backoffs) else "RL without backoffs")
    seeds = np.random.default_rng([config.seed, EVAL_STREAM]).integers(2 ** 31 - 1, size=config.eval.n_eval)
    report, trajectories = evaluate_policy(env, policy, seeds, name, config.env.id,
                                           config.eval.percentiles, backoffs, config.progress, config.workers)
    stem = _slug(name)
    save_report(report, config.out_dir, stem)
    frames = []
    for episode, trajectory in enumerate(trajectories):
        frame = trajectory.to_frame(env)
        frame.insert(0, "seed", trajectory.seed)
        frame.insert(0, "episode", episode)
        frames.append(frame)
    pd.concat(frames, ignore_index=True).to_csv(os.path.join(config.out_dir, "{}_trajectories.csv".format(stem)),
                                                index=False)
    return EXIT_OK


def cmd_compare(args) -> int:
    reports = [load_report(path) for path in args.reports]
    table = compare_reports(reports)
    txt_path, _ = write_comparison(table, args.out)
    with open(txt_path) as txt_file:
        sys.stdout.write(txt_file.read())
    return EXIT_OK


def cmd_inspect(args) -> int:
    with h5py.File(args.path, 'r') as h5_file:
        def visitor(name, item):
            if isinstance(item, h5py.Dataset):
                sys.stdout.write("{}\t{}\t{}\n".format(name, item.shape, item.dtype))

        for key, value in h5_file.attrs.items():
            sys.stdout.write("@{}\t{}\n".format(key, value))
        h5_file.visititems(visitor)
    return EXIT_OK


def _check_bundle(bundle: PolicyBundle, config: ExperimentConfig) -> None:
    if bundle.env_id and bundle.env_id != config.env.id:
        raise ConfigError("bundle was trained on {}, config selects {}".format(bundle.env_id, config.env.id),
                          key="env.id")


def _slug(name: str) -> str:
    return "".join(c if c.isalnum() else "_" for c in name.lower()).strip("_") or "eval"


COMMANDS = {
    "train": cmd_train,
    "tune": cmd_tune,
    "eval": cmd_eval,
    "compare": cmd_compare,
    "inspect": cmd_inspect,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as err:
        log.error("configuration error: %s", err)
        sys.stderr.write("ocql: configuration error: {}\n".format(err))
        return EXIT_CONFIG
    except (OcqlError, FileNotFoundError, ValueError, OSError) as err:
        log.error("%s failed: %s", args.command, err)
        sys.stderr.write("ocql: {} failed: {}\n".format(args.command, err))
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
