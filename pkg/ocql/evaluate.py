"""
Monte Carlo evaluation of a policy: violation probabilities, objective statistics,
percentile bands of constraints and states, per-step solve times and report files.
"""
import logging
import os
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from omegaconf import OmegaConf

from ocql.core import Policy, ProcessEnv, Trajectory
from ocql.parallel import run_rollouts

log = logging.getLogger(__name__)


def nearest_rank_percentile(values, p: float, axis: int = 0) -> np.ndarray:
    """
    Smallest sample such that at least p percent of the samples are <= it,
    i.e. the ceil(p / 100 * n)-th order statistic (1-based, at least the first).
    """
    if not 0.0 <= p <= 100.0:
        raise ValueError("percentile must lie in [0, 100], got {}".format(p))
    ordered = np.sort(np.asarray(values, dtype=float), axis=axis)
    n = ordered.shape[axis]
    rank = max(int(np.ceil(p / 100.0 * n)), 1)
    return np.take(ordered, rank - 1, axis=axis)


def violation_probabilities(trajectories: Sequence[Trajectory]) -> Tuple[np.ndarray, float]:
    """Fraction of trajectories violating each constraint at any time, and any constraint at any time."""
    worst = np.array([trajectory.worst_violations for trajectory in trajectories])
    violated = worst > 0
    return violated.mean(axis=0), float(np.any(violated, axis=1).mean())


def percentile_bands(trajectories: Sequence[Trajectory], env: ProcessEnv, percentiles: Sequence[float]
                     ) -> Tuple[pd.DataFrame, pd.DataFrame]:
    """
    Long-format bands with columns (time, constraint|state, percentile, value), one row per
    time instant, variable and percentile.
    """
    spec = env.process_spec
    times = spec.time_grid
    g = np.stack([trajectory.constraint_values for trajectory in trajectories])  # (n, t_f + 1, n_g)
    x = np.stack([trajectory.states for trajectory in trajectories])
    constraint_rows, state_rows = [], []
    for p in percentiles:
        g_p = nearest_rank_percentile(g, p, axis=0)
        x_p = nearest_rank_percentile(x, p, axis=0)
        for k, t in enumerate(times):
            for j, name in enumerate(spec.constraint_names):
                constraint_rows.append((float(t), name, float(p), float(g_p[k, j])))
            for i, name in enumerate(spec.state_names):
                state_rows.append((float(t), name, float(p), float(x_p[k, i])))
    return (pd.DataFrame(constraint_rows, columns=["time", "constraint", "percentile", "value"]),
            pd.DataFrame(state_rows, columns=["time", "state", "percentile", "value"]))


@dataclass
class EvalReport:
    algorithm: str
    env_id: str
    n_eval: int
    violation_probabilities: np.ndarray
    joint_violation_probability: float
    objective_mean: float
    objective_std: float
    percentiles: List[float]
    solve_time_mean: float = float("nan")
    solve_time_std: float = float("nan")
    constraint_names: List[str] = field(default_factory=list)
    backoffs: Optional[List[float]] = None
    constraint_bands: Optional[pd.DataFrame] = None
    state_bands: Optional[pd.DataFrame] = None

    def summary(self) -> dict:
        return {
            "algorithm": self.algorithm,
            "env_id": self.env_id,
            "n_eval": self.n_eval,
            "constraint_names": list(self.constraint_names),
            "violation_probabilities": np.asarray(self.violation_probabilities, dtype=float).tolist(),
            "joint_violation_probability": float(self.joint_violation_probability),
            "objective_mean": float(self.objective_mean),
            "objective_std": float(self.objective_std),
            "percentiles": [float(p) for p in self.percentiles],
            "solve_time_mean": float(self.solve_time_mean),
            "solve_time_std": float(self.solve_time_std),
            "backoffs": None if self.backoffs is None else [float(b) for b in self.backoffs],
        }


def build_report(trajectories: Sequence[Trajectory], env: ProcessEnv, algorithm: str, env_id: str,
                 percentiles: Sequence[float] = (1.0, 50.0, 99.0),
                 solve_times: Optional[Sequence[float]] = None,
                 backoffs: Optional[Sequence[float]] = None) -> EvalReport:
    percentiles = [float(p) for p in percentiles]
    if any(not 0.0 < p < 100.0 for p in percentiles) or percentiles != sorted(percentiles):
        raise ValueError("percentiles must be sorted and inside (0, 100), got {}".format(percentiles))
    p_v, joint = violation_probabilities(trajectories)
    objectives = np.array([trajectory.objective for trajectory in trajectories])
    constraint_bands, state_bands = percentile_bands(trajectories, env, percentiles)
    solve_times = np.asarray(solve_times if solve_times else [np.nan], dtype=float)
    return EvalReport(algorithm=algorithm,
                      env_id=env_id,
                      n_eval=len(trajectories),
                      violation_probabilities=p_v,
                      joint_violation_probability=joint,
                      objective_mean=float(objectives.mean()),
                      objective_std=float(objectives.std()),
                      percentiles=percentiles,
                      solve_time_mean=float(np.mean(solve_times)),
                      solve_time_std=float(np.std(solve_times)),
                      constraint_names=list(env.process_spec.constraint_names),
                      backoffs=None if backoffs is None else [float(b) for b in backoffs],
                      constraint_bands=constraint_bands,
                      state_bands=state_bands)


def evaluate_policy(env: ProcessEnv,
                    policy: Policy,
                    seeds: Sequence[int],
                    algorithm: str,
                    env_id: str = "",
                    percentiles: Sequence[float] = (1.0, 50.0, 99.0),
                    backoffs: Optional[Sequence[float]] = None,
                    progress: bool = False,
                    workers: int = 1) -> Tuple[EvalReport, List[Trajectory]]:
    """
    Roll out ``policy`` once per seed, over ``workers`` processes, and summarise.
    The first integration failure is re-raised with its episode and seed attached.
    """
    results = run_rollouts(env, policy, seeds, workers, progress=progress, desc="eval {}".format(algorithm))
    for result in results:
        if result.error is not None:
            log.warning("evaluation rollout failed: %s", result.error)
            raise result.error
    trajectories = [result.trajectory for result in results]
    solve_times = [step_time for result in results for step_time in result.solve_times]
    report = build_report(trajectories, env, algorithm, env_id, percentiles, solve_times, backoffs)
    log.info("%s: joint P_v=%.3f objective=%.4g +- %.4g", algorithm, report.joint_violation_probability,
             report.objective_mean, report.objective_std)
    return report, trajectories


def save_report(report: EvalReport, out_dir: str, stem: str = "eval") -> str:
    """Write ``<stem>.yaml`` plus the two band CSVs; returns the YAML path."""
    os.makedirs(out_dir, exist_ok=True)
    summary = report.summary()
    if report.constraint_bands is not None:
        summary["constraint_bands"] = "{}_constraint_bands.csv".format(stem)
        report.constraint_bands.to_csv(os.path.join(out_dir, summary["constraint_bands"]), index=False)
    if report.state_bands is not None:
        summary["state_bands"] = "{}_state_bands.csv".format(stem)
        report.state_bands.to_csv(os.path.join(out_dir, summary["state_bands"]), index=False)
    path = os.path.join(out_dir, "{}.yaml".format(stem))
    OmegaConf.save(OmegaConf.create(summary), path)
    return path


def load_report(path: str) -> EvalReport:
    summary = OmegaConf.to_container(OmegaConf.load(path))
    base = os.path.dirname(path)
    bands = {}
    for key in ("constraint_bands", "state_bands"):
        name = summary.pop(key, None)
        bands[key] = None if name is None else pd.read_csv(os.path.join(base, name))
    summary["violation_probabilities"] = np.array(summary["violation_probabilities"], dtype=float)
    return EvalReport(**summary, **bands)


def compare_reports(reports: Sequence[EvalReport]) -> pd.DataFrame:
    """One row per report, in input order: algorithm, joint P_v, per-constraint P_v, objective."""
    if len(reports) < 2:
        raise ValueError("comparison needs at least two reports, got {}".format(len(reports)))
    env_ids = {report.env_id for report in reports}
    if len(env_ids) != 1:
        raise ValueError("reports come from different environments: {}".format(sorted(env_ids)))
    rows = []
    for report in reports:
        row = {"algorithm": report.algorithm, "joint_P_v": float(report.joint_violation_probability)}
        for name, p_v in zip(report.constraint_names, report.violation_probabilities):
            row["P_v_{}".format(name)] = float(p_v)
        row["objective_mean"] = float(report.objective_mean)
        row["objective_std"] = float(report.objective_std)
        row["solve_time_mean"] = float(report.solve_time_mean)
        rows.append(row)
    return pd.DataFrame(rows)


def write_comparison(table: pd.DataFrame, out_dir: str, stem: str = "compare") -> Tuple[str, str]:
    os.makedirs(out_dir, exist_ok=True)
    txt_path = os.path.join(out_dir, "{}.txt".format(stem))
    csv_path = os.path.join(out_dir, "{}.csv".format(stem))
    with open(txt_path, 'w') as txt_file:
        txt_file.write(table.to_string(index=False) + "\n")
    table.to_csv(csv_path, index=False)
    return txt_path, csv_path
