import os

import numpy as np
import pytest
from scipy.stats import norm

from ocql.agent import greedy_policy
from ocql.core import Trajectory, constant_policy
from ocql.es import EsConfig
from ocql.evaluate import build_report, compare_reports, evaluate_policy, load_report, nearest_rank_percentile, \
    percentile_bands, save_report, violation_probabilities, write_comparison


def fixed_trajectory(worst):
    # two-step trajectory whose constraint path peaks at ``worst``
    worst = np.asarray(worst, dtype=float)
    return Trajectory(states=np.zeros((3, 1)), controls=np.zeros((2, 1)), rewards=np.array([0.0, 1.0]),
                      constraint_values=np.vstack([np.full_like(worst, -5.0), worst, np.full_like(worst, -5.0)]))


def test_nearest_rank_percentile():
    values = np.arange(1.0, 11.0)
    assert nearest_rank_percentile(values, 50) == 5.0
    assert nearest_rank_percentile(values, 99) == 10.0
    assert nearest_rank_percentile(values, 1) == 1.0
    assert nearest_rank_percentile(values, 0) == 1.0
    assert nearest_rank_percentile(values[::-1], 30) == 3.0
    np.testing.assert_array_equal(nearest_rank_percentile(np.array([[1.0, 9.0], [3.0, 7.0]]), 50, axis=0),
                                  [1.0, 7.0])
    with pytest.raises(ValueError):
        nearest_rank_percentile(values, 101)


def test_violation_probabilities():
    trajectories = [fixed_trajectory([1.0, -1.0]), fixed_trajectory([-1.0, -1.0]),
                    fixed_trajectory([1.0, 2.0]), fixed_trajectory([0.0, 0.5])]
    per_constraint, joint = violation_probabilities(trajectories)
    np.testing.assert_allclose(per_constraint, [0.5, 0.5])
    assert joint == 0.75


def test_threshold_violation_rate(threshold_env):
    seeds = np.random.default_rng(0).integers(2 ** 31 - 1, size=400)
    report, trajectories = evaluate_policy(threshold_env, constant_policy([-0.5]), seeds, "constant",
                                           "GaussianThreshold-v0")
    assert report.n_eval == 400 and len(trajectories) == 400
    assert report.joint_violation_probability == pytest.approx(1.0 - norm.cdf(0.0), abs=0.08)
    assert report.objective_mean == pytest.approx(0.0, abs=0.05)
    assert report.solve_time_mean >= 0.0
    assert len(report.constraint_bands) == 3 * 2 * 1
    assert len(report.state_bands) == 3 * 2 * 1
    assert list(report.constraint_bands.columns) == ["time", "constraint", "percentile", "value"]


def test_bands_are_ordered(threshold_env):
    seeds = range(200)
    _, trajectories = evaluate_policy(threshold_env, constant_policy([0.0]), seeds, "constant")
    constraint_bands, _ = percentile_bands(trajectories, threshold_env, [1.0, 50.0, 99.0])
    final = constraint_bands[constraint_bands.time == 1.0].sort_values("percentile")["value"].to_numpy()
    assert final[0] < final[1] < final[2]


def test_build_report_rejects_unsorted_percentiles(threshold_env):
    with pytest.raises(ValueError):
        build_report([fixed_trajectory([0.0])], threshold_env, "x", "id", percentiles=[50.0, 1.0])


def test_report_files_and_comparison(tmp_path, threshold_env):
    out_dir = str(tmp_path)
    seeds = range(50)
    paths = []
    for name, control in (("tight", -1.0), ("loose", 0.0)):
        report, _ = evaluate_policy(threshold_env, constant_policy([control]), seeds, name, "GaussianThreshold-v0",
                                    backoffs=[-control])
        paths.append(save_report(report, out_dir, name))
    assert os.path.isfile(os.path.join(out_dir, "tight_constraint_bands.csv"))
    assert os.path.isfile(os.path.join(out_dir, "loose_state_bands.csv"))

    tight = load_report(paths[0])
    assert tight.algorithm == "tight" and tight.backoffs == [1.0]
    assert len(tight.constraint_bands) == 6
    table = compare_reports([tight, load_report(paths[1])])
    assert list(table.columns) == ["algorithm", "joint_P_v", "P_v_level", "objective_mean", "objective_std",
                                   "solve_time_mean"]
    assert table.joint_P_v[0] < table.joint_P_v[1]
    txt_path, csv_path = write_comparison(table, out_dir)
    assert "tight" in open(txt_path).read()
    assert os.path.isfile(csv_path)


def test_comparison_needs_matching_reports(threshold_env):
    report, _ = evaluate_policy(threshold_env, constant_policy([0.0]), range(10), "a", "GaussianThreshold-v0")
    other, _ = evaluate_policy(threshold_env, constant_policy([0.0]), range(10), "b", "SemiBatchReactor-v0")
    with pytest.raises(ValueError):
        compare_reports([report])
    with pytest.raises(ValueError):
        compare_reports([report, other])


def test_pooled_evaluation_matches_in_process(threshold_env, threshold_bundle):
    policy = greedy_policy(threshold_bundle, EsConfig(population=8, parents=2, generations=4), backoffs=[0.1])
    seeds = list(range(30))
    serial, serial_trajectories = evaluate_policy(threshold_env, policy, seeds, "serial", workers=1)
    pooled, pooled_trajectories = evaluate_policy(threshold_env, policy, seeds, "pooled", workers=2)
    assert serial.joint_violation_probability == pooled.joint_violation_probability
    assert serial.objective_mean == pooled.objective_mean
    for a, b in zip(serial_trajectories, pooled_trajectories):
        np.testing.assert_array_equal(a.states, b.states)
        assert a.seed == b.seed
