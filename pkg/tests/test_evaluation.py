import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import trapezoid

from gcpbench.errors import DegenerateInput, EmptySequence, InsufficientCoverage, MissingFrame
from gcpbench.evaluation import (
    GCPObservation,
    ScoreBrackets,
    challenge_score,
    estimated_gcp_positions,
    evaluate_multi_session,
    evaluate_sequence,
    multiplier_for_site,
    rayleigh_fit,
    report_from_errors,
    score_error,
    sequence_score,
)
from gcpbench.geometry import RigidTransform, Trajectory

from helpers import (
    GCP6,
    LIDAR_CALIB,
    knot_times,
    make_bundle,
    random_transform,
    scaling_bundle,
    truth_trajectory,
    two_sessions,
)

IDENTITY = RigidTransform.identity()


def _brute_bracket(e):
    # literal transcription of the bracket table
    if e < 0.005:
        return 20
    if e < 0.01:
        return 10
    if e < 0.03:
        return 6
    if e < 0.06:
        return 5
    if e < 0.1:
        return 3
    if e < 0.4:
        return 1
    return 0


# --- scoring ------------------------------------------------------------------


@pytest.mark.parametrize(
    "e, points",
    [(0.004, 20), (0.005, 10), (0.007, 10), (0.01, 6), (0.05, 5), (0.08, 3), (0.2, 1), (0.4, 0), (1.0, 0), (0.0, 20)],
)
def test_score_error_examples(e, points):
    assert score_error(e) == points


def test_score_error_dense_grid_matches_table_and_is_monotone():
    grid = np.linspace(0, 0.5, 50_001)
    scores = [score_error(e) for e in grid]
    assert scores == [_brute_bracket(e) for e in grid]
    assert all(a >= b for a, b in zip(scores, scores[1:]))


def test_score_error_rejects_negative_and_nan():
    with pytest.raises(ValueError):
        score_error(-1e-6)
    with pytest.raises(ValueError):
        score_error(float("nan"))


@pytest.mark.parametrize(
    "brackets",
    [
        ((0.01, 20), (0.005, 10)),
        ((0.005, 10), (0.01, 20)),
        ((0.005, 20), (0.01, 0)),
        (),
    ],
)
def test_bracket_table_validation(brackets):
    with pytest.raises(ValueError):
        ScoreBrackets(brackets)


def test_sequence_score_examples():
    assert sequence_score([20] * 7) == 100.0
    assert sequence_score([20, 10, 6, 0]) == 45.0
    assert sequence_score([20, 10, 6, 0], multiplier=200) == 90.0
    with pytest.raises(EmptySequence):
        sequence_score([])


@given(st.lists(st.sampled_from([0, 1, 3, 5, 6, 10, 20]), min_size=1, max_size=30), st.randoms())
def test_sequence_score_permutation_and_linearity(scores, rnd):
    shuffled = list(scores)
    rnd.shuffle(shuffled)
    assert math.isclose(sequence_score(scores), sequence_score(shuffled), rel_tol=1e-12)
    assert math.isclose(sequence_score(scores, 200), 2 * sequence_score(scores, 100), rel_tol=1e-12)
    assert 0 <= sequence_score(scores) <= 100


def test_site_multiplier():
    assert [multiplier_for_site(s) for s in (1, 2, 3)] == [100, 100, 200]


def test_challenge_score_sums_sequences():
    a = report_from_errors([("a", 0, 0.0), ("b", 1, 0.0), ("c", 2, 0.02)])
    b = report_from_errors([("a", 0, 0.5)], multiplier=200)
    assert challenge_score({"s2": b, "s1": a}) == a.score + b.score


# --- estimated positions -------------------------------------------------------


def _static_traj(translation=(0, 0, 0)):
    return Trajectory([0.0, 1.0], [translation, translation], [[1, 0, 0, 0]] * 2)


def test_estimated_positions_identity():
    obs = [GCPObservation(0.5, "A", "lidar", (1.0, 0.0, 0.0))]
    est = estimated_gcp_positions(_static_traj(), obs, {"lidar": IDENTITY})
    assert np.allclose(est.positions, [[1, 0, 0]])


def test_estimated_positions_tip_offset():
    obs = [GCPObservation(0.5, "A", "tip", (0.0, 0.0, 0.0))]
    est = estimated_gcp_positions(_static_traj((0, 0, 5)), obs, {"tip": IDENTITY})
    assert np.allclose(est.positions, [[0, 0, 5]])


def test_estimated_positions_gap_is_uncovered():
    traj = Trajectory([0.0, 0.1, 2.1, 2.2], np.zeros((4, 3)), [[1, 0, 0, 0]] * 4)
    obs = [GCPObservation(1.0, "A", "lidar", (0, 0, 0)), GCPObservation(0.05, "B", "lidar", (0, 0, 0))]
    est = estimated_gcp_positions(traj, obs, {"lidar": IDENTITY}, max_gap=0.5)
    assert est.names == ["B"]
    assert est.uncovered[0][0] == "A" and "GapTooLarge" in est.uncovered[0][2]


def test_estimated_positions_missing_frame():
    obs = [GCPObservation(0.5, "A", "tip", (0, 0, 0))]
    with pytest.raises(MissingFrame):
        estimated_gcp_positions(_static_traj(), obs, {"lidar": IDENTITY})


def test_estimated_positions_use_calibration():
    calib = {"lidar": LIDAR_CALIB}
    traj = truth_trajectory(5.0)
    t = knot_times(1)[0]
    world = np.array([1.0, 2.0, 0.0])
    p = (traj.pose(int(round(t / 0.05))) @ LIDAR_CALIB).inverse().apply(world)
    est = estimated_gcp_positions(traj, [GCPObservation(t, "A", "lidar", tuple(p))], calib)
    assert np.allclose(est.positions[0], world, atol=1e-12)


# --- sequence evaluation ----------------------------------------------------------


def test_perfect_submission_scores_100_under_any_world_frame():
    b = make_bundle(GCP6, knot_times(6))
    rng = np.random.default_rng(0)
    for T in [IDENTITY] + [random_transform(rng, 50.0) for _ in range(3)]:
        r = evaluate_sequence(b.submitted.transformed(T), b.observations, b.calib, b.gcps)
        assert r.score == 100.0
        assert r.rmse_ate < 1e-9
        assert r.coverage == 1.0


def test_errors_invariant_under_world_frame_change():
    rng = np.random.default_rng(1)
    disp = rng.normal(0, 0.02, (6, 3))
    b = make_bundle(GCP6, knot_times(6), disp)
    base = evaluate_sequence(b.submitted, b.observations, b.calib, b.gcps)
    moved = evaluate_sequence(b.submitted.transformed(random_transform(rng, 100.0)), b.observations, b.calib, b.gcps)
    assert np.allclose(base.errors, moved.errors, atol=1e-9)


def test_two_covered_gcps_is_insufficient():
    b = make_bundle(GCP6[:2], knot_times(2), extra_uncovered=[("X", (1, 1, 0), 99.0)])
    with pytest.raises(InsufficientCoverage):
        evaluate_sequence(b.submitted, b.observations, b.calib, b.gcps)


def test_report_from_post_alignment_residuals():
    covered = [("G1", 1, 0.004), ("G2", 2, 0.004), ("G3", 3, 0.02), ("G4", 4, 0.07), ("G5", 5, 0.2)]
    r = report_from_errors(covered, [("G6", 6, "OutOfRange")])
    assert r.scores == [20, 20, 6, 3, 1, 0]
    assert math.isclose(r.score, 50 / 120 * 100, rel_tol=1e-12)
    assert math.isclose(r.coverage, 5 / 6)
    oracle = math.sqrt(sum(e * e for _, _, e in covered) / 5)
    assert math.isclose(r.rmse_ate, oracle, rel_tol=1e-12)
    assert abs(r.rmse_ate - 0.09522) < 1e-5


def test_scaling_fixture_scores_20_10_6_0():
    b = scaling_bundle()
    r = evaluate_sequence(b.submitted, b.observations, b.calib, b.gcps)
    assert r.scores == [20, 10, 6, 0]
    assert np.allclose(r.errors, [0.0045, 0.0065, 0.0105], atol=1e-9)
    assert r.score == 45.0
    r3 = evaluate_sequence(b.submitted, b.observations, b.calib, b.gcps, multiplier=200)
    assert r3.score == 90.0


def test_uncovered_gcp_lowers_score_but_not_rmse():
    rng = np.random.default_rng(2)
    disp = rng.normal(0, 0.003, (6, 3))
    full = make_bundle(GCP6, knot_times(6), disp)
    more = make_bundle(GCP6, knot_times(6), disp, extra_uncovered=[("late", (4, 4, 0), 40.0)])
    a = evaluate_sequence(full.submitted, full.observations, full.calib, full.gcps)
    b = evaluate_sequence(more.submitted, more.observations, more.calib, more.gcps)
    assert b.score < a.score
    assert math.isclose(a.rmse_ate, b.rmse_ate, rel_tol=1e-12)
    assert b.coverage == 6 / 7


def test_unknown_gcp_name_rejected():
    b = make_bundle(GCP6[:3], knot_times(3))
    obs = b.observations + [GCPObservation(1.0, "nope", "lidar", (0, 0, 0))]
    with pytest.raises(KeyError):
        evaluate_sequence(b.submitted, obs, b.calib, b.gcps)


def test_report_dict_shape():
    b = scaling_bundle()
    d = evaluate_sequence(b.submitted, b.observations, b.calib, b.gcps).to_dict()
    assert set(d) == {"score", "rmse_ate", "gcp_coverage", "multiplier", "gcps", "alignment"}
    assert [g["name"] for g in d["gcps"]] == ["G1", "G2", "G3", "G4"]


# --- multi-session --------------------------------------------------------------


def test_multi_session_shared_frame_is_perfect():
    trajs, obs, gcps = two_sessions()
    r = evaluate_multi_session(trajs, obs, {"lidar": LIDAR_CALIB}, gcps)
    assert r.score == 100.0


def test_multi_session_offset_second_session_scores_half():
    trajs, obs, gcps = two_sessions(np.array([0.5, 0.0, 0.0]))
    r = evaluate_multi_session(trajs, obs, {"lidar": LIDAR_CALIB}, gcps)
    by_name = {g.name: g.score for g in r.gcps}
    assert by_name == {"G1": 20, "G2": 20, "G3": 20, "G4": 0, "G5": 0, "G6": 0}
    assert r.score == 50.0


def test_multi_session_not_invariant_to_per_session_transforms():
    trajs, obs, gcps = two_sessions()
    rng = np.random.default_rng(3)
    moved = [trajs[0], trajs[1].transformed(random_transform(rng, 1.0))]
    assert evaluate_multi_session(moved, obs, {"lidar": LIDAR_CALIB}, gcps).score < 100
    common = random_transform(rng, 10.0)
    both = [t.transformed(common) for t in trajs]
    assert evaluate_multi_session(both, obs, {"lidar": LIDAR_CALIB}, gcps).score == 100.0


def test_multi_session_joint_alignment_spreads_the_offset():
    trajs, obs, gcps = two_sessions(np.array([0.5, 0.0, 0.0]))
    r = evaluate_multi_session(trajs, obs, {"lidar": LIDAR_CALIB}, gcps, alignment="joint")
    # a least-squares fit over all six GCPs halves the offset for everyone
    assert r.score < 50.0
    assert np.all(r.errors > 0.1)


def test_single_session_matches_evaluate_sequence():
    b = scaling_bundle()
    a = evaluate_sequence(b.submitted, b.observations, b.calib, b.gcps)
    for mode in ("reference", "joint"):
        m = evaluate_multi_session([b.submitted], [b.observations], b.calib, b.gcps, alignment=mode)
        assert m.scores == a.scores
        assert np.allclose(m.errors, a.errors, atol=1e-12)
        assert m.score == a.score


def test_multi_session_argument_checks():
    b = scaling_bundle()
    with pytest.raises(ValueError):
        evaluate_multi_session([b.submitted], [], b.calib, b.gcps)
    with pytest.raises(ValueError):
        evaluate_multi_session([b.submitted], [b.observations], b.calib, b.gcps, alignment="best")
    with pytest.raises(EmptySequence):
        evaluate_multi_session([], [], b.calib, b.gcps)


# --- Rayleigh ---------------------------------------------------------------------


def test_rayleigh_quantile_ratio_closed_form():
    fit = rayleigh_fit([0.001, 0.002, 0.003])
    ratio = fit.quantile(0.997) / fit.quantile(0.95)
    assert math.isclose(ratio, math.sqrt(math.log(0.003) / math.log(0.05)), rel_tol=1e-12)
    assert abs(ratio - 6.32 / 4.54) / (6.32 / 4.54) < 1e-3


def test_rayleigh_fit_recovers_scale():
    rng = np.random.default_rng(0)
    e = rng.rayleigh(1.855e-3, 10_000)
    fit = rayleigh_fit(e)
    assert abs(fit.quantile(0.95) - 4.54e-3) / 4.54e-3 < 0.05
    assert abs(fit.quantile(0.997) - 6.32e-3) / 6.32e-3 < 0.05


def test_rayleigh_mle_formula():
    e = np.array([0.001, 0.004, 0.002, 0.003])
    assert math.isclose(rayleigh_fit(e).sigma, math.sqrt(np.sum(e**2) / 8), rel_tol=1e-12)


def test_rayleigh_degenerate_cases():
    fit = rayleigh_fit([0.0, 0.0, 0.0])
    assert fit.degenerate and fit.sigma == 0 and fit.quantile(0.95) == 0
    with pytest.raises(DegenerateInput):
        rayleigh_fit([0.001])
    with pytest.raises(DegenerateInput):
        rayleigh_fit([0.001, -0.002])


@given(st.floats(0.0, 0.999), st.floats(0.0, 0.999))
def test_rayleigh_quantiles_ordered(p1, p2):
    fit = rayleigh_fit([0.001, 0.003])
    if p1 < p2:
        assert fit.quantile(p1) < fit.quantile(p2)


def test_rayleigh_pdf_integrates_to_one():
    fit = rayleigh_fit([0.001, 0.003, 0.002])
    x = np.linspace(0, 0.05, 200_001)
    assert abs(trapezoid(fit.pdf(x), x) - 1.0) < 1e-6
