mod common;

use std::collections::{BTreeMap, BTreeSet};

use gsi_core::estimator::{
    build_problem, run_sequence, solve, EstimatorError, SlidingWindowProblem, SolverSettings,
    StateRole,
};
use gsi_core::evaluation::{ate, AlignMode, DEFAULT_MAX_TIME_OFFSET};
use gsi_core::factors::antenna_position;
use gsi_core::geometry::{so3_exp, RigidTransform3, Rotation3};
use gsi_core::simulator::SensorRecord;
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn converge_fully(problem: &mut SlidingWindowProblem) {
    problem.settings = SolverSettings {
        max_iterations: 60,
        relative_tolerance: 1e-15,
        step_tolerance: 1e-13,
        ..problem.settings
    };
}

#[test]
fn two_keyframes_five_shared_landmarks() {
    let config = common::config(1, 1, 20.0, true);
    let ds = common::dataset(&config);
    let (mut kfs, landmarks) = common::truth_keyframes(&ds, &config, 2);
    let first: BTreeSet<u64> = kfs[0].observations.iter().map(|o| o.0).collect();
    let shared: Vec<u64> = kfs[1]
        .observations
        .iter()
        .map(|o| o.0)
        .filter(|id| first.contains(id))
        .take(5)
        .collect();
    assert_eq!(shared.len(), 5);
    for kf in &mut kfs {
        kf.observations.retain(|o| shared.contains(&o.0));
        kf.gnss = None;
    }
    let landmarks: BTreeMap<u64, Vector3<f64>> = landmarks
        .into_iter()
        .filter(|(id, _)| shared.contains(id))
        .collect();
    let problem = build_problem(&kfs, &landmarks, None, &config.rig(), &config.estimator);
    assert_eq!(problem.inertial.len(), 1);
    assert_eq!(problem.visual.len(), 10);
    assert_eq!(problem.gnss.len(), 0);
    assert_eq!(problem.keyframes[0].role, StateRole::PoseFixed);
}

#[test]
fn window_of_ten_over_thirty_keyframes() {
    let config = common::config(2, 1, 30.0, true);
    let ds = common::dataset(&config);
    let (kfs, landmarks) = common::truth_keyframes(&ds, &config, 30);
    assert_eq!(kfs.len(), 30);
    let anchor = common::truth_anchor(&kfs, &config.rig(), 3);
    let problem = build_problem(
        &kfs,
        &landmarks,
        Some(&anchor),
        &config.rig(),
        &config.estimator,
    );
    assert_eq!(problem.optimized_count(), 10);
    let free: Vec<u64> = problem
        .keyframes
        .iter()
        .filter(|k| k.role == StateRole::Free)
        .map(|k| k.id)
        .collect();
    assert_eq!(free, (20..30).collect::<Vec<u64>>());
    // GNSS on every third keyframe: ceil(10 / 3) +- 1
    assert!(
        (3..=5).contains(&problem.gnss.len()),
        "{}",
        problem.gnss.len()
    );
    // one inertial factor per in-window pair plus the edge to the predecessor
    assert_eq!(problem.inertial.len(), 10);
}

#[test]
fn solve_at_truth_is_a_fixed_point() {
    let config = common::config(3, 1, 30.0, true);
    let ds = common::dataset(&config);
    let (kfs, landmarks) = common::truth_keyframes(&ds, &config, 30);
    let anchor = common::truth_anchor(&kfs, &config.rig(), 3);
    let mut problem = build_problem(
        &kfs,
        &landmarks,
        Some(&anchor),
        &config.rig(),
        &config.estimator,
    );
    let report = solve(&mut problem).unwrap();
    assert!(report.iterations <= 2, "{report:?}");
    assert!(report.final_cost() < 1e-10, "{report:?}");
}

fn perturbed_problem(seed: u64) -> (SlidingWindowProblem, SlidingWindowProblem) {
    let config = common::config(seed, 1, 30.0, true);
    let ds = common::dataset(&config);
    let (kfs, landmarks) = common::truth_keyframes(&ds, &config, 30);
    let anchor = common::truth_anchor(&kfs, &config.rig(), 3);
    let truth = build_problem(
        &kfs,
        &landmarks,
        Some(&anchor),
        &config.rig(),
        &config.estimator,
    );
    let mut problem = truth.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for kf in problem
        .keyframes
        .iter_mut()
        .filter(|k| k.role == StateRole::Free)
    {
        let dir = |rng: &mut ChaCha8Rng| {
            Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            )
            .normalize()
        };
        kf.state.pose.translation += dir(&mut rng) * 0.1;
        kf.state.pose.rotation = kf
            .state
            .pose
            .rotation
            .compose(&so3_exp(&(dir(&mut rng) * 1f64.to_radians())));
    }
    (truth, problem)
}

#[test]
fn recovers_truth_from_perturbed_start() {
    for seed in [4, 5] {
        let (truth, mut problem) = perturbed_problem(seed);
        let report = solve(&mut problem).unwrap();
        for (a, b) in problem.keyframes.iter().zip(&truth.keyframes) {
            let dp = (a.state.pose.translation - b.state.pose.translation).norm();
            let dr = a
                .state
                .pose
                .rotation
                .angle_to(&b.state.pose.rotation)
                .to_degrees();
            assert!(
                dp < 1e-4 && dr < 0.01,
                "kf {}: {dp:e} m {dr:e} deg, {report:?}",
                a.id
            );
        }
    }
}

#[test]
fn held_states_are_bit_identical_and_cost_never_increases() {
    let (_, mut problem) = perturbed_problem(6);
    let before = problem.clone();
    let report = solve(&mut problem).unwrap();
    for (a, b) in problem.keyframes.iter().zip(&before.keyframes) {
        match a.role {
            StateRole::Fixed => assert_eq!(a.state, b.state),
            StateRole::PoseFixed => assert_eq!(a.state.pose, b.state.pose),
            StateRole::Free => {}
        }
    }
    assert!(report.cost_history.len() >= 2);
    for pair in report.cost_history.windows(2) {
        assert!(pair[1] <= pair[0], "{:?}", report.cost_history);
    }
}

#[test]
fn gnss_chi_square_is_consistent_under_noise() {
    // Mean GNSS cost per factor over seeds, against its 3-DoF expectation.
    let mut total = 0.0;
    let mut factors = 0;
    for seed in 0..20 {
        let config = common::config(100 + seed, 1, 30.0, false);
        let ds = common::dataset(&config);
        let (kfs, landmarks) = common::truth_keyframes(&ds, &config, 30);
        let anchor = common::truth_anchor(&kfs, &config.rig(), 10);
        let mut problem = build_problem(
            &kfs,
            &landmarks,
            Some(&anchor),
            &config.rig(),
            &config.estimator,
        );
        let report = solve(&mut problem).unwrap();
        total += report.last.gnss;
        factors += problem.gnss.len();
    }
    let per_factor = total / factors as f64;
    assert!((0.3..=30.0).contains(&per_factor), "{per_factor}");
}

fn transform_problem(problem: &mut SlidingWindowProblem, t: &RigidTransform3) {
    for kf in &mut problem.keyframes {
        kf.state.pose = t.compose(&kf.state.pose);
        kf.state.velocity = t.rotation.rotate(&kf.state.velocity);
    }
    for p in &mut problem.landmarks {
        *p = t.transform_point(p);
    }
}

#[test]
fn visual_inertial_solve_is_gauge_invariant() {
    let config = common::config(7, 1, 20.0, false);
    let ds = common::dataset(&config);
    let (kfs, landmarks) = common::truth_keyframes(&ds, &config, 10);
    let mut a = build_problem(&kfs, &landmarks, None, &config.rig(), &config.estimator);
    converge_fully(&mut a);
    let mut b = a.clone();
    // Gravity-preserving: yaw and translation only.
    let t = RigidTransform3::new(Rotation3::from_yaw(0.7), Vector3::new(3.0, -2.0, 1.0));
    transform_problem(&mut b, &t);
    solve(&mut a).unwrap();
    solve(&mut b).unwrap();
    transform_problem(&mut b, &t.inverse());
    for (x, y) in a.keyframes.iter().zip(&b.keyframes) {
        let dp = (x.state.pose.translation - y.state.pose.translation).norm();
        let dr = x.state.pose.rotation.angle_to(&y.state.pose.rotation);
        assert!(dp < 1e-9 && dr < 1e-9, "kf {}: {dp:e} {dr:e}", x.id);
    }
}

#[test]
fn gnss_pins_the_gauge() {
    let config = common::config(8, 1, 20.0, true);
    let rig = config.rig();
    let ds = common::dataset(&config);
    let (kfs, landmarks) = common::truth_keyframes(&ds, &config, 10);
    let anchor = common::truth_anchor(&kfs, &rig, 3);
    let mut a = build_problem(&kfs, &landmarks, Some(&anchor), &rig, &config.estimator);
    assert!(a.gnss.len() >= 2);
    assert!(a.keyframes.iter().all(|k| k.role == StateRole::Free));
    converge_fully(&mut a);
    let mut b = a.clone();
    transform_problem(
        &mut b,
        &RigidTransform3::from_translation(Vector3::new(1.0, -0.5, 0.3)),
    );
    solve(&mut a).unwrap();
    solve(&mut b).unwrap();
    for (x, y) in a.keyframes.iter().zip(&b.keyframes) {
        let d = antenna_position(&x.state.pose, &rig.lever_arm)
            - antenna_position(&y.state.pose, &rig.lever_arm);
        assert!(d.norm() < 1e-3, "kf {}: {:e}", x.id, d.norm());
    }
}

fn without_gnss(records: &[SensorRecord]) -> Vec<SensorRecord> {
    records
        .iter()
        .filter(|r| !matches!(r, SensorRecord::Gnss(_)))
        .cloned()
        .collect()
}

#[test]
fn empty_gnss_stream_equals_visual_inertial() {
    let config = common::config(9, 1, 20.0, false);
    let ds = common::dataset(&config);
    let records = without_gnss(&ds.records());
    let rig = config.rig();
    let vi = run_sequence(&records, &rig, &config.estimator, false).unwrap();
    let tight = run_sequence(&records, &rig, &config.estimator, true).unwrap();
    assert!(tight.anchor.is_none());
    assert_eq!(vi.trajectory, tight.trajectory);
}

#[test]
fn stream_gap_is_an_error() {
    let config = common::config(10, 1, 20.0, true);
    let ds = common::dataset(&config);
    let records: Vec<SensorRecord> = ds
        .records()
        .into_iter()
        .filter(|r| !(5.0..7.0).contains(&r.timestamp()))
        .collect();
    let err = run_sequence(&records, &config.rig(), &config.estimator, true).unwrap_err();
    assert!(matches!(err, EstimatorError::Gap { .. }), "{err}");
}

#[test]
fn noise_free_runs_track_the_truth() {
    let config = common::config(11, 2, 20.0, true);
    let ds = common::dataset(&config);
    let truth = ds.truth_trajectory();
    let rig = config.rig();
    for use_gnss in [true, false] {
        let out = run_sequence(&ds.records(), &rig, &config.estimator, use_gnss).unwrap();
        assert_eq!(out.anchor.is_some(), use_gnss);
        let r = ate(
            &out.trajectory,
            &truth,
            DEFAULT_MAX_TIME_OFFSET,
            AlignMode::Rigid,
        )
        .unwrap();
        assert!(r.rmse < 1e-3, "gnss {use_gnss}: {}", r.rmse);
    }
}

#[test]
fn gnss_dropout_drift_is_bounded() {
    let mut config = common::config(12, 4, 50.0, false);
    config.scenario.gnss_dropout_start = 90.0;
    config.scenario.gnss_dropout_duration = 30.0;
    let ds = common::dataset(&config);
    let truth = ds.truth_trajectory();
    let out = run_sequence(&ds.records(), &config.rig(), &config.estimator, true).unwrap();
    let r = ate(
        &out.trajectory,
        &truth,
        DEFAULT_MAX_TIME_OFFSET,
        AlignMode::Rigid,
    )
    .unwrap();
    let al = r.alignment();
    let error_at = |range: std::ops::Range<f64>| {
        let errs: Vec<f64> = out
            .trajectory
            .poses()
            .iter()
            .filter(|p| range.contains(&p.timestamp))
            .map(|p| {
                (al.transform_point(&p.pose.translation)
                    - ds.truth.state_at(p.timestamp).pose.translation)
                    .norm()
            })
            .collect();
        errs.iter().sum::<f64>() / errs.len() as f64
    };
    let before = error_at(60.0..90.0);
    let during = error_at(110.0..120.0);
    let after = error_at(150.0..180.0);
    // Error grows while blind, stays bounded, and shrinks once fixes return.
    assert!(
        before < during && during < before + 1.0,
        "{before} {during}"
    );
    assert!(after < during, "{during} {after}");
}
