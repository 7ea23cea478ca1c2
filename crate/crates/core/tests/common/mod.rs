#![allow(dead_code)]

use std::collections::BTreeMap;

use gsi_core::config::Config;
use gsi_core::estimator::{
    associate_gnss, bootstrap_anchor, keyframe_times, EnuAnchor, GnssFix, Keyframe, SensorRig,
};
use gsi_core::factors::NavState;
use gsi_core::geometry::RigidTransform3;
use gsi_core::preintegration::{integrate, ImuSample};
use gsi_core::simulator::{simulate, Dataset};
use nalgebra::Vector3;

/// Default configuration shrunk to a short field.
pub fn config(seed: u64, rows: usize, row_length: f64, noise_free: bool) -> Config {
    let mut config = Config::default();
    config.scenario.seed = seed;
    config.scenario.rows = rows;
    config.scenario.row_length = row_length;
    config.scenario.max_features = 40;
    if noise_free {
        config.scenario = config.scenario.noise_free();
    }
    config
}

pub fn dataset(config: &Config) -> Dataset {
    let rig = config.rig();
    simulate(
        &config.scenario,
        &config.imu,
        &rig.camera,
        &rig.lever_arm,
        &rig.gravity,
    )
    .expect("scenario simulates")
}

fn segment(imu: &[ImuSample], t0: f64, t1: f64) -> Vec<ImuSample> {
    let first = imu.partition_point(|s| s.timestamp <= t0);
    let mut out = vec![ImuSample {
        timestamp: t0,
        ..imu[first - 1]
    }];
    out.extend(
        imu[first..]
            .iter()
            .take_while(|s| s.timestamp < t1)
            .copied(),
    );
    out
}

/// Keyframes placed like the pipeline does, but holding the true states,
/// plus every observed landmark at its true position.
pub fn truth_keyframes(
    ds: &Dataset,
    config: &Config,
    count: usize,
) -> (Vec<Keyframe>, BTreeMap<u64, Vector3<f64>>) {
    let rig = config.rig();
    let times: Vec<f64> = ds.frames.iter().map(|f| f.timestamp).collect();
    let selected: Vec<usize> = keyframe_times(&times, config.estimator.keyframe_interval)
        .into_iter()
        .take(count)
        .collect();
    let kf_times: Vec<f64> = selected.iter().map(|&i| times[i]).collect();
    let association =
        associate_gnss(&kf_times, &ds.gnss, config.estimator.association_threshold).unwrap();
    let mut keyframes: Vec<Keyframe> = Vec::new();
    let mut landmarks = BTreeMap::new();
    for (j, &i) in selected.iter().enumerate() {
        let t = kf_times[j];
        let truth = ds.truth.state_at(t);
        let bias_index = ds.imu.partition_point(|s| s.timestamp <= t) - 1;
        let state = NavState {
            pose: truth.pose,
            velocity: truth.velocity,
            bias: ds.true_biases[bias_index],
        };
        let pre = (j > 0).then(|| {
            let prev: &Keyframe = &keyframes[j - 1];
            let samples = segment(&ds.imu, prev.timestamp, t);
            integrate(&samples, t, prev.state.bias, &rig.imu_noise).unwrap()
        });
        for (id, _) in &ds.frames[i].observations {
            landmarks.insert(*id, ds.landmarks[ds.track_landmarks[*id as usize]]);
        }
        keyframes.push(Keyframe {
            id: j as u64,
            timestamp: t,
            state,
            observations: ds.frames[i].observations.clone(),
            preintegration_from_prev: pre,
            gnss: association.by_keyframe[j].map(|f| ds.gnss[f].clone()),
        });
    }
    (keyframes, landmarks)
}

/// Anchor bootstrapped from the true poses of the first associated keyframes.
pub fn truth_anchor(keyframes: &[Keyframe], rig: &SensorRig, k: usize) -> EnuAnchor {
    let pairs: Vec<(GnssFix, RigidTransform3)> = keyframes
        .iter()
        .filter_map(|kf| kf.gnss.clone().map(|g| (g, kf.state.pose)))
        .collect();
    bootstrap_anchor(&pairs, k.min(pairs.len()), &rig.lever_arm).unwrap()
}
