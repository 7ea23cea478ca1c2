//! Trajectory metrics: Umeyama-aligned absolute trajectory error, run
//! comparisons with best-of-k reporting, and a smoothness measure.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::geometry::{umeyama_align, GeometryError, RigidTransform3, SimilarityTransform};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("timestamps must strictly increase (at pose {index}, t = {timestamp})")]
    NonIncreasing { index: usize, timestamp: f64 },
    #[error("only {matched} poses matched in time; at least 3 are needed")]
    InsufficientOverlap { matched: usize },
    #[error("need at least {needed} poses, got {got}")]
    TooFewPoses { needed: usize, got: usize },
    #[error("no runs to compare")]
    NoRuns,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimedPose {
    pub timestamp: f64,
    pub pose: RigidTransform3,
}

/// Poses with strictly increasing timestamps.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Trajectory {
    poses: Vec<TimedPose>,
}

impl Trajectory {
    pub fn new(poses: Vec<TimedPose>) -> Result<Self, EvalError> {
        for (index, w) in poses.windows(2).enumerate() {
            if !(w[1].timestamp > w[0].timestamp) {
                return Err(EvalError::NonIncreasing {
                    index: index + 1,
                    timestamp: w[1].timestamp,
                });
            }
        }
        Ok(Self { poses })
    }

    pub fn poses(&self) -> &[TimedPose] {
        &self.poses
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn positions(&self) -> Vec<Vector3<f64>> {
        self.poses.iter().map(|p| p.pose.translation).collect()
    }

    /// Applies `transform` on the left of every pose.
    pub fn transformed(&self, transform: &RigidTransform3) -> Self {
        Self {
            poses: self
                .poses
                .iter()
                .map(|p| TimedPose {
                    timestamp: p.timestamp,
                    pose: transform.compose(&p.pose),
                })
                .collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AlignMode {
    #[default]
    Rigid,
    Similarity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AteReport {
    pub rmse: f64,
    pub mean: f64,
    pub median: f64,
    pub max: f64,
    pub pairs: usize,
    pub align_mode: AlignMode,
    pub scale: f64,
    /// Alignment rotation as a row-major 3x3 matrix.
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
}

impl AteReport {
    pub fn alignment(&self) -> SimilarityTransform {
        let r = nalgebra::Matrix3::from_row_slice(&self.rotation);
        SimilarityTransform {
            scale: self.scale,
            rotation: crate::geometry::Rotation3::from_matrix_unchecked(r),
            translation: Vector3::from(self.translation),
        }
    }
}

/// Default window for matching estimate and reference timestamps, seconds.
pub const DEFAULT_MAX_TIME_OFFSET: f64 = 0.02;

/// Pairs each estimate pose with the nearest reference pose in time when
/// they are at most `max_time_offset` apart.
pub fn match_poses(
    estimate: &Trajectory,
    reference: &Trajectory,
    max_time_offset: f64,
) -> Vec<(usize, usize)> {
    let refs = reference.poses();
    let mut out = Vec::new();
    for (i, p) in estimate.poses().iter().enumerate() {
        let upper = refs.partition_point(|r| r.timestamp < p.timestamp);
        let mut best: Option<(f64, usize)> = None;
        for k in [upper.wrapping_sub(1), upper] {
            if let Some(r) = refs.get(k) {
                let d = (r.timestamp - p.timestamp).abs();
                if best.is_none_or(|(bd, _)| d < bd) {
                    best = Some((d, k));
                }
            }
        }
        if let Some((d, k)) = best {
            if d <= max_time_offset {
                out.push((i, k));
            }
        }
    }
    out
}

/// Translational ATE after aligning the estimate onto the reference.
pub fn ate(
    estimate: &Trajectory,
    reference: &Trajectory,
    max_time_offset: f64,
    mode: AlignMode,
) -> Result<AteReport, EvalError> {
    let pairs = match_poses(estimate, reference, max_time_offset);
    if pairs.len() < 3 {
        return Err(EvalError::InsufficientOverlap {
            matched: pairs.len(),
        });
    }
    let source: Vec<Vector3<f64>> = pairs
        .iter()
        .map(|&(i, _)| estimate.poses()[i].pose.translation)
        .collect();
    let target: Vec<Vector3<f64>> = pairs
        .iter()
        .map(|&(_, k)| reference.poses()[k].pose.translation)
        .collect();
    let alignment = umeyama_align(&source, &target, mode == AlignMode::Similarity)?;
    let mut errors: Vec<f64> = source
        .iter()
        .zip(&target)
        .map(|(s, t)| (alignment.transform_point(s) - t).norm())
        .collect();
    let n = errors.len() as f64;
    let rmse = (errors.iter().map(|e| e * e).sum::<f64>() / n).sqrt();
    let mean = errors.iter().sum::<f64>() / n;
    let max = errors.iter().copied().fold(0.0, f64::max);
    errors.sort_by(f64::total_cmp);
    let mid = errors.len() / 2;
    let median = if errors.len().is_multiple_of(2) {
        0.5 * (errors[mid - 1] + errors[mid])
    } else {
        errors[mid]
    };
    let m = alignment.rotation.matrix();
    Ok(AteReport {
        rmse,
        mean,
        median,
        max,
        pairs: pairs.len(),
        align_mode: mode,
        scale: alignment.scale,
        rotation: [
            m[(0, 0)],
            m[(0, 1)],
            m[(0, 2)],
            m[(1, 0)],
            m[(1, 1)],
            m[(1, 2)],
            m[(2, 0)],
            m[(2, 1)],
            m[(2, 2)],
        ],
        translation: alignment.translation.into(),
    })
}

/// Estimate positions mapped through the report's alignment, as
/// `(t, x, y, z)` rows ready for plotting.
pub fn aligned_positions(estimate: &Trajectory, report: &AteReport) -> Vec<[f64; 4]> {
    let alignment = report.alignment();
    estimate
        .poses()
        .iter()
        .map(|p| {
            let q = alignment.transform_point(&p.pose.translation);
            [p.timestamp, q.x, q.y, q.z]
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub name: String,
    /// Position of the run among the runs sharing its name.
    pub repetition: usize,
    pub report: AteReport,
    pub smoothness: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NameSummary {
    pub name: String,
    pub runs: usize,
    /// Lowest RMSE over the repetitions.
    pub best_rmse: f64,
    pub best_repetition: usize,
    pub mean_rmse: f64,
    pub median_rmse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub rows: Vec<RunRow>,
    pub summary: Vec<NameSummary>,
}

impl Comparison {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("comparison serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// One line per run: `name,repetition,rmse,mean,median,max,pairs,smoothness`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("name,repetition,rmse,mean,median,max,pairs,smoothness\n");
        for row in &self.rows {
            let r = &row.report;
            let smooth = row.smoothness.map(|s| s.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                row.name, row.repetition, r.rmse, r.mean, r.median, r.max, r.pairs, smooth
            ));
        }
        out
    }

    pub fn best(&self, name: &str) -> Option<&NameSummary> {
        self.summary.iter().find(|s| s.name == name)
    }
}

/// ATE of every run plus a per-name summary with the best of the
/// repetitions, their mean and median.
pub fn compare_runs(
    runs: &[(String, Trajectory)],
    reference: &Trajectory,
    max_time_offset: f64,
    mode: AlignMode,
) -> Result<Comparison, EvalError> {
    if runs.is_empty() {
        return Err(EvalError::NoRuns);
    }
    let mut rows: Vec<RunRow> = Vec::with_capacity(runs.len());
    for (name, trajectory) in runs {
        let repetition = rows.iter().filter(|r| &r.name == name).count();
        rows.push(RunRow {
            name: name.clone(),
            repetition,
            report: ate(trajectory, reference, max_time_offset, mode)?,
            smoothness: smoothness_metric(trajectory).ok(),
        });
    }
    let mut names: Vec<&String> = Vec::new();
    for row in &rows {
        if !names.contains(&&row.name) {
            names.push(&row.name);
        }
    }
    let summary = names
        .into_iter()
        .map(|name| {
            let mine: Vec<&RunRow> = rows.iter().filter(|r| &r.name == name).collect();
            let best = mine
                .iter()
                .min_by(|a, b| a.report.rmse.total_cmp(&b.report.rmse))
                .expect("at least one run per name");
            let mut rmses: Vec<f64> = mine.iter().map(|r| r.report.rmse).collect();
            rmses.sort_by(f64::total_cmp);
            let k = rmses.len();
            let median = if k.is_multiple_of(2) {
                0.5 * (rmses[k / 2 - 1] + rmses[k / 2])
            } else {
                rmses[k / 2]
            };
            NameSummary {
                name: name.clone(),
                runs: k,
                best_rmse: best.report.rmse,
                best_repetition: best.repetition,
                mean_rmse: rmses.iter().sum::<f64>() / k as f64,
                median_rmse: median,
            }
        })
        .collect();
    Ok(Comparison { rows, summary })
}

/// RMS of the discrete acceleration `d2p/dt2` from second differences of
/// consecutive positions (non-uniform spacing allowed), m/s^2.
pub fn smoothness_metric(trajectory: &Trajectory) -> Result<f64, EvalError> {
    let poses = trajectory.poses();
    if poses.len() < 4 {
        return Err(EvalError::TooFewPoses {
            needed: 4,
            got: poses.len(),
        });
    }
    let mut sum = 0.0;
    for w in poses.windows(3) {
        let (a, b, c) = (&w[0], &w[1], &w[2]);
        let h1 = b.timestamp - a.timestamp;
        let h2 = c.timestamp - b.timestamp;
        let v1 = (b.pose.translation - a.pose.translation) / h1;
        let v2 = (c.pose.translation - b.pose.translation) / h2;
        let acc = (v2 - v1) * (2.0 / (h1 + h2));
        sum += acc.norm_squared();
    }
    Ok((sum / (poses.len() - 2) as f64).sqrt())
}
