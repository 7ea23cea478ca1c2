//! Text formats: TUM trajectories and the per-sensor CSV streams.
//!
//! | file | columns |
//! |------|---------|
//! | `imu.csv` | `t,gx,gy,gz,ax,ay,az` |
//! | `gnss.csv` | `t,lat,lon,alt,sigma_e,sigma_n,sigma_u` |
//! | `frames.csv` | `t,landmark_id,u_left,v,u_right` |
//! | `groundtruth.txt` | `t tx ty tz qx qy qz qw` |
//!
//! Lines starting with `#` and blank lines are ignored. A `frames.csv` line
//! holding only a timestamp marks a frame without observations; a
//! `gnss.csv` line with only the first four columns takes
//! [`DEFAULT_FIX_SIGMA`].

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;

use crate::estimator::GnssFix;
use crate::evaluation::{TimedPose, Trajectory};
use crate::factors::StereoObservation;
use crate::geometry::{GeodeticPoint, RigidTransform3, Rotation3};
use crate::preintegration::ImuSample;
use crate::simulator::{merge_streams, Dataset, SensorRecord, StereoFrame};

/// Per-axis sigma assumed for fixes given without one (RTK grade), meters.
pub const DEFAULT_FIX_SIGMA: f64 = 0.02;

pub const IMU_FILE: &str = "imu.csv";
pub const GNSS_FILE: &str = "gnss.csv";
pub const FRAMES_FILE: &str = "frames.csv";
pub const GROUND_TRUTH_FILE: &str = "groundtruth.txt";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("line {line}: {message}")]
pub struct FormatError {
    pub line: usize,
    pub message: String,
}

impl FormatError {
    fn new(line: usize, message: impl Into<String>) -> Self {
        Self {
            line,
            message: message.into(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {error}")]
    Format { path: PathBuf, error: FormatError },
}

/// Non-comment lines with their 1-based line numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn parse_fields(line: usize, fields: &[&str]) -> Result<Vec<f64>, FormatError> {
    fields
        .iter()
        .map(|f| {
            let v: f64 = f
                .trim()
                .parse()
                .map_err(|_| FormatError::new(line, format!("cannot parse number {f:?}")))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(FormatError::new(line, format!("non-finite value {f:?}")))
            }
        })
        .collect()
}

fn expect_increasing(line: usize, last: &mut f64, t: f64) -> Result<(), FormatError> {
    if !(t > *last) {
        return Err(FormatError::new(
            line,
            format!("timestamp {t} does not increase"),
        ));
    }
    *last = t;
    Ok(())
}

// ---------------------------------------------------------------------------
// TUM

pub fn parse_tum(text: &str) -> Result<Trajectory, FormatError> {
    let mut poses = Vec::new();
    let mut last = f64::NEG_INFINITY;
    for (line, content) in content_lines(text) {
        let fields: Vec<&str> = content.split_whitespace().collect();
        if fields.len() != 8 {
            return Err(FormatError::new(
                line,
                format!("expected 8 fields, found {}", fields.len()),
            ));
        }
        let v = parse_fields(line, &fields)?;
        expect_increasing(line, &mut last, v[0])?;
        let q = [v[4], v[5], v[6], v[7]];
        let norm = q.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(norm > 1e-9) {
            return Err(FormatError::new(line, "quaternion has zero norm"));
        }
        poses.push(TimedPose {
            timestamp: v[0],
            pose: RigidTransform3::new(
                Rotation3::from_quaternion_xyzw(q),
                Vector3::new(v[1], v[2], v[3]),
            ),
        });
    }
    Trajectory::new(poses).map_err(|e| FormatError::new(0, e.to_string()))
}

pub fn format_tum(trajectory: &Trajectory) -> String {
    let mut out = String::from("# t tx ty tz qx qy qz qw\n");
    for p in trajectory.poses() {
        let t = &p.pose.translation;
        let [qx, qy, qz, qw] = p.pose.rotation.to_quaternion_xyzw();
        writeln!(
            out,
            "{} {} {} {} {} {} {} {}",
            p.timestamp, t.x, t.y, t.z, qx, qy, qz, qw
        )
        .expect("writing to a string");
    }
    out
}

// ---------------------------------------------------------------------------
// IMU

pub fn parse_imu_csv(text: &str) -> Result<Vec<ImuSample>, FormatError> {
    let mut out = Vec::new();
    let mut last = f64::NEG_INFINITY;
    for (line, content) in content_lines(text) {
        let fields: Vec<&str> = content.split(',').collect();
        if fields.len() != 7 {
            return Err(FormatError::new(
                line,
                format!("expected 7 columns, found {}", fields.len()),
            ));
        }
        let v = parse_fields(line, &fields)?;
        expect_increasing(line, &mut last, v[0])?;
        out.push(ImuSample {
            timestamp: v[0],
            gyro: Vector3::new(v[1], v[2], v[3]),
            accel: Vector3::new(v[4], v[5], v[6]),
        });
    }
    Ok(out)
}

pub fn format_imu_csv(samples: &[ImuSample]) -> String {
    let mut out = String::from("# t,gx,gy,gz,ax,ay,az\n");
    for s in samples {
        let (g, a) = (&s.gyro, &s.accel);
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            s.timestamp, g.x, g.y, g.z, a.x, a.y, a.z
        )
        .expect("writing to a string");
    }
    out
}

// ---------------------------------------------------------------------------
// GNSS

pub fn parse_gnss_csv(text: &str) -> Result<Vec<GnssFix>, FormatError> {
    let mut out = Vec::new();
    let mut last = f64::NEG_INFINITY;
    for (line, content) in content_lines(text) {
        let fields: Vec<&str> = content.split(',').collect();
        if fields.len() != 7 && fields.len() != 4 {
            return Err(FormatError::new(
                line,
                format!("expected 7 (or 4) columns, found {}", fields.len()),
            ));
        }
        let v = parse_fields(line, &fields)?;
        expect_increasing(line, &mut last, v[0])?;
        let geodetic = GeodeticPoint::new(v[1], v[2], v[3])
            .map_err(|e| FormatError::new(line, e.to_string()))?;
        let sigma_enu = if v.len() == 7 {
            Vector3::new(v[4], v[5], v[6])
        } else {
            Vector3::repeat(DEFAULT_FIX_SIGMA)
        };
        if !sigma_enu.iter().all(|s| *s > 0.0) {
            return Err(FormatError::new(
                line,
                "standard deviations must be positive",
            ));
        }
        out.push(GnssFix {
            timestamp: v[0],
            geodetic,
            sigma_enu,
        });
    }
    Ok(out)
}

pub fn format_gnss_csv(fixes: &[GnssFix]) -> String {
    let mut out = String::from("# t,lat,lon,alt,sigma_e,sigma_n,sigma_u\n");
    for f in fixes {
        let g = &f.geodetic;
        let s = &f.sigma_enu;
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            f.timestamp,
            g.latitude(),
            g.longitude(),
            g.altitude(),
            s.x,
            s.y,
            s.z
        )
        .expect("writing to a string");
    }
    out
}

// ---------------------------------------------------------------------------
// Stereo frames

pub fn parse_frames_csv(text: &str) -> Result<Vec<StereoFrame>, FormatError> {
    let mut frames: Vec<StereoFrame> = Vec::new();
    for (line, content) in content_lines(text) {
        let fields: Vec<&str> = content.split(',').collect();
        let t = parse_fields(line, &fields[..1])?[0];
        let same_frame = frames.last().is_some_and(|f| f.timestamp == t);
        if !same_frame {
            if frames.last().is_some_and(|f| !(t > f.timestamp)) {
                return Err(FormatError::new(
                    line,
                    format!("timestamp {t} does not increase"),
                ));
            }
            frames.push(StereoFrame {
                timestamp: t,
                observations: Vec::new(),
            });
        }
        match fields.len() {
            1 if !same_frame => {}
            5 => {
                let id: u64 = fields[1].trim().parse().map_err(|_| {
                    FormatError::new(line, format!("invalid landmark id {:?}", fields[1]))
                })?;
                let v = parse_fields(line, &fields[2..])?;
                let frame = frames.last_mut().expect("frame pushed above");
                if frame.observations.iter().any(|(other, _)| *other == id) {
                    return Err(FormatError::new(
                        line,
                        format!("landmark {id} observed twice in one frame"),
                    ));
                }
                frame.observations.push((
                    id,
                    StereoObservation {
                        u_left: v[0],
                        v: v[1],
                        u_right: v[2],
                    },
                ));
            }
            n => {
                return Err(FormatError::new(
                    line,
                    format!("expected 5 columns (or 1 for an empty frame), found {n}"),
                ))
            }
        }
    }
    Ok(frames)
}

pub fn format_frames_csv(frames: &[StereoFrame]) -> String {
    let mut out = String::from("# t,landmark_id,u_left,v,u_right\n");
    for f in frames {
        if f.observations.is_empty() {
            writeln!(out, "{}", f.timestamp).expect("writing to a string");
        }
        for (id, o) in &f.observations {
            writeln!(
                out,
                "{},{},{},{},{}",
                f.timestamp, id, o.u_left, o.v, o.u_right
            )
            .expect("writing to a string");
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Aligned plot exports

pub fn parse_aligned_csv(text: &str) -> Result<Vec<[f64; 4]>, FormatError> {
    let mut out = Vec::new();
    for (line, content) in content_lines(text) {
        let fields: Vec<&str> = content.split(',').collect();
        if fields.len() != 4 {
            return Err(FormatError::new(
                line,
                format!("expected 4 columns, found {}", fields.len()),
            ));
        }
        let v = parse_fields(line, &fields)?;
        out.push([v[0], v[1], v[2], v[3]]);
    }
    Ok(out)
}

pub fn format_aligned_csv(rows: &[[f64; 4]]) -> String {
    let mut out = String::from("# t,x,y,z\n");
    for r in rows {
        writeln!(out, "{},{},{},{}", r[0], r[1], r[2], r[3]).expect("writing to a string");
    }
    out
}

// ---------------------------------------------------------------------------
// Files

pub fn read_text(path: &Path) -> Result<String, DataError> {
    std::fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_text(path: &Path, text: &str) -> Result<(), DataError> {
    std::fs::write(path, text).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads and parses one file, attaching the path to format errors.
pub fn load<T>(
    path: &Path,
    parse: impl Fn(&str) -> Result<T, FormatError>,
) -> Result<T, DataError> {
    parse(&read_text(path)?).map_err(|error| DataError::Format {
        path: path.to_path_buf(),
        error,
    })
}

/// Writes the four dataset files into `dir`, creating it if needed.
pub fn write_dataset(dir: &Path, dataset: &Dataset) -> Result<(), DataError> {
    std::fs::create_dir_all(dir).map_err(|source| DataError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    write_text(&dir.join(IMU_FILE), &format_imu_csv(&dataset.imu))?;
    write_text(&dir.join(GNSS_FILE), &format_gnss_csv(&dataset.gnss))?;
    write_text(&dir.join(FRAMES_FILE), &format_frames_csv(&dataset.frames))?;
    write_text(
        &dir.join(GROUND_TRUTH_FILE),
        &format_tum(&dataset.truth_trajectory()),
    )?;
    Ok(())
}

/// Sensor streams read back from a dataset directory. A missing GNSS file
/// is treated as an empty stream when `require_gnss` is false.
pub struct LoadedStreams {
    pub imu: Vec<ImuSample>,
    pub frames: Vec<StereoFrame>,
    pub gnss: Vec<GnssFix>,
}

impl LoadedStreams {
    pub fn records(&self) -> Vec<SensorRecord> {
        merge_streams(&self.imu, &self.frames, &self.gnss)
    }
}

pub fn read_dataset(dir: &Path, require_gnss: bool) -> Result<LoadedStreams, DataError> {
    let imu = load(&dir.join(IMU_FILE), parse_imu_csv)?;
    let frames = load(&dir.join(FRAMES_FILE), parse_frames_csv)?;
    let gnss_path = dir.join(GNSS_FILE);
    let gnss = if require_gnss || gnss_path.exists() {
        load(&gnss_path, parse_gnss_csv)?
    } else {
        Vec::new()
    };
    Ok(LoadedStreams { imu, frames, gnss })
}
