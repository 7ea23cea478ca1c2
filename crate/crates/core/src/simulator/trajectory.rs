//! Boustrophedon ground truth on the IMU time grid.
//!
//! Within each IMU interval the body turns at a constant rate about the
//! world vertical and the world-frame acceleration is constant. This is the
//! same zero-order-hold model the preintegration uses, so noise-free
//! synthetic measurements reproduce the truth to rounding error.

use nalgebra::Vector3;

use crate::geometry::{RigidTransform3, Rotation3};

use super::{ScenarioConfig, SimError};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GroundTruthSample {
    pub timestamp: f64,
    /// `T_{W<-B}`
    pub pose: RigidTransform3,
    /// World frame, m/s.
    pub velocity: Vector3<f64>,
    /// Body frame, rad/s, held over the interval starting at `timestamp`.
    pub angular_velocity: Vector3<f64>,
    /// World frame, m/s^2, held over the interval starting at `timestamp`.
    pub acceleration: Vector3<f64>,
}

/// Dense ground truth plus the per-interval motion needed to evaluate it
/// between grid points.
#[derive(Clone, Debug)]
pub struct TruthTrajectory {
    pub dt: f64,
    pub samples: Vec<GroundTruthSample>,
    yaw: Vec<f64>,
}

enum Segment {
    Straight { length: f64 },
    Turn { angle: f64, radius: f64 },
}

impl TruthTrajectory {
    pub fn duration(&self) -> f64 {
        self.samples.last().map_or(0.0, |s| s.timestamp)
    }

    pub fn start_time(&self) -> f64 {
        self.samples.first().map_or(0.0, |s| s.timestamp)
    }

    /// Timestamp of the IMU sample nearest to `t`. Other sensors are
    /// triggered on IMU ticks so that every measurement time splits the held
    /// IMU intervals cleanly.
    pub fn snap_to_grid(&self, t: f64) -> f64 {
        let k = ((t / self.dt).round().max(0.0) as usize).min(self.samples.len() - 1);
        self.samples[k].timestamp
    }

    /// Exact state at any time inside the trajectory span.
    pub fn state_at(&self, t: f64) -> GroundTruthSample {
        let last = self.samples.len() - 1;
        let mut k = ((t / self.dt).floor().max(0.0) as usize).min(last);
        while k < last && self.samples[k + 1].timestamp <= t {
            k += 1;
        }
        while k > 0 && self.samples[k].timestamp > t {
            k -= 1;
        }
        let s = &self.samples[k];
        let tau = t - s.timestamp;
        if tau == 0.0 {
            return *s;
        }
        let yaw = self.yaw[k] + s.angular_velocity.z * tau;
        let translation =
            s.pose.translation + s.velocity * tau + s.acceleration * (0.5 * tau * tau);
        GroundTruthSample {
            timestamp: t,
            pose: RigidTransform3::new(Rotation3::from_yaw(yaw), translation),
            velocity: s.velocity + s.acceleration * tau,
            angular_velocity: s.angular_velocity,
            acceleration: s.acceleration,
        }
    }
}

/// Rows along world x, spaced along world y, joined by constant-rate turns.
pub fn generate_trajectory(config: &ScenarioConfig) -> Result<TruthTrajectory, SimError> {
    config.validate()?;
    let dt = 1.0 / config.imu_rate;
    let speed = config.speed;

    let mut segments = vec![Segment::Straight {
        length: config.row_length,
    }];
    for row in 1..config.rows {
        // left turns after even rows, right turns after odd rows
        let side = if row % 2 == 1 { 1.0 } else { -1.0 };
        let quarter = std::f64::consts::FRAC_PI_2 * side;
        let connector = config.row_spacing - 2.0 * config.turn_radius;
        segments.push(Segment::Turn {
            angle: quarter,
            radius: config.turn_radius,
        });
        if connector > 1e-9 {
            segments.push(Segment::Straight { length: connector });
        }
        segments.push(Segment::Turn {
            angle: quarter,
            radius: config.turn_radius,
        });
        segments.push(Segment::Straight {
            length: config.row_length,
        });
    }

    // per-interval yaw rates
    let mut rates = Vec::new();
    for segment in &segments {
        let (duration, angle) = match *segment {
            Segment::Straight { length } => (length / speed, 0.0),
            Segment::Turn { angle, radius } => (angle.abs() * radius / speed, angle),
        };
        let steps = ((duration / dt).round() as usize).max(1);
        let rate = angle / (steps as f64 * dt);
        rates.extend(std::iter::repeat_n(rate, steps));
    }

    let n = rates.len();
    let mut yaw = Vec::with_capacity(n + 1);
    yaw.push(0.0);
    for (k, rate) in rates.iter().enumerate() {
        // accumulate in integer steps of each segment to land turns exactly
        yaw.push(yaw[k] + rate * dt);
    }
    let heading = |psi: f64| Vector3::new(psi.cos(), psi.sin(), 0.0) * speed;

    let mut samples = Vec::with_capacity(n + 1);
    let mut position = Vector3::zeros();
    for k in 0..=n {
        let velocity = heading(yaw[k]);
        let (acceleration, rate) = if k < n {
            ((heading(yaw[k + 1]) - velocity) / dt, rates[k])
        } else {
            (Vector3::zeros(), 0.0)
        };
        samples.push(GroundTruthSample {
            timestamp: k as f64 / config.imu_rate,
            pose: RigidTransform3::new(Rotation3::from_yaw(yaw[k]), position),
            velocity,
            angular_velocity: Vector3::new(0.0, 0.0, rate),
            acceleration,
        });
        if k < n {
            position += velocity * dt + acceleration * (0.5 * dt * dt);
        }
    }
    Ok(TruthTrajectory { dt, samples, yaw })
}
