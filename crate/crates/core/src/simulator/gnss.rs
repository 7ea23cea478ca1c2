//! GNSS fix synthesis and corruption of external fixes.

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::estimator::GnssFix;
use crate::factors::antenna_position;
use crate::geometry::{enu_to_geodetic, GeodeticPoint};

use super::{rng_for, NoiseStream, ScenarioConfig, SimError, TruthTrajectory};

/// Fixes at the GNSS rate on IMU ticks: true antenna position rotated into
/// ENU about the scenario origin, plus isotropic noise and the altitude bias.
/// The reported sigma never includes the bias.
pub fn synthesize_gnss(
    truth: &TruthTrajectory,
    config: &ScenarioConfig,
    lever_arm: &Vector3<f64>,
) -> Result<Vec<GnssFix>, SimError> {
    let origin = config.origin()?;
    let world_to_enu = config.world_to_enu();
    let reported = Vector3::repeat(config.reported_gnss_sigma());
    let mut rng = rng_for(config.seed, NoiseStream::GnssNoise);
    let count = (truth.duration() * config.gnss_rate + 1e-9).floor() as usize;
    let dropout =
        config.gnss_dropout_start..config.gnss_dropout_start + config.gnss_dropout_duration;

    let mut fixes = Vec::with_capacity(count + 1);
    for k in 0..=count {
        let t = truth.snap_to_grid(k as f64 / config.gnss_rate);
        let noise = Vector3::new(
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        ) * config.gnss_sigma;
        if dropout.contains(&t) {
            continue;
        }
        let antenna = antenna_position(&truth.state_at(t).pose, lever_arm);
        let enu = world_to_enu.rotate(&antenna)
            + noise
            + Vector3::new(0.0, 0.0, config.gnss_altitude_bias);
        fixes.push(GnssFix {
            timestamp: t,
            geodetic: enu_to_geodetic(&enu, &origin),
            sigma_enu: reported,
        });
    }
    Ok(fixes)
}

/// Adds zero-mean isotropic Gaussian noise of `sigma` meters to each fix in
/// its local East-North-Up frame. Reported sigmas grow to
/// `sqrt(sigma_in^2 + sigma^2)`; `sigma = 0` returns the input unchanged.
pub fn corrupt_gnss(fixes: &[GnssFix], sigma: f64, seed: u64) -> Result<Vec<GnssFix>, SimError> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(SimError::InvalidConfig(format!(
            "corruption sigma must be non-negative, got {sigma}"
        )));
    }
    let mut rng = rng_for(seed, NoiseStream::Corruption);
    fixes
        .iter()
        .map(|fix| {
            let noise = Vector3::new(
                rng.sample::<f64, _>(StandardNormal),
                rng.sample::<f64, _>(StandardNormal),
                rng.sample::<f64, _>(StandardNormal),
            ) * sigma;
            if sigma == 0.0 {
                return Ok(fix.clone());
            }
            let p = &fix.geodetic;
            let (meridian, prime_vertical) = p.radii_of_curvature();
            let lat = p.latitude().to_radians();
            let dlat = noise.y / (meridian + p.altitude());
            let dlon = noise.x / ((prime_vertical + p.altitude()) * lat.cos());
            let mut lon = p.longitude() + dlon.to_degrees();
            if lon > 180.0 {
                lon -= 360.0;
            } else if lon <= -180.0 {
                lon += 360.0;
            }
            let geodetic = GeodeticPoint::new(
                (p.latitude() + dlat.to_degrees()).clamp(-90.0, 90.0),
                lon,
                p.altitude() + noise.z,
            )?;
            Ok(GnssFix {
                timestamp: fix.timestamp,
                geodetic,
                sigma_enu: fix.sigma_enu.map(|s| (s * s + sigma * sigma).sqrt()),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::super::{generate_trajectory, ScenarioConfig};
    use super::*;
    use crate::geometry::geodetic_to_enu;

    const LEVER: Vector3<f64> = Vector3::new(0.1, 0.0, 0.5);

    #[test]
    fn noise_free_fixes_invert_to_antenna_positions() {
        let cfg = ScenarioConfig {
            rows: 2,
            row_length: 10.0,
            ..ScenarioConfig::default()
        }
        .noise_free();
        let truth = generate_trajectory(&cfg).unwrap();
        let fixes = synthesize_gnss(&truth, &cfg, &LEVER).unwrap();
        let origin = cfg.origin().unwrap();
        let r = cfg.world_to_enu();
        for fix in &fixes {
            let enu = geodetic_to_enu(&fix.geodetic, &origin);
            let expected = r.rotate(&antenna_position(
                &truth.state_at(fix.timestamp).pose,
                &LEVER,
            ));
            assert!((enu - expected).norm() < 1e-6);
            assert!(fix.sigma_enu.iter().all(|s| *s > 0.0));
        }
    }

    fn enu_errors(cfg: &ScenarioConfig) -> Vec<Vector3<f64>> {
        let truth = generate_trajectory(cfg).unwrap();
        let fixes = synthesize_gnss(&truth, cfg, &LEVER).unwrap();
        let origin = cfg.origin().unwrap();
        let r = cfg.world_to_enu();
        fixes
            .iter()
            .map(|fix| {
                geodetic_to_enu(&fix.geodetic, &origin)
                    - r.rotate(&antenna_position(
                        &truth.state_at(fix.timestamp).pose,
                        &LEVER,
                    ))
            })
            .collect()
    }

    #[test]
    fn noise_std_matches_sigma() {
        let cfg = ScenarioConfig {
            rows: 1,
            row_length: 2100.0,
            speed: 1.0,
            ..ScenarioConfig::default()
        };
        let errors = enu_errors(&cfg);
        assert!(errors.len() >= 10_000);
        let n = errors.len() as f64;
        for axis in 0..3 {
            let mean = errors.iter().map(|e| e[axis]).sum::<f64>() / n;
            let std =
                (errors.iter().map(|e| (e[axis] - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
            assert!((std / 0.5 - 1.0).abs() < 0.05, "axis {axis}: {std}");
        }
    }

    #[test]
    fn altitude_bias_shifts_up_component() {
        let cfg = ScenarioConfig {
            rows: 1,
            row_length: 2100.0,
            gnss_altitude_bias: 0.3,
            ..ScenarioConfig::default()
        };
        let errors = enu_errors(&cfg);
        let mean_up = errors.iter().map(|e| e.z).sum::<f64>() / errors.len() as f64;
        assert!((mean_up - 0.3).abs() < 0.02, "{mean_up}");
        let truth = generate_trajectory(&cfg).unwrap();
        let fixes = synthesize_gnss(&truth, &cfg, &LEVER).unwrap();
        assert!(fixes.iter().all(|f| f.sigma_enu == Vector3::repeat(0.5)));
    }

    #[test]
    fn dropout_removes_fixes() {
        let cfg = ScenarioConfig {
            rows: 1,
            row_length: 60.0,
            gnss_dropout_start: 10.0,
            gnss_dropout_duration: 30.0,
            ..ScenarioConfig::default()
        };
        let truth = generate_trajectory(&cfg).unwrap();
        let fixes = synthesize_gnss(&truth, &cfg, &LEVER).unwrap();
        assert!(fixes.iter().all(|f| !(10.0..40.0).contains(&f.timestamp)));
        assert_eq!(fixes.len(), 301 - 150);
    }

    fn fixes_on_grid(n: usize) -> Vec<GnssFix> {
        let origin = GeodeticPoint::new(-33.0, -60.9, 25.0).unwrap();
        (0..n)
            .map(|k| GnssFix {
                timestamp: k as f64 * 0.2,
                geodetic: enu_to_geodetic(
                    &Vector3::new(k as f64 * 0.2, 0.1 * k as f64, 0.0),
                    &origin,
                ),
                sigma_enu: Vector3::repeat(0.02),
            })
            .collect()
    }

    #[test]
    fn corrupt_with_zero_sigma_is_identity() {
        let fixes = fixes_on_grid(50);
        assert_eq!(corrupt_gnss(&fixes, 0.0, 9).unwrap(), fixes);
    }

    #[test]
    fn corrupt_is_deterministic_and_has_target_std() {
        let fixes = fixes_on_grid(10_000);
        let a = corrupt_gnss(&fixes, 0.5, 42).unwrap();
        let b = corrupt_gnss(&fixes, 0.5, 42).unwrap();
        assert_eq!(a, b);
        let n = fixes.len() as f64;
        let d: Vec<Vector3<f64>> = a
            .iter()
            .zip(&fixes)
            .map(|(c, f)| geodetic_to_enu(&c.geodetic, &f.geodetic))
            .collect();
        for axis in 0..3 {
            let mean = d.iter().map(|e| e[axis]).sum::<f64>() / n;
            let std = (d.iter().map(|e| (e[axis] - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
            assert!((std / 0.5 - 1.0).abs() < 0.05, "axis {axis}: {std}");
        }
        assert!(corrupt_gnss(&fixes, -1.0, 1).is_err());
    }
}
