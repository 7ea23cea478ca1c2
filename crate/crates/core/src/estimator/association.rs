//! Temporal association of GNSS fixes to keyframes.

use super::{EstimatorError, GnssFix};

/// Outcome of associating fixes with keyframes.
#[derive(Clone, Debug, PartialEq)]
pub struct Association {
    /// Fix index assigned to each keyframe, if any.
    pub by_keyframe: Vec<Option<usize>>,
    /// Indices of fixes that were not assigned.
    pub discarded: Vec<usize>,
}

impl Association {
    pub fn assigned_count(&self) -> usize {
        self.by_keyframe.iter().filter(|a| a.is_some()).count()
    }
}

fn check_sorted(
    values: impl Iterator<Item = f64>,
    what: &'static str,
) -> Result<(), EstimatorError> {
    let mut last = f64::NEG_INFINITY;
    for (index, t) in values.enumerate() {
        if !(t >= last) {
            return Err(EstimatorError::Unsorted { what, index });
        }
        last = t;
    }
    Ok(())
}

/// Assigns each fix to its nearest keyframe when they are at most
/// `threshold` seconds apart. A keyframe takes at most one fix: the
/// temporally closest, the earlier fix on ties. Everything else is
/// discarded.
pub fn associate_gnss(
    keyframe_times: &[f64],
    fixes: &[GnssFix],
    threshold: f64,
) -> Result<Association, EstimatorError> {
    check_sorted(keyframe_times.iter().copied(), "keyframe timestamps")?;
    check_sorted(fixes.iter().map(|f| f.timestamp), "GNSS timestamps")?;

    let mut best: Vec<Option<(f64, usize)>> = vec![None; keyframe_times.len()];
    let mut candidate_of = vec![None; fixes.len()];
    for (i, fix) in fixes.iter().enumerate() {
        let t = fix.timestamp;
        let upper = keyframe_times.partition_point(|&k| k < t);
        let mut nearest: Option<(f64, usize)> = None;
        for k in [upper.wrapping_sub(1), upper] {
            if let Some(&kt) = keyframe_times.get(k) {
                let d = (kt - t).abs();
                if nearest.is_none_or(|(nd, _)| d < nd) {
                    nearest = Some((d, k));
                }
            }
        }
        let Some((d, k)) = nearest else { continue };
        if d > threshold {
            continue;
        }
        candidate_of[i] = Some(k);
        if best[k].is_none_or(|(bd, _)| d < bd) {
            best[k] = Some((d, i));
        }
    }

    let by_keyframe: Vec<Option<usize>> = best.iter().map(|b| b.map(|(_, i)| i)).collect();
    let discarded = (0..fixes.len())
        .filter(|&i| candidate_of[i].is_none_or(|k| by_keyframe[k] != Some(i)))
        .collect();
    Ok(Association {
        by_keyframe,
        discarded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::GeodeticPoint;
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fix(t: f64) -> GnssFix {
        GnssFix {
            timestamp: t,
            geodetic: GeodeticPoint::new(0.0, 0.0, 0.0).unwrap(),
            sigma_enu: Vector3::repeat(0.5),
        }
    }

    #[test]
    fn exact_match_is_assigned() {
        let a = associate_gnss(&[0.0, 1.0, 2.0], &[fix(1.0)], 0.05).unwrap();
        assert_eq!(a.by_keyframe, vec![None, Some(0), None]);
        assert!(a.discarded.is_empty());
    }

    #[test]
    fn midpoint_beyond_threshold_is_discarded() {
        let eps = 1e-6;
        let kfs = [0.0, 2.0 * 0.05 + eps];
        let a = associate_gnss(&kfs, &[fix(kfs[1] / 2.0)], 0.05).unwrap();
        assert_eq!(a.assigned_count(), 0);
        assert_eq!(a.discarded, vec![0]);
    }

    #[test]
    fn closest_fix_wins_and_ties_go_to_earlier() {
        let a = associate_gnss(&[1.0], &[fix(0.97), fix(0.99), fix(1.01)], 0.05).unwrap();
        assert_eq!(a.by_keyframe, vec![Some(1)]);
        assert_eq!(a.discarded, vec![0, 2]);
    }

    #[test]
    fn unsorted_input_is_rejected() {
        assert!(associate_gnss(&[1.0, 0.0], &[], 0.05).is_err());
        assert!(associate_gnss(&[0.0], &[fix(1.0), fix(0.5)], 0.05).is_err());
    }

    /// Exhaustive oracle: nearest keyframe per fix, then the closest fix per
    /// keyframe with ties to the earlier fix.
    fn brute_force(kfs: &[f64], fixes: &[GnssFix], threshold: f64) -> Vec<Option<usize>> {
        let mut out = vec![None; kfs.len()];
        let mut best_d = vec![f64::INFINITY; kfs.len()];
        for (i, f) in fixes.iter().enumerate() {
            let mut nearest = None;
            let mut nearest_d = f64::INFINITY;
            for (k, &kt) in kfs.iter().enumerate() {
                let d = (kt - f.timestamp).abs();
                if d < nearest_d {
                    nearest_d = d;
                    nearest = Some(k);
                }
            }
            if let Some(k) = nearest {
                if nearest_d <= threshold && nearest_d < best_d[k] {
                    best_d[k] = nearest_d;
                    out[k] = Some(i);
                }
            }
        }
        out
    }

    #[test]
    fn matches_brute_force_on_random_streams() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..200 {
            let mut kfs = Vec::new();
            let mut t = rng.random_range(0.0..1.0);
            while t < 60.0 {
                kfs.push(t);
                t += rng.random_range(0.7..1.3);
            }
            let offset: f64 = rng.random_range(0.0..0.2);
            let fixes: Vec<GnssFix> = (0..300).map(|k| fix(offset + k as f64 * 0.2)).collect();
            let a = associate_gnss(&kfs, &fixes, 0.05).unwrap();
            assert_eq!(a.by_keyframe, brute_force(&kfs, &fixes, 0.05));
            // completeness: every fix is either assigned or discarded
            assert_eq!(a.assigned_count() + a.discarded.len(), fixes.len());
        }
    }
}
