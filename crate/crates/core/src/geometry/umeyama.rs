use nalgebra::{Matrix3, Vector3};

use super::se3::SimilarityTransform;
use super::so3::Rotation3;
use super::GeometryError;

/// Relative singular-value floor below which the cross-covariance is treated
/// as rank deficient.
const RANK_TOLERANCE: f64 = 1e-10;

/// Least-squares similarity (or rigid, when `with_scale` is false) transform
/// taking `source` onto `target`, minimizing
/// `sum |target_k - (s R source_k + t)|^2`.
pub fn umeyama_align(
    source: &[Vector3<f64>],
    target: &[Vector3<f64>],
    with_scale: bool,
) -> Result<SimilarityTransform, GeometryError> {
    if source.len() != target.len() {
        return Err(GeometryError::LengthMismatch {
            source_len: source.len(),
            target_len: target.len(),
        });
    }
    if source.len() < 3 {
        return Err(GeometryError::TooFewPoints(source.len()));
    }
    let n = source.len() as f64;
    let mean_s = source.iter().sum::<Vector3<f64>>() / n;
    let mean_t = target.iter().sum::<Vector3<f64>>() / n;

    let mut cov = Matrix3::zeros();
    let mut var_s = 0.0;
    for (s, t) in source.iter().zip(target) {
        let ds = s - mean_s;
        cov += (t - mean_t) * ds.transpose();
        var_s += ds.norm_squared();
    }
    cov /= n;
    var_s /= n;

    let svd = cov.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(GeometryError::Degenerate("svd did not converge")),
    };
    let mut sv = svd.singular_values;
    // nalgebra does not guarantee an ordering; only the two largest matter here.
    sv.as_mut_slice().sort_by(|a, b| b.total_cmp(a));
    if !(sv[0] > 0.0) || sv[1] <= RANK_TOLERANCE * sv[0] {
        return Err(GeometryError::Degenerate(
            "point sets are collinear or coincident",
        ));
    }

    let mut s = Matrix3::identity();
    if u.determinant() * v_t.determinant() < 0.0 {
        s[(2, 2)] = -1.0;
    }
    let rotation = u * s * v_t;
    let scale = if with_scale {
        (svd.singular_values.component_mul(&s.diagonal())).sum() / var_s
    } else {
        1.0
    };
    let translation = mean_t - rotation * mean_s * scale;
    Ok(SimilarityTransform {
        scale,
        rotation: Rotation3::from_matrix_unchecked(rotation),
        translation,
    })
}

/// Sum of squared residuals of `transform` on the pairs.
pub fn alignment_residual(
    transform: &SimilarityTransform,
    source: &[Vector3<f64>],
    target: &[Vector3<f64>],
) -> f64 {
    source
        .iter()
        .zip(target)
        .map(|(s, t)| (t - transform.transform_point(s)).norm_squared())
        .sum()
}
