//! WGS-84 geodetic, Earth-centred Earth-fixed (ECEF) and local East-North-Up
//! (ENU) coordinates.

use nalgebra::{Matrix3, Vector3};

use super::GeometryError;

/// WGS-84 semi-major axis in meters.
pub const WGS84_A: f64 = 6_378_137.0;
/// WGS-84 flattening.
pub const WGS84_F: f64 = 1.0 / 298.257_223_563;
/// WGS-84 semi-minor axis in meters.
pub const WGS84_B: f64 = WGS84_A * (1.0 - WGS84_F);
/// First eccentricity squared.
pub const WGS84_E2: f64 = WGS84_F * (2.0 - WGS84_F);

const MAX_ITERATIONS: usize = 30;
const CONVERGENCE: f64 = 1e-15;

/// Latitude/longitude in degrees, altitude in meters above the ellipsoid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeodeticPoint {
    latitude: f64,
    longitude: f64,
    altitude: f64,
}

impl GeodeticPoint {
    /// Validates ranges: latitude in [-90, 90], longitude in (-180, 180].
    pub fn new(latitude: f64, longitude: f64, altitude: f64) -> Result<Self, GeometryError> {
        if !latitude.is_finite() || !(-90.0..=90.0).contains(&latitude) {
            return Err(GeometryError::InvalidGeodetic(format!(
                "latitude {latitude} outside [-90, 90]"
            )));
        }
        if !longitude.is_finite() || longitude <= -180.0 || longitude > 180.0 {
            return Err(GeometryError::InvalidGeodetic(format!(
                "longitude {longitude} outside (-180, 180]"
            )));
        }
        if !altitude.is_finite() {
            return Err(GeometryError::InvalidGeodetic(format!(
                "altitude {altitude} is not finite"
            )));
        }
        Ok(Self {
            latitude,
            longitude,
            altitude,
        })
    }

    pub fn latitude(&self) -> f64 {
        self.latitude
    }

    pub fn longitude(&self) -> f64 {
        self.longitude
    }

    pub fn altitude(&self) -> f64 {
        self.altitude
    }

    /// Meridian and prime-vertical radii of curvature at this latitude.
    pub fn radii_of_curvature(&self) -> (f64, f64) {
        let sin = self.latitude.to_radians().sin();
        let w = (1.0 - WGS84_E2 * sin * sin).sqrt();
        let prime_vertical = WGS84_A / w;
        let meridian = WGS84_A * (1.0 - WGS84_E2) / (w * w * w);
        (meridian, prime_vertical)
    }
}

pub fn geodetic_to_ecef(p: &GeodeticPoint) -> Vector3<f64> {
    let lat = p.latitude.to_radians();
    let lon = p.longitude.to_radians();
    let (sin_lat, cos_lat) = lat.sin_cos();
    let (sin_lon, cos_lon) = lon.sin_cos();
    let n = WGS84_A / (1.0 - WGS84_E2 * sin_lat * sin_lat).sqrt();
    Vector3::new(
        (n + p.altitude) * cos_lat * cos_lon,
        (n + p.altitude) * cos_lat * sin_lon,
        (n * (1.0 - WGS84_E2) + p.altitude) * sin_lat,
    )
}

/// Inverse of [`geodetic_to_ecef`] by fixed-point iteration on latitude.
pub fn ecef_to_geodetic(x: &Vector3<f64>) -> GeodeticPoint {
    let p = x.x.hypot(x.y);
    let mut longitude = x.y.atan2(x.x).to_degrees();
    if longitude <= -180.0 {
        longitude += 360.0;
    }

    let mut lat = x.z.atan2(p * (1.0 - WGS84_E2));
    for _ in 0..MAX_ITERATIONS {
        let sin = lat.sin();
        let n = WGS84_A / (1.0 - WGS84_E2 * sin * sin).sqrt();
        let next = (x.z + WGS84_E2 * n * sin).atan2(p);
        let done = (next - lat).abs() < CONVERGENCE;
        lat = next;
        if done {
            break;
        }
    }
    let (sin, cos) = lat.sin_cos();
    // Stable at every latitude, including the poles.
    let altitude = p * cos + x.z * sin - WGS84_A * (1.0 - WGS84_E2 * sin * sin).sqrt();
    GeodeticPoint {
        latitude: lat.to_degrees(),
        longitude,
        altitude,
    }
}

/// Rotation taking ECEF vectors into the ENU frame at `anchor`.
pub fn ecef_to_enu_rotation(anchor: &GeodeticPoint) -> Matrix3<f64> {
    let (sin_lat, cos_lat) = anchor.latitude.to_radians().sin_cos();
    let (sin_lon, cos_lon) = anchor.longitude.to_radians().sin_cos();
    Matrix3::new(
        -sin_lon,
        cos_lon,
        0.0,
        -sin_lat * cos_lon,
        -sin_lat * sin_lon,
        cos_lat,
        cos_lat * cos_lon,
        cos_lat * sin_lon,
        sin_lat,
    )
}

pub fn geodetic_to_enu(p: &GeodeticPoint, anchor: &GeodeticPoint) -> Vector3<f64> {
    let d = geodetic_to_ecef(p) - geodetic_to_ecef(anchor);
    ecef_to_enu_rotation(anchor) * d
}

pub fn enu_to_geodetic(enu: &Vector3<f64>, anchor: &GeodeticPoint) -> GeodeticPoint {
    let ecef = geodetic_to_ecef(anchor) + ecef_to_enu_rotation(anchor).tr_mul(enu);
    ecef_to_geodetic(&ecef)
}
