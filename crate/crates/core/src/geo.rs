//! Spherical-earth helpers: great-circle distance, forward azimuth and
//! interpolation along polylines.

use serde::{Deserialize, Serialize};

/// Mean earth radius used for every distance in the crate, in meters.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// A WGS-84 latitude/longitude pair in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    pub const fn new(lat: f64, lon: f64) -> Self {
        Self { lat, lon }
    }

    /// True when both coordinates are finite and inside their ranges.
    pub fn is_valid(&self) -> bool {
        self.lat.is_finite()
            && self.lon.is_finite()
            && (-90.0..=90.0).contains(&self.lat)
            && (-180.0..=180.0).contains(&self.lon)
    }

    /// Point reached by travelling `distance_m` along the great circle that
    /// leaves `self` with initial bearing `bearing_deg`.
    pub fn destination(&self, bearing_deg: f64, distance_m: f64) -> GeoPoint {
        let delta = distance_m / EARTH_RADIUS_M;
        let theta = bearing_deg.to_radians();
        let phi1 = self.lat.to_radians();
        let phi2 = (phi1.sin() * delta.cos() + phi1.cos() * delta.sin() * theta.cos()).asin();
        let dlambda =
            (theta.sin() * delta.sin() * phi1.cos()).atan2(delta.cos() - phi1.sin() * phi2.sin());
        let mut lon = self.lon + dlambda.to_degrees();
        if !(-180.0..=180.0).contains(&lon) {
            lon = (lon + 540.0).rem_euclid(360.0) - 180.0;
        }
        GeoPoint::new(phi2.to_degrees(), lon)
    }
}

/// Haversine great-circle distance in meters.
pub fn haversine_m(a: GeoPoint, b: GeoPoint) -> f64 {
    let phi1 = a.lat.to_radians();
    let phi2 = b.lat.to_radians();
    let dphi = phi2 - phi1;
    let dlambda = (b.lon - a.lon).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

/// Forward azimuth from `a` to `b`, degrees in [0, 360).
pub fn bearing_deg(a: GeoPoint, b: GeoPoint) -> f64 {
    let phi1 = a.lat.to_radians();
    let phi2 = b.lat.to_radians();
    let dlambda = (b.lon - a.lon).to_radians();
    let y = dlambda.sin() * phi2.cos();
    let x = phi1.cos() * phi2.sin() - phi1.sin() * phi2.cos() * dlambda.cos();
    normalize_bearing(y.atan2(x).to_degrees())
}

/// Wraps any angle into [0, 360). Negative zero becomes zero.
pub fn normalize_bearing(deg: f64) -> f64 {
    let b = deg.rem_euclid(360.0);
    if b >= 360.0 || b == 0.0 {
        0.0
    } else {
        b
    }
}

/// Linear interpolation in latitude/longitude space.
pub fn lerp(a: GeoPoint, b: GeoPoint, t: f64) -> GeoPoint {
    GeoPoint::new(a.lat + (b.lat - a.lat) * t, a.lon + (b.lon - a.lon) * t)
}

/// Cumulative arc length at every vertex of `polyline` (first entry 0).
pub fn cumulative_lengths(polyline: &[GeoPoint]) -> Vec<f64> {
    let mut acc = 0.0;
    let mut out = Vec::with_capacity(polyline.len());
    out.push(0.0);
    for w in polyline.windows(2) {
        acc += haversine_m(w[0], w[1]);
        out.push(acc);
    }
    out
}

/// Point at arc length `s` along a polyline with precomputed cumulative
/// lengths, together with the bearing of the segment it lies on.
///
/// A point that lands on an interior vertex takes the outgoing segment's
/// bearing; `s` at or beyond the end takes the last segment's bearing.
/// Zero-length segments are skipped.
pub fn point_along(polyline: &[GeoPoint], cumulative: &[f64], s: f64) -> (GeoPoint, f64) {
    const VERTEX_EPS_M: f64 = 1e-9;
    let total = *cumulative.last().unwrap_or(&0.0);
    let s = s.clamp(0.0, total);

    let mut last_nonzero = None;
    for i in 0..polyline.len().saturating_sub(1) {
        let seg_len = cumulative[i + 1] - cumulative[i];
        if seg_len <= 0.0 {
            continue;
        }
        last_nonzero = Some(i);
        // Strictly before the segment's end: this segment owns the point.
        if s < cumulative[i + 1] - VERTEX_EPS_M {
            let t = ((s - cumulative[i]) / seg_len).clamp(0.0, 1.0);
            let p = lerp(polyline[i], polyline[i + 1], t);
            return (p, bearing_deg(polyline[i], polyline[i + 1]));
        }
    }
    match last_nonzero {
        Some(i) => (polyline[i + 1], bearing_deg(polyline[i], polyline[i + 1])),
        None => (polyline[0], 0.0),
    }
}
