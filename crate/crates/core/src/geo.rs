//! Spherical-earth helpers, generic over the float type.

use num_traits::{Float, FloatConst};

/// Mean earth radius used by every distance computation in the crate.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

fn cast<F: Float>(v: f64) -> F {
    F::from(v).expect("constant representable in float type")
}

/// Great-circle distance in metres between two `(lat, lon)` points in degrees.
pub fn haversine_m<F: Float>(a: (F, F), b: (F, F)) -> F {
    let (lat1, lon1) = (a.0.to_radians(), a.1.to_radians());
    let (lat2, lon2) = (b.0.to_radians(), b.1.to_radians());
    let two = cast::<F>(2.0);
    let s_lat = ((lat2 - lat1) / two).sin();
    let s_lon = ((lon2 - lon1) / two).sin();
    let h = s_lat * s_lat + lat1.cos() * lat2.cos() * s_lon * s_lon;
    let h = h.min(F::one());
    two * cast::<F>(EARTH_RADIUS_M) * h.sqrt().asin()
}

/// Initial great-circle bearing from `a` to `b`, degrees in `[0, 360)`.
pub fn initial_bearing_deg<F: Float + FloatConst>(a: (F, F), b: (F, F)) -> F {
    let (lat1, lat2) = (a.0.to_radians(), b.0.to_radians());
    let dlon = (b.1 - a.1).to_radians();
    let y = dlon.sin() * lat2.cos();
    let x = lat1.cos() * lat2.sin() - lat1.sin() * lat2.cos() * dlon.cos();
    let full = cast::<F>(360.0);
    let deg = y.atan2(x).to_degrees();
    let deg = (deg % full + full) % full;
    // `-tiny + 360` may round up to exactly 360
    if deg >= full {
        F::zero()
    } else {
        deg
    }
}

/// Equirectangular projection with longitude scaled by `cos(reference_lat)`.
/// Returns planar `(x, y)` in degree units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Equirectangular<F> {
    lon_scale: F,
}

impl<F: Float> Equirectangular<F> {
    pub fn new(reference_latitude: F) -> Self {
        Self { lon_scale: reference_latitude.to_radians().cos() }
    }

    pub fn project(&self, lat: F, lon: F) -> [F; 2] {
        [lon * self.lon_scale, lat]
    }
}

/// Planar squared distance; the single metric shared by the neighbour tree
/// and anything that must agree with it.
pub fn planar_dist2<F: Float>(a: [F; 2], b: [F; 2]) -> F {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    dx * dx + dy * dy
}

/// Moves `meters` north and `meters_east` east of `origin` on the sphere.
/// Accurate for offsets of a few kilometres.
pub fn offset_m<F: Float>(origin: (F, F), meters_north: F, meters_east: F) -> (F, F) {
    let r = cast::<F>(EARTH_RADIUS_M);
    let dlat = (meters_north / r).to_degrees();
    let dlon = (meters_east / (r * origin.0.to_radians().cos())).to_degrees();
    (origin.0 + dlat, origin.1 + dlon)
}
