//! Geodesic primitives: validated coordinates, bounding boxes, great-circle
//! and degree-space distances, nearest-center lookup.

use serde::{Deserialize, Serialize};
use std::fmt;

use crate::error::{Error, Result};

/// IUGG mean Earth radius in kilometers.
pub const EARTH_RADIUS_KM: f64 = 6371.0088;

/// A WGS-84 coordinate in decimal degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    lat: f64,
    lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self> {
        if !lat.is_finite() || !lon.is_finite() {
            return Err(Error::Coordinate(format!("non-finite coordinate ({lat}, {lon})")));
        }
        if !(-90.0..=90.0).contains(&lat) {
            return Err(Error::Coordinate(format!("latitude {lat} outside [-90, 90]")));
        }
        if !(-180.0..=180.0).contains(&lon) {
            return Err(Error::Coordinate(format!("longitude {lon} outside [-180, 180]")));
        }
        Ok(GeoPoint { lat, lon })
    }

    #[inline]
    pub fn lat(&self) -> f64 {
        self.lat
    }

    #[inline]
    pub fn lon(&self) -> f64 {
        self.lon
    }

    /// Arithmetic mean of latitudes and longitudes. `None` for an empty input.
    pub fn centroid<'a, I>(points: I) -> Option<GeoPoint>
    where
        I: IntoIterator<Item = &'a GeoPoint>,
    {
        let (mut lat, mut lon, mut n) = (0.0, 0.0, 0usize);
        for p in points {
            lat += p.lat;
            lon += p.lon;
            n += 1;
        }
        if n == 0 {
            return None;
        }
        // the mean of valid coordinates is itself valid
        Some(GeoPoint {
            lat: lat / n as f64,
            lon: lon / n as f64,
        })
    }
}

impl fmt::Display for GeoPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.lat, self.lon)
    }
}

/// An axis-aligned latitude/longitude box, boundaries inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    south_west: GeoPoint,
    north_east: GeoPoint,
}

impl BoundingBox {
    pub fn new(south_west: GeoPoint, north_east: GeoPoint) -> Result<Self> {
        if south_west.lat > north_east.lat || south_west.lon > north_east.lon {
            return Err(Error::Coordinate(format!(
                "bounding box corners out of order: {south_west} / {north_east}"
            )));
        }
        Ok(BoundingBox {
            south_west,
            north_east,
        })
    }

    /// The San Diego / Tijuana capture region, converted from
    /// 32°25'4.2414"N 117°18'49.5066"W and 33°5'53.3178"N 116°49'17.9142"W.
    pub fn san_diego_tijuana() -> Self {
        BoundingBox {
            south_west: GeoPoint {
                lat: dms(32.0, 25.0, 4.2414),
                lon: -dms(117.0, 18.0, 49.5066),
            },
            north_east: GeoPoint {
                lat: dms(33.0, 5.0, 53.3178),
                lon: -dms(116.0, 49.0, 17.9142),
            },
        }
    }

    pub fn south_west(&self) -> GeoPoint {
        self.south_west
    }

    pub fn north_east(&self) -> GeoPoint {
        self.north_east
    }

    #[inline]
    pub fn contains(&self, p: &GeoPoint) -> bool {
        self.south_west.lat <= p.lat
            && p.lat <= self.north_east.lat
            && self.south_west.lon <= p.lon
            && p.lon <= self.north_east.lon
    }
}

fn dms(deg: f64, min: f64, sec: f64) -> f64 {
    deg + min / 60.0 + sec / 3600.0
}

/// Great-circle distance by the haversine formula.
pub fn haversine_km(a: &GeoPoint, b: &GeoPoint) -> f64 {
    if a == b {
        return 0.0;
    }
    let (phi1, phi2) = (a.lat.to_radians(), b.lat.to_radians());
    let dphi = phi2 - phi1;
    let dlambda = (b.lon - a.lon).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

/// Squared Euclidean distance in raw degree space.
#[inline]
pub fn degree_distance_sq(a: &GeoPoint, b: &GeoPoint) -> f64 {
    let dlat = a.lat - b.lat;
    let dlon = a.lon - b.lon;
    dlat * dlat + dlon * dlon
}

/// Euclidean distance in raw degree space, used by the clustering stages.
#[inline]
pub fn degree_distance(a: &GeoPoint, b: &GeoPoint) -> f64 {
    degree_distance_sq(a, b).sqrt()
}

/// Index of the center closest to `p` by haversine distance. Ties go to the
/// lowest index.
pub fn nearest_center(p: &GeoPoint, centers: &[GeoPoint]) -> Result<usize> {
    if centers.is_empty() {
        return Err(Error::EmptyInput("nearest_center: no centers"));
    }
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, c) in centers.iter().enumerate() {
        let d = haversine_km(p, c);
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    Ok(best)
}
