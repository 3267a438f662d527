//! Geotags and the localization-correctness predicate.

use alloc::string::String;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const EARTH_RADIUS_M: f64 = 6_371_000.8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeoTag {
    /// Latitude in degrees, [-90, 90].
    pub latitude: f64,
    /// Longitude in degrees, [-180, 180].
    pub longitude: f64,
    #[serde(default)]
    pub source_id: String,
}

impl GeoTag {
    pub fn new(latitude: f64, longitude: f64, source_id: impl Into<String>) -> Result<Self> {
        let tag = Self {
            latitude,
            longitude,
            source_id: source_id.into(),
        };
        tag.validate()?;
        Ok(tag)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.latitude.is_finite() || !(-90.0..=90.0).contains(&self.latitude) {
            return Err(Error::InvalidGeoTag(alloc::format!(
                "latitude {} out of [-90, 90]",
                self.latitude
            )));
        }
        if !self.longitude.is_finite() || !(-180.0..=180.0).contains(&self.longitude) {
            return Err(Error::InvalidGeoTag(alloc::format!(
                "longitude {} out of [-180, 180]",
                self.longitude
            )));
        }
        Ok(())
    }
}

/// Great-circle distance in meters (haversine).
pub fn haversine_m(a: &GeoTag, b: &GeoTag) -> f64 {
    let lat1 = a.latitude.to_radians();
    let lat2 = b.latitude.to_radians();
    let dlat = (b.latitude - a.latitude).to_radians();
    let dlon = (b.longitude - a.longitude).to_radians();
    let s1 = libm::sin(dlat / 2.0);
    let s2 = libm::sin(dlon / 2.0);
    let h = s1 * s1 + libm::cos(lat1) * libm::cos(lat2) * s2 * s2;
    2.0 * EARTH_RADIUS_M * libm::asin(libm::sqrt(h.min(1.0)))
}

/// True when `result` lies within `radius_m` of `truth`.
pub fn localization_correct(result: &GeoTag, truth: &GeoTag, radius_m: f64) -> bool {
    haversine_m(result, truth) <= radius_m
}
