use std::fmt;
use std::ops::Sub;

use serde::{Serialize, Serializer};

/// A decimal with a fixed number of places, stored as an integer count of
/// the smallest unit. Rounding into it is half away from zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Fixed {
    units: i64,
    places: u32,
}

impl Fixed {
    pub fn new(units: i64, places: u32) -> Self {
        Self { units, places }
    }

    /// `num / den` rounded to `places` decimals, computed exactly.
    pub fn from_ratio(num: u64, den: u64, places: u32) -> Self {
        assert!(den > 0, "zero denominator");
        let scaled = num as u128 * 10u128.pow(places);
        let units = (2 * scaled + den as u128) / (2 * den as u128);
        Self { units: units as i64, places }
    }

    pub fn from_f64(x: f64, places: u32) -> Self {
        Self { units: (x * 10f64.powi(places as i32)).round() as i64, places }
    }

    pub fn units(&self) -> i64 {
        self.units
    }

    pub fn places(&self) -> u32 {
        self.places
    }

    pub fn to_f64(&self) -> f64 {
        self.units as f64 / 10f64.powi(self.places as i32)
    }
}

impl Sub for Fixed {
    type Output = Fixed;

    fn sub(self, rhs: Fixed) -> Fixed {
        assert_eq!(self.places, rhs.places, "mixed precision");
        Fixed { units: self.units - rhs.units, places: self.places }
    }
}

impl fmt::Display for Fixed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.units < 0 { "-" } else { "" };
        let abs = self.units.unsigned_abs();
        if self.places == 0 {
            return write!(f, "{sign}{abs}");
        }
        let unit = 10u64.pow(self.places);
        write!(f, "{sign}{}.{:0width$}", abs / unit, abs % unit, width = self.places as usize)
    }
}

impl Serialize for Fixed {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(self.to_f64())
    }
}
