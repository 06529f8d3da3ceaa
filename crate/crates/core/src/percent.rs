//! Fixed-point percentages with one decimal place.
//!
//! Every rate this tool prints (validity rates, function coverage) is shown
//! at one decimal. Storing the value as an integer count of tenths keeps
//! rounding in exactly one place and makes differences exact.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// A percentage in `[0, 100]` held as integer tenths (`47.0%` is `470`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Percent(i64);

impl Percent {
    pub const ZERO: Percent = Percent(0);

    pub fn from_tenths(tenths: i64) -> Self {
        Percent(tenths)
    }

    /// `100 * part / whole`, rounded half-up to one decimal. `None` when
    /// `whole` is zero.
    pub fn from_ratio(part: u64, whole: u64) -> Option<Self> {
        if whole == 0 {
            return None;
        }
        let num = 1000u128 * part as u128;
        let den = whole as u128;
        let tenths = (2 * num + den) / (2 * den);
        Some(Percent(tenths as i64))
    }

    /// Parses a decimal like `"33.0"` or `"0.4"`, rounding half-up to tenths.
    pub fn parse(text: &str) -> Option<Self> {
        let value: f64 = text.trim().trim_end_matches('%').parse().ok()?;
        if !value.is_finite() {
            return None;
        }
        Some(Self::from_f64(value))
    }

    pub fn from_f64(value: f64) -> Self {
        // The small bias absorbs binary representation error (e.g. 46.85).
        let scaled = value * 10.0;
        let rounded = if scaled >= 0.0 {
            (scaled + 0.5 + 1e-9).floor()
        } else {
            -((-scaled + 0.5 - 1e-9).floor())
        };
        Percent(rounded as i64)
    }

    pub fn tenths(self) -> i64 {
        self.0
    }

    pub fn as_f64(self) -> f64 {
        self.0 as f64 / 10.0
    }

    /// Signed difference `self - earlier`.
    pub fn since(self, earlier: Percent) -> Delta {
        Delta(self.0 - earlier.0)
    }
}

impl fmt::Display for Percent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        let abs = self.0.unsigned_abs();
        write!(f, "{sign}{}.{}", abs / 10, abs % 10)
    }
}

impl Serialize for Percent {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_f64(self.as_f64())
    }
}

impl<'de> Deserialize<'de> for Percent {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let value = f64::deserialize(deserializer)?;
        Ok(Percent::from_f64(value))
    }
}

/// A signed difference between two [`Percent`] values, in tenths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Delta(i64);

impl Delta {
    pub fn from_tenths(tenths: i64) -> Self {
        Delta(tenths)
    }

    pub fn tenths(self) -> i64 {
        self.0
    }

    pub fn as_f64(self) -> f64 {
        self.0 as f64 / 10.0
    }
}

impl std::ops::Neg for Delta {
    type Output = Delta;
    fn neg(self) -> Delta {
        Delta(-self.0)
    }
}

impl fmt::Display for Delta {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = match self.0.signum() {
            1 => "+",
            -1 => "-",
            _ => "",
        };
        let abs = self.0.unsigned_abs();
        write!(f, "{sign}{}.{}", abs / 10, abs % 10)
    }
}

impl Serialize for Delta {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_f64(self.as_f64())
    }
}

impl<'de> Deserialize<'de> for Delta {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let value = f64::deserialize(deserializer)?;
        Ok(Delta(Percent::from_f64(value).tenths()))
    }
}

/// Renders an optional percentage, using an em-dash placeholder for
/// undefined values.
pub fn display_or_dash<T: fmt::Display>(value: Option<T>) -> String {
    match value {
        Some(v) => v.to_string(),
        None => "\u{2014}".to_string(),
    }
}
