//! Compression factor `f`: the ratio between descriptor length and embedding length.

use std::fmt;
use std::str::FromStr;

use num_rational::Ratio;
use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Positive rational compression factor. `f < 1` expands the embedding space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CompressionFactor(Ratio<u64>);

impl CompressionFactor {
    pub const ONE: CompressionFactor = CompressionFactor(Ratio::new_raw(1, 1));

    pub fn new(numer: u64, denom: u64) -> Result<Self> {
        if numer == 0 || denom == 0 {
            return Err(Error::InvalidConfig(format!(
                "compression factor must be positive, got {numer}/{denom}"
            )));
        }
        Ok(CompressionFactor(Ratio::new(numer, denom)))
    }

    pub fn ratio(&self) -> Ratio<u64> {
        self.0
    }

    pub fn is_one(&self) -> bool {
        *self == Self::ONE
    }

    /// `floor(dim / f)`, the truncated-SVD target rank.
    pub fn floor_len(&self, dim: usize) -> usize {
        (Ratio::from_integer(dim as u64) / self.0)
            .floor()
            .to_integer() as usize
    }

    /// `round(dim / f)` with halves rounded away from zero, at least 1.
    pub fn round_len(&self, dim: usize) -> usize {
        let len = (Ratio::from_integer(dim as u64) / self.0)
            .round()
            .to_integer() as usize;
        len.max(1)
    }

    pub fn to_f64(&self) -> f64 {
        self.0.to_f64().unwrap_or(f64::NAN)
    }
}

impl Default for CompressionFactor {
    fn default() -> Self {
        Self::ONE
    }
}

impl fmt::Display for CompressionFactor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let r = self.0;
        if r.is_integer() {
            return write!(f, "{}", r.to_integer());
        }
        // Terminating decimals print as decimals (0.5, 1.25), the rest as p/q.
        let mut d = *r.denom();
        while d.is_multiple_of(2) {
            d /= 2;
        }
        while d.is_multiple_of(5) {
            d /= 5;
        }
        if d == 1 {
            write!(f, "{}", r.to_f64().unwrap_or(f64::NAN))
        } else {
            write!(f, "{}/{}", r.numer(), r.denom())
        }
    }
}

impl FromStr for CompressionFactor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidConfig(format!("cannot parse compression factor {s:?}"));
        let s = s.trim();
        if let Some((n, d)) = s.split_once('/') {
            let n: u64 = n.trim().parse().map_err(|_| bad())?;
            let d: u64 = d.trim().parse().map_err(|_| bad())?;
            return Self::new(n, d);
        }
        let (int, frac) = s.split_once('.').unwrap_or((s, ""));
        if (int.is_empty() && frac.is_empty()) || !frac.chars().all(|c| c.is_ascii_digit()) {
            return Err(bad());
        }
        let int: u64 = if int.is_empty() {
            0
        } else {
            int.parse().map_err(|_| bad())?
        };
        let frac = frac.trim_end_matches('0');
        if frac.len() > 18 {
            return Err(bad());
        }
        let denom = 10u64.pow(frac.len() as u32);
        let frac_val: u64 = if frac.is_empty() {
            0
        } else {
            frac.parse().map_err(|_| bad())?
        };
        let numer = int
            .checked_mul(denom)
            .and_then(|v| v.checked_add(frac_val))
            .ok_or_else(bad)?;
        if numer.is_zero() {
            return Err(Error::InvalidConfig(format!(
                "compression factor must be positive, got {s:?}"
            )));
        }
        Self::new(numer, denom)
    }
}

impl Serialize for CompressionFactor {
    fn serialize<S: serde::Serializer>(
        &self,
        serializer: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for CompressionFactor {
    fn deserialize<D: serde::Deserializer<'de>>(
        deserializer: D,
    ) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
