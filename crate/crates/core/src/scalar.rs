//! Numeric abstraction for ratio-valued quantities.
//!
//! Scores and coverage fractions are ratios of counts. [`Scalar`] lets the
//! same code produce them as `f32`, `f64`, or exact rationals
//! ([`Rational`]), and defines half-up rounding for each.

use std::fmt::{self, Debug};

use num_rational::Ratio;
use num_traits::{Num, ToPrimitive};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Exact rational scalar.
pub type Rational = Ratio<i64>;

pub trait Scalar: Num + Copy + PartialOrd + Debug + Send + Sync + 'static {
    /// `num / den`; callers guarantee `den > 0`.
    fn from_ratio(num: u64, den: u64) -> Self;

    /// Decimal literal with two fractional digits, e.g. `5551` hundredths.
    fn from_hundredths(hundredths: i64) -> Self {
        Self::from_ratio(hundredths.unsigned_abs(), 100).signed(hundredths < 0)
    }

    fn to_f64(self) -> f64;

    /// Rounds `self * scale` to the nearest integer, ties away from zero.
    fn round_scaled(self, scale: i64) -> i64;

    #[doc(hidden)]
    fn signed(self, negative: bool) -> Self {
        if negative {
            Self::zero() - self
        } else {
            self
        }
    }
}

// Float products like 0.66665 * 10000 can land a hair below the tie; the
// nudge restores the decimal intent without moving any non-tie value.
macro_rules! float_scalar {
    ($t:ty, $eps:expr) => {
        impl Scalar for $t {
            fn from_ratio(num: u64, den: u64) -> Self {
                (num as f64 / den as f64) as $t
            }

            fn to_f64(self) -> f64 {
                self as f64
            }

            fn round_scaled(self, scale: i64) -> i64 {
                let y = self as f64 * scale as f64;
                let nudge = $eps * y.abs().max(1.0);
                if y >= 0.0 {
                    (y + 0.5 + nudge).floor() as i64
                } else {
                    -((-y + 0.5 + nudge).floor() as i64)
                }
            }
        }
    };
}

float_scalar!(f32, 1e-6);
float_scalar!(f64, 1e-9);

impl Scalar for Rational {
    fn from_ratio(num: u64, den: u64) -> Self {
        Ratio::new(num as i64, den as i64)
    }

    fn to_f64(self) -> f64 {
        ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }

    fn round_scaled(self, scale: i64) -> i64 {
        let scaled = self * Ratio::from_integer(scale);
        let (n, d) = (*scaled.numer() as i128, *scaled.denom() as i128);
        // denominators are kept positive by Ratio
        let rounded = if n >= 0 {
            (2 * n + d) / (2 * d)
        } else {
            -((-2 * n + d) / (2 * d))
        };
        rounded as i64
    }
}

/// A percentage held as integer hundredths (`66.67` is `6667`).
///
/// Every score the toolkit reports is a `Percent`, so deltas and table
/// cells are exact decimal arithmetic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Percent(pub i64);

impl Percent {
    pub const ZERO: Percent = Percent(0);

    /// Converts a fraction in `[0, 1]` to a percentage, half-up.
    pub fn from_fraction<S: Scalar>(fraction: S) -> Self {
        Percent(fraction.round_scaled(10_000))
    }

    /// Rounds a value already expressed in percent, half-up.
    pub fn from_percent<S: Scalar>(value: S) -> Self {
        Percent(value.round_scaled(100))
    }

    pub fn hundredths(self) -> i64 {
        self.0
    }

    pub fn as_f64(self) -> f64 {
        self.0 as f64 / 100.0
    }

    pub fn to_scalar<S: Scalar>(self) -> S {
        S::from_hundredths(self.0)
    }

    /// Signed delta annotation, e.g. `+7.26` or `-7.80`.
    pub fn signed(self) -> String {
        if self.0 < 0 {
            format!("-{}", Percent(-self.0))
        } else {
            format!("+{self}")
        }
    }
}

impl std::ops::Sub for Percent {
    type Output = Percent;

    fn sub(self, rhs: Percent) -> Percent {
        Percent(self.0 - rhs.0)
    }
}

impl fmt::Display for Percent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        let abs = self.0.unsigned_abs();
        write!(f, "{sign}{}.{:02}", abs / 100, abs % 100)
    }
}

impl std::str::FromStr for Percent {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let (neg, body) = match s.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, s.strip_prefix('+').unwrap_or(s)),
        };
        let (whole, frac) = body.split_once('.').unwrap_or((body, ""));
        if whole.is_empty() || frac.len() > 2 || !whole.chars().all(|c| c.is_ascii_digit()) {
            return Err(format!("not a two-decimal percentage: `{s}`"));
        }
        if !frac.chars().all(|c| c.is_ascii_digit()) {
            return Err(format!("not a two-decimal percentage: `{s}`"));
        }
        let whole: i64 = whole.parse().map_err(|e| format!("{e}"))?;
        let frac: i64 = format!("{frac:0<2}").parse().map_err(|e| format!("{e}"))?;
        let v = whole * 100 + frac;
        Ok(Percent(if neg { -v } else { v }))
    }
}

impl Serialize for Percent {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_f64(self.as_f64())
    }
}

impl<'de> Deserialize<'de> for Percent {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let v = f64::deserialize(deserializer)?;
        Ok(Percent::from_percent(v))
    }
}
