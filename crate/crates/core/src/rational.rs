//! Positive rational quantities (stream-step costs, GD steps per job,
//! speed multipliers) with a `"p/q"` text form.

use std::fmt;
use std::str::FromStr;

use num_rational::Ratio;
use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Rational(Ratio<u64>);

impl Rational {
    pub const ONE: Rational = Rational(Ratio::new_raw(1, 1));
    pub const ZERO: Rational = Rational(Ratio::new_raw(0, 1));

    pub fn new(numer: u64, denom: u64) -> Result<Self> {
        if denom == 0 {
            return Err(Error::InvalidArgument("zero denominator".into()));
        }
        Ok(Rational(Ratio::new(numer, denom)))
    }

    pub fn integer(value: u64) -> Self {
        Rational(Ratio::from_integer(value))
    }

    pub fn numer(&self) -> u64 {
        *self.0.numer()
    }

    pub fn denom(&self) -> u64 {
        *self.0.denom()
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_zero()
    }

    pub fn floor(&self) -> u64 {
        self.numer() / self.denom()
    }

    pub fn ceil(&self) -> u64 {
        self.numer().div_ceil(self.denom())
    }

    pub fn fract(&self) -> Rational {
        Rational(self.0.fract())
    }

    pub fn to_f64(&self) -> f64 {
        self.0.to_f64().unwrap_or(f64::NAN)
    }

    /// Smallest-denominator fraction within `rel_tol` (relative) of `value`,
    /// searching denominators up to `max_denom`.
    pub fn approximate(value: f64, rel_tol: f64, max_denom: u64) -> Option<Self> {
        if !value.is_finite() || value <= 0.0 {
            return None;
        }
        for q in 1..=max_denom {
            let p = (value * q as f64).round();
            if p < 1.0 {
                continue;
            }
            let candidate = p / q as f64;
            if ((candidate - value) / value).abs() <= rel_tol {
                return Some(Rational(Ratio::new(p as u64, q)));
            }
        }
        None
    }
}

impl std::ops::Add for Rational {
    type Output = Rational;
    fn add(self, rhs: Rational) -> Rational {
        Rational(self.0 + rhs.0)
    }
}

impl std::ops::AddAssign for Rational {
    fn add_assign(&mut self, rhs: Rational) {
        self.0 += rhs.0;
    }
}

impl std::ops::Sub for Rational {
    type Output = Rational;
    fn sub(self, rhs: Rational) -> Rational {
        Rational(self.0 - rhs.0)
    }
}

impl std::ops::Mul for Rational {
    type Output = Rational;
    fn mul(self, rhs: Rational) -> Rational {
        Rational(self.0 * rhs.0)
    }
}

impl fmt::Display for Rational {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.denom() == 1 {
            write!(f, "{}", self.numer())
        } else {
            write!(f, "{}/{}", self.numer(), self.denom())
        }
    }
}

impl FromStr for Rational {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::InvalidArgument(format!("not a non-negative rational: {s:?}"));
        match s.split_once('/') {
            Some((p, q)) => {
                let p: u64 = p.trim().parse().map_err(|_| bad())?;
                let q: u64 = q.trim().parse().map_err(|_| bad())?;
                Rational::new(p, q)
            }
            None => {
                if let Ok(v) = s.parse::<u64>() {
                    return Ok(Rational::integer(v));
                }
                let v: f64 = s.parse().map_err(|_| bad())?;
                Rational::approximate(v, 1e-9, 1_000_000).ok_or_else(bad)
            }
        }
    }
}

impl Serialize for Rational {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Rational {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Int(u64),
            Float(f64),
            Text(String),
        }
        let parsed = match Repr::deserialize(deserializer)? {
            Repr::Int(v) => Ok(Rational::integer(v)),
            Repr::Float(v) => v.to_string().parse(),
            Repr::Text(s) => s.parse(),
        };
        parsed.map_err(serde::de::Error::custom)
    }
}
