//! Calendar days stored as (year, day-of-year).

use std::fmt;
use std::str::FromStr;

use chrono::{Datelike, NaiveDate};
use serde_with::{DeserializeFromStr, SerializeDisplay};

use crate::error::{Error, Result};

/// A calendar day in the proleptic Gregorian calendar, `doy` in 1..=366.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, SerializeDisplay, DeserializeFromStr)]
pub struct DayDate {
    pub year: i32,
    pub doy: u16,
}

impl DayDate {
    pub fn new(year: i32, doy: u16) -> Result<Self> {
        if doy == 0 || doy > days_in_year(year) {
            return Err(Error::Invalid(format!(
                "day-of-year {doy} out of range for {year}"
            )));
        }
        Ok(DayDate { year, doy })
    }

    pub fn from_ymd(year: i32, month: u32, day: u32) -> Result<Self> {
        NaiveDate::from_ymd_opt(year, month, day)
            .map(Self::from)
            .ok_or_else(|| Error::Invalid(format!("invalid date {year}-{month}-{day}")))
    }

    pub fn to_naive(self) -> NaiveDate {
        NaiveDate::from_yo_opt(self.year, u32::from(self.doy)).expect("validated on construction")
    }
}

impl From<NaiveDate> for DayDate {
    fn from(d: NaiveDate) -> Self {
        DayDate {
            year: d.year(),
            doy: d.ordinal() as u16,
        }
    }
}

impl FromStr for DayDate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d")
            .map(Self::from)
            .map_err(|e| Error::Invalid(format!("bad date {s:?} (expected YYYY-MM-DD): {e}")))
    }
}

impl fmt::Display for DayDate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_naive().format("%Y-%m-%d"))
    }
}

pub fn is_leap_year(year: i32) -> bool {
    (year % 4 == 0 && year % 100 != 0) || year % 400 == 0
}

pub fn days_in_year(year: i32) -> u16 {
    if is_leap_year(year) {
        366
    } else {
        365
    }
}
