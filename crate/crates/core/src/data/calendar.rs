//! Calendar slots used by the temporal embeddings and by reachability.

use chrono::{Datelike, Duration, NaiveDate};
use serde::{Deserialize, Serialize};

/// Meteorological season: Dec–Feb, Mar–May, Jun–Aug, Sep–Nov.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Season {
    Winter = 0,
    Spring = 1,
    Summer = 2,
    Autumn = 3,
}

impl Season {
    pub fn of(date: NaiveDate) -> Self {
        match date.month() {
            12 | 1 | 2 => Season::Winter,
            3..=5 => Season::Spring,
            6..=8 => Season::Summer,
            _ => Season::Autumn,
        }
    }

    pub fn slot(self) -> usize {
        self as usize
    }
}

/// A concrete season instance. December belongs to the winter of the
/// following calendar year, so a winter never straddles two keys.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SeasonKey {
    pub year: i32,
    pub season: Season,
}

impl SeasonKey {
    pub fn of(date: NaiveDate) -> Self {
        let year = if date.month() == 12 {
            date.year() + 1
        } else {
            date.year()
        };
        SeasonKey {
            year,
            season: Season::of(date),
        }
    }
}

/// Monday of the ISO week containing `date`.
pub fn week_start(date: NaiveDate) -> NaiveDate {
    date - Duration::days(date.weekday().num_days_from_monday() as i64)
}

/// Day-of-year slot in `0..366` on a leap-year calendar, so that
/// 29 February always has its own slot and 1 March is slot 60 every year.
pub fn day_slot(date: NaiveDate) -> usize {
    let ordinal0 = date.ordinal0() as usize;
    let leap = NaiveDate::from_ymd_opt(date.year(), 2, 29).is_some();
    if !leap && date.month() > 2 {
        ordinal0 + 1
    } else {
        ordinal0
    }
}

/// ISO week slot in `0..52`; week 53 folds into the last slot.
pub fn week_slot(date: NaiveDate) -> usize {
    (date.iso_week().week() as usize).min(52) - 1
}

pub fn month_slot(date: NaiveDate) -> usize {
    date.month0() as usize
}

pub const DAY_SLOTS: usize = 366;
pub const WEEK_SLOTS: usize = 52;
pub const MONTH_SLOTS: usize = 12;
pub const SEASON_SLOTS: usize = 4;
