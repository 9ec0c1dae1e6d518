//! Calendar helpers shared by the ingestion and feature modules.

use chrono::{Datelike, Days, NaiveDate};

/// Inclusive range of calendar years.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct YearRange {
    pub first: i32,
    pub last: i32,
}

impl YearRange {
    /// Panics if `first > last`; callers validate user input before building one.
    pub fn new(first: i32, last: i32) -> Self {
        assert!(first <= last, "year range {first}..{last} is inverted");
        Self { first, last }
    }

    pub fn years(&self) -> impl Iterator<Item = i32> {
        self.first..=self.last
    }

    pub fn contains(&self, year: i32) -> bool {
        (self.first..=self.last).contains(&year)
    }

    /// Jan 1 of the first year.
    pub fn start_date(&self) -> NaiveDate {
        NaiveDate::from_ymd_opt(self.first, 1, 1).expect("valid Jan 1")
    }

    /// Dec 31 of the last year.
    pub fn end_date(&self) -> NaiveDate {
        NaiveDate::from_ymd_opt(self.last, 12, 31).expect("valid Dec 31")
    }

    /// Total number of calendar days, leap-aware.
    pub fn num_days(&self) -> usize {
        self.years().map(|y| days_in_year(y) as usize).sum()
    }

    /// All days in the range in ascending order.
    pub fn days(&self) -> impl Iterator<Item = NaiveDate> {
        let start = self.start_date();
        let end = self.end_date();
        start.iter_days().take_while(move |d| *d <= end)
    }

    /// 0-based offset of `date` from the range start, if inside the range.
    pub fn day_index(&self, date: NaiveDate) -> Option<usize> {
        if !self.contains(date.year()) {
            return None;
        }
        Some((date - self.start_date()).num_days() as usize)
    }

    /// Inverse of [`YearRange::day_index`].
    pub fn date_at(&self, index: usize) -> NaiveDate {
        self.start_date()
            .checked_add_days(Days::new(index as u64))
            .expect("index within calendar range")
    }
}

pub fn days_in_year(year: i32) -> u32 {
    if NaiveDate::from_ymd_opt(year, 2, 29).is_some() {
        366
    } else {
        365
    }
}

/// Week number from the day-of-year formula, capped at 52.
///
/// `floor((day_of_year - 1) / 7) + 1`, so Jan 1-7 are week 1 and the last
/// one or two days of the year fold into week 52.
pub fn week_of_year(date: NaiveDate) -> u32 {
    ((date.ordinal() - 1) / 7 + 1).min(52)
}

/// Day-of-year with Feb 29 folded into day 59 so all years align on 365 days.
pub fn folded_day_of_year(date: NaiveDate) -> u32 {
    let ordinal = date.ordinal();
    if days_in_year(date.year()) == 366 && ordinal >= 60 {
        ordinal - 1
    } else {
        ordinal
    }
}
