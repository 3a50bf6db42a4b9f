use chrono::{Datelike, Timelike};

use super::series::FlowSeries;

pub const DAYS_PER_WEEK: usize = 7;

/// Time-of-day and day-of-week slot for every step of a series.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Calendar {
    pub tod: Vec<usize>,
    pub dow: Vec<usize>,
    /// Intervals per day.
    pub slots_per_day: usize,
    pub days_per_week: usize,
}

/// Monday = 0. Slots are counted from midnight UTC of the start timestamp.
pub fn calendar_features(series: &FlowSeries) -> Calendar {
    let interval = series.interval_minutes() as usize;
    let slots_per_day = 1440 / interval;
    let start = series.start_time();
    let start_minute = start.hour() as usize * 60 + start.minute() as usize;
    let first_slot = start_minute / interval;

    let mut tod = Vec::with_capacity(series.timesteps());
    let mut dow = Vec::with_capacity(series.timesteps());
    for t in 0..series.timesteps() {
        tod.push((first_slot + t) % slots_per_day);
        dow.push(series.timestamp(t).weekday().num_days_from_monday() as usize);
    }
    Calendar {
        tod,
        dow,
        slots_per_day,
        days_per_week: DAYS_PER_WEEK,
    }
}
