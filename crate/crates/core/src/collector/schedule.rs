//! Snippet slot schedule and the clocks that drive it.
//!
//! Slots start on odd minutes. Minutes 55, 57, 59, 1, 3 and 5 are skipped so
//! nothing is recorded within five minutes of a full hour, leaving 24 slots
//! per hour and 576 per day.

use std::ops::Range;
use std::thread;

use chrono::{DateTime, Duration, FixedOffset, NaiveDate, NaiveTime, TimeZone, Utc};

pub const SNIPPET_SECONDS: u32 = 5;
pub const SLOTS_PER_HOUR: usize = 24;
pub const SLOTS_PER_DAY: usize = SLOTS_PER_HOUR * 24;

const EXCLUDED_MINUTES: [u32; 6] = [55, 57, 59, 1, 3, 5];

pub fn is_excluded_minute(minute: u32) -> bool {
    EXCLUDED_MINUTES.contains(&minute)
}

fn slot_minutes() -> impl Iterator<Item = u32> {
    (1..60).step_by(2).filter(|m| !is_excluded_minute(*m))
}

/// All slot start times of `day` in the schedule's local time zone.
pub fn build_schedule(day: NaiveDate, tz: FixedOffset) -> Vec<DateTime<FixedOffset>> {
    slots_in_hours(day, tz, 0..24)
}

/// Slots of `day` whose local hour lies in `hours`.
pub fn slots_in_hours(day: NaiveDate, tz: FixedOffset, hours: Range<u32>) -> Vec<DateTime<FixedOffset>> {
    let mut slots = Vec::with_capacity(hours.len() * SLOTS_PER_HOUR);
    for hour in hours.start..hours.end.min(24) {
        for minute in slot_minutes() {
            let local = day.and_time(NaiveTime::from_hms_opt(hour, minute, 0).expect("valid slot time"));
            // fixed offsets have no gaps or folds
            slots.push(tz.from_local_datetime(&local).single().expect("fixed offset is unambiguous"));
        }
    }
    slots
}

/// Time source for the recorder. The simulated clock lets a day of crawling
/// run in seconds.
pub trait Clock: Send {
    fn now(&self) -> DateTime<Utc>;
    fn sleep_until(&mut self, deadline: DateTime<Utc>);
    fn sleep(&mut self, duration: Duration) {
        let deadline = self.now() + duration;
        self.sleep_until(deadline);
    }
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }

    fn sleep_until(&mut self, deadline: DateTime<Utc>) {
        if let Ok(wait) = (deadline - Utc::now()).to_std() {
            thread::sleep(wait);
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SimulatedClock {
    now: DateTime<Utc>,
}

impl SimulatedClock {
    pub fn starting_at(now: DateTime<Utc>) -> Self {
        SimulatedClock { now }
    }

    pub fn advance(&mut self, by: Duration) {
        self.now += by;
    }
}

impl Clock for SimulatedClock {
    fn now(&self) -> DateTime<Utc> {
        self.now
    }

    fn sleep_until(&mut self, deadline: DateTime<Utc>) {
        if deadline > self.now {
            self.now = deadline;
        }
    }
}
