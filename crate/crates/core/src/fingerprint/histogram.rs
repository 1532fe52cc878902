use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, FixedOffset, Timelike, Utc};
use serde::{Deserialize, Serialize};

use super::{FingerprintError, Result};
use crate::collector::SLOTS_PER_DAY;

/// Histogram mass of a complete station-day, and the target of
/// [`normalize_fingerprint`].
pub const TARGET_MASS: f64 = SLOTS_PER_DAY as f64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Partition {
    WholeDay,
    Night,
    Morning,
    Day,
}

impl Partition {
    pub const ALL: [Partition; 4] = [Partition::WholeDay, Partition::Night, Partition::Morning, Partition::Day];
    pub const TIMES_OF_DAY: [Partition; 3] = [Partition::Night, Partition::Morning, Partition::Day];

    pub fn as_str(self) -> &'static str {
        match self {
            Partition::WholeDay => "whole_day",
            Partition::Night => "night",
            Partition::Morning => "morning",
            Partition::Day => "day",
        }
    }

    /// Local wall-clock hours covered, as a half-open range that may wrap
    /// midnight.
    pub fn hours(self) -> (u32, u32) {
        match self {
            Partition::WholeDay => (0, 24),
            Partition::Night => (21, 5),
            Partition::Morning => (5, 9),
            Partition::Day => (9, 21),
        }
    }

    /// Time-of-day partition containing a local hour.
    pub fn of_hour(hour: u32) -> Partition {
        match hour {
            5..=8 => Partition::Morning,
            9..=20 => Partition::Day,
            _ => Partition::Night,
        }
    }

    /// Time-of-day partition of a capture time in the schedule's timezone.
    pub fn of_timestamp(ts: DateTime<Utc>, tz: FixedOffset) -> Partition {
        Partition::of_hour(ts.with_timezone(&tz).hour())
    }
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Partition {
    type Err = FingerprintError;

    fn from_str(s: &str) -> Result<Self> {
        Partition::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| FingerprintError::UnknownPartition(s.to_string()))
    }
}

/// Per-station cluster histogram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub station_id: String,
    pub partition: Partition,
    pub n: usize,
    pub histogram: Vec<f64>,
    /// Snippets counted before any normalization.
    pub sample_count: usize,
    #[serde(default)]
    pub model_version: String,
}

impl Fingerprint {
    pub fn mass(&self) -> f64 {
        self.histogram.iter().sum()
    }

    /// True when the histogram carries the normalization mass.
    pub fn is_normalized(&self) -> bool {
        (self.mass() - TARGET_MASS).abs() <= 1e-9 * TARGET_MASS
    }
}

/// Counts cluster assignments into an `n`-bin histogram.
pub fn build_fingerprint(station_id: &str, partition: Partition, assignments: &[usize], n: usize) -> Result<Fingerprint> {
    if assignments.is_empty() {
        return Err(FingerprintError::EmptyPartition { station_id: station_id.to_string(), partition });
    }
    let mut histogram = vec![0.0; n];
    for &a in assignments {
        let bin = histogram
            .get_mut(a)
            .ok_or_else(|| FingerprintError::Shape(format!("cluster index {a} out of range for n = {n}")))?;
        *bin += 1.0;
    }
    Ok(Fingerprint {
        station_id: station_id.to_string(),
        partition,
        n,
        histogram,
        sample_count: assignments.len(),
        model_version: String::new(),
    })
}

/// Scales a histogram by `target_mass / sample_count`.
pub fn normalize_fingerprint(fp: &Fingerprint, target_mass: f64) -> Result<Fingerprint> {
    if fp.sample_count == 0 {
        return Err(FingerprintError::EmptyPartition { station_id: fp.station_id.clone(), partition: fp.partition });
    }
    let scale = target_mass / fp.sample_count as f64;
    Ok(Fingerprint { histogram: fp.histogram.iter().map(|h| h * scale).collect(), ..fp.clone() })
}

/// Indices of snippets per time-of-day partition.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PartitionSets {
    pub night: Vec<usize>,
    pub morning: Vec<usize>,
    pub day: Vec<usize>,
}

impl PartitionSets {
    pub fn get(&self, p: Partition) -> Option<&[usize]> {
        match p {
            Partition::Night => Some(&self.night),
            Partition::Morning => Some(&self.morning),
            Partition::Day => Some(&self.day),
            Partition::WholeDay => None,
        }
    }
}

pub fn partition_assignments(timestamps: &[DateTime<Utc>], tz: FixedOffset) -> PartitionSets {
    let mut sets = PartitionSets::default();
    for (i, &ts) in timestamps.iter().enumerate() {
        match Partition::of_timestamp(ts, tz) {
            Partition::Night => sets.night.push(i),
            Partition::Morning => sets.morning.push(i),
            _ => sets.day.push(i),
        }
    }
    sets
}

/// Whole-day plus non-empty time-of-day fingerprints of one station, all
/// normalized to `target_mass`.
pub fn station_fingerprints(
    station_id: &str,
    labels: &[usize],
    timestamps: &[DateTime<Utc>],
    n: usize,
    tz: FixedOffset,
    target_mass: f64,
) -> Result<Vec<Fingerprint>> {
    assert_eq!(labels.len(), timestamps.len());
    let whole = build_fingerprint(station_id, Partition::WholeDay, labels, n)?;
    let mut out = vec![normalize_fingerprint(&whole, target_mass)?];
    let sets = partition_assignments(timestamps, tz);
    for p in Partition::TIMES_OF_DAY {
        let idx = sets.get(p).expect("time-of-day partition");
        if idx.is_empty() {
            continue;
        }
        let sub: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
        out.push(normalize_fingerprint(&build_fingerprint(station_id, p, &sub, n)?, target_mass)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::collector::build_schedule;
    use chrono::NaiveDate;
    use proptest::prelude::*;

    fn at(h: u32, m: u32) -> DateTime<Utc> {
        NaiveDate::from_ymd_opt(2019, 11, 4).unwrap().and_hms_opt(h, m, 0).unwrap().and_utc()
    }

    #[test]
    fn boundary_slots() {
        let utc = FixedOffset::east_opt(0).unwrap();
        assert_eq!(Partition::of_timestamp(at(21, 1), utc), Partition::Night);
        assert_eq!(Partition::of_timestamp(at(5, 1), utc), Partition::Morning);
        assert_eq!(Partition::of_timestamp(at(9, 1), utc), Partition::Day);
        assert_eq!(Partition::of_timestamp(at(4, 53), utc), Partition::Night);
        // 20:01 UTC is 21:01 in UTC+1
        assert_eq!(Partition::of_timestamp(at(20, 1), FixedOffset::east_opt(3600).unwrap()), Partition::Night);
    }

    #[test]
    fn complete_day_splits_192_96_288() {
        for offset in [0, 3600, -5 * 3600, 19800] {
            let tz = FixedOffset::east_opt(offset).unwrap();
            let slots: Vec<DateTime<Utc>> =
                build_schedule(NaiveDate::from_ymd_opt(2019, 11, 4).unwrap(), tz).iter().map(|s| s.to_utc()).collect();
            let sets = partition_assignments(&slots, tz);
            assert_eq!((sets.night.len(), sets.morning.len(), sets.day.len()), (192, 96, 288));
        }
    }

    #[test]
    fn counting_examples() {
        let fp = build_fingerprint("x", Partition::WholeDay, &[0; 576], 11).unwrap();
        assert_eq!(fp.histogram[0], 576.0);
        assert!(fp.histogram[1..].iter().all(|&h| h == 0.0));
        assert_eq!(build_fingerprint("x", Partition::Day, &[0, 0, 1, 2], 3).unwrap().histogram, vec![2.0, 1.0, 1.0]);
        assert!(build_fingerprint("x", Partition::Day, &[], 3).is_err());
        assert!(build_fingerprint("x", Partition::Day, &[3], 3).is_err());
    }

    #[test]
    fn normalization_examples() {
        let mut morning: Vec<usize> = vec![0; 48];
        morning.extend([1; 48]);
        let fp = build_fingerprint("x", Partition::Morning, &morning, 4).unwrap();
        assert_eq!(normalize_fingerprint(&fp, TARGET_MASS).unwrap().histogram, vec![288.0, 288.0, 0.0, 0.0]);
        let whole = build_fingerprint("x", Partition::WholeDay, &[2; 576], 4).unwrap();
        assert_eq!(normalize_fingerprint(&whole, TARGET_MASS).unwrap(), whole);
        let empty = Fingerprint { sample_count: 0, ..whole };
        assert!(matches!(normalize_fingerprint(&empty, TARGET_MASS), Err(FingerprintError::EmptyPartition { .. })));
    }

    #[test]
    fn partition_names_round_trip() {
        for p in Partition::ALL {
            assert_eq!(p.as_str().parse::<Partition>().unwrap(), p);
            assert_eq!(serde_json::to_string(&p).unwrap(), format!("\"{p}\""));
        }
        assert!("evening".parse::<Partition>().is_err());
    }

    proptest! {
        #[test]
        fn mass_is_conserved(labels in proptest::collection::vec(0usize..11, 1..700)) {
            let fp = build_fingerprint("s", Partition::WholeDay, &labels, 11).unwrap();
            prop_assert_eq!(fp.mass(), labels.len() as f64);
            prop_assert_eq!(fp.sample_count, labels.len());
            let norm = normalize_fingerprint(&fp, TARGET_MASS).unwrap();
            prop_assert!((norm.mass() - TARGET_MASS).abs() <= 1e-9);
        }

        #[test]
        fn partitions_cover_whole_day(minutes in proptest::collection::vec(0u32..1440, 1..300), offset in -12i32..14) {
            let tz = FixedOffset::east_opt(offset * 3600).unwrap();
            let ts: Vec<_> = minutes.iter().map(|&m| at(m / 60, m % 60)).collect();
            let sets = partition_assignments(&ts, tz);
            let mut all: Vec<usize> = sets.night.iter().chain(&sets.morning).chain(&sets.day).copied().collect();
            all.sort();
            prop_assert_eq!(all, (0..ts.len()).collect::<Vec<_>>());
        }
    }
}
