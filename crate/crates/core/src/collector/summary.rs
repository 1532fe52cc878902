use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::schedule::SLOTS_PER_DAY;
use super::store::RecordingManifest;

/// Dataset totals over all stations in a crawl.
///
/// A station is complete when at least one of its station-days is complete;
/// it then counts exactly one full day of snippets. An incomplete station
/// counts every snippet across all of its days, which is why its total can
/// exceed a single day's slot count. Snippets on extra days of a complete
/// station are reported separately in `surplus_snippets`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub stations: usize,
    pub complete_stations: usize,
    pub incomplete_stations: usize,
    pub total_snippets: usize,
    pub incomplete_snippets: usize,
    pub surplus_snippets: usize,
}

impl DatasetSummary {
    /// `total = 576 * complete + incomplete_snippets`.
    pub fn identity_holds(&self) -> bool {
        self.total_snippets == SLOTS_PER_DAY * self.complete_stations + self.incomplete_snippets
    }
}

pub fn summarize_dataset<'a>(manifests: impl IntoIterator<Item = &'a RecordingManifest>) -> DatasetSummary {
    let mut by_station: BTreeMap<&str, Vec<&RecordingManifest>> = BTreeMap::new();
    for m in manifests {
        by_station.entry(m.station_id.as_str()).or_default().push(m);
    }

    let mut summary = DatasetSummary { stations: by_station.len(), ..Default::default() };
    for days in by_station.values() {
        let all: usize = days.iter().map(|m| m.snippet_count).sum();
        if days.iter().any(|m| m.complete) {
            summary.complete_stations += 1;
            summary.total_snippets += SLOTS_PER_DAY;
            summary.surplus_snippets += all - SLOTS_PER_DAY;
        } else {
            summary.incomplete_stations += 1;
            summary.incomplete_snippets += all;
            summary.total_snippets += all;
        }
    }
    summary
}
