//! Per-station recording loop and the crawl driver.

use std::io::Read;
use std::ops::Range;
use std::thread;
use std::time::Duration as StdDuration;

use chrono::{DateTime, Duration, FixedOffset, NaiveDate, TimeZone, Utc};
use log::{debug, info, warn};

use super::decode::{PcmSource, PcmStream};
use super::icy::{open_icy_stream, IcyDemuxer};
use super::schedule::{slots_in_hours, Clock, SimulatedClock, SystemClock, SNIPPET_SECONDS};
use super::store::{AudioSnippet, RecordingManifest, SnippetStore};
use super::{CollectorError, Result, StationRecord};

/// Turns a demuxed audio byte stream into a PCM source. Swap this to add
/// compressed codecs.
pub type DecoderFactory = fn(Box<dyn Read + Send>, &str) -> Result<Box<dyn PcmSource + Send>>;

fn default_decoder(reader: Box<dyn Read + Send>, content_type: &str) -> Result<Box<dyn PcmSource + Send>> {
    Ok(Box::new(PcmStream::open(reader, content_type)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ClockMode {
    #[default]
    Real,
    /// Slots are visited back to back; sleeping only advances a virtual clock.
    Simulated,
}

/// Exponential reconnect backoff, doubling from `initial` up to `cap`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Backoff {
    pub initial: Duration,
    pub cap: Duration,
    current: Option<Duration>,
}

impl Default for Backoff {
    fn default() -> Self {
        Backoff { initial: Duration::seconds(1), cap: Duration::seconds(60), current: None }
    }
}

impl Backoff {
    pub fn next_delay(&mut self) -> Duration {
        let next = match self.current {
            None => self.initial,
            Some(d) => (d * 2).min(self.cap),
        };
        self.current = Some(next);
        next
    }

    pub fn reset(&mut self) {
        self.current = None;
    }
}

#[derive(Clone)]
pub struct CrawlOptions {
    pub day: NaiveDate,
    pub tz: FixedOffset,
    /// Local hours to record; `0..24` is a full day.
    pub hours: Range<u32>,
    pub clock: ClockMode,
    pub timeout: StdDuration,
    pub want_metadata: bool,
    pub backoff: Backoff,
    pub decoder: DecoderFactory,
}

impl CrawlOptions {
    pub fn new(day: NaiveDate) -> Self {
        CrawlOptions {
            day,
            tz: FixedOffset::east_opt(0).expect("zero offset"),
            hours: 0..24,
            clock: ClockMode::Real,
            timeout: StdDuration::from_secs(10),
            want_metadata: true,
            backoff: Backoff::default(),
            decoder: default_decoder,
        }
    }

    pub fn slots(&self) -> Vec<DateTime<FixedOffset>> {
        slots_in_hours(self.day, self.tz, self.hours.clone())
    }

    fn window_start(&self) -> DateTime<Utc> {
        let local = self.day.and_hms_opt(self.hours.start.min(23), 0, 0).expect("valid hour");
        self.tz.from_local_datetime(&local).single().expect("fixed offset").with_timezone(&Utc)
    }

    fn make_clock(&self) -> Box<dyn Clock> {
        match self.clock {
            ClockMode::Real => Box::new(SystemClock),
            ClockMode::Simulated => Box::new(SimulatedClock::starting_at(self.window_start())),
        }
    }
}

/// Reads one 5 second snippet from `source` and persists it at the slot path.
///
/// Nothing is written unless the full snippet arrived.
pub fn record_snippet(
    source: &mut dyn PcmSource,
    station_id: &str,
    slot: DateTime<FixedOffset>,
    store: &SnippetStore,
) -> Result<AudioSnippet> {
    let sample_rate = source.sample_rate();
    let samples = source.read_mono(sample_rate as usize * SNIPPET_SECONDS as usize)?;
    let snippet = AudioSnippet {
        station_id: station_id.to_string(),
        capture_time: slot.with_timezone(&Utc),
        sample_rate,
        samples,
    };
    store.write_snippet(&snippet, slot)?;
    Ok(snippet)
}

/// Records the configured slots of one station. Each slot opens a fresh
/// connection, so a dropped stream only costs that slot.
pub struct StationRecorder<'a> {
    station: &'a StationRecord,
    store: &'a SnippetStore,
    options: &'a CrawlOptions,
}

impl<'a> StationRecorder<'a> {
    pub fn new(station: &'a StationRecord, store: &'a SnippetStore, options: &'a CrawlOptions) -> Self {
        StationRecorder { station, store, options }
    }

    pub fn run(&self, clock: &mut dyn Clock) -> Result<RecordingManifest> {
        let id = &self.station.station_id;
        let opts = self.options;
        // resume an interrupted crawl of the same day
        let mut manifest = match self.store.read_manifest(id, opts.day) {
            Ok(m) if m.utc_offset_secs == opts.tz.local_minus_utc() => m,
            _ => RecordingManifest::new(id.clone(), opts.day, opts.tz),
        };
        let mut backoff = opts.backoff;
        let mut retry_not_before: Option<DateTime<Utc>> = None;

        for slot in opts.slots() {
            if !manifest.missing_slots.contains(&slot) {
                continue;
            }
            let start = slot.with_timezone(&Utc);
            if clock.now() > start + Duration::seconds(1) {
                debug!("{id}: slot {slot} already passed");
                continue;
            }
            clock.sleep_until(start);
            if retry_not_before.is_some_and(|t| clock.now() < t) {
                debug!("{id}: slot {slot} skipped during backoff");
                continue;
            }

            match self.capture(slot) {
                Ok(_) => {
                    manifest.mark_recorded(slot);
                    backoff.reset();
                    retry_not_before = None;
                }
                Err(e @ (CollectorError::CodecUnsupported(_) | CollectorError::NotAStream(_))) => {
                    warn!("{id}: skipping station: {e}");
                    self.store.write_manifest(&manifest)?;
                    return Ok(manifest);
                }
                Err(e) => {
                    let delay = backoff.next_delay();
                    warn!("{id}: slot {slot} missing: {e} (retry in {}s)", delay.num_seconds());
                    retry_not_before = Some(clock.now() + delay);
                }
            }
            if opts.clock == ClockMode::Simulated {
                clock.sleep(Duration::seconds(SNIPPET_SECONDS as i64));
            }
            self.store.write_manifest(&manifest)?;
        }
        self.store.write_manifest(&manifest)?;
        Ok(manifest)
    }

    fn capture(&self, slot: DateTime<FixedOffset>) -> Result<AudioSnippet> {
        let (header, body) =
            open_icy_stream(&self.station.bearer_url, self.options.want_metadata, self.options.timeout)?;
        let demuxer = IcyDemuxer::new(body, header.metaint);
        let mut source = (self.options.decoder)(Box::new(demuxer), &header.content_type)?;
        record_snippet(source.as_mut(), &self.station.station_id, slot, self.store)
    }
}

/// Records every station in parallel, one thread per station. Stations share
/// nothing but the store root, and each writes under its own directory.
pub fn crawl(catalog: &[StationRecord], store: &SnippetStore, options: &CrawlOptions) -> Result<Vec<RecordingManifest>> {
    info!(
        "crawling {} stations on {} hours {:?} ({:?} clock)",
        catalog.len(),
        options.day,
        options.hours,
        options.clock
    );
    let results: Vec<Result<RecordingManifest>> = thread::scope(|scope| {
        let handles: Vec<_> = catalog
            .iter()
            .map(|station| {
                scope.spawn(move || {
                    let mut clock = options.make_clock();
                    StationRecorder::new(station, store, options).run(clock.as_mut())
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(CollectorError::Manifest("recorder thread panicked".into()))))
            .collect()
    });
    let mut manifests = results.into_iter().collect::<Result<Vec<_>>>()?;
    manifests.sort_by(|a, b| a.station_id.cmp(&b.station_id));
    Ok(manifests)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::collector::decode::wav_bytes;
    use std::io::Cursor;

    #[test]
    fn backoff_doubles_to_cap() {
        let mut b = Backoff::default();
        let delays: Vec<i64> = (0..9).map(|_| b.next_delay().num_seconds()).collect();
        assert_eq!(delays, [1, 2, 4, 8, 16, 32, 60, 60, 60]);
        b.reset();
        assert_eq!(b.next_delay().num_seconds(), 1);
    }

    #[test]
    fn healthy_source_gives_exact_five_seconds() {
        let dir = tempfile::tempdir().unwrap();
        let store = SnippetStore::new(dir.path());
        let tz = FixedOffset::east_opt(0).unwrap();
        let slot = tz.with_ymd_and_hms(2019, 11, 4, 13, 7, 0).unwrap();
        let wav = wav_bytes(8_000, 1, &vec![5; 8_000 * 6]);
        let mut source = PcmStream::open(Cursor::new(wav), "audio/wav").unwrap();
        let snippet = record_snippet(&mut source, "s1", slot, &store).unwrap();
        assert_eq!(snippet.duration_secs(), 5.0);
        assert!(dir.path().join("s1/2019-11-04/1307.wav").is_file());
    }

    #[test]
    fn dropped_source_leaves_no_file() {
        let dir = tempfile::tempdir().unwrap();
        let store = SnippetStore::new(dir.path());
        let tz = FixedOffset::east_opt(0).unwrap();
        let slot = tz.with_ymd_and_hms(2019, 11, 4, 13, 7, 0).unwrap();
        let wav = wav_bytes(8_000, 1, &vec![5; 8_000 * 2]);
        let mut source = PcmStream::open(Cursor::new(wav), "audio/wav").unwrap();
        assert!(matches!(
            record_snippet(&mut source, "s1", slot, &store),
            Err(CollectorError::StreamDropped { .. })
        ));
        assert!(!dir.path().join("s1").exists());
    }

    #[test]
    fn unreachable_station_misses_every_slot() {
        let dir = tempfile::tempdir().unwrap();
        let store = SnippetStore::new(dir.path());
        let station = StationRecord {
            station_id: "gone".into(),
            name: "Gone".into(),
            genres: vec![],
            // port 9 on loopback is closed in the test environment
            bearer_url: "http://127.0.0.1:9/stream".into(),
        };
        let mut opts = CrawlOptions::new(NaiveDate::from_ymd_opt(2019, 11, 4).unwrap());
        opts.hours = 13..14;
        opts.clock = ClockMode::Simulated;
        opts.timeout = StdDuration::from_millis(200);
        let manifests = crawl(&[station], &store, &opts).unwrap();
        assert_eq!(manifests[0].snippet_count, 0);
        assert_eq!(manifests[0].missing_slots.len(), 576);
        assert!(!manifests[0].complete);
    }
}
