//! On-disk snippet store.
//!
//! Layout: `<root>/<station_id>/<YYYY-MM-DD>/<HHMM>.wav` plus one
//! `manifest.json` per station-day. Every file is written to a temporary
//! sibling and renamed into place, so readers never observe partial files.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use chrono::{DateTime, FixedOffset, NaiveDate, Utc};
use serde::{Deserialize, Serialize};

use super::schedule::{build_schedule, SLOTS_PER_DAY};
use super::{CollectorError, Result};

const MANIFEST_FILE: &str = "manifest.json";

/// A recorded 5 second mono snippet.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioSnippet {
    pub station_id: String,
    pub capture_time: DateTime<Utc>,
    pub sample_rate: u32,
    pub samples: Vec<i16>,
}

impl AudioSnippet {
    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Per station-day bookkeeping. `snippet_count + missing_slots.len()` is
/// always the number of slots in a day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordingManifest {
    pub station_id: String,
    pub day: NaiveDate,
    pub utc_offset_secs: i32,
    pub snippet_count: usize,
    pub complete: bool,
    pub missing_slots: Vec<DateTime<FixedOffset>>,
}

impl RecordingManifest {
    /// A manifest with every slot of the day still missing.
    pub fn new(station_id: impl Into<String>, day: NaiveDate, tz: FixedOffset) -> Self {
        RecordingManifest {
            station_id: station_id.into(),
            day,
            utc_offset_secs: tz.local_minus_utc(),
            snippet_count: 0,
            complete: false,
            missing_slots: build_schedule(day, tz),
        }
    }

    pub fn tz(&self) -> FixedOffset {
        FixedOffset::east_opt(self.utc_offset_secs).expect("offset validated on load")
    }

    /// Marks `slot` as recorded. Returns false if it was not pending.
    pub fn mark_recorded(&mut self, slot: DateTime<FixedOffset>) -> bool {
        let Some(idx) = self.missing_slots.iter().position(|s| *s == slot) else {
            return false;
        };
        self.missing_slots.remove(idx);
        self.snippet_count += 1;
        self.complete = self.snippet_count == SLOTS_PER_DAY && self.missing_slots.is_empty();
        true
    }

    /// Slots that have a snippet on disk, in schedule order.
    pub fn recorded_slots(&self) -> Vec<DateTime<FixedOffset>> {
        build_schedule(self.day, self.tz())
            .into_iter()
            .filter(|s| !self.missing_slots.contains(s))
            .collect()
    }

    fn check(&self) -> Result<()> {
        if FixedOffset::east_opt(self.utc_offset_secs).is_none() {
            return Err(CollectorError::Manifest(format!("bad utc offset {}", self.utc_offset_secs)));
        }
        if self.snippet_count + self.missing_slots.len() != SLOTS_PER_DAY {
            return Err(CollectorError::Manifest(format!(
                "{} {}: {} snippets + {} missing != {SLOTS_PER_DAY}",
                self.station_id,
                self.day,
                self.snippet_count,
                self.missing_slots.len()
            )));
        }
        if self.complete != (self.snippet_count == SLOTS_PER_DAY && self.missing_slots.is_empty()) {
            return Err(CollectorError::Manifest(format!("{} {}: inconsistent complete flag", self.station_id, self.day)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SnippetStore {
    root: PathBuf,
}

impl SnippetStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        SnippetStore { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn day_dir(&self, station_id: &str, day: NaiveDate) -> PathBuf {
        self.root.join(station_id).join(day.format("%Y-%m-%d").to_string())
    }

    pub fn snippet_path(&self, station_id: &str, slot: DateTime<FixedOffset>) -> PathBuf {
        self.day_dir(station_id, slot.date_naive()).join(format!("{}.wav", slot.format("%H%M")))
    }

    pub fn manifest_path(&self, station_id: &str, day: NaiveDate) -> PathBuf {
        self.day_dir(station_id, day).join(MANIFEST_FILE)
    }

    /// Persists a snippet as 16-bit mono WAV at its slot path.
    pub fn write_snippet(&self, snippet: &AudioSnippet, slot: DateTime<FixedOffset>) -> Result<PathBuf> {
        let path = self.snippet_path(&snippet.station_id, slot);
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: snippet.sample_rate,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut bytes = io::Cursor::new(Vec::with_capacity(44 + snippet.samples.len() * 2));
        {
            let mut writer = hound::WavWriter::new(&mut bytes, spec)
                .map_err(|e| CollectorError::InvalidAudio(e.to_string()))?;
            let mut i16_writer = writer.get_i16_writer(snippet.samples.len() as u32);
            for &s in &snippet.samples {
                i16_writer.write_sample(s);
            }
            i16_writer.flush().map_err(|e| CollectorError::InvalidAudio(e.to_string()))?;
            writer.finalize().map_err(|e| CollectorError::InvalidAudio(e.to_string()))?;
        }
        write_atomic(&path, &bytes.into_inner())?;
        Ok(path)
    }

    pub fn read_snippet(&self, station_id: &str, slot: DateTime<FixedOffset>) -> Result<AudioSnippet> {
        let path = self.snippet_path(station_id, slot);
        let mut reader = hound::WavReader::open(&path).map_err(|e| match e {
            hound::Error::IoError(io) => CollectorError::Io(io),
            other => CollectorError::InvalidAudio(format!("{}: {other}", path.display())),
        })?;
        let spec = reader.spec();
        if spec.channels != 1 || spec.bits_per_sample != 16 {
            return Err(CollectorError::InvalidAudio(format!("{}: expected 16-bit mono", path.display())));
        }
        let samples = reader
            .samples::<i16>()
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| CollectorError::InvalidAudio(format!("{}: {e}", path.display())))?;
        Ok(AudioSnippet {
            station_id: station_id.to_string(),
            capture_time: slot.with_timezone(&Utc),
            sample_rate: spec.sample_rate,
            samples,
        })
    }

    pub fn write_manifest(&self, manifest: &RecordingManifest) -> Result<()> {
        let json = serde_json::to_vec_pretty(manifest).map_err(|e| CollectorError::Manifest(e.to_string()))?;
        Ok(write_atomic(&self.manifest_path(&manifest.station_id, manifest.day), &json)?)
    }

    pub fn read_manifest(&self, station_id: &str, day: NaiveDate) -> Result<RecordingManifest> {
        read_manifest_file(&self.manifest_path(station_id, day))
    }

    /// All manifests in the store, sorted by station id then day.
    pub fn manifests(&self) -> Result<Vec<RecordingManifest>> {
        let mut out = Vec::new();
        if !self.root.exists() {
            return Ok(out);
        }
        for station in sorted_dirs(&self.root)? {
            for day in sorted_dirs(&station)? {
                let path = day.join(MANIFEST_FILE);
                if path.is_file() {
                    out.push(read_manifest_file(&path)?);
                }
            }
        }
        out.sort_by(|a, b| (&a.station_id, a.day).cmp(&(&b.station_id, b.day)));
        Ok(out)
    }
}

fn read_manifest_file(path: &Path) -> Result<RecordingManifest> {
    let bytes = fs::read(path)?;
    let manifest: RecordingManifest = serde_json::from_slice(&bytes)
        .map_err(|e| CollectorError::Manifest(format!("{}: {e}", path.display())))?;
    manifest.check()?;
    Ok(manifest)
}

fn sorted_dirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs = Vec::new();
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        if entry.file_type()?.is_dir() && !entry.file_name().to_string_lossy().starts_with('.') {
            dirs.push(entry.path());
        }
    }
    dirs.sort();
    Ok(dirs)
}

/// Writes `bytes` to a hidden sibling of `path`, syncs, then renames over
/// `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    static COUNTER: AtomicU64 = AtomicU64::new(0);
    let dir = path.parent().ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "path has no parent"))?;
    fs::create_dir_all(dir)?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(
        ".{name}.{}.{}.tmp",
        std::process::id(),
        COUNTER.fetch_add(1, Ordering::Relaxed)
    ));
    let result = (|| {
        let mut file = fs::File::create(&tmp)?;
        file.write_all(bytes)?;
        file.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result
}
