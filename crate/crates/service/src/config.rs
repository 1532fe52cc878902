//! Pipeline configuration: a flat `section.key = value` file with
//! `STATIONPRINT_SECTION_KEY` environment overrides.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};

use chrono::{FixedOffset, NaiveDate};
use serde::Serialize;
use thiserror::Error;

use stationprint_core::dsp::SpectrogramParams;
use stationprint_core::embed::Profile;
use stationprint_core::fingerprint::Partition;

/// Bounds for every configurable k-range.
pub const K_BOUNDS: RangeInclusive<usize> = 2..=64;

const ENV_PREFIX: &str = "STATIONPRINT_";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },

    #[error("unknown key {0:?}")]
    UnknownKey(String),

    #[error("{key}: {msg}")]
    Invalid { key: String, msg: String },

    #[error("{0}: path does not exist")]
    MissingPath(PathBuf),

    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

pub type Result<T, E = ConfigError> = std::result::Result<T, E>;

/// Where the catalog comes from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(untagged)]
pub enum CatalogSource {
    File(PathBuf),
    /// `GET` of a catalog JSON document, e.g. a mock server's `/services`.
    Url(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineConfig {
    pub catalog: CatalogSource,
    /// Root of every artifact the pipeline writes.
    pub work_dir: PathBuf,
    /// Snippet store root; defaults to `<work_dir>/snippets`.
    pub snippet_dir: PathBuf,
    #[serde(serialize_with = "ser_offset")]
    pub timezone: FixedOffset,
    pub day: NaiveDate,
    /// Local hours to record.
    pub hours: (u32, u32),
    pub simulated_clock: bool,
    pub stream_timeout_s: f64,
    pub spectrogram: SpectrogramParams,
    pub profile: Profile,
    pub embed_seed: u64,
    /// Overrides of the profile, mostly for quick test runs.
    pub epochs: Option<usize>,
    pub units: Option<usize>,
    pub max_samples: Option<usize>,
    pub cluster_k: RangeInclusive<usize>,
    pub min_snippets: usize,
    pub fingerprint_seed: u64,
    pub scree: RangeInclusive<usize>,
    pub archetypes: Option<usize>,
    pub radius: f64,
    pub analysis_seed: u64,
    pub partitions: Vec<Partition>,
    pub bind: SocketAddr,
    pub admin_token: Option<String>,
}

fn ser_offset<S: serde::Serializer>(tz: &FixedOffset, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(&tz.to_string())
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            catalog: CatalogSource::File(PathBuf::from("catalog.json")),
            work_dir: PathBuf::from("work"),
            snippet_dir: PathBuf::from("work/snippets"),
            timezone: FixedOffset::east_opt(3600).expect("valid offset"),
            day: NaiveDate::from_ymd_opt(2019, 11, 4).expect("valid date"),
            hours: (0, 24),
            simulated_clock: false,
            stream_timeout_s: 10.0,
            spectrogram: SpectrogramParams::default(),
            profile: Profile::Desk,
            embed_seed: 0,
            epochs: None,
            units: None,
            max_samples: None,
            cluster_k: 9..=16,
            min_snippets: 576,
            fingerprint_seed: 0,
            scree: 2..=10,
            archetypes: None,
            radius: 150.0,
            analysis_seed: 0,
            partitions: Partition::TIMES_OF_DAY.to_vec(),
            bind: "127.0.0.1:8080".parse().expect("valid address"),
            admin_token: None,
        }
    }
}

/// Every accepted key, in file order.
pub const KEYS: &[&str] = &[
    "paths.catalog",
    "paths.work",
    "paths.snippets",
    "schedule.timezone",
    "schedule.day",
    "schedule.hours",
    "crawl.clock",
    "crawl.timeout_s",
    "spectrogram.n_mels",
    "spectrogram.window_s",
    "spectrogram.hop_s",
    "spectrogram.clip_db",
    "spectrogram.target_rate",
    "spectrogram.snippet_s",
    "embed.profile",
    "embed.seed",
    "embed.epochs",
    "embed.units",
    "embed.max_samples",
    "fingerprint.k_range",
    "fingerprint.min_snippets",
    "fingerprint.seed",
    "analyze.scree",
    "analyze.archetypes",
    "analyze.radius",
    "analyze.seed",
    "analyze.partitions",
    "service.bind",
    "service.admin_token",
];

/// Environment variable overriding `key`: `service.bind` becomes
/// `STATIONPRINT_SERVICE_BIND`.
pub fn env_name(key: &str) -> String {
    format!("{ENV_PREFIX}{}", key.replace('.', "_").to_ascii_uppercase())
}

/// Parses `key = value` lines. Blank lines and `#` comments are skipped;
/// later assignments win.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(ConfigError::Syntax { line: i + 1, msg: format!("expected `key = value`, got {line:?}") });
        };
        let key = key.trim();
        if !key.contains('.') {
            return Err(ConfigError::Syntax { line: i + 1, msg: format!("key {key:?} lacks a section prefix") });
        }
        if !KEYS.contains(&key) {
            return Err(ConfigError::UnknownKey(key.to_string()));
        }
        out.insert(key.to_string(), value.trim().to_string());
    }
    Ok(out)
}

fn parse_range(key: &str, v: &str) -> Result<RangeInclusive<usize>> {
    let bad = || ConfigError::Invalid { key: key.into(), msg: format!("expected `a-b` or `a:b`, got {v:?}") };
    let (a, b) = v.split_once(['-', ':']).ok_or_else(bad)?;
    let a: usize = a.trim().parse().map_err(|_| bad())?;
    let b: usize = b.trim().parse().map_err(|_| bad())?;
    if a > b || !K_BOUNDS.contains(&a) || !K_BOUNDS.contains(&b) {
        return Err(ConfigError::Invalid {
            key: key.into(),
            msg: format!("range {a}..={b} must be non-empty and within {}..={}", K_BOUNDS.start(), K_BOUNDS.end()),
        });
    }
    Ok(a..=b)
}

fn parse_offset(key: &str, v: &str) -> Result<FixedOffset> {
    if v.eq_ignore_ascii_case("utc") || v == "Z" {
        return Ok(FixedOffset::east_opt(0).expect("zero offset"));
    }
    v.parse::<FixedOffset>()
        .map_err(|e| ConfigError::Invalid { key: key.into(), msg: format!("expected an offset like +01:00: {e}") })
}

fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.parse().map_err(|e: T::Err| ConfigError::Invalid { key: key.into(), msg: e.to_string() })
}

impl PipelineConfig {
    /// Reads `path` (if given), applies environment overrides and checks
    /// the result. Relative paths resolve against the file's directory.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let (mut pairs, base) = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Io { path: p.into(), source })?;
                (parse_pairs(&text)?, p.parent().map(Path::to_path_buf).unwrap_or_default())
            }
            None => (BTreeMap::new(), PathBuf::new()),
        };
        for key in KEYS {
            if let Ok(v) = std::env::var(env_name(key)) {
                pairs.insert(key.to_string(), v);
            }
        }
        let config = Self::from_pairs(&pairs, &base)?;
        config.check_paths()?;
        Ok(config)
    }

    /// Builds a config from parsed pairs without touching the filesystem.
    pub fn from_pairs(pairs: &BTreeMap<String, String>, base: &Path) -> Result<Self> {
        let mut c = PipelineConfig::default();
        let resolve = |v: &str| {
            let p = PathBuf::from(v);
            if p.is_absolute() {
                p
            } else {
                base.join(p)
            }
        };
        let mut snippets = None;
        for (key, v) in pairs {
            let v = v.as_str();
            let k = key.as_str();
            match k {
                "paths.catalog" => {
                    c.catalog = if v.starts_with("http://") || v.starts_with("https://") {
                        CatalogSource::Url(v.to_string())
                    } else {
                        CatalogSource::File(resolve(v))
                    }
                }
                "paths.work" => c.work_dir = resolve(v),
                "paths.snippets" => snippets = Some(resolve(v)),
                "schedule.timezone" => c.timezone = parse_offset(k, v)?,
                "schedule.day" => c.day = parse(k, v)?,
                "schedule.hours" => {
                    let bad = || ConfigError::Invalid { key: k.into(), msg: format!("expected hours `a-b` within 0-24, got {v:?}") };
                    let (a, b) = v.split_once('-').ok_or_else(bad)?;
                    let (a, b): (u32, u32) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
                    if a >= b || b > 24 {
                        return Err(bad());
                    }
                    c.hours = (a, b);
                }
                "crawl.clock" => {
                    c.simulated_clock = match v {
                        "simulated" => true,
                        "real" => false,
                        _ => return Err(ConfigError::Invalid { key: k.into(), msg: "expected real or simulated".into() }),
                    }
                }
                "crawl.timeout_s" => c.stream_timeout_s = parse(k, v)?,
                "spectrogram.n_mels" => c.spectrogram.n_mels = parse(k, v)?,
                "spectrogram.window_s" => c.spectrogram.window_s = parse(k, v)?,
                "spectrogram.hop_s" => c.spectrogram.hop_s = parse(k, v)?,
                "spectrogram.clip_db" => c.spectrogram.clip_db = parse(k, v)?,
                "spectrogram.target_rate" => c.spectrogram.target_rate = parse(k, v)?,
                "spectrogram.snippet_s" => c.spectrogram.snippet_s = parse(k, v)?,
                "embed.profile" => c.profile = parse(k, v)?,
                "embed.seed" => c.embed_seed = parse(k, v)?,
                "embed.epochs" => c.epochs = Some(parse(k, v)?),
                "embed.units" => c.units = Some(parse(k, v)?),
                "embed.max_samples" => c.max_samples = Some(parse(k, v)?),
                "fingerprint.k_range" => c.cluster_k = parse_range(k, v)?,
                "fingerprint.min_snippets" => c.min_snippets = parse(k, v)?,
                "fingerprint.seed" => c.fingerprint_seed = parse(k, v)?,
                "analyze.scree" => c.scree = parse_range(k, v)?,
                "analyze.archetypes" => {
                    let n: usize = parse(k, v)?;
                    if !K_BOUNDS.contains(&n) {
                        return Err(ConfigError::Invalid { key: k.into(), msg: format!("{n} outside 2..=64") });
                    }
                    c.archetypes = Some(n);
                }
                "analyze.radius" => {
                    c.radius = parse(k, v)?;
                    if !(c.radius >= 0.0) {
                        return Err(ConfigError::Invalid { key: k.into(), msg: "radius must be non-negative".into() });
                    }
                }
                "analyze.seed" => c.analysis_seed = parse(k, v)?,
                "analyze.partitions" => {
                    c.partitions = v
                        .split(',')
                        .map(|p| parse::<Partition>(k, p.trim()))
                        .collect::<Result<Vec<_>>>()?;
                    if c.partitions.contains(&Partition::WholeDay) {
                        return Err(ConfigError::Invalid { key: k.into(), msg: "list time-of-day partitions only".into() });
                    }
                }
                "service.bind" => c.bind = parse(k, v)?,
                "service.admin_token" => c.admin_token = Some(v.to_string()).filter(|t| !t.is_empty()),
                other => return Err(ConfigError::UnknownKey(other.to_string())),
            }
        }
        c.snippet_dir = snippets.unwrap_or_else(|| c.work_dir.join("snippets"));
        c.spectrogram
            .validate()
            .map_err(|e| ConfigError::Invalid { key: "spectrogram".into(), msg: e.to_string() })?;
        if !(c.stream_timeout_s > 0.0) {
            return Err(ConfigError::Invalid { key: "crawl.timeout_s".into(), msg: "must be positive".into() });
        }
        Ok(c)
    }

    /// The catalog file must exist and the work directory must be creatable
    /// under an existing parent.
    pub fn check_paths(&self) -> Result<()> {
        if let CatalogSource::File(p) = &self.catalog {
            if !p.is_file() {
                return Err(ConfigError::MissingPath(p.clone()));
            }
        }
        for dir in [&self.work_dir, &self.snippet_dir] {
            let parent = dir.ancestors().skip(1).find(|a| !a.as_os_str().is_empty());
            // the snippet store may live inside a work directory still to be made
            let creatable = |p: &Path| p.exists() || (dir == &self.snippet_dir && p == self.work_dir);
            if !dir.exists() && parent.is_some_and(|p| !creatable(p)) {
                return Err(ConfigError::MissingPath(parent.expect("checked").to_path_buf()));
            }
        }
        Ok(())
    }

    /// Renders the config back to the file format.
    pub fn to_text(&self) -> String {
        let mut lines = vec![
            format!(
                "paths.catalog = {}",
                match &self.catalog {
                    CatalogSource::File(p) => p.display().to_string(),
                    CatalogSource::Url(u) => u.clone(),
                }
            ),
            format!("paths.work = {}", self.work_dir.display()),
            format!("paths.snippets = {}", self.snippet_dir.display()),
            format!("schedule.timezone = {}", self.timezone),
            format!("schedule.day = {}", self.day),
            format!("schedule.hours = {}-{}", self.hours.0, self.hours.1),
            format!("crawl.clock = {}", if self.simulated_clock { "simulated" } else { "real" }),
            format!("crawl.timeout_s = {}", self.stream_timeout_s),
            format!("spectrogram.n_mels = {}", self.spectrogram.n_mels),
            format!("spectrogram.window_s = {}", self.spectrogram.window_s),
            format!("spectrogram.hop_s = {}", self.spectrogram.hop_s),
            format!("spectrogram.clip_db = {}", self.spectrogram.clip_db),
            format!("spectrogram.target_rate = {}", self.spectrogram.target_rate),
            format!("spectrogram.snippet_s = {}", self.spectrogram.snippet_s),
            format!("embed.profile = {}", match self.profile {
                Profile::Paper => "paper",
                Profile::Desk => "desk",
            }),
            format!("embed.seed = {}", self.embed_seed),
        ];
        for (key, v) in [("embed.epochs", self.epochs), ("embed.units", self.units), ("embed.max_samples", self.max_samples)] {
            if let Some(v) = v {
                lines.push(format!("{key} = {v}"));
            }
        }
        lines.extend([
            format!("fingerprint.k_range = {}-{}", self.cluster_k.start(), self.cluster_k.end()),
            format!("fingerprint.min_snippets = {}", self.min_snippets),
            format!("fingerprint.seed = {}", self.fingerprint_seed),
            format!("analyze.scree = {}-{}", self.scree.start(), self.scree.end()),
        ]);
        if let Some(k) = self.archetypes {
            lines.push(format!("analyze.archetypes = {k}"));
        }
        lines.extend([
            format!("analyze.radius = {}", self.radius),
            format!("analyze.seed = {}", self.analysis_seed),
            format!(
                "analyze.partitions = {}",
                self.partitions.iter().map(|p| p.as_str()).collect::<Vec<_>>().join(",")
            ),
            format!("service.bind = {}", self.bind),
        ]);
        if let Some(t) = &self.admin_token {
            lines.push(format!("service.admin_token = {t}"));
        }
        lines.join("\n") + "\n"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs(text: &str) -> BTreeMap<String, String> {
        parse_pairs(text).unwrap()
    }

    #[test]
    fn parses_sections_comments_and_ranges() {
        let text = "# demo\npaths.work = out\n\nfingerprint.k_range = 9-16\nanalyze.scree = 2:8\nschedule.timezone = +01:00\ncrawl.clock = simulated\n";
        let c = PipelineConfig::from_pairs(&pairs(text), Path::new("/base")).unwrap();
        assert_eq!(c.work_dir, PathBuf::from("/base/out"));
        assert_eq!(c.snippet_dir, PathBuf::from("/base/out/snippets"));
        assert_eq!(c.cluster_k, 9..=16);
        assert_eq!(c.scree, 2..=8);
        assert_eq!(c.timezone.local_minus_utc(), 3600);
        assert!(c.simulated_clock);
    }

    #[test]
    fn k_range_bounds() {
        for bad in ["1-5", "2-65", "8-4", "x-3"] {
            let err = PipelineConfig::from_pairs(&pairs(&format!("analyze.scree = {bad}")), Path::new(""));
            assert!(matches!(err, Err(ConfigError::Invalid { .. })), "{bad}");
        }
        assert!(PipelineConfig::from_pairs(&pairs("fingerprint.k_range = 2-64"), Path::new("")).is_ok());
    }

    #[test]
    fn syntax_and_unknown_keys() {
        assert!(matches!(parse_pairs("just words"), Err(ConfigError::Syntax { line: 1, .. })));
        assert!(matches!(parse_pairs("nosection = 1"), Err(ConfigError::Syntax { .. })));
        assert!(matches!(parse_pairs("paths.nope = 1"), Err(ConfigError::UnknownKey(_))));
    }

    #[test]
    fn env_names() {
        assert_eq!(env_name("service.bind"), "STATIONPRINT_SERVICE_BIND");
        assert_eq!(env_name("fingerprint.k_range"), "STATIONPRINT_FINGERPRINT_K_RANGE");
    }

    #[test]
    fn text_round_trip() {
        let mut c = PipelineConfig::default();
        c.epochs = Some(2);
        c.archetypes = Some(3);
        c.admin_token = Some("t".into());
        c.catalog = CatalogSource::Url("http://127.0.0.1:9/services".into());
        c.work_dir = PathBuf::from("/w");
        c.snippet_dir = PathBuf::from("/w/snippets");
        let back = PipelineConfig::from_pairs(&pairs(&c.to_text()), Path::new("/")).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn missing_catalog_file() {
        let dir = tempfile::tempdir().unwrap();
        let c = PipelineConfig::from_pairs(&pairs("paths.catalog = none.json\npaths.work = w"), dir.path()).unwrap();
        assert!(matches!(c.check_paths(), Err(ConfigError::MissingPath(_))));
    }
}
