use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use url::Url;

use super::{CollectorError, Result};

/// One entry of the station catalog.
///
/// On the wire this is `{"id", "name", "genres": [...], "url"}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StationRecord {
    #[serde(rename = "id")]
    pub station_id: String,
    pub name: String,
    #[serde(default)]
    pub genres: Vec<String>,
    #[serde(rename = "url")]
    pub bearer_url: String,
}

impl StationRecord {
    fn validate(&self) -> Result<()> {
        let id = &self.station_id;
        // ids double as directory names in the snippet store
        if id.is_empty()
            || id.starts_with('.')
            || id.contains(['/', '\\', '\0'])
            || id.chars().any(char::is_control)
        {
            return Err(CollectorError::MalformedCatalog(format!(
                "invalid station id {id:?}"
            )));
        }
        let url = Url::parse(&self.bearer_url).map_err(|e| {
            CollectorError::MalformedCatalog(format!("station {id}: bad url {:?}: {e}", self.bearer_url))
        })?;
        if !matches!(url.scheme(), "http" | "https") || url.host_str().is_none() {
            return Err(CollectorError::MalformedCatalog(format!(
                "station {id}: url {:?} is not an absolute http(s) url",
                self.bearer_url
            )));
        }
        Ok(())
    }

    /// First genre label, used for plot coloring.
    pub fn primary_genre(&self) -> Option<&str> {
        self.genres.first().map(String::as_str)
    }
}

/// Parses a catalog from JSON text. Rejects duplicate ids.
pub fn parse_catalog(json: &str) -> Result<Vec<StationRecord>> {
    let records: Vec<StationRecord> =
        serde_json::from_str(json).map_err(|e| CollectorError::MalformedCatalog(e.to_string()))?;
    let mut seen = HashSet::with_capacity(records.len());
    for record in &records {
        record.validate()?;
        if !seen.insert(record.station_id.as_str()) {
            return Err(CollectorError::CatalogConflict(record.station_id.clone()));
        }
    }
    Ok(records)
}

pub fn load_catalog(path: impl AsRef<Path>) -> Result<Vec<StationRecord>> {
    let text = fs::read_to_string(path.as_ref())?;
    parse_catalog(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(id: &str) -> String {
        format!(r#"{{"id":"{id}","name":"Station {id}","genres":["Classical Music"],"url":"http://radio.example/{id}"}}"#)
    }

    #[test]
    fn empty_array_is_empty_catalog() {
        assert!(parse_catalog("[]").unwrap().is_empty());
    }

    #[test]
    fn large_catalog_keeps_every_entry() {
        let body: Vec<String> = (0..461).map(|i| entry(&format!("s{i}"))).collect();
        let records = parse_catalog(&format!("[{}]", body.join(","))).unwrap();
        assert_eq!(records.len(), 461);
        assert_eq!(records[3].station_id, "s3");
        assert_eq!(records[3].genres, vec!["Classical Music".to_string()]);
    }

    #[test]
    fn duplicate_ids_conflict() {
        let json = format!("[{},{}]", entry("br-klassik"), entry("br-klassik"));
        match parse_catalog(&json) {
            Err(CollectorError::CatalogConflict(id)) => assert_eq!(id, "br-klassik"),
            other => panic!("expected conflict, got {other:?}"),
        }
    }

    #[test]
    fn genres_default_to_empty() {
        let records =
            parse_catalog(r#"[{"id":"noods","name":"Noods Radio","url":"https://noods.example/live"}]"#)
                .unwrap();
        assert!(records[0].genres.is_empty());
        assert_eq!(records[0].primary_genre(), None);
    }

    #[test]
    fn rejects_bad_urls_and_ids() {
        for json in [
            r#"[{"id":"a","name":"A","url":"ftp://x/y"}]"#,
            r#"[{"id":"a","name":"A","url":"not a url"}]"#,
            r#"[{"id":"","name":"A","url":"http://x/y"}]"#,
            r#"[{"id":"../etc","name":"A","url":"http://x/y"}]"#,
            r#"{"id":"a"}"#,
        ] {
            assert!(
                matches!(parse_catalog(json), Err(CollectorError::MalformedCatalog(_))),
                "{json}"
            );
        }
    }

    #[test]
    fn load_from_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("catalog.json");
        fs::write(&path, format!("[{}]", entry("ndr-kultur"))).unwrap();
        assert_eq!(load_catalog(&path).unwrap()[0].name, "Station ndr-kultur");
        assert!(load_catalog(dir.path().join("missing.json")).is_err());
    }
}
