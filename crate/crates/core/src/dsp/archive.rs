//! Binary archive of per-snippet matrices (spectrograms or embeddings).
//!
//! ```text
//! file   := "SPRC" version:u16 kind:u8 record*
//! record := id_len:u16 id:utf8 timestamp:i64 rows:u32 cols:u32
//!           n_mels:u32 window_s:f64 hop_s:f64 clip_db:f64 target_rate:u32 snippet_s:f64
//!           values:f32[rows * cols]          (row-major)
//! ```
//!
//! All integers and floats are little-endian; `timestamp` is Unix seconds.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use chrono::{DateTime, Utc};
use ndarray::Array2;

use super::spectrogram::SpectrogramParams;
use super::{DspError, Result};

const MAGIC: &[u8; 4] = b"SPRC";
const VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArchiveKind {
    Spectrogram = 1,
    Embedding = 2,
}

impl ArchiveKind {
    fn from_byte(b: u8) -> Result<Self> {
        match b {
            1 => Ok(ArchiveKind::Spectrogram),
            2 => Ok(ArchiveKind::Embedding),
            other => Err(DspError::Archive(format!("unknown archive kind {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArchiveRecord {
    pub station_id: String,
    pub timestamp: DateTime<Utc>,
    /// Spectrogram parameters of the source snippet.
    pub params: SpectrogramParams,
    pub values: Array2<f32>,
}

pub struct ArchiveWriter<W: Write> {
    inner: W,
}

impl<W: Write> ArchiveWriter<W> {
    pub fn new(mut inner: W, kind: ArchiveKind) -> Result<Self> {
        inner.write_all(MAGIC)?;
        inner.write_u16::<LE>(VERSION)?;
        inner.write_u8(kind as u8)?;
        Ok(ArchiveWriter { inner })
    }

    pub fn write(&mut self, record: &ArchiveRecord) -> Result<()> {
        let id = record.station_id.as_bytes();
        let id_len = u16::try_from(id.len()).map_err(|_| DspError::Archive("station id too long".into()))?;
        let w = &mut self.inner;
        w.write_u16::<LE>(id_len)?;
        w.write_all(id)?;
        w.write_i64::<LE>(record.timestamp.timestamp())?;
        w.write_u32::<LE>(record.values.nrows() as u32)?;
        w.write_u32::<LE>(record.values.ncols() as u32)?;
        let p = &record.params;
        w.write_u32::<LE>(p.n_mels as u32)?;
        w.write_f64::<LE>(p.window_s)?;
        w.write_f64::<LE>(p.hop_s)?;
        w.write_f64::<LE>(p.clip_db)?;
        w.write_u32::<LE>(p.target_rate)?;
        w.write_f64::<LE>(p.snippet_s)?;
        for &v in record.values.iter() {
            w.write_f32::<LE>(v)?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        self.inner.flush()?;
        Ok(self.inner)
    }
}

pub struct ArchiveReader<R: Read> {
    inner: R,
    kind: ArchiveKind,
}

impl<R: Read> ArchiveReader<R> {
    pub fn new(mut inner: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        inner.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(DspError::Archive("bad magic".into()));
        }
        let version = inner.read_u16::<LE>()?;
        if version != VERSION {
            return Err(DspError::Archive(format!("unsupported version {version}")));
        }
        let kind = ArchiveKind::from_byte(inner.read_u8()?)?;
        Ok(ArchiveReader { inner, kind })
    }

    pub fn kind(&self) -> ArchiveKind {
        self.kind
    }

    fn read_record(&mut self) -> Result<Option<ArchiveRecord>> {
        let r = &mut self.inner;
        let id_len = match r.read_u16::<LE>() {
            Ok(n) => n as usize,
            Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
            Err(e) => return Err(e.into()),
        };
        let truncated = |e: io::Error| match e.kind() {
            io::ErrorKind::UnexpectedEof => DspError::Archive("truncated record".into()),
            _ => DspError::Io(e),
        };
        let mut id = vec![0u8; id_len];
        r.read_exact(&mut id).map_err(truncated)?;
        let station_id = String::from_utf8(id).map_err(|_| DspError::Archive("station id is not utf-8".into()))?;
        let ts = r.read_i64::<LE>().map_err(truncated)?;
        let timestamp = DateTime::from_timestamp(ts, 0).ok_or_else(|| DspError::Archive(format!("bad timestamp {ts}")))?;
        let rows = r.read_u32::<LE>().map_err(truncated)? as usize;
        let cols = r.read_u32::<LE>().map_err(truncated)? as usize;
        let params = SpectrogramParams {
            n_mels: r.read_u32::<LE>().map_err(truncated)? as usize,
            window_s: r.read_f64::<LE>().map_err(truncated)?,
            hop_s: r.read_f64::<LE>().map_err(truncated)?,
            clip_db: r.read_f64::<LE>().map_err(truncated)?,
            target_rate: r.read_u32::<LE>().map_err(truncated)?,
            snippet_s: r.read_f64::<LE>().map_err(truncated)?,
        };
        let len = rows.checked_mul(cols).filter(|&n| n <= 1 << 28).ok_or_else(|| DspError::Archive("record too large".into()))?;
        let mut data = vec![0f32; len];
        r.read_f32_into::<LE>(&mut data).map_err(truncated)?;
        let values = Array2::from_shape_vec((rows, cols), data).expect("length checked");
        Ok(Some(ArchiveRecord { station_id, timestamp, params, values }))
    }
}

impl<R: Read> Iterator for ArchiveReader<R> {
    type Item = Result<ArchiveRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        self.read_record().transpose()
    }
}

pub fn read_archive(path: impl AsRef<Path>) -> Result<(ArchiveKind, Vec<ArchiveRecord>)> {
    let reader = ArchiveReader::new(BufReader::new(File::open(path)?))?;
    let kind = reader.kind();
    Ok((kind, reader.collect::<Result<Vec<_>>>()?))
}

/// Writes a complete archive to `path` via a temporary file and rename.
pub fn write_archive<'a>(
    path: impl AsRef<Path>,
    kind: ArchiveKind,
    records: impl IntoIterator<Item = &'a ArchiveRecord>,
) -> Result<()> {
    let path = path.as_ref();
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let result = (|| {
        let mut writer = ArchiveWriter::new(BufWriter::new(File::create(&tmp)?), kind)?;
        for record in records {
            writer.write(record)?;
        }
        writer.finish()?.into_inner().map_err(|e| e.into_error())?.sync_all()?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    })();
    if result.is_err() {
        let _ = std::fs::remove_file(&tmp);
    }
    result
}
