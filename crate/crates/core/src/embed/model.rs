//! Model and embedding files.
//!
//! Model file layout:
//!
//! ```text
//! "SPAE" version:u16 header_len:u32 header:json
//! tensor_count:u32 { name_len:u16 name rows:u32 cols:u32 values:f32[rows*cols] }*
//! ```
//!
//! The JSON header carries the config, input shape, initial and per-epoch
//! RMSE. Embeddings use the spectrogram archive format with one `1 x dim`
//! record per snippet.

use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use chrono::{DateTime, Utc};
use ndarray::Array2;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use super::network::Autoencoder;
use super::{AutoencoderConfig, EmbedError, Result};
use crate::dsp::{read_archive, write_archive, ArchiveKind, ArchiveRecord, SpectrogramParams};

const MAGIC: &[u8; 4] = b"SPAE";
const VERSION: u16 = 1;

/// A trained autoencoder with its training record.
#[derive(Debug, Clone)]
pub struct EncoderModel {
    pub net: Autoencoder<f32>,
    /// RMSE per epoch.
    pub history: Vec<f64>,
    /// RMSE of the freshly initialized network, before any update.
    pub initial_rmse: f64,
}

impl EncoderModel {
    pub fn config(&self) -> &AutoencoderConfig {
        self.net.config()
    }

    pub fn embedding_dim(&self) -> usize {
        self.net.config().embedding_dim()
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.history.last().copied()
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: AutoencoderConfig,
    frames: usize,
    features: usize,
    initial_rmse: f64,
    history: Vec<f64>,
}

pub fn write_model(path: impl AsRef<Path>, model: &EncoderModel) -> Result<()> {
    let path = path.as_ref();
    let (frames, features) = model.net.input_shape();
    let header = serde_json::to_vec(&Header {
        config: model.config().clone(),
        frames,
        features,
        initial_rmse: model.initial_rmse,
        history: model.history.clone(),
    })
    .map_err(|e| EmbedError::Format(e.to_string()))?;
    let mut buf = Vec::new();
    buf.write_all(MAGIC)?;
    buf.write_u16::<LE>(VERSION)?;
    buf.write_u32::<LE>(header.len() as u32)?;
    buf.write_all(&header)?;
    buf.write_u32::<LE>(model.net.params().len() as u32)?;
    for (name, t) in model.net.names().iter().zip(model.net.params()) {
        buf.write_u16::<LE>(name.len() as u16)?;
        buf.write_all(name.as_bytes())?;
        buf.write_u32::<LE>(t.nrows() as u32)?;
        buf.write_u32::<LE>(t.ncols() as u32)?;
        for &v in t.iter() {
            buf.write_f32::<LE>(v)?;
        }
    }
    crate::collector::write_atomic(path, &buf)?;
    Ok(())
}

pub fn read_model(path: impl AsRef<Path>) -> Result<EncoderModel> {
    let mut r = BufReader::new(File::open(path)?);
    let fmt = |m: &str| EmbedError::Format(m.to_string());
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(fmt("bad magic"));
    }
    if r.read_u16::<LE>()? != VERSION {
        return Err(fmt("unsupported version"));
    }
    let len = r.read_u32::<LE>()? as usize;
    let mut header = vec![0u8; len];
    r.read_exact(&mut header)?;
    let header: Header = serde_json::from_slice(&header).map_err(|e| EmbedError::Format(e.to_string()))?;

    let count = r.read_u32::<LE>()? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let n = r.read_u16::<LE>()? as usize;
        let mut name = vec![0u8; n];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| fmt("tensor name is not utf-8"))?;
        let rows = r.read_u32::<LE>()? as usize;
        let cols = r.read_u32::<LE>()? as usize;
        let mut data = vec![0f32; rows * cols];
        r.read_f32_into::<LE>(&mut data)?;
        tensors.push((name, Array2::from_shape_vec((rows, cols), data).expect("sized")));
    }
    // the layout comes from the config; initial values are overwritten
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let mut net = Autoencoder::new(header.config, header.frames, header.features, &mut rng)?;
    net.set_params(tensors)?;
    if !net.all_finite() {
        return Err(fmt("non-finite parameter"));
    }
    Ok(EncoderModel { net, history: header.history, initial_rmse: header.initial_rmse })
}

/// Encoder output for one snippet.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub station_id: String,
    pub timestamp: DateTime<Utc>,
    pub vector: Vec<f32>,
}

pub fn write_embeddings(path: impl AsRef<Path>, embeddings: &[Embedding], params: &SpectrogramParams) -> Result<()> {
    let records: Vec<ArchiveRecord> = embeddings
        .iter()
        .map(|e| ArchiveRecord {
            station_id: e.station_id.clone(),
            timestamp: e.timestamp,
            params: *params,
            values: Array2::from_shape_vec((1, e.vector.len()), e.vector.clone()).expect("row vector"),
        })
        .collect();
    write_archive(path, ArchiveKind::Embedding, &records)?;
    Ok(())
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<Vec<Embedding>> {
    let (kind, records) = read_archive(path)?;
    if kind != ArchiveKind::Embedding {
        return Err(EmbedError::Format("archive does not hold embeddings".into()));
    }
    Ok(records
        .into_iter()
        .map(|r| Embedding { station_id: r.station_id, timestamp: r.timestamp, vector: r.values.into_raw_vec_and_offset().0 })
        .collect())
}
