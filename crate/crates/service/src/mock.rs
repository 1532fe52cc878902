//! Test double for internet radio: a `/services` catalog plus looping ICY
//! streams built from WAV fixtures.

use std::collections::BTreeMap;
use std::io;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tokio::io::{AsyncBufReadExt, AsyncWriteExt, BufReader};
use tokio::net::{TcpListener, TcpStream};
use tokio::task::JoinHandle;

use stationprint_core::collector::{StationRecord, SNIPPET_SECONDS};
use stationprint_core::synth::SoundClass;

/// Name of the fixture index inside a fixture directory.
pub const FIXTURE_INDEX: &str = "stations.json";

const CHUNK_BYTES: usize = 4096;

/// One station as described in `stations.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationFixture {
    pub id: String,
    pub name: String,
    #[serde(default)]
    pub genres: Vec<String>,
    /// WAV file relative to the fixture directory; looped forever.
    pub wav: PathBuf,
    /// Audio bytes between metadata blocks; 0 disables metadata.
    #[serde(default = "default_metaint")]
    pub metaint: usize,
    /// Titles announced in turn, one per connection.
    #[serde(default)]
    pub titles: Vec<String>,
    /// Close the connection after this many seconds of audio.
    #[serde(default)]
    pub drop_after_s: Option<f64>,
    /// Pace the stream to this many bytes per second.
    #[serde(default)]
    pub bytes_per_sec: Option<u64>,
}

fn default_metaint() -> usize {
    16_000
}

/// A fixture with its audio loaded.
#[derive(Debug, Clone)]
pub struct MockStation {
    pub fixture: StationFixture,
    pub sample_rate: u32,
    pub samples: Arc<Vec<i16>>,
}

impl MockStation {
    fn content_type(&self) -> String {
        format!("audio/L16;rate={};channels=1", self.sample_rate)
    }
}

/// Reads `stations.json` and the referenced mono 16-bit WAV files.
pub fn load_fixtures(dir: impl AsRef<Path>) -> io::Result<Vec<MockStation>> {
    let dir = dir.as_ref();
    let index = std::fs::read_to_string(dir.join(FIXTURE_INDEX))?;
    let fixtures: Vec<StationFixture> =
        serde_json::from_str(&index).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
    fixtures
        .into_iter()
        .map(|fixture| {
            let mut reader = hound::WavReader::open(dir.join(&fixture.wav)).map_err(wav_err)?;
            let spec = reader.spec();
            if spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
                return Err(io::Error::new(io::ErrorKind::InvalidData, format!("{}: need 16-bit PCM", fixture.wav.display())));
            }
            let interleaved: Vec<i16> = reader.samples::<i16>().collect::<Result<_, _>>().map_err(wav_err)?;
            // downmix to mono
            let ch = spec.channels.max(1) as usize;
            let samples: Vec<i16> = interleaved
                .chunks(ch)
                .map(|f| (f.iter().map(|&s| s as i32).sum::<i32>() / ch as i32) as i16)
                .collect();
            if samples.is_empty() {
                return Err(io::Error::new(io::ErrorKind::InvalidData, format!("{}: no audio", fixture.wav.display())));
            }
            Ok(MockStation { fixture, sample_rate: spec.sample_rate, samples: Arc::new(samples) })
        })
        .collect()
}

fn wav_err(e: hound::Error) -> io::Error {
    match e {
        hound::Error::IoError(e) => e,
        other => io::Error::new(io::ErrorKind::InvalidData, other.to_string()),
    }
}

/// Writes `count` synthetic stations into `dir`: a 60 s loop per station
/// made of 5 s segments, with station `i` drawing mostly from sound class
/// `i % 3`. Stations sharing a class share a genre label.
pub fn write_synthetic_fixtures(dir: impl AsRef<Path>, count: usize, sample_rate: u32, seed: u64) -> io::Result<Vec<StationFixture>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let genres = ["Classical Music", "Talk", "Electronic"];
    let segment = (sample_rate * SNIPPET_SECONDS) as usize;
    let mut fixtures = Vec::with_capacity(count);
    for i in 0..count {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(1000).wrapping_add(i as u64));
        let main = SoundClass::ALL[i % 3];
        let mut audio: Vec<i16> = Vec::with_capacity(segment * 12);
        for _ in 0..12 {
            let class = if rng.random_bool(0.8) { main } else { SoundClass::ALL[rng.random_range(0..3)] };
            audio.extend(class.render(sample_rate, segment, &mut rng).iter().map(|&v| (v * 32767.0) as i16));
        }
        let wav = PathBuf::from(format!("station{i}.wav"));
        let spec = hound::WavSpec { channels: 1, sample_rate, bits_per_sample: 16, sample_format: hound::SampleFormat::Int };
        let mut w = hound::WavWriter::create(dir.join(&wav), spec).map_err(wav_err)?;
        for s in &audio {
            w.write_sample(*s).map_err(wav_err)?;
        }
        w.finalize().map_err(wav_err)?;
        fixtures.push(StationFixture {
            id: format!("station{i}"),
            name: format!("Station {i}"),
            genres: vec![genres[i % 3].to_string()],
            wav,
            metaint: default_metaint(),
            titles: vec![format!("Station {i} - Track A"), format!("Station {i} - Track B")],
            drop_after_s: None,
            bytes_per_sec: None,
        });
    }
    let index = serde_json::to_vec_pretty(&fixtures).map_err(|e| io::Error::new(io::ErrorKind::Other, e))?;
    std::fs::write(dir.join(FIXTURE_INDEX), index)?;
    Ok(fixtures)
}

struct Shared {
    addr: SocketAddr,
    stations: BTreeMap<String, MockStation>,
    connections: BTreeMap<String, AtomicU64>,
}

impl Shared {
    fn catalog(&self) -> Vec<StationRecord> {
        self.stations
            .values()
            .map(|s| StationRecord {
                station_id: s.fixture.id.clone(),
                name: s.fixture.name.clone(),
                genres: s.fixture.genres.clone(),
                bearer_url: format!("http://{}/stream/{}", self.addr, s.fixture.id),
            })
            .collect()
    }
}

/// A running mock server; stops when dropped.
pub struct MockIcyServer {
    shared: Arc<Shared>,
    task: JoinHandle<()>,
}

impl MockIcyServer {
    /// Binds `bind` (port 0 picks a free port) and starts serving on the
    /// current tokio runtime.
    pub async fn start(stations: Vec<MockStation>, bind: SocketAddr) -> io::Result<Self> {
        let listener = TcpListener::bind(bind).await?;
        let addr = listener.local_addr()?;
        let connections = stations.iter().map(|s| (s.fixture.id.clone(), AtomicU64::new(0))).collect();
        let stations = stations.into_iter().map(|s| (s.fixture.id.clone(), s)).collect();
        let shared = Arc::new(Shared { addr, stations, connections });
        let state = shared.clone();
        let task = tokio::spawn(async move {
            loop {
                let Ok((socket, _)) = listener.accept().await else { continue };
                let state = state.clone();
                tokio::spawn(async move {
                    if let Err(e) = handle(socket, &state).await {
                        log::debug!("mock connection ended: {e}");
                    }
                });
            }
        });
        Ok(MockIcyServer { shared, task })
    }

    pub fn addr(&self) -> SocketAddr {
        self.shared.addr
    }

    pub fn catalog_url(&self) -> String {
        format!("http://{}/services", self.shared.addr)
    }

    /// The catalog `/services` serves.
    pub fn catalog(&self) -> Vec<StationRecord> {
        self.shared.catalog()
    }

    /// Stream connections accepted so far for `id`.
    pub fn connections(&self, id: &str) -> u64 {
        self.shared.connections.get(id).map_or(0, |c| c.load(Ordering::SeqCst))
    }
}

impl Drop for MockIcyServer {
    fn drop(&mut self) {
        self.task.abort();
    }
}

async fn handle(socket: TcpStream, state: &Shared) -> io::Result<()> {
    let mut reader = BufReader::new(socket);
    let mut request_line = String::new();
    reader.read_line(&mut request_line).await?;
    let mut want_metadata = false;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).await? == 0 {
            break;
        }
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        if let Some((k, v)) = line.split_once(':') {
            if k.trim().eq_ignore_ascii_case("icy-metadata") && v.trim() == "1" {
                want_metadata = true;
            }
        }
    }
    let mut socket = reader.into_inner();
    let path = request_line.split_whitespace().nth(1).unwrap_or("/");
    let path = path.split('?').next().unwrap_or(path);

    if path == "/services" {
        let body = serde_json::to_vec(&state.catalog()).expect("catalog serializes");
        let head = format!("HTTP/1.0 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\n\r\n", body.len());
        socket.write_all(head.as_bytes()).await?;
        socket.write_all(&body).await?;
        return socket.shutdown().await;
    }
    let station = path.strip_prefix("/stream/").and_then(|id| state.stations.get(id));
    let Some(station) = station else {
        socket.write_all(b"HTTP/1.0 404 Not Found\r\nContent-Length: 0\r\n\r\n").await?;
        return socket.shutdown().await;
    };
    let conn = state.connections[&station.fixture.id].fetch_add(1, Ordering::SeqCst);
    stream_station(socket, station, conn, want_metadata).await
}

/// Metadata block: length byte then `16 * L` bytes, NUL padded.
fn metadata_block(title: Option<&str>) -> Vec<u8> {
    let Some(title) = title else { return vec![0] };
    let text = format!("StreamTitle='{}';", title.replace('\'', ""));
    let blocks = text.len().div_ceil(16).min(255);
    let mut out = vec![blocks as u8];
    out.extend(text.bytes().take(blocks * 16));
    out.resize(1 + blocks * 16, 0);
    out
}

async fn stream_station(mut socket: TcpStream, station: &MockStation, conn: u64, want_metadata: bool) -> io::Result<()> {
    let f = &station.fixture;
    let metaint = if want_metadata { f.metaint } else { 0 };
    let mut head = format!(
        "ICY 200 OK\r\nContent-Type: {}\r\nicy-name: {}\r\nicy-br: {}\r\n",
        station.content_type(),
        f.name,
        station.sample_rate * 16 / 1000
    );
    if let Some(g) = f.genres.first() {
        head.push_str(&format!("icy-genre: {g}\r\n"));
    }
    if metaint > 0 {
        head.push_str(&format!("icy-metaint: {metaint}\r\n"));
    }
    head.push_str("\r\n");
    socket.write_all(head.as_bytes()).await?;

    // each connection starts one snippet further into the loop
    let samples = &station.samples;
    let step = (station.sample_rate * SNIPPET_SECONDS) as u64;
    let mut pos = ((conn * step) % samples.len() as u64) as usize;
    let title = (!f.titles.is_empty()).then(|| f.titles[(conn as usize) % f.titles.len()].as_str());
    let limit = f.drop_after_s.map(|s| (s * station.sample_rate as f64) as u64 * 2);

    let mut sent_audio: u64 = 0;
    let mut since_meta = 0usize;
    let mut first_block = true;
    loop {
        let mut chunk = Vec::with_capacity(CHUNK_BYTES + 256);
        let mut audio_in_chunk = 0;
        while audio_in_chunk < CHUNK_BYTES {
            if limit.is_some_and(|l| sent_audio >= l) {
                break;
            }
            let [hi, lo] = samples[pos].to_be_bytes();
            for b in [hi, lo] {
                chunk.push(b);
                sent_audio += 1;
                audio_in_chunk += 1;
                since_meta += 1;
                if metaint > 0 && since_meta == metaint {
                    chunk.extend(metadata_block(if first_block { title } else { None }));
                    first_block = false;
                    since_meta = 0;
                }
            }
            pos = (pos + 1) % samples.len();
        }
        if !chunk.is_empty() {
            socket.write_all(&chunk).await?;
        }
        if limit.is_some_and(|l| sent_audio >= l) {
            socket.flush().await?;
            return socket.shutdown().await;
        }
        if let Some(rate) = f.bytes_per_sec.filter(|&r| r > 0) {
            tokio::time::sleep(Duration::from_secs_f64(audio_in_chunk as f64 / rate as f64)).await;
        }
    }
}
