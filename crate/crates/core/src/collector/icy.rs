//! ICY ("I Can Yell") stream client and metadata demuxer.
//!
//! Shoutcast/Icecast servers interleave a metadata block after every
//! `icy-metaint` audio bytes when the client sends `Icy-MetaData: 1`. A block
//! is one length byte `L` followed by exactly `16 * L` bytes of text, usually
//! `StreamTitle='...';` padded with NULs.
//!
//! The client speaks plain HTTP/1.0 itself because Shoutcast v1 servers answer
//! with an `ICY 200 OK` status line that general-purpose HTTP clients reject.

use std::io::{self, BufRead, BufReader, Read, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::sync::{Arc, OnceLock};
use std::time::Duration;

use log::debug;
use url::Url;

use super::{CollectorError, Result};

pub const DEFAULT_USER_AGENT: &str = concat!("stationprint/", env!("CARGO_PKG_VERSION"));

const MAX_REDIRECTS: usize = 5;
const MAX_HEADER_BYTES: usize = 64 * 1024;

/// Response headers of an audio stream.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IcyStreamHeader {
    /// Audio bytes between metadata blocks; 0 when the server sends none.
    pub metaint: usize,
    pub name: Option<String>,
    pub genre: Option<String>,
    pub bitrate_kbps: Option<u32>,
    pub content_type: String,
}

impl IcyStreamHeader {
    /// Builds the header from `(name, value)` pairs, matching names
    /// case-insensitively.
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Self {
        let mut header = IcyStreamHeader::default();
        for (name, value) in pairs {
            let value = value.trim();
            match name.trim().to_ascii_lowercase().as_str() {
                "icy-metaint" => header.metaint = value.parse().unwrap_or(0),
                "icy-name" if !value.is_empty() => header.name = Some(value.to_string()),
                "icy-genre" if !value.is_empty() => header.genre = Some(value.to_string()),
                // some servers send "128,128" for multi-rate streams
                "icy-br" => {
                    header.bitrate_kbps = value
                        .split(',')
                        .next()
                        .and_then(|v| v.trim().parse().ok())
                        .filter(|&v| v > 0)
                }
                "content-type" => header.content_type = value.to_string(),
                _ => {}
            }
        }
        header
    }
}

/// The raw body of an opened stream, positioned after the response headers.
pub type IcyBody = Box<dyn Read + Send>;

trait Transport: Read + Write + Send {}
impl<T: Read + Write + Send> Transport for T {}

/// Opens an HTTP(S) audio stream and parses the `icy-*` response headers.
///
/// Follows up to five redirects. Connection failures and timeouts map to
/// [`CollectorError::StreamUnreachable`]; a non-audio content type maps to
/// [`CollectorError::NotAStream`].
pub fn open_icy_stream(
    url: &str,
    want_metadata: bool,
    timeout: Duration,
) -> Result<(IcyStreamHeader, IcyBody)> {
    let mut current = Url::parse(url).map_err(|e| unreachable(url, e))?;
    for _ in 0..=MAX_REDIRECTS {
        let mut reader = BufReader::new(connect(&current, timeout)?);
        send_request(reader.get_mut(), &current, want_metadata).map_err(|e| unreachable(url, e))?;
        let (status, pairs) = read_response_head(&mut reader).map_err(|e| unreachable(url, e))?;

        if (300..400).contains(&status) {
            let location = pairs
                .iter()
                .find(|(k, _)| k.eq_ignore_ascii_case("location"))
                .map(|(_, v)| v.clone())
                .ok_or_else(|| unreachable(url, format!("redirect {status} without location")))?;
            current = current.join(location.trim()).map_err(|e| unreachable(url, e))?;
            debug!("{url}: redirected to {current}");
            continue;
        }
        if !(200..300).contains(&status) {
            return Err(unreachable(url, format!("status {status}")));
        }

        let header = IcyStreamHeader::from_pairs(pairs.iter().map(|(k, v)| (k.as_str(), v.as_str())));
        if !is_audio_content_type(&header.content_type) {
            return Err(CollectorError::NotAStream(header.content_type));
        }
        let body: IcyBody = Box::new(reader);
        return Ok((header, body));
    }
    Err(unreachable(url, "too many redirects"))
}

fn unreachable(url: &str, reason: impl std::fmt::Display) -> CollectorError {
    CollectorError::StreamUnreachable { url: url.to_string(), reason: reason.to_string() }
}

fn is_audio_content_type(content_type: &str) -> bool {
    let essence = content_type.split(';').next().unwrap_or("").trim().to_ascii_lowercase();
    essence.starts_with("audio/") || essence == "application/ogg"
}

fn connect(url: &Url, timeout: Duration) -> Result<Box<dyn Transport>> {
    let host = url.host_str().ok_or_else(|| unreachable(url.as_str(), "missing host"))?;
    let port = url
        .port_or_known_default()
        .ok_or_else(|| unreachable(url.as_str(), "unknown port"))?;
    let addrs = (host, port).to_socket_addrs().map_err(|e| unreachable(url.as_str(), e))?;

    let mut last_err: Option<io::Error> = None;
    let mut stream = None;
    for addr in addrs {
        match TcpStream::connect_timeout(&addr, timeout) {
            Ok(s) => {
                stream = Some(s);
                break;
            }
            Err(e) => last_err = Some(e),
        }
    }
    let stream = stream.ok_or_else(|| {
        unreachable(
            url.as_str(),
            last_err.map_or_else(|| "no addresses".to_string(), |e| e.to_string()),
        )
    })?;
    stream.set_read_timeout(Some(timeout))?;
    stream.set_write_timeout(Some(timeout))?;

    match url.scheme() {
        "http" => Ok(Box::new(stream)),
        "https" => {
            let name = rustls::pki_types::ServerName::try_from(host.to_string())
                .map_err(|e| unreachable(url.as_str(), e))?;
            let conn = rustls::ClientConnection::new(tls_config(), name)
                .map_err(|e| unreachable(url.as_str(), e))?;
            Ok(Box::new(rustls::StreamOwned::new(conn, stream)))
        }
        other => Err(unreachable(url.as_str(), format!("unsupported scheme {other}"))),
    }
}

fn tls_config() -> Arc<rustls::ClientConfig> {
    static CONFIG: OnceLock<Arc<rustls::ClientConfig>> = OnceLock::new();
    CONFIG
        .get_or_init(|| {
            let roots =
                rustls::RootCertStore { roots: webpki_roots::TLS_SERVER_ROOTS.to_vec() };
            let provider = Arc::new(rustls::crypto::ring::default_provider());
            let config = rustls::ClientConfig::builder_with_provider(provider)
                .with_safe_default_protocol_versions()
                .expect("ring supports the default protocol versions")
                .with_root_certificates(roots)
                .with_no_client_auth();
            Arc::new(config)
        })
        .clone()
}

fn send_request(stream: &mut dyn Transport, url: &Url, want_metadata: bool) -> io::Result<()> {
    let mut target = url.path().to_string();
    if let Some(q) = url.query() {
        target.push('?');
        target.push_str(q);
    }
    let host = match (url.host_str(), url.port()) {
        (Some(h), Some(p)) => format!("{h}:{p}"),
        (Some(h), None) => h.to_string(),
        _ => String::new(),
    };
    let mut request = format!(
        "GET {target} HTTP/1.0\r\nHost: {host}\r\nUser-Agent: {DEFAULT_USER_AGENT}\r\nAccept: */*\r\n"
    );
    if want_metadata {
        request.push_str("Icy-MetaData: 1\r\n");
    }
    request.push_str("Connection: close\r\n\r\n");
    stream.write_all(request.as_bytes())?;
    stream.flush()
}

/// Reads the status line and headers. Accepts both `HTTP/1.x` and `ICY`
/// status lines.
fn read_response_head<R: BufRead>(reader: &mut R) -> io::Result<(u16, Vec<(String, String)>)> {
    let mut consumed = 0usize;
    let mut next_line = |reader: &mut R| -> io::Result<String> {
        let mut buf = Vec::new();
        let n = reader.read_until(b'\n', &mut buf)?;
        consumed += n;
        if n == 0 {
            return Err(io::Error::new(io::ErrorKind::UnexpectedEof, "connection closed in headers"));
        }
        if consumed > MAX_HEADER_BYTES {
            return Err(io::Error::new(io::ErrorKind::InvalidData, "response headers too large"));
        }
        // header values are frequently latin-1
        Ok(buf.iter().map(|&b| b as char).collect::<String>().trim_end().to_string())
    };

    let status_line = next_line(reader)?;
    let mut parts = status_line.split_whitespace();
    let proto = parts.next().unwrap_or("");
    if !(proto.starts_with("HTTP/") || proto == "ICY") {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            format!("bad status line {status_line:?}"),
        ));
    }
    let status: u16 = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidData, "missing status code"))?;

    let mut headers = Vec::new();
    loop {
        let line = next_line(reader)?;
        if line.is_empty() {
            break;
        }
        if let Some((name, value)) = line.split_once(':') {
            headers.push((name.trim().to_string(), value.trim().to_string()));
        }
    }
    Ok((status, headers))
}

/// A metadata block found in the stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MetadataEvent {
    /// Number of audio bytes that preceded the block.
    pub offset: u64,
    /// The block text with NUL padding removed.
    pub raw: String,
    /// Parsed `StreamTitle` value, if present.
    pub title: Option<String>,
}

impl MetadataEvent {
    fn from_block(offset: u64, block: &[u8]) -> Self {
        let end = block.iter().rposition(|&b| b != 0).map_or(0, |i| i + 1);
        let raw = String::from_utf8_lossy(&block[..end]).into_owned();
        let title = parse_stream_title(&raw);
        MetadataEvent { offset, raw, title }
    }
}

/// Extracts the value of `StreamTitle='...';` from a metadata block.
pub fn parse_stream_title(text: &str) -> Option<String> {
    const KEY: &str = "StreamTitle='";
    let start = text.find(KEY)? + KEY.len();
    let rest = &text[start..];
    let end = rest.find("';").unwrap_or_else(|| rest.trim_end_matches('\'').len());
    Some(rest[..end].to_string())
}

/// Splits a complete ICY byte sequence into audio bytes and metadata events.
///
/// With `metaint == 0` the input is returned unchanged. The stream may end
/// anywhere inside an audio run or exactly before a length byte; ending
/// inside a metadata block is a [`CollectorError::Demux`] error carrying the
/// byte offset at which the block started.
pub fn demux_icy(bytes: &[u8], metaint: usize) -> Result<(Vec<u8>, Vec<MetadataEvent>)> {
    if metaint == 0 {
        return Ok((bytes.to_vec(), Vec::new()));
    }
    let mut audio = Vec::with_capacity(bytes.len());
    let mut events = Vec::new();
    let mut pos = 0usize;
    while pos < bytes.len() {
        let run = metaint.min(bytes.len() - pos);
        audio.extend_from_slice(&bytes[pos..pos + run]);
        pos += run;
        if run < metaint || pos == bytes.len() {
            break;
        }
        let block_start = pos;
        let len = bytes[pos] as usize * 16;
        pos += 1;
        if pos + len > bytes.len() {
            return Err(CollectorError::Demux { offset: block_start as u64 });
        }
        if len > 0 {
            events.push(MetadataEvent::from_block(audio.len() as u64, &bytes[pos..pos + len]));
        }
        pos += len;
    }
    Ok((audio, events))
}

/// Streaming counterpart of [`demux_icy`]: a reader that yields only audio
/// bytes and collects metadata events as it goes.
pub struct IcyDemuxer<R> {
    inner: R,
    metaint: usize,
    until_meta: usize,
    raw_offset: u64,
    audio_offset: u64,
    events: Vec<MetadataEvent>,
}

impl<R: Read> IcyDemuxer<R> {
    pub fn new(inner: R, metaint: usize) -> Self {
        IcyDemuxer { inner, metaint, until_meta: metaint, raw_offset: 0, audio_offset: 0, events: Vec::new() }
    }

    pub fn events(&self) -> &[MetadataEvent] {
        &self.events
    }

    pub fn take_events(&mut self) -> Vec<MetadataEvent> {
        std::mem::take(&mut self.events)
    }

    pub fn audio_bytes_read(&self) -> u64 {
        self.audio_offset
    }

    /// Consumes one metadata block. Returns `false` on a clean EOF before the
    /// length byte.
    fn read_block(&mut self) -> io::Result<bool> {
        let block_start = self.raw_offset;
        let mut len_byte = [0u8; 1];
        loop {
            match self.inner.read(&mut len_byte) {
                Ok(0) => return Ok(false),
                Ok(_) => break,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
                Err(e) => return Err(e),
            }
        }
        self.raw_offset += 1;
        let len = len_byte[0] as usize * 16;
        let mut block = vec![0u8; len];
        if let Err(e) = self.inner.read_exact(&mut block) {
            return Err(if e.kind() == io::ErrorKind::UnexpectedEof {
                io::Error::new(
                    io::ErrorKind::InvalidData,
                    CollectorError::Demux { offset: block_start },
                )
            } else {
                e
            });
        }
        self.raw_offset += len as u64;
        if len > 0 {
            self.events.push(MetadataEvent::from_block(self.audio_offset, &block));
        }
        self.until_meta = self.metaint;
        Ok(true)
    }
}

impl<R: Read> Read for IcyDemuxer<R> {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        if buf.is_empty() {
            return Ok(0);
        }
        if self.metaint == 0 {
            let n = self.inner.read(buf)?;
            self.raw_offset += n as u64;
            self.audio_offset += n as u64;
            return Ok(n);
        }
        if self.until_meta == 0 && !self.read_block()? {
            return Ok(0);
        }
        let want = buf.len().min(self.until_meta);
        let n = self.inner.read(&mut buf[..want])?;
        self.until_meta -= n;
        self.raw_offset += n as u64;
        self.audio_offset += n as u64;
        Ok(n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn block(text: &str, blocks: u8) -> Vec<u8> {
        let mut out = vec![blocks];
        let mut body = text.as_bytes().to_vec();
        body.resize(blocks as usize * 16, 0);
        out.extend(body);
        out
    }

    #[test]
    fn single_title_block() {
        let mut input = b"AAAAAAAA".to_vec();
        input.extend(block("StreamTitle='a';", 1));
        input.extend(b"BBBBBBBB");
        let (audio, events) = demux_icy(&input, 8).unwrap();
        assert_eq!(audio, b"AAAAAAAABBBBBBBB");
        assert_eq!(events.len(), 1);
        assert_eq!(events[0].title.as_deref(), Some("a"));
        assert_eq!(events[0].offset, 8);
    }

    #[test]
    fn empty_block_yields_no_event() {
        let mut input = b"AAAAAAAA".to_vec();
        input.push(0);
        input.extend(b"BBBBBBBB");
        let (audio, events) = demux_icy(&input, 8).unwrap();
        assert_eq!(audio.len(), 16);
        assert!(events.is_empty());
    }

    #[test]
    fn zero_metaint_is_identity() {
        let input: Vec<u8> = (0..=255).collect();
        let (audio, events) = demux_icy(&input, 0).unwrap();
        assert_eq!(audio, input);
        assert!(events.is_empty());
    }

    #[test]
    fn truncated_block_reports_offset() {
        let mut input = b"AAAAAAAA".to_vec();
        input.push(2);
        input.extend(b"StreamTitle=");
        match demux_icy(&input, 8) {
            Err(CollectorError::Demux { offset }) => assert_eq!(offset, 8),
            other => panic!("{other:?}"),
        }
        let mut reader = IcyDemuxer::new(&input[..], 8);
        let err = io::copy(&mut reader, &mut io::sink()).unwrap_err();
        assert_eq!(err.kind(), io::ErrorKind::InvalidData);
        assert!(err.to_string().contains("offset 8"), "{err}");
    }

    #[test]
    fn titles_with_spaces_and_missing_terminator() {
        assert_eq!(parse_stream_title("StreamTitle='Artist - Song';StreamUrl='';").as_deref(), Some("Artist - Song"));
        assert_eq!(parse_stream_title("StreamTitle='x'").as_deref(), Some("x"));
        assert_eq!(parse_stream_title("StreamUrl='http://x';"), None);
    }

    #[test]
    fn header_pairs_are_case_insensitive() {
        let header = IcyStreamHeader::from_pairs([
            ("ICY-METAINT", "16000"),
            ("Icy-Name", "BR Klassik"),
            ("icy-genre", "Classical"),
            ("icy-br", "128, 128"),
            ("Content-Type", "audio/mpeg"),
        ]);
        assert_eq!(header.metaint, 16000);
        assert_eq!(header.name.as_deref(), Some("BR Klassik"));
        assert_eq!(header.genre.as_deref(), Some("Classical"));
        assert_eq!(header.bitrate_kbps, Some(128));
        assert_eq!(IcyStreamHeader::from_pairs([("content-type", "audio/wav")]).metaint, 0);
    }

    #[test]
    fn content_type_filter() {
        assert!(is_audio_content_type("audio/mpeg"));
        assert!(is_audio_content_type("Audio/L16; rate=16000"));
        assert!(is_audio_content_type("application/ogg"));
        assert!(!is_audio_content_type("text/html; charset=utf-8"));
        assert!(!is_audio_content_type(""));
    }

    #[test]
    fn parses_icy_status_line() {
        let raw = b"ICY 200 OK\r\nicy-metaint: 8192\r\ncontent-type: audio/mpeg\r\n\r\nxyz";
        let mut reader = BufReader::new(&raw[..]);
        let (status, headers) = read_response_head(&mut reader).unwrap();
        assert_eq!(status, 200);
        assert_eq!(headers.len(), 2);
        let mut rest = String::new();
        reader.read_to_string(&mut rest).unwrap();
        assert_eq!(rest, "xyz");
    }

    /// Interleaves metadata into `audio` the way a server would.
    fn mux(audio: &[u8], metaint: usize, titles: &[(u8, String)]) -> Vec<u8> {
        let mut out = Vec::new();
        let mut chunks = audio.chunks(metaint).peekable();
        let mut i = 0;
        while let Some(chunk) = chunks.next() {
            out.extend_from_slice(chunk);
            if chunk.len() == metaint && chunks.peek().is_some() {
                let (len, title) = &titles[i % titles.len()];
                i += 1;
                if *len == 0 {
                    out.push(0);
                } else {
                    out.extend(block(&format!("StreamTitle='{title}';"), *len));
                }
            }
        }
        out
    }

    proptest! {
        #[test]
        fn round_trip_recovers_audio_and_titles(
            audio in proptest::collection::vec(any::<u8>(), 0..4000),
            metaint in 1usize..600,
            titles in proptest::collection::vec((0u8..8, "[a-zA-Z0-9 ]{0,8}"), 1..5),
        ) {
            let titles: Vec<(u8, String)> = titles
                .into_iter()
                .map(|(len, t)| if len == 0 { (0, t) } else { (len.max(2), t) })
                .collect();
            let muxed = mux(&audio, metaint, &titles);
            let (out, events) = demux_icy(&muxed, metaint).unwrap();
            prop_assert_eq!(&out, &audio);

            let mut streamed = Vec::new();
            let mut reader = IcyDemuxer::new(&muxed[..], metaint);
            reader.read_to_end(&mut streamed).unwrap();
            prop_assert_eq!(&streamed, &audio);
            prop_assert_eq!(reader.events(), &events[..]);

            let blocks = if audio.is_empty() { 0 } else { (audio.len() - 1) / metaint };
            let expected: Vec<&String> = (0..blocks)
                .map(|i| &titles[i % titles.len()])
                .filter(|(len, _)| *len > 0)
                .map(|(_, t)| t)
                .collect();
            let got: Vec<&String> = events.iter().map(|e| e.title.as_ref().unwrap()).collect();
            prop_assert_eq!(got, expected);
        }
    }
}
