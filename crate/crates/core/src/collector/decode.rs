//! Uncompressed audio decoding (RIFF/WAV and `audio/L16`).
//!
//! Compressed codecs plug in through [`PcmSource`] and
//! [`CrawlOptions::decoder`](super::CrawlOptions); none are built in.

use std::io::{self, Cursor, Read};

use super::{CollectorError, Result};

/// Mono 16-bit PCM at the source sample rate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PcmBuffer {
    pub sample_rate: u32,
    pub samples: Vec<i16>,
}

impl PcmBuffer {
    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Stream formats understood without an external codec.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AudioFormat {
    Wav,
    /// Raw big-endian signed 16-bit PCM (RFC 2586).
    L16 { sample_rate: u32, channels: u16 },
}

impl AudioFormat {
    pub fn from_content_type(content_type: &str) -> Result<Self> {
        let mut parts = content_type.split(';');
        let essence = parts.next().unwrap_or("").trim().to_ascii_lowercase();
        match essence.as_str() {
            "audio/wav" | "audio/wave" | "audio/x-wav" | "audio/vnd.wave" => Ok(AudioFormat::Wav),
            "audio/l16" => {
                let mut sample_rate = 44_100;
                let mut channels = 1;
                for param in parts {
                    let Some((k, v)) = param.split_once('=') else { continue };
                    match k.trim().to_ascii_lowercase().as_str() {
                        "rate" => sample_rate = v.trim().parse().unwrap_or(0),
                        "channels" => channels = v.trim().parse().unwrap_or(0),
                        _ => {}
                    }
                }
                if sample_rate == 0 || channels == 0 {
                    return Err(CollectorError::CodecUnsupported(content_type.to_string()));
                }
                Ok(AudioFormat::L16 { sample_rate, channels })
            }
            _ => Err(CollectorError::CodecUnsupported(content_type.to_string())),
        }
    }
}

/// A source of mono PCM frames, typically a decoded live stream.
pub trait PcmSource {
    fn sample_rate(&self) -> u32;

    /// Reads exactly `frames` mono samples or fails with
    /// [`CollectorError::StreamDropped`].
    fn read_mono(&mut self, frames: usize) -> Result<Vec<i16>>;
}

enum Source<R: Read> {
    Wav(hound::WavReader<R>),
    L16(R),
}

/// Incremental decoder over an uncompressed byte stream.
pub struct PcmStream<R: Read> {
    source: Source<R>,
    sample_rate: u32,
    channels: u16,
}

impl<R: Read> PcmStream<R> {
    pub fn open(reader: R, content_type: &str) -> Result<Self> {
        match AudioFormat::from_content_type(content_type)? {
            AudioFormat::Wav => {
                let wav = hound::WavReader::new(reader).map_err(wav_error)?;
                let spec = wav.spec();
                if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
                    return Err(CollectorError::CodecUnsupported(format!(
                        "wav {}-bit {:?}",
                        spec.bits_per_sample, spec.sample_format
                    )));
                }
                if spec.channels == 0 || spec.sample_rate == 0 {
                    return Err(CollectorError::InvalidAudio("wav header without channels or rate".into()));
                }
                Ok(PcmStream { sample_rate: spec.sample_rate, channels: spec.channels, source: Source::Wav(wav) })
            }
            AudioFormat::L16 { sample_rate, channels } => {
                Ok(PcmStream { source: Source::L16(reader), sample_rate, channels })
            }
        }
    }

    pub fn channels(&self) -> u16 {
        self.channels
    }

    /// Reads up to `frames` interleaved frames, stopping early at end of
    /// stream. Transport errors other than EOF are returned.
    fn read_frames(&mut self, frames: usize) -> Result<Vec<i16>> {
        let channels = self.channels as usize;
        let wanted = frames.saturating_mul(channels);
        let mut interleaved = Vec::with_capacity(wanted.min(1 << 24));
        match &mut self.source {
            Source::Wav(wav) => {
                for sample in wav.samples::<i16>().take(wanted) {
                    match sample {
                        Ok(s) => interleaved.push(s),
                        Err(hound::Error::IoError(e)) if e.kind() != io::ErrorKind::UnexpectedEof => {
                            return Err(e.into())
                        }
                        Err(_) => break,
                    }
                }
            }
            Source::L16(reader) => {
                let mut buf = [0u8; 2];
                while interleaved.len() < wanted {
                    match reader.read_exact(&mut buf) {
                        Ok(()) => interleaved.push(i16::from_be_bytes(buf)),
                        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => break,
                        Err(e) => return Err(e.into()),
                    }
                }
            }
        }
        interleaved.truncate(interleaved.len() / channels * channels);
        Ok(downmix(&interleaved, channels))
    }
}

impl<R: Read> PcmSource for PcmStream<R> {
    fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    fn read_mono(&mut self, frames: usize) -> Result<Vec<i16>> {
        let samples = self.read_frames(frames).map_err(|e| match e {
            // a socket timeout mid-snippet is a drop, not a hard failure
            CollectorError::Io(io) if matches!(io.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut | io::ErrorKind::ConnectionReset) => {
                CollectorError::StreamDropped { received: 0, expected: frames }
            }
            other => other,
        })?;
        if samples.len() < frames {
            return Err(CollectorError::StreamDropped { received: samples.len(), expected: frames });
        }
        Ok(samples)
    }
}

/// Averages interleaved channels into one, rounding to nearest.
fn downmix(interleaved: &[i16], channels: usize) -> Vec<i16> {
    if channels == 1 {
        return interleaved.to_vec();
    }
    interleaved
        .chunks_exact(channels)
        .map(|frame| {
            let sum: i32 = frame.iter().map(|&s| s as i32).sum();
            (sum as f64 / channels as f64).round() as i16
        })
        .collect()
}

fn wav_error(e: hound::Error) -> CollectorError {
    match e {
        hound::Error::IoError(io) if io.kind() != io::ErrorKind::UnexpectedEof => CollectorError::Io(io),
        hound::Error::Unsupported => CollectorError::CodecUnsupported("unsupported wav variant".into()),
        other => CollectorError::InvalidAudio(other.to_string()),
    }
}

/// Decodes a complete in-memory buffer to mono PCM at the source rate.
pub fn decode_audio(bytes: &[u8], content_type: &str) -> Result<PcmBuffer> {
    let mut stream = PcmStream::open(Cursor::new(bytes), content_type)?;
    let samples = stream.read_frames(usize::MAX)?;
    Ok(PcmBuffer { sample_rate: stream.sample_rate, samples })
}

#[cfg(test)]
pub(crate) fn wav_bytes(sample_rate: u32, channels: u16, interleaved: &[i16]) -> Vec<u8> {
    let spec = hound::WavSpec { channels, sample_rate, bits_per_sample: 16, sample_format: hound::SampleFormat::Int };
    let mut cursor = Cursor::new(Vec::new());
    {
        let mut writer = hound::WavWriter::new(&mut cursor, spec).unwrap();
        for &s in interleaved {
            writer.write_sample(s).unwrap();
        }
        writer.finalize().unwrap();
    }
    cursor.into_inner()
}
