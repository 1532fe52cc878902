//! PCM to normalized log-mel spectrogram conversion.

mod archive;
mod mel;
mod resample;
mod spectrogram;

use thiserror::Error;

pub use archive::{read_archive, write_archive, ArchiveKind, ArchiveReader, ArchiveRecord, ArchiveWriter};
pub use mel::{hz_to_mel, mel_filterbank, mel_to_hz, MelFilterbank};
pub use resample::{pcm_to_f32, resample_mono};
pub use spectrogram::{mel_spectrogram, MelSpectrogram, SpectrogramExtractor, SpectrogramParams};

pub type Result<T, E = DspError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum DspError {
    #[error("invalid spectrogram parameters: {0}")]
    InvalidParams(String),

    #[error("degenerate mel filterbank: filter {band} covers no FFT bin")]
    FilterbankDegenerate { band: usize },

    #[error("snippet too short: {samples} samples, need at least {needed}")]
    TooShort { samples: usize, needed: usize },

    #[error("archive: {0}")]
    Archive(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
