use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::Array2;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::mel::{mel_filterbank, MelFilterbank};
use super::{DspError, Result};

/// Power floor used both for the dB conversion and to detect digital silence.
const POWER_EPSILON: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrogramParams {
    pub n_mels: usize,
    pub window_s: f64,
    pub hop_s: f64,
    pub clip_db: f64,
    pub target_rate: u32,
    pub snippet_s: f64,
}

impl Default for SpectrogramParams {
    fn default() -> Self {
        SpectrogramParams { n_mels: 128, window_s: 0.08, hop_s: 0.04, clip_db: -60.0, target_rate: 16_000, snippet_s: 5.0 }
    }
}

impl SpectrogramParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(DspError::InvalidParams(msg));
        if self.n_mels == 0 {
            return bad("n_mels must be at least 1".into());
        }
        if !(self.hop_s > 0.0 && self.hop_s <= self.window_s) {
            return bad(format!("hop {} must be in (0, window {}]", self.hop_s, self.window_s));
        }
        if !(self.clip_db < 0.0) {
            return bad(format!("clip_db {} must be negative", self.clip_db));
        }
        if self.target_rate == 0 || self.window_len() == 0 || self.hop_len() == 0 {
            return bad("window and hop must span at least one sample".into());
        }
        if self.snippet_len() < self.window_len() {
            return bad(format!("snippet of {} s is shorter than the window", self.snippet_s));
        }
        Ok(())
    }

    pub fn window_len(&self) -> usize {
        (self.window_s * self.target_rate as f64).round() as usize
    }

    pub fn hop_len(&self) -> usize {
        (self.hop_s * self.target_rate as f64).round() as usize
    }

    pub fn snippet_len(&self) -> usize {
        (self.snippet_s * self.target_rate as f64).round() as usize
    }

    pub fn n_fft(&self) -> usize {
        self.window_len().next_power_of_two()
    }

    /// Frame count, computed on integer sample counts to dodge float
    /// rounding in `(snippet - window) / hop`.
    pub fn frames(&self) -> usize {
        (self.snippet_len() - self.window_len()) / self.hop_len() + 1
    }
}

/// `frames x n_mels` matrix of log-mel values mapped to `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    pub values: Array2<f32>,
    pub params: SpectrogramParams,
}

impl MelSpectrogram {
    pub fn frames(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_mels(&self) -> usize {
        self.values.ncols()
    }
}

/// Reusable spectrogram front-end holding the FFT plan, window and
/// filterbank for one parameter set.
pub struct SpectrogramExtractor {
    params: SpectrogramParams,
    filterbank: MelFilterbank,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl SpectrogramExtractor {
    pub fn new(params: SpectrogramParams) -> Result<Self> {
        params.validate()?;
        let n_fft = params.n_fft();
        let filterbank = mel_filterbank(params.n_mels, n_fft, params.target_rate)?;
        let len = params.window_len();
        // periodic Hann
        let window = (0..len).map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos()).collect();
        let fft = FftPlanner::new().plan_fft_forward(n_fft);
        Ok(SpectrogramExtractor { params, filterbank, window, fft })
    }

    pub fn params(&self) -> &SpectrogramParams {
        &self.params
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.filterbank
    }

    /// Mel power per frame before dB conversion.
    pub fn mel_power<T: Copy + Into<f64>>(&self, samples: &[T]) -> Result<Array2<f64>> {
        let p = &self.params;
        let (win, hop, n_fft) = (p.window_len(), p.hop_len(), p.n_fft());
        if samples.len() < win {
            return Err(DspError::TooShort { samples: samples.len(), needed: win });
        }
        // fixed-length input: truncate long snippets, zero-pad short ones
        let mut signal: Vec<f64> = samples[..samples.len().min(p.snippet_len())].iter().map(|&v| v.into()).collect();
        signal.resize(p.snippet_len(), 0.0);

        let frames = p.frames();
        let mut out = Array2::zeros((frames, p.n_mels));
        let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        let mut power = vec![0.0; n_fft / 2 + 1];
        let mut mel = vec![0.0; p.n_mels];
        for t in 0..frames {
            let start = t * hop;
            for (i, c) in buf.iter_mut().enumerate() {
                *c = if i < win { Complex::new(signal[start + i] * self.window[i], 0.0) } else { Complex::new(0.0, 0.0) };
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for (pw, c) in power.iter_mut().zip(&buf) {
                *pw = c.norm_sqr();
            }
            self.filterbank.apply(&power, &mut mel);
            out.row_mut(t).iter_mut().zip(&mel).for_each(|(o, &m)| *o = m);
        }
        Ok(out)
    }

    /// Full pipeline: mel power, dB relative to the snippet maximum, clip to
    /// `[clip_db, 0]`, then map affinely onto `[-1, 1]`.
    pub fn compute<T: Copy + Into<f64>>(&self, samples: &[T]) -> Result<MelSpectrogram> {
        let power = self.mel_power(samples)?;
        let clip = self.params.clip_db;
        let reference = power.iter().cloned().fold(0.0, f64::max);
        let values = if reference <= POWER_EPSILON {
            Array2::from_elem(power.dim(), -1.0f32)
        } else {
            let ref_db = 10.0 * reference.log10();
            power.mapv(|p| {
                let db = (10.0 * p.max(POWER_EPSILON).log10() - ref_db).clamp(clip, 0.0);
                (2.0 * (db - clip) / -clip - 1.0) as f32
            })
        };
        Ok(MelSpectrogram { values, params: self.params })
    }
}

/// One-shot convenience over [`SpectrogramExtractor`]. `samples` must already
/// be at `params.target_rate`.
pub fn mel_spectrogram<T: Copy + Into<f64>>(samples: &[T], params: &SpectrogramParams) -> Result<MelSpectrogram> {
    SpectrogramExtractor::new(*params)?.compute(samples)
}
