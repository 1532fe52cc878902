use ndarray::Array2;

use super::{DspError, Result};

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular mel filters over the non-negative FFT bins.
///
/// Filters have unit peak height (no area normalization), so for a pure tone
/// the strongest filter is the one whose center lies nearest in Hz.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    weights: Array2<f64>,
    centers_hz: Vec<f64>,
    /// First and one-past-last nonzero bin per filter.
    support: Vec<(usize, usize)>,
    n_fft: usize,
    sample_rate: u32,
}

impl MelFilterbank {
    /// `n_mels x (n_fft / 2 + 1)` weight matrix.
    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn centers_hz(&self) -> &[f64] {
        &self.centers_hz
    }

    pub fn n_mels(&self) -> usize {
        self.centers_hz.len()
    }

    pub fn n_fft(&self) -> usize {
        self.n_fft
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    /// Index of the filter whose center is nearest to `hz`.
    pub fn nearest_band(&self, hz: f64) -> usize {
        self.centers_hz
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - hz).abs().total_cmp(&(b.1 - hz).abs()))
            .map(|(i, _)| i)
            .expect("filterbank has at least one band")
    }

    /// Projects a power spectrum of `n_fft / 2 + 1` bins onto the filters.
    pub fn apply(&self, power: &[f64], out: &mut [f64]) {
        debug_assert_eq!(power.len(), self.weights.ncols());
        for (m, (&(lo, hi), o)) in self.support.iter().zip(out.iter_mut()).enumerate() {
            let row = self.weights.row(m);
            *o = (lo..hi).map(|k| row[k] * power[k]).sum();
        }
    }
}

/// Builds `n_mels` triangular filters with centers equally spaced on the mel
/// scale between 0 Hz and Nyquist.
pub fn mel_filterbank(n_mels: usize, n_fft: usize, sample_rate: u32) -> Result<MelFilterbank> {
    if n_mels == 0 {
        return Err(DspError::InvalidParams("n_mels must be at least 1".into()));
    }
    if !n_fft.is_power_of_two() || n_fft < 2 {
        return Err(DspError::InvalidParams(format!("n_fft {n_fft} is not a power of two")));
    }
    if sample_rate == 0 {
        return Err(DspError::InvalidParams("sample rate must be positive".into()));
    }
    let n_bins = n_fft / 2 + 1;
    let nyquist = sample_rate as f64 / 2.0;
    let mel_max = hz_to_mel(nyquist);
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(mel_max * i as f64 / (n_mels + 1) as f64))
        .collect();
    let bin_hz = sample_rate as f64 / n_fft as f64;

    let mut weights = Array2::zeros((n_mels, n_bins));
    let mut support = Vec::with_capacity(n_mels);
    for m in 0..n_mels {
        let (lo, center, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        let mut first = usize::MAX;
        let mut last = 0;
        for k in 0..n_bins {
            let f = k as f64 * bin_hz;
            let w = ((f - lo) / (center - lo)).min((hi - f) / (hi - center)).max(0.0);
            if w > 0.0 {
                weights[[m, k]] = w;
                first = first.min(k);
                last = k + 1;
            }
        }
        if first == usize::MAX {
            return Err(DspError::FilterbankDegenerate { band: m });
        }
        support.push((first, last));
    }

    Ok(MelFilterbank {
        weights,
        centers_hz: edges[1..=n_mels].to_vec(),
        support,
        n_fft,
        sample_rate,
    })
}
