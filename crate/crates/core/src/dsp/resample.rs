/// Scales 16-bit PCM to `[-1, 1)`.
pub fn pcm_to_f32(samples: &[i16]) -> Vec<f32> {
    samples.iter().map(|&s| s as f32 / 32768.0).collect()
}

/// Linear-interpolation resampler. The output has
/// `round(len * target / source)` samples; empty input gives empty output.
///
/// There is no anti-aliasing filter, so content above the target Nyquist
/// frequency folds back.
pub fn resample_mono(pcm: &[f32], source_rate: u32, target_rate: u32) -> Vec<f32> {
    assert!(source_rate > 0, "source rate must be positive");
    if pcm.is_empty() || target_rate == 0 {
        return Vec::new();
    }
    if source_rate == target_rate {
        return pcm.to_vec();
    }
    let out_len = (pcm.len() as f64 * target_rate as f64 / source_rate as f64).round() as usize;
    let step = source_rate as f64 / target_rate as f64;
    let last = pcm.len() - 1;
    (0..out_len)
        .map(|i| {
            let pos = i as f64 * step;
            let j = pos.floor() as usize;
            if j >= last {
                return pcm[last];
            }
            let frac = (pos - j as f64) as f32;
            pcm[j] + (pcm[j + 1] - pcm[j]) * frac
        })
        .collect()
}
