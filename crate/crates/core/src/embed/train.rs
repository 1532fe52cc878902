use ndarray::{Array2, ArrayView2};
use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::model::EncoderModel;
use super::network::Autoencoder;
use super::{AutoencoderConfig, EmbedError, Real, Result};

/// Adaptive-moment optimizer with bias correction.
pub struct Adam<T> {
    lr: T,
    beta1: T,
    beta2: T,
    eps: T,
    step: i32,
    m: Vec<Array2<T>>,
    v: Vec<Array2<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(params: &[Array2<T>], learning_rate: f64) -> Self {
        let zeros = || params.iter().map(|p| Array2::zeros(p.raw_dim())).collect();
        Adam {
            lr: T::from_f64(learning_rate).unwrap(),
            beta1: T::from_f64(0.9).unwrap(),
            beta2: T::from_f64(0.999).unwrap(),
            eps: T::from_f64(1e-7).unwrap(),
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn step(&mut self, params: &mut [Array2<T>], grads: &[Array2<T>]) {
        self.step += 1;
        let one = T::one();
        let c1 = one - self.beta1.powi(self.step);
        let c2 = one - self.beta2.powi(self.step);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            ndarray::Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            });
        }
    }
}

fn check_shapes(data: &[ArrayView2<f32>]) -> Result<(usize, usize)> {
    let first = data.first().ok_or(EmbedError::EmptyDataset)?.dim();
    if let Some(bad) = data.iter().position(|d| d.dim() != first) {
        return Err(EmbedError::Shape(format!("sample {bad} is {:?}, expected {first:?}", data[bad].dim())));
    }
    Ok(first)
}

/// RMSE of the untrained or trained network over a dataset, without dropout.
fn dataset_rmse(net: &Autoencoder<f32>, data: &[ArrayView2<f32>], batch: usize) -> Result<f64> {
    let mut sse = 0.0;
    let mut count = 0usize;
    for chunk in data.chunks(batch) {
        let x = net.pack(chunk)?;
        sse += net.loss(&x, chunk.len()).1 as f64;
        count += x.len();
    }
    Ok((sse / count as f64).sqrt())
}

/// Trains an autoencoder on equally shaped spectrograms. Fully
/// deterministic for a given `config.seed`.
pub fn train_autoencoder(data: &[ArrayView2<f32>], config: &AutoencoderConfig) -> Result<EncoderModel> {
    let (frames, features) = check_shapes(data)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut net = Autoencoder::<f32>::new(config.clone(), frames, features, &mut rng)?;
    let initial_rmse = dataset_rmse(&net, data, config.batch_size)?;
    let mut adam = Adam::new(net.params(), config.learning_rate);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut sse = 0.0f64;
        let mut count = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let samples: Vec<_> = chunk.iter().map(|&i| data[i]).collect();
            let x = net.pack(&samples)?;
            let (loss, batch_sse, grads) = net.loss_and_grad(&x, chunk.len(), Some(&mut rng));
            if !loss.is_finite() {
                return Err(EmbedError::TrainingDiverged { epoch, loss: loss as f64 });
            }
            adam.step(net.params_mut(), &grads);
            sse += batch_sse as f64;
            count += x.len();
        }
        let rmse = (sse / count as f64).sqrt();
        if !rmse.is_finite() || !net.all_finite() {
            return Err(EmbedError::TrainingDiverged { epoch, loss: rmse });
        }
        log::info!("epoch {}/{}: rmse {rmse:.5}", epoch + 1, config.epochs);
        history.push(rmse);
    }
    Ok(EncoderModel { net, history, initial_rmse })
}

/// Deterministic subset of at most `max` indices, returned sorted.
pub fn select_training_subset(n: usize, max: Option<usize>, seed: u64) -> Vec<usize> {
    match max {
        Some(max) if n > max => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut idx = index::sample(&mut rng, n, max).into_vec();
            idx.sort_unstable();
            idx
        }
        _ => (0..n).collect(),
    }
}

const ENCODE_BATCH: usize = 64;

pub fn encode(model: &EncoderModel, spectrogram: ArrayView2<f32>) -> Result<Vec<f32>> {
    Ok(encode_batch(model, &[spectrogram])?.row(0).to_vec())
}

/// Embeddings for many spectrograms, one row each.
pub fn encode_batch(model: &EncoderModel, spectrograms: &[ArrayView2<f32>]) -> Result<Array2<f32>> {
    let net = &model.net;
    let mut out = Array2::zeros((spectrograms.len(), net.config().embedding_dim()));
    for (i, chunk) in spectrograms.chunks(ENCODE_BATCH).enumerate() {
        let x = net.pack(chunk)?;
        let rep = net.encode_packed(&x, chunk.len());
        let start = i * ENCODE_BATCH;
        out.slice_mut(ndarray::s![start..start + chunk.len(), ..]).assign(&rep);
    }
    Ok(out)
}

/// Decoder output in input time order.
pub fn reconstruct(model: &EncoderModel, spectrogram: ArrayView2<f32>) -> Result<Array2<f32>> {
    let x = model.net.pack(&[spectrogram])?;
    Ok(model.net.reconstruct_packed(&x, 1))
}

pub fn rmse(a: ArrayView2<f32>, b: ArrayView2<f32>) -> f64 {
    assert_eq!(a.dim(), b.dim());
    let sse: f64 = a.iter().zip(b.iter()).map(|(&x, &y)| ((x - y) as f64).powi(2)).sum();
    (sse / a.len().max(1) as f64).sqrt()
}

/// RMSE of predicting every sample by the elementwise dataset mean.
pub fn constant_baseline_rmse(data: &[ArrayView2<f32>]) -> Result<f64> {
    let (frames, features) = check_shapes(data)?;
    let mut mean = Array2::<f64>::zeros((frames, features));
    for d in data {
        mean += &d.mapv(f64::from);
    }
    mean /= data.len() as f64;
    let sse: f64 = data.iter().map(|d| d.iter().zip(mean.iter()).map(|(&x, &m)| (x as f64 - m).powi(2)).sum::<f64>()).sum();
    Ok((sse / (data.len() * frames * features) as f64).sqrt())
}

/// Loss and analytic gradients for one sample, without dropout.
pub fn loss_gradient<T: Real>(net: &Autoencoder<T>, sample: ArrayView2<T>) -> Result<(T, Vec<Array2<T>>)> {
    let x = net.pack(&[sample])?;
    let (loss, _, grads) = net.loss_and_grad(&x, 1, None);
    Ok((loss, grads))
}

/// Analytic gradient of the output bias for one sample.
pub fn output_bias_gradient<T: Real>(net: &Autoencoder<T>, sample: ArrayView2<T>) -> Result<Vec<T>> {
    let (_, grads) = loss_gradient(net, sample)?;
    let i = net.names().iter().position(|n| n == "out.b").expect("output bias exists");
    Ok(grads[i].iter().copied().collect())
}

/// Largest relative error between analytic gradients and central finite
/// differences over `coords` randomly chosen parameters.
///
/// Relative error is `|a - n| / max(|a| + |n|, 1e-8)`.
pub fn gradient_check(net: &Autoencoder<f64>, sample: ArrayView2<f64>, epsilon: f64, coords: usize, seed: u64) -> Result<f64> {
    let (_, analytic) = loss_gradient(net, sample)?;
    let x = net.pack(&[sample])?;
    let sizes: Vec<usize> = net.params().iter().map(|p| p.len()).collect();
    let total: usize = sizes.iter().sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks: Vec<usize> = if coords >= total {
        (0..total).collect()
    } else {
        (0..coords).map(|_| rng.random_range(0..total)).collect()
    };

    let mut probe = net.clone();
    let mut worst = 0.0f64;
    for flat in picks {
        let (mut tensor, mut offset) = (0, flat);
        while offset >= sizes[tensor] {
            offset -= sizes[tensor];
            tensor += 1;
        }
        let original = net.params()[tensor].as_slice().expect("contiguous")[offset];
        let mut loss_at = |v: f64| {
            probe.params_mut()[tensor].as_slice_mut().expect("contiguous")[offset] = v;
            probe.loss(&x, 1).0
        };
        let plus = loss_at(original + epsilon);
        let minus = loss_at(original - epsilon);
        loss_at(original);
        let numeric = (plus - minus) / (2.0 * epsilon);
        let a = analytic[tensor].as_slice().expect("contiguous")[offset];
        let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn tiny(layers: usize, units: usize, bidirectional: bool, frames: usize, features: usize, seed: u64) -> Autoencoder<f64> {
        let config = AutoencoderConfig {
            num_layers: layers,
            units_per_direction: units,
            bidirectional_encoder: bidirectional,
            dropout: 0.0,
            ..AutoencoderConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Autoencoder::new(config, frames, features, &mut rng).unwrap()
    }

    fn sample(frames: usize, features: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_simple_fn((frames, features), || rng.random_range(-1.0..1.0))
    }

    #[test]
    fn gradient_check_tiny_config() {
        let net = tiny(1, 4, true, 3, 4, 1);
        let err = gradient_check(&net, sample(3, 4, 2).view(), 1e-5, 400, 3).unwrap();
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn gradient_check_two_layers() {
        let net = tiny(2, 3, true, 4, 3, 5);
        let err = gradient_check(&net, sample(4, 3, 6).view(), 1e-5, 10_000, 7).unwrap();
        assert!(err < 1e-4, "max relative error {err}");
        let net = tiny(2, 3, false, 4, 3, 5);
        assert!(gradient_check(&net, sample(4, 3, 6).view(), 1e-5, 10_000, 7).unwrap() < 1e-4);
    }

    #[test]
    fn halving_epsilon_keeps_error_bounded() {
        let net = tiny(1, 4, true, 3, 4, 11);
        let x = sample(3, 4, 12);
        let coarse = gradient_check(&net, x.view(), 1e-4, 300, 13).unwrap();
        let fine = gradient_check(&net, x.view(), 5e-5, 300, 13).unwrap();
        assert!(fine <= 4.0 * coarse, "{fine} vs {coarse}");
    }

    #[test]
    fn output_bias_gradient_matches_closed_form() {
        let (frames, features) = (3, 4);
        let mut net = tiny(1, 4, true, frames, features, 21);
        let c = [0.3, -0.7, 0.1, 0.5];
        let wo = net.names().iter().position(|n| n == "out.w").unwrap();
        let bo = net.names().iter().position(|n| n == "out.b").unwrap();
        net.params_mut()[wo].fill(0.0);
        net.params_mut()[bo] = Array2::from_shape_vec((1, features), c.to_vec()).unwrap();
        let zeros = Array2::<f64>::zeros((frames, features));
        let grad = output_bias_gradient(&net, zeros.view()).unwrap();
        // L = sqrt(sum_f c_f^2 / F), dL/dc_f = c_f / (F L)
        let loss = (c.iter().map(|v| v * v).sum::<f64>() / features as f64).sqrt();
        for (g, cf) in grad.iter().zip(c) {
            assert!((g - cf / (features as f64 * loss)).abs() < 1e-12);
        }
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut p = vec![Array2::from_elem((1, 2), 1.0f64)];
        let g = vec![Array2::from_shape_vec((1, 2), vec![0.5, -2.0]).unwrap()];
        let mut adam = Adam::new(&p, 0.01);
        adam.step(&mut p, &g);
        assert!((p[0][[0, 0]] - 0.99).abs() < 1e-6);
        assert!((p[0][[0, 1]] - 1.01).abs() < 1e-6);
    }

    #[test]
    fn subset_is_sorted_and_deterministic() {
        let a = select_training_subset(5000, Some(2000), 9);
        assert_eq!(a.len(), 2000);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(a, select_training_subset(5000, Some(2000), 9));
        assert_eq!(select_training_subset(10, Some(2000), 9), (0..10).collect::<Vec<_>>());
    }
}
