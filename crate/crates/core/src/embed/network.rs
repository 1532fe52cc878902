//! Sequence-to-sequence GRU autoencoder: parameters, forward pass and BPTT.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, ArrayView2, Axis};
use rand::Rng;
use rand::distr::{Distribution, Uniform};

use super::gru::{final_state, GruCache, GruLayer};
use super::{AutoencoderConfig, EmbedError, Real, Result};

#[derive(Debug, Clone, Copy)]
struct GruIdx {
    w: usize,
    u: usize,
    b: usize,
}

/// Tensor indices into [`Autoencoder::params`].
#[derive(Debug, Clone)]
struct Layout {
    /// `[layer][direction]`
    enc: Vec<Vec<GruIdx>>,
    proj_w: usize,
    proj_b: usize,
    dec: Vec<GruIdx>,
    out_w: usize,
    out_b: usize,
}

/// Autoencoder parameters for `frames x features` inputs.
#[derive(Debug, Clone)]
pub struct Autoencoder<T> {
    config: AutoencoderConfig,
    frames: usize,
    features: usize,
    layout: Layout,
    names: Vec<String>,
    params: Vec<Array2<T>>,
}

/// Everything the backward pass needs from one forward pass.
struct Trace<T> {
    steps: usize,
    batch: usize,
    /// Encoder layer inputs (already masked).
    enc_in: Vec<Array2<T>>,
    enc: Vec<Vec<GruCache<T>>>,
    /// Masks applied to encoder layer outputs feeding the next layer.
    enc_masks: Vec<Option<Array2<T>>>,
    rep: Array2<T>,
    /// `tanh` of the projected representation.
    init: Array2<T>,
    dec_in: Vec<Array2<T>>,
    dec: Vec<GruCache<T>>,
    dec_masks: Vec<Option<Array2<T>>>,
    /// Masked top decoder output.
    top: Array2<T>,
    /// Decoder output in reversed time order.
    output: Array2<T>,
}

impl<T: Real> Autoencoder<T> {
    /// Randomly initialized network: Glorot-uniform matrices, zero biases.
    pub fn new(config: AutoencoderConfig, frames: usize, features: usize, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        if frames == 0 || features == 0 {
            return Err(EmbedError::Shape(format!("empty input shape {frames}x{features}")));
        }
        let h = config.units_per_direction;
        let dirs = config.directions();
        let mut names = Vec::new();
        let mut shapes = Vec::new();
        let mut push = |name: String, shape: (usize, usize)| {
            names.push(name);
            shapes.push(shape);
            shapes.len() - 1
        };
        let gru = |prefix: String, input: usize, push: &mut dyn FnMut(String, (usize, usize)) -> usize| GruIdx {
            w: push(format!("{prefix}.w"), (input, 3 * h)),
            u: push(format!("{prefix}.u"), (h, 3 * h)),
            b: push(format!("{prefix}.b"), (1, 3 * h)),
        };
        let mut enc = Vec::new();
        for l in 0..config.num_layers {
            let input = if l == 0 { features } else { dirs * h };
            let layer = ["fwd", "bwd"][..dirs].iter().map(|d| gru(format!("enc.{l}.{d}"), input, &mut push)).collect();
            enc.push(layer);
        }
        let rep_dim = config.embedding_dim();
        let proj_w = push("proj.w".into(), (rep_dim, config.num_layers * h));
        let proj_b = push("proj.b".into(), (1, config.num_layers * h));
        let dec = (0..config.num_layers)
            .map(|l| gru(format!("dec.{l}"), if l == 0 { features } else { h }, &mut push))
            .collect();
        let out_w = push("out.w".into(), (h, features));
        let out_b = push("out.b".into(), (1, features));

        let params = names
            .iter()
            .zip(&shapes)
            .map(|(name, &(r, c))| {
                if name.ends_with(".b") {
                    Array2::zeros((r, c))
                } else {
                    let limit = (6.0 / (r + c) as f64).sqrt();
                    let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
                    Array2::from_shape_simple_fn((r, c), || T::from_f64(dist.sample(rng)).unwrap())
                }
            })
            .collect();
        let layout = Layout { enc, proj_w, proj_b, dec, out_w, out_b };
        Ok(Autoencoder { config, frames, features, layout, names, params })
    }

    pub fn config(&self) -> &AutoencoderConfig {
        &self.config
    }

    /// `(frames, features)` of accepted spectrograms.
    pub fn input_shape(&self) -> (usize, usize) {
        (self.frames, self.features)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn params(&self) -> &[Array2<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Array2<T>] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.len()).sum()
    }

    /// Replaces all tensors, checking names and shapes against this layout.
    pub fn set_params(&mut self, tensors: Vec<(String, Array2<T>)>) -> Result<()> {
        if tensors.len() != self.params.len() {
            return Err(EmbedError::Shape(format!("expected {} tensors, got {}", self.params.len(), tensors.len())));
        }
        for (i, (name, t)) in tensors.iter().enumerate() {
            if name != &self.names[i] || t.dim() != self.params[i].dim() {
                return Err(EmbedError::Shape(format!(
                    "tensor {i}: expected {} {:?}, got {name} {:?}",
                    self.names[i],
                    self.params[i].dim(),
                    t.dim()
                )));
            }
        }
        self.params = tensors.into_iter().map(|(_, t)| t).collect();
        Ok(())
    }

    /// Same architecture and values in another float type.
    pub fn cast<U: Real>(&self) -> Autoencoder<U> {
        Autoencoder {
            config: self.config.clone(),
            frames: self.frames,
            features: self.features,
            layout: self.layout.clone(),
            names: self.names.clone(),
            params: self.params.iter().map(|p| p.mapv(|v| U::from(v).unwrap())).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.iter().all(|v| v.is_finite()))
    }

    fn view(&self, i: usize) -> ArrayView2<'_, T> {
        self.params[i].view()
    }

    fn layer(&self, idx: GruIdx, steps: usize, batch: usize, reverse: bool) -> GruLayer<'_, T> {
        GruLayer { w: self.view(idx.w), u: self.view(idx.u), b: self.view(idx.b), steps, batch, reverse }
    }

    /// Packs samples into a time-major `(frames * batch) x features` matrix.
    pub fn pack(&self, samples: &[ArrayView2<T>]) -> Result<Array2<T>> {
        let batch = samples.len();
        let mut x = Array2::zeros((self.frames * batch, self.features));
        for (b, s) in samples.iter().enumerate() {
            if s.dim() != (self.frames, self.features) {
                return Err(EmbedError::Shape(format!(
                    "spectrogram is {:?}, model expects {:?}",
                    s.dim(),
                    (self.frames, self.features)
                )));
            }
            for t in 0..self.frames {
                x.row_mut(t * batch + b).assign(&s.row(t));
            }
        }
        Ok(x)
    }

    /// Time-reversed copy of a packed batch: the reconstruction target.
    fn reversed(&self, x: &Array2<T>, batch: usize) -> Array2<T> {
        let steps = self.frames;
        let mut y = Array2::zeros(x.raw_dim());
        for t in 0..steps {
            y.slice_mut(s![t * batch..(t + 1) * batch, ..]).assign(&x.slice(s![(steps - 1 - t) * batch..(steps - t) * batch, ..]));
        }
        y
    }

    fn dropout_mask(&self, rows: usize, cols: usize, rng: &mut Option<&mut dyn rand::RngCore>) -> Option<Array2<T>> {
        let p = self.config.dropout;
        let rng = rng.as_mut()?;
        if p <= 0.0 {
            return None;
        }
        let keep = T::from_f64(1.0 / (1.0 - p)).unwrap();
        Some(Array2::from_shape_simple_fn((rows, cols), || if rng.random::<f64>() < p { T::zero() } else { keep }))
    }

    /// Forward pass over a packed batch. Dropout is active iff `rng` is given.
    fn forward(&self, x: &Array2<T>, batch: usize, mut rng: Option<&mut dyn rand::RngCore>) -> Trace<T> {
        let steps = self.frames;
        let rows = steps * batch;
        let h = self.config.units_per_direction;
        let dirs = self.config.directions();
        let layers = self.config.num_layers;
        let zeros = Array2::<T>::zeros((batch, h));

        let mut enc_in = vec![x.clone()];
        let mut enc = Vec::with_capacity(layers);
        let mut enc_masks = Vec::with_capacity(layers);
        let mut rep = Array2::zeros((batch, self.config.embedding_dim()));
        for l in 0..layers {
            let caches: Vec<GruCache<T>> = (0..dirs)
                .map(|d| self.layer(self.layout.enc[l][d], steps, batch, d == 1).forward(enc_in[l].view(), zeros.view()))
                .collect();
            for (d, c) in caches.iter().enumerate() {
                let col = (l * dirs + d) * h;
                rep.slice_mut(s![.., col..col + h]).assign(&final_state(&c.out, steps, batch, d == 1));
            }
            if l + 1 < layers {
                let mut next = Array2::zeros((rows, dirs * h));
                for (d, c) in caches.iter().enumerate() {
                    next.slice_mut(s![.., d * h..(d + 1) * h]).assign(&c.out);
                }
                let mask = self.dropout_mask(rows, dirs * h, &mut rng);
                if let Some(m) = &mask {
                    next *= m;
                }
                enc_masks.push(mask);
                enc_in.push(next);
            } else {
                enc_masks.push(None);
            }
            enc.push(caches);
        }

        let mut init = Array2::zeros((batch, layers * h));
        general_mat_mul(T::one(), &rep, &self.view(self.layout.proj_w), T::zero(), &mut init);
        init += &self.view(self.layout.proj_b);
        init.mapv_inplace(|v| v.tanh());

        // teacher forcing: step t sees target t - 1, step 0 sees zeros
        let target = self.reversed(x, batch);
        let mut first = Array2::zeros(x.raw_dim());
        first.slice_mut(s![batch.., ..]).assign(&target.slice(s![..rows - batch, ..]));

        let mut dec_in = vec![first];
        let mut dec = Vec::with_capacity(layers);
        let mut dec_masks = Vec::with_capacity(layers);
        for l in 0..layers {
            let h0 = init.slice(s![.., l * h..(l + 1) * h]);
            let cache = self.layer(self.layout.dec[l], steps, batch, false).forward(dec_in[l].view(), h0);
            let mut out = cache.out.clone();
            let mask = self.dropout_mask(rows, h, &mut rng);
            if let Some(m) = &mask {
                out *= m;
            }
            dec_masks.push(mask);
            dec_in.push(out);
            dec.push(cache);
        }
        let top = dec_in.pop().expect("at least one decoder layer");
        let mut output = Array2::zeros((rows, self.features));
        general_mat_mul(T::one(), &top, &self.view(self.layout.out_w), T::zero(), &mut output);
        output += &self.view(self.layout.out_b);

        Trace { steps, batch, enc_in, enc, enc_masks, rep, init, dec_in, dec, dec_masks, top, output }
    }

    /// Gradients of `sum(dL/do * o)` for a given output gradient.
    fn backward(&self, trace: &Trace<T>, d_output: &Array2<T>) -> Vec<Array2<T>> {
        let (steps, batch) = (trace.steps, trace.batch);
        let h = self.config.units_per_direction;
        let dirs = self.config.directions();
        let layers = self.config.num_layers;
        let lay = &self.layout;
        let mut grads: Vec<Array2<T>> = self.params.iter().map(|p| Array2::zeros(p.raw_dim())).collect();

        grads[lay.out_w] = trace.top.t().dot(d_output);
        grads[lay.out_b] = d_output.sum_axis(Axis(0)).insert_axis(Axis(0));
        let mut d_seq = d_output.dot(&self.view(lay.out_w).t());

        let mut d_init = Array2::<T>::zeros((batch, layers * h));
        for l in (0..layers).rev() {
            if let Some(m) = &trace.dec_masks[l] {
                d_seq *= m;
            }
            let idx = lay.dec[l];
            let g = self.layer(idx, steps, batch, false).backward(
                trace.dec_in[l].view(),
                &trace.dec[l],
                Some(d_seq.view()),
                Array2::zeros((batch, h)).view(),
                l > 0,
            );
            grads[idx.w] = g.dw;
            grads[idx.u] = g.du;
            grads[idx.b] = g.db;
            d_init.slice_mut(s![.., l * h..(l + 1) * h]).assign(&g.dh0);
            if let Some(dx) = g.dx {
                d_seq = dx;
            }
        }

        // back through tanh(rep Wp + bp)
        let d_pre = &d_init * &trace.init.mapv(|v| T::one() - v * v);
        grads[lay.proj_w] = trace.rep.t().dot(&d_pre);
        grads[lay.proj_b] = d_pre.sum_axis(Axis(0)).insert_axis(Axis(0));
        let d_rep = d_pre.dot(&self.view(lay.proj_w).t());

        let mut d_above: Option<Array2<T>> = None;
        for l in (0..layers).rev() {
            let mut d_in: Option<Array2<T>> = None;
            for d in 0..dirs {
                let idx = lay.enc[l][d];
                let col = (l * dirs + d) * h;
                let d_out = d_above.as_ref().map(|a| a.slice(s![.., d * h..(d + 1) * h]));
                let g = self.layer(idx, steps, batch, d == 1).backward(
                    trace.enc_in[l].view(),
                    &trace.enc[l][d],
                    d_out,
                    d_rep.slice(s![.., col..col + h]),
                    l > 0,
                );
                grads[idx.w] = g.dw;
                grads[idx.u] = g.du;
                grads[idx.b] = g.db;
                if let Some(dx) = g.dx {
                    match &mut d_in {
                        Some(acc) => *acc += &dx,
                        None => d_in = Some(dx),
                    }
                }
            }
            if let (Some(acc), Some(m)) = (&mut d_in, l.checked_sub(1).and_then(|p| trace.enc_masks[p].as_ref())) {
                *acc *= m;
            }
            d_above = d_in;
        }
        grads
    }

    /// RMSE loss on a packed batch with its parameter gradients.
    /// Returns `(loss, sum of squared errors, gradients)`.
    pub(crate) fn loss_and_grad(
        &self,
        x: &Array2<T>,
        batch: usize,
        rng: Option<&mut dyn rand::RngCore>,
    ) -> (T, T, Vec<Array2<T>>) {
        let trace = self.forward(x, batch, rng);
        let target = self.reversed(x, batch);
        let diff = &trace.output - &target;
        let sse = diff.iter().fold(T::zero(), |acc, &d| acc + d * d);
        let count = T::from_usize(diff.len()).unwrap();
        let loss = (sse / count).sqrt();
        // d sqrt(mean(d^2)) / d o = d / (N * loss)
        let scale = if loss > T::zero() { T::one() / (count * loss) } else { T::zero() };
        let d_output = diff * scale;
        let grads = self.backward(&trace, &d_output);
        (loss, sse, grads)
    }

    /// Loss without dropout and without gradients.
    pub fn loss(&self, x: &Array2<T>, batch: usize) -> (T, T) {
        let trace = self.forward(x, batch, None);
        let target = self.reversed(x, batch);
        let sse = trace.output.iter().zip(target.iter()).fold(T::zero(), |acc, (&o, &y)| acc + (o - y) * (o - y));
        ((sse / T::from_usize(target.len()).unwrap()).sqrt(), sse)
    }

    /// Final encoder states, `batch x embedding_dim`, layer-major with the
    /// forward direction first.
    pub fn encode_packed(&self, x: &Array2<T>, batch: usize) -> Array2<T> {
        self.forward_encoder_only(x, batch)
    }

    fn forward_encoder_only(&self, x: &Array2<T>, batch: usize) -> Array2<T> {
        let steps = self.frames;
        let h = self.config.units_per_direction;
        let dirs = self.config.directions();
        let zeros = Array2::<T>::zeros((batch, h));
        let mut rep = Array2::zeros((batch, self.config.embedding_dim()));
        let mut input = x.clone();
        for l in 0..self.config.num_layers {
            let mut next = Array2::zeros((steps * batch, dirs * h));
            for d in 0..dirs {
                let c = self.layer(self.layout.enc[l][d], steps, batch, d == 1).forward(input.view(), zeros.view());
                let col = (l * dirs + d) * h;
                rep.slice_mut(s![.., col..col + h]).assign(&final_state(&c.out, steps, batch, d == 1));
                next.slice_mut(s![.., d * h..(d + 1) * h]).assign(&c.out);
            }
            input = next;
        }
        rep
    }

    /// Decoder output for a packed batch, restored to input time order.
    pub fn reconstruct_packed(&self, x: &Array2<T>, batch: usize) -> Array2<T> {
        let trace = self.forward(x, batch, None);
        self.reversed(&trace.output, batch)
    }
}
