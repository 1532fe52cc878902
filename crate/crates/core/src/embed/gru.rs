//! Single-direction GRU layer over time-major batched sequences.
//!
//! Sequences are `(steps * batch) x features` matrices whose row
//! `t * batch + b` holds time step `t` of sample `b`. Gate columns are laid
//! out `[z | r | n]`:
//!
//! ```text
//! z = sigmoid(x Wz + h Uz + bz)
//! r = sigmoid(x Wr + h Ur + br)
//! n = tanh(x Wn + r * (h Un) + bn)
//! h' = (1 - z) * n + z * h
//! ```

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, ArrayView2, Axis};

use super::Real;

/// Activations kept from the forward pass for backpropagation.
pub(crate) struct GruCache<T> {
    pub out: Array2<T>,
    hprev: Array2<T>,
    z: Array2<T>,
    r: Array2<T>,
    n: Array2<T>,
    /// `h Un`, needed for the reset-gate gradient.
    ghn: Array2<T>,
}

pub(crate) struct GruGrads<T> {
    pub dw: Array2<T>,
    pub du: Array2<T>,
    pub db: Array2<T>,
    pub dx: Option<Array2<T>>,
    pub dh0: Array2<T>,
}

fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

pub(crate) struct GruLayer<'a, T> {
    pub w: ArrayView2<'a, T>,
    pub u: ArrayView2<'a, T>,
    pub b: ArrayView2<'a, T>,
    pub steps: usize,
    pub batch: usize,
    pub reverse: bool,
}

impl<T: Real> GruLayer<'_, T> {
    fn hidden(&self) -> usize {
        self.u.nrows()
    }

    fn time_at(&self, step: usize) -> usize {
        if self.reverse {
            self.steps - 1 - step
        } else {
            step
        }
    }

    /// Runs the layer from `h0`. The output sequence is indexed by input time,
    /// so a reverse layer's final state sits at `t = 0`.
    pub fn forward(&self, x: ArrayView2<T>, h0: ArrayView2<T>) -> GruCache<T> {
        let (hs, bs) = (self.hidden(), self.batch);
        let rows = self.steps * bs;
        debug_assert_eq!(x.nrows(), rows);

        let mut gx = Array2::zeros((rows, 3 * hs));
        general_mat_mul(T::one(), &x, &self.w, T::zero(), &mut gx);
        gx += &self.b;

        let mut cache = GruCache {
            out: Array2::zeros((rows, hs)),
            hprev: Array2::zeros((rows, hs)),
            z: Array2::zeros((rows, hs)),
            r: Array2::zeros((rows, hs)),
            n: Array2::zeros((rows, hs)),
            ghn: Array2::zeros((rows, hs)),
        };
        let mut h = h0.to_owned();
        let mut gh = Array2::zeros((bs, 3 * hs));
        for step in 0..self.steps {
            let t = self.time_at(step);
            general_mat_mul(T::one(), &h, &self.u, T::zero(), &mut gh);
            let range = t * bs..(t + 1) * bs;
            cache.hprev.slice_mut(s![range.clone(), ..]).assign(&h);
            let gx_t = gx.slice(s![range.clone(), ..]);
            let gx_t = gx_t.as_slice().expect("contiguous");
            let gh_s = gh.as_slice().expect("contiguous");
            let h_s = h.as_slice_mut().expect("contiguous");
            let off = t * bs * hs;
            let z_s = &mut cache.z.as_slice_mut().unwrap()[off..off + bs * hs];
            let r_s = &mut cache.r.as_slice_mut().unwrap()[off..off + bs * hs];
            let n_s = &mut cache.n.as_slice_mut().unwrap()[off..off + bs * hs];
            let ghn_s = &mut cache.ghn.as_slice_mut().unwrap()[off..off + bs * hs];
            for b in 0..bs {
                let g = b * 3 * hs;
                for j in 0..hs {
                    let k = b * hs + j;
                    let z = sigmoid(gx_t[g + j] + gh_s[g + j]);
                    let r = sigmoid(gx_t[g + hs + j] + gh_s[g + hs + j]);
                    let ghn = gh_s[g + 2 * hs + j];
                    let n = (gx_t[g + 2 * hs + j] + r * ghn).tanh();
                    z_s[k] = z;
                    r_s[k] = r;
                    n_s[k] = n;
                    ghn_s[k] = ghn;
                    h_s[k] = (T::one() - z) * n + z * h_s[k];
                }
            }
            cache.out.slice_mut(s![range, ..]).assign(&h);
        }
        cache
    }

    /// Backpropagates `d_out` (gradient w.r.t. every output, may be absent)
    /// plus `dh_final` (gradient w.r.t. the last processed state).
    pub fn backward(
        &self,
        x: ArrayView2<T>,
        cache: &GruCache<T>,
        d_out: Option<ArrayView2<T>>,
        dh_final: ArrayView2<T>,
        need_dx: bool,
    ) -> GruGrads<T> {
        let (hs, bs) = (self.hidden(), self.batch);
        let rows = self.steps * bs;
        let mut dgx = Array2::<T>::zeros((rows, 3 * hs));
        let mut dgh = Array2::<T>::zeros((rows, 3 * hs));
        let mut dh = dh_final.to_owned();
        let mut dh_prev = Array2::<T>::zeros((bs, hs));
        let ut = self.u.t();

        for step in (0..self.steps).rev() {
            let t = self.time_at(step);
            let off = t * bs * hs;
            if let Some(d) = &d_out {
                dh += &d.slice(s![t * bs..(t + 1) * bs, ..]);
            }
            let z_s = &cache.z.as_slice().unwrap()[off..off + bs * hs];
            let r_s = &cache.r.as_slice().unwrap()[off..off + bs * hs];
            let n_s = &cache.n.as_slice().unwrap()[off..off + bs * hs];
            let ghn_s = &cache.ghn.as_slice().unwrap()[off..off + bs * hs];
            let hp_s = &cache.hprev.as_slice().unwrap()[off..off + bs * hs];
            let dh_s = dh.as_slice().unwrap();
            let goff = t * bs * 3 * hs;
            let dgx_t = &mut dgx.as_slice_mut().unwrap()[goff..goff + bs * 3 * hs];
            let dgh_t = &mut dgh.as_slice_mut().unwrap()[goff..goff + bs * 3 * hs];
            let dhp_s = dh_prev.as_slice_mut().unwrap();
            for b in 0..bs {
                let g = b * 3 * hs;
                for j in 0..hs {
                    let k = b * hs + j;
                    let (z, r, n) = (z_s[k], r_s[k], n_s[k]);
                    let d = dh_s[k];
                    let dan = d * (T::one() - z) * (T::one() - n * n);
                    let daz = d * (hp_s[k] - n) * z * (T::one() - z);
                    let dar = dan * ghn_s[k] * r * (T::one() - r);
                    dgx_t[g + j] = daz;
                    dgx_t[g + hs + j] = dar;
                    dgx_t[g + 2 * hs + j] = dan;
                    dgh_t[g + j] = daz;
                    dgh_t[g + hs + j] = dar;
                    dgh_t[g + 2 * hs + j] = dan * r;
                    dhp_s[k] = d * z;
                }
            }
            let dgh_step = dgh.slice(s![t * bs..(t + 1) * bs, ..]);
            general_mat_mul(T::one(), &dgh_step, &ut, T::one(), &mut dh_prev);
            std::mem::swap(&mut dh, &mut dh_prev);
        }

        let mut dw = Array2::zeros(self.w.raw_dim());
        general_mat_mul(T::one(), &x.t(), &dgx, T::zero(), &mut dw);
        let mut du = Array2::zeros(self.u.raw_dim());
        general_mat_mul(T::one(), &cache.hprev.t(), &dgh, T::zero(), &mut du);
        let db = dgx.sum_axis(Axis(0)).insert_axis(Axis(0));
        let dx = need_dx.then(|| {
            let mut dx = Array2::zeros((rows, self.w.nrows()));
            general_mat_mul(T::one(), &dgx, &self.w.t(), T::zero(), &mut dx);
            dx
        });
        GruGrads { dw, du, db, dx, dh0: dh }
    }
}

/// Final state of a layer run: last time step forward, first when reversed.
pub(crate) fn final_state<T: Real>(out: &Array2<T>, steps: usize, batch: usize, reverse: bool) -> ArrayView2<'_, T> {
    let t = if reverse { 0 } else { steps - 1 };
    out.slice(s![t * batch..(t + 1) * batch, ..])
}
