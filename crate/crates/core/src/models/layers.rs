//! Layers with explicit forward caches and backward passes.
//!
//! Every `backward` accumulates parameter gradients into a same-shaped layer
//! (`grads`) so that per-item contributions can be summed in a fixed order.

use ndarray::{s, Array1, Array2, Array3, ArrayView1, ArrayView2, ArrayView3, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::kernels::sigmoid;

/// Output length and leading pad for "same" padding with the given stride.
pub fn same_padding(len: usize, kernel: usize, stride: usize) -> (usize, usize) {
    let out = len.div_ceil(stride);
    let total = ((out - 1) * stride + kernel).saturating_sub(len);
    (out, total / 2)
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, fan_in: usize) -> Vec<f64> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
}

/// 2-D convolution with "same" padding followed by ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvRelu {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    /// (out_channels, in_channels * kernel * kernel)
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct ConvCache {
    input: Array3<f64>,
    output: Array3<f64>,
}

impl ConvCache {
    pub fn output(&self) -> &Array3<f64> {
        &self.output
    }
}

impl ConvRelu {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        let weight = Array2::from_shape_vec(
            (out_channels, fan_in),
            uniform(rng, out_channels * fan_in, fan_in),
        )
        .expect("conv weight shape");
        let bias = Array1::from(uniform(rng, out_channels, fan_in));
        ConvRelu {
            in_channels,
            out_channels,
            kernel,
            stride,
            weight,
            bias,
        }
    }

    pub fn zeros_like(&self) -> Self {
        ConvRelu {
            weight: Array2::zeros(self.weight.raw_dim()),
            bias: Array1::zeros(self.bias.raw_dim()),
            ..*self
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn output_dims(&self, h: usize, w: usize) -> (usize, usize) {
        (
            same_padding(h, self.kernel, self.stride).0,
            same_padding(w, self.kernel, self.stride).0,
        )
    }

    /// Multiply-accumulates for one (h, w) input.
    pub fn macs(&self, h: usize, w: usize) -> u64 {
        let (oh, ow) = self.output_dims(h, w);
        (self.weight.len() * oh * ow) as u64
    }

    fn im2col(&self, x: ArrayView3<'_, f64>) -> (Array2<f64>, usize, usize) {
        let (c, h, w) = x.dim();
        let k = self.kernel;
        let (oh, pt) = same_padding(h, k, self.stride);
        let (ow, pl) = same_padding(w, k, self.stride);
        let mut cols = Array2::zeros((c * k * k, oh * ow));
        for ci in 0..c {
            for ky in 0..k {
                for kx in 0..k {
                    let mut row = cols.row_mut((ci * k + ky) * k + kx);
                    let row = row.as_slice_mut().expect("contiguous row");
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ky) as isize - pt as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src = x.slice(s![ci, iy as usize, ..]);
                        let dst = &mut row[oy * ow..(oy + 1) * ow];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * self.stride + kx) as isize - pl as isize;
                            if ix >= 0 && ix < w as isize {
                                *d = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
        (cols, oh, ow)
    }

    fn col2im(&self, dcols: &Array2<f64>, c: usize, h: usize, w: usize) -> Array3<f64> {
        let k = self.kernel;
        let (oh, pt) = same_padding(h, k, self.stride);
        let (ow, pl) = same_padding(w, k, self.stride);
        let mut dx = Array3::zeros((c, h, w));
        for ci in 0..c {
            for ky in 0..k {
                for kx in 0..k {
                    let row = dcols.row((ci * k + ky) * k + kx);
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ky) as isize - pt as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for ox in 0..ow {
                            let ix = (ox * self.stride + kx) as isize - pl as isize;
                            if ix >= 0 && ix < w as isize {
                                dx[[ci, iy as usize, ix as usize]] += row[oy * ow + ox];
                            }
                        }
                    }
                }
            }
        }
        dx
    }

    pub fn forward(&self, x: ArrayView3<'_, f64>) -> (Array3<f64>, ConvCache) {
        debug_assert_eq!(x.dim().0, self.in_channels);
        let (cols, oh, ow) = self.im2col(x);
        let mut out = self.weight.dot(&cols);
        for (mut row, &b) in out.rows_mut().into_iter().zip(self.bias.iter()) {
            row.mapv_inplace(|v| (v + b).max(0.0));
        }
        let out = out
            .into_shape_with_order((self.out_channels, oh, ow))
            .expect("conv output reshape");
        (
            out.clone(),
            ConvCache {
                input: x.to_owned(),
                output: out,
            },
        )
    }

    /// Accumulates parameter gradients; returns the input gradient when requested.
    pub fn backward(
        &self,
        cache: &ConvCache,
        d_out: ArrayView3<'_, f64>,
        grads: &mut ConvRelu,
        input_grad: bool,
    ) -> Option<Array3<f64>> {
        let (oc, oh, ow) = cache.output.dim();
        let mut d_pre = d_out.to_owned();
        ndarray::Zip::from(&mut d_pre)
            .and(&cache.output)
            .for_each(|d, &y| {
                if y <= 0.0 {
                    *d = 0.0;
                }
            });
        let d_pre = d_pre
            .into_shape_with_order((oc, oh * ow))
            .expect("conv grad reshape");
        let (cols, _, _) = self.im2col(cache.input.view());
        grads.weight += &d_pre.dot(&cols.t());
        grads.bias += &d_pre.sum_axis(Axis(1));
        if input_grad {
            let dcols = self.weight.t().dot(&d_pre);
            let (c, h, w) = cache.input.dim();
            Some(self.col2im(&dcols, c, h, w))
        } else {
            None
        }
    }
}

/// 2x2 max pooling with stride 2 (trailing odd rows/columns dropped).
#[derive(Debug, Clone)]
pub struct PoolCache {
    input_dim: (usize, usize, usize),
    argmax: Vec<usize>,
}

pub fn max_pool2(x: ArrayView3<'_, f64>) -> (Array3<f64>, PoolCache) {
    let (c, h, w) = x.dim();
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Array3::zeros((c, oh.max(1), ow.max(1)));
    let mut argmax = Vec::with_capacity(c * oh.max(1) * ow.max(1));
    for ci in 0..c {
        for oy in 0..oh.max(1) {
            for ox in 0..ow.max(1) {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = 0;
                for dy in 0..2.min(h) {
                    for dx in 0..2.min(w) {
                        let (y, xx) = (oy * 2 + dy, ox * 2 + dx);
                        let v = x[[ci, y, xx]];
                        if v > best {
                            best = v;
                            best_idx = (ci * h + y) * w + xx;
                        }
                    }
                }
                out[[ci, oy, ox]] = best;
                argmax.push(best_idx);
            }
        }
    }
    (
        out,
        PoolCache {
            input_dim: (c, h, w),
            argmax,
        },
    )
}

pub fn max_pool2_backward(cache: &PoolCache, d_out: ArrayView3<'_, f64>) -> Array3<f64> {
    let mut dx = Array3::zeros(cache.input_dim);
    let flat = dx.as_slice_mut().expect("contiguous");
    for (&idx, &d) in cache.argmax.iter().zip(d_out.iter()) {
        flat[idx] += d;
    }
    dx
}

/// Output size of [`max_pool2`].
pub fn pool_dims(h: usize, w: usize) -> (usize, usize) {
    ((h / 2).max(1), (w / 2).max(1))
}

/// Unidirectional LSTM, gate order (input, forget, cell, output).
#[derive(Debug, Clone, PartialEq)]
pub struct Lstm {
    pub input_size: usize,
    pub hidden: usize,
    /// (4 * hidden, input_size)
    pub w_ih: Array2<f64>,
    /// (4 * hidden, hidden)
    pub w_hh: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct LstmCache {
    input: Array2<f64>,
    /// Activated gates per step: (T, 4H).
    gates: Array2<f64>,
    cells: Array2<f64>,
    hiddens: Array2<f64>,
}

impl LstmCache {
    /// Hidden states, (T, H).
    pub fn hiddens(&self) -> &Array2<f64> {
        &self.hiddens
    }
}

impl Lstm {
    pub fn new(input_size: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let w_ih = Array2::from_shape_vec(
            (4 * hidden, input_size),
            uniform(rng, 4 * hidden * input_size, hidden),
        )
        .expect("lstm w_ih");
        let w_hh = Array2::from_shape_vec((4 * hidden, hidden), uniform(rng, 4 * hidden * hidden, hidden))
            .expect("lstm w_hh");
        let mut bias = Array1::from(uniform(rng, 4 * hidden, hidden));
        // forget-gate bias starts at 1
        bias.slice_mut(s![hidden..2 * hidden]).fill(1.0);
        Lstm {
            input_size,
            hidden,
            w_ih,
            w_hh,
            bias,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Lstm {
            input_size: self.input_size,
            hidden: self.hidden,
            w_ih: Array2::zeros(self.w_ih.raw_dim()),
            w_hh: Array2::zeros(self.w_hh.raw_dim()),
            bias: Array1::zeros(self.bias.raw_dim()),
        }
    }

    pub fn param_count(&self) -> usize {
        self.w_ih.len() + self.w_hh.len() + self.bias.len()
    }

    pub fn macs(&self, steps: usize) -> u64 {
        (steps * 4 * self.hidden * (self.input_size + self.hidden)) as u64
    }

    /// Runs over `x` of shape (T, input_size).
    pub fn forward(&self, x: ArrayView2<'_, f64>) -> LstmCache {
        let steps = x.nrows();
        let hd = self.hidden;
        let mut pre = x.dot(&self.w_ih.t());
        pre += &self.bias;
        let mut gates = Array2::zeros((steps, 4 * hd));
        let mut cells = Array2::zeros((steps, hd));
        let mut hiddens = Array2::zeros((steps, hd));
        let mut h = Array1::<f64>::zeros(hd);
        let mut c = Array1::<f64>::zeros(hd);
        for t in 0..steps {
            let mut z = pre.row(t).to_owned();
            z += &self.w_hh.dot(&h);
            let mut g = gates.row_mut(t);
            for j in 0..hd {
                let i_g = sigmoid(z[j]);
                let f_g = sigmoid(z[hd + j]);
                let c_g = z[2 * hd + j].tanh();
                let o_g = sigmoid(z[3 * hd + j]);
                g[j] = i_g;
                g[hd + j] = f_g;
                g[2 * hd + j] = c_g;
                g[3 * hd + j] = o_g;
                c[j] = f_g * c[j] + i_g * c_g;
                h[j] = o_g * c[j].tanh();
            }
            cells.row_mut(t).assign(&c);
            hiddens.row_mut(t).assign(&h);
        }
        LstmCache {
            input: x.to_owned(),
            gates,
            cells,
            hiddens,
        }
    }

    /// Backpropagation through time given a gradient on every hidden state, (T, H).
    /// Returns the input gradient, (T, input_size).
    pub fn backward(&self, cache: &LstmCache, d_hidden: ArrayView2<'_, f64>, grads: &mut Lstm) -> Array2<f64> {
        let steps = cache.hiddens.nrows();
        let hd = self.hidden;
        let mut dz_all = Array2::<f64>::zeros((steps, 4 * hd));
        let mut dh_next = Array1::<f64>::zeros(hd);
        let mut dc_next = Array1::<f64>::zeros(hd);
        for t in (0..steps).rev() {
            let g = cache.gates.row(t);
            let c = cache.cells.row(t);
            let mut dz = dz_all.row_mut(t);
            for j in 0..hd {
                let (i_g, f_g, c_g, o_g) = (g[j], g[hd + j], g[2 * hd + j], g[3 * hd + j]);
                let c_prev = if t > 0 { cache.cells[[t - 1, j]] } else { 0.0 };
                let tc = c[j].tanh();
                let dh = d_hidden[[t, j]] + dh_next[j];
                let dc = dc_next[j] + dh * o_g * (1.0 - tc * tc);
                dz[j] = dc * c_g * i_g * (1.0 - i_g);
                dz[hd + j] = dc * c_prev * f_g * (1.0 - f_g);
                dz[2 * hd + j] = dc * i_g * (1.0 - c_g * c_g);
                dz[3 * hd + j] = dh * tc * o_g * (1.0 - o_g);
                dc_next[j] = dc * f_g;
            }
            dh_next = self.w_hh.t().dot(&dz);
        }
        // h_{t-1} for every step, zero at t = 0
        let mut h_prev = Array2::<f64>::zeros((steps, hd));
        if steps > 1 {
            h_prev
                .slice_mut(s![1.., ..])
                .assign(&cache.hiddens.slice(s![..steps - 1, ..]));
        }
        grads.w_hh += &dz_all.t().dot(&h_prev);
        grads.w_ih += &dz_all.t().dot(&cache.input);
        grads.bias += &dz_all.sum_axis(Axis(0));
        dz_all.dot(&self.w_ih)
    }
}

/// Fully connected layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// (out, in)
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    pub fn new(inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        Linear {
            weight: Array2::from_shape_vec((outputs, inputs), uniform(rng, outputs * inputs, inputs))
                .expect("linear weight"),
            bias: Array1::from(uniform(rng, outputs, inputs)),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Linear {
            weight: Array2::zeros(self.weight.raw_dim()),
            bias: Array1::zeros(self.bias.raw_dim()),
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn macs(&self) -> u64 {
        self.weight.len() as u64
    }

    pub fn forward(&self, x: ArrayView1<'_, f64>) -> Array1<f64> {
        self.weight.dot(&x) + &self.bias
    }

    pub fn backward(&self, x: ArrayView1<'_, f64>, d_out: ArrayView1<'_, f64>, grads: &mut Linear) -> Array1<f64> {
        for (mut row, &d) in grads.weight.rows_mut().into_iter().zip(d_out.iter()) {
            row.scaled_add(d, &x);
        }
        grads.bias += &d_out;
        self.weight.t().dot(&d_out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn same_padding_student_dims() {
        assert_eq!(same_padding(20, 5, 2), (10, 1));
        assert_eq!(same_padding(998, 5, 2), (499, 1));
        assert_eq!(same_padding(64, 3, 1), (64, 1));
    }

    #[test]
    fn pool_picks_max() {
        let x = Array3::from_shape_vec((1, 2, 3), vec![1.0, 5.0, 0.0, 2.0, 3.0, 9.0]).unwrap();
        let (y, cache) = max_pool2(x.view());
        assert_eq!(y.dim(), (1, 1, 1));
        assert_eq!(y[[0, 0, 0]], 5.0);
        let dx = max_pool2_backward(&cache, Array3::from_elem((1, 1, 1), 2.0).view());
        assert_eq!(dx[[0, 0, 1]], 2.0);
        assert_eq!(dx.sum(), 2.0);
    }

    /// Finite-difference check of a scalar objective `sum(out * weights)`.
    fn fd<F: Fn(&[f64]) -> f64>(x: &[f64], f: F) -> Vec<f64> {
        let h = 1e-6;
        (0..x.len())
            .map(|i| {
                let mut p = x.to_vec();
                let mut m = x.to_vec();
                p[i] += h;
                m[i] -= h;
                (f(&p) - f(&m)) / (2.0 * h)
            })
            .collect()
    }

    fn close(a: &[f64], b: &[f64]) {
        for (x, y) in a.iter().zip(b) {
            let denom = x.abs().max(y.abs()).max(1e-6);
            assert!((x - y).abs() / denom < 1e-5 || (x - y).abs() < 1e-8, "{x} vs {y}");
        }
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let conv = ConvRelu::new(2, 3, 3, 2, &mut rng);
        let x = Array3::from_shape_vec((2, 5, 6), uniform(&mut rng, 60, 1)).unwrap();
        let (y, cache) = conv.forward(x.view());
        let probe = Array3::from_shape_vec(y.raw_dim(), uniform(&mut rng, y.len(), 1)).unwrap();
        let mut grads = conv.zeros_like();
        let dx = conv.backward(&cache, probe.view(), &mut grads, true).unwrap();

        let objective = |c: &ConvRelu, x: &Array3<f64>| (c.forward(x.view()).0 * &probe).sum();
        let num_dx = fd(x.as_slice().unwrap(), |v| {
            objective(&conv, &Array3::from_shape_vec(x.raw_dim(), v.to_vec()).unwrap())
        });
        close(dx.as_slice().unwrap(), &num_dx);
        let num_dw = fd(conv.weight.as_slice().unwrap(), |v| {
            let mut c = conv.clone();
            c.weight = Array2::from_shape_vec(conv.weight.raw_dim(), v.to_vec()).unwrap();
            objective(&c, &x)
        });
        close(grads.weight.as_slice().unwrap(), &num_dw);
    }

    #[test]
    fn lstm_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let lstm = Lstm::new(3, 4, &mut rng);
        let x = Array2::from_shape_vec((6, 3), uniform(&mut rng, 18, 1)).unwrap();
        let probe = Array2::from_shape_vec((6, 4), uniform(&mut rng, 24, 1)).unwrap();
        let cache = lstm.forward(x.view());
        let mut grads = lstm.zeros_like();
        let dx = lstm.backward(&cache, probe.view(), &mut grads);

        let objective = |l: &Lstm, x: &Array2<f64>| (l.forward(x.view()).hiddens * &probe).sum();
        let num_dx = fd(x.as_slice().unwrap(), |v| {
            objective(&lstm, &Array2::from_shape_vec(x.raw_dim(), v.to_vec()).unwrap())
        });
        close(dx.as_slice().unwrap(), &num_dx);
        let num_whh = fd(lstm.w_hh.as_slice().unwrap(), |v| {
            let mut l = lstm.clone();
            l.w_hh = Array2::from_shape_vec(lstm.w_hh.raw_dim(), v.to_vec()).unwrap();
            objective(&l, &x)
        });
        close(grads.w_hh.as_slice().unwrap(), &num_whh);
        let num_b = fd(lstm.bias.as_slice().unwrap(), |v| {
            let mut l = lstm.clone();
            l.bias = Array1::from(v.to_vec());
            objective(&l, &x)
        });
        close(grads.bias.as_slice().unwrap(), &num_b);
    }

    #[test]
    fn linear_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let fc = Linear::new(4, 3, &mut rng);
        let x = Array1::from(vec![0.3, -1.0, 2.0, 0.5]);
        let d = Array1::from(vec![1.0, -2.0, 0.5]);
        let mut g = fc.zeros_like();
        let dx = fc.backward(x.view(), d.view(), &mut g);
        assert_eq!(g.weight[[1, 2]], -4.0);
        assert_eq!(dx, fc.weight.t().dot(&d));
        assert_eq!(fc.param_count(), 15);
    }
}
