//! CNN-LSTM student: one strided convolution, one LSTM, one fully connected head.
//!
//! With `F` conv filters, kernel `k`, `m` mel bins, stride `s` and hidden size `H`:
//!
//! ```text
//! I      = F * ceil(m / s)                 LSTM input size per frame
//! params = (F k^2 + F) + (4H (I + H) + 4H) + (8H + 8)
//! flops  = 2 * (F k^2 * ceil(m/s) * T' + T' * 4H (I + H) + 8H),   T' = ceil(T / s)
//! ```
//!
//! For the default 20-bin input that is `I = 320` and
//! `params = 832 + 4H(320 + H) + 4H + 8H + 8`.

use ndarray::{Array2, Array3, ArrayView1, ArrayView2, ArrayView3, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{ConvCache, ConvRelu, Linear, Lstm, LstmCache};
use super::{check_input, sigmoid_vec, Forward, InputNorm, Network, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::features::STUDENT_MEL_BINS;
use crate::tensor::{FeatureMap, LayerId};

pub(super) const ARCH: &str = "cnn-lstm-student";

/// Hidden sizes of the student family.
pub const STUDENT_HIDDEN_SIZES: [usize; 4] = [16, 32, 64, 128];

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct StudentConfig {
    pub lstm_hidden: usize,
    pub conv_filters: usize,
    pub conv_kernel: usize,
    pub conv_stride: usize,
    pub num_classes: usize,
    pub input_mel_bins: usize,
}

impl StudentConfig {
    pub fn with_hidden(lstm_hidden: usize) -> Self {
        StudentConfig {
            lstm_hidden,
            ..StudentConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("lstm_hidden", self.lstm_hidden),
            ("conv_filters", self.conv_filters),
            ("conv_kernel", self.conv_kernel),
            ("conv_stride", self.conv_stride),
            ("num_classes", self.num_classes),
            ("input_mel_bins", self.input_mel_bins),
        ];
        for (name, v) in fields {
            if v == 0 {
                return Err(Error::Config(format!("student {name} must be positive")));
            }
        }
        Ok(())
    }

    fn conv_height(&self) -> usize {
        self.input_mel_bins.div_ceil(self.conv_stride)
    }

    /// LSTM input size: filters x pooled mel bins.
    pub fn lstm_input(&self) -> usize {
        self.conv_filters * self.conv_height()
    }

    /// Closed-form learnable parameter count.
    pub fn closed_form_params(&self) -> usize {
        let (f, k, h, i, c) = (
            self.conv_filters,
            self.conv_kernel,
            self.lstm_hidden,
            self.lstm_input(),
            self.num_classes,
        );
        (f * k * k + f) + (4 * h * (i + h) + 4 * h) + (c * h + c)
    }

    /// Closed-form `2 x MAC` count for `frames` input frames.
    pub fn closed_form_flops(&self, frames: usize) -> u64 {
        let (f, k, h, i, c) = (
            self.conv_filters,
            self.conv_kernel,
            self.lstm_hidden,
            self.lstm_input(),
            self.num_classes,
        );
        let steps = frames.div_ceil(self.conv_stride);
        let macs = f * k * k * self.conv_height() * steps + steps * 4 * h * (i + h) + c * h;
        2 * macs as u64
    }
}

impl Default for StudentConfig {
    fn default() -> Self {
        StudentConfig {
            lstm_hidden: 128,
            conv_filters: 32,
            conv_kernel: 5,
            conv_stride: 2,
            num_classes: NUM_CLASSES,
            input_mel_bins: STUDENT_MEL_BINS,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Student {
    config: StudentConfig,
    norm: InputNorm,
    conv: ConvRelu,
    lstm: Lstm,
    fc: Linear,
}

#[derive(Debug)]
pub struct StudentCache {
    conv: ConvCache,
    lstm: LstmCache,
}

/// Builds a student with weights drawn from `seed`.
pub fn build_student(cfg: &StudentConfig, seed: u64) -> Result<Student> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let conv = ConvRelu::new(1, cfg.conv_filters, cfg.conv_kernel, cfg.conv_stride, &mut rng);
    let lstm = Lstm::new(cfg.lstm_input(), cfg.lstm_hidden, &mut rng);
    let fc = Linear::new(cfg.lstm_hidden, cfg.num_classes, &mut rng);
    Ok(Student {
        config: *cfg,
        norm: InputNorm::identity(cfg.input_mel_bins),
        conv,
        lstm,
        fc,
    })
}

impl Student {
    pub fn config(&self) -> &StudentConfig {
        &self.config
    }
}

impl Network for Student {
    type Cache = StudentCache;

    fn arch(&self) -> &'static str {
        ARCH
    }

    fn input_bins(&self) -> usize {
        self.config.input_mel_bins
    }

    fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    fn hint_layers(&self) -> Vec<LayerId> {
        vec![LayerId::new("student.conv"), LayerId::new("student.lstm")]
    }

    fn hint_dims(&self, frames: usize) -> Vec<[usize; 3]> {
        let (h, w) = self.conv.output_dims(self.config.input_mel_bins, frames);
        vec![
            [self.config.conv_filters, h, w],
            [1, self.config.lstm_hidden, w],
        ]
    }

    fn input_norm(&self) -> &InputNorm {
        &self.norm
    }

    fn set_input_norm(&mut self, norm: InputNorm) -> Result<()> {
        if norm.mean.len() != self.config.input_mel_bins || norm.inv_std.len() != norm.mean.len() {
            return Err(Error::InvalidInput("input normalization size mismatch".into()));
        }
        self.norm = norm;
        Ok(())
    }

    fn forward_train(&self, input: ArrayView2<'_, f64>) -> Result<(Forward, StudentCache)> {
        check_input(input, self.config.input_mel_bins)?;
        let x = self.norm.apply(input).insert_axis(Axis(0));
        let (conv_out, conv_cache) = self.conv.forward(x.view());
        let (c, h, w) = conv_out.dim();
        // one LSTM step per output frame: (w, c*h)
        let seq = conv_out
            .view()
            .permuted_axes([2, 0, 1])
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((w, c * h))
            .expect("sequence reshape");
        let lstm_cache = self.lstm.forward(seq.view());
        let hiddens = lstm_cache.hiddens();
        let logits = self.fc.forward(hiddens.row(w - 1));
        let probs = sigmoid_vec(&logits);

        let conv_hint = FeatureMap::new_unchecked(
            conv_out.insert_axis(Axis(0)),
            LayerId::new("student.conv"),
        );
        let lstm_hint = FeatureMap::new_unchecked(
            hiddens
                .t()
                .as_standard_layout()
                .into_owned()
                .into_shape_with_order((1, 1, self.config.lstm_hidden, w))
                .expect("lstm hint reshape"),
            LayerId::new("student.lstm"),
        );
        Ok((
            Forward {
                logits,
                probs,
                hints: vec![conv_hint, lstm_hint],
            },
            StudentCache {
                conv: conv_cache,
                lstm: lstm_cache,
            },
        ))
    }

    fn backward(
        &self,
        cache: &StudentCache,
        d_logits: ArrayView1<'_, f64>,
        d_hints: &[Option<ArrayView3<'_, f64>>],
        grads: &mut Student,
    ) {
        let hiddens = cache.lstm.hiddens();
        let steps = hiddens.nrows();
        let d_last = self
            .fc
            .backward(hiddens.row(steps - 1), d_logits, &mut grads.fc);
        let mut d_hidden = Array2::<f64>::zeros(hiddens.raw_dim());
        d_hidden.row_mut(steps - 1).assign(&d_last);
        if let Some(Some(g)) = d_hints.get(1) {
            // (1, H, T) -> (T, H)
            d_hidden += &g.index_axis(Axis(0), 0).t();
        }
        let d_seq = self.lstm.backward(&cache.lstm, d_hidden.view(), &mut grads.lstm);
        let (c, h, w) = cache.conv.output().dim();
        let mut d_conv: Array3<f64> = d_seq
            .into_shape_with_order((w, c, h))
            .expect("sequence grad reshape")
            .permuted_axes([1, 2, 0])
            .as_standard_layout()
            .into_owned();
        if let Some(Some(g)) = d_hints.first() {
            d_conv += g;
        }
        self.conv
            .backward(&cache.conv, d_conv.view(), &mut grads.conv, false);
    }

    fn zeros_like(&self) -> Self {
        Student {
            config: self.config,
            norm: self.norm.clone(),
            conv: self.conv.zeros_like(),
            lstm: self.lstm.zeros_like(),
            fc: self.fc.zeros_like(),
        }
    }

    fn params(&self) -> Vec<(String, &[f64])> {
        vec![
            ("conv.weight".into(), self.conv.weight.as_slice().unwrap()),
            ("conv.bias".into(), self.conv.bias.as_slice().unwrap()),
            ("lstm.w_ih".into(), self.lstm.w_ih.as_slice().unwrap()),
            ("lstm.w_hh".into(), self.lstm.w_hh.as_slice().unwrap()),
            ("lstm.bias".into(), self.lstm.bias.as_slice().unwrap()),
            ("fc.weight".into(), self.fc.weight.as_slice().unwrap()),
            ("fc.bias".into(), self.fc.bias.as_slice().unwrap()),
        ]
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.conv.weight.as_slice_mut().unwrap(),
            self.conv.bias.as_slice_mut().unwrap(),
            self.lstm.w_ih.as_slice_mut().unwrap(),
            self.lstm.w_hh.as_slice_mut().unwrap(),
            self.lstm.bias.as_slice_mut().unwrap(),
            self.fc.weight.as_slice_mut().unwrap(),
            self.fc.bias.as_slice_mut().unwrap(),
        ]
    }

    fn describe(&self) -> Vec<(String, String)> {
        let c = &self.config;
        vec![
            ("lstm_hidden".into(), c.lstm_hidden.to_string()),
            ("conv_filters".into(), c.conv_filters.to_string()),
            ("conv_kernel".into(), c.conv_kernel.to_string()),
            ("conv_stride".into(), c.conv_stride.to_string()),
            ("num_classes".into(), c.num_classes.to_string()),
            ("input_mel_bins".into(), c.input_mel_bins.to_string()),
        ]
    }

    fn count_flops(&self, frames: usize) -> u64 {
        let (_, w) = self.conv.output_dims(self.config.input_mel_bins, frames);
        2 * (self.conv.macs(self.config.input_mel_bins, frames) + self.lstm.macs(w) + self.fc.macs())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn student_param_counts_match_closed_form() {
        for h in STUDENT_HIDDEN_SIZES {
            let cfg = StudentConfig::with_hidden(h);
            let m = build_student(&cfg, 1).unwrap();
            assert_eq!(m.count_params(), cfg.closed_form_params());
            assert_eq!(m.count_flops(998), cfg.closed_form_flops(998));
        }
        // conv 1->32, 5x5: 800 + 32
        let m = build_student(&StudentConfig::with_hidden(128), 1).unwrap();
        assert_eq!(m.conv.param_count(), 832);
        assert_eq!(m.fc.param_count(), 1032);
    }

    #[test]
    fn zero_hidden_rejected() {
        assert!(matches!(
            build_student(&StudentConfig::with_hidden(0), 1),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn hint_shapes_follow_stride() {
        let m = build_student(&StudentConfig::with_hidden(16), 2).unwrap();
        let x = Array2::zeros((20, 37));
        let out = m.forward(x.view()).unwrap();
        assert_eq!(out.hints[0].dims(), [1, 32, 10, 19]);
        assert_eq!(out.hints[1].dims(), [1, 1, 16, 19]);
        let dims = m.hint_dims(37);
        assert_eq!(dims, vec![[32, 10, 19], [1, 16, 19]]);
        assert!(m.forward(Array2::zeros((21, 37)).view()).is_err());
    }
}
