//! Convolutional teacher: blocks of conv + ReLU + 2x2 max-pool, global average
//! pooling, then a fully connected head. The output of every pooling layer is a
//! hint candidate.
//!
//! With block channels `c_1..c_n` (`c_0 = 1`) and kernel `k`:
//!
//! ```text
//! params = sum_j (c_{j-1} c_j k^2 + c_j) + (8 c_n + 8)
//! flops  = 2 * (sum_j c_{j-1} c_j k^2 h_j w_j + 8 c_n)
//! ```
//!
//! where `(h_j, w_j)` is the input size of block `j` (halved, rounding down, after each pool).

use ndarray::{Array1, Array3, ArrayView1, ArrayView2, ArrayView3, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{max_pool2, max_pool2_backward, pool_dims, ConvCache, ConvRelu, Linear, PoolCache};
use super::{check_input, sigmoid_vec, Forward, InputNorm, Network, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::features::TEACHER_MEL_BINS;
use crate::tensor::{FeatureMap, LayerId};

pub(super) const ARCH: &str = "pooled-cnn-teacher";

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct TeacherConfig {
    /// Output channels of each conv block.
    pub channels: Vec<usize>,
    pub kernel: usize,
    pub num_classes: usize,
    pub input_mel_bins: usize,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        TeacherConfig {
            channels: vec![32, 64, 128, 128],
            kernel: 5,
            num_classes: NUM_CLASSES,
            input_mel_bins: TEACHER_MEL_BINS,
        }
    }
}

impl TeacherConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels.len() < 2 {
            return Err(Error::Config(format!(
                "teacher needs at least 2 conv blocks, got {}",
                self.channels.len()
            )));
        }
        if self.channels.contains(&0) || self.kernel == 0 || self.num_classes == 0 || self.input_mel_bins == 0 {
            return Err(Error::Config("teacher dimensions must be positive".into()));
        }
        Ok(())
    }

    pub fn closed_form_params(&self) -> usize {
        let k2 = self.kernel * self.kernel;
        let mut prev = 1;
        let mut total = 0;
        for &c in &self.channels {
            total += prev * c * k2 + c;
            prev = c;
        }
        total + self.num_classes * prev + self.num_classes
    }

    pub fn closed_form_flops(&self, frames: usize) -> u64 {
        let k2 = self.kernel * self.kernel;
        let (mut h, mut w) = (self.input_mel_bins, frames);
        let mut prev = 1;
        let mut macs = 0;
        for &c in &self.channels {
            macs += prev * c * k2 * h * w;
            (h, w) = pool_dims(h, w);
            prev = c;
        }
        2 * (macs + self.num_classes * prev) as u64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Teacher {
    config: TeacherConfig,
    norm: InputNorm,
    blocks: Vec<ConvRelu>,
    fc: Linear,
}

#[derive(Debug)]
pub struct TeacherCache {
    convs: Vec<ConvCache>,
    pools: Vec<PoolCache>,
    last_dim: (usize, usize, usize),
    pooled: Array1<f64>,
}

pub fn build_teacher(cfg: &TeacherConfig, seed: u64) -> Result<Teacher> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut prev = 1;
    let blocks = cfg
        .channels
        .iter()
        .map(|&c| {
            let conv = ConvRelu::new(prev, c, cfg.kernel, 1, &mut rng);
            prev = c;
            conv
        })
        .collect();
    let fc = Linear::new(prev, cfg.num_classes, &mut rng);
    Ok(Teacher {
        config: cfg.clone(),
        norm: InputNorm::identity(cfg.input_mel_bins),
        blocks,
        fc,
    })
}

impl Teacher {
    pub fn config(&self) -> &TeacherConfig {
        &self.config
    }
}

impl Network for Teacher {
    type Cache = TeacherCache;

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
        (1..=self.blocks.len())
            .map(|i| LayerId::new(format!("teacher.pool{i}")))
            .collect()
    }

    fn hint_dims(&self, frames: usize) -> Vec<[usize; 3]> {
        let (mut h, mut w) = (self.config.input_mel_bins, frames);
        self.config
            .channels
            .iter()
            .map(|&c| {
                (h, w) = pool_dims(h, w);
                [c, h, w]
            })
            .collect()
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

    fn forward_train(&self, input: ArrayView2<'_, f64>) -> Result<(Forward, TeacherCache)> {
        check_input(input, self.config.input_mel_bins)?;
        let mut x: Array3<f64> = self.norm.apply(input).insert_axis(Axis(0));
        let layers = self.hint_layers();
        let mut convs = Vec::with_capacity(self.blocks.len());
        let mut pools = Vec::with_capacity(self.blocks.len());
        let mut hints = Vec::with_capacity(self.blocks.len());
        for (conv, layer) in self.blocks.iter().zip(layers) {
            let (y, cc) = conv.forward(x.view());
            let (p, pc) = max_pool2(y.view());
            hints.push(FeatureMap::new_unchecked(
                p.clone().insert_axis(Axis(0)),
                layer,
            ));
            convs.push(cc);
            pools.push(pc);
            x = p;
        }
        let last_dim = x.dim();
        let pooled = x
            .into_shape_with_order((last_dim.0, last_dim.1 * last_dim.2))
            .expect("gap reshape")
            .mean_axis(Axis(1))
            .expect("non-empty pooling");
        let logits = self.fc.forward(pooled.view());
        let probs = sigmoid_vec(&logits);
        Ok((
            Forward {
                logits,
                probs,
                hints,
            },
            TeacherCache {
                convs,
                pools,
                last_dim,
                pooled,
            },
        ))
    }

    fn backward(
        &self,
        cache: &TeacherCache,
        d_logits: ArrayView1<'_, f64>,
        d_hints: &[Option<ArrayView3<'_, f64>>],
        grads: &mut Teacher,
    ) {
        let d_pooled = self.fc.backward(cache.pooled.view(), d_logits, &mut grads.fc);
        let (c, h, w) = cache.last_dim;
        let area = (h * w) as f64;
        let mut d = Array3::<f64>::zeros((c, h, w));
        for (mut ch, &g) in d.outer_iter_mut().zip(d_pooled.iter()) {
            ch.fill(g / area);
        }
        for (j, conv) in self.blocks.iter().enumerate().rev() {
            if let Some(Some(g)) = d_hints.get(j) {
                d += g;
            }
            let d_conv = max_pool2_backward(&cache.pools[j], d.view());
            match conv.backward(&cache.convs[j], d_conv.view(), &mut grads.blocks[j], j > 0) {
                Some(dx) => d = dx,
                None => break,
            }
        }
    }

    fn zeros_like(&self) -> Self {
        Teacher {
            config: self.config.clone(),
            norm: self.norm.clone(),
            blocks: self.blocks.iter().map(ConvRelu::zeros_like).collect(),
            fc: self.fc.zeros_like(),
        }
    }

    fn params(&self) -> Vec<(String, &[f64])> {
        let mut out = Vec::with_capacity(2 * self.blocks.len() + 2);
        for (i, b) in self.blocks.iter().enumerate() {
            out.push((format!("block{}.weight", i + 1), b.weight.as_slice().unwrap()));
            out.push((format!("block{}.bias", i + 1), b.bias.as_slice().unwrap()));
        }
        out.push(("fc.weight".into(), self.fc.weight.as_slice().unwrap()));
        out.push(("fc.bias".into(), self.fc.bias.as_slice().unwrap()));
        out
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(2 * self.blocks.len() + 2);
        for b in self.blocks.iter_mut() {
            out.push(b.weight.as_slice_mut().unwrap());
            out.push(b.bias.as_slice_mut().unwrap());
        }
        out.push(self.fc.weight.as_slice_mut().unwrap());
        out.push(self.fc.bias.as_slice_mut().unwrap());
        out
    }

    fn describe(&self) -> Vec<(String, String)> {
        let c = &self.config;
        vec![
            (
                "channels".into(),
                c.channels
                    .iter()
                    .map(|v| v.to_string())
                    .collect::<Vec<_>>()
                    .join(","),
            ),
            ("kernel".into(), c.kernel.to_string()),
            ("num_classes".into(), c.num_classes.to_string()),
            ("input_mel_bins".into(), c.input_mel_bins.to_string()),
        ]
    }

    fn count_flops(&self, frames: usize) -> u64 {
        let (mut h, mut w) = (self.config.input_mel_bins, frames);
        let mut macs = 0;
        for conv in &self.blocks {
            macs += conv.macs(h, w);
            (h, w) = pool_dims(h, w);
        }
        2 * (macs + self.fc.macs())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    #[test]
    fn teacher_counts_match_closed_form() {
        let cfg = TeacherConfig::default();
        let t = build_teacher(&cfg, 0).unwrap();
        assert_eq!(t.count_params(), cfg.closed_form_params());
        assert_eq!(t.count_flops(998), cfg.closed_form_flops(998));
    }

    #[test]
    fn teacher_needs_two_blocks() {
        let cfg = TeacherConfig {
            channels: vec![8],
            ..TeacherConfig::default()
        };
        assert!(matches!(build_teacher(&cfg, 0), Err(Error::Config(_))));
    }

    #[test]
    fn gradient_through_pooling_matches_finite_difference() {
        let cfg = TeacherConfig {
            channels: vec![2, 3],
            kernel: 3,
            num_classes: 2,
            input_mel_bins: 6,
        };
        let t = build_teacher(&cfg, 4).unwrap();
        let x = Array2::from_shape_fn((6, 9), |(i, j)| ((i * 7 + j * 3) % 11) as f64 / 5.0 - 1.0);
        let probe = ndarray::arr1(&[0.7, -1.3]);
        let (_, cache) = t.forward_train(x.view()).unwrap();
        let mut g = t.zeros_like();
        t.backward(&cache, probe.view(), &[], &mut g);
        let f = |m: &Teacher| m.forward(x.view()).unwrap().logits.dot(&probe);
        let h = 1e-6;
        let analytic = g.blocks[0].weight.clone();
        for idx in [0usize, 5, 11, 17] {
            let mut p = t.clone();
            let mut m = t.clone();
            p.blocks[0].weight.as_slice_mut().unwrap()[idx] += h;
            m.blocks[0].weight.as_slice_mut().unwrap()[idx] -= h;
            let num = (f(&p) - f(&m)) / (2.0 * h);
            let a = analytic.as_slice().unwrap()[idx];
            assert!((num - a).abs() < 1e-6 + 1e-5 * a.abs(), "{num} vs {a}");
        }
    }
}
