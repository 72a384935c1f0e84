//! Training losses and their student-side gradients.
//!
//! Teacher-derived quantities are constants: no gradient is ever returned for them.
//! Element-wise losses (`bce`, `kd`) average over every element; the similarity
//! losses use the `1/b^2` (batch gram) and `1/b` (frame gram) factors.

use std::fmt;

use ndarray::{Array2, Array4, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{
    self, bilinear_resize, channel_normalize, channel_normalize_backward, flatten_items,
    frame_gram, frame_gram_backward, sigmoid, sigmoid_squash, sp_gram, SquashParams,
};
use crate::models::HintPair;
use crate::tensor::{FeatureMap, SimilarityMatrix};

/// Predicted probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` inside BCE.
pub const PROB_CLAMP: f64 = 1e-7;

fn check_same_shape(a: &Array2<f64>, b: &Array2<f64>, what: &str) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::InvalidInput(format!(
            "{what}: shape mismatch {:?} vs {:?}",
            a.dim(),
            b.dim()
        )));
    }
    if a.is_empty() {
        return Err(Error::InvalidInput(format!("{what}: empty input")));
    }
    Ok(())
}

/// Mean binary cross entropy between probabilities and {0,1} targets.
pub fn bce_loss(pred_probs: &Array2<f64>, targets: &Array2<f64>) -> Result<f64> {
    bce_loss_grad(pred_probs, targets).map(|(l, _)| l)
}

/// [`bce_loss`] plus its gradient w.r.t. the probabilities (zero where clamped).
pub fn bce_loss_grad(
    pred_probs: &Array2<f64>,
    targets: &Array2<f64>,
) -> Result<(f64, Array2<f64>)> {
    check_same_shape(pred_probs, targets, "bce")?;
    let n = pred_probs.len() as f64;
    let mut grad = Array2::zeros(pred_probs.raw_dim());
    let mut total = 0.0;
    Zip::from(&mut grad)
        .and(pred_probs)
        .and(targets)
        .for_each(|g, &p, &t| {
            let pc = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            total += -(t * pc.ln() + (1.0 - t) * (1.0 - pc).ln());
            if pc == p {
                *g = (-t / p + (1.0 - t) / (1.0 - p)) / n;
            }
        });
    Ok((total / n, grad))
}

#[inline]
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Temperature-scaled sigmoid distillation.
///
/// The teacher's soft targets `sigmoid(teacher / T)` are compared to
/// `sigmoid(student / T)` with binary cross entropy, averaged over elements.
pub fn kd_logit_loss(
    student_logits: &Array2<f64>,
    teacher_logits: &Array2<f64>,
    temperature: f64,
) -> Result<f64> {
    kd_logit_loss_grad(student_logits, teacher_logits, temperature).map(|(l, _)| l)
}

/// [`kd_logit_loss`] plus its gradient w.r.t. the student logits.
pub fn kd_logit_loss_grad(
    student_logits: &Array2<f64>,
    teacher_logits: &Array2<f64>,
    temperature: f64,
) -> Result<(f64, Array2<f64>)> {
    check_same_shape(student_logits, teacher_logits, "kd")?;
    if !(temperature > 0.0) {
        return Err(Error::InvalidInput(format!(
            "kd temperature must be positive, got {temperature}"
        )));
    }
    let n = student_logits.len() as f64;
    let mut grad = Array2::zeros(student_logits.raw_dim());
    let mut total = 0.0;
    Zip::from(&mut grad)
        .and(student_logits)
        .and(teacher_logits)
        .for_each(|g, &s, &t| {
            let u = s / temperature;
            let q = sigmoid(t / temperature);
            // -[q ln sig(u) + (1-q) ln(1 - sig(u))] = softplus(u) - q u
            total += softplus(u) - q * u;
            *g = (sigmoid(u) - q) / (temperature * n);
        });
    Ok((total / n, grad))
}

/// Batch-gram loss of one pair against a precomputed teacher gram.
///
/// Returns the `1/b^2`-scaled squared Frobenius distance and its gradient
/// w.r.t. the student map.
pub fn sp_loss_against(
    teacher_gram: &SimilarityMatrix,
    student: &FeatureMap,
) -> Result<(f64, Array4<f64>)> {
    let b = student.batch();
    if teacher_gram.size() != b {
        return Err(Error::InvalidInput(format!(
            "sp: teacher batch {} differs from student batch {b}",
            teacher_gram.size()
        )));
    }
    let q = flatten_items(student);
    let raw = q.dot(&q.t());
    let normed = kernels::row_normalized_gram(raw.clone());
    let diff = normed.values() - teacher_gram.values();
    let scale = 1.0 / (b * b) as f64;
    let loss = scale * diff.iter().map(|d| d * d).sum::<f64>();
    let d_normed = diff * (2.0 * scale);
    let dq = kernels::sp_gram_backward(&q, &raw, normed.values(), &d_normed);
    let grad = dq
        .into_shape_with_order(student.dims())
        .expect("sp gradient reshape");
    Ok((loss, grad))
}

/// Similarity-preserving loss summed over the selected (teacher, student) layer pairs.
pub fn sp_loss(
    teacher_maps: &[FeatureMap],
    student_maps: &[FeatureMap],
    pairs: &[HintPair],
) -> Result<f64> {
    sp_loss_grad(teacher_maps, student_maps, pairs).map(|(l, _)| l)
}

/// [`sp_loss`] plus one gradient slot per student map (`None` when unused).
pub fn sp_loss_grad(
    teacher_maps: &[FeatureMap],
    student_maps: &[FeatureMap],
    pairs: &[HintPair],
) -> Result<(f64, Vec<Option<Array4<f64>>>)> {
    let mut grads: Vec<Option<Array4<f64>>> = vec![None; student_maps.len()];
    let mut total = 0.0;
    for pair in pairs {
        let t = teacher_maps.get(pair.teacher).ok_or(Error::Index {
            index: pair.teacher,
            len: teacher_maps.len(),
        })?;
        let s = student_maps.get(pair.student).ok_or(Error::Index {
            index: pair.student,
            len: student_maps.len(),
        })?;
        if t.batch() != s.batch() {
            return Err(Error::InvalidInput(format!(
                "sp: batch sizes differ ({} vs {})",
                t.batch(),
                s.batch()
            )));
        }
        let (loss, g) = sp_loss_against(&sp_gram(t), s)?;
        total += loss;
        match &mut grads[pair.student] {
            Some(acc) => *acc += &g,
            slot => *slot = Some(g),
        }
    }
    Ok((total, grads))
}

/// Squashed frame grams of the teacher map after resizing it to the student's (h, w).
pub fn iusp_teacher_targets(
    teacher: &FeatureMap,
    height: usize,
    width: usize,
    p: SquashParams,
) -> Result<Vec<SimilarityMatrix>> {
    let resized = bilinear_resize(teacher, height, width)?;
    let normed = channel_normalize(&resized);
    (0..normed.batch())
        .map(|i| sigmoid_squash(&frame_gram(&normed, i)?, p))
        .collect()
}

/// Frame-gram loss against precomputed squashed teacher grams, with the
/// gradient w.r.t. the raw (pre-normalization) student map.
pub fn iusp_loss_against(
    targets: &[SimilarityMatrix],
    student: &FeatureMap,
    p: SquashParams,
) -> Result<(f64, Array4<f64>)> {
    let b = student.batch();
    if targets.len() != b {
        return Err(Error::InvalidInput(format!(
            "iusp: teacher batch {} differs from student batch {b}",
            targets.len()
        )));
    }
    let normed = channel_normalize(student);
    let mut d_normed = Array4::zeros(student.values().raw_dim());
    let mut total = 0.0;
    for (i, target) in targets.iter().enumerate() {
        let squashed = sigmoid_squash(&frame_gram(&normed, i)?, p)?;
        if target.size() != squashed.size() {
            return Err(Error::InvalidInput(format!(
                "iusp: frame counts differ ({} vs {})",
                target.size(),
                squashed.size()
            )));
        }
        let s = squashed.values();
        let diff = s - target.values();
        total += diff.iter().map(|d| d * d).sum::<f64>();
        // d/dG of |sig(gamma (G - delta)) - T|^2 / b
        let mut d_gram = diff;
        Zip::from(&mut d_gram)
            .and(s)
            .for_each(|d, &sv| *d *= 2.0 / b as f64 * p.gamma * sv * (1.0 - sv));
        let g = frame_gram_backward(normed.item(i), d_gram.view());
        d_normed
            .index_axis_mut(ndarray::Axis(0), i)
            .assign(&g);
    }
    let grad = channel_normalize_backward(student.values(), &d_normed);
    Ok((total / b as f64, grad))
}

/// Intra-utterance similarity loss between a teacher and a student activation.
pub fn iusp_loss(teacher: &FeatureMap, student: &FeatureMap, p: SquashParams) -> Result<f64> {
    iusp_loss_grad(teacher, student, p).map(|(l, _)| l)
}

/// [`iusp_loss`] plus its gradient w.r.t. the student map.
pub fn iusp_loss_grad(
    teacher: &FeatureMap,
    student: &FeatureMap,
    p: SquashParams,
) -> Result<(f64, Array4<f64>)> {
    if teacher.batch() != student.batch() {
        return Err(Error::InvalidInput(format!(
            "iusp: batch sizes differ ({} vs {})",
            teacher.batch(),
            student.batch()
        )));
    }
    let targets = iusp_teacher_targets(teacher, student.height(), student.width(), p)?;
    iusp_loss_against(&targets, student, p)
}

/// Weights of the four loss terms plus the distillation temperature and squash.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha_bce: f64,
    pub alpha_kd: f64,
    pub alpha_sp: f64,
    pub alpha_iusp: f64,
    pub kd_temperature: f64,
    pub squash: SquashParams,
}

impl Default for LossWeights {
    /// Weights 1, 10, 10, 1 balance the four terms to similar magnitude.
    fn default() -> Self {
        LossWeights {
            alpha_bce: 1.0,
            alpha_kd: 10.0,
            alpha_sp: 10.0,
            alpha_iusp: 1.0,
            kd_temperature: 1.0,
            squash: SquashParams::default(),
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let alphas = [self.alpha_bce, self.alpha_kd, self.alpha_sp, self.alpha_iusp];
        if alphas.iter().any(|a| !(*a >= 0.0) || !a.is_finite()) {
            return Err(Error::Config(format!(
                "loss weights must be finite and non-negative, got {alphas:?}"
            )));
        }
        if !(self.kd_temperature > 0.0) {
            return Err(Error::Config(format!(
                "kd temperature must be positive, got {}",
                self.kd_temperature
            )));
        }
        SquashParams::new(self.squash.gamma, self.squash.delta)?;
        Ok(())
    }
}

/// Unweighted loss terms.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub bce: f64,
    pub kd: f64,
    pub sp: f64,
    pub iusp: f64,
}

impl LossComponents {
    pub fn is_finite(&self) -> bool {
        self.bce.is_finite() && self.kd.is_finite() && self.sp.is_finite() && self.iusp.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossValue {
    pub total: f64,
    pub components: LossComponents,
}

impl fmt::Display for LossValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = &self.components;
        write!(
            f,
            "total={:.6} bce={:.6} kd={:.6} sp={:.6} iusp={:.6}",
            self.total, c.bce, c.kd, c.sp, c.iusp
        )
    }
}

/// Weighted sum of the four loss terms.
pub fn total_loss(components: LossComponents, weights: &LossWeights) -> LossValue {
    let total = weights.alpha_bce * components.bce
        + weights.alpha_kd * components.kd
        + weights.alpha_sp * components.sp
        + weights.alpha_iusp * components.iusp;
    LossValue { total, components }
}

/// One line of the per-step training log: `step bce kd sp iusp total`, tab-separated.
pub fn step_log_line(step: usize, value: &LossValue) -> String {
    let c = &value.components;
    format!(
        "{step}\t{}\t{}\t{}\t{}\t{}",
        c.bce, c.kd, c.sp, c.iusp, value.total
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::LayerId;
    use approx::assert_abs_diff_eq;
    use ndarray::arr2;

    #[test]
    fn bce_reference_values() {
        let p = Array2::from_elem((3, 8), 0.5);
        let t = Array2::from_elem((3, 8), 1.0);
        assert_abs_diff_eq!(bce_loss(&p, &t).unwrap(), std::f64::consts::LN_2, epsilon = 1e-12);

        let l = bce_loss(&arr2(&[[0.9, 0.1]]), &arr2(&[[1.0, 0.0]])).unwrap();
        assert_abs_diff_eq!(l, 0.105_360_515_657_826_3, epsilon = 1e-12);

        let perfect = bce_loss(&arr2(&[[1.0 - 1e-7, 1e-7]]), &arr2(&[[1.0, 0.0]])).unwrap();
        assert!(perfect < 1e-6);
    }

    #[test]
    fn bce_shape_mismatch() {
        let p = Array2::from_elem((2, 8), 0.5);
        let t = Array2::from_elem((2, 7), 1.0);
        assert!(matches!(bce_loss(&p, &t), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn kd_reference_values() {
        let z = Array2::zeros((2, 8));
        assert_abs_diff_eq!(
            kd_logit_loss(&z, &z, 1.0).unwrap(),
            std::f64::consts::LN_2,
            epsilon = 1e-12
        );
        let s = arr2(&[[1.5, -2.0, 0.3]]);
        let (_, g) = kd_logit_loss_grad(&s, &s, 2.0).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-15));
        let t = arr2(&[[4.0, -3.0, 0.0]]);
        let hot = kd_logit_loss(&s, &t, 1e6).unwrap();
        assert_abs_diff_eq!(hot, std::f64::consts::LN_2, epsilon = 1e-6);
        assert!(kd_logit_loss(&s, &t, 0.0).is_err());
    }

    #[test]
    fn sp_loss_identity_vs_collinear() {
        let t = FeatureMap::from_shape_vec([2, 1, 1, 2], vec![1.0, 0.0, 0.0, 1.0], LayerId::new("t"))
            .unwrap();
        let s = FeatureMap::from_shape_vec([2, 1, 1, 2], vec![1.0, 0.0, 1.0, 0.0], LayerId::new("s"))
            .unwrap();
        let pair = [HintPair::new(0, 0)];
        let l = sp_loss(&[t.clone()], &[s], &pair).unwrap();
        let r = 1.0 / 2f64.sqrt();
        let expected = ((1.0 - r).powi(2) + 0.5) * 2.0 / 4.0;
        assert_abs_diff_eq!(l, expected, epsilon = 1e-12);
        assert_abs_diff_eq!(l, 0.292_893_218_813_452_4, epsilon = 1e-12);
        assert_eq!(sp_loss(&[t.clone()], &[t], &pair).unwrap(), 0.0);
    }

    #[test]
    fn sp_loss_batch_mismatch() {
        let t = FeatureMap::zeros([2, 1, 1, 2], LayerId::new("t"));
        let s = FeatureMap::zeros([3, 1, 1, 2], LayerId::new("s"));
        assert!(sp_loss(&[t], &[s], &[HintPair::new(0, 0)]).is_err());
    }

    #[test]
    fn iusp_scalar_example() {
        // teacher frames identical with squared norm 1 -> gram of ones;
        // student frames identical but zero -> gram of zeros
        let p = SquashParams::default();
        let t = FeatureMap::from_shape_vec([1, 1, 1, 2], vec![1.0, 1.0], LayerId::new("t")).unwrap();
        let targets = iusp_teacher_targets(&t, 1, 2, p).unwrap();
        // channel normalization gives frames of 1/sqrt(2): gram entries 0.5 -> sig = 0.5
        assert!(targets[0].values().iter().all(|&v| (v - 0.5).abs() < 1e-12));

        let hi = SimilarityMatrix::new(Array2::from_elem((2, 2), 1.0), crate::tensor::GramKind::Frame, false)
            .unwrap();
        let high = sigmoid_squash(&hi, p).unwrap();
        // an all-zero student map normalizes to zeros: every gram entry is 0
        let s = FeatureMap::zeros([1, 1, 1, 2], LayerId::new("s"));
        let (l, _) = iusp_loss_against(&[high], &s, p).unwrap();
        assert_abs_diff_eq!(l, 4.0 * 0.986_614_298_151_430_3f64.powi(2), epsilon = 1e-12);
        assert_abs_diff_eq!(l, 3.894, epsilon = 1e-3);
    }

    #[test]
    fn total_loss_weighting() {
        let c = LossComponents {
            bce: 0.1,
            kd: 0.02,
            sp: 0.03,
            iusp: 0.4,
        };
        let v = total_loss(c, &LossWeights::default());
        assert_abs_diff_eq!(v.total, 1.0, epsilon = 1e-12);
        assert_eq!(total_loss(LossComponents::default(), &LossWeights::default()).total, 0.0);
        let w = LossWeights {
            alpha_kd: 0.0,
            alpha_sp: 0.0,
            alpha_iusp: 0.0,
            ..LossWeights::default()
        };
        assert_eq!(total_loss(c, &w).total, 0.1);
    }

    #[test]
    fn step_line_is_tab_separated() {
        let v = total_loss(
            LossComponents {
                bce: 0.5,
                kd: 0.25,
                sp: 0.0,
                iusp: 1.0,
            },
            &LossWeights::default(),
        );
        assert_eq!(step_log_line(3, &v), "3\t0.5\t0.25\t0\t1\t4");
    }
}
