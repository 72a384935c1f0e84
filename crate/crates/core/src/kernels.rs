//! Similarity kernels: batch-level gram (SP), channel normalization, frame-level
//! gram (IUSP), sigmoid squash and bilinear resizing, plus the vector-Jacobian
//! products the losses need for their student-side gradients.

use ndarray::{Array2, Array3, Array4, ArrayView2, ArrayView3, Axis, Zip};

use crate::error::{Error, Result};
use crate::tensor::{FeatureMap, GramKind, SimilarityMatrix};

/// Rows or slices with an L2 norm below this are treated as zero.
pub const NORM_EPS: f64 = 1e-12;

/// Scale and shift of the sigmoid applied to frame grams.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SquashParams {
    pub gamma: f64,
    pub delta: f64,
}

impl SquashParams {
    pub fn new(gamma: f64, delta: f64) -> Result<Self> {
        if !(gamma > 0.0) || !gamma.is_finite() || !delta.is_finite() {
            return Err(Error::Config(format!(
                "sigmoid squash needs gamma > 0 and finite delta, got gamma={gamma}, delta={delta}"
            )));
        }
        Ok(SquashParams { gamma, delta })
    }
}

impl Default for SquashParams {
    fn default() -> Self {
        SquashParams {
            gamma: 10.0,
            delta: 0.5,
        }
    }
}

/// Flattens each batch item into one row: (b, c*h*w).
pub fn flatten_items(a: &FeatureMap) -> Array2<f64> {
    let [b, c, h, w] = a.dims();
    a.values()
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((b, c * h * w))
        .expect("standard layout reshape")
}

/// Batch-level similarity: row-normalized `Q Q^T` where `Q` holds one flattened item per row.
pub fn sp_gram(a: &FeatureMap) -> SimilarityMatrix {
    let q = flatten_items(a);
    row_normalized_gram(q.dot(&q.t()))
}

/// Row-normalizes an unnormalized batch gram `Q Q^T`.
///
/// Exposed separately so callers holding cached inner products can build the
/// same matrix as [`sp_gram`] without the feature maps.
pub fn row_normalized_gram(mut gram: Array2<f64>) -> SimilarityMatrix {
    for mut row in gram.rows_mut() {
        let n = row.dot(&row).sqrt();
        if n < NORM_EPS {
            row.fill(0.0);
        } else {
            row /= n;
        }
    }
    SimilarityMatrix::new_unchecked(gram, GramKind::Batch, false)
}

/// Divides every (item, channel) slice by its Frobenius norm; near-zero slices become zero.
pub fn channel_normalize(a: &FeatureMap) -> FeatureMap {
    let mut out = a.values().to_owned();
    for mut item in out.outer_iter_mut() {
        for mut slice in item.outer_iter_mut() {
            let n = slice.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n < NORM_EPS {
                slice.fill(0.0);
            } else {
                slice /= n;
            }
        }
    }
    FeatureMap::new_unchecked(out, a.layer().clone())
}

/// Pulls a gradient on the normalized map back to the raw map.
///
/// For a slice `x` with `y = x / |x|`, `dx = (dy - y <y, dy>) / |x|`.
pub fn channel_normalize_backward(a: &Array4<f64>, grad_out: &Array4<f64>) -> Array4<f64> {
    let mut grad_in = Array4::zeros(a.raw_dim());
    for ((x_item, dy_item), mut dx_item) in a
        .outer_iter()
        .zip(grad_out.outer_iter())
        .zip(grad_in.outer_iter_mut())
    {
        for ((x, dy), mut dx) in x_item
            .outer_iter()
            .zip(dy_item.outer_iter())
            .zip(dx_item.outer_iter_mut())
        {
            let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n < NORM_EPS {
                continue;
            }
            let proj: f64 = x.iter().zip(dy.iter()).map(|(x, d)| x * d).sum::<f64>() / n;
            Zip::from(&mut dx)
                .and(&x)
                .and(&dy)
                .for_each(|dx, &x, &dy| *dx = (dy - (x / n) * proj) / n);
        }
    }
    grad_in
}

/// Frames of one item as columns: (c*h, w).
fn frame_matrix(item: ArrayView3<'_, f64>) -> Array2<f64> {
    let (c, h, w) = item.dim();
    item.as_standard_layout()
        .into_owned()
        .into_shape_with_order((c * h, w))
        .expect("standard layout reshape")
}

/// Frame-by-frame similarity of one batch item (zero-based `index`).
///
/// Each of the `w` frames is the length `c*h` column of the item; the result is
/// `F^T F`, a symmetric positive-semidefinite `w x w` matrix.
pub fn frame_gram(a_norm: &FeatureMap, index: usize) -> Result<SimilarityMatrix> {
    if index >= a_norm.batch() {
        return Err(Error::Index {
            index,
            len: a_norm.batch(),
        });
    }
    let f = frame_matrix(a_norm.item(index));
    Ok(SimilarityMatrix::new_unchecked(
        f.t().dot(&f),
        GramKind::Frame,
        false,
    ))
}

/// Gradient of a frame gram w.r.t. the (c, h, w) item it was built from: `F (dG + dG^T)`.
pub fn frame_gram_backward(item: ArrayView3<'_, f64>, d_gram: ArrayView2<'_, f64>) -> Array3<f64> {
    let (c, h, w) = item.dim();
    let f = frame_matrix(item);
    let sym = &d_gram + &d_gram.t();
    f.dot(&sym)
        .into_shape_with_order((c, h, w))
        .expect("frame gradient reshape")
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Elementwise `1 / (1 + exp(-gamma (g - delta)))`.
pub fn sigmoid_squash(g: &SimilarityMatrix, p: SquashParams) -> Result<SimilarityMatrix> {
    if g.is_squashed() {
        return Err(Error::InvalidInput(
            "similarity matrix is already squashed".into(),
        ));
    }
    let values = g.values().mapv(|v| sigmoid(p.gamma * (v - p.delta)));
    Ok(SimilarityMatrix::new_unchecked(values, g.kind(), true))
}

/// Source coordinate for corner-aligned sampling.
#[inline]
fn source_coord(dst: usize, src_len: usize, dst_len: usize) -> (usize, usize, f64) {
    if dst_len == 1 || src_len == 1 {
        return (0, 0, 0.0);
    }
    let x = dst as f64 * (src_len - 1) as f64 / (dst_len - 1) as f64;
    let x0 = (x.floor() as usize).min(src_len - 1);
    let x1 = (x0 + 1).min(src_len - 1);
    (x0, x1, x - x0 as f64)
}

/// Resizes every (item, channel) slice to `target_h x target_w` with corner-aligned
/// bilinear interpolation.
pub fn bilinear_resize(a: &FeatureMap, target_h: usize, target_w: usize) -> Result<FeatureMap> {
    if target_h == 0 || target_w == 0 {
        return Err(Error::InvalidInput(format!(
            "resize target must be at least 1x1, got {target_h}x{target_w}"
        )));
    }
    let [b, c, h, w] = a.dims();
    if h == target_h && w == target_w {
        return Ok(a.clone());
    }
    let rows: Vec<_> = (0..target_h).map(|y| source_coord(y, h, target_h)).collect();
    let cols: Vec<_> = (0..target_w).map(|x| source_coord(x, w, target_w)).collect();
    let src = a.values();
    let mut out = Array4::zeros((b, c, target_h, target_w));
    for bi in 0..b {
        for ci in 0..c {
            let slice = src.index_axis(Axis(0), bi);
            let slice = slice.index_axis(Axis(0), ci);
            let mut dst = out.slice_mut(ndarray::s![bi, ci, .., ..]);
            for (y, &(y0, y1, fy)) in rows.iter().enumerate() {
                for (x, &(x0, x1, fx)) in cols.iter().enumerate() {
                    let top = slice[[y0, x0]] * (1.0 - fx) + slice[[y0, x1]] * fx;
                    let bottom = slice[[y1, x0]] * (1.0 - fx) + slice[[y1, x1]] * fx;
                    dst[[y, x]] = top * (1.0 - fy) + bottom * fy;
                }
            }
        }
    }
    Ok(FeatureMap::new_unchecked(out, a.layer().clone()))
}

/// Backward pass of [`row_normalized_gram`] followed by `Q Q^T`.
///
/// Given the unnormalized gram `raw`, its row-normalized form `normed` and the
/// gradient `d_normed`, returns the gradient with respect to `q`.
pub fn sp_gram_backward(
    q: &Array2<f64>,
    raw: &Array2<f64>,
    normed: &Array2<f64>,
    d_normed: &Array2<f64>,
) -> Array2<f64> {
    let mut d_raw = Array2::zeros(raw.raw_dim());
    for (i, mut d_row) in d_raw.rows_mut().into_iter().enumerate() {
        let n = raw.row(i).dot(&raw.row(i)).sqrt();
        if n < NORM_EPS {
            continue;
        }
        let g = normed.row(i);
        let dg = d_normed.row(i);
        let proj = g.dot(&dg);
        Zip::from(&mut d_row)
            .and(&g)
            .and(&dg)
            .for_each(|d, &g, &dg| *d = (dg - g * proj) / n);
    }
    let sym = &d_raw + &d_raw.t();
    sym.dot(q)
}
