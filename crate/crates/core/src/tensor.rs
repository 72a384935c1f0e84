//! Shared array types: layer activations and similarity matrices.

use std::fmt;

use ndarray::{s, Array2, Array4, ArrayView3, Axis};

use crate::error::{Error, Result};

/// Identifier of the layer that produced an activation, e.g. `student.conv`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LayerId(pub String);

impl LayerId {
    pub fn new(name: impl Into<String>) -> Self {
        LayerId(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for LayerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// A rank-4 activation with axes (batch, channels, height, width).
///
/// Height indexes frequency and width indexes time frames.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    values: Array4<f64>,
    layer: LayerId,
}

impl FeatureMap {
    /// Wraps an array, rejecting empty axes and non-finite values.
    pub fn new(values: Array4<f64>, layer: LayerId) -> Result<Self> {
        if values.shape().iter().any(|&d| d == 0) {
            return Err(Error::InvalidInput(format!(
                "feature map axes must be non-empty, got {:?}",
                values.shape()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "feature map from {layer} contains non-finite values"
            )));
        }
        Ok(FeatureMap { values, layer })
    }

    pub(crate) fn new_unchecked(values: Array4<f64>, layer: LayerId) -> Self {
        FeatureMap { values, layer }
    }

    pub fn from_shape_vec(shape: [usize; 4], data: Vec<f64>, layer: LayerId) -> Result<Self> {
        let values = Array4::from_shape_vec(shape, data)
            .map_err(|e| Error::InvalidInput(format!("feature map shape: {e}")))?;
        FeatureMap::new(values, layer)
    }

    pub fn zeros(shape: [usize; 4], layer: LayerId) -> Self {
        FeatureMap::new_unchecked(Array4::zeros(shape), layer)
    }

    /// Stacks single-item maps along the batch axis.
    pub fn stack(items: &[&FeatureMap]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::InvalidInput("cannot stack zero feature maps".into()))?;
        let views: Vec<_> = items.iter().map(|m| m.values.view()).collect();
        let values = ndarray::concatenate(Axis(0), &views)
            .map_err(|e| Error::InvalidInput(format!("stacking feature maps: {e}")))?;
        Ok(FeatureMap::new_unchecked(values, first.layer.clone()))
    }

    pub fn values(&self) -> &Array4<f64> {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut Array4<f64> {
        &mut self.values
    }

    pub fn into_values(self) -> Array4<f64> {
        self.values
    }

    pub fn layer(&self) -> &LayerId {
        &self.layer
    }

    pub fn batch(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn channels(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn height(&self) -> usize {
        self.values.shape()[2]
    }

    pub fn width(&self) -> usize {
        self.values.shape()[3]
    }

    pub fn dims(&self) -> [usize; 4] {
        let s = self.values.shape();
        [s[0], s[1], s[2], s[3]]
    }

    /// The (c, h, w) block of one batch item.
    pub fn item(&self, index: usize) -> ArrayView3<'_, f64> {
        self.values.slice(s![index, .., .., ..])
    }

    /// Copies one batch item into a map with batch size 1.
    pub fn item_map(&self, index: usize) -> FeatureMap {
        let v = self.values.slice(s![index..index + 1, .., .., ..]).to_owned();
        FeatureMap::new_unchecked(v, self.layer.clone())
    }

    pub fn scaled(&self, k: f64) -> FeatureMap {
        FeatureMap::new_unchecked(&self.values * k, self.layer.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GramKind {
    /// b x b similarity between batch items.
    Batch,
    /// w x w similarity between time frames of one item.
    Frame,
}

/// A square similarity matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    values: Array2<f64>,
    kind: GramKind,
    squashed: bool,
}

impl SimilarityMatrix {
    pub fn new(values: Array2<f64>, kind: GramKind, squashed: bool) -> Result<Self> {
        if values.nrows() != values.ncols() {
            return Err(Error::InvalidInput(format!(
                "similarity matrix must be square, got {}x{}",
                values.nrows(),
                values.ncols()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(
                "similarity matrix contains non-finite values".into(),
            ));
        }
        Ok(SimilarityMatrix {
            values,
            kind,
            squashed,
        })
    }

    pub(crate) fn new_unchecked(values: Array2<f64>, kind: GramKind, squashed: bool) -> Self {
        SimilarityMatrix {
            values,
            kind,
            squashed,
        }
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    pub fn kind(&self) -> GramKind {
        self.kind
    }

    pub fn is_squashed(&self) -> bool {
        self.squashed
    }

    pub fn size(&self) -> usize {
        self.values.nrows()
    }

    /// Squared Frobenius distance to another matrix of the same size.
    pub fn sq_distance(&self, other: &SimilarityMatrix) -> Result<f64> {
        if self.values.dim() != other.values.dim() {
            return Err(Error::InvalidInput(format!(
                "similarity matrices differ in size: {} vs {}",
                self.size(),
                other.size()
            )));
        }
        Ok(self
            .values
            .iter()
            .zip(other.values.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum())
    }
}
