//! Datasets with a binary label and a binary sensitive attribute.

use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};

/// Feature matrix (row-major) with binary labels and binary sensitive
/// attributes. Immutable after validation.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: Vec<f64>,
    dim: usize,
    labels: Vec<u8>,
    sensitive: Vec<u8>,
}

/// Sample indices split by sensitive attribute.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct GroupView {
    pub s0: Vec<usize>,
    pub s1: Vec<usize>,
}

impl GroupView {
    pub fn group(&self, g: u8) -> &[usize] {
        if g == 0 {
            &self.s0
        } else {
            &self.s1
        }
    }
}

/// Indices into a [`LabeledDataset`], distinct within one batch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub indices: Vec<usize>,
}

impl Batch {
    /// A batch covering the whole dataset in index order.
    pub fn full(ds: &LabeledDataset) -> Self {
        Batch {
            indices: (0..ds.len()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

fn binary(field: &'static str, row: usize, value: f64) -> Result<u8> {
    if value == 0.0 {
        Ok(0)
    } else if value == 1.0 {
        Ok(1)
    } else {
        Err(Error::NonBinary { field, row, value })
    }
}

impl LabeledDataset {
    /// Validate raw arrays. Labels and sensitive values must be exactly 0 or 1;
    /// nothing is coerced.
    pub fn from_arrays(features: &[Vec<f64>], labels: &[f64], sensitive: &[f64]) -> Result<Self> {
        let n = features.len();
        if labels.len() != n || sensitive.len() != n {
            return Err(Error::LengthMismatch(format!(
                "{} feature rows, {} labels, {} sensitive values",
                n,
                labels.len(),
                sensitive.len()
            )));
        }
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        let dim = features[0].len();
        if dim == 0 {
            return Err(Error::invalid("feature dimension must be at least 1"));
        }
        let mut flat = Vec::with_capacity(n * dim);
        for (row, x) in features.iter().enumerate() {
            if x.len() != dim {
                return Err(Error::LengthMismatch(format!(
                    "row {row} has {} features, expected {dim}",
                    x.len()
                )));
            }
            if let Some(col) = x.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite { row, col });
            }
            flat.extend_from_slice(x);
        }
        let labels = labels
            .iter()
            .enumerate()
            .map(|(row, &v)| binary("label", row, v))
            .collect::<Result<Vec<_>>>()?;
        let sensitive = sensitive
            .iter()
            .enumerate()
            .map(|(row, &v)| binary("sensitive", row, v))
            .collect::<Result<Vec<_>>>()?;
        Ok(LabeledDataset {
            features: flat,
            dim,
            labels,
            sensitive,
        })
    }

    /// Build from already-binary columns and a row-major feature buffer.
    pub fn from_flat(features: Vec<f64>, dim: usize, labels: Vec<u8>, sensitive: Vec<u8>) -> Result<Self> {
        let n = labels.len();
        if dim == 0 {
            return Err(Error::invalid("feature dimension must be at least 1"));
        }
        if features.len() != n * dim || sensitive.len() != n {
            return Err(Error::LengthMismatch(format!(
                "{} feature values for {n} rows of dimension {dim}, {} sensitive values",
                features.len(),
                sensitive.len()
            )));
        }
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        if let Some(pos) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: pos / dim,
                col: pos % dim,
            });
        }
        for (field, col) in [("label", &labels), ("sensitive", &sensitive)] {
            if let Some(row) = col.iter().position(|&v| v > 1) {
                return Err(Error::NonBinary {
                    field,
                    row,
                    value: f64::from(col[row]),
                });
            }
        }
        Ok(LabeledDataset {
            features,
            dim,
            labels,
            sensitive,
        })
    }

    /// Inverse of [`LabeledDataset::from_arrays`].
    pub fn to_arrays(&self) -> (Vec<Vec<f64>>, Vec<f64>, Vec<f64>) {
        (
            self.features.chunks(self.dim).map(<[f64]>::to_vec).collect(),
            self.labels.iter().map(|&v| f64::from(v)).collect(),
            self.sensitive.iter().map(|&v| f64::from(v)).collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> u8 {
        self.labels[i]
    }

    pub fn sensitive(&self, i: usize) -> u8 {
        self.sensitive[i]
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn sensitive_attrs(&self) -> &[u8] {
        &self.sensitive
    }

    /// Copy the given rows, in the given order, into a new dataset.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        let mut sensitive = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::invalid(format!(
                    "index {i} out of range for dataset of {} samples",
                    self.len()
                )));
            }
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
            sensitive.push(self.sensitive[i]);
        }
        Ok(LabeledDataset {
            features,
            dim: self.dim,
            labels,
            sensitive,
        })
    }
}

/// Partition sample indices by sensitive attribute. Either side may be empty.
pub fn split_by_group(ds: &LabeledDataset) -> GroupView {
    split_indices_by_group(ds, 0..ds.len())
}

pub(crate) fn split_indices_by_group(ds: &LabeledDataset, indices: impl IntoIterator<Item = usize>) -> GroupView {
    let mut view = GroupView::default();
    for i in indices {
        if ds.sensitive(i) == 0 {
            view.s0.push(i);
        } else {
            view.s1.push(i);
        }
    }
    view
}

/// Uniform without-replacement draw of `batch_size` indices, clamped to the
/// dataset size.
pub fn sample_batch<R: Rng + ?Sized>(ds: &LabeledDataset, batch_size: usize, rng: &mut R) -> Result<Batch> {
    if batch_size == 0 {
        return Err(Error::invalid("batch_size must be at least 1"));
    }
    let amount = batch_size.min(ds.len());
    Ok(Batch {
        indices: index::sample(rng, ds.len(), amount).into_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn toy(sensitive: &[f64]) -> LabeledDataset {
        let n = sensitive.len();
        let feats: Vec<Vec<f64>> = (0..n).map(|i| vec![i as f64]).collect();
        LabeledDataset::from_arrays(&feats, &vec![0.0; n], sensitive).unwrap()
    }

    #[test]
    fn validates_well_formed_input() {
        let ds = LabeledDataset::from_arrays(&[vec![1.0, 2.0], vec![3.0, 4.0]], &[0.0, 1.0], &[1.0, 0.0]).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.dim(), 2);
        assert_eq!(ds.row(1), &[3.0, 4.0]);
    }

    #[test]
    fn rejects_non_binary_label() {
        let err = LabeledDataset::from_arrays(&[vec![0.0], vec![0.0]], &[0.0, 2.0], &[0.0, 1.0]).unwrap_err();
        assert_eq!(err.to_string(), "non-binary label at row 1: 2");
    }

    #[test]
    fn rejects_length_mismatch() {
        let err =
            LabeledDataset::from_arrays(&[vec![0.0], vec![0.0], vec![0.0]], &[0.0, 1.0], &[0.0, 1.0]).unwrap_err();
        assert!(err.to_string().starts_with("length mismatch"), "{err}");
    }

    #[test]
    fn rejects_non_finite_and_ragged_rows() {
        let err = LabeledDataset::from_arrays(&[vec![f64::NAN]], &[0.0], &[0.0]).unwrap_err();
        assert!(matches!(err, Error::NonFinite { row: 0, col: 0 }));
        let err = LabeledDataset::from_arrays(&[vec![0.0, 1.0], vec![0.0]], &[0.0, 0.0], &[0.0, 0.0]).unwrap_err();
        assert!(matches!(err, Error::LengthMismatch(_)));
        assert!(matches!(
            LabeledDataset::from_arrays(&[], &[], &[]),
            Err(Error::EmptyDataset)
        ));
    }

    #[test]
    fn split_by_group_examples() {
        let v = split_by_group(&toy(&[0.0, 1.0, 0.0]));
        assert_eq!((v.s0, v.s1), (vec![0, 2], vec![1]));
        let v = split_by_group(&toy(&[1.0, 1.0]));
        assert_eq!((v.s0, v.s1), (vec![], vec![0, 1]));
        let v = split_by_group(&toy(&[0.0]));
        assert_eq!((v.s0, v.s1), (vec![0], vec![]));
    }

    #[test]
    fn exhaustive_and_clamped_batches() {
        let ds = toy(&[0.0; 5]);
        let mut b = sample_batch(&ds, 5, &mut rng::stream(1, &[])).unwrap().indices;
        b.sort_unstable();
        assert_eq!(b, vec![0, 1, 2, 3, 4]);

        let ds = toy(&[0.0; 3]);
        let mut b = sample_batch(&ds, 8, &mut rng::stream(1, &[])).unwrap().indices;
        b.sort_unstable();
        assert_eq!(b, vec![0, 1, 2]);

        assert!(sample_batch(&ds, 0, &mut rng::stream(1, &[])).is_err());
    }

    #[test]
    fn batches_are_deterministic_per_seed() {
        let ds = toy(&[0.0; 50]);
        let a = sample_batch(&ds, 10, &mut rng::stream(9, &[3])).unwrap();
        let b = sample_batch(&ds, 10, &mut rng::stream(9, &[3])).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn batch_draws_are_uniform() {
        // n = 10, batch = 2, 10 000 draws: each index expected 2 000 times.
        let ds = toy(&[0.0; 10]);
        let mut counts = [0usize; 10];
        let mut r = rng::stream(42, &[]);
        for _ in 0..10_000 {
            let b = sample_batch(&ds, 2, &mut r).unwrap();
            assert_ne!(b.indices[0], b.indices[1]);
            for i in b.indices {
                counts[i] += 1;
            }
        }
        let expected = 2_000.0;
        // Binomial sd for p = 0.2 over 10 000 draws.
        let sigma = (10_000.0_f64 * 0.2 * 0.8).sqrt();
        for c in counts {
            assert!((c as f64 - expected).abs() <= 3.0 * sigma, "{counts:?}");
        }
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // 99.9th percentile of chi-square with 9 degrees of freedom.
        assert!(chi2 < 27.88, "chi2 = {chi2}");
    }
}
