use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Label used for unlabeled rows and OOD candidates.
pub const OOD_LABEL: i64 = -1;

/// Feature vectors with integer labels, optional per-row softmax vectors and
/// an optional free-form cluster tag.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureDataset {
    pub ids: Vec<String>,
    pub labels: Vec<i64>,
    pub features: Matrix,
    pub softmax: Option<Matrix>,
    pub cluster: Option<Vec<String>>,
}

impl FeatureDataset {
    /// Dataset with ids `0..n` and no softmax or cluster columns.
    pub fn new(features: Matrix, labels: Vec<i64>) -> Result<Self> {
        let ids = (0..features.rows()).map(|i| i.to_string()).collect();
        Self::with_ids(ids, features, labels)
    }

    pub fn with_ids(ids: Vec<String>, features: Matrix, labels: Vec<i64>) -> Result<Self> {
        let ds = FeatureDataset { ids, labels, features, softmax: None, cluster: None };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.features.rows();
        if self.ids.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: self.ids.len() });
        }
        if self.labels.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: self.labels.len() });
        }
        if let Some(l) = self.labels.iter().find(|&&l| l < OOD_LABEL) {
            return Err(Error::invalid(format!("label {l} below -1")));
        }
        if let Some(sm) = &self.softmax {
            if sm.rows() != n {
                return Err(Error::DimensionMismatch { expected: n, got: sm.rows() });
            }
            for (row, p) in sm.iter_rows().enumerate() {
                check_softmax(p, row)?;
            }
        }
        if let Some(c) = &self.cluster {
            if c.len() != n {
                return Err(Error::DimensionMismatch { expected: n, got: c.len() });
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Number of classes implied by the labels (`max_label + 1`), zero if unlabeled.
    pub fn n_classes(&self) -> usize {
        self.labels.iter().copied().max().map_or(0, |m| (m + 1).max(0) as usize)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.features.row(i)
    }

    /// Rows selected by index, in the given order.
    pub fn select(&self, indices: &[usize]) -> FeatureDataset {
        let pick = |m: &Matrix| {
            let rows: Vec<&[f64]> = indices.iter().map(|&i| m.row(i)).collect();
            Matrix::from_rows(&rows, m.cols()).expect("rows share width")
        };
        FeatureDataset {
            ids: indices.iter().map(|&i| self.ids[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            features: pick(&self.features),
            softmax: self.softmax.as_ref().map(pick),
            cluster: self.cluster.as_ref().map(|c| indices.iter().map(|&i| c[i].clone()).collect()),
        }
    }

    /// Rows whose cluster tag equals `tag`.
    pub fn filter_cluster(&self, tag: &str) -> FeatureDataset {
        let idx: Vec<usize> = match &self.cluster {
            Some(c) => (0..self.len()).filter(|&i| c[i] == tag).collect(),
            None => Vec::new(),
        };
        self.select(&idx)
    }

    /// Concatenates datasets with the same column layout.
    pub fn concat(parts: &[&FeatureDataset]) -> Result<FeatureDataset> {
        let Some(first) = parts.first() else {
            return Err(Error::invalid("nothing to concatenate"));
        };
        let d = first.dim();
        let has_sm = first.softmax.is_some();
        let has_cluster = first.cluster.is_some();
        let mut out = FeatureDataset {
            ids: Vec::new(),
            labels: Vec::new(),
            features: Matrix::zeros(0, d),
            softmax: None,
            cluster: has_cluster.then(Vec::new),
        };
        let mut feats = Vec::new();
        let mut sm = Vec::new();
        let mut sm_cols = 0;
        for p in parts {
            if p.dim() != d || p.softmax.is_some() != has_sm || p.cluster.is_some() != has_cluster {
                return Err(Error::invalid("datasets have different column layouts"));
            }
            out.ids.extend(p.ids.iter().cloned());
            out.labels.extend(&p.labels);
            feats.extend_from_slice(p.features.data());
            if let Some(s) = &p.softmax {
                sm_cols = s.cols();
                sm.extend_from_slice(s.data());
            }
            if let (Some(dst), Some(src)) = (out.cluster.as_mut(), &p.cluster) {
                dst.extend(src.iter().cloned());
            }
        }
        out.features = Matrix::new(out.ids.len(), d, feats)?;
        if has_sm {
            out.softmax = Some(Matrix::new(out.ids.len(), sm_cols, sm)?);
        }
        Ok(out)
    }
}

/// Tolerance on `|Σp - 1|` for softmax rows.
pub const SOFTMAX_TOLERANCE: f64 = 1e-6;

pub(crate) fn check_softmax(p: &[f64], row: usize) -> Result<()> {
    if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::invalid(format!("softmax row {row} has negative or non-finite entries")));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > SOFTMAX_TOLERANCE {
        return Err(Error::SoftmaxNotNormalized { row, sum });
    }
    Ok(())
}
