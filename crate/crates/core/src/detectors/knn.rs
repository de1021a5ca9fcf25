//! Exact Euclidean nearest neighbours and the kNN label-entropy indicator.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{
    check_dim, from_payload, labelled, FitContext, Indicator, IndicatorFactory, Sample, SampleSet, Scorer, Uncertainty,
};
use crate::dataset::FeatureDataset;
use crate::error::{Error, Result};
use crate::io::{LoadContext, ReferenceFile, SaveContext};
use crate::numerics::{squared_distance, Matrix};

/// Indices of the `k` reference rows closest to `x`, nearest first. Ties go to the lower index.
pub fn knn(reference: &Matrix, x: &[f64], k: usize) -> Result<Vec<usize>> {
    knn_excluding(reference, x, k, None)
}

/// Like [`knn`] but never returns `skip` (leave-one-out queries on the reference itself).
pub fn knn_excluding(reference: &Matrix, x: &[f64], k: usize, skip: Option<usize>) -> Result<Vec<usize>> {
    check_dim(x, reference.cols())?;
    let available = reference.rows() - usize::from(skip.is_some_and(|s| s < reference.rows()));
    if k == 0 || k > available {
        return Err(Error::invalid(format!("k = {k} must be in 1..={available}")));
    }
    let mut cand: Vec<(f64, usize)> = reference
        .iter_rows()
        .enumerate()
        .filter(|(i, _)| Some(*i) != skip)
        .map(|(i, r)| (squared_distance(r, x), i))
        .collect();
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < cand.len() {
        cand.select_nth_unstable_by(k - 1, cmp);
        cand.truncate(k);
    }
    cand.sort_unstable_by(cmp);
    Ok(cand.into_iter().map(|(_, i)| i).collect())
}

/// Entropy of the label histogram over the `k` nearest reference rows.
pub fn score_knn_label_entropy(reference: &FeatureDataset, x: &[f64], k: usize) -> Result<f64> {
    let nn = knn(&reference.features, x, k)?;
    let mut counts = std::collections::BTreeMap::<i64, usize>::new();
    for i in nn {
        *counts.entry(reference.labels[i]).or_default() += 1;
    }
    let k = k as f64;
    Ok(-counts.values().map(|&c| c as f64 / k).map(|p| p * p.ln()).sum::<f64>())
}

#[derive(Debug)]
pub struct KnnEntropyIndicator {
    pub k: usize,
    pub reference: Arc<FeatureDataset>,
}

impl Scorer for KnnEntropyIndicator {
    fn score(&self, sample: &Sample<'_>) -> Result<f64> {
        score_knn_label_entropy(&self.reference, sample.features, self.k)
    }
}

#[derive(Serialize, Deserialize)]
struct KnnEntropyPayload {
    k: usize,
    reference: ReferenceFile,
}

impl Indicator for KnnEntropyIndicator {
    fn kind(&self) -> &'static str {
        "knn_entropy"
    }

    fn uncertainty(&self) -> Uncertainty {
        Uncertainty::Aleatoric
    }

    fn save(&self, ctx: &mut SaveContext) -> Result<serde_json::Value> {
        let reference = ctx.persist_reference(&self.reference)?;
        Ok(serde_json::to_value(KnnEntropyPayload { k: self.k, reference })?)
    }
}

pub struct KnnEntropyFactory;

impl IndicatorFactory for KnnEntropyFactory {
    fn kind(&self) -> &'static str {
        "knn_entropy"
    }

    fn uncertainty(&self) -> Uncertainty {
        Uncertainty::Aleatoric
    }

    fn fit(&self, train: &SampleSet, ctx: &FitContext<'_>) -> Result<Box<dyn Indicator>> {
        let mut reference = labelled(&train.data);
        reference.softmax = None;
        reference.cluster = None;
        let k = ctx.params.k;
        if k == 0 || k > reference.len() {
            return Err(Error::invalid(format!("k = {k} must be in 1..={}", reference.len())));
        }
        Ok(Box::new(KnnEntropyIndicator { k, reference: Arc::new(reference) }))
    }

    fn load(&self, payload: &serde_json::Value, ctx: &LoadContext) -> Result<Box<dyn Indicator>> {
        let p: KnnEntropyPayload = from_payload(payload)?;
        let reference = ctx.load_reference(&p.reference)?;
        if p.k == 0 || p.k > reference.len() {
            return Err(Error::Model(format!("k = {} does not fit the reference set", p.k)));
        }
        Ok(Box::new(KnnEntropyIndicator { k: p.k, reference }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn full_sort_oracle(reference: &Matrix, x: &[f64], k: usize) -> Vec<usize> {
        let mut all: Vec<usize> = (0..reference.rows()).collect();
        all.sort_by(|&a, &b| {
            squared_distance(reference.row(a), x).total_cmp(&squared_distance(reference.row(b), x)).then(a.cmp(&b))
        });
        all.truncate(k);
        all
    }

    #[test]
    fn exact_match_is_first() {
        let r = Matrix::from_rows(&[[0.0, 0.0], [5.0, 5.0], [1.0, 1.0]], 2).unwrap();
        assert_eq!(knn(&r, &[5.0, 5.0], 1).unwrap(), vec![1]);
    }

    #[test]
    fn ties_prefer_lower_index() {
        let r = Matrix::from_rows(&[[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0]], 2).unwrap();
        assert_eq!(knn(&r, &[0.0, 0.0], 2).unwrap(), vec![0, 1]);
        assert_eq!(knn(&r, &[0.0, 0.0], 3).unwrap(), vec![0, 1, 2]);
    }

    #[test]
    fn invalid_k() {
        let r = Matrix::from_rows(&[[1.0], [2.0]], 1).unwrap();
        assert!(knn(&r, &[0.0], 0).is_err());
        assert!(knn(&r, &[0.0], 3).is_err());
        assert!(knn_excluding(&r, &[0.0], 2, Some(0)).is_err());
        assert_eq!(knn_excluding(&r, &[1.0], 1, Some(0)).unwrap(), vec![1]);
    }

    #[test]
    fn matches_full_sort_on_random_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let data: Vec<f64> = (0..1000).map(|_| rng.random_range(-1.0..1.0)).collect();
        let r = Matrix::new(500, 2, data).unwrap();
        for _ in 0..50 {
            let x = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            for k in [1, 7, 50, 500] {
                assert_eq!(knn(&r, &x, k).unwrap(), full_sort_oracle(&r, &x, k));
            }
        }
    }

    #[test]
    fn label_entropy_values() {
        let feats = Matrix::from_rows(&(0..10).map(|i| [i as f64]).collect::<Vec<_>>(), 1).unwrap();
        let same = FeatureDataset::new(feats.clone(), vec![1; 10]).unwrap();
        assert_eq!(score_knn_label_entropy(&same, &[0.0], 10).unwrap(), 0.0);

        let half = FeatureDataset::new(feats.clone(), (0..10).map(|i| i % 2).collect()).unwrap();
        assert!((score_knn_label_entropy(&half, &[0.0], 10).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);

        let seven = FeatureDataset::new(feats, (0..10).map(|i| i64::from(i >= 7)).collect()).unwrap();
        assert!((score_knn_label_entropy(&seven, &[0.0], 10).unwrap() - 0.610864).abs() < 1e-6);
        assert!(score_knn_label_entropy(&seven, &[0.0], 11).is_err());
    }

    proptest! {
        #[test]
        fn knn_agrees_with_oracle_on_integer_grids(
            pts in prop::collection::vec((0i8..6, 0i8..6), 2..40),
            q in (0i8..6, 0i8..6),
            k in 1usize..40,
        ) {
            let rows: Vec<[f64; 2]> = pts.iter().map(|&(a, b)| [f64::from(a), f64::from(b)]).collect();
            let r = Matrix::from_rows(&rows, 2).unwrap();
            let k = k.min(rows.len());
            let x = [f64::from(q.0), f64::from(q.1)];
            prop_assert_eq!(knn(&r, &x, k).unwrap(), full_sort_oracle(&r, &x, k));
        }
    }
}
