//! Threshold-free OOD evaluation.
//!
//! Scores are oriented so that higher means more out-of-distribution. TPR is
//! measured on in-distribution samples (the fraction kept below the threshold)
//! and TNR on OOD samples (the fraction rejected above it).

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ORIENTATION: &str =
    "higher score = more OOD; TPR measured on in-distribution samples (score <= t), TNR on OOD samples (score > t)";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoredSample {
    pub score: f64,
    pub is_ood: bool,
}

/// Pairs in-distribution and OOD scores into one sample list.
pub fn scored(id: &[f64], ood: &[f64]) -> Vec<ScoredSample> {
    id.iter()
        .map(|&score| ScoredSample { score, is_ood: false })
        .chain(ood.iter().map(|&score| ScoredSample { score, is_ood: true }))
        .collect()
}

/// Sorted in-distribution and OOD score vectors.
fn split(samples: &[ScoredSample]) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut id = Vec::new();
    let mut ood = Vec::new();
    for s in samples {
        if !s.score.is_finite() {
            return Err(Error::NonFinite(format!("score {}", s.score)));
        }
        if s.is_ood {
            ood.push(s.score);
        } else {
            id.push(s.score);
        }
    }
    if id.is_empty() {
        return Err(Error::invalid("empty in-distribution population"));
    }
    if ood.is_empty() {
        return Err(Error::invalid("empty OOD population"));
    }
    id.sort_by(f64::total_cmp);
    ood.sort_by(f64::total_cmp);
    Ok((id, ood))
}

/// `P(ood > id) + ½·P(ood = id)` computed from midranks.
pub fn auroc(samples: &[ScoredSample]) -> Result<f64> {
    let (id, ood) = split(samples)?;
    let mut all: Vec<(f64, bool)> = id.iter().map(|&s| (s, false)).chain(ood.iter().map(|&s| (s, true))).collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut ood_rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        // Ranks i+1..=j share the midrank.
        let midrank = (i + 1 + j) as f64 / 2.0;
        let n_ood = all[i..j].iter().filter(|(_, o)| *o).count();
        ood_rank_sum += midrank * n_ood as f64;
        i = j;
    }
    let (n_id, n_ood) = (id.len() as f64, ood.len() as f64);
    let u = ood_rank_sum - n_ood * (n_ood + 1.0) / 2.0;
    Ok(u / (n_id * n_ood))
}

/// Fraction of OOD samples above the smallest threshold that keeps at least
/// `tpr_target` of in-distribution samples at or below it.
pub fn tnr_at_tpr(samples: &[ScoredSample], tpr_target: f64) -> Result<f64> {
    if !(tpr_target > 0.0 && tpr_target <= 1.0) {
        return Err(Error::invalid(format!("tpr target must be in (0, 1], got {tpr_target}")));
    }
    let (id, ood) = split(samples)?;
    let threshold = id_quantile_threshold(&id, tpr_target);
    let kept = ood.partition_point(|&s| s <= threshold);
    Ok((ood.len() - kept) as f64 / ood.len() as f64)
}

/// Smallest value `t` of the sorted slice with `#{v <= t} >= target·n`.
pub(crate) fn id_quantile_threshold(sorted: &[f64], target: f64) -> f64 {
    let n = sorted.len();
    let m = ((target * n as f64) - 1e-9).ceil().clamp(1.0, n as f64) as usize;
    sorted[m - 1]
}

/// Best equal-prior detection accuracy over all thresholds.
pub fn dtacc(samples: &[ScoredSample]) -> Result<f64> {
    let (id, ood) = split(samples)?;
    let (n_id, n_ood) = (id.len() as f64, ood.len() as f64);
    // Threshold below everything: no iD kept, every OOD rejected.
    let mut best = 0.5f64;
    let (mut i, mut o) = (0usize, 0usize);
    while i < id.len() || o < ood.len() {
        let t = match (id.get(i), ood.get(o)) {
            (Some(&a), Some(&b)) => a.min(b),
            (Some(&a), None) => a,
            (None, Some(&b)) => b,
            (None, None) => unreachable!(),
        };
        while i < id.len() && id[i] <= t {
            i += 1;
        }
        while o < ood.len() && ood[o] <= t {
            o += 1;
        }
        let acc = 0.5 * (i as f64 / n_id) + 0.5 * ((ood.len() - o) as f64 / n_ood);
        best = best.max(acc);
    }
    Ok(best)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Positive {
    /// In-distribution samples are positive; lower score ranks first.
    In,
    /// OOD samples are positive; higher score ranks first.
    Out,
}

/// Step-wise area under the precision-recall curve.
pub fn aupr(samples: &[ScoredSample], positive: Positive) -> Result<f64> {
    let (id, ood) = split(samples)?;
    // (ranking key, is positive), ranked by descending key.
    let mut ranked: Vec<(f64, bool)> = match positive {
        Positive::Out => id.iter().map(|&s| (s, false)).chain(ood.iter().map(|&s| (s, true))).collect(),
        Positive::In => id.iter().map(|&s| (-s, true)).chain(ood.iter().map(|&s| (-s, false))).collect(),
    };
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0));
    let n_pos = ranked.iter().filter(|(_, p)| *p).count() as f64;

    let (mut tp, mut fp) = (0usize, 0usize);
    let mut prev_recall = 0.0;
    let mut area = 0.0;
    let mut i = 0;
    while i < ranked.len() {
        let mut j = i;
        while j < ranked.len() && ranked[j].0 == ranked[i].0 {
            if ranked[j].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            j += 1;
        }
        let recall = tp as f64 / n_pos;
        let precision = tp as f64 / (tp + fp) as f64;
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j;
    }
    Ok(area)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub orientation: String,
    pub tpr_target: f64,
    pub tnr_at_tpr: f64,
    pub auroc: f64,
    pub dtacc: f64,
    pub aupr_in: f64,
    pub aupr_out: f64,
    pub n_id: usize,
    pub n_ood: usize,
}

impl MetricsReport {
    pub fn evaluate(samples: &[ScoredSample], tpr_target: f64) -> Result<Self> {
        Ok(MetricsReport {
            orientation: ORIENTATION.to_string(),
            tpr_target,
            tnr_at_tpr: tnr_at_tpr(samples, tpr_target)?,
            auroc: auroc(samples)?,
            dtacc: dtacc(samples)?,
            aupr_in: aupr(samples, Positive::In)?,
            aupr_out: aupr(samples, Positive::Out)?,
            n_id: samples.iter().filter(|s| !s.is_ood).count(),
            n_ood: samples.iter().filter(|s| s.is_ood).count(),
        })
    }

    pub fn from_scores(id: &[f64], ood: &[f64], tpr_target: f64) -> Result<Self> {
        Self::evaluate(&scored(id, ood), tpr_target)
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "# {}", self.orientation)?;
        let tnr_label = format!("TNR@{:.0}%TPR", self.tpr_target * 100.0);
        let rows = [
            (tnr_label.as_str(), self.tnr_at_tpr),
            ("AUROC", self.auroc),
            ("DTACC", self.dtacc),
            ("AUPR-IN", self.aupr_in),
            ("AUPR-OUT", self.aupr_out),
        ];
        for (name, v) in rows {
            writeln!(f, "{name:<12} {:>8.2}", 100.0 * v)?;
        }
        write!(f, "{:<12} {:>8}\n{:<12} {:>8}", "n_id", self.n_id, "n_ood", self.n_ood)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pairwise_auroc(id: &[f64], ood: &[f64]) -> f64 {
        let mut s = 0.0;
        for &o in ood {
            for &i in id {
                s += if o > i {
                    1.0
                } else if o == i {
                    0.5
                } else {
                    0.0
                };
            }
        }
        s / (id.len() * ood.len()) as f64
    }

    #[test]
    fn separated_and_tied_populations() {
        let sep = scored(&[0.0; 10], &[1.0; 7]);
        assert_eq!(auroc(&sep).unwrap(), 1.0);
        assert_eq!(tnr_at_tpr(&sep, 0.95).unwrap(), 1.0);
        assert_eq!(dtacc(&sep).unwrap(), 1.0);
        assert_eq!(aupr(&sep, Positive::Out).unwrap(), 1.0);
        assert_eq!(aupr(&sep, Positive::In).unwrap(), 1.0);

        let tied = scored(&[0.3; 10], &[0.3; 10]);
        assert_eq!(auroc(&tied).unwrap(), 0.5);
        assert_eq!(dtacc(&tied).unwrap(), 0.5);
    }

    #[test]
    fn tnr_hand_count() {
        let id: Vec<f64> = (1..=100).map(f64::from).collect();
        let ood: Vec<f64> = (96..=195).map(f64::from).collect();
        assert_eq!(tnr_at_tpr(&scored(&id, &ood), 0.95).unwrap(), 1.0);
        // Identical populations: the cutoff rejects the top 5%.
        assert!((tnr_at_tpr(&scored(&id, &id), 0.95).unwrap() - 0.05).abs() < 1e-12);
    }

    #[test]
    fn single_top_ood_gives_perfect_aupr_out() {
        let s = scored(&[0.1, 0.2, 0.3, 0.4], &[0.9]);
        assert_eq!(aupr(&s, Positive::Out).unwrap(), 1.0);
    }

    #[test]
    fn empty_population_is_an_error() {
        let s = scored(&[], &[1.0]);
        assert!(auroc(&s).is_err());
        assert!(tnr_at_tpr(&scored(&[1.0], &[]), 0.95).is_err());
        assert!(dtacc(&s).is_err());
        assert!(aupr(&s, Positive::In).is_err());
    }

    #[test]
    fn report_text_carries_orientation() {
        let r = MetricsReport::from_scores(&[0.0, 0.1], &[1.0], 0.95).unwrap();
        let text = r.to_string();
        assert!(text.contains("higher score = more OOD"));
        assert!(text.contains("TNR@95%TPR"));
        assert_eq!(r.n_id, 2);
    }

    proptest! {
        #[test]
        fn auroc_matches_pairwise(id in prop::collection::vec(0u8..20, 1..60), ood in prop::collection::vec(0u8..20, 1..60)) {
            let id: Vec<f64> = id.into_iter().map(f64::from).collect();
            let ood: Vec<f64> = ood.into_iter().map(f64::from).collect();
            prop_assert!((auroc(&scored(&id, &ood)).unwrap() - pairwise_auroc(&id, &ood)).abs() < 1e-9);
        }

        #[test]
        fn flipping_roles_and_negating_preserves_auroc(id in prop::collection::vec(-5.0f64..5.0, 1..40), ood in prop::collection::vec(-5.0f64..5.0, 1..40)) {
            let a = auroc(&scored(&id, &ood)).unwrap();
            let neg = |v: &[f64]| v.iter().map(|x| -x).collect::<Vec<_>>();
            let b = auroc(&scored(&neg(&ood), &neg(&id))).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
            let c = auroc(&scored(&neg(&id), &neg(&ood))).unwrap();
            prop_assert!((a + c - 1.0).abs() < 1e-12);
            prop_assert!(dtacc(&scored(&id, &ood)).unwrap() >= 0.5);
        }

        #[test]
        fn tnr_monotone_in_target(id in prop::collection::vec(-5.0f64..5.0, 1..40), ood in prop::collection::vec(-5.0f64..5.0, 1..40), a in 0.01f64..1.0, b in 0.01f64..1.0) {
            let s = scored(&id, &ood);
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(tnr_at_tpr(&s, hi).unwrap() <= tnr_at_tpr(&s, lo).unwrap());
        }
    }
}
