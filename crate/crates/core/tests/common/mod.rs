//! Brute-force reference implementations shared by the integration tests.
//! Every function enumerates thresholds or pairs directly, without the
//! sorting and merging tricks used in the library.

#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// `P(ood > id) + ½·P(ood = id)` over all pairs.
pub fn pairwise_auroc(id: &[f64], ood: &[f64]) -> f64 {
    let mut s = 0.0;
    for &a in id {
        for &b in ood {
            s += if b > a {
                1.0
            } else if b == a {
                0.5
            } else {
                0.0
            };
        }
    }
    s / (id.len() * ood.len()) as f64
}

/// Every score is a candidate threshold, plus one below all of them.
fn candidate_thresholds(id: &[f64], ood: &[f64]) -> Vec<f64> {
    let mut t: Vec<f64> = id.iter().chain(ood).copied().collect();
    t.push(f64::NEG_INFINITY);
    t
}

/// Best `½·TPR + ½·TNR` with iD kept at `score <= t`.
pub fn exhaustive_dtacc(id: &[f64], ood: &[f64]) -> f64 {
    candidate_thresholds(id, ood)
        .into_iter()
        .map(|t| {
            let tpr = id.iter().filter(|&&s| s <= t).count() as f64 / id.len() as f64;
            let tnr = ood.iter().filter(|&&s| s > t).count() as f64 / ood.len() as f64;
            0.5 * tpr + 0.5 * tnr
        })
        .fold(0.0, f64::max)
}

/// Step-wise PR area: walk distinct thresholds from the most to the least
/// confident, recounting precision and recall from scratch at each one.
fn exhaustive_aupr(pos: &[f64], neg: &[f64]) -> f64 {
    let mut ts: Vec<f64> = pos.iter().chain(neg).copied().collect();
    ts.sort_by(|a, b| b.total_cmp(a));
    ts.dedup();
    let mut area = 0.0;
    let mut prev_recall = 0.0;
    for t in ts {
        let tp = pos.iter().filter(|&&s| s >= t).count() as f64;
        let fp = neg.iter().filter(|&&s| s >= t).count() as f64;
        let recall = tp / pos.len() as f64;
        area += (recall - prev_recall) * tp / (tp + fp);
        prev_recall = recall;
    }
    area
}

/// OOD is the positive class, ranked by high score.
pub fn exhaustive_aupr_out(id: &[f64], ood: &[f64]) -> f64 {
    exhaustive_aupr(ood, id)
}

/// iD is the positive class, ranked by low score.
pub fn exhaustive_aupr_in(id: &[f64], ood: &[f64]) -> f64 {
    let neg = |v: &[f64]| v.iter().map(|x| -x).collect::<Vec<_>>();
    exhaustive_aupr(&neg(id), &neg(ood))
}

/// OOD rejection at the smallest iD score that keeps `target` of iD at or below it.
pub fn exhaustive_tnr(id: &[f64], ood: &[f64], target: f64) -> f64 {
    let n = id.len() as f64;
    let t = id
        .iter()
        .copied()
        .filter(|&t| id.iter().filter(|&&s| s <= t).count() as f64 >= target * n - 1e-9)
        .fold(f64::INFINITY, f64::min);
    ood.iter().filter(|&&s| s > t).count() as f64 / ood.len() as f64
}

/// A random scoring instance with `n_id + n_ood <= 200`. Even seeds draw from a
/// coarse grid so that ties between and within populations are common.
pub fn random_instance(seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_id = rng.random_range(1..=120);
    let n_ood = rng.random_range(1..=200 - n_id);
    let shift = rng.random_range(-1.0..2.0);
    let mut draw = |offset: f64| -> f64 {
        let v: f64 = rng.random_range(-3.0..3.0) + offset;
        if seed.is_multiple_of(2) {
            (v * 4.0).round() / 4.0
        } else {
            v
        }
    };
    let id = (0..n_id).map(|_| draw(0.0)).collect();
    let ood = (0..n_ood).map(|_| draw(shift)).collect();
    (id, ood)
}

/// Strictly increasing map that keeps the grid values apart.
pub fn monotone(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| x.exp() + x * x * x + 7.0).collect()
}

pub fn oodkit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_oodkit")).args(args).output().expect("spawn oodkit")
}

pub fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

/// Feature CSV as an external extractor would write it: three Gaussian
/// classes in 8 dimensions with a softmax over negative squared distances to
/// the class centres. OOD rows (label -1) come from a far-away blob.
pub fn external_features_csv(seed: u64, n_per_class: usize, n_ood: usize) -> String {
    const D: usize = 8;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centres: Vec<Vec<f64>> = (0..3).map(|c| (0..D).map(|j| if j % 3 == c { 4.0 } else { 0.0 }).collect()).collect();
    let mut out = String::from("id,label");
    (0..D).for_each(|j| out.push_str(&format!(",f{j}")));
    (0..3).for_each(|j| out.push_str(&format!(",p{j}")));
    out.push('\n');
    let mut row = |id: String, label: i64, x: Vec<f64>| {
        let logits: Vec<f64> =
            centres.iter().map(|c| -0.5 * c.iter().zip(&x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()).collect();
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
        let z: f64 = e.iter().sum();
        out.push_str(&format!("{id},{label}"));
        x.iter().for_each(|v| out.push_str(&format!(",{v}")));
        e.iter().for_each(|v| out.push_str(&format!(",{}", v / z)));
        out.push('\n');
    };
    let gauss = |rng: &mut ChaCha8Rng| -> f64 { rng.sample(StandardNormal) };
    for (c, centre) in centres.iter().enumerate() {
        for i in 0..n_per_class {
            let x = centre.iter().map(|m| m + 0.7 * gauss(&mut rng)).collect();
            row(format!("c{c}-{i}"), c as i64, x);
        }
    }
    for i in 0..n_ood {
        let x = (0..D).map(|j| if j < 4 { 2.0 } else { -3.0 } + 0.7 * gauss(&mut rng)).collect();
        row(format!("ood-{i}"), -1, x);
    }
    out
}
