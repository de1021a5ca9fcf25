//! Two interleaving half-moons as in-distribution data, plus three OOD blobs:
//! A far from both moons, B beside the lower moon, C in the gap between them.
//!
//! Randomness comes from ChaCha8 (`rand_chacha::ChaCha8Rng`) seeded with
//! `seed_from_u64`; the moons and the OOD clusters draw from different ChaCha
//! streams of the same seed. ChaCha output is specified bit-for-bit, so datasets
//! are reproducible across platforms.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::{FeatureDataset, OOD_LABEL};
use crate::error::{Error, Result};
use crate::numerics::Matrix;

const MOON_STREAM: u64 = 0;
const CLUSTER_STREAM: u64 = 1;

pub const CLUSTER_TAGS: [&str; 3] = ["A", "B", "C"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyConfig {
    pub n_id_per_class: usize,
    pub n_ood_per_cluster: usize,
    pub noise_sigma: f64,
    pub seed: u64,
    pub cluster_centers: [[f64; 2]; 3],
    pub cluster_sigma: f64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            n_id_per_class: 500,
            n_ood_per_cluster: 200,
            noise_sigma: 0.1,
            seed: 0,
            cluster_centers: [[-3.0, 3.0], [2.5, -1.5], [0.5, 0.25]],
            cluster_sigma: 0.02,
        }
    }
}

impl ToyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_id_per_class == 0 {
            return Err(Error::invalid("n_id_per_class must be >= 1"));
        }
        if self.n_ood_per_cluster == 0 {
            return Err(Error::invalid("n_ood_per_cluster must be >= 1"));
        }
        for (name, v) in [("noise_sigma", self.noise_sigma), ("cluster_sigma", self.cluster_sigma)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::invalid(format!("{name} must be finite and >= 0")));
            }
        }
        if self.cluster_centers.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("cluster centers must be finite"));
        }
        Ok(())
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }
}

/// Point on the upper (class 0) arc for angle `t ∈ [0, π]`.
pub fn upper_arc(t: f64) -> [f64; 2] {
    [t.cos(), t.sin()]
}

/// Point on the lower (class 1) arc for angle `t ∈ [0, π]`.
pub fn lower_arc(t: f64) -> [f64; 2] {
    [1.0 - t.cos(), 0.5 - t.sin()]
}

/// `n_id_per_class` rows of class 0 followed by `n_id_per_class` rows of class 1.
pub fn half_moons(cfg: &ToyConfig) -> Result<FeatureDataset> {
    cfg.validate()?;
    let mut rng = cfg.rng(MOON_STREAM);
    let n = cfg.n_id_per_class;
    let mut data = Vec::with_capacity(4 * n);
    let mut labels = Vec::with_capacity(2 * n);
    for class in 0..2i64 {
        for _ in 0..n {
            let t = rng.random_range(0.0..=PI);
            let p = if class == 0 { upper_arc(t) } else { lower_arc(t) };
            let nx: f64 = rng.sample(StandardNormal);
            let ny: f64 = rng.sample(StandardNormal);
            data.push(p[0] + cfg.noise_sigma * nx);
            data.push(p[1] + cfg.noise_sigma * ny);
            labels.push(class);
        }
    }
    FeatureDataset::new(Matrix::new(2 * n, 2, data)?, labels)
}

/// Three isotropic Gaussian blobs labelled `-1` and tagged `A`, `B`, `C`.
pub fn ood_clusters(cfg: &ToyConfig) -> Result<FeatureDataset> {
    cfg.validate()?;
    let mut rng = cfg.rng(CLUSTER_STREAM);
    let n = cfg.n_ood_per_cluster;
    let mut data = Vec::with_capacity(6 * n);
    let mut ids = Vec::with_capacity(3 * n);
    let mut tags = Vec::with_capacity(3 * n);
    for (center, tag) in cfg.cluster_centers.iter().zip(CLUSTER_TAGS) {
        for i in 0..n {
            let nx: f64 = rng.sample(StandardNormal);
            let ny: f64 = rng.sample(StandardNormal);
            data.push(center[0] + cfg.cluster_sigma * nx);
            data.push(center[1] + cfg.cluster_sigma * ny);
            ids.push(format!("{tag}-{i}"));
            tags.push(tag.to_string());
        }
    }
    let mut ds = FeatureDataset::with_ids(ids, Matrix::new(3 * n, 2, data)?, vec![OOD_LABEL; 3 * n])?;
    ds.cluster = Some(tags);
    Ok(ds)
}
