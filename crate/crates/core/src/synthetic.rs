//! Seeded synthetic datasets: apps as Gaussian clusters on the sphere.

use chrono::{Days, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{normalize, EmbeddingVector};
use crate::store::{AppMeta, Dataset, Platform, ScreenSet};

pub fn random_unit<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> EmbeddingVector {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        if let Ok(u) = normalize(&v) {
            return u;
        }
    }
}

/// `normalize(center + sigma * N(0, I))`.
pub fn perturb<R: Rng + ?Sized>(
    rng: &mut R,
    center: &EmbeddingVector,
    sigma: f64,
) -> EmbeddingVector {
    loop {
        let v: Vec<f64> = center
            .as_slice()
            .iter()
            .map(|c| c + sigma * rng.sample::<f64, _>(StandardNormal))
            .collect();
        if let Ok(u) = normalize(&v) {
            return u;
        }
    }
}

pub fn cluster<R: Rng + ?Sized>(
    rng: &mut R,
    center: &EmbeddingVector,
    n: usize,
    sigma: f64,
) -> Vec<EmbeddingVector> {
    (0..n).map(|_| perturb(rng, center, sigma)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ClusterConfig {
    /// Distinct app names; each gets its own cluster center.
    pub names: usize,
    /// Apps (versions) per name, all drawn from the name's cluster.
    pub versions: usize,
    pub screenshots: usize,
    pub dim: usize,
    pub sigma: f64,
    pub categories: Vec<String>,
    pub seed: u64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig {
            names: 10,
            versions: 1,
            screenshots: 20,
            dim: 64,
            sigma: 0.05,
            categories: vec!["finance".into(), "travel".into(), "music".into()],
            seed: 0,
        }
    }
}

/// Apps `app-{g}-v{v}` named `app-{g}`. Versions alternate iOS / Android and
/// step the snapshot date by one day; categories cycle over the names.
pub fn clustered_dataset(config: &ClusterConfig) -> Result<Dataset> {
    if config.names == 0 || config.versions == 0 || config.screenshots == 0 || config.dim == 0 {
        return Err(Error::InvalidArgument(
            "synthetic dataset needs non-zero sizes".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let base = NaiveDate::from_ymd_opt(2022, 1, 1).expect("valid date");
    let mut apps = Vec::with_capacity(config.names * config.versions);
    for g in 0..config.names {
        let center = random_unit(&mut rng, config.dim);
        let category = if config.categories.is_empty() {
            String::new()
        } else {
            config.categories[g % config.categories.len()].clone()
        };
        for v in 0..config.versions {
            let meta = AppMeta {
                id: format!("app-{g}-v{v}"),
                name: format!("app-{g}"),
                platform: if v % 2 == 0 {
                    Platform::Ios
                } else {
                    Platform::Android
                },
                category: category.clone(),
                snapshot_date: base + Days::new(v as u64),
            };
            let vectors = cluster(&mut rng, &center, config.screenshots, config.sigma);
            apps.push(ScreenSet::from_unit_vectors(meta, &vectors)?);
        }
    }
    let mut vocab = config.categories.clone();
    if vocab.is_empty() {
        vocab.push(String::new());
    }
    Dataset::new(config.dim, vocab, apps)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_shaped() {
        let cfg = ClusterConfig {
            names: 3,
            versions: 2,
            screenshots: 4,
            dim: 8,
            ..Default::default()
        };
        let a = clustered_dataset(&cfg).unwrap();
        let b = clustered_dataset(&cfg).unwrap();
        assert_eq!(a.len(), 6);
        assert_eq!(a.screenshot_count(), 24);
        assert_eq!(a.fingerprint(), b.fingerprint());
        assert_eq!(a.apps()[1].name, a.apps()[0].name);
        assert_ne!(a.apps()[1].platform, a.apps()[0].platform);
    }
}
