//! Screen-set datasets: manifest ingest, embedding files, image
//! preprocessing and external encoder adapters.

pub mod encoder;
pub mod image;
mod manifest;
pub mod uieb;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::{check_dim, normalize, EmbeddingVector};
use crate::ot::Marginal;

pub use manifest::{
    ingest, write_dataset, AppEntry, DatasetManifest, IngestReport, ScreenshotEntry,
};
pub use uieb::EmbeddingBlock;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Platform {
    Ios,
    Android,
    Other,
}

impl Platform {
    pub fn as_str(self) -> &'static str {
        match self {
            Platform::Ios => "ios",
            Platform::Android => "android",
            Platform::Other => "other",
        }
    }
}

impl fmt::Display for Platform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Platform {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ios" => Ok(Platform::Ios),
            "android" => Ok(Platform::Android),
            "other" => Ok(Platform::Other),
            other => Err(Error::InvalidArgument(format!(
                "unknown platform `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Screenshot {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_path: Option<String>,
}

/// Descriptive fields of an app, without its vectors.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AppMeta {
    pub id: String,
    pub name: String,
    pub platform: Platform,
    pub category: String,
    pub snapshot_date: NaiveDate,
}

impl AppMeta {
    /// Metadata with placeholder descriptive fields, for synthetic sets.
    pub fn bare(id: impl Into<String>) -> Self {
        let id = id.into();
        AppMeta {
            name: id.clone(),
            id,
            platform: Platform::Other,
            category: String::new(),
            snapshot_date: NaiveDate::default(),
        }
    }
}

/// One app: metadata, ordered screenshots, their unit vectors and a
/// marginal over them. The raw encoder outputs are kept for audit.
#[derive(Debug, Clone)]
pub struct ScreenSet {
    pub id: String,
    pub name: String,
    pub platform: Platform,
    pub category: String,
    pub snapshot_date: NaiveDate,
    pub screenshots: Vec<Screenshot>,
    raw: Array2<f32>,
    vectors: Array2<f64>,
    marginal: Marginal,
}

impl ScreenSet {
    /// Builds a set from raw (possibly unnormalized) encoder rows.
    /// `marginal` defaults to uniform.
    pub fn new(
        meta: AppMeta,
        screenshots: Vec<Screenshot>,
        raw: Array2<f32>,
        marginal: Option<Marginal>,
    ) -> Result<Self> {
        let n = screenshots.len();
        if n == 0 {
            return Err(Error::EmptySet);
        }
        if raw.nrows() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: raw.nrows(),
            });
        }
        let d = raw.ncols();
        let mut vectors = Array2::zeros((n, d));
        for (i, row) in raw.rows().into_iter().enumerate() {
            let wide: Vec<f64> = row.iter().map(|&x| f64::from(x)).collect();
            let unit = normalize(&wide)?;
            vectors
                .row_mut(i)
                .assign(&ndarray::ArrayView1::from(unit.as_slice()));
        }
        let marginal = match marginal {
            Some(m) if m.len() != n => {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: m.len(),
                })
            }
            Some(m) => m,
            None => Marginal::uniform(n)?,
        };
        Ok(ScreenSet {
            id: meta.id,
            name: meta.name,
            platform: meta.platform,
            category: meta.category,
            snapshot_date: meta.snapshot_date,
            screenshots,
            raw,
            vectors,
            marginal,
        })
    }

    /// Builds a set directly from unit vectors; screenshot ids are
    /// `{app id}/{index}`.
    pub fn from_unit_vectors(meta: AppMeta, vectors: &[EmbeddingVector]) -> Result<Self> {
        let d = vectors.first().ok_or(Error::EmptySet)?.dim();
        let mut data = Vec::with_capacity(vectors.len() * d);
        for v in vectors {
            check_dim(d, v.dim())?;
            data.extend(v.as_slice().iter().map(|&x| x as f32));
        }
        let screenshots = (0..vectors.len())
            .map(|i| Screenshot {
                id: format!("{}/{i}", meta.id),
                image_path: None,
            })
            .collect();
        let raw = Array2::from_shape_vec((vectors.len(), d), data).expect("shape checked");
        let mut set = Self::new(meta, screenshots, raw, None)?;
        // Keep the caller's f64 values rather than their f32 round trip.
        for (mut row, v) in set.vectors.rows_mut().into_iter().zip(vectors) {
            row.assign(&ndarray::ArrayView1::from(v.as_slice()));
        }
        Ok(set)
    }

    pub fn meta(&self) -> AppMeta {
        AppMeta {
            id: self.id.clone(),
            name: self.name.clone(),
            platform: self.platform,
            category: self.category.clone(),
            snapshot_date: self.snapshot_date,
        }
    }

    pub fn len(&self) -> usize {
        self.screenshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.screenshots.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    /// Unit-norm rows, one per screenshot.
    pub fn vectors(&self) -> ArrayView2<'_, f64> {
        self.vectors.view()
    }

    pub fn raw(&self) -> ArrayView2<'_, f32> {
        self.raw.view()
    }

    pub fn vector(&self, row: usize) -> EmbeddingVector {
        EmbeddingVector::from_unit(self.vectors.row(row).to_vec())
            .expect("rows are normalized at construction")
    }

    pub fn marginal(&self) -> &Marginal {
        &self.marginal
    }

    pub fn with_marginal(mut self, marginal: Marginal) -> Result<Self> {
        if marginal.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                got: marginal.len(),
            });
        }
        self.marginal = marginal;
        Ok(self)
    }

    pub fn screenshot_index(&self, id: &str) -> Option<usize> {
        self.screenshots.iter().position(|s| s.id == id)
    }

    /// Same app with its screenshots reordered by `order` (a permutation).
    pub fn permuted(&self, order: &[usize]) -> Self {
        let mut out = self.clone();
        out.screenshots = order.iter().map(|&i| self.screenshots[i].clone()).collect();
        out.raw = self.raw.select(ndarray::Axis(0), order);
        out.vectors = self.vectors.select(ndarray::Axis(0), order);
        out.marginal = Marginal::new(order.iter().map(|&i| self.marginal.masses()[i]).collect())
            .expect("permutation of a valid marginal");
        out
    }

    /// A copy under a different id; screenshots are re-keyed to stay unique.
    pub fn renamed(&self, id: &str) -> Self {
        let mut out = self.clone();
        out.id = id.to_owned();
        for s in &mut out.screenshots {
            s.id = format!("{id}:{}", s.id);
        }
        out
    }
}

/// Location of a screenshot inside a [`Dataset`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScreenshotRef {
    pub app: usize,
    pub row: usize,
}

/// Immutable, validated collection of apps sharing one embedding dimension.
#[derive(Debug, Clone)]
pub struct Dataset {
    embedding_dim: usize,
    category_vocabulary: Vec<String>,
    apps: Vec<ScreenSet>,
    app_index: HashMap<String, usize>,
    screenshot_index: HashMap<String, ScreenshotRef>,
}

impl Dataset {
    pub fn new(
        embedding_dim: usize,
        category_vocabulary: Vec<String>,
        apps: Vec<ScreenSet>,
    ) -> Result<Self> {
        let mut app_index = HashMap::with_capacity(apps.len());
        let mut screenshot_index = HashMap::new();
        for (a, app) in apps.iter().enumerate() {
            check_dim(embedding_dim, app.dim())?;
            if app_index.insert(app.id.clone(), a).is_some() {
                return Err(Error::DuplicateAppId(app.id.clone()));
            }
            for (row, s) in app.screenshots.iter().enumerate() {
                if screenshot_index
                    .insert(s.id.clone(), ScreenshotRef { app: a, row })
                    .is_some()
                {
                    return Err(Error::DuplicateScreenshotId(s.id.clone()));
                }
            }
        }
        Ok(Dataset {
            embedding_dim,
            category_vocabulary,
            apps,
            app_index,
            screenshot_index,
        })
    }

    /// Dataset of synthetic sets with no category vocabulary.
    pub fn from_sets(apps: Vec<ScreenSet>) -> Result<Self> {
        let d = apps.first().ok_or(Error::EmptyDataset)?.dim();
        let mut vocab: Vec<String> = apps.iter().map(|a| a.category.clone()).collect();
        vocab.sort();
        vocab.dedup();
        Self::new(d, vocab, apps)
    }

    pub fn embedding_dim(&self) -> usize {
        self.embedding_dim
    }

    pub fn category_vocabulary(&self) -> &[String] {
        &self.category_vocabulary
    }

    pub fn apps(&self) -> &[ScreenSet] {
        &self.apps
    }

    pub fn len(&self) -> usize {
        self.apps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.apps.is_empty()
    }

    pub fn screenshot_count(&self) -> usize {
        self.screenshot_index.len()
    }

    pub fn app(&self, id: &str) -> Result<&ScreenSet> {
        self.app_index
            .get(id)
            .map(|&i| &self.apps[i])
            .ok_or_else(|| Error::UnknownAppId(id.to_owned()))
    }

    pub fn app_position(&self, id: &str) -> Option<usize> {
        self.app_index.get(id).copied()
    }

    pub fn locate_screenshot(&self, id: &str) -> Result<ScreenshotRef> {
        self.screenshot_index
            .get(id)
            .copied()
            .ok_or_else(|| Error::UnknownScreenshotId(id.to_owned()))
    }

    pub fn screenshot_vector(&self, id: &str) -> Result<EmbeddingVector> {
        let r = self.locate_screenshot(id)?;
        Ok(self.apps[r.app].vector(r.row))
    }

    pub fn category_histogram(&self) -> BTreeMap<String, usize> {
        let mut h = BTreeMap::new();
        for app in &self.apps {
            *h.entry(app.category.clone()).or_insert(0) += 1;
        }
        h
    }

    /// Canonical byte serialization of everything ingest produced.
    /// Two ingests of the same manifest yield identical bytes.
    pub fn snapshot_bytes(&self) -> Vec<u8> {
        fn put_str(out: &mut Vec<u8>, s: &str) {
            out.extend_from_slice(&(s.len() as u64).to_le_bytes());
            out.extend_from_slice(s.as_bytes());
        }
        let mut out = Vec::new();
        out.extend_from_slice(&(self.embedding_dim as u64).to_le_bytes());
        out.extend_from_slice(&(self.category_vocabulary.len() as u64).to_le_bytes());
        for c in &self.category_vocabulary {
            put_str(&mut out, c);
        }
        out.extend_from_slice(&(self.apps.len() as u64).to_le_bytes());
        for app in &self.apps {
            put_str(&mut out, &app.id);
            put_str(&mut out, &app.name);
            put_str(&mut out, app.platform.as_str());
            put_str(&mut out, &app.category);
            put_str(&mut out, &app.snapshot_date.to_string());
            out.extend_from_slice(&(app.len() as u64).to_le_bytes());
            for s in &app.screenshots {
                put_str(&mut out, &s.id);
                put_str(&mut out, s.image_path.as_deref().unwrap_or(""));
            }
            for v in app.raw.iter() {
                out.extend_from_slice(&v.to_bits().to_le_bytes());
            }
            for v in app.vectors.iter() {
                out.extend_from_slice(&v.to_bits().to_le_bytes());
            }
            for m in app.marginal.masses() {
                out.extend_from_slice(&m.to_bits().to_le_bytes());
            }
        }
        out
    }

    /// Hex SHA-256 of [`Dataset::snapshot_bytes`].
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.snapshot_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
