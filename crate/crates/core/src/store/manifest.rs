use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{AppMeta, Dataset, EmbeddingBlock, Platform, ScreenSet, Screenshot};
use crate::error::{Error, Result};
use crate::ot::Marginal;

/// On-disk dataset description. Embedding file paths are relative to the
/// manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct DatasetManifest {
    pub version: u32,
    pub embedding_dim: usize,
    pub category_vocabulary: Vec<String>,
    pub apps: Vec<AppEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AppEntry {
    pub id: String,
    pub name: String,
    pub platform: Platform,
    pub category: String,
    pub snapshot_date: String,
    /// A `.uieb` block, or a `.jsonl` file of `{appId, screenshotId, vector}`.
    pub embedding_file: String,
    /// Required for `.uieb` files; optional for `.jsonl` (file order is used).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub screenshots: Option<Vec<ScreenshotEntry>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub marginal: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ScreenshotEntry {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_path: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct IngestReport {
    pub apps: usize,
    pub screenshots: usize,
    pub embedding_dim: usize,
    pub categories: BTreeMap<String, usize>,
    pub fingerprint: String,
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct JsonlRow {
    app_id: String,
    screenshot_id: String,
    vector: Vec<f32>,
}

type JsonlRows = HashMap<String, Vec<(String, Vec<f32>)>>;

fn read_jsonl(path: &Path) -> Result<JsonlRows> {
    let corrupt = |reason: String| Error::EmbeddingFileCorrupt {
        path: path.to_owned(),
        reason,
    };
    let file = fs::File::open(path).map_err(|e| corrupt(e.to_string()))?;
    let mut rows: JsonlRows = HashMap::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| corrupt(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let row: JsonlRow = serde_json::from_str(&line)
            .map_err(|e| corrupt(format!("line {}: {e}", lineno + 1)))?;
        rows.entry(row.app_id)
            .or_default()
            .push((row.screenshot_id, row.vector));
    }
    Ok(rows)
}

impl DatasetManifest {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::ManifestParse(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::ManifestParse(e.to_string()))
    }

    /// Loads, normalizes and validates every app.
    pub fn load(&self, base_dir: &Path) -> Result<Dataset> {
        let vocab: HashSet<&str> = self
            .category_vocabulary
            .iter()
            .map(String::as_str)
            .collect();
        let mut seen = HashSet::new();
        let mut jsonl_cache: HashMap<PathBuf, JsonlRows> = HashMap::new();
        let mut apps = Vec::with_capacity(self.apps.len());
        for entry in &self.apps {
            if !seen.insert(entry.id.as_str()) {
                return Err(Error::DuplicateAppId(entry.id.clone()));
            }
            if !vocab.contains(entry.category.as_str()) {
                return Err(Error::ManifestParse(format!(
                    "app `{}` has category `{}` outside the vocabulary",
                    entry.id, entry.category
                )));
            }
            let snapshot_date = NaiveDate::parse_from_str(&entry.snapshot_date, "%Y-%m-%d")
                .map_err(|e| {
                    Error::ManifestParse(format!("app `{}` snapshotDate: {e}", entry.id))
                })?;
            let meta = AppMeta {
                id: entry.id.clone(),
                name: entry.name.clone(),
                platform: entry.platform,
                category: entry.category.clone(),
                snapshot_date,
            };
            let path = base_dir.join(&entry.embedding_file);
            let (screenshots, raw) = if path.extension().is_some_and(|e| e == "jsonl") {
                if !jsonl_cache.contains_key(&path) {
                    let rows = read_jsonl(&path)?;
                    jsonl_cache.insert(path.clone(), rows);
                }
                self.rows_from_jsonl(entry, &path, &jsonl_cache[&path])?
            } else {
                self.rows_from_block(entry, &path)?
            };
            let marginal = entry.marginal.clone().map(Marginal::new).transpose()?;
            apps.push(ScreenSet::new(meta, screenshots, raw, marginal)?);
        }
        Dataset::new(self.embedding_dim, self.category_vocabulary.clone(), apps)
    }

    fn rows_from_block(
        &self,
        entry: &AppEntry,
        path: &Path,
    ) -> Result<(Vec<Screenshot>, Array2<f32>)> {
        let block = EmbeddingBlock::read(path)?;
        if block.d != self.embedding_dim {
            return Err(Error::DimensionMismatch {
                expected: self.embedding_dim,
                got: block.d,
            });
        }
        let listed = entry.screenshots.as_ref().ok_or_else(|| {
            Error::ManifestParse(format!(
                "app `{}` must list its screenshots for a binary block",
                entry.id
            ))
        })?;
        if listed.len() != block.n {
            return Err(Error::EmbeddingFileCorrupt {
                path: path.to_owned(),
                reason: format!(
                    "{} rows but app `{}` lists {} screenshots",
                    block.n,
                    entry.id,
                    listed.len()
                ),
            });
        }
        let screenshots = listed
            .iter()
            .map(|s| Screenshot {
                id: s.id.clone(),
                image_path: s.image_path.clone(),
            })
            .collect();
        let raw =
            Array2::from_shape_vec((block.n, block.d), block.data).expect("block shape validated");
        Ok((screenshots, raw))
    }

    fn rows_from_jsonl(
        &self,
        entry: &AppEntry,
        path: &Path,
        rows: &JsonlRows,
    ) -> Result<(Vec<Screenshot>, Array2<f32>)> {
        let mine = rows.get(&entry.id).map(Vec::as_slice).unwrap_or_default();
        for (_, v) in mine {
            if v.len() != self.embedding_dim {
                return Err(Error::DimensionMismatch {
                    expected: self.embedding_dim,
                    got: v.len(),
                });
            }
        }
        let ordered: Vec<(Screenshot, &[f32])> = match &entry.screenshots {
            Some(listed) => {
                let by_id: HashMap<&str, &[f32]> = mine
                    .iter()
                    .map(|(s, v)| (s.as_str(), v.as_slice()))
                    .collect();
                listed
                    .iter()
                    .map(|s| {
                        by_id
                            .get(s.id.as_str())
                            .map(|v| {
                                (
                                    Screenshot {
                                        id: s.id.clone(),
                                        image_path: s.image_path.clone(),
                                    },
                                    *v,
                                )
                            })
                            .ok_or_else(|| Error::EmbeddingFileCorrupt {
                                path: path.to_owned(),
                                reason: format!("no vector for screenshot `{}`", s.id),
                            })
                    })
                    .collect::<Result<_>>()?
            }
            None => mine
                .iter()
                .map(|(s, v)| {
                    (
                        Screenshot {
                            id: s.clone(),
                            image_path: None,
                        },
                        v.as_slice(),
                    )
                })
                .collect(),
        };
        if ordered.is_empty() {
            return Err(Error::EmptySet);
        }
        let mut data = Vec::with_capacity(ordered.len() * self.embedding_dim);
        for (_, v) in &ordered {
            data.extend_from_slice(v);
        }
        let raw = Array2::from_shape_vec((ordered.len(), self.embedding_dim), data)
            .expect("dims validated");
        Ok((ordered.into_iter().map(|(s, _)| s).collect(), raw))
    }
}

/// Reads a manifest and everything it references.
pub fn ingest(manifest_path: &Path) -> Result<(Dataset, IngestReport)> {
    let manifest = DatasetManifest::from_path(manifest_path)?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let dataset = manifest.load(base)?;
    let report = IngestReport {
        apps: dataset.len(),
        screenshots: dataset.screenshot_count(),
        embedding_dim: dataset.embedding_dim(),
        categories: dataset.category_histogram(),
        fingerprint: dataset.fingerprint(),
    };
    Ok((dataset, report))
}

/// Writes `dataset` as `manifest.json` plus one `.uieb` block per app under
/// `dir`, storing each app's raw rows. Returns the manifest path.
pub fn write_dataset(dataset: &Dataset, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let mut apps = Vec::with_capacity(dataset.len());
    for (k, app) in dataset.apps().iter().enumerate() {
        let file = format!("app-{k:05}.uieb");
        let raw = app.raw();
        let block = EmbeddingBlock::new(raw.nrows(), raw.ncols(), raw.iter().copied().collect())?;
        block.write(&dir.join(&file))?;
        let uniform = Marginal::uniform(app.len())?;
        apps.push(AppEntry {
            id: app.id.clone(),
            name: app.name.clone(),
            platform: app.platform,
            category: app.category.clone(),
            snapshot_date: app.snapshot_date.format("%Y-%m-%d").to_string(),
            embedding_file: file,
            screenshots: Some(
                app.screenshots
                    .iter()
                    .map(|s| ScreenshotEntry {
                        id: s.id.clone(),
                        image_path: s.image_path.clone(),
                    })
                    .collect(),
            ),
            marginal: (app.marginal() != &uniform).then(|| app.marginal().masses().to_vec()),
        });
    }
    let manifest = DatasetManifest {
        version: 1,
        embedding_dim: dataset.embedding_dim(),
        category_vocabulary: dataset.category_vocabulary().to_vec(),
        apps,
    };
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)?)?;
    Ok(path)
}
