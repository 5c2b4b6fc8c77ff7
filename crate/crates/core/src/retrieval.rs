//! Screenshot kNN, app-to-app ranking and zero-shot label classification.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::geometry::{check_dim, dot, normalize, EmbeddingVector};
use crate::ot::{OtCache, OtResult, SolverConfig};
use crate::store::encoder::{check_shape, Encoder};
use crate::store::{Dataset, EmbeddingBlock, ScreenSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum HitKind {
    CosineDistance,
    OtDistance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Hit {
    pub target_id: String,
    pub score: f64,
    pub kind: HitKind,
}

/// Hits sorted ascending by score, at most `k` of them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RetrievalResult {
    pub query_id: String,
    pub hits: Vec<Hit>,
    pub k: usize,
}

fn by_score_then_id(a: &(f64, &str), b: &(f64, &str)) -> Ordering {
    a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1))
}

/// Exact k smallest cosine distances over every screenshot in `dataset`,
/// ties broken by screenshot id. `exclude` drops one screenshot id (the
/// query itself when it comes from the dataset).
pub fn nearest_screenshots(
    query_id: &str,
    query: &EmbeddingVector,
    dataset: &Dataset,
    k: usize,
    exclude: Option<&str>,
) -> Result<RetrievalResult> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    check_dim(dataset.embedding_dim(), query.dim())?;
    let q = query.as_slice();
    let mut scored: Vec<(f64, &str)> = Vec::with_capacity(dataset.screenshot_count());
    for app in dataset.apps() {
        for (row, shot) in app.vectors().rows().into_iter().zip(&app.screenshots) {
            if exclude == Some(shot.id.as_str()) {
                continue;
            }
            let d = (1.0 - dot(q, row.as_slice().expect("standard layout"))).clamp(0.0, 2.0);
            scored.push((d, shot.id.as_str()));
        }
    }
    if scored.len() > k {
        scored.select_nth_unstable_by(k - 1, by_score_then_id);
        scored.truncate(k);
    }
    scored.sort_by(by_score_then_id);
    let hits = scored
        .into_iter()
        .map(|(score, id)| Hit {
            target_id: id.to_owned(),
            score,
            kind: HitKind::CosineDistance,
        })
        .collect();
    Ok(RetrievalResult {
        query_id: query_id.to_owned(),
        hits,
        k,
    })
}

/// App ranking plus the transport result behind each hit.
#[derive(Debug, Clone)]
pub struct RankedApps {
    pub result: RetrievalResult,
    pub plans: Vec<Arc<OtResult>>,
}

/// Ranks every other app in `dataset` by transport distance to `query`.
/// The query's own id is always excluded; other versions of the same app
/// name are kept.
pub fn rank_apps(
    query: &ScreenSet,
    dataset: &Dataset,
    k: usize,
    config: &SolverConfig,
    cache: &OtCache,
    exec: Execution,
) -> Result<RankedApps> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    config.validate()?;
    let targets: Vec<&ScreenSet> = dataset.apps().iter().filter(|a| a.id != query.id).collect();
    if targets.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let solved = exec.map(&targets, |t| cache.get_or_compute(query, t, config));
    let mut scored = Vec::with_capacity(targets.len());
    for (t, r) in targets.iter().zip(solved) {
        let r = r?;
        scored.push((r.distance, t.id.as_str(), r));
    }
    scored.sort_by(|a, b| by_score_then_id(&(a.0, a.1), &(b.0, b.1)));
    scored.truncate(k);
    let mut hits = Vec::with_capacity(scored.len());
    let mut plans = Vec::with_capacity(scored.len());
    for (score, id, r) in scored {
        hits.push(Hit {
            target_id: id.to_owned(),
            score,
            kind: HitKind::OtDistance,
        });
        plans.push(r);
    }
    Ok(RankedApps {
        result: RetrievalResult {
            query_id: query.id.clone(),
            hits,
            k,
        },
        plans,
    })
}

const CATEGORY_SLOT: &str = "{category}";

/// The shipped UI prompt templates; see `config/ui_prompts.json`.
pub fn default_prompt_templates() -> Vec<String> {
    #[derive(Deserialize)]
    struct PromptFile {
        templates: Vec<String>,
    }
    let file: PromptFile = serde_json::from_str(include_str!("../../../config/ui_prompts.json"))
        .expect("bundled prompt file is valid");
    file.templates
}

fn check_template(t: &str) -> Result<()> {
    if t.matches(CATEGORY_SLOT).count() != 1 {
        return Err(Error::BadTemplate(t.to_owned()));
    }
    Ok(())
}

/// One prompt-ensembled unit vector per label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelEmbeddingSet {
    pub labels: Vec<String>,
    pub templates: Vec<String>,
    pub vectors: Vec<EmbeddingVector>,
}

/// Label definition file: `{labels: [...], templates: [...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelFile {
    pub labels: Vec<String>,
    #[serde(default = "default_prompt_templates")]
    pub templates: Vec<String>,
}

impl LabelFile {
    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

/// Sidecar naming the rows of a cached label-embedding block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LabelSidecar {
    labels: Vec<String>,
    templates: Vec<String>,
    embeddings: String,
}

impl LabelEmbeddingSet {
    pub fn new(
        labels: Vec<String>,
        templates: Vec<String>,
        vectors: Vec<EmbeddingVector>,
    ) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::InvalidArgument("label set is empty".into()));
        }
        if labels.len() != vectors.len() {
            return Err(Error::DimensionMismatch {
                expected: labels.len(),
                got: vectors.len(),
            });
        }
        let distinct: HashSet<&str> = labels.iter().map(String::as_str).collect();
        if distinct.len() != labels.len() {
            return Err(Error::InvalidArgument("labels must be distinct".into()));
        }
        let d = vectors[0].dim();
        for v in &vectors {
            check_dim(d, v.dim())?;
        }
        Ok(Self {
            labels,
            templates,
            vectors,
        })
    }

    pub fn dim(&self) -> usize {
        self.vectors[0].dim()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn vector(&self, label: &str) -> Option<&EmbeddingVector> {
        self.labels
            .iter()
            .position(|l| l == label)
            .map(|i| &self.vectors[i])
    }

    /// Writes `{stem}.uieb` and the sidecar `{stem}.json`; returns the
    /// sidecar path.
    pub fn save(&self, stem: &Path) -> Result<PathBuf> {
        let block_path = stem.with_extension("uieb");
        let rows: Vec<Vec<f32>> = self
            .vectors
            .iter()
            .map(|v| v.as_slice().iter().map(|&x| x as f32).collect())
            .collect();
        EmbeddingBlock::from_rows(self.dim(), &rows)?.write(&block_path)?;
        let sidecar = LabelSidecar {
            labels: self.labels.clone(),
            templates: self.templates.clone(),
            embeddings: block_path
                .file_name()
                .expect("stem has a file name")
                .to_string_lossy()
                .into_owned(),
        };
        let json_path = stem.with_extension("json");
        fs::write(&json_path, serde_json::to_string_pretty(&sidecar)?)?;
        Ok(json_path)
    }

    pub fn load(sidecar_path: &Path) -> Result<Self> {
        let sidecar: LabelSidecar = serde_json::from_str(&fs::read_to_string(sidecar_path)?)?;
        let base = sidecar_path.parent().unwrap_or_else(|| Path::new("."));
        let block = EmbeddingBlock::read(&base.join(&sidecar.embeddings))?;
        if block.n != sidecar.labels.len() {
            return Err(Error::EmbeddingFileCorrupt {
                path: base.join(&sidecar.embeddings),
                reason: format!("{} rows for {} labels", block.n, sidecar.labels.len()),
            });
        }
        let vectors = (0..block.n)
            .map(|i| {
                normalize(
                    &block
                        .row(i)
                        .iter()
                        .map(|&x| f64::from(x))
                        .collect::<Vec<_>>(),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(sidecar.labels, sidecar.templates, vectors)
    }
}

/// Encodes every `template` filled with every label, averages the
/// normalized prompt vectors per label and re-normalizes the mean.
/// `dim`, when given, is enforced on every encoder response.
pub fn build_label_embeddings<E: Encoder + ?Sized>(
    labels: &[String],
    templates: &[String],
    encoder: &mut E,
    dim: Option<usize>,
) -> Result<LabelEmbeddingSet> {
    if templates.is_empty() {
        return Err(Error::InvalidArgument(
            "at least one prompt template is required".into(),
        ));
    }
    for t in templates {
        check_template(t)?;
    }
    let mut dim = dim;
    let mut vectors = Vec::with_capacity(labels.len());
    for label in labels {
        let mut sum: Option<Vec<f64>> = None;
        for t in templates {
            let raw = encoder.encode_text(&t.replace(CATEGORY_SLOT, label))?;
            let raw = match dim {
                Some(d) => check_shape(raw, d)?,
                None => {
                    dim = Some(raw.len());
                    raw
                }
            };
            let unit = normalize(&raw.iter().map(|&x| f64::from(x)).collect::<Vec<_>>())?;
            match &mut sum {
                Some(s) => s.iter_mut().zip(unit.as_slice()).for_each(|(a, b)| *a += b),
                None => sum = Some(unit.into_inner()),
            }
        }
        vectors.push(normalize(&sum.expect("templates non-empty"))?);
    }
    LabelEmbeddingSet::new(labels.to_vec(), templates.to_vec(), vectors)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelScore {
    pub label: String,
    pub similarity: f64,
}

/// Top-k labels by descending cosine similarity, ties by label string.
pub fn classify(
    query: &EmbeddingVector,
    labels: &LabelEmbeddingSet,
    k: usize,
) -> Result<Vec<LabelScore>> {
    check_dim(labels.dim(), query.dim())?;
    let mut scored: Vec<(f64, &str)> = labels
        .vectors
        .iter()
        .zip(&labels.labels)
        .map(|(v, l)| (dot(query.as_slice(), v.as_slice()), l.as_str()))
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
    scored.truncate(k);
    Ok(scored
        .into_iter()
        .map(|(similarity, l)| LabelScore {
            label: l.to_owned(),
            similarity,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TopKAccuracy {
    pub k: usize,
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
    /// Chance level `k / |labels|`.
    pub random_baseline: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AccuracyReport {
    pub per_k: Vec<TopKAccuracy>,
    /// true category -> top-1 predicted category -> count
    pub confusion: BTreeMap<String, BTreeMap<String, usize>>,
}

/// Top-k accuracy over `(query, true label)` pairs.
pub fn accuracy_for_queries<'a>(
    queries: impl IntoIterator<Item = (&'a EmbeddingVector, &'a str)>,
    labels: &LabelEmbeddingSet,
    ks: &[usize],
) -> Result<AccuracyReport> {
    let max_k = ks.iter().copied().max().unwrap_or(1).max(1);
    let mut correct = vec![0usize; ks.len()];
    let mut total = 0usize;
    let mut confusion: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
    for (query, truth) in queries {
        if labels.vector(truth).is_none() {
            return Err(Error::UnknownCategory(truth.to_owned()));
        }
        let top = classify(query, labels, max_k)?;
        total += 1;
        let rank = top.iter().position(|s| s.label == truth);
        for (slot, &k) in correct.iter_mut().zip(ks) {
            if rank.is_some_and(|r| r < k) {
                *slot += 1;
            }
        }
        *confusion
            .entry(truth.to_owned())
            .or_default()
            .entry(top[0].label.clone())
            .or_insert(0) += 1;
    }
    let per_k = ks
        .iter()
        .zip(correct)
        .map(|(&k, c)| TopKAccuracy {
            k,
            correct: c,
            total,
            accuracy: if total == 0 {
                0.0
            } else {
                c as f64 / total as f64
            },
            random_baseline: (k.min(labels.len())) as f64 / labels.len() as f64,
        })
        .collect();
    Ok(AccuracyReport { per_k, confusion })
}

/// Fraction of screenshots whose app category is in the top-k predictions.
pub fn classification_accuracy(
    dataset: &Dataset,
    labels: &LabelEmbeddingSet,
    ks: &[usize],
) -> Result<AccuracyReport> {
    for app in dataset.apps() {
        if labels.vector(&app.category).is_none() {
            return Err(Error::UnknownCategory(app.category.clone()));
        }
    }
    let queries: Vec<(EmbeddingVector, &str)> = dataset
        .apps()
        .iter()
        .flat_map(|app| (0..app.len()).map(move |row| (app.vector(row), app.category.as_str())))
        .collect();
    accuracy_for_queries(queries.iter().map(|(v, c)| (v, *c)), labels, ks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::{AppMeta, ScreenSet};
    use approx::assert_abs_diff_eq;

    fn e(i: usize, d: usize) -> EmbeddingVector {
        let mut v = vec![0.0; d];
        v[i] = 1.0;
        EmbeddingVector::from_unit(v).unwrap()
    }

    fn mixed() -> EmbeddingVector {
        let s = 1.0 / 2f64.sqrt();
        EmbeddingVector::from_unit(vec![s, s, 0.0]).unwrap()
    }

    fn labels3() -> LabelEmbeddingSet {
        LabelEmbeddingSet::new(
            vec!["finance".into(), "travel".into(), "music".into()],
            vec!["{category}".into()],
            vec![e(0, 3), e(1, 3), e(2, 3)],
        )
        .unwrap()
    }

    struct Stub(Vec<Vec<f32>>, usize);

    impl Encoder for Stub {
        fn encode_image(&mut self, _: &Path) -> Result<Vec<f32>> {
            unreachable!()
        }
        fn encode_text(&mut self, _: &str) -> Result<Vec<f32>> {
            let v = self.0[self.1 % self.0.len()].clone();
            self.1 += 1;
            Ok(v)
        }
    }

    #[test]
    fn knn_examples() {
        let app =
            ScreenSet::from_unit_vectors(AppMeta::bare("a"), &[e(0, 3), e(1, 3), mixed()]).unwrap();
        let ds = Dataset::from_sets(vec![app]).unwrap();
        let r = nearest_screenshots("q", &e(0, 3), &ds, 2, None).unwrap();
        assert_eq!(r.hits.len(), 2);
        assert_eq!(r.hits[0].target_id, "a/0");
        assert_eq!(r.hits[0].score, 0.0);
        assert_eq!(r.hits[1].target_id, "a/2");
        assert_abs_diff_eq!(r.hits[1].score, 1.0 - 1.0 / 2f64.sqrt(), epsilon = 1e-12);

        let all = nearest_screenshots("q", &e(0, 3), &ds, 10, None).unwrap();
        assert_eq!(all.hits.len(), 3);
        assert!(all.hits.windows(2).all(|w| w[0].score <= w[1].score));

        let excl = nearest_screenshots("a/0", &e(0, 3), &ds, 1, Some("a/0")).unwrap();
        assert_eq!(excl.hits[0].target_id, "a/2");
    }

    #[test]
    fn knn_ties_by_id() {
        let app = ScreenSet::from_unit_vectors(AppMeta::bare("z"), &[e(1, 2), e(1, 2)]).unwrap();
        let ds = Dataset::from_sets(vec![app]).unwrap();
        let r = nearest_screenshots("q", &e(0, 2), &ds, 2, None).unwrap();
        assert_eq!(r.hits[0].target_id, "z/0");
        assert_eq!(r.hits[1].target_id, "z/1");
    }

    #[test]
    fn classify_examples() {
        let l = labels3();
        let top = classify(&e(1, 3), &l, 1).unwrap();
        assert_eq!(top.len(), 1);
        assert_eq!(top[0].label, "travel");

        let top = classify(&mixed(), &l, 2).unwrap();
        assert_eq!(top[0].label, "finance");
        assert_eq!(top[1].label, "travel");
        assert_abs_diff_eq!(top[0].similarity, 1.0 / 2f64.sqrt(), epsilon = 1e-12);
        assert_eq!(top[0].similarity, top[1].similarity);

        assert_eq!(classify(&e(0, 3), &l, 5).unwrap().len(), 3);
        assert!(classify(&e(0, 2), &l, 1).is_err());
    }

    #[test]
    fn label_embedding_examples() {
        let mut stub = Stub(vec![vec![1.0, 0.0]], 0);
        let one =
            build_label_embeddings(&["x".into()], &["a {category} app".into()], &mut stub, None)
                .unwrap();
        assert_eq!(one.vectors[0].as_slice(), &[1.0, 0.0]);

        let mut stub = Stub(vec![vec![1.0, 0.0], vec![0.0, 3.0]], 0);
        let two = build_label_embeddings(
            &["x".into()],
            &["{category}".into(), "UI of {category}".into()],
            &mut stub,
            None,
        )
        .unwrap();
        let s = 1.0 / 2f64.sqrt();
        assert_abs_diff_eq!(two.vectors[0].as_slice()[0], s, epsilon = 1e-12);
        assert_abs_diff_eq!(two.vectors[0].as_slice()[1], s, epsilon = 1e-12);

        let mut stub = Stub(vec![vec![1.0, 0.0]], 0);
        assert!(matches!(
            build_label_embeddings(&["x".into()], &["no slot".into()], &mut stub, None),
            Err(Error::BadTemplate(_))
        ));
        assert!(matches!(
            build_label_embeddings(
                &["x".into()],
                &["{category} {category}".into()],
                &mut stub,
                None
            ),
            Err(Error::BadTemplate(_))
        ));
        let mut short = Stub(vec![vec![1.0]], 0);
        assert!(matches!(
            build_label_embeddings(&["x".into()], &["{category}".into()], &mut short, Some(2)),
            Err(Error::EncoderShapeMismatch {
                expected: 2,
                got: 1
            })
        ));
    }

    #[test]
    fn default_prompts_are_valid() {
        let t = default_prompt_templates();
        assert_eq!(t.len(), 12);
        for p in &t {
            check_template(p).unwrap();
        }
        assert!(t.contains(&"a screenshot of {category} app".to_string()));
        assert!(t.contains(&"A user interface of {category} application.".to_string()));
        assert!(t.contains(&"UI of {category} app.".to_string()));
    }

    #[test]
    fn label_cache_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let l = labels3();
        let sidecar = l.save(&dir.path().join("labels")).unwrap();
        assert_eq!(LabelEmbeddingSet::load(&sidecar).unwrap(), l);
    }

    fn category_app(id: &str, category: &str, vectors: &[EmbeddingVector]) -> ScreenSet {
        let mut meta = AppMeta::bare(id);
        meta.category = category.into();
        ScreenSet::from_unit_vectors(meta, vectors).unwrap()
    }

    #[test]
    fn accuracy_perfect_and_tie_broken() {
        let l = labels3();
        let ds = Dataset::from_sets(vec![
            category_app("f", "finance", &[e(0, 3)]),
            category_app("t", "travel", &[e(1, 3), e(1, 3)]),
            category_app("m", "music", &[e(2, 3)]),
        ])
        .unwrap();
        let r = classification_accuracy(&ds, &l, &[1, 5]).unwrap();
        assert_eq!(r.per_k[0].accuracy, 1.0);
        assert_eq!(r.per_k[1].accuracy, 1.0);
        assert_abs_diff_eq!(r.per_k[0].random_baseline, 1.0 / 3.0);

        // In a 4-d space a query along e4 ties at similarity 0 with every
        // label; the tie order is finance < music < travel.
        let l4 = LabelEmbeddingSet::new(
            vec!["finance".into(), "travel".into(), "music".into()],
            vec!["{category}".into()],
            vec![e(0, 4), e(1, 4), e(2, 4)],
        )
        .unwrap();
        let ds = Dataset::from_sets(vec![
            category_app("f", "finance", &[e(3, 4)]),
            category_app("t", "travel", &[e(3, 4)]),
            category_app("m", "music", &[e(3, 4)]),
        ])
        .unwrap();
        let r = classification_accuracy(&ds, &l4, &[1, 2]).unwrap();
        assert_eq!(r.per_k[0].correct, 1);
        assert_eq!(r.per_k[1].correct, 2);
        assert_eq!(r.confusion["travel"]["finance"], 1);

        let bad = Dataset::from_sets(vec![category_app("x", "games", &[e(0, 3)])]).unwrap();
        assert!(matches!(
            classification_accuracy(&bad, &l, &[1]),
            Err(Error::UnknownCategory(_))
        ));
    }
}
