//! Screenshot-replacement studies of the uniformity loss.
//!
//! For every app, `held_out_count` screenshots are reserved and the
//! baseline loss is taken over the rest. For each `N`, `N` of the
//! remaining screenshots are swapped out for either `N` screenshots of
//! other apps (random change) or `N` of the reserved ones (held-out
//! change), and the change in loss is recorded. Each `N` is then tested
//! against a zero mean with a one-sample t-test.

use std::collections::BTreeMap;
use std::io::Write;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::stats::{mean, one_sample_t_test, variance, TTestResult};
use crate::store::Dataset;
use crate::uniformity::{uniformity_value, DEFAULT_T};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum StudyMode {
    RandomChange,
    HeldOutChange,
}

impl FromStr for StudyMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" | "randomChange" => Ok(StudyMode::RandomChange),
            "heldout" | "heldOutChange" => Ok(StudyMode::HeldOutChange),
            other => Err(Error::InvalidArgument(format!(
                "unknown study mode `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DeltaLuConfig {
    pub mode: StudyMode,
    pub n_values: Vec<usize>,
    pub held_out_count: usize,
    pub seed: u64,
    pub t: f64,
}

impl DeltaLuConfig {
    pub fn new(mode: StudyMode, seed: u64) -> Self {
        DeltaLuConfig {
            mode,
            n_values: vec![1, 2, 3, 4, 5],
            held_out_count: 5,
            seed,
            t: DEFAULT_T,
        }
    }

    fn max_n(&self) -> usize {
        self.n_values.iter().copied().max().unwrap_or(0)
    }

    /// Smallest app that can take part.
    pub fn min_screenshots(&self) -> usize {
        self.held_out_count + self.max_n() + 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PerNStats {
    pub n: usize,
    pub count: usize,
    pub mean: f64,
    pub std_dev: f64,
    /// One-sample test of the mean delta against 0; absent below 2 apps.
    pub test: Option<TTestResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ExcludedApp {
    pub app_id: String,
    pub screenshots: usize,
    pub required: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DeltaLuStudy {
    pub config: DeltaLuConfig,
    pub per_n: Vec<PerNStats>,
    /// app id -> deltas aligned with `config.n_values`
    pub per_app: BTreeMap<String, Vec<f64>>,
    pub excluded: Vec<ExcludedApp>,
}

/// Independent RNG stream for `(seed, app, purpose)`, so results do not
/// depend on the order in which apps are processed.
fn stream(seed: u64, app_id: &str, purpose: &str, n: u64) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((app_id.len() as u64).to_le_bytes());
    h.update(app_id.as_bytes());
    h.update(purpose.as_bytes());
    h.update(n.to_le_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

/// Rows of `source` listed in `keep`, followed by the rows in `added`.
fn assemble(
    source: ArrayView2<'_, f64>,
    keep: &[usize],
    added: &[ArrayView2<'_, f64>],
    added_rows: &[usize],
) -> Array2<f64> {
    let d = source.ncols();
    let mut out = Array2::zeros((keep.len() + added_rows.len(), d));
    for (dst, &i) in keep.iter().enumerate() {
        out.row_mut(dst).assign(&source.row(i));
    }
    for (k, (view, &row)) in added.iter().zip(added_rows).enumerate() {
        out.row_mut(keep.len() + k).assign(&view.row(row));
    }
    out
}

fn app_deltas(
    dataset: &Dataset,
    app_idx: usize,
    offsets: &[usize],
    config: &DeltaLuConfig,
) -> Result<Vec<f64>> {
    let apps = dataset.apps();
    let app = &apps[app_idx];
    let vectors = app.vectors();
    let n = app.len();

    let mut rng = stream(config.seed, &app.id, "hold-out", 0);
    let held: Vec<usize> = sample(&mut rng, n, config.held_out_count).into_vec();
    let mut is_held = vec![false; n];
    for &h in &held {
        is_held[h] = true;
    }
    let remainder: Vec<usize> = (0..n).filter(|&i| !is_held[i]).collect();
    let baseline = uniformity_value(assemble(vectors, &remainder, &[], &[]).view(), config.t)?;

    let total = *offsets.last().expect("offsets end with the total");
    let (own_start, own_len) = (offsets[app_idx], n);
    let mut deltas = Vec::with_capacity(config.n_values.len());
    for &big_n in &config.n_values {
        let mut rng = stream(config.seed, &app.id, "replace", big_n as u64);
        let removed = sample(&mut rng, remainder.len(), big_n).into_vec();
        let mut drop = vec![false; remainder.len()];
        for &r in &removed {
            drop[r] = true;
        }
        let keep: Vec<usize> = remainder
            .iter()
            .zip(&drop)
            .filter(|(_, &d)| !d)
            .map(|(&i, _)| i)
            .collect();

        let (views, rows): (Vec<ArrayView2<'_, f64>>, Vec<usize>) = match config.mode {
            StudyMode::HeldOutChange => {
                let picks = sample(&mut rng, held.len(), big_n).into_vec();
                picks.into_iter().map(|p| (vectors, held[p])).unzip()
            }
            StudyMode::RandomChange => {
                let pool = total - own_len;
                if pool < big_n {
                    return Err(Error::InvalidArgument(format!(
                        "only {pool} screenshots outside app `{}`, need {big_n}",
                        app.id
                    )));
                }
                let picks = sample(&mut rng, pool, big_n).into_vec();
                picks
                    .into_iter()
                    .map(|g| {
                        let g = if g >= own_start { g + own_len } else { g };
                        let owner = offsets.partition_point(|&o| o <= g) - 1;
                        (apps[owner].vectors(), g - offsets[owner])
                    })
                    .unzip()
            }
        };
        let edited = assemble(vectors, &keep, &views, &rows);
        deltas.push(uniformity_value(edited.view(), config.t)? - baseline);
    }
    Ok(deltas)
}

pub fn run_delta_lu_study(
    dataset: &Dataset,
    config: &DeltaLuConfig,
    exec: Execution,
) -> Result<DeltaLuStudy> {
    if config.n_values.is_empty() {
        return Err(Error::InvalidArgument(
            "at least one N value is required".into(),
        ));
    }
    let required = config.min_screenshots();
    let mut offsets = Vec::with_capacity(dataset.len() + 1);
    let mut acc = 0;
    for app in dataset.apps() {
        offsets.push(acc);
        acc += app.len();
    }
    offsets.push(acc);

    let mut included = Vec::new();
    let mut excluded = Vec::new();
    for (i, app) in dataset.apps().iter().enumerate() {
        if app.len() >= required {
            included.push(i);
        } else {
            excluded.push(ExcludedApp {
                app_id: app.id.clone(),
                screenshots: app.len(),
                required,
            });
        }
    }
    if included.is_empty() {
        return Err(Error::EmptyStudy);
    }

    let results = exec.map(&included, |&i| app_deltas(dataset, i, &offsets, config));
    let mut per_app = BTreeMap::new();
    for (&i, r) in included.iter().zip(results) {
        per_app.insert(dataset.apps()[i].id.clone(), r?);
    }

    let per_n = config
        .n_values
        .iter()
        .enumerate()
        .map(|(k, &n)| {
            let sample: Vec<f64> = per_app.values().map(|d| d[k]).collect();
            let test = if sample.len() >= 2 {
                Some(one_sample_t_test(&sample, 0.0)?)
            } else {
                None
            };
            Ok(PerNStats {
                n,
                count: sample.len(),
                mean: mean(&sample),
                std_dev: if sample.len() >= 2 {
                    variance(&sample).sqrt()
                } else {
                    0.0
                },
                test,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(DeltaLuStudy {
        config: config.clone(),
        per_n,
        per_app,
        excluded,
    })
}

/// Long-format `mode,n,app_id,delta` rows for external plotting.
pub fn study_to_long_csv<W: Write>(study: &DeltaLuStudy, mut w: W) -> Result<()> {
    let mode = match study.config.mode {
        StudyMode::RandomChange => "randomChange",
        StudyMode::HeldOutChange => "heldOutChange",
    };
    writeln!(w, "mode,n,app_id,delta")?;
    for (app, deltas) in &study.per_app {
        for (n, d) in study.config.n_values.iter().zip(deltas) {
            writeln!(w, "{mode},{n},{app},{d}")?;
        }
    }
    Ok(())
}
