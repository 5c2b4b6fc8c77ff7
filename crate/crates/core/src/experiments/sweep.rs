//! All-pairs distance table, streamed to CSV and resumable.
//!
//! Rows are written in canonical upper-triangular order `(i, j), i < j`
//! over the dataset's app order, one chunk at a time. The CSV doubles as
//! the completion journal: on restart the file is trimmed to its last
//! complete line, checked against the canonical order, and the sweep
//! continues from the next pair. Identical inputs therefore always yield a
//! bytewise-identical file, regardless of interruptions or thread count.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Seek, SeekFrom, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::ot::{app_distance, SolverConfig};
use crate::store::Dataset;

pub const HEADER: &str = "id_a,id_b,distance,solver,converged,error";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub id_a: String,
    pub id_b: String,
    /// `None` when the pair failed; see `error`.
    pub distance: Option<f64>,
    pub solver: String,
    pub converged: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct SweepOptions {
    pub config: SolverConfig,
    pub exec: Execution,
    /// Pairs solved between two journal flushes.
    pub chunk_size: usize,
    /// Stop after this many chunks (for staged runs); `None` runs to the end.
    pub max_chunks: Option<usize>,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            config: SolverConfig::default(),
            exec: Execution::default(),
            chunk_size: 256,
            max_chunks: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SweepSummary {
    pub total_pairs: usize,
    pub resumed_from: usize,
    pub completed: usize,
    pub failed: usize,
    pub finished: bool,
}

/// The `k`-th pair of the canonical upper-triangular order.
pub fn canonical_pairs(n: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..n).flat_map(move |i| (i + 1..n).map(move |j| (i, j)))
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

fn format_row(row: &SweepRow) -> String {
    format!(
        "{},{},{},{},{},{}\n",
        csv_field(&row.id_a),
        csv_field(&row.id_b),
        row.distance.map(|d| d.to_string()).unwrap_or_default(),
        row.solver,
        row.converged,
        csv_field(row.error.as_deref().unwrap_or("")),
    )
}

/// Trims a partially written trailing line and returns the ids of the
/// complete rows already on disk.
fn recover(path: &Path) -> Result<Vec<(String, String)>> {
    let mut file = OpenOptions::new().read(true).write(true).open(path)?;
    let len = file.metadata()?.len();
    let mut reader = BufReader::new(&mut file);
    let mut kept_bytes = 0u64;
    let mut lines = Vec::new();
    let mut line = String::new();
    loop {
        line.clear();
        let read = reader.read_line(&mut line)?;
        if read == 0 || !line.ends_with('\n') {
            break;
        }
        kept_bytes += read as u64;
        lines.push(line.trim_end_matches(['\n', '\r']).to_owned());
    }
    drop(reader);
    if kept_bytes < len {
        file.set_len(kept_bytes)?;
    }
    if lines.is_empty() {
        return Ok(Vec::new());
    }
    if lines[0] != HEADER {
        return Err(Error::InvalidArgument(format!(
            "{} is not a sweep table",
            path.display()
        )));
    }
    let body = lines[1..].join("\n");
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_reader(body.as_bytes());
    let mut ids = Vec::with_capacity(lines.len() - 1);
    for rec in rdr.records() {
        let rec = rec?;
        ids.push((
            rec.get(0).unwrap_or_default().to_owned(),
            rec.get(1).unwrap_or_default().to_owned(),
        ));
    }
    Ok(ids)
}

/// Computes (or resumes) the full pair table at `out`.
pub fn pairwise_sweep(
    dataset: &Dataset,
    out: &Path,
    options: &SweepOptions,
) -> Result<SweepSummary> {
    let n = dataset.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "a sweep needs at least 2 apps, dataset has {n}"
        )));
    }
    options.config.validate()?;
    let chunk_size = options.chunk_size.max(1);
    let pairs: Vec<(usize, usize)> = canonical_pairs(n).collect();
    let apps = dataset.apps();

    let done = if out.exists() {
        recover(out)?
    } else {
        Vec::new()
    };
    for (k, (a, b)) in done.iter().enumerate() {
        let expected = pairs
            .get(k)
            .map(|&(i, j)| (apps[i].id.as_str(), apps[j].id.as_str()));
        if expected != Some((a.as_str(), b.as_str())) {
            return Err(Error::InvalidArgument(format!(
                "existing table row {} ({a}, {b}) does not match this dataset",
                k + 1
            )));
        }
    }
    let mut file = if out.exists() && fs::metadata(out)?.len() > 0 {
        let mut f = OpenOptions::new().append(true).open(out)?;
        f.seek(SeekFrom::End(0))?;
        f
    } else {
        let mut f = File::create(out)?;
        writeln!(f, "{HEADER}")?;
        f
    };

    let resumed_from = done.len();
    let mut completed = resumed_from;
    let mut failed = 0;
    for (chunks, chunk) in pairs[resumed_from..].chunks(chunk_size).enumerate() {
        if options.max_chunks.is_some_and(|m| chunks >= m) {
            break;
        }
        let rows = options.exec.map(chunk, |&(i, j)| {
            let (a, b) = (&apps[i], &apps[j]);
            match app_distance(a, b, &options.config) {
                Ok(r) => SweepRow {
                    id_a: a.id.clone(),
                    id_b: b.id.clone(),
                    distance: Some(r.distance),
                    solver: r.solver.as_str().to_owned(),
                    converged: r.converged,
                    error: None,
                },
                Err(e) => SweepRow {
                    id_a: a.id.clone(),
                    id_b: b.id.clone(),
                    distance: None,
                    solver: options
                        .config
                        .kind_for(a.len(), b.len())
                        .as_str()
                        .to_owned(),
                    converged: false,
                    error: Some(format!("{}: {e}", e.code())),
                },
            }
        });
        let mut buf = String::new();
        for row in &rows {
            failed += usize::from(row.error.is_some());
            buf.push_str(&format_row(row));
        }
        file.write_all(buf.as_bytes())?;
        file.sync_data()?;
        completed += rows.len();
    }
    Ok(SweepSummary {
        total_pairs: pairs.len(),
        resumed_from,
        completed,
        failed,
        finished: completed == pairs.len(),
    })
}

/// Parses a sweep table (complete or partial).
pub fn read_sweep_table(path: &Path) -> Result<Vec<SweepRow>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let field = |k: usize| rec.get(k).unwrap_or_default();
        let distance = match field(2) {
            "" => None,
            d => Some(
                d.parse::<f64>()
                    .map_err(|e| Error::InvalidArgument(format!("bad distance `{d}`: {e}")))?,
            ),
        };
        rows.push(SweepRow {
            id_a: field(0).to_owned(),
            id_b: field(1).to_owned(),
            distance,
            solver: field(3).to_owned(),
            converged: field(4) == "true",
            error: Some(field(5)).filter(|e| !e.is_empty()).map(str::to_owned),
        });
    }
    Ok(rows)
}
