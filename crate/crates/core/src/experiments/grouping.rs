use std::collections::{HashMap, HashSet};
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::sweep::SweepRow;
use crate::error::{Error, Result};
use crate::stats::{mann_whitney_u, summarize, MannWhitneyResult, Summary};
use crate::store::{Dataset, ScreenSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    Name,
    Category,
    Platform,
}

impl Criterion {
    pub fn same(self, a: &ScreenSet, b: &ScreenSet) -> bool {
        match self {
            Criterion::Name => a.name == b.name,
            Criterion::Category => a.category == b.category,
            Criterion::Platform => a.platform == b.platform,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Criterion::Name => "name",
            Criterion::Category => "category",
            Criterion::Platform => "platform",
        }
    }
}

impl FromStr for Criterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "name" => Ok(Criterion::Name),
            "category" => Ok(Criterion::Category),
            "platform" => Ok(Criterion::Platform),
            other => Err(Error::InvalidArgument(format!(
                "unknown criterion `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PairGroupingReport {
    pub criterion: Criterion,
    pub total_pairs: usize,
    pub same_group: Vec<f64>,
    pub different_group: Vec<f64>,
    pub same_summary: Option<Summary>,
    pub different_summary: Option<Summary>,
    /// `None` when one side of the partition is empty.
    pub test: Option<MannWhitneyResult>,
    pub test_skipped: bool,
}

/// Splits the pair distances by whether the two apps agree on `criterion`
/// and compares the two samples with a Mann-Whitney U test. Reports only;
/// no direction is asserted.
pub fn group_pairs(
    table: &[SweepRow],
    dataset: &Dataset,
    criterion: Criterion,
) -> Result<PairGroupingReport> {
    let n = dataset.len();
    let expected = n * n.saturating_sub(1) / 2;
    let mut seen: HashSet<(usize, usize)> = HashSet::with_capacity(table.len());
    let mut same_group = Vec::new();
    let mut different_group = Vec::new();
    let position: HashMap<&str, usize> = dataset
        .apps()
        .iter()
        .enumerate()
        .map(|(i, a)| (a.id.as_str(), i))
        .collect();
    for row in table {
        let (Some(&i), Some(&j)) = (
            position.get(row.id_a.as_str()),
            position.get(row.id_b.as_str()),
        ) else {
            return Err(Error::IncompleteTable(format!(
                "row ({}, {}) names an unknown app",
                row.id_a, row.id_b
            )));
        };
        let Some(d) = row.distance else {
            return Err(Error::IncompleteTable(format!(
                "pair ({}, {}) failed: {:?}",
                row.id_a, row.id_b, row.error
            )));
        };
        if i == j || !seen.insert((i.min(j), i.max(j))) {
            return Err(Error::IncompleteTable(format!(
                "pair ({}, {}) is repeated or reflexive",
                row.id_a, row.id_b
            )));
        }
        let apps = dataset.apps();
        if criterion.same(&apps[i], &apps[j]) {
            same_group.push(d);
        } else {
            different_group.push(d);
        }
    }
    if seen.len() != expected {
        return Err(Error::IncompleteTable(format!(
            "{} of {expected} pairs present",
            seen.len()
        )));
    }
    let test = if same_group.is_empty() || different_group.is_empty() {
        None
    } else {
        Some(mann_whitney_u(&same_group, &different_group)?)
    };
    Ok(PairGroupingReport {
        criterion,
        total_pairs: expected,
        same_summary: summarize(&same_group),
        different_summary: summarize(&different_group),
        test_skipped: test.is_none(),
        test,
        same_group,
        different_group,
    })
}

/// Long-format `criterion,group,distance` rows for external plotting.
pub fn grouping_to_long_csv<W: Write>(report: &PairGroupingReport, mut w: W) -> Result<()> {
    writeln!(w, "criterion,group,distance")?;
    for (group, sample) in [
        ("same", &report.same_group),
        ("different", &report.different_group),
    ] {
        for d in sample {
            writeln!(w, "{},{group},{d}", report.criterion.as_str())?;
        }
    }
    Ok(())
}
