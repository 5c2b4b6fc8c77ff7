use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{OtResult, SolverKind};
use crate::error::Result;

/// Cells at or below this mass are omitted from sparse exports.
pub const SPARSE_THRESHOLD: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseEntry {
    pub row: usize,
    pub col: usize,
    pub mass: f64,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PlanJson {
    pub distance: f64,
    pub n_a: usize,
    pub n_b: usize,
    pub plan: Vec<SparseEntry>,
    pub solver: SolverKind,
    pub converged: bool,
}

fn sparse_entries(result: &OtResult) -> Vec<SparseEntry> {
    result
        .plan
        .matrix
        .indexed_iter()
        .filter(|(_, &m)| m > SPARSE_THRESHOLD)
        .map(|((row, col), &mass)| SparseEntry {
            row,
            col,
            mass,
            cost: result.cost.get(row, col),
        })
        .collect()
}

pub fn plan_to_json(result: &OtResult) -> PlanJson {
    PlanJson {
        distance: result.distance,
        n_a: result.plan.matrix.nrows(),
        n_b: result.plan.matrix.ncols(),
        plan: sparse_entries(result),
        solver: result.solver,
        converged: result.converged,
    }
}

/// Writes `row,col,mass,cost` lines for every nonzero cell.
pub fn plan_to_csv<W: Write>(result: &OtResult, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["row", "col", "mass", "cost"])?;
    for e in sparse_entries(result) {
        w.write_record([
            e.row.to_string(),
            e.col.to_string(),
            e.mass.to_string(),
            e.cost.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
