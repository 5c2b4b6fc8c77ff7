//! Discrete optimal transport between screenshot sets.
//!
//! [`solve_exact`] runs a network simplex on the transportation graph and
//! returns a vertex (sparse) optimal plan. [`solve_sinkhorn`] is the
//! entropic approximation used above [`SolverConfig::exact_threshold`].
//! Optimal plans are not unique in general; every plan returned here is
//! *an* optimal (or near-optimal) plan, the distance is what is unique.

mod cache;
mod export;
mod network_simplex;
mod sinkhorn;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::{pairwise_cost, CostMatrix};
use crate::store::ScreenSet;

pub use cache::OtCache;
pub use export::{plan_to_csv, plan_to_json, PlanJson, SparseEntry};

/// Simplex membership tolerance for marginals.
pub const MARGINAL_SUM_TOL: f64 = 1e-9;

/// Probability masses attached to the screenshots of one set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Marginal(Vec<f64>);

impl Marginal {
    pub fn new(masses: Vec<f64>) -> Result<Self> {
        if masses.is_empty() {
            return Err(Error::InfeasibleMarginals("marginal is empty".into()));
        }
        if let Some(bad) = masses.iter().find(|m| !m.is_finite() || **m < 0.0) {
            return Err(Error::InfeasibleMarginals(format!(
                "mass {bad} is negative or non-finite"
            )));
        }
        let total: f64 = masses.iter().sum();
        if (total - 1.0).abs() > MARGINAL_SUM_TOL {
            return Err(Error::InfeasibleMarginals(format!(
                "masses sum to {total}, not 1"
            )));
        }
        Ok(Self(masses))
    }

    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::EmptySet);
        }
        Ok(Self(vec![1.0 / n as f64; n]))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn masses(&self) -> &[f64] {
        &self.0
    }

    /// Re-validates masses that may have been built without [`Marginal::new`].
    fn check(&self) -> Result<()> {
        Marginal::new(self.0.clone()).map(|_| ())
    }
}

/// A coupling of two marginals.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    pub matrix: Array2<f64>,
    pub row_marginal: Marginal,
    pub col_marginal: Marginal,
}

impl TransportPlan {
    /// Largest absolute deviation of row or column sums from the marginals.
    pub fn marginal_violation(&self) -> f64 {
        let rows = self
            .matrix
            .rows()
            .into_iter()
            .zip(self.row_marginal.masses())
            .map(|(r, m)| (r.sum() - m).abs());
        let cols = self
            .matrix
            .columns()
            .into_iter()
            .zip(self.col_marginal.masses())
            .map(|(c, m)| (c.sum() - m).abs());
        rows.chain(cols).fold(0.0, f64::max)
    }

    /// Cells with mass above `threshold`, heaviest first; ties by (row, col).
    pub fn top_pairs(&self, threshold: f64, limit: usize) -> Vec<(usize, usize, f64)> {
        let mut cells: Vec<_> = self
            .matrix
            .indexed_iter()
            .filter(|(_, &m)| m > threshold)
            .map(|((i, j), &m)| (i, j, m))
            .collect();
        cells.sort_by(|x, y| y.2.total_cmp(&x.2).then(x.0.cmp(&y.0)).then(x.1.cmp(&y.1)));
        cells.truncate(limit);
        cells
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    Exact,
    Sinkhorn,
}

impl SolverKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SolverKind::Exact => "exact",
            SolverKind::Sinkhorn => "sinkhorn",
        }
    }
}

#[derive(Debug, Clone)]
pub struct OtResult {
    pub distance: f64,
    pub plan: TransportPlan,
    pub cost: CostMatrix,
    pub solver: SolverKind,
    pub iterations: usize,
    pub converged: bool,
}

fn transport_cost(plan: &Array2<f64>, cost: &CostMatrix) -> f64 {
    plan.iter()
        .zip(cost.view().iter())
        .map(|(t, c)| t * c)
        .sum()
}

fn check_shapes(cost: &CostMatrix, row: &Marginal, col: &Marginal) -> Result<()> {
    row.check()?;
    col.check()?;
    if cost.rows() != row.len() {
        return Err(Error::DimensionMismatch {
            expected: cost.rows(),
            got: row.len(),
        });
    }
    if cost.cols() != col.len() {
        return Err(Error::DimensionMismatch {
            expected: cost.cols(),
            got: col.len(),
        });
    }
    Ok(())
}

/// Restricts a problem to the rows and columns with positive mass.
struct Support {
    rows: Vec<usize>,
    cols: Vec<usize>,
}

impl Support {
    fn of(row: &Marginal, col: &Marginal) -> Self {
        let pick = |m: &Marginal| {
            m.masses()
                .iter()
                .enumerate()
                .filter(|(_, &x)| x > 0.0)
                .map(|(i, _)| i)
                .collect()
        };
        Support {
            rows: pick(row),
            cols: pick(col),
        }
    }

    fn is_full(&self, cost: &CostMatrix) -> bool {
        self.rows.len() == cost.rows() && self.cols.len() == cost.cols()
    }

    fn restrict(
        &self,
        cost: &CostMatrix,
        row: &Marginal,
        col: &Marginal,
    ) -> (Array2<f64>, Vec<f64>, Vec<f64>) {
        let c = Array2::from_shape_fn((self.rows.len(), self.cols.len()), |(i, j)| {
            cost.get(self.rows[i], self.cols[j])
        });
        let a = self.rows.iter().map(|&i| row.masses()[i]).collect();
        let b = self.cols.iter().map(|&j| col.masses()[j]).collect();
        (c, a, b)
    }

    fn expand(&self, reduced: Array2<f64>, shape: (usize, usize)) -> Array2<f64> {
        let mut full = Array2::zeros(shape);
        for ((i, j), v) in reduced.indexed_iter() {
            full[[self.rows[i], self.cols[j]]] = *v;
        }
        full
    }
}

/// Exact minimum-cost coupling via network simplex.
pub fn solve_exact(cost: &CostMatrix, row: &Marginal, col: &Marginal) -> Result<OtResult> {
    check_shapes(cost, row, col)?;
    let support = Support::of(row, col);
    let matrix = if support.is_full(cost) {
        network_simplex::solve(cost.view(), row.masses(), col.masses())?.0
    } else {
        let (c, a, b) = support.restrict(cost, row, col);
        let (plan, _) = network_simplex::solve(c.view(), &a, &b)?;
        support.expand(plan, (cost.rows(), cost.cols()))
    };
    Ok(OtResult {
        distance: transport_cost(&matrix, cost).max(0.0),
        plan: TransportPlan {
            matrix,
            row_marginal: row.clone(),
            col_marginal: col.clone(),
        },
        cost: cost.clone(),
        solver: SolverKind::Exact,
        iterations: 0,
        converged: true,
    })
}

/// Log-domain Sinkhorn. The returned plan is rounded onto the coupling
/// polytope, so its cost is an upper bound on the exact distance.
/// Non-convergence is reported through `converged`, not as an error.
pub fn solve_sinkhorn(
    cost: &CostMatrix,
    row: &Marginal,
    col: &Marginal,
    epsilon: f64,
    max_iter: usize,
    tol: f64,
) -> Result<OtResult> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    if tol.is_nan() || tol <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "tol must be positive, got {tol}"
        )));
    }
    check_shapes(cost, row, col)?;
    let support = Support::of(row, col);
    let (c, a, b) = support.restrict(cost, row, col);
    let out = sinkhorn::solve(c.view(), &a, &b, epsilon, max_iter, tol);
    let matrix = support.expand(out.plan, (cost.rows(), cost.cols()));
    Ok(OtResult {
        distance: transport_cost(&matrix, cost).max(0.0),
        plan: TransportPlan {
            matrix,
            row_marginal: row.clone(),
            col_marginal: col.clone(),
        },
        cost: cost.clone(),
        solver: SolverKind::Sinkhorn,
        iterations: out.iterations,
        converged: out.converged,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverMode {
    Exact,
    Sinkhorn,
    /// Exact when `n_a * n_b <= exact_threshold`, Sinkhorn otherwise.
    Auto,
}

impl std::str::FromStr for SolverMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(SolverMode::Exact),
            "sinkhorn" => Ok(SolverMode::Sinkhorn),
            "auto" => Ok(SolverMode::Auto),
            other => Err(Error::InvalidArgument(format!("unknown solver `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SolverConfig {
    pub mode: SolverMode,
    pub epsilon: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub exact_threshold: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            mode: SolverMode::Auto,
            epsilon: 0.01,
            tol: 1e-6,
            max_iter: 5000,
            exact_threshold: 512 * 512,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "tol must be positive, got {}",
                self.tol
            )));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidArgument("max_iter must be at least 1".into()));
        }
        Ok(())
    }

    pub fn kind_for(&self, n_a: usize, n_b: usize) -> SolverKind {
        match self.mode {
            SolverMode::Exact => SolverKind::Exact,
            SolverMode::Sinkhorn => SolverKind::Sinkhorn,
            SolverMode::Auto if n_a.saturating_mul(n_b) <= self.exact_threshold => {
                SolverKind::Exact
            }
            SolverMode::Auto => SolverKind::Sinkhorn,
        }
    }

    /// Stable digest of every field, used as part of cache keys.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Sha256::new();
        h.update([self.mode as u8]);
        h.update(self.epsilon.to_bits().to_le_bytes());
        h.update(self.tol.to_bits().to_le_bytes());
        h.update((self.max_iter as u64).to_le_bytes());
        h.update((self.exact_threshold as u64).to_le_bytes());
        let digest = h.finalize();
        u64::from_le_bytes(digest[..8].try_into().expect("sha256 has 32 bytes"))
    }

    pub fn solve(&self, cost: &CostMatrix, row: &Marginal, col: &Marginal) -> Result<OtResult> {
        match self.kind_for(cost.rows(), cost.cols()) {
            SolverKind::Exact => solve_exact(cost, row, col),
            SolverKind::Sinkhorn => {
                solve_sinkhorn(cost, row, col, self.epsilon, self.max_iter, self.tol)
            }
        }
    }
}

/// Distance between two apps: cosine ground cost between their
/// screenshots, each app's marginal, solver picked by `config`.
pub fn app_distance(a: &ScreenSet, b: &ScreenSet, config: &SolverConfig) -> Result<OtResult> {
    let cost = pairwise_cost(a.vectors(), b.vectors())?;
    config.solve(&cost, a.marginal(), b.marginal())
}
