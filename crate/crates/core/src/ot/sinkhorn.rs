//! Entropy-regularised transport in the log domain.

use ndarray::{Array2, ArrayView2};

pub(crate) struct SinkhornOutput {
    pub plan: Array2<f64>,
    pub iterations: usize,
    pub converged: bool,
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Intermediate annealing stages stop early once this loose tolerance is met.
const STAGE_TOL: f64 = 1e-3;
const STAGE_MAX_ITER: usize = 100;

/// One `f`-update then one `g`-update; returns the row marginal violation.
fn sweep(
    cost: ArrayView2<'_, f64>,
    log_a: &[f64],
    log_b: &[f64],
    a: &[f64],
    f: &mut [f64],
    g: &mut [f64],
    epsilon: f64,
) -> f64 {
    let (n, m) = cost.dim();
    for i in 0..n {
        let row = cost.row(i);
        let lse = log_sum_exp((0..m).map(|j| (g[j] - row[j]) / epsilon));
        f[i] = epsilon * (log_a[i] - lse);
    }
    for j in 0..m {
        let col = cost.column(j);
        let lse = log_sum_exp((0..n).map(|i| (f[i] - col[i]) / epsilon));
        g[j] = epsilon * (log_b[j] - lse);
    }
    // Columns are exact after the g-update; only rows can be off.
    (0..n)
        .map(|i| {
            let row = cost.row(i);
            let r: f64 = (0..m)
                .map(|j| ((f[i] + g[j] - row[j]) / epsilon).exp())
                .sum();
            (r - a[i]).abs()
        })
        .fold(0.0, f64::max)
}

/// Alternating dual updates `f`, `g` until the row marginal violation of
/// the implied plan drops below `tol`. Masses must be strictly positive.
///
/// The duals are warm-started by annealing: `epsilon` is approached by
/// halving from the cost range, with a few sweeps per stage. Small `epsilon`
/// alone converges very slowly from a cold start. All sweeps count towards
/// `max_iter`.
pub(crate) fn solve(
    cost: ArrayView2<'_, f64>,
    a: &[f64],
    b: &[f64],
    epsilon: f64,
    max_iter: usize,
    tol: f64,
) -> SinkhornOutput {
    let (n, m) = cost.dim();
    let log_a: Vec<f64> = a.iter().map(|x| x.ln()).collect();
    let log_b: Vec<f64> = b.iter().map(|x| x.ln()).collect();
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];

    let mut iterations = 0;
    let max_cost = cost.iter().copied().fold(0.0, f64::max);
    let mut stage_eps = max_cost / 2.0;
    while stage_eps > epsilon && iterations < max_iter {
        for _ in 0..STAGE_MAX_ITER {
            if iterations >= max_iter {
                break;
            }
            iterations += 1;
            if sweep(cost, &log_a, &log_b, a, &mut f, &mut g, stage_eps) < STAGE_TOL {
                break;
            }
        }
        stage_eps /= 2.0;
    }

    let mut converged = false;
    while iterations < max_iter {
        iterations += 1;
        if sweep(cost, &log_a, &log_b, a, &mut f, &mut g, epsilon) < tol {
            converged = true;
            break;
        }
    }

    let mut plan = Array2::from_shape_fn((n, m), |(i, j)| {
        ((f[i] + g[j] - cost[[i, j]]) / epsilon).exp()
    });
    round_to_marginals(&mut plan, a, b);
    SinkhornOutput {
        plan,
        iterations,
        converged,
    }
}

/// Projects a nonnegative matrix onto the coupling polytope: shrink rows
/// that exceed their mass, shrink columns likewise, then spread the
/// remaining deficit as a rank-one correction.
pub(crate) fn round_to_marginals(plan: &mut Array2<f64>, a: &[f64], b: &[f64]) {
    for (i, mut row) in plan.rows_mut().into_iter().enumerate() {
        let s: f64 = row.sum();
        if s > a[i] && s > 0.0 {
            let x = a[i] / s;
            row.mapv_inplace(|v| v * x);
        }
    }
    for (j, mut col) in plan.columns_mut().into_iter().enumerate() {
        let s: f64 = col.sum();
        if s > b[j] && s > 0.0 {
            let y = b[j] / s;
            col.mapv_inplace(|v| v * y);
        }
    }
    let err_r: Vec<f64> = plan
        .rows()
        .into_iter()
        .zip(a)
        .map(|(r, &ai)| (ai - r.sum()).max(0.0))
        .collect();
    let err_c: Vec<f64> = plan
        .columns()
        .into_iter()
        .zip(b)
        .map(|(c, &bj)| (bj - c.sum()).max(0.0))
        .collect();
    let total: f64 = err_r.iter().sum();
    if total > 0.0 {
        for ((i, j), v) in plan.indexed_iter_mut() {
            *v += err_r[i] * err_c[j] / total;
        }
    }
}
