//! Gaussian-potential uniformity of a screenshot set.
//!
//! `L_u(S) = log( (1/n^2) * sum_{i,j} exp(2t <s_i, s_j> - 2t) )` over all
//! ordered pairs, diagonal included. Identical sets score 0; spread-out
//! sets score lower. Higher values mean a more consistent app.

use std::collections::HashSet;

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{check_dim, stack_rows, EmbeddingVector, UNIT_NORM_TOL};
use crate::store::ScreenSet;

pub const DEFAULT_T: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct UniformityReport {
    pub set_id: String,
    pub n: usize,
    pub t: f64,
    pub lu: f64,
    /// Set when `n == 1`: the loss is trivially 0 and carries no signal.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub degenerate: bool,
}

fn check_t(t: f64) -> Result<()> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "t must be positive, got {t}"
        )));
    }
    Ok(())
}

/// Raw loss value over unit-norm rows. Evaluated as a log-sum-exp.
pub fn uniformity_value(rows: ArrayView2<'_, f64>, t: f64) -> Result<f64> {
    check_t(t)?;
    let n = rows.nrows();
    if n == 0 {
        return Err(Error::EmptySet);
    }
    for row in rows.axis_iter(Axis(0)) {
        let norm = row.dot(&row).sqrt();
        if (norm - 1.0).abs() > UNIT_NORM_TOL {
            return Err(Error::NotNormalized { norm });
        }
    }
    let gram = rows.dot(&rows.t());
    // Exponents 2t(<u,v> - 1) are <= 0 up to rounding; the diagonal is ~0,
    // so the max is known and no overflow is possible.
    let max = gram
        .iter()
        .fold(f64::NEG_INFINITY, |m, &g| m.max(2.0 * t * (g - 1.0)));
    let sum: f64 = gram
        .iter()
        .map(|&g| (2.0 * t * (g - 1.0) - max).exp())
        .sum();
    let lu = max + sum.ln() - 2.0 * (n as f64).ln();
    Ok(lu.min(0.0))
}

pub fn uniformity_loss(
    set_id: &str,
    rows: ArrayView2<'_, f64>,
    t: f64,
) -> Result<UniformityReport> {
    let lu = uniformity_value(rows, t)?;
    Ok(UniformityReport {
        set_id: set_id.to_owned(),
        n: rows.nrows(),
        t,
        lu,
        degenerate: rows.nrows() == 1,
    })
}

pub fn uniformity_of_vectors(
    set_id: &str,
    vectors: &[EmbeddingVector],
    t: f64,
) -> Result<UniformityReport> {
    let rows = stack_rows(vectors)?;
    uniformity_loss(set_id, rows.view(), t)
}

pub fn app_uniformity(app: &ScreenSet, t: f64) -> Result<UniformityReport> {
    uniformity_loss(&app.id, app.vectors(), t)
}

/// A hypothetical edit of an app: drop some screenshots, add some vectors.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct WhatIfEdit {
    pub remove_ids: Vec<String>,
    pub add_vectors: Vec<EmbeddingVector>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DeltaReport {
    pub lu_before: f64,
    pub lu_after: f64,
    /// `lu_after - lu_before`; negative means consistency dropped.
    pub delta: f64,
}

/// Vectors of `base` after applying `edit`, in order: kept rows, then added.
pub fn apply_edit(base: &ScreenSet, edit: &WhatIfEdit) -> Result<Array2<f64>> {
    let known: HashSet<&str> = base.screenshots.iter().map(|s| s.id.as_str()).collect();
    let mut removed = HashSet::new();
    for id in &edit.remove_ids {
        if !known.contains(id.as_str()) {
            return Err(Error::UnknownScreenshotId(id.clone()));
        }
        removed.insert(id.as_str());
    }
    let dim = base.dim();
    for v in &edit.add_vectors {
        check_dim(dim, v.dim())?;
    }
    let kept: Vec<usize> = (0..base.len())
        .filter(|&i| !removed.contains(base.screenshots[i].id.as_str()))
        .collect();
    let n = kept.len() + edit.add_vectors.len();
    if n < 2 {
        return Err(Error::DegenerateSet(format!(
            "edit leaves {n} screenshot(s); at least 2 are required"
        )));
    }
    let src = base.vectors();
    let mut out = Array2::zeros((n, dim));
    for (dst, &i) in kept.iter().enumerate() {
        out.row_mut(dst).assign(&src.row(i));
    }
    for (k, v) in edit.add_vectors.iter().enumerate() {
        out.row_mut(kept.len() + k)
            .assign(&ndarray::ArrayView1::from(v.as_slice()));
    }
    Ok(out)
}

pub fn delta_uniformity(base: &ScreenSet, edit: &WhatIfEdit, t: f64) -> Result<DeltaReport> {
    let edited = apply_edit(base, edit)?;
    let lu_before = uniformity_value(base.vectors(), t)?;
    let lu_after = uniformity_value(edited.view(), t)?;
    Ok(DeltaReport {
        lu_before,
        lu_after,
        delta: lu_after - lu_before,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::normalize;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn basis(i: usize, d: usize) -> EmbeddingVector {
        let mut v = vec![0.0; d];
        v[i] = 1.0;
        EmbeddingVector::from_unit(v).unwrap()
    }

    fn random_unit(rng: &mut impl Rng, d: usize) -> EmbeddingVector {
        let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        normalize(&v).unwrap()
    }

    /// Direct double loop over the defining sum, no log-sum-exp.
    fn naive(vectors: &[EmbeddingVector], t: f64) -> f64 {
        let n = vectors.len() as f64;
        let mut s = 0.0;
        for a in vectors {
            for b in vectors {
                s += (2.0 * t * a.dot(b).unwrap() - 2.0 * t).exp();
            }
        }
        (s / (n * n)).ln()
    }

    #[test]
    fn hand_evaluated_fixtures() {
        let ortho = uniformity_of_vectors("o", &[basis(0, 3), basis(1, 3)], 2.0).unwrap();
        let expected = ((2.0 + 2.0 * (-4.0f64).exp()) / 4.0).ln();
        assert_abs_diff_eq!(ortho.lu, expected, epsilon = 1e-12);
        assert_abs_diff_eq!(ortho.lu, -0.674997, epsilon = 1e-6);

        let neg = EmbeddingVector::from_unit(vec![-1.0, 0.0, 0.0]).unwrap();
        let anti = uniformity_of_vectors("a", &[basis(0, 3), neg], 2.0).unwrap();
        assert_abs_diff_eq!(
            anti.lu,
            ((2.0 + 2.0 * (-8.0f64).exp()) / 4.0).ln(),
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(anti.lu, -0.692812, epsilon = 1e-6);
    }

    #[test]
    fn identical_vectors_score_zero() {
        for n in [1, 2, 7, 50] {
            let set = vec![basis(2, 4); n];
            let r = uniformity_of_vectors("s", &set, 2.0).unwrap();
            assert!(r.lu.abs() <= 1e-12, "n={n} lu={}", r.lu);
            assert_eq!(r.degenerate, n == 1);
        }
    }

    #[test]
    fn rejects_bad_input() {
        let empty = Array2::<f64>::zeros((0, 3));
        assert!(matches!(
            uniformity_value(empty.view(), 2.0),
            Err(Error::EmptySet)
        ));
        let unnormalized = Array2::from_shape_vec((1, 2), vec![1.0, 1.0]).unwrap();
        assert!(matches!(
            uniformity_value(unnormalized.view(), 2.0),
            Err(Error::NotNormalized { .. })
        ));
        let ok = Array2::from_shape_vec((1, 2), vec![1.0, 0.0]).unwrap();
        assert!(uniformity_value(ok.view(), 0.0).is_err());
    }

    #[test]
    fn matches_naive_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let n = rng.random_range(1..20);
            let set: Vec<_> = (0..n).map(|_| random_unit(&mut rng, 6)).collect();
            let t = rng.random_range(0.5..4.0);
            let r = uniformity_of_vectors("s", &set, t).unwrap();
            assert_abs_diff_eq!(r.lu, naive(&set, t), epsilon = 1e-10);
        }
    }

    #[test]
    fn replacing_duplicate_with_orthogonal_decreases() {
        let base = vec![basis(0, 3); 10];
        let mut edited = base.clone();
        edited[9] = basis(1, 3);
        let before = uniformity_of_vectors("b", &base, 2.0).unwrap().lu;
        let after = uniformity_of_vectors("a", &edited, 2.0).unwrap().lu;
        assert!(after < before);
        let expected = ((82.0 + 18.0 * (-4.0f64).exp()) / 100.0).ln();
        assert_abs_diff_eq!(after, expected, epsilon = 1e-12);
    }

    fn householder(u: &EmbeddingVector, v: &[f64]) -> Vec<f64> {
        let proj: f64 = u.as_slice().iter().zip(v).map(|(a, b)| a * b).sum();
        v.iter()
            .zip(u.as_slice())
            .map(|(x, ui)| x - 2.0 * proj * ui)
            .collect()
    }

    proptest! {
        #[test]
        fn bounded_and_invariant(seed in any::<u64>(), n in 1usize..25, d in 2usize..12) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let set: Vec<_> = (0..n).map(|_| random_unit(&mut rng, d)).collect();
            let lu = uniformity_of_vectors("s", &set, 2.0).unwrap().lu;
            prop_assert!(lu <= 1e-12);
            prop_assert!(lu >= (1.0 / n as f64).ln() - 1e-9);

            let mut shuffled = set.clone();
            shuffled.reverse();
            shuffled.rotate_left(n / 2);
            let lu_perm = uniformity_of_vectors("s", &shuffled, 2.0).unwrap().lu;
            prop_assert!((lu - lu_perm).abs() <= 1e-9);

            let axis = random_unit(&mut rng, d);
            let rotated: Vec<_> = set.iter().map(|v| EmbeddingVector::from_unit(householder(&axis, v.as_slice())).unwrap()).collect();
            let lu_rot = uniformity_of_vectors("s", &rotated, 2.0).unwrap().lu;
            prop_assert!((lu - lu_rot).abs() <= 1e-9);
        }
    }
}
