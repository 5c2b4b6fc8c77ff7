//! Unit-sphere geometry shared by every higher module: normalization,
//! cosine distance and the pairwise ground-cost matrix.

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance used when checking that a stored vector is unit norm.
pub const UNIT_NORM_TOL: f64 = 1e-4;

/// A unit-norm embedding of one screenshot (or one label prompt).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    /// Wraps `values` without rescaling. Fails if the norm is not 1 within
    /// [`UNIT_NORM_TOL`].
    pub fn from_unit(values: Vec<f64>) -> Result<Self> {
        let norm = l2_norm(&values);
        if values.is_empty() || (norm - 1.0).abs() > UNIT_NORM_TOL {
            return Err(Error::NotNormalized { norm });
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn dot(&self, other: &EmbeddingVector) -> Result<f64> {
        check_dim(self.dim(), other.dim())?;
        Ok(dot(&self.0, &other.0))
    }
}

impl AsRef<[f64]> for EmbeddingVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn l2_norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}

/// Scales `v` to unit Euclidean norm.
pub fn normalize(v: &[f64]) -> Result<EmbeddingVector> {
    if v.is_empty() {
        return Err(Error::DimensionMismatch {
            expected: 1,
            got: 0,
        });
    }
    let norm = l2_norm(v);
    if norm == 0.0 {
        return Err(Error::ZeroVector);
    }
    if !norm.is_finite() {
        return Err(Error::InvalidArgument(
            "vector has non-finite entries".into(),
        ));
    }
    Ok(EmbeddingVector(v.iter().map(|x| x / norm).collect()))
}

/// Like [`normalize`], additionally enforcing the dataset dimension.
pub fn normalize_with_dim(v: &[f64], dim: usize) -> Result<EmbeddingVector> {
    check_dim(dim, v.len())?;
    normalize(v)
}

/// `1 - <a, b>` for unit vectors, clamped to `[0, 2]`.
pub fn cosine_distance(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    Ok(clamp_cost(1.0 - a.dot(b)?))
}

#[inline]
fn clamp_cost(c: f64) -> f64 {
    c.clamp(0.0, 2.0)
}

/// Dense `n_a x n_b` matrix of cosine distances.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix(Array2<f64>);

impl CostMatrix {
    /// Builds a cost matrix from arbitrary nonnegative entries. Used by the
    /// solvers' own tests and by callers that bring their own ground cost.
    pub fn from_array(entries: Array2<f64>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::EmptySet);
        }
        if entries.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidArgument("cost entries must be finite".into()));
        }
        Ok(Self(entries))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != m) {
            return Err(Error::InvalidArgument("ragged cost rows".into()));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let arr = Array2::from_shape_vec((n, m), flat)
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        Self::from_array(arr)
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn cols(&self) -> usize {
        self.0.ncols()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[[i, j]]
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn transposed(&self) -> CostMatrix {
        CostMatrix(self.0.t().to_owned())
    }
}

/// Cosine distances between every row of `a` and every row of `b`, both
/// assumed unit norm. Computed as a single matrix product.
pub fn pairwise_cost(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Result<CostMatrix> {
    if a.nrows() == 0 || b.nrows() == 0 {
        return Err(Error::EmptySet);
    }
    check_dim(a.ncols(), b.ncols())?;
    let mut cost = a.dot(&b.t());
    cost.mapv_inplace(|s| clamp_cost(1.0 - s));
    Ok(CostMatrix(cost))
}

/// Stacks vectors into a row matrix, checking that all share one dimension.
pub fn stack_rows(vectors: &[EmbeddingVector]) -> Result<Array2<f64>> {
    let dim = vectors.first().ok_or(Error::EmptySet)?.dim();
    let mut out = Array2::zeros((vectors.len(), dim));
    for (mut row, v) in out.axis_iter_mut(Axis(0)).zip(vectors) {
        check_dim(dim, v.dim())?;
        row.assign(&ndarray::ArrayView1::from(v.as_slice()));
    }
    Ok(out)
}

pub fn pairwise_cost_vectors(a: &[EmbeddingVector], b: &[EmbeddingVector]) -> Result<CostMatrix> {
    let a = stack_rows(a)?;
    let b = stack_rows(b)?;
    pairwise_cost(a.view(), b.view())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn e(i: usize, d: usize) -> EmbeddingVector {
        let mut v = vec![0.0; d];
        v[i] = 1.0;
        EmbeddingVector::from_unit(v).unwrap()
    }

    fn random_unit(rng: &mut impl Rng, d: usize) -> EmbeddingVector {
        let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        normalize(&v).unwrap()
    }

    #[test]
    fn normalize_examples() {
        let v = normalize(&[3.0, 4.0]).unwrap();
        assert_abs_diff_eq!(v.as_slice()[0], 0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(v.as_slice()[1], 0.8, epsilon = 1e-15);
        assert_eq!(
            normalize(&[1.0, 0.0, 0.0]).unwrap().as_slice(),
            &[1.0, 0.0, 0.0]
        );
        assert!(matches!(normalize(&[0.0, 0.0]), Err(Error::ZeroVector)));
        assert!(matches!(
            normalize_with_dim(&[1.0, 2.0], 3),
            Err(Error::DimensionMismatch {
                expected: 3,
                got: 2
            })
        ));
    }

    #[test]
    fn cosine_distance_examples() {
        let d = 3;
        assert_eq!(cosine_distance(&e(0, d), &e(0, d)).unwrap(), 0.0);
        assert_eq!(cosine_distance(&e(0, d), &e(1, d)).unwrap(), 1.0);
        let neg = EmbeddingVector::from_unit(vec![-1.0, 0.0, 0.0]).unwrap();
        assert_eq!(cosine_distance(&e(0, d), &neg).unwrap(), 2.0);
        assert!(cosine_distance(&e(0, 3), &e(0, 2)).is_err());
    }

    #[test]
    fn pairwise_examples() {
        let c = pairwise_cost_vectors(&[e(0, 2)], &[e(0, 2)]).unwrap();
        assert_eq!(c.get(0, 0), 0.0);
        let c = pairwise_cost_vectors(&[e(0, 2), e(1, 2)], &[e(1, 2)]).unwrap();
        assert_eq!((c.rows(), c.cols()), (2, 1));
        assert_eq!(c.get(0, 0), 1.0);
        assert_eq!(c.get(1, 0), 0.0);
        assert!(matches!(
            pairwise_cost_vectors(&[], &[e(0, 2)]),
            Err(Error::EmptySet)
        ));
        assert!(pairwise_cost_vectors(&[e(0, 2)], &[e(0, 3)]).is_err());
    }

    #[test]
    fn pairwise_matches_scalar_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a: Vec<_> = (0..3).map(|_| random_unit(&mut rng, 8)).collect();
        let b: Vec<_> = (0..4).map(|_| random_unit(&mut rng, 8)).collect();
        let c = pairwise_cost_vectors(&a, &b).unwrap();
        for (i, ai) in a.iter().enumerate() {
            for (j, bj) in b.iter().enumerate() {
                let scalar: f64 = 1.0
                    - ai.as_slice()
                        .iter()
                        .zip(bj.as_slice())
                        .map(|(x, y)| x * y)
                        .sum::<f64>();
                assert_abs_diff_eq!(c.get(i, j), scalar, epsilon = 1e-12);
            }
        }
    }

    proptest! {
        #[test]
        fn pairwise_transpose_and_range(seed in any::<u64>(), n in 1usize..6, m in 1usize..6, d in 1usize..10) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a: Vec<_> = (0..n).map(|_| random_unit(&mut rng, d)).collect();
            let b: Vec<_> = (0..m).map(|_| random_unit(&mut rng, d)).collect();
            let ab = pairwise_cost_vectors(&a, &b).unwrap();
            let ba = pairwise_cost_vectors(&b, &a).unwrap();
            for i in 0..n {
                for j in 0..m {
                    prop_assert!((ab.get(i, j) - ba.get(j, i)).abs() <= 1e-9);
                    prop_assert!((0.0..=2.0).contains(&ab.get(i, j)));
                }
            }
        }

        #[test]
        fn normalize_idempotent(v in proptest::collection::vec(-100.0f64..100.0, 1..12)) {
            prop_assume!(v.iter().any(|x| x.abs() > 1e-3));
            let once = normalize(&v).unwrap();
            let twice = normalize(once.as_slice()).unwrap();
            prop_assert!((l2_norm(once.as_slice()) - 1.0).abs() < 1e-6);
            for (x, y) in once.as_slice().iter().zip(twice.as_slice()) {
                prop_assert!((x - y).abs() <= 1e-9);
            }
        }
    }
}
