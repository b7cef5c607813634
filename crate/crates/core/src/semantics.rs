//! Tag-overlap structure for the retrieval step: Jaccard affinity between
//! database images, its normalised Laplacian, the per-image dissimilarity to
//! the target's current label estimate, and the combined quadratic penalty.

use nalgebra::{DMatrix, DVector};

use crate::dataset::LabelSet;
use crate::error::{Error, Result};

/// `|a ∩ b| / |a ∪ b|`.
pub fn jaccard(a: &LabelSet, b: &LabelSet) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyLabelSet);
    }
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    Ok(inter as f64 / union as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SemanticAffinity {
    /// Pairwise Jaccard similarity, unit diagonal.
    pub similarity: DMatrix<f64>,
    /// Row sums of `similarity`.
    pub degrees: DVector<f64>,
    /// `A^{-1/2} (A - S) A^{-1/2}`.
    pub laplacian: DMatrix<f64>,
}

pub fn build_affinity(tags: &[LabelSet]) -> Result<SemanticAffinity> {
    let n = tags.len();
    if n == 0 {
        return Err(Error::EmptyDatabase);
    }
    let mut s = DMatrix::zeros(n, n);
    for i in 0..n {
        s[(i, i)] = jaccard(&tags[i], &tags[i])?;
        for j in i + 1..n {
            let v = jaccard(&tags[i], &tags[j])?;
            s[(i, j)] = v;
            s[(j, i)] = v;
        }
    }
    let degrees = DVector::from_iterator(n, s.row_iter().map(|r| r.sum()));
    let inv_sqrt = degrees.map(|a| 1.0 / a.sqrt());
    let mut laplacian = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let a = if i == j { degrees[i] } else { 0.0 };
            laplacian[(i, j)] = inv_sqrt[i] * (a - s[(i, j)]) * inv_sqrt[j];
        }
    }
    Ok(SemanticAffinity {
        similarity: s,
        degrees,
        laplacian,
    })
}

/// Diagonal `1 - jaccard(target, L_k)` per database image.
#[derive(Debug, Clone, PartialEq)]
pub struct DissimilarityDiag {
    pub values: DVector<f64>,
}

pub fn dissimilarity_diag(target: &LabelSet, tags: &[LabelSet]) -> Result<DissimilarityDiag> {
    if target.is_empty() {
        return Err(Error::EmptyLabelSet);
    }
    let values = tags
        .iter()
        .map(|t| jaccard(target, t).map(|j| 1.0 - j))
        .collect::<Result<Vec<_>>>()?;
    Ok(DissimilarityDiag {
        values: DVector::from_vec(values),
    })
}

/// `2 (laplacian + lambda * diag(d))`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintMatrix {
    pub matrix: DMatrix<f64>,
}

impl ConstraintMatrix {
    /// All-zero penalty of size `n`; used when the semantic term is disabled.
    pub fn zeros(n: usize) -> Self {
        Self {
            matrix: DMatrix::zeros(n, n),
        }
    }

    pub fn quadratic_form(&self, x: &DVector<f64>) -> f64 {
        x.dot(&(&self.matrix * x))
    }
}

pub fn constraint_matrix(
    affinity: &SemanticAffinity,
    diag: &DissimilarityDiag,
    lambda: f64,
) -> Result<ConstraintMatrix> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!("lambda must be nonnegative, got {lambda}")));
    }
    let n = affinity.laplacian.nrows();
    if diag.values.len() != n {
        return Err(Error::dims(n, diag.values.len()));
    }
    let mut m = affinity.laplacian.clone();
    for k in 0..n {
        m[(k, k)] += lambda * diag.values[k];
    }
    m *= 2.0;
    Ok(ConstraintMatrix { matrix: m })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn set(v: &[usize]) -> LabelSet {
        v.iter().copied().collect()
    }

    fn random_tags(rng: &mut ChaCha8Rng, n: usize, c: usize) -> Vec<LabelSet> {
        (0..n)
            .map(|_| {
                let mut s = LabelSet::new();
                s.insert(rng.random_range(0..c));
                for l in 0..c {
                    if rng.random_bool(0.3) {
                        s.insert(l);
                    }
                }
                s
            })
            .collect()
    }

    #[test]
    fn jaccard_examples() {
        assert!((jaccard(&set(&[1, 2]), &set(&[2, 3])).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(jaccard(&set(&[4, 5]), &set(&[5, 4])).unwrap(), 1.0);
        assert_eq!(jaccard(&set(&[1]), &set(&[2])).unwrap(), 0.0);
        assert!(matches!(jaccard(&set(&[]), &set(&[2])), Err(Error::EmptyLabelSet)));
    }

    #[test]
    fn affinity_single_image() {
        let a = build_affinity(&[set(&[0])]).unwrap();
        assert_eq!(a.similarity[(0, 0)], 1.0);
        assert_eq!(a.laplacian[(0, 0)], 0.0);
    }

    #[test]
    fn affinity_identical_pair() {
        let a = build_affinity(&[set(&[0, 1]), set(&[1, 0])]).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[0.5, -0.5, -0.5, 0.5]);
        assert!((a.laplacian - expected).abs().max() < 1e-15);
    }

    #[test]
    fn laplacian_is_psd_and_annihilates_sqrt_degree() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let tags = random_tags(&mut rng, 6, 4);
        let a = build_affinity(&tags).unwrap();
        for _ in 0..100 {
            let x = DVector::from_fn(6, |_, _| rng.random_range(-1.0..1.0));
            assert!(x.dot(&(&a.laplacian * &x)) >= -1e-12);
        }
        let null = a.degrees.map(f64::sqrt);
        assert!((&a.laplacian * null).norm() < 1e-8);
    }

    /// Pairwise-sum form `1/2 sum_ij S_ij (x_i/sqrt(A_ii) - x_j/sqrt(A_jj))^2`
    /// against the matrix form.
    #[test]
    fn pairwise_sum_agrees_with_matrix_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in 1..7 {
            let tags = random_tags(&mut rng, n, 3);
            let a = build_affinity(&tags).unwrap();
            let x = DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
            let mut sum = 0.0;
            for i in 0..n {
                for j in 0..n {
                    let d = x[i] / a.degrees[i].sqrt() - x[j] / a.degrees[j].sqrt();
                    sum += 0.5 * a.similarity[(i, j)] * d * d;
                }
            }
            assert!((sum - x.dot(&(&a.laplacian * &x))).abs() < 1e-10);
        }
    }

    #[test]
    fn dissimilarity_examples() {
        let d = dissimilarity_diag(&set(&[1, 2, 3]), &[set(&[1, 2, 3]), set(&[4]), set(&[1])]).unwrap();
        assert_eq!(d.values[0], 0.0);
        assert_eq!(d.values[1], 1.0);
        assert!((d.values[2] - 2.0 / 3.0).abs() < 1e-15);
        assert!(dissimilarity_diag(&set(&[]), &[set(&[1])]).is_err());
    }

    #[test]
    fn constraint_examples() {
        let a = build_affinity(&[set(&[0, 1]), set(&[1])]).unwrap();
        let d = dissimilarity_diag(&set(&[0]), &[set(&[0, 1]), set(&[1])]).unwrap();
        let c = constraint_matrix(&a, &d, 0.0).unwrap();
        assert_eq!(c.matrix, &a.laplacian * 2.0);

        let single = build_affinity(&[set(&[0])]).unwrap();
        let diag = DissimilarityDiag { values: DVector::from_vec(vec![0.5]) };
        let c = constraint_matrix(&single, &diag, 1.0).unwrap();
        assert_eq!(c.matrix[(0, 0)], 1.0);

        assert!(constraint_matrix(&a, &d, -0.1).is_err());
    }

    #[test]
    fn constraint_is_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let tags = random_tags(&mut rng, 8, 5);
            let target = tags[0].clone();
            let a = build_affinity(&tags).unwrap();
            let d = dissimilarity_diag(&target, &tags).unwrap();
            let c = constraint_matrix(&a, &d, rng.random_range(0.0..3.0)).unwrap();
            assert!((&c.matrix - c.matrix.transpose()).abs().max() < 1e-14);
            let eig = c.matrix.clone().symmetric_eigen();
            assert!(eig.eigenvalues.min() >= -1e-8);
        }
    }
}
