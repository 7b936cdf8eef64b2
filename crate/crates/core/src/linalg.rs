//! Dense symmetric spectral routines and signature-matrix utilities.
//!
//! Every eigendecomposition in the crate goes through [`symmetric_eigen`] or
//! [`truncated_eigen`], so the ordering and sign conventions below hold
//! everywhere: eigenvectors are normalized so that their largest-magnitude
//! entry is nonnegative (ties resolved toward the lowest index).

use std::ops::Range;

use faer::linalg::solvers::DenseSolveCore;
use faer::{Mat, MatRef, Side};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GrdpgError, Result};

/// Matrices up to this size are always decomposed densely.
const DENSE_CUTOFF: usize = 400;
const SUBSPACE_MAX_ITERS: usize = 500;
const SUBSPACE_RESIDUAL_TOL: f64 = 1e-11;

/// The pair `(p, q)` of positive and negative directions of an indefinite
/// inner product `x^T I_{p,q} y`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Signature {
    p: usize,
    q: usize,
}

impl Signature {
    pub fn new(p: usize, q: usize) -> Result<Self> {
        if p + q == 0 {
            return Err(GrdpgError::InvalidDimension(
                "signature (0, 0) has dimension zero".into(),
            ));
        }
        Ok(Self { p, q })
    }

    /// Signature of a positive definite (ordinary dot product) model.
    pub fn rdpg(d: usize) -> Result<Self> {
        Self::new(d, 0)
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn dim(&self) -> usize {
        self.p + self.q
    }

    /// Diagonal of `I_{p,q}`.
    pub fn signs(&self) -> Vec<f64> {
        (0..self.dim())
            .map(|i| if i < self.p { 1.0 } else { -1.0 })
            .collect()
    }

    /// Indefinite inner product `x^T I_{p,q} y`.
    pub fn inner(&self, x: &[f64], y: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim());
        debug_assert_eq!(y.len(), self.dim());
        let pos: f64 = x[..self.p].iter().zip(&y[..self.p]).map(|(a, b)| a * b).sum();
        let neg: f64 = x[self.p..].iter().zip(&y[self.p..]).map(|(a, b)| a * b).sum();
        pos - neg
    }

    pub fn ipq(&self) -> Mat<f64> {
        let signs = self.signs();
        Mat::from_fn(self.dim(), self.dim(), |i, j| if i == j { signs[i] } else { 0.0 })
    }
}

impl std::fmt::Display for Signature {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {})", self.p, self.q)
    }
}

/// `I_{p,q} = diag(I_p, -I_q)`.
pub fn ipq_matrix(sig: Signature) -> Mat<f64> {
    sig.ipq()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum EigenOrdering {
    ByValueDescending,
    /// Largest `|λ|` first; equal magnitudes put the positive value first.
    #[default]
    ByMagnitudeDescending,
}

#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    pub values: Vec<f64>,
    /// Orthonormal eigenvectors, one per column, in the order of `values`.
    pub vectors: Mat<f64>,
    pub ordering: EigenOrdering,
}

impl SymmetricEigen {
    /// `V diag(values) V^T`.
    pub fn reconstruct(&self) -> Mat<f64> {
        let scaled = Mat::from_fn(self.vectors.nrows(), self.values.len(), |i, j| {
            self.vectors[(i, j)] * self.values[j]
        });
        &scaled * self.vectors.transpose()
    }

    pub fn max_abs_value(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

/// Result of a partial decomposition: the requested leading eigenpairs and a
/// (not necessarily converged) estimate of the next eigenvalue.
#[derive(Debug, Clone)]
pub struct TruncatedEigen {
    pub eigen: SymmetricEigen,
    pub trailing_estimate: Option<f64>,
    pub iterations: usize,
}

fn check_square_finite(m: MatRef<'_, f64>) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(GrdpgError::InvalidDimension(format!(
            "expected a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.nrows() == 0 {
        return Err(GrdpgError::InvalidDimension("empty matrix".into()));
    }
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            if !m[(i, j)].is_finite() {
                return Err(GrdpgError::InvalidInput(format!(
                    "non-finite entry at ({i}, {j})"
                )));
            }
        }
    }
    Ok(())
}

/// `(M + M^T) / 2`.
pub fn symmetrize(m: MatRef<'_, f64>) -> Mat<f64> {
    Mat::from_fn(m.nrows(), m.ncols(), |i, j| 0.5 * (m[(i, j)] + m[(j, i)]))
}

/// Permutation sorting `values` according to `ordering`. Remaining ties are
/// resolved by original index.
pub fn ordering_permutation(values: &[f64], ordering: EigenOrdering) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    match ordering {
        EigenOrdering::ByValueDescending => {
            idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
        }
        EigenOrdering::ByMagnitudeDescending => idx.sort_by(|&a, &b| {
            values[b]
                .abs()
                .total_cmp(&values[a].abs())
                .then(values[b].total_cmp(&values[a]))
                .then(a.cmp(&b))
        }),
    }
    idx
}

/// Permutation putting positive values first (descending), then negative
/// values by descending magnitude. This is the column order in which
/// `X I_{p,q} X^T` reproduces a rank-`d` indefinite matrix.
pub fn signature_order(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| {
        let (va, vb) = (values[a], values[b]);
        match (va > 0.0, vb > 0.0) {
            (true, false) => std::cmp::Ordering::Less,
            (false, true) => std::cmp::Ordering::Greater,
            _ => vb.abs().total_cmp(&va.abs()).then(a.cmp(&b)),
        }
    });
    idx
}

/// Flip `v` so that its largest-magnitude entry (lowest index on ties) is
/// nonnegative. Returns the applied sign.
pub fn normalize_sign(mut v: faer::ColMut<'_, f64>) -> f64 {
    let mut best = 0usize;
    let mut best_abs = -1.0;
    for i in 0..v.nrows() {
        let a = v[i].abs();
        if a > best_abs {
            best_abs = a;
            best = i;
        }
    }
    if v.nrows() > 0 && v[best] < 0.0 {
        for i in 0..v.nrows() {
            v[i] = -v[i];
        }
        -1.0
    } else {
        1.0
    }
}

fn finish_eigen(values: Vec<f64>, vectors: MatRef<'_, f64>, ordering: EigenOrdering) -> SymmetricEigen {
    let perm = ordering_permutation(&values, ordering);
    let mut out = Mat::from_fn(vectors.nrows(), perm.len(), |i, j| vectors[(i, perm[j])]);
    for j in 0..out.ncols() {
        normalize_sign(out.col_mut(j));
    }
    SymmetricEigen {
        values: perm.iter().map(|&k| values[k]).collect(),
        vectors: out,
        ordering,
    }
}

/// Full eigendecomposition of a symmetric matrix. The input is symmetrized
/// by averaging with its transpose first.
pub fn symmetric_eigen(m: MatRef<'_, f64>, ordering: EigenOrdering) -> Result<SymmetricEigen> {
    check_square_finite(m)?;
    let sym = symmetrize(m);
    let evd = sym
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| GrdpgError::Numerical(format!("eigendecomposition failed: {e:?}")))?;
    let values: Vec<f64> = evd.S().column_vector().iter().copied().collect();
    Ok(finish_eigen(values, evd.U(), ordering))
}

fn orthonormalize(y: MatRef<'_, f64>) -> Mat<f64> {
    y.qr().compute_thin_Q()
}

/// Leading `k` eigenpairs by magnitude.
///
/// Small matrices are decomposed densely. Larger ones use block subspace
/// iteration with Rayleigh-Ritz extraction from a fixed starting block, so
/// the output is a deterministic function of the input. If the iteration
/// does not reach the residual tolerance it falls back to the dense solver.
pub fn truncated_eigen(m: MatRef<'_, f64>, k: usize) -> Result<TruncatedEigen> {
    check_square_finite(m)?;
    let n = m.nrows();
    if k == 0 || k > n {
        return Err(GrdpgError::InvalidDimension(format!(
            "cannot extract {k} eigenpairs from a {n}x{n} matrix"
        )));
    }
    let block = (k + k.max(8)).min(n);
    if n <= DENSE_CUTOFF || 2 * block >= n {
        return dense_truncated(m, k);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(0x6a09_e667_f3bc_c908);
    let start = Mat::from_fn(n, block, |_, _| rng.random_range(-1.0..1.0));
    let mut basis = orthonormalize(start.as_ref());

    for iter in 1..=SUBSPACE_MAX_ITERS {
        let image = m * &basis;
        let projected = symmetrize((basis.transpose() * &image).as_ref());
        let small = symmetric_eigen(projected.as_ref(), EigenOrdering::ByMagnitudeDescending)?;
        let ritz = &basis * &small.vectors;
        let ritz_image = &image * &small.vectors;

        let scale = small.max_abs_value().max(f64::MIN_POSITIVE);
        let mut converged = true;
        for j in 0..k {
            let theta = small.values[j];
            let mut r2 = 0.0;
            for i in 0..n {
                let r = ritz_image[(i, j)] - theta * ritz[(i, j)];
                r2 += r * r;
            }
            if r2.sqrt() > SUBSPACE_RESIDUAL_TOL * scale {
                converged = false;
                break;
            }
        }
        if converged {
            let values = small.values[..k].to_vec();
            let vectors = ritz.subcols(0, k).to_owned();
            let trailing_estimate = small.values.get(k).copied();
            return Ok(TruncatedEigen {
                eigen: finish_eigen(values, vectors.as_ref(), EigenOrdering::ByMagnitudeDescending),
                trailing_estimate,
                iterations: iter,
            });
        }
        basis = orthonormalize(ritz_image.as_ref());
    }
    log::warn!("subspace iteration did not converge for n = {n}, k = {k}; using dense solver");
    dense_truncated(m, k)
}

fn dense_truncated(m: MatRef<'_, f64>, k: usize) -> Result<TruncatedEigen> {
    let full = symmetric_eigen(m, EigenOrdering::ByMagnitudeDescending)?;
    let trailing_estimate = full.values.get(k).copied();
    Ok(TruncatedEigen {
        eigen: SymmetricEigen {
            values: full.values[..k].to_vec(),
            vectors: full.vectors.subcols(0, k).to_owned(),
            ordering: EigenOrdering::ByMagnitudeDescending,
        },
        trailing_estimate,
        iterations: 0,
    })
}

/// Symmetric square root of a positive semidefinite matrix.
///
/// Eigenvalues down to `-1e-6` times the spectral scale are clamped to
/// zero; anything more negative is rejected.
pub fn psd_sqrt(m: MatRef<'_, f64>) -> Result<Mat<f64>> {
    let eig = symmetric_eigen(m, EigenOrdering::ByValueDescending)?;
    let scale = eig.max_abs_value();
    let min = eig.values.iter().copied().fold(f64::INFINITY, f64::min);
    if min < -1e-6 * scale {
        return Err(GrdpgError::NotPsd {
            min_eigenvalue: min,
            scale,
        });
    }
    let d = eig.values.len();
    let roots: Vec<f64> = eig.values.iter().map(|v| v.max(0.0).sqrt()).collect();
    let scaled = Mat::from_fn(d, d, |i, j| eig.vectors[(i, j)] * roots[j]);
    Ok(symmetrize((&scaled * eig.vectors.transpose()).as_ref()))
}

/// Grouping of consecutive (near-)equal eigenvalues.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenBlockStructure {
    pub blocks: Vec<Range<usize>>,
    pub gap_tol: f64,
}

impl EigenBlockStructure {
    /// One block per index.
    pub fn singletons(d: usize) -> Self {
        Self {
            blocks: (0..d).map(|i| i..i + 1).collect(),
            gap_tol: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.blocks.last().map_or(0, |b| b.end)
    }

    pub fn has_repeated(&self) -> bool {
        self.blocks.iter().any(|b| b.len() > 1)
    }

    /// Checks that the blocks partition `0..d` and that none crosses the
    /// boundary between the positive and negative parts of `sig`.
    pub fn validate(&self, sig: Signature) -> Result<()> {
        let mut next = 0;
        for b in &self.blocks {
            if b.start != next || b.is_empty() {
                return Err(GrdpgError::InvalidBlocks(format!(
                    "blocks {:?} do not partition 0..{}",
                    self.blocks,
                    sig.dim()
                )));
            }
            if b.start < sig.p() && b.end > sig.p() {
                return Err(GrdpgError::InvalidBlocks(format!(
                    "block {b:?} straddles the signature boundary at {}",
                    sig.p()
                )));
            }
            next = b.end;
        }
        if next != sig.dim() {
            return Err(GrdpgError::InvalidBlocks(format!(
                "blocks cover 0..{next}, expected 0..{}",
                sig.dim()
            )));
        }
        Ok(())
    }
}

/// Groups sorted eigenvalues whose consecutive gaps are at most `gap_tol`.
pub fn block_structure(values: &[f64], gap_tol: f64) -> EigenBlockStructure {
    let mut blocks = Vec::new();
    let mut start = 0;
    for i in 1..=values.len() {
        if i == values.len() || (values[i] - values[i - 1]).abs() > gap_tol {
            if i > start {
                blocks.push(start..i);
            }
            start = i;
        }
    }
    EigenBlockStructure { blocks, gap_tol }
}

/// `1e-8 * max |λ|`, the gap tolerance for exactly computed spectra.
pub fn default_gap_tol(values: &[f64]) -> f64 {
    1e-8 * values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

/// Largest singular value.
pub fn spectral_norm(m: MatRef<'_, f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    // d x d in practice; for tall matrices go through the Gram matrix.
    if m.nrows() > 4 * m.ncols() {
        let gram = m.transpose() * m;
        return symmetric_eigen(gram.as_ref(), EigenOrdering::ByValueDescending)
            .map(|e| e.values[0].max(0.0).sqrt())
            .unwrap_or(f64::NAN);
    }
    m.singular_values()
        .map(|s| s.first().copied().unwrap_or(0.0))
        .unwrap_or(f64::NAN)
}

/// Largest row Euclidean norm (the 2-to-infinity norm).
pub fn two_to_infinity_norm(m: MatRef<'_, f64>) -> f64 {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)].powi(2)).sum::<f64>().sqrt())
        .fold(0.0, f64::max)
}

pub fn max_abs(m: MatRef<'_, f64>) -> f64 {
    let mut out = 0.0_f64;
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            out = out.max(m[(i, j)].abs());
        }
    }
    out
}

/// `max |a - b|` entrywise.
pub fn max_abs_diff(a: MatRef<'_, f64>, b: MatRef<'_, f64>) -> f64 {
    assert_eq!((a.nrows(), a.ncols()), (b.nrows(), b.ncols()));
    let mut out = 0.0_f64;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            out = out.max((a[(i, j)] - b[(i, j)]).abs());
        }
    }
    out
}

/// Inverse of a small square matrix; rejects numerically singular input.
pub fn inverse(m: MatRef<'_, f64>) -> Result<Mat<f64>> {
    check_square_finite(m)?;
    let sv = m
        .singular_values()
        .map_err(|e| GrdpgError::Numerical(format!("svd failed: {e:?}")))?;
    let (max, min) = (sv[0], *sv.last().unwrap());
    if max == 0.0 || min <= 1e-14 * max {
        return Err(GrdpgError::Numerical(format!(
            "matrix is singular to working precision (condition {:e})",
            max / min
        )));
    }
    Ok(m.full_piv_lu().inverse())
}

/// `diag(v)` as a dense matrix.
pub fn diag(v: &[f64]) -> Mat<f64> {
    Mat::from_fn(v.len(), v.len(), |i, j| if i == j { v[i] } else { 0.0 })
}

pub fn from_rows(rows: &[Vec<f64>]) -> Result<Mat<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(GrdpgError::InvalidDimension("ragged rows".into()));
    }
    Ok(Mat::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

pub fn to_rows(m: MatRef<'_, f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

pub fn row(m: MatRef<'_, f64>, i: usize) -> Vec<f64> {
    (0..m.ncols()).map(|j| m[(i, j)]).collect()
}

/// Serde helpers for storing a matrix as a list of rows.
pub mod serde_mat {
    use faer::Mat;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &Mat<f64>, s: S) -> Result<S::Ok, S::Error> {
        super::to_rows(m.as_ref()).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Mat<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        super::from_rows(&rows).map_err(serde::de::Error::custom)
    }

    pub mod vec {
        use faer::Mat;
        use serde::{Deserialize, Deserializer, Serialize, Serializer};

        pub fn serialize<S: Serializer>(ms: &[Mat<f64>], s: S) -> Result<S::Ok, S::Error> {
            ms.iter()
                .map(|m| super::super::to_rows(m.as_ref()))
                .collect::<Vec<_>>()
                .serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Mat<f64>>, D::Error> {
            let all = Vec::<Vec<Vec<f64>>>::deserialize(d)?;
            all.iter()
                .map(|rows| super::super::from_rows(rows).map_err(serde::de::Error::custom))
                .collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mat(rows: &[&[f64]]) -> Mat<f64> {
        Mat::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j])
    }

    fn random_symmetric(d: usize, seed: u64) -> Mat<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = Mat::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
        symmetrize(a.as_ref())
    }

    #[test]
    fn ipq_examples() {
        let m = ipq_matrix(Signature::new(1, 2).unwrap());
        assert_eq!(to_rows(m.as_ref()), vec![vec![1.0, 0.0, 0.0], vec![0.0, -1.0, 0.0], vec![0.0, 0.0, -1.0]]);
        let m = ipq_matrix(Signature::new(2, 0).unwrap());
        assert_eq!(to_rows(m.as_ref()), vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let m = ipq_matrix(Signature::new(0, 1).unwrap());
        assert_eq!(to_rows(m.as_ref()), vec![vec![-1.0]]);
        assert!(matches!(Signature::new(0, 0), Err(GrdpgError::InvalidDimension(_))));
    }

    #[test]
    fn ipq_squares_to_identity() {
        for (p, q) in [(1, 0), (0, 3), (2, 2), (4, 1)] {
            let i = ipq_matrix(Signature::new(p, q).unwrap());
            let sq = &i * &i;
            assert_eq!(sq, Mat::<f64>::identity(p + q, p + q));
        }
    }

    #[test]
    fn eigen_of_diagonal() {
        let e = symmetric_eigen(mat(&[&[3.0, 0.0], &[0.0, 1.0]]).as_ref(), EigenOrdering::ByValueDescending).unwrap();
        assert_eq!(e.values, vec![3.0, 1.0]);
        assert!(max_abs_diff(e.vectors.as_ref(), Mat::<f64>::identity(2, 2).as_ref()) < 1e-15);
    }

    #[test]
    fn eigen_of_swap_matrix() {
        let e = symmetric_eigen(mat(&[&[0.0, 1.0], &[1.0, 0.0]]).as_ref(), EigenOrdering::ByMagnitudeDescending).unwrap();
        assert!((e.values[0] - 1.0).abs() < 1e-14 && (e.values[1] + 1.0).abs() < 1e-14);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        // (1,1)/√2 and the tie-broken (1,-1)/√2.
        assert!((e.vectors[(0, 0)] - h).abs() < 1e-14 && (e.vectors[(1, 0)] - h).abs() < 1e-14);
        assert!((e.vectors[(0, 1)] - h).abs() < 1e-14 && (e.vectors[(1, 1)] + h).abs() < 1e-14);
    }

    #[test]
    fn eigen_of_three_block_matrix_has_signature_one_two() {
        let b = mat(&[&[0.6, 0.9, 0.9], &[0.9, 0.6, 0.9], &[0.9, 0.9, 0.3]]);
        let e = symmetric_eigen(b.as_ref(), EigenOrdering::ByValueDescending).unwrap();
        // Oracle: roots of det(B - λI), found by bisection on the cubic.
        let charpoly = |l: f64| {
            let m = [[0.6 - l, 0.9, 0.9], [0.9, 0.6 - l, 0.9], [0.9, 0.9, 0.3 - l]];
            m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
        };
        let bisect = |mut lo: f64, mut hi: f64| {
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if charpoly(lo).signum() == charpoly(mid).signum() { lo = mid } else { hi = mid }
            }
            0.5 * (lo + hi)
        };
        let roots = [bisect(1.0, 3.0), bisect(-0.4, -0.1), bisect(-0.9, -0.4)];
        for (v, r) in e.values.iter().zip(roots) {
            assert!((v - r).abs() < 1e-12, "{v} vs {r}");
        }
        assert_eq!(e.values.iter().filter(|v| **v > 0.0).count(), 1);
        assert_eq!(e.values.iter().filter(|v| **v < 0.0).count(), 2);
    }

    #[test]
    fn eigen_rejects_non_finite() {
        let m = mat(&[&[1.0, f64::NAN], &[f64::NAN, 1.0]]);
        assert!(matches!(symmetric_eigen(m.as_ref(), EigenOrdering::default()), Err(GrdpgError::InvalidInput(_))));
    }

    #[test]
    fn magnitude_ordering_ties_prefer_positive() {
        let m = mat(&[&[-2.0, 0.0, 0.0], &[0.0, 2.0, 0.0], &[0.0, 0.0, 1.0]]);
        let e = symmetric_eigen(m.as_ref(), EigenOrdering::ByMagnitudeDescending).unwrap();
        assert_eq!(e.values, vec![2.0, -2.0, 1.0]);
    }

    #[test]
    fn signature_order_puts_positive_first() {
        assert_eq!(signature_order(&[-9.0, 4.0, -1.0, 0.5]), vec![1, 3, 0, 2]);
    }

    #[test]
    fn psd_sqrt_examples() {
        let s = psd_sqrt(mat(&[&[4.0, 0.0], &[0.0, 9.0]]).as_ref()).unwrap();
        assert!(max_abs_diff(s.as_ref(), mat(&[&[2.0, 0.0], &[0.0, 3.0]]).as_ref()) < 1e-14);
        let s = psd_sqrt(Mat::<f64>::identity(3, 3).as_ref()).unwrap();
        assert!(max_abs_diff(s.as_ref(), Mat::<f64>::identity(3, 3).as_ref()) < 1e-14);
        let s = psd_sqrt(mat(&[&[0.5]]).as_ref()).unwrap();
        assert!((s[(0, 0)] - 0.5_f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn psd_sqrt_rejects_indefinite_and_clamps_roundoff() {
        let err = psd_sqrt(mat(&[&[1.0, 0.0], &[0.0, -0.5]]).as_ref()).unwrap_err();
        assert!(matches!(err, GrdpgError::NotPsd { .. }));
        let s = psd_sqrt(mat(&[&[1.0, 0.0], &[0.0, -1e-12]]).as_ref()).unwrap();
        assert_eq!(s[(1, 1)], 0.0);
    }

    #[test]
    fn block_structure_examples() {
        let b = block_structure(&[3.0, 1.0, -2.0], 1e-6);
        assert_eq!(b.blocks, vec![0..1, 1..2, 2..3]);
        let b = block_structure(&[2.0, 2.0, -1.0], 1e-6);
        assert_eq!(b.blocks, vec![0..2, 2..3]);
        let b = block_structure(&[1.0, 1.0 - 1e-9, 0.5], 1e-6);
        assert_eq!(b.blocks, vec![0..2, 2..3]);
    }

    #[test]
    fn blocks_must_not_straddle_signature() {
        let sig = Signature::new(1, 2).unwrap();
        let ok = EigenBlockStructure { blocks: vec![0..1, 1..3], gap_tol: 0.0 };
        assert!(ok.validate(sig).is_ok());
        let bad = EigenBlockStructure { blocks: vec![0..2, 2..3], gap_tol: 0.0 };
        assert!(matches!(bad.validate(sig), Err(GrdpgError::InvalidBlocks(_))));
        let gap = EigenBlockStructure { blocks: vec![0..1, 2..3], gap_tol: 0.0 };
        assert!(gap.validate(sig).is_err());
    }

    #[test]
    fn truncated_matches_dense_on_large_matrix() {
        // Low rank plus small noise, big enough to take the iterative path.
        let n = 600;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let u = Mat::from_fn(n, 3, |_, _| rng.random_range(-1.0..1.0));
        let signs = diag(&[3.0, -2.0, 1.0]);
        let low = &(&u * &signs) * u.transpose();
        let noise = symmetrize(Mat::from_fn(n, n, |_, _| rng.random_range(-0.05..0.05)).as_ref());
        let m = &low + &noise;
        let t = truncated_eigen(m.as_ref(), 3).unwrap();
        assert!(t.iterations > 0, "expected the iterative path");
        let full = symmetric_eigen(m.as_ref(), EigenOrdering::ByMagnitudeDescending).unwrap();
        let scale = full.max_abs_value();
        for j in 0..3 {
            assert!((t.eigen.values[j] - full.values[j]).abs() < 1e-9 * scale);
            let dot: f64 = (0..n).map(|i| t.eigen.vectors[(i, j)] * full.vectors[(i, j)]).sum();
            assert!((dot - 1.0).abs() < 1e-8, "column {j}: {dot}");
        }
        let next = t.trailing_estimate.unwrap();
        assert!(next.abs() <= full.values[3].abs() + 1e-9 * scale);
    }

    #[test]
    fn spectral_norm_of_rotation_is_one() {
        let (c, s) = (0.3_f64.cos(), 0.3_f64.sin());
        let r = mat(&[&[c, -s], &[s, c]]);
        assert!((spectral_norm(r.as_ref()) - 1.0).abs() < 1e-14);
        let tall = Mat::from_fn(50, 2, |i, j| if i == j { 2.0 } else { 0.0 });
        assert!((spectral_norm(tall.as_ref()) - 2.0).abs() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn eigen_invariants_hold(d in 1usize..9, seed in any::<u64>()) {
            let m = random_symmetric(d, seed);
            let e = symmetric_eigen(m.as_ref(), EigenOrdering::ByMagnitudeDescending).unwrap();
            let scale = e.max_abs_value().max(1e-300);
            let vtv = e.vectors.transpose() * &e.vectors;
            prop_assert!(max_abs_diff(vtv.as_ref(), Mat::<f64>::identity(d, d).as_ref()) < 1e-10);
            prop_assert!(max_abs_diff(e.reconstruct().as_ref(), m.as_ref()) < 1e-8 * scale);
            // Re-decomposition is idempotent under the sign convention.
            let again = symmetric_eigen(e.reconstruct().as_ref(), EigenOrdering::ByMagnitudeDescending).unwrap();
            for (a, b) in e.values.iter().zip(&again.values) {
                prop_assert!((a - b).abs() < 1e-8);
            }
            let sorted: Vec<f64> = e.values.iter().map(|v| v.abs()).collect();
            let gaps_ok = sorted.windows(2).all(|w| w[0] - w[1] > 1e-6);
            if gaps_ok {
                prop_assert!(max_abs_diff(again.vectors.as_ref(), e.vectors.as_ref()) < 1e-8);
            }
        }

        #[test]
        fn psd_sqrt_squares_back(d in 1usize..=10, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = Mat::from_fn(d, d + 2, |_, _| rng.random_range(-1.0..1.0));
            let m = &a * a.transpose();
            let s = psd_sqrt(m.as_ref()).unwrap();
            let scale = symmetric_eigen(m.as_ref(), EigenOrdering::ByValueDescending).unwrap().max_abs_value();
            prop_assert!(max_abs_diff((&s * &s).as_ref(), m.as_ref()) < 1e-8 * scale);
            prop_assert!(max_abs_diff(s.as_ref(), s.transpose()) == 0.0);
        }
    }
}
