//! Limiting covariances of embedded rows and their empirical counterparts.

use std::fmt::Write as _;

use faer::{Mat, MatRef};
use serde::{Deserialize, Serialize};

use crate::alignment::{limit_alignment, LimitAlignment};
use crate::embedding::EmbeddingResult;
use crate::error::{GrdpgError, Result};
use crate::linalg;
use crate::models::{outer, second_moment, LatentDistribution, MixtureDistribution};

/// `Σ(x) = E[(x^T I ξ)(1 − x^T I ξ) ξ ξ^T]`.
pub fn sigma_unrotated(x: &[f64], dist: &LatentDistribution) -> Mat<f64> {
    let sig = dist.signature();
    let m = dist.expectation(|xi| {
        let t = sig.inner(x, xi);
        outer(xi, xi) * faer::Scale(t * (1.0 - t))
    });
    linalg::symmetrize(m.as_ref())
}

/// `R = Q̃^{-T} I_{p,q} Δ^{-1}`, the linear map in the first-order expansion
/// of an embedded row around its limit `Q̃^{-T} x`.
pub fn covariance_rotation(limit: &LimitAlignment, delta: MatRef<'_, f64>) -> Result<Mat<f64>> {
    let dinv = linalg::inverse(delta).map_err(|_| GrdpgError::InvalidModel("second moment is singular".into()))?;
    Ok(&(&limit.row_map()? * limit.signature.ipq()) * &dinv)
}

/// `R Σ(x) R^T` with precomputed `R`.
pub fn sigma_rotated_with(x: &[f64], dist: &LatentDistribution, rotation: MatRef<'_, f64>) -> Mat<f64> {
    let s = sigma_unrotated(x, dist);
    let r = &(rotation * &s) * rotation.transpose();
    linalg::symmetrize(r.as_ref())
}

/// Limiting covariance of `√n (X̂_i − Q̃^{-T} x)` for a vertex at `x`.
pub fn sigma_rotated(x: &[f64], dist: &LatentDistribution) -> Result<Mat<f64>> {
    let limit = limit_alignment(dist)?;
    let r = covariance_rotation(&limit, second_moment(dist).delta.as_ref())?;
    Ok(sigma_rotated_with(x, dist, r.as_ref()))
}

/// `Σ(ν_k)` for every block of a mixture.
pub fn theoretical_block_covariances(m: &MixtureDistribution) -> Result<Vec<Mat<f64>>> {
    let dist = LatentDistribution::from(m.clone());
    let limit = limit_alignment(&dist)?;
    let r = covariance_rotation(&limit, m.delta().as_ref())?;
    Ok(m.centers().iter().map(|c| sigma_rotated_with(c, &dist, r.as_ref())).collect())
}

/// `n` times the within-block sample covariance of the rows of `x`,
/// centered at each block's sample mean.
pub fn block_covariances(x: MatRef<'_, f64>, assignments: &[usize], k: usize) -> Result<Vec<Mat<f64>>> {
    let (n, d) = (x.nrows(), x.ncols());
    if assignments.len() != n {
        return Err(GrdpgError::InvalidDimension(format!("{} assignments for {n} rows", assignments.len())));
    }
    let mut out = Vec::with_capacity(k);
    for b in 0..k {
        let rows: Vec<usize> = (0..n).filter(|&i| assignments[i] == b).collect();
        if rows.len() < 2 {
            return Err(GrdpgError::DegenerateBlock {
                block: b,
                reason: format!("{} member(s); a covariance needs at least 2", rows.len()),
            });
        }
        let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|&i| x[(i, j)]).sum::<f64>() / rows.len() as f64).collect();
        let mut c = Mat::<f64>::zeros(d, d);
        for &i in &rows {
            for a in 0..d {
                for b2 in 0..d {
                    c[(a, b2)] += (x[(i, a)] - mean[a]) * (x[(i, b2)] - mean[b2]);
                }
            }
        }
        let scale = n as f64 / (rows.len() - 1) as f64;
        out.push(linalg::symmetrize((c * faer::Scale(scale)).as_ref()));
    }
    Ok(out)
}

/// `D M D` for a diagonal sign vector.
pub fn apply_signs(m: MatRef<'_, f64>, signs: &[f64]) -> Mat<f64> {
    Mat::from_fn(m.nrows(), m.ncols(), |i, j| signs[i] * m[(i, j)] * signs[j])
}

/// Diagonal sign vector minimizing `Σ_k Σ_ij |(D A_k D − B_k)_ij|`.
/// `D` and `−D` act identically, so the first sign is fixed to `+1`.
pub fn best_sign_alignment(a: &[Mat<f64>], b: &[Mat<f64>]) -> (Vec<f64>, f64) {
    let d = a.first().map_or(0, |m| m.nrows());
    let gap = |signs: &[f64]| -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| {
                let s = apply_signs(x.as_ref(), signs);
                let mut t = 0.0;
                for j in 0..d {
                    for i in 0..d {
                        t += (s[(i, j)] - y[(i, j)]).abs();
                    }
                }
                t
            })
            .sum()
    };
    let mut best = (vec![1.0; d], f64::INFINITY);
    for mask in 0..(1u64 << d.saturating_sub(1)) {
        let signs: Vec<f64> = (0..d).map(|j| if j > 0 && mask & (1 << (j - 1)) != 0 { -1.0 } else { 1.0 }).collect();
        let g = gap(&signs);
        if g < best.1 {
            best = (signs, g);
        }
    }
    best
}

fn max_abs_gap(a: MatRef<'_, f64>, b: MatRef<'_, f64>) -> f64 {
    linalg::max_abs_diff(a, b)
}

/// Empirical against theoretical block covariances at one sample size.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CovarianceReport {
    #[serde(with = "linalg::serde_mat::vec")]
    pub theoretical: Vec<Mat<f64>>,
    /// Raw `Σ̂_k` in signature-ordered embedding coordinates.
    #[serde(with = "linalg::serde_mat::vec")]
    pub empirical: Vec<Mat<f64>>,
    pub n: usize,
    pub seed: Option<u64>,
    /// Diagonal of the sign matrix `D` applied as `D Σ̂ D`.
    pub sign_alignment: Vec<f64>,
    /// Per block, `max_ij |D Σ̂_k D − Σ_k|`.
    pub max_abs_gap: Vec<f64>,
}

impl CovarianceReport {
    pub fn aligned_empirical(&self) -> Vec<Mat<f64>> {
        self.empirical.iter().map(|m| apply_signs(m.as_ref(), &self.sign_alignment)).collect()
    }

    pub fn overall_gap(&self) -> f64 {
        self.max_abs_gap.iter().copied().fold(0.0, f64::max)
    }
}

/// Builds the report from an adjacency embedding with known assignments.
pub fn empirical_block_covariance(
    emb: &EmbeddingResult,
    assignments: &[usize],
    m: &MixtureDistribution,
    seed: Option<u64>,
) -> Result<CovarianceReport> {
    emb.check_signature(m.signature())?;
    let theoretical = theoretical_block_covariances(m)?;
    let (xs, _) = emb.signature_ordered();
    let empirical = block_covariances(xs.as_ref(), assignments, m.num_blocks())?;
    Ok(compare(theoretical, empirical, emb.n(), seed))
}

/// Sign-aligns `empirical` to `theoretical` and records the gaps.
pub fn compare(theoretical: Vec<Mat<f64>>, empirical: Vec<Mat<f64>>, n: usize, seed: Option<u64>) -> CovarianceReport {
    let (signs, _) = best_sign_alignment(&empirical, &theoretical);
    let max_abs_gap = empirical
        .iter()
        .zip(&theoretical)
        .map(|(e, t)| max_abs_gap(apply_signs(e.as_ref(), &signs).as_ref(), t.as_ref()))
        .collect();
    CovarianceReport {
        theoretical,
        empirical,
        n,
        seed,
        sign_alignment: signs,
        max_abs_gap,
    }
}

/// Elementwise median of sign-aligned matrices from several replicates.
pub fn elementwise_median(mats: &[Vec<Mat<f64>>]) -> Option<Vec<Mat<f64>>> {
    let first = mats.first()?;
    Some(
        (0..first.len())
            .map(|k| {
                let (r, c) = (first[k].nrows(), first[k].ncols());
                Mat::from_fn(r, c, |i, j| {
                    crate::par::median(&mats.iter().map(|m| m[k][(i, j)]).collect::<Vec<_>>()).unwrap_or(f64::NAN)
                })
            })
            .collect(),
    )
}

/// Text table with one row group per block and one column per matrix set;
/// the last column is conventionally the theoretical limit.
pub fn render_table(columns: &[(String, Vec<Mat<f64>>)]) -> String {
    let mut out = String::new();
    let Some((_, first)) = columns.first() else { return out };
    let d = first.first().map_or(0, |m| m.nrows());
    let width = 8 * d + 2;
    let _ = write!(out, "{:<8}", "block");
    for (label, _) in columns {
        let _ = write!(out, "| {label:<width$}");
    }
    out.push('\n');
    for k in 0..first.len() {
        for i in 0..d {
            let _ = write!(out, "{:<8}", if i == 0 { format!("Σ_{}", k + 1) } else { String::new() });
            for (_, mats) in columns {
                let cells: String = (0..d).map(|j| format!("{:>8.3}", mats[k][(i, j)])).collect();
                let _ = write!(out, "| {cells:<width$}");
            }
            out.push('\n');
        }
        out.push('\n');
    }
    out
}

/// Whether all matrices are symmetric within `1e-10` and PSD within
/// `-1e-9` eigenvalue slack.
pub fn symmetric_psd(m: MatRef<'_, f64>) -> bool {
    let sym = linalg::max_abs_diff(m, m.transpose()) <= 1e-10;
    let eig = linalg::symmetric_eigen(m, linalg::EigenOrdering::ByValueDescending);
    sym && eig.is_ok_and(|e| e.values.iter().all(|v| *v >= -1e-9))
}
