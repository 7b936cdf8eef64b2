//! Adjacency spectral embedding and spectrum diagnostics.

use faer::{Mat, MatRef};
use serde::{Deserialize, Serialize};

use crate::error::{GrdpgError, Result};
use crate::io;
use crate::linalg::{self, EigenOrdering, Signature};
use crate::models::{second_moment, LatentDistribution};
use crate::sampler::{AdjacencyMatrix, ProbabilityMatrix, ProbabilitySource};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EmbeddingSource {
    FromP,
    FromA,
}

/// `X̂ = U |Λ|^{1/2}` from the leading `d` eigenpairs by magnitude.
#[derive(Debug, Clone)]
pub struct EmbeddingResult {
    pub xhat: Mat<f64>,
    /// Signed eigenvalues, magnitude descending.
    pub eigenvalues: Vec<f64>,
    /// Counts of positive and negative retained eigenvalues.
    pub signature_observed: (usize, usize),
    pub source: EmbeddingSource,
    pub warnings: Vec<String>,
}

impl EmbeddingResult {
    pub fn n(&self) -> usize {
        self.xhat.nrows()
    }

    pub fn dim(&self) -> usize {
        self.xhat.ncols()
    }

    /// Column permutation putting positive eigenvalues first.
    pub fn signature_permutation(&self) -> Vec<usize> {
        linalg::signature_order(&self.eigenvalues)
    }

    /// `X̂` with columns reordered so that `X̂ I_{p,q} X̂^T` reproduces the
    /// decomposed matrix, together with the reordered eigenvalues.
    pub fn signature_ordered(&self) -> (Mat<f64>, Vec<f64>) {
        let perm = self.signature_permutation();
        let x = Mat::from_fn(self.n(), self.dim(), |i, j| self.xhat[(i, perm[j])]);
        (x, perm.iter().map(|&k| self.eigenvalues[k]).collect())
    }

    /// `X̂ diag(sign λ) X̂^T`.
    pub fn reconstruct(&self) -> Mat<f64> {
        let scaled = Mat::from_fn(self.n(), self.dim(), |i, j| self.xhat[(i, j)] * self.eigenvalues[j].signum());
        &scaled * self.xhat.transpose()
    }

    /// Aborts when the retained signature differs from the model's.
    pub fn check_signature(&self, sig: Signature) -> Result<()> {
        let (p, q) = self.signature_observed;
        if (p, q) != (sig.p(), sig.q()) {
            return Err(GrdpgError::SignatureMismatch {
                p: sig.p(),
                q: sig.q(),
                observed_p: p,
                observed_q: q,
            });
        }
        Ok(())
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W, seed: Option<u64>) -> Result<()> {
        let meta = io::meta([
            ("kind", "embedding".to_string()),
            ("source", format!("{:?}", self.source)),
            ("n", self.n().to_string()),
            ("d", self.dim().to_string()),
            ("signature_observed", format!("({}, {})", self.signature_observed.0, self.signature_observed.1)),
            ("seed", seed.map_or("none".into(), |s| s.to_string())),
        ]);
        let header: Vec<String> = (0..self.dim()).map(|j| format!("xhat{j}")).collect();
        io::write_matrix(w, &meta, &header, self.xhat.as_ref(), None)
    }

    pub fn sidecar(&self, seed: Option<u64>) -> EmbeddingSidecar {
        EmbeddingSidecar {
            eigenvalues: self.eigenvalues.clone(),
            signature_observed: [self.signature_observed.0, self.signature_observed.1],
            source: self.source,
            seed,
            n: self.n(),
            warnings: self.warnings.clone(),
        }
    }
}

/// JSON companion of an embedding CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingSidecar {
    pub eigenvalues: Vec<f64>,
    pub signature_observed: [usize; 2],
    pub source: EmbeddingSource,
    pub seed: Option<u64>,
    pub n: usize,
    pub warnings: Vec<String>,
}

/// Embeds a symmetric matrix into `d` dimensions.
pub fn embed(m: MatRef<'_, f64>, d: usize, source: EmbeddingSource) -> Result<EmbeddingResult> {
    let n = m.nrows();
    if d == 0 || d > n {
        return Err(GrdpgError::InvalidDimension(format!("cannot embed a {n}-vertex graph into {d} dimensions")));
    }
    let t = linalg::truncated_eigen(m, d)?;
    let eigenvalues = t.eigen.values;
    let mut warnings = Vec::new();
    let scale = eigenvalues[0].abs();
    if let Some(next) = t.trailing_estimate {
        if eigenvalues[d - 1].abs() - next.abs() <= 1e-12 * scale {
            let msg = format!(
                "eigenvalue magnitudes {} and {} at positions {d} and {} are not separated",
                eigenvalues[d - 1].abs(),
                next.abs(),
                d + 1
            );
            log::warn!("{msg}");
            warnings.push(msg);
        }
    }
    let mut xhat = t.eigen.vectors;
    for (j, l) in eigenvalues.iter().enumerate() {
        let s = l.abs().sqrt();
        for i in 0..n {
            xhat[(i, j)] *= s;
        }
    }
    let pos = eigenvalues.iter().filter(|v| **v > 0.0).count();
    Ok(EmbeddingResult {
        xhat,
        signature_observed: (pos, d - pos),
        eigenvalues,
        source,
        warnings,
    })
}

pub fn embed_p(p: &ProbabilityMatrix, d: usize) -> Result<EmbeddingResult> {
    embed(p.p.as_ref(), d, EmbeddingSource::FromP)
}

pub fn embed_a(a: &AdjacencyMatrix, d: usize) -> Result<EmbeddingResult> {
    embed(a.a.as_ref(), d, EmbeddingSource::FromA)
}

/// Eigenvalues of `P / n` against those of `Δ I_{p,q}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub n: usize,
    pub scaled_eigenvalues: Vec<f64>,
    pub limit_eigenvalues: Vec<f64>,
    pub max_gap: f64,
}

/// Eigenvalues of `Δ I_{p,q}`, computed through the symmetric
/// `Δ^{1/2} I_{p,q} Δ^{1/2}`, magnitude descending.
pub fn limit_spectrum(delta: MatRef<'_, f64>, sig: Signature) -> Result<Vec<f64>> {
    let s = linalg::psd_sqrt(delta)?;
    let m = &(&s * sig.ipq()) * &s;
    Ok(linalg::symmetric_eigen(m.as_ref(), EigenOrdering::ByMagnitudeDescending)?.values)
}

/// Compares the leading `d` eigenvalues of `P / n` with the limiting
/// operator spectrum. The sample size is taken from `p`.
pub fn spectrum_convergence(p: &ProbabilityMatrix, dist: &LatentDistribution) -> Result<SpectrumReport> {
    if p.source != ProbabilitySource::IndefiniteGram {
        return Err(GrdpgError::InvalidInput("spectrum check needs P = X I X^T".into()));
    }
    let n = p.n();
    let d = dist.dim().min(n);
    let t = linalg::truncated_eigen(p.p.as_ref(), d)?;
    let scaled: Vec<f64> = t.eigen.values.iter().map(|v| v / n as f64).collect();
    let limit = limit_spectrum(second_moment(dist).delta.as_ref(), dist.signature())?;
    let max_gap = scaled.iter().zip(&limit).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    Ok(SpectrumReport {
        n,
        scaled_eigenvalues: scaled,
        limit_eigenvalues: limit,
        max_gap,
    })
}
