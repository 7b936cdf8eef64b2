//! Latent position draws, probability matrices and Bernoulli adjacency
//! matrices.

use faer::Mat;
use rand::{Rng, RngCore};

use crate::error::{GrdpgError, Result};
use crate::io;
use crate::linalg::Signature;
use crate::models::{LatentDistribution, VALIDITY_SLACK};
use crate::rng::{self, Stream};

/// Earlier draws each generic sample is checked against.
const GENERIC_PAIR_CHECKS: usize = 8;

/// `n` latent positions, one per row.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentSample {
    pub x: Mat<f64>,
    /// Block label per row (mixtures only).
    pub assignments: Option<Vec<usize>>,
    pub seed: Option<u64>,
}

impl LatentSample {
    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    /// Number of rows in each of `k` blocks.
    pub fn block_counts(&self, k: usize) -> Option<Vec<usize>> {
        self.assignments.as_ref().map(|a| {
            let mut counts = vec![0; k];
            for &b in a {
                counts[b] += 1;
            }
            counts
        })
    }

    /// The `n x K` membership matrix `Θ_ij = 1` iff row `i` is in block `j`.
    pub fn membership_matrix(&self, k: usize) -> Option<Mat<f64>> {
        self.assignments
            .as_ref()
            .map(|a| Mat::from_fn(a.len(), k, |i, j| if a[i] == j { 1.0 } else { 0.0 }))
    }
}

/// Draws `n` iid latent positions from the stream `(seed, Latent)`.
pub fn sample_latent(dist: &LatentDistribution, n: usize, seed: u64) -> Result<LatentSample> {
    let mut rng = rng::stream(seed, Stream::Latent);
    let mut sample = sample_latent_with(dist, n, &mut rng)?;
    sample.seed = Some(seed);
    Ok(sample)
}

/// Like [`sample_latent`] with a caller-owned generator.
///
/// Draws from a generic law are checked against a few random earlier draws;
/// an out-of-range inner product aborts with an invalid-model error.
pub fn sample_latent_with(dist: &LatentDistribution, n: usize, rng: &mut dyn RngCore) -> Result<LatentSample> {
    if n == 0 {
        return Err(GrdpgError::InvalidDimension("sample size must be at least 1".into()));
    }
    let d = dist.dim();
    let sig = dist.signature();
    let mut x = Mat::<f64>::zeros(n, d);
    let mut labels = Vec::with_capacity(n);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for i in 0..n {
        let (v, label) = dist.draw(rng);
        if v.len() != d {
            return Err(GrdpgError::InvalidDimension(format!(
                "sampler returned a vector of length {}, expected {d}",
                v.len()
            )));
        }
        if let LatentDistribution::Generic(_) = dist {
            let checks = std::iter::once(None)
                .chain((0..GENERIC_PAIR_CHECKS.min(i)).map(|_| Some(rng.random_range(0..i))));
            for other in checks {
                let w = other.map_or(&v, |j| &rows[j]);
                let val = sig.inner(&v, w);
                if !(-VALIDITY_SLACK..=1.0 + VALIDITY_SLACK).contains(&val) {
                    return Err(GrdpgError::InvalidModel(format!(
                        "draw {i} has inner product {val} with draw {} (outside [0, 1])",
                        other.unwrap_or(i)
                    )));
                }
            }
            rows.push(v.clone());
        }
        for (j, vj) in v.iter().enumerate() {
            x[(i, j)] = *vj;
        }
        if let Some(l) = label {
            labels.push(l);
        }
    }
    Ok(LatentSample {
        x,
        assignments: (labels.len() == n).then_some(labels),
        seed: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbabilitySource {
    IndefiniteGram,
    GenericKernel,
}

/// Symmetric edge probability matrix.
#[derive(Debug, Clone)]
pub struct ProbabilityMatrix {
    pub p: Mat<f64>,
    pub source: ProbabilitySource,
}

impl ProbabilityMatrix {
    pub fn n(&self) -> usize {
        self.p.nrows()
    }
}

/// `P = X I_{p,q} X^T`, entries clamped to `[0, 1]` after checking that
/// none leaves it by more than the validity slack.
pub fn build_p(x: &LatentSample, sig: Signature) -> Result<ProbabilityMatrix> {
    if x.dim() != sig.dim() {
        return Err(GrdpgError::InvalidDimension(format!(
            "latent dimension {} does not match signature {sig}",
            x.dim()
        )));
    }
    let signs = sig.signs();
    let xi = Mat::from_fn(x.n(), x.dim(), |i, j| x.x[(i, j)] * signs[j]);
    let mut p = &xi * x.x.transpose();
    let n = x.n();
    for j in 0..n {
        for i in 0..=j {
            let v = p[(i, j)];
            if !(-VALIDITY_SLACK..=1.0 + VALIDITY_SLACK).contains(&v) {
                return Err(GrdpgError::InvalidModel(format!(
                    "P[{i}][{j}] = {v} is outside [0, 1]"
                )));
            }
            let v = v.clamp(0.0, 1.0);
            p[(i, j)] = v;
            p[(j, i)] = v;
        }
    }
    Ok(ProbabilityMatrix {
        p,
        source: ProbabilitySource::IndefiniteGram,
    })
}

/// `P_ij = κ(X_i, X_j)` for a symmetric kernel with values in `[0, 1]`.
/// Only `i ≤ j` is evaluated; the lower triangle is mirrored.
pub fn build_p_kernel<K>(x: &LatentSample, kernel: K) -> Result<ProbabilityMatrix>
where
    K: Fn(&[f64], &[f64]) -> f64,
{
    let n = x.n();
    let rows: Vec<Vec<f64>> = (0..n).map(|i| crate::linalg::row(x.x.as_ref(), i)).collect();
    let mut p = Mat::<f64>::zeros(n, n);
    for j in 0..n {
        for i in 0..=j {
            let v = kernel(&rows[i], &rows[j]);
            if !(v.is_finite() && (-VALIDITY_SLACK..=1.0 + VALIDITY_SLACK).contains(&v)) {
                return Err(GrdpgError::InvalidKernel {
                    row: i,
                    col: j,
                    value: v,
                });
            }
            let v = v.clamp(0.0, 1.0);
            p[(i, j)] = v;
            p[(j, i)] = v;
        }
    }
    Ok(ProbabilityMatrix {
        p,
        source: ProbabilitySource::GenericKernel,
    })
}

/// `κ(x, y) = exp(-||x - y||² / σ²)`.
pub fn gaussian_kernel(sigma: f64) -> impl Fn(&[f64], &[f64]) -> f64 + Send + Sync {
    let s2 = sigma * sigma;
    move |x: &[f64], y: &[f64]| {
        let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum();
        (-d2 / s2).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DiagonalMode {
    /// `A_ii ~ Bernoulli(P_ii)`, as in the model definition (`i ≤ j`).
    #[default]
    SampledDiagonal,
    /// `A_ii = 0`.
    Hollow,
}

/// Symmetric 0/1 adjacency matrix, stored densely as `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencyMatrix {
    pub a: Mat<f64>,
    pub diagonal_mode: DiagonalMode,
    pub seed: Option<u64>,
}

impl AdjacencyMatrix {
    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    /// Fraction of present edges among the `n(n-1)/2` off-diagonal pairs.
    pub fn edge_density(&self) -> f64 {
        let n = self.n();
        if n < 2 {
            return 0.0;
        }
        let mut edges = 0.0;
        for j in 0..n {
            for i in 0..j {
                edges += self.a[(i, j)];
            }
        }
        edges / (n * (n - 1) / 2) as f64
    }
}

/// Independent `Bernoulli(P_ij)` for `i < j` (and the diagonal per `mode`),
/// mirrored, from the stream `(seed, Adjacency)`.
pub fn sample_adjacency(p: &ProbabilityMatrix, seed: u64, mode: DiagonalMode) -> AdjacencyMatrix {
    let mut rng = rng::stream(seed, Stream::Adjacency);
    let mut a = sample_adjacency_with(p, &mut rng, mode);
    a.seed = Some(seed);
    a
}

pub fn sample_adjacency_with(p: &ProbabilityMatrix, rng: &mut dyn RngCore, mode: DiagonalMode) -> AdjacencyMatrix {
    let n = p.n();
    let mut a = Mat::<f64>::zeros(n, n);
    for j in 0..n {
        for i in 0..=j {
            if i == j && mode == DiagonalMode::Hollow {
                continue;
            }
            let draw: f64 = rng.random();
            if draw < p.p[(i, j)] {
                a[(i, j)] = 1.0;
                a[(j, i)] = 1.0;
            }
        }
    }
    AdjacencyMatrix {
        a,
        diagonal_mode: mode,
        seed: None,
    }
}

/// Writes `X` as CSV: metadata `n`, `d`, `signature`, `seed`, then one row
/// per vertex (`block` column first when assignments are known).
pub fn write_latent_csv<W: std::io::Write>(w: W, x: &LatentSample, sig: Signature) -> Result<()> {
    let meta = io::meta([
        ("kind", "latent".to_string()),
        ("n", x.n().to_string()),
        ("d", x.dim().to_string()),
        ("signature", sig.to_string()),
        ("seed", x.seed.map_or("none".into(), |s| s.to_string())),
    ]);
    let header: Vec<String> = (0..x.dim()).map(|j| format!("x{j}")).collect();
    let leading = x.assignments.as_deref().map(|a| ("block", a));
    io::write_matrix(w, &meta, &header, x.x.as_ref(), leading)
}

pub fn read_latent_csv<R: std::io::Read>(r: R) -> Result<LatentSample> {
    let content = io::read_csv(r)?;
    let has_block = content.column("block") == Some(0);
    let x = content.matrix_from(usize::from(has_block))?;
    let assignments = if has_block {
        Some(
            content
                .records
                .iter()
                .map(|rec| rec[0].parse().map_err(|_| GrdpgError::InvalidInput(format!("bad block label {:?}", rec[0]))))
                .collect::<Result<Vec<usize>>>()?,
        )
    } else {
        None
    };
    let seed = content.meta_value("seed").and_then(|s| s.parse().ok());
    Ok(LatentSample { x, assignments, seed })
}

/// Writes `A` as an `n x n` CSV with metadata `n`, `d`, `signature`, `seed`
/// and the diagonal mode.
pub fn write_adjacency_csv<W: std::io::Write>(w: W, a: &AdjacencyMatrix, sig: Signature) -> Result<()> {
    let meta = io::meta([
        ("kind", "adjacency".to_string()),
        ("n", a.n().to_string()),
        ("d", sig.dim().to_string()),
        ("signature", sig.to_string()),
        ("seed", a.seed.map_or("none".into(), |s| s.to_string())),
        ("diagonal", format!("{:?}", a.diagonal_mode)),
    ]);
    let header: Vec<String> = (0..a.n()).map(|j| format!("v{j}")).collect();
    let rows = (0..a.n()).map(|i| (0..a.n()).map(|j| (a.a[(i, j)] as u8).to_string()).collect());
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    io::write_records(w, &meta, &header, rows)
}

pub fn read_adjacency_csv<R: std::io::Read>(r: R) -> Result<AdjacencyMatrix> {
    let content = io::read_csv(r)?;
    let a = content.matrix_from(0)?;
    if a.nrows() != a.ncols() {
        return Err(GrdpgError::InvalidDimension(format!("adjacency is {}x{}", a.nrows(), a.ncols())));
    }
    let diagonal_mode = match content.meta_value("diagonal") {
        Some("Hollow") => DiagonalMode::Hollow,
        _ => DiagonalMode::SampledDiagonal,
    };
    let seed = content.meta_value("seed").and_then(|s| s.parse().ok());
    Ok(AdjacencyMatrix { a, diagonal_mode, seed })
}
