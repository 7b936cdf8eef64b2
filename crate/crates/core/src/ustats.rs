//! U-statistics of embedded rows and the plug-in experiments built on them.

use std::fmt;
use std::sync::Arc;

use faer::{Mat, MatRef};
use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::alignment::{align_columns, limit_alignment};
use crate::embedding::{embed_a, EmbeddingResult};
use crate::error::{GrdpgError, Result};
use crate::io;
use crate::linalg;
use crate::models::LatentDistribution;
use crate::par::{self, pairwise_sum, Execution};
use crate::rng::{self, Stream};
use crate::sampler::{build_p, sample_adjacency, sample_latent, DiagonalMode};

pub type KernelFn = Arc<dyn Fn(&[&[f64]]) -> f64 + Send + Sync>;

/// A symmetric kernel `h: (R^d)^r → R`. Symmetry and a bounded Hessian are
/// the caller's obligation.
#[derive(Clone)]
pub struct UKernel {
    name: String,
    arity: usize,
    eval: KernelFn,
}

impl fmt::Debug for UKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("UKernel").field("name", &self.name).field("arity", &self.arity).finish()
    }
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

impl UKernel {
    pub fn new(name: impl Into<String>, arity: usize, eval: KernelFn) -> Self {
        assert!(arity >= 1, "kernel arity must be at least 1");
        Self { name: name.into(), arity, eval }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn eval(&self, args: &[&[f64]]) -> f64 {
        (self.eval)(args)
    }

    /// `h(x, y) = x^T y`.
    pub fn inner() -> Self {
        Self::new("inner", 2, Arc::new(|a: &[&[f64]]| dot(a[0], a[1])))
    }

    /// `h(x, y) = (x^T y)²`.
    pub fn inner_squared() -> Self {
        Self::new("inner-squared", 2, Arc::new(|a: &[&[f64]]| dot(a[0], a[1]).powi(2)))
    }

    /// `h(x, y) = exp(-‖x − y‖² / σ²)`.
    pub fn radial(sigma: f64) -> Self {
        let s2 = sigma * sigma;
        Self::new(
            format!("radial({sigma})"),
            2,
            Arc::new(move |a: &[&[f64]]| {
                let d2: f64 = a[0].iter().zip(a[1]).map(|(x, y)| (x - y).powi(2)).sum();
                (-d2 / s2).exp()
            }),
        )
    }

    /// `h(x) = x_j`.
    pub fn coord_mean(j: usize) -> Self {
        Self::new(format!("coord-mean({j})"), 1, Arc::new(move |a: &[&[f64]]| a[0][j]))
    }

    /// `h(x) = x_j x_k`.
    pub fn coord_second(j: usize, k: usize) -> Self {
        Self::new(format!("coord-second({j},{k})"), 1, Arc::new(move |a: &[&[f64]]| a[0][j] * a[0][k]))
    }

    pub fn constant(c: f64, arity: usize) -> Self {
        Self::new(format!("constant({c})"), arity, Arc::new(move |_: &[&[f64]]| c))
    }

    /// Coordinates a kernel reads, if it reads only specific ones.
    fn max_coordinate(&self) -> Option<usize> {
        let inner = self.name.strip_prefix("coord-mean(").or_else(|| self.name.strip_prefix("coord-second("))?;
        inner.trim_end_matches(')').split(',').filter_map(|s| s.trim().parse().ok()).max()
    }

    /// Parses `inner`, `inner-squared`, `radial(σ)`, `coord-mean(j)` or
    /// `coord-second(j,k)` (0-based coordinates).
    pub fn parse(spec: &str) -> Result<Self> {
        let s = spec.trim();
        let args = |prefix: &str| -> Option<Vec<String>> {
            let rest = s.strip_prefix(prefix)?.strip_prefix('(')?.strip_suffix(')')?;
            Some(rest.split(',').map(|a| a.trim().to_string()).collect())
        };
        let bad = || GrdpgError::InvalidInput(format!("unknown kernel {spec:?}"));
        match s {
            "inner" => return Ok(Self::inner()),
            "inner-squared" => return Ok(Self::inner_squared()),
            _ => {}
        }
        if let Some(a) = args("radial") {
            let sigma: f64 = a.first().and_then(|v| v.parse().ok()).filter(|v: &f64| *v > 0.0 && a.len() == 1).ok_or_else(bad)?;
            return Ok(Self::radial(sigma));
        }
        if let Some(a) = args("coord-mean") {
            let j = (a.len() == 1).then(|| a[0].parse().ok()).flatten().ok_or_else(bad)?;
            return Ok(Self::coord_mean(j));
        }
        if let Some(a) = args("coord-second") {
            if a.len() != 2 {
                return Err(bad());
            }
            let j = a[0].parse().map_err(|_| bad())?;
            let k = a[1].parse().map_err(|_| bad())?;
            return Ok(Self::coord_second(j, k));
        }
        Err(bad())
    }
}

/// How the `r`-subsets are visited.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum UMode {
    Complete,
    /// `budget` distinct subsets drawn uniformly from the `(seed, Subsample)`
    /// stream.
    Subsampled { budget: usize, seed: u64 },
}

pub const DEFAULT_SUBSAMPLE_BUDGET: usize = 100_000;

impl UMode {
    /// Complete for `r = 1`, `n ≤ 2000` at `r = 2` and `n ≤ 200` at `r = 3`;
    /// subsampled with the default budget otherwise.
    pub fn auto(n: usize, r: usize, seed: u64) -> Self {
        let complete = match r {
            1 => true,
            2 => n <= 2000,
            3 => n <= 200,
            _ => binomial(n, r).is_some_and(|c| c <= DEFAULT_SUBSAMPLE_BUDGET as u128),
        };
        if complete {
            UMode::Complete
        } else {
            UMode::Subsampled { budget: DEFAULT_SUBSAMPLE_BUDGET, seed }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UStatResult {
    pub value: f64,
    pub n: usize,
    pub mode: UMode,
    /// For subsampled runs, the standard deviation of the kernel values over
    /// the drawn subsets divided by `√budget`.
    pub standard_error_estimate: Option<f64>,
}

/// `C(n, r)`, or `None` on overflow.
pub fn binomial(n: usize, r: usize) -> Option<u128> {
    if r > n {
        return Some(0);
    }
    let r = r.min(n - r);
    let mut c: u128 = 1;
    for i in 0..r {
        c = c.checked_mul((n - i) as u128)? / (i as u128 + 1);
    }
    Some(c)
}

/// The `rank`-th `r`-subset of `0..n` in colexicographic order.
fn unrank(mut rank: u128, n: usize, r: usize, out: &mut [usize]) {
    let mut hi = n;
    for slot in (0..r).rev() {
        let k = slot + 1;
        // Largest c < hi with C(c, k) ≤ rank.
        let mut c = hi - 1;
        while binomial(c, k).unwrap() > rank {
            c -= 1;
        }
        out[slot] = c;
        rank -= binomial(c, k).unwrap();
        hi = c;
    }
}

fn rows_of(m: MatRef<'_, f64>) -> Vec<Vec<f64>> {
    linalg::to_rows(m)
}

/// Sum of `h` over all subsets whose smallest index is `first`, in
/// lexicographic order.
fn chunk_sum(kernel: &UKernel, rows: &[Vec<f64>], first: usize) -> f64 {
    let n = rows.len();
    let r = kernel.arity();
    if r == 1 {
        return kernel.eval(&[&rows[first]]);
    }
    let mut idx: Vec<usize> = (0..r).map(|k| first + k).collect();
    if idx[r - 1] >= n {
        return 0.0;
    }
    let mut values = Vec::new();
    let mut args: Vec<&[f64]> = vec![&rows[0]; r];
    loop {
        for (a, &i) in args.iter_mut().zip(&idx) {
            *a = &rows[i];
        }
        values.push(kernel.eval(&args));
        // Advance positions 1..r lexicographically.
        let mut pos = r - 1;
        loop {
            if idx[pos] < n - (r - pos) {
                idx[pos] += 1;
                for q in pos + 1..r {
                    idx[q] = idx[q - 1] + 1;
                }
                break;
            }
            if pos == 1 {
                return pairwise_sum(&values);
            }
            pos -= 1;
        }
    }
}

/// `C(n, r)^{-1} Σ h(rows_{i_1}, …, rows_{i_r})` over all (or a uniform
/// sample of distinct) `r`-subsets.
pub fn u_statistic(kernel: &UKernel, rows: MatRef<'_, f64>, mode: UMode, exec: Execution) -> Result<UStatResult> {
    let n = rows.nrows();
    let r = kernel.arity();
    if n < r {
        return Err(GrdpgError::InsufficientSample { needed: r, got: n });
    }
    if let Some(j) = kernel.max_coordinate() {
        if j >= rows.ncols() {
            return Err(GrdpgError::InvalidDimension(format!(
                "kernel {} reads coordinate {j} of {}-dimensional rows",
                kernel.name(),
                rows.ncols()
            )));
        }
    }
    let total = binomial(n, r).ok_or_else(|| GrdpgError::InvalidInput("too many subsets".into()))?;
    let data = rows_of(rows);
    match mode {
        UMode::Subsampled { budget, seed } if (budget as u128) < total => {
            let len = usize::try_from(total).map_err(|_| GrdpgError::InvalidInput("too many subsets to sample".into()))?;
            if budget == 0 {
                return Err(GrdpgError::InvalidInput("subsample budget must be positive".into()));
            }
            let mut rng = rng::stream(seed, Stream::Subsample);
            let mut ranks = index::sample(&mut rng, len, budget).into_vec();
            ranks.sort_unstable();
            let chunks: Vec<&[usize]> = ranks.chunks(4096).collect();
            let values: Vec<Vec<f64>> = exec.map(&chunks, |chunk| {
                let mut idx = vec![0; r];
                chunk
                    .iter()
                    .map(|&rank| {
                        unrank(rank as u128, n, r, &mut idx);
                        let args: Vec<&[f64]> = idx.iter().map(|&i| data[i].as_slice()).collect();
                        kernel.eval(&args)
                    })
                    .collect()
            });
            let flat: Vec<f64> = values.into_iter().flatten().collect();
            let mean = pairwise_sum(&flat) / budget as f64;
            let var = if budget > 1 {
                flat.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (budget - 1) as f64
            } else {
                0.0
            };
            Ok(UStatResult {
                value: mean,
                n,
                mode,
                standard_error_estimate: Some((var / budget as f64).sqrt()),
            })
        }
        _ => {
            let firsts: Vec<usize> = (0..=n - r).collect();
            let sums = exec.map(&firsts, |&i| chunk_sum(kernel, &data, i));
            Ok(UStatResult {
                value: pairwise_sum(&sums) / total as f64,
                n,
                mode,
                standard_error_estimate: None,
            })
        }
    }
}

/// One `(n, seed)` replicate of the plug-in experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PluginRow {
    pub n: usize,
    pub seed: u64,
    /// `Û_n` on the aligned embedding.
    pub estimate: f64,
    /// `U_n` on the rows of `X Q̃^{-1}`.
    pub oracle: f64,
    /// `√n |Û_n − U_n|`.
    pub scaled_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PluginTable {
    pub kernel: String,
    pub rows: Vec<PluginRow>,
}

impl PluginTable {
    pub fn median_at(&self, n: usize) -> Option<f64> {
        par::median(&self.rows.iter().filter(|r| r.n == n).map(|r| r.scaled_gap).collect::<Vec<_>>())
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W, meta: &[(String, String)]) -> Result<()> {
        let rows = self.rows.iter().map(|r| {
            vec![
                r.n.to_string(),
                r.seed.to_string(),
                io::fmt_f64(r.scaled_gap),
                io::fmt_f64(r.estimate),
                io::fmt_f64(r.oracle),
            ]
        });
        io::write_records(w, meta, &["n", "seed", "value", "estimate", "oracle"], rows)
    }
}

/// `√n |Û_n − U_n|` over a grid of sample sizes and seeds. The embedding is
/// block-orthogonally aligned (diagonal signs in the distinct-eigenvalue
/// case) to `X Q̃^{-1}` before `Û_n` is evaluated; both statistics use the
/// same subsets.
pub fn plugin_consistency(
    kernel: &UKernel,
    dist: &LatentDistribution,
    n_values: &[usize],
    seeds: &[u64],
    exec: Execution,
) -> Result<PluginTable> {
    let limit = limit_alignment(dist)?;
    let sig = dist.signature();
    let row_map = limit.row_map()?;
    let jobs: Vec<(usize, u64)> = n_values.iter().flat_map(|&n| seeds.iter().map(move |&s| (n, s))).collect();
    // Replicates run in parallel; each U-statistic runs sequentially inside.
    let rows = exec.map(&jobs, |&(n, seed)| -> Result<PluginRow> {
        let x = sample_latent(dist, n, seed)?;
        let p = build_p(&x, sig)?;
        let a = sample_adjacency(&p, seed, DiagonalMode::SampledDiagonal);
        let emb = embed_a(&a, sig.dim())?;
        emb.check_signature(sig)?;
        let (xs, _) = emb.signature_ordered();
        let target = &x.x * row_map.transpose();
        let w = align_columns(xs.as_ref(), target.as_ref(), &limit.blocks, sig)?;
        let aligned = &xs * &w;
        let mode = UMode::auto(n, kernel.arity(), seed);
        let estimate = u_statistic(kernel, aligned.as_ref(), mode, Execution::Sequential)?.value;
        let oracle = u_statistic(kernel, target.as_ref(), mode, Execution::Sequential)?.value;
        Ok(PluginRow {
            n,
            seed,
            estimate,
            oracle,
            scaled_gap: (n as f64).sqrt() * (estimate - oracle).abs(),
        })
    });
    Ok(PluginTable {
        kernel: kernel.name().to_string(),
        rows: rows.into_iter().collect::<Result<_>>()?,
    })
}

/// `|U(X̂) − U(Ŷ)|` for two embeddings of equal dimension and signature.
/// Both are taken in signature order. No calibration is attempted.
pub fn two_graph_moment_statistic(
    a: &EmbeddingResult,
    b: &EmbeddingResult,
    kernel: &UKernel,
    mode_a: UMode,
    mode_b: UMode,
) -> Result<f64> {
    if a.dim() != b.dim() || a.signature_observed != b.signature_observed {
        return Err(GrdpgError::IncompatibleEmbeddings(format!(
            "dimension {} signature {:?} versus dimension {} signature {:?}",
            a.dim(),
            a.signature_observed,
            b.dim(),
            b.signature_observed
        )));
    }
    let (xa, _) = a.signature_ordered();
    let (xb, _) = b.signature_ordered();
    let ua = u_statistic(kernel, xa.as_ref(), mode_a, Execution::Sequential)?.value;
    let ub = u_statistic(kernel, xb.as_ref(), mode_b, Execution::Sequential)?.value;
    Ok((ua - ub).abs())
}

/// Adjacency embedding of one draw from `dist` with `n` vertices.
pub fn sample_embedding(dist: &LatentDistribution, n: usize, seed: u64) -> Result<EmbeddingResult> {
    let sig = dist.signature();
    let x = sample_latent(dist, n, seed)?;
    let p = build_p(&x, sig)?;
    let a = sample_adjacency(&p, seed, DiagonalMode::SampledDiagonal);
    embed_a(&a, sig.dim())
}

/// Rows as a matrix; convenience for tests and callers holding vectors.
pub fn rows_matrix(rows: &[Vec<f64>]) -> Result<Mat<f64>> {
    linalg::from_rows(rows)
}
