//! The six experiments. Replicates are computed with `Execution::map`
//! (order preserving); every file is then written once, from this thread.

use std::fmt::Write as _;

use faer::Mat;
use grdpg::alignment::{block_align, compute_qx, convergence_trace, limit_alignment, LimitAlignment, TrendSummary};
use grdpg::asymptotics::{
    elementwise_median, empirical_block_covariance, render_table, theoretical_block_covariances, CovarianceReport,
};
use grdpg::embedding::{embed_a, spectrum_convergence, EmbeddingResult, SpectrumReport};
use grdpg::error::GrdpgError;
use grdpg::io::{self as gio, fmt_f64, Meta, SeriesKind, SvgPlot};
use grdpg::linalg::{inverse, max_abs_diff, serde_mat, Signature};
use grdpg::models::{LatentDistribution, MixtureDistribution};
use grdpg::par::{median, Execution};
use grdpg::rng::replicate_seeds;
use grdpg::sampler::{build_p, sample_adjacency, sample_latent, DiagonalMode, LatentSample};
use grdpg::ustats::{plugin_consistency, two_graph_moment_statistic, PluginTable, UKernel, UMode};
use serde::Serialize;

use crate::config::{Emit, Experiment, ExperimentConfig};
use crate::manifest::{Derived, RunManifest};
use crate::{CliError, RunOutcome};

/// Collects output files so that each is written exactly once.
struct Outputs<'a> {
    cfg: &'a ExperimentConfig,
    meta: Meta,
    model_hash: &'a str,
    written: Vec<String>,
    summary: Vec<String>,
}

impl<'a> Outputs<'a> {
    fn new(cfg: &'a ExperimentConfig, model_hash: &'a str) -> Self {
        let seeds: Vec<String> = cfg.seeds.iter().map(u64::to_string).collect();
        let meta = gio::meta([
            ("tool", format!("{} {}", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION"))),
            ("experiment", cfg.experiment.name().to_string()),
            ("model_hash", model_hash.to_string()),
            ("seeds", seeds.join(";")),
        ]);
        Self {
            cfg,
            meta,
            model_hash,
            written: Vec::new(),
            summary: Vec::new(),
        }
    }

    fn put(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.cfg.output_dir.join(name);
        std::fs::write(&path, bytes).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        self.written.push(name.to_string());
        Ok(())
    }

    fn csv(&mut self, name: &str, header: &[&str], rows: Vec<Vec<String>>) -> Result<(), CliError> {
        if !self.cfg.emits(Emit::Csv) {
            return Ok(());
        }
        let mut buf = Vec::new();
        gio::write_records(&mut buf, &self.meta, header, rows)?;
        self.put(name, &buf)
    }

    fn csv_with(
        &mut self,
        name: &str,
        f: impl FnOnce(&mut Vec<u8>, &Meta) -> grdpg::error::Result<()>,
    ) -> Result<(), CliError> {
        if !self.cfg.emits(Emit::Csv) {
            return Ok(());
        }
        let mut buf = Vec::new();
        f(&mut buf, &self.meta)?;
        self.put(name, &buf)
    }

    /// JSON documents carry the model hash and seeds next to the payload.
    fn json<T: Serialize>(&mut self, name: &str, payload: &T) -> Result<(), CliError> {
        if !self.cfg.emits(Emit::Json) {
            return Ok(());
        }
        #[derive(Serialize)]
        struct Doc<'b, T> {
            experiment: &'b str,
            model_hash: &'b str,
            seeds: &'b [u64],
            result: &'b T,
        }
        let doc = Doc {
            experiment: self.cfg.experiment.name(),
            model_hash: self.model_hash,
            seeds: &self.cfg.seeds,
            result: payload,
        };
        let mut text = serde_json::to_string_pretty(&doc).map_err(|e| CliError::Io(e.to_string()))?;
        text.push('\n');
        self.put(name, text.as_bytes())
    }

    fn svg(&mut self, name: &str, svg: String) -> Result<(), CliError> {
        if !self.cfg.emits(Emit::Svg) {
            return Ok(());
        }
        self.put(name, svg.as_bytes())
    }

    fn table(&mut self, name: &str, text: String) -> Result<(), CliError> {
        if !self.cfg.emits(Emit::Table) {
            return Ok(());
        }
        self.summary.push(text.trim_end().to_string());
        self.put(name, text.as_bytes())
    }
}

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    model: &'a MixtureDistribution,
    alternative: Option<&'a MixtureDistribution>,
    dist: LatentDistribution,
    limit: &'a LimitAlignment,
    exec: Execution,
}

impl Ctx<'_> {
    fn sig(&self) -> Signature {
        self.model.signature()
    }

    fn jobs(&self) -> Vec<(usize, u64)> {
        self.cfg
            .n_values
            .iter()
            .flat_map(|&n| self.cfg.seeds.iter().map(move |&s| (n, s)))
            .collect()
    }
}

/// Latent draw and adjacency embedding for one replicate; aborts on a
/// signature mismatch.
fn draw_embedding(
    dist: &LatentDistribution,
    n: usize,
    seed: u64,
    mode: DiagonalMode,
) -> grdpg::error::Result<(LatentSample, EmbeddingResult)> {
    let sig = dist.signature();
    let x = sample_latent(dist, n, seed)?;
    let a = {
        let p = build_p(&x, sig)?;
        sample_adjacency(&p, seed, mode)
    };
    let emb = embed_a(&a, sig.dim())?;
    emb.check_signature(sig)?;
    Ok((x, emb))
}

fn collect<T>(results: Vec<grdpg::error::Result<T>>) -> Result<Vec<T>, CliError> {
    results.into_iter().collect::<grdpg::error::Result<Vec<T>>>().map_err(CliError::from)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or(String::new(), fmt_f64)
}

pub fn run(manifest: &mut RunManifest) -> Result<RunOutcome, CliError> {
    let mut cfg = manifest.config.clone();
    let (model, alternative) = manifest.stage("model", || cfg.build_models())?;
    manifest.config = cfg.clone();
    let dist = LatentDistribution::from(model.clone());
    let limit = manifest.stage("limit", || limit_alignment(&dist).map_err(CliError::from))?;
    manifest.derived = Some(Derived {
        signature: [limit.signature.p(), limit.signature.q()],
        delta: model.delta(),
        q_tilde: limit.q_tilde.clone(),
        limit_eigenvalues: limit.eigenvalues.clone(),
        repeated_eigenvalues: limit.has_repeated_eigenvalues(),
    });
    manifest.write()?;

    let exec = if cfg.parallel { Execution::default() } else { Execution::Sequential };
    let ctx = Ctx {
        cfg: &cfg,
        model: &model,
        alternative: alternative.as_ref(),
        dist,
        limit: &limit,
        exec,
    };
    let hash = manifest.model_hash.clone();
    let mut out = Outputs::new(&cfg, &hash);
    match cfg.experiment {
        Experiment::Covtable => covtable(&ctx, manifest, &mut out)?,
        Experiment::QxConvergence => qx_convergence(&ctx, manifest, &mut out)?,
        Experiment::Figure1 => figure1(&ctx, manifest, &mut out)?,
        Experiment::Ustat => ustat(&ctx, manifest, &mut out)?,
        Experiment::Twograph => twograph(&ctx, manifest, &mut out)?,
        Experiment::Spectrum => spectrum(&ctx, manifest, &mut out)?,
    }
    manifest.outputs = out.written.clone();
    Ok(RunOutcome {
        output_dir: cfg.output_dir.clone(),
        outputs: out.written,
        summary: out.summary,
    })
}

#[derive(Serialize)]
struct CovColumn {
    n: usize,
    #[serde(with = "serde_mat::vec")]
    median: Vec<Mat<f64>>,
    max_abs_gap: Vec<f64>,
}

#[derive(Serialize)]
struct CovtableDoc<'a> {
    #[serde(with = "serde_mat::vec")]
    theoretical: Vec<Mat<f64>>,
    columns: &'a [CovColumn],
    replicates: &'a [CovarianceReport],
}

fn covtable(ctx: &Ctx<'_>, manifest: &mut RunManifest, out: &mut Outputs<'_>) -> Result<(), CliError> {
    let model = ctx.model;
    let theoretical = theoretical_block_covariances(model)?;
    let mode = ctx.cfg.diagonal_mode();
    let jobs = ctx.jobs();
    let reports = manifest.stage("replicates", || {
        collect(ctx.exec.map(&jobs, |&(n, seed)| {
            let (x, emb) = draw_embedding(&ctx.dist, n, seed, mode)?;
            let assignments = x.assignments.as_deref().expect("mixture draws carry assignments");
            empirical_block_covariance(&emb, assignments, model, Some(seed))
        }))
    })?;

    manifest.stage("write", || {
        let mut columns = Vec::new();
        for &n in &ctx.cfg.n_values {
            let aligned: Vec<Vec<Mat<f64>>> =
                reports.iter().filter(|r| r.n == n).map(CovarianceReport::aligned_empirical).collect();
            let med = elementwise_median(&aligned).expect("at least one replicate");
            let gaps = med.iter().zip(&theoretical).map(|(m, t)| max_abs_diff(m.as_ref(), t.as_ref())).collect();
            columns.push(CovColumn { n, median: med, max_abs_gap: gaps });
        }

        let mut rows = Vec::new();
        for r in &reports {
            for (k, m) in r.aligned_empirical().iter().enumerate() {
                push_matrix_rows(&mut rows, &[r.n.to_string(), r.seed.unwrap_or_default().to_string()], k, m, &theoretical[k]);
            }
        }
        out.csv("covtable.csv", &["n", "seed", "block", "row", "col", "value", "theoretical"], rows)?;

        let mut rows = Vec::new();
        for c in &columns {
            for (k, m) in c.median.iter().enumerate() {
                push_matrix_rows(&mut rows, &[c.n.to_string()], k, m, &theoretical[k]);
            }
        }
        out.csv("covtable_summary.csv", &["n", "block", "row", "col", "median", "theoretical"], rows)?;

        out.json(
            "covtable.json",
            &CovtableDoc {
                theoretical: theoretical.clone(),
                columns: &columns,
                replicates: &reports,
            },
        )?;

        let mut table_cols: Vec<(String, Vec<Mat<f64>>)> =
            columns.iter().map(|c| (format!("n = {}", c.n), c.median.clone())).collect();
        table_cols.push(("limit".to_string(), theoretical.clone()));
        let mut text = format!(
            "n × block covariances: median over {} replicates after sign alignment\n\n",
            ctx.cfg.seeds.len()
        );
        text.push_str(&render_table(&table_cols));
        for c in &columns {
            let worst = c.max_abs_gap.iter().copied().fold(0.0, f64::max);
            let _ = writeln!(text, "n = {}: max |median - limit| = {worst:.4}", c.n);
        }
        out.table("covtable.txt", text)?;

        for c in &columns {
            let worst = c.max_abs_gap.iter().copied().fold(0.0, f64::max);
            out.summary.push(format!("covtable n={} max_abs_gap={worst:.6}", c.n));
        }
        Ok(())
    })
}

fn push_matrix_rows(rows: &mut Vec<Vec<String>>, lead: &[String], k: usize, m: &Mat<f64>, t: &Mat<f64>) {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            let mut r = lead.to_vec();
            r.extend([k.to_string(), i.to_string(), j.to_string(), fmt_f64(m[(i, j)]), fmt_f64(t[(i, j)])]);
            rows.push(r);
        }
    }
}

#[derive(Serialize)]
struct ConvergenceDoc<'a> {
    n_values: &'a [usize],
    distances: &'a [Vec<Option<f64>>],
    trend: &'a TrendSummary,
}

fn qx_convergence(ctx: &Ctx<'_>, manifest: &mut RunManifest, out: &mut Outputs<'_>) -> Result<(), CliError> {
    let trace = manifest.stage("replicates", || {
        convergence_trace(&ctx.dist, &ctx.cfg.n_values, &ctx.cfg.seeds, ctx.exec).map_err(CliError::from)
    })?;
    manifest.stage("write", || {
        let trend = trace.trend();
        out.csv_with("qx_convergence.csv", |w, meta| trace.write_csv(w, meta))?;
        out.svg("qx_convergence.svg", trace.svg("aligned distance of Q_X to its limit"))?;
        out.json(
            "qx_convergence.json",
            &ConvergenceDoc {
                n_values: &trace.n_values,
                distances: &trace.distances,
                trend: &trend,
            },
        )?;
        let mut text = String::from("n        median distance   degenerate\n");
        for (i, n) in trace.n_values.iter().enumerate() {
            let degenerate = trace.distances[i].iter().filter(|d| d.is_none()).count();
            let m = trend.medians[i].map_or("-".to_string(), |v| format!("{v:.6e}"));
            let _ = writeln!(text, "{n:<8} {m:<17} {degenerate}");
        }
        let _ = writeln!(
            text,
            "monotone decreasing: {}; first/last median ratio: {}",
            trend.monotone_decreasing,
            trend.first_to_last_ratio.map_or("-".to_string(), |r| format!("{r:.3}"))
        );
        out.table("qx_convergence.txt", text)?;
        out.summary.push(format!(
            "qx-convergence monotone={} ratio={}",
            trend.monotone_decreasing,
            trend.first_to_last_ratio.map_or("-".to_string(), |r| format!("{r:.4}"))
        ));
        Ok(())
    })
}

/// Mapped centers of one sample, aligned to the limit.
#[derive(Debug, Clone, Serialize)]
struct FigureSample {
    n: usize,
    seed: u64,
    counts: Vec<usize>,
    /// `None` when `X^T X` is singular (e.g. a block got no rows).
    centers: Option<Vec<Vec<f64>>>,
    distance: Option<f64>,
}

#[derive(Serialize)]
struct FigureDoc<'a> {
    #[serde(with = "serde_mat")]
    q_tilde: Mat<f64>,
    centers: &'a [Vec<f64>],
    limit_centers: &'a [Vec<f64>],
    /// `max |<Q̃^{-T}ν_k, Q̃^{-T}ν_l>_{p,q} - <ν_k, ν_l>_{p,q}|`.
    inner_product_gap: f64,
    /// `(k, l, |ν_k - ν_l|, |Q̃^{-T}ν_k - Q̃^{-T}ν_l|)`.
    euclidean_distances: Vec<(usize, usize, f64, f64)>,
    median_distance: Vec<(usize, Option<f64>)>,
    samples: &'a [FigureSample],
}

fn map_centers(m: &Mat<f64>, centers: &[Vec<f64>]) -> Vec<Vec<f64>> {
    centers
        .iter()
        .map(|c| (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)] * c[j]).sum()).collect())
        .collect()
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn figure1(ctx: &Ctx<'_>, manifest: &mut RunManifest, out: &mut Outputs<'_>) -> Result<(), CliError> {
    let sig = ctx.sig();
    let d = sig.dim();
    let limit = ctx.limit;
    let centers = ctx.model.centers().to_vec();
    let k = centers.len();
    let limit_centers = map_centers(&limit.row_map()?, &centers);

    let jobs = ctx.jobs();
    let samples = manifest.stage("replicates", || {
        collect(ctx.exec.map(&jobs, |&(n, seed)| -> grdpg::error::Result<FigureSample> {
            let x = sample_latent(&ctx.dist, n, seed)?;
            let counts = x.block_counts(k).expect("mixture draws carry assignments");
            let q_x = match compute_qx(x.x.as_ref(), sig) {
                Ok(q) => q,
                Err(GrdpgError::DegenerateSample(_)) => {
                    return Ok(FigureSample { n, seed, counts, centers: None, distance: None })
                }
                Err(e) => return Err(e),
            };
            let w = block_align(q_x.as_ref(), limit.q_tilde.as_ref(), &limit.blocks, sig)?.w;
            // (W Q_X)^{-T} ν: the sample analogue of Q̃^{-T} ν.
            let map = inverse((&w * &q_x).as_ref())?.transpose().to_owned();
            let mapped = map_centers(&map, &centers);
            let distance = mapped.iter().zip(&limit_centers).map(|(a, b)| euclid(a, b)).fold(0.0, f64::max);
            Ok(FigureSample { n, seed, counts, centers: Some(mapped), distance: Some(distance) })
        }))
    })?;

    manifest.stage("write", || {
        let mut ip_gap = 0.0_f64;
        let mut distances = Vec::new();
        for a in 0..k {
            for b in 0..k {
                let orig = sig.inner(&centers[a], &centers[b]);
                ip_gap = ip_gap.max((sig.inner(&limit_centers[a], &limit_centers[b]) - orig).abs());
                if a < b {
                    distances.push((a, b, euclid(&centers[a], &centers[b]), euclid(&limit_centers[a], &limit_centers[b])));
                }
            }
        }
        let medians: Vec<(usize, Option<f64>)> = ctx
            .cfg
            .n_values
            .iter()
            .map(|&n| {
                let ds: Vec<f64> = samples.iter().filter(|s| s.n == n).filter_map(|s| s.distance).collect();
                (n, median(&ds))
            })
            .collect();

        let coord_names: Vec<String> = (0..d).map(|j| format!("x{j}")).collect();
        let mut header = vec!["set", "n", "seed", "block", "count"];
        header.extend(coord_names.iter().map(String::as_str));
        let mut rows = Vec::new();
        let mut push = |set: &str, n: String, seed: String, b: usize, count: String, c: &[f64]| {
            let mut r = vec![set.to_string(), n, seed, b.to_string(), count];
            r.extend(c.iter().map(|v| fmt_f64(*v)));
            rows.push(r);
        };
        for (b, c) in centers.iter().enumerate() {
            push("original", String::new(), String::new(), b, String::new(), c);
        }
        for (b, c) in limit_centers.iter().enumerate() {
            push("limit", String::new(), String::new(), b, String::new(), c);
        }
        for s in &samples {
            if let Some(mapped) = &s.centers {
                for (b, c) in mapped.iter().enumerate() {
                    push("sample", s.n.to_string(), s.seed.to_string(), b, s.counts[b].to_string(), c);
                }
            }
        }
        out.csv("figure1.csv", &header, rows)?;
        let rows = samples
            .iter()
            .map(|s| vec![s.n.to_string(), s.seed.to_string(), fmt_opt(s.distance)])
            .collect();
        out.csv("figure1_distances.csv", &["n", "seed", "distance"], rows)?;

        let xy = |c: &[f64]| (c[0], c.get(1).copied().unwrap_or(0.0));
        let mut plot = SvgPlot::new("mapped block centers", "coordinate 1", "coordinate 2");
        for &n in &ctx.cfg.n_values {
            let pts: Vec<(f64, f64)> = samples
                .iter()
                .filter(|s| s.n == n)
                .filter_map(|s| s.centers.as_ref())
                .flat_map(|cs| cs.iter().map(|c| xy(c)))
                .collect();
            plot = plot.with_series(format!("Q_X, n = {n}"), SeriesKind::Scatter, pts);
        }
        plot = plot
            .with_series("original", SeriesKind::Scatter, centers.iter().map(|c| xy(c)).collect())
            .with_series("limit", SeriesKind::Scatter, limit_centers.iter().map(|c| xy(c)).collect());
        out.svg("figure1.svg", plot.render())?;

        out.json(
            "figure1.json",
            &FigureDoc {
                q_tilde: limit.q_tilde.clone(),
                centers: &centers,
                limit_centers: &limit_centers,
                inner_product_gap: ip_gap,
                euclidean_distances: distances.clone(),
                median_distance: medians.clone(),
                samples: &samples,
            },
        )?;

        let mut text = String::new();
        let _ = writeln!(text, "indefinite inner products preserved to {ip_gap:.3e}");
        for (a, b, before, after) in &distances {
            let _ = writeln!(text, "|nu_{a} - nu_{b}|: {before:.6} -> {after:.6}");
        }
        for (n, m) in &medians {
            let _ = writeln!(text, "n = {n}: median max center distance to limit = {}", m.map_or("-".into(), |v| format!("{v:.6e}")));
        }
        out.table("figure1.txt", text)?;
        out.summary.push(format!("figure1 inner_product_gap={ip_gap:.3e}"));
        Ok(())
    })
}

#[derive(Serialize)]
struct UstatDoc<'a> {
    table: &'a PluginTable,
    medians: Vec<(usize, Option<f64>)>,
}

fn ustat(ctx: &Ctx<'_>, manifest: &mut RunManifest, out: &mut Outputs<'_>) -> Result<(), CliError> {
    let spec = ctx.cfg.kernel.as_deref().expect("ustat has a kernel");
    let kernel = UKernel::parse(spec)?;
    let table = manifest.stage("replicates", || {
        plugin_consistency(&kernel, &ctx.dist, &ctx.cfg.n_values, &ctx.cfg.seeds, ctx.exec).map_err(CliError::from)
    })?;
    manifest.stage("write", || {
        let medians: Vec<(usize, Option<f64>)> = ctx.cfg.n_values.iter().map(|&n| (n, table.median_at(n))).collect();
        out.csv_with("ustat.csv", |w, meta| table.write_csv(w, meta))?;
        let rows = medians.iter().map(|(n, m)| vec![n.to_string(), fmt_opt(*m)]).collect();
        out.csv("ustat_summary.csv", &["n", "median"], rows)?;
        let pts = table.rows.iter().map(|r| (r.n as f64, r.scaled_gap)).filter(|p| p.1 > 0.0).collect();
        let med_pts = medians.iter().filter_map(|(n, m)| m.map(|v| (*n as f64, v))).filter(|p| p.1 > 0.0).collect();
        let plot = SvgPlot::new(format!("plug-in gap, kernel {spec}"), "n", "sqrt(n) |U_hat - U|")
            .log_log()
            .with_series("replicates", SeriesKind::Scatter, pts)
            .with_series("median", SeriesKind::Line, med_pts);
        out.svg("ustat.svg", plot.render())?;
        out.json("ustat.json", &UstatDoc { table: &table, medians: medians.clone() })?;
        let mut text = format!("kernel {spec}: median sqrt(n)|U_hat - U|\n");
        for (n, m) in &medians {
            let _ = writeln!(text, "n = {n}: {}", m.map_or("-".into(), |v| format!("{v:.6e}")));
        }
        out.table("ustat.txt", text)?;
        for (n, m) in &medians {
            out.summary.push(format!("ustat n={n} median={}", fmt_opt(*m)));
        }
        Ok(())
    })
}

#[derive(Debug, Clone, Serialize)]
struct TwoGraphRow {
    n: usize,
    seed: u64,
    seed_b: u64,
    value: f64,
}

#[derive(Serialize)]
struct TwoGraphDoc<'a> {
    kernel: &'a str,
    same_model: bool,
    rows: &'a [TwoGraphRow],
    medians: Vec<(usize, Option<f64>)>,
}

fn twograph(ctx: &Ctx<'_>, manifest: &mut RunManifest, out: &mut Outputs<'_>) -> Result<(), CliError> {
    let spec = ctx.cfg.kernel.as_deref().expect("twograph has a kernel");
    let kernel = UKernel::parse(spec)?;
    let same_model = ctx.alternative.is_none();
    let other = LatentDistribution::from(ctx.alternative.unwrap_or(ctx.model).clone());
    let mode = ctx.cfg.diagonal_mode();
    let r = kernel.arity();
    let jobs = ctx.jobs();
    let rows = manifest.stage("replicates", || {
        collect(ctx.exec.map(&jobs, |&(n, seed)| -> grdpg::error::Result<TwoGraphRow> {
            let seed_b = replicate_seeds(seed, 1)[0];
            let (_, a) = draw_embedding(&ctx.dist, n, seed, mode)?;
            let (_, b) = draw_embedding(&other, n, seed_b, mode)?;
            let value = two_graph_moment_statistic(&a, &b, &kernel, UMode::auto(n, r, seed), UMode::auto(n, r, seed_b))?;
            Ok(TwoGraphRow { n, seed, seed_b, value })
        }))
    })?;
    manifest.stage("write", || {
        let medians: Vec<(usize, Option<f64>)> = ctx
            .cfg
            .n_values
            .iter()
            .map(|&n| (n, median(&rows.iter().filter(|r| r.n == n).map(|r| r.value).collect::<Vec<_>>())))
            .collect();
        let csv_rows = rows
            .iter()
            .map(|r| vec![r.n.to_string(), r.seed.to_string(), r.seed_b.to_string(), fmt_f64(r.value)])
            .collect();
        out.csv("twograph.csv", &["n", "seed", "seed_b", "value"], csv_rows)?;
        let summary_rows = medians.iter().map(|(n, m)| vec![n.to_string(), fmt_opt(*m)]).collect();
        out.csv("twograph_summary.csv", &["n", "median"], summary_rows)?;
        out.json(
            "twograph.json",
            &TwoGraphDoc { kernel: spec, same_model, rows: &rows, medians: medians.clone() },
        )?;
        let mut text = format!(
            "kernel {spec}, {}: median |U(X_hat) - U(Y_hat)|\n",
            if same_model { "same model twice" } else { "model against alternative" }
        );
        for (n, m) in &medians {
            let _ = writeln!(text, "n = {n}: {}", m.map_or("-".into(), |v| format!("{v:.6e}")));
        }
        out.table("twograph.txt", text)?;
        for (n, m) in &medians {
            out.summary.push(format!("twograph n={n} median={}", fmt_opt(*m)));
        }
        Ok(())
    })
}

#[derive(Serialize)]
struct SpectrumDoc<'a> {
    reports: &'a [(u64, SpectrumReport)],
    medians: Vec<(usize, Option<f64>)>,
}

fn spectrum(ctx: &Ctx<'_>, manifest: &mut RunManifest, out: &mut Outputs<'_>) -> Result<(), CliError> {
    let sig = ctx.sig();
    let d = sig.dim();
    let jobs = ctx.jobs();
    let reports = manifest.stage("replicates", || {
        collect(ctx.exec.map(&jobs, |&(n, seed)| -> grdpg::error::Result<(u64, SpectrumReport)> {
            let x = sample_latent(&ctx.dist, n, seed)?;
            let p = build_p(&x, sig)?;
            Ok((seed, spectrum_convergence(&p, &ctx.dist)?))
        }))
    })?;
    manifest.stage("write", || {
        let medians: Vec<(usize, Option<f64>)> = ctx
            .cfg
            .n_values
            .iter()
            .map(|&n| (n, median(&reports.iter().filter(|(_, r)| r.n == n).map(|(_, r)| r.max_gap).collect::<Vec<_>>())))
            .collect();
        let names: Vec<String> = (0..d)
            .map(|j| format!("scaled_{j}"))
            .chain((0..d).map(|j| format!("limit_{j}")))
            .collect();
        let mut header = vec!["n", "seed", "max_gap"];
        header.extend(names.iter().map(String::as_str));
        let rows = reports
            .iter()
            .map(|(seed, r)| {
                let mut row = vec![r.n.to_string(), seed.to_string(), fmt_f64(r.max_gap)];
                row.extend(r.scaled_eigenvalues.iter().chain(&r.limit_eigenvalues).map(|v| fmt_f64(*v)));
                row
            })
            .collect();
        out.csv("spectrum.csv", &header, rows)?;
        let summary_rows = medians.iter().map(|(n, m)| vec![n.to_string(), fmt_opt(*m)]).collect();
        out.csv("spectrum_summary.csv", &["n", "median_max_gap"], summary_rows)?;
        out.json("spectrum.json", &SpectrumDoc { reports: &reports, medians: medians.clone() })?;
        let worst = reports.iter().map(|(_, r)| r.max_gap).fold(0.0, f64::max);
        let mut text = String::from("max matched eigenvalue gap between spec(P/n) and spec(Delta I_pq)\n");
        for (n, m) in &medians {
            let _ = writeln!(text, "n = {n}: median {}", m.map_or("-".into(), |v| format!("{v:.6e}")));
        }
        let _ = writeln!(text, "worst replicate: {worst:.6e}");
        out.table("spectrum.txt", text)?;
        out.summary.push(format!("spectrum max_gap={worst:.6e}"));
        Ok(())
    })
}
