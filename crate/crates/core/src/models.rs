//! Latent position distributions and their population second moments.

use std::fmt;
use std::sync::Arc;

use faer::{Mat, MatRef};
use rand::{Rng, RngCore};
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{GrdpgError, Result};
use crate::linalg::{self, signature_order, EigenOrdering, Signature};
use crate::rng::{self, Stream};

/// Slack allowed on `x^T I_{p,q} y ∈ [0, 1]`.
pub const VALIDITY_SLACK: f64 = 1e-9;
/// Eigenvalues of `B` below this magnitude are treated as zero.
pub const RANK_TOL: f64 = 1e-10;

/// A finite mixture of point masses: the latent law of a stochastic
/// blockmodel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureDistribution {
    centers: Vec<Vec<f64>>,
    weights: Vec<f64>,
    signature: Signature,
}

impl MixtureDistribution {
    /// Checks shapes and weights. Inner-product validity is reported by
    /// [`validate_distribution`]; use [`MixtureDistribution::checked`] to
    /// reject invalid models outright.
    pub fn new(centers: Vec<Vec<f64>>, weights: Vec<f64>, signature: Signature) -> Result<Self> {
        if centers.is_empty() {
            return Err(GrdpgError::InvalidModel("mixture has no centers".into()));
        }
        if centers.len() != weights.len() {
            return Err(GrdpgError::InvalidModel(format!(
                "{} centers but {} weights",
                centers.len(),
                weights.len()
            )));
        }
        if let Some(c) = centers.iter().find(|c| c.len() != signature.dim()) {
            return Err(GrdpgError::InvalidDimension(format!(
                "center of length {} under signature {signature}",
                c.len()
            )));
        }
        if centers.iter().flatten().any(|v| !v.is_finite()) {
            return Err(GrdpgError::InvalidInput("non-finite center coordinate".into()));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(GrdpgError::InvalidModel("weights must be nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(GrdpgError::InvalidModel(format!(
                "weights sum to {total}, expected 1"
            )));
        }
        Ok(Self {
            centers,
            weights,
            signature,
        })
    }

    /// Like [`MixtureDistribution::new`] but also rejects centers whose
    /// pairwise indefinite inner products leave `[0, 1]`.
    pub fn checked(centers: Vec<Vec<f64>>, weights: Vec<f64>, signature: Signature) -> Result<Self> {
        let dist = Self::new(centers, weights, signature)?;
        validate_distribution(&LatentDistribution::Mixture(dist.clone())).into_result()?;
        Ok(dist)
    }

    /// A random valid mixture with `k` centers. The first coordinate of each
    /// center lies in `[0.55, 0.75]` and the others in `[-0.25, 0.25]`, which
    /// keeps every indefinite inner product inside `[0, 1]` for `d ≤ 5`.
    pub fn random<R: Rng + ?Sized>(signature: Signature, k: usize, rng: &mut R) -> Result<Self> {
        let d = signature.dim();
        if signature.p() == 0 || d > 5 || k == 0 {
            return Err(GrdpgError::InvalidDimension(format!(
                "random mixtures need p ≥ 1, d ≤ 5 and k ≥ 1 (got {signature}, k = {k})"
            )));
        }
        let centers: Vec<Vec<f64>> = (0..k)
            .map(|_| {
                (0..d)
                    .map(|j| if j == 0 { rng.random_range(0.55..=0.75) } else { rng.random_range(-0.25..=0.25) })
                    .collect()
            })
            .collect();
        let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.5..1.5)).collect();
        let total: f64 = raw.iter().sum();
        Self::checked(centers, raw.iter().map(|w| w / total).collect(), signature)
    }

    pub fn centers(&self) -> &[Vec<f64>] {
        &self.centers
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn signature(&self) -> Signature {
        self.signature
    }

    pub fn num_blocks(&self) -> usize {
        self.centers.len()
    }

    /// `K x d` matrix whose rows are the centers.
    pub fn center_matrix(&self) -> Mat<f64> {
        Mat::from_fn(self.centers.len(), self.signature.dim(), |i, j| self.centers[i][j])
    }

    /// The block probability matrix `B_jk = ν_j^T I_{p,q} ν_k`.
    pub fn block_matrix(&self) -> Mat<f64> {
        let k = self.centers.len();
        Mat::from_fn(k, k, |i, j| self.signature.inner(&self.centers[i], &self.centers[j]))
    }

    /// `Σ_k π_k ν_k ν_k^T`.
    pub fn delta(&self) -> Mat<f64> {
        let d = self.signature.dim();
        let mut out = Mat::<f64>::zeros(d, d);
        for (c, w) in self.centers.iter().zip(&self.weights) {
            for i in 0..d {
                for j in 0..d {
                    out[(i, j)] += w * c[i] * c[j];
                }
            }
        }
        linalg::symmetrize(out.as_ref())
    }

    /// Draws a block label from the weights.
    pub fn sample_block<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (k, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                return k;
            }
        }
        // Only reachable through rounding in the cumulative sum.
        self.weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
    }
}

/// Draws a scalar, e.g. a degree-correction weight.
pub type ScalarSampler = Arc<dyn Fn(&mut dyn RngCore) -> f64 + Send + Sync>;

pub type VectorSampler = Arc<dyn Fn(&mut dyn RngCore) -> Vec<f64> + Send + Sync>;

/// A latent law given only through a sampler.
#[derive(Clone)]
pub struct GenericDistribution {
    sampler: VectorSampler,
    signature: Signature,
    /// Monte Carlo budget for [`second_moment`] and other population
    /// expectations.
    pub moment_estimator_samples: usize,
    /// Seed of the Monte Carlo stream used for population expectations.
    pub moment_seed: u64,
    pub label: String,
}

impl fmt::Debug for GenericDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GenericDistribution")
            .field("label", &self.label)
            .field("signature", &self.signature)
            .field("moment_estimator_samples", &self.moment_estimator_samples)
            .finish_non_exhaustive()
    }
}

impl GenericDistribution {
    pub fn new(label: impl Into<String>, signature: Signature, sampler: VectorSampler) -> Self {
        Self {
            sampler,
            signature,
            moment_estimator_samples: 100_000,
            moment_seed: 0,
            label: label.into(),
        }
    }

    pub fn with_moment_budget(mut self, samples: usize, seed: u64) -> Self {
        self.moment_estimator_samples = samples;
        self.moment_seed = seed;
        self
    }

    pub fn signature(&self) -> Signature {
        self.signature
    }

    pub fn sample(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        (self.sampler)(rng)
    }

    /// Mixed-membership blockmodel: a point of the convex hull of `centers`.
    /// `law` draws the convex weights; by default they are uniform on the
    /// simplex.
    pub fn mixed_membership(
        centers: &MixtureDistribution,
        law: Option<VectorSampler>,
    ) -> Result<Self> {
        validate_distribution(&LatentDistribution::Mixture(centers.clone())).into_result()?;
        let k = centers.num_blocks();
        let law = law.unwrap_or_else(|| Arc::new(move |rng: &mut dyn RngCore| uniform_simplex(k, rng)));
        let cs = centers.centers().to_vec();
        let d = centers.signature().dim();
        let sampler: VectorSampler = Arc::new(move |rng: &mut dyn RngCore| {
            let w = law(rng);
            let mut x = vec![0.0; d];
            for (wk, c) in w.iter().zip(&cs) {
                for (xi, ci) in x.iter_mut().zip(c) {
                    *xi += wk * ci;
                }
            }
            x
        });
        Ok(Self::new("mixed-membership", centers.signature(), sampler))
    }

    /// Degree-corrected blockmodel: a center drawn by the mixture weights,
    /// scaled by a weight from `law` on `[0, 1]` (uniform by default).
    pub fn degree_corrected(
        mixture: &MixtureDistribution,
        law: Option<ScalarSampler>,
    ) -> Result<Self> {
        validate_distribution(&LatentDistribution::Mixture(mixture.clone())).into_result()?;
        let law = law.unwrap_or_else(|| Arc::new(|rng: &mut dyn RngCore| rng.random::<f64>()));
        let m = mixture.clone();
        let sampler: VectorSampler = Arc::new(move |rng: &mut dyn RngCore| {
            let k = m.sample_block(rng);
            let w = law(rng).clamp(0.0, 1.0);
            m.centers()[k].iter().map(|c| w * c).collect()
        });
        Ok(Self::new("degree-corrected", mixture.signature(), sampler))
    }
}

fn uniform_simplex(k: usize, rng: &mut dyn RngCore) -> Vec<f64> {
    let e: Vec<f64> = (0..k).map(|_| Exp1.sample(rng)).collect();
    let total: f64 = e.iter().sum();
    e.into_iter().map(|x| x / total).collect()
}

/// Either form of latent law.
#[derive(Debug, Clone)]
pub enum LatentDistribution {
    Mixture(MixtureDistribution),
    Generic(GenericDistribution),
}

impl From<MixtureDistribution> for LatentDistribution {
    fn from(m: MixtureDistribution) -> Self {
        LatentDistribution::Mixture(m)
    }
}

impl From<GenericDistribution> for LatentDistribution {
    fn from(g: GenericDistribution) -> Self {
        LatentDistribution::Generic(g)
    }
}

impl LatentDistribution {
    pub fn signature(&self) -> Signature {
        match self {
            LatentDistribution::Mixture(m) => m.signature(),
            LatentDistribution::Generic(g) => g.signature(),
        }
    }

    pub fn dim(&self) -> usize {
        self.signature().dim()
    }

    pub fn as_mixture(&self) -> Option<&MixtureDistribution> {
        match self {
            LatentDistribution::Mixture(m) => Some(m),
            LatentDistribution::Generic(_) => None,
        }
    }

    /// One latent vector and, for mixtures, its block.
    pub fn draw(&self, rng: &mut dyn RngCore) -> (Vec<f64>, Option<usize>) {
        match self {
            LatentDistribution::Mixture(m) => {
                let k = m.sample_block(rng);
                (m.centers()[k].clone(), Some(k))
            }
            LatentDistribution::Generic(g) => (g.sample(rng), None),
        }
    }

    /// `E[f(ξ)]` for `ξ` from this law: an exact finite sum for mixtures,
    /// Monte Carlo with the moment budget otherwise.
    pub fn expectation<F>(&self, f: F) -> Mat<f64>
    where
        F: Fn(&[f64]) -> Mat<f64>,
    {
        match self {
            LatentDistribution::Mixture(m) => {
                let mut acc: Option<Mat<f64>> = None;
                for (c, w) in m.centers().iter().zip(m.weights()) {
                    let term = f(c) * faer::Scale(*w);
                    acc = Some(match acc {
                        None => term,
                        Some(a) => a + term,
                    });
                }
                acc.expect("mixture has at least one center")
            }
            LatentDistribution::Generic(g) => {
                let mut rng = rng::stream(g.moment_seed, Stream::Moments);
                let n = g.moment_estimator_samples.max(1);
                let mut acc: Option<Mat<f64>> = None;
                for _ in 0..n {
                    let x = g.sample(&mut rng);
                    let term = f(&x);
                    acc = Some(match acc {
                        None => term,
                        Some(a) => a + term,
                    });
                }
                acc.unwrap() * faer::Scale(1.0 / n as f64)
            }
        }
    }
}

/// Population second moment `Δ = E[X X^T]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SecondMoment {
    #[serde(with = "linalg::serde_mat")]
    pub delta: Mat<f64>,
    pub exact: bool,
    /// Monte Carlo budget when `exact` is false.
    pub samples: Option<usize>,
}

pub fn second_moment(dist: &LatentDistribution) -> SecondMoment {
    match dist {
        LatentDistribution::Mixture(m) => SecondMoment {
            delta: m.delta(),
            exact: true,
            samples: None,
        },
        LatentDistribution::Generic(g) => {
            let delta = dist.expectation(|x| outer(x, x));
            SecondMoment {
                delta: linalg::symmetrize(delta.as_ref()),
                exact: false,
                samples: Some(g.moment_estimator_samples),
            }
        }
    }
}

pub(crate) fn outer(x: &[f64], y: &[f64]) -> Mat<f64> {
    Mat::from_fn(x.len(), y.len(), |i, j| x[i] * y[j])
}

/// A stochastic blockmodel given by its block matrix `B`.
///
/// The signature is the inertia of `B` and the centers are the rows of
/// `V_B |Λ_B|^{1/2}`, columns in signature order, so that
/// `ν_j^T I_{p,q} ν_k = B_jk`.
#[allow(non_snake_case)]
pub fn sbm_from_B(b: MatRef<'_, f64>, weights: Vec<f64>) -> Result<MixtureDistribution> {
    let k = b.nrows();
    if k == 0 || b.ncols() != k {
        return Err(GrdpgError::InvalidInput(format!(
            "B must be square, got {}x{}",
            b.nrows(),
            b.ncols()
        )));
    }
    for i in 0..k {
        for j in 0..k {
            let v = b[(i, j)];
            if !v.is_finite() {
                return Err(GrdpgError::InvalidInput(format!("non-finite B[{i}][{j}]")));
            }
            if (v - b[(j, i)]).abs() > 1e-12 {
                return Err(GrdpgError::InvalidInput(format!(
                    "B is not symmetric at ({i}, {j})"
                )));
            }
            if !(0.0..=1.0).contains(&v) {
                return Err(GrdpgError::InvalidModel(format!(
                    "B[{i}][{j}] = {v} is not a probability"
                )));
            }
        }
    }
    if weights.len() != k {
        return Err(GrdpgError::InvalidModel(format!(
            "B has {k} blocks but {} weights were given",
            weights.len()
        )));
    }
    let eig = linalg::symmetric_eigen(b, EigenOrdering::ByValueDescending)?;
    let kept: Vec<usize> = (0..k).filter(|&j| eig.values[j].abs() >= RANK_TOL).collect();
    if kept.len() < k {
        log::warn!(
            "B is rank deficient: keeping {} of {k} eigenvalues",
            kept.len()
        );
    }
    if kept.is_empty() {
        return Err(GrdpgError::InvalidModel("B is the zero matrix".into()));
    }
    let kept_values: Vec<f64> = kept.iter().map(|&j| eig.values[j]).collect();
    let order: Vec<usize> = signature_order(&kept_values).into_iter().map(|i| kept[i]).collect();
    let p = order.iter().filter(|&&j| eig.values[j] > 0.0).count();
    let sig = Signature::new(p, order.len() - p)?;
    let centers = (0..k)
        .map(|row| {
            order
                .iter()
                .map(|&j| eig.vectors[(row, j)] * eig.values[j].abs().sqrt())
                .collect()
        })
        .collect();
    MixtureDistribution::new(centers, weights, sig)
}

/// One pair whose indefinite inner product leaves `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub first: usize,
    pub second: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidityReport {
    pub violations: Vec<Violation>,
    pub pairs_checked: usize,
    /// True when the pairs come from sampled points rather than centers.
    pub sampled: bool,
}

impl ValidityReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn into_result(self) -> Result<()> {
        match self.violations.first() {
            None => Ok(()),
            Some(v) => Err(GrdpgError::InvalidModel(format!(
                "inner product of points {} and {} is {} (outside [0, 1]); {} violation(s) total",
                v.first,
                v.second,
                v.value,
                self.violations.len()
            ))),
        }
    }
}

fn check_pairs(points: &[Vec<f64>], sig: Signature) -> (Vec<Violation>, usize) {
    let mut out = Vec::new();
    let mut checked = 0;
    for i in 0..points.len() {
        for j in i..points.len() {
            checked += 1;
            let v = sig.inner(&points[i], &points[j]);
            if !(-VALIDITY_SLACK..=1.0 + VALIDITY_SLACK).contains(&v) {
                out.push(Violation {
                    first: i,
                    second: j,
                    value: v,
                });
            }
        }
    }
    (out, checked)
}

/// Lists all pairs (centers for mixtures, a fresh sample for generic laws)
/// whose indefinite inner product is outside `[0, 1]`.
pub fn validate_distribution(dist: &LatentDistribution) -> ValidityReport {
    match dist {
        LatentDistribution::Mixture(m) => {
            let (violations, pairs_checked) = check_pairs(m.centers(), m.signature());
            ValidityReport {
                violations,
                pairs_checked,
                sampled: false,
            }
        }
        LatentDistribution::Generic(g) => {
            let mut rng = rng::stream(g.moment_seed, Stream::Validation);
            let count = g.moment_estimator_samples.clamp(2, 500);
            let points: Vec<Vec<f64>> = (0..count).map(|_| g.sample(&mut rng)).collect();
            let (violations, pairs_checked) = check_pairs(&points, g.signature());
            ValidityReport {
                violations,
                pairs_checked,
                sampled: true,
            }
        }
    }
}

/// On-disk model description.
///
/// Either `B` (block probability matrix) or `centers` + `signature` is
/// given, together with `weights`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    #[serde(rename = "B", default, skip_serializing_if = "Option::is_none")]
    pub b: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub centers: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub signature: Option<[usize; 2]>,
    pub weights: Vec<f64>,
}

impl ModelSpec {
    /// The three-block indefinite model with `B = (.6 .9 .9; .9 .6 .9; .9 .9 .3)`
    /// and weights `(.35, .35, .3)`.
    pub fn three_block_indefinite() -> Self {
        Self {
            b: Some(vec![
                vec![0.6, 0.9, 0.9],
                vec![0.9, 0.6, 0.9],
                vec![0.9, 0.9, 0.3],
            ]),
            centers: None,
            signature: None,
            weights: vec![0.35, 0.35, 0.3],
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| GrdpgError::InvalidInput(format!("model file: {e}")))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    /// Builds and validates the mixture.
    pub fn build(&self) -> Result<MixtureDistribution> {
        match (&self.b, &self.centers) {
            (Some(b), None) => {
                if self.signature.is_some() {
                    return Err(GrdpgError::InvalidInput(
                        "`signature` is derived from `B` and must not be given with it".into(),
                    ));
                }
                sbm_from_B(linalg::from_rows(b)?.as_ref(), self.weights.clone())
            }
            (None, Some(c)) => {
                let [p, q] = self.signature.ok_or_else(|| {
                    GrdpgError::InvalidInput("`centers` requires `signature = [p, q]`".into())
                })?;
                MixtureDistribution::checked(c.clone(), self.weights.clone(), Signature::new(p, q)?)
            }
            _ => Err(GrdpgError::InvalidInput(
                "model needs exactly one of `B` or `centers`".into(),
            )),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::max_abs_diff;
    use proptest::prelude::*;

    fn three_block_b() -> Mat<f64> {
        linalg::from_rows(&ModelSpec::three_block_indefinite().b.unwrap()).unwrap()
    }

    fn reference_centers() -> Vec<Vec<f64>> {
        vec![
            vec![0.903, -0.349, -0.306],
            vec![0.911, 0.421, -0.229],
            vec![0.813, -0.052, 0.599],
        ]
    }

    #[test]
    fn three_block_model_has_signature_one_two() {
        let m = sbm_from_B(three_block_b().as_ref(), vec![0.35, 0.35, 0.3]).unwrap();
        assert_eq!(m.signature(), Signature::new(1, 2).unwrap());
        assert!(max_abs_diff(m.block_matrix().as_ref(), three_block_b().as_ref()) < 1e-10);
    }

    #[test]
    fn reference_centers_are_an_indefinite_rotation_of_spectral_centers() {
        // The reference centers are a different representative of the same
        // model: T = C_spec^{-1} C_ref must lie in O(1, 2) up to the
        // three-decimal rounding of the reference values.
        let m = sbm_from_B(three_block_b().as_ref(), vec![0.35, 0.35, 0.3]).unwrap();
        let spec = m.center_matrix();
        let reference = linalg::from_rows(&reference_centers()).unwrap();
        let t = &linalg::inverse(spec.as_ref()).unwrap() * &reference;
        let i = m.signature().ipq();
        let form = &(t.transpose() * &i) * &t;
        assert!(max_abs_diff(form.as_ref(), i.as_ref()) < 1e-2);
        // First coordinates agree up to sign to within the rounding.
        for k in 0..3 {
            assert!((spec[(k, 0)].abs() - reference[(k, 0)].abs()).abs() < 1e-2);
        }
    }

    #[test]
    fn one_by_one_block_matrix() {
        let b = linalg::from_rows(&[vec![0.5]]).unwrap();
        let m = sbm_from_B(b.as_ref(), vec![1.0]).unwrap();
        assert_eq!(m.signature(), Signature::new(1, 0).unwrap());
        assert!((m.centers()[0][0].abs() - 0.5_f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn positive_definite_two_block() {
        let b = linalg::from_rows(&[vec![0.5, 0.2], vec![0.2, 0.5]]).unwrap();
        let m = sbm_from_B(b.as_ref(), vec![0.5, 0.5]).unwrap();
        assert_eq!(m.signature(), Signature::new(2, 0).unwrap());
        assert!(max_abs_diff(m.block_matrix().as_ref(), b.as_ref()) < 1e-10);
        // Eigenvalues 0.7 and 0.3 appear as squared column norms.
        let c = m.center_matrix();
        let norms: Vec<f64> = (0..2).map(|j| (0..2).map(|i| c[(i, j)].powi(2)).sum()).collect();
        assert!((norms[0] - 0.7).abs() < 1e-12 && (norms[1] - 0.3).abs() < 1e-12);
    }

    #[test]
    fn sbm_from_b_errors() {
        let b = linalg::from_rows(&[vec![0.5, 1.2], vec![1.2, 0.5]]).unwrap();
        assert!(matches!(sbm_from_B(b.as_ref(), vec![0.5, 0.5]), Err(GrdpgError::InvalidModel(_))));
        let b = linalg::from_rows(&[vec![0.5, 0.2], vec![0.3, 0.5]]).unwrap();
        assert!(matches!(sbm_from_B(b.as_ref(), vec![0.5, 0.5]), Err(GrdpgError::InvalidInput(_))));
    }

    #[test]
    fn rank_deficient_b_reduces_dimension() {
        let b = linalg::from_rows(&[vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        let m = sbm_from_B(b.as_ref(), vec![0.5, 0.5]).unwrap();
        assert_eq!(m.signature().dim(), 1);
        assert!(max_abs_diff(m.block_matrix().as_ref(), b.as_ref()) < 1e-12);
    }

    #[test]
    fn second_moment_examples() {
        let sig1 = Signature::new(1, 0).unwrap();
        let m = MixtureDistribution::new(vec![vec![0.5_f64.sqrt()]], vec![1.0], sig1).unwrap();
        let s = second_moment(&m.into());
        assert!(s.exact && (s.delta[(0, 0)] - 0.5).abs() < 1e-15);

        let m = MixtureDistribution::new(reference_centers(), vec![0.35, 0.35, 0.3], Signature::new(1, 2).unwrap()).unwrap();
        let s = second_moment(&m.into());
        let c = reference_centers();
        for i in 0..3 {
            for j in 0..3 {
                let expected = 0.35 * c[0][i] * c[0][j] + 0.35 * c[1][i] * c[1][j] + 0.3 * c[2][i] * c[2][j];
                assert!((s.delta[(i, j)] - expected).abs() < 1e-15);
            }
        }

        let m = MixtureDistribution::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![0.5, 0.5], Signature::new(2, 0).unwrap()).unwrap();
        let s = second_moment(&m.into());
        assert!(max_abs_diff(s.delta.as_ref(), linalg::diag(&[0.5, 0.5]).as_ref()) < 1e-15);
    }

    #[test]
    fn mixture_second_moment_matches_monte_carlo() {
        let m = sbm_from_B(three_block_b().as_ref(), vec![0.35, 0.35, 0.3]).unwrap();
        let exact = m.delta();
        let mm = m.clone();
        let g = GenericDistribution::new("resampled", m.signature(), Arc::new(move |rng: &mut dyn RngCore| {
            let k = mm.sample_block(rng);
            mm.centers()[k].clone()
        }))
        .with_moment_budget(100_000, 3);
        let mc = second_moment(&g.clone().into());
        assert!(!mc.exact);
        // Standard error of each entry from the second moment of ξ_i ξ_j.
        let fourth = LatentDistribution::from(m.clone()).expectation(|x| {
            Mat::from_fn(3, 3, |i, j| (x[i] * x[j]).powi(2))
        });
        for i in 0..3 {
            for j in 0..3 {
                let var = fourth[(i, j)] - exact[(i, j)].powi(2);
                let se = (var / 100_000.0).sqrt();
                assert!((mc.delta[(i, j)] - exact[(i, j)]).abs() <= 3.0 * se + 1e-15, "({i},{j})");
            }
        }
    }

    #[test]
    fn validation_examples() {
        let m = MixtureDistribution::new(reference_centers(), vec![0.35, 0.35, 0.3], Signature::new(1, 2).unwrap()).unwrap();
        let r = validate_distribution(&m.into());
        assert!(r.is_valid());
        assert_eq!(r.pairs_checked, 6);

        let m = MixtureDistribution::new(vec![vec![1.1]], vec![1.0], Signature::new(1, 0).unwrap()).unwrap();
        let r = validate_distribution(&m.into());
        assert_eq!(r.violations.len(), 1);
        assert!((r.violations[0].value - 1.21).abs() < 1e-12);

        let m = MixtureDistribution::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![0.5, 0.5], Signature::new(1, 1).unwrap()).unwrap();
        let r = validate_distribution(&m.into());
        assert_eq!(r.violations, vec![Violation { first: 1, second: 1, value: -1.0 }]);
    }

    #[test]
    fn weights_must_sum_to_one() {
        let sig = Signature::new(1, 0).unwrap();
        assert!(MixtureDistribution::new(vec![vec![0.5], vec![0.4]], vec![0.5, 0.4], sig).is_err());
        assert!(MixtureDistribution::new(vec![vec![0.5], vec![0.4]], vec![1.5, -0.5], sig).is_err());
    }

    #[test]
    fn mixed_membership_and_degree_corrected_stay_valid() {
        let m = sbm_from_B(three_block_b().as_ref(), vec![0.35, 0.35, 0.3]).unwrap();
        let mm = GenericDistribution::mixed_membership(&m, None).unwrap().with_moment_budget(300, 1);
        assert!(validate_distribution(&mm.into()).is_valid());
        let dc = GenericDistribution::degree_corrected(&m, None).unwrap().with_moment_budget(300, 2);
        assert!(validate_distribution(&dc.into()).is_valid());
    }

    #[test]
    fn model_spec_round_trip_and_errors() {
        let spec = ModelSpec::three_block_indefinite();
        let text = toml::to_string(&spec).unwrap();
        assert_eq!(ModelSpec::from_toml_str(&text).unwrap(), spec);
        assert_eq!(spec.build().unwrap().signature(), Signature::new(1, 2).unwrap());

        let centers = ModelSpec::from_toml_str("centers = [[0.7, 0.1], [0.5, -0.3]]\nsignature = [1, 1]\nweights = [0.4, 0.6]\n").unwrap();
        assert_eq!(centers.build().unwrap().num_blocks(), 2);

        let invalid = ModelSpec::from_toml_str("centers = [[1.1]]\nsignature = [1, 0]\nweights = [1.0]\n").unwrap();
        assert!(matches!(invalid.build(), Err(GrdpgError::InvalidModel(_))));
        let neither = ModelSpec::from_toml_str("weights = [1.0]\n").unwrap();
        assert!(neither.build().is_err());
        assert!(ModelSpec::from_toml_str("B = [[0.5]]\nweights = [1.0]\nextra = 1\n").is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn gram_of_spectral_centers_recovers_b(k in 1usize..=6, entries in proptest::collection::vec(0.0f64..=1.0, 21)) {
            let mut b = Mat::<f64>::zeros(k, k);
            let mut it = entries.iter();
            for i in 0..k {
                for j in i..k {
                    let v = *it.next().unwrap();
                    b[(i, j)] = v;
                    b[(j, i)] = v;
                }
            }
            let weights = vec![1.0 / k as f64; k];
            let weights = { let mut w = weights; let s: f64 = w.iter().sum(); w[0] += 1.0 - s; w };
            let m = sbm_from_B(b.as_ref(), weights).unwrap();
            prop_assert!(max_abs_diff(m.block_matrix().as_ref(), b.as_ref()) < 1e-10);
            let eig = linalg::symmetric_eigen(b.as_ref(), EigenOrdering::ByValueDescending).unwrap();
            let p = eig.values.iter().filter(|v| **v >= RANK_TOL).count();
            let q = eig.values.iter().filter(|v| **v <= -RANK_TOL).count();
            prop_assert_eq!((m.signature().p(), m.signature().q()), (p, q));
        }
    }
}
