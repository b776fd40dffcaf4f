//! Classical polynomial regression baselines: least squares, RANSAC and a
//! Tukey-biweight M-estimator solved by iteratively reweighted least squares.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Error, Result};
use crate::linalg::{lstsq, weighted_lstsq};
use crate::poly::{build_design_matrix, CoefficientVector, DesignMatrix, DomainGrid, ModelSpec, RangeField};

/// Consistency factor turning a MAD into a Gaussian standard deviation.
pub const MAD_TO_SIGMA: f64 = 1.4826;

#[derive(Debug, Clone, PartialEq)]
pub struct RansacConfig {
    pub iterations: usize,
    /// Per-point residual norm below which a point joins the consensus.
    pub inlier_threshold: f64,
    /// Points per minimal sample.
    pub min_sample: usize,
    /// Stop as soon as this fraction of the points agrees with a hypothesis.
    pub consensus_fraction_stop: f64,
    pub seed: u64,
}

impl RansacConfig {
    pub fn new(spec: &ModelSpec, inlier_threshold: f64) -> Self {
        Self {
            iterations: 500,
            inlier_threshold,
            min_sample: spec.num_coeffs().div_ceil(spec.range_dim()),
            consensus_fraction_stop: 0.99,
            seed: 0,
        }
    }

    /// Threshold of three noise standard deviations on the residual norm,
    /// scaled by `sqrt(R)` for vector fields.
    pub fn for_noise(spec: &ModelSpec, noise_sigma: f64) -> Self {
        let thr = 3.0 * noise_sigma * (spec.range_dim() as f64).sqrt();
        Self::new(spec, thr.max(1e-6))
    }

    pub fn validate(&self, spec: &ModelSpec) -> Result<()> {
        if self.iterations == 0 {
            return Err(invalid("RANSAC needs at least one iteration"));
        }
        if self.min_sample * spec.range_dim() < spec.num_coeffs() {
            return Err(invalid(format!(
                "minimal sample of {} points cannot determine {} coefficients",
                self.min_sample,
                spec.num_coeffs()
            )));
        }
        if !(self.inlier_threshold > 0.0) {
            return Err(invalid("RANSAC inlier threshold must be positive"));
        }
        if !(self.consensus_fraction_stop > 0.0 && self.consensus_fraction_stop <= 1.0) {
            return Err(invalid("consensus stop fraction must lie in (0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IrwlsConfig {
    pub max_iterations: usize,
    /// Convergence threshold on `‖Δθ‖`.
    pub convergence_tol: f64,
    /// Tukey tuning constant `c`, in robust-scale units.
    pub tuning_constant: f64,
}

impl Default for IrwlsConfig {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            convergence_tol: 1e-8,
            tuning_constant: 4.685,
        }
    }
}

impl IrwlsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 || !(self.convergence_tol > 0.0) || !(self.tuning_constant > 0.0) {
            return Err(invalid("IRWLS configuration values must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub theta_hat: CoefficientVector,
    /// One flag per grid point.
    pub inlier_mask: Vec<bool>,
    pub iterations_used: usize,
    /// `‖d − M θ̂‖₂` over all points.
    pub final_residual_norm: f64,
}

fn check_field(spec: &ModelSpec, grid: &DomainGrid, d: &RangeField) -> Result<()> {
    if d.range_dim() != spec.range_dim() || d.num_points() != grid.len() {
        return Err(invalid(format!(
            "field with {} points of dimension {} does not match grid of {} points and model range {}",
            d.num_points(),
            d.range_dim(),
            grid.len(),
            spec.range_dim()
        )));
    }
    if !d.is_finite() {
        return Err(invalid("field contains non-finite values"));
    }
    Ok(())
}

fn point_residuals(design: &DesignMatrix, theta: &[f64], d: &RangeField) -> Vec<f64> {
    let fitted = design.apply(theta);
    let r = d.range_dim();
    fitted
        .chunks_exact(r)
        .zip(d.values().chunks_exact(r))
        .map(|(a, b)| a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt())
        .collect()
}

fn residual_norm(res: &[f64]) -> f64 {
    res.iter().map(|r| r * r).sum::<f64>().sqrt()
}

fn gather(d: &RangeField, points: &[usize]) -> Vec<f64> {
    points.iter().flat_map(|&i| d.point(i).iter().copied()).collect()
}

/// Ordinary least squares, `argmin ‖d − M(x)θ‖²`.
pub fn fit_lse(spec: &ModelSpec, grid: &DomainGrid, d: &RangeField) -> Result<CoefficientVector> {
    check_field(spec, grid, d)?;
    let design = build_design_matrix(spec, grid)?;
    lstsq(design.data(), design.rows(), design.cols(), d.values()).map(Into::into)
}

pub fn fit_ransac(
    spec: &ModelSpec,
    grid: &DomainGrid,
    d: &RangeField,
    config: &RansacConfig,
) -> Result<FitReport> {
    check_field(spec, grid, d)?;
    config.validate(spec)?;
    let n = grid.len();
    if n < config.min_sample {
        return Err(invalid(format!(
            "{n} points cannot supply a minimal sample of {}",
            config.min_sample
        )));
    }
    let design = build_design_matrix(spec, grid)?;
    let (m, r) = (spec.num_coeffs(), spec.range_dim());
    let stop_at = (config.consensus_fraction_stop * n as f64).ceil() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut best: Option<(usize, Vec<f64>)> = None;
    let mut used = 0;
    for _ in 0..config.iterations {
        used += 1;
        let sample = rand::seq::index::sample(&mut rng, n, config.min_sample).into_vec();
        let sub = design.select_points(&sample);
        let Ok(theta) = lstsq(sub.data(), sub.rows(), m, &gather(d, &sample)) else {
            continue;
        };
        let count = point_residuals(&design, &theta, d)
            .iter()
            .filter(|&&e| e < config.inlier_threshold)
            .count();
        if best.as_ref().is_none_or(|(c, _)| count > *c) {
            best = Some((count, theta));
        }
        if count >= stop_at {
            break;
        }
    }
    let (_, hypothesis) = best.ok_or_else(|| {
        Error::EstimationFailed(format!(
            "no minimal sample gave a solvable system in {} iterations",
            config.iterations
        ))
    })?;

    let consensus: Vec<usize> = point_residuals(&design, &hypothesis, d)
        .iter()
        .enumerate()
        .filter(|(_, &e)| e < config.inlier_threshold)
        .map(|(i, _)| i)
        .collect();
    let theta = if consensus.len() * r >= m {
        let sub = design.select_points(&consensus);
        lstsq(sub.data(), sub.rows(), m, &gather(d, &consensus)).unwrap_or(hypothesis)
    } else {
        hypothesis
    };
    let res = point_residuals(&design, &theta, d);
    Ok(FitReport {
        inlier_mask: res.iter().map(|&e| e < config.inlier_threshold).collect(),
        final_residual_norm: residual_norm(&res),
        theta_hat: theta.into(),
        iterations_used: used,
    })
}

/// Tukey biweight: `(1 − (r / (c·scale))²)²` inside the cutoff, zero beyond.
pub fn tukey_weight(r: f64, scale: f64, c: f64) -> f64 {
    let cutoff = c * scale;
    if r.abs() >= cutoff {
        return if r == 0.0 { 1.0 } else { 0.0 };
    }
    let u = r / cutoff;
    let t = 1.0 - u * u;
    t * t
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    let mid = v.len() / 2;
    let (_, hi, _) = v.select_nth_unstable_by(mid, f64::total_cmp);
    let hi = *hi;
    if v.len() % 2 == 1 {
        hi
    } else {
        let lo = v[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lo + hi)
    }
}

/// Median absolute deviation about the median.
pub fn mad(values: &[f64]) -> f64 {
    let m = median(values);
    let dev: Vec<f64> = values.iter().map(|v| (v - m).abs()).collect();
    median(&dev)
}

pub fn fit_irwls(
    spec: &ModelSpec,
    grid: &DomainGrid,
    d: &RangeField,
    config: &IrwlsConfig,
) -> Result<FitReport> {
    check_field(spec, grid, d)?;
    config.validate()?;
    let design = build_design_matrix(spec, grid)?;
    let (m, r) = (spec.num_coeffs(), spec.range_dim());
    let mut theta = lstsq(design.data(), design.rows(), m, d.values())?;
    // Residual scales below this are treated as an exact fit.
    let scale_floor = 1e-12 * (1.0 + d.values().iter().fold(0.0f64, |a, v| a.max(v.abs())));

    let weights_for = |res: &[f64]| -> Vec<f64> {
        let scale = (MAD_TO_SIGMA * mad(res)).max(scale_floor);
        res.iter()
            .map(|&e| tukey_weight(e, scale, config.tuning_constant))
            .collect()
    };

    let mut used = 0;
    for _ in 0..config.max_iterations {
        used += 1;
        let w = weights_for(&point_residuals(&design, &theta, d));
        if w.iter().all(|&v| v == 0.0) {
            return Err(Error::DegenerateWeights);
        }
        let row_w: Vec<f64> = w.iter().flat_map(|&v| std::iter::repeat_n(v, r)).collect();
        let next = weighted_lstsq(design.data(), design.rows(), m, d.values(), &row_w)?;
        let step = next
            .iter()
            .zip(&theta)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        theta = next;
        if step < config.convergence_tol {
            break;
        }
    }
    let res = point_residuals(&design, &theta, d);
    Ok(FitReport {
        inlier_mask: weights_for(&res).iter().map(|&w| w > 0.5).collect(),
        final_residual_norm: residual_norm(&res),
        theta_hat: theta.into(),
        iterations_used: used,
    })
}

/// Anything that maps an observed field on a grid to polynomial coefficients.
pub trait Regressor: Send + Sync {
    fn name(&self) -> String;

    fn spec(&self) -> ModelSpec;

    /// Grid shape the method is tied to, if any (trained networks are).
    fn native_grid(&self) -> Option<crate::poly::GridShape> {
        None
    }

    fn regress(&self, grid: &DomainGrid, field: &RangeField) -> Result<CoefficientVector>;
}

#[derive(Debug, Clone, PartialEq)]
pub enum ClassicalMethod {
    Lse,
    Ransac(RansacConfig),
    Irwls(IrwlsConfig),
}

/// A classical estimator bound to a model family.
#[derive(Debug, Clone)]
pub struct Classical {
    pub spec: ModelSpec,
    pub method: ClassicalMethod,
}

impl Classical {
    pub fn lse(spec: ModelSpec) -> Self {
        Self {
            spec,
            method: ClassicalMethod::Lse,
        }
    }

    pub fn ransac(spec: ModelSpec, config: RansacConfig) -> Self {
        Self {
            spec,
            method: ClassicalMethod::Ransac(config),
        }
    }

    pub fn irwls(spec: ModelSpec, config: IrwlsConfig) -> Self {
        Self {
            spec,
            method: ClassicalMethod::Irwls(config),
        }
    }
}

impl Regressor for Classical {
    fn name(&self) -> String {
        match self.method {
            ClassicalMethod::Lse => "LSE",
            ClassicalMethod::Ransac(_) => "RANSAC",
            ClassicalMethod::Irwls(_) => "IRWLS",
        }
        .to_string()
    }

    fn spec(&self) -> ModelSpec {
        self.spec
    }

    fn regress(&self, grid: &DomainGrid, field: &RangeField) -> Result<CoefficientVector> {
        match &self.method {
            ClassicalMethod::Lse => fit_lse(&self.spec, grid, field),
            ClassicalMethod::Ransac(c) => Ok(fit_ransac(&self.spec, grid, field, c)?.theta_hat),
            ClassicalMethod::Irwls(c) => Ok(fit_irwls(&self.spec, grid, field, c)?.theta_hat),
        }
    }
}
