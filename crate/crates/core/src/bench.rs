//! Outlier-ratio sweeps comparing regression methods on paired synthetic trials.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::datagen::{derive_seed, generate_pair, GenScheme};
use crate::error::{invalid, Error, Result};
use crate::estimators::Regressor;
use crate::poly::{DomainGrid, FixedDecoder, ModelSpec, RangeField};

/// How a fitted field is scored against the clean one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorMetric {
    /// Mean squared error (scalar fields).
    Mse,
    /// Mean per-point Euclidean distance (vector fields).
    MeanEuclidean,
}

impl ErrorMetric {
    pub fn for_spec(spec: &ModelSpec) -> Self {
        if spec.range_dim() == 1 {
            ErrorMetric::Mse
        } else {
            ErrorMetric::MeanEuclidean
        }
    }

    pub fn eval(&self, estimate: &RangeField, clean: &RangeField) -> f64 {
        match self {
            ErrorMetric::Mse => estimate.mse(clean),
            ErrorMetric::MeanEuclidean => estimate.mean_euclidean(clean),
        }
    }
}

pub const DEFAULT_RATIOS: [f64; 6] = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5];

#[derive(Debug, Clone)]
pub struct BenchSuite {
    pub spec: ModelSpec,
    pub grid: DomainGrid,
    pub ratios: Vec<f64>,
    pub noise_sigma: f64,
    pub trials: usize,
    pub seed: u64,
    /// Worker threads; `0` uses the global pool.
    pub jobs: usize,
}

impl BenchSuite {
    /// Defaults: 64-point line with noise 0.01 for scalar models, 32×32
    /// lattice with noise 0.5 for motion models; 200 trials per cell.
    pub fn new(spec: ModelSpec) -> Result<Self> {
        let (grid, noise) = if spec.domain_dim() == 1 {
            (DomainGrid::line(64)?, 0.01)
        } else {
            (DomainGrid::lattice(32, 32)?, 0.5)
        };
        Ok(Self {
            spec,
            grid,
            ratios: DEFAULT_RATIOS.to_vec(),
            noise_sigma: noise,
            trials: 200,
            seed: 0,
            jobs: 0,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(invalid("a suite needs at least one trial per cell"));
        }
        if self.ratios.iter().any(|r| !(0.0..1.0).contains(r)) {
            return Err(invalid("outlier ratios must lie in [0, 1)"));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(invalid("noise must be non-negative"));
        }
        Ok(())
    }

    /// Seed of trial `trial` in ratio column `column`; shared by every method.
    pub fn trial_seed(&self, column: usize, trial: usize) -> u64 {
        derive_seed(derive_seed(self.seed, column as u64), trial as u64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub method: String,
    pub ratio: f64,
    pub mean: f64,
    pub std: f64,
    /// Successful trials.
    pub trials: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchResults {
    pub methods: Vec<String>,
    pub ratios: Vec<f64>,
    /// Row-major by method, then ratio.
    pub cells: Vec<CellResult>,
}

impl BenchResults {
    pub fn cell(&self, method: usize, column: usize) -> &CellResult {
        &self.cells[method * self.ratios.len() + column]
    }

    pub fn find(&self, method: &str, ratio: f64) -> Option<&CellResult> {
        self.cells.iter().find(|c| c.method == method && c.ratio == ratio)
    }

    /// Plain mean of a method's cell means across the ratio columns.
    pub fn average(&self, method: usize) -> f64 {
        let n = self.ratios.len().max(1) as f64;
        (0..self.ratios.len()).map(|k| self.cell(method, k).mean).sum::<f64>() / n
    }

    /// Index of the best (lowest mean) method per column, then for the average.
    pub fn best_per_column(&self) -> Vec<Option<usize>> {
        let argmin = |score: &dyn Fn(usize) -> f64| {
            (0..self.methods.len())
                .filter(|&m| score(m).is_finite())
                .min_by(|&a, &b| score(a).total_cmp(&score(b)))
        };
        let mut out: Vec<Option<usize>> = (0..self.ratios.len())
            .map(|k| argmin(&|m| self.cell(m, k).mean))
            .collect();
        out.push(argmin(&|m| self.average(m)));
        out
    }

    pub fn any_failures(&self) -> bool {
        self.cells.iter().any(|c| c.failures > 0)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("method,ratio,mean,std,trials\n");
        for c in &self.cells {
            let _ = writeln!(s, "{},{},{},{},{}", c.method, c.ratio, c.mean, c.std, c.trials);
        }
        s
    }

    /// Text table with an average column; `*` marks the best entry per column.
    pub fn to_table(&self) -> String {
        let best = self.best_per_column();
        let mut s = format!("{:<24}", "method");
        for r in &self.ratios {
            let _ = write!(s, "{:>14}", format!("{:.0}%", r * 100.0));
        }
        let _ = writeln!(s, "{:>14}", "Average");
        for (m, name) in self.methods.iter().enumerate() {
            let _ = write!(s, "{name:<24}");
            let mark = |col: usize| if best[col] == Some(m) { "*" } else { " " };
            for k in 0..self.ratios.len() {
                let _ = write!(s, "{:>13.4e}{}", self.cell(m, k).mean, mark(k));
            }
            let _ = writeln!(s, "{:>13.4e}{}", self.average(m), mark(self.ratios.len()));
        }
        s
    }
}

/// Runs every method on every trial of every ratio column.
pub fn run_suite(suite: &BenchSuite, methods: &[&dyn Regressor]) -> Result<BenchResults> {
    suite.validate()?;
    for m in methods {
        if m.spec() != suite.spec {
            return Err(Error::Config(format!(
                "method {} regresses {} models, suite uses {}",
                m.name(),
                m.spec(),
                suite.spec
            )));
        }
        if let Some(native) = m.native_grid() {
            if native != suite.grid.shape() {
                return Err(Error::Config(format!(
                    "method {} is bound to grid {native}, suite uses {}",
                    m.name(),
                    suite.grid.shape()
                )));
            }
        }
    }
    let decoder = FixedDecoder::new(suite.spec, suite.grid.clone())?;
    let metric = ErrorMetric::for_spec(&suite.spec);

    let units: Vec<(usize, usize)> = (0..suite.ratios.len())
        .flat_map(|k| (0..suite.trials).map(move |t| (k, t)))
        .collect();
    let run_unit = |&(k, t): &(usize, usize)| -> Vec<Option<f64>> {
        let scheme = GenScheme::evaluation(&suite.spec, suite.ratios[k], suite.noise_sigma);
        let mut rng = ChaCha8Rng::seed_from_u64(suite.trial_seed(k, t));
        let pair = generate_pair(&decoder, &scheme, &mut rng);
        methods
            .iter()
            .map(|m| {
                let theta = m.regress(&suite.grid, &pair.input).ok()?;
                let est = decoder.decode(&theta).ok()?;
                Some(metric.eval(&est, &pair.target)).filter(|e| e.is_finite())
            })
            .collect()
    };
    let errors: Vec<Vec<Option<f64>>> = if suite.jobs == 0 {
        units.par_iter().map(run_unit).collect()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(suite.jobs)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?
            .install(|| units.par_iter().map(run_unit).collect())
    };

    let mut cells = Vec::with_capacity(methods.len() * suite.ratios.len());
    for (mi, m) in methods.iter().enumerate() {
        for (k, &ratio) in suite.ratios.iter().enumerate() {
            let vals: Vec<f64> = errors[k * suite.trials..(k + 1) * suite.trials]
                .iter()
                .filter_map(|row| row[mi])
                .collect();
            let n = vals.len();
            let mean = if n > 0 { vals.iter().sum::<f64>() / n as f64 } else { f64::NAN };
            let std = if n > 1 {
                (vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
            } else {
                0.0
            };
            cells.push(CellResult {
                method: m.name(),
                ratio,
                mean,
                std,
                trials: n,
                failures: suite.trials - n,
            });
        }
    }
    Ok(BenchResults {
        methods: methods.iter().map(|m| m.name()).collect(),
        ratios: suite.ratios.clone(),
        cells,
    })
}

/// Writes `path` as CSV and the text table next to it with a `.txt` extension.
pub fn emit_report(results: &BenchResults, path: &Path) -> Result<()> {
    fs::write(path, results.to_csv())?;
    fs::write(path.with_extension("txt"), results.to_table())?;
    Ok(())
}

/// Parses a CSV written by [`emit_report`].
pub fn read_report(path: &Path) -> Result<Vec<CellResult>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next() != Some("method,ratio,mean,std,trials") {
        return Err(Error::Format("unexpected CSV header".into()));
    }
    lines
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            let bad = || Error::Format(format!("malformed CSV row '{line}'"));
            if f.len() != 5 {
                return Err(bad());
            }
            Ok(CellResult {
                method: f[0].to_string(),
                ratio: f[1].parse().map_err(|_| bad())?,
                mean: f[2].parse().map_err(|_| bad())?,
                std: f[3].parse().map_err(|_| bad())?,
                trials: f[4].parse().map_err(|_| bad())?,
                failures: 0,
            })
        })
        .collect()
}
