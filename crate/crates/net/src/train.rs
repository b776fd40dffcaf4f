//! Training loop: seeded on-the-fly batches, Adam, curriculum phases.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use polyreg_autodiff::{Adam, Graph, Var};
use polyreg_core::bench::{run_suite, BenchResults, BenchSuite};
use polyreg_core::datagen::{derive_seed, GenScheme, PairGenerator, TrainingPair};
use polyreg_core::Regressor;

use crate::error::{config, Error, Result};
use crate::model::Model;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schedule {
    /// Mild data only.
    Data1,
    /// Mild data, then heavy data at half the learning rate. Adam moments
    /// carry across the boundary.
    Data1ThenData2,
    /// Every pair drawn from either scheme with equal probability.
    Data1Plus2,
}

impl fmt::Display for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Schedule::Data1 => "data1",
            Schedule::Data1ThenData2 => "data1-then-data2",
            Schedule::Data1Plus2 => "data1+data2",
        })
    }
}

impl FromStr for Schedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "data1" => Ok(Schedule::Data1),
            "data1-then-data2" | "curriculum" => Ok(Schedule::Data1ThenData2),
            "data1+data2" | "mixed" => Ok(Schedule::Data1Plus2),
            _ => Err(config(format!("unknown schedule '{s}' (data1, data1-then-data2, data1+data2)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossMode {
    /// MSE between each head's decoded field and the clean target,
    /// averaged over heads.
    DecodedMse,
    /// MSE on coefficients against the generating ones (no decoder in the loss).
    CoefficientMse,
    /// Tukey loss of the decoded final head against the corrupted input;
    /// never looks at the clean target.
    RobustDecoded,
}

impl fmt::Display for LossMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossMode::DecodedMse => "decoded",
            LossMode::CoefficientMse => "coefficients",
            LossMode::RobustDecoded => "robust",
        })
    }
}

impl FromStr for LossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "decoded" => Ok(LossMode::DecodedMse),
            "coefficients" => Ok(LossMode::CoefficientMse),
            "robust" => Ok(LossMode::RobustDecoded),
            _ => Err(config(format!("unknown loss '{s}' (decoded, coefficients, robust)"))),
        }
    }
}

/// Step-size schedule applied on top of the per-phase rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LrDecay {
    Constant,
    /// Half-cosine from the base rate down to zero at the last step.
    Cosine,
}

impl LrDecay {
    pub fn factor(self, step: usize, steps: usize) -> f64 {
        match self {
            LrDecay::Constant => 1.0,
            LrDecay::Cosine => 0.5 * (1.0 + (std::f64::consts::PI * step as f64 / steps.max(1) as f64).cos()),
        }
    }
}

impl fmt::Display for LrDecay {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LrDecay::Constant => "constant",
            LrDecay::Cosine => "cosine",
        })
    }
}

impl FromStr for LrDecay {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(LrDecay::Constant),
            "cosine" => Ok(LrDecay::Cosine),
            _ => Err(config(format!("unknown lr decay '{s}' (constant, cosine)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_decay: LrDecay,
    pub schedule: Schedule,
    pub loss: LossMode,
    pub seed: u64,
    /// Fraction of steps spent on the mild phase of a curriculum.
    pub phase_split: f64,
    pub tukey_c: f64,
    /// Write `step_<n>.ckpt` into `checkpoint_dir` every this many steps.
    pub checkpoint_every: Option<usize>,
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            batch_size: 16,
            lr: 1e-3,
            lr_decay: LrDecay::Constant,
            schedule: Schedule::Data1ThenData2,
            loss: LossMode::DecodedMse,
            seed: 0,
            phase_split: 0.5,
            tukey_c: 4.685,
            checkpoint_every: None,
            checkpoint_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(config("batch size must be positive"));
        }
        if !(self.lr > 0.0) || !(self.tukey_c > 0.0) {
            return Err(config("learning rate and tukey constant must be positive"));
        }
        if !(0.0..=1.0).contains(&self.phase_split) {
            return Err(config("phase split must lie in [0, 1]"));
        }
        if self.checkpoint_every == Some(0) {
            return Err(config("checkpoint interval must be positive"));
        }
        Ok(())
    }

    /// First step of the second phase (equals `steps` without one).
    pub fn phase_boundary(&self) -> usize {
        match self.schedule {
            Schedule::Data1ThenData2 => (self.steps as f64 * self.phase_split).round() as usize,
            _ => self.steps,
        }
    }

    pub fn to_pairs(&self) -> Vec<(String, String)> {
        [
            ("steps", self.steps.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("lr", self.lr.to_string()),
            ("lr_decay", self.lr_decay.to_string()),
            ("schedule", self.schedule.to_string()),
            ("loss", self.loss.to_string()),
            ("seed", self.seed.to_string()),
            ("phase_split", self.phase_split.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub step: usize,
    pub loss: f64,
    pub phase: usize,
    pub lr: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    pub records: Vec<LossRecord>,
    /// Updates applied by the single optimizer that spans every phase.
    pub optimizer_steps: u64,
}

impl TrainReport {
    pub fn final_loss(&self) -> Option<f64> {
        self.records.last().map(|r| r.loss)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,loss,phase\n");
        for r in &self.records {
            s.push_str(&format!("{},{},{}\n", r.step, r.loss, r.phase));
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// The batch for `step`; depends only on the run seed, the step and the scheme.
pub fn batch_for_step(model: &Model, cfg: &TrainConfig, step: usize) -> Result<(u64, Vec<TrainingPair>)> {
    let spec = model.config().spec;
    let scheme = match cfg.schedule {
        Schedule::Data1 => GenScheme::data1(&spec),
        Schedule::Data1ThenData2 if step < cfg.phase_boundary() => GenScheme::data1(&spec),
        Schedule::Data1ThenData2 => GenScheme::data2(&spec),
        Schedule::Data1Plus2 => GenScheme::mixed(&spec),
    };
    let batch_seed = derive_seed(cfg.seed, step as u64);
    let generator = PairGenerator::new(spec, model.decoder().grid().clone(), scheme, batch_seed)?;
    Ok((batch_seed, generator.take(cfg.batch_size).collect()))
}

fn planar_of<'a>(fields: impl Iterator<Item = &'a polyreg_core::RangeField>) -> Vec<f64> {
    fields.flat_map(|f| f.to_planar()).collect()
}

/// Records the loss of `batch` on `g`, returning the scalar loss handle and
/// the pending batch-norm statistics.
pub fn batch_loss(
    model: &Model,
    g: &mut Graph,
    batch: &[TrainingPair],
    loss: LossMode,
    tukey_c: f64,
) -> Result<(Var, crate::model::PendingStats)> {
    let input = planar_of(batch.iter().map(|p| &p.input));
    let fwd = model.forward(g, &input, batch.len(), true)?;
    let value = match loss {
        LossMode::DecodedMse | LossMode::CoefficientMse => {
            let target: Vec<f64> = match loss {
                LossMode::DecodedMse => planar_of(batch.iter().map(|p| &p.target)),
                _ => batch.iter().flat_map(|p| p.theta_true.as_slice().to_vec()).collect(),
            };
            let mut total: Option<Var> = None;
            for &h in &fwd.heads {
                let pred = if loss == LossMode::DecodedMse { model.decode_on(g, h)? } else { h };
                let l = g.mse_loss(pred, &target)?;
                total = Some(match total {
                    Some(t) => g.add(t, l)?,
                    None => l,
                });
            }
            g.scale(total.expect("at least one head"), 1.0 / fwd.heads.len() as f64)?
        }
        LossMode::RobustDecoded => {
            let decoded = model.decode_on(g, fwd.final_head())?;
            g.tukey_loss(decoded, &input, tukey_c)?
        }
    };
    Ok((value, fwd.stats))
}

fn diverged(step: usize, lr: f64, batch_seed: u64, reason: impl Into<String>) -> Error {
    Error::Diverged {
        step,
        lr,
        batch_seed,
        reason: reason.into(),
    }
}

/// Trains `model` in place. `on_step` sees every record as it is produced.
pub fn train(model: &mut Model, cfg: &TrainConfig, mut on_step: impl FnMut(&LossRecord)) -> Result<TrainReport> {
    cfg.validate()?;
    if let Some(dir) = &cfg.checkpoint_dir {
        fs::create_dir_all(dir)?;
    }
    let boundary = cfg.phase_boundary();
    let mut adam = Adam::new(cfg.lr);
    let mut report = TrainReport::default();
    for step in 0..cfg.steps {
        let phase = if step < boundary { 1 } else { 2 };
        let base = if phase == 1 { cfg.lr } else { cfg.lr * 0.5 };
        adam.lr = base * cfg.lr_decay.factor(step, cfg.steps);
        let (batch_seed, batch) = batch_for_step(model, cfg, step)?;

        let mut g = Graph::new();
        let (loss, stats) = match batch_loss(model, &mut g, &batch, cfg.loss, cfg.tukey_c) {
            Ok(v) => v,
            Err(Error::Autodiff(polyreg_autodiff::Error::NonFinite(op))) => {
                return Err(diverged(step, adam.lr, batch_seed, format!("non-finite value in {op}")))
            }
            Err(e) => return Err(e),
        };
        let value = g.value(loss).data()[0];
        if !value.is_finite() {
            return Err(diverged(step, adam.lr, batch_seed, "loss is not finite"));
        }
        let grads = g
            .backward(loss)
            .map_err(|e| diverged(step, adam.lr, batch_seed, e.to_string()))?;

        let store = model.store_mut();
        store.zero_grads();
        store.accumulate(&g, &grads);
        adam.step(store);
        model.commit_stats(stats);

        let record = LossRecord {
            step,
            loss: value,
            phase,
            lr: adam.lr,
        };
        on_step(&record);
        report.records.push(record);

        if let (Some(every), Some(dir)) = (cfg.checkpoint_every, &cfg.checkpoint_dir) {
            if (step + 1) % every == 0 {
                model.save(&dir.join(format!("step_{}.ckpt", step + 1)), &cfg.to_pairs())?;
            }
        }
    }
    report.optimizer_steps = adam.steps_taken();
    Ok(report)
}

/// Benchmarks `model` next to any other methods on its own grid, with a
/// seed the training stream never uses.
pub fn validate(
    model: &Model,
    others: &[&dyn Regressor],
    ratios: &[f64],
    noise_sigma: f64,
    trials: usize,
    seed: u64,
) -> Result<BenchResults> {
    let spec = model.config().spec;
    let mut suite = BenchSuite::new(spec)?;
    suite.grid = model.decoder().grid().clone();
    suite.ratios = ratios.to_vec();
    suite.noise_sigma = noise_sigma;
    suite.trials = trials;
    suite.seed = derive_seed(seed, u64::MAX);
    let mut methods: Vec<&dyn Regressor> = others.to_vec();
    methods.push(model);
    Ok(run_suite(&suite, &methods)?)
}
