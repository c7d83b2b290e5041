//! Plain SGD over the `n` independent conditional objectives.
//!
//! Each conditional owns its parameters and its random stream
//! (`rng::conditional_stream(seed, k)`), which drives initialization, the
//! per-epoch shuffles and MCMC seeds in that order. Nothing is shared between
//! conditionals, so serial and parallel schedules give identical results.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::likelihood::{self, Batch};
use crate::mcmc::{self, McmcConfig};
use crate::model::{Architecture, ConditionalModel, SwitchNetworkModel, MAX_EXACT_LATENT};
use crate::rng::{self, Stream};

/// Draws per sample for the training NLL of conditionals too wide to
/// enumerate.
pub const SAMPLED_NLL_DRAWS: usize = 256;
const NLL_STREAM: u64 = 0x6e6c_6c5f_6d63;

/// Parameters beyond this magnitude abort training.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradientMode {
    Exact,
    /// `rounds` chains of `steps` Metropolis–Hastings steps per sample.
    Mcmc {
        rounds: usize,
        steps: usize,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub architecture: Architecture,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub gradient_mode: GradientMode,
    /// Write a checkpoint every this many epochs (0 disables).
    pub checkpoint_every: usize,
    /// Train conditionals concurrently.
    pub parallel: bool,
}

impl TrainConfig {
    pub fn new(architecture: Architecture) -> Self {
        Self {
            architecture,
            epochs: 100,
            batch_size: 1000,
            learning_rate: 10.0,
            seed: 0,
            gradient_mode: GradientMode::Exact,
            checkpoint_every: 0,
            parallel: false,
        }
    }

    /// Checks everything that does not depend on the dataset.
    pub fn validate(&self) -> Result<()> {
        self.architecture
            .validate()
            .map_err(|e| Error::InvalidConfig(e.to_string()))?;
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "learning_rate must be finite and nonnegative, got {}",
                self.learning_rate
            )));
        }
        match self.gradient_mode {
            GradientMode::Exact => {
                let l = self.architecture.latent();
                if l > MAX_EXACT_LATENT {
                    return Err(Error::EnumerationBudget {
                        latent: l,
                        limit: MAX_EXACT_LATENT,
                    });
                }
            }
            GradientMode::Mcmc { rounds, steps } => {
                if !self.architecture.is_two_layer() {
                    return Err(Error::InvalidConfig(
                        "mcmc gradient mode requires a two-layer architecture".into(),
                    ));
                }
                McmcConfig::new(rounds, steps, 0).map_err(|e| Error::InvalidConfig(e.to_string()))?;
            }
        }
        Ok(())
    }

    pub fn validate_for(&self, dataset: &Dataset) -> Result<()> {
        self.validate()?;
        if self.batch_size > dataset.len() {
            return Err(Error::InvalidConfig(format!(
                "batch_size {} exceeds the dataset size {}",
                self.batch_size,
                dataset.len()
            )));
        }
        Ok(())
    }
}

/// Training NLL after one epoch; epoch 0 is the initialization.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRecord {
    pub epoch: usize,
    /// `−Σ_k L^(k)` in nats per data vector. Two-layer conditionals with
    /// more than 16 intermediate variables contribute a sampled estimate
    /// (see [`likelihood::loglik_sampled`]).
    pub nll_total: f64,
    /// `−L^(k)` for each conditional.
    pub per_k: Vec<f64>,
    /// Wall-clock seconds since training started.
    pub seconds: f64,
}

/// SGD state of a single conditional.
struct ConditionalTrainer<'a> {
    model: ConditionalModel,
    rng: Stream,
    order: Vec<usize>,
    rows: &'a [Vec<u8>],
    full: Batch<'a>,
    seed: u64,
}

impl<'a> ConditionalTrainer<'a> {
    fn new(k: usize, dataset: &'a Dataset, config: &TrainConfig) -> Result<Self> {
        let mut rng = rng::conditional_stream(config.seed, k);
        let model = ConditionalModel::init(k, config.architecture, &mut rng)?;
        let rows = dataset.rows();
        let full = Batch::from_rows(k, rows.iter().map(Vec::as_slice))?;
        Ok(Self {
            model,
            rng,
            order: (0..rows.len()).collect(),
            rows,
            full,
            seed: config.seed,
        })
    }

    fn k(&self) -> usize {
        self.model.index()
    }

    fn nll(&self) -> Result<f64> {
        if self.model.architecture().latent() > MAX_EXACT_LATENT {
            // common random numbers across epochs keep the trace comparable
            let mut r = rng::stream(self.seed ^ NLL_STREAM, self.k() as u64);
            return Ok(-likelihood::loglik_sampled(
                &self.model,
                &self.full,
                SAMPLED_NLL_DRAWS,
                &mut r,
            )?);
        }
        Ok(-likelihood::loglik(&self.model, &self.full)?)
    }

    fn epoch(&mut self, epoch: usize, config: &TrainConfig) -> Result<f64> {
        let k = self.k();
        self.order.shuffle(&mut self.rng);
        for chunk in self.order.chunks(config.batch_size) {
            let batch = Batch::from_rows(k, chunk.iter().map(|&i| self.rows[i].as_slice()))?;
            let grad = match config.gradient_mode {
                GradientMode::Exact => likelihood::grad(&self.model, &batch)?,
                GradientMode::Mcmc { rounds, steps } => {
                    let cfg = McmcConfig::new(rounds, steps, self.rng.random())?;
                    mcmc::mcmc_grad(&self.model, &batch, &cfg)?
                }
            };
            if !grad.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite gradient for conditional {k} at epoch {epoch}"
                )));
            }
            likelihood::ascend(&mut self.model, &grad, config.learning_rate);
            let peak = self.model.max_abs_param();
            // NaN counts as divergence.
            #[allow(clippy::neg_cmp_op_on_partial_ord)]
            if !(peak <= DIVERGENCE_LIMIT) {
                return Err(Error::Diverged {
                    k,
                    epoch,
                    reason: format!("parameter magnitude {peak:e} exceeds {DIVERGENCE_LIMIT:e}"),
                });
            }
        }
        self.nll()
    }
}

/// Trains conditional `k` alone; returns its parameters and the NLL trace
/// (`trace[0]` is the initial value).
pub fn train_conditional(k: usize, dataset: &Dataset, config: &TrainConfig) -> Result<(ConditionalModel, Vec<f64>)> {
    config.validate_for(dataset)?;
    if k >= dataset.n() {
        return Err(Error::InvalidArgument(format!(
            "conditional {k} out of range for n = {}",
            dataset.n()
        )));
    }
    let mut t = ConditionalTrainer::new(k, dataset, config)?;
    let mut trace = vec![t.nll()?];
    for epoch in 1..=config.epochs {
        trace.push(t.epoch(epoch, config)?);
    }
    Ok((t.model, trace))
}

/// Epoch-by-epoch trainer over every conditional.
pub struct Trainer<'a> {
    config: TrainConfig,
    architecture: Architecture,
    conditionals: Vec<ConditionalTrainer<'a>>,
    epoch: usize,
    started: Instant,
}

impl<'a> Trainer<'a> {
    pub fn new(dataset: &'a Dataset, config: &TrainConfig) -> Result<Self> {
        config.validate_for(dataset)?;
        let conditionals = (0..dataset.n())
            .map(|k| ConditionalTrainer::new(k, dataset, config))
            .collect::<Result<_>>()?;
        Ok(Self {
            config: config.clone(),
            architecture: config.architecture,
            conditionals,
            epoch: 0,
            started: Instant::now(),
        })
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn is_done(&self) -> bool {
        self.epoch >= self.config.epochs
    }

    fn record(&self, per_k: Vec<f64>) -> MetricsRecord {
        MetricsRecord {
            epoch: self.epoch,
            nll_total: per_k.iter().sum(),
            per_k,
            seconds: self.started.elapsed().as_secs_f64(),
        }
    }

    /// Metrics of the current parameters without training.
    pub fn evaluate(&self) -> Result<MetricsRecord> {
        let per_k = self
            .conditionals
            .iter()
            .map(ConditionalTrainer::nll)
            .collect::<Result<Vec<_>>>()?;
        Ok(self.record(per_k))
    }

    /// Runs one more epoch for every conditional.
    pub fn step(&mut self) -> Result<MetricsRecord> {
        let epoch = self.epoch + 1;
        let config = &self.config;
        let per_k = if config.parallel {
            self.conditionals
                .par_iter_mut()
                .map(|t| t.epoch(epoch, config))
                .collect::<Result<Vec<_>>>()?
        } else {
            self.conditionals
                .iter_mut()
                .map(|t| t.epoch(epoch, config))
                .collect::<Result<Vec<_>>>()?
        };
        self.epoch = epoch;
        Ok(self.record(per_k))
    }

    /// Snapshot of the current parameters.
    pub fn model(&self) -> Result<SwitchNetworkModel> {
        SwitchNetworkModel::new(
            self.architecture,
            self.conditionals.iter().map(|t| t.model.clone()).collect(),
        )
    }

    pub fn into_model(self) -> Result<SwitchNetworkModel> {
        SwitchNetworkModel::new(
            self.architecture,
            self.conditionals.into_iter().map(|t| t.model).collect(),
        )
    }
}

/// Trains all conditionals for `config.epochs` epochs. `on_epoch` sees the
/// initial record (epoch 0) and every epoch after it, together with the
/// trainer so it can snapshot checkpoints.
pub fn train_all<F>(dataset: &Dataset, config: &TrainConfig, mut on_epoch: F) -> Result<SwitchNetworkModel>
where
    F: FnMut(&MetricsRecord, &Trainer<'_>) -> Result<()>,
{
    let mut trainer = Trainer::new(dataset, config)?;
    let initial = trainer.evaluate()?;
    on_epoch(&initial, &trainer)?;
    while !trainer.is_done() {
        let record = trainer.step()?;
        on_epoch(&record, &trainer)?;
    }
    trainer.into_model()
}
