//! Gradient diagnostics on random instances: analytic gradients against
//! central finite differences, and the MCMC estimator against the exact
//! two-layer gradient.

use rand::Rng;

use crate::error::{Error, Result};
use crate::likelihood::{finite_diff_grad, grad, Batch, GradientSet};
use crate::mcmc::{mcmc_grad, McmcConfig};
use crate::model::{Architecture, ConditionalModel};
use crate::rng;

pub const FD_EPS: f64 = 1e-5;
/// Denominator floor of the relative error, so that entries that are zero
/// up to rounding do not dominate.
pub const FD_FLOOR: f64 = 1e-6;

/// Exact-reference enumeration limit for diagnostics. Finite differences
/// cost two likelihood evaluations per parameter, each enumerating `2^l`
/// configurations, so the limit is well below the training budget.
pub const MAX_DIAGNOSTIC_LATENT: usize = 10;

#[derive(Clone, Debug, PartialEq)]
pub struct FdInstance {
    pub k: usize,
    pub architecture: Architecture,
    pub max_rel_error: f64,
}

/// Random instance `i` of the finite-difference check: even indices are
/// single-layer (`k ≤ 6`, `m ≤ 4`), odd indices two-layer (`m1 ≤ 3`,
/// `l ≤ 4`, `m2 ≤ 3`).
pub fn fd_instance(seed: u64, i: usize) -> Result<FdInstance> {
    let mut r = rng::stream(seed, i as u64);
    let k = r.random_range(0..=6);
    let architecture = if i.is_multiple_of(2) {
        Architecture::Single {
            m: r.random_range(1..=4),
        }
    } else {
        Architecture::Two {
            m1: r.random_range(1..=3),
            l: r.random_range(1..=4),
            m2: r.random_range(1..=3),
        }
    };
    let cm = ConditionalModel::random_uniform(k, architecture, 1.0, &mut r)?;
    let rows: Vec<Vec<u8>> = (0..12)
        .map(|_| (0..=k).map(|_| u8::from(r.random_bool(0.5))).collect())
        .collect();
    let batch = Batch::from_rows(k, rows.iter().map(Vec::as_slice))?;
    let analytic = grad(&cm, &batch)?;
    let numeric = finite_diff_grad(&cm, &batch, FD_EPS)?;
    Ok(FdInstance {
        k,
        architecture,
        max_rel_error: analytic.max_relative_error(&numeric, FD_FLOOR),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct McmcStudy {
    pub k: usize,
    pub m1: usize,
    pub l: usize,
    pub m2: usize,
    pub batch_size: usize,
    pub trials: usize,
    pub rounds: Vec<usize>,
    pub steps: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct McmcRow {
    pub rounds: usize,
    pub steps: usize,
    /// Mean over trials of `‖ĝ − g‖₂`.
    pub mean_l2_error: f64,
    /// `mean_l2_error / ‖g‖₂`.
    pub mean_rel_error: f64,
    /// `‖mean(ĝ) − g‖₂ / ‖g‖₂`.
    pub mean_estimate_rel_error: f64,
}

/// The study's conditional and batch. Targets are all one, which keeps the
/// exact gradient well away from zero; prefixes are uniform.
pub fn mcmc_instance(study: &McmcStudy) -> Result<(ConditionalModel, Vec<Vec<u8>>)> {
    let mut r = rng::stream(study.seed, u64::MAX);
    let arch = Architecture::Two {
        m1: study.m1,
        l: study.l,
        m2: study.m2,
    };
    let cm = ConditionalModel::random_uniform(study.k, arch, 1.0, &mut r)?;
    let rows = (0..study.batch_size)
        .map(|_| {
            let mut row: Vec<u8> = (0..study.k).map(|_| u8::from(r.random_bool(0.5))).collect();
            row.push(1);
            row
        })
        .collect();
    Ok((cm, rows))
}

pub fn mcmc_study(study: &McmcStudy) -> Result<(GradientSet, Vec<McmcRow>)> {
    if study.l > MAX_DIAGNOSTIC_LATENT {
        return Err(Error::EnumerationBudget {
            latent: study.l,
            limit: MAX_DIAGNOSTIC_LATENT,
        });
    }
    if study.trials == 0 || study.batch_size == 0 {
        return Err(Error::InvalidArgument("trials and batch size must be positive".into()));
    }
    let (cm, rows) = mcmc_instance(study)?;
    let batch = Batch::from_rows(study.k, rows.iter().map(Vec::as_slice))?;
    let exact = grad(&cm, &batch)?;
    let norm = exact.l2_norm();
    let mut out = Vec::new();
    for &rounds in &study.rounds {
        let mut mean = GradientSet::zeros_like(&cm);
        let mut err = 0.0;
        for trial in 0..study.trials {
            let seed = study.seed ^ ((rounds as u64) << 32) ^ trial as u64;
            let est = mcmc_grad(&cm, &batch, &McmcConfig::new(rounds, study.steps, seed)?)?;
            err += est.l2_distance(&exact);
            mean.add_scaled(&est, 1.0 / study.trials as f64);
        }
        let mean_l2_error = err / study.trials as f64;
        out.push(McmcRow {
            rounds,
            steps: study.steps,
            mean_l2_error,
            mean_rel_error: mean_l2_error / norm,
            mean_estimate_rel_error: mean.l2_distance(&exact) / norm,
        });
    }
    Ok((exact, out))
}
