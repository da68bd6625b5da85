//! Monte Carlo least-squares experiments with a known ground truth.
//!
//! A trial draws `M·K` equations `y = x·w* + ε` in `P` shared unknowns, with
//! standard-normal rows `x`, standard-normal `w*` and `ε ~ N(0, σ²)`, then
//! fits `ŵ` by minimum-norm least squares through an SVD. The training MSE
//! is the residual over those equations, the test MSE is measured on
//! `M·K_test` fresh equations with fresh noise.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::capacity::{determination_ratio, train_mse_theory, DeterminationInputs, DeterminationRatio};
use crate::seed::derive_seed;
use crate::table::fmt_float;

pub const DEFAULT_K_TEST: usize = 10_000;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OracleError {
    #[error("invalid linear experiment: {0}")]
    Config(String),
    #[error("K list must be non-empty and strictly ascending")]
    KList,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearExperimentConfig {
    /// Unknowns (parameters).
    pub p: usize,
    /// Outputs per sample.
    pub m: usize,
    pub k_train: usize,
    #[serde(default = "default_k_test")]
    pub k_test: usize,
    /// Noise standard deviation.
    pub sigma: f64,
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_k_test() -> usize {
    DEFAULT_K_TEST
}

impl LinearExperimentConfig {
    pub fn validate(&self) -> Result<(), OracleError> {
        let bad = |m: &str| Err(OracleError::Config(m.into()));
        if self.p == 0 || self.m == 0 || self.k_train == 0 || self.k_test == 0 {
            return bad("p, m, k_train and k_test must be positive");
        }
        if self.trials == 0 {
            return bad("trials must be at least 1");
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return bad("sigma must be finite and non-negative");
        }
        Ok(())
    }

    pub fn equations(&self) -> usize {
        self.m * self.k_train
    }

    /// Fewer equations than unknowns; the minimum-norm solution is used.
    pub fn underdetermined(&self) -> bool {
        self.equations() < self.p
    }

    pub fn ratio(&self) -> DeterminationRatio {
        determination_ratio(&DeterminationInputs {
            m: self.m as u64,
            k: self.k_train as u64,
            p: self.p as u64,
        })
        .expect("validated config")
    }

    pub fn trial_seed(&self, trial: usize) -> u64 {
        derive_seed(self.seed, &[trial as u64])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub train_mse: f64,
    pub test_mse: f64,
    /// Numerical rank of the training design.
    pub rank: usize,
    /// Mean squared target over the training set.
    pub signal_power: f64,
}

impl TrialOutcome {
    pub fn rank_deficient(&self, cfg: &LinearExperimentConfig) -> bool {
        self.rank < cfg.p.min(cfg.equations())
    }
}

fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    // Row-major draw order, independent of nalgebra's column-major storage.
    let data: Vec<f64> = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
    DMatrix::from_row_slice(rows, cols, &data)
}

fn noise(rng: &mut ChaCha8Rng, n: usize, sigma: f64) -> DVector<f64> {
    DVector::from_iterator(n, (0..n).map(|_| sigma * rng.sample::<f64, _>(StandardNormal)))
}

/// One trial seeded directly by `trial_seed`.
pub fn run_trial(cfg: &LinearExperimentConfig, trial_seed: u64) -> Result<TrialOutcome, OracleError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(trial_seed);
    let (n, p) = (cfg.equations(), cfg.p);
    let truth = DVector::from_iterator(p, (0..p).map(|_| rng.sample::<f64, _>(StandardNormal)));
    let x = normal_matrix(&mut rng, n, p);
    let clean = &x * &truth;
    let y = &clean + noise(&mut rng, n, cfg.sigma);

    let svd = x.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let cutoff = f64::EPSILON * n.max(p) as f64 * smax;
    let rank = svd.rank(cutoff);
    let fit = svd.solve(&y, cutoff).map_err(|e| OracleError::Config(e.to_string()))?;

    let train_mse = (&x * &fit - &y).norm_squared() / n as f64;
    let n_test = cfg.m * cfg.k_test;
    let x_test = normal_matrix(&mut rng, n_test, p);
    let y_test = &x_test * &truth + noise(&mut rng, n_test, cfg.sigma);
    let test_mse = (&x_test * &fit - &y_test).norm_squared() / n_test as f64;
    Ok(TrialOutcome {
        train_mse,
        test_mse,
        rank,
        signal_power: y.norm_squared() / n as f64,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub stderr: f64,
}

impl Summary {
    /// Accumulates in slice order, so equal inputs give bit-equal output.
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = if values.len() > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Self {
            mean,
            std: var.sqrt(),
            stderr: (var / n).sqrt(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearExperimentResult {
    pub config: LinearExperimentConfig,
    pub q: DeterminationRatio,
    pub trials: Vec<TrialOutcome>,
    pub train: Summary,
    pub test: Summary,
    /// Expected training MSE from the analytic law.
    pub predicted_train_mse: f64,
    pub noise_floor: f64,
    pub underdetermined: bool,
    pub rank_deficient_trials: usize,
}

/// Runs every trial (in parallel) and aggregates in trial order.
pub fn run_experiment(cfg: &LinearExperimentConfig) -> Result<LinearExperimentResult, OracleError> {
    cfg.validate()?;
    let trials = (0..cfg.trials)
        .into_par_iter()
        .map(|t| run_trial(cfg, cfg.trial_seed(t)))
        .collect::<Result<Vec<_>, _>>()?;
    let train: Vec<f64> = trials.iter().map(|t| t.train_mse).collect();
    let test: Vec<f64> = trials.iter().map(|t| t.test_mse).collect();
    let q = cfg.ratio();
    let noise_floor = cfg.sigma * cfg.sigma;
    Ok(LinearExperimentResult {
        q,
        train: Summary::of(&train),
        test: Summary::of(&test),
        predicted_train_mse: train_mse_theory(q.value(), noise_floor),
        noise_floor,
        underdetermined: cfg.underdetermined(),
        rank_deficient_trials: trials.iter().filter(|t| t.rank_deficient(cfg)).count(),
        trials,
        config: cfg.clone(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub k_train: usize,
    pub q: DeterminationRatio,
    pub train_mean: f64,
    pub test_mean: f64,
    pub train_stderr: f64,
    pub test_stderr: f64,
    pub predicted_train_mse: f64,
    pub noise_floor: f64,
}

/// One experiment per `K`, each with `cfg`'s seed.
pub fn sweep_over_k(cfg: &LinearExperimentConfig, k_list: &[usize]) -> Result<Vec<SweepPoint>, OracleError> {
    if k_list.is_empty() || !k_list.windows(2).all(|w| w[0] < w[1]) {
        return Err(OracleError::KList);
    }
    k_list
        .iter()
        .map(|&k_train| {
            let r = run_experiment(&LinearExperimentConfig { k_train, ..cfg.clone() })?;
            Ok(SweepPoint {
                k_train,
                q: r.q,
                train_mean: r.train.mean,
                test_mean: r.test.mean,
                train_stderr: r.train.stderr,
                test_stderr: r.test.stderr,
                predicted_train_mse: r.predicted_train_mse,
                noise_floor: r.noise_floor,
            })
        })
        .collect()
}

pub const SWEEP_HEADER: &str = "determination loss val_loss predicted_loss noise_floor loss_stderr val_loss_stderr";

/// Whitespace table, one row per point, `determination loss val_loss` first.
pub fn format_sweep(points: &[SweepPoint]) -> String {
    let mut out = String::from(SWEEP_HEADER);
    out.push('\n');
    for p in points {
        let row = [
            p.q.value(),
            p.train_mean,
            p.test_mean,
            p.predicted_train_mse,
            p.noise_floor,
            p.train_stderr,
            p.test_stderr,
        ];
        out.push_str(&row.map(fmt_float).join(" "));
        out.push('\n');
    }
    out
}
