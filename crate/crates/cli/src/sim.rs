//! Replicated simulation runs shared by `bench` and `sweep-bandwidth`.

use emlreg::losses::LossKind;
use emlreg::neuralnet::predict;
use emlreg::simbench::{
    compute_bias_sd_rmse, generate_scenario, generate_test_set, prediction_error, MetricsReport, ScenarioLabel,
};
use emlreg::trainer::{train, Init, TrainConfig};
use emlreg::Matrix;

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::jobs::run_jobs;

/// What one trained replication contributes to the metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationOutcome {
    /// Eval-mode predictions on the fixed grid.
    pub grid_predictions: Vec<f64>,
    /// Prediction error on the replication's held-out test set.
    pub pe: f64,
    pub epochs_run: usize,
}

/// Train replication `r` of the configured scenario under `loss`.
pub fn run_replication(cfg: &RunConfig, loss: &LossKind, r: usize) -> Result<ReplicationOutcome> {
    let scenario = generate_scenario(&cfg.scenario, r)?;
    let net = cfg.network(cfg.scenario.d)?;
    let train_cfg = TrainConfig {
        seed: cfg.scenario.replication_seed(r),
        ..cfg.train.clone()
    };
    let report = train(&scenario.train, loss, &net, &train_cfg, Init::Fresh)?;
    let grid_predictions = predict(&net, &report.model, &scenario.grid.x)?;
    let test = generate_test_set(&cfg.scenario, r)?;
    let pe = prediction_error(&net, &report.model, &test)?;
    Ok(ReplicationOutcome {
        grid_predictions,
        pe,
        epochs_run: report.epochs_run,
    })
}

/// All replications for every loss, grouped by loss in input order.
pub fn simulate(cfg: &RunConfig, losses: &[LossKind], jobs: usize) -> Result<Vec<Vec<ReplicationOutcome>>> {
    let reps = cfg.scenario.replications;
    let flat = run_jobs(jobs, losses.len() * reps, |i| run_replication(cfg, &losses[i / reps], i % reps))?;
    let mut grouped = Vec::with_capacity(losses.len());
    let mut it = flat.into_iter();
    for _ in losses {
        grouped.push(it.by_ref().take(reps).collect());
    }
    Ok(grouped)
}

/// Noiseless target on the fixed grid.
pub fn grid_truth(cfg: &RunConfig) -> Result<Vec<f64>> {
    let grid = generate_scenario(&cfg.scenario, 0)?.grid;
    Ok(grid.g_true.expect("grid carries the true target"))
}

/// Grid metrics and mean prediction error over replications.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub metrics: MetricsReport,
    pub mean_pe: f64,
}

pub fn summarize(cfg: &RunConfig, loss: &LossKind, outcomes: &[ReplicationOutcome], g_true: &[f64]) -> Result<Summary> {
    let reps = outcomes.len();
    let data: Vec<f64> = outcomes.iter().flat_map(|o| o.grid_predictions.iter().copied()).collect();
    let predictions = Matrix::new(reps, g_true.len(), data)?;
    let mut metrics = compute_bias_sd_rmse(&predictions, g_true)?;
    metrics.label = ScenarioLabel {
        loss: loss.name().to_string(),
        p: cfg.scenario.p,
        d: cfg.scenario.d,
        n: cfg.scenario.n,
        error: cfg.scenario.error.name().to_string(),
        replications: reps,
    };
    let mean_pe = outcomes.iter().map(|o| o.pe).sum::<f64>() / reps as f64;
    Ok(Summary { metrics, mean_pe })
}

pub(crate) fn require_replications(cfg: &RunConfig) -> Result<()> {
    if cfg.scenario.replications < 2 {
        return Err(CliError::usage(format!(
            "bias/SD need at least 2 replications, got {}",
            cfg.scenario.replications
        )));
    }
    Ok(())
}
