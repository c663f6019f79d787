//! The five commands. Each validates its configuration, writes its CSV
//! outputs and a manifest into the output directory, and returns the rows.

use std::path::{Path, PathBuf};

use emlreg::kde::BandwidthRule;
use emlreg::losses::{batch_loss_and_grad, LossKind};
use emlreg::neuralnet::predict;
use emlreg::simbench::{prediction_error, residual_qq_data, Dataset, QqPoint};
use emlreg::trainer::{fine_tune, load_checkpoint, save_checkpoint, train, Init, TrainConfig};
use emlreg::{Error, RngState};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::ingest::{read_numeric_csv, Scaler};
use crate::jobs::run_jobs;
use crate::manifest::RunManifest;
use crate::sim::{grid_truth, require_replications, simulate, summarize};

pub const BENCH_FILE: &str = "bench.csv";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const REALDATA_FILE: &str = "realdata.csv";
pub const QQ_FILE: &str = "qq.csv";
pub const MODEL_FILE: &str = "model.json";
pub const SCALER_FILE: &str = "scaler.json";
pub const HISTORY_FILE: &str = "history.csv";
pub const EVALUATE_FILE: &str = "evaluate.csv";

/// Fewest rows the real-data pipeline accepts.
pub const MIN_REALDATA_ROWS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub loss: String,
    pub p: usize,
    pub d: usize,
    pub n: usize,
    pub error: String,
    pub replications: usize,
    pub bias: f64,
    pub sd: f64,
    pub rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub v: f64,
    pub bias: f64,
    pub sd: f64,
    pub rmse: f64,
    pub pe: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealDataRow {
    pub loss: String,
    pub repeats: usize,
    pub mean_pe: f64,
    /// Sample standard deviation over repeats; 0 for a single repeat.
    pub sd_pe: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluateRow {
    pub rows: usize,
    pub pe: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RealDataOutput {
    pub rows: Vec<RealDataRow>,
    /// Q-Q table of the EML model's training residuals in the last repeat.
    pub qq: Option<Vec<QqPoint>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub loss: String,
    pub epochs_run: usize,
    pub final_loss: f64,
    pub recentering_shift: f64,
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(CliError::file(path))
}

fn prepare_out(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).map_err(CliError::file(out))
}

/// Bias/SD/RMSE per loss on the configured scenario.
pub fn cmd_bench(cfg: &RunConfig, jobs: usize, out: &Path) -> Result<Vec<BenchRow>> {
    cfg.validate()?;
    require_replications(cfg)?;
    prepare_out(out)?;
    let mut manifest = RunManifest::new("bench", cfg, jobs);

    let losses = cfg.loss_kinds()?;
    let g_true = grid_truth(cfg)?;
    let outcomes = simulate(cfg, &losses, jobs)?;
    let mut rows = Vec::with_capacity(losses.len());
    for (loss, runs) in losses.iter().zip(&outcomes) {
        let s = summarize(cfg, loss, runs, &g_true)?.metrics;
        rows.push(BenchRow {
            loss: s.label.loss,
            p: s.label.p,
            d: s.label.d,
            n: s.label.n,
            error: s.label.error,
            replications: s.label.replications,
            bias: s.bias,
            sd: s.sd,
            rmse: s.rmse,
        });
    }
    write_csv(&out.join(BENCH_FILE), &rows)?;
    manifest.outputs = vec![BENCH_FILE.into()];
    manifest.finish(out)?;
    Ok(rows)
}

/// One EML benchmark per bandwidth proportion in `v_values`.
pub fn cmd_sweep_bandwidth(cfg: &RunConfig, jobs: usize, out: &Path) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    require_replications(cfg)?;
    prepare_out(out)?;
    let mut manifest = RunManifest::new("sweep-bandwidth", cfg, jobs);

    let losses: Vec<LossKind> = cfg.v_values.iter().map(|&v| LossKind::eml(BandwidthRule::knn(v))).collect();
    let g_true = grid_truth(cfg)?;
    let outcomes = simulate(cfg, &losses, jobs)?;
    let mut rows = Vec::with_capacity(losses.len());
    for ((loss, runs), &v) in losses.iter().zip(&outcomes).zip(&cfg.v_values) {
        let s = summarize(cfg, loss, runs, &g_true)?;
        rows.push(SweepRow {
            v,
            bias: s.metrics.bias,
            sd: s.metrics.sd,
            rmse: s.metrics.rmse,
            pe: s.mean_pe,
        });
    }
    write_csv(&out.join(SWEEP_FILE), &rows)?;
    manifest.outputs = vec![SWEEP_FILE.into()];
    manifest.finish(out)?;
    Ok(rows)
}

fn data_path(cfg: &RunConfig) -> Result<&Path> {
    cfg.data
        .path
        .as_deref()
        .ok_or_else(|| CliError::usage("no data file given (--data or [data] path)"))
}

fn response(cfg: &RunConfig) -> Result<&str> {
    cfg.data
        .response
        .as_deref()
        .ok_or_else(|| CliError::usage("no response column given (--response or [data] response)"))
}

fn ingest(cfg: &RunConfig) -> Result<(Dataset, Scaler)> {
    let table = read_numeric_csv(data_path(cfg)?)?;
    let scaler = Scaler::fit(&table, response(cfg)?, cfg.data.standardize_response)?;
    let data = scaler.apply(&table)?;
    Ok((data, scaler))
}

/// Shuffled train/test row indices for repeat `rep`, each sorted.
pub fn split_indices(n: usize, train_fraction: f64, seed: u64, rep: usize) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    RngState::with_stream(seed, rep as u64).shuffle(&mut idx);
    let n_train = ((train_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut train = idx[..n_train].to_vec();
    let mut test = idx[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

fn residuals(net: &emlreg::neuralnet::MlpConfig, model: &emlreg::neuralnet::MlpParams, data: &Dataset) -> Result<Vec<f64>> {
    let out = predict(net, model, &data.x)?;
    Ok(data.y.iter().zip(&out).map(|(y, g)| y - g).collect())
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Repeated random splits: a base model per repeat trained with the first
/// loss, then every loss fine-tuned from it and scored on the held-out rows.
pub fn cmd_realdata(cfg: &RunConfig, jobs: usize, out: &Path) -> Result<RealDataOutput> {
    cfg.validate()?;
    let losses = cfg.loss_kinds()?;
    let (data, scaler) = ingest(cfg)?;
    if data.len() < MIN_REALDATA_ROWS {
        return Err(CliError::InsufficientData(format!(
            "{} rows; the real-data pipeline needs at least {MIN_REALDATA_ROWS}",
            data.len()
        )));
    }
    prepare_out(out)?;
    let mut manifest = RunManifest::new("realdata", cfg, jobs);
    manifest.base_loss = Some(cfg.losses[0].clone());
    manifest.standardization = Some(scaler);

    let net = cfg.network(data.dim())?;
    let split = &cfg.split;
    let eml_index = losses.iter().position(LossKind::is_eml);
    let per_repeat = run_jobs(jobs, split.repeats, |rep| {
        let (tr, te) = split_indices(data.len(), split.train_fraction, split.seed, rep);
        let (train_data, test_data) = (data.subset(&tr), data.subset(&te));
        let seed = RngState::child_seed(split.seed, rep as u64);
        let base_cfg = TrainConfig {
            seed,
            ..cfg.train.clone()
        };
        let base = train(&train_data, &losses[0], &net, &base_cfg, Init::Fresh)?.model;
        let tune_cfg = TrainConfig {
            seed,
            ..cfg.fine_tune.clone()
        };
        let mut pes = Vec::with_capacity(losses.len());
        let mut qq_residuals = None;
        for (k, loss) in losses.iter().enumerate() {
            let model = fine_tune(&base, &train_data, loss, &net, &tune_cfg)?.model;
            pes.push(prediction_error(&net, &model, &test_data)?);
            if Some(k) == eml_index && rep + 1 == split.repeats {
                qq_residuals = Some(residuals(&net, &model, &train_data)?);
            }
        }
        Ok((pes, qq_residuals))
    })?;

    let rows: Vec<RealDataRow> = (0..losses.len())
        .map(|k| {
            let pes: Vec<f64> = per_repeat.iter().map(|(p, _)| p[k]).collect();
            let (mean_pe, sd_pe) = mean_sd(&pes);
            RealDataRow {
                loss: losses[k].name().to_string(),
                repeats: split.repeats,
                mean_pe,
                sd_pe,
            }
        })
        .collect();
    write_csv(&out.join(REALDATA_FILE), &rows)?;
    manifest.outputs = vec![REALDATA_FILE.into()];

    let qq = match per_repeat.last().and_then(|(_, r)| r.as_ref()) {
        Some(res) => {
            let points = residual_qq_data(res)?;
            write_csv(&out.join(QQ_FILE), &points)?;
            manifest.outputs.push(QQ_FILE.into());
            Some(points)
        }
        None => None,
    };
    manifest.finish(out)?;
    Ok(RealDataOutput { rows, qq })
}

#[derive(Serialize)]
struct HistoryRow {
    epoch: usize,
    loss: f64,
}

/// Train one model on a CSV and save it with its standardisation.
pub fn cmd_train(cfg: &RunConfig, jobs: usize, out: &Path) -> Result<TrainSummary> {
    cfg.validate()?;
    let losses = cfg.loss_kinds()?;
    let [loss] = losses.as_slice() else {
        return Err(CliError::usage(format!(
            "train takes exactly one loss, got {} (use --loss NAME)",
            losses.len()
        )));
    };
    let (data, scaler) = ingest(cfg)?;
    prepare_out(out)?;
    let mut manifest = RunManifest::new("train", cfg, jobs);

    let net = cfg.network(data.dim())?;
    // A single job, run on the pool so `--jobs` also bounds the matrix kernels.
    let report = run_jobs(jobs, 1, |_| Ok(train(&data, loss, &net, &cfg.train, Init::Fresh)?))?
        .pop()
        .expect("one job");
    save_checkpoint(&report.model, &net, out.join(MODEL_FILE))?;
    scaler.save(&out.join(SCALER_FILE))?;
    let history: Vec<HistoryRow> = report
        .loss_history
        .iter()
        .enumerate()
        .map(|(epoch, &loss)| HistoryRow { epoch, loss })
        .collect();
    write_csv(&out.join(HISTORY_FILE), &history)?;

    let final_loss = batch_loss_and_grad(&residuals(&net, &report.model, &data)?, loss)?.value;
    manifest.standardization = Some(scaler);
    manifest.outputs = vec![MODEL_FILE.into(), SCALER_FILE.into(), HISTORY_FILE.into()];
    manifest.finish(out)?;
    Ok(TrainSummary {
        loss: loss.name().to_string(),
        epochs_run: report.epochs_run,
        final_loss,
        recentering_shift: report.recentering_shift,
    })
}

/// Prediction error of a saved model on a CSV.
///
/// The standardisation saved next to the checkpoint by `train` is reused
/// when present; otherwise the CSV is standardised with its own statistics.
pub fn cmd_evaluate(cfg: &RunConfig, checkpoint: &Path, jobs: usize, out: &Path) -> Result<f64> {
    cfg.validate()?;
    let (model, net) = load_checkpoint(checkpoint).map_err(|e| match e {
        Error::Io(source) => CliError::File {
            path: checkpoint.to_path_buf(),
            source,
        },
        other => other.into(),
    })?;
    let table = read_numeric_csv(data_path(cfg)?)?;
    let sibling: PathBuf = checkpoint.with_file_name(SCALER_FILE);
    let scaler = if sibling.is_file() {
        let s = Scaler::load(&sibling)?;
        if let Some(r) = &cfg.data.response {
            if *r != s.response {
                return Err(CliError::usage(format!(
                    "response `{r}` differs from the model's response `{}`",
                    s.response
                )));
            }
        }
        s
    } else {
        Scaler::fit(&table, response(cfg)?, cfg.data.standardize_response)?
    };
    let data = scaler.apply(&table)?;
    if data.dim() != net.input_dim() {
        return Err(Error::Schema(format!(
            "model expects {} predictors, data has {}",
            net.input_dim(),
            data.dim()
        ))
        .into());
    }
    prepare_out(out)?;
    let mut manifest = RunManifest::new("evaluate", cfg, jobs);
    manifest.checkpoint = Some(checkpoint.to_path_buf());

    let pe = prediction_error(&net, &model, &data)?;
    write_csv(&out.join(EVALUATE_FILE), &[EvaluateRow { rows: data.len(), pe }])?;
    manifest.standardization = Some(scaler);
    manifest.outputs = vec![EVALUATE_FILE.into()];
    manifest.finish(out)?;
    Ok(pe)
}
