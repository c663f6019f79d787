//! Full-batch Adam training.
//!
//! Each epoch runs a train-mode forward pass, forms residuals `e = Y − ĝ`,
//! evaluates the loss, backpropagates `∂L/∂ĝ = −∂L/∂e` and takes one Adam
//! step. Training stops after at least `min_epochs` once the mean loss over
//! the last `convergence_window` epochs changes by less than
//! `convergence_tol` (relative) from the window before it, or at
//! `max_epochs`. The parameters with the lowest windowed mean loss are
//! returned.

mod checkpoint;

pub use checkpoint::{load_checkpoint, load_checkpoint_expecting, save_checkpoint, Checkpoint, FORMAT_VERSION};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{batch_loss_and_grad, LossKind};
use crate::neuralnet::{backward, forward, he_uniform_init, predict, MlpConfig, MlpParams, Mode};
use crate::numerics::RngState;
use crate::simbench::Dataset;

pub const DEFAULT_LEARNING_RATE: f64 = 3e-4;
pub const FINE_TUNE_LEARNING_RATE: f64 = 3e-5;
/// Consecutive non-finite epochs tolerated before giving up.
pub const DIVERGENCE_PATIENCE: usize = 10;

/// Where the intercept is placed after EML training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Recentering {
    #[default]
    Mean,
    Median,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub min_epochs: usize,
    pub max_epochs: usize,
    pub convergence_tol: f64,
    pub convergence_window: usize,
    /// Overrides the network's dropout rate during training.
    pub dropout_rate: f64,
    pub seed: u64,
    pub recentering: Recentering,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: DEFAULT_LEARNING_RATE,
            beta1: 0.9,
            beta2: 0.99,
            epsilon: 1e-8,
            min_epochs: 1000,
            max_epochs: 5000,
            convergence_tol: 1e-6,
            convergence_window: 50,
            dropout_rate: 0.01,
            seed: 0,
            recentering: Recentering::Mean,
        }
    }
}

impl TrainConfig {
    /// Defaults for warm-started fine-tuning.
    pub fn fine_tune() -> Self {
        Self {
            learning_rate: FINE_TUNE_LEARNING_RATE,
            ..Self::default()
        }
    }

    /// Run exactly `epochs` epochs.
    pub fn with_epochs(mut self, epochs: usize) -> Self {
        self.min_epochs = epochs;
        self.max_epochs = epochs;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::arg(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return err(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if !(self.beta1 > 0.0 && self.beta1 < 1.0 && self.beta2 > 0.0 && self.beta2 < 1.0) {
            return err(format!("Adam betas must lie in (0, 1), got ({}, {})", self.beta1, self.beta2));
        }
        if !(self.epsilon > 0.0) {
            return err(format!("Adam epsilon must be positive, got {}", self.epsilon));
        }
        if self.min_epochs > self.max_epochs {
            return err(format!(
                "min_epochs ({}) exceeds max_epochs ({})",
                self.min_epochs, self.max_epochs
            ));
        }
        if self.convergence_window == 0 || !(self.convergence_tol > 0.0) {
            return err("convergence window and tolerance must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return err(format!("dropout rate must lie in [0, 1), got {}", self.dropout_rate));
        }
        Ok(())
    }
}

/// Adam moment accumulators.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: MlpParams,
    pub v: MlpParams,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &MlpParams) -> Self {
        Self {
            m: MlpParams::zeros_like(params),
            v: MlpParams::zeros_like(params),
            t: 0,
        }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(params: &mut MlpParams, grads: &MlpParams, state: &mut AdamState, cfg: &TrainConfig) -> Result<()> {
    let widths = params.widths();
    if grads.widths() != widths || state.m.widths() != widths || state.v.widths() != widths {
        return Err(Error::shape(
            "adam_step",
            format!("{widths:?}"),
            format!("grads {:?}, moments {:?}", grads.widths(), state.m.widths()),
        ));
    }
    state.t += 1;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let t = state.t as i32;
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let (lr, eps) = (cfg.learning_rate, cfg.epsilon);
    for (((p, g), m), v) in params
        .tensors_mut()
        .zip(grads.tensors())
        .zip(state.m.tensors_mut())
        .zip(state.v.tensors_mut())
    {
        for i in 0..p.len() {
            let gi = g[i];
            m[i] = b1 * m[i] + (1.0 - b1) * gi;
            v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

pub enum Init<'a> {
    /// He-uniform initialisation from `cfg.seed`.
    Fresh,
    Warm(&'a MlpParams),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub model: MlpParams,
    /// Finite loss of each completed epoch; non-finite epochs take no step
    /// and are not recorded.
    pub loss_history: Vec<f64>,
    pub epochs_run: usize,
    /// Output-bias shift applied after EML training; 0 otherwise.
    pub recentering_shift: f64,
    /// Lowest windowed mean loss seen, the one the returned model achieved.
    /// `None` when no epoch ran.
    pub best_windowed_loss: Option<f64>,
    pub best_epoch: Option<usize>,
}

/// Train `net` on `data` under `loss`.
///
/// Stream 1 of `cfg.seed` initialises fresh weights; stream 2 drives dropout.
pub fn train(data: &Dataset, loss: &LossKind, net: &MlpConfig, cfg: &TrainConfig, init: Init<'_>) -> Result<TrainReport> {
    cfg.validate()?;
    loss.validate()?;
    net.validate()?;
    if data.is_empty() {
        return Err(Error::arg("training data is empty"));
    }
    if net.input_dim() != data.dim() {
        return Err(Error::shape("train", format!("{} input features", net.input_dim()), data.dim()));
    }
    let net = net.clone().with_dropout(cfg.dropout_rate);
    let root = RngState::new(cfg.seed);
    let mut params = match init {
        Init::Fresh => he_uniform_init(&net, &mut root.fork(1))?,
        Init::Warm(base) => {
            base.check_widths(&net)?;
            base.clone()
        }
    };
    let mut dropout_rng = root.fork(2);
    let mut adam = AdamState::new(&params);

    // `history` holds finite epoch losses only; `trace` also keeps the
    // non-finite attempts, which are skipped without an optimizer step.
    let mut history: Vec<f64> = Vec::with_capacity(cfg.max_epochs);
    let mut trace: Vec<f64> = Vec::new();
    let mut best: Option<(f64, usize, MlpParams)> = None;
    let mut bad_streak = 0usize;
    let window = cfg.convergence_window;

    for _ in 0..cfg.max_epochs {
        let out = forward(&net, &params, &data.x, Mode::Train(&mut dropout_rng))?;
        let residuals: Vec<f64> = data.y.iter().zip(&out.outputs).map(|(y, g)| y - g).collect();
        let eval = if residuals.iter().all(|e| e.is_finite()) {
            Some(batch_loss_and_grad(&residuals, loss)?)
        } else {
            None
        };
        let value = eval.as_ref().map_or(f64::NAN, |e| e.value);
        trace.push(value);

        let eval = match eval {
            Some(e) if e.value.is_finite() => {
                bad_streak = 0;
                e
            }
            _ => {
                bad_streak += 1;
                if bad_streak >= DIVERGENCE_PATIENCE {
                    return Err(Error::Divergence { history: trace });
                }
                continue;
            }
        };
        history.push(value);
        let epoch = history.len() - 1;

        let windowed = trailing_mean(&history, window);
        if best.as_ref().is_none_or(|b| windowed < b.0) {
            best = Some((windowed, epoch, params.clone()));
        }

        if history.len() >= cfg.min_epochs && has_converged(&history, window, cfg.convergence_tol) {
            break;
        }

        let grad_outputs: Vec<f64> = eval.grad_residuals.iter().map(|g| -g).collect();
        let grads = backward(&net, &params, out.cache.as_ref(), &grad_outputs)?;
        adam_step(&mut params, &grads, &mut adam, cfg)?;
    }

    let epochs_run = history.len();
    let (best_windowed_loss, best_epoch, mut model) = match best {
        Some((w, e, p)) => (Some(w), Some(e), p),
        None => (None, None, params),
    };
    let mut recentering_shift = 0.0;
    if loss.is_eml() {
        let (m, shift) = recenter_intercept_with(&net, &model, data, cfg.recentering)?;
        model = m;
        recentering_shift = shift;
    }
    Ok(TrainReport {
        model,
        loss_history: history,
        epochs_run,
        recentering_shift,
        best_windowed_loss,
        best_epoch,
    })
}

/// Warm-started training from `base`. Use [`TrainConfig::fine_tune`] for the
/// usual reduced learning rate.
pub fn fine_tune(base: &MlpParams, data: &Dataset, loss: &LossKind, net: &MlpConfig, cfg: &TrainConfig) -> Result<TrainReport> {
    train(data, loss, net, cfg, Init::Warm(base))
}

fn trailing_mean(history: &[f64], window: usize) -> f64 {
    let tail = &history[history.len().saturating_sub(window)..];
    tail.iter().sum::<f64>() / tail.len() as f64
}

fn has_converged(history: &[f64], window: usize, tol: f64) -> bool {
    let len = history.len();
    if len < 2 * window {
        return false;
    }
    let now = trailing_mean(history, window);
    let before = trailing_mean(&history[..len - window], window);
    let denom = before.abs().max(f64::MIN_POSITIVE);
    ((now - before).abs() / denom) < tol
}

/// Shift the output bias so the mean training residual is zero.
pub fn recenter_intercept(net: &MlpConfig, model: &MlpParams, data: &Dataset) -> Result<(MlpParams, f64)> {
    recenter_intercept_with(net, model, data, Recentering::Mean)
}

pub fn recenter_intercept_with(
    net: &MlpConfig,
    model: &MlpParams,
    data: &Dataset,
    how: Recentering,
) -> Result<(MlpParams, f64)> {
    let fitted = predict(net, model, &data.x)?;
    let mut residuals: Vec<f64> = data.y.iter().zip(&fitted).map(|(y, g)| y - g).collect();
    let shift = match how {
        Recentering::Mean => residuals.iter().sum::<f64>() / residuals.len() as f64,
        Recentering::Median => {
            residuals.sort_by(f64::total_cmp);
            let n = residuals.len();
            if n % 2 == 1 {
                residuals[n / 2]
            } else {
                0.5 * (residuals[n / 2 - 1] + residuals[n / 2])
            }
        }
    };
    let mut out = model.clone();
    out.shift_output(shift);
    Ok((out, shift))
}
