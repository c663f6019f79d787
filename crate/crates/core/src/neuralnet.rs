//! Fully connected ReLU network `g(x; θ)` with inverted dropout on the hidden
//! layers.
//!
//! Layer `ℓ` maps `A_ℓ [n × w_ℓ]` to `Z_ℓ = A_ℓ W_ℓ + b_ℓ` with
//! `W_ℓ [w_ℓ × w_{ℓ+1}]`. Hidden layers apply the activation and, in train
//! mode, a dropout mask scaled by `1/(1 − rate)`. The last layer is linear
//! with a single output.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, RngState};

/// Hidden-layer nonlinearity. `Identity` exists for testing linear
/// configurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Identity,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        }
    }

    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    /// Derivative; the ReLU derivative at exactly 0 is 0.
    #[inline]
    fn deriv(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    /// `(d, hidden..., 1)`
    pub widths: Vec<usize>,
    pub dropout_rate: f64,
    #[serde(default)]
    pub activation: Activation,
}

pub const DEFAULT_HIDDEN: [usize; 3] = [256, 256, 256];
pub const DEFAULT_DROPOUT: f64 = 0.01;

impl MlpConfig {
    /// Three hidden layers of 256 units with dropout 0.01.
    pub fn default_for(d: usize) -> Self {
        let mut widths = vec![d];
        widths.extend(DEFAULT_HIDDEN);
        widths.push(1);
        Self {
            widths,
            dropout_rate: DEFAULT_DROPOUT,
            activation: Activation::Relu,
        }
    }

    pub fn new(widths: Vec<usize>, dropout_rate: f64) -> Result<Self> {
        let cfg = Self {
            widths,
            dropout_rate,
            activation: Activation::Relu,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn with_dropout(mut self, rate: f64) -> Self {
        self.dropout_rate = rate;
        self
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn num_layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 {
            return Err(Error::arg("network needs at least input and output widths"));
        }
        if *self.widths.last().unwrap() != 1 {
            return Err(Error::arg("network output width must be 1"));
        }
        if self.widths.contains(&0) {
            return Err(Error::arg("network widths must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::arg(format!(
                "dropout rate must lie in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// `[fan_in × fan_out]`
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

/// All weights and biases. Also used as the container for parameter
/// gradients and optimizer moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub layers: Vec<Layer>,
}

impl MlpParams {
    pub fn zeros(widths: &[usize]) -> Self {
        let layers = widths
            .windows(2)
            .map(|w| Layer {
                weight: Matrix::zeros(w[0], w[1]),
                bias: vec![0.0; w[1]],
            })
            .collect();
        Self { layers }
    }

    pub fn zeros_like(other: &MlpParams) -> Self {
        Self::zeros(&other.widths())
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w: Vec<usize> = self.layers.iter().map(|l| l.weight.rows()).collect();
        if let Some(last) = self.layers.last() {
            w.push(last.weight.cols());
        }
        w
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.data().len() + l.bias.len())
            .sum()
    }

    /// Parameter blocks in a fixed order: W_0, b_0, W_1, b_1, ...
    pub fn tensors(&self) -> impl Iterator<Item = &[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.data(), l.bias.as_slice()])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.data_mut(), l.bias.as_mut_slice()])
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().all(|t| t.iter().all(|x| x.is_finite()))
    }

    /// Shape check against a config.
    pub fn check_widths(&self, config: &MlpConfig) -> Result<()> {
        let have = self.widths();
        if have != config.widths {
            return Err(Error::Schema(format!(
                "parameter widths {have:?} do not match network widths {:?}",
                config.widths
            )));
        }
        Ok(())
    }

    /// Add `shift` to the output bias.
    pub fn shift_output(&mut self, shift: f64) {
        if let Some(last) = self.layers.last_mut() {
            last.bias[0] += shift;
        }
    }
}

/// He-uniform initialisation: `W ~ U(−b, b)` with `b = sqrt(6 / fan_in)`,
/// biases zero. Weights are drawn layer by layer in row-major order.
pub fn he_uniform_init(config: &MlpConfig, rng: &mut RngState) -> Result<MlpParams> {
    config.validate()?;
    let mut params = MlpParams::zeros(&config.widths);
    for layer in &mut params.layers {
        let bound = (6.0 / layer.weight.rows() as f64).sqrt();
        for w in layer.weight.data_mut() {
            *w = (2.0 * rng.next_uniform01() - 1.0) * bound;
        }
    }
    Ok(params)
}

pub enum Mode<'a> {
    Train(&'a mut RngState),
    Eval,
}

/// Intermediate values of one train-mode forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input of every layer: `X`, then the (masked) hidden activations.
    layer_inputs: Vec<Matrix>,
    /// Pre-activations of the hidden layers.
    hidden_pre: Vec<Matrix>,
    /// Per-hidden-layer dropout scale (`0` or `1/(1−rate)`), empty when the
    /// rate is 0.
    masks: Vec<Vec<f64>>,
    widths: Vec<usize>,
}

impl ForwardCache {
    pub fn batch_size(&self) -> usize {
        self.layer_inputs[0].rows()
    }
}

pub struct ForwardOutput {
    pub outputs: Vec<f64>,
    /// Present only for train-mode passes.
    pub cache: Option<ForwardCache>,
}

/// Network output for every row of `x`.
pub fn forward(config: &MlpConfig, params: &MlpParams, x: &Matrix, mode: Mode<'_>) -> Result<ForwardOutput> {
    params.check_widths(config)?;
    if x.cols() != config.input_dim() {
        return Err(Error::shape("forward", format!("{} input columns", config.input_dim()), x.cols()));
    }
    let n = x.rows();
    let nl = params.layers.len();
    let (mut rng, train) = match mode {
        Mode::Train(rng) => (Some(rng), true),
        Mode::Eval => (None, false),
    };
    let keep_scale = 1.0 / (1.0 - config.dropout_rate);

    let mut layer_inputs = Vec::with_capacity(nl);
    let mut hidden_pre = Vec::with_capacity(nl.saturating_sub(1));
    let mut masks = Vec::new();
    let mut current = x.clone();

    for (li, layer) in params.layers.iter().enumerate() {
        let mut z = current.matmul(&layer.weight)?;
        z.add_row_vector(&layer.bias);
        if li + 1 == nl {
            if train {
                layer_inputs.push(current);
            }
            let outputs = z.into_data();
            let cache = train.then(|| ForwardCache {
                layer_inputs,
                hidden_pre,
                masks,
                widths: config.widths.clone(),
            });
            debug_assert_eq!(outputs.len(), n);
            return Ok(ForwardOutput { outputs, cache });
        }

        let mut a: Vec<f64> = z.data().iter().map(|&v| config.activation.apply(v)).collect();
        if let Some(rng) = rng.as_deref_mut() {
            if config.dropout_rate > 0.0 {
                let mask: Vec<f64> = (0..a.len())
                    .map(|_| {
                        if rng.next_uniform01() >= config.dropout_rate {
                            keep_scale
                        } else {
                            0.0
                        }
                    })
                    .collect();
                for (v, m) in a.iter_mut().zip(&mask) {
                    *v *= m;
                }
                masks.push(mask);
            }
        }
        let next = Matrix::from_raw(n, z.cols(), a);
        if train {
            layer_inputs.push(std::mem::replace(&mut current, next));
            hidden_pre.push(z);
        } else {
            current = next;
        }
    }
    unreachable!("validated config has at least one layer")
}

/// Eval-mode outputs.
pub fn predict(config: &MlpConfig, params: &MlpParams, x: &Matrix) -> Result<Vec<f64>> {
    Ok(forward(config, params, x, Mode::Eval)?.outputs)
}

/// Gradient of `Σ_i grad_outputs[i] · g(x_i; θ)` with respect to every
/// parameter, through the masks recorded in `cache`.
pub fn backward(
    config: &MlpConfig,
    params: &MlpParams,
    cache: Option<&ForwardCache>,
    grad_outputs: &[f64],
) -> Result<MlpParams> {
    let cache = cache.ok_or_else(|| Error::State("backward needs a train-mode forward cache".into()))?;
    if cache.widths != config.widths || params.widths() != config.widths {
        return Err(Error::State("forward cache does not match the network".into()));
    }
    let n = cache.batch_size();
    if grad_outputs.len() != n {
        return Err(Error::shape("backward", format!("{n} output gradients"), grad_outputs.len()));
    }
    let has_masks = !cache.masks.is_empty();

    let nl = params.layers.len();
    let mut grads = Vec::with_capacity(nl);
    let mut g = Matrix::from_raw(n, 1, grad_outputs.to_vec());
    for li in (0..nl).rev() {
        let input = &cache.layer_inputs[li];
        let d_weight = input.transpose().matmul(&g)?;
        let d_bias = g.column_sums();
        if li > 0 {
            let mut d_input = g.matmul(&params.layers[li].weight.transpose())?;
            let pre = &cache.hidden_pre[li - 1];
            let act = config.activation;
            if has_masks {
                let mask = &cache.masks[li - 1];
                for ((d, &z), &m) in d_input.data_mut().iter_mut().zip(pre.data()).zip(mask) {
                    *d *= m * act.deriv(z);
                }
            } else {
                for (d, &z) in d_input.data_mut().iter_mut().zip(pre.data()) {
                    *d *= act.deriv(z);
                }
            }
            g = d_input;
        }
        grads.push(Layer {
            weight: d_weight,
            bias: d_bias,
        });
    }
    grads.reverse();
    Ok(MlpParams { layers: grads })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear_1_1(w: f64, b: f64) -> (MlpConfig, MlpParams) {
        let cfg = MlpConfig::new(vec![1, 1], 0.0).unwrap();
        let mut p = MlpParams::zeros(&cfg.widths);
        p.layers[0].weight = Matrix::new(1, 1, vec![w]).unwrap();
        p.layers[0].bias = vec![b];
        (cfg, p)
    }

    #[test]
    fn config_validation() {
        assert!(MlpConfig::new(vec![3], 0.0).is_err());
        assert!(MlpConfig::new(vec![3, 2], 0.0).is_err());
        assert!(MlpConfig::new(vec![3, 4, 1], 1.0).is_err());
        assert_eq!(MlpConfig::default_for(7).widths, vec![7, 256, 256, 256, 1]);
    }

    #[test]
    fn he_uniform_bounds_and_variance() {
        let cfg = MlpConfig::new(vec![256, 400, 1], 0.0).unwrap();
        let mut rng = RngState::new(3);
        let p = he_uniform_init(&cfg, &mut rng).unwrap();
        let w = p.layers[0].weight.data();
        let b = (6.0f64 / 256.0).sqrt();
        assert!((b - 0.1531).abs() < 1e-4);
        assert!(w.iter().all(|x| x.abs() < b));
        let n = w.len() as f64;
        let mean = w.iter().sum::<f64>() / n;
        let var = w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        let want = 2.0 / 256.0;
        assert!((var - want).abs() / want < 0.05, "var {var}");
        assert!(p.layers.iter().all(|l| l.bias.iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn zero_network_outputs_zero() {
        let cfg = MlpConfig::new(vec![3, 5, 1], 0.0).unwrap();
        let p = MlpParams::zeros(&cfg.widths);
        let x = Matrix::new(2, 3, vec![1.0, -2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(predict(&cfg, &p, &x).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn linear_forward() {
        let (cfg, p) = linear_1_1(2.0, 1.0);
        let x = Matrix::new(1, 1, vec![3.0]).unwrap();
        assert_eq!(predict(&cfg, &p, &x).unwrap(), vec![7.0]);
    }

    #[test]
    fn relu_kills_negative_preactivation() {
        let cfg = MlpConfig::new(vec![1, 1, 1], 0.0).unwrap();
        let mut p = MlpParams::zeros(&cfg.widths);
        p.layers[0].weight = Matrix::new(1, 1, vec![-1.0]).unwrap();
        p.layers[1].weight = Matrix::new(1, 1, vec![3.0]).unwrap();
        p.layers[1].bias = vec![0.25];
        let x = Matrix::new(1, 1, vec![5.0]).unwrap();
        assert_eq!(predict(&cfg, &p, &x).unwrap(), vec![0.25]);
    }

    #[test]
    fn column_mismatch() {
        let cfg = MlpConfig::new(vec![3, 1], 0.0).unwrap();
        let p = MlpParams::zeros(&cfg.widths);
        let x = Matrix::zeros(2, 4);
        assert!(matches!(predict(&cfg, &p, &x), Err(Error::Shape { .. })));
    }

    #[test]
    fn linear_backward() {
        let (cfg, p) = linear_1_1(0.7, -0.2);
        let x = Matrix::new(1, 1, vec![2.5]).unwrap();
        let mut rng = RngState::new(0);
        let out = forward(&cfg, &p, &x, Mode::Train(&mut rng)).unwrap();
        let g = backward(&cfg, &p, out.cache.as_ref(), &[1.0]).unwrap();
        assert_eq!(g.layers[0].weight.data(), &[2.5]);
        assert_eq!(g.layers[0].bias, vec![1.0]);
    }

    #[test]
    fn zero_output_gradient() {
        let cfg = MlpConfig::new(vec![3, 4, 1], 0.2).unwrap();
        let mut rng = RngState::new(1);
        let p = he_uniform_init(&cfg, &mut rng).unwrap();
        let x = Matrix::new(2, 3, rng.sample_standard_normal(6)).unwrap();
        let out = forward(&cfg, &p, &x, Mode::Train(&mut rng)).unwrap();
        let g = backward(&cfg, &p, out.cache.as_ref(), &[0.0, 0.0]).unwrap();
        assert!(g.tensors().all(|t| t.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn backward_needs_a_cache() {
        let cfg = MlpConfig::new(vec![2, 1], 0.0).unwrap();
        let p = MlpParams::zeros(&cfg.widths);
        let x = Matrix::zeros(3, 2);
        let out = forward(&cfg, &p, &x, Mode::Eval).unwrap();
        assert!(out.cache.is_none());
        assert!(matches!(backward(&cfg, &p, None, &[0.0; 3]), Err(Error::State(_))));

        let mut rng = RngState::new(0);
        let out = forward(&cfg, &p, &x, Mode::Train(&mut rng)).unwrap();
        let other = MlpConfig::new(vec![2, 3, 1], 0.0).unwrap();
        let q = MlpParams::zeros(&other.widths);
        assert!(matches!(
            backward(&other, &q, out.cache.as_ref(), &[0.0; 3]),
            Err(Error::State(_))
        ));
    }

    #[test]
    fn eval_is_deterministic() {
        let cfg = MlpConfig::new(vec![4, 16, 16, 1], 0.3).unwrap();
        let mut rng = RngState::new(2);
        let p = he_uniform_init(&cfg, &mut rng).unwrap();
        let x = Matrix::new(10, 4, rng.sample_uniform01(40)).unwrap();
        let a = predict(&cfg, &p, &x).unwrap();
        let b = predict(&cfg, &p, &x).unwrap();
        assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn dropout_is_unbiased_on_linear_network() {
        let cfg = MlpConfig::new(vec![3, 6, 6, 1], 0.2)
            .unwrap()
            .with_activation(Activation::Identity);
        let mut rng = RngState::new(12);
        let p = he_uniform_init(&cfg, &mut rng).unwrap();
        let x = Matrix::new(4, 3, rng.sample_uniform01(12)).unwrap();
        let want = predict(&cfg, &p, &x).unwrap();
        let draws = 10_000;
        let mut mean = [0.0; 4];
        for _ in 0..draws {
            let out = forward(&cfg, &p, &x, Mode::Train(&mut rng)).unwrap().outputs;
            for (m, o) in mean.iter_mut().zip(out) {
                *m += o / draws as f64;
            }
        }
        for (m, w) in mean.iter().zip(&want) {
            assert!((m - w).abs() <= 0.02 * w.abs().max(1e-3), "{m} vs {w}");
        }
    }
}
