//! Simulation designs and evaluation metrics.
//!
//! Covariates are i.i.d. `U(0, 1)^d`. The target `g_p` (p ∈ {5, 10, 20}) acts
//! on projections `z_j = xᵀβ_j`, where `β_j` spreads the weights `1..=20`
//! over the `j`-th block of `⌊d/p⌋` coordinates and has unit L1 norm, so
//! every `z_j` stays in `[0, 1]`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neuralnet::{predict, MlpConfig, MlpParams};
use crate::numerics::{Matrix, RngState};

/// Regression data: `X [n × d]`, `Y [n]`, and optionally the noiseless target.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Matrix,
    pub y: Vec<f64>,
    pub g_true: Option<Vec<f64>>,
}

impl Dataset {
    pub fn new(x: Matrix, y: Vec<f64>) -> Result<Self> {
        if x.rows() != y.len() {
            return Err(Error::shape("Dataset::new", format!("{} responses", x.rows()), y.len()));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::arg("responses must be finite"));
        }
        Ok(Self { x, y, g_true: None })
    }

    pub fn with_truth(mut self, g_true: Vec<f64>) -> Result<Self> {
        if g_true.len() != self.y.len() {
            return Err(Error::shape("Dataset::with_truth", self.y.len(), g_true.len()));
        }
        self.g_true = Some(g_true);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    /// Rows `idx`, in order.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select_rows(idx),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            g_true: self.g_true.as_ref().map(|g| idx.iter().map(|&i| g[i]).collect()),
        }
    }
}

/// `γ = (1, ..., 20)`, `‖γ‖₁ = 210`.
const GAMMA_LEN: usize = 20;
const GAMMA_L1: f64 = 210.0;

fn check_p(p: usize) -> Result<()> {
    if matches!(p, 5 | 10 | 20) {
        Ok(())
    } else {
        Err(Error::arg(format!("target dimension p must be 5, 10 or 20, got {p}")))
    }
}

/// Coefficient vector `β_j` (1-based `j ≤ p`).
///
/// Positions `(j−1)·⌊d/p⌋ .. j·⌊d/p⌋` start with `r = ⌊d/(20p)⌋` copies of
/// `γ / (r·210)`; anything left in the block, and everything outside it, is 0.
pub fn make_beta(j: usize, d: usize, p: usize) -> Result<Vec<f64>> {
    check_p(p)?;
    if j == 0 || j > p {
        return Err(Error::arg(format!("beta index j must lie in 1..={p}, got {j}")));
    }
    let copies = d / (GAMMA_LEN * p);
    if copies == 0 {
        return Err(Error::UnsupportedDimension { d, p });
    }
    let block = d / p;
    let start = (j - 1) * block;
    let scale = copies as f64 * GAMMA_L1;
    let mut beta = vec![0.0; d];
    for c in 0..copies {
        for g in 0..GAMMA_LEN {
            beta[start + c * GAMMA_LEN + g] = (g + 1) as f64 / scale;
        }
    }
    Ok(beta)
}

/// `g_p` applied to the projections `z = (z_1, ..., z_p)`.
pub fn g_formula(p: usize, z: &[f64]) -> Result<f64> {
    check_p(p)?;
    if z.len() < p {
        return Err(Error::shape("g_formula", p, z.len()));
    }
    let g5 = |z: &[f64]| z[0].powi(3) + z[1].powi(2) + z[2] + z[3].abs() + z[4].cos();
    Ok(match p {
        5 => g5(z),
        10 => g5(z) + z[5].sin() + z[6].exp() + z[7].ln_1p() + z[8].sqrt() + z[9].cbrt(),
        _ => {
            z[0].powi(5)
                + z[1].powi(4)
                + z[2].powi(3)
                + z[3].powi(2)
                + z[4]
                + z[5].abs()
                + z[6].sqrt()
                + z[7].cbrt()
                + z[8].powf(0.25)
                + z[9].powf(0.2)
                + z[10].powi(3).abs()
                + z[11].cos()
                + z[12].sin()
                + z[13].powi(2).cos()
                + z[14].powi(2).sin()
                + z[15].exp()
                + z[16].ln_1p()
                + z[17].powi(2).exp()
                + z[18].powi(2).ln_1p()
                + z[19].sqrt().ln_1p()
        }
    })
}

/// `g_p` on raw covariates, with the `β_j` precomputed.
#[derive(Debug, Clone)]
pub struct Target {
    p: usize,
    d: usize,
    /// Per `j`: (block start, nonzero weights).
    blocks: Vec<(usize, Vec<f64>)>,
}

impl Target {
    pub fn new(p: usize, d: usize) -> Result<Self> {
        let blocks = (1..=p)
            .map(|j| {
                let beta = make_beta(j, d, p)?;
                let start = (j - 1) * (d / p);
                let len = (d / (GAMMA_LEN * p)) * GAMMA_LEN;
                Ok((start, beta[start..start + len].to_vec()))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { p, d, blocks })
    }

    /// `(z_1, ..., z_p)` for one covariate row.
    pub fn project(&self, xrow: &[f64]) -> Vec<f64> {
        self.blocks
            .iter()
            .map(|(start, w)| w.iter().zip(&xrow[*start..]).map(|(b, x)| b * x).sum())
            .collect()
    }

    pub fn eval(&self, xrow: &[f64]) -> Result<f64> {
        if xrow.len() != self.d {
            return Err(Error::shape("Target::eval", self.d, xrow.len()));
        }
        g_formula(self.p, &self.project(xrow))
    }
}

/// `g_p(x)` for a single row.
pub fn target_g(p: usize, xrow: &[f64]) -> Result<f64> {
    Target::new(p, xrow.len())?.eval(xrow)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ErrorDist {
    /// N(0, 1)
    #[serde(rename = "normal")]
    NormalStd,
    /// 0.7·N(0, 1) + 0.3·N(0, 5)
    #[serde(rename = "mixture")]
    MixtureGauss,
    /// t(2)
    #[serde(rename = "t2")]
    StudentT2,
    /// N(0, 3·x₁ + 4·x₂)
    #[serde(rename = "hetero")]
    Hetero,
}

impl ErrorDist {
    pub const ALL: [ErrorDist; 4] = [
        ErrorDist::NormalStd,
        ErrorDist::MixtureGauss,
        ErrorDist::StudentT2,
        ErrorDist::Hetero,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ErrorDist::NormalStd => "normal",
            ErrorDist::MixtureGauss => "mixture",
            ErrorDist::StudentT2 => "t2",
            ErrorDist::Hetero => "hetero",
        }
    }
}

impl fmt::Display for ErrorDist {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ErrorDist {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "normal" | "normalstd" | "i" => Ok(ErrorDist::NormalStd),
            "mixture" | "mixturegauss" | "ii" => Ok(ErrorDist::MixtureGauss),
            "t2" | "studentt2" | "iii" => Ok(ErrorDist::StudentT2),
            "hetero" | "iv" => Ok(ErrorDist::Hetero),
            other => Err(Error::arg(format!(
                "unknown error distribution `{other}` (valid: normal, mixture, t2, hetero)"
            ))),
        }
    }
}

/// How the second parameter of `N(0, s)` in the mixture and heteroscedastic
/// designs is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScaleReading {
    #[default]
    Variance,
    StdDev,
}

impl ScaleReading {
    fn sd(self, s: f64) -> f64 {
        match self {
            ScaleReading::Variance => s.sqrt(),
            ScaleReading::StdDev => s,
        }
    }
}

/// One noise draw for covariate row `xrow`.
pub fn sample_error(kind: ErrorDist, rng: &mut RngState, xrow: &[f64], reading: ScaleReading) -> Result<f64> {
    Ok(match kind {
        ErrorDist::NormalStd => rng.next_standard_normal(),
        ErrorDist::MixtureGauss => {
            let wide = rng.next_uniform01() >= 0.7;
            let z = rng.next_standard_normal();
            if wide {
                reading.sd(5.0) * z
            } else {
                z
            }
        }
        ErrorDist::StudentT2 => rng.next_student_t2(),
        ErrorDist::Hetero => {
            if xrow.len() < 2 {
                return Err(Error::arg("heteroscedastic errors need at least 2 covariates"));
            }
            let z = rng.next_standard_normal();
            reading.sd(3.0 * xrow[0] + 4.0 * xrow[1]) * z
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub p: usize,
    pub d: usize,
    pub n: usize,
    pub error: ErrorDist,
    pub n_grid: usize,
    pub replications: usize,
    pub master_seed: u64,
    /// Test-set size for prediction error; `None` means `n_grid`.
    pub n_test: Option<usize>,
    pub scale_reading: ScaleReading,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            p: 5,
            d: 100,
            n: 256,
            error: ErrorDist::NormalStd,
            n_grid: 2048,
            replications: 100,
            master_seed: 0,
            n_test: None,
            scale_reading: ScaleReading::Variance,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        check_p(self.p)?;
        if self.d / (GAMMA_LEN * self.p) == 0 {
            return Err(Error::UnsupportedDimension { d: self.d, p: self.p });
        }
        if self.n < 2 {
            return Err(Error::arg(format!("n must be at least 2, got {}", self.n)));
        }
        if self.n_grid == 0 {
            return Err(Error::arg("n_grid must be positive"));
        }
        if self.n_test == Some(0) {
            return Err(Error::arg("n_test must be positive"));
        }
        Ok(())
    }

    pub fn test_size(&self) -> usize {
        self.n_test.unwrap_or(self.n_grid)
    }

    /// Seed for the trainer of replication `r`.
    pub fn replication_seed(&self, r: usize) -> u64 {
        RngState::child_seed(self.master_seed, r as u64)
    }
}

/// Data for one replication.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub train: Dataset,
    /// Fixed evaluation grid: the same for every replication, `y = g_true`.
    pub grid: Dataset,
    /// Noise added to the training targets.
    pub train_noise: Vec<f64>,
}

// RNG streams under `master_seed`.
const GRID_STREAM: u64 = 0;
fn train_stream(r: usize) -> u64 {
    1 + 2 * r as u64
}
fn test_stream(r: usize) -> u64 {
    2 + 2 * r as u64
}

fn draw_dataset(cfg: &ScenarioConfig, target: &Target, rows: usize, rng: &mut RngState, noisy: bool) -> Result<(Dataset, Vec<f64>)> {
    let d = cfg.d;
    let mut x = Vec::with_capacity(rows * d);
    let mut y = Vec::with_capacity(rows);
    let mut g = Vec::with_capacity(rows);
    let mut noise = Vec::with_capacity(if noisy { rows } else { 0 });
    for _ in 0..rows {
        let start = x.len();
        x.extend((0..d).map(|_| rng.next_uniform01()));
        let row = &x[start..];
        let gi = target.eval(row)?;
        if noisy {
            let e = sample_error(cfg.error, rng, row, cfg.scale_reading)?;
            noise.push(e);
            y.push(gi + e);
        } else {
            y.push(gi);
        }
        g.push(gi);
    }
    let data = Dataset::new(Matrix::new(rows, d, x)?, y)?.with_truth(g)?;
    Ok((data, noise))
}

/// Training data for replication `r` plus the shared grid.
pub fn generate_scenario(cfg: &ScenarioConfig, replication: usize) -> Result<Scenario> {
    cfg.validate()?;
    let target = Target::new(cfg.p, cfg.d)?;
    let (grid, _) = draw_dataset(cfg, &target, cfg.n_grid, &mut RngState::with_stream(cfg.master_seed, GRID_STREAM), false)?;
    let (train, train_noise) = draw_dataset(
        cfg,
        &target,
        cfg.n,
        &mut RngState::with_stream(cfg.master_seed, train_stream(replication)),
        true,
    )?;
    Ok(Scenario {
        train,
        grid,
        train_noise,
    })
}

/// Held-out noisy test data for replication `r`, from the training distribution.
pub fn generate_test_set(cfg: &ScenarioConfig, replication: usize) -> Result<Dataset> {
    cfg.validate()?;
    let target = Target::new(cfg.p, cfg.d)?;
    let mut rng = RngState::with_stream(cfg.master_seed, test_stream(replication));
    Ok(draw_dataset(cfg, &target, cfg.test_size(), &mut rng, true)?.0)
}

/// Labels attached to a metrics row.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ScenarioLabel {
    pub loss: String,
    pub p: usize,
    pub d: usize,
    pub n: usize,
    pub error: String,
    pub replications: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsReport {
    pub bias: f64,
    pub sd: f64,
    pub rmse: f64,
    pub label: ScenarioLabel,
}

/// Bias, SD and RMSE over the grid from an `R × n_grid` prediction matrix.
///
/// `bias² = mean_k (p̄_k − g_k)²`, `SD² = mean_k mean_r (p_rk − p̄_k)²` with
/// `p̄_k` the replication mean at grid point `k`, and `RMSE² = bias² + SD²`.
pub fn compute_bias_sd_rmse(predictions: &Matrix, g_true: &[f64]) -> Result<MetricsReport> {
    let (reps, n_grid) = predictions.shape();
    if reps < 2 {
        return Err(Error::arg(format!("need at least 2 replications, got {reps}")));
    }
    if g_true.len() != n_grid || n_grid == 0 {
        return Err(Error::shape("compute_bias_sd_rmse", n_grid, g_true.len()));
    }
    let rf = reps as f64;
    let mut bias2 = 0.0;
    let mut var = 0.0;
    for (k, &g) in g_true.iter().enumerate() {
        let mut mean = 0.0;
        for r in 0..reps {
            mean += predictions.get(r, k);
        }
        mean /= rf;
        let mut dev2 = 0.0;
        for r in 0..reps {
            let d = predictions.get(r, k) - mean;
            dev2 += d * d;
        }
        bias2 += (mean - g) * (mean - g);
        var += dev2 / rf;
    }
    let bias = (bias2 / n_grid as f64).sqrt();
    let sd = (var / n_grid as f64).sqrt();
    Ok(MetricsReport {
        bias,
        sd,
        rmse: (bias * bias + sd * sd).sqrt(),
        label: ScenarioLabel::default(),
    })
}

/// Mean squared difference between predictions and responses.
pub fn mean_squared_error(predictions: &[f64], y: &[f64]) -> Result<f64> {
    if predictions.len() != y.len() || y.is_empty() {
        return Err(Error::shape("mean_squared_error", y.len(), predictions.len()));
    }
    Ok(predictions
        .iter()
        .zip(y)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / y.len() as f64)
}

/// Test-set prediction error `(1/t) Σ (ĝ(x_i) − y_i)²`, eval mode.
pub fn prediction_error(net: &MlpConfig, model: &MlpParams, test: &Dataset) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::arg("test set is empty"));
    }
    mean_squared_error(&predict(net, model, &test.x)?, &test.y)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QqPoint {
    pub theoretical: f64,
    pub empirical: f64,
}

/// Normal Q-Q table for residuals.
///
/// `theoretical_i = Φ⁻¹((i − 0.5)/n)`. The sorted residuals are centred and
/// rescaled so their mean and population SD match those of the theoretical
/// column; residuals that already sit at the normal plotting positions map
/// onto the identity line.
pub fn residual_qq_data(residuals: &[f64]) -> Result<Vec<QqPoint>> {
    let n = residuals.len();
    if n < 2 {
        return Err(Error::arg(format!("Q-Q data needs at least 2 residuals, got {n}")));
    }
    let nf = n as f64;
    let theoretical: Vec<f64> = (1..=n).map(|i| normal_quantile((i as f64 - 0.5) / nf)).collect();
    let (tm, ts) = mean_sd(&theoretical);
    let mut sorted = residuals.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (m, s) = mean_sd(&sorted);
    if !(s > 0.0) || !s.is_finite() {
        return Err(Error::Degenerate("residuals have zero variance".into()));
    }
    Ok(theoretical
        .into_iter()
        .zip(sorted)
        .map(|(t, e)| QqPoint {
            theoretical: t,
            empirical: tm + (e - m) / s * ts,
        })
        .collect())
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, var.sqrt())
}

/// Standard normal quantile: Acklam's rational approximation polished by one
/// Halley step against `erfc`.
pub fn normal_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const P_LOW: f64 = 0.02425;
    let x = if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    let e = 0.5 * libm::erfc(-x / std::f64::consts::SQRT_2) - p;
    let u = e * (2.0 * std::f64::consts::PI).sqrt() * (0.5 * x * x).exp();
    x - u / (1.0 + 0.5 * x * u)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn beta_d100_p5() {
        let b = make_beta(1, 100, 5).unwrap();
        for g in 0..20 {
            assert!((b[g] - (g + 1) as f64 / 210.0).abs() < 1e-15);
        }
        assert!(b[20..].iter().all(|&x| x == 0.0));
        assert!((b.iter().map(|x| x.abs()).sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn beta_d500_p5_j2() {
        let b = make_beta(2, 500, 5).unwrap();
        for pos in 100..200 {
            let g = (pos - 100) % 20 + 1;
            assert!((b[pos] - g as f64 / 1050.0).abs() < 1e-15);
        }
        assert!(b[..100].iter().chain(&b[200..]).all(|&x| x == 0.0));
    }

    #[test]
    fn beta_l1_norm_for_every_design() {
        for &(d, p) in &[(100, 5), (200, 10), (400, 20), (500, 5), (600, 10), (800, 20), (130, 5), (450, 20)] {
            for j in 1..=p {
                let b = make_beta(j, d, p).unwrap();
                let l1: f64 = b.iter().map(|x| x.abs()).sum();
                assert!((l1 - 1.0).abs() < 1e-12, "d={d} p={p} j={j}");
                let block = d / p;
                let outside = b[..(j - 1) * block].iter().chain(&b[j * block..]);
                assert!(outside.into_iter().all(|&x| x == 0.0));
            }
        }
    }

    #[test]
    fn beta_errors() {
        assert!(matches!(make_beta(1, 99, 5), Err(Error::UnsupportedDimension { .. })));
        assert!(make_beta(0, 100, 5).is_err());
        assert!(make_beta(6, 100, 5).is_err());
        assert!(make_beta(1, 100, 7).is_err());
    }

    #[test]
    fn targets_at_origin() {
        assert_eq!(g_formula(5, &[0.0; 5]).unwrap(), 1.0);
        assert_eq!(g_formula(10, &[0.0; 10]).unwrap(), 2.0);
        assert_eq!(g_formula(20, &[0.0; 20]).unwrap(), 4.0);
        assert_eq!(target_g(5, &[0.0; 100]).unwrap(), 1.0);
        assert!(g_formula(7, &[0.0; 7]).is_err());
    }

    #[test]
    fn target_matches_direct_projection() {
        let mut rng = RngState::new(3);
        let x = rng.sample_uniform01(200);
        let t = Target::new(10, 200).unwrap();
        let z: Vec<f64> = (1..=10)
            .map(|j| make_beta(j, 200, 10).unwrap().iter().zip(&x).map(|(b, v)| b * v).sum())
            .collect();
        assert!(z.iter().all(|v| (0.0..=1.0).contains(v)));
        assert!((t.eval(&x).unwrap() - g_formula(10, &z).unwrap()).abs() < 1e-13);
    }

    #[test]
    fn error_moments() {
        let mut rng = RngState::new(10);
        let n = 1_000_000;
        let row = [0.5, 0.5];
        let draw = |kind, rng: &mut RngState| -> Vec<f64> {
            (0..n)
                .map(|_| sample_error(kind, rng, &row, ScaleReading::Variance).unwrap())
                .collect()
        };
        let (_, sd) = mean_sd(&draw(ErrorDist::MixtureGauss, &mut rng));
        assert!((sd * sd - 2.2).abs() / 2.2 < 0.02, "{}", sd * sd);
        let (_, sd) = mean_sd(&draw(ErrorDist::NormalStd, &mut rng));
        assert!((sd * sd - 1.0).abs() < 0.01);
        let (_, sd) = mean_sd(&draw(ErrorDist::Hetero, &mut rng));
        assert!((sd * sd - 3.5).abs() / 3.5 < 0.02);
    }

    #[test]
    fn hetero_degenerate_at_origin() {
        let mut rng = RngState::new(0);
        for _ in 0..10 {
            assert_eq!(sample_error(ErrorDist::Hetero, &mut rng, &[0.0, 0.0, 0.7], ScaleReading::Variance).unwrap(), 0.0);
        }
        assert!(sample_error(ErrorDist::Hetero, &mut rng, &[0.5], ScaleReading::Variance).is_err());
    }

    fn small_cfg() -> ScenarioConfig {
        ScenarioConfig {
            n: 16,
            n_grid: 32,
            replications: 2,
            master_seed: 77,
            ..ScenarioConfig::default()
        }
    }

    #[test]
    fn grid_is_shared_training_data_is_not() {
        let cfg = small_cfg();
        let a = generate_scenario(&cfg, 0).unwrap();
        let b = generate_scenario(&cfg, 1).unwrap();
        assert_eq!(a.grid, b.grid);
        assert_ne!(a.train.x, b.train.x);
        assert_eq!(a.grid.y, *a.grid.g_true.as_ref().unwrap());
        assert_eq!(a, generate_scenario(&cfg, 0).unwrap());
    }

    #[test]
    fn training_targets_decompose() {
        let s = generate_scenario(&small_cfg(), 3).unwrap();
        let g = s.train.g_true.as_ref().unwrap();
        for i in 0..s.train.len() {
            assert_eq!(g[i] + s.train_noise[i], s.train.y[i]);
        }
    }

    #[test]
    fn metrics_examples() {
        let g = vec![1.0, 2.0, 3.0];
        let same = Matrix::from_rows(&[g.clone(), g.clone()]).unwrap();
        let m = compute_bias_sd_rmse(&same, &g).unwrap();
        assert_eq!((m.bias, m.sd, m.rmse), (0.0, 0.0, 0.0));

        let off: Vec<f64> = g.iter().map(|v| v - 0.5).collect();
        let shifted = Matrix::from_rows(&[off.clone(), off.clone(), off]).unwrap();
        let m = compute_bias_sd_rmse(&shifted, &g).unwrap();
        assert!((m.bias - 0.5).abs() < 1e-15 && m.sd == 0.0 && (m.rmse - 0.5).abs() < 1e-15);

        let two = Matrix::from_rows(&[vec![4.0], vec![2.0]]).unwrap();
        let m = compute_bias_sd_rmse(&two, &[3.0]).unwrap();
        assert_eq!((m.bias, m.sd, m.rmse), (0.0, 1.0, 1.0));

        let one = Matrix::from_rows(&[vec![1.0]]).unwrap();
        assert!(compute_bias_sd_rmse(&one, &[1.0]).is_err());
    }

    #[test]
    fn prediction_error_examples() {
        assert_eq!(mean_squared_error(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mean_squared_error(&[0.0], &[2.0]).unwrap(), 4.0);
        let net = MlpConfig::new(vec![1, 1], 0.0).unwrap();
        let zero = MlpParams::zeros(&net.widths);
        let test = Dataset::new(Matrix::new(1, 1, vec![0.3]).unwrap(), vec![2.0]).unwrap();
        assert_eq!(prediction_error(&net, &zero, &test).unwrap(), 4.0);
    }

    #[test]
    fn oracle_prediction_error_is_noise_variance() {
        let cfg = ScenarioConfig {
            n_test: Some(100_000),
            ..small_cfg()
        };
        let test = generate_test_set(&cfg, 0).unwrap();
        let pe = mean_squared_error(test.g_true.as_ref().unwrap(), &test.y).unwrap();
        assert!((pe - 1.0).abs() < 0.05, "{pe}");
    }

    #[test]
    fn normal_quantile_accuracy() {
        assert_eq!(normal_quantile(0.5), 0.0);
        assert!((normal_quantile(0.975) - 1.959_963_984_540_054).abs() < 1e-14);
        assert!((normal_quantile(0.001) + 3.090_232_306_167_813_5).abs() < 1e-13);
        for k in 1..100 {
            let p = k as f64 / 100.0;
            assert!((normal_quantile(p) + normal_quantile(1.0 - p)).abs() < 1e-13);
        }
    }

    #[test]
    fn qq_identity_and_symmetry() {
        let n = 50;
        let q: Vec<f64> = (1..=n).map(|i| normal_quantile((i as f64 - 0.5) / n as f64)).collect();
        let mut shuffled = q.clone();
        RngState::new(1).shuffle(&mut shuffled);
        let pts = residual_qq_data(&shuffled).unwrap();
        assert_eq!(pts.len(), n);
        for p in &pts {
            assert!((p.theoretical - p.empirical).abs() < 1e-12);
        }
        let pts = residual_qq_data(&[-2.0, 0.0, 2.0]).unwrap();
        assert!((pts[0].empirical + pts[2].empirical).abs() < 1e-15);
        assert!(pts[1].empirical.abs() < 1e-15);
        assert!(matches!(residual_qq_data(&[1.0, 1.0, 1.0]), Err(Error::Degenerate(_))));
        assert!(residual_qq_data(&[1.0]).is_err());
    }
}
