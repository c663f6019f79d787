//! Training objectives and their gradients with respect to the residuals.
//!
//! Every loss is a mean over the batch. The five pointwise losses are
//! `(1/n) Σ ρ(e_i)`; the EML loss is `(1/n) Σ_i −log max(f(e_i), clamp)` with
//! `f` the kernel density estimate of the residuals themselves.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::kde::{gaussian_kernel, BandwidthRule};

pub const DEFAULT_HUBER_ZETA: f64 = 1.345;
pub const DEFAULT_CAUCHY_KAPPA: f64 = 1.0;
pub const DEFAULT_TUKEY_T: f64 = 4.685;
pub const DEFAULT_EML_CLAMP: f64 = 1e-5;

/// Choice of objective together with its constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum LossKind {
    LS,
    LAD,
    Huber { zeta: f64 },
    Cauchy { kappa: f64 },
    Tukey { t: f64 },
    EML { bandwidth: BandwidthRule, clamp: f64 },
}

impl LossKind {
    pub const NAMES: [&'static str; 6] = ["LS", "LAD", "Huber", "Cauchy", "Tukey", "EML"];

    pub fn huber() -> Self {
        LossKind::Huber { zeta: DEFAULT_HUBER_ZETA }
    }

    pub fn cauchy() -> Self {
        LossKind::Cauchy { kappa: DEFAULT_CAUCHY_KAPPA }
    }

    pub fn tukey() -> Self {
        LossKind::Tukey { t: DEFAULT_TUKEY_T }
    }

    pub fn eml(bandwidth: BandwidthRule) -> Self {
        LossKind::EML {
            bandwidth,
            clamp: DEFAULT_EML_CLAMP,
        }
    }

    /// All six losses with default constants.
    pub fn all_default() -> Vec<LossKind> {
        LossKind::NAMES.iter().map(|n| n.parse().unwrap()).collect()
    }

    pub fn name(&self) -> &'static str {
        match self {
            LossKind::LS => "LS",
            LossKind::LAD => "LAD",
            LossKind::Huber { .. } => "Huber",
            LossKind::Cauchy { .. } => "Cauchy",
            LossKind::Tukey { .. } => "Tukey",
            LossKind::EML { .. } => "EML",
        }
    }

    pub fn is_eml(&self) -> bool {
        matches!(self, LossKind::EML { .. })
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, x: f64| {
            if x > 0.0 && x.is_finite() {
                Ok(())
            } else {
                Err(Error::arg(format!("{name} must be positive and finite, got {x}")))
            }
        };
        match *self {
            LossKind::LS | LossKind::LAD => Ok(()),
            LossKind::Huber { zeta } => positive("Huber zeta", zeta),
            LossKind::Cauchy { kappa } => positive("Cauchy kappa", kappa),
            LossKind::Tukey { t } => positive("Tukey t", t),
            LossKind::EML { bandwidth, clamp } => {
                positive("EML clamp", clamp)?;
                bandwidth.validate()
            }
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    /// Parses a loss name (case-insensitive) into the kind with default constants.
    fn from_str(s: &str) -> Result<Self> {
        let name = s.trim();
        match name.to_ascii_lowercase().as_str() {
            "ls" => Ok(LossKind::LS),
            "lad" => Ok(LossKind::LAD),
            "huber" => Ok(LossKind::huber()),
            "cauchy" => Ok(LossKind::cauchy()),
            "tukey" => Ok(LossKind::tukey()),
            "eml" => Ok(LossKind::eml(BandwidthRule::default())),
            _ => Err(Error::arg(format!(
                "unknown loss `{name}` (valid: {})",
                LossKind::NAMES.join(", ")
            ))),
        }
    }
}

/// Batch loss value and its gradient in each residual.
#[derive(Debug, Clone, PartialEq)]
pub struct LossEval {
    pub value: f64,
    pub grad_residuals: Vec<f64>,
}

fn not_pointwise() -> Error {
    Error::arg("the EML loss is not pointwise; use eml_loss_and_grad")
}

/// `ρ(x)` for the pointwise losses.
pub fn pointwise_loss(kind: &LossKind, x: f64) -> Result<f64> {
    Ok(match *kind {
        LossKind::LS => x * x,
        LossKind::LAD => x.abs(),
        LossKind::Huber { zeta } => {
            if x.abs() <= zeta {
                0.5 * x * x
            } else {
                zeta * x.abs() - 0.5 * zeta * zeta
            }
        }
        LossKind::Cauchy { kappa } => (kappa * kappa * x * x).ln_1p(),
        LossKind::Tukey { t } => {
            if x.abs() <= t {
                let q = 1.0 - (x / t) * (x / t);
                t * t * (1.0 - q * q * q) / 6.0
            } else {
                t * t / 6.0
            }
        }
        LossKind::EML { .. } => return Err(not_pointwise()),
    })
}

/// `ρ'(x)`; the LAD subgradient at 0 is 0.
pub fn pointwise_grad(kind: &LossKind, x: f64) -> Result<f64> {
    Ok(match *kind {
        LossKind::LS => 2.0 * x,
        LossKind::LAD => {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        }
        LossKind::Huber { zeta } => x.clamp(-zeta, zeta),
        LossKind::Cauchy { kappa } => {
            let k2 = kappa * kappa;
            2.0 * k2 * x / (1.0 + k2 * x * x)
        }
        LossKind::Tukey { t } => {
            if x.abs() <= t {
                let q = 1.0 - (x / t) * (x / t);
                x * q * q
            } else {
                0.0
            }
        }
        LossKind::EML { .. } => return Err(not_pointwise()),
    })
}

/// EML loss and gradient, bandwidths recomputed from `residuals` by `rule`.
///
/// The bandwidths are held constant under differentiation.
pub fn eml_loss_and_grad(residuals: &[f64], rule: &BandwidthRule, clamp: f64) -> Result<LossEval> {
    eml_loss_and_grad_with(residuals, rule, clamp, Exec::default())
}

pub fn eml_loss_and_grad_with(
    residuals: &[f64],
    rule: &BandwidthRule,
    clamp: f64,
    exec: Exec,
) -> Result<LossEval> {
    check_eml_input(residuals, clamp)?;
    let h = rule.bandwidths(residuals)?;
    eml_with_bandwidths(residuals, &h, clamp, exec)
}

fn check_eml_input(residuals: &[f64], clamp: f64) -> Result<()> {
    if residuals.len() < 2 {
        return Err(Error::arg(format!(
            "EML loss needs at least 2 residuals, got {}",
            residuals.len()
        )));
    }
    if let Some(i) = residuals.iter().position(|x| !x.is_finite()) {
        return Err(Error::arg(format!("residual {i} is not finite")));
    }
    if !(clamp > 0.0) {
        return Err(Error::arg(format!("EML clamp must be > 0, got {clamp}")));
    }
    Ok(())
}

/// EML loss and gradient for given per-residual bandwidths.
///
/// With `u_ij = (e_j − e_i)/h_i`, `f_i = (1/n) Σ_j K(u_ij)/h_i` and
/// `w_i = −1/(n f_i)` (zero where `f_i` fell below the clamp), the gradient is
/// `∂L/∂e_m = Σ_i a_im − Σ_j a_mj` where `a_ij = w_i K'(u_ij) / (n h_i²)`.
/// The first sum is `e_m` acting as a kernel centre for other queries, the
/// second is `e_m` as the query point.
///
/// Rows of `a` are built independently; all sums run sequentially in index
/// order.
pub fn eml_with_bandwidths(
    residuals: &[f64],
    bandwidths: &[f64],
    clamp: f64,
    exec: Exec,
) -> Result<LossEval> {
    check_eml_input(residuals, clamp)?;
    let n = residuals.len();
    if bandwidths.len() != n {
        return Err(Error::shape("eml_with_bandwidths", n, bandwidths.len()));
    }
    if let Some(i) = bandwidths.iter().position(|&h| !(h > 0.0 && h.is_finite())) {
        return Err(Error::arg(format!("bandwidth {i} must be positive, got {}", bandwidths[i])));
    }
    let nf = n as f64;

    let rows: Vec<(f64, f64, Vec<f64>)> = exec.map_indexed(n, |i| {
        let mut row = vec![0.0; n];
        let (neg_log, row_sum) = eml_row(residuals, i, bandwidths[i], clamp, nf, &mut row);
        (neg_log, row_sum, row)
    });

    // column sums, accumulated over i in order for every m
    let mut col_sum = vec![0.0; n];
    for (_, _, row) in &rows {
        for (c, a) in col_sum.iter_mut().zip(row) {
            *c += a;
        }
    }
    let grad_residuals = col_sum
        .iter()
        .zip(&rows)
        .map(|(c, (_, r, _))| c - r)
        .collect();
    let value = rows.iter().map(|r| r.0).sum::<f64>() / nf;
    Ok(LossEval {
        value,
        grad_residuals,
    })
}

/// Fills `row` with `a_i·` and returns `(−log max(f_i, clamp), Σ_j a_ij)`.
fn eml_row(e: &[f64], i: usize, h: f64, clamp: f64, nf: f64, row: &mut [f64]) -> (f64, f64) {
    let ei = e[i];
    let mut dens = 0.0;
    for (slot, &ej) in row.iter_mut().zip(e) {
        let u = (ej - ei) / h;
        let k = gaussian_kernel(u);
        dens += k;
        // stash K'(u) = −u K(u); scaled below once the weight is known
        *slot = -u * k;
    }
    let f = dens / (nf * h);
    if f < clamp {
        row.fill(0.0);
        return (-clamp.ln(), 0.0);
    }
    let scale = -1.0 / (nf * f) / (nf * h * h);
    let mut s = 0.0;
    for slot in row.iter_mut() {
        *slot *= scale;
        s += *slot;
    }
    (-f.ln(), s)
}

/// Mean loss and residual gradient for any kind.
pub fn batch_loss_and_grad(residuals: &[f64], kind: &LossKind) -> Result<LossEval> {
    batch_loss_and_grad_with(residuals, kind, Exec::default())
}

pub fn batch_loss_and_grad_with(residuals: &[f64], kind: &LossKind, exec: Exec) -> Result<LossEval> {
    kind.validate()?;
    if let LossKind::EML { bandwidth, clamp } = kind {
        return eml_loss_and_grad_with(residuals, bandwidth, *clamp, exec);
    }
    if residuals.is_empty() {
        return Err(Error::arg("loss needs at least one residual"));
    }
    let nf = residuals.len() as f64;
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(residuals.len());
    for &e in residuals {
        total += pointwise_loss(kind, e)?;
        grad.push(pointwise_grad(kind, e)? / nf);
    }
    Ok(LossEval {
        value: total / nf,
        grad_residuals: grad,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kde::kde_at;
    use crate::numerics::RngState;

    #[test]
    fn pointwise_examples() {
        let v = pointwise_loss(&LossKind::huber(), 2.0).unwrap();
        assert!((v - 1.785_487_5).abs() < 1e-12);
        let v = pointwise_loss(&LossKind::cauchy(), 1.0).unwrap();
        assert!((v - std::f64::consts::LN_2).abs() < 1e-12);
        let v = pointwise_loss(&LossKind::tukey(), 10.0).unwrap();
        assert!((v - 4.685f64.powi(2) / 6.0).abs() < 1e-12);
        assert!((v - 3.658_204).abs() < 1e-6);
    }

    #[test]
    fn pointwise_grad_examples() {
        assert_eq!(pointwise_grad(&LossKind::LS, 3.0).unwrap(), 6.0);
        assert_eq!(pointwise_grad(&LossKind::LAD, 0.0).unwrap(), 0.0);
        assert_eq!(pointwise_grad(&LossKind::tukey(), 5.0).unwrap(), 0.0);
    }

    #[test]
    fn eml_is_not_pointwise() {
        let eml = LossKind::eml(BandwidthRule::fixed(1.0));
        assert!(pointwise_loss(&eml, 0.0).is_err());
        assert!(pointwise_grad(&eml, 0.0).is_err());
    }

    #[test]
    fn eml_two_equal_points() {
        let r = eml_loss_and_grad(&[0.0, 0.0], &BandwidthRule::fixed(1.0), 1e-5).unwrap();
        assert!((r.value - 0.918_938_533_2).abs() < 1e-9);
        assert_eq!(r.grad_residuals, vec![0.0, 0.0]);
    }

    #[test]
    fn eml_two_points() {
        let r = eml_loss_and_grad(&[0.0, 1.0], &BandwidthRule::fixed(1.0), 1e-5).unwrap();
        let f = (0.398_942_280_4 + 0.241_970_724_5) / 2.0;
        assert!((r.value + f64::ln(f)).abs() < 1e-9);
        assert!((r.value - 1.138_008_729_6).abs() < 1e-9);
        assert!(r.grad_residuals[0] != 0.0);
        assert_eq!(r.grad_residuals[0], -r.grad_residuals[1]);
        // pulling the two residuals together raises the density
        assert!(r.grad_residuals[0] < 0.0);
    }

    #[test]
    fn eml_argument_errors() {
        let rule = BandwidthRule::fixed(1.0);
        assert!(eml_loss_and_grad(&[1.0], &rule, 1e-5).is_err());
        assert!(eml_loss_and_grad(&[1.0, f64::NAN], &rule, 1e-5).is_err());
        assert!(eml_loss_and_grad(&[1.0, 2.0], &rule, 0.0).is_err());
    }

    #[test]
    fn batch_examples() {
        let r = batch_loss_and_grad(&[1.0, -1.0, 2.0], &LossKind::LS).unwrap();
        assert!((r.value - 2.0).abs() < 1e-15);
        let want = [2.0 / 3.0, -2.0 / 3.0, 4.0 / 3.0];
        for (g, w) in r.grad_residuals.iter().zip(want) {
            assert!((g - w).abs() < 1e-15);
        }
        let r = batch_loss_and_grad(&[3.0], &LossKind::LAD).unwrap();
        assert_eq!((r.value, r.grad_residuals), (3.0, vec![1.0]));
        for kind in LossKind::all_default().iter().filter(|k| !k.is_eml()) {
            let r = batch_loss_and_grad(&[0.0; 5], kind).unwrap();
            assert_eq!(r.value, 0.0);
            assert!(r.grad_residuals.iter().all(|&g| g == 0.0));
        }
        assert!(batch_loss_and_grad(&[], &LossKind::LS).is_err());
    }

    #[test]
    fn names_roundtrip() {
        for name in LossKind::NAMES {
            let k: LossKind = name.parse().unwrap();
            assert_eq!(k.name(), name);
        }
        let err = "quantile".parse::<LossKind>().unwrap_err().to_string();
        assert!(err.contains("Huber"), "{err}");
    }

    #[test]
    fn bounded_influence() {
        let grid: Vec<f64> = (0..=20_000).map(|k| -100.0 + k as f64 * 0.01).collect();
        for &x in &grid {
            assert!(pointwise_grad(&LossKind::LAD, x).unwrap().abs() <= 1.0);
            assert!(pointwise_grad(&LossKind::huber(), x).unwrap().abs() <= DEFAULT_HUBER_ZETA);
            assert!(pointwise_grad(&LossKind::cauchy(), x).unwrap().abs() <= DEFAULT_CAUCHY_KAPPA + 1e-15);
            if x.abs() > DEFAULT_TUKEY_T {
                assert_eq!(pointwise_grad(&LossKind::tukey(), x).unwrap(), 0.0);
            }
        }
        let peak = pointwise_grad(&LossKind::Cauchy { kappa: 2.0 }, 0.5).unwrap();
        assert!((peak - 2.0).abs() < 1e-15);
    }

    #[test]
    fn clamp_is_monotone() {
        let e = [0.0, 0.1, 50.0, -80.0];
        let rule = BandwidthRule::fixed(0.05);
        let mut prev = f64::INFINITY;
        for clamp in [1e-1, 1e-2, 1e-3, 1e-5, 1e-8, 1e-12] {
            let v = eml_loss_and_grad(&e, &rule, clamp).unwrap().value;
            assert!(v <= prev);
            prev = v;
        }
    }

    #[test]
    fn clamped_terms_have_no_gradient_through_log() {
        // Two far-apart pairs: every density is tiny at h = 0.01 except the
        // self terms, so a huge clamp zeroes everything.
        let e = [0.0, 0.5, 10.0, 10.5];
        let r = eml_loss_and_grad(&e, &BandwidthRule::fixed(0.01), 100.0).unwrap();
        assert!((r.value + 100f64.ln()).abs() < 1e-12);
        assert!(r.grad_residuals.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn matches_kde_at_and_modes_agree() {
        let mut rng = RngState::new(8);
        let e = rng.sample_standard_normal(50);
        let rule = BandwidthRule::knn(0.3);
        let h = rule.bandwidths(&e).unwrap();
        let seq = eml_loss_and_grad_with(&e, &rule, 1e-5, Exec::Sequential).unwrap();
        let par = eml_loss_and_grad_with(&e, &rule, 1e-5, Exec::Parallel).unwrap();
        assert_eq!(seq, par);
        let naive: f64 = (0..e.len()).map(|i| -kde_at(&e, i, &h).max(1e-5).ln()).sum::<f64>() / 50.0;
        assert!((seq.value - naive).abs() < 1e-12);
    }
}
