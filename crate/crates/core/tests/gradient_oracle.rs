//! Analytic gradients against central finite differences.

use emlreg::kde::BandwidthRule;
use emlreg::losses::{batch_loss_and_grad, eml_with_bandwidths, LossKind};
use emlreg::neuralnet::{backward, forward, he_uniform_init, MlpConfig, MlpParams, Mode};
use emlreg::numerics::{Matrix, RngState};
use emlreg::Exec;

const STEP: f64 = 1e-5;
const TOL: f64 = 1e-6;

/// Rounding floor of a central difference: the two function values each carry
/// a few ulps of error, which the division by `2 * step` amplifies.
fn roundoff_floor(up: f64, down: f64, step: f64) -> f64 {
    16.0 * f64::EPSILON * up.abs().max(down.abs()) / step
}

/// Componentwise relative error, measured against `max(|a|, |b|)` but never
/// against a scale finer than the difference quotient can resolve.
fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    let d = (a - b).abs();
    if d == 0.0 {
        0.0
    } else {
        d / a.abs().max(b.abs()).max(floor / TOL)
    }
}

/// Residuals in [-3, 3] kept at least 1e-4 away from the kinks of `kind`.
fn residuals(rng: &mut RngState, n: usize, kind: &LossKind) -> Vec<f64> {
    let kinks: Vec<f64> = match *kind {
        LossKind::LAD => vec![0.0],
        LossKind::Huber { zeta } => vec![-zeta, zeta],
        LossKind::Tukey { t } => vec![-t, t],
        _ => vec![],
    };
    (0..n)
        .map(|_| loop {
            let x = 6.0 * rng.next_uniform01() - 3.0;
            if kinks.iter().all(|k| (x - k).abs() > 1e-4) {
                break x;
            }
        })
        .collect()
}

/// Value function with bandwidths frozen at `e0`, the quantity the analytic
/// EML gradient differentiates.
fn frozen_value(kind: &LossKind, e0: &[f64]) -> impl Fn(&[f64]) -> f64 {
    let kind = *kind;
    let frozen = match kind {
        LossKind::EML { bandwidth, clamp } => Some((bandwidth.bandwidths(e0).unwrap(), clamp)),
        _ => None,
    };
    move |e: &[f64]| match &frozen {
        Some((h, clamp)) => eml_with_bandwidths(e, h, *clamp, Exec::Sequential).unwrap().value,
        None => batch_loss_and_grad(e, &kind).unwrap().value,
    }
}

/// Central differences paired with their rounding floors.
fn central_difference(f: &dyn Fn(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<(f64, f64)> {
    let mut work = x.to_vec();
    (0..x.len())
        .map(|m| {
            work[m] = x[m] + step;
            let up = f(&work);
            work[m] = x[m] - step;
            let down = f(&work);
            work[m] = x[m];
            ((up - down) / (2.0 * step), roundoff_floor(up, down, step))
        })
        .collect()
}

fn all_kinds() -> Vec<LossKind> {
    vec![
        LossKind::LS,
        LossKind::LAD,
        LossKind::huber(),
        LossKind::cauchy(),
        LossKind::tukey(),
        LossKind::eml(BandwidthRule::fixed(0.5)),
        LossKind::eml(BandwidthRule::knn(0.3)),
    ]
}

#[test]
fn loss_gradients_match_central_differences() {
    let mut rng = RngState::new(2024);
    for kind in all_kinds() {
        let mut worst: f64 = 0.0;
        for _ in 0..50 {
            let e = residuals(&mut rng, 32, &kind);
            let analytic = batch_loss_and_grad(&e, &kind).unwrap().grad_residuals;
            let f = frozen_value(&kind, &e);
            let numeric = central_difference(&f, &e, STEP);
            for (a, (b, floor)) in analytic.iter().zip(&numeric) {
                worst = worst.max(rel_err(*a, *b, *floor));
            }
        }
        println!("{kind:?}: worst relative error {worst:.3e}");
        assert!(worst <= TOL, "{kind:?}: {worst:e}");
    }
}

fn network_loss(net: &MlpConfig, p: &MlpParams, x: &Matrix, w: &[f64]) -> f64 {
    let out = forward(net, p, x, Mode::Eval).unwrap().outputs;
    out.iter().zip(w).map(|(o, w)| o * w).sum()
}

fn check_network(widths: Vec<usize>, seed: u64, step: f64) -> f64 {
    let net = MlpConfig::new(widths, 0.0).unwrap();
    let mut rng = RngState::new(seed);
    let params = he_uniform_init(&net, &mut rng).unwrap();
    let n = 6;
    let x = Matrix::new(n, net.input_dim(), rng.sample_standard_normal(n * net.input_dim())).unwrap();
    let w = rng.sample_standard_normal(n);

    let out = forward(&net, &params, &x, Mode::Train(&mut rng)).unwrap();
    let grads = backward(&net, &params, out.cache.as_ref(), &w).unwrap();

    let mut worst: f64 = 0.0;
    let mut probe = params.clone();
    for (li, layer) in params.layers.iter().enumerate() {
        for k in 0..layer.weight.data().len() + layer.bias.len() {
            let is_weight = k < layer.weight.data().len();
            let set = |p: &mut MlpParams, v: f64| {
                if is_weight {
                    let mut d = p.layers[li].weight.clone().into_data();
                    d[k] = v;
                    let (r, c) = p.layers[li].weight.shape();
                    p.layers[li].weight = Matrix::new(r, c, d).unwrap();
                } else {
                    p.layers[li].bias[k - layer.weight.data().len()] = v;
                }
            };
            let orig = if is_weight { layer.weight.data()[k] } else { layer.bias[k - layer.weight.data().len()] };
            set(&mut probe, orig + step);
            let up = network_loss(&net, &probe, &x, &w);
            set(&mut probe, orig - step);
            let down = network_loss(&net, &probe, &x, &w);
            set(&mut probe, orig);
            let numeric = (up - down) / (2.0 * step);
            let analytic = if is_weight {
                grads.layers[li].weight.data()[k]
            } else {
                grads.layers[li].bias[k - layer.weight.data().len()]
            };
            let err = rel_err(analytic, numeric, roundoff_floor(up, down, step));
            worst = worst.max(err);
            assert!(err <= TOL, "layer {li} param {k}: {analytic} vs {numeric}");
        }
    }
    worst
}

#[test]
fn backward_matches_finite_differences_small_network() {
    let worst = check_network(vec![3, 4, 1], 1, 1e-6);
    println!("(3,4,1): worst relative error {worst:.3e}");
}

#[test]
fn backward_matches_finite_differences_over_seeds() {
    let mut worst: f64 = 0.0;
    for seed in 0..20 {
        worst = worst.max(check_network(vec![5, 8, 8, 1], 100 + seed, 1e-6));
    }
    println!("(5,8,8,1) x 20 seeds: worst relative error {worst:.3e}");
}
