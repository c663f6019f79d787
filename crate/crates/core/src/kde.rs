//! Kernel density estimation at the residuals.
//!
//! The density at residual `i` is
//! `f(e_i) = (1/n) Σ_j K((e_j − e_i) / h_i) / h_i`, self-term included, where
//! `h_i` is the bandwidth attached to the query point. Bandwidths are either
//! one fixed value or the k-nearest-neighbour rule: `h_i` is the range of the
//! `⌈n·v⌉` residuals closest to `e_i` (itself included).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `1 / sqrt(2π)`
pub const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal density.
#[inline]
pub fn gaussian_kernel(t: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * t * t).exp()
}

/// `d/dt` of [`gaussian_kernel`].
#[inline]
pub fn gaussian_kernel_deriv(t: f64) -> f64 {
    -t * gaussian_kernel(t)
}

/// Kernel choice. Only the Gaussian kernel ships.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum KernelSpec {
    #[default]
    Gaussian,
}

impl KernelSpec {
    #[inline]
    pub fn eval(self, t: f64) -> f64 {
        match self {
            KernelSpec::Gaussian => gaussian_kernel(t),
        }
    }

    #[inline]
    pub fn deriv(self, t: f64) -> f64 {
        match self {
            KernelSpec::Gaussian => gaussian_kernel_deriv(t),
        }
    }

    /// `∫ K(t) t^r dt` over `[-12, 12]` by composite Simpson, `r ∈ {0, 1, 2}`.
    pub fn moment(self, r: u32) -> Result<f64> {
        if r > 2 {
            return Err(Error::arg(format!("kernel moment order {r} not supported (0..=2)")));
        }
        const HALF_WIDTH: f64 = 12.0;
        const INTERVALS: usize = 4800;
        let step = 2.0 * HALF_WIDTH / INTERVALS as f64;
        let f = |t: f64| self.eval(t) * t.powi(r as i32);
        let mut acc = f(-HALF_WIDTH) + f(HALF_WIDTH);
        for k in 1..INTERVALS {
            let t = -HALF_WIDTH + k as f64 * step;
            acc += if k % 2 == 1 { 4.0 } else { 2.0 } * f(t);
        }
        Ok(acc * step / 3.0)
    }
}

/// Lower bound applied to nearest-neighbour bandwidths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BandwidthFloor {
    Absolute { value: f64 },
    /// `fraction × (max e − min e)`, or `fallback` when every residual is equal.
    RelativeToRange { fraction: f64, fallback: f64 },
}

impl Default for BandwidthFloor {
    fn default() -> Self {
        BandwidthFloor::RelativeToRange {
            fraction: 1e-3,
            fallback: 1e-6,
        }
    }
}

impl BandwidthFloor {
    pub fn resolve(&self, residuals: &[f64]) -> f64 {
        match *self {
            BandwidthFloor::Absolute { value } => value,
            BandwidthFloor::RelativeToRange { fraction, fallback } => {
                let (lo, hi) = min_max(residuals);
                let range = hi - lo;
                if range > 0.0 {
                    (fraction * range).max(f64::MIN_POSITIVE)
                } else {
                    fallback
                }
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            BandwidthFloor::Absolute { value } => value > 0.0 && value.is_finite(),
            BandwidthFloor::RelativeToRange { fraction, fallback } => {
                fraction > 0.0 && fraction.is_finite() && fallback > 0.0 && fallback.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::arg(format!("bandwidth floor must be positive: {self:?}")))
        }
    }
}

/// How the per-residual bandwidths are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BandwidthRule {
    Fixed { h: f64 },
    KnnProportion {
        v: f64,
        #[serde(default)]
        floor: BandwidthFloor,
    },
}

impl Default for BandwidthRule {
    fn default() -> Self {
        BandwidthRule::knn(0.2)
    }
}

impl BandwidthRule {
    pub fn fixed(h: f64) -> Self {
        BandwidthRule::Fixed { h }
    }

    pub fn knn(v: f64) -> Self {
        BandwidthRule::KnnProportion {
            v,
            floor: BandwidthFloor::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            BandwidthRule::Fixed { h } if h > 0.0 && h.is_finite() => Ok(()),
            BandwidthRule::Fixed { h } => Err(Error::arg(format!("fixed bandwidth must be > 0, got {h}"))),
            BandwidthRule::KnnProportion { v, floor } => {
                if !(v > 0.0 && v <= 1.0) {
                    return Err(Error::arg(format!("neighbourhood proportion must lie in (0, 1], got {v}")));
                }
                floor.validate()
            }
        }
    }

    /// Bandwidth for every residual.
    pub fn bandwidths(&self, residuals: &[f64]) -> Result<Vec<f64>> {
        self.validate()?;
        match *self {
            BandwidthRule::Fixed { h } => Ok(vec![h; residuals.len()]),
            BandwidthRule::KnnProportion { v, floor } => {
                knn_bandwidths(residuals, v, floor.resolve(residuals))
            }
        }
    }
}

fn min_max(xs: &[f64]) -> (f64, f64) {
    xs.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
}

/// Nearest-neighbour bandwidths.
///
/// For each `i`, takes the `k = ⌈n·v⌉` residuals nearest to `e_i` in absolute
/// distance (self included; equal distances go to the smaller index) and
/// returns their range, raised to `floor` when smaller.
///
/// The residuals are sorted once; each neighbourhood is then grown outward
/// from `e_i`'s sorted position, so the cost is `O(n log n + n·k)`.
pub fn knn_bandwidths(residuals: &[f64], v: f64, floor: f64) -> Result<Vec<f64>> {
    let n = residuals.len();
    if n < 2 {
        return Err(Error::arg(format!("knn bandwidths need at least 2 residuals, got {n}")));
    }
    if !(v > 0.0 && v <= 1.0) {
        return Err(Error::arg(format!("neighbourhood proportion must lie in (0, 1], got {v}")));
    }
    if !(floor > 0.0) {
        return Err(Error::arg(format!("bandwidth floor must be > 0, got {floor}")));
    }
    if residuals.iter().any(|x| !x.is_finite()) {
        return Err(Error::arg("residuals must be finite"));
    }
    let k = ((n as f64 * v).ceil() as usize).clamp(1, n);

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| residuals[a].total_cmp(&residuals[b]).then(a.cmp(&b)));
    let sorted: Vec<f64> = order.iter().map(|&i| residuals[i]).collect();

    let mut out = vec![0.0; n];
    for (pos, &i) in order.iter().enumerate() {
        let range = neighbourhood_range(&sorted, &order, pos, k);
        out[i] = if range < floor { floor } else { range };
    }
    Ok(out)
}

/// Range of the `k` nearest values to `sorted[pos]`.
fn neighbourhood_range(sorted: &[f64], order: &[usize], pos: usize, k: usize) -> f64 {
    let n = sorted.len();
    let x = sorted[pos];
    // [lo, hi] is the taken window in sorted positions.
    let (mut lo, mut hi) = (pos, pos);
    let mut taken = 1;
    while taken < k {
        let dl = if lo > 0 { x - sorted[lo - 1] } else { f64::INFINITY };
        let dr = if hi + 1 < n { sorted[hi + 1] - x } else { f64::INFINITY };
        if dl < dr {
            lo -= 1;
            taken += 1;
        } else if dr < dl {
            hi += 1;
            taken += 1;
        } else {
            // Equal distance on both sides. Gather every candidate at that
            // distance and hand out the remaining slots by original index.
            let dist = dl;
            let mut left_end = lo;
            while left_end > 0 && x - sorted[left_end - 1] == dist {
                left_end -= 1;
            }
            let mut right_end = hi;
            while right_end + 1 < n && sorted[right_end + 1] - x == dist {
                right_end += 1;
            }
            let tied = (lo - left_end) + (right_end - hi);
            let need = k - taken;
            if need >= tied {
                lo = left_end;
                hi = right_end;
                taken += tied;
                continue;
            }
            let mut cands: Vec<(usize, bool)> = (left_end..lo)
                .map(|p| (order[p], true))
                .chain((hi + 1..=right_end).map(|p| (order[p], false)))
                .collect();
            cands.sort_unstable();
            let take_left = cands[..need].iter().any(|c| c.1);
            let take_right = cands[..need].iter().any(|c| !c.1);
            let min = if take_left { sorted[lo - 1] } else { sorted[lo] };
            let max = if take_right { sorted[hi + 1] } else { sorted[hi] };
            return max - min;
        }
    }
    sorted[hi] - sorted[lo]
}

/// Density estimate at residual `query`, using `bandwidths[query]`.
pub fn kde_at(residuals: &[f64], query: usize, bandwidths: &[f64]) -> f64 {
    let h = bandwidths[query];
    density_at(residuals, residuals[query], h)
}

/// Fixed-bandwidth density `(1/n) Σ_j K((e_j − z)/h)/h` at an arbitrary point.
pub fn density_at(residuals: &[f64], z: f64, h: f64) -> f64 {
    let n = residuals.len() as f64;
    residuals
        .iter()
        .map(|&e| gaussian_kernel((e - z) / h))
        .sum::<f64>()
        / (n * h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngState;

    #[test]
    fn kernel_values() {
        assert!((gaussian_kernel(0.0) - 0.398_942_280_4).abs() < 1e-10);
        assert!((gaussian_kernel(1.0) - 0.241_970_724_5).abs() < 1e-10);
        for t in [0.1, 1.7, 5.0, 40.0] {
            assert_eq!(gaussian_kernel(t), gaussian_kernel(-t));
        }
        assert!(gaussian_kernel(40.0) >= 0.0);
    }

    #[test]
    fn kernel_moments() {
        let k = KernelSpec::Gaussian;
        assert!((k.moment(0).unwrap() - 1.0).abs() < 1e-8);
        assert!(k.moment(1).unwrap().abs() < 1e-8);
        assert!((k.moment(2).unwrap() - 1.0).abs() < 1e-8);
        assert!(matches!(k.moment(3), Err(Error::Argument(_))));
    }

    #[test]
    fn knn_example() {
        let h = knn_bandwidths(&[0.0, 1.0, 2.0, 10.0], 0.5, 1e-9).unwrap();
        assert_eq!(h, vec![1.0, 1.0, 1.0, 8.0]);
    }

    #[test]
    fn knn_equal_residuals_hit_floor() {
        let h = knn_bandwidths(&[3.0; 7], 0.4, 0.25).unwrap();
        assert!(h.iter().all(|&x| x == 0.25));
        let rule = BandwidthRule::knn(0.4);
        let h = rule.bandwidths(&[3.0; 7]).unwrap();
        assert!(h.iter().all(|&x| x == 1e-6));
    }

    #[test]
    fn knn_whole_sample() {
        let e = [0.3, -1.0, 4.0, 2.5, 0.0];
        let h = knn_bandwidths(&e, 1.0, 1e-9).unwrap();
        assert!(h.iter().all(|&x| x == 5.0));
    }

    #[test]
    fn knn_argument_errors() {
        assert!(knn_bandwidths(&[1.0], 0.5, 1e-3).is_err());
        assert!(knn_bandwidths(&[1.0, 2.0], 0.0, 1e-3).is_err());
        assert!(knn_bandwidths(&[1.0, 2.0], 1.5, 1e-3).is_err());
        assert!(BandwidthRule::fixed(0.0).validate().is_err());
    }

    #[test]
    fn kde_examples() {
        let single = [0.0];
        assert!((kde_at(&single, 0, &[1.0]) - 0.398_942_280_4).abs() < 1e-10);
        let two = [0.0, 1.0];
        let want = (0.398_942_280_4 + 0.241_970_724_5) / 2.0;
        assert!((kde_at(&two, 0, &[1.0, 1.0]) - want).abs() < 1e-10);
        assert!((kde_at(&two, 1, &[1.0, 1.0]) - want).abs() < 1e-10);
    }

    #[test]
    fn kde_translation_equivariance() {
        let mut rng = RngState::new(4);
        let e = rng.sample_standard_normal(40);
        let h = vec![0.7; 40];
        for c in [-5.0, 0.3, 12.0] {
            let shifted: Vec<f64> = e.iter().map(|x| x + c).collect();
            for i in 0..e.len() {
                let a = kde_at(&e, i, &h);
                let b = kde_at(&shifted, i, &h);
                assert!((a - b).abs() < 1e-14, "{a} {b}");
            }
        }
    }
}
