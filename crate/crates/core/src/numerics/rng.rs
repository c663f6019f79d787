use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Seeded random source.
///
/// Backed by ChaCha8 (`rand_chacha`), whose output for a given seed and
/// stream is fixed across platforms and releases. Child states are derived
/// by keeping the seed and selecting a different ChaCha stream, so
/// `fork(k)` for distinct `k` yields independent sequences.
///
/// Transforms:
/// - uniform on `[0, 1)`: top 53 bits of a `u64` times `2^-53`;
/// - standard normal: Box–Muller on two uniforms, the sine branch cached for
///   the next call;
/// - t(2): `Z / sqrt(V / 2)` with `V = -2 ln(U)` a chi-square(2) draw.
///
/// Transcendental functions come from `libm` so draws do not depend on the
/// platform math library.
#[derive(Debug, Clone)]
pub struct RngState {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
    spare_normal: Option<f64>,
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self {
            seed,
            stream,
            inner,
            spare_normal: None,
        }
    }

    /// Independent child state: same seed, stream `k`.
    pub fn fork(&self, k: u64) -> Self {
        Self::with_stream(self.seed, k)
    }

    /// Seed for the `k`-th independent job under `master`: `master` plus
    /// `k + 1` steps of the 64-bit golden-ratio increment, wrapping.
    pub fn child_seed(master: u64, k: u64) -> u64 {
        master.wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(k.wrapping_add(1)))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform draw in `[0, 1)`.
    #[inline]
    pub fn next_uniform01(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw in `(0, 1]`.
    #[inline]
    fn next_uniform_open0(&mut self) -> f64 {
        1.0 - self.next_uniform01()
    }

    pub fn next_standard_normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        let u1 = self.next_uniform_open0();
        let u2 = self.next_uniform01();
        let r = libm::sqrt(-2.0 * libm::log(u1));
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare_normal = Some(r * libm::sin(theta));
        r * libm::cos(theta)
    }

    pub fn next_student_t2(&mut self) -> f64 {
        let z = self.next_standard_normal();
        loop {
            let half_chi2 = -libm::log(self.next_uniform_open0());
            if half_chi2 > 0.0 {
                return z / libm::sqrt(half_chi2);
            }
        }
    }

    pub fn sample_uniform01(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.next_uniform01()).collect()
    }

    pub fn sample_standard_normal(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.next_standard_normal()).collect()
    }

    pub fn sample_student_t2(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.next_student_t2()).collect()
    }

    /// Uniform index in `0..n` (Lemire's multiply-shift, slightly biased for
    /// huge `n`, which never matters at dataset sizes).
    pub fn next_index(&mut self, n: usize) -> usize {
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.next_index(i + 1);
            items.swap(i, j);
        }
    }
}
