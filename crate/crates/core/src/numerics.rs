//! Stable scalar/vector kernels, the seeded random source, the central
//! finite-difference oracle and distribution statistics.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Default step for [`finite_diff_grad`].
pub const DEFAULT_FD_STEP: f64 = 1e-5;

fn check_finite<T: Scalar>(z: &[T], what: &str) -> Result<()> {
    if let Some(k) = z.iter().position(|v| !v.is_finite()) {
        return Err(Error::Domain(format!(
            "{what}: non-finite entry at index {k}"
        )));
    }
    Ok(())
}

/// `log Σ exp(z_k)` via max subtraction.
pub fn logsumexp<T: Scalar>(z: &[T]) -> Result<T> {
    if z.is_empty() {
        return Err(Error::Dimension("logsumexp of an empty vector".into()));
    }
    check_finite(z, "logsumexp")?;
    Ok(logsumexp_unchecked(z))
}

/// [`logsumexp`] without validation; the caller guarantees a nonempty finite slice.
#[inline]
pub(crate) fn logsumexp_unchecked<T: Scalar>(z: &[T]) -> T {
    let m = z.iter().copied().fold(T::neg_infinity(), T::max);
    if z.len() == 1 {
        return m;
    }
    let s: T = z.iter().map(|&v| (v - m).exp()).sum();
    m + s.ln()
}

/// `z_j − logsumexp(z)`.
pub fn log_softmax<T: Scalar>(z: &[T]) -> Result<Vec<T>> {
    if z.len() < 2 {
        return Err(Error::Dimension(format!(
            "log_softmax needs at least 2 entries, got {}",
            z.len()
        )));
    }
    check_finite(z, "log_softmax")?;
    let mut out = vec![T::zero(); z.len()];
    log_softmax_into(z, &mut out);
    Ok(out)
}

#[inline]
pub(crate) fn log_softmax_into<T: Scalar>(z: &[T], out: &mut [T]) {
    let lse = logsumexp_unchecked(z);
    for (o, &v) in out.iter_mut().zip(z) {
        *o = v - lse;
    }
}

pub fn softmax<T: Scalar>(z: &[T]) -> Result<Vec<T>> {
    let mut p = log_softmax(z)?;
    p.iter_mut().for_each(|v| *v = v.exp());
    Ok(p)
}

/// Logistic function, evaluated without overflow for either sign.
#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `−log σ(x)`, i.e. `log(1 + e^{−x})`, stable for large |x|.
#[inline]
pub fn neg_log_sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        (-x).exp().ln_1p()
    } else {
        -x + x.exp().ln_1p()
    }
}

/// Central-difference gradient of `f` at `z`.
///
/// Every evaluation runs in `f64`; a non-finite function value aborts with the
/// coordinate being perturbed.
pub fn finite_diff_grad<F>(mut f: F, z: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::Config(format!("finite-difference step must be > 0, got {h}")));
    }
    let mut x = z.to_vec();
    let mut grad = Vec::with_capacity(z.len());
    for k in 0..z.len() {
        let orig = x[k];
        x[k] = orig + h;
        let fp = f(&x);
        if !fp.is_finite() {
            return Err(Error::Oracle { coord: k, value: fp });
        }
        x[k] = orig - h;
        let fm = f(&x);
        if !fm.is_finite() {
            return Err(Error::Oracle { coord: k, value: fm });
        }
        x[k] = orig;
        grad.push((fp - fm) / (2.0 * h));
    }
    Ok(grad)
}

/// `‖a − b‖∞ / max(‖a‖∞, ‖b‖∞)`, zero when both vectors are zero.
pub fn max_relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "relative error of unequal lengths");
    let diff = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    let scale = a.iter().chain(b).map(|v| v.abs()).fold(0.0, f64::max);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Gini coefficient `Σ_i Σ_j |x_i − x_j| / (2 n² x̄)`.
///
/// Evaluated in O(n log n) from the sorted values.
pub fn gini_coefficient<T: Scalar>(values: &[T]) -> Result<T> {
    if values.is_empty() {
        return Err(Error::Dimension("gini of an empty sequence".into()));
    }
    check_finite(values, "gini")?;
    if let Some(k) = values.iter().position(|&v| v < T::zero()) {
        return Err(Error::Domain(format!("gini: negative entry at index {k}")));
    }
    let total: T = values.iter().copied().sum();
    if total == T::zero() {
        return Err(Error::UndefinedStatistic(
            "gini of an all-zero sequence".into(),
        ));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let n = T::from_usize_lossy(sorted.len());
    // Σ_i (2i − n − 1) x_(i), i 1-based
    let weighted: T = sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| (T::from_usize_lossy(2 * (i + 1)) - n - T::one()) * x)
        .sum();
    Ok(weighted / (n * total))
}

/// Seeded deterministic random source (ChaCha8 keyed by a 64-bit seed).
///
/// Independent streams come from [`SeededRng::split`], which keys a fresh
/// generator with `seed XOR stream`.
#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn split(&self, stream: u64) -> Self {
        Self::new(self.seed ^ stream)
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.gen::<f64>()
    }

    /// Uniform in `[-scale, scale]`.
    pub fn symmetric(&mut self, scale: f64) -> f64 {
        self.inner.gen_range(-scale..=scale)
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.gen_range(0..n)
    }

    pub fn coin(&mut self) -> bool {
        self.inner.gen::<bool>()
    }

    /// Standard normal via Box-Muller.
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    pub fn shuffle<X>(&mut self, xs: &mut [X]) {
        xs.shuffle(&mut self.inner);
    }

    /// Draws an index from unnormalized log-weights.
    pub fn categorical_from_logits(&mut self, logits: &[f64]) -> usize {
        let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = logits.iter().map(|v| (v - m).exp()).collect();
        let total: f64 = w.iter().sum();
        let mut u = self.uniform() * total;
        for (k, wk) in w.iter().enumerate() {
            if u < *wk {
                return k;
            }
            u -= wk;
        }
        w.len() - 1
    }
}
