//! Distribution quantiles and the statistical limits built on them.

use statrs::distribution::{ContinuousCDF, FisherSnedecor, Normal};

use crate::error::{Error, Result};

/// Standard-normal quantile.
pub fn normal_quantile(p: f64) -> Result<f64> {
    check_prob(p)?;
    let n = Normal::new(0.0, 1.0).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    Ok(n.inverse_cdf(p))
}

/// Quantile of the F distribution with `(d1, d2)` degrees of freedom.
pub fn f_quantile(p: f64, d1: f64, d2: f64) -> Result<f64> {
    check_prob(p)?;
    let f = FisherSnedecor::new(d1, d2).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    Ok(f.inverse_cdf(p))
}

fn check_prob(p: f64) -> Result<()> {
    if p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("confidence level {p} not in (0, 1)")))
    }
}

/// Hotelling T² limit, `k(n−1)/(n−k) · F(alpha; k, n−k)`.
pub fn hotelling_t2_limit(alpha: f64, n_components: usize, n_samples: usize) -> Result<f64> {
    if n_samples <= n_components {
        return Err(Error::InvalidParameter(format!(
            "T² limit needs more samples ({n_samples}) than components ({n_components})"
        )));
    }
    let k = n_components as f64;
    let n = n_samples as f64;
    Ok(k * (n - 1.0) / (n - k) * f_quantile(alpha, k, n - k)?)
}

/// Jackson–Mudholkar Q-residual limit from the power sums `θ1, θ2, θ3` of the
/// residual eigenvalues. Returns `None` when the residual space is empty.
pub fn jackson_mudholkar(alpha: f64, theta: [f64; 3]) -> Result<Option<f64>> {
    let [t1, t2, t3] = theta;
    if !(t1 > 0.0 && t2 > 0.0) || !t1.is_finite() {
        return Ok(None);
    }
    let z = normal_quantile(alpha)?;
    let mut h0 = 1.0 - 2.0 * t1 * t3 / (3.0 * t2 * t2);
    if h0 < 1e-3 {
        h0 = 1e-3;
    }
    let inner = z * (2.0 * t2 * h0 * h0).sqrt() / t1 + 1.0 + t2 * h0 * (h0 - 1.0) / (t1 * t1);
    if inner <= 0.0 {
        return Ok(None);
    }
    let q = t1 * inner.powf(1.0 / h0);
    Ok(q.is_finite().then_some(q))
}

/// Empirical `p`-quantile with linear interpolation between order statistics.
pub fn empirical_quantile(values: &[f64], p: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let pos = p.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    Some(v[lo] * (1.0 - frac) + v[hi] * frac)
}

/// Point between the two means where the densities of `N(mu_a, sd_a)` and
/// `N(mu_b, sd_b)` are equal.
///
/// When no crossing falls between the means (very unequal spreads) the
/// spread-weighted midpoint is returned.
pub fn gaussian_crossing(mu_a: f64, sd_a: f64, mu_b: f64, sd_b: f64) -> f64 {
    let (lo, hi) = if mu_a <= mu_b { (mu_a, mu_b) } else { (mu_b, mu_a) };
    let va = sd_a * sd_a;
    let vb = sd_b * sd_b;
    let a = 1.0 / va - 1.0 / vb;
    let b = -2.0 * (mu_a / va - mu_b / vb);
    let c = mu_a * mu_a / va - mu_b * mu_b / vb + 2.0 * (sd_a / sd_b).ln();
    let fallback = (mu_a * sd_b + mu_b * sd_a) / (sd_a + sd_b);
    let roots: Vec<f64> = if a.abs() < 1e-12 * (1.0 / va + 1.0 / vb) {
        if b.abs() < f64::MIN_POSITIVE {
            vec![]
        } else {
            vec![-c / b]
        }
    } else {
        let disc = b * b - 4.0 * a * c;
        if disc < 0.0 {
            vec![]
        } else {
            let sq = disc.sqrt();
            // numerically stable pair
            let q = -0.5 * (b + b.signum() * sq);
            let mut r = vec![];
            if q != 0.0 {
                r.push(q / a);
                r.push(c / q);
            } else {
                r.push(-b / (2.0 * a));
            }
            r
        }
    };
    roots
        .into_iter()
        .filter(|r| r.is_finite() && *r >= lo && *r <= hi)
        .min_by(|x, y| (x - fallback).abs().total_cmp(&(y - fallback).abs()))
        .unwrap_or(fallback)
}

/// Otsu threshold over a 256-bin histogram. `None` if all values coincide.
pub fn otsu_threshold(values: &[f64]) -> Option<f64> {
    const BINS: usize = 256;
    let (min, max) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
    if values.len() < 2 || !(max - min > 1e-12 * (1.0 + max.abs().max(min.abs()))) {
        return None;
    }
    let width = (max - min) / BINS as f64;
    let mut hist = [0usize; BINS];
    for v in values {
        let b = (((v - min) / width) as usize).min(BINS - 1);
        hist[b] += 1;
    }
    let total = values.len() as f64;
    let centre = |b: usize| min + (b as f64 + 0.5) * width;
    let sum_all: f64 = hist.iter().enumerate().map(|(b, c)| *c as f64 * centre(b)).sum();
    let (mut w0, mut sum0) = (0.0, 0.0);
    let mut best = (f64::NEG_INFINITY, 0usize);
    for (b, c) in hist.iter().enumerate().take(BINS - 1) {
        w0 += *c as f64;
        sum0 += *c as f64 * centre(b);
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let m0 = sum0 / w0;
        let m1 = (sum_all - sum0) / w1;
        let between = w0 * w1 * (m0 - m1) * (m0 - m1);
        if between > best.0 {
            best = (between, b);
        }
    }
    Some(min + (best.1 + 1) as f64 * width)
}
