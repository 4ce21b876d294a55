//! Principal component analysis with Hotelling T² and Q-residual
//! diagnostics, confidence limits, outlier screening and score-based masking.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hypercube::Hypercube;
use crate::labels::{ClassMask, Label};
use crate::linalg;
use crate::preprocess::{Pipeline, PreprocessSpec, Step};
use crate::scalar::Real;
use crate::stats;

/// Default confidence level for T² and Q limits.
pub const DEFAULT_ALPHA: f64 = 0.999;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct PcaModel<T> {
    /// Preprocessing; always ends with mean-centering.
    pub pipeline: Pipeline<T>,
    /// `bands × n_pc`, orthonormal columns.
    pub loadings: Array2<T>,
    /// Variance captured by each retained component, non-increasing.
    pub variances: Array1<T>,
    /// Every eigenvalue of the centred covariance, non-increasing.
    pub eigenvalues: Vec<f64>,
    pub n_train: usize,
    pub alpha: f64,
    pub t2_limit: f64,
    pub q_limit: f64,
    train_q: Vec<f64>,
}

/// Fits a PCA model on `x` after the preprocessing in `spec`.
///
/// Centering is appended when `spec` does not already end with it.
pub fn fit_pca<T: Real>(x: ArrayView2<T>, n_pc: usize, spec: &PreprocessSpec) -> Result<PcaModel<T>> {
    fit_pca_at(x, n_pc, spec, DEFAULT_ALPHA)
}

pub fn fit_pca_at<T: Real>(x: ArrayView2<T>, n_pc: usize, spec: &PreprocessSpec, alpha: f64) -> Result<PcaModel<T>> {
    let (n, p) = x.dim();
    if n_pc == 0 || n < 2 || n_pc > (n - 1).min(p) {
        return Err(Error::InvalidParameter(format!("{n_pc} components requested for a {n}x{p} matrix")));
    }
    let mut spec = spec.clone();
    if !spec.centers() {
        spec.steps.push(Step::MeanCenter);
    }
    spec.validate()?;
    let pipeline = spec.fit(x)?;
    let xp = pipeline.apply(x)?;
    let cov = xp.t().dot(&xp) / T::lit((n - 1) as f64);
    let (values, vectors) = linalg::symmetric_eigen(cov.view())?;
    let total: f64 = values.iter().map(|v| v.as_f64().max(0.0)).sum();
    let tol = total * 1e-12 * p as f64;
    let rank = values.iter().filter(|v| v.as_f64() > tol).count();
    if rank == 0 {
        return Err(Error::Degenerate("matrix has rank 0 after preprocessing".into()));
    }
    if rank < n_pc {
        return Err(Error::Degenerate(format!("{n_pc} components requested but the preprocessed matrix has rank {rank}")));
    }
    let mut loadings = vectors.slice(ndarray::s![.., ..n_pc]).to_owned();
    for mut col in loadings.columns_mut() {
        let (_, big) = col.iter().fold((T::zero(), T::zero()), |(m, v), x| if x.abs() > m { (x.abs(), *x) } else { (m, v) });
        if big < T::zero() {
            col.mapv_inplace(|v| -v);
        }
    }
    let variances = values.slice(ndarray::s![..n_pc]).to_owned();
    let eigenvalues: Vec<f64> = values.iter().map(|v| v.as_f64().max(0.0)).collect();
    let mut model = PcaModel {
        pipeline,
        loadings,
        variances,
        eigenvalues,
        n_train: n,
        alpha,
        t2_limit: 0.0,
        q_limit: 0.0,
        train_q: Vec::new(),
    };
    model.train_q = model.q_of_processed(xp.view()).iter().map(|v| v.as_f64()).collect();
    let (t2, q) = model.confidence_limits(alpha)?;
    model.t2_limit = t2;
    model.q_limit = q;
    Ok(model)
}

impl<T: Real> PcaModel<T> {
    pub fn n_components(&self) -> usize {
        self.loadings.ncols()
    }

    pub fn preprocess(&self, x: ArrayView2<T>) -> Result<Array2<T>> {
        self.pipeline.apply(x)
    }

    /// `t = x̃P`.
    pub fn scores(&self, x: ArrayView2<T>) -> Result<Array2<T>> {
        Ok(self.preprocess(x)?.dot(&self.loadings))
    }

    /// `Q = ‖x̃ − tPᵀ‖²`.
    pub fn q_residuals(&self, x: ArrayView2<T>) -> Result<Array1<T>> {
        Ok(self.q_of_processed(self.preprocess(x)?.view()))
    }

    /// `T² = Σ t_k² / variance_k`.
    pub fn hotelling_t2(&self, x: ArrayView2<T>) -> Result<Array1<T>> {
        Ok(self.t2_of_scores(self.scores(x)?.view()))
    }

    /// Scores, T² and Q in one pass.
    pub fn diagnostics(&self, x: ArrayView2<T>) -> Result<(Array2<T>, Array1<T>, Array1<T>)> {
        let xp = self.preprocess(x)?;
        let t = xp.dot(&self.loadings);
        let q = residual_norms(xp.view(), t.view(), self.loadings.view());
        let t2 = self.t2_of_scores(t.view());
        Ok((t, t2, q))
    }

    fn q_of_processed(&self, xp: ArrayView2<T>) -> Array1<T> {
        let t = xp.dot(&self.loadings);
        residual_norms(xp, t.view(), self.loadings.view())
    }

    fn t2_of_scores(&self, t: ArrayView2<T>) -> Array1<T> {
        let inv: Array1<T> = self.variances.mapv(|v| T::one() / v);
        t.rows().into_iter().map(|row| row.iter().zip(inv.iter()).map(|(s, i)| *s * *s * *i).sum()).collect()
    }

    /// `(t2_limit, q_limit)` at confidence `alpha`.
    ///
    /// The Q limit falls back to the empirical training quantile when the
    /// residual eigenvalues vanish.
    pub fn confidence_limits(&self, alpha: f64) -> Result<(f64, f64)> {
        let k = self.n_components();
        let t2 = stats::hotelling_t2_limit(alpha, k, self.n_train)?;
        let resid = &self.eigenvalues[k..];
        let total: f64 = self.eigenvalues.iter().sum();
        let theta = [resid.iter().sum(), resid.iter().map(|v| v * v).sum(), resid.iter().map(|v| v * v * v).sum()];
        let jm = if theta[0] > 1e-12 * total.max(f64::MIN_POSITIVE) { stats::jackson_mudholkar(alpha, theta)? } else { None };
        let q = match jm {
            Some(q) => q,
            None => stats::empirical_quantile(&self.train_q, alpha).unwrap_or(0.0),
        };
        let floor = f64::EPSILON * total.max(1.0);
        Ok((t2, q.max(floor)))
    }
}

fn residual_norms<T: Real>(xp: ArrayView2<T>, t: ArrayView2<T>, loadings: ArrayView2<T>) -> Array1<T> {
    let recon = t.dot(&loadings.t());
    (&xp - &recon).map_axis(Axis(1), |r| r.iter().map(|v| *v * *v).sum())
}

/// Indices of rows inside both the T² and Q limits of a PCA fitted on all rows.
pub fn screen_outliers<T: Real>(x: ArrayView2<T>, n_pc: usize, spec: &PreprocessSpec, alpha: f64) -> Result<Vec<usize>> {
    let model = fit_pca_at(x, n_pc, spec, alpha)?;
    let (_, t2, q) = model.diagnostics(x)?;
    Ok((0..x.nrows()).filter(|&i| t2[i].as_f64() <= model.t2_limit && q[i].as_f64() <= model.q_limit).collect())
}

/// Which side of the score threshold becomes `TARGET`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    /// score > threshold
    Above,
    /// score ≤ threshold
    Below,
    /// whichever side holds fewer pixels
    Minority,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoreMaskOptions {
    pub spec: PreprocessSpec,
    pub n_pc: usize,
    pub pc_index: usize,
    /// Manual threshold; Otsu on the score histogram when absent.
    pub threshold: Option<f64>,
    pub polarity: Polarity,
}

impl Default for ScoreMaskOptions {
    fn default() -> Self {
        Self { spec: PreprocessSpec::snv_mc(), n_pc: 3, pc_index: 0, threshold: None, polarity: Polarity::Minority }
    }
}

#[derive(Debug, Clone)]
pub struct ScoreMask {
    pub mask: ClassMask,
    pub threshold: f64,
    /// Resolved polarity (never `Minority`).
    pub polarity: Polarity,
}

/// Splits the non-excluded pixels of `hc` into `TARGET` and `BACKGROUND` by
/// thresholding one PCA score.
pub fn mask_by_score<T: Real>(hc: &Hypercube<T>, exclusion: &ClassMask, opts: &ScoreMaskOptions) -> Result<ScoreMask> {
    let (h, w) = (hc.height(), hc.width());
    if exclusion.dims() != (h, w) {
        return Err(Error::Dimension("exclusion mask does not match cube".into()));
    }
    if opts.pc_index >= opts.n_pc {
        return Err(Error::InvalidParameter(format!("pc_index {} with {} components", opts.pc_index, opts.n_pc)));
    }
    let keep: Vec<usize> = (0..h * w).filter(|i| exclusion.get(i / w, i % w) != Label::Excluded).collect();
    let spectra = hc.spectra().select(Axis(0), &keep);
    let scores: Vec<f64> = match fit_pca(spectra.view(), opts.n_pc, &opts.spec) {
        Ok(model) => model.scores(spectra.view())?.column(opts.pc_index).iter().map(|v| v.as_f64()).collect(),
        Err(Error::Degenerate(msg)) => {
            log::warn!("score masking on degenerate image {}: {msg}", hc.meta().image_id);
            vec![0.0; keep.len()]
        }
        Err(e) => return Err(e),
    };
    let threshold = match opts.threshold {
        Some(t) => t,
        None => stats::otsu_threshold(&scores).ok_or_else(|| {
            log::warn!("unimodal score histogram on {}; manual threshold required", hc.meta().image_id);
            Error::Degenerate("score histogram is degenerate; a manual threshold is required".into())
        })?,
    };
    let above = scores.iter().filter(|s| **s > threshold).count();
    let polarity = match opts.polarity {
        Polarity::Minority if above * 2 <= scores.len() => Polarity::Above,
        Polarity::Minority => Polarity::Below,
        p => p,
    };
    let mut mask = exclusion.clone();
    for (i, s) in keep.iter().zip(&scores) {
        let is_target = match polarity {
            Polarity::Above => *s > threshold,
            _ => *s <= threshold,
        };
        mask.set(i / w, i % w, if is_target { Label::Target } else { Label::Background });
    }
    Ok(ScoreMask { mask, threshold, polarity })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(n: usize, p: usize, seed: u64, scales: &[f64]) -> Array2<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((n, p), |(_, j)| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z * scales[j % scales.len()]
        })
    }

    #[test]
    fn collinear_points_give_diagonal_loading() {
        let x = array![[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]];
        let m = fit_pca(x.view(), 1, &PreprocessSpec::mean_center()).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert!((m.loadings[[0, 0]] - s).abs() < 1e-12);
        assert!((m.loadings[[1, 0]] - s).abs() < 1e-12);
        let total: f64 = m.eigenvalues.iter().sum();
        assert!((m.variances[0] / total - 1.0).abs() < 1e-12);
        assert!((m.variances[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn loadings_are_orthonormal_and_variances_sorted() {
        let x = gaussian(200, 12, 3, &[3.0, 2.0, 1.0, 0.5]);
        let m = fit_pca(x.view(), 5, &PreprocessSpec::mean_center()).unwrap();
        let g = m.loadings.t().dot(&m.loadings);
        for i in 0..5 {
            for j in 0..5 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((g[[i, j]] - e).abs() < 1e-8);
            }
        }
        assert!(m.variances.windows(2).into_iter().all(|w| w[0] >= w[1]));
        assert!(m.t2_limit > 0.0 && m.q_limit > 0.0);
    }

    #[test]
    fn variances_match_svd_oracle() {
        let x = gaussian(80, 10, 9, &[1.0, 4.0, 0.3, 2.0, 0.1]);
        let m = fit_pca(x.view(), 4, &PreprocessSpec::mean_center()).unwrap();
        let means = x.mean_axis(Axis(0)).unwrap();
        let xc = &x - &means;
        let na = nalgebra::DMatrix::from_fn(80, 10, |i, j| xc[[i, j]]);
        let mut sv: Vec<f64> = na.svd(false, false).singular_values.iter().copied().collect();
        sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
        for k in 0..10 {
            let e = sv[k] * sv[k] / 79.0;
            assert!((m.eigenvalues[k] - e).abs() < 1e-8 * e.max(1.0), "{k}: {} vs {e}", m.eigenvalues[k]);
        }
    }

    #[test]
    fn row_in_subspace_has_zero_q_and_mean_row_zero_t2() {
        let x = gaussian(50, 6, 1, &[1.0]);
        let m = fit_pca(x.view(), 2, &PreprocessSpec::mean_center()).unwrap();
        let means = m.pipeline.means.clone().unwrap();
        let in_plane = &means + &(m.loadings.column(0).to_owned() * 1.7 - m.loadings.column(1).to_owned() * 0.4);
        let rows = ndarray::stack![Axis(0), in_plane, means];
        let q = m.q_residuals(rows.view()).unwrap();
        let t2 = m.hotelling_t2(rows.view()).unwrap();
        assert!(q[0].abs() < 1e-10);
        assert!(t2[1].abs() < 1e-20);
    }

    #[test]
    fn diagnostics_match_explicit_reconstruction() {
        let x = gaussian(60, 8, 5, &[2.0, 1.0, 0.5]);
        let m = fit_pca(x.view(), 3, &PreprocessSpec::mean_center()).unwrap();
        let probe = gaussian(7, 8, 77, &[1.5]);
        let (_, t2, q) = m.diagnostics(probe.view()).unwrap();
        let means = m.pipeline.means.as_ref().unwrap();
        for i in 0..7 {
            let xt: Vec<f64> = (0..8).map(|j| probe[[i, j]] - means[j]).collect();
            let mut recon = [0.0; 8];
            let mut t2e = 0.0;
            for k in 0..3 {
                let s: f64 = (0..8).map(|j| xt[j] * m.loadings[[j, k]]).sum();
                t2e += s * s / m.variances[k];
                for j in 0..8 {
                    recon[j] += s * m.loadings[[j, k]];
                }
            }
            let qe: f64 = (0..8).map(|j| (xt[j] - recon[j]).powi(2)).sum();
            assert!((q[i] - qe).abs() < 1e-10 * qe.max(1.0));
            assert!((t2[i] - t2e).abs() < 1e-10 * t2e.max(1.0));
        }
    }

    #[test]
    fn limits_are_monotone_in_alpha() {
        let x = gaussian(300, 10, 4, &[2.0, 1.0, 0.7, 0.2]);
        let m = fit_pca(x.view(), 3, &PreprocessSpec::mean_center()).unwrap();
        let (t95, q95) = m.confidence_limits(0.95).unwrap();
        let (t999, q999) = m.confidence_limits(0.999).unwrap();
        assert!(t999 > t95 && q999 > q95);
    }

    #[test]
    fn fraction_inside_limits_is_near_nominal() {
        // Monte-Carlo: 100k Gaussian rows
        let x = gaussian(100_000, 6, 2024, &[3.0, 2.0, 1.5, 1.0, 0.8, 0.6]);
        let m = fit_pca(x.view(), 3, &PreprocessSpec::mean_center()).unwrap();
        let (_, t2, q) = m.diagnostics(x.view()).unwrap();
        let inside = (0..x.nrows()).filter(|&i| t2[i] <= m.t2_limit && q[i] <= m.q_limit).count();
        let frac = inside as f64 / x.nrows() as f64 * 100.0;
        assert!((frac - 99.9).abs() <= 0.3, "inside fraction {frac}");
    }

    #[test]
    fn invalid_requests_error() {
        let x = gaussian(3, 2, 1, &[1.0]);
        assert!(fit_pca(x.view(), 3, &PreprocessSpec::mean_center()).is_err());
        let flat = Array2::from_elem((5, 3), 1.0);
        assert!(matches!(fit_pca(flat.view(), 1, &PreprocessSpec::mean_center()), Err(Error::Degenerate(_))));
    }

    #[test]
    fn screen_respects_gaussian_bound() {
        let n = 4000;
        let x = gaussian(n, 8, 31, &[2.0, 1.0, 0.5]);
        let kept = screen_outliers(x.view(), 3, &PreprocessSpec::mean_center(), 0.999).unwrap();
        let removed = n - kept.len();
        let bound = (1.0 - 0.999) * n as f64 + 3.0 * (n as f64).sqrt();
        assert!((removed as f64) <= bound, "removed {removed}");
    }

    proptest! {
        #[test]
        fn reconstruction_identity_and_q_monotone(seed in 0u64..100) {
            let x = gaussian(30, 6, seed, &[2.0, 1.0, 0.5]);
            let mut last = f64::INFINITY;
            for k in 1..=6 {
                let m = fit_pca(x.view(), k, &PreprocessSpec::mean_center()).unwrap();
                let xp = m.preprocess(x.view()).unwrap();
                let t = xp.dot(&m.loadings);
                let resid = &xp - &t.dot(&m.loadings.t());
                let q = m.q_residuals(x.view()).unwrap();
                for i in 0..30 {
                    let r2: f64 = resid.row(i).iter().map(|v| v * v).sum();
                    prop_assert!((r2 - q[i]).abs() < 1e-10);
                }
                let total: f64 = q.sum();
                prop_assert!(total <= last + 1e-9);
                last = total;
            }
            prop_assert!(last < 1e-9);
        }
    }
}
