//! Soft PLS-DA: PLS2 regression onto class dummies with per-class
//! acceptance ranges on the predicted values and a Q-residual limit. Rows
//! that pass no class, or more than one, are not assigned. The sparse variant
//! soft-thresholds each weight vector to a fixed number of variables.

mod grid;
mod io;
mod pls;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detect::PredictionImage;
use crate::error::{Error, Result};
use crate::hypercube::{BandSet, Hypercube};
use crate::labels::{ClassMask, Label};
use crate::pca::DEFAULT_ALPHA;
use crate::sampling::SpectrumClass;
use crate::scalar::Real;
use crate::stats;

pub use grid::{default_k_grid, grid_search, GridCell, GridConfig, GridResult};
pub use io::{MODEL_FORMAT, MODEL_VERSION};
pub use pls::{
    fit_pls2, fit_sparse_pls2, one_hot, soft_threshold, ClassScoreStats, PlsModel, ResidualStats, MAX_NIPALS_ITER, NIPALS_TOL,
};

/// PLS model with soft acceptance limits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct SoftPlsdaModel<T> {
    pub pls: PlsModel<T>,
    /// Per class, bounds on that class's predicted value.
    pub t_lower: Vec<f64>,
    pub t_upper: Vec<f64>,
    pub q_limit: f64,
    pub alpha: f64,
    /// Wavelength of each model band; may be empty for models fitted on bare
    /// matrices.
    pub wavelengths: Vec<f64>,
}

/// Per-class acceptance range from training prediction statistics.
///
/// The lower bound is where the class and non-class Gaussians have equal
/// density; the upper bound is `μ_c + z_α σ_c`. If the crossing does not fall
/// below the upper bound (a class the model cannot separate) the lower bound
/// becomes `μ_c − z_α σ_c`.
pub(crate) fn class_range(stats: &[ClassScoreStats], c: usize, z: f64) -> Result<(f64, f64)> {
    let own = &stats[c];
    let sd_c = own.sd[c];
    if own.count < 2 || !(sd_c > 0.0) {
        return Err(Error::DegenerateClass { class: c });
    }
    let mu_c = own.mean[c];
    let others: Vec<&ClassScoreStats> =
        stats.iter().enumerate().filter(|(j, s)| *j != c && s.count > 0).map(|(_, s)| s).collect();
    let n: usize = others.iter().map(|s| s.count).sum();
    if n == 0 {
        return Err(Error::DegenerateClass { class: c });
    }
    let mu_o = others.iter().map(|s| s.count as f64 * s.mean[c]).sum::<f64>() / n as f64;
    let ss: f64 = others
        .iter()
        .map(|s| (s.count.saturating_sub(1)) as f64 * s.sd[c].powi(2) + s.count as f64 * (s.mean[c] - mu_o).powi(2))
        .sum();
    let floor = 1e-12 * (mu_c - mu_o).abs().max(1.0);
    let sd_o = if n > 1 { (ss / (n - 1) as f64).sqrt() } else { 0.0 }.max(floor);
    let upper = mu_c + z * sd_c;
    let mut lower = stats::gaussian_crossing(mu_o, sd_o, mu_c, sd_c);
    if !(lower < upper) {
        lower = mu_c - z * sd_c;
    }
    Ok((lower, upper))
}

/// Q limit from the X residual spectrum, with the empirical training quantile
/// as fallback when the residual eigenvalues vanish.
pub(crate) fn q_limit(theta: [f64; 3], total: f64, train_q: &[f64], alpha: f64) -> Result<f64> {
    let jm = if theta[0] > 1e-12 * total.max(f64::MIN_POSITIVE) { stats::jackson_mudholkar(alpha, theta)? } else { None };
    let q = jm.or_else(|| stats::empirical_quantile(train_q, alpha)).unwrap_or(0.0);
    Ok(q.max(f64::EPSILON * total.max(1.0)))
}

/// Attaches acceptance limits at confidence `alpha` to a fitted PLS-DA model.
pub fn soft_limits<T: Real>(model: PlsModel<T>, alpha: f64) -> Result<SoftPlsdaModel<T>> {
    if !(alpha > 0.5 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!("alpha = {alpha}")));
    }
    if model.class_stats.is_empty() {
        return Err(Error::InvalidParameter("model was not fitted on a one-hot class coding".into()));
    }
    let z = stats::normal_quantile(alpha)?;
    let mut t_lower = Vec::new();
    let mut t_upper = Vec::new();
    for c in 0..model.n_classes() {
        let (lo, hi) = class_range(&model.class_stats, c, z)?;
        t_lower.push(lo);
        t_upper.push(hi);
    }
    let r = &model.residual;
    let q_limit = q_limit(r.theta, r.total, &r.train_q, alpha)?;
    Ok(SoftPlsdaModel { pls: model, t_lower, t_upper, q_limit, alpha, wavelengths: Vec::new() })
}

/// The three-rule decision for each row: class index, or `None` when not
/// assigned.
pub(crate) fn decide<T: Real>(yhat: ArrayView2<T>, q: &[T], lower: &[f64], upper: &[f64], q_lim: f64) -> Vec<Option<usize>> {
    yhat.rows()
        .into_iter()
        .zip(q)
        .map(|(row, q)| {
            if !(q.as_f64() <= q_lim) {
                return None;
            }
            let mut hit = None;
            for (c, v) in row.iter().enumerate() {
                let v = v.as_f64();
                if lower[c] <= v && v <= upper[c] {
                    if hit.is_some() {
                        return None;
                    }
                    hit = Some(c);
                }
            }
            hit
        })
        .collect()
}

impl<T: Real> SoftPlsdaModel<T> {
    pub fn with_wavelengths(mut self, wavelengths: Vec<f64>) -> Result<Self> {
        if wavelengths.len() != self.pls.bands() {
            return Err(Error::Dimension(format!("{} wavelengths for {} bands", wavelengths.len(), self.pls.bands())));
        }
        self.wavelengths = wavelengths;
        Ok(self)
    }

    pub fn classes(&self) -> &[String] {
        &self.pls.classes
    }

    pub fn n_lv(&self) -> usize {
        self.pls.n_lv()
    }

    /// Short identifier used on prediction images and reports.
    pub fn name(&self) -> String {
        match self.pls.k_per_lv {
            Some(k) if self.pls.is_sparse() => format!("s-soft-plsda-{}lv-{k}", self.n_lv()),
            _ => format!("soft-plsda-{}lv", self.n_lv()),
        }
    }

    /// Predicted values and Q for each row.
    pub fn evaluate(&self, x: ArrayView2<T>) -> Result<(Array2<T>, Array1<T>)> {
        self.pls.predict_with_q(x)
    }

    /// Class index per row, `None` for not assigned.
    pub fn assign(&self, x: ArrayView2<T>) -> Result<Vec<Option<usize>>> {
        let (yhat, q) = self.evaluate(x)?;
        Ok(decide(yhat.view(), q.as_slice().expect("contiguous"), &self.t_lower, &self.t_upper, self.q_limit))
    }

    /// Per-row outcome of each rule: `(q_ok, passes[c])`.
    pub fn rule_table(&self, x: ArrayView2<T>) -> Result<Vec<(bool, Vec<bool>)>> {
        let (yhat, q) = self.evaluate(x)?;
        Ok(yhat
            .rows()
            .into_iter()
            .zip(q.iter())
            .map(|(row, q)| {
                let passes =
                    row.iter().enumerate().map(|(c, v)| self.t_lower[c] <= v.as_f64() && v.as_f64() <= self.t_upper[c]).collect();
                (q.as_f64() <= self.q_limit, passes)
            })
            .collect())
    }

    /// Band indices with a nonzero weight in any LV.
    pub fn selected_indices(&self) -> Vec<usize> {
        let mut all: Vec<usize> = self.pls.support.iter().flatten().copied().collect();
        all.sort_unstable();
        all.dedup();
        all
    }

    /// Image label for each class; classes must be named after spectrum
    /// classes.
    fn class_labels(&self) -> Result<Vec<Label>> {
        self.classes().iter().map(|c| c.parse::<SpectrumClass>().map(SpectrumClass::label)).collect()
    }

    /// Column indices of `cube_wavelengths` the model reads.
    fn band_map(&self, cube_wavelengths: &[f64]) -> Result<Vec<usize>> {
        if self.wavelengths.is_empty() {
            if cube_wavelengths.len() != self.pls.bands() {
                return Err(Error::Dimension(format!(
                    "cube has {} bands, model expects {}",
                    cube_wavelengths.len(),
                    self.pls.bands()
                )));
            }
            return Ok((0..cube_wavelengths.len()).collect());
        }
        self.wavelengths
            .iter()
            .map(|w| {
                cube_wavelengths
                    .iter()
                    .position(|c| (c - w).abs() < 1e-6)
                    .ok_or_else(|| Error::Dimension(format!("cube lacks model wavelength {w} nm")))
            })
            .collect()
    }
}

/// Bands carrying nonzero weight in any LV of the model. Use
/// [`BandSet::runs_nm`] with the model wavelengths for nm intervals.
pub fn selected_bands<T: Real>(model: &SoftPlsdaModel<T>) -> Result<BandSet> {
    BandSet::new(model.selected_indices())
}

const PIXEL_CHUNK: usize = 4096;

/// Labels every pixel that is not EXCLUDED in `exclusion`.
pub fn predict_image<T: Real>(model: &SoftPlsdaModel<T>, hc: &Hypercube<T>, exclusion: &ClassMask) -> Result<PredictionImage> {
    let (h, w) = (hc.height(), hc.width());
    if exclusion.dims() != (h, w) {
        return Err(Error::Dimension("exclusion mask does not match cube".into()));
    }
    let labels = model.class_labels()?;
    let bands = model.band_map(hc.wavelengths())?;
    let pixels: Vec<usize> = (0..h * w).filter(|i| exclusion.get(i / w, i % w) != Label::Excluded).collect();
    let spectra = hc.spectra();
    let decided: Vec<Vec<Option<usize>>> = pixels
        .par_chunks(PIXEL_CHUNK)
        .map(|chunk| {
            let x = spectra.select(Axis(0), chunk).select(Axis(1), &bands);
            model.assign(x.view())
        })
        .collect::<Result<_>>()?;
    let mut out = ClassMask::filled(h, w, Label::Excluded);
    for (pix, d) in pixels.iter().zip(decided.into_iter().flatten()) {
        out.set(pix / w, pix % w, d.map(|c| labels[c]).unwrap_or(Label::NotAssigned));
    }
    Ok(PredictionImage::new(out, hc.meta().image_id.clone(), model.name()))
}

/// Fits Soft PLS-DA on a spectra table at the default confidence level.
pub fn fit_soft_plsda<T: Real>(
    table: &crate::sampling::SpectraTable<T>,
    n_lv: usize,
    k_per_lv: Option<usize>,
    spec: &crate::preprocess::PreprocessSpec,
    alpha: Option<f64>,
) -> Result<SoftPlsdaModel<T>> {
    let y = one_hot::<T>(&table.class_indices(), 2);
    let pls = match k_per_lv {
        Some(k) => fit_sparse_pls2(table.x().view(), y.view(), n_lv, k, spec)?,
        None => fit_pls2(table.x().view(), y.view(), n_lv, spec)?,
    }
    .with_classes(SpectrumClass::names())?;
    soft_limits(pls, alpha.unwrap_or(DEFAULT_ALPHA))?.with_wavelengths(table.wavelengths().to_vec())
}
