//! Row-wise spectral preprocessing (SNV, detrend, Savitzky–Golay derivatives)
//! and column mean-centering, composed as a declared pipeline.

use std::fmt;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::scalar::Real;

/// Standard normal variate: each row to mean 0 and sample standard deviation 1.
pub fn snv<T: Real>(x: ArrayView2<T>) -> Result<Array2<T>> {
    let p = x.ncols();
    if p < 2 {
        return Err(Error::InvalidParameter("SNV needs at least two bands".into()));
    }
    let mut out = x.to_owned();
    let n1 = T::lit((p - 1) as f64);
    for (i, mut row) in out.rows_mut().into_iter().enumerate() {
        let mean = row.sum() / T::lit(p as f64);
        let var = row.iter().map(|v| (*v - mean) * (*v - mean)).sum::<T>() / n1;
        let sd = var.sqrt();
        if !(sd > T::epsilon() * (T::one() + mean.abs())) {
            return Err(Error::ConstantRow { row: i });
        }
        row.mapv_inplace(|v| (v - mean) / sd);
    }
    Ok(out)
}

/// Orthonormal polynomial basis (columns) of degree `0..=order` over `n`
/// equally spaced points.
fn polynomial_basis(n: usize, order: usize) -> Array2<f64> {
    let mid = (n as f64 - 1.0) / 2.0;
    let half = mid.max(1.0);
    let mut q = Array2::from_shape_fn((n, order + 1), |(i, k)| ((i as f64 - mid) / half).powi(k as i32));
    for k in 0..=order {
        // two passes of modified Gram-Schmidt
        for _ in 0..2 {
            for j in 0..k {
                let proj = q.column(k).dot(&q.column(j));
                let qj = q.column(j).to_owned();
                q.column_mut(k).scaled_add(-proj, &qj);
            }
        }
        let norm = q.column(k).dot(&q.column(k)).sqrt();
        q.column_mut(k).mapv_inplace(|v| v / norm);
    }
    q
}

/// Subtracts from each row its least-squares polynomial trend of the given
/// order against band index.
pub fn detrend<T: Real>(x: ArrayView2<T>, order: usize) -> Result<Array2<T>> {
    let p = x.ncols();
    if p <= order {
        return Err(Error::InvalidParameter(format!("detrend of order {order} needs more than {order} bands, got {p}")));
    }
    let basis = polynomial_basis(p, order).mapv(T::lit);
    let coef = x.dot(&basis);
    Ok(&x - &coef.dot(&basis.t()))
}

/// Savitzky–Golay filter weights for every output position.
///
/// Interior positions use the centred window; near the edges the window is
/// truncated to the available bands and the polynomial order reduced if the
/// truncated window is too short.
pub(crate) fn savgol_weights(len: usize, deriv: usize, window: usize, poly: usize, delta: f64) -> Result<Vec<(usize, Vec<f64>)>> {
    if window.is_multiple_of(2) || window < 3 {
        return Err(Error::InvalidParameter(format!("window {window} must be odd and at least 3")));
    }
    if window > len {
        return Err(Error::InvalidParameter(format!("window {window} longer than row ({len})")));
    }
    if poly >= window {
        return Err(Error::InvalidParameter(format!("poly order {poly} must be below window {window}")));
    }
    if deriv > poly {
        return Err(Error::InvalidParameter(format!("derivative {deriv} exceeds poly order {poly}")));
    }
    if !(delta > 0.0) {
        return Err(Error::InvalidParameter("sample spacing must be positive".into()));
    }
    let half = window / 2;
    let factorial: f64 = (1..=deriv).map(|k| k as f64).product();
    let scale = factorial / delta.powi(deriv as i32);
    let mut cache: std::collections::HashMap<(usize, usize), Vec<f64>> = Default::default();
    let mut out = Vec::with_capacity(len);
    for i in 0..len {
        let start = i.saturating_sub(half);
        let end = (i + half).min(len - 1);
        let key = (i - start, end - i);
        let w = match cache.get(&key) {
            Some(w) => w.clone(),
            None => {
                let m = end - start + 1;
                let order = poly.min(m - 1);
                let w = if deriv > order {
                    vec![0.0; m]
                } else {
                    let vander = Array2::from_shape_fn((m, order + 1), |(r, k)| ((start + r) as f64 - i as f64).powi(k as i32));
                    let gram = vander.t().dot(&vander);
                    // row `deriv` of (VᵀV)⁻¹Vᵀ
                    let sol = linalg::solve(gram.view(), vander.t())?;
                    sol.row(deriv).iter().map(|v| v * scale).collect()
                };
                cache.insert(key, w.clone());
                w
            }
        };
        out.push((start, w));
    }
    Ok(out)
}

/// Savitzky–Golay derivative of each row; `delta` is the band spacing in the
/// units the derivative is taken against.
pub fn savgol_derivative<T: Real>(x: ArrayView2<T>, deriv: usize, window: usize, poly: usize, delta: f64) -> Result<Array2<T>> {
    if !(1..=2).contains(&deriv) {
        return Err(Error::InvalidParameter(format!("derivative order {deriv} not in 1..=2")));
    }
    let weights: Vec<(usize, Vec<T>)> = savgol_weights(x.ncols(), deriv, window, poly, delta)?
        .into_iter()
        .map(|(s, w)| (s, w.into_iter().map(T::lit).collect()))
        .collect();
    let mut out = Array2::zeros(x.raw_dim());
    for (row, mut dst) in x.rows().into_iter().zip(out.rows_mut()) {
        let row = row.as_slice().map(|s| s.to_vec()).unwrap_or_else(|| row.to_vec());
        for (j, (start, w)) in weights.iter().enumerate() {
            dst[j] = w.iter().zip(&row[*start..]).map(|(a, b)| *a * *b).sum();
        }
    }
    Ok(out)
}

pub fn fit_mean_center<T: Real>(x: ArrayView2<T>) -> Result<Array1<T>> {
    x.mean_axis(Axis(0)).ok_or_else(|| Error::Degenerate("cannot mean-center an empty matrix".into()))
}

pub fn apply_mean_center<T: Real>(x: ArrayView2<T>, means: &Array1<T>) -> Result<Array2<T>> {
    if means.len() != x.ncols() {
        return Err(Error::Dimension(format!("{} column means for {} columns", means.len(), x.ncols())));
    }
    Ok(&x - means)
}

/// One preprocessing step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "step", rename_all = "snake_case")]
pub enum Step {
    Snv,
    Detrend { order: usize },
    SavgolDeriv { deriv_order: usize, window: usize, poly_order: usize },
    MeanCenter,
}

impl Step {
    pub fn detrend() -> Self {
        Step::Detrend { order: 2 }
    }

    pub fn derivative(deriv_order: usize) -> Self {
        Step::SavgolDeriv { deriv_order, window: 15, poly_order: 2 }
    }
}

impl fmt::Display for Step {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Step::Snv => f.write_str("snv"),
            Step::Detrend { order } => write!(f, "detrend{order}"),
            Step::SavgolDeriv { deriv_order, .. } => write!(f, "d{deriv_order}"),
            Step::MeanCenter => f.write_str("mc"),
        }
    }
}

/// Ordered list of preprocessing steps.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreprocessSpec {
    pub steps: Vec<Step>,
}

impl fmt::Display for PreprocessSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.steps.is_empty() {
            return f.write_str("none");
        }
        let names: Vec<String> = self.steps.iter().map(|s| s.to_string()).collect();
        f.write_str(&names.join("+"))
    }
}

impl PreprocessSpec {
    pub fn new(steps: Vec<Step>) -> Result<Self> {
        let spec = Self { steps };
        spec.validate()?;
        Ok(spec)
    }

    pub fn mean_center() -> Self {
        Self { steps: vec![Step::MeanCenter] }
    }

    pub fn snv_mc() -> Self {
        Self { steps: vec![Step::Snv, Step::MeanCenter] }
    }

    pub fn detrend_mc() -> Self {
        Self { steps: vec![Step::detrend(), Step::MeanCenter] }
    }

    pub fn deriv1_mc() -> Self {
        Self { steps: vec![Step::derivative(1), Step::MeanCenter] }
    }

    pub fn deriv2_mc() -> Self {
        Self { steps: vec![Step::derivative(2), Step::MeanCenter] }
    }

    /// The four row-preprocessing variants compared for the classifiers.
    pub fn standard_variants() -> Vec<Self> {
        vec![Self::snv_mc(), Self::deriv1_mc(), Self::detrend_mc(), Self::deriv2_mc()]
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(pos) = self.steps.iter().position(|s| *s == Step::MeanCenter) {
            if pos + 1 != self.steps.len() {
                return Err(Error::InvalidParameter("mean_center must be the final step".into()));
            }
        }
        Ok(())
    }

    pub fn centers(&self) -> bool {
        self.steps.last() == Some(&Step::MeanCenter)
    }

    /// The row-wise steps only (everything but mean-centering).
    pub fn apply_rows<T: Real>(&self, x: ArrayView2<T>) -> Result<Array2<T>> {
        self.validate()?;
        let mut cur = x.to_owned();
        for step in &self.steps {
            cur = match *step {
                Step::Snv => snv(cur.view())?,
                Step::Detrend { order } => detrend(cur.view(), order)?,
                Step::SavgolDeriv { deriv_order, window, poly_order } => {
                    savgol_derivative(cur.view(), deriv_order, window, poly_order, 1.0)?
                }
                Step::MeanCenter => cur,
            };
        }
        Ok(cur)
    }

    /// Learns the column means (if centering) on `x_train`.
    pub fn fit<T: Real>(&self, x_train: ArrayView2<T>) -> Result<Pipeline<T>> {
        let rows = self.apply_rows(x_train)?;
        self.fit_on_rows(rows.view())
    }

    /// As [`fit`](Self::fit) for data that already went through the row steps.
    pub fn fit_on_rows<T: Real>(&self, rows: ArrayView2<T>) -> Result<Pipeline<T>> {
        let means = if self.centers() { Some(fit_mean_center(rows)?) } else { None };
        Ok(Pipeline { spec: self.clone(), means })
    }
}

/// A preprocessing spec with its fitted column means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct Pipeline<T> {
    pub spec: PreprocessSpec,
    pub means: Option<Array1<T>>,
}

impl<T: Real> Pipeline<T> {
    pub fn apply(&self, x: ArrayView2<T>) -> Result<Array2<T>> {
        let rows = self.spec.apply_rows(x)?;
        self.finish_rows(rows)
    }

    /// Applies the fitted centering to row-processed data.
    pub fn finish_rows(&self, rows: Array2<T>) -> Result<Array2<T>> {
        match &self.means {
            Some(m) => apply_mean_center(rows.view(), m),
            None => Ok(rows),
        }
    }

    pub fn bands(&self) -> Option<usize> {
        self.means.as_ref().map(|m| m.len())
    }
}

/// Applies a fitted pipeline; the one code path used for training,
/// cross-validation and prediction.
pub fn apply_pipeline<T: Real>(pipeline: &Pipeline<T>, x: ArrayView2<T>) -> Result<Array2<T>> {
    pipeline.apply(x)
}
