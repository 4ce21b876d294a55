//! NIPALS PLS2 with optional Lasso soft-thresholding of the weight vectors.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::preprocess::{Pipeline, PreprocessSpec, Step};
use crate::scalar::Real;

pub const MAX_NIPALS_ITER: usize = 500;
pub const NIPALS_TOL: f64 = 1e-10;

/// Spread of the X-block residuals after the fitted LVs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualStats {
    /// Power sums of the residual covariance eigenvalues.
    pub theta: [f64; 3],
    /// Trace of the centred training covariance before any LV.
    pub total: f64,
    pub n_train: usize,
    /// Training Q values; kept in memory only.
    #[serde(skip)]
    pub train_q: Vec<f64>,
}

/// Mean and standard deviation of the training predictions of one class on
/// every y column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScoreStats {
    pub count: usize,
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct PlsModel<T> {
    pub pipeline: Pipeline<T>,
    pub classes: Vec<String>,
    /// Retained variables per LV, `None` for a dense fit.
    pub k_per_lv: Option<usize>,
    /// `bands × n_lv`, unit-norm columns.
    pub weights: Array2<T>,
    /// `bands × n_lv`.
    pub x_loadings: Array2<T>,
    /// `classes × n_lv`.
    pub y_loadings: Array2<T>,
    /// `bands × n_lv`; scores are `x̃R`.
    pub rotations: Array2<T>,
    /// `bands × classes`.
    pub coefficients: Array2<T>,
    pub y_means: Array1<T>,
    /// Nonzero weight indices per LV.
    pub support: Vec<Vec<usize>>,
    pub residual: ResidualStats,
    /// Empty when Y is not a one-hot coding.
    pub class_stats: Vec<ClassScoreStats>,
}

impl<T: Real> PlsModel<T> {
    pub fn n_lv(&self) -> usize {
        self.weights.ncols()
    }

    pub fn n_classes(&self) -> usize {
        self.y_means.len()
    }

    pub fn bands(&self) -> usize {
        self.weights.nrows()
    }

    pub fn is_sparse(&self) -> bool {
        self.k_per_lv.is_some_and(|k| k < self.bands())
    }

    pub fn with_classes(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.n_classes() {
            return Err(Error::Dimension(format!("{} names for {} classes", names.len(), self.n_classes())));
        }
        self.classes = names;
        Ok(self)
    }

    pub fn preprocess(&self, x: ArrayView2<T>) -> Result<Array2<T>> {
        let xp = self.pipeline.apply(x)?;
        if xp.ncols() != self.bands() {
            return Err(Error::Dimension(format!("{} bands, model expects {}", xp.ncols(), self.bands())));
        }
        Ok(xp)
    }

    /// `ŷ = x̃B + ȳ`.
    pub fn predict(&self, x: ArrayView2<T>) -> Result<Array2<T>> {
        Ok(self.predict_processed(self.preprocess(x)?.view()))
    }

    pub fn predict_processed(&self, xp: ArrayView2<T>) -> Array2<T> {
        xp.dot(&self.coefficients) + &self.y_means
    }

    /// Predictions and X-residual Q for each row.
    pub fn predict_with_q(&self, x: ArrayView2<T>) -> Result<(Array2<T>, Array1<T>)> {
        let xp = self.preprocess(x)?;
        let t = xp.dot(&self.rotations);
        let resid = &xp - &t.dot(&self.x_loadings.t());
        let q = resid.map_axis(Axis(1), |r| r.iter().map(|v| *v * *v).sum());
        Ok((self.predict_processed(xp.view()), q))
    }

    pub fn scores(&self, x: ArrayView2<T>) -> Result<Array2<T>> {
        Ok(self.preprocess(x)?.dot(&self.rotations))
    }
}

/// Dense NIPALS PLS2 on `x` (preprocessed by `spec`, centred) against `y`.
pub fn fit_pls2<T: Real>(x: ArrayView2<T>, y: ArrayView2<T>, n_lv: usize, spec: &PreprocessSpec) -> Result<PlsModel<T>> {
    fit(x, y, n_lv, None, spec)
}

/// Sparse PLS2: each weight vector keeps `k_per_lv` nonzero entries.
pub fn fit_sparse_pls2<T: Real>(
    x: ArrayView2<T>,
    y: ArrayView2<T>,
    n_lv: usize,
    k_per_lv: usize,
    spec: &PreprocessSpec,
) -> Result<PlsModel<T>> {
    if k_per_lv == 0 || k_per_lv > x.ncols() {
        return Err(Error::InvalidParameter(format!("k_per_lv = {k_per_lv} for {} bands", x.ncols())));
    }
    fit(x, y, n_lv, Some(k_per_lv), spec)
}

fn fit<T: Real>(x: ArrayView2<T>, y: ArrayView2<T>, n_lv: usize, k: Option<usize>, spec: &PreprocessSpec) -> Result<PlsModel<T>> {
    let mut spec = spec.clone();
    if !spec.centers() {
        spec.steps.push(Step::MeanCenter);
    }
    spec.validate()?;
    let pipeline = spec.fit(x)?;
    let xc = pipeline.apply(x)?;
    let path = fit_path(xc.view(), y, n_lv, k, None)?;
    if path.n_lv() < n_lv {
        return Err(Error::Degenerate(format!(
            "{n_lv} latent variables requested but the preprocessed matrix supports {}",
            path.n_lv()
        )));
    }
    Ok(path.model(pipeline, n_lv, &one_hot_classes(y)))
}

/// Class index per row when `y` is a one-hot coding.
pub(crate) fn one_hot_classes<T: Real>(y: ArrayView2<T>) -> Option<Vec<usize>> {
    y.rows()
        .into_iter()
        .map(|r| {
            let ones: Vec<usize> = r.iter().enumerate().filter(|(_, v)| **v == T::one()).map(|(i, _)| i).collect();
            let zeros = r.iter().filter(|v| **v == T::zero()).count();
            (ones.len() == 1 && zeros + 1 == r.len()).then(|| ones[0])
        })
        .collect()
}

/// Dummy coding of class indices.
pub fn one_hot<T: Real>(classes: &[usize], n_classes: usize) -> Array2<T> {
    let mut y = Array2::zeros((classes.len(), n_classes));
    for (i, c) in classes.iter().enumerate() {
        y[[i, *c]] = T::one();
    }
    y
}

/// Soft-thresholds `w` so exactly `k` entries stay nonzero: the top `k` by
/// magnitude (lower index first on ties) shrink by the `(k+1)`-th largest
/// magnitude. If ties at the threshold would zero a retained entry, the
/// retained entries are kept unshrunk instead.
pub fn soft_threshold<T: Real>(w: &mut [T], k: usize) -> Vec<usize> {
    let p = w.len();
    if k >= p {
        return (0..p).collect();
    }
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| w[b].abs().partial_cmp(&w[a].abs()).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b)));
    let delta = w[order[k]].abs();
    let mut support: Vec<usize> = order[..k].to_vec();
    support.sort_unstable();
    let shrink = support.iter().all(|&i| w[i].abs() > delta);
    let mut keep = vec![false; p];
    for &i in &support {
        keep[i] = true;
    }
    for (i, v) in w.iter_mut().enumerate() {
        if !keep[i] {
            *v = T::zero();
        } else if shrink {
            *v = v.signum() * (v.abs() - delta);
        }
    }
    support
}

/// A fitted sequence of LVs; every prefix is itself a PLS model.
#[derive(Debug, Clone)]
pub(crate) struct PlsPath<T> {
    pub w: Array2<T>,
    pub p: Array2<T>,
    pub q: Array2<T>,
    pub r: Array2<T>,
    pub t: Array2<T>,
    pub y_means: Array1<T>,
    pub support: Vec<Vec<usize>>,
    pub k: Option<usize>,
    /// Residual power sums after `a + 1` LVs.
    pub theta: Vec<[f64; 3]>,
    /// Training Q after `a + 1` LVs.
    pub train_q: Vec<Vec<f64>>,
    pub total: f64,
}

impl<T: Real> PlsPath<T> {
    pub fn n_lv(&self) -> usize {
        self.w.ncols()
    }

    /// `ŷ` for `a` LVs given scores (n × ≥a).
    pub fn predict_from_scores(&self, t: ArrayView2<T>, a: usize) -> Array2<T> {
        t.slice(s![.., ..a]).dot(&self.q.slice(s![.., ..a]).t()) + &self.y_means
    }

    pub fn model(&self, pipeline: Pipeline<T>, a: usize, classes: &Option<Vec<usize>>) -> PlsModel<T> {
        let w = self.w.slice(s![.., ..a]).to_owned();
        let r = self.r.slice(s![.., ..a]).to_owned();
        let q = self.q.slice(s![.., ..a]).to_owned();
        let coefficients = r.dot(&q.t());
        let n = self.t.nrows();
        let class_stats = classes
            .as_ref()
            .map(|c| class_score_stats(self.predict_from_scores(self.t.view(), a).view(), c, self.y_means.len()))
            .unwrap_or_default();
        let k_names = (0..self.y_means.len()).map(|i| i.to_string()).collect();
        PlsModel {
            pipeline,
            classes: k_names,
            k_per_lv: self.k,
            weights: w,
            x_loadings: self.p.slice(s![.., ..a]).to_owned(),
            y_loadings: q,
            rotations: r,
            coefficients,
            y_means: self.y_means.clone(),
            support: self.support[..a].to_vec(),
            residual: ResidualStats {
                theta: if a == 0 { [self.total, 0.0, 0.0] } else { self.theta[a - 1] },
                total: self.total,
                n_train: n,
                train_q: if a == 0 { vec![] } else { self.train_q[a - 1].clone() },
            },
            class_stats,
        }
    }
}

pub(crate) fn class_score_stats<T: Real>(yhat: ArrayView2<T>, classes: &[usize], k: usize) -> Vec<ClassScoreStats> {
    (0..k)
        .map(|c| {
            let rows: Vec<usize> = (0..classes.len()).filter(|i| classes[*i] == c).collect();
            let n = rows.len();
            let mut mean = vec![0.0; k];
            let mut sd = vec![0.0; k];
            for j in 0..k {
                let vals: Vec<f64> = rows.iter().map(|i| yhat[[*i, j]].as_f64()).collect();
                if n > 0 {
                    mean[j] = vals.iter().sum::<f64>() / n as f64;
                }
                if n > 1 {
                    sd[j] = (vals.iter().map(|v| (v - mean[j]).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
                }
            }
            ClassScoreStats { count: n, mean, sd }
        })
        .collect()
}

/// Fits up to `max_lv` LVs on already centred `xc`. Stops early, without
/// error, when the X residual is exhausted. `gram` may supply `xcᵀxc`.
pub(crate) fn fit_path<T: Real>(
    xc: ArrayView2<T>,
    y: ArrayView2<T>,
    max_lv: usize,
    k: Option<usize>,
    gram: Option<&Array2<f64>>,
) -> Result<PlsPath<T>> {
    let (n, p) = xc.dim();
    if y.nrows() != n {
        return Err(Error::Dimension(format!("X has {n} rows, Y has {}", y.nrows())));
    }
    if max_lv == 0 || n < 2 {
        return Err(Error::InvalidParameter(format!("{max_lv} latent variables for {n} rows")));
    }
    let kk = y.ncols();
    let y_means = y.mean_axis(Axis(0)).ok_or_else(|| Error::Dimension("empty Y".into()))?;
    let mut f = &y - &y_means;
    let mut e = xc.to_owned();
    let mut g = match gram {
        Some(g) => g.clone(),
        None => {
            let x64 = xc.mapv(|v| v.as_f64());
            x64.t().dot(&x64)
        }
    };
    let total_ss: f64 = g.diag().sum();
    let total = total_ss / (n - 1) as f64;
    let tol = T::lit(NIPALS_TOL.max(T::epsilon().as_f64() * 100.0));
    let tiny = T::lit(total_ss.max(f64::MIN_POSITIVE) * 1e-24);

    let mut w_cols: Vec<Array1<T>> = Vec::new();
    let mut p_cols: Vec<Array1<T>> = Vec::new();
    let mut q_cols: Vec<Array1<T>> = Vec::new();
    let mut r_cols: Vec<Array1<T>> = Vec::new();
    let mut t_cols: Vec<Array1<T>> = Vec::new();
    let mut support = Vec::new();
    let mut theta = Vec::new();
    let mut train_q = Vec::new();

    for lv in 0..max_lv {
        // start from the y column with the largest remaining variance
        let ss: Vec<T> = f.columns().into_iter().map(|c| c.dot(&c)).collect();
        let start = (0..kk).fold(0, |b, j| if ss[j] > ss[b] { j } else { b });
        if kk == 0 || ss[start] <= T::zero() {
            break;
        }
        let mut u = f.column(start).to_owned();
        let mut t_old: Option<Array1<T>> = None;
        let mut result = None;
        let mut stalled = true;
        for _ in 0..MAX_NIPALS_ITER {
            let mut w = e.t().dot(&u);
            let supp = match k {
                Some(k) => soft_threshold(w.as_slice_mut().expect("contiguous"), k),
                None => (0..p).collect(),
            };
            let norm = w.dot(&w).sqrt();
            if !(norm > T::zero()) {
                stalled = false;
                break;
            }
            w /= norm;
            let t = e.dot(&w);
            let tt = t.dot(&t);
            let q = f.t().dot(&t) / tt;
            let qq = q.dot(&q);
            if !(tt > tiny) || !(qq > T::zero()) {
                stalled = false;
                break;
            }
            let converged = t_old.as_ref().is_some_and(|o| {
                let d = &t - o;
                d.dot(&d) <= tol * tol * tt
            });
            u = f.dot(&q) / qq;
            if converged {
                result = Some((w, t, q, supp));
                break;
            }
            t_old = Some(t);
        }
        let Some((w, t, q, supp)) = result else {
            if stalled {
                return Err(Error::NoConvergence { lv: lv + 1, iterations: MAX_NIPALS_ITER });
            }
            // X or Y residual exhausted
            break;
        };
        let tt = t.dot(&t);
        let pl = e.t().dot(&t) / tt;
        // r_a = Π_{i<a} (I − w_i p_iᵀ) w_a, applied right to left
        let mut r = w.clone();
        for i in (0..w_cols.len()).rev() {
            let c = p_cols[i].dot(&r);
            r.scaled_add(-c, &w_cols[i]);
        }
        e -= &outer(&t, &pl);
        f -= &outer(&t, &q);
        let ttf = tt.as_f64();
        let pf = pl.mapv(|v| v.as_f64());
        g -= &(outer(&pf, &pf) * ttf);
        let c = &g / (n - 1) as f64;
        let [t1, t2, t3] = linalg::power_traces(c.view());
        theta.push([t1.max(0.0), t2.max(0.0), t3.max(0.0)]);
        train_q.push(e.rows().into_iter().map(|row| row.dot(&row).as_f64()).collect());
        w_cols.push(w);
        p_cols.push(pl);
        q_cols.push(q);
        r_cols.push(r);
        t_cols.push(t);
        support.push(supp);
    }
    if w_cols.is_empty() {
        return Err(Error::Degenerate("no latent variable could be extracted".into()));
    }
    Ok(PlsPath {
        w: stack(&w_cols, p),
        p: stack(&p_cols, p),
        q: stack(&q_cols, kk),
        r: stack(&r_cols, p),
        t: stack(&t_cols, n),
        y_means,
        support,
        k,
        theta,
        train_q,
        total,
    })
}

fn outer<T: Real>(a: &Array1<T>, b: &Array1<T>) -> Array2<T> {
    let a2 = a.view().insert_axis(Axis(1));
    let b2 = b.view().insert_axis(Axis(0));
    a2.dot(&b2)
}

fn stack<T: Real>(cols: &[Array1<T>], rows: usize) -> Array2<T> {
    let mut m = Array2::zeros((rows, cols.len()));
    for (j, c) in cols.iter().enumerate() {
        m.column_mut(j).assign(c);
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};

    fn random(n: usize, p: usize, seed: u64) -> Array2<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((n, p), |_| rng.random::<f64>() * 2.0 - 1.0)
    }

    #[test]
    fn univariate_regression() {
        let x: Array2<f64> = array![[1.0], [2.0], [3.0], [4.0]];
        let y = &x * 2.0;
        let m = fit_pls2(x.view(), y.view(), 1, &PreprocessSpec::mean_center()).unwrap();
        assert!((m.coefficients[[0, 0]] - 2.0).abs() < 1e-12);
        let pred = m.predict(x.view()).unwrap();
        for (a, b) in pred.iter().zip(y.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    /// Least squares on centred data via nalgebra's SVD solver.
    fn ols_oracle(x: &Array2<f64>, y: &Array2<f64>) -> Array2<f64> {
        let xm = x.mean_axis(Axis(0)).unwrap();
        let ym = y.mean_axis(Axis(0)).unwrap();
        let xc = x - &xm;
        let yc = y - &ym;
        let a = nalgebra::DMatrix::from_row_iterator(xc.nrows(), xc.ncols(), xc.iter().copied());
        let b = nalgebra::DMatrix::from_row_iterator(yc.nrows(), yc.ncols(), yc.iter().copied());
        let coef = a.clone().svd(true, true).solve(&b, 1e-14).unwrap();
        let pred = &a * coef;
        Array2::from_shape_fn(y.dim(), |(i, j)| pred[(i, j)] + ym[j])
    }

    #[test]
    fn full_rank_equals_least_squares() {
        let x = random(50, 8, 1);
        let y = random(50, 3, 2);
        let m = fit_pls2(x.view(), y.view(), 8, &PreprocessSpec::mean_center()).unwrap();
        let pred = m.predict(x.view()).unwrap();
        let oracle = ols_oracle(&x, &y);
        for (a, b) in pred.iter().zip(oracle.iter()) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn coefficients_reproduce_deflation_path() {
        let x = random(40, 12, 3);
        let classes: Vec<usize> = (0..40).map(|i| i % 2).collect();
        let y = one_hot::<f64>(&classes, 2);
        let xc = PreprocessSpec::mean_center().fit(x.view()).unwrap().apply(x.view()).unwrap();
        let path = fit_path(xc.view(), y.view(), 5, None, None).unwrap();
        let m = fit_pls2(x.view(), y.view(), 5, &PreprocessSpec::mean_center()).unwrap();
        let via_path = path.predict_from_scores(path.t.view(), 5);
        let via_b = m.predict(x.view()).unwrap();
        for (a, b) in via_path.iter().zip(via_b.iter()) {
            assert!((a - b).abs() < 1e-8);
        }
        for c in m.weights.columns() {
            assert!((c.dot(&c) - 1.0).abs() < 1e-12);
        }
        // scores from rotations equal the deflation scores
        let t = xc.dot(&m.rotations);
        for (a, b) in t.iter().zip(path.t.iter()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn row_order_does_not_change_coefficients() {
        let x = random(30, 6, 4);
        let y = random(30, 2, 5);
        let perm: Vec<usize> = (0..30).rev().collect();
        let a = fit_pls2(x.view(), y.view(), 3, &PreprocessSpec::mean_center()).unwrap();
        let b = fit_pls2(x.select(Axis(0), &perm).view(), y.select(Axis(0), &perm).view(), 3, &PreprocessSpec::mean_center())
            .unwrap();
        for (u, v) in a.coefficients.iter().zip(b.coefficients.iter()) {
            assert!((u - v).abs() < 1e-10);
        }
    }

    #[test]
    fn soft_threshold_examples() {
        let mut w: [f64; 3] = [0.9, 0.5, 0.1];
        assert_eq!(soft_threshold(&mut w, 2), vec![0, 1]);
        assert!((w[0] - 0.8).abs() < 1e-15 && (w[1] - 0.4).abs() < 1e-15 && w[2] == 0.0);
        let mut w: [f64; 3] = [0.1, -0.7, 0.3];
        assert_eq!(soft_threshold(&mut w, 1), vec![1]);
        assert!(w[0] == 0.0 && w[2] == 0.0 && (w[1] + 0.4).abs() < 1e-15);
        let mut w = [0.5, 0.5, 0.5];
        assert_eq!(soft_threshold(&mut w, 2), vec![0, 1]);
        assert_eq!(w, [0.5, 0.5, 0.0]);
        let mut w = [0.2, -0.3];
        assert_eq!(soft_threshold(&mut w, 2), vec![0, 1]);
        assert_eq!(w, [0.2, -0.3]);
    }

    #[test]
    fn sparse_with_all_bands_equals_dense() {
        let x = random(60, 10, 6);
        let classes: Vec<usize> = (0..60).map(|i| (i / 7) % 2).collect();
        let y = one_hot::<f64>(&classes, 2);
        let spec = PreprocessSpec::mean_center();
        let d = fit_pls2(x.view(), y.view(), 4, &spec).unwrap();
        let s = fit_sparse_pls2(x.view(), y.view(), 4, 10, &spec).unwrap();
        for (a, b) in d.coefficients.iter().zip(s.coefficients.iter()) {
            assert!((a - b).abs() < 1e-10);
        }
        assert!(fit_sparse_pls2(x.view(), y.view(), 4, 11, &spec).is_err());
        assert!(fit_sparse_pls2(x.view(), y.view(), 4, 0, &spec).is_err());
    }

    #[test]
    fn sparse_support_sizes() {
        let x = random(60, 10, 7);
        let classes: Vec<usize> = (0..60).map(|i| i % 2).collect();
        let y = one_hot::<f64>(&classes, 2);
        let m = fit_sparse_pls2(x.view(), y.view(), 3, 4, &PreprocessSpec::mean_center()).unwrap();
        for (a, supp) in m.support.iter().enumerate() {
            assert_eq!(supp.len(), 4);
            let nz: Vec<usize> = (0..10).filter(|i| m.weights[[*i, a]] != 0.0).collect();
            assert_eq!(&nz, supp);
        }
        let one = fit_sparse_pls2(x.view(), y.view(), 1, 1, &PreprocessSpec::mean_center()).unwrap();
        let xc = &x - &x.mean_axis(Axis(0)).unwrap();
        let yc = &y - &y.mean_axis(Axis(0)).unwrap();
        let w0 = xc.t().dot(&yc.column(0));
        let arg = (0..10).fold(0, |b, i| if w0[i].abs() > w0[b].abs() { i } else { b });
        assert_eq!(one.support[0], vec![arg]);
    }

    #[test]
    fn training_q_matches_prediction_q() {
        let x = random(30, 7, 8);
        let y = one_hot::<f64>(&(0..30).map(|i| i % 2).collect::<Vec<_>>(), 2);
        let m = fit_pls2(x.view(), y.view(), 3, &PreprocessSpec::mean_center()).unwrap();
        let (_, q) = m.predict_with_q(x.view()).unwrap();
        for (a, b) in q.iter().zip(m.residual.train_q.iter()) {
            assert!((a - b).abs() < 1e-10);
        }
        // residual covariance trace equals mean training Q scaled by n/(n−1)
        let mean_q: f64 = q.sum() / 29.0;
        assert!((m.residual.theta[0] - mean_q).abs() < 1e-10);
    }

    #[test]
    fn too_many_lvs_is_degenerate() {
        let x = array![[1.0, 2.0], [2.0, 4.0], [3.0, 6.0], [4.0, 8.0]];
        let y = one_hot::<f64>(&[0, 0, 1, 1], 2);
        assert!(matches!(fit_pls2(x.view(), y.view(), 2, &PreprocessSpec::mean_center()), Err(Error::Degenerate(_))));
        assert!(fit_pls2(x.view(), y.view(), 1, &PreprocessSpec::mean_center()).is_ok());
    }
}
