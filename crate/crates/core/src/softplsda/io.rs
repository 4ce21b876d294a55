//! JSON model files and regression-vector export.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::pls::{ClassScoreStats, PlsModel, ResidualStats};
use super::SoftPlsdaModel;
use crate::error::{Error, Result};
use crate::preprocess::{Pipeline, PreprocessSpec};
use crate::scalar::Real;

pub const MODEL_FORMAT: &str = "hsi-pest/soft-plsda";
pub const MODEL_VERSION: u32 = 1;

/// On-disk layout; matrices are lists of rows.
#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    classes: Vec<String>,
    wavelengths: Vec<f64>,
    preprocess: PreprocessSpec,
    x_means: Option<Vec<f64>>,
    n_lv: usize,
    k_per_lv: Option<usize>,
    weights: Vec<Vec<f64>>,
    x_loadings: Vec<Vec<f64>>,
    y_loadings: Vec<Vec<f64>>,
    rotations: Vec<Vec<f64>>,
    coefficients: Vec<Vec<f64>>,
    y_means: Vec<f64>,
    sparsity: Vec<Vec<usize>>,
    residual: ResidualStats,
    class_stats: Vec<ClassScoreStats>,
    alpha: f64,
    q_limit: f64,
    t_lower: Vec<f64>,
    t_upper: Vec<f64>,
}

fn rows<T: Real>(m: &Array2<T>) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.iter().map(|v| v.as_f64()).collect()).collect()
}

fn matrix<T: Real>(name: &str, rows: &[Vec<f64>], shape: (usize, usize)) -> Result<Array2<T>> {
    if rows.len() != shape.0 || rows.iter().any(|r| r.len() != shape.1) {
        return Err(Error::Format(format!("{name} is not {}x{}", shape.0, shape.1)));
    }
    Ok(Array2::from_shape_fn(shape, |(i, j)| T::lit(rows[i][j])))
}

impl<T: Real> SoftPlsdaModel<T> {
    fn to_file(&self) -> ModelFile {
        let p = &self.pls;
        ModelFile {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            classes: p.classes.clone(),
            wavelengths: self.wavelengths.clone(),
            preprocess: p.pipeline.spec.clone(),
            x_means: p.pipeline.means.as_ref().map(|m| m.iter().map(|v| v.as_f64()).collect()),
            n_lv: p.n_lv(),
            k_per_lv: p.k_per_lv,
            weights: rows(&p.weights),
            x_loadings: rows(&p.x_loadings),
            y_loadings: rows(&p.y_loadings),
            rotations: rows(&p.rotations),
            coefficients: rows(&p.coefficients),
            y_means: p.y_means.iter().map(|v| v.as_f64()).collect(),
            sparsity: p.support.clone(),
            residual: p.residual.clone(),
            class_stats: p.class_stats.clone(),
            alpha: self.alpha,
            q_limit: self.q_limit,
            t_lower: self.t_lower.clone(),
            t_upper: self.t_upper.clone(),
        }
    }

    fn from_file(f: ModelFile) -> Result<Self> {
        if f.format != MODEL_FORMAT {
            return Err(Error::Format(format!("not a Soft PLS-DA model file (format `{}`)", f.format)));
        }
        if f.version != MODEL_VERSION {
            return Err(Error::Format(format!("unsupported model version {}", f.version)));
        }
        f.preprocess.validate()?;
        let bands = f.weights.len();
        let (a, k) = (f.n_lv, f.classes.len());
        if f.y_means.len() != k || f.t_lower.len() != k || f.t_upper.len() != k || f.sparsity.len() != a {
            return Err(Error::Format("inconsistent class or LV counts".into()));
        }
        if !f.wavelengths.is_empty() && f.wavelengths.len() != bands {
            return Err(Error::Format("wavelength axis does not match the band count".into()));
        }
        if f.sparsity.iter().flatten().any(|i| *i >= bands) {
            return Err(Error::Format("sparsity index out of range".into()));
        }
        if f.t_lower.iter().zip(&f.t_upper).any(|(l, u)| !(l < u)) || !(f.q_limit > 0.0) {
            return Err(Error::Format("invalid acceptance limits".into()));
        }
        let means = match f.x_means {
            Some(m) if m.len() == bands => Some(Array1::from_iter(m.into_iter().map(T::lit))),
            Some(_) => return Err(Error::Format("x_means length does not match the band count".into())),
            None => None,
        };
        let pls = PlsModel {
            pipeline: Pipeline { spec: f.preprocess, means },
            classes: f.classes,
            k_per_lv: f.k_per_lv,
            weights: matrix("weights", &f.weights, (bands, a))?,
            x_loadings: matrix("x_loadings", &f.x_loadings, (bands, a))?,
            y_loadings: matrix("y_loadings", &f.y_loadings, (k, a))?,
            rotations: matrix("rotations", &f.rotations, (bands, a))?,
            coefficients: matrix("coefficients", &f.coefficients, (bands, k))?,
            y_means: Array1::from_iter(f.y_means.into_iter().map(T::lit)),
            support: f.sparsity,
            residual: f.residual,
            class_stats: f.class_stats,
        };
        Ok(Self { pls, t_lower: f.t_lower, t_upper: f.t_upper, q_limit: f.q_limit, alpha: f.alpha, wavelengths: f.wavelengths })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_file())?)
    }

    pub fn write_json<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(self.to_json()?.as_bytes())?;
        Ok(())
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_file(serde_json::from_str(text)?)
    }

    pub fn read_json<R: Read>(mut r: R) -> Result<Self> {
        let mut s = String::new();
        r.read_to_string(&mut s)?;
        Self::from_json(&s)
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// `wavelength,<class>…` rows of the regression coefficients.
    pub fn write_regression_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let err = |e: csv::Error| Error::Format(e.to_string());
        let mut head = vec!["wavelength".to_string()];
        head.extend(self.pls.classes.iter().cloned());
        wr.write_record(&head).map_err(err)?;
        for (i, row) in self.pls.coefficients.rows().into_iter().enumerate() {
            let wl = self.wavelengths.get(i).map(|w| format!("{w}")).unwrap_or_else(|| i.to_string());
            let mut rec = vec![wl];
            rec.extend(row.iter().map(|v| format!("{v}")));
            wr.write_record(&rec).map_err(err)?;
        }
        wr.flush()?;
        Ok(())
    }
}
