//! Cross-validated grid search over preprocessing, LV count and variables
//! per LV.

use std::io::Write;

use ndarray::{Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::pls::{class_score_stats, fit_path, one_hot};
use super::{class_range, decide, fit_soft_plsda, q_limit, SoftPlsdaModel};
use crate::error::{Error, Result};
use crate::metrics::{derive_stats, ConfusionCounts, DerivedStats};
use crate::pca::DEFAULT_ALPHA;
use crate::preprocess::PreprocessSpec;
use crate::sampling::{FoldPlan, SpectraTable, SpectrumClass};
use crate::scalar::Real;
use crate::stats;

/// `5, 10, …` up to `bands`, with `bands` itself as the dense endpoint.
pub fn default_k_grid(bands: usize) -> Vec<usize> {
    let mut k: Vec<usize> = (1..).map(|i| i * 5).take_while(|k| *k <= bands).collect();
    if k.last() != Some(&bands) {
        k.push(bands);
    }
    k
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub specs: Vec<PreprocessSpec>,
    pub lv_min: usize,
    pub lv_max: usize,
    /// Variables kept per LV; values above the band count are dropped. Only
    /// the band count itself gives a dense model.
    pub k_grid: Vec<usize>,
    pub alpha: f64,
}

impl GridConfig {
    /// Sparse grid over every standard preprocessing.
    pub fn sparse(bands: usize) -> Self {
        Self {
            specs: PreprocessSpec::standard_variants(),
            lv_min: 1,
            lv_max: 10,
            k_grid: default_k_grid(bands),
            alpha: DEFAULT_ALPHA,
        }
    }

    /// Dense models only.
    pub fn dense(bands: usize) -> Self {
        Self { k_grid: vec![bands], ..Self::sparse(bands) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub spec_index: usize,
    pub preprocess: String,
    pub n_lv: usize,
    pub k_per_lv: usize,
    /// False when some fold could not be fitted at this size.
    pub available: bool,
    pub counts: ConfusionCounts,
    pub stats: DerivedStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub cells: Vec<GridCell>,
    pub chosen: usize,
}

impl GridResult {
    pub fn chosen_cell(&self) -> &GridCell {
        &self.cells[self.chosen]
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let err = |e: csv::Error| Error::Format(e.to_string());
        wr.write_record(["preprocess", "n_lv", "k_per_lv", "available", "sens", "spec", "eff", "prec", "f1", "chosen"])
            .map_err(err)?;
        let f = |v: Option<f64>| v.map(|x| format!("{:.4}", x * 100.0)).unwrap_or_default();
        for (i, c) in self.cells.iter().enumerate() {
            wr.write_record([
                c.preprocess.clone(),
                c.n_lv.to_string(),
                c.k_per_lv.to_string(),
                c.available.to_string(),
                f(c.stats.sens),
                f(c.stats.spec),
                f(c.stats.eff),
                f(c.stats.prec),
                f(c.stats.f1),
                (i == self.chosen).to_string(),
            ])
            .map_err(err)?;
        }
        wr.flush()?;
        Ok(())
    }
}

struct FoldData<T> {
    xc_train: Array2<T>,
    xc_test: Array2<T>,
    gram: Array2<f64>,
    y_train: Array2<T>,
    classes_train: Vec<usize>,
    classes_test: Vec<usize>,
}

fn recoverable(e: &Error) -> bool {
    matches!(e, Error::Degenerate(_) | Error::DegenerateClass { .. } | Error::NoConvergence { .. } | Error::ConstantRow { .. })
}

/// Held-out counts for every LV count of one (spec, k, fold) task.
fn evaluate_task<T: Real>(fd: &FoldData<T>, k: usize, cfg: &GridConfig, z: f64) -> Result<Vec<Option<ConfusionCounts>>> {
    let bands = fd.xc_train.ncols();
    let sparsity = (k < bands).then_some(k);
    let path = match fit_path(fd.xc_train.view(), fd.y_train.view(), cfg.lv_max, sparsity, Some(&fd.gram)) {
        Ok(p) => p,
        Err(e) if recoverable(&e) => return Ok(vec![None; cfg.lv_max + 1]),
        Err(e) => return Err(e),
    };
    let n_train = fd.xc_train.nrows();
    let mut out = vec![None; cfg.lv_max + 1];
    let mut yhat_train = Array2::from_shape_fn((n_train, 2), |(_, j)| path.y_means[j]);
    let mut yhat_test = Array2::from_shape_fn((fd.xc_test.nrows(), 2), |(_, j)| path.y_means[j]);
    let mut resid = fd.xc_test.clone();
    let t_test = fd.xc_test.dot(&path.r);
    for a in 1..=path.n_lv().min(cfg.lv_max) {
        let (ta, qa) = (path.t.column(a - 1), path.q.column(a - 1));
        yhat_train += &ta.insert_axis(Axis(1)).dot(&qa.insert_axis(Axis(0)));
        let tt = t_test.column(a - 1);
        yhat_test += &tt.insert_axis(Axis(1)).dot(&qa.insert_axis(Axis(0)));
        resid -= &tt.insert_axis(Axis(1)).dot(&path.p.column(a - 1).insert_axis(Axis(0)));
        if a < cfg.lv_min {
            continue;
        }
        let stats = class_score_stats(yhat_train.view(), &fd.classes_train, 2);
        let ranges: Result<Vec<(f64, f64)>> = (0..2).map(|c| class_range(&stats, c, z)).collect();
        let ranges = match ranges {
            Ok(r) => r,
            Err(e) if recoverable(&e) => continue,
            Err(e) => return Err(e),
        };
        let qlim = q_limit(path.theta[a - 1], path.total, &path.train_q[a - 1], cfg.alpha)?;
        let q: Vec<T> = resid.rows().into_iter().map(|r| r.dot(&r)).collect();
        let lower: Vec<f64> = ranges.iter().map(|r| r.0).collect();
        let upper: Vec<f64> = ranges.iter().map(|r| r.1).collect();
        let decided = decide(yhat_test.view(), &q, &lower, &upper, qlim);
        let mut counts = ConfusionCounts::default();
        let pos = SpectrumClass::Bmsb.index();
        for (truth, d) in fd.classes_test.iter().zip(decided) {
            counts.record(*truth == pos, d.map(|c| c == pos));
        }
        out[a] = Some(counts);
    }
    Ok(out)
}

/// Venetian-blinds cross-validation of every (preprocessing, LV count, k)
/// cell, pooled over folds. The cell with the highest efficiency wins; ties
/// go to fewer LVs, then fewer variables, then the earlier preprocessing.
/// The winner is refitted on the whole training table.
pub fn grid_search<T: Real>(
    train: &SpectraTable<T>,
    folds: &FoldPlan,
    cfg: &GridConfig,
) -> Result<(GridResult, SoftPlsdaModel<T>)> {
    let bands = train.x().ncols();
    let mut k_grid: Vec<usize> = cfg.k_grid.iter().copied().filter(|k| *k >= 1 && *k <= bands).collect();
    k_grid.sort_unstable();
    k_grid.dedup();
    if cfg.specs.is_empty() || k_grid.is_empty() || cfg.lv_min == 0 || cfg.lv_min > cfg.lv_max {
        return Err(Error::InvalidParameter("empty grid".into()));
    }
    if folds.folds.len() != train.len() {
        return Err(Error::Dimension(format!("fold plan covers {} rows, table has {}", folds.folds.len(), train.len())));
    }
    let classes = train.class_indices();
    for c in 0..2 {
        if !classes.contains(&c) {
            return Err(Error::DegenerateClass { class: c });
        }
    }
    let y = one_hot::<T>(&classes, 2);
    let z = stats::normal_quantile(cfg.alpha)?;

    let rows: Vec<Option<Array2<T>>> = cfg
        .specs
        .par_iter()
        .map(|spec| match spec.apply_rows(train.x().view()) {
            Ok(r) => Ok(Some(r)),
            Err(e) if recoverable(&e) => {
                log::warn!("preprocessing {spec} failed on training rows: {e}");
                Ok(None)
            }
            Err(e) => Err(e),
        })
        .collect::<Result<_>>()?;

    let fold_keys: Vec<(usize, usize)> = (0..cfg.specs.len()).flat_map(|s| (0..folds.n_folds).map(move |f| (s, f))).collect();
    let fold_data: Vec<Option<FoldData<T>>> = fold_keys
        .par_iter()
        .map(|&(s, f)| -> Result<Option<FoldData<T>>> {
            let Some(r) = &rows[s] else { return Ok(None) };
            let (tr, te) = folds.split(f);
            let xr_train = r.select(Axis(0), &tr);
            let pipeline = cfg.specs[s].fit_on_rows(xr_train.view())?;
            let xc_train = pipeline.finish_rows(xr_train)?;
            let xc_test = pipeline.finish_rows(r.select(Axis(0), &te))?;
            let x64 = xc_train.mapv(|v| v.as_f64());
            Ok(Some(FoldData {
                gram: x64.t().dot(&x64),
                y_train: y.select(Axis(0), &tr),
                classes_train: tr.iter().map(|i| classes[*i]).collect(),
                classes_test: te.iter().map(|i| classes[*i]).collect(),
                xc_train,
                xc_test,
            }))
        })
        .collect::<Result<_>>()?;

    let tasks: Vec<(usize, usize, usize)> = (0..cfg.specs.len())
        .flat_map(|s| (0..k_grid.len()).flat_map(move |ki| (0..folds.n_folds).map(move |f| (s, ki, f))))
        .collect();
    let results: Vec<Vec<Option<ConfusionCounts>>> = tasks
        .par_iter()
        .map(|&(s, ki, f)| match &fold_data[s * folds.n_folds + f] {
            Some(fd) => evaluate_task(fd, k_grid[ki], cfg, z),
            None => Ok(vec![None; cfg.lv_max + 1]),
        })
        .collect::<Result<_>>()?;

    let mut cells = Vec::new();
    for (s, spec) in cfg.specs.iter().enumerate() {
        for a in cfg.lv_min..=cfg.lv_max {
            for (ki, &k) in k_grid.iter().enumerate() {
                let base = (s * k_grid.len() + ki) * folds.n_folds;
                let per_fold: Option<Vec<ConfusionCounts>> = (0..folds.n_folds).map(|f| results[base + f][a]).collect();
                let (available, counts) = match per_fold {
                    Some(v) => (true, v.into_iter().sum()),
                    None => (false, ConfusionCounts::default()),
                };
                cells.push(GridCell {
                    spec_index: s,
                    preprocess: spec.to_string(),
                    n_lv: a,
                    k_per_lv: k,
                    available,
                    stats: if available { derive_stats(&counts, false) } else { DerivedStats::default() },
                    counts,
                });
            }
        }
    }
    let chosen = choose(&cells).ok_or_else(|| Error::Degenerate("no grid cell could be evaluated".into()))?;
    let c = &cells[chosen];
    log::info!(
        "grid: chose {} with {} LVs, k = {} (CV EFF {:.2}%)",
        c.preprocess,
        c.n_lv,
        c.k_per_lv,
        c.stats.eff.unwrap_or(0.0) * 100.0
    );
    let model = fit_soft_plsda(train, c.n_lv, Some(c.k_per_lv), &cfg.specs[c.spec_index], Some(cfg.alpha))?;
    Ok((GridResult { cells, chosen }, model))
}

fn choose(cells: &[GridCell]) -> Option<usize> {
    let key = |c: &GridCell| (c.stats.eff.unwrap_or(f64::NEG_INFINITY), c.n_lv, c.k_per_lv, c.spec_index);
    let mut best: Option<usize> = None;
    for (i, c) in cells.iter().enumerate() {
        if !c.available || c.stats.eff.is_none() {
            continue;
        }
        best = match best {
            None => Some(i),
            Some(b) => {
                let (e1, l1, k1, s1) = key(c);
                let (e0, l0, k0, s0) = key(&cells[b]);
                if e1 > e0 || (e1 == e0 && (l1, k1, s1) < (l0, k0, s0)) {
                    Some(i)
                } else {
                    Some(b)
                }
            }
        };
    }
    best
}
