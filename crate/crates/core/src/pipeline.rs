//! End-to-end synthetic run: corpus → masks → representative spectra →
//! group split → CV grid → whole-image prediction → pixel and object reports.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detect::{evaluate_objects, write_matches_csv, ObjectMatchResult, PredictionImage, IOU_THRESHOLD, MIN_OBJECT_PIXELS};
use crate::error::{Error, Result};
use crate::hypercube::{dark_background_mask, BugGroup, Hypercube, DARK_PROBE_NM, DARK_THRESHOLD};
use crate::labels::{ClassMask, Label};
use crate::metrics::{object_confusion, pixel_confusion, report, DetectionReport, ImageResult};
use crate::pca::{mask_by_score, ScoreMaskOptions, DEFAULT_ALPHA};
use crate::preprocess::PreprocessSpec;
use crate::sampling::{select_representative, split_by_group, venetian_blinds, SelectOptions, SpectraTable};
use crate::seeds::derive_seed;
use crate::softplsda::{self, default_k_grid, grid_search, GridConfig, GridResult, SoftPlsdaModel};
use crate::synth::{generate_corpus, CorpusSpec};
use crate::unet::{self, AugmentConfig, TrainConfig, UNetModel, UNetSpec};
use crate::BandSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaskConfig {
    pub dark_threshold: f64,
    pub probe_nm: f64,
    pub score: ScoreMaskOptions,
}

impl Default for MaskConfig {
    fn default() -> Self {
        Self { dark_threshold: DARK_THRESHOLD, probe_nm: DARK_PROBE_NM, score: ScoreMaskOptions::default() }
    }
}

/// Dark-background exclusion followed by the PCA score split. Returns the
/// exclusion mask and the full class mask.
pub fn mask_image(hc: &Hypercube<f64>, cfg: &MaskConfig) -> Result<(ClassMask, ClassMask)> {
    let dark = dark_background_mask(hc, cfg.dark_threshold, cfg.probe_nm);
    let scored = mask_by_score(hc, &dark, &cfg.score)?;
    Ok((dark, scored.mask))
}

/// Copy of `truth` with every excluded pixel of `exclusion` marked EXCLUDED.
pub fn apply_exclusion(truth: &ClassMask, exclusion: &ClassMask) -> ClassMask {
    let mut out = truth.clone();
    for (o, e) in out.labels_mut().iter_mut().zip(exclusion.labels()) {
        if *e == Label::Excluded {
            *o = Label::Excluded;
        }
    }
    out
}

/// Fraction of non-excluded pixels on which two masks agree.
pub fn mask_agreement(a: &ClassMask, b: &ClassMask) -> f64 {
    let mut n = 0usize;
    let mut same = 0usize;
    for (x, y) in a.labels().iter().zip(b.labels()) {
        if *x == Label::Excluded || *y == Label::Excluded {
            continue;
        }
        n += 1;
        same += (x == y) as usize;
    }
    if n == 0 {
        1.0
    } else {
        same as f64 / n as f64
    }
}

/// Which mask the representative spectra are drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleSource {
    Score,
    Truth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSettings {
    pub preprocess: Vec<PreprocessSpec>,
    pub lv_min: usize,
    pub lv_max: usize,
    /// Default grid 5, 10, … plus the band count when absent.
    pub k_grid: Option<Vec<usize>>,
    pub alpha: f64,
    pub n_folds: usize,
}

impl Default for GridSettings {
    fn default() -> Self {
        Self {
            preprocess: PreprocessSpec::standard_variants(),
            lv_min: 1,
            lv_max: 10,
            k_grid: None,
            alpha: DEFAULT_ALPHA,
            n_folds: 3,
        }
    }
}

impl GridSettings {
    pub fn sparse(&self, bands: usize) -> GridConfig {
        GridConfig {
            specs: self.preprocess.clone(),
            lv_min: self.lv_min,
            lv_max: self.lv_max,
            k_grid: self.k_grid.clone().unwrap_or_else(|| default_k_grid(bands)),
            alpha: self.alpha,
        }
    }

    pub fn dense(&self, bands: usize) -> GridConfig {
        GridConfig { k_grid: vec![bands], ..self.sparse(bands) }
    }
}

/// Band subset a U-Net run sees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandChoice {
    Full,
    Selection1,
    Selection2,
    /// Bands of the sparse model fitted earlier in the same run.
    Model,
    Custom(Vec<usize>),
}

impl BandChoice {
    pub fn label(&self) -> String {
        match self {
            BandChoice::Full => "full".into(),
            BandChoice::Selection1 => "selection1".into(),
            BandChoice::Selection2 => "selection2".into(),
            BandChoice::Model => "model".into(),
            BandChoice::Custom(_) => "custom".into(),
        }
    }

    pub fn resolve(&self, wavelengths: &[f64], model: Option<&SoftPlsdaModel<f64>>) -> Result<BandSet> {
        match self {
            BandChoice::Full => Ok(BandSet::all(wavelengths.len())),
            BandChoice::Selection1 => BandSet::selection_1(wavelengths),
            BandChoice::Selection2 => BandSet::selection_2(wavelengths),
            BandChoice::Model => softplsda::selected_bands(
                model.ok_or_else(|| Error::InvalidParameter("band choice 'model' needs a sparse model".into()))?,
            ),
            BandChoice::Custom(ix) => BandSet::new(ix.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UnetRun {
    pub spec: UNetSpec,
    pub train: TrainConfig,
    pub augment: AugmentConfig,
    pub bands: Vec<BandChoice>,
}

impl Default for UnetRun {
    fn default() -> Self {
        Self {
            spec: UNetSpec { base_filters: 8, ..UNetSpec::new(0) },
            train: TrainConfig::default(),
            augment: AugmentConfig::default(),
            bands: vec![BandChoice::Full, BandChoice::Selection2],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReproConfig {
    pub seed: u64,
    pub corpus: CorpusSpec,
    pub mask: MaskConfig,
    pub sample: SelectOptions,
    pub sample_source: SampleSource,
    pub train_groups: Vec<u8>,
    pub test_groups: Vec<u8>,
    pub grid: GridSettings,
    /// Also fit the dense Soft PLS-DA.
    pub dense: bool,
    pub min_pixels: usize,
    pub iou_threshold: f64,
    pub unet: Option<UnetRun>,
}

impl Default for ReproConfig {
    fn default() -> Self {
        Self {
            seed: 2024,
            corpus: CorpusSpec::standard(0),
            mask: MaskConfig::default(),
            sample: SelectOptions::default(),
            sample_source: SampleSource::Score,
            train_groups: vec![1, 2, 3],
            test_groups: vec![4, 5],
            grid: GridSettings::default(),
            dense: false,
            min_pixels: MIN_OBJECT_PIXELS,
            iou_threshold: IOU_THRESHOLD,
            unet: None,
        }
    }
}

impl ReproConfig {
    pub fn validate(&self) -> Result<()> {
        let frac = |name: &str, v: f64| {
            if v > 0.0 && v < 1.0 {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("{name} = {v} must lie in (0, 1)")))
            }
        };
        frac("grid.alpha", self.grid.alpha)?;
        frac("sample.alpha", self.sample.alpha)?;
        frac("iou_threshold", self.iou_threshold)?;
        frac("mask.dark_threshold", self.mask.dark_threshold)?;
        if self.grid.n_folds < 2 {
            return Err(Error::InvalidParameter("grid.n_folds must be at least 2".into()));
        }
        groups(&self.train_groups)?;
        groups(&self.test_groups)?;
        Ok(())
    }
}

pub fn groups(numbers: &[u8]) -> Result<Vec<BugGroup>> {
    numbers.iter().map(|n| BugGroup::new(*n)).collect()
}

/// One synthetic scene with its masks.
#[derive(Debug, Clone)]
pub struct Scene {
    pub cube: Hypercube<f64>,
    pub truth: ClassMask,
    pub exclusion: ClassMask,
    pub mask: ClassMask,
}

impl Scene {
    pub fn group(&self) -> Option<BugGroup> {
        self.cube.meta().group
    }

    /// Ground truth with the dark frame excluded, used for scoring.
    pub fn scored_truth(&self) -> ClassMask {
        apply_exclusion(&self.truth, &self.exclusion)
    }
}

/// Generates and masks the corpus of `cfg` (image-parallel, order kept).
pub fn build_scenes(cfg: &ReproConfig) -> Result<Vec<Scene>> {
    let mut corpus = cfg.corpus.clone();
    corpus.seed = derive_seed(cfg.seed, "synth");
    generate_corpus(&corpus)?
        .into_par_iter()
        .map(|(cube, truth)| {
            let (exclusion, mask) = mask_image(&cube, &cfg.mask)?;
            Ok(Scene { cube, truth, exclusion, mask })
        })
        .collect()
}

/// Representative spectra of both classes for every scene, ordered by scene.
pub fn sample_scenes(scenes: &[Scene], source: SampleSource, opts: &SelectOptions) -> Result<SpectraTable<f64>> {
    let parts: Vec<SpectraTable<f64>> = scenes
        .par_iter()
        .map(|s| {
            let mask = match source {
                SampleSource::Score => s.mask.clone(),
                SampleSource::Truth => s.scored_truth(),
            };
            let bg = select_representative(&s.cube, &mask, Label::Background, opts)?;
            let tg = select_representative(&s.cube, &mask, Label::Target, opts)?;
            SpectraTable::concat(&[bg, tg])
        })
        .collect::<Result<_>>()?;
    SpectraTable::concat(&parts)
}

/// Scores one prediction image against a scene.
pub fn score_prediction(
    pred: &PredictionImage,
    scene: &Scene,
    band_set: &str,
    min_pixels: usize,
    iou_threshold: f64,
) -> Result<(ImageResult, ObjectMatchResult)> {
    let truth = scene.scored_truth();
    let objects = evaluate_objects(pred, &truth, min_pixels, iou_threshold)?;
    let meta = scene.cube.meta();
    let result = ImageResult {
        model: pred.model_id.clone(),
        band_set: band_set.to_string(),
        image_id: meta.image_id.clone(),
        background: meta.background.as_str().to_string(),
        pixel: pixel_confusion(pred, &truth)?,
        object: Some(object_confusion(&objects)),
    };
    Ok((result, objects))
}

#[derive(Debug, Clone)]
pub struct PlsdaRun {
    pub grid: GridResult,
    pub model: SoftPlsdaModel<f64>,
}

#[derive(Debug, Clone)]
pub struct UnetTrained {
    pub band_set: String,
    pub bands: BandSet,
    pub model: UNetModel,
    pub log: Vec<unet::EpochLog>,
}

#[derive(Debug)]
pub struct ReproOutput {
    pub scenes: Vec<Scene>,
    pub table: SpectraTable<f64>,
    pub train: SpectraTable<f64>,
    pub test: SpectraTable<f64>,
    pub sparse: PlsdaRun,
    pub dense: Option<PlsdaRun>,
    pub unets: Vec<UnetTrained>,
    pub results: Vec<ImageResult>,
    pub matches: Vec<ObjectMatchResult>,
    pub report: DetectionReport,
}

impl ReproOutput {
    pub fn test_scenes<'a>(&'a self, cfg: &'a ReproConfig) -> impl Iterator<Item = &'a Scene> + 'a {
        let test = groups(&cfg.test_groups).unwrap_or_default();
        self.scenes.iter().filter(move |s| s.group().is_some_and(|g| test.contains(&g)))
    }

    /// Mean agreement between score masks and ground truth.
    pub fn mask_agreement(&self) -> f64 {
        let n = self.scenes.len().max(1) as f64;
        self.scenes.iter().map(|s| mask_agreement(&s.mask, &s.scored_truth())).sum::<f64>() / n
    }
}

/// Fits the sparse (and optionally dense) Soft PLS-DA on the training table.
pub fn fit_plsda(train: &SpectraTable<f64>, grid: &GridSettings, sparse: bool) -> Result<PlsdaRun> {
    let train = train.sorted_for_folding();
    let folds = venetian_blinds(train.len(), grid.n_folds)?;
    let bands = train.x().ncols();
    let cfg = if sparse { grid.sparse(bands) } else { grid.dense(bands) };
    let (grid, model) = grid_search(&train, &folds, &cfg)?;
    Ok(PlsdaRun { grid, model })
}

/// Whole run for `cfg`. Deterministic for a fixed seed regardless of the
/// number of worker threads.
pub fn run_repro(cfg: &ReproConfig) -> Result<ReproOutput> {
    cfg.validate()?;
    let train_groups = groups(&cfg.train_groups)?;
    let test_groups = groups(&cfg.test_groups)?;
    let scenes = build_scenes(cfg)?;
    log::info!("generated and masked {} scenes", scenes.len());
    let table = sample_scenes(&scenes, cfg.sample_source, &cfg.sample)?;
    let (train, test) = split_by_group(&table, &train_groups, &test_groups)?;
    log::info!("{} spectra: {} train, {} test", table.len(), train.len(), test.len());

    let sparse = fit_plsda(&train, &cfg.grid, true)?;
    log::info!("sparse model {}", sparse.model.name());
    let dense = if cfg.dense { Some(fit_plsda(&train, &cfg.grid, false)?) } else { None };

    let is_test = |s: &Scene| s.group().is_some_and(|g| test_groups.contains(&g));
    let is_train = |s: &Scene| s.group().is_some_and(|g| train_groups.contains(&g));

    let mut scored: Vec<(ImageResult, ObjectMatchResult)> = Vec::new();
    for run in std::iter::once(&sparse).chain(dense.iter()) {
        let part: Vec<_> = scenes
            .par_iter()
            .filter(|s| is_test(s))
            .map(|s| {
                let pred = softplsda::predict_image(&run.model, &s.cube, &s.exclusion)?;
                score_prediction(&pred, s, "full", cfg.min_pixels, cfg.iou_threshold)
            })
            .collect::<Result<_>>()?;
        scored.extend(part);
    }

    let mut unets = Vec::new();
    if let Some(u) = &cfg.unet {
        let train_scenes: Vec<&Scene> = scenes.iter().filter(|s| is_train(s)).collect();
        for choice in &u.bands {
            let bands = choice.resolve(scenes[0].cube.wavelengths(), Some(&sparse.model))?;
            let label = choice.label();
            let trained = train_unet_on(&train_scenes, &bands, u, derive_seed(cfg.seed, &format!("unet/{label}")))?;
            let part: Vec<_> = scenes
                .iter()
                .filter(|s| is_test(s))
                .map(|s| {
                    let cube = crate::hypercube::restrict_bands(&s.cube, &bands)?.cast::<f32>();
                    let mut pred = unet::predict_image(&trained.0, &cube, &s.exclusion)?;
                    pred.model_id = format!("unet-{}", label);
                    score_prediction(&pred, s, &label, cfg.min_pixels, cfg.iou_threshold)
                })
                .collect::<Result<_>>()?;
            scored.extend(part);
            unets.push(UnetTrained { band_set: label, bands, model: trained.0, log: trained.1 });
        }
    }

    let (results, matches): (Vec<_>, Vec<_>) = scored.into_iter().unzip();
    let report = report(&results);
    Ok(ReproOutput { scenes, table, train, test, sparse, dense, unets, results, matches, report })
}

/// Trains a U-Net on the band subset of the given scenes. Training masks are
/// the ground truth with the dark frame excluded.
pub fn train_unet_on(scenes: &[&Scene], bands: &BandSet, run: &UnetRun, seed: u64) -> Result<(UNetModel, Vec<unet::EpochLog>)> {
    let mut inputs = Vec::with_capacity(scenes.len());
    for s in scenes {
        let cube = crate::hypercube::restrict_bands(&s.cube, bands)?.cast::<f32>();
        inputs.push((cube, s.scored_truth()));
    }
    let masks: Vec<&ClassMask> = inputs.iter().map(|(_, m)| m).collect();
    let weights = unet::class_weights_from_masks(&masks)?;
    let spec = UNetSpec { in_channels: bands.len(), ..run.spec.clone() };
    let mut tc = run.train.clone();
    tc.seed = derive_seed(seed, "train");
    tc.class_weights = Some(weights);
    let mut aug = run.augment.clone();
    aug.seed = derive_seed(seed, "augment");
    let dataset = unet::Dataset::new(inputs, aug)?;
    let model = unet::build_unet(&spec, derive_seed(seed, "init"))?;
    unet::train(model, &dataset, &tc)
}

/// Writes every report artifact of a run into `dir`.
pub fn write_outputs(out: &ReproOutput, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    out.report.write_csv(fs::File::create(dir.join("report.csv"))?)?;
    fs::write(dir.join("report.txt"), out.report.to_text())?;
    write_matches_csv(&out.matches, fs::File::create(dir.join("matches.csv"))?)?;
    out.sparse.grid.write_csv(fs::File::create(dir.join("grid_sparse.csv"))?)?;
    out.sparse.model.save_json(dir.join("model_sparse.json"))?;
    out.sparse.model.write_regression_csv(fs::File::create(dir.join("regression_sparse.csv"))?)?;
    let bands = softplsda::selected_bands(&out.sparse.model)?;
    write_band_csv(&bands, out.table.wavelengths(), fs::File::create(dir.join("bands_sparse.csv"))?)?;
    if let Some(d) = &out.dense {
        d.grid.write_csv(fs::File::create(dir.join("grid_dense.csv"))?)?;
        d.model.save_json(dir.join("model_dense.json"))?;
    }
    for u in &out.unets {
        unet::io::save_model(&u.model, dir.join(format!("unet_{}.bin", u.band_set)))?;
        unet::write_log_csv(&u.log, fs::File::create(dir.join(format!("unet_{}_log.csv", u.band_set)))?)?;
    }
    out.table.save_csv(dir.join("spectra.csv"))?;
    Ok(())
}

/// `index,wavelength` per selected band.
pub fn write_band_csv<W: std::io::Write>(bands: &BandSet, wavelengths: &[f64], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let err = |e: csv::Error| Error::Format(e.to_string());
    wr.write_record(["index", "wavelength"]).map_err(err)?;
    for &i in bands.indices() {
        let wl = wavelengths.get(i).ok_or_else(|| Error::Dimension(format!("band {i} outside axis")))?;
        wr.write_record([i.to_string(), wl.to_string()]).map_err(err)?;
    }
    wr.flush()?;
    Ok(())
}

/// Reads the `index` column written by [`write_band_csv`].
pub fn read_band_csv<R: std::io::Read>(r: R) -> Result<BandSet> {
    let mut rd = csv::Reader::from_reader(r);
    let err = |e: csv::Error| Error::Format(e.to_string());
    let col = rd
        .headers()
        .map_err(err)?
        .iter()
        .position(|h| h == "index")
        .ok_or_else(|| Error::Format("band file has no `index` column".into()))?;
    let mut ix = Vec::new();
    for rec in rd.records() {
        let rec = rec.map_err(err)?;
        let v = rec.get(col).unwrap_or("");
        ix.push(v.trim().parse::<usize>().map_err(|_| Error::Format(format!("bad band index `{v}`")))?);
    }
    BandSet::new(ix)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hypercube::BackgroundType;

    fn small_config() -> ReproConfig {
        let mut cfg = ReproConfig::default();
        cfg.corpus.backgrounds = vec![BackgroundType::Bark, BackgroundType::Grass];
        cfg.corpus.scene.height = 56;
        cfg.corpus.scene.width = 56;
        cfg.corpus.scene.blobs.count = 2;
        cfg.sample.n = 60;
        cfg.grid.preprocess = vec![PreprocessSpec::snv_mc()];
        cfg.grid.lv_max = 2;
        cfg.grid.k_grid = Some(vec![10, 20, 137]);
        cfg
    }

    #[test]
    fn exclusion_overrides_truth() {
        let mut truth = ClassMask::filled(2, 2, Label::Target);
        truth.set(0, 1, Label::Background);
        let mut excl = ClassMask::filled(2, 2, Label::NotAssigned);
        excl.set(0, 1, Label::Excluded);
        excl.set(1, 1, Label::Excluded);
        let out = apply_exclusion(&truth, &excl);
        assert_eq!(out.get(0, 0), Label::Target);
        assert_eq!(out.get(0, 1), Label::Excluded);
        assert_eq!(out.get(1, 0), Label::Target);
        assert_eq!(out.get(1, 1), Label::Excluded);
    }

    #[test]
    fn agreement_skips_excluded() {
        let mut a = ClassMask::filled(2, 2, Label::Target);
        let mut b = ClassMask::filled(2, 2, Label::Target);
        a.set(0, 0, Label::Excluded);
        b.set(0, 1, Label::Background);
        assert!((mask_agreement(&a, &b) - 2.0 / 3.0).abs() < 1e-12);
        let all = ClassMask::filled(2, 2, Label::Excluded);
        assert_eq!(mask_agreement(&all, &b), 1.0);
    }

    #[test]
    fn validation_rejects_bad_settings() {
        assert!(ReproConfig::default().validate().is_ok());
        let mut c = ReproConfig::default();
        c.grid.alpha = 1.0;
        assert!(c.validate().is_err());
        let mut c = ReproConfig::default();
        c.grid.n_folds = 1;
        assert!(c.validate().is_err());
        let c = ReproConfig { test_groups: vec![6], ..ReproConfig::default() };
        assert!(c.validate().is_err());
        assert!(groups(&[0]).is_err());
    }

    #[test]
    fn band_choices_resolve() {
        let wl = crate::hypercube::standard_wavelengths();
        assert_eq!(BandChoice::Full.resolve(&wl, None).unwrap().len(), wl.len());
        assert_eq!(BandChoice::Selection1.resolve(&wl, None).unwrap().len(), 38);
        assert_eq!(BandChoice::Selection2.resolve(&wl, None).unwrap().len(), 62);
        assert_eq!(BandChoice::Custom(vec![3, 1]).resolve(&wl, None).unwrap().indices(), &[1, 3]);
        assert!(BandChoice::Model.resolve(&wl, None).is_err());
    }

    #[test]
    fn dense_grid_uses_every_band() {
        let g = GridSettings::default();
        assert_eq!(g.dense(137).k_grid, vec![137]);
        assert_eq!(*g.sparse(137).k_grid.last().unwrap(), 137);
    }

    #[test]
    fn band_csv_lists_index_and_wavelength() {
        let wl = vec![900.0, 905.0, 910.0];
        let mut buf = Vec::new();
        write_band_csv(&BandSet::new(vec![0, 2]).unwrap(), &wl, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "index,wavelength\n0,900\n2,910\n");
        assert!(write_band_csv(&BandSet::new(vec![5]).unwrap(), &wl, Vec::new()).is_err());
        let back = read_band_csv("index,wavelength\n0,900\n2,910\n".as_bytes()).unwrap();
        assert_eq!(back.indices(), &[0, 2]);
        assert!(read_band_csv("wavelength\n900\n".as_bytes()).is_err());
        assert!(read_band_csv("index\nx\n".as_bytes()).is_err());
    }

    #[test]
    fn small_run_detects_and_repeats() {
        let cfg = small_config();
        let a = run_repro(&cfg).unwrap();
        assert_eq!(a.scenes.len(), 10);
        assert!(a.mask_agreement() > 0.95, "agreement {}", a.mask_agreement());
        assert_eq!(a.results.len(), 4);
        let overall = a.report.rows.iter().find(|r| r.background == crate::metrics::ALL_BACKGROUNDS).unwrap();
        assert!(overall.pixel_stats.eff.unwrap() > 0.9, "{}", a.report.to_text());

        let b = run_repro(&cfg).unwrap();
        assert_eq!(a.report, b.report);
        assert_eq!(a.sparse.model.name(), b.sparse.model.name());

        let dir = tempfile::tempdir().unwrap();
        write_outputs(&a, dir.path()).unwrap();
        for f in
            ["report.csv", "report.txt", "matches.csv", "grid_sparse.csv", "model_sparse.json", "bands_sparse.csv", "spectra.csv"]
        {
            assert!(dir.path().join(f).exists(), "{f}");
        }
    }
}
