use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde_json::json;

use hsi_pest::detect::{evaluate_objects, write_matches_csv, PredictionImage};
use hsi_pest::hypercube::{dark_background_mask, load_cube, save_cube, standard_wavelengths};
use hsi_pest::metrics::{derive_stats, object_confusion, pixel_confusion, report, ConfusionCounts, DetectionReport, ImageResult};
use hsi_pest::pipeline::{
    apply_exclusion, fit_plsda, mask_agreement, mask_image, read_band_csv, run_repro, train_unet_on, write_band_csv,
    write_outputs, SampleSource, Scene,
};
use hsi_pest::preprocess::PreprocessSpec;
use hsi_pest::sampling::{select_representative, split_by_group, SpectraTable};
use hsi_pest::seeds::derive_seed;
use hsi_pest::softplsda::{self, SoftPlsdaModel};
use hsi_pest::synth::generate_corpus;
use hsi_pest::unet::{self, UNetModel};
use hsi_pest::{BandSet, ClassMask, Hypercube, Label};

use crate::config::{create_dir, require, RunConfig};
use crate::UserError;

/// `println!` that reports a closed stdout instead of panicking.
macro_rules! out {
    ($($t:tt)*) => {
        writeln!(std::io::stdout().lock(), $($t)*)?
    };
}

/// Shared state of one invocation.
pub struct Ctx {
    pub cfg: RunConfig,
    pub json: bool,
}

impl Ctx {
    fn emit(&self, text: impl AsRef<str>, value: serde_json::Value) -> Result<()> {
        if self.json {
            out!("{value}");
        } else {
            out!("{}", text.as_ref());
        }
        Ok(())
    }
}

fn cube_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.hdr"))
}

fn truth_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}_truth.pgm"))
}

/// `<id>.hdr` files of `dir`, sorted by name.
fn list_cubes(dir: &Path) -> Result<Vec<PathBuf>> {
    require(dir, "corpus directory")?;
    let mut out: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "hdr"))
        .collect();
    out.sort();
    if out.is_empty() {
        return Err(UserError(format!("no .hdr cubes in {}", dir.display())).into());
    }
    Ok(out)
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn load(path: &Path) -> Result<Hypercube<f64>> {
    require(path, "cube")?;
    load_cube(path).with_context(|| format!("reading {}", path.display()))
}

fn load_mask(path: &Path) -> Result<ClassMask> {
    require(path, "mask")?;
    ClassMask::load_pgm(path).with_context(|| format!("reading {}", path.display()))
}

fn dark(cfg: &RunConfig, hc: &Hypercube<f64>) -> ClassMask {
    dark_background_mask(hc, cfg.mask.dark_threshold, cfg.mask.probe_nm)
}

pub fn synth(ctx: &Ctx, out: Option<PathBuf>) -> Result<()> {
    let dir = out.unwrap_or_else(|| ctx.cfg.paths.corpus.clone());
    create_dir(&dir)?;
    let mut corpus = ctx.cfg.synth.clone();
    corpus.seed = derive_seed(ctx.cfg.seed, "synth");
    let scenes = generate_corpus(&corpus)?;
    for (cube, truth) in &scenes {
        let id = &cube.meta().image_id;
        save_cube(cube, cube_path(&dir, id))?;
        truth.save_pgm(truth_path(&dir, id))?;
    }
    ctx.emit(
        format!("wrote {} scenes to {}", scenes.len(), dir.display()),
        json!({"command": "synth", "scenes": scenes.len(), "dir": dir}),
    )?;
    Ok(())
}

pub fn mask(ctx: &Ctx, corpus: Option<PathBuf>, out: Option<PathBuf>) -> Result<()> {
    let corpus = corpus.unwrap_or_else(|| ctx.cfg.paths.corpus.clone());
    let out = out.unwrap_or_else(|| ctx.cfg.paths.output.join("masks"));
    let cubes = list_cubes(&corpus)?;
    create_dir(&out)?;
    let mut rows = Vec::new();
    for p in &cubes {
        let hc = load(p)?;
        let id = hc.meta().image_id.clone();
        let (exclusion, mask) = mask_image(&hc, &ctx.cfg.mask)?;
        exclusion.save_pgm(out.join(format!("{id}_exclusion.pgm")))?;
        mask.save_pgm(out.join(format!("{id}_mask.pgm")))?;
        let tp = truth_path(&corpus, &id);
        let agreement =
            if tp.exists() { Some(mask_agreement(&mask, &apply_exclusion(&load_mask(&tp)?, &exclusion))) } else { None };
        let n_target = mask.labels().iter().filter(|l| **l == Label::Target).count();
        rows.push((id, n_target, agreement));
    }
    if ctx.json {
        let v: Vec<_> = rows.iter().map(|(id, n, a)| json!({"image_id": id, "target_pixels": n, "agreement": a})).collect();
        out!("{}", json!({"command": "mask", "images": v}));
    } else {
        for (id, n, a) in &rows {
            match a {
                Some(a) => out!("{id}: {n} target pixels, agreement {:.4}", a),
                None => out!("{id}: {n} target pixels"),
            }
        }
    }
    Ok(())
}

pub fn sample(
    ctx: &Ctx,
    corpus: Option<PathBuf>,
    masks: Option<PathBuf>,
    source: Option<SampleSource>,
    out: Option<PathBuf>,
) -> Result<()> {
    let corpus = corpus.unwrap_or_else(|| ctx.cfg.paths.corpus.clone());
    let masks = masks.unwrap_or_else(|| ctx.cfg.paths.output.join("masks"));
    let out = out.unwrap_or_else(|| ctx.cfg.paths.output.join("spectra.csv"));
    let source = source.unwrap_or(ctx.cfg.sample.source);
    let opts = ctx.cfg.sample.options;
    let mut parts = Vec::new();
    for p in list_cubes(&corpus)? {
        let hc = load(&p)?;
        let id = hc.meta().image_id.clone();
        let mask = match source {
            SampleSource::Score => load_mask(&masks.join(format!("{id}_mask.pgm")))?,
            SampleSource::Truth => {
                let excl = masks.join(format!("{id}_exclusion.pgm"));
                let excl = if excl.exists() { load_mask(&excl)? } else { dark(&ctx.cfg, &hc) };
                apply_exclusion(&load_mask(&truth_path(&corpus, &id))?, &excl)
            }
        };
        parts.push(select_representative(&hc, &mask, Label::Background, &opts)?);
        parts.push(select_representative(&hc, &mask, Label::Target, &opts)?);
    }
    let table = SpectraTable::concat(&parts)?;
    if let Some(parent) = out.parent() {
        create_dir(parent)?;
    }
    table.save_csv(&out)?;
    ctx.emit(
        format!("wrote {} spectra to {}", table.len(), out.display()),
        json!({"command": "sample", "rows": table.len(), "file": out}),
    )?;
    Ok(())
}

/// Grid overrides given on the command line.
pub struct GridFlags {
    pub preprocess: Option<Vec<String>>,
    pub lv_max: Option<usize>,
    pub k_grid: Option<Vec<usize>>,
    pub folds: Option<usize>,
}

fn parse_preprocess(name: &str) -> Result<PreprocessSpec> {
    let known = PreprocessSpec::standard_variants().into_iter().chain([PreprocessSpec::mean_center()]);
    let mut names = Vec::new();
    for spec in known {
        if spec.to_string() == name {
            return Ok(spec);
        }
        names.push(spec.to_string());
    }
    Err(UserError(format!("unknown preprocessing `{name}` (expected one of {})", names.join(", "))).into())
}

pub fn train_pls(ctx: &Ctx, sparse: bool, spectra: PathBuf, out: Option<PathBuf>, flags: GridFlags) -> Result<()> {
    require(&spectra, "spectra file")?;
    let mut grid = ctx.cfg.train.grid.clone();
    if let Some(p) = flags.preprocess {
        grid.preprocess = p.iter().map(|s| parse_preprocess(s)).collect::<Result<_>>()?;
    }
    if let Some(v) = flags.lv_max {
        grid.lv_max = v;
    }
    if flags.k_grid.is_some() {
        grid.k_grid = flags.k_grid;
    }
    if let Some(f) = flags.folds {
        grid.n_folds = f;
    }
    if grid.n_folds < 2 || grid.lv_min == 0 || grid.lv_max < grid.lv_min {
        return Err(UserError("need at least 2 folds and 1 <= lv_min <= lv_max".into()).into());
    }
    let table = SpectraTable::<f64>::load_csv(&spectra)?;
    let train_groups = hsi_pest::pipeline::groups(&ctx.cfg.train.train_groups)?;
    let test_groups = hsi_pest::pipeline::groups(&ctx.cfg.train.test_groups)?;
    let (train, test) = split_by_group(&table, &train_groups, &test_groups)?;
    let run = fit_plsda(&train, &grid, sparse)?;

    let kind = if sparse { "splsda" } else { "plsda" };
    let out = out.unwrap_or_else(|| ctx.cfg.paths.output.clone());
    create_dir(&out)?;
    run.model.save_json(out.join(format!("model_{kind}.json")))?;
    run.grid.write_csv(File::create(out.join(format!("grid_{kind}.csv")))?)?;
    run.model.write_regression_csv(File::create(out.join(format!("regression_{kind}.csv")))?)?;
    let bands = softplsda::selected_bands(&run.model)?;
    write_band_csv(&bands, table.wavelengths(), File::create(out.join(format!("bands_{kind}.csv")))?)?;

    let mut counts = ConfusionCounts::default();
    if !test.is_empty() {
        let assigned = run.model.assign(test.x().view())?;
        for (cls, a) in test.class_indices().iter().zip(assigned) {
            counts.record(*cls == 1, a.map(|c| c == 1));
        }
    }
    let stats = derive_stats(&counts, false);
    let cell = run.grid.chosen_cell();
    let pct = |v: Option<f64>| v.map(|x| format!("{:.1}", 100.0 * x)).unwrap_or_else(|| "-".into());
    ctx.emit(
        format!(
            "{}: {} {} LV, k={}, {} bands; CV EFF {}; test SENS {} SPEC {} EFF {} ({} rows)",
            run.model.name(),
            cell.preprocess,
            cell.n_lv,
            cell.k_per_lv,
            bands.len(),
            pct(cell.stats.eff),
            pct(stats.sens),
            pct(stats.spec),
            pct(stats.eff),
            test.len()
        ),
        json!({
            "command": format!("train {kind}"), "model": run.model.name(), "preprocess": cell.preprocess,
            "n_lv": cell.n_lv, "k_per_lv": cell.k_per_lv, "bands": bands.indices(), "cv": cell.stats,
            "test": stats, "test_counts": counts, "dir": out,
        }),
    )?;
    Ok(())
}

/// `full`, `selection1`, `selection2`, `file:<bands.csv>` or `model:<model.json>`.
fn parse_bands(spec: &str, wavelengths: &[f64]) -> Result<(String, BandSet)> {
    let bad = |m: String| anyhow::Error::from(UserError(m));
    match spec {
        "full" => Ok(("full".into(), BandSet::all(wavelengths.len()))),
        "selection1" => Ok(("selection1".into(), BandSet::selection_1(wavelengths)?)),
        "selection2" => Ok(("selection2".into(), BandSet::selection_2(wavelengths)?)),
        _ => {
            if let Some(p) = spec.strip_prefix("file:") {
                let p = Path::new(p);
                require(p, "band file")?;
                Ok((stem(p), read_band_csv(File::open(p)?)?))
            } else if let Some(p) = spec.strip_prefix("model:") {
                let p = Path::new(p);
                require(p, "model")?;
                let m = SoftPlsdaModel::<f64>::load_json(p)?;
                Ok(("model".into(), softplsda::selected_bands(&m)?))
            } else {
                Err(bad(format!("unknown band set `{spec}`")))
            }
        }
    }
}

pub struct UnetFlags {
    pub bands: String,
    pub epochs: Option<usize>,
    pub base_filters: Option<usize>,
}

pub fn train_unet(ctx: &Ctx, corpus: Option<PathBuf>, out: Option<PathBuf>, flags: UnetFlags) -> Result<()> {
    let corpus = corpus.unwrap_or_else(|| ctx.cfg.paths.corpus.clone());
    let out = out.unwrap_or_else(|| ctx.cfg.paths.output.clone());
    let mut run = ctx.cfg.unet.clone();
    if let Some(e) = flags.epochs {
        run.train.epochs = e;
    }
    if let Some(b) = flags.base_filters {
        run.spec.base_filters = b;
    }
    let train_groups = hsi_pest::pipeline::groups(&ctx.cfg.train.train_groups)?;
    let mut scenes = Vec::new();
    for p in list_cubes(&corpus)? {
        let cube = load(&p)?;
        if !cube.meta().group.is_some_and(|g| train_groups.contains(&g)) {
            continue;
        }
        let truth = load_mask(&truth_path(&corpus, &cube.meta().image_id))?;
        let exclusion = dark(&ctx.cfg, &cube);
        scenes.push(Scene { mask: truth.clone(), cube, truth, exclusion });
    }
    if scenes.is_empty() {
        return Err(UserError(format!("no training-group cubes in {}", corpus.display())).into());
    }
    let wl = scenes[0].cube.wavelengths().to_vec();
    let (label, bands) = parse_bands(&flags.bands, &wl)?;
    let refs: Vec<&Scene> = scenes.iter().collect();
    let (model, log) = train_unet_on(&refs, &bands, &run, derive_seed(ctx.cfg.seed, &format!("unet/{label}")))?;
    create_dir(&out)?;
    let base = out.join(format!("unet_{label}"));
    unet::io::save_model(&model, base.with_extension("bin"))?;
    unet::write_log_csv(&log, File::create(out.join(format!("unet_{label}_log.csv")))?)?;
    write_band_csv(&bands, &wl, File::create(out.join(format!("unet_{label}_bands.csv")))?)?;
    let last = log.last();
    ctx.emit(
        format!(
            "unet_{label}: {} bands, {} parameters, final loss {:.4}, accuracy {:.4}",
            bands.len(),
            model.n_parameters(),
            last.map_or(f64::NAN, |l| l.loss),
            last.map_or(f64::NAN, |l| l.accuracy)
        ),
        json!({"command": "train unet", "band_set": label, "bands": bands.indices(), "log": log, "dir": out}),
    )?;
    Ok(())
}

pub fn bands(
    ctx: &Ctx,
    preset: Option<String>,
    model: Option<PathBuf>,
    cube: Option<PathBuf>,
    out: Option<PathBuf>,
) -> Result<()> {
    let wl = match &cube {
        Some(p) => load(p)?.wavelengths().to_vec(),
        None => standard_wavelengths(),
    };
    let (label, set) = match (preset, model) {
        (Some(p), None) => parse_bands(&p, &wl)?,
        (None, Some(m)) => parse_bands(&format!("model:{}", m.display()), &wl)?,
        _ => return Err(UserError("give exactly one of --preset or --model".into()).into()),
    };
    if let Some(out) = &out {
        write_band_csv(&set, &wl, File::create(out)?)?;
    }
    if ctx.json {
        let nm: Vec<f64> = set.indices().iter().filter_map(|&i| wl.get(i).copied()).collect();
        out!(
            "{}",
            json!({"command": "bands", "band_set": label, "count": set.len(), "indices": set.indices(), "wavelengths": nm})
        );
    } else {
        for i in set.indices() {
            out!("{i}");
        }
    }
    Ok(())
}

enum Model {
    Pls(SoftPlsdaModel<f64>),
    Unet(UNetModel, BandSet),
}

pub fn predict(ctx: &Ctx, model_path: PathBuf, bands: Option<String>, cubes: Vec<PathBuf>, out: Option<PathBuf>) -> Result<()> {
    require(&model_path, "model")?;
    let model_id = stem(&model_path);
    let model = if model_path.extension().is_some_and(|x| x == "json") {
        Model::Pls(SoftPlsdaModel::load_json(&model_path)?)
    } else {
        let m = unet::io::load_model(&model_path)?;
        let sibling = model_path.with_file_name(format!("{model_id}_bands.csv"));
        let spec = match bands {
            Some(b) => b,
            None if sibling.exists() => format!("file:{}", sibling.display()),
            None => "full".into(),
        };
        let wl = standard_wavelengths();
        let (_, set) = parse_bands(&spec, &wl)?;
        Model::Unet(m, set)
    };
    if cubes.is_empty() {
        return Err(UserError("no cubes given".into()).into());
    }
    let out = out.unwrap_or_else(|| ctx.cfg.paths.output.join("predictions"));
    create_dir(&out)?;
    let mut written = Vec::new();
    for p in &cubes {
        let hc = load(p)?;
        let excl = dark(&ctx.cfg, &hc);
        let mut pred = match &model {
            Model::Pls(m) => softplsda::predict_image(m, &hc, &excl)?,
            Model::Unet(m, set) => {
                let sub = hsi_pest::hypercube::restrict_bands(&hc, set)?.cast::<f32>();
                unet::predict_image(m, &sub, &excl)?
            }
        };
        pred.model_id = model_id.clone();
        let file = out.join(format!("{}_pred.pgm", pred.image_id));
        pred.mask.save_pgm(&file)?;
        let n = pred.labels().iter().filter(|l| **l == Label::Target).count();
        written.push(json!({"image_id": pred.image_id, "target_pixels": n, "file": file}));
        if !ctx.json {
            out!("{}: {} target pixels -> {}", pred.image_id, n, file.display());
        }
    }
    if ctx.json {
        out!("{}", json!({"command": "predict", "model": model_id, "images": written}));
    }
    Ok(())
}

pub fn evaluate(
    ctx: &Ctx,
    objects: bool,
    pred_dir: PathBuf,
    corpus: Option<PathBuf>,
    model_name: Option<String>,
    band_set: String,
    out: Option<PathBuf>,
) -> Result<()> {
    require(&pred_dir, "prediction directory")?;
    let corpus = corpus.unwrap_or_else(|| ctx.cfg.paths.corpus.clone());
    let model = model_name.unwrap_or_else(|| stem(&pred_dir));
    let mut preds: Vec<PathBuf> = fs::read_dir(&pred_dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.file_name().is_some_and(|n| n.to_string_lossy().ends_with("_pred.pgm")))
        .collect();
    preds.sort();
    if preds.is_empty() {
        return Err(UserError(format!("no *_pred.pgm files in {}", pred_dir.display())).into());
    }
    let ev = &ctx.cfg.evaluate;
    let mut results = Vec::new();
    let mut matches = Vec::new();
    for p in &preds {
        let name = p.file_name().unwrap_or_default().to_string_lossy();
        let id = name.trim_end_matches("_pred.pgm").to_string();
        let hc = load(&cube_path(&corpus, &id))?;
        let truth = apply_exclusion(&load_mask(&truth_path(&corpus, &id))?, &dark(&ctx.cfg, &hc));
        let pred = PredictionImage::new(load_mask(p)?, id.clone(), model.clone());
        let object = if objects {
            let m = evaluate_objects(&pred, &truth, ev.min_pixels, ev.iou_threshold)?;
            let c = object_confusion(&m);
            matches.push(m);
            Some(c)
        } else {
            None
        };
        results.push(ImageResult {
            model: model.clone(),
            band_set: band_set.clone(),
            image_id: id,
            background: hc.meta().background.as_str().to_string(),
            pixel: pixel_confusion(&pred, &truth)?,
            object,
        });
    }
    let rep = report(&results);
    if let Some(out) = &out {
        if let Some(parent) = out.parent() {
            create_dir(parent)?;
        }
        rep.write_csv(File::create(out)?)?;
        if objects {
            write_matches_csv(&matches, File::create(out.with_file_name("matches.csv"))?)?;
        }
    }
    print_report(ctx, "evaluate", &rep)
}

fn print_report(ctx: &Ctx, command: &str, rep: &DetectionReport) -> Result<()> {
    if ctx.json {
        out!("{}", json!({"command": command, "report": rep}));
    } else {
        write!(std::io::stdout().lock(), "{}", rep.to_csv_string()?)?;
    }
    Ok(())
}

pub fn repro(ctx: &Ctx, out: Option<PathBuf>, with_unet: bool, dense: bool) -> Result<()> {
    let mut cfg = ctx.cfg.repro();
    if with_unet && cfg.unet.is_none() {
        cfg.unet = Some(ctx.cfg.unet.clone());
    }
    cfg.dense |= dense;
    let out = out.unwrap_or_else(|| ctx.cfg.paths.output.clone());
    let run = run_repro(&cfg)?;
    write_outputs(&run, &out)?;
    if ctx.json {
        out!(
            "{}",
            json!({
                "command": "repro", "rows": run.table.len(), "train_rows": run.train.len(), "test_rows": run.test.len(),
                "mask_agreement": run.mask_agreement(), "model": run.sparse.model.name(), "report": run.report, "dir": out,
            })
        );
    } else {
        out!(
            "{} spectra ({} train / {} test), mask agreement {:.4}, model {}",
            run.table.len(),
            run.train.len(),
            run.test.len(),
            run.mask_agreement(),
            run.sparse.model.name()
        );
        write!(std::io::stdout().lock(), "{}", run.report.to_text())?;
        out!("artifacts in {}", out.display());
    }
    Ok(())
}
