//! Pixel- and object-level classification statistics and report assembly.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;
use std::iter::Sum;
use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

use crate::detect::{ObjectMatchResult, PredictionImage};
use crate::error::{Error, Result};
use crate::labels::{ClassMask, Label};

/// Confusion counts with not-assigned buckets split by true class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub na_target: u64,
    pub na_background: u64,
}

impl ConfusionCounts {
    pub fn targets(&self) -> u64 {
        self.tp + self.fn_ + self.na_target
    }

    pub fn backgrounds(&self) -> u64 {
        self.tn + self.fp + self.na_background
    }

    /// Records one (truth, prediction) outcome for a binary target/background
    /// problem. `pred = None` means not assigned.
    pub fn record(&mut self, truth_is_target: bool, pred: Option<bool>) {
        match (truth_is_target, pred) {
            (true, Some(true)) => self.tp += 1,
            (true, Some(false)) => self.fn_ += 1,
            (true, None) => self.na_target += 1,
            (false, Some(true)) => self.fp += 1,
            (false, Some(false)) => self.tn += 1,
            (false, None) => self.na_background += 1,
        }
    }
}

impl Add for ConfusionCounts {
    type Output = Self;
    fn add(mut self, o: Self) -> Self {
        self += o;
        self
    }
}

impl AddAssign for ConfusionCounts {
    fn add_assign(&mut self, o: Self) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.tn += o.tn;
        self.fn_ += o.fn_;
        self.na_target += o.na_target;
        self.na_background += o.na_background;
    }
}

impl Sum for ConfusionCounts {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), Add::add)
    }
}

/// Derived rates as fractions in [0, 1]; `None` where undefined.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DerivedStats {
    pub sens: Option<f64>,
    pub spec: Option<f64>,
    pub eff: Option<f64>,
    pub prec: Option<f64>,
    pub f1: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Geometric mean of sensitivity and specificity.
pub fn efficiency(sens: f64, spec: f64) -> f64 {
    (sens * spec).sqrt()
}

/// Harmonic mean of sensitivity and precision; 0 when either is 0.
pub fn f1_score(sens: f64, prec: f64) -> f64 {
    if sens <= 0.0 || prec <= 0.0 {
        0.0
    } else {
        2.0 / (1.0 / sens + 1.0 / prec)
    }
}

/// Not-assigned rows count against SENS and SPEC. At object level TN is
/// meaningless, so SPEC and EFF are omitted.
pub fn derive_stats(c: &ConfusionCounts, object_level: bool) -> DerivedStats {
    let sens = ratio(c.tp, c.targets());
    let prec = ratio(c.tp, c.tp + c.fp);
    let spec = if object_level { None } else { ratio(c.tn, c.backgrounds()) };
    let eff = match (sens, spec) {
        (Some(a), Some(b)) => Some(efficiency(a, b)),
        _ => None,
    };
    let f1 = match (sens, prec) {
        (Some(a), Some(b)) => Some(f1_score(a, b)),
        _ => None,
    };
    DerivedStats { sens, spec, eff, prec, f1 }
}

/// Pixel-level counts. Pixels EXCLUDED (or NOT_ASSIGNED) in the truth are
/// skipped. A prediction of EXCLUDED on a truth pixel counts as a negative
/// call: the masking stage discarded it, so it was not detected.
pub fn pixel_confusion(pred: &PredictionImage, truth: &ClassMask) -> Result<ConfusionCounts> {
    if pred.dims() != truth.dims() {
        return Err(Error::Dimension(format!("prediction {:?} vs truth {:?}", pred.dims(), truth.dims())));
    }
    let mut c = ConfusionCounts::default();
    for (p, t) in pred.labels().iter().zip(truth.labels().iter()) {
        let truth_target = match t {
            Label::Target => true,
            Label::Background => false,
            _ => continue,
        };
        let call = match p {
            Label::Target => Some(true),
            Label::Background | Label::Excluded => Some(false),
            Label::NotAssigned => None,
        };
        c.record(truth_target, call);
    }
    Ok(c)
}

pub fn object_confusion(m: &ObjectMatchResult) -> ConfusionCounts {
    ConfusionCounts { tp: m.tp() as u64, fp: m.fp() as u64, fn_: m.fn_count() as u64, ..Default::default() }
}

/// Counts for one evaluated image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageResult {
    pub model: String,
    pub band_set: String,
    pub image_id: String,
    pub background: String,
    pub pixel: ConfusionCounts,
    pub object: Option<ConfusionCounts>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub model: String,
    pub band_set: String,
    /// Background type, or `all` for the pooled row.
    pub background: String,
    pub images: usize,
    pub pixel: ConfusionCounts,
    pub pixel_stats: DerivedStats,
    pub object: Option<ConfusionCounts>,
    pub object_stats: Option<DerivedStats>,
    pub na_target_pct: Option<f64>,
    pub na_background_pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DetectionReport {
    pub rows: Vec<ReportRow>,
}

pub const ALL_BACKGROUNDS: &str = "all";

/// Micro-averaged report: counts are summed per (model, band set,
/// background) and per (model, band set) overall, then rates derived.
pub fn report(results: &[ImageResult]) -> DetectionReport {
    type Key = (String, String, String);
    let mut groups: BTreeMap<Key, Vec<&ImageResult>> = BTreeMap::new();
    for r in results {
        groups.entry((r.model.clone(), r.band_set.clone(), r.background.clone())).or_default().push(r);
        groups.entry((r.model.clone(), r.band_set.clone(), ALL_BACKGROUNDS.into())).or_default().push(r);
    }
    let rows = groups
        .into_iter()
        .map(|((model, band_set, background), rs)| {
            let pixel: ConfusionCounts = rs.iter().map(|r| r.pixel).sum();
            let object = if rs.iter().all(|r| r.object.is_some()) {
                Some(rs.iter().filter_map(|r| r.object).sum::<ConfusionCounts>())
            } else {
                None
            };
            ReportRow {
                model,
                band_set,
                background,
                images: rs.len(),
                pixel,
                pixel_stats: derive_stats(&pixel, false),
                object,
                object_stats: object.as_ref().map(|o| derive_stats(o, true)),
                na_target_pct: ratio(pixel.na_target, pixel.targets()).map(|v| v * 100.0),
                na_background_pct: ratio(pixel.na_background, pixel.backgrounds()).map(|v| v * 100.0),
            }
        })
        .collect();
    DetectionReport { rows }
}

fn pct(v: Option<f64>) -> String {
    v.map(|x| format!("{:.1}", x * 100.0)).unwrap_or_default()
}

fn pct_raw(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.1}")).unwrap_or_default()
}

const CSV_HEADER: [&str; 24] = [
    "model",
    "band_set",
    "background",
    "images",
    "tp",
    "fp",
    "tn",
    "fn",
    "na_target",
    "na_background",
    "sens",
    "spec",
    "eff",
    "prec",
    "f1",
    "na_target_pct",
    "na_background_pct",
    "obj_tp",
    "obj_fp",
    "obj_fn",
    "obj_sens",
    "obj_prec",
    "obj_f1",
    "obj_images",
];

impl DetectionReport {
    /// One row per (model, band set, background); percentages with one decimal.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let err = |e: csv::Error| Error::Format(e.to_string());
        wr.write_record(CSV_HEADER).map_err(err)?;
        for r in &self.rows {
            let p = &r.pixel;
            let s = &r.pixel_stats;
            let (ot, of, on) = r.object.map(|o| (o.tp.to_string(), o.fp.to_string(), o.fn_.to_string())).unwrap_or_default();
            let os = r.object_stats.unwrap_or_default();
            wr.write_record([
                r.model.clone(),
                r.band_set.clone(),
                r.background.clone(),
                r.images.to_string(),
                p.tp.to_string(),
                p.fp.to_string(),
                p.tn.to_string(),
                p.fn_.to_string(),
                p.na_target.to_string(),
                p.na_background.to_string(),
                pct(s.sens),
                pct(s.spec),
                pct(s.eff),
                pct(s.prec),
                pct(s.f1),
                pct_raw(r.na_target_pct),
                pct_raw(r.na_background_pct),
                ot,
                of,
                on,
                pct(os.sens),
                pct(os.prec),
                pct(os.f1),
                if r.object.is_some() { r.images.to_string() } else { String::new() },
            ])
            .map_err(err)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        String::from_utf8(buf).map_err(|e| Error::Format(e.to_string()))
    }

    /// Aligned plain-text table.
    pub fn to_text(&self) -> String {
        let head = ["model", "bands", "background", "SENS", "SPEC", "EFF", "PREC", "F1", "NA%", "oSENS", "oPREC", "oF1"];
        let mut cells: Vec<Vec<String>> = vec![head.iter().map(|s| s.to_string()).collect()];
        for r in &self.rows {
            let s = &r.pixel_stats;
            let os = r.object_stats.unwrap_or_default();
            let na = match (r.pixel.na_target + r.pixel.na_background, r.pixel.targets() + r.pixel.backgrounds()) {
                (_, 0) => String::new(),
                (n, d) => format!("{:.1}", 100.0 * n as f64 / d as f64),
            };
            cells.push(vec![
                r.model.clone(),
                r.band_set.clone(),
                r.background.clone(),
                pct(s.sens),
                pct(s.spec),
                pct(s.eff),
                pct(s.prec),
                pct(s.f1),
                na,
                pct(os.sens),
                pct(os.prec),
                pct(os.f1),
            ]);
        }
        let widths: Vec<usize> = (0..head.len()).map(|j| cells.iter().map(|r| r[j].len()).max().unwrap_or(0)).collect();
        let mut out = String::new();
        for row in cells {
            let line: Vec<String> = row.iter().zip(&widths).map(|(c, w)| format!("{c:>w$}")).collect();
            let _ = writeln!(out, "{}", line.join("  ").trim_end());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use proptest::prelude::*;

    fn close(a: Option<f64>, b: f64, tol: f64) -> bool {
        a.is_some_and(|v| (v - b).abs() <= tol)
    }

    #[test]
    fn rate_formulas() {
        assert!((efficiency(0.971, 0.984) - 0.977).abs() <= 0.0005);
        assert!((f1_score(0.971, 0.661) - 0.787).abs() <= 0.0005);
        let c = ConfusionCounts { tp: 10, fn_: 10, fp: 7, tn: 7, ..Default::default() };
        let s = derive_stats(&c, false);
        assert!(close(s.sens, 0.5, 1e-15) && close(s.spec, 0.5, 1e-15) && close(s.eff, 0.5, 1e-15));
    }

    #[test]
    fn object_level_omits_specificity() {
        let c = ConfusionCounts { tp: 3, fp: 1, fn_: 1, ..Default::default() };
        let s = derive_stats(&c, true);
        assert!(s.spec.is_none() && s.eff.is_none());
        assert!(close(s.sens, 0.75, 1e-15) && close(s.prec, 0.75, 1e-15) && close(s.f1, 0.75, 1e-15));
        assert!(derive_stats(&ConfusionCounts::default(), false).sens.is_none());
    }

    fn pred_of(rows: &[&str]) -> PredictionImage {
        PredictionImage::new(ClassMask::new(parse(rows)), "p", "m")
    }

    fn parse(rows: &[&str]) -> Array2<Label> {
        Array2::from_shape_fn((rows.len(), rows[0].len()), |(y, x)| match rows[y].as_bytes()[x] {
            b'T' => Label::Target,
            b'B' => Label::Background,
            b'X' => Label::Excluded,
            _ => Label::NotAssigned,
        })
    }

    #[test]
    fn pixel_confusion_hand_count() {
        let truth = ClassMask::new(parse(&["TTBBB", "TTBBX", "BBBBX", "BTTBB", "BTTBB"]));
        let pred = pred_of(&["TBBTB", "T?BBX", "B?BBB", "BTTB?", "BT?XB"]);
        // truth targets (8): TP (0,0)(1,0)(3,1)(3,2)(4,1); FN (0,1); NA (1,1)(4,2)
        // truth backgrounds (15): FP (0,3); NA (2,1)(3,4); TN the other 12, including (4,3) excluded by prediction
        let c = pixel_confusion(&pred, &truth).unwrap();
        assert_eq!(c, ConfusionCounts { tp: 5, fn_: 1, na_target: 2, fp: 1, tn: 12, na_background: 2 });
        assert_eq!(c.targets(), 8);
        assert_eq!(c.backgrounds(), 15);
    }

    #[test]
    fn pixel_confusion_degenerate_cases() {
        let truth = ClassMask::new(parse(&["TB", "BT"]));
        let c = pixel_confusion(&pred_of(&["TB", "BT"]), &truth).unwrap();
        assert_eq!((c.fp, c.fn_), (0, 0));
        let c = pixel_confusion(&pred_of(&["??", "??"]), &truth).unwrap();
        assert_eq!(c, ConfusionCounts { na_target: 2, na_background: 2, ..Default::default() });
    }

    #[test]
    fn report_is_micro_averaged() {
        let a = ConfusionCounts { tp: 1, fn_: 0, tn: 10, ..Default::default() };
        let b = ConfusionCounts { tp: 1, fn_: 9, tn: 10, ..Default::default() };
        let mk = |id: &str, bg: &str, c| ImageResult {
            model: "m".into(),
            band_set: "full".into(),
            image_id: id.into(),
            background: bg.into(),
            pixel: c,
            object: None,
        };
        let rep = report(&[mk("1", "bark", a), mk("2", "leaf", b)]);
        let all = rep.rows.iter().find(|r| r.background == ALL_BACKGROUNDS).unwrap();
        // micro: 2/11; the macro average (1.0 + 0.1)/2 would be 0.55
        assert!(close(all.pixel_stats.sens, 2.0 / 11.0, 1e-15));
        assert_eq!(rep.rows.len(), 3);
        let csv = rep.to_csv_string().unwrap();
        assert!(csv.lines().nth(1).unwrap().starts_with("m,full,all,2,2,0,20,9,0,0,18.2,100.0,42.6"));
        assert!(rep.to_text().contains("18.2"));
    }

    proptest! {
        #[test]
        fn derived_identities(tp in 0u64..500, fp in 0u64..500, tn in 0u64..500, fn_ in 0u64..500, nt in 0u64..50, nb in 0u64..50) {
            let c = ConfusionCounts { tp, fp, tn, fn_, na_target: nt, na_background: nb };
            let s = derive_stats(&c, false);
            if let (Some(a), Some(b), Some(e)) = (s.sens, s.spec, s.eff) {
                prop_assert!((e * e - a * b).abs() <= 1e-12);
            }
            if let (Some(a), Some(p), Some(f)) = (s.sens, s.prec, s.f1) {
                prop_assert!(f >= a.min(p) - 1e-12 && f <= a.max(p) + 1e-12);
            }
        }
    }
}
