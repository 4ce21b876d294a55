//! Representative-spectrum selection (Kennard–Stone in PC-score space),
//! spectra tables, group-based splitting and venetian-blinds folds.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use ndarray::{concatenate, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hypercube::{BackgroundType, BugGroup, Hypercube};
use crate::labels::{ClassMask, Label};
use crate::pca::{self, DEFAULT_ALPHA};
use crate::preprocess::PreprocessSpec;
use crate::scalar::Real;

/// Kennard–Stone maximin selection of `k` rows of `points`.
///
/// Starts from the farthest pair, then repeatedly adds the point whose
/// distance to the nearest selected point is largest. Ties go to the lowest
/// index, so the result is deterministic.
pub fn kennard_stone<T: Real>(points: ArrayView2<T>, k: usize) -> Result<Vec<usize>> {
    let n = points.nrows();
    if k > n {
        return Err(Error::InvalidParameter(format!("cannot select {k} of {n} points")));
    }
    if k == 0 {
        return Ok(Vec::new());
    }
    if n == 1 {
        return Ok(vec![0]);
    }
    let rows: Vec<Vec<f64>> = points.rows().into_iter().map(|r| r.iter().map(|v| v.as_f64()).collect()).collect();
    let dist2 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let (mut bi, mut bj, mut best) = (0, 1, f64::NEG_INFINITY);
    for i in 0..n {
        for j in (i + 1)..n {
            let d = dist2(&rows[i], &rows[j]);
            if d > best {
                best = d;
                bi = i;
                bj = j;
            }
        }
    }
    let mut selected = vec![bi];
    if k == 1 {
        return Ok(selected);
    }
    selected.push(bj);
    let mut taken = vec![false; n];
    taken[bi] = true;
    taken[bj] = true;
    let mut nearest: Vec<f64> = rows.iter().map(|r| dist2(r, &rows[bi]).min(dist2(r, &rows[bj]))).collect();
    while selected.len() < k {
        let mut pick = usize::MAX;
        let mut far = f64::NEG_INFINITY;
        for (i, d) in nearest.iter().enumerate() {
            if !taken[i] && *d > far {
                far = *d;
                pick = i;
            }
        }
        taken[pick] = true;
        selected.push(pick);
        let anchor = &rows[pick];
        for (i, d) in nearest.iter_mut().enumerate() {
            if !taken[i] {
                *d = d.min(dist2(&rows[i], anchor));
            }
        }
    }
    Ok(selected)
}

/// Class of a modelled spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SpectrumClass {
    #[serde(rename = "BACKGROUND")]
    Background,
    #[serde(rename = "BMSB")]
    Bmsb,
}

impl SpectrumClass {
    /// Column index in the dummy-coded response.
    pub fn index(self) -> usize {
        match self {
            SpectrumClass::Background => 0,
            SpectrumClass::Bmsb => 1,
        }
    }

    pub fn from_label(label: Label) -> Option<Self> {
        match label {
            Label::Target => Some(SpectrumClass::Bmsb),
            Label::Background => Some(SpectrumClass::Background),
            _ => None,
        }
    }

    pub fn label(self) -> Label {
        match self {
            SpectrumClass::Background => Label::Background,
            SpectrumClass::Bmsb => Label::Target,
        }
    }

    pub fn names() -> Vec<String> {
        vec!["BACKGROUND".into(), "BMSB".into()]
    }
}

impl fmt::Display for SpectrumClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SpectrumClass::Background => "BACKGROUND",
            SpectrumClass::Bmsb => "BMSB",
        })
    }
}

impl FromStr for SpectrumClass {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "BMSB" => Ok(SpectrumClass::Bmsb),
            "BACKGROUND" => Ok(SpectrumClass::Background),
            other => Err(Error::Format(format!("unknown class `{other}`"))),
        }
    }
}

/// Where a spectrum came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub image_id: String,
    pub x: usize,
    pub y: usize,
    pub background: BackgroundType,
    pub group: Option<BugGroup>,
    /// Position in the selection order within its (image, class) block.
    pub rank: usize,
}

/// Row-wise spectra with class labels and pixel provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectraTable<T> {
    wavelengths: Vec<f64>,
    x: Array2<T>,
    classes: Vec<SpectrumClass>,
    provenance: Vec<Provenance>,
}

impl<T: Real> SpectraTable<T> {
    pub fn new(wavelengths: Vec<f64>, x: Array2<T>, classes: Vec<SpectrumClass>, provenance: Vec<Provenance>) -> Result<Self> {
        if x.ncols() != wavelengths.len() {
            return Err(Error::Dimension(format!("{} columns for {} wavelengths", x.ncols(), wavelengths.len())));
        }
        if classes.len() != x.nrows() || provenance.len() != x.nrows() {
            return Err(Error::Dimension(format!(
                "{} rows, {} classes, {} provenance records",
                x.nrows(),
                classes.len(),
                provenance.len()
            )));
        }
        Ok(Self { wavelengths, x, classes, provenance })
    }

    pub fn empty(wavelengths: Vec<f64>) -> Self {
        let p = wavelengths.len();
        Self { wavelengths, x: Array2::zeros((0, p)), classes: vec![], provenance: vec![] }
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn wavelengths(&self) -> &[f64] {
        &self.wavelengths
    }

    pub fn x(&self) -> &Array2<T> {
        &self.x
    }

    pub fn classes(&self) -> &[SpectrumClass] {
        &self.classes
    }

    pub fn class_indices(&self) -> Vec<usize> {
        self.classes.iter().map(|c| c.index()).collect()
    }

    pub fn provenance(&self) -> &[Provenance] {
        &self.provenance
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            wavelengths: self.wavelengths.clone(),
            x: self.x.select(Axis(0), rows),
            classes: rows.iter().map(|i| self.classes[*i]).collect(),
            provenance: rows.iter().map(|i| self.provenance[*i].clone()).collect(),
        }
    }

    /// Stacks tables with identical wavelength axes.
    pub fn concat(tables: &[SpectraTable<T>]) -> Result<Self> {
        let Some(first) = tables.first() else {
            return Err(Error::InvalidParameter("no tables to concatenate".into()));
        };
        if tables.iter().any(|t| t.wavelengths != first.wavelengths) {
            return Err(Error::Dimension("tables have different wavelength axes".into()));
        }
        let views: Vec<_> = tables.iter().map(|t| t.x.view()).collect();
        let x = concatenate(Axis(0), &views).map_err(|e| Error::Dimension(e.to_string()))?;
        Ok(Self {
            wavelengths: first.wavelengths.clone(),
            x,
            classes: tables.iter().flat_map(|t| t.classes.iter().copied()).collect(),
            provenance: tables.iter().flat_map(|t| t.provenance.iter().cloned()).collect(),
        })
    }

    /// Orders rows by (image id, class, selection rank), the ordering the
    /// venetian-blinds folds are cut from.
    pub fn sorted_for_folding(&self) -> Self {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| {
            let (pa, pb) = (&self.provenance[a], &self.provenance[b]);
            pa.image_id.cmp(&pb.image_id).then(self.classes[a].cmp(&self.classes[b])).then(pa.rank.cmp(&pb.rank)).then(a.cmp(&b))
        });
        self.select_rows(&order)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header: Vec<String> =
            ["image_id", "x", "y", "class", "group", "background"].iter().map(|s| s.to_string()).collect();
        header.extend(self.wavelengths.iter().map(|v| format!("{v}")));
        wr.write_record(&header).map_err(csv_err)?;
        for i in 0..self.len() {
            let p = &self.provenance[i];
            let mut rec = vec![
                p.image_id.clone(),
                p.x.to_string(),
                p.y.to_string(),
                self.classes[i].to_string(),
                p.group.map(|g| g.to_string()).unwrap_or_else(|| "none".into()),
                p.background.to_string(),
            ];
            rec.extend(self.x.row(i).iter().map(|v| format!("{v}")));
            wr.write_record(&rec).map_err(csv_err)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::io::BufWriter::new(std::fs::File::create(path)?))
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let header = rd.headers().map_err(csv_err)?.clone();
        let fixed = ["image_id", "x", "y", "class", "group", "background"];
        if header.len() < fixed.len() + 1 || header.iter().take(6).ne(fixed.iter().copied()) {
            return Err(Error::Format("spectra CSV header must start with image_id,x,y,class,group,background".into()));
        }
        let wavelengths = header
            .iter()
            .skip(6)
            .map(|s| s.parse::<f64>().map_err(|_| Error::Format(format!("bad wavelength column `{s}`"))))
            .collect::<Result<Vec<_>>>()?;
        let p = wavelengths.len();
        let mut data = Vec::new();
        let mut classes = Vec::new();
        let mut provenance: Vec<Provenance> = Vec::new();
        let mut ranks: std::collections::HashMap<(String, SpectrumClass), usize> = Default::default();
        for rec in rd.records() {
            let rec = rec.map_err(csv_err)?;
            if rec.len() != p + 6 {
                return Err(Error::Format(format!("row has {} fields, expected {}", rec.len(), p + 6)));
            }
            let num = |s: &str| s.parse::<usize>().map_err(|_| Error::Format(format!("bad coordinate `{s}`")));
            let class: SpectrumClass = rec[3].parse()?;
            let group = match &rec[4] {
                "none" | "" => None,
                g => Some(g.parse()?),
            };
            let rank = ranks.entry((rec[0].to_owned(), class)).or_insert(0);
            provenance.push(Provenance {
                image_id: rec[0].to_owned(),
                x: num(&rec[1])?,
                y: num(&rec[2])?,
                background: rec[5].parse()?,
                group,
                rank: *rank,
            });
            *rank += 1;
            classes.push(class);
            for s in rec.iter().skip(6) {
                let v: f64 = s.parse().map_err(|_| Error::Format(format!("bad value `{s}`")))?;
                data.push(T::lit(v));
            }
        }
        let n = classes.len();
        let x = Array2::from_shape_vec((n, p), data).map_err(|e| Error::Dimension(e.to_string()))?;
        Self::new(wavelengths, x, classes, provenance)
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectOptions {
    pub n: usize,
    pub n_pc: usize,
    pub alpha: f64,
}

impl Default for SelectOptions {
    fn default() -> Self {
        Self { n: 200, n_pc: 3, alpha: DEFAULT_ALPHA }
    }
}

/// Picks `opts.n` representative spectra of one mask class from an image.
///
/// PCA (mean-centred) on the class pixels, removal of T²/Q outliers, a second
/// PCA on the survivors, then Kennard–Stone in its score space. Rows keep
/// raw reflectance.
pub fn select_representative<T: Real>(
    hc: &Hypercube<T>,
    mask: &ClassMask,
    class: Label,
    opts: &SelectOptions,
) -> Result<SpectraTable<T>> {
    let sclass =
        SpectrumClass::from_label(class).ok_or_else(|| Error::InvalidParameter(format!("cannot sample class {class:?}")))?;
    let (h, w) = (hc.height(), hc.width());
    if mask.dims() != (h, w) {
        return Err(Error::Dimension("mask does not match cube".into()));
    }
    let pixels: Vec<usize> = (0..h * w).filter(|i| mask.get(i / w, i % w) == class).collect();
    let spectra = hc.spectra().select(Axis(0), &pixels);
    let mc = PreprocessSpec::mean_center();
    let n_pc = opts.n_pc;

    let ranked: Vec<usize> = if pixels.len() < n_pc + 2 {
        log::warn!("{}: only {} {sclass} pixels; taking all", hc.meta().image_id, pixels.len());
        (0..pixels.len()).collect()
    } else {
        let kept = match pca::screen_outliers(spectra.view(), n_pc, &mc, opts.alpha) {
            Ok(k) => k,
            Err(Error::Degenerate(msg)) => {
                log::warn!("{}: {msg}; skipping outlier screen", hc.meta().image_id);
                (0..pixels.len()).collect()
            }
            Err(e) => return Err(e),
        };
        let survivors = spectra.select(Axis(0), &kept);
        let space = if kept.len() >= n_pc + 2 {
            match pca::fit_pca(survivors.view(), n_pc, &mc) {
                Ok(model) => model.scores(survivors.view())?,
                Err(Error::Degenerate(_)) => mc.fit(survivors.view())?.apply(survivors.view())?,
                Err(e) => return Err(e),
            }
        } else {
            survivors.to_owned()
        };
        let k = opts.n.min(kept.len());
        if k < opts.n {
            log::warn!(
                "{}: {} {sclass} pixels after screening, fewer than {}; selecting all",
                hc.meta().image_id,
                kept.len(),
                opts.n
            );
        }
        kennard_stone(space.view(), k)?.into_iter().map(|i| kept[i]).collect()
    };
    let ranked: Vec<usize> = ranked.into_iter().take(opts.n).collect();
    let x = spectra.select(Axis(0), &ranked);
    let meta = hc.meta();
    let provenance = ranked
        .iter()
        .enumerate()
        .map(|(rank, &r)| {
            let pix = pixels[r];
            Provenance {
                image_id: meta.image_id.clone(),
                x: pix % w,
                y: pix / w,
                background: meta.background,
                group: meta.group,
                rank,
            }
        })
        .collect();
    SpectraTable::new(hc.wavelengths().to_vec(), x, vec![sclass; ranked.len()], provenance)
}

/// Splits rows by specimen group: rows of `test_groups` go to the test
/// partition, rows of `train_groups` to training. A row in neither is an
/// error, as is a group listed on both sides.
pub fn split_by_group<T: Real>(
    table: &SpectraTable<T>,
    train_groups: &[BugGroup],
    test_groups: &[BugGroup],
) -> Result<(SpectraTable<T>, SpectraTable<T>)> {
    if let Some(g) = train_groups.iter().find(|g| test_groups.contains(g)) {
        return Err(Error::InvalidParameter(format!("group {g} listed for both train and test")));
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (i, p) in table.provenance.iter().enumerate() {
        match p.group {
            Some(g) if test_groups.contains(&g) => test.push(i),
            Some(g) if train_groups.contains(&g) => train.push(i),
            other => {
                return Err(Error::UnknownGroup(format!(
                    "{} (row {i} of {}) is in neither partition",
                    other.map(|g| g.to_string()).unwrap_or_else(|| "none".into()),
                    p.image_id
                )))
            }
        }
    }
    Ok((table.select_rows(&train), table.select_rows(&test)))
}

/// Cross-validation fold assignment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub folds: Vec<usize>,
    pub n_folds: usize,
}

impl FoldPlan {
    /// `(training rows, held-out rows)` for one fold.
    pub fn split(&self, fold: usize) -> (Vec<usize>, Vec<usize>) {
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for (i, f) in self.folds.iter().enumerate() {
            if *f == fold {
                test.push(i);
            } else {
                train.push(i);
            }
        }
        (train, test)
    }
}

/// Venetian blinds: row `i` is held out in fold `i mod n_groups`.
pub fn venetian_blinds(n_rows: usize, n_groups: usize) -> Result<FoldPlan> {
    if n_groups < 2 || n_groups > n_rows {
        return Err(Error::InvalidParameter(format!("{n_groups} deletion groups for {n_rows} rows")));
    }
    Ok(FoldPlan { folds: (0..n_rows).map(|i| i % n_groups).collect(), n_folds: n_groups })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hypercube::{standard_wavelengths, CubeMeta};
    use ndarray::{array, Array3};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    /// Kennard–Stone recomputed from scratch at every step.
    fn ks_oracle(points: &Array2<f64>, k: usize) -> Vec<usize> {
        let n = points.nrows();
        let d = |i: usize, j: usize| -> f64 {
            points.row(i).iter().zip(points.row(j).iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
        };
        let mut pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j))).collect();
        pairs.sort_by(|a, b| d(b.0, b.1).partial_cmp(&d(a.0, a.1)).unwrap().then(a.cmp(b)));
        let mut sel = vec![pairs[0].0, pairs[0].1];
        sel.truncate(k);
        while sel.len() < k {
            let cand = (0..n)
                .filter(|i| !sel.contains(i))
                .map(|i| (i, sel.iter().map(|s| d(i, *s)).fold(f64::INFINITY, f64::min)))
                .fold((usize::MAX, f64::NEG_INFINITY), |b, c| if c.1 > b.1 { c } else { b });
            sel.push(cand.0);
        }
        sel
    }

    #[test]
    fn ks_one_dimensional_examples() {
        let p = array![[0.0], [1.0], [10.0]];
        assert_eq!(kennard_stone(p.view(), 2).unwrap(), vec![0, 2]);
        assert_eq!(kennard_stone(p.view(), 3).unwrap(), vec![0, 2, 1]);
        assert!(kennard_stone(p.view(), 4).is_err());
    }

    #[test]
    fn ks_matches_oracle_on_random_sets() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let p = Array2::from_shape_fn((10, 2), |_| rng.random::<f64>());
            assert_eq!(kennard_stone(p.view(), 4).unwrap(), ks_oracle(&p, 4));
        }
    }

    #[test]
    fn ks_tie_break_prefers_low_index() {
        let p = array![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]];
        assert_eq!(kennard_stone(p.view(), 4).unwrap(), vec![0, 3, 1, 2]);
    }

    proptest! {
        #[test]
        fn ks_is_permutation_equivariant(seed in 0u64..300) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let p = Array2::from_shape_fn((9, 3), |_| rng.random::<f64>());
            let mut perm: Vec<usize> = (0..9).collect();
            for i in (1..9).rev() {
                perm.swap(i, rng.random_range(0..=i));
            }
            let pp = p.select(Axis(0), &perm);
            let a = kennard_stone(p.view(), 5).unwrap();
            let b: Vec<usize> = kennard_stone(pp.view(), 5).unwrap().into_iter().map(|i| perm[i]).collect();
            // first pair is unordered; the rest must agree exactly
            let mut a2 = a[..2].to_vec();
            let mut b2 = b[..2].to_vec();
            a2.sort();
            b2.sort();
            prop_assert_eq!(a2, b2);
            prop_assert_eq!(&a[2..], &b[2..]);
        }
    }

    #[test]
    fn venetian_blinds_examples() {
        let f = venetian_blinds(6, 3).unwrap();
        assert_eq!(f.folds, vec![0, 1, 2, 0, 1, 2]);
        let f = venetian_blinds(10, 3).unwrap();
        let mut seen = [false; 10];
        for fold in 0..3 {
            let (train, test) = f.split(fold);
            assert!((test.len() as f64 - 10.0 / 3.0).abs() <= 1.0);
            assert_eq!(train.len() + test.len(), 10);
            for i in test {
                assert!(!seen[i]);
                seen[i] = true;
            }
        }
        assert!(seen.iter().all(|s| *s));
        assert!(venetian_blinds(2, 3).is_err());
    }

    fn toy_table(groups: &[u8]) -> SpectraTable<f64> {
        let n = groups.len();
        let prov = groups
            .iter()
            .enumerate()
            .map(|(i, g)| Provenance {
                image_id: format!("img{g}"),
                x: i,
                y: 0,
                background: BackgroundType::Grass,
                group: Some(BugGroup::new(*g).unwrap()),
                rank: i,
            })
            .collect();
        let classes = (0..n).map(|i| if i % 2 == 0 { SpectrumClass::Bmsb } else { SpectrumClass::Background }).collect();
        SpectraTable::new(vec![1000.0, 1005.0], Array2::from_shape_fn((n, 2), |(i, j)| (i * 2 + j) as f64 * 0.125), classes, prov)
            .unwrap()
    }

    #[test]
    fn split_examples() {
        let g = |n| BugGroup::new(n).unwrap();
        let t = toy_table(&[1, 2, 3, 4, 5, 1, 4]);
        let (train, test) = split_by_group(&t, &[g(1), g(2), g(3)], &[g(4), g(5)]).unwrap();
        assert_eq!(train.len(), 4);
        assert_eq!(test.len(), 3);
        let tr: std::collections::HashSet<_> = train.provenance().iter().map(|p| p.group).collect();
        let ts: std::collections::HashSet<_> = test.provenance().iter().map(|p| p.group).collect();
        assert!(tr.is_disjoint(&ts));
        let only_train = toy_table(&[1, 2, 3, 3]);
        let (train, test) = split_by_group(&only_train, &[g(1), g(2), g(3)], &[]).unwrap();
        assert_eq!((train.len(), test.len()), (4, 0));
        assert!(matches!("G7".parse::<BugGroup>(), Err(Error::UnknownGroup(_))));
        assert!(split_by_group(&t, &[g(1)], &[g(4)]).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let t = toy_table(&[1, 4, 2]);
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("image_id,x,y,class,group,background,1000,1005\n"));
        let back = SpectraTable::<f64>::read_csv(&buf[..]).unwrap();
        assert_eq!(back.x(), t.x());
        assert_eq!(back.classes(), t.classes());
        assert_eq!(back.provenance()[1].group, t.provenance()[1].group);
    }

    fn blob_cube(seed: u64, n_target: usize) -> (Hypercube<f64>, ClassMask) {
        let (h, w) = (40, 40);
        let wl = standard_wavelengths();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut mask = ClassMask::filled(h, w, Label::Background);
        for i in 0..n_target {
            mask.set(i / w, i % w, Label::Target);
        }
        let data = Array3::from_shape_fn((h, w, wl.len()), |(y, x, b)| {
            let base = if mask.get(y, x) == Label::Target { 0.4 } else { 0.6 };
            base + 0.05 * (b as f64 * 0.05).sin() + 0.01 * (rng.random::<f64>() - 0.5)
        });
        let meta =
            CubeMeta { image_id: format!("img{seed}"), background: BackgroundType::Bark, group: Some(BugGroup::new(2).unwrap()) };
        (Hypercube::new(data, wl, meta).unwrap(), mask)
    }

    #[test]
    fn select_takes_all_when_class_has_exactly_n_clean_pixels() {
        let (hc, mask) = blob_cube(1, 200);
        let t = select_representative(&hc, &mask, Label::Target, &SelectOptions { alpha: 0.999999999, ..Default::default() })
            .unwrap();
        assert_eq!(t.len(), 200);
        let mut coords: Vec<_> = t.provenance().iter().map(|p| (p.y, p.x)).collect();
        coords.sort();
        coords.dedup();
        assert_eq!(coords.len(), 200);
        assert!(t.classes().iter().all(|c| *c == SpectrumClass::Bmsb));
    }

    #[test]
    fn selected_rows_pass_the_first_stage_screen() {
        let (hc, mask) = blob_cube(2, 300);
        let t = select_representative(&hc, &mask, Label::Background, &SelectOptions::default()).unwrap();
        assert_eq!(t.len(), 200);
        let bg: Vec<usize> = (0..1600).filter(|i| mask.get(i / 40, i % 40) == Label::Background).collect();
        let x = hc.spectra().select(Axis(0), &bg);
        let model = pca::fit_pca(x.view(), 3, &PreprocessSpec::mean_center()).unwrap();
        let (_, t2, q) = model.diagnostics(t.x().view()).unwrap();
        for i in 0..t.len() {
            assert!(t2[i] <= model.t2_limit && q[i] <= model.q_limit);
        }
    }

    #[test]
    fn ks_selection_spreads_wider_than_random() {
        // Monte-Carlo comparison against random subsets of the same size
        let (hc, mask) = blob_cube(3, 0);
        let t = select_representative(&hc, &mask, Label::Background, &SelectOptions::default()).unwrap();
        let x = hc.spectra().to_owned();
        let model = pca::fit_pca(x.view(), 3, &PreprocessSpec::mean_center()).unwrap();
        let all = model.scores(x.view()).unwrap();
        let sel = model.scores(t.x().view()).unwrap();
        let radius = |s: &Array2<f64>| s.rows().into_iter().map(|r| r.dot(&r).sqrt()).fold(0.0, f64::max);
        let fill = |s: &Array2<f64>| {
            all.rows()
                .into_iter()
                .map(|p| s.rows().into_iter().map(|q| (&p - &q).mapv(|v| v * v).sum()).fold(f64::INFINITY, f64::min))
                .fold(0.0, f64::max)
                .sqrt()
        };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        let mut radii = Vec::new();
        let mut fills = Vec::new();
        for _ in 0..20 {
            let mut idx: Vec<usize> = (0..1600).collect();
            for i in (1..idx.len()).rev() {
                idx.swap(i, rng.random_range(0..=i));
            }
            let pick = all.select(Axis(0), &idx[..200]);
            radii.push(radius(&pick));
            fills.push(fill(&pick));
        }
        radii.sort_by(|a, b| a.partial_cmp(b).unwrap());
        fills.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!(radius(&sel) >= radii[10]);
        assert!(fill(&sel) <= fills[10]);
    }

    #[test]
    fn sorted_for_folding_orders_by_image_class_rank() {
        let t = toy_table(&[2, 1, 2, 1]);
        let s = t.sorted_for_folding();
        let keys: Vec<_> = s.provenance().iter().zip(s.classes()).map(|(p, c)| (p.image_id.clone(), *c)).collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
    }
}
