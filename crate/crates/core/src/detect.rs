//! Object-level post-processing: connected components of predicted target
//! pixels, size filtering, and IoU matching against ground-truth objects.

use std::io::Write;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{ClassMask, Label};

/// Per-pixel prediction for one image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredictionImage {
    pub mask: ClassMask,
    pub image_id: String,
    pub model_id: String,
}

impl PredictionImage {
    pub fn new(mask: ClassMask, image_id: impl Into<String>, model_id: impl Into<String>) -> Self {
        Self { mask, image_id: image_id.into(), model_id: model_id.into() }
    }

    pub fn labels(&self) -> &Array2<Label> {
        self.mask.labels()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.mask.dims()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Connectivity {
    Four,
    #[default]
    Eight,
}

/// A connected set of pixels, stored as sorted row-major flat indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Component {
    pixels: Vec<usize>,
}

impl Component {
    /// Builds a component from flat indices (sorted and deduplicated here).
    pub fn from_indices(mut pixels: Vec<usize>) -> Self {
        pixels.sort_unstable();
        pixels.dedup();
        Self { pixels }
    }

    pub fn pixels(&self) -> &[usize] {
        &self.pixels
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }
}

/// Maximal connected sets of `label` pixels, ordered by their first pixel in
/// raster order.
pub fn label_components(labels: &Array2<Label>, label: Label, connectivity: Connectivity) -> Vec<Component> {
    let (h, w) = labels.dim();
    let mut seen = vec![false; h * w];
    let mut out = Vec::new();
    let offsets: &[(isize, isize)] = match connectivity {
        Connectivity::Four => &[(-1, 0), (1, 0), (0, -1), (0, 1)],
        Connectivity::Eight => &[(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)],
    };
    let mut stack = Vec::new();
    for start in 0..h * w {
        if seen[start] || labels[[start / w, start % w]] != label {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let mut pixels = Vec::new();
        while let Some(p) = stack.pop() {
            pixels.push(p);
            let (y, x) = ((p / w) as isize, (p % w) as isize);
            for (dy, dx) in offsets {
                let (ny, nx) = (y + dy, x + dx);
                if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                    continue;
                }
                let q = ny as usize * w + nx as usize;
                if !seen[q] && labels[[ny as usize, nx as usize]] == label {
                    seen[q] = true;
                    stack.push(q);
                }
            }
        }
        out.push(Component::from_indices(pixels));
    }
    out
}

pub fn connected_components(img: &PredictionImage, label: Label, connectivity: Connectivity) -> Vec<Component> {
    label_components(img.labels(), label, connectivity)
}

pub const MIN_OBJECT_PIXELS: usize = 50;
pub const IOU_THRESHOLD: f64 = 0.25;

/// Drops components smaller than `min_pixels`.
pub fn size_filter(components: Vec<Component>, min_pixels: usize) -> Vec<Component> {
    components.into_iter().filter(|c| c.len() >= min_pixels).collect()
}

/// Jaccard index of two pixel sets.
pub fn iou(a: &Component, b: &Component) -> Result<f64> {
    if a.is_empty() && b.is_empty() {
        return Err(Error::InvalidParameter("IoU of two empty sets".into()));
    }
    let (mut i, mut j, mut inter) = (0, 0, 0usize);
    let (pa, pb) = (a.pixels(), b.pixels());
    while i < pa.len() && j < pb.len() {
        match pa[i].cmp(&pb[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    Ok(inter as f64 / (pa.len() + pb.len() - inter) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub pred: usize,
    pub truth: usize,
    pub iou: f64,
}

/// Matching outcome for one image; indices refer to the component lists
/// passed to [`match_objects`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectMatchResult {
    pub image_id: String,
    pub matches: Vec<MatchedPair>,
    /// Unmatched truths.
    pub false_negatives: Vec<usize>,
    /// Unmatched predictions.
    pub false_positives: Vec<usize>,
    pub pred_sizes: Vec<usize>,
    pub truth_sizes: Vec<usize>,
}

impl ObjectMatchResult {
    pub fn tp(&self) -> usize {
        self.matches.len()
    }
    pub fn fp(&self) -> usize {
        self.false_positives.len()
    }
    pub fn fn_count(&self) -> usize {
        self.false_negatives.len()
    }
}

/// Greedy one-to-one matching in descending IoU over pairs with
/// IoU strictly above `threshold`. Equal IoUs resolve by (pred, truth) index.
pub fn match_objects(image_id: &str, pred: &[Component], truth: &[Component], threshold: f64) -> ObjectMatchResult {
    let mut candidates = Vec::new();
    for (p, pc) in pred.iter().enumerate() {
        for (t, tc) in truth.iter().enumerate() {
            if let Ok(v) = iou(pc, tc) {
                if v > threshold {
                    candidates.push(MatchedPair { pred: p, truth: t, iou: v });
                }
            }
        }
    }
    candidates.sort_by(|a, b| b.iou.total_cmp(&a.iou).then(a.pred.cmp(&b.pred)).then(a.truth.cmp(&b.truth)));
    let mut pred_used = vec![false; pred.len()];
    let mut truth_used = vec![false; truth.len()];
    let mut matches = Vec::new();
    for c in candidates {
        if !pred_used[c.pred] && !truth_used[c.truth] {
            pred_used[c.pred] = true;
            truth_used[c.truth] = true;
            matches.push(c);
        }
    }
    ObjectMatchResult {
        image_id: image_id.to_owned(),
        matches,
        false_negatives: (0..truth.len()).filter(|t| !truth_used[*t]).collect(),
        false_positives: (0..pred.len()).filter(|p| !pred_used[*p]).collect(),
        pred_sizes: pred.iter().map(Component::len).collect(),
        truth_sizes: truth.iter().map(Component::len).collect(),
    }
}

/// Full object-level evaluation of one prediction: 8-connected predicted
/// targets filtered at `min_pixels`, matched against unfiltered truth objects.
pub fn evaluate_objects(
    pred: &PredictionImage,
    truth: &ClassMask,
    min_pixels: usize,
    threshold: f64,
) -> Result<ObjectMatchResult> {
    if pred.dims() != truth.dims() {
        return Err(Error::Dimension(format!("prediction {:?} vs truth {:?}", pred.dims(), truth.dims())));
    }
    let p = size_filter(connected_components(pred, Label::Target, Connectivity::Eight), min_pixels);
    let t = label_components(truth.labels(), Label::Target, Connectivity::Eight);
    Ok(match_objects(&pred.image_id, &p, &t, threshold))
}

/// Writes `image_id,kind,pred_size,truth_size,iou` rows.
pub fn write_matches_csv<W: Write>(results: &[ObjectMatchResult], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let err = |e: csv::Error| Error::Format(e.to_string());
    wr.write_record(["image_id", "kind", "pred_size", "truth_size", "iou"]).map_err(err)?;
    for r in results {
        for m in &r.matches {
            wr.write_record([
                r.image_id.clone(),
                "TP".into(),
                r.pred_sizes[m.pred].to_string(),
                r.truth_sizes[m.truth].to_string(),
                format!("{:.6}", m.iou),
            ])
            .map_err(err)?;
        }
        for p in &r.false_positives {
            wr.write_record([r.image_id.clone(), "FP".into(), r.pred_sizes[*p].to_string(), String::new(), String::new()])
                .map_err(err)?;
        }
        for t in &r.false_negatives {
            wr.write_record([r.image_id.clone(), "FN".into(), String::new(), r.truth_sizes[*t].to_string(), String::new()])
                .map_err(err)?;
        }
    }
    wr.flush()?;
    Ok(())
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use std::collections::BTreeSet;

    fn mask_from(rows: &[&str]) -> Array2<Label> {
        let h = rows.len();
        let w = rows[0].len();
        Array2::from_shape_fn((h, w), |(y, x)| if rows[y].as_bytes()[x] == b'#' { Label::Target } else { Label::Background })
    }

    /// Recursive flood fill.
    pub(crate) fn flood_fill_oracle(labels: &Array2<Label>, eight: bool) -> BTreeSet<Vec<usize>> {
        fn fill(l: &Array2<Label>, seen: &mut Array2<bool>, y: isize, x: isize, eight: bool, acc: &mut Vec<usize>) {
            let (h, w) = l.dim();
            if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
                return;
            }
            let (yu, xu) = (y as usize, x as usize);
            if seen[[yu, xu]] || l[[yu, xu]] != Label::Target {
                return;
            }
            seen[[yu, xu]] = true;
            acc.push(yu * w + xu);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    if (dy, dx) != (0, 0) && (eight || dy == 0 || dx == 0) {
                        fill(l, seen, y + dy, x + dx, eight, acc);
                    }
                }
            }
        }
        let mut seen = Array2::from_elem(labels.dim(), false);
        let mut out = BTreeSet::new();
        for ((y, x), _) in labels.indexed_iter() {
            let mut acc = Vec::new();
            fill(labels, &mut seen, y as isize, x as isize, eight, &mut acc);
            if !acc.is_empty() {
                acc.sort();
                out.insert(acc);
            }
        }
        out
    }

    #[test]
    fn diagonal_pixels_join_under_eight() {
        let m = mask_from(&["#.", ".#"]);
        assert_eq!(label_components(&m, Label::Target, Connectivity::Eight).len(), 1);
        assert_eq!(label_components(&m, Label::Target, Connectivity::Four).len(), 2);
        let checker = Array2::from_shape_fn((6, 6), |(y, x)| if (y + x) % 2 == 0 { Label::Target } else { Label::Background });
        assert_eq!(label_components(&checker, Label::Target, Connectivity::Eight).len(), 1);
        assert_eq!(label_components(&checker, Label::Target, Connectivity::Four).len(), 18);
    }

    #[test]
    fn components_match_flood_fill() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        for _ in 0..30 {
            let m =
                Array2::from_shape_fn((32, 32), |_| if rng.random::<f64>() < 0.45 { Label::Target } else { Label::Background });
            for (conn, eight) in [(Connectivity::Eight, true), (Connectivity::Four, false)] {
                let got: BTreeSet<Vec<usize>> = label_components(&m, Label::Target, conn).into_iter().map(|c| c.pixels).collect();
                assert_eq!(got, flood_fill_oracle(&m, eight));
            }
        }
    }

    #[test]
    fn not_assigned_is_not_target() {
        let mut m = mask_from(&["###"]);
        m[[0, 1]] = Label::NotAssigned;
        assert_eq!(label_components(&m, Label::Target, Connectivity::Eight).len(), 2);
    }

    fn comp(range: std::ops::Range<usize>) -> Component {
        Component::from_indices(range.collect())
    }

    #[test]
    fn size_filter_boundary() {
        let kept = size_filter(vec![comp(0..49), comp(100..150), comp(200..260)], 50);
        assert_eq!(kept.iter().map(Component::len).collect::<Vec<_>>(), vec![50, 60]);
        assert!(size_filter(vec![], 50).is_empty());
        assert!(size_filter(vec![comp(0..3)], 50).is_empty());
    }

    #[test]
    fn iou_examples() {
        assert_eq!(iou(&comp(0..10), &comp(0..10)).unwrap(), 1.0);
        assert_eq!(iou(&comp(0..10), &comp(10..20)).unwrap(), 0.0);
        assert!((iou(&comp(0..100), &comp(50..150)).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!(iou(&comp(0..0), &comp(0..0)).is_err());
    }

    #[test]
    fn matching_examples() {
        let truth = vec![comp(0..100), comp(200..300)];
        let r = match_objects("a", &truth, &truth, 0.25);
        assert_eq!((r.tp(), r.fp(), r.fn_count()), (2, 0, 0));
        // one prediction over two truths: 0..60 ∪ 100..160 against truths 0..100 / 100..200
        let pred = vec![Component::from_indices((0..70).chain(100..150).collect())];
        let truth = vec![comp(0..100), comp(100..200)];
        let r = match_objects("b", &pred, &truth, 0.25);
        assert_eq!((r.tp(), r.fp(), r.fn_count()), (1, 0, 1));
        assert_eq!(r.matches[0].truth, 0);
        // IoU exactly 0.25: 40 shared, union 160
        let r = match_objects("c", &[comp(0..100)], &[comp(60..160)], 0.25);
        assert!((iou(&comp(0..100), &comp(60..160)).unwrap() - 0.25).abs() < 1e-15);
        assert_eq!(r.tp(), 0);
    }

    /// Every one-to-one matching over pairs above threshold; returns the
    /// lexicographically largest descending IoU vector.
    pub(crate) fn best_matching_oracle(pred: &[Component], truth: &[Component], thr: f64) -> Vec<f64> {
        fn rec(
            p: usize,
            pred: &[Component],
            truth: &[Component],
            used: &mut Vec<bool>,
            cur: &mut Vec<f64>,
            best: &mut Vec<f64>,
            thr: f64,
        ) {
            if p == pred.len() {
                let mut s = cur.clone();
                s.sort_by(|a, b| b.total_cmp(a));
                let better = {
                    let mut ord = std::cmp::Ordering::Equal;
                    for i in 0..s.len().max(best.len()) {
                        let a = s.get(i).copied().unwrap_or(-1.0);
                        let b = best.get(i).copied().unwrap_or(-1.0);
                        ord = a.total_cmp(&b);
                        if ord != std::cmp::Ordering::Equal {
                            break;
                        }
                    }
                    ord == std::cmp::Ordering::Greater
                };
                if better {
                    *best = s;
                }
                return;
            }
            rec(p + 1, pred, truth, used, cur, best, thr);
            for t in 0..truth.len() {
                if used[t] {
                    continue;
                }
                let v = iou(&pred[p], &truth[t]).unwrap();
                if v > thr {
                    used[t] = true;
                    cur.push(v);
                    rec(p + 1, pred, truth, used, cur, best, thr);
                    cur.pop();
                    used[t] = false;
                }
            }
        }
        let mut best = Vec::new();
        rec(0, pred, truth, &mut vec![false; truth.len()], &mut Vec::new(), &mut best, thr);
        best
    }

    pub(crate) fn random_boxes(rng: &mut impl Rng, n: usize) -> Vec<Component> {
        (0..n)
            .map(|_| {
                let (y0, x0) = (rng.random_range(0..8), rng.random_range(0..8));
                let (hh, ww) = (rng.random_range(2..7), rng.random_range(2..7));
                Component::from_indices((y0..y0 + hh).flat_map(|y| (x0..x0 + ww).map(move |x| y * 16 + x)).collect())
            })
            .collect()
    }

    #[test]
    fn greedy_equals_exhaustive() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(12);
        for _ in 0..400 {
            let np = rng.random_range(0..=4);
            let nt = rng.random_range(0..=4);
            let pred = random_boxes(&mut rng, np);
            let truth = random_boxes(&mut rng, nt);
            let r = match_objects("x", &pred, &truth, 0.25);
            let mut got: Vec<f64> = r.matches.iter().map(|m| m.iou).collect();
            got.sort_by(|a, b| b.total_cmp(a));
            assert_eq!(got, best_matching_oracle(&pred, &truth, 0.25));
        }
    }

    proptest! {
        #[test]
        fn matching_accounting(seed in 0u64..500) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let np = rng.random_range(0..=6);
            let nt = rng.random_range(0..=6);
            let pred = random_boxes(&mut rng, np);
            let truth = random_boxes(&mut rng, nt);
            let r = match_objects("x", &pred, &truth, 0.25);
            prop_assert_eq!(r.tp() + r.fn_count(), nt);
            prop_assert_eq!(r.tp() + r.fp(), np);
            let ps: BTreeSet<_> = r.matches.iter().map(|m| m.pred).collect();
            let ts: BTreeSet<_> = r.matches.iter().map(|m| m.truth).collect();
            prop_assert_eq!(ps.len(), r.tp());
            prop_assert_eq!(ts.len(), r.tp());
            prop_assert!(r.matches.iter().all(|m| m.iou > 0.25));
        }

        #[test]
        fn size_filter_idempotent(sizes in proptest::collection::vec(0usize..120, 0..10)) {
            let comps: Vec<Component> = sizes.iter().enumerate().map(|(i, s)| comp(i * 1000..i * 1000 + s)).collect();
            let once = size_filter(comps, 50);
            prop_assert_eq!(size_filter(once.clone(), 50), once);
        }
    }

    #[test]
    fn csv_rows() {
        let r = match_objects("img", &[comp(0..100), comp(500..520)], &[comp(0..100), comp(300..360)], 0.25);
        let mut buf = Vec::new();
        write_matches_csv(&[r], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "image_id,kind,pred_size,truth_size,iou\nimg,TP,100,100,1.000000\nimg,FP,20,,\nimg,FN,,60,\n");
    }
}
