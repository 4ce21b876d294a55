//! Class-weighted softmax cross-entropy.

use ndarray::{Array2, Array3};

use crate::error::{Error, Result};
use crate::labels::{ClassMask, Label};
use crate::scalar::Real;

/// `(w_bg, w_fg)` with `w_bg = 1` and `w_fg = (N_bg / N_fg) / 4`.
pub fn class_weights_from_masks(masks: &[&ClassMask]) -> Result<(f64, f64)> {
    let n_bg: usize = masks.iter().map(|m| m.count(Label::Background)).sum();
    let n_fg: usize = masks.iter().map(|m| m.count(Label::Target)).sum();
    if n_fg == 0 {
        return Err(Error::InvalidParameter("no target pixels; class weights undefined".into()));
    }
    Ok((1.0, n_bg as f64 / n_fg as f64 / 4.0))
}

/// Mean over scored pixels of `w_true · −log softmax_true`. Only BACKGROUND
/// and TARGET pixels are scored. Returns the loss, its gradient with respect
/// to the logits, and the number of correctly classified scored pixels and
/// the number scored.
pub fn weighted_ce_loss<T: Real>(
    logits: &Array3<T>,
    labels: &Array2<Label>,
    weights: (f64, f64),
) -> Result<(f64, Array3<T>, usize, usize)> {
    let (c, h, w) = logits.dim();
    if c != 2 || labels.dim() != (h, w) {
        return Err(Error::Dimension(format!("logits {c}x{h}x{w} vs labels {:?}", labels.dim())));
    }
    let scored = labels.iter().filter(|l| matches!(l, Label::Background | Label::Target)).count();
    let mut grad = Array3::zeros((2, h, w));
    if scored == 0 {
        return Ok((0.0, grad, 0, 0));
    }
    let n = scored as f64;
    let mut loss = 0.0;
    let mut correct = 0;
    for ((y, x), l) in labels.indexed_iter() {
        let t = match l {
            Label::Background => 0,
            Label::Target => 1,
            _ => continue,
        };
        let wt = if t == 0 { weights.0 } else { weights.1 };
        let z0 = logits[[0, y, x]].as_f64();
        let z1 = logits[[1, y, x]].as_f64();
        let m = z0.max(z1);
        let lse = m + ((z0 - m).exp() + (z1 - m).exp()).ln();
        let p = [(z0 - lse).exp(), (z1 - lse).exp()];
        loss += wt * (lse - if t == 0 { z0 } else { z1 });
        for k in 0..2 {
            let ind = if k == t { 1.0 } else { 0.0 };
            grad[[k, y, x]] = T::lit(wt * (p[k] - ind) / n);
        }
        if (z1 > z0) as usize == t {
            correct += 1;
        }
    }
    Ok((loss / n, grad, correct, scored))
}
