//! Minimal encoder–decoder U-Net over `C`-channel hyperspectral input.
//!
//! Each encoder level is two 3×3 convolutions with ReLU followed by 2×2 max
//! pooling. Each decoder level upsamples ×2 (nearest neighbour), applies a
//! 3×3 convolution, concatenates the encoder map of the same level and runs
//! two more 3×3 convolutions. A 1×1 head gives two class logits per pixel.

mod augment;
pub mod io;
pub mod layers;
mod loss;
mod train;

use ndarray::{Array2, Array3, ArrayView3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::detect::PredictionImage;
use crate::error::{Error, Result};
use crate::hypercube::Hypercube;
use crate::labels::{ClassMask, Label};
use crate::scalar::Real;

pub use augment::{augment, flip_horizontal, flip_vertical, AugmentConfig, Dataset, Transform};
pub use layers::Conv;
pub use loss::{class_weights_from_masks, weighted_ce_loss};
pub use train::{train, write_log_csv, EpochLog, TrainConfig};

use layers::{concat, max_pool, max_pool_backward, relu, relu_backward, split_channels, upsample, upsample_backward};

pub const KERNEL: usize = 3;
pub const N_CLASSES: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct UNetSpec {
    pub in_channels: usize,
    pub base_filters: usize,
    /// Number of pooling levels.
    pub depth: usize,
}

impl Default for UNetSpec {
    fn default() -> Self {
        Self::new(1)
    }
}

impl UNetSpec {
    /// Defaults: 64 base filters, 3 levels.
    pub fn new(in_channels: usize) -> Self {
        Self { in_channels, base_filters: 64, depth: 3 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.base_filters == 0 || self.depth == 0 {
            return Err(Error::InvalidParameter(format!("bad U-Net spec {self:?}")));
        }
        Ok(())
    }

    /// Spatial sizes must be multiples of this.
    pub fn alignment(&self) -> usize {
        1 << self.depth
    }

    fn filters(&self, level: usize) -> usize {
        self.base_filters << level
    }

    pub fn first_layer_weight_count(&self) -> usize {
        KERNEL * KERNEL * self.in_channels * self.base_filters
    }
}

/// Two 3×3 convolutions, each followed by ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct Block<T> {
    pub c1: Conv<T>,
    pub c2: Conv<T>,
}

/// Per-channel input standardisation `(x − mean) / std`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputScaling {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UNet<T> {
    pub spec: UNetSpec,
    pub encoder: Vec<Block<T>>,
    pub bottom: Block<T>,
    /// `up[i]` maps level `i + 1` to level `i`.
    pub up: Vec<Conv<T>>,
    pub decoder: Vec<Block<T>>,
    pub head: Conv<T>,
    pub scaling: Option<InputScaling>,
    pub seed: u64,
    pub epochs: usize,
}

/// Training and inference precision.
pub type UNetModel = UNet<f32>;

impl<T: Real> UNet<T> {
    /// All-zero network of the given shape.
    pub fn zeros(spec: &UNetSpec) -> Self {
        let block = |i, o| Block { c1: Conv::zeros(i, o, KERNEL), c2: Conv::zeros(o, o, KERNEL) };
        let d = spec.depth;
        let encoder =
            (0..d).map(|l| block(if l == 0 { spec.in_channels } else { spec.filters(l - 1) }, spec.filters(l))).collect();
        let bottom = block(spec.filters(d - 1), spec.filters(d));
        let up = (0..d).map(|l| Conv::zeros(spec.filters(l + 1), spec.filters(l), KERNEL)).collect();
        let decoder = (0..d).map(|l| block(2 * spec.filters(l), spec.filters(l))).collect();
        Self {
            spec: spec.clone(),
            encoder,
            bottom,
            up,
            decoder,
            head: Conv::zeros(spec.filters(0), N_CLASSES, 1),
            scaling: None,
            seed: 0,
            epochs: 0,
        }
    }

    /// Convolutions in file/update order: encoder levels, bottom, then per
    /// decoder level from deepest up its up-convolution and block, then head.
    pub fn convs(&self) -> Vec<&Conv<T>> {
        let mut v = Vec::new();
        for b in &self.encoder {
            v.extend([&b.c1, &b.c2]);
        }
        v.extend([&self.bottom.c1, &self.bottom.c2]);
        for l in (0..self.spec.depth).rev() {
            v.extend([&self.up[l], &self.decoder[l].c1, &self.decoder[l].c2]);
        }
        v.push(&self.head);
        v
    }

    pub fn convs_mut(&mut self) -> Vec<&mut Conv<T>> {
        let mut v = Vec::new();
        for b in self.encoder.iter_mut() {
            v.push(&mut b.c1);
            v.push(&mut b.c2);
        }
        v.push(&mut self.bottom.c1);
        v.push(&mut self.bottom.c2);
        let mut ups: Vec<Option<&mut Conv<T>>> = self.up.iter_mut().map(Some).collect();
        let mut decs: Vec<Option<&mut Block<T>>> = self.decoder.iter_mut().map(Some).collect();
        for l in (0..self.spec.depth).rev() {
            v.push(ups[l].take().expect("each level once"));
            let b = decs[l].take().expect("each level once");
            v.push(&mut b.c1);
            v.push(&mut b.c2);
        }
        v.push(&mut self.head);
        v
    }

    pub fn n_parameters(&self) -> usize {
        self.convs().iter().map(|c| c.weight.len() + c.bias.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.convs().iter().all(|c| c.weight.iter().chain(c.bias.iter()).all(|v| v.is_finite()))
    }

    fn check_input(&self, x: &ArrayView3<T>) -> Result<()> {
        let (c, h, w) = x.dim();
        let a = self.spec.alignment();
        if c != self.spec.in_channels {
            return Err(Error::Dimension(format!("input has {c} channels, network expects {}", self.spec.in_channels)));
        }
        if h == 0 || w == 0 || h % a != 0 || w % a != 0 {
            return Err(Error::Dimension(format!("input {h}x{w} is not a multiple of {a}")));
        }
        Ok(())
    }

    /// Value of channel `c` that scales to zero.
    fn neutral(&self, c: usize) -> T {
        self.scaling.as_ref().map_or(T::zero(), |s| T::lit(s.mean[c]))
    }

    /// Replaces the spectra of pixels where `blank(y, x)` holds by the
    /// neutral value, so the dark frame and padding carry no signal.
    pub fn blank_pixels(&self, x: &mut Array3<T>, blank: impl Fn(usize, usize) -> bool) {
        for (c, mut plane) in x.axis_iter_mut(Axis(0)).enumerate() {
            let v = self.neutral(c);
            for ((y, xx), p) in plane.indexed_iter_mut() {
                if blank(y, xx) {
                    *p = v;
                }
            }
        }
    }

    fn scale_input(&self, x: ArrayView3<T>) -> Array3<T> {
        match &self.scaling {
            None => x.to_owned(),
            Some(s) => {
                let mut out = x.to_owned();
                for (c, mut plane) in out.axis_iter_mut(Axis(0)).enumerate() {
                    let (m, sd) = (T::lit(s.mean[c]), T::lit(s.std[c]));
                    plane.mapv_inplace(|v| (v - m) / sd);
                }
                out
            }
        }
    }

    /// Logits `(2, H, W)` for a `(C, H, W)` input.
    pub fn forward(&self, x: ArrayView3<T>) -> Result<Array3<T>> {
        Ok(self.forward_trace(x)?.0)
    }

    pub(crate) fn forward_trace(&self, x: ArrayView3<T>) -> Result<(Array3<T>, Trace<T>)> {
        self.check_input(&x)?;
        let x = self.scale_input(x);
        let mut tr = Trace::default();
        let mut cur = x;
        for b in &self.encoder {
            let bt = block_forward(b, cur.view());
            let (p, arg) = max_pool(bt.out.view());
            tr.pool_args.push(arg);
            tr.enc.push(bt);
            cur = p;
        }
        let bt = block_forward(&self.bottom, cur.view());
        cur = bt.out.clone();
        tr.bottom = Some(bt);
        tr.dec = (0..self.spec.depth).map(|_| None).collect();
        tr.up = (0..self.spec.depth).map(|_| None).collect();
        for l in (0..self.spec.depth).rev() {
            let u = upsample(cur.view());
            let (mut a, col) = self.up[l].forward(u.view());
            relu(&mut a);
            let skip_c = a.dim().0;
            let cat = concat(a.view(), tr.enc[l].out.view());
            let bt = block_forward(&self.decoder[l], cat.view());
            cur = bt.out.clone();
            tr.up[l] = Some(UpTrace { col, out: a, skip_c });
            tr.dec[l] = Some(bt);
        }
        let (logits, col) = self.head.forward(cur.view());
        tr.head_col = Some(col);
        Ok((logits, tr))
    }

    /// Weighted cross-entropy of one sample with its parameter gradient.
    /// Also returns the correct and scored pixel counts.
    pub fn gradient(
        &self,
        x: ArrayView3<T>,
        labels: &Array2<Label>,
        weights: (f64, f64),
    ) -> Result<(f64, UNet<T>, usize, usize)> {
        let (logits, tr) = self.forward_trace(x)?;
        let (loss, dlogits, correct, scored) = weighted_ce_loss(&logits, labels, weights)?;
        let mut g = UNet::zeros(&self.spec);
        self.backward(&tr, &dlogits, &mut g);
        Ok((loss, g, correct, scored))
    }

    /// Backward pass from `dlogits`; parameter gradients are added into `grad`.
    pub(crate) fn backward(&self, tr: &Trace<T>, dlogits: &Array3<T>, grad: &mut UNet<T>) {
        let mut d = self.head.backward(dlogits, tr.head_col.as_ref().expect("traced"), &mut grad.head);
        let depth = self.spec.depth;
        let mut skip_grads: Vec<Option<Array3<T>>> = (0..depth).map(|_| None).collect();
        for l in 0..depth {
            let bt = tr.dec[l].as_ref().expect("traced");
            let dcat = block_backward(&self.decoder[l], bt, d, &mut grad.decoder[l]);
            let ut = tr.up[l].as_ref().expect("traced");
            let (mut da, dskip) = split_channels(&dcat, ut.skip_c);
            skip_grads[l] = Some(dskip);
            relu_backward(&mut da, &ut.out);
            let du = self.up[l].backward(&da, &ut.col, &mut grad.up[l]);
            d = upsample_backward(&du);
        }
        d = block_backward(&self.bottom, tr.bottom.as_ref().expect("traced"), d, &mut grad.bottom);
        for l in (0..depth).rev() {
            let mut dout = max_pool_backward(&d, &tr.pool_args[l]);
            dout += skip_grads[l].as_ref().expect("set above");
            d = block_backward(&self.encoder[l], &tr.enc[l], dout, &mut grad.encoder[l]);
        }
    }

    /// L2 norm over every weight and bias.
    pub fn norm(&self) -> f64 {
        let sq: f64 =
            self.convs().iter().map(|c| c.weight.iter().chain(c.bias.iter()).map(|v| v.as_f64().powi(2)).sum::<f64>()).sum();
        sq.sqrt()
    }

    /// `self += scale · other`, parameter-wise.
    pub fn add_scaled(&mut self, other: &UNet<T>, scale: T) {
        for (a, b) in self.convs_mut().into_iter().zip(other.convs()) {
            a.weight.scaled_add(scale, &b.weight);
            a.bias.scaled_add(scale, &b.bias);
        }
    }

    pub fn cast<U: Real>(&self) -> UNet<U> {
        let mut out = UNet::<U>::zeros(&self.spec);
        for (a, b) in out.convs_mut().into_iter().zip(self.convs()) {
            a.weight = b.weight.mapv(|v| U::lit(v.as_f64()));
            a.bias = b.bias.mapv(|v| U::lit(v.as_f64()));
        }
        out.scaling = self.scaling.clone();
        out.seed = self.seed;
        out.epochs = self.epochs;
        out
    }
}

#[derive(Debug, Clone, Default)]
pub(crate) struct BlockTrace<T> {
    col1: Array2<T>,
    a1: Array3<T>,
    col2: Array2<T>,
    out: Array3<T>,
}

#[derive(Debug, Clone)]
pub(crate) struct UpTrace<T> {
    col: Array2<T>,
    out: Array3<T>,
    skip_c: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct Trace<T> {
    enc: Vec<BlockTrace<T>>,
    pool_args: Vec<Array3<u8>>,
    bottom: Option<BlockTrace<T>>,
    up: Vec<Option<UpTrace<T>>>,
    dec: Vec<Option<BlockTrace<T>>>,
    head_col: Option<Array2<T>>,
}

impl<T> Default for Trace<T> {
    fn default() -> Self {
        Self { enc: vec![], pool_args: vec![], bottom: None, up: vec![], dec: vec![], head_col: None }
    }
}

fn block_forward<T: Real>(b: &Block<T>, x: ArrayView3<T>) -> BlockTrace<T> {
    let (mut a1, col1) = b.c1.forward(x);
    relu(&mut a1);
    let (mut out, col2) = b.c2.forward(a1.view());
    relu(&mut out);
    BlockTrace { col1, a1, col2, out }
}

fn block_backward<T: Real>(b: &Block<T>, t: &BlockTrace<T>, mut d: Array3<T>, g: &mut Block<T>) -> Array3<T> {
    relu_backward(&mut d, &t.out);
    let mut d1 = b.c2.backward(&d, &t.col2, &mut g.c2);
    relu_backward(&mut d1, &t.a1);
    b.c1.backward(&d1, &t.col1, &mut g.c1)
}

/// He-uniform weights (`U(±√(6/fan_in))`) and zero biases, drawn in layer
/// order from one seeded stream.
pub fn build_unet<T: Real>(spec: &UNetSpec, seed: u64) -> Result<UNet<T>> {
    spec.validate()?;
    let mut net = UNet::<T>::zeros(spec);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for conv in net.convs_mut() {
        let (_, i, k, _) = conv.weight.dim();
        let limit = (6.0 / (i * k * k) as f64).sqrt();
        for w in conv.weight.iter_mut() {
            *w = T::lit(rng.random_range(-limit..limit));
        }
    }
    net.seed = seed;
    Ok(net)
}

/// `(H, W, C)` cube data as a `(C, H, W)` tensor.
pub fn cube_tensor<T: Real>(hc: &Hypercube<T>) -> Array3<T> {
    hc.data().view().permuted_axes([2, 0, 1]).as_standard_layout().into_owned()
}

/// Pixels of each tile kept from the interior; the rest is context.
pub const TILE_MARGIN: usize = 16;
pub const TILE_SIZE: usize = 128;

/// Per-pixel argmax over the whole image. Large images are processed in
/// overlapping tiles whose borders are discarded; every window is zero-padded
/// up to the network alignment with the neutral value. Excluded pixels are
/// blanked on input and stay EXCLUDED.
pub fn predict_image<T: Real>(model: &UNet<T>, hc: &Hypercube<T>, exclusion: &ClassMask) -> Result<PredictionImage> {
    let (h, w) = (hc.height(), hc.width());
    if exclusion.dims() != (h, w) {
        return Err(Error::Dimension("exclusion mask does not match cube".into()));
    }
    let mut x = cube_tensor(hc);
    model.blank_pixels(&mut x, |y, xx| exclusion.get(y, xx) == Label::Excluded);
    let a = model.spec.alignment();
    let margin = TILE_MARGIN.div_ceil(a) * a;
    let core = TILE_SIZE.saturating_sub(2 * margin).max(a);
    let mut mask = ClassMask::filled(h, w, Label::Background);
    let mut y0 = 0;
    while y0 < h {
        let y1 = (y0 + core).min(h);
        let mut x0 = 0;
        while x0 < w {
            let x1 = (x0 + core).min(w);
            let (wy0, wx0) = (y0.saturating_sub(margin), x0.saturating_sub(margin));
            let (wy1, wx1) = ((y1 + margin).min(h), (x1 + margin).min(w));
            let (ph, pw) = ((wy1 - wy0).div_ceil(a) * a, (wx1 - wx0).div_ceil(a) * a);
            let mut win = Array3::from_shape_fn((x.dim().0, ph, pw), |(c, _, _)| model.neutral(c));
            win.slice_mut(ndarray::s![.., ..wy1 - wy0, ..wx1 - wx0]).assign(&x.slice(ndarray::s![.., wy0..wy1, wx0..wx1]));
            let logits = model.forward(win.view())?;
            for yy in y0..y1 {
                for xx in x0..x1 {
                    let (ly, lx) = (yy - wy0, xx - wx0);
                    if logits[[1, ly, lx]] > logits[[0, ly, lx]] {
                        mask.set(yy, xx, Label::Target);
                    }
                }
            }
            x0 = x1;
        }
        y0 = y1;
    }
    for (m, e) in mask.labels_mut().iter_mut().zip(exclusion.labels()) {
        if *e == Label::Excluded {
            *m = Label::Excluded;
        }
    }
    Ok(PredictionImage::new(mask, hc.meta().image_id.clone(), "unet"))
}
