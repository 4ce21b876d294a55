//! Geometric augmentation applied identically to image and mask, generated
//! lazily so the (n + 1)-fold dataset never sits in memory at once.

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hypercube::Hypercube;
use crate::labels::{ClassMask, Label};
use crate::scalar::Real;
use crate::seeds::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    /// Augmented variants per input; the original is always kept too.
    pub n_variants: usize,
    pub max_angle_deg: f64,
    pub scale: (f64, f64),
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self { n_variants: 10, max_angle_deg: 15.0, scale: (0.8, 1.2), seed: 0 }
    }
}

/// Quarter turns, then flips, then a small rotation and a scaling about the
/// image centre. Resampling is nearest neighbour; pixels mapped from outside
/// the image take the nearest edge pixel, so no new labels appear.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transform {
    pub quarter_turns: u8,
    pub flip_h: bool,
    pub flip_v: bool,
    pub angle_deg: f64,
    pub scale: f64,
}

impl Transform {
    pub const IDENTITY: Transform = Transform { quarter_turns: 0, flip_h: false, flip_v: false, angle_deg: 0.0, scale: 1.0 };

    /// Odd quarter turns only for square images, which keep their shape.
    pub fn random(rng: &mut ChaCha8Rng, cfg: &AugmentConfig, square: bool) -> Self {
        let q = rng.random_range(0..4u8);
        Self {
            quarter_turns: if square { q } else { q & 2 },
            flip_h: rng.random_bool(0.5),
            flip_v: rng.random_bool(0.5),
            angle_deg: if cfg.max_angle_deg > 0.0 { rng.random_range(-cfg.max_angle_deg..=cfg.max_angle_deg) } else { 0.0 },
            scale: if cfg.scale.1 > cfg.scale.0 { rng.random_range(cfg.scale.0..=cfg.scale.1) } else { cfg.scale.0 },
        }
    }

    /// Source pixel (flat `y·w + x`) for every output pixel.
    pub fn source_map(&self, h: usize, w: usize) -> Vec<usize> {
        let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
        let (s, c) = (-self.angle_deg.to_radians()).sin_cos();
        let mut out = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                let (mut dy, mut dx) = ((y as f64 - cy) / self.scale, (x as f64 - cx) / self.scale);
                if self.angle_deg != 0.0 {
                    (dy, dx) = (c * dy + s * dx, -s * dy + c * dx);
                }
                if self.flip_v {
                    dy = -dy;
                }
                if self.flip_h {
                    dx = -dx;
                }
                for _ in 0..self.quarter_turns % 4 {
                    (dy, dx) = (-dx, dy);
                }
                let sy = (cy + dy).round().clamp(0.0, h as f64 - 1.0) as usize;
                let sx = (cx + dx).round().clamp(0.0, w as f64 - 1.0) as usize;
                out.push(sy * w + sx);
            }
        }
        out
    }

    pub fn apply_tensor<T: Clone>(&self, x: &Array3<T>) -> Array3<T> {
        let (c, h, w) = x.dim();
        let map = self.source_map(h, w);
        Array3::from_shape_fn((c, h, w), |(ci, y, xx)| {
            let s = map[y * w + xx];
            x[[ci, s / w, s % w]].clone()
        })
    }

    pub fn apply_labels(&self, m: &Array2<Label>) -> Array2<Label> {
        let (h, w) = m.dim();
        let map = self.source_map(h, w);
        Array2::from_shape_fn((h, w), |(y, x)| {
            let s = map[y * w + x];
            m[[s / w, s % w]]
        })
    }

    pub fn apply_cube<T: Real>(&self, hc: &Hypercube<T>) -> Result<Hypercube<T>> {
        let (h, w, b) = hc.data().dim();
        let map = self.source_map(h, w);
        let d = hc.data();
        let data = ndarray::Array3::from_shape_fn((h, w, b), |(y, x, k)| {
            let s = map[y * w + x];
            d[[s / w, s % w, k]]
        });
        Hypercube::new(data, hc.wavelengths().to_vec(), hc.meta().clone())
    }
}

pub fn flip_horizontal<T: Real>(hc: &Hypercube<T>, mask: &ClassMask) -> Result<(Hypercube<T>, ClassMask)> {
    let t = Transform { flip_h: true, ..Transform::IDENTITY };
    Ok((t.apply_cube(hc)?, ClassMask::new(t.apply_labels(mask.labels()))))
}

pub fn flip_vertical<T: Real>(hc: &Hypercube<T>, mask: &ClassMask) -> Result<(Hypercube<T>, ClassMask)> {
    let t = Transform { flip_v: true, ..Transform::IDENTITY };
    Ok((t.apply_cube(hc)?, ClassMask::new(t.apply_labels(mask.labels()))))
}

fn variant_transform(cfg: &AugmentConfig, item: usize, variant: usize, square: bool) -> Transform {
    if variant == 0 {
        return Transform::IDENTITY;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &format!("{item}/{variant}")));
    Transform::random(&mut rng, cfg, square)
}

/// Eager form: the original followed by `n` variants.
pub fn augment<T: Real>(hc: &Hypercube<T>, mask: &ClassMask, n: usize, seed: u64) -> Result<Vec<(Hypercube<T>, ClassMask)>> {
    if mask.dims() != (hc.height(), hc.width()) {
        return Err(Error::Dimension("mask does not match cube".into()));
    }
    let cfg = AugmentConfig { n_variants: n, seed, ..AugmentConfig::default() };
    let square = hc.height() == hc.width();
    (0..=n)
        .map(|v| {
            let t = variant_transform(&cfg, 0, v, square);
            Ok((t.apply_cube(hc)?, ClassMask::new(t.apply_labels(mask.labels()))))
        })
        .collect()
}

/// Training set of `(C, H, W)` tensors and label grids with lazy variants.
#[derive(Debug, Clone)]
pub struct Dataset {
    items: Vec<(Array3<f32>, Array2<Label>)>,
    cfg: AugmentConfig,
}

impl Dataset {
    pub fn new(inputs: Vec<(Hypercube<f32>, ClassMask)>, cfg: AugmentConfig) -> Result<Self> {
        if inputs.is_empty() {
            return Err(Error::InvalidParameter("empty training set".into()));
        }
        let bands = inputs[0].0.bands();
        let mut items = Vec::with_capacity(inputs.len());
        for (hc, m) in inputs {
            if m.dims() != (hc.height(), hc.width()) || hc.bands() != bands {
                return Err(Error::Dimension(format!("training image {} does not match", hc.meta().image_id)));
            }
            items.push((super::cube_tensor(&hc), m.labels().clone()));
        }
        Ok(Self { items, cfg })
    }

    pub fn len(&self) -> usize {
        self.items.len() * (self.cfg.n_variants + 1)
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn originals(&self) -> &[(Array3<f32>, Array2<Label>)] {
        &self.items
    }

    pub fn channels(&self) -> usize {
        self.items[0].0.dim().0
    }

    /// Sample `i`: input `i / (n + 1)`, variant `i % (n + 1)` (0 = original).
    pub fn get(&self, i: usize) -> (Array3<f32>, Array2<Label>) {
        let per = self.cfg.n_variants + 1;
        let (item, variant) = (i / per, i % per);
        let (x, m) = &self.items[item];
        if variant == 0 {
            return (x.clone(), m.clone());
        }
        let t = variant_transform(&self.cfg, item, variant, m.nrows() == m.ncols());
        (t.apply_tensor(x), t.apply_labels(m))
    }
}
