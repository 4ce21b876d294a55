//! Deterministic synthetic scenes: elliptical targets with planted
//! absorption features on textured vegetal backgrounds, with exact
//! ground-truth masks.

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hypercube::{standard_wavelengths, BackgroundType, BugGroup, CubeMeta, Hypercube};
use crate::labels::{ClassMask, Label};
use crate::seeds::derive_seed;

/// Gaussian absorption band.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Feature {
    pub center_nm: f64,
    /// Gaussian standard deviation.
    pub width_nm: f64,
    pub depth: f64,
}

/// Reflectance `level + slope·x + curvature·x² − Σ features`, with `x`
/// running from −1 at 980 nm to 1 at 1660 nm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Endmember {
    pub level: f64,
    pub slope: f64,
    pub curvature: f64,
    pub features: Vec<Feature>,
}

const AXIS_MID_NM: f64 = 1320.0;
const AXIS_HALF_NM: f64 = 340.0;

/// Centres of the target's absorption features.
pub const TARGET_FEATURE_NM: [f64; 4] = [1000.0, 1340.0, 1390.0, 1450.0];
pub const TARGET_FEATURE_WIDTH_NM: f64 = 10.0;
pub const TARGET_FEATURE_DEPTH: f64 = 0.04;

impl Endmember {
    pub fn evaluate(&self, wavelengths: &[f64]) -> Vec<f64> {
        wavelengths
            .iter()
            .map(|&l| {
                let x = (l - AXIS_MID_NM) / AXIS_HALF_NM;
                let absorb: f64 =
                    self.features.iter().map(|f| f.depth * (-0.5 * ((l - f.center_nm) / f.width_nm).powi(2)).exp()).sum();
                self.level + self.slope * x + self.curvature * x * x - absorb
            })
            .collect()
    }

    /// Built-in endmember for a background type.
    pub fn background(kind: BackgroundType) -> Self {
        let f = |c, w, d| Feature { center_nm: c, width_nm: w, depth: d };
        let (level, slope, curvature, features) = match kind {
            BackgroundType::Bark => (0.50, 0.06, -0.03, vec![f(1200.0, 25.0, 0.02), f(1580.0, 40.0, 0.03)]),
            BackgroundType::Grass => (0.60, 0.02, -0.08, vec![f(1190.0, 30.0, 0.03), f(1540.0, 45.0, 0.05)]),
            BackgroundType::DryLeaves => (0.55, 0.08, -0.02, vec![f(1210.0, 25.0, 0.02), f(1600.0, 40.0, 0.03)]),
            BackgroundType::GreenLeaves => (0.65, -0.02, -0.10, vec![f(1180.0, 30.0, 0.035), f(1530.0, 45.0, 0.06)]),
            BackgroundType::YellowLeaves => (0.62, 0.04, -0.06, vec![f(1200.0, 30.0, 0.025), f(1560.0, 40.0, 0.04)]),
            BackgroundType::Soil => (0.45, 0.10, 0.0, vec![f(1620.0, 30.0, 0.015)]),
            BackgroundType::TreeBranches => (0.52, 0.05, -0.04, vec![f(1195.0, 25.0, 0.02), f(1590.0, 40.0, 0.03)]),
            BackgroundType::Synthetic => (0.55, 0.0, 0.0, vec![]),
        };
        Self { level, slope, curvature, features }
    }

    /// Average of the seven vegetal backgrounds with the target features
    /// removed, so the only class difference pooled over backgrounds sits in
    /// the planted bands.
    pub fn target(depth: f64) -> Self {
        let bgs: Vec<Endmember> = BackgroundType::VEGETAL.iter().map(|b| Self::background(*b)).collect();
        let n = bgs.len() as f64;
        let mut features: Vec<Feature> =
            bgs.iter().flat_map(|b| b.features.iter().map(|f| Feature { depth: f.depth / n, ..*f })).collect();
        features.extend(TARGET_FEATURE_NM.iter().map(|&c| Feature { center_nm: c, width_nm: TARGET_FEATURE_WIDTH_NM, depth }));
        Self {
            level: bgs.iter().map(|b| b.level).sum::<f64>() / n,
            slope: bgs.iter().map(|b| b.slope).sum::<f64>() / n,
            curvature: bgs.iter().map(|b| b.curvature).sum::<f64>() / n,
            features,
        }
    }
}

/// Indices of bands within one feature width of a target feature centre.
pub fn planted_bands(wavelengths: &[f64], target: &Endmember) -> Vec<usize> {
    let planted: Vec<&Feature> = target.features.iter().filter(|f| TARGET_FEATURE_NM.contains(&f.center_nm)).collect();
    (0..wavelengths.len())
        .filter(|&i| planted.iter().any(|f| (wavelengths[i] - f.center_nm).abs() <= f.width_nm + 1e-9))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BlobLayout {
    pub count: usize,
    /// Range of the semi-major axis in pixels.
    pub semi_major: (f64, f64),
    /// Range of the semi-minor axis in pixels.
    pub semi_minor: (f64, f64),
    /// Minimum free pixels between blobs.
    pub gap: usize,
}

impl Default for BlobLayout {
    fn default() -> Self {
        Self { count: 4, semi_major: (7.0, 8.0), semi_minor: (4.5, 5.5), gap: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub image_id: String,
    pub background: BackgroundType,
    pub group: Option<BugGroup>,
    pub height: usize,
    pub width: usize,
    pub wavelengths: Vec<f64>,
    pub background_em: Endmember,
    pub target_em: Endmember,
    /// Width of the dark frame around the scene, in pixels.
    pub border: usize,
    /// Reflectance scale of the dark frame.
    pub border_level: f64,
    pub blobs: BlobLayout,
    pub noise_sigma: f64,
    pub gain: (f64, f64),
    pub offset: (f64, f64),
    pub seed: u64,
}

impl SceneSpec {
    pub fn new(image_id: impl Into<String>, background: BackgroundType, group: Option<BugGroup>, seed: u64) -> Self {
        Self {
            image_id: image_id.into(),
            background,
            group,
            height: 64,
            width: 64,
            wavelengths: standard_wavelengths(),
            background_em: Endmember::background(background),
            target_em: Endmember::target(TARGET_FEATURE_DEPTH),
            border: 4,
            border_level: 0.1,
            blobs: BlobLayout::default(),
            noise_sigma: 0.01,
            gain: (0.9, 1.1),
            offset: (-0.02, 0.02),
            seed,
        }
    }
}

/// Rasterised ellipse: pixel centres inside `(u/a)² + (v/b)² ≤ 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipse {
    pub cy: f64,
    pub cx: f64,
    pub a: f64,
    pub b: f64,
    pub angle: f64,
}

impl Ellipse {
    pub fn contains(&self, y: f64, x: f64) -> bool {
        let (dy, dx) = (y - self.cy, x - self.cx);
        let (s, c) = self.angle.sin_cos();
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        (u / self.a).powi(2) + (v / self.b).powi(2) <= 1.0
    }

    pub fn area(&self) -> f64 {
        std::f64::consts::PI * self.a * self.b
    }
}

fn place_blobs(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> Result<Vec<Ellipse>> {
    let mut out: Vec<Ellipse> = Vec::new();
    let l = &spec.blobs;
    let margin = spec.border as f64 + 1.0;
    for _ in 0..l.count {
        let mut placed = false;
        for _ in 0..1000 {
            let a = rng.random_range(l.semi_major.0..=l.semi_major.1);
            let b = rng.random_range(l.semi_minor.0..=l.semi_minor.1).min(a);
            let lo = margin + a;
            let (hy, hx) = (spec.height as f64 - 1.0 - margin - a, spec.width as f64 - 1.0 - margin - a);
            if hy <= lo || hx <= lo {
                return Err(Error::InvalidParameter("blobs do not fit inside the scene".into()));
            }
            let e = Ellipse {
                cy: rng.random_range(lo..hy),
                cx: rng.random_range(lo..hx),
                a,
                b,
                angle: rng.random_range(0.0..std::f64::consts::PI),
            };
            let clear = out.iter().all(|o| {
                let d = ((o.cy - e.cy).powi(2) + (o.cx - e.cx).powi(2)).sqrt();
                d > o.a + e.a + l.gap as f64 + 1.5
            });
            if clear {
                out.push(e);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::InvalidParameter(format!("could not place {} separate blobs", l.count)));
        }
    }
    Ok(out)
}

/// Renders one scene. Pixels are `endmember × gain + offset + noise`, clamped
/// to [0, 1.2]; the dark frame is `border_level × background`.
pub fn generate_scene(spec: &SceneSpec) -> Result<(Hypercube<f64>, ClassMask)> {
    let (h, w) = (spec.height, spec.width);
    if h <= 2 * spec.border || w <= 2 * spec.border {
        return Err(Error::InvalidParameter("scene smaller than its border".into()));
    }
    if spec.gain.0 > spec.gain.1 || spec.offset.0 > spec.offset.1 || spec.noise_sigma < 0.0 {
        return Err(Error::InvalidParameter("bad gain, offset or noise range".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let blobs = place_blobs(spec, &mut rng)?;
    let bg = spec.background_em.evaluate(&spec.wavelengths);
    let tg = spec.target_em.evaluate(&spec.wavelengths);
    let noise = Normal::new(0.0, spec.noise_sigma.max(f64::MIN_POSITIVE)).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let bands = spec.wavelengths.len();
    let mut mask = ClassMask::filled(h, w, Label::Background);
    let mut data = Array3::zeros((h, w, bands));
    for y in 0..h {
        for x in 0..w {
            let in_border = y < spec.border || x < spec.border || y >= h - spec.border || x >= w - spec.border;
            let target = !in_border && blobs.iter().any(|e| e.contains(y as f64, x as f64));
            if target {
                mask.set(y, x, Label::Target);
            }
            let g = uniform(&mut rng, spec.gain);
            let o = uniform(&mut rng, spec.offset);
            let (em, scale) = if in_border {
                (&bg, spec.border_level)
            } else if target {
                (&tg, 1.0)
            } else {
                (&bg, 1.0)
            };
            for b in 0..bands {
                let n = if spec.noise_sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                data[[y, x, b]] = (em[b] * scale * g + o * scale + n).clamp(0.0, 1.2);
            }
        }
    }
    let meta = CubeMeta { image_id: spec.image_id.clone(), background: spec.background, group: spec.group };
    Ok((Hypercube::new(data, spec.wavelengths.clone(), meta)?, mask))
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Settings shared by every scene of a corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusSpec {
    pub backgrounds: Vec<BackgroundType>,
    pub groups: Vec<BugGroup>,
    /// Template; id, background, group, endmember and seed are filled per scene.
    pub scene: SceneSpec,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self::new("template", BackgroundType::Synthetic, None, 0)
    }
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self::standard(0)
    }
}

impl CorpusSpec {
    /// Seven vegetal backgrounds × groups G1–G5.
    pub fn standard(seed: u64) -> Self {
        Self {
            backgrounds: BackgroundType::VEGETAL.to_vec(),
            groups: BugGroup::ALL.to_vec(),
            scene: SceneSpec::new("template", BackgroundType::Synthetic, None, 0),
            seed,
        }
    }

    pub fn scene_specs(&self) -> Vec<SceneSpec> {
        let mut out = Vec::new();
        for g in &self.groups {
            for bg in &self.backgrounds {
                let id = format!("{}_{}", bg.as_str(), g.to_string().to_lowercase());
                let mut s = self.scene.clone();
                s.seed = derive_seed(self.seed, &id);
                s.image_id = id;
                s.background = *bg;
                s.group = Some(*g);
                s.background_em = Endmember::background(*bg);
                out.push(s);
            }
        }
        out
    }
}

/// Renders every scene of the corpus (image-parallel, order preserved).
pub fn generate_corpus(spec: &CorpusSpec) -> Result<Vec<(Hypercube<f64>, ClassMask)>> {
    spec.scene_specs().par_iter().map(generate_scene).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detect::{label_components, Connectivity};

    fn quiet(seed: u64) -> SceneSpec {
        let mut s = SceneSpec::new("t", BackgroundType::Grass, Some(BugGroup::new(1).unwrap()), seed);
        s.noise_sigma = 0.0;
        s.gain = (1.0, 1.0);
        s.offset = (0.0, 0.0);
        s
    }

    #[test]
    fn noiseless_targets_equal_endmember() {
        let spec = quiet(3);
        let (hc, mask) = generate_scene(&spec).unwrap();
        let tg = spec.target_em.evaluate(&spec.wavelengths);
        let bg = spec.background_em.evaluate(&spec.wavelengths);
        for y in 0..64 {
            for x in 0..64 {
                let want = match mask.get(y, x) {
                    Label::Target => &tg,
                    _ if y < 4 || x < 4 || y >= 60 || x >= 60 => continue,
                    _ => &bg,
                };
                for (b, v) in hc.pixel(y, x).iter().enumerate() {
                    assert_eq!(*v, want[b]);
                }
            }
        }
    }

    #[test]
    fn same_seed_same_scene() {
        let s = SceneSpec::new("t", BackgroundType::Soil, None, 9);
        let (a, ma) = generate_scene(&s).unwrap();
        let (b, mb) = generate_scene(&s).unwrap();
        assert_eq!(a.data(), b.data());
        assert_eq!(ma, mb);
        let (c, _) = generate_scene(&SceneSpec { seed: 10, ..s }).unwrap();
        assert_ne!(a.data(), c.data());
    }

    #[test]
    fn blob_areas_match_ellipses() {
        for seed in 0..10 {
            let spec = quiet(seed);
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            let blobs = place_blobs(&spec, &mut rng).unwrap();
            let (_, mask) = generate_scene(&spec).unwrap();
            let comps = label_components(mask.labels(), Label::Target, Connectivity::Eight);
            assert_eq!(comps.len(), blobs.len());
            for e in &blobs {
                // brute-force count over the bounding box
                let mut n = 0usize;
                for y in 0..64 {
                    for x in 0..64 {
                        if e.contains(y as f64, x as f64) {
                            n += 1;
                        }
                    }
                }
                assert!((n as f64 - e.area()).abs() <= 0.05 * e.area(), "{n} vs {}", e.area());
                assert!(n >= 50);
                assert!(comps.iter().any(|c| c.len() == n));
            }
        }
    }

    #[test]
    fn border_is_dark_and_scene_is_bright() {
        let (hc, mask) = generate_scene(&SceneSpec::new("t", BackgroundType::Bark, None, 1)).unwrap();
        let probe = hc.nearest_band(1000.0);
        for y in 0..64 {
            for x in 0..64 {
                let v = hc.data()[[y, x, probe]];
                let border = y < 4 || x < 4 || y >= 60 || x >= 60;
                assert_eq!(v < 0.3, border, "({y},{x}) = {v}");
                if border {
                    assert_eq!(mask.get(y, x), Label::Background);
                }
            }
        }
        assert!(hc.data().iter().all(|v| (0.0..=1.2).contains(v)));
        assert!(mask.count(Label::Target) >= 200);
    }

    #[test]
    fn corpus_layout() {
        let specs = CorpusSpec::standard(5).scene_specs();
        assert_eq!(specs.len(), 35);
        let ids: std::collections::BTreeSet<_> = specs.iter().map(|s| s.image_id.clone()).collect();
        assert_eq!(ids.len(), 35);
        assert_eq!(specs.iter().filter(|s| s.group == Some(BugGroup::new(4).unwrap())).count(), 7);
    }

    #[test]
    fn planted_bands_cover_feature_cores() {
        let wl = standard_wavelengths();
        let p = planted_bands(&wl, &Endmember::target(0.04));
        assert_eq!(p.len(), 20);
        assert!(p.iter().all(|&i| TARGET_FEATURE_NM.iter().any(|c| (wl[i] - c).abs() <= 10.0)));
    }

    #[test]
    fn pooled_background_matches_target_outside_features() {
        let wl = standard_wavelengths();
        let t = Endmember::target(0.0).evaluate(&wl);
        let mut mean = vec![0.0; wl.len()];
        for b in BackgroundType::VEGETAL {
            for (m, v) in mean.iter_mut().zip(Endmember::background(b).evaluate(&wl)) {
                *m += v / 7.0;
            }
        }
        for (a, b) in t.iter().zip(&mean) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
