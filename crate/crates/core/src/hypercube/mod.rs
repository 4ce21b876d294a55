//! Hyperspectral cube data model, radiometric calibration, spectral cropping,
//! dark-background removal and band subsetting.

mod bands;
mod envi;

use std::fmt;
use std::str::FromStr;

use ndarray::{s, Array1, Array2, Array3, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{ClassMask, Label};
use crate::scalar::Real;

pub use bands::{BandSet, SELECTION_1_NM, SELECTION_2_NM};
pub use envi::{load_cube, read_cube, save_cube, write_cube};

/// First wavelength of the standard analysis grid (nm).
pub const GRID_START_NM: f64 = 980.0;
/// Last wavelength of the standard analysis grid (nm).
pub const GRID_END_NM: f64 = 1660.0;
/// Spacing of the standard analysis grid (nm).
pub const GRID_STEP_NM: f64 = 5.0;
/// Number of bands on the standard analysis grid.
pub const GRID_BANDS: usize = 137;

/// The 980–1660 nm, 5 nm analysis grid (137 bands).
pub fn standard_wavelengths() -> Vec<f64> {
    (0..GRID_BANDS).map(|i| GRID_START_NM + GRID_STEP_NM * i as f64).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackgroundType {
    Bark,
    Grass,
    DryLeaves,
    GreenLeaves,
    YellowLeaves,
    Soil,
    TreeBranches,
    Synthetic,
}

impl BackgroundType {
    /// The seven vegetal backgrounds, in corpus order.
    pub const VEGETAL: [BackgroundType; 7] = [
        BackgroundType::Bark,
        BackgroundType::Grass,
        BackgroundType::DryLeaves,
        BackgroundType::GreenLeaves,
        BackgroundType::YellowLeaves,
        BackgroundType::Soil,
        BackgroundType::TreeBranches,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BackgroundType::Bark => "bark",
            BackgroundType::Grass => "grass",
            BackgroundType::DryLeaves => "dry_leaves",
            BackgroundType::GreenLeaves => "green_leaves",
            BackgroundType::YellowLeaves => "yellow_leaves",
            BackgroundType::Soil => "soil",
            BackgroundType::TreeBranches => "tree_branches",
            BackgroundType::Synthetic => "synthetic",
        }
    }
}

impl fmt::Display for BackgroundType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BackgroundType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::VEGETAL
            .iter()
            .chain(std::iter::once(&BackgroundType::Synthetic))
            .find(|b| b.as_str() == s)
            .copied()
            .ok_or_else(|| Error::InvalidParameter(format!("unknown background type `{s}`")))
    }
}

/// Specimen group tag, `G1` to `G5`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct BugGroup(u8);

impl BugGroup {
    pub const ALL: [BugGroup; 5] = [BugGroup(1), BugGroup(2), BugGroup(3), BugGroup(4), BugGroup(5)];

    pub fn new(n: u8) -> Result<Self> {
        if (1..=5).contains(&n) {
            Ok(BugGroup(n))
        } else {
            Err(Error::UnknownGroup(format!("G{n}")))
        }
    }

    pub fn number(self) -> u8 {
        self.0
    }
}

impl fmt::Display for BugGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "G{}", self.0)
    }
}

impl FromStr for BugGroup {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        s.strip_prefix('G')
            .and_then(|n| n.parse::<u8>().ok())
            .and_then(|n| BugGroup::new(n).ok())
            .ok_or_else(|| Error::UnknownGroup(s.to_owned()))
    }
}

impl TryFrom<String> for BugGroup {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<BugGroup> for String {
    fn from(g: BugGroup) -> String {
        g.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CubeMeta {
    pub image_id: String,
    pub background: BackgroundType,
    pub group: Option<BugGroup>,
}

impl Default for CubeMeta {
    fn default() -> Self {
        Self { image_id: "image".into(), background: BackgroundType::Synthetic, group: None }
    }
}

/// Reflectance volume indexed `(y, x, band)` with a wavelength axis in nm.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypercube<T> {
    data: Array3<T>,
    wavelengths: Vec<f64>,
    meta: CubeMeta,
}

impl<T: Real> Hypercube<T> {
    /// Validates band count, wavelength ordering and finiteness.
    pub fn new(data: Array3<T>, wavelengths: Vec<f64>, meta: CubeMeta) -> Result<Self> {
        let bands = data.dim().2;
        if wavelengths.len() != bands {
            return Err(Error::InvalidCube(format!("{} wavelengths for {} bands", wavelengths.len(), bands)));
        }
        if wavelengths.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidCube("wavelengths must be strictly increasing".into()));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            let (_, w, b) = data.dim();
            return Err(Error::InvalidCube(format!(
                "non-finite value at (y={}, x={}, band={})",
                pos / (w * b),
                (pos / b) % w,
                pos % b
            )));
        }
        let data = if data.is_standard_layout() { data } else { data.as_standard_layout().into_owned() };
        Ok(Self { data, wavelengths, meta })
    }

    pub fn height(&self) -> usize {
        self.data.dim().0
    }

    pub fn width(&self) -> usize {
        self.data.dim().1
    }

    pub fn bands(&self) -> usize {
        self.data.dim().2
    }

    pub fn wavelengths(&self) -> &[f64] {
        &self.wavelengths
    }

    pub fn data(&self) -> &Array3<T> {
        &self.data
    }

    pub fn meta(&self) -> &CubeMeta {
        &self.meta
    }

    pub fn with_meta(mut self, meta: CubeMeta) -> Self {
        self.meta = meta;
        self
    }

    pub fn into_data(self) -> Array3<T> {
        self.data
    }

    pub fn pixel(&self, y: usize, x: usize) -> ArrayView1<'_, T> {
        self.data.slice(s![y, x, ..])
    }

    /// All pixel spectra as a `(height·width) × bands` matrix in raster order.
    pub fn spectra(&self) -> ArrayView2<'_, T> {
        let (h, w, b) = self.data.dim();
        self.data.view().into_shape_with_order((h * w, b)).expect("standard layout cube")
    }

    /// Converts the sample type.
    pub fn cast<U: Real>(&self) -> Hypercube<U> {
        Hypercube { data: self.data.mapv(|v| U::lit(v.as_f64())), wavelengths: self.wavelengths.clone(), meta: self.meta.clone() }
    }

    /// Index of the band closest to `nm` (lowest index on ties).
    pub fn nearest_band(&self, nm: f64) -> usize {
        nearest_index(&self.wavelengths, nm)
    }
}

pub(crate) fn nearest_index(wavelengths: &[f64], nm: f64) -> usize {
    wavelengths
        .iter()
        .enumerate()
        .fold((0usize, f64::INFINITY), |best, (i, w)| {
            let d = (w - nm).abs();
            if d < best.1 {
                (i, d)
            } else {
                best
            }
        })
        .0
}

/// Converts raw counts to reflectance with per-band white and dark references:
/// `(raw − dark) / (white − dark)`. Values are not clamped.
pub fn calibrate_reflectance<T: Real>(raw: &Hypercube<T>, white: &[T], dark: &[T]) -> Result<Hypercube<T>> {
    let bands = raw.bands();
    if white.len() != bands || dark.len() != bands {
        return Err(Error::Dimension(format!("references have {} / {} values for {} bands", white.len(), dark.len(), bands)));
    }
    for b in 0..bands {
        if !(white[b] > dark[b]) {
            return Err(Error::Calibration { band: b, white: white[b].as_f64(), dark: dark[b].as_f64() });
        }
    }
    let dark_a = Array1::from(dark.to_vec());
    let span = Array1::from(white.iter().zip(dark).map(|(w, d)| *w - *d).collect::<Vec<_>>());
    let mut data = raw.data.clone();
    for mut spectrum in data.lanes_mut(Axis(2)) {
        spectrum -= &dark_a;
        spectrum /= &span;
    }
    Hypercube::new(data, raw.wavelengths.clone(), raw.meta.clone())
}

/// Per-band affine correction `gain·r + offset`, the hook for an externally
/// supplied image-to-image calibration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineCorrection {
    pub gain: Vec<f64>,
    pub offset: Vec<f64>,
}

impl AffineCorrection {
    pub fn apply<T: Real>(&self, hc: &Hypercube<T>) -> Result<Hypercube<T>> {
        if self.gain.len() != hc.bands() || self.offset.len() != hc.bands() {
            return Err(Error::Dimension("affine correction length differs from band count".into()));
        }
        let gain = Array1::from_iter(self.gain.iter().map(|g| T::lit(*g)));
        let offset = Array1::from_iter(self.offset.iter().map(|o| T::lit(*o)));
        let mut data = hc.data.clone();
        for mut spectrum in data.lanes_mut(Axis(2)) {
            spectrum *= &gain;
            spectrum += &offset;
        }
        Hypercube::new(data, hc.wavelengths.clone(), hc.meta.clone())
    }
}

/// Keeps the bands with `lo_nm ≤ λ ≤ hi_nm`.
pub fn crop_spectral<T: Real>(hc: &Hypercube<T>, lo_nm: f64, hi_nm: f64) -> Result<Hypercube<T>> {
    if !(lo_nm <= hi_nm) {
        return Err(Error::EmptyRange { lo_nm, hi_nm });
    }
    let keep: Vec<usize> =
        hc.wavelengths.iter().enumerate().filter(|(_, w)| **w >= lo_nm && **w <= hi_nm).map(|(i, _)| i).collect();
    if keep.is_empty() {
        return Err(Error::EmptyRange { lo_nm, hi_nm });
    }
    let (first, last) = (keep[0], keep[keep.len() - 1]);
    let data = hc.data.slice(s![.., .., first..=last]).to_owned();
    Hypercube::new(data, hc.wavelengths[first..=last].to_vec(), hc.meta.clone())
}

/// Default reflectance threshold separating the dark support from the sample.
pub const DARK_THRESHOLD: f64 = 0.3;
/// Default probe wavelength for the dark-support test (nm).
pub const DARK_PROBE_NM: f64 = 1000.0;

/// Labels pixels darker than `threshold` at `probe_nm` as `EXCLUDED`, the
/// rest as provisional `BACKGROUND`.
pub fn dark_background_mask<T: Real>(hc: &Hypercube<T>, threshold: f64, probe_nm: f64) -> ClassMask {
    let band = hc.nearest_band(probe_nm);
    if (hc.wavelengths[band] - probe_nm).abs() > 1e-9 {
        log::warn!("probe wavelength {probe_nm} nm not on axis; using nearest band at {} nm", hc.wavelengths[band]);
    }
    let thr = T::lit(threshold);
    let plane = hc.data.index_axis(Axis(2), band);
    ClassMask::new(plane.mapv(|r| if r < thr { Label::Excluded } else { Label::Background }))
}

/// Keeps only the bands listed in `bands`, in ascending index order.
pub fn restrict_bands<T: Real>(hc: &Hypercube<T>, bands: &BandSet) -> Result<Hypercube<T>> {
    if bands.is_empty() {
        return Err(Error::EmptyBandSet);
    }
    if let Some(&bad) = bands.indices().iter().find(|i| **i >= hc.bands()) {
        return Err(Error::BandOutOfRange { index: bad, bands: hc.bands() });
    }
    let data = hc.data.select(Axis(2), bands.indices());
    let wl = bands.indices().iter().map(|i| hc.wavelengths[*i]).collect();
    Hypercube::new(data, wl, hc.meta.clone())
}

/// Selects columns of a spectra matrix by band set.
pub fn restrict_columns<T: Real>(x: ArrayView2<T>, bands: &BandSet) -> Result<Array2<T>> {
    if bands.is_empty() {
        return Err(Error::EmptyBandSet);
    }
    if let Some(&bad) = bands.indices().iter().find(|i| **i >= x.ncols()) {
        return Err(Error::BandOutOfRange { index: bad, bands: x.ncols() });
    }
    Ok(x.select(Axis(1), bands.indices()))
}
