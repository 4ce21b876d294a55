//! Layer kernels on `(channels, height, width)` tensors. Each forward returns
//! what its backward needs; backwards return input gradients and accumulate
//! parameter gradients.

use ndarray::{s, Array1, Array2, Array3, Array4, ArrayView3, Axis};

use crate::scalar::Real;

/// Square convolution with zero "same" padding and stride 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv<T> {
    /// `(out, in, k, k)`
    pub weight: Array4<T>,
    pub bias: Array1<T>,
}

impl<T: Real> Conv<T> {
    pub fn zeros(c_in: usize, c_out: usize, k: usize) -> Self {
        Self { weight: Array4::zeros((c_out, c_in, k, k)), bias: Array1::zeros(c_out) }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.dim().1
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dim().0
    }

    pub fn kernel(&self) -> usize {
        self.weight.dim().2
    }

    fn weight_matrix(&self) -> Array2<T> {
        let (o, i, k, _) = self.weight.dim();
        self.weight.to_shape((o, i * k * k)).expect("contiguous weights").to_owned()
    }

    /// Returns the output and the im2col matrix.
    pub fn forward(&self, x: ArrayView3<T>) -> (Array3<T>, Array2<T>) {
        let (_, h, w) = x.dim();
        let col = im2col(x, self.kernel());
        let mut y = self.weight_matrix().dot(&col);
        for (mut row, b) in y.axis_iter_mut(Axis(0)).zip(self.bias.iter()) {
            row.mapv_inplace(|v| v + *b);
        }
        let y = y.into_shape_with_order((self.out_channels(), h, w)).expect("output shape");
        (y, col)
    }

    /// Adds parameter gradients to `grad` and returns the input gradient.
    pub fn backward(&self, dy: &Array3<T>, col: &Array2<T>, grad: &mut Conv<T>) -> Array3<T> {
        let (o, h, w) = dy.dim();
        let dy2 = dy.view().into_shape_with_order((o, h * w)).expect("contiguous gradient");
        let dw = dy2.dot(&col.t());
        let (_, i, k, _) = self.weight.dim();
        grad.weight += &dw.into_shape_with_order((o, i, k, k)).expect("weight shape");
        grad.bias += &dy2.sum_axis(Axis(1));
        let dcol = self.weight_matrix().t().dot(&dy2);
        col2im(&dcol, i, h, w, k)
    }
}

/// `(c·k·k, h·w)` patch matrix, rows ordered channel-major then kernel row
/// then kernel column to match the weight layout.
pub fn im2col<T: Real>(x: ArrayView3<T>, k: usize) -> Array2<T> {
    let (c, h, w) = x.dim();
    let pad = (k / 2) as isize;
    let mut col = Array2::zeros((c * k * k, h * w));
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let r = (ci * k + ky) * k + kx;
                let mut row = col.row_mut(r);
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for xx in 0..w {
                        let sx = xx as isize + dx;
                        if sx >= 0 && sx < w as isize {
                            row[y * w + xx] = x[[ci, sy as usize, sx as usize]];
                        }
                    }
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col`].
pub fn col2im<T: Real>(col: &Array2<T>, c: usize, h: usize, w: usize, k: usize) -> Array3<T> {
    let pad = (k / 2) as isize;
    let mut x = Array3::zeros((c, h, w));
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = col.row((ci * k + ky) * k + kx);
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for xx in 0..w {
                        let sx = xx as isize + dx;
                        if sx >= 0 && sx < w as isize {
                            x[[ci, sy as usize, sx as usize]] += row[y * w + xx];
                        }
                    }
                }
            }
        }
    }
    x
}

pub fn relu<T: Real>(x: &mut Array3<T>) {
    x.mapv_inplace(|v| if v > T::zero() { v } else { T::zero() });
}

/// Zeroes `dy` where the ReLU output was not positive.
pub fn relu_backward<T: Real>(dy: &mut Array3<T>, out: &Array3<T>) {
    dy.zip_mut_with(out, |d, o| {
        if *o <= T::zero() {
            *d = T::zero();
        }
    });
}

/// 2×2 max pooling; the second value records the winning offset (0..4, row
/// major, first maximum on ties).
pub fn max_pool<T: Real>(x: ArrayView3<T>) -> (Array3<T>, Array3<u8>) {
    let (c, h, w) = x.dim();
    let (ho, wo) = (h / 2, w / 2);
    let mut y = Array3::zeros((c, ho, wo));
    let mut arg = Array3::zeros((c, ho, wo));
    for ci in 0..c {
        for i in 0..ho {
            for j in 0..wo {
                let mut best = x[[ci, 2 * i, 2 * j]];
                let mut bi = 0u8;
                for o in 1..4u8 {
                    let v = x[[ci, 2 * i + (o / 2) as usize, 2 * j + (o % 2) as usize]];
                    if v > best {
                        best = v;
                        bi = o;
                    }
                }
                y[[ci, i, j]] = best;
                arg[[ci, i, j]] = bi;
            }
        }
    }
    (y, arg)
}

pub fn max_pool_backward<T: Real>(dy: &Array3<T>, arg: &Array3<u8>) -> Array3<T> {
    let (c, ho, wo) = dy.dim();
    let mut dx = Array3::zeros((c, ho * 2, wo * 2));
    for ((ci, i, j), d) in dy.indexed_iter() {
        let o = arg[[ci, i, j]];
        dx[[ci, 2 * i + (o / 2) as usize, 2 * j + (o % 2) as usize]] = *d;
    }
    dx
}

/// Nearest-neighbour ×2 upsampling.
pub fn upsample<T: Real>(x: ArrayView3<T>) -> Array3<T> {
    let (c, h, w) = x.dim();
    Array3::from_shape_fn((c, 2 * h, 2 * w), |(ci, y, xx)| x[[ci, y / 2, xx / 2]])
}

pub fn upsample_backward<T: Real>(dy: &Array3<T>) -> Array3<T> {
    let (c, h, w) = dy.dim();
    let mut dx = Array3::zeros((c, h / 2, w / 2));
    for ((ci, y, x), d) in dy.indexed_iter() {
        dx[[ci, y / 2, x / 2]] += *d;
    }
    dx
}

/// Channel concatenation `[a; b]`.
pub fn concat<T: Real>(a: ArrayView3<T>, b: ArrayView3<T>) -> Array3<T> {
    ndarray::concatenate(Axis(0), &[a, b]).expect("matching spatial dims")
}

pub fn split_channels<T: Real>(d: &Array3<T>, first: usize) -> (Array3<T>, Array3<T>) {
    (d.slice(s![..first, .., ..]).to_owned(), d.slice(s![first.., .., ..]).to_owned())
}
