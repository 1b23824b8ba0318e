//! 2-D convolution via im2col + GEMM, square kernels, zero padding.

use crate::real::matmul;
use crate::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn new(
        c_in: usize,
        h: usize,
        w: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        pad: usize,
    ) -> Option<Self> {
        if stride == 0 || k == 0 || h + 2 * pad < k || w + 2 * pad < k {
            return None;
        }
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (w + 2 * pad - k) / stride + 1;
        Some(Self {
            c_in,
            h,
            w,
            c_out,
            k,
            stride,
            pad,
            ho,
            wo,
        })
    }

    fn patch_len(&self) -> usize {
        self.c_in * self.k * self.k
    }

    fn out_plane(&self) -> usize {
        self.ho * self.wo
    }

    /// Whether the input plane can be used directly as the column matrix.
    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    /// Input x-range `[lo, hi)` of output columns that land inside the image
    /// for kernel column `kx`.
    fn valid_cols(&self, kx: usize) -> (usize, usize) {
        let p = self.pad as isize;
        let s = self.stride as isize;
        let kx = kx as isize;
        // ix = ox*s + kx - p must satisfy 0 <= ix < w
        let lo = ((p - kx).max(0) + s - 1) / s;
        let num = self.w as isize - 1 + p - kx;
        let hi = if num < 0 {
            0
        } else {
            (num / s + 1).min(self.wo as isize)
        };
        let lo = lo.min(hi);
        (lo as usize, hi as usize)
    }
}

fn im2col<T: Real>(g: &ConvGeom, x: &[T], cols: &mut [T]) {
    let plane = g.out_plane();
    for ci in 0..g.c_in {
        let src_plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ci * g.k + ky) * g.k + kx;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                let (lo, hi) = g.valid_cols(kx);
                for oy in 0..g.ho {
                    let drow = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        drow.fill(T::zero());
                        continue;
                    }
                    let srow = &src_plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    drow[..lo].fill(T::zero());
                    drow[hi..].fill(T::zero());
                    if hi <= lo {
                        continue;
                    }
                    if g.stride == 1 {
                        let start = lo + kx - g.pad;
                        drow[lo..hi].copy_from_slice(&srow[start..start + (hi - lo)]);
                    } else {
                        for (ox, d) in (lo..hi).zip(drow[lo..hi].iter_mut()) {
                            *d = srow[ox * g.stride + kx - g.pad];
                        }
                    }
                }
            }
        }
    }
}

fn col2im<T: Real>(g: &ConvGeom, cols: &[T], dx: &mut [T]) {
    let plane = g.out_plane();
    for ci in 0..g.c_in {
        let dst_plane = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ci * g.k + ky) * g.k + kx;
                let src = &cols[row * plane..(row + 1) * plane];
                let (lo, hi) = g.valid_cols(kx);
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let srow = &src[oy * g.wo..(oy + 1) * g.wo];
                    let drow = &mut dst_plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    if hi <= lo {
                        continue;
                    }
                    if g.stride == 1 {
                        let start = lo + kx - g.pad;
                        for (d, &v) in drow[start..start + (hi - lo)].iter_mut().zip(&srow[lo..hi])
                        {
                            *d += v;
                        }
                    } else {
                        for ox in lo..hi {
                            drow[ox * g.stride + kx - g.pad] += srow[ox];
                        }
                    }
                }
            }
        }
    }
}

/// Forward pass over a batch. `x` is `[n, c_in, h, w]`, `weight` is
/// `[c_out, c_in, k, k]`, output is `[n, c_out, ho, wo]`.
pub(crate) fn conv2d_forward<T: Real>(
    g: &ConvGeom,
    n: usize,
    x: &[T],
    weight: &[T],
    bias: Option<&[T]>,
) -> Vec<T> {
    let plane = g.out_plane();
    let patch = g.patch_len();
    let in_len = g.c_in * g.h * g.w;
    let out_len = g.c_out * plane;
    let mut out = vec![T::zero(); n * out_len];
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); patch * plane]
    };
    for b in 0..n {
        let xb = &x[b * in_len..(b + 1) * in_len];
        let ob = &mut out[b * out_len..(b + 1) * out_len];
        let colref: &[T] = if g.is_pointwise() {
            xb
        } else {
            im2col(g, xb, &mut cols);
            &cols
        };
        matmul(
            g.c_out, patch, plane, weight, false, colref, false, ob, false,
        );
        if let Some(bias) = bias {
            for (co, &bv) in bias.iter().enumerate() {
                for v in &mut ob[co * plane..(co + 1) * plane] {
                    *v += bv;
                }
            }
        }
    }
    out
}

/// `[c_out, c_in, k, k]` to `[c_in, c_out, k, k]` with both spatial axes reversed.
fn flip_kernel<T: Real>(g: &ConvGeom, weight: &[T]) -> Vec<T> {
    let kk = g.k * g.k;
    let mut out = vec![T::zero(); weight.len()];
    for co in 0..g.c_out {
        for ci in 0..g.c_in {
            let src = &weight[(co * g.c_in + ci) * kk..][..kk];
            let dst = &mut out[(ci * g.c_out + co) * kk..][..kk];
            for (d, &v) in dst.iter_mut().zip(src.iter().rev()) {
                *d = v;
            }
        }
    }
    out
}

pub(crate) struct ConvGrads<T> {
    pub dx: Option<Vec<T>>,
    pub dweight: Option<Vec<T>>,
    pub dbias: Option<Vec<T>>,
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_backward<T: Real>(
    g: &ConvGeom,
    n: usize,
    x: &[T],
    weight: &[T],
    dy: &[T],
    need_dx: bool,
    need_dw: bool,
    need_db: bool,
) -> ConvGrads<T> {
    let plane = g.out_plane();
    let patch = g.patch_len();
    let in_len = g.c_in * g.h * g.w;
    let out_len = g.c_out * plane;
    // Same-padded stride-1 convolutions get dx as a full convolution of dy
    // with the flipped kernel, which avoids the column scatter when the
    // output has no more channels than the input.
    let flipped = (need_dx
        && !g.is_pointwise()
        && g.stride == 1
        && g.ho == g.h
        && g.wo == g.w
        && g.c_out <= g.c_in)
        .then(|| ConvGeom::new(g.c_out, g.h, g.w, g.c_in, g.k, 1, g.k - 1 - g.pad))
        .flatten();
    let mut dx = match &flipped {
        Some(g2) => Some(conv2d_forward(g2, n, dy, &flip_kernel(g, weight), None)),
        None => need_dx.then(|| vec![T::zero(); n * in_len]),
    };
    let need_dx = need_dx && flipped.is_none();
    let mut dw = need_dw.then(|| vec![T::zero(); g.c_out * patch]);
    let mut db = need_db.then(|| vec![T::zero(); g.c_out]);
    let pointwise = g.is_pointwise();
    let mut cols = if need_dw && !pointwise {
        vec![T::zero(); patch * plane]
    } else {
        Vec::new()
    };
    let mut dcols = if need_dx && !pointwise {
        vec![T::zero(); patch * plane]
    } else {
        Vec::new()
    };
    for b in 0..n {
        let dyb = &dy[b * out_len..(b + 1) * out_len];
        if let Some(dw) = dw.as_mut() {
            let xb = &x[b * in_len..(b + 1) * in_len];
            let colref: &[T] = if pointwise {
                xb
            } else {
                im2col(g, xb, &mut cols);
                &cols
            };
            // dW += dY * cols^T
            matmul(g.c_out, plane, patch, dyb, false, colref, true, dw, true);
        }
        if let Some(dx) = dx.as_mut().filter(|_| need_dx) {
            let dxb = &mut dx[b * in_len..(b + 1) * in_len];
            if pointwise {
                matmul(patch, g.c_out, plane, weight, true, dyb, false, dxb, true);
            } else {
                // dcols = W^T * dY, scattered back onto the input grid.
                matmul(
                    patch, g.c_out, plane, weight, true, dyb, false, &mut dcols, false,
                );
                col2im(g, &dcols, dxb);
            }
        }
        if let Some(db) = db.as_mut() {
            for (co, acc) in db.iter_mut().enumerate() {
                *acc += dyb[co * plane..(co + 1) * plane].iter().copied().sum::<T>();
            }
        }
    }
    ConvGrads {
        dx,
        dweight: dw,
        dbias: db,
    }
}
