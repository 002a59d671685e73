//! Raw convolution kernels on flat NCHW buffers.

use rayon::prelude::*;

use super::gemm::gemm;
use super::Scalar;

/// Extents of a same-padded, stride-1 convolution.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub o: usize,
    pub k: usize,
}

impl ConvGeom {
    fn hw(&self) -> usize {
        self.h * self.w
    }

    fn ckk(&self) -> usize {
        self.c * self.k * self.k
    }
}

/// Unfolds one `C×H×W` image into a `(C·k·k) × (H·W)` patch matrix with zero
/// padding `k/2`.
fn im2col<T: Scalar>(x: &[T], g: &ConvGeom, cols: &mut [T]) {
    let (h, w, k) = (g.h as isize, g.w as isize, g.k);
    let pad = (k / 2) as isize;
    let hw = g.hw();
    for c in 0..g.c {
        let plane = &x[c * hw..(c + 1) * hw];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                let dy = ki as isize - pad;
                let dx = kj as isize - pad;
                let x_lo = (-dx).clamp(0, w) as usize;
                let x_hi = (w - dx).clamp(0, w) as usize;
                for y in 0..h {
                    let line = &mut dst[(y * w) as usize..((y + 1) * w) as usize];
                    let sy = y + dy;
                    if sy < 0 || sy >= h || x_lo >= x_hi {
                        line.fill(T::zero());
                        continue;
                    }
                    line[..x_lo].fill(T::zero());
                    line[x_hi..].fill(T::zero());
                    let src_start = (sy * w) as usize;
                    let sx_lo = (x_lo as isize + dx) as usize;
                    line[x_lo..x_hi]
                        .copy_from_slice(&plane[src_start + sx_lo..src_start + sx_lo + (x_hi - x_lo)]);
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters patch gradients back, accumulating.
fn col2im<T: Scalar>(cols: &[T], g: &ConvGeom, dx: &mut [T]) {
    let (h, w, k) = (g.h as isize, g.w as isize, g.k);
    let pad = (k / 2) as isize;
    let hw = g.hw();
    for c in 0..g.c {
        let plane = &mut dx[c * hw..(c + 1) * hw];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let src = &cols[row * hw..(row + 1) * hw];
                let dy = ki as isize - pad;
                let ddx = kj as isize - pad;
                let x_lo = (-ddx).clamp(0, w) as usize;
                let x_hi = (w - ddx).clamp(0, w) as usize;
                if x_lo >= x_hi {
                    continue;
                }
                for y in 0..h {
                    let sy = y + dy;
                    if sy < 0 || sy >= h {
                        continue;
                    }
                    let line = &src[(y * w) as usize..((y + 1) * w) as usize];
                    let dst_start = (sy * w) as usize + (x_lo as isize + ddx) as usize;
                    let dst = &mut plane[dst_start..dst_start + (x_hi - x_lo)];
                    for (d, s) in dst.iter_mut().zip(&line[x_lo..x_hi]) {
                        *d += *s;
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward<T: Scalar>(x: &[T], weight: &[T], bias: Option<&[T]>, g: ConvGeom) -> Vec<T> {
    let (hw, ckk) = (g.hw(), g.ckk());
    let mut out = vec![T::zero(); g.n * g.o * hw];
    out.par_chunks_mut(g.o * hw)
        .zip(x.par_chunks(g.c * hw))
        .for_each_init(
            || vec![T::zero(); ckk * hw],
            |cols, (y, xn)| {
                im2col(xn, &g, cols);
                gemm(g.o, ckk, hw, weight, false, cols, false, T::zero(), y);
                if let Some(b) = bias {
                    for (plane, &bo) in y.chunks_mut(hw).zip(b) {
                        plane.iter_mut().for_each(|v| *v += bo);
                    }
                }
            },
        );
    out
}

pub(crate) struct ConvGrads<T> {
    pub input: Option<Vec<T>>,
    pub weight: Option<Vec<T>>,
    pub bias: Vec<T>,
}

pub(crate) fn conv2d_backward<T: Scalar>(
    x: &[T],
    weight: &[T],
    gy: &[T],
    g: ConvGeom,
    need_input: bool,
    need_weight: bool,
) -> ConvGrads<T> {
    let (hw, ckk) = (g.hw(), g.ckk());
    // Without an input gradient each sample gets a one-element scratch slot.
    let chunk = if need_input { g.c * hw } else { 1 };
    let mut dx = vec![T::zero(); g.n * chunk];

    // Per-sample weight gradients are summed afterwards in sample order so the
    // reduction does not depend on thread scheduling.
    let per_sample: Vec<Option<Vec<T>>> = gy
        .par_chunks(g.o * hw)
        .zip(x.par_chunks(g.c * hw))
        .zip(dx.par_chunks_mut(chunk))
        .map(|((gyn, xn), dxn)| {
            let mut cols = vec![T::zero(); ckk * hw];
            let dw = if need_weight {
                im2col(xn, &g, &mut cols);
                let mut dw = vec![T::zero(); g.o * ckk];
                gemm(g.o, hw, ckk, gyn, false, &cols, true, T::zero(), &mut dw);
                Some(dw)
            } else {
                None
            };
            if need_input {
                gemm(ckk, g.o, hw, weight, true, gyn, false, T::zero(), &mut cols);
                col2im(&cols, &g, dxn);
            }
            dw
        })
        .collect();

    let weight_grad = if need_weight {
        let mut acc = vec![T::zero(); g.o * ckk];
        for dw in per_sample.into_iter().flatten() {
            for (a, d) in acc.iter_mut().zip(dw) {
                *a += d;
            }
        }
        Some(acc)
    } else {
        None
    };

    let mut db = vec![T::zero(); g.o];
    for gyn in gy.chunks(g.o * hw) {
        for (b, plane) in db.iter_mut().zip(gyn.chunks(hw)) {
            *b += plane.iter().copied().sum::<T>();
        }
    }

    ConvGrads {
        input: need_input.then_some(dx),
        weight: weight_grad,
        bias: db,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(x: &[f64], w: &[f64], g: &ConvGeom) -> Vec<f64> {
        let pad = (g.k / 2) as isize;
        let mut out = vec![0.0; g.n * g.o * g.h * g.w];
        for n in 0..g.n {
            for o in 0..g.o {
                for y in 0..g.h {
                    for xx in 0..g.w {
                        let mut acc = 0.0;
                        for c in 0..g.c {
                            for ki in 0..g.k {
                                for kj in 0..g.k {
                                    let sy = y as isize + ki as isize - pad;
                                    let sx = xx as isize + kj as isize - pad;
                                    if sy < 0 || sx < 0 || sy >= g.h as isize || sx >= g.w as isize {
                                        continue;
                                    }
                                    let xi = ((n * g.c + c) * g.h + sy as usize) * g.w + sx as usize;
                                    let wi = ((o * g.c + c) * g.k + ki) * g.k + kj;
                                    acc += x[xi] * w[wi];
                                }
                            }
                        }
                        out[((n * g.o + o) * g.h + y) * g.w + xx] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn matches_direct_convolution() {
        for (h, w) in [(5, 7), (3, 3), (1, 4), (8, 8)] {
            let g = ConvGeom { n: 2, c: 3, h, w, o: 4, k: 3 };
            let x: Vec<f64> = (0..g.n * g.c * h * w).map(|i| ((i * 7919) % 13) as f64 - 6.0).collect();
            let wt: Vec<f64> = (0..g.o * g.c * 9).map(|i| ((i * 31) % 11) as f64 * 0.1 - 0.5).collect();
            let got = conv2d_forward(&x, &wt, None, g);
            let expect = naive_conv(&x, &wt, &g);
            for (a, b) in got.iter().zip(&expect) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let g = ConvGeom { n: 1, c: 2, h: 4, w: 5, o: 1, k: 3 };
        let x: Vec<f64> = (0..g.c * g.hw()).map(|i| (i as f64).cos()).collect();
        let r: Vec<f64> = (0..g.ckk() * g.hw()).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut cols = vec![0.0; g.ckk() * g.hw()];
        im2col(&x, &g, &mut cols);
        let lhs: f64 = cols.iter().zip(&r).map(|(a, b)| a * b).sum();
        let mut back = vec![0.0; x.len()];
        col2im(&r, &g, &mut back);
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }
}
