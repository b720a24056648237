//! Raw compute kernels behind the tape primitives.
//!
//! Convolution uses the decomposition into shifted row AXPYs: for a fixed
//! (ky, kx) tap the output row is a contiguous slice updated from a
//! contiguous input slice, which autovectorizes well. Parallel paths split
//! over independent output planes so results are bit-identical to the
//! sequential path.

use rayon::prelude::*;

use crate::parallel;
use crate::scalar::Scalar;

/// stride is fixed at 1; `Same` zero-pads by (k-1)/2, `None` does not pad.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    Same,
    None,
}

impl Padding {
    pub fn pad(self, k: usize) -> usize {
        match self {
            Padding::Same => (k - 1) / 2,
            Padding::None => 0,
        }
    }

    pub fn out_extent(self, input: usize, k: usize) -> usize {
        match self {
            Padding::Same => input,
            Padding::None => input + 1 - k,
        }
    }
}

/// Column window of the output row that reads in-bounds input for kernel
/// column `kx` with pad `p`: x in [lo, hi), input column x + kx - p.
#[inline]
fn col_window(w_in: usize, w_out: usize, kx: usize, p: usize) -> (usize, usize) {
    let lo = p.saturating_sub(kx);
    let hi = (w_in + p).saturating_sub(kx).min(w_out);
    (lo, hi.max(lo))
}

/// out[y, lo..hi] += a * inp[y + ky - p, lo+kx-p .. hi+kx-p] for one plane.
#[inline]
fn axpy_tap<E: Scalar>(
    out_plane: &mut [E],
    in_plane: &[E],
    a: E,
    h_in: usize,
    w_in: usize,
    h_out: usize,
    w_out: usize,
    ky: usize,
    kx: usize,
    p: usize,
) {
    let (lo, hi) = col_window(w_in, w_out, kx, p);
    if lo >= hi {
        return;
    }
    let dx = kx as isize - p as isize;
    for y in 0..h_out {
        let iy = y as isize + ky as isize - p as isize;
        if iy < 0 || iy as usize >= h_in {
            continue;
        }
        let iy = iy as usize;
        let orow = &mut out_plane[y * w_out + lo..y * w_out + hi];
        let ibase = (iy * w_in) as isize + lo as isize + dx;
        let irow = &in_plane[ibase as usize..ibase as usize + (hi - lo)];
        for (o, &i) in orow.iter_mut().zip(irow) {
            *o = *o + a * i;
        }
    }
}

pub struct ConvDims {
    pub n: usize,
    pub c_in: usize,
    pub h_in: usize,
    pub w_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub h_out: usize,
    pub w_out: usize,
    pub pad: usize,
}

impl ConvDims {
    pub fn new(
        n: usize,
        c_in: usize,
        h_in: usize,
        w_in: usize,
        c_out: usize,
        k: usize,
        padding: Padding,
    ) -> Self {
        ConvDims {
            n,
            c_in,
            h_in,
            w_in,
            c_out,
            k,
            h_out: padding.out_extent(h_in, k),
            w_out: padding.out_extent(w_in, k),
            pad: padding.pad(k),
        }
    }

    fn macs(&self) -> usize {
        self.n * self.c_out * self.c_in * self.k * self.k * self.h_out * self.w_out
    }
}

/// Cross-correlation (no kernel flip), stride 1.
pub fn conv2d_forward<E: Scalar>(
    inp: &[E],
    weight: &[E],
    bias: &[E],
    d: &ConvDims,
) -> Vec<E> {
    let out_plane = d.h_out * d.w_out;
    let in_plane = d.h_in * d.w_in;
    let kk = d.k * d.k;
    let mut out = vec![E::zero(); d.n * d.c_out * out_plane];

    let run_plane = |idx: usize, out_plane_buf: &mut [E]| {
        let n = idx / d.c_out;
        let co = idx % d.c_out;
        out_plane_buf.fill(bias[co]);
        for ci in 0..d.c_in {
            let ip = &inp[(n * d.c_in + ci) * in_plane..(n * d.c_in + ci + 1) * in_plane];
            let wbase = (co * d.c_in + ci) * kk;
            for ky in 0..d.k {
                for kx in 0..d.k {
                    axpy_tap(
                        out_plane_buf,
                        ip,
                        weight[wbase + ky * d.k + kx],
                        d.h_in,
                        d.w_in,
                        d.h_out,
                        d.w_out,
                        ky,
                        kx,
                        d.pad,
                    );
                }
            }
        }
    };

    if parallel::should_parallelize(d.macs()) {
        parallel::pool().install(|| {
            out.par_chunks_mut(out_plane)
                .enumerate()
                .for_each(|(idx, chunk)| run_plane(idx, chunk));
        });
    } else {
        for (idx, chunk) in out.chunks_mut(out_plane).enumerate() {
            run_plane(idx, chunk);
        }
    }
    out
}

/// Gradient wrt the input: the transposed pass. d_in[iy, ix] accumulates
/// w[co,ci,ky,kx] * d_out[iy-ky+p, ix-kx+p] over co and taps.
pub fn conv2d_backward_input<E: Scalar>(
    d_out: &[E],
    weight: &[E],
    d: &ConvDims,
) -> Vec<E> {
    let out_plane = d.h_out * d.w_out;
    let in_plane = d.h_in * d.w_in;
    let kk = d.k * d.k;
    let mut d_in = vec![E::zero(); d.n * d.c_in * in_plane];

    let run_plane = |idx: usize, din_plane: &mut [E]| {
        let n = idx / d.c_in;
        let ci = idx % d.c_in;
        for co in 0..d.c_out {
            let gp = &d_out[(n * d.c_out + co) * out_plane..(n * d.c_out + co + 1) * out_plane];
            let wbase = (co * d.c_in + ci) * kk;
            for ky in 0..d.k {
                for kx in 0..d.k {
                    // roles swap: input-plane gradient receives the output
                    // gradient shifted the opposite way
                    axpy_tap(
                        din_plane,
                        gp,
                        weight[wbase + ky * d.k + kx],
                        d.h_out,
                        d.w_out,
                        d.h_in,
                        d.w_in,
                        d.k - 1 - ky,
                        d.k - 1 - kx,
                        d.k - 1 - d.pad,
                    );
                }
            }
        }
    };

    if parallel::should_parallelize(d.macs()) {
        parallel::pool().install(|| {
            d_in.par_chunks_mut(in_plane)
                .enumerate()
                .for_each(|(idx, chunk)| run_plane(idx, chunk));
        });
    } else {
        for (idx, chunk) in d_in.chunks_mut(in_plane).enumerate() {
            run_plane(idx, chunk);
        }
    }
    d_in
}

/// Gradient wrt the weights: per-tap dot products of output-gradient rows
/// with shifted input rows.
pub fn conv2d_backward_weight<E: Scalar>(
    inp: &[E],
    d_out: &[E],
    d: &ConvDims,
) -> Vec<E> {
    let out_plane = d.h_out * d.w_out;
    let in_plane = d.h_in * d.w_in;
    let kk = d.k * d.k;
    let mut d_w = vec![E::zero(); d.c_out * d.c_in * kk];

    let run_filter = |co: usize, dw_filter: &mut [E]| {
        // dw_filter is the c_in*k*k block for output channel co
        for ci in 0..d.c_in {
            for ky in 0..d.k {
                for kx in 0..d.k {
                    let (lo, hi) = col_window(d.w_in, d.w_out, kx, d.pad);
                    if lo >= hi {
                        continue;
                    }
                    let dx = kx as isize - d.pad as isize;
                    let mut acc = E::zero();
                    for n in 0..d.n {
                        let gp = &d_out
                            [(n * d.c_out + co) * out_plane..(n * d.c_out + co + 1) * out_plane];
                        let ip =
                            &inp[(n * d.c_in + ci) * in_plane..(n * d.c_in + ci + 1) * in_plane];
                        for y in 0..d.h_out {
                            let iy = y as isize + ky as isize - d.pad as isize;
                            if iy < 0 || iy as usize >= d.h_in {
                                continue;
                            }
                            let grow = &gp[y * d.w_out + lo..y * d.w_out + hi];
                            let ibase = (iy as usize * d.w_in) as isize + lo as isize + dx;
                            let irow = &ip[ibase as usize..ibase as usize + (hi - lo)];
                            let mut s = E::zero();
                            for (&g, &i) in grow.iter().zip(irow) {
                                s = s + g * i;
                            }
                            acc = acc + s;
                        }
                    }
                    dw_filter[ci * kk + ky * d.k + kx] = acc;
                }
            }
        }
    };

    if parallel::should_parallelize(d.macs()) {
        parallel::pool().install(|| {
            d_w.par_chunks_mut(d.c_in * kk)
                .enumerate()
                .for_each(|(co, chunk)| run_filter(co, chunk));
        });
    } else {
        for (co, chunk) in d_w.chunks_mut(d.c_in * kk).enumerate() {
            run_filter(co, chunk);
        }
    }
    d_w
}

/// Gradient wrt the bias: sum of the output gradient over batch and space.
pub fn conv2d_backward_bias<E: Scalar>(d_out: &[E], d: &ConvDims) -> Vec<E> {
    let out_plane = d.h_out * d.w_out;
    let mut d_b = vec![E::zero(); d.c_out];
    for n in 0..d.n {
        for (co, db) in d_b.iter_mut().enumerate() {
            let gp = &d_out[(n * d.c_out + co) * out_plane..(n * d.c_out + co + 1) * out_plane];
            let mut s = E::zero();
            for &g in gp {
                s = s + g;
            }
            *db = *db + s;
        }
    }
    d_b
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims(
        n: usize,
        c_in: usize,
        h: usize,
        w: usize,
        c_out: usize,
        k: usize,
        p: Padding,
    ) -> ConvDims {
        ConvDims::new(n, c_in, h, w, c_out, k, p)
    }

    /// Independent oracle: direct six-loop cross-correlation.
    pub(super) fn conv2d_naive<E: Scalar>(
        inp: &[E],
        weight: &[E],
        bias: &[E],
        d: &ConvDims,
    ) -> Vec<E> {
        let mut out = vec![E::zero(); d.n * d.c_out * d.h_out * d.w_out];
        for n in 0..d.n {
            for co in 0..d.c_out {
                for y in 0..d.h_out {
                    for x in 0..d.w_out {
                        let mut acc = bias[co];
                        for ci in 0..d.c_in {
                            for ky in 0..d.k {
                                for kx in 0..d.k {
                                    let iy = y as isize + ky as isize - d.pad as isize;
                                    let ix = x as isize + kx as isize - d.pad as isize;
                                    if iy < 0
                                        || ix < 0
                                        || iy as usize >= d.h_in
                                        || ix as usize >= d.w_in
                                    {
                                        continue;
                                    }
                                    let iv = inp[((n * d.c_in + ci) * d.h_in + iy as usize)
                                        * d.w_in
                                        + ix as usize];
                                    let wv = weight
                                        [((co * d.c_in + ci) * d.k + ky) * d.k + kx];
                                    acc = acc + iv * wv;
                                }
                            }
                        }
                        out[((n * d.c_out + co) * d.h_out + y) * d.w_out + x] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn ones_3x3_same_padding() {
        // 1×1×3×3 all-ones input, 3×3 all-ones kernel, zero bias:
        // center 9, edges 6, corners 4.
        let d = dims(1, 1, 3, 3, 1, 3, Padding::Same);
        let out = conv2d_forward(&[1.0f32; 9], &[1.0; 9], &[0.0], &d);
        assert_eq!(out, vec![4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]);
    }

    #[test]
    fn identity_1x1_kernel() {
        let inp: Vec<f32> = (0..2 * 3 * 4 * 5).map(|v| v as f32 * 0.1).collect();
        let d = dims(2, 3, 4, 5, 3, 1, Padding::Same);
        // 1×1 kernel as a 3×3-channel identity matrix
        let mut w = vec![0.0f32; 9];
        w[0] = 1.0;
        w[4] = 1.0;
        w[8] = 1.0;
        let out = conv2d_forward(&inp, &w, &[0.0; 3], &d);
        assert_eq!(out, inp);
    }

    #[test]
    fn scalar_kernel_with_bias() {
        // 1×1×2×2 input [[1,2],[3,4]], 1×1 kernel weight 2, bias 0.5
        let d = dims(1, 1, 2, 2, 1, 1, Padding::Same);
        let out = conv2d_forward(&[1.0f32, 2.0, 3.0, 4.0], &[2.0], &[0.5], &d);
        assert_eq!(out, vec![2.5, 4.5, 6.5, 8.5]);
    }

    #[test]
    fn no_padding_shrinks_output() {
        let d = dims(1, 1, 4, 5, 1, 3, Padding::None);
        assert_eq!((d.h_out, d.w_out), (2, 3));
        let inp: Vec<f32> = (0..20).map(|v| v as f32).collect();
        let out = conv2d_forward(&inp, &[1.0; 9], &[0.0], &d);
        let oracle = conv2d_naive(&inp, &[1.0; 9], &[0.0], &d);
        assert_eq!(out, oracle);
    }

    #[test]
    fn matches_naive_oracle_on_random_shapes() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(11);
        for trial in 0..40 {
            let n = rng.gen_range(1..3);
            let c_in = rng.gen_range(1..4);
            let c_out = rng.gen_range(1..4);
            let k = [1usize, 3, 5][rng.gen_range(0..3)];
            let pad = if rng.gen_bool(0.5) { Padding::Same } else { Padding::None };
            let h = rng.gen_range(k..k + 4);
            let w = rng.gen_range(k..k + 4);
            let d = dims(n, c_in, h, w, c_out, k, pad);
            let inp: Vec<f32> =
                (0..n * c_in * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let wgt: Vec<f32> =
                (0..c_out * c_in * k * k).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let bias: Vec<f32> = (0..c_out).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let fast = conv2d_forward(&inp, &wgt, &bias, &d);
            let slow = conv2d_naive(&inp, &wgt, &bias, &d);
            for (a, b) in fast.iter().zip(&slow) {
                assert!(
                    (a - b).abs() <= 1e-5 * b.abs().max(1.0),
                    "trial {trial}: {a} vs {b}"
                );
            }
        }
    }
}
