//! Dense kernels behind the graph ops.
//!
//! Work is split over independent output rows so results never depend on the
//! number of worker threads: every reduction runs in a fixed sequential order
//! inside a single task.

use rayon::prelude::*;

use super::real::Real;

/// Geometry of a 1-D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvDims {
    pub batch: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub len_in: usize,
    pub len_out: usize,
}

impl ConvDims {
    /// Output positions `t` for which tap `k` reads a real (non-padding)
    /// input sample.
    #[inline]
    fn valid_range(&self, k: usize) -> (usize, usize) {
        // need 0 <= t*s + k - p < T
        let lo = if self.padding > k {
            (self.padding - k).div_ceil(self.stride)
        } else {
            0
        };
        let hi_excl = if self.len_in + self.padding > k {
            let max_t = (self.len_in - 1 + self.padding - k) / self.stride;
            (max_t + 1).min(self.len_out)
        } else {
            0
        };
        (lo, hi_excl.max(lo))
    }
}

/// Unfolds `x: [B, Cin, T]` into rows of `[B·Tout, Cin·K]`; row `(b, t)`
/// holds the receptive field of output position `t`, zeros for padding.
fn im2col<F: Real>(x: &[F], d: &ConvDims) -> Vec<F> {
    let width = d.in_channels * d.kernel;
    let x_stride = d.in_channels * d.len_in;
    let mut cols = vec![F::zero(); d.batch * d.len_out * width];
    cols.par_chunks_mut(d.len_out * width).enumerate().for_each(|(b, cb)| {
        let xb = &x[b * x_stride..(b + 1) * x_stride];
        for ci in 0..d.in_channels {
            let xr = &xb[ci * d.len_in..(ci + 1) * d.len_in];
            for k in 0..d.kernel {
                let (lo, hi) = d.valid_range(k);
                for t in lo..hi {
                    cb[t * width + ci * d.kernel + k] = xr[t * d.stride + k - d.padding];
                }
            }
        }
    });
    cols
}

/// Adds unfolded rows back onto `[B, Cin, T]`.
fn col2im<F: Real>(cols: &[F], d: &ConvDims) -> Vec<F> {
    let width = d.in_channels * d.kernel;
    let x_stride = d.in_channels * d.len_in;
    let mut x = vec![F::zero(); d.batch * x_stride];
    x.par_chunks_mut(x_stride).enumerate().for_each(|(b, xb)| {
        let cb = &cols[b * d.len_out * width..(b + 1) * d.len_out * width];
        for ci in 0..d.in_channels {
            let xr = &mut xb[ci * d.len_in..(ci + 1) * d.len_in];
            for k in 0..d.kernel {
                let (lo, hi) = d.valid_range(k);
                for t in lo..hi {
                    xr[t * d.stride + k - d.padding] += cb[t * width + ci * d.kernel + k];
                }
            }
        }
    });
    x
}

pub fn conv1d_forward<F: Real>(x: &[F], w: &[F], bias: Option<&[F]>, d: &ConvDims) -> Vec<F> {
    let width = d.in_channels * d.kernel;
    let cols = im2col(x, d);
    let mut y = vec![F::zero(); d.batch * d.out_channels * d.len_out];
    y.par_chunks_mut(d.out_channels * d.len_out)
        .enumerate()
        .for_each(|(b, yb)| {
            let cb = &cols[b * d.len_out * width..(b + 1) * d.len_out * width];
            for co in 0..d.out_channels {
                let wr = &w[co * width..(co + 1) * width];
                let b0 = bias.map_or(F::zero(), |bias| bias[co]);
                for (t, v) in yb[co * d.len_out..(co + 1) * d.len_out].iter_mut().enumerate() {
                    *v = dot(wr, &cb[t * width..(t + 1) * width]) + b0;
                }
            }
        });
    y
}

/// Returns `(dx, dw, db)`.
pub fn conv1d_backward<F: Real>(x: &[F], w: &[F], dy: &[F], d: &ConvDims) -> (Vec<F>, Vec<F>, Vec<F>) {
    let width = d.in_channels * d.kernel;
    let y_stride = d.out_channels * d.len_out;

    let mut dcols = vec![F::zero(); d.batch * d.len_out * width];
    dcols.par_chunks_mut(d.len_out * width).enumerate().for_each(|(b, db)| {
        let dyb = &dy[b * y_stride..(b + 1) * y_stride];
        for (t, row) in db.chunks_mut(width).enumerate() {
            for co in 0..d.out_channels {
                let gv = dyb[co * d.len_out + t];
                if gv != F::zero() {
                    axpy(gv, &w[co * width..(co + 1) * width], row);
                }
            }
        }
    });
    let dx = col2im(&dcols, d);

    let cols = im2col(x, d);
    let mut dw = vec![F::zero(); w.len()];
    dw.par_chunks_mut(width).enumerate().for_each(|(co, dwc)| {
        for b in 0..d.batch {
            let gr = &dy[b * y_stride + co * d.len_out..b * y_stride + (co + 1) * d.len_out];
            let cb = &cols[b * d.len_out * width..(b + 1) * d.len_out * width];
            for (t, &gv) in gr.iter().enumerate() {
                if gv != F::zero() {
                    axpy(gv, &cb[t * width..(t + 1) * width], dwc);
                }
            }
        }
    });

    let mut db = vec![F::zero(); d.out_channels];
    for (co, v) in db.iter_mut().enumerate() {
        for b in 0..d.batch {
            let gr = &dy[b * y_stride + co * d.len_out..b * y_stride + (co + 1) * d.len_out];
            *v += gr.iter().copied().sum::<F>();
        }
    }
    (dx, dw, db)
}

/// Dot product with eight interleaved partial sums, combined in a fixed
/// order so the result does not depend on how the caller is scheduled.
#[inline]
pub fn dot<F: Real>(a: &[F], b: &[F]) -> F {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [F::zero(); 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    let mut tail = F::zero();
    for (&x, &y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

#[inline]
fn axpy<F: Real>(alpha: F, x: &[F], y: &mut [F]) {
    for (yv, &xv) in y.iter_mut().zip(x) {
        *yv += alpha * xv;
    }
}

/// `y[rows, out] = x[rows, inp] · w[out, inp]ᵀ + bias`.
pub fn linear_forward<F: Real>(x: &[F], w: &[F], bias: Option<&[F]>, inp: usize, out: usize) -> Vec<F> {
    let rows = x.len() / inp;
    let mut y = vec![F::zero(); rows * out];
    y.par_chunks_mut(out).enumerate().for_each(|(r, yr)| {
        let xr = &x[r * inp..(r + 1) * inp];
        for (o, v) in yr.iter_mut().enumerate() {
            *v = dot(xr, &w[o * inp..(o + 1) * inp]);
            if let Some(b) = bias {
                *v += b[o];
            }
        }
    });
    y
}

/// `dx = dy · w`.
pub fn linear_backward_input<F: Real>(dy: &[F], w: &[F], inp: usize, out: usize) -> Vec<F> {
    let rows = dy.len() / out;
    let mut dx = vec![F::zero(); rows * inp];
    dx.par_chunks_mut(inp).enumerate().for_each(|(r, dxr)| {
        let g = &dy[r * out..(r + 1) * out];
        for (o, &gv) in g.iter().enumerate() {
            if gv != F::zero() {
                axpy(gv, &w[o * inp..(o + 1) * inp], dxr);
            }
        }
    });
    dx
}

/// `dw = dyᵀ · x` and `db = Σ_rows dy`.
pub fn linear_backward_params<F: Real>(x: &[F], dy: &[F], inp: usize, out: usize) -> (Vec<F>, Vec<F>) {
    let rows = dy.len() / out;
    let mut dw = vec![F::zero(); out * inp];
    dw.par_chunks_mut(inp).enumerate().for_each(|(o, dwo)| {
        for r in 0..rows {
            let gv = dy[r * out + o];
            if gv != F::zero() {
                axpy(gv, &x[r * inp..(r + 1) * inp], dwo);
            }
        }
    });
    let mut db = vec![F::zero(); out];
    for r in 0..rows {
        for (o, v) in db.iter_mut().enumerate() {
            *v += dy[r * out + o];
        }
    }
    (dw, db)
}
