//! 2-D convolution (cross-correlation, no kernel flip) via im2col + GEMM.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::nn::spec::window_output;
use crate::tensor::{gemm, Real, Tensor};

/// Samples per work unit when reducing weight gradients. Fixed so the
/// summation order never depends on the thread count.
const GRAD_CHUNK: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_c: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_c: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn new<T: Real>(
        x: &Tensor<T>,
        w: &Tensor<T>,
        b: &Tensor<T>,
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        let [batch, in_c, in_h, in_w] = dims4(x, "conv input")?;
        let [out_c, w_c, kh, kw] = dims4(w, "conv weights")?;
        if w_c != in_c || kh != kw {
            return Err(Error::shape(format!(
                "conv weights {} incompatible with input {}",
                w.shape(),
                x.shape()
            )));
        }
        if b.dims() != [out_c] {
            return Err(Error::shape(format!(
                "conv bias {} should be [{out_c}]",
                b.shape()
            )));
        }
        let out_h = window_output(in_h, kh, stride, pad).map_err(Error::Shape)?;
        let out_w = window_output(in_w, kw, stride, pad).map_err(Error::Shape)?;
        Ok(ConvGeometry {
            batch,
            in_c,
            in_h,
            in_w,
            out_c,
            kernel: kh,
            stride,
            pad,
            out_h,
            out_w,
        })
    }

    fn col_rows(&self) -> usize {
        self.in_c * self.kernel * self.kernel
    }

    fn col_cols(&self) -> usize {
        self.out_h * self.out_w
    }

    fn in_len(&self) -> usize {
        self.in_c * self.in_h * self.in_w
    }

    fn out_len(&self) -> usize {
        self.out_c * self.out_h * self.out_w
    }
}

pub(crate) fn dims4<T: Real>(t: &Tensor<T>, what: &str) -> Result<[usize; 4]> {
    match *t.dims() {
        [a, b, c, d] => Ok([a, b, c, d]),
        _ => Err(Error::shape(format!(
            "{what} must be rank 4, got {}",
            t.shape()
        ))),
    }
}

/// Unroll one `[C, H, W]` sample into a `[C*k*k, out_h*out_w]` column matrix.
pub fn im2col<T: Real>(input: &[T], g: &ConvGeometry, col: &mut [T]) {
    let cols = g.col_cols();
    let k = g.kernel;
    for c in 0..g.in_c {
        let plane = &input[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut col[row * cols..(row + 1) * cols];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let line = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    if iy < 0 || iy >= g.in_h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.in_w..(iy as usize + 1) * g.in_w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *v = if ix < 0 || ix >= g.in_w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Scatter-add a column matrix back into a `[C, H, W]` sample (adjoint of [`im2col`]).
pub fn col2im<T: Real>(col: &[T], g: &ConvGeometry, out: &mut [T]) {
    out.fill(T::zero());
    let cols = g.col_cols();
    let k = g.kernel;
    for c in 0..g.in_c {
        let plane = &mut out[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &col[row * cols..(row + 1) * cols];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.in_h as isize {
                        continue;
                    }
                    for ox in 0..g.out_w {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && (ix as usize) < g.in_w {
                            plane[iy as usize * g.in_w + ix as usize] += src[oy * g.out_w + ox];
                        }
                    }
                }
            }
        }
    }
}

/// `x [N, Cin, H, W]`, `w [Cout, Cin, k, k]`, `b [Cout]` -> `[N, Cout, H', W']`.
pub fn conv_forward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let g = ConvGeometry::new(x, w, b, stride, pad)?;
    let mut out = vec![T::zero(); g.batch * g.out_len()];
    let (rows, cols) = (g.col_rows(), g.col_cols());
    out.par_chunks_mut(g.out_len())
        .zip(x.data().par_chunks(g.in_len()))
        .for_each_init(
            || vec![T::zero(); rows * cols],
            |col, (y, xs)| {
                im2col(xs, &g, col);
                for (co, plane) in y.chunks_mut(cols).enumerate() {
                    plane.fill(b.data()[co]);
                }
                gemm(
                    false,
                    false,
                    g.out_c,
                    cols,
                    rows,
                    T::one(),
                    w.data(),
                    col,
                    T::one(),
                    y,
                );
            },
        );
    Tensor::from_vec(&[g.batch, g.out_c, g.out_h, g.out_w], out)
}

pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub weights: Tensor<T>,
    pub biases: Tensor<T>,
}

pub fn conv_backward<T: Real>(
    grad_out: &Tensor<T>,
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<ConvGrads<T>> {
    let g = ConvGeometry::new(x, w, b, stride, pad)?;
    let expected = [g.batch, g.out_c, g.out_h, g.out_w];
    if grad_out.dims() != expected {
        return Err(Error::shape(format!(
            "conv gradient {} does not match forward output {expected:?}",
            grad_out.shape()
        )));
    }
    let (rows, cols) = (g.col_rows(), g.col_cols());
    let mut grad_x = vec![T::zero(); x.len()];

    let partials: Vec<(Vec<T>, Vec<T>)> = grad_x
        .par_chunks_mut(GRAD_CHUNK * g.in_len())
        .zip(x.data().par_chunks(GRAD_CHUNK * g.in_len()))
        .zip(grad_out.data().par_chunks(GRAD_CHUNK * g.out_len()))
        .map(|((gx_chunk, x_chunk), go_chunk)| {
            let mut gw = vec![T::zero(); w.len()];
            let mut gb = vec![T::zero(); g.out_c];
            let mut col = vec![T::zero(); rows * cols];
            let mut dcol = vec![T::zero(); rows * cols];
            for ((gx, xs), go) in gx_chunk
                .chunks_mut(g.in_len())
                .zip(x_chunk.chunks(g.in_len()))
                .zip(go_chunk.chunks(g.out_len()))
            {
                im2col(xs, &g, &mut col);
                // dW += dY * col^T
                gemm(
                    false,
                    true,
                    g.out_c,
                    rows,
                    cols,
                    T::one(),
                    go,
                    &col,
                    T::one(),
                    &mut gw,
                );
                for (co, plane) in go.chunks(cols).enumerate() {
                    let mut acc = T::zero();
                    for &v in plane {
                        acc += v;
                    }
                    gb[co] += acc;
                }
                // dcol = W^T * dY
                gemm(
                    true,
                    false,
                    rows,
                    cols,
                    g.out_c,
                    T::one(),
                    w.data(),
                    go,
                    T::zero(),
                    &mut dcol,
                );
                col2im(&dcol, &g, gx);
            }
            (gw, gb)
        })
        .collect();

    let mut grad_w = vec![T::zero(); w.len()];
    let mut grad_b = vec![T::zero(); g.out_c];
    for (gw, gb) in partials {
        for (a, v) in grad_w.iter_mut().zip(gw) {
            *a += v;
        }
        for (a, v) in grad_b.iter_mut().zip(gb) {
            *a += v;
        }
    }
    Ok(ConvGrads {
        input: Tensor::from_vec(x.dims(), grad_x)?,
        weights: Tensor::from_vec(w.dims(), grad_w)?,
        biases: Tensor::from_vec(b.dims(), grad_b)?,
    })
}

/// Direct nested-loop convolution. Slow; kept as the reference the GEMM path is checked against.
pub fn conv_forward_direct<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let g = ConvGeometry::new(x, w, b, stride, pad)?;
    let k = g.kernel;
    let mut out = Tensor::zeros(&[g.batch, g.out_c, g.out_h, g.out_w])?;
    let xd = x.data();
    let wd = w.data();
    let od = out.data_mut();
    for n in 0..g.batch {
        for co in 0..g.out_c {
            for oy in 0..g.out_h {
                for ox in 0..g.out_w {
                    let mut acc = b.data()[co];
                    for ci in 0..g.in_c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                                let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                                if iy < 0
                                    || ix < 0
                                    || iy >= g.in_h as isize
                                    || ix >= g.in_w as isize
                                {
                                    continue;
                                }
                                let xv = xd[((n * g.in_c + ci) * g.in_h + iy as usize) * g.in_w
                                    + ix as usize];
                                let wv = wd[((co * g.in_c + ci) * k + ky) * k + kx];
                                acc += xv * wv;
                            }
                        }
                    }
                    od[((n * g.out_c + co) * g.out_h + oy) * g.out_w + ox] = acc;
                }
            }
        }
    }
    Ok(out)
}
