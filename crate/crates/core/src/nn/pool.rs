use crate::error::{Error, Result};
use crate::nn::conv::dims4;
use crate::nn::spec::window_output;
use crate::tensor::{Real, Tensor};

/// Max-pool over `[N, C, H, W]`. Returns the pooled tensor and, per output
/// element, the flat input index that won (first maximum in row-major scan).
pub fn maxpool_forward<T: Real>(
    x: &Tensor<T>,
    size: usize,
    stride: usize,
) -> Result<(Tensor<T>, Vec<usize>)> {
    let [n, c, h, w] = dims4(x, "maxpool input")?;
    let oh = window_output(h, size, stride, 0).map_err(Error::Shape)?;
    let ow = window_output(w, size, stride, 0).map_err(Error::Shape)?;
    let xd = x.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + oy * stride * w + ox * stride;
                for ky in 0..size {
                    let row = base + (oy * stride + ky) * w + ox * stride;
                    for idx in row..row + size {
                        if xd[idx] > xd[best] {
                            best = idx;
                        }
                    }
                }
                out.push(xd[best]);
                argmax.push(best);
            }
        }
    }
    Ok((Tensor::from_vec(&[n, c, oh, ow], out)?, argmax))
}

/// Route each upstream gradient to the input position that produced the max.
pub fn maxpool_backward<T: Real>(
    grad_out: &Tensor<T>,
    argmax: &[usize],
    input_dims: &[usize],
) -> Result<Tensor<T>> {
    if grad_out.len() != argmax.len() {
        return Err(Error::shape(format!(
            "maxpool gradient has {} values but the cache has {}",
            grad_out.len(),
            argmax.len()
        )));
    }
    let mut grad = Tensor::zeros(input_dims)?;
    let gd = grad.data_mut();
    for (&idx, &g) in argmax.iter().zip(grad_out.data()) {
        gd[idx] += g;
    }
    Ok(grad)
}
