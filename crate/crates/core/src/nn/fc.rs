use crate::error::{Error, Result};
use crate::tensor::{gemm, Real, Tensor};

fn flat_dims<T: Real>(x: &Tensor<T>) -> (usize, usize) {
    let n = x.dims()[0];
    (n, x.len() / n)
}

/// `y = x W^T + b` with `x` flattened to `[N, D]`, `W [O, D]`, `b [O]`.
pub fn fc_forward<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, d) = flat_dims(x);
    let (o, wd) = check_weights(w, b)?;
    if wd != d {
        return Err(Error::shape(format!(
            "fc expects {wd} inputs per sample, got {d} from {}",
            x.shape()
        )));
    }
    let mut out = Vec::with_capacity(n * o);
    for _ in 0..n {
        out.extend_from_slice(b.data());
    }
    gemm(
        false,
        true,
        n,
        o,
        d,
        T::one(),
        x.data(),
        w.data(),
        T::one(),
        &mut out,
    );
    Tensor::from_vec(&[n, o], out)
}

pub struct FcGrads<T> {
    pub input: Tensor<T>,
    pub weights: Tensor<T>,
    pub biases: Tensor<T>,
}

pub fn fc_backward<T: Real>(
    grad_out: &Tensor<T>,
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
) -> Result<FcGrads<T>> {
    let (n, d) = flat_dims(x);
    let (o, _) = check_weights(w, b)?;
    if grad_out.dims() != [n, o] {
        return Err(Error::shape(format!(
            "fc gradient {} should be [{n}, {o}]",
            grad_out.shape()
        )));
    }
    let mut gx = vec![T::zero(); n * d];
    gemm(
        false,
        false,
        n,
        d,
        o,
        T::one(),
        grad_out.data(),
        w.data(),
        T::zero(),
        &mut gx,
    );
    let mut gw = vec![T::zero(); o * d];
    gemm(
        true,
        false,
        o,
        d,
        n,
        T::one(),
        grad_out.data(),
        x.data(),
        T::zero(),
        &mut gw,
    );
    let mut gb = vec![T::zero(); o];
    for row in grad_out.data().chunks(o) {
        for (acc, &g) in gb.iter_mut().zip(row) {
            *acc += g;
        }
    }
    Ok(FcGrads {
        input: Tensor::from_vec(x.dims(), gx)?,
        weights: Tensor::from_vec(w.dims(), gw)?,
        biases: Tensor::from_vec(b.dims(), gb)?,
    })
}

fn check_weights<T: Real>(w: &Tensor<T>, b: &Tensor<T>) -> Result<(usize, usize)> {
    match *w.dims() {
        [o, d] if b.dims() == [o] => Ok((o, d)),
        _ => Err(Error::shape(format!(
            "fc weights {} / bias {} malformed",
            w.shape(),
            b.shape()
        ))),
    }
}
