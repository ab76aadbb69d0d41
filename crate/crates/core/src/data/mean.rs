use super::image::Image;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Per-pixel, per-channel mean over one fold's training patches.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanImage(pub Image);

impl MeanImage {
    pub fn image(&self) -> &Image {
        &self.0
    }

    pub fn zeros(size: usize) -> Result<Self> {
        Ok(Self(Tensor::zeros(&[size, size, 3])?))
    }

    /// Elementwise `patch - mean`.
    pub fn subtract(&self, patch: &Image) -> Result<Image> {
        patch.sub(&self.0)
    }
}

/// Streaming mean accumulated in double precision.
#[derive(Debug, Clone)]
pub struct MeanAccumulator {
    dims: Vec<usize>,
    sum: Vec<f64>,
    count: usize,
}

impl MeanAccumulator {
    pub fn new(dims: &[usize]) -> Self {
        Self {
            dims: dims.to_vec(),
            sum: vec![0.0; dims.iter().product()],
            count: 0,
        }
    }

    pub fn add(&mut self, patch: &Image) -> Result<()> {
        if patch.dims() != self.dims.as_slice() {
            return Err(Error::shape(format!(
                "patch {} does not match mean dims {:?}",
                patch.shape(),
                self.dims
            )));
        }
        for (s, &v) in self.sum.iter_mut().zip(patch.data()) {
            *s += f64::from(v);
        }
        self.count += 1;
        Ok(())
    }

    /// Fold in another accumulator; used to combine per-cell partial sums in order.
    pub fn merge(&mut self, other: &MeanAccumulator) -> Result<()> {
        if other.dims != self.dims {
            return Err(Error::shape(
                "cannot merge mean accumulators of different shape",
            ));
        }
        for (s, o) in self.sum.iter_mut().zip(&other.sum) {
            *s += o;
        }
        self.count += other.count;
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn finish(&self) -> Result<MeanImage> {
        if self.count == 0 {
            return Err(Error::invalid("mean of an empty patch set"));
        }
        let n = self.count as f64;
        let data = self.sum.iter().map(|s| (s / n) as f32).collect();
        Ok(MeanImage(Tensor::from_vec(&self.dims, data)?))
    }
}

pub fn compute_mean_image<'a, I>(patches: I) -> Result<MeanImage>
where
    I: IntoIterator<Item = &'a Image>,
{
    let mut iter = patches.into_iter().peekable();
    let first = iter
        .peek()
        .ok_or_else(|| Error::invalid("mean of an empty patch set"))?;
    let mut acc = MeanAccumulator::new(first.dims());
    for p in iter {
        acc.add(p)?;
    }
    acc.finish()
}
